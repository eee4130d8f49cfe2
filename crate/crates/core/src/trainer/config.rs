use serde::Serialize;
use serde_json::{Map, Value};

use crate::eval::TiePolicy;
use crate::geometry::{OperatorKind, ShearForm};
use crate::models::{CompoundVariant, Family, ModelSpec};
use crate::objectives::{LossKind, LossParams, NllForm, SamplingMode};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "KGE_SEED";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adagrad,
}

impl OptimizerKind {
    pub fn code(self) -> u8 {
        match self {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adagrad => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(OptimizerKind::Sgd),
            1 => Some(OptimizerKind::Adagrad),
            _ => None,
        }
    }
}

/// Every problem found in a config, one line per field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid training config:\n  {}", .problems.join("\n  "))]
pub struct ConfigError {
    pub problems: Vec<String>,
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub loss: LossKind,
    pub loss_params: LossParams,
    pub negatives: usize,
    pub sampling: SamplingMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Project touched entity rows into the unit L2 ball after each batch.
    pub entity_norm: bool,
    /// Validate every this many epochs; 0 never validates.
    pub eval_every: usize,
    /// Stop after this many validations without a better MRR; 0 disables.
    pub patience: usize,
    pub tie_policy: TiePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_family(Family::RotatE)
    }
}

impl TrainConfig {
    /// Defaults for `family`. Distance families train with the
    /// self-adversarial loss, product families with the logistic loss.
    pub fn for_family(family: Family) -> Self {
        let dim = match family {
            Family::CompoundE3D => 300,
            Family::Rescal | Family::TuckER | Family::TransR => 50,
            _ => 200,
        };
        let distance = family.is_distance();
        Self {
            model: ModelSpec::new(family, dim),
            loss: if distance {
                LossKind::SelfAdversarial
            } else {
                LossKind::Nll
            },
            loss_params: LossParams {
                margin: if distance { 6.0 } else { 1.0 },
                ..LossParams::default()
            },
            negatives: 64,
            sampling: SamplingMode::Uniform,
            batch_size: 256,
            epochs: 50,
            learning_rate: 0.05,
            optimizer: OptimizerKind::Adagrad,
            seed: 0,
            entity_norm: false,
            eval_every: 10,
            patience: 0,
            tie_policy: TiePolicy::Mean,
        }
    }

    /// Parse a flat JSON object. Absent fields take the defaults for the
    /// configured family; every invalid or unknown field is reported.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
            problems: vec![format!("not valid JSON: {e}")],
        })?;
        let Value::Object(map) = value else {
            return Err(ConfigError {
                problems: vec!["config must be a JSON object".into()],
            });
        };
        Self::from_map(&map)
    }

    pub fn from_map(map: &Map<String, Value>) -> Result<Self, ConfigError> {
        let mut p = Parser {
            map,
            problems: Vec::new(),
        };
        let family = p.parse_str("family", |s| s.parse::<Family>().map_err(|e| e.to_string()));
        let mut c = TrainConfig::for_family(family.unwrap_or(Family::RotatE));
        if let Some(v) = p.uint("entity_dim", 1) {
            c.model.entity_dim = v;
        }
        c.model.relation_dim = p.uint("relation_dim", 1).unwrap_or(c.model.entity_dim);
        if let Some(v) = p.uint("p", 1) {
            if v == 1 || v == 2 {
                c.model.p = v as u8;
            } else {
                p.problems.push(format!("p: norm order must be 1 or 2, got {v}"));
            }
        }
        if let Some(v) = p.parse_str("variant", |s| s.parse::<CompoundVariant>().map_err(|e| e.to_string())) {
            c.model.variant = v;
        }
        if let Some(v) = p.operators("operators") {
            c.model.operators = Some(v);
        }
        if let Some(v) = p.parse_str("shear_form", |s| match s {
            "product" => Ok(ShearForm::Product),
            "displayed" => Ok(ShearForm::Displayed),
            _ => Err(format!("expected product or displayed, got {s:?}")),
        }) {
            c.model.shear_form = v;
        }
        if let Some(v) = p.float("hake_lambda", f64::NEG_INFINITY) {
            c.model.hake_lambda = v;
        }
        if let Some(v) = p.parse_str("loss", |s| s.parse::<LossKind>()) {
            c.loss = v;
        }
        let lp = &mut c.loss_params;
        for (key, slot) in [
            ("margin", &mut lp.margin),
            ("limit_mu", &mut lp.limit_mu),
            ("limit_lambda", &mut lp.limit_lambda),
            ("mu_pos", &mut lp.mu_pos),
            ("mu_neg", &mut lp.mu_neg),
            ("double_lambda", &mut lp.double_lambda),
            ("adversarial_temperature", &mut lp.adversarial_temperature),
        ] {
            if let Some(v) = p.float(key, f64::NEG_INFINITY) {
                *slot = v;
            }
        }
        if let Some(v) = p.parse_str("nll_form", |s| s.parse::<NllForm>()) {
            lp.nll_form = v;
        }
        if let Some(v) = p.uint("negatives", 1) {
            c.negatives = v;
        }
        if let Some(v) = p.parse_str("sampling", |s| s.parse::<SamplingMode>()) {
            c.sampling = v;
        }
        if let Some(v) = p.uint("batch_size", 1) {
            c.batch_size = v;
        }
        if let Some(v) = p.uint("epochs", 0) {
            c.epochs = v;
        }
        if let Some(v) = p.float("learning_rate", 0.0) {
            c.learning_rate = v;
        }
        if let Some(v) = p.parse_str("optimizer", |s| match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            _ => Err(format!("expected sgd or adagrad, got {s:?}")),
        }) {
            c.optimizer = v;
        }
        if let Some(v) = p.uint("seed", 0) {
            c.seed = v as u64;
        }
        if let Some(v) = p.boolean("entity_norm") {
            c.entity_norm = v;
        }
        if let Some(v) = p.uint("eval_every", 0) {
            c.eval_every = v;
        }
        if let Some(v) = p.uint("patience", 0) {
            c.patience = v;
        }
        if let Some(v) = p.parse_str("tie_policy", |s| s.parse::<TiePolicy>()) {
            c.tie_policy = v;
        }
        for key in map.keys() {
            if !KNOWN_FIELDS.contains(&key.as_str()) {
                p.problems.push(format!("{key}: unknown field"));
            }
        }
        let family_bad = map.contains_key("family") && family.is_none();
        if let (false, Err(e)) = (family_bad, c.model.validate()) {
            p.problems.push(format!("model: {e}"));
        }
        if let Err(e) = c.loss_params.validate(c.loss) {
            p.problems.push(format!("loss: {e}"));
        }
        if p.problems.is_empty() {
            Ok(c)
        } else {
            Err(ConfigError { problems: p.problems })
        }
    }

    /// Check field ranges; `train_len` bounds the batch size when known.
    pub fn validate(&self, train_len: Option<usize>) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(format!("model: {e}"));
        }
        if let Err(e) = self.loss_params.validate(self.loss) {
            problems.push(format!("loss: {e}"));
        }
        if self.negatives == 0 {
            problems.push("negatives: must be at least 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size: must be at least 1".into());
        }
        if let Some(n) = train_len {
            if self.batch_size > n {
                problems.push(format!(
                    "batch_size: {} exceeds the {n} training triples",
                    self.batch_size
                ));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!(
                "learning_rate: must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { problems })
        }
    }

    /// Apply `KGE_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v.trim().parse().map_err(|_| ConfigError {
                problems: vec![format!("{SEED_ENV}: expected an unsigned integer, got {v:?}")],
            })?;
        }
        Ok(())
    }

    /// Flat JSON with every field spelled out.
    pub fn to_json(&self) -> String {
        let m = &self.model;
        let lp = &self.loss_params;
        let ops = m
            .operators
            .as_ref()
            .map(|o| Value::String(o.iter().map(|k| k.letter()).collect()));
        let v = serde_json::json!({
            "family": m.family.name(),
            "entity_dim": m.entity_dim,
            "relation_dim": m.relation_dim,
            "p": m.p,
            "variant": m.variant,
            "operators": ops,
            "shear_form": m.shear_form,
            "hake_lambda": m.hake_lambda,
            "loss": self.loss,
            "margin": lp.margin,
            "limit_mu": lp.limit_mu,
            "limit_lambda": lp.limit_lambda,
            "mu_pos": lp.mu_pos,
            "mu_neg": lp.mu_neg,
            "double_lambda": lp.double_lambda,
            "adversarial_temperature": lp.adversarial_temperature,
            "nll_form": lp.nll_form,
            "negatives": self.negatives,
            "sampling": self.sampling,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "entity_norm": self.entity_norm,
            "eval_every": self.eval_every,
            "patience": self.patience,
            "tie_policy": self.tie_policy,
        });
        let mut v = v;
        if let Value::Object(map) = &mut v {
            map.retain(|_, x| !x.is_null());
        }
        serde_json::to_string_pretty(&v).expect("config serializes")
    }
}

/// Field names accepted in a config file. Dataset paths are read by the
/// command-line tool from the same object.
pub const KNOWN_FIELDS: &[&str] = &[
    "family",
    "entity_dim",
    "relation_dim",
    "p",
    "variant",
    "operators",
    "shear_form",
    "hake_lambda",
    "loss",
    "margin",
    "limit_mu",
    "limit_lambda",
    "mu_pos",
    "mu_neg",
    "double_lambda",
    "adversarial_temperature",
    "nll_form",
    "negatives",
    "sampling",
    "batch_size",
    "epochs",
    "learning_rate",
    "optimizer",
    "seed",
    "entity_norm",
    "eval_every",
    "patience",
    "tie_policy",
    "train",
    "valid",
    "test",
];

struct Parser<'a> {
    map: &'a Map<String, Value>,
    problems: Vec<String>,
}

impl Parser<'_> {
    fn parse_str<T, E: std::fmt::Display>(&mut self, key: &str, f: impl Fn(&str) -> Result<T, E>) -> Option<T> {
        match self.map.get(key)? {
            Value::String(s) => match f(s) {
                Ok(v) => Some(v),
                Err(e) => {
                    self.problems.push(format!("{key}: {e}"));
                    None
                }
            },
            other => {
                self.problems.push(format!("{key}: expected a string, got {other}"));
                None
            }
        }
    }

    fn uint(&mut self, key: &str, min: usize) -> Option<usize> {
        let v = self.map.get(key)?;
        match v.as_u64() {
            Some(n) if n as usize >= min => Some(n as usize),
            _ => {
                self.problems
                    .push(format!("{key}: expected an integer ≥ {min}, got {v}"));
                None
            }
        }
    }

    fn float(&mut self, key: &str, min: f64) -> Option<f64> {
        let v = self.map.get(key)?;
        match v.as_f64() {
            Some(x) if x.is_finite() && x >= min => Some(x),
            _ => {
                let what = if min.is_finite() {
                    format!("a number ≥ {min}")
                } else {
                    "a finite number".to_owned()
                };
                self.problems.push(format!("{key}: expected {what}, got {v}"));
                None
            }
        }
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        let v = self.map.get(key)?;
        match v.as_bool() {
            Some(b) => Some(b),
            None => {
                self.problems.push(format!("{key}: expected true or false, got {v}"));
                None
            }
        }
    }

    /// `"TSR"` or `["T", "S", "R"]`.
    fn operators(&mut self, key: &str) -> Option<Vec<OperatorKind>> {
        let v = self.map.get(key)?;
        let letters: Option<String> = match v {
            Value::String(s) => Some(s.clone()),
            Value::Array(items) => items.iter().map(|x| x.as_str().map(str::to_owned)).collect(),
            _ => None,
        };
        let parsed = letters.and_then(|s| {
            s.chars()
                .filter(|c| !c.is_whitespace())
                .map(OperatorKind::from_letter)
                .collect::<Option<Vec<_>>>()
        });
        match parsed {
            Some(ops) if !ops.is_empty() => Some(ops),
            _ => {
                self.problems.push(format!(
                    "{key}: expected operator letters from T, S, R, F, H, got {v}"
                ));
                None
            }
        }
    }
}
