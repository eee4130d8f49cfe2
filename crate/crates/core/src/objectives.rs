//! Negative sampling and training losses.
//!
//! Losses take canonical scores (higher is better). The distance-based
//! losses (margin, limit, double limit, self-adversarial) work on
//! `d = -score` internally. Every loss reports its value and the derivative
//! of that value with respect to each input score.

use std::collections::HashSet;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Direction, Triple, TripleStore};

/// Filtered sampling gives up redrawing after this many attempts.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("cannot corrupt a triple with only {0} entity")]
    TooFewEntities(usize),
    #[error("number of negatives must be at least 1")]
    NoNegatives,
    #[error("non-finite score passed to {0} loss")]
    NonFinite(LossKind),
    #[error("invalid loss parameters: {0}")]
    Params(String),
    #[error("adversarial weights need at least one score")]
    Empty,
}

pub type Result<T, E = ObjectiveError> = std::result::Result<T, E>;

/// Membership test for "is this triple known to be true".
pub trait KnownTriples {
    fn contains(&self, triple: &Triple) -> bool;
}

impl KnownTriples for HashSet<Triple> {
    fn contains(&self, triple: &Triple) -> bool {
        HashSet::contains(self, triple)
    }
}

impl KnownTriples for TripleStore {
    fn contains(&self, triple: &Triple) -> bool {
        self.is_known(triple)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Uniform,
    /// Redraw corruptions that land on known triples.
    Filtered,
}

impl FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(SamplingMode::Uniform),
            "filtered" => Ok(SamplingMode::Filtered),
            _ => Err(format!("unknown sampling mode {s:?}; expected uniform or filtered")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Negative {
    pub triple: Triple,
    pub corrupted: Direction,
    /// The corruption is itself a known triple.
    pub leak: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeBatch {
    pub positive: Triple,
    pub negatives: Vec<Negative>,
}

impl NegativeBatch {
    pub fn n_leaks(&self) -> usize {
        self.negatives.iter().filter(|n| n.leak).count()
    }
}

/// Draw `k` corruptions of `triple`, replacing head or tail with equal odds.
/// The replacement is uniform over the other `n_entities - 1` ids.
pub fn sample_negatives<R: Rng + ?Sized, K: KnownTriples + ?Sized>(
    triple: Triple,
    k: usize,
    mode: SamplingMode,
    n_entities: usize,
    known: &K,
    rng: &mut R,
) -> Result<NegativeBatch> {
    if k == 0 {
        return Err(ObjectiveError::NoNegatives);
    }
    if n_entities < 2 {
        return Err(ObjectiveError::TooFewEntities(n_entities));
    }
    let mut negatives = Vec::with_capacity(k);
    for _ in 0..k {
        let mut attempts = 0;
        // a redraw picks the side afresh, so a side whose corruptions are all
        // known cannot trap the sampler
        let neg = loop {
            let corrupted = if rng.gen::<bool>() {
                Direction::Head
            } else {
                Direction::Tail
            };
            let original = match corrupted {
                Direction::Head => triple.head,
                Direction::Tail => triple.tail,
            };
            let mut e = rng.gen_range(0..n_entities - 1);
            if e >= original {
                e += 1;
            }
            let cand = match corrupted {
                Direction::Head => Triple { head: e, ..triple },
                Direction::Tail => Triple { tail: e, ..triple },
            };
            let leak = known.contains(&cand);
            attempts += 1;
            if !leak || mode == SamplingMode::Uniform || attempts >= MAX_REDRAWS {
                break Negative {
                    triple: cand,
                    corrupted,
                    leak,
                };
            }
        };
        negatives.push(neg);
    }
    Ok(NegativeBatch {
        positive: triple,
        negatives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Margin,
    Limit,
    DoubleLimit,
    SelfAdversarial,
    Nll,
    Bce,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Margin,
        LossKind::Limit,
        LossKind::DoubleLimit,
        LossKind::SelfAdversarial,
        LossKind::Nll,
        LossKind::Bce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Margin => "margin",
            LossKind::Limit => "limit",
            LossKind::DoubleLimit => "double_limit",
            LossKind::SelfAdversarial => "self_adversarial",
            LossKind::Nll => "nll",
            LossKind::Bce => "bce",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = LossKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown loss {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Whether the logistic loss takes a logarithm.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NllForm {
    /// `Σ log(1 + exp(-y·f))`
    #[default]
    Softplus,
    /// `Σ (1 + exp(-y·f))`, kept for comparison.
    Literal,
}

impl FromStr for NllForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "softplus" => Ok(NllForm::Softplus),
            "literal" => Ok(NllForm::Literal),
            _ => Err(format!("unknown nll form {s:?}; expected softplus or literal")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossParams {
    /// Margin `γ` (margin, limit, self-adversarial).
    pub margin: f64,
    /// Limit loss `μ`.
    pub limit_mu: f64,
    /// Limit loss `λ`.
    pub limit_lambda: f64,
    /// Double-limit `μ_p`.
    pub mu_pos: f64,
    /// Double-limit `μ_n`.
    pub mu_neg: f64,
    /// Double-limit `λ`.
    pub double_lambda: f64,
    /// Self-adversarial temperature `α`.
    pub adversarial_temperature: f64,
    pub nll_form: NllForm,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            margin: 1.0,
            limit_mu: 1.0,
            limit_lambda: 1.0,
            mu_pos: 1.0,
            mu_neg: 2.0,
            double_lambda: 1.0,
            adversarial_temperature: 1.0,
            nll_form: NllForm::Softplus,
        }
    }
}

impl LossParams {
    /// Check the parameters that `kind` reads.
    pub fn validate(&self, kind: LossKind) -> Result<()> {
        let bad = |m: String| Err(ObjectiveError::Params(m));
        let all = [
            self.margin,
            self.limit_mu,
            self.limit_lambda,
            self.mu_pos,
            self.mu_neg,
            self.double_lambda,
            self.adversarial_temperature,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return bad("loss parameters must be finite".into());
        }
        match kind {
            LossKind::Margin | LossKind::SelfAdversarial if self.margin <= 0.0 => {
                bad(format!("margin must be positive, got {}", self.margin))
            }
            LossKind::Limit if self.margin <= 0.0 || self.limit_lambda < 0.0 => bad(format!(
                "limit loss needs margin > 0 and λ ≥ 0, got {} and {}",
                self.margin, self.limit_lambda
            )),
            LossKind::DoubleLimit
                if !(self.mu_neg > self.mu_pos && self.mu_pos > 0.0) || self.double_lambda < 0.0 =>
            {
                bad(format!(
                    "double limit needs μ_n > μ_p > 0 and λ ≥ 0, got μ_p={} μ_n={} λ={}",
                    self.mu_pos, self.mu_neg, self.double_lambda
                ))
            }
            LossKind::SelfAdversarial if self.adversarial_temperature < 0.0 => bad(format!(
                "adversarial temperature must be non-negative, got {}",
                self.adversarial_temperature
            )),
            _ => Ok(()),
        }
    }
}

/// A loss value and `∂value/∂score` for each input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub d_pos: f64,
    pub d_negs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn hinge(x: f64) -> (f64, f64) {
    if x > 0.0 {
        (x, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// Loss for one positive score against its negatives.
pub fn loss(kind: LossKind, pos: f64, negs: &[f64], params: &LossParams) -> Result<LossValue> {
    params.validate(kind)?;
    if negs.is_empty() {
        return Err(ObjectiveError::NoNegatives);
    }
    if !pos.is_finite() || negs.iter().any(|s| !s.is_finite()) {
        return Err(ObjectiveError::NonFinite(kind));
    }
    let mut d_negs = vec![0.0; negs.len()];
    let mut d_pos = 0.0;
    let mut value = 0.0;
    let d_p = -pos;
    match kind {
        LossKind::Margin => {
            for (g, &s) in d_negs.iter_mut().zip(negs) {
                let (v, slope) = hinge(params.margin + d_p + s);
                value += v;
                // ∂/∂pos = -slope, ∂/∂neg = +slope
                d_pos -= slope;
                *g = slope;
            }
        }
        LossKind::Limit => {
            let (lim, lim_slope) = hinge(d_p - params.limit_mu);
            for (g, &s) in d_negs.iter_mut().zip(negs) {
                let (v, slope) = hinge(params.margin + d_p + s);
                value += v + params.limit_lambda * lim;
                d_pos -= slope + params.limit_lambda * lim_slope;
                *g = slope;
            }
        }
        LossKind::DoubleLimit => {
            let (pv, pslope) = hinge(d_p - params.mu_pos);
            for (g, &s) in d_negs.iter_mut().zip(negs) {
                let (nv, nslope) = hinge(params.mu_neg + s);
                value += pv + params.double_lambda * nv;
                d_pos -= pslope;
                *g = params.double_lambda * nslope;
            }
        }
        LossKind::SelfAdversarial => {
            let w = adversarial_weights(negs, params.adversarial_temperature)?;
            return Ok(self_adversarial_weighted(pos, negs, &w, params.margin));
        }
        LossKind::Nll => {
            let term = |y: f64, f: f64| match params.nll_form {
                NllForm::Softplus => (softplus(-y * f), -y * sigmoid(-y * f)),
                NllForm::Literal => {
                    let e = (-y * f).exp();
                    (1.0 + e, -y * e)
                }
            };
            let (v, g) = term(1.0, pos);
            value += v;
            d_pos = g;
            for (g, &s) in d_negs.iter_mut().zip(negs) {
                let (v, gs) = term(-1.0, s);
                value += v;
                *g = gs;
            }
        }
        LossKind::Bce => {
            let n = (negs.len() + 1) as f64;
            // -log σ(f) for y = 1, -log(1 - σ(f)) for y = 0
            value += softplus(-pos);
            d_pos = -sigmoid(-pos) / n;
            for (g, &s) in d_negs.iter_mut().zip(negs) {
                value += softplus(s);
                *g = sigmoid(s) / n;
            }
            value /= n;
        }
    }
    Ok(LossValue {
        value,
        d_pos,
        d_negs,
    })
}

/// Self-adversarial loss with explicit negative weights `p_i`, which are
/// held constant in the returned gradient.
pub fn self_adversarial_weighted(pos: f64, negs: &[f64], weights: &[f64], gamma: f64) -> LossValue {
    // -log σ(γ - d_pos) = softplus(d_pos - γ) with d = -score
    let mut value = softplus(-pos - gamma);
    let d_pos = -sigmoid(-pos - gamma);
    let mut d_negs = vec![0.0; negs.len()];
    for ((g, &s), &p) in d_negs.iter_mut().zip(negs).zip(weights) {
        // -log σ(d_neg - γ) = softplus(γ + score)
        value += p * softplus(gamma + s);
        *g = p * sigmoid(gamma + s);
    }
    LossValue {
        value,
        d_pos,
        d_negs,
    }
}

/// Binary cross entropy of probabilities against 0/1 labels, averaged.
pub fn bce_from_probabilities(labels: &[f64], probs: &[f64]) -> f64 {
    let n = labels.len().max(1) as f64;
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let a = if y > 0.0 { y * p.ln() } else { 0.0 };
            let b = if y < 1.0 { (1.0 - y) * (1.0 - p).ln() } else { 0.0 };
            a + b
        })
        .sum();
    -total / n
}

/// Softmax of `α · score`; treated as constants by [`loss`].
pub fn adversarial_weights(scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(ObjectiveError::Params(format!(
            "adversarial temperature must be non-negative, got {alpha}"
        )));
    }
    let top = scores
        .iter()
        .map(|&s| alpha * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|&s| (alpha * s - top).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    Ok(w)
}
