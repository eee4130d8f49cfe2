//! The `kge` command-line tool.
//!
//! Results go to stdout (JSON, or `entity<TAB>score` lines for `predict`);
//! logs and per-epoch progress go to stderr.
//!
//! Exit codes: 0 ok, 1 invalid arguments or config, 2 I/O or parse failure,
//! 3 training divergence, 4 checkpoint/data vocabulary mismatch,
//! 5 unknown entity or relation name.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::eval::{evaluate, write_rank_csv, top_answers, TiePolicy};
use crate::graph::{compute_stats, load_dataset, reference_stats, GraphError, Query, TripleStore, Vocabulary};
use crate::models::{Family, Model, ModelSpec};
use crate::objectives::LossKind;
use crate::trainer::checkpoint::load_checkpoint_for;
use crate::trainer::{
    gradient_check, load_checkpoint, loss_gradient_check, save_checkpoint, train, CheckpointError,
    TrainConfig, TrainError,
};

#[derive(Debug, Parser)]
#[command(name = "kge", version, about = "Knowledge graph embedding training and evaluation")]
pub struct Cli {
    /// Worker threads for scoring and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print dataset statistics as JSON.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        /// Compare against the published sizes of this benchmark.
        #[arg(long)]
        reference: Option<String>,
    },
    /// Train a model and write a checkpoint.
    Train {
        /// Flat JSON config; may name the train/valid/test files.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Filtered and raw link-prediction metrics for a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "mean")]
        tie_policy: TiePolicy,
        /// Split to rank: test or valid.
        #[arg(long, default_value = "test", value_parser = ["test", "valid"])]
        split: String,
        /// Also write per-query ranks as CSV.
        #[arg(long)]
        ranks_csv: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// One family, or every family when omitted.
        #[arg(long)]
        family: Option<Family>,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Top-scoring tails for a head and relation.
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        head: String,
        #[arg(long)]
        rel: String,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Drop tails already known true in the given data files.
        #[arg(long)]
        filter: bool,
        #[command(flatten)]
        data: DataArgs,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    #[arg(long = "train")]
    pub train: Option<PathBuf>,
    #[arg(long = "valid")]
    pub valid: Option<PathBuf>,
    #[arg(long = "test")]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Diverged(TrainError),
    #[error("{0}")]
    Digest(String),
    #[error("unknown {kind} {name:?}{}", suggest(.near))]
    Unknown {
        kind: &'static str,
        name: String,
        near: Vec<String>,
    },
}

fn suggest(near: &[String]) -> String {
    if near.is_empty() {
        String::new()
    } else {
        format!("; did you mean: {}", near.join(", "))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Digest(_) => 4,
            CliError::Unknown { .. } => 5,
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Digest => CliError::Digest(e.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Parse `args` (including the program name) and run.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return write!(out, "{}", e.render()).map_err(|e| CliError::Io(e.to_string()));
            }
            return Err(CliError::Usage(e.render().to_string()));
        }
    };
    if let Some(n) = cli.threads {
        // a pool may already exist when called more than once in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let io = |e: std::io::Error| CliError::Io(e.to_string());
    match cli.command {
        Command::Stats { data, reference } => {
            let (_, store) = load(&data, None)?;
            let stats = compute_stats(&store);
            let mut v = serde_json::to_value(&stats).expect("stats serialize");
            if let Some(name) = reference {
                let r = reference_stats(&name)
                    .ok_or_else(|| CliError::Usage(format!("no reference statistics for {name:?}")))?;
                let diffs = r.discrepancies(&stats);
                for d in &diffs {
                    log::warn!("{d}");
                }
                v["reference"] = json!(r.name);
                v["reference_mismatches"] = json!(diffs);
            }
            writeln!(out, "{v}").map_err(io)
        }
        Command::Train {
            config,
            out: ckpt_path,
            data,
            resume,
            epochs,
            seed,
            learning_rate,
        } => {
            let text = fs::read_to_string(&config).map_err(|e| CliError::Io(format!("{}: {e}", config.display())))?;
            let map: Map<String, Value> = match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Usage("config must be a JSON object".into())),
                Err(e) => return Err(CliError::Usage(format!("{}: not valid JSON: {e}", config.display()))),
            };
            let mut cfg = TrainConfig::from_map(&map).map_err(|e| CliError::Usage(e.to_string()))?;
            cfg.apply_env().map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(v) = epochs {
                cfg.epochs = v;
            }
            if let Some(v) = seed {
                cfg.seed = v;
            }
            if let Some(v) = learning_rate {
                cfg.learning_rate = v;
            }
            let (vocab, store) = load(&data, Some(&map))?;
            let resume = resume.map(|p| load_checkpoint_for(&p, &vocab)).transpose()?;
            let outcome = train(&cfg, &vocab, &store, resume, &mut |log| eprintln!("{log}"))?;
            save_checkpoint(&outcome.checkpoint, &ckpt_path)?;
            let last = outcome.history.last();
            let summary = json!({
                "checkpoint": ckpt_path.display().to_string(),
                "epochs": outcome.checkpoint.epoch,
                "final_loss": last.map(|l| l.loss),
                "best_val_mrr": finite_or_null(outcome.checkpoint.best_val_mrr),
                "stopped_early": outcome.stopped_early,
                "embedding_digest": outcome.checkpoint.embedding_digest(),
            });
            writeln!(out, "{summary}").map_err(io)
        }
        Command::Eval {
            ckpt,
            data,
            tie_policy,
            split,
            ranks_csv,
        } => {
            let (vocab, store) = load(&data, None)?;
            let c = load_checkpoint_for(&ckpt, &vocab)?;
            let model = Model::new(c.spec.clone()).map_err(|e| CliError::Io(e.to_string()))?;
            let split = if split == "valid" { store.valid() } else { store.test() };
            let (report, ranks) =
                evaluate(&model, &c.table, &store, split, tie_policy).map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(p) = ranks_csv {
                let f = fs::File::create(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                write_rank_csv(std::io::BufWriter::new(f), &vocab, &ranks).map_err(io)?;
            }
            writeln!(out, "{}", report.to_json()).map_err(io)
        }
        Command::Gradcheck {
            family,
            probes,
            tol,
            seed,
        } => {
            let families: Vec<Family> = family.map_or_else(|| Family::ALL.to_vec(), |f| vec![f]);
            let mut reports = Vec::new();
            for f in families {
                for spec in gradcheck_specs(f) {
                    reports.push(gradient_check(&spec, probes, tol, seed));
                }
            }
            if family.is_none() {
                for kind in LossKind::ALL {
                    reports.push(loss_gradient_check(kind, probes, tol, seed));
                }
            }
            let passed = reports.iter().all(|r| r.passed());
            let v = json!({ "passed": passed, "tol": tol, "reports": reports });
            writeln!(out, "{v}").map_err(io)?;
            if passed {
                Ok(())
            } else {
                Err(CliError::Usage("gradient check failed".into()))
            }
        }
        Command::Predict {
            ckpt,
            head,
            rel,
            topk,
            filter,
            data,
        } => {
            let c = load_checkpoint(&ckpt)?;
            let vocab = c.vocabulary()?;
            let store = if filter {
                let (v, s) = load(&data, None)?;
                c.verify_vocabulary(&v)?;
                Some(s)
            } else {
                None
            };
            let h = vocab.entity_id(&head).ok_or_else(|| unknown("entity", &head, vocab.entity_names()))?;
            let r = vocab.relation_id(&rel).ok_or_else(|| unknown("relation", &rel, vocab.relation_names()))?;
            let model = Model::new(c.spec.clone()).map_err(|e| CliError::Io(e.to_string()))?;
            for (name, score) in predict(&model, &c, &vocab, store.as_ref(), h, r, topk)? {
                writeln!(out, "{name}\t{score}").map_err(io)?;
            }
            Ok(())
        }
    }
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Top `k` tails for `(h, r, ?)`, best first; ties broken by entity id.
fn predict(
    model: &Model,
    c: &crate::trainer::Checkpoint,
    vocab: &Vocabulary,
    store: Option<&TripleStore>,
    h: usize,
    r: usize,
    k: usize,
) -> Result<Vec<(String, f64)>, CliError> {
    let query = Query::Tail { head: h, relation: r };
    let known: &[usize] = store.map_or(&[], |s| s.known_answers(&query));
    let top = top_answers(model, &c.table, &query, known, k).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(top
        .into_iter()
        .map(|(e, s)| (vocab.entity_name(e).unwrap_or("?").to_owned(), s))
        .collect())
}

fn unknown(kind: &'static str, name: &str, names: &[String]) -> CliError {
    let mut scored: Vec<(f64, &String)> = names
        .iter()
        .map(|n| (strsim::jaro_winkler(&name.to_lowercase(), &n.to_lowercase()), n))
        .filter(|(s, _)| *s >= 0.7)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    CliError::Unknown {
        kind,
        name: name.to_owned(),
        near: scored.into_iter().take(5).map(|(_, n)| n.clone()).collect(),
    }
}

/// Specs exercised by `gradcheck` for one family: small dimensions, every
/// norm order the family accepts, and every compound variant.
pub fn gradcheck_specs(f: Family) -> Vec<ModelSpec> {
    let dim = if f == Family::CompoundE3D { 6 } else { 4 };
    let mut base = ModelSpec::new(f, dim);
    if matches!(f, Family::TransR | Family::TransD | Family::TuckER) {
        base = base.with_relation_dim(3);
    }
    let mut specs = vec![base.clone()];
    if f.uses_norm_order() {
        specs.push(base.clone().with_p(2));
    }
    if f.is_compound() {
        use crate::models::CompoundVariant;
        for v in [CompoundVariant::Tail, CompoundVariant::Complete] {
            specs.push(base.clone().with_variant(v));
        }
    }
    specs
}

/// Resolve split paths: flags first, then the config's `train`/`valid`/`test`.
fn load(data: &DataArgs, config: Option<&Map<String, Value>>) -> Result<(Vocabulary, TripleStore), CliError> {
    let pick = |flag: &Option<PathBuf>, key: &str| -> Result<PathBuf, CliError> {
        if let Some(p) = flag {
            return Ok(p.clone());
        }
        match config.and_then(|m| m.get(key)) {
            Some(Value::String(s)) => Ok(PathBuf::from(s)),
            Some(other) => Err(CliError::Usage(format!("{key}: expected a path string, got {other}"))),
            None => Err(CliError::Usage(format!("missing --{key} path"))),
        }
    };
    let train = pick(&data.train, "train")?;
    let valid = pick(&data.valid, "valid")?;
    let test = pick(&data.test, "test")?;
    Ok(load_dataset(&train, &valid, &test)?)
}

/// Entry point for the binary: run, report, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(args, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
