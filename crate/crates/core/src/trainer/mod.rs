//! Mini-batch training, optimizers, checkpoints and gradient checking.
//!
//! One epoch shuffles the training split and walks it in batches. Negatives
//! for a whole batch are drawn up front from a single seeded stream, then the
//! batch is scored in fixed-size chunks that may run on any number of
//! threads. Chunk gradients are merged in chunk order, so the result does not
//! depend on the thread count.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod optim;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{evaluate, EvalError};
use crate::graph::{Triple, TripleStore, Vocabulary};
use crate::models::{
    init_embeddings, to_f64, EmbeddingTable, Model, ModelError, PairGrad, Prepared, SparseGrads,
};
use crate::objectives::{loss, sample_negatives, NegativeBatch, ObjectiveError};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, RngState};
pub use config::{ConfigError, OptimizerKind, TrainConfig};
pub use gradcheck::{gradient_check, loss_gradient_check, GradCheckReport};
pub use optim::OptimizerState;

/// Positives handled by one work unit inside a batch.
pub const CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("cannot resume: {0}")]
    Resume(String),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Summary of one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean loss per positive triple.
    pub loss: f64,
    /// Filtered validation MRR, when validation ran this epoch.
    pub val_mrr: Option<f64>,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6} val_mrr=", self.epoch, self.loss)?;
        match self.val_mrr {
            Some(m) => write!(f, "{m:.6}"),
            None => f.write_str("nan"),
        }
    }
}

/// Result of [`train`]: the final checkpoint plus the epoch history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Fresh checkpoint at epoch 0: initialized table, zeroed optimizer state.
pub fn initial_checkpoint(config: &TrainConfig, vocab: &Vocabulary) -> Result<Checkpoint> {
    config.validate(None)?;
    let table = init_embeddings(&config.model, vocab.n_entities(), vocab.n_relations(), config.seed)?;
    let optimizer = OptimizerState::new(config.optimizer, &table);
    // the init stream and the training stream are separate
    let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    Ok(Checkpoint {
        spec: config.model.clone(),
        vocab_digest: vocab.digest(),
        entity_names: vocab.entity_names().to_vec(),
        relation_names: vocab.relation_names().to_vec(),
        table,
        optimizer,
        epoch: 0,
        best_val_mrr: f64::NEG_INFINITY,
        stale: 0,
        rng: RngState::capture(&rng),
    })
}

/// Train from scratch, or continue `resume` up to `config.epochs`.
///
/// `on_epoch` sees every epoch summary as it is produced.
pub fn train(
    config: &TrainConfig,
    vocab: &Vocabulary,
    store: &TripleStore,
    resume: Option<Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate(Some(store.train().len()))?;
    let mut ckpt = match resume {
        Some(c) => {
            check_resume(&c, config, vocab)?;
            c
        }
        None => initial_checkpoint(config, vocab)?,
    };
    let model = Model::new(config.model.clone())?;
    model.check_table(&ckpt.table)?;

    let known: HashSet<Triple> = store.train().iter().copied().collect();
    let mut rng = ckpt.rng.restore();
    let mut history = Vec::new();
    let mut stopped_early = false;
    let n = store.train().len();

    for epoch in ckpt.epoch as usize..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let mut batches = Vec::with_capacity(idx.len());
            for &i in idx {
                batches.push(sample_negatives(
                    store.train()[i],
                    config.negatives,
                    config.sampling,
                    store.n_entities(),
                    &known,
                    &mut rng,
                )?);
            }
            let (batch_loss, grads) = batch_gradient(&model, &ckpt.table, config, &batches)?;
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(TrainError::Diverged {
                    epoch: epoch + 1,
                    batch: b,
                    loss: batch_loss / idx.len() as f64,
                });
            }
            total += batch_loss;
            ckpt.optimizer
                .step(&mut ckpt.table, &grads, config.learning_rate);
            if config.entity_norm {
                for &e in grads.entities.keys() {
                    project_unit_ball(ckpt.table.entity_mut(e));
                }
            }
        }
        let mean = total / n as f64;
        if !mean.is_finite() {
            return Err(TrainError::Diverged {
                epoch: epoch + 1,
                batch: 0,
                loss: mean,
            });
        }

        let mut val_mrr = None;
        if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 && !store.valid().is_empty() {
            let (report, _) = evaluate(&model, &ckpt.table, store, store.valid(), config.tie_policy)?;
            let mrr = report.filtered.mrr;
            val_mrr = Some(mrr);
            if mrr > ckpt.best_val_mrr {
                ckpt.best_val_mrr = mrr;
                ckpt.stale = 0;
            } else {
                ckpt.stale += 1;
            }
        }
        ckpt.epoch = epoch as u32 + 1;
        ckpt.rng = RngState::capture(&rng);
        let log = EpochLog {
            epoch: epoch + 1,
            loss: mean,
            val_mrr,
        };
        on_epoch(&log);
        history.push(log);
        if config.patience > 0 && ckpt.stale as usize >= config.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: ckpt,
        history,
        stopped_early,
    })
}

fn check_resume(c: &Checkpoint, config: &TrainConfig, vocab: &Vocabulary) -> Result<()> {
    if c.spec != config.model {
        return Err(TrainError::Resume("checkpoint model differs from the config".into()));
    }
    if c.vocab_digest != vocab.digest() {
        return Err(TrainError::Resume("checkpoint vocabulary differs from the data".into()));
    }
    if c.optimizer.kind() != config.optimizer {
        return Err(TrainError::Resume("checkpoint optimizer differs from the config".into()));
    }
    Ok(())
}

/// Scale `row` onto the unit L2 ball if it lies outside.
pub fn project_unit_ball(row: &mut [f32]) {
    let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm > 1.0 {
        for x in row {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Chunk-local gradient sums. Relation entries hold prepared-form gradients.
struct Accum {
    loss: f64,
    entities: BTreeMap<usize, Vec<f64>>,
    relations: BTreeMap<usize, Vec<f64>>,
    shared: Vec<f64>,
}

impl Accum {
    fn merge(&mut self, other: Accum) {
        self.loss += other.loss;
        for (k, v) in other.entities {
            add_into(&mut self.entities, k, &v);
        }
        for (k, v) in other.relations {
            add_into(&mut self.relations, k, &v);
        }
        for (a, b) in self.shared.iter_mut().zip(&other.shared) {
            *a += b;
        }
    }
}

fn add_into(map: &mut BTreeMap<usize, Vec<f64>>, key: usize, g: &[f64]) {
    let slot = map.entry(key).or_insert_with(|| vec![0.0; g.len()]);
    for (a, b) in slot.iter_mut().zip(g) {
        *a += b;
    }
}

/// Summed loss and summed parameter gradients for one batch.
pub fn batch_gradient(
    model: &Model,
    table: &EmbeddingTable<f32>,
    config: &TrainConfig,
    batches: &[NegativeBatch],
) -> Result<(f64, SparseGrads)> {
    let mut prepared: BTreeMap<usize, Prepared> = BTreeMap::new();
    for nb in batches {
        prepared
            .entry(nb.positive.relation)
            .or_insert_with(|| model.prepare(table.relation(nb.positive.relation)));
    }
    let shared = table.shared_f64();
    let shared_len = shared.len();

    let parts: Vec<Result<Accum>> = batches
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accum {
                loss: 0.0,
                entities: BTreeMap::new(),
                relations: BTreeMap::new(),
                shared: vec![0.0; shared_len],
            };
            let mut pg = PairGrad::zeroed(model);
            let mut scores = Vec::with_capacity(config.negatives);
            for nb in chunk {
                let prep = &prepared[&nb.positive.relation];
                let score = |t: &Triple| {
                    let h = to_f64(table.entity(t.head));
                    let tl = to_f64(table.entity(t.tail));
                    model.score_prepared(prep, &h, &tl, &shared)
                };
                let pos = score(&nb.positive);
                scores.clear();
                scores.extend(nb.negatives.iter().map(|n| score(&n.triple)));
                let lv = match loss(config.loss, pos, &scores, &config.loss_params) {
                    Ok(lv) => lv,
                    // the caller reports divergence with the batch position
                    Err(ObjectiveError::NonFinite(_)) => {
                        acc.loss = f64::NAN;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                acc.loss += lv.value;
                let pairs = std::iter::once((nb.positive, lv.d_pos))
                    .chain(nb.negatives.iter().map(|n| n.triple).zip(lv.d_negs.iter().copied()));
                for (t, up) in pairs {
                    if up == 0.0 {
                        continue;
                    }
                    pg.head.fill(0.0);
                    pg.tail.fill(0.0);
                    pg.prepared.fill(0.0);
                    let h = to_f64(table.entity(t.head));
                    let tl = to_f64(table.entity(t.tail));
                    // pg.shared keeps accumulating across the chunk
                    model.grad_prepared(prep, &h, &tl, &shared, up, &mut pg);
                    add_into(&mut acc.entities, t.head, &pg.head);
                    add_into(&mut acc.entities, t.tail, &pg.tail);
                    add_into(&mut acc.relations, t.relation, &pg.prepared);
                }
            }
            acc.shared.copy_from_slice(&pg.shared);
            Ok(acc)
        })
        .collect();

    let mut total: Option<Accum> = None;
    for part in parts {
        let part = part?;
        match &mut total {
            Some(t) => t.merge(part),
            None => total = Some(part),
        }
    }
    let Some(total) = total else {
        return Ok((0.0, SparseGrads::default()));
    };

    let mut out = SparseGrads::default();
    let width = model.layout().relation_width;
    for (r, gp) in &total.relations {
        let mut g = vec![0.0; width];
        model.finish_relation(table.relation(*r), &prepared[r], gp, &mut g);
        out.add_relation(*r, &g);
    }
    for (e, g) in total.entities {
        out.entities.insert(e, g);
    }
    if shared_len > 0 {
        out.add_shared(&total.shared);
    }
    Ok((total.loss, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Family, ModelSpec};
    use crate::objectives::LossKind;

    fn toy() -> (Vocabulary, TripleStore) {
        let mut v = Vocabulary::new();
        for n in ["a", "b", "c", "d"] {
            v.intern_entity(n);
        }
        v.intern_relation("r");
        let train = vec![Triple::new(0, 0, 1), Triple::new(2, 0, 3)];
        let store = TripleStore::new(4, 1, train, vec![], vec![]).unwrap();
        (v, store)
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            model: ModelSpec::new(Family::TransE, 4).with_p(2),
            loss: LossKind::Margin,
            negatives: 2,
            batch_size: 2,
            epochs: 1,
            eval_every: 0,
            ..TrainConfig::for_family(Family::TransE)
        }
    }

    #[test]
    fn zero_learning_rate_keeps_table() {
        let (v, s) = toy();
        let config = TrainConfig {
            learning_rate: 0.0,
            optimizer: OptimizerKind::Sgd,
            ..toy_config()
        };
        let init = initial_checkpoint(&config, &v).unwrap();
        let out = train(&config, &v, &s, None, &mut |_| {}).unwrap();
        assert_eq!(out.checkpoint.table, init.table);
    }

    #[test]
    fn batch_gradient_matches_per_triple_sum() {
        let (v, s) = toy();
        let config = toy_config();
        let ck = initial_checkpoint(&config, &v).unwrap();
        let model = Model::new(config.model.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let known: HashSet<Triple> = s.train().iter().copied().collect();
        let batches: Vec<_> = s
            .train()
            .iter()
            .map(|&t| sample_negatives(t, 2, config.sampling, 4, &known, &mut rng).unwrap())
            .collect();
        let (_, got) = batch_gradient(&model, &ck.table, &config, &batches).unwrap();
        let mut want = SparseGrads::default();
        for nb in &batches {
            let pos = model.score(&ck.table, nb.positive).unwrap();
            let negs: Vec<f64> = nb
                .negatives
                .iter()
                .map(|n| model.score(&ck.table, n.triple).unwrap())
                .collect();
            let lv = loss(config.loss, pos, &negs, &config.loss_params).unwrap();
            want.merge(&model.grad(&ck.table, nb.positive, lv.d_pos).unwrap());
            for (n, d) in nb.negatives.iter().zip(&lv.d_negs) {
                want.merge(&model.grad(&ck.table, n.triple, *d).unwrap());
            }
        }
        for (e, g) in &got.entities {
            let w = &want.entities[e];
            for (a, b) in g.iter().zip(w) {
                assert!((a - b).abs() < 1e-9, "entity {e}");
            }
        }
    }

    #[test]
    fn projection_only_shrinks() {
        let mut row = [3.0f32, 4.0];
        project_unit_ball(&mut row);
        assert!((row[0] - 0.6).abs() < 1e-6 && (row[1] - 0.8).abs() < 1e-6);
        let mut small = [0.1f32, 0.2];
        project_unit_ball(&mut small);
        assert_eq!(small, [0.1, 0.2]);
    }

    #[test]
    fn epoch_log_format() {
        let l = EpochLog {
            epoch: 3,
            loss: 0.5,
            val_mrr: None,
        };
        assert_eq!(l.to_string(), "epoch=3 loss=0.500000 val_mrr=nan");
    }
}
