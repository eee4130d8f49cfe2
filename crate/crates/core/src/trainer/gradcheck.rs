//! Analytic gradients against central differences, in double precision.
//!
//! Piecewise-linear scores (L1 distances, hinges, `|sin|`) have kinks where
//! central differences are meaningless. A probe whose one-sided differences
//! disagree at some coordinate is treated as straddling a kink and redrawn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::Triple;
use crate::models::{init_table, EmbeddingTable, Model, ModelSpec, SparseGrads};
use crate::objectives::{adversarial_weights, loss, self_adversarial_weighted, LossKind, LossParams};

/// Finite-difference step for model parameters.
pub const FD_STEP: f64 = 1e-5;
/// Finite-difference step for loss inputs.
pub const LOSS_FD_STEP: f64 = 1e-6;
/// One-sided differences disagreeing by more than this (relative) mark a kink.
pub const KINK_TOL: f64 = 1e-4;
/// Redraws allowed per probe before it is reported as unusable.
pub const MAX_KINK_REDRAWS: usize = 50;

const N_ENTITIES: usize = 5;
const N_RELATIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub label: String,
    pub probes: usize,
    /// Scalar derivatives compared.
    pub coordinates: usize,
    /// Probes discarded for sitting on a kink.
    pub redraws: usize,
    /// `|analytic − fd| / max(1, |fd|)`, maximized.
    pub max_rel_error: f64,
    pub tol: f64,
    /// Where the maximum occurred.
    pub worst: Option<String>,
    /// Probes that found no kink-free draw.
    pub unusable: usize,
}

impl GradCheckReport {
    fn new(label: String, tol: f64) -> Self {
        Self {
            label,
            probes: 0,
            coordinates: 0,
            redraws: 0,
            max_rel_error: 0.0,
            tol,
            worst: None,
            unusable: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.unusable == 0 && self.max_rel_error <= self.tol
    }

    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.coordinates += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = Some(at());
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(b.abs())
}

/// Derivative estimate plus a kink flag from the one-sided differences.
fn central(f: &mut dyn FnMut(f64) -> f64, x: f64, fx: f64, step: f64, tol: f64) -> (f64, bool) {
    let hi = f(x + step);
    let lo = f(x - step);
    let c = (hi - lo) / (2.0 * step);
    let fwd = (hi - fx) / step;
    let bwd = (fx - lo) / step;
    (c, rel_err(fwd, bwd) > tol.max(KINK_TOL))
}

#[derive(Clone, Copy)]
enum Slot {
    Entity(usize, usize),
    Relation(usize, usize),
    Shared(usize),
}

impl Slot {
    fn get(self, t: &mut EmbeddingTable<f64>) -> &mut f64 {
        match self {
            Slot::Entity(e, i) => &mut t.entity_mut(e)[i],
            Slot::Relation(r, i) => &mut t.relation_mut(r)[i],
            Slot::Shared(i) => &mut t.shared_mut()[i],
        }
    }

    fn describe(self) -> String {
        match self {
            Slot::Entity(e, i) => format!("entity {e}[{i}]"),
            Slot::Relation(r, i) => format!("relation {r}[{i}]"),
            Slot::Shared(i) => format!("shared[{i}]"),
        }
    }
}

fn slots(g: &SparseGrads) -> Vec<(Slot, f64)> {
    let mut out = Vec::new();
    for (&e, v) in &g.entities {
        out.extend(v.iter().enumerate().map(|(i, &a)| (Slot::Entity(e, i), a)));
    }
    for (&r, v) in &g.relations {
        out.extend(v.iter().enumerate().map(|(i, &a)| (Slot::Relation(r, i), a)));
    }
    if let Some(v) = &g.shared {
        out.extend(v.iter().enumerate().map(|(i, &a)| (Slot::Shared(i), a)));
    }
    out
}

/// A random small table with relation and shared rows moved off their
/// structured initial values.
fn probe_table(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> EmbeddingTable<f64> {
    let mut t = init_table::<f64>(spec, N_ENTITIES, N_RELATIONS, rng.gen()).expect("spec validated");
    for x in t.relations_mut() {
        *x += rng.gen_range(-0.3..0.3);
    }
    for x in t.shared_mut() {
        *x += rng.gen_range(-0.3..0.3);
    }
    t
}

/// Check `Model::grad` for `spec` on `probes` random instances.
pub fn gradient_check(spec: &ModelSpec, probes: usize, tol: f64, seed: u64) -> GradCheckReport {
    let model = Model::new(spec.clone()).expect("spec validated");
    gradient_check_with(spec, probes, tol, seed, &|t, tr, up| {
        model.grad(t, tr, up).expect("probe table is well formed")
    })
}

/// As [`gradient_check`], with the analytic gradient supplied by `grad`.
pub fn gradient_check_with(
    spec: &ModelSpec,
    probes: usize,
    tol: f64,
    seed: u64,
    grad: &dyn Fn(&EmbeddingTable<f64>, Triple, f64) -> SparseGrads,
) -> GradCheckReport {
    let model = Model::new(spec.clone()).expect("spec validated");
    let mut label = format!("{} p={}", spec.family, spec.p);
    if spec.family.is_compound() {
        label.push_str(&format!(" {:?}", spec.variant).to_lowercase());
    }
    let mut report = GradCheckReport::new(label, tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..probes {
        let mut done = false;
        for _ in 0..=MAX_KINK_REDRAWS {
            let mut table = probe_table(spec, &mut rng);
            let triple = Triple::new(
                rng.gen_range(0..N_ENTITIES),
                rng.gen_range(0..N_RELATIONS),
                rng.gen_range(0..N_ENTITIES),
            );
            let up = rng.gen_range(0.5..1.5) * if rng.gen::<bool>() { -1.0 } else { 1.0 };
            let g = grad(&table, triple, up);
            let fx = model.score(&table, triple).expect("finite probe") * up;
            let mut errs = Vec::new();
            let mut kink = false;
            for (slot, analytic) in slots(&g) {
                let x = *slot.get(&mut table);
                let mut f = |v: f64| {
                    *slot.get(&mut table) = v;
                    let s = model.score(&table, triple).map(|s| s * up).unwrap_or(f64::NAN);
                    *slot.get(&mut table) = x;
                    s
                };
                let (fd, at_kink) = central(&mut f, x, fx, FD_STEP, tol);
                if at_kink {
                    kink = true;
                    break;
                }
                errs.push((rel_err(analytic, fd), slot));
            }
            if kink {
                report.redraws += 1;
                continue;
            }
            for (e, slot) in errs {
                report.record(e, || format!("{triple} {}", slot.describe()));
            }
            done = true;
            break;
        }
        report.probes += 1;
        if !done {
            report.unusable += 1;
        }
    }
    report
}

/// Check the score derivatives of one loss on random score vectors.
/// Self-adversarial weights are held fixed, as they are in training.
pub fn loss_gradient_check(kind: LossKind, probes: usize, tol: f64, seed: u64) -> GradCheckReport {
    let mut report = GradCheckReport::new(kind.name().to_owned(), tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = LossParams::default();
    for _ in 0..probes {
        let mut done = false;
        for _ in 0..=MAX_KINK_REDRAWS {
            let k = rng.gen_range(1..8);
            let mut scores: Vec<f64> = (0..=k).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let weights = adversarial_weights(&scores[1..], params.adversarial_temperature).expect("finite scores");
            let value = |s: &[f64]| -> f64 {
                if kind == LossKind::SelfAdversarial {
                    self_adversarial_weighted(s[0], &s[1..], &weights, params.margin).value
                } else {
                    loss(kind, s[0], &s[1..], &params).expect("finite scores").value
                }
            };
            let lv = loss(kind, scores[0], &scores[1..], &params).expect("finite scores");
            let analytic: Vec<f64> = std::iter::once(lv.d_pos).chain(lv.d_negs.iter().copied()).collect();
            let fx = value(&scores);
            let mut errs = Vec::new();
            let mut kink = false;
            for i in 0..scores.len() {
                let x = scores[i];
                let mut f = |v: f64| {
                    scores[i] = v;
                    let out = value(&scores);
                    scores[i] = x;
                    out
                };
                let (fd, at_kink) = central(&mut f, x, fx, LOSS_FD_STEP, tol);
                if at_kink {
                    kink = true;
                    break;
                }
                errs.push((rel_err(analytic[i], fd), i));
            }
            if kink {
                report.redraws += 1;
                continue;
            }
            for (e, i) in errs {
                report.record(e, || format!("score {i}"));
            }
            done = true;
            break;
        }
        report.probes += 1;
        if !done {
            report.unusable += 1;
        }
    }
    report
}
