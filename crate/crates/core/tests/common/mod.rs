//! Independent oracles shared by the integration suites.
//!
//! Nothing here calls back into the code it checks: matrices are multiplied,
//! inverted and ranked with plain loops over `Vec<Vec<f64>>`.
#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use kge::eval::{rank_query, TiePolicy};
use kge::geometry::{
    apply_block_diagonal, compose, invert, make_operator_2d, make_operator_3d, rotation_3d_closed_form,
    rotation_x, rotation_y, rotation_z, CompoundLayout, CompoundParams, Group, Op2d, Op3d, OperatorKind,
    OperatorMatrix, ShearCoeffs, ShearForm, Space,
};
use kge::graph::{Direction, Query, Triple, TripleStore};
use kge::models::{init_table, CompoundVariant, EmbeddingTable, Family, Model, ModelSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Dense = Vec<Vec<f64>>;

/// Result of one suite: pass flag plus a one-line summary.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub ok: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            ok,
            detail: detail.into(),
        }
    }
}

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

// ---------------------------------------------------------------- matrices

pub fn identity(n: usize) -> Dense {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let m = b[0].len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| a.iter().map(|row| row[j]).collect()).collect()
}

/// Frobenius norm of `a - b`.
pub fn frobenius_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)))
        .sum::<f64>()
        .sqrt()
}

pub fn max_abs_diff(a: &Dense, b: &Dense) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Upper-left `n × n` block.
pub fn linear_block(m: &Dense, n: usize) -> Dense {
    m[..n].iter().map(|row| row[..n].to_vec()).collect()
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(a: &Dense) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            d = -d;
        }
        d *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    d
}

/// Largest entry of `|AᵀA − I|`.
pub fn orthogonality_error(a: &Dense) -> f64 {
    max_abs_diff(&matmul(&transpose(a), a), &identity(a.len()))
}

pub fn homogeneous_row_ok(m: &Dense) -> bool {
    let n = m.len() - 1;
    (0..n).all(|j| m[n][j] == 0.0) && m[n][n] == 1.0
}

/// Dense `(D × D)` block-diagonal matrix plus stacked translations.
pub fn dense_block_diagonal(ops: &[OperatorMatrix]) -> (Dense, Vec<f64>) {
    let b = ops[0].dim();
    let d = b * ops.len();
    let mut a = vec![vec![0.0; d]; d];
    let mut shift = vec![0.0; d];
    for (k, op) in ops.iter().enumerate() {
        let rows = op.rows();
        for i in 0..b {
            for j in 0..b {
                a[k * b + i][k * b + j] = rows[i][j];
            }
            shift[k * b + i] = rows[i][b];
        }
    }
    (a, shift)
}

pub fn dense_apply(a: &Dense, shift: &[f64], v: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(shift)
        .map(|(row, s)| row.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() + s)
        .collect()
}

// ------------------------------------------------------------ random draws

pub fn angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(-PI..PI)
}

pub fn unit3(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Scale factor with `|s| ∈ (0.1, 3)` and random sign.
pub fn scale(rng: &mut ChaCha8Rng) -> f64 {
    let s = rng.gen_range(0.1001..3.0);
    if rng.gen::<bool>() {
        s
    } else {
        -s
    }
}

pub fn vec3(rng: &mut ChaCha8Rng, r: f64) -> [f64; 3] {
    [rng.gen_range(-r..r), rng.gen_range(-r..r), rng.gen_range(-r..r)]
}

pub fn rotation3(rng: &mut ChaCha8Rng) -> OperatorMatrix {
    make_operator_3d(Op3d::Rotation {
        yaw: angle(rng),
        pitch: angle(rng),
        roll: angle(rng),
    })
    .unwrap()
}

pub fn rigid3(rng: &mut ChaCha8Rng) -> OperatorMatrix {
    let t = make_operator_3d(Op3d::Translation(vec3(rng, 5.0))).unwrap();
    compose(&[t, rotation3(rng)]).unwrap()
}

pub fn rigid2(rng: &mut ChaCha8Rng) -> OperatorMatrix {
    let t = make_operator_2d(Op2d::Translation {
        vx: rng.gen_range(-5.0..5.0),
        vy: rng.gen_range(-5.0..5.0),
    });
    compose(&[t, make_operator_2d(Op2d::Rotation { theta: angle(rng) })]).unwrap()
}

/// Random invertible 3D affine: `T · S · R · F · H` with small shear.
pub fn affine3(rng: &mut ChaCha8Rng) -> OperatorMatrix {
    let coeffs = ShearCoeffs::from_slice(&(0..6).map(|_| rng.gen_range(-0.3..0.3)).collect::<Vec<_>>());
    compose(&[
        make_operator_3d(Op3d::Translation(vec3(rng, 5.0))).unwrap(),
        make_operator_3d(Op3d::Scaling([scale(rng), scale(rng), scale(rng)])).unwrap(),
        rotation3(rng),
        make_operator_3d(Op3d::Reflection(unit3(rng))).unwrap(),
        make_operator_3d(Op3d::Shear {
            coeffs,
            form: if rng.gen::<bool>() {
                ShearForm::Product
            } else {
                ShearForm::Displayed
            },
        })
        .unwrap(),
    ])
    .unwrap()
}

pub fn affine2(rng: &mut ChaCha8Rng) -> OperatorMatrix {
    compose(&[
        make_operator_2d(Op2d::Translation {
            vx: rng.gen_range(-5.0..5.0),
            vy: rng.gen_range(-5.0..5.0),
        }),
        make_operator_2d(Op2d::Scaling {
            sx: scale(rng),
            sy: scale(rng),
        }),
        make_operator_2d(Op2d::Rotation { theta: angle(rng) }),
    ])
    .unwrap()
}

/// Random block parameters for `layout`, with unit reflection normals and
/// scales bounded away from zero.
pub fn random_block(layout: &CompoundLayout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dim = layout.block_dim();
    let mut out = Vec::new();
    for &kind in layout.order() {
        match kind {
            OperatorKind::Translation => out.extend((0..dim).map(|_| rng.gen_range(-2.0..2.0))),
            OperatorKind::Scaling => out.extend((0..dim).map(|_| scale(rng))),
            OperatorKind::Rotation => out.extend((0..kind.param_count(dim).unwrap()).map(|_| angle(rng))),
            OperatorKind::Reflection => out.extend(unit3(rng)),
            OperatorKind::Shear => out.extend((0..6).map(|_| rng.gen_range(-0.5..0.5))),
        }
    }
    out
}

// ---------------------------------------------------------------- ranking

/// Rank by sorting: the target's tie group occupies positions `first..=last`
/// of the descending order.
pub fn sort_rank(scores: &[f64], candidates: &[usize], target: usize, policy: TiePolicy) -> f64 {
    let mut sorted: Vec<f64> = candidates.iter().map(|&c| scores[c]).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let s = scores[target];
    let first = sorted.iter().position(|&x| x == s).unwrap() + 1;
    let last = sorted.iter().rposition(|&x| x == s).unwrap() + 1;
    match policy {
        TiePolicy::Optimistic => first as f64,
        TiePolicy::Pessimistic => last as f64,
        TiePolicy::Mean => (first + last) as f64 / 2.0,
    }
}

/// Known-true answers to `query` found by scanning every split.
pub fn scan_known(store: &TripleStore, query: &Query) -> Vec<usize> {
    let mut out: Vec<usize> = store
        .train()
        .iter()
        .chain(store.valid())
        .chain(store.test())
        .filter_map(|t| match *query {
            Query::Tail { head, relation } if t.head == head && t.relation == relation => Some(t.tail),
            Query::Head { relation, tail } if t.tail == tail && t.relation == relation => Some(t.head),
            _ => None,
        })
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Random triples over `ne` entities and `nr` relations, split 70/15/15.
pub fn random_store(rng: &mut ChaCha8Rng, ne: usize, nr: usize, n: usize) -> TripleStore {
    let mut all: Vec<Triple> = (0..n)
        .map(|_| Triple::new(rng.gen_range(0..ne), rng.gen_range(0..nr), rng.gen_range(0..ne)))
        .collect();
    all.sort();
    all.dedup();
    all.shuffle(rng);
    let n_train = (all.len() * 7 / 10).max(1);
    let n_valid = (all.len() - n_train) / 2;
    let test = all.split_off(n_train + n_valid);
    let valid = all.split_off(n_train);
    TripleStore::new(ne, nr, all, valid, test).unwrap()
}

/// Models used by the ranking suite; small so a draw is cheap.
pub fn ranking_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new(Family::TransE, 4),
        ModelSpec::new(Family::DistMult, 4),
        ModelSpec::new(Family::RotatE, 4).with_p(2),
        ModelSpec::new(Family::CompoundE, 4),
        ModelSpec::new(Family::ComplEx, 4),
    ]
}

/// Table for `spec` with some entity rows copied over others so that exact
/// score ties occur.
pub fn tied_table(spec: &ModelSpec, ne: usize, nr: usize, rng: &mut ChaCha8Rng) -> EmbeddingTable<f64> {
    let mut t = init_table::<f64>(spec, ne, nr, rng.gen()).unwrap();
    for _ in 0..rng.gen_range(0..=ne / 2) {
        let src = rng.gen_range(0..ne);
        let dst = rng.gen_range(0..ne);
        let row = t.entity(src).to_vec();
        t.entity_mut(dst).copy_from_slice(&row);
    }
    t
}

// ------------------------------------------------------------------ suites

pub fn geometry_suite(draws: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 6];
    let names = ["closure", "orthonormality", "involution", "inverse", "block-dense", "closed-form"];
    let mut problems = Vec::new();
    for i in 0..draws {
        // SE and SO closure
        let se = rigid3(&mut rng).mul(&rigid3(&mut rng)).unwrap();
        let so = rotation3(&mut rng).mul(&rotation3(&mut rng)).unwrap();
        let se2 = rigid2(&mut rng).mul(&rigid2(&mut rng)).unwrap();
        for (op, want) in [(&se, Group::SE), (&so, Group::SO), (&se2, Group::SE)] {
            let m = op.rows();
            let a = linear_block(&m, op.dim());
            let e = orthogonality_error(&a).max((det(&a) - 1.0).abs());
            worst[0] = worst[0].max(e);
            if op.group() > want || !homogeneous_row_ok(&m) {
                problems.push(format!("draw {i}: product tagged {:?}, expected {want:?}", op.group()));
            }
        }
        if so.translation().iter().any(|&x| x != 0.0) {
            problems.push(format!("draw {i}: SO product has a translation"));
        }

        // rotation orthonormality and factorization
        let (a, b, c) = (angle(&mut rng), angle(&mut rng), angle(&mut rng));
        let r = make_operator_3d(Op3d::Rotation {
            yaw: a,
            pitch: b,
            roll: c,
        })
        .unwrap();
        let lin = linear_block(&r.rows(), 3);
        worst[1] = worst[1].max(orthogonality_error(&lin).max((det(&lin) - 1.0).abs()));
        let chained = compose(&[rotation_z(a), rotation_y(b), rotation_x(c)]).unwrap();
        if r.rows() != chained.rows() {
            problems.push(format!("draw {i}: rotation differs from R_z·R_y·R_x"));
        }
        worst[5] = worst[5].max(max_abs_diff(&r.rows(), &rotation_3d_closed_form(a, b, c).rows()));

        // Householder involution
        let f = make_operator_3d(Op3d::Reflection(unit3(&mut rng))).unwrap();
        let fm = f.rows();
        worst[2] = worst[2].max(max_abs_diff(&matmul(&fm, &fm), &identity(4)));
        let d = det(&linear_block(&fm, 3));
        if (d + 1.0).abs() > 1e-9 {
            problems.push(format!("draw {i}: reflection det {d}"));
        }

        // inverse, both sides
        for op in [affine3(&mut rng), affine2(&mut rng)] {
            let inv = invert(&op).unwrap();
            let n = op.size();
            let left = frobenius_diff(&matmul(&inv.rows(), &op.rows()), &identity(n));
            let right = frobenius_diff(&matmul(&op.rows(), &inv.rows()), &identity(n));
            worst[3] = worst[3].max(left).max(right);
        }

        // blockwise against dense
        for space in [Space::Planar, Space::Spatial] {
            let layout = CompoundLayout::default_for(space);
            let blocks = rng.gen_range(1..5);
            let values: Vec<f64> = (0..blocks).flat_map(|_| random_block(&layout, &mut rng)).collect();
            let params = CompoundParams::new(layout, values).unwrap();
            let v: Vec<f64> = (0..params.embedding_dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let got = apply_block_diagonal(&params, &v).unwrap();
            let (dense, shift) = dense_block_diagonal(&params.operators());
            let want = dense_apply(&dense, &shift, &v);
            let e = got.iter().zip(&want).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst[4] = worst[4].max(e);
        }
    }
    let limits = [1e-9, 1e-9, 1e-9, 1e-9, 1e-9, 1e-12];
    for k in 0..6 {
        if worst[k].is_nan() || worst[k] >= limits[k] {
            problems.push(format!("{} error {:.2e} over {:.0e}", names[k], worst[k], limits[k]));
        }
    }
    let summary = names
        .iter()
        .zip(&worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Outcome::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{draws} draws; max errors: {summary}")
        } else {
            format!("{} problem(s), first: {}", problems.len(), problems[0])
        },
    )
}

pub fn ranking_suite(kgs: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = ranking_specs();
    let mut queries = 0usize;
    let mut ties = 0usize;
    for g in 0..kgs {
        let ne = rng.gen_range(2..=20);
        let nr = rng.gen_range(1..=3);
        let n = rng.gen_range(5..60);
        let store = random_store(&mut rng, ne, nr, n);
        let spec = specs[g % specs.len()].clone();
        let model = Model::new(spec.clone()).unwrap();
        let table = tied_table(&spec, ne, nr, &mut rng);
        let all: Vec<usize> = (0..ne).collect();
        for &t in store.train().iter().chain(store.valid()).chain(store.test()) {
            for dir in [Direction::Tail, Direction::Head] {
                let q = Query::from_triple(t, dir);
                let target = match dir {
                    Direction::Tail => t.tail,
                    Direction::Head => t.head,
                };
                let scores: Vec<f64> = all.iter().map(|&e| model.score(&table, q.complete(e)).unwrap()).collect();
                let known = scan_known(&store, &q);
                let filtered: Vec<usize> = all
                    .iter()
                    .copied()
                    .filter(|&e| e == target || !known.contains(&e))
                    .collect();
                if scores.iter().filter(|&&s| s == scores[target]).count() > 1 {
                    ties += 1;
                }
                for policy in TiePolicy::ALL {
                    let got = rank_query(&model, &table, &store, &q, target, policy).unwrap();
                    let raw = sort_rank(&scores, &all, target, policy);
                    let filt = sort_rank(&scores, &filtered, target, policy);
                    if got.raw_rank != raw || got.filtered_rank != filt {
                        return Outcome::new(
                            false,
                            format!(
                                "kg {g} {t} {dir} {}: got raw {} filtered {}, oracle {raw} {filt}",
                                policy.name(),
                                got.raw_rank,
                                got.filtered_rank
                            ),
                        );
                    }
                }
                queries += 1;
            }
        }
    }
    let m = kge::eval::Metrics::from_ranks(&[1.0, 2.0, 4.0]);
    let hand_mrr = (1.0 + 0.5 + 0.25) / 3.0;
    let hand_ok = (m.mrr - 7.0 / 12.0).abs() < 1e-15
        && (m.mrr - hand_mrr).abs() < 1e-15
        && (m.hits_at_3 - 2.0 / 3.0).abs() < 1e-15
        && m.hits_at_1 == 1.0 / 3.0
        && m.hits_at_10 == 1.0
        && (m.mr - 7.0 / 3.0).abs() < 1e-15;
    Outcome::new(
        hand_ok,
        format!(
            "{kgs} KGs, {queries} queries x 3 tie policies exact ({ties} with ties); ranks {{1,2,4}} -> MRR {:.4}, Hits@3 {:.4}",
            m.mrr, m.hits_at_3
        ),
    )
}

fn table_for(spec: &ModelSpec, ne: usize, nr: usize) -> EmbeddingTable<f64> {
    let l = spec.layout();
    EmbeddingTable::<f64>::zeros(ne, nr, l.entity_width, l.relation_width, l.shared_len)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-r..r)).collect()
}

/// The five relation-pattern constructions, each over `trials` random draws.
pub fn pattern_suite(trials: usize, seed: u64) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::new();
    let mut ok = true;
    let d = 8;

    // RotatE: every phase π makes the relation symmetric
    let mut worst = 0.0f64;
    for p in [1u8, 2] {
        let spec = ModelSpec::new(Family::RotatE, d).with_p(p);
        let model = Model::new(spec.clone()).unwrap();
        for _ in 0..trials {
            let mut t = table_for(&spec, 2, 1);
            t.entity_mut(0).copy_from_slice(&rand_vec(&mut rng, d, 1.0));
            t.entity_mut(1).copy_from_slice(&rand_vec(&mut rng, d, 1.0));
            t.relation_mut(0).fill(PI);
            let a = model.score(&t, Triple::new(0, 0, 1)).unwrap();
            let b = model.score(&t, Triple::new(1, 0, 0)).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    ok &= worst < 1e-9;
    report.push(format!("rotate-symmetry {worst:.1e}"));

    // TransE antisymmetry witness and composition
    let spec = ModelSpec::new(Family::TransE, d);
    let model = Model::new(spec.clone()).unwrap();
    let (mut anti_ok, mut comp) = (true, 0.0f64);
    for _ in 0..trials {
        let h = rand_vec(&mut rng, d, 1.0);
        let r1 = rand_vec(&mut rng, d, 1.0);
        let r2 = rand_vec(&mut rng, d, 1.0);
        let t1: Vec<f64> = h.iter().zip(&r1).map(|(a, b)| a + b).collect();
        let t2: Vec<f64> = t1.iter().zip(&r2).map(|(a, b)| a + b).collect();
        let r12: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
        let mut t = table_for(&spec, 3, 2);
        t.entity_mut(0).copy_from_slice(&h);
        t.entity_mut(1).copy_from_slice(&t1);
        t.entity_mut(2).copy_from_slice(&t2);
        t.relation_mut(0).copy_from_slice(&r1);
        t.relation_mut(1).copy_from_slice(&r12);
        let fwd = model.score(&t, Triple::new(0, 0, 1)).unwrap();
        let back = model.score(&t, Triple::new(1, 0, 0)).unwrap();
        anti_ok &= fwd.abs() < 1e-12 && back < fwd;
        comp = comp.max(model.score(&t, Triple::new(0, 1, 2)).unwrap().abs());
    }
    ok &= anti_ok && comp < 1e-9;
    report.push(format!("transe-antisymmetry {}", if anti_ok { "ok" } else { "FAILED" }));
    report.push(format!("transe-composition {comp:.1e}"));

    // CompoundE inversion: r' is read off invert(M_r)
    let (inv_worst, fit_worst) = compound_inversion(trials, &mut rng);
    ok &= inv_worst < 1e-6 && fit_worst < 1e-6;
    report.push(format!("compound-inversion {inv_worst:.1e}"));

    // DistMult symmetric for every input
    let spec = ModelSpec::new(Family::DistMult, d);
    let model = Model::new(spec.clone()).unwrap();
    let mut sym = true;
    for _ in 0..trials {
        let t = tied_table(&spec, 4, 2, &mut rng);
        let (h, r, tl) = (rng.gen_range(0..4), rng.gen_range(0..2), rng.gen_range(0..4));
        sym &= model.score(&t, Triple::new(h, r, tl)).unwrap() == model.score(&t, Triple::new(tl, r, h)).unwrap();
    }
    ok &= sym;
    report.push(format!("distmult-symmetry {}", if sym { "exact" } else { "FAILED" }));
    Outcome::new(ok, format!("{trials} draws each; {}", report.join(", ")))
}

/// CompoundE (Head variant, default `T·S·R`, uniform scale per block so the
/// inverse stays inside the family). Builds `t = M_r h`, then fills `r'` from
/// the entries of `invert(M_r)` and scores `(t, r', h)`.
///
/// Returns the worst `|score(t, r', h)|` and the worst `|score(h, r, t)|`.
fn compound_inversion(trials: usize, rng: &mut ChaCha8Rng) -> (f64, f64) {
    let d = 6;
    let (mut inv_worst, mut fit_worst) = (0.0f64, 0.0f64);
    for p in [1u8, 2] {
        let spec = ModelSpec::new(Family::CompoundE, d).with_p(p);
        let model = Model::new(spec.clone()).unwrap();
        let layout = spec.compound_layout().unwrap();
        let offs = layout.offsets();
        let at = |k: OperatorKind| offs.iter().find(|(kind, _)| *kind == k).unwrap().1;
        for _ in 0..trials {
            let mut rel = Vec::new();
            let mut inv_rel = Vec::new();
            for _ in 0..d / 2 {
                let mut block = layout.neutral_block();
                block[at(OperatorKind::Translation)] = rng.gen_range(-1.0..1.0);
                block[at(OperatorKind::Translation) + 1] = rng.gen_range(-1.0..1.0);
                let s = rng.gen_range(0.5..2.0);
                block[at(OperatorKind::Scaling)] = s;
                block[at(OperatorKind::Scaling) + 1] = s;
                block[at(OperatorKind::Rotation)] = angle(rng);
                let inv = invert(&layout.block_operator(&block)).unwrap().rows();
                // inv = [[s'R', v'], [0, 1]] with s' = sqrt(det), R' a rotation
                let s_inv = (inv[0][0] * inv[1][1] - inv[0][1] * inv[1][0]).sqrt();
                let mut ib = layout.neutral_block();
                ib[at(OperatorKind::Translation)] = inv[0][2];
                ib[at(OperatorKind::Translation) + 1] = inv[1][2];
                ib[at(OperatorKind::Scaling)] = s_inv;
                ib[at(OperatorKind::Scaling) + 1] = s_inv;
                ib[at(OperatorKind::Rotation)] = inv[1][0].atan2(inv[0][0]);
                rel.extend(block);
                inv_rel.extend(ib);
            }
            let h = rand_vec(rng, d, 1.0);
            let params = CompoundParams::new(layout.clone(), rel.clone()).unwrap();
            let t_vec = apply_block_diagonal(&params, &h).unwrap();
            let mut t = table_for(&spec, 2, 2);
            t.entity_mut(0).copy_from_slice(&h);
            t.entity_mut(1).copy_from_slice(&t_vec);
            t.relation_mut(0).copy_from_slice(&rel);
            t.relation_mut(1).copy_from_slice(&inv_rel);
            fit_worst = fit_worst.max(model.score(&t, Triple::new(0, 0, 1)).unwrap().abs());
            inv_worst = inv_worst.max(model.score(&t, Triple::new(1, 1, 0)).unwrap().abs());
        }
    }
    (inv_worst, fit_worst)
}

/// CompoundE with translation only, and with `T·S·R` at unit scale and zero
/// angle, against TransE; CompoundE-Complete with scaling only against
/// PairRE. Returns the worst absolute score difference per comparison.
pub fn degeneracy_errors(n: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 8;
    let ne = 20;
    let (mut t_only, mut neutral, mut pair) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n {
        let p = if i % 2 == 0 { 1 } else { 2 };
        let h = rand_vec(&mut rng, d, 2.0);
        let tl = rand_vec(&mut rng, d, 2.0);
        let r = rand_vec(&mut rng, d, 2.0);
        let rt = rand_vec(&mut rng, d, 2.0);
        let mut ents = EmbeddingTable::<f64>::zeros(ne, 1, d, d, 0);
        ents.entity_mut(0).copy_from_slice(&h);
        ents.entity_mut(1).copy_from_slice(&tl);
        let tr = Triple::new(0, 0, 1);

        let transe = ModelSpec::new(Family::TransE, d).with_p(p);
        let mut te = ents.clone();
        te.relation_mut(0).copy_from_slice(&r);
        let want = Model::new(transe).unwrap().score(&te, tr).unwrap();

        let ce_t = ModelSpec::new(Family::CompoundE, d)
            .with_p(p)
            .with_operators(vec![OperatorKind::Translation]);
        let got = Model::new(ce_t).unwrap().score(&te, tr).unwrap();
        t_only = t_only.max((got - want).abs());

        let ce = ModelSpec::new(Family::CompoundE, d).with_p(p);
        let layout = ce.compound_layout().unwrap();
        let offs = layout.offsets();
        let (_, ta) = offs.iter().find(|(k, _)| *k == OperatorKind::Translation).unwrap();
        let mut rel = Vec::new();
        for b in 0..d / 2 {
            let mut block = layout.neutral_block();
            block[*ta] = r[2 * b];
            block[*ta + 1] = r[2 * b + 1];
            rel.extend(block);
        }
        let mut tc = EmbeddingTable::<f64>::zeros(ne, 1, d, rel.len(), 0);
        tc.entity_mut(0).copy_from_slice(&h);
        tc.entity_mut(1).copy_from_slice(&tl);
        tc.relation_mut(0).copy_from_slice(&rel);
        let got = Model::new(ce).unwrap().score(&tc, tr).unwrap();
        neutral = neutral.max((got - want).abs());

        let pairre = ModelSpec::new(Family::PairRE, d).with_p(p);
        let mut tp = EmbeddingTable::<f64>::zeros(ne, 1, d, 2 * d, 0);
        tp.entity_mut(0).copy_from_slice(&h);
        tp.entity_mut(1).copy_from_slice(&tl);
        tp.relation_mut(0)[..d].copy_from_slice(&r);
        tp.relation_mut(0)[d..].copy_from_slice(&rt);
        let want = Model::new(pairre).unwrap().score(&tp, tr).unwrap();
        let ce_s = ModelSpec::new(Family::CompoundE, d)
            .with_p(p)
            .with_variant(CompoundVariant::Complete)
            .with_operators(vec![OperatorKind::Scaling]);
        let got = Model::new(ce_s).unwrap().score(&tp, tr).unwrap();
        pair = pair.max((got - want).abs());
    }
    (t_only, neutral, pair)
}

/// Harmonic number `H_n`.
pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum()
}
