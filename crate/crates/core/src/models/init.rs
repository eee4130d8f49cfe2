use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingTable, Family, ModelSpec, Real, Result};
use crate::geometry::OperatorKind;

/// TuckER's core starts as uniform noise in `±TUCKER_CORE_NOISE`.
pub const TUCKER_CORE_NOISE: f64 = 0.01;

/// Single-precision table for training.
pub fn init_embeddings(
    spec: &ModelSpec,
    n_entities: usize,
    n_relations: usize,
    seed: u64,
) -> Result<EmbeddingTable<f32>> {
    init_table(spec, n_entities, n_relations, seed)
}

/// Deterministic initialization in any precision. Draws are made in `f64`
/// in a fixed order (entities, relations, shared) so both precisions agree.
pub fn init_table<S: Real>(
    spec: &ModelSpec,
    n_entities: usize,
    n_relations: usize,
    seed: u64,
) -> Result<EmbeddingTable<S>> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 6.0 / (spec.entity_dim as f64).sqrt();
    let mut table = EmbeddingTable::<S>::zeros(
        n_entities,
        n_relations,
        layout.entity_width,
        layout.relation_width,
        layout.shared_len,
    );
    let d = spec.entity_dim;
    let mut row = vec![0.0f64; layout.entity_width];
    for e in 0..n_entities {
        match spec.family {
            Family::Hake => {
                fill_uniform(&mut rng, &mut row[..d], bound);
                fill_angles(&mut rng, &mut row[d..]);
            }
            _ => fill_uniform(&mut rng, &mut row, bound),
        }
        store(table.entity_mut(e), &row);
    }
    let mut row = vec![0.0f64; layout.relation_width];
    for r in 0..n_relations {
        init_relation(spec, &mut rng, bound, &mut row);
        store(table.relation_mut(r), &row);
    }
    let mut shared = vec![0.0f64; layout.shared_len];
    fill_uniform(&mut rng, &mut shared, TUCKER_CORE_NOISE);
    store(table.shared_mut(), &shared);
    Ok(table)
}

fn init_relation(spec: &ModelSpec, rng: &mut ChaCha8Rng, bound: f64, row: &mut [f64]) {
    let d = spec.entity_dim;
    let k = spec.relation_dim;
    match spec.family {
        Family::TransR => {
            let (r, m) = row.split_at_mut(k);
            fill_uniform(rng, r, 6.0 / (k as f64).sqrt());
            // rectangular identity, so training starts from TransE
            m.fill(0.0);
            for i in 0..k.min(d) {
                m[i * d + i] = 1.0;
            }
        }
        Family::TransD | Family::TuckER => fill_uniform(rng, row, 6.0 / (k as f64).sqrt()),
        Family::TransM => {
            fill_uniform(rng, &mut row[..d], bound);
            row[d] = 1.0;
        }
        Family::RotatE => fill_angles(rng, row),
        Family::Hake => {
            fill_uniform(rng, &mut row[..d], bound);
            row[d..2 * d].fill(0.0);
            fill_angles(rng, &mut row[2 * d..]);
        }
        Family::CompoundE | Family::CompoundE3D => {
            let layout = spec.compound_layout().expect("validated compound spec");
            let per = layout.params_per_block();
            let offsets = layout.offsets();
            for block in row.chunks_mut(per) {
                for &(kind, at) in &offsets {
                    let width = kind.param_count(layout.block_dim()).unwrap();
                    let p = &mut block[at..at + width];
                    match kind {
                        OperatorKind::Translation | OperatorKind::Shear => p.fill(0.0),
                        OperatorKind::Scaling => p.fill(1.0),
                        OperatorKind::Rotation => fill_angles(rng, p),
                        OperatorKind::Reflection => fill_unit(rng, p),
                    }
                }
            }
        }
        _ => fill_uniform(rng, row, bound),
    }
}

fn fill_uniform(rng: &mut ChaCha8Rng, out: &mut [f64], bound: f64) {
    for x in out {
        *x = rng.gen_range(-bound..=bound);
    }
}

/// Uniform in `(-π, π]`.
fn fill_angles(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for x in out {
        let u: f64 = rng.gen();
        *x = PI - 2.0 * PI * u;
    }
}

fn fill_unit(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        fill_uniform(rng, out, 1.0);
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            out.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

fn store<S: Real>(dst: &mut [S], src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = S::from_f64(s);
    }
}
