use super::config::OptimizerKind;
use crate::models::{EmbeddingTable, SparseGrads};

/// Adagrad's denominator floor.
pub const ADAGRAD_EPS: f64 = 1e-10;

/// Per-coordinate optimizer state, shaped like the table it updates.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adagrad {
        entities: Vec<f32>,
        relations: Vec<f32>,
        shared: Vec<f32>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, table: &EmbeddingTable<f32>) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adagrad => OptimizerState::Adagrad {
                entities: vec![0.0; table.entities().len()],
                relations: vec![0.0; table.relations().len()],
                shared: vec![0.0; table.shared().len()],
            },
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            OptimizerState::Sgd => OptimizerKind::Sgd,
            OptimizerState::Adagrad { .. } => OptimizerKind::Adagrad,
        }
    }

    /// Apply one update to the slices named in `grads`; nothing else moves.
    ///
    /// SGD: `θ ← θ − lr·g`. Adagrad: `acc ← acc + g²`,
    /// `θ ← θ − lr·g / √(acc + ε)`.
    pub fn step(&mut self, table: &mut EmbeddingTable<f32>, grads: &SparseGrads, lr: f64) {
        let ew = table.entity_width();
        let rw = table.relation_width();
        match self {
            OptimizerState::Sgd => {
                for (&id, g) in &grads.entities {
                    sgd(table.entity_mut(id), g, lr);
                }
                for (&id, g) in &grads.relations {
                    sgd(table.relation_mut(id), g, lr);
                }
                if let Some(g) = &grads.shared {
                    sgd(table.shared_mut(), g, lr);
                }
            }
            OptimizerState::Adagrad {
                entities,
                relations,
                shared,
            } => {
                for (&id, g) in &grads.entities {
                    adagrad(table.entity_mut(id), &mut entities[id * ew..(id + 1) * ew], g, lr);
                }
                for (&id, g) in &grads.relations {
                    adagrad(table.relation_mut(id), &mut relations[id * rw..(id + 1) * rw], g, lr);
                }
                if let Some(g) = &grads.shared {
                    adagrad(table.shared_mut(), shared, g, lr);
                }
            }
        }
    }
}

fn sgd(theta: &mut [f32], g: &[f64], lr: f64) {
    for (t, &g) in theta.iter_mut().zip(g) {
        *t = (*t as f64 - lr * g) as f32;
    }
}

fn adagrad(theta: &mut [f32], acc: &mut [f32], g: &[f64], lr: f64) {
    for ((t, a), &g) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
        let sum = *a as f64 + g * g;
        *a = sum as f32;
        *t = (*t as f64 - lr * g / (sum + ADAGRAD_EPS).sqrt()) as f32;
    }
}
