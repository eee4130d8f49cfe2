//! Embedding tables and scoring functions.
//!
//! Every family reports scores with one orientation: higher is better.
//! Distance-style families return the negated distance, product-style
//! families return the raw product.
//!
//! Scoring is split in two steps. [`Model::prepare`] turns one relation row
//! into the form the kernels consume (compound operators as matrices, unit
//! quaternions, rotation cosines and sines). The kernels then score or
//! differentiate `(h, t)` pairs against that prepared form, and
//! [`Model::finish_relation`] maps gradients back onto the raw relation row.
//! Training and evaluation reuse one preparation for every candidate sharing
//! a relation.

mod init;
mod kernels;
mod spec;
mod table;

pub use init::{init_embeddings, init_table};
pub use spec::{CompoundVariant, Family, ModelSpec, ParamLayout};
pub use table::{EmbeddingTable, Real};

use std::borrow::Cow;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::geometry::{CompoundLayout, FactorChain};
use crate::graph::Triple;

/// HAKE clamps the modulus bias into `(-1 + ε, 1 - ε)`.
pub const HAKE_BIAS_EPS: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("{kind} id {id} out of range (size {size})")]
    OutOfRange {
        kind: &'static str,
        id: usize,
        size: usize,
    },
    #[error("non-finite score for triple {0}: embedding table is corrupt")]
    Corrupt(Triple),
    #[error("table layout does not match the model spec: {0}")]
    Layout(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// A relation row in the form the scoring kernels consume.
#[derive(Debug, Clone, Default)]
pub struct Prepared {
    pub(crate) data: Vec<f64>,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Gradient accumulators for one `(h, t)` pair against a prepared relation.
#[derive(Debug, Clone, Default)]
pub struct PairGrad {
    pub head: Vec<f64>,
    pub tail: Vec<f64>,
    /// Gradient with respect to the prepared relation form.
    pub prepared: Vec<f64>,
    /// Gradient with respect to the shared parameter block (TuckER core).
    pub shared: Vec<f64>,
}

impl PairGrad {
    pub fn zeroed(model: &Model) -> Self {
        let mut g = Self::default();
        g.reset(model);
        g
    }

    pub fn reset(&mut self, model: &Model) {
        let layout = model.layout();
        reset_vec(&mut self.head, layout.entity_width);
        reset_vec(&mut self.tail, layout.entity_width);
        reset_vec(&mut self.prepared, model.prepared_len());
        reset_vec(&mut self.shared, layout.shared_len);
    }
}

fn reset_vec(v: &mut Vec<f64>, len: usize) {
    v.clear();
    v.resize(len, 0.0);
}

/// Dense gradient slices keyed by the parameter rows they touch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGrads {
    pub entities: BTreeMap<usize, Vec<f64>>,
    pub relations: BTreeMap<usize, Vec<f64>>,
    pub shared: Option<Vec<f64>>,
}

impl SparseGrads {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.relations.is_empty() && self.shared.is_none()
    }

    pub fn add_entity(&mut self, id: usize, g: &[f64]) {
        add_into(self.entities.entry(id).or_insert_with(|| vec![0.0; g.len()]), g);
    }

    pub fn add_relation(&mut self, id: usize, g: &[f64]) {
        add_into(self.relations.entry(id).or_insert_with(|| vec![0.0; g.len()]), g);
    }

    pub fn add_shared(&mut self, g: &[f64]) {
        if g.is_empty() {
            return;
        }
        add_into(self.shared.get_or_insert_with(|| vec![0.0; g.len()]), g);
    }

    /// Merge `other` into `self`, summing overlapping slices.
    pub fn merge(&mut self, other: &SparseGrads) {
        for (&id, g) in &other.entities {
            self.add_entity(id, g);
        }
        for (&id, g) in &other.relations {
            self.add_relation(id, g);
        }
        if let Some(g) = &other.shared {
            self.add_shared(g);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entities
            .values()
            .chain(self.relations.values())
            .chain(self.shared.iter())
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// A validated [`ModelSpec`] ready to score.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    layout: ParamLayout,
    compound: Option<CompoundLayout>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let compound = spec.compound_layout();
        Ok(Self {
            spec,
            layout,
            compound,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub(crate) fn compound_layout(&self) -> Option<&CompoundLayout> {
        self.compound.as_ref()
    }

    /// Check that `table` was built for this model.
    pub fn check_table<S: Real>(&self, table: &EmbeddingTable<S>) -> Result<()> {
        let l = self.layout;
        if table.entity_width() != l.entity_width
            || table.relation_width() != l.relation_width
            || table.shared().len() != l.shared_len
        {
            return Err(ModelError::Layout(format!(
                "expected widths entity={} relation={} shared={}, table has {}/{}/{}",
                l.entity_width,
                l.relation_width,
                l.shared_len,
                table.entity_width(),
                table.relation_width(),
                table.shared().len()
            )));
        }
        Ok(())
    }

    fn check_triple<S: Real>(&self, table: &EmbeddingTable<S>, t: &Triple) -> Result<()> {
        let ne = table.n_entities();
        let nr = table.n_relations();
        for (kind, id, size) in [
            ("entity", t.head, ne),
            ("relation", t.relation, nr),
            ("entity", t.tail, ne),
        ] {
            if id >= size {
                return Err(ModelError::OutOfRange { kind, id, size });
            }
        }
        Ok(())
    }

    /// Score one triple.
    pub fn score<S: Real>(&self, table: &EmbeddingTable<S>, triple: Triple) -> Result<f64> {
        self.check_triple(table, &triple)?;
        let prep = self.prepare(table.relation(triple.relation));
        let shared = table.shared_f64();
        let h = to_f64(table.entity(triple.head));
        let t = to_f64(table.entity(triple.tail));
        let s = self.score_prepared(&prep, &h, &t, &shared);
        if s.is_finite() {
            Ok(s)
        } else {
            Err(ModelError::Corrupt(triple))
        }
    }

    /// `upstream · ∂score/∂θ` for every parameter the triple touches.
    pub fn grad<S: Real>(
        &self,
        table: &EmbeddingTable<S>,
        triple: Triple,
        upstream: f64,
    ) -> Result<SparseGrads> {
        self.check_triple(table, &triple)?;
        let rel = table.relation(triple.relation);
        let prep = self.prepare(rel);
        let shared = table.shared_f64();
        let h = to_f64(table.entity(triple.head));
        let t = to_f64(table.entity(triple.tail));
        let mut pg = PairGrad::zeroed(self);
        let s = self.grad_prepared(&prep, &h, &t, &shared, upstream, &mut pg);
        if !s.is_finite() {
            return Err(ModelError::Corrupt(triple));
        }
        let mut gr = vec![0.0; self.layout.relation_width];
        self.finish_relation(rel, &prep, &pg.prepared, &mut gr);
        let mut out = SparseGrads::default();
        out.add_entity(triple.head, &pg.head);
        out.add_entity(triple.tail, &pg.tail);
        out.add_relation(triple.relation, &gr);
        out.add_shared(&pg.shared);
        Ok(out)
    }

    /// Length of the prepared relation form.
    pub fn prepared_len(&self) -> usize {
        kernels::prepared_len(self)
    }

    pub fn prepare<S: Real>(&self, relation: &[S]) -> Prepared {
        let row = to_f64(relation);
        let mut chain = FactorChain::new(2);
        kernels::prepare(self, &row, &mut chain)
    }

    pub fn score_prepared(&self, prep: &Prepared, h: &[f64], t: &[f64], shared: &[f64]) -> f64 {
        kernels::score(self, &prep.data, h, t, shared)
    }

    /// Accumulate `upstream · ∂score` into `grad` and return the score.
    pub fn grad_prepared(
        &self,
        prep: &Prepared,
        h: &[f64],
        t: &[f64],
        shared: &[f64],
        upstream: f64,
        grad: &mut PairGrad,
    ) -> f64 {
        kernels::grad(self, &prep.data, h, t, shared, upstream, grad)
    }

    /// Map a gradient on the prepared form back onto the raw relation row,
    /// accumulating into `out`.
    pub fn finish_relation<S: Real>(
        &self,
        relation: &[S],
        prep: &Prepared,
        prepared_grad: &[f64],
        out: &mut [f64],
    ) {
        let row = to_f64(relation);
        kernels::finish(self, &row, &prep.data, prepared_grad, out);
    }
}

pub(crate) fn to_f64<S: Real>(row: &[S]) -> Cow<'_, [f64]> {
    S::slice_to_f64(row)
}
