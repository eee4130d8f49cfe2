use std::borrow::Cow;
use std::fmt::Debug;

/// Storage scalar for embedding tables.
pub trait Real: Copy + Default + Debug + PartialEq + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(x: f64) -> Self;
    fn slice_to_f64(s: &[Self]) -> Cow<'_, [f64]>;
}

impl Real for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn slice_to_f64(s: &[Self]) -> Cow<'_, [f64]> {
        Cow::Owned(s.iter().map(|&x| x as f64).collect())
    }
}

impl Real for f64 {
    fn to_f64(self) -> f64 {
        self
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn slice_to_f64(s: &[Self]) -> Cow<'_, [f64]> {
        Cow::Borrowed(s)
    }
}

/// Row-major entity and relation parameters plus an optional shared block.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<S: Real = f32> {
    n_entities: usize,
    n_relations: usize,
    entity_width: usize,
    relation_width: usize,
    entities: Vec<S>,
    relations: Vec<S>,
    shared: Vec<S>,
}

impl<S: Real> EmbeddingTable<S> {
    pub fn zeros(
        n_entities: usize,
        n_relations: usize,
        entity_width: usize,
        relation_width: usize,
        shared_len: usize,
    ) -> Self {
        Self {
            n_entities,
            n_relations,
            entity_width,
            relation_width,
            entities: vec![S::default(); n_entities * entity_width],
            relations: vec![S::default(); n_relations * relation_width],
            shared: vec![S::default(); shared_len],
        }
    }

    /// Build from flat arrays; `None` if the lengths disagree.
    pub fn from_parts(
        n_entities: usize,
        n_relations: usize,
        entity_width: usize,
        relation_width: usize,
        entities: Vec<S>,
        relations: Vec<S>,
        shared: Vec<S>,
    ) -> Option<Self> {
        if entities.len() != n_entities * entity_width
            || relations.len() != n_relations * relation_width
        {
            return None;
        }
        Some(Self {
            n_entities,
            n_relations,
            entity_width,
            relation_width,
            entities,
            relations,
            shared,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn entity_width(&self) -> usize {
        self.entity_width
    }

    pub fn relation_width(&self) -> usize {
        self.relation_width
    }

    pub fn entity(&self, id: usize) -> &[S] {
        &self.entities[id * self.entity_width..(id + 1) * self.entity_width]
    }

    pub fn entity_mut(&mut self, id: usize) -> &mut [S] {
        &mut self.entities[id * self.entity_width..(id + 1) * self.entity_width]
    }

    pub fn relation(&self, id: usize) -> &[S] {
        &self.relations[id * self.relation_width..(id + 1) * self.relation_width]
    }

    pub fn relation_mut(&mut self, id: usize) -> &mut [S] {
        &mut self.relations[id * self.relation_width..(id + 1) * self.relation_width]
    }

    pub fn shared(&self) -> &[S] {
        &self.shared
    }

    pub fn shared_mut(&mut self) -> &mut [S] {
        &mut self.shared
    }

    pub fn entities(&self) -> &[S] {
        &self.entities
    }

    pub fn relations(&self) -> &[S] {
        &self.relations
    }

    pub fn entities_mut(&mut self) -> &mut [S] {
        &mut self.entities
    }

    pub fn relations_mut(&mut self) -> &mut [S] {
        &mut self.relations
    }

    pub fn shared_f64(&self) -> Cow<'_, [f64]> {
        S::slice_to_f64(&self.shared)
    }

    pub fn all_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .chain(&self.shared)
            .all(|x| x.to_f64().is_finite())
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.entities.len() + self.relations.len() + self.shared.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy into another precision.
    pub fn cast<T: Real>(&self) -> EmbeddingTable<T> {
        let conv = |v: &[S]| v.iter().map(|x| T::from_f64(x.to_f64())).collect();
        EmbeddingTable {
            n_entities: self.n_entities,
            n_relations: self.n_relations,
            entity_width: self.entity_width,
            relation_width: self.relation_width,
            entities: conv(&self.entities),
            relations: conv(&self.relations),
            shared: conv(&self.shared),
        }
    }
}
