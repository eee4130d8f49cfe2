use serde::{Deserialize, Serialize};

use super::factors::FactorChain;
use super::operator::OperatorMatrix;
use super::{GeometryError, OperatorKind, Result, UNIT_NORMAL_TOLERANCE};

/// Subspace dimension of a compound's blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    Planar,
    Spatial,
}

impl Space {
    pub fn dim(self) -> usize {
        match self {
            Space::Planar => 2,
            Space::Spatial => 3,
        }
    }
}

/// How the three-factor shear is assembled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShearForm {
    /// The literal product `H_yz · H_xz · H_xy` (cross terms on the diagonal).
    #[default]
    Product,
    /// Unit diagonal with the six coefficients placed off-diagonal.
    Displayed,
}

/// Which elementary operators a compound uses, in application order, and how
/// their parameters are laid out within one block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CompoundLayout {
    space: Space,
    order: Vec<OperatorKind>,
    shear_form: ShearForm,
}

impl CompoundLayout {
    pub fn new(space: Space, order: Vec<OperatorKind>, shear_form: ShearForm) -> Result<Self> {
        if order.is_empty() {
            return Err(GeometryError::Empty);
        }
        for &kind in &order {
            if kind.param_count(space.dim()).is_none() {
                return Err(GeometryError::Unsupported {
                    kind,
                    dim: space.dim(),
                });
            }
        }
        Ok(Self {
            space,
            order,
            shear_form,
        })
    }

    /// `T · S · R` in 2D, `T · S · R · F · H` in 3D.
    pub fn default_for(space: Space) -> Self {
        use OperatorKind::*;
        let order = match space {
            Space::Planar => vec![Translation, Scaling, Rotation],
            Space::Spatial => vec![Translation, Scaling, Rotation, Reflection, Shear],
        };
        Self {
            space,
            order,
            shear_form: ShearForm::Product,
        }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn block_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn order(&self) -> &[OperatorKind] {
        &self.order
    }

    pub fn shear_form(&self) -> ShearForm {
        self.shear_form
    }

    pub fn params_per_block(&self) -> usize {
        let dim = self.block_dim();
        self.order
            .iter()
            .map(|k| k.param_count(dim).expect("validated"))
            .sum()
    }

    /// Offsets of each operator's parameters within a block, in order.
    pub fn offsets(&self) -> Vec<(OperatorKind, usize)> {
        let dim = self.block_dim();
        let mut at = 0;
        self.order
            .iter()
            .map(|&k| {
                let here = at;
                at += k.param_count(dim).expect("validated");
                (k, here)
            })
            .collect()
    }

    /// Block parameters at which every operator except reflection is the
    /// identity: zero translation and angles, unit scales, zero shear. The
    /// reflection normal is `e_z`.
    pub fn neutral_block(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.params_per_block());
        for &kind in &self.order {
            match kind {
                OperatorKind::Scaling => out.extend(std::iter::repeat_n(1.0, self.block_dim())),
                OperatorKind::Reflection => out.extend([0.0, 0.0, 1.0]),
                k => out.extend(std::iter::repeat_n(0.0, k.param_count(self.block_dim()).unwrap())),
            }
        }
        out
    }

    /// Fill `chain` with this layout's factors for one block's parameters.
    pub fn build_chain(&self, block: &[f64], chain: &mut FactorChain) {
        debug_assert_eq!(block.len(), self.params_per_block());
        chain.clear(self.block_dim());
        for (kind, at) in self.offsets() {
            let width = kind.param_count(self.block_dim()).unwrap();
            let p = &block[at..at + width];
            match (kind, self.space) {
                (OperatorKind::Translation, _) => chain.push_translation(at, p),
                (OperatorKind::Scaling, _) => chain.push_scaling(at, p),
                (OperatorKind::Rotation, Space::Planar) => chain.push_rotation_2d(at, p[0]),
                (OperatorKind::Rotation, Space::Spatial) => chain.push_rotation_3d(at, p),
                (OperatorKind::Reflection, _) => chain.push_reflection(at, p),
                (OperatorKind::Shear, _) => chain.push_shear(at, p, self.shear_form),
            }
        }
    }

    pub fn block_operator(&self, block: &[f64]) -> OperatorMatrix {
        let mut chain = FactorChain::new(self.block_dim());
        self.build_chain(block, &mut chain);
        chain.operator()
    }
}

/// Per-block operator parameters for a whole relation operator.
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundParams {
    layout: CompoundLayout,
    values: Vec<f64>,
}

impl CompoundParams {
    /// `values` holds blocks back to back. Reflection normals must be unit.
    pub fn new(layout: CompoundLayout, values: Vec<f64>) -> Result<Self> {
        let per = layout.params_per_block();
        if values.is_empty() || !values.len().is_multiple_of(per) {
            return Err(GeometryError::Shape(format!(
                "parameter count {} is not a positive multiple of {per}",
                values.len()
            )));
        }
        let params = Self { layout, values };
        for b in 0..params.n_blocks() {
            let block = params.block(b);
            for (kind, at) in params.layout.offsets() {
                if kind == OperatorKind::Reflection {
                    let n = &block[at..at + 3];
                    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                    if (norm - 1.0).abs() > UNIT_NORMAL_TOLERANCE {
                        return Err(GeometryError::NonUnitNormal { norm });
                    }
                }
            }
        }
        Ok(params)
    }

    /// `n_blocks` copies of the neutral block.
    pub fn neutral(layout: CompoundLayout, n_blocks: usize) -> Self {
        let values = layout.neutral_block().repeat(n_blocks);
        Self { layout, values }
    }

    pub fn layout(&self) -> &CompoundLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_blocks(&self) -> usize {
        self.values.len() / self.layout.params_per_block()
    }

    pub fn embedding_dim(&self) -> usize {
        self.n_blocks() * self.layout.block_dim()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let per = self.layout.params_per_block();
        &self.values[i * per..(i + 1) * per]
    }

    pub fn operators(&self) -> Vec<OperatorMatrix> {
        (0..self.n_blocks())
            .map(|b| self.layout.block_operator(self.block(b)))
            .collect()
    }
}

/// Apply each block's compound to the matching slice of `v`.
pub fn apply_block_diagonal(params: &CompoundParams, v: &[f64]) -> Result<Vec<f64>> {
    apply_block_operators(&params.operators(), v)
}

/// Apply `ops[i]` to the `i`-th `dim`-slice of `v` in Cartesian form.
pub fn apply_block_operators(ops: &[OperatorMatrix], v: &[f64]) -> Result<Vec<f64>> {
    let dim = ops.first().ok_or(GeometryError::Empty)?.dim();
    if ops.iter().any(|o| o.dim() != dim) || v.len() != ops.len() * dim {
        return Err(GeometryError::DimensionMismatch {
            expected: ops.len() * dim,
            found: v.len(),
        });
    }
    let mut out = vec![0.0; v.len()];
    for ((op, x), y) in ops.iter().zip(v.chunks(dim)).zip(out.chunks_mut(dim)) {
        op.apply_into(x, y);
    }
    Ok(out)
}
