use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::geometry::{CompoundLayout, OperatorKind, ShearForm, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    TransE,
    TransH,
    TransR,
    TransD,
    TransM,
    TransF,
    RotatE,
    PairRE,
    #[serde(rename = "HAKE")]
    Hake,
    CompoundE,
    CompoundE3D,
    #[serde(rename = "RESCAL")]
    Rescal,
    DistMult,
    ComplEx,
    SimplE,
    HolE,
    QuatE,
    TuckER,
}

impl Family {
    pub const ALL: [Family; 18] = [
        Family::TransE,
        Family::TransH,
        Family::TransR,
        Family::TransD,
        Family::TransM,
        Family::TransF,
        Family::RotatE,
        Family::PairRE,
        Family::Hake,
        Family::CompoundE,
        Family::CompoundE3D,
        Family::Rescal,
        Family::DistMult,
        Family::ComplEx,
        Family::SimplE,
        Family::HolE,
        Family::QuatE,
        Family::TuckER,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::TransE => "TransE",
            Family::TransH => "TransH",
            Family::TransR => "TransR",
            Family::TransD => "TransD",
            Family::TransM => "TransM",
            Family::TransF => "TransF",
            Family::RotatE => "RotatE",
            Family::PairRE => "PairRE",
            Family::Hake => "HAKE",
            Family::CompoundE => "CompoundE",
            Family::CompoundE3D => "CompoundE3D",
            Family::Rescal => "RESCAL",
            Family::DistMult => "DistMult",
            Family::ComplEx => "ComplEx",
            Family::SimplE => "SimplE",
            Family::HolE => "HolE",
            Family::QuatE => "QuatE",
            Family::TuckER => "TuckER",
        }
    }

    /// Stable one-byte code used in checkpoints.
    pub fn code(self) -> u8 {
        Family::ALL.iter().position(|&f| f == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Family::ALL.get(code as usize).copied()
    }

    /// Distance families score with a negated distance.
    pub fn is_distance(self) -> bool {
        !matches!(
            self,
            Family::TransF
                | Family::Rescal
                | Family::DistMult
                | Family::ComplEx
                | Family::SimplE
                | Family::HolE
                | Family::QuatE
                | Family::TuckER
        )
    }

    pub fn is_compound(self) -> bool {
        matches!(self, Family::CompoundE | Family::CompoundE3D)
    }

    /// Whether the norm order `p` affects this family's score.
    pub fn uses_norm_order(self) -> bool {
        matches!(
            self,
            Family::TransE
                | Family::TransM
                | Family::RotatE
                | Family::PairRE
                | Family::CompoundE
                | Family::CompoundE3D
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ModelError;

    /// Case-insensitive.
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .iter()
            .copied()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Family::ALL.iter().map(|f| f.name()).collect();
                ModelError::Spec(format!("unknown family {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Which side(s) of a compound triple the operator acts on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompoundVariant {
    /// `‖M_r h − t‖`
    #[default]
    Head,
    /// `‖h − M̂_r t‖`
    Tail,
    /// `‖M_r h − M̂_r t‖`
    Complete,
}

impl CompoundVariant {
    pub fn code(self) -> u8 {
        match self {
            CompoundVariant::Head => 0,
            CompoundVariant::Tail => 1,
            CompoundVariant::Complete => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CompoundVariant::Head),
            1 => Some(CompoundVariant::Tail),
            2 => Some(CompoundVariant::Complete),
            _ => None,
        }
    }

    fn sides(self) -> usize {
        if self == CompoundVariant::Complete {
            2
        } else {
            1
        }
    }
}

impl FromStr for CompoundVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "head" => Ok(CompoundVariant::Head),
            "tail" => Ok(CompoundVariant::Tail),
            "complete" => Ok(CompoundVariant::Complete),
            _ => Err(ModelError::Spec(format!(
                "unknown compound variant {s:?}; expected head, tail or complete"
            ))),
        }
    }
}

/// Everything needed to size and score a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub entity_dim: usize,
    /// Only TransR, TransD and TuckER read this; others use `entity_dim`.
    pub relation_dim: usize,
    /// Norm order for families whose distance is a plain `p`-norm.
    pub p: u8,
    pub variant: CompoundVariant,
    /// Operator kinds in application order; `None` is the family default.
    pub operators: Option<Vec<OperatorKind>>,
    pub shear_form: ShearForm,
    pub hake_lambda: f64,
}

/// Per-row widths of the parameter arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub entity_width: usize,
    pub relation_width: usize,
    pub shared_len: usize,
}

impl ModelSpec {
    pub fn new(family: Family, dim: usize) -> Self {
        Self {
            family,
            entity_dim: dim,
            relation_dim: dim,
            p: 1,
            variant: CompoundVariant::Head,
            operators: None,
            shear_form: ShearForm::Product,
            hake_lambda: 0.5,
        }
    }

    pub fn with_p(mut self, p: u8) -> Self {
        self.p = p;
        self
    }

    pub fn with_relation_dim(mut self, k: usize) -> Self {
        self.relation_dim = k;
        self
    }

    pub fn with_variant(mut self, v: CompoundVariant) -> Self {
        self.variant = v;
        self
    }

    pub fn with_operators(mut self, ops: Vec<OperatorKind>) -> Self {
        self.operators = Some(ops);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.entity_dim;
        let fail = |m: String| Err(ModelError::Spec(m));
        if d == 0 || self.relation_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.p != 1 && self.p != 2 {
            return fail(format!("norm order must be 1 or 2, got {}", self.p));
        }
        if !self.hake_lambda.is_finite() {
            return fail("HAKE λ must be finite".into());
        }
        match self.family {
            Family::RotatE | Family::ComplEx if !d.is_multiple_of(2) => {
                return fail(format!("{} needs an even entity dim, got {d}", self.family))
            }
            Family::QuatE if !d.is_multiple_of(4) => {
                return fail(format!("QuatE needs an entity dim divisible by 4, got {d}"))
            }
            Family::CompoundE if !d.is_multiple_of(2) => {
                return fail(format!("CompoundE needs an entity dim divisible by 2, got {d}"))
            }
            Family::CompoundE3D if !d.is_multiple_of(3) => {
                return fail(format!("CompoundE3D needs an entity dim divisible by 3, got {d}"))
            }
            _ => {}
        }
        if self.operators.is_some() && !self.family.is_compound() {
            return fail(format!("{} does not take an operator list", self.family));
        }
        if self.family.is_compound() {
            let space = self.space().unwrap();
            let order = self
                .operators
                .clone()
                .unwrap_or_else(|| CompoundLayout::default_for(space).order().to_vec());
            CompoundLayout::new(space, order, self.shear_form)
                .map_err(|e| ModelError::Spec(e.to_string()))?;
        }
        Ok(())
    }

    fn space(&self) -> Option<Space> {
        match self.family {
            Family::CompoundE => Some(Space::Planar),
            Family::CompoundE3D => Some(Space::Spatial),
            _ => None,
        }
    }

    /// Block layout for compound families.
    pub fn compound_layout(&self) -> Option<CompoundLayout> {
        let space = self.space()?;
        Some(match &self.operators {
            None => {
                let mut l = CompoundLayout::default_for(space);
                if self.shear_form != l.shear_form() {
                    l = CompoundLayout::new(space, l.order().to_vec(), self.shear_form).ok()?;
                }
                l
            }
            Some(order) => CompoundLayout::new(space, order.clone(), self.shear_form).ok()?,
        })
    }

    /// Number of compound blocks per operator.
    pub fn n_blocks(&self) -> usize {
        self.space().map_or(0, |s| self.entity_dim / s.dim())
    }

    pub fn layout(&self) -> ParamLayout {
        let d = self.entity_dim;
        let k = self.relation_dim;
        let (entity_width, relation_width, shared_len) = match self.family {
            Family::TransE | Family::TransF | Family::DistMult | Family::HolE => (d, d, 0),
            Family::ComplEx | Family::QuatE => (d, d, 0),
            Family::TransH | Family::PairRE => (d, 2 * d, 0),
            Family::TransR => (d, k + k * d, 0),
            Family::TransD => (2 * d, 2 * k, 0),
            Family::TransM => (d, d + 1, 0),
            Family::RotatE => (d, d / 2, 0),
            Family::Hake => (2 * d, 3 * d, 0),
            Family::SimplE => (2 * d, 2 * d, 0),
            Family::Rescal => (d, d * d, 0),
            Family::TuckER => (d, k, d * k * d),
            Family::CompoundE | Family::CompoundE3D => {
                let per = self.compound_layout().map_or(0, |l| l.params_per_block());
                (d, self.n_blocks() * per * self.variant.sides(), 0)
            }
        };
        ParamLayout {
            entity_width,
            relation_width,
            shared_len,
        }
    }
}
