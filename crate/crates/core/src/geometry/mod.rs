//! 2D and 3D affine operators in homogeneous form, their composition and
//! inversion, and block-diagonal application to long entity vectors.
//!
//! Elementary operators:
//!
//! | kind | 2D params | 3D params | group |
//! |------|-----------|-----------|-------|
//! | translation `T` | `v_x, v_y` | `v_x, v_y, v_z` | SE |
//! | scaling `S` | `s_x, s_y` | `s_x, s_y, s_z` | Aff |
//! | rotation `R` | `θ` | yaw `α`, pitch `β`, roll `γ` | SE (2D), SO (3D) |
//! | reflection `F` | - | unit normal `n` | Aff (det = -1) |
//! | shear `H` | - | six coefficients | Aff |

mod compound;
mod factors;
mod operator;

pub use compound::{
    apply_block_diagonal, apply_block_operators, CompoundLayout, CompoundParams, ShearForm, Space,
};
pub use factors::{Factor, FactorChain};
pub use operator::{compose, invert, Group, Mat4, OperatorMatrix};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use operator::identity_mat;

/// `|det|` of a linear block at or below this is treated as singular.
pub const SINGULARITY_THRESHOLD: f64 = 1e-12;

/// Allowed deviation of a reflection normal from unit length.
pub const UNIT_NORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("operator dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot compose an empty operator list")]
    Empty,
    #[error("singular operator: |det A| = {det:e} (product of the scale factors) is below 1e-12")]
    Singular { det: f64 },
    #[error("reflection normal must be unit length, got norm {norm}")]
    NonUnitNormal { norm: f64 },
    #[error("operator {kind} is not defined in {dim}D")]
    Unsupported { kind: OperatorKind, dim: usize },
    #[error("{0}")]
    Shape(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// Elementary transformation kinds, written with their conventional letters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    #[serde(rename = "T")]
    Translation,
    #[serde(rename = "S")]
    Scaling,
    #[serde(rename = "R")]
    Rotation,
    #[serde(rename = "F")]
    Reflection,
    #[serde(rename = "H")]
    Shear,
}

impl OperatorKind {
    pub fn letter(self) -> char {
        match self {
            OperatorKind::Translation => 'T',
            OperatorKind::Scaling => 'S',
            OperatorKind::Rotation => 'R',
            OperatorKind::Reflection => 'F',
            OperatorKind::Shear => 'H',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Some(match c.to_ascii_uppercase() {
            'T' => OperatorKind::Translation,
            'S' => OperatorKind::Scaling,
            'R' => OperatorKind::Rotation,
            'F' => OperatorKind::Reflection,
            'H' => OperatorKind::Shear,
            _ => return None,
        })
    }

    pub(crate) fn code(self) -> u8 {
        self.letter() as u8
    }

    /// Number of scalar parameters this kind consumes in `dim` dimensions.
    pub fn param_count(self, dim: usize) -> Option<usize> {
        match (self, dim) {
            (OperatorKind::Translation | OperatorKind::Scaling, 2) => Some(2),
            (OperatorKind::Rotation, 2) => Some(1),
            (OperatorKind::Translation | OperatorKind::Scaling, 3) => Some(3),
            (OperatorKind::Rotation | OperatorKind::Reflection, 3) => Some(3),
            (OperatorKind::Shear, 3) => Some(6),
            _ => None,
        }
    }
}

impl std::fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op2d {
    Translation { vx: f64, vy: f64 },
    Rotation { theta: f64 },
    Scaling { sx: f64, sy: f64 },
}

/// Shear coefficients. `x_by_y` is the amount of `y` added to `x`, i.e. the
/// `(x, y)` entry of the combined matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShearCoeffs {
    pub x_by_y: f64,
    pub x_by_z: f64,
    pub y_by_x: f64,
    pub y_by_z: f64,
    pub z_by_x: f64,
    pub z_by_y: f64,
}

impl ShearCoeffs {
    /// Parameter order used in flat parameter vectors.
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            x_by_y: p[0],
            x_by_z: p[1],
            y_by_x: p[2],
            y_by_z: p[3],
            z_by_x: p[4],
            z_by_y: p[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.x_by_y,
            self.x_by_z,
            self.y_by_x,
            self.y_by_z,
            self.z_by_x,
            self.z_by_y,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op3d {
    Translation([f64; 3]),
    Scaling([f64; 3]),
    /// `R_z(yaw) · R_y(pitch) · R_x(roll)`.
    Rotation { yaw: f64, pitch: f64, roll: f64 },
    /// Householder reflection `I - 2nnᵀ`; `n` must be unit length.
    Reflection([f64; 3]),
    Shear { coeffs: ShearCoeffs, form: ShearForm },
}

pub fn make_operator_2d(op: Op2d) -> OperatorMatrix {
    match op {
        Op2d::Translation { vx, vy } => translation(&[vx, vy]),
        Op2d::Rotation { theta } => rotation_2d(theta),
        Op2d::Scaling { sx, sy } => scaling(&[sx, sy]),
    }
}

pub fn make_operator_3d(op: Op3d) -> Result<OperatorMatrix> {
    Ok(match op {
        Op3d::Translation(v) => translation(&v),
        Op3d::Scaling(s) => scaling(&s),
        Op3d::Rotation { yaw, pitch, roll } => rotation_3d(yaw, pitch, roll),
        Op3d::Reflection(n) => {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() > UNIT_NORMAL_TOLERANCE {
                return Err(GeometryError::NonUnitNormal { norm });
            }
            reflection(n)
        }
        Op3d::Shear { coeffs, form } => shear(coeffs, form),
    })
}

/// Translation by `v` (length 2 or 3).
pub fn translation(v: &[f64]) -> OperatorMatrix {
    let n = v.len();
    let mut m = identity_mat(n + 1);
    for (i, &vi) in v.iter().enumerate() {
        m[i][n] = vi;
    }
    OperatorMatrix::from_mat(n, m, Group::SE)
}

/// Axis-aligned scaling by `s` (length 2 or 3).
pub fn scaling(s: &[f64]) -> OperatorMatrix {
    let n = s.len();
    let mut m = identity_mat(n + 1);
    for (i, &si) in s.iter().enumerate() {
        m[i][i] = si;
    }
    OperatorMatrix::from_mat(n, m, Group::Aff)
}

pub fn rotation_2d(theta: f64) -> OperatorMatrix {
    let (s, c) = theta.sin_cos();
    let mut m = identity_mat(3);
    m[0][0] = c;
    m[0][1] = -s;
    m[1][0] = s;
    m[1][1] = c;
    OperatorMatrix::from_mat(2, m, Group::SE)
}

/// Yaw: rotation about the z axis.
pub fn rotation_z(alpha: f64) -> OperatorMatrix {
    let (s, c) = alpha.sin_cos();
    let mut m = identity_mat(4);
    m[0][0] = c;
    m[0][1] = -s;
    m[1][0] = s;
    m[1][1] = c;
    OperatorMatrix::from_mat(3, m, Group::SO)
}

/// Pitch: rotation about the y axis, `[[c, 0, s], [0, 1, 0], [-s, 0, c]]`.
pub fn rotation_y(beta: f64) -> OperatorMatrix {
    let (s, c) = beta.sin_cos();
    let mut m = identity_mat(4);
    m[0][0] = c;
    m[0][2] = s;
    m[2][0] = -s;
    m[2][2] = c;
    OperatorMatrix::from_mat(3, m, Group::SO)
}

/// Roll: rotation about the x axis.
pub fn rotation_x(gamma: f64) -> OperatorMatrix {
    let (s, c) = gamma.sin_cos();
    let mut m = identity_mat(4);
    m[1][1] = c;
    m[1][2] = -s;
    m[2][1] = s;
    m[2][2] = c;
    OperatorMatrix::from_mat(3, m, Group::SO)
}

/// General 3D rotation, built as the product yaw · pitch · roll.
pub fn rotation_3d(yaw: f64, pitch: f64, roll: f64) -> OperatorMatrix {
    let r = rotation_z(yaw)
        .mul(&rotation_y(pitch))
        .and_then(|m| m.mul(&rotation_x(roll)));
    r.expect("3D rotation factors share a dimension")
}

/// Closed-form entries `a..i` of `R_z(α) R_y(β) R_x(γ)`.
pub fn rotation_3d_closed_form(alpha: f64, beta: f64, gamma: f64) -> OperatorMatrix {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let (sg, cg) = gamma.sin_cos();
    let mut m = identity_mat(4);
    m[0][0] = ca * cb;
    m[0][1] = ca * sb * sg - sa * cg;
    m[0][2] = ca * sb * cg + sa * sg;
    m[1][0] = sa * cb;
    m[1][1] = sa * sb * sg + ca * cg;
    m[1][2] = sa * sb * cg - ca * sg;
    m[2][0] = -sb;
    m[2][1] = cb * sg;
    m[2][2] = cb * cg;
    OperatorMatrix::from_mat(3, m, Group::SO)
}

/// `I - 2nnᵀ` for a unit normal (not checked here).
pub fn reflection(n: [f64; 3]) -> OperatorMatrix {
    let mut m = identity_mat(4);
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] -= 2.0 * n[i] * n[j];
        }
    }
    OperatorMatrix::from_mat(3, m, Group::Aff)
}

/// Shears `y` and `z` by multiples of `x`.
pub fn shear_yz(y_by_x: f64, z_by_x: f64) -> OperatorMatrix {
    let mut m = identity_mat(4);
    m[1][0] = y_by_x;
    m[2][0] = z_by_x;
    OperatorMatrix::from_mat(3, m, Group::Aff)
}

/// Shears `x` and `z` by multiples of `y`.
pub fn shear_xz(x_by_y: f64, z_by_y: f64) -> OperatorMatrix {
    let mut m = identity_mat(4);
    m[0][1] = x_by_y;
    m[2][1] = z_by_y;
    OperatorMatrix::from_mat(3, m, Group::Aff)
}

/// Shears `x` and `y` by multiples of `z`.
pub fn shear_xy(x_by_z: f64, y_by_z: f64) -> OperatorMatrix {
    let mut m = identity_mat(4);
    m[0][2] = x_by_z;
    m[1][2] = y_by_z;
    OperatorMatrix::from_mat(3, m, Group::Aff)
}

pub fn shear(c: ShearCoeffs, form: ShearForm) -> OperatorMatrix {
    match form {
        ShearForm::Product => compose(&[
            shear_yz(c.y_by_x, c.z_by_x),
            shear_xz(c.x_by_y, c.z_by_y),
            shear_xy(c.x_by_z, c.y_by_z),
        ])
        .expect("shear factors share a dimension"),
        ShearForm::Displayed => {
            let mut m = identity_mat(4);
            m[0][1] = c.x_by_y;
            m[0][2] = c.x_by_z;
            m[1][0] = c.y_by_x;
            m[1][2] = c.y_by_z;
            m[2][0] = c.z_by_x;
            m[2][1] = c.z_by_y;
            OperatorMatrix::from_mat(3, m, Group::Aff)
        }
    }
}

/// Wrap an angle into `(-π, π]` for reporting.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn assert_rows(op: &OperatorMatrix, want: &[&[f64]], tol: f64) {
        for (i, row) in want.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                let got = op.get(i, j);
                assert!((got - w).abs() <= tol, "({i},{j}): {got} vs {w}\n{op}");
            }
        }
    }

    #[test]
    fn zero_translation_is_identity() {
        let t = make_operator_2d(Op2d::Translation { vx: 0.0, vy: 0.0 });
        assert_eq!(t.max_abs_diff(&OperatorMatrix::identity(2)), 0.0);
        assert_eq!(t.group(), Group::SE);
    }

    #[test]
    fn quarter_turn_2d() {
        let r = make_operator_2d(Op2d::Rotation { theta: FRAC_PI_2 });
        assert_rows(&r, &[&[0.0, -1.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]], 1e-15);
        assert_eq!(r.group(), Group::SE);
    }

    #[test]
    fn scaling_2d_is_diagonal() {
        let s = make_operator_2d(Op2d::Scaling { sx: 2.0, sy: 3.0 });
        assert_rows(&s, &[&[2.0, 0.0, 0.0], &[0.0, 3.0, 0.0], &[0.0, 0.0, 1.0]], 0.0);
        assert_eq!(s.group(), Group::Aff);
    }

    #[test]
    fn zero_angles_give_identity_rotation() {
        let r = make_operator_3d(Op3d::Rotation { yaw: 0.0, pitch: 0.0, roll: 0.0 }).unwrap();
        assert_eq!(r.max_abs_diff(&OperatorMatrix::identity(3)), 0.0);
        assert_eq!(r.group(), Group::SO);
    }

    #[test]
    fn yaw_quarter_turn_matches_closed_form() {
        // a..i with α = π/2, β = γ = 0: a = 0, b = -1, c = 0, d = 1, e = 0, ...
        let r = make_operator_3d(Op3d::Rotation { yaw: FRAC_PI_2, pitch: 0.0, roll: 0.0 }).unwrap();
        assert_rows(
            &r,
            &[&[0.0, -1.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0]],
            1e-15,
        );
    }

    #[test]
    fn axis_reflection() {
        let f = make_operator_3d(Op3d::Reflection([1.0, 0.0, 0.0])).unwrap();
        assert_rows(
            &f,
            &[
                &[-1.0, 0.0, 0.0, 0.0],
                &[0.0, 1.0, 0.0, 0.0],
                &[0.0, 0.0, 1.0, 0.0],
                &[0.0, 0.0, 0.0, 1.0],
            ],
            0.0,
        );
    }

    #[test]
    fn diagonal_reflection() {
        // I - 2nnᵀ with n = (1/√2, 1/√2, 0): off-diagonal -2·½ = -1, diagonal 1 - 1 = 0.
        let f = make_operator_3d(Op3d::Reflection([FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0])).unwrap();
        assert_rows(
            &f,
            &[&[0.0, -1.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]],
            1e-15,
        );
        assert!((f.linear_det() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_unit_normal_rejected() {
        let err = make_operator_3d(Op3d::Reflection([1.0, 1.0, 0.0])).unwrap_err();
        assert!(matches!(err, GeometryError::NonUnitNormal { .. }));
    }

    #[test]
    fn compose_translate_rotate_scale() {
        let op = compose(&[
            make_operator_2d(Op2d::Translation { vx: 1.0, vy: -1.0 }),
            make_operator_2d(Op2d::Rotation { theta: FRAC_PI_2 }),
            make_operator_2d(Op2d::Scaling { sx: 2.0, sy: 3.0 }),
        ])
        .unwrap();
        assert_rows(&op, &[&[0.0, -3.0, 1.0], &[2.0, 0.0, -1.0], &[0.0, 0.0, 1.0]], 1e-15);
        assert_eq!(op.group(), Group::Aff);
    }

    #[test]
    fn translate_then_rotate_stays_se() {
        let op = compose(&[translation(&[0.3, 0.4]), rotation_2d(1.1)]).unwrap();
        assert_eq!(op.group(), Group::SE);
        assert!(op.orthogonality_residual() < 1e-12);
        let id = compose(&[OperatorMatrix::identity(2)]).unwrap();
        assert_eq!(id, OperatorMatrix::identity(2));
    }

    #[test]
    fn inverse_of_diagonal_scaling() {
        let inv = invert(&scaling(&[2.0, 4.0])).unwrap();
        assert_rows(&inv, &[&[0.5, 0.0, 0.0], &[0.0, 0.25, 0.0], &[0.0, 0.0, 1.0]], 0.0);
        let id = invert(&OperatorMatrix::identity(3)).unwrap();
        assert_eq!(id.max_abs_diff(&OperatorMatrix::identity(3)), 0.0);
    }

    #[test]
    fn zero_scale_is_singular() {
        assert!(matches!(
            invert(&scaling(&[0.0, 1.0, 1.0])),
            Err(GeometryError::Singular { .. })
        ));
    }

    #[test]
    fn displayed_shear_has_unit_diagonal_but_product_does_not() {
        let c = ShearCoeffs {
            x_by_y: 0.5,
            y_by_x: 0.4,
            ..Default::default()
        };
        let shown = shear(c, ShearForm::Displayed);
        let prod = shear(c, ShearForm::Product);
        assert_eq!(shown.get(1, 1), 1.0);
        assert!((prod.get(1, 1) - (1.0 + 0.5 * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }
}
