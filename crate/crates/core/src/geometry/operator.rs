use std::fmt;

use super::{GeometryError, Result};

/// Homogeneous matrices are stored padded to 4x4; only the leading
/// `(dim + 1) x (dim + 1)` block is meaningful.
pub type Mat4 = [[f64; 4]; 4];

pub(crate) const ZERO: Mat4 = [[0.0; 4]; 4];

pub(crate) fn identity_mat(size: usize) -> Mat4 {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(size) {
        row[i] = 1.0;
    }
    m
}

pub(crate) fn matmul(a: &Mat4, b: &Mat4, size: usize) -> Mat4 {
    let mut out = ZERO;
    for i in 0..size {
        for j in 0..size {
            let mut acc = 0.0;
            for k in 0..size {
                acc += a[i][k] * b[k][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

/// Group membership claim, ordered from strongest to weakest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    /// Special orthogonal: pure rotation, no translation.
    SO,
    /// Special Euclidean: rotation plus translation.
    SE,
    /// Affine: invertible linear part plus translation.
    Aff,
}

/// A square homogeneous-coordinate operator for 2D (3x3) or 3D (4x4) space.
#[derive(Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    m: Mat4,
    group: Group,
}

impl OperatorMatrix {
    pub fn identity(dim: usize) -> Self {
        assert!(dim == 2 || dim == 3, "operator dimension must be 2 or 3");
        Self {
            dim,
            m: identity_mat(dim + 1),
            group: Group::SO,
        }
    }

    /// Wrap a padded matrix. The last homogeneous row is forced to `[0, .., 0, 1]`.
    pub(crate) fn from_mat(dim: usize, mut m: Mat4, group: Group) -> Self {
        debug_assert!(dim == 2 || dim == 3);
        for j in 0..dim {
            m[dim][j] = 0.0;
        }
        m[dim][dim] = 1.0;
        Self { dim, m, group }
    }

    /// Build from row-major homogeneous rows (`dim + 1` rows of `dim + 1`).
    pub fn from_rows(rows: &[Vec<f64>], group: Group) -> Result<Self> {
        let size = rows.len();
        if !(size == 3 || size == 4) || rows.iter().any(|r| r.len() != size) {
            return Err(GeometryError::Shape(format!(
                "expected a 3x3 or 4x4 matrix, got {} rows",
                size
            )));
        }
        let dim = size - 1;
        let last_ok = (0..dim).all(|j| rows[dim][j] == 0.0) && rows[dim][dim] == 1.0;
        if !last_ok {
            return Err(GeometryError::Shape(
                "last row must be [0, ..., 0, 1]".into(),
            ));
        }
        let mut m = ZERO;
        for (i, row) in rows.iter().enumerate() {
            m[i][..size].copy_from_slice(row);
        }
        Ok(Self { dim, m, group })
    }

    /// Spatial dimension (2 or 3).
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Homogeneous size (`dim + 1`).
    pub fn size(&self) -> usize {
        self.dim + 1
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.m[row][col]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.size())
            .map(|i| self.m[i][..self.size()].to_vec())
            .collect()
    }

    /// Determinant of the upper-left linear block.
    pub fn linear_det(&self) -> f64 {
        let m = &self.m;
        match self.dim {
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                    - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    }

    /// Largest entry of `|AᵀA - I|` over the linear block.
    pub fn orthogonality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let dot: f64 = (0..self.dim).map(|k| self.m[k][i] * self.m[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - want).abs());
            }
        }
        worst
    }

    /// Largest translation magnitude (last column above the diagonal).
    pub fn translation(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.m[i][self.dim]).collect()
    }

    /// Max absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        let size = self.size().max(other.size());
        let mut worst: f64 = 0.0;
        for i in 0..size {
            for j in 0..size {
                worst = worst.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        worst
    }

    /// Homogeneous product `self · other` with the weaker group tag.
    pub fn mul(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(Self {
            dim: self.dim,
            m: matmul(&self.m, &other.m, self.size()),
            group: self.group.max(other.group),
        })
    }

    /// Cartesian application: `out = A x + v`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut acc = self.m[i][n];
            for j in 0..n {
                acc += self.m[i][j] * x[j];
            }
            out[i] = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }
}

impl fmt::Debug for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OperatorMatrix<{:?}>\n{self}", self.group)
    }
}

/// Row-major, six significant digits.
impl fmt::Display for OperatorMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.size() {
            let row: Vec<String> = (0..self.size())
                .map(|j| format!("{:>12}", format_sig(self.m[i][j], 6)))
                .collect();
            writeln!(f, "[{}]", row.join(" "))?;
        }
        Ok(())
    }
}

fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (digits as i32 - 1 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s
    }
}

/// Left-to-right product of `ops`; the tag is the weakest among the inputs.
pub fn compose(ops: &[OperatorMatrix]) -> Result<OperatorMatrix> {
    let (first, rest) = ops.split_first().ok_or(GeometryError::Empty)?;
    rest.iter().try_fold(first.clone(), |acc, op| acc.mul(op))
}

/// `[[A, v], [0, 1]]⁻¹ = [[A⁻¹, -A⁻¹v], [0, 1]]`.
pub fn invert(op: &OperatorMatrix) -> Result<OperatorMatrix> {
    let n = op.dim;
    let det = op.linear_det();
    if det.abs() <= super::SINGULARITY_THRESHOLD {
        return Err(GeometryError::Singular { det });
    }
    let m = &op.m;
    let mut inv = ZERO;
    if n == 2 {
        inv[0][0] = m[1][1] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
        inv[1][1] = m[0][0] / det;
    } else {
        for i in 0..3 {
            for j in 0..3 {
                // adjugate: cofactor of (j, i)
                let (r0, r1) = others(j);
                let (c0, c1) = others(i);
                let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[i][j] = sign * minor / det;
            }
        }
    }
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            acc += inv[i][j] * m[j][n];
        }
        inv[i][n] = -acc;
    }
    Ok(OperatorMatrix::from_mat(n, inv, op.group))
}

fn others(k: usize) -> (usize, usize) {
    match k {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}
