//! Elementary factors of a compound operator together with their parameter
//! derivatives, so a block's compound can be differentiated by the chain
//! rule without materializing per-parameter products.

use super::operator::{identity_mat, matmul, Mat4, OperatorMatrix, ZERO};
use super::{Group, ShearForm};

const MAX_PARTIALS: usize = 6;

/// One elementary matrix `F(θ)` and `∂F/∂θ_k` for each parameter it reads.
#[derive(Clone, Copy)]
pub struct Factor {
    matrix: Mat4,
    group: Group,
    partials: [(usize, Mat4); MAX_PARTIALS],
    n_partials: usize,
}

impl Factor {
    fn new(matrix: Mat4, group: Group) -> Self {
        Self {
            matrix,
            group,
            partials: [(0, ZERO); MAX_PARTIALS],
            n_partials: 0,
        }
    }

    fn with(mut self, param: usize, partial: Mat4) -> Self {
        self.partials[self.n_partials] = (param, partial);
        self.n_partials += 1;
        self
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.matrix
    }

    pub fn partials(&self) -> &[(usize, Mat4)] {
        &self.partials[..self.n_partials]
    }
}

fn unit(i: usize, j: usize) -> Mat4 {
    let mut m = ZERO;
    m[i][j] = 1.0;
    m
}

/// An ordered product of factors acting on one `dim`-sized block.
///
/// Reusable: `clear` keeps the allocation.
#[derive(Clone)]
pub struct FactorChain {
    dim: usize,
    factors: Vec<Factor>,
}

impl FactorChain {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            factors: Vec::with_capacity(9),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clear(&mut self, dim: usize) {
        self.dim = dim;
        self.factors.clear();
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn push_translation(&mut self, offset: usize, v: &[f64]) {
        let n = self.dim;
        let mut m = identity_mat(n + 1);
        let mut f = Factor::new(ZERO, Group::SE);
        for (i, &vi) in v.iter().enumerate() {
            m[i][n] = vi;
            f = f.with(offset + i, unit(i, n));
        }
        f.matrix = m;
        self.factors.push(f);
    }

    pub fn push_scaling(&mut self, offset: usize, s: &[f64]) {
        let n = self.dim;
        let mut m = identity_mat(n + 1);
        let mut f = Factor::new(ZERO, Group::Aff);
        for (i, &si) in s.iter().enumerate() {
            m[i][i] = si;
            f = f.with(offset + i, unit(i, i));
        }
        f.matrix = m;
        self.factors.push(f);
    }

    /// Planar rotation acting on axes `(a, b)`: `[[c, -s], [s, c]]` in that plane.
    fn push_plane_rotation(&mut self, offset: usize, angle: f64, a: usize, b: usize, group: Group) {
        let n = self.dim;
        let (s, c) = angle.sin_cos();
        let mut m = identity_mat(n + 1);
        m[a][a] = c;
        m[a][b] = -s;
        m[b][a] = s;
        m[b][b] = c;
        let mut d = ZERO;
        d[a][a] = -s;
        d[a][b] = -c;
        d[b][a] = c;
        d[b][b] = -s;
        self.factors.push(Factor::new(m, group).with(offset, d));
    }

    pub fn push_rotation_2d(&mut self, offset: usize, theta: f64) {
        self.push_plane_rotation(offset, theta, 0, 1, Group::SE);
    }

    /// Yaw, pitch, roll as three factors.
    pub fn push_rotation_3d(&mut self, offset: usize, angles: &[f64]) {
        self.push_plane_rotation(offset, angles[0], 0, 1, Group::SO);
        // pitch keeps +sin above the diagonal: plane (z, x)
        self.push_plane_rotation(offset + 1, angles[1], 2, 0, Group::SO);
        self.push_plane_rotation(offset + 2, angles[2], 1, 2, Group::SO);
    }

    /// Householder reflection about the plane normal to `u / |u|`.
    pub fn push_reflection(&mut self, offset: usize, u: &[f64]) {
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let n = [u[0] / norm, u[1] / norm, u[2] / norm];
        let mut m = identity_mat(4);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] -= 2.0 * n[i] * n[j];
            }
        }
        let mut f = Factor::new(m, Group::Aff);
        for k in 0..3 {
            // ∂n/∂u_k = (e_k - n n_k) / |u|
            let mut dn = [0.0; 3];
            for (i, dni) in dn.iter_mut().enumerate() {
                let e = if i == k { 1.0 } else { 0.0 };
                *dni = (e - n[i] * n[k]) / norm;
            }
            let mut d = ZERO;
            for i in 0..3 {
                for j in 0..3 {
                    d[i][j] = -2.0 * (dn[i] * n[j] + n[i] * dn[j]);
                }
            }
            f = f.with(offset + k, d);
        }
        self.factors.push(f);
    }

    /// Shear with coefficients ordered
    /// `(x_by_y, x_by_z, y_by_x, y_by_z, z_by_x, z_by_y)`.
    pub fn push_shear(&mut self, offset: usize, c: &[f64], form: ShearForm) {
        // (row, col, parameter index)
        let mut push = |entries: &[(usize, usize, usize)]| {
            let mut m = identity_mat(4);
            let mut f = Factor::new(ZERO, Group::Aff);
            for &(i, j, p) in entries {
                m[i][j] = c[p];
                f = f.with(offset + p, unit(i, j));
            }
            f.matrix = m;
            self.factors.push(f);
        };
        match form {
            ShearForm::Product => {
                push(&[(1, 0, 2), (2, 0, 4)]);
                push(&[(0, 1, 0), (2, 1, 5)]);
                push(&[(0, 2, 1), (1, 2, 3)]);
            }
            ShearForm::Displayed => {
                push(&[(0, 1, 0), (0, 2, 1), (1, 0, 2), (1, 2, 3), (2, 0, 4), (2, 1, 5)]);
            }
        }
    }

    /// The compound operator, product of all factors left to right.
    pub fn operator(&self) -> OperatorMatrix {
        let size = self.dim + 1;
        let mut m = identity_mat(size);
        let mut group = Group::SO;
        for f in &self.factors {
            m = matmul(&m, &f.matrix, size);
            group = group.max(f.group);
        }
        OperatorMatrix::from_mat(self.dim, m, group)
    }

    /// Each factor as a standalone operator.
    pub fn operators(&self) -> Vec<OperatorMatrix> {
        self.factors
            .iter()
            .map(|f| OperatorMatrix::from_mat(self.dim, f.matrix, f.group))
            .collect()
    }

    /// Accumulate `∂(gᵀ y)/∂θ` into `dparams` and `∂(gᵀ y)/∂x` into `dx`,
    /// where `y` is the Cartesian image of `x` under the compound.
    pub fn vjp(&self, x: &[f64], upstream: &[f64], dparams: &mut [f64], dx: &mut [f64]) {
        let n = self.dim;
        let size = n + 1;
        let k = self.factors.len();
        // z[i] = F_i F_{i+1} ... F_{k-1} x̃
        let mut stack = [[0.0f64; 4]; 16];
        let mut heap;
        let zs: &mut [[f64; 4]] = if k < stack.len() {
            &mut stack[..=k]
        } else {
            heap = vec![[0.0f64; 4]; k + 1];
            &mut heap
        };
        zs[k][..n].copy_from_slice(x);
        zs[k][n] = 1.0;
        for i in (0..k).rev() {
            let m = &self.factors[i].matrix;
            let mut z = [0.0; 4];
            for (r, zr) in z.iter_mut().enumerate().take(size) {
                *zr = (0..size).map(|c| m[r][c] * zs[i + 1][c]).sum();
            }
            zs[i] = z;
        }
        let mut b = [0.0f64; 4];
        b[..n].copy_from_slice(upstream);
        for (i, f) in self.factors.iter().enumerate() {
            let z = &zs[i + 1];
            for (p, d) in f.partials() {
                let mut acc = 0.0;
                for r in 0..size {
                    if b[r] == 0.0 {
                        continue;
                    }
                    let dz: f64 = (0..size).map(|c| d[r][c] * z[c]).sum();
                    acc += b[r] * dz;
                }
                dparams[*p] += acc;
            }
            let m = &f.matrix;
            let mut nb = [0.0; 4];
            for (c, nbc) in nb.iter_mut().enumerate().take(size) {
                *nbc = (0..size).map(|r| m[r][c] * b[r]).sum();
            }
            b = nb;
        }
        for j in 0..n {
            dx[j] += b[j];
        }
    }

    /// Accumulate `∂⟨G, O⟩/∂θ` into `dparams`, where `O` is the compound's
    /// homogeneous matrix and `G` a gradient with respect to its entries.
    pub fn vjp_matrix(&self, g: &Mat4, dparams: &mut [f64]) {
        let size = self.dim + 1;
        let k = self.factors.len();
        // q[i] = F_i ... F_{k-1}
        let mut q = vec![identity_mat(size); k + 1];
        for i in (0..k).rev() {
            q[i] = matmul(&self.factors[i].matrix, &q[i + 1], size);
        }
        // b = (F_0 ... F_{i-1})ᵀ G
        let mut b = *g;
        for (i, f) in self.factors.iter().enumerate() {
            let qn = &q[i + 1];
            // c = b · q[i+1]ᵀ
            let mut c = ZERO;
            for r in 0..size {
                for s in 0..size {
                    c[r][s] = (0..size).map(|t| b[r][t] * qn[s][t]).sum();
                }
            }
            for (p, d) in f.partials() {
                let mut acc = 0.0;
                for r in 0..size {
                    for s in 0..size {
                        acc += c[r][s] * d[r][s];
                    }
                }
                dparams[*p] += acc;
            }
            let m = &f.matrix;
            let mut nb = ZERO;
            for r in 0..size {
                for s in 0..size {
                    nb[r][s] = (0..size).map(|t| m[t][r] * b[t][s]).sum();
                }
            }
            b = nb;
        }
    }
}
