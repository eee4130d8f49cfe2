//! Per-family score and gradient kernels over `f64` rows.
//!
//! Layouts (entity row | relation row):
//!
//! * TransE, TransF, DistMult, HolE: `h` | `r`
//! * TransH: `h` | `[r, w]`, `w` normalized when prepared
//! * TransR: `h` | `[r (k), M (k×d row-major)]`
//! * TransD: `[h, h_p]` | `[r (k), r_p (k)]`
//! * TransM: `h` | `[r, w_r]`
//! * RotatE, ComplEx: interleaved `(re, im)` pairs | RotatE phases, ComplEx pairs
//! * PairRE: `h` | `[r^H, r^T]`
//! * HAKE: `[h_m, h_p]` | `[r_m, r'_m, r_p]`
//! * Compound: `h` | operator block parameters, `M_r` then `M̂_r` for Complete
//! * RESCAL: `h` | `M_r` (d×d row-major)
//! * SimplE: `[h_head, h_tail]` | `[r, r']`
//! * QuatE: quaternions `(a, b, c, d)` back to back in both rows
//! * TuckER: `h` | `r (d_r)`, shared core indexed `[i][j][k]` as `(i·d_r + j)·d_e + k`

use super::{CompoundVariant, Family, Model, PairGrad, HAKE_BIAS_EPS};
use crate::geometry::{FactorChain, Mat4};

/// Matrix entries kept per compound block: the `dim × (dim + 1)` rows `[A | v]`.
fn block_entries(dim: usize) -> usize {
    dim * (dim + 1)
}

fn sides(v: CompoundVariant) -> usize {
    if v == CompoundVariant::Complete {
        2
    } else {
        1
    }
}

pub(super) fn prepared_len(m: &Model) -> usize {
    let spec = m.spec();
    let d = spec.entity_dim;
    match spec.family {
        Family::TransH => 2 * d,
        Family::RotatE | Family::QuatE => d,
        Family::CompoundE | Family::CompoundE3D => {
            let dim = m.compound_layout().unwrap().block_dim();
            sides(spec.variant) * spec.n_blocks() * block_entries(dim)
        }
        _ => m.layout().relation_width,
    }
}

pub(super) fn prepare(m: &Model, row: &[f64], chain: &mut FactorChain) -> super::Prepared {
    let spec = m.spec();
    let d = spec.entity_dim;
    let data = match spec.family {
        Family::TransH => {
            let mut out = row.to_vec();
            let w = &mut out[d..];
            let n = norm2(w);
            if n > 0.0 {
                w.iter_mut().for_each(|x| *x /= n);
            }
            out
        }
        Family::RotatE => row
            .iter()
            .flat_map(|&phi| {
                let (s, c) = phi.sin_cos();
                [c, s]
            })
            .collect(),
        Family::QuatE => {
            let mut out = row.to_vec();
            for q in out.chunks_mut(4) {
                let n = norm2(q);
                if n > 0.0 {
                    q.iter_mut().for_each(|x| *x /= n);
                }
            }
            out
        }
        Family::CompoundE | Family::CompoundE3D => {
            let layout = m.compound_layout().unwrap();
            let dim = layout.block_dim();
            let per = layout.params_per_block();
            let mut out = Vec::with_capacity(prepared_len(m));
            for block in row.chunks(per) {
                layout.build_chain(block, chain);
                let op = chain.operator();
                for i in 0..dim {
                    for j in 0..=dim {
                        out.push(op.get(i, j));
                    }
                }
            }
            out
        }
        _ => row.to_vec(),
    };
    super::Prepared { data }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How a residual vector is turned into a distance.
#[derive(Clone, Copy)]
enum Dist {
    L1,
    L2,
    /// Sum of moduli over interleaved complex pairs.
    ComplexL1,
    SquaredL2,
}

fn dist_kind(m: &Model) -> Dist {
    let spec = m.spec();
    match spec.family {
        Family::TransH | Family::TransR | Family::TransD => Dist::SquaredL2,
        Family::RotatE if spec.p == 1 => Dist::ComplexL1,
        _ if spec.p == 1 => Dist::L1,
        _ => Dist::L2,
    }
}

fn dist(kind: Dist, e: &[f64]) -> f64 {
    match kind {
        Dist::L1 => e.iter().map(|x| x.abs()).sum(),
        Dist::L2 => norm2(e),
        Dist::ComplexL1 => e.chunks_exact(2).map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt()).sum(),
        Dist::SquaredL2 => e.iter().map(|x| x * x).sum(),
    }
}

/// Residual magnitudes at or below this count as sitting on a kink, so
/// round-off at an exact fit does not pick an arbitrary direction.
const KINK: f64 = 1e-12;

/// `ge = scale · ∂dist/∂e`; subgradient 0 at kinks.
fn dist_backward(kind: Dist, e: &[f64], value: f64, scale: f64, ge: &mut [f64]) {
    match kind {
        Dist::L1 => {
            for (g, &x) in ge.iter_mut().zip(e) {
                *g = if x > KINK {
                    scale
                } else if x < -KINK {
                    -scale
                } else {
                    0.0
                };
            }
        }
        Dist::L2 => {
            let k = if value > KINK { scale / value } else { 0.0 };
            for (g, &x) in ge.iter_mut().zip(e) {
                *g = k * x;
            }
        }
        Dist::ComplexL1 => {
            for (g, c) in ge.chunks_exact_mut(2).zip(e.chunks_exact(2)) {
                let r = (c[0] * c[0] + c[1] * c[1]).sqrt();
                let k = if r > KINK { scale / r } else { 0.0 };
                g[0] = k * c[0];
                g[1] = k * c[1];
            }
        }
        Dist::SquaredL2 => {
            for (g, &x) in ge.iter_mut().zip(e) {
                *g = 2.0 * scale * x;
            }
        }
    }
}

fn residual_len(m: &Model) -> usize {
    match m.family() {
        Family::TransR | Family::TransD => m.spec().relation_dim,
        _ => m.spec().entity_dim,
    }
}

/// Residual `e` whose distance is the family's score (negated).
fn residual(m: &Model, r: &[f64], h: &[f64], t: &[f64], e: &mut [f64]) {
    let spec = m.spec();
    let d = spec.entity_dim;
    let k = spec.relation_dim;
    match spec.family {
        Family::TransE | Family::TransM => {
            for i in 0..d {
                e[i] = h[i] + r[i] - t[i];
            }
        }
        Family::TransH => {
            let w = &r[d..];
            let s = (0..d).map(|i| w[i] * (h[i] - t[i])).sum::<f64>();
            for i in 0..d {
                e[i] = h[i] - t[i] - s * w[i] + r[i];
            }
        }
        Family::TransR => {
            let mat = &r[k..];
            for i in 0..k {
                let row = &mat[i * d..(i + 1) * d];
                e[i] = r[i] + (0..d).map(|j| row[j] * (h[j] - t[j])).sum::<f64>();
            }
        }
        Family::TransD => {
            let (hv, hp) = h.split_at(d);
            let (tv, tp) = t.split_at(d);
            let (rv, rp) = r.split_at(k);
            let a = dot(hp, hv) - dot(tp, tv);
            for i in 0..k {
                let id = if i < d { hv[i] - tv[i] } else { 0.0 };
                e[i] = rp[i] * a + id + rv[i];
            }
        }
        Family::RotatE => {
            for ((ec, hc), (rc, tc)) in e
                .chunks_exact_mut(2)
                .zip(h.chunks_exact(2))
                .zip(r.chunks_exact(2).zip(t.chunks_exact(2)))
            {
                let (c, s) = (rc[0], rc[1]);
                ec[0] = hc[0] * c - hc[1] * s - tc[0];
                ec[1] = hc[0] * s + hc[1] * c - tc[1];
            }
        }
        Family::PairRE => {
            let (rh, rt) = r.split_at(d);
            for i in 0..d {
                e[i] = h[i] * rh[i] - t[i] * rt[i];
            }
        }
        Family::CompoundE | Family::CompoundE3D => {
            let dim = m.compound_layout().unwrap().block_dim();
            let nb = spec.n_blocks();
            let stride = block_entries(dim);
            let (head_ops, tail_ops) = match spec.variant {
                CompoundVariant::Head => (Some(r), None),
                CompoundVariant::Tail => (None, Some(r)),
                CompoundVariant::Complete => {
                    let (a, b) = r.split_at(nb * stride);
                    (Some(a), Some(b))
                }
            };
            for b in 0..nb {
                let span = b * dim..(b + 1) * dim;
                let (x, y) = (&h[span.clone()], &t[span.clone()]);
                let out = &mut e[span];
                for i in 0..dim {
                    let lhs = match head_ops {
                        Some(ops) => affine_row(&ops[b * stride..], dim, i, x),
                        None => x[i],
                    };
                    let rhs = match tail_ops {
                        Some(ops) => affine_row(&ops[b * stride..], dim, i, y),
                        None => y[i],
                    };
                    out[i] = lhs - rhs;
                }
            }
        }
        f => unreachable!("{f} has no residual form"),
    }
}

/// Row `i` of `[A | v] · [x; 1]` for one block.
#[inline]
fn affine_row(block: &[f64], dim: usize, i: usize, x: &[f64]) -> f64 {
    let row = &block[i * (dim + 1)..(i + 1) * (dim + 1)];
    let mut acc = row[dim];
    for j in 0..dim {
        acc += row[j] * x[j];
    }
    acc
}

/// Back-propagate `ge = ∂L/∂e` into the pair gradient.
fn residual_backward(m: &Model, r: &[f64], h: &[f64], t: &[f64], ge: &[f64], g: &mut PairGrad) {
    let spec = m.spec();
    let d = spec.entity_dim;
    let k = spec.relation_dim;
    let gp = &mut g.prepared;
    match spec.family {
        Family::TransE | Family::TransM => {
            for i in 0..d {
                g.head[i] += ge[i];
                gp[i] += ge[i];
                g.tail[i] -= ge[i];
            }
        }
        Family::TransH => {
            let w = &r[d..];
            let s = (0..d).map(|i| w[i] * (h[i] - t[i])).sum::<f64>();
            let gw_dot = dot(ge, w);
            for i in 0..d {
                let gu = ge[i] - gw_dot * w[i];
                g.head[i] += gu;
                g.tail[i] -= gu;
                gp[i] += ge[i];
                gp[d + i] += -s * ge[i] - gw_dot * (h[i] - t[i]);
            }
        }
        Family::TransR => {
            let mat = &r[k..];
            for i in 0..k {
                gp[i] += ge[i];
                if ge[i] == 0.0 {
                    continue;
                }
                let row = &mat[i * d..(i + 1) * d];
                let grow = &mut gp[k + i * d..k + (i + 1) * d];
                for j in 0..d {
                    let u = h[j] - t[j];
                    grow[j] += ge[i] * u;
                    g.head[j] += row[j] * ge[i];
                    g.tail[j] -= row[j] * ge[i];
                }
            }
        }
        Family::TransD => {
            let (hv, hp) = h.split_at(d);
            let (tv, tp) = t.split_at(d);
            let rp = &r[k..];
            let a = dot(hp, hv) - dot(tp, tv);
            let gamma = dot(&ge[..k], rp);
            for i in 0..k {
                gp[i] += ge[i];
                gp[k + i] += ge[i] * a;
            }
            for j in 0..d {
                let id = if j < k { ge[j] } else { 0.0 };
                g.head[j] += gamma * hp[j] + id;
                g.head[d + j] += gamma * hv[j];
                g.tail[j] -= gamma * tp[j] + id;
                g.tail[d + j] -= gamma * tv[j];
            }
        }
        Family::RotatE => {
            let heads = g.head.chunks_exact_mut(2).zip(g.tail.chunks_exact_mut(2));
            let rels = gp.chunks_exact_mut(2).zip(r.chunks_exact(2));
            let inputs = h.chunks_exact(2).zip(ge.chunks_exact(2));
            for (((gh, gt), (gr, rc)), (hc, gc)) in heads.zip(rels).zip(inputs) {
                let (c, s) = (rc[0], rc[1]);
                let (ga, gb) = (gc[0], gc[1]);
                gh[0] += ga * c + gb * s;
                gh[1] += -ga * s + gb * c;
                gr[0] += ga * hc[0] + gb * hc[1];
                gr[1] += -ga * hc[1] + gb * hc[0];
                gt[0] -= ga;
                gt[1] -= gb;
            }
        }
        Family::PairRE => {
            let (rh, rt) = r.split_at(d);
            for i in 0..d {
                g.head[i] += ge[i] * rh[i];
                gp[i] += ge[i] * h[i];
                g.tail[i] -= ge[i] * rt[i];
                gp[d + i] -= ge[i] * t[i];
            }
        }
        Family::CompoundE | Family::CompoundE3D => {
            let dim = m.compound_layout().unwrap().block_dim();
            let nb = spec.n_blocks();
            let stride = block_entries(dim);
            let (head_at, tail_at) = match spec.variant {
                CompoundVariant::Head => (Some(0), None),
                CompoundVariant::Tail => (None, Some(0)),
                CompoundVariant::Complete => (Some(0), Some(nb * stride)),
            };
            for b in 0..nb {
                let span = b * dim..(b + 1) * dim;
                let gb = &ge[span.clone()];
                match head_at {
                    Some(at) => {
                        let base = at + b * stride;
                        affine_backward(
                            &r[base..base + stride],
                            &mut gp[base..base + stride],
                            dim,
                            &h[span.clone()],
                            gb,
                            1.0,
                            &mut g.head[span.clone()],
                        );
                    }
                    None => add_scaled(&mut g.head[span.clone()], gb, 1.0),
                }
                match tail_at {
                    Some(at) => {
                        let base = at + b * stride;
                        affine_backward(
                            &r[base..base + stride],
                            &mut gp[base..base + stride],
                            dim,
                            &t[span.clone()],
                            gb,
                            -1.0,
                            &mut g.tail[span.clone()],
                        );
                    }
                    None => add_scaled(&mut g.tail[span.clone()], gb, -1.0),
                }
            }
        }
        f => unreachable!("{f} has no residual form"),
    }
}

fn add_scaled(acc: &mut [f64], g: &[f64], k: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += k * b;
    }
}

/// For `y = A x + v` with upstream `sign · gy`: accumulate into the
/// `[A | v]` gradient and into `gx`.
fn affine_backward(
    block: &[f64],
    gblock: &mut [f64],
    dim: usize,
    x: &[f64],
    gy: &[f64],
    sign: f64,
    gx: &mut [f64],
) {
    for i in 0..dim {
        let gi = sign * gy[i];
        let row = &block[i * (dim + 1)..(i + 1) * (dim + 1)];
        let grow = &mut gblock[i * (dim + 1)..(i + 1) * (dim + 1)];
        for j in 0..dim {
            grow[j] += gi * x[j];
            gx[j] += row[j] * gi;
        }
        grow[dim] += gi;
    }
}

struct HakeParts {
    mult: Vec<f64>,
    em: Vec<f64>,
    dm: f64,
    dp: f64,
}

fn hake_parts(m: &Model, r: &[f64], h: &[f64], t: &[f64]) -> HakeParts {
    let d = m.spec().entity_dim;
    let (rm, rest) = r.split_at(d);
    let (rb, rp) = rest.split_at(d);
    let mut mult = vec![0.0; d];
    let mut em = vec![0.0; d];
    let mut dp = 0.0;
    for i in 0..d {
        let b = clamp_bias(rb[i]);
        mult[i] = (rm[i] + b) / (1.0 - b);
        em[i] = h[i] * mult[i] - t[i];
        dp += ((h[d + i] + rp[i] - t[d + i]) / 2.0).sin().abs();
    }
    let dm = norm2(&em);
    HakeParts { mult, em, dm, dp }
}

fn clamp_bias(b: f64) -> f64 {
    b.clamp(-1.0 + HAKE_BIAS_EPS, 1.0 - HAKE_BIAS_EPS)
}

pub(super) fn score(m: &Model, r: &[f64], h: &[f64], t: &[f64], w: &[f64]) -> f64 {
    let spec = m.spec();
    let d = spec.entity_dim;
    match spec.family {
        Family::TransF => (0..d).map(|i| 2.0 * h[i] * t[i] + r[i] * (t[i] - h[i])).sum(),
        // (h·t)·r keeps score(h,r,t) == score(t,r,h) bit for bit
        Family::DistMult => (0..d).map(|i| h[i] * t[i] * r[i]).sum(),
        Family::ComplEx => h
            .chunks(2)
            .zip(r.chunks(2))
            .zip(t.chunks(2))
            .map(|((h, r), t)| {
                let re = h[0] * r[0] - h[1] * r[1];
                let im = h[0] * r[1] + h[1] * r[0];
                re * t[0] + im * t[1]
            })
            .sum(),
        Family::SimplE => {
            let (hh, ht) = h.split_at(d);
            let (th, tt) = t.split_at(d);
            let (r1, r2) = r.split_at(d);
            0.5 * (0..d)
                .map(|i| hh[i] * r1[i] * tt[i] + th[i] * r2[i] * ht[i])
                .sum::<f64>()
        }
        Family::HolE => (0..d)
            .map(|k| r[k] * (0..d).map(|i| h[i] * t[(i + k) % d]).sum::<f64>())
            .sum(),
        Family::Rescal => (0..d).map(|i| h[i] * dot(&r[i * d..(i + 1) * d], t)).sum(),
        Family::QuatE => h
            .chunks(4)
            .zip(r.chunks(4))
            .zip(t.chunks(4))
            .map(|((h, q), t)| dot(&hamilton(h, q), t))
            .sum(),
        Family::TuckER => {
            let dr = spec.relation_dim;
            let mut acc = 0.0;
            for i in 0..d {
                for j in 0..dr {
                    let c = h[i] * r[j];
                    if c == 0.0 {
                        continue;
                    }
                    let off = (i * dr + j) * d;
                    acc += c * dot(&w[off..off + d], t);
                }
            }
            acc
        }
        Family::Hake => {
            let p = hake_parts(m, r, h, t);
            -(p.dm + spec.hake_lambda * p.dp)
        }
        Family::TransM => {
            let mut e = vec![0.0; d];
            residual(m, r, h, t, &mut e);
            -r[d] * dist(dist_kind(m), &e)
        }
        _ => {
            let mut e = vec![0.0; residual_len(m)];
            residual(m, r, h, t, &mut e);
            -dist(dist_kind(m), &e)
        }
    }
}

fn hamilton(h: &[f64], q: &[f64]) -> [f64; 4] {
    let (a, b, c, d) = (h[0], h[1], h[2], h[3]);
    let (p, qq, u, v) = (q[0], q[1], q[2], q[3]);
    [
        a * p - b * qq - c * u - d * v,
        a * qq + b * p + c * v - d * u,
        a * u - b * v + c * p + d * qq,
        a * v + b * u - c * qq + d * p,
    ]
}

pub(super) fn grad(
    m: &Model,
    r: &[f64],
    h: &[f64],
    t: &[f64],
    w: &[f64],
    up: f64,
    g: &mut PairGrad,
) -> f64 {
    let spec = m.spec();
    let d = spec.entity_dim;
    match spec.family {
        Family::TransF => {
            for i in 0..d {
                g.head[i] += up * (2.0 * t[i] - r[i]);
                g.tail[i] += up * (2.0 * h[i] + r[i]);
                g.prepared[i] += up * (t[i] - h[i]);
            }
            score(m, r, h, t, w)
        }
        Family::DistMult => {
            for i in 0..d {
                g.head[i] += up * r[i] * t[i];
                g.prepared[i] += up * h[i] * t[i];
                g.tail[i] += up * h[i] * r[i];
            }
            score(m, r, h, t, w)
        }
        Family::ComplEx => {
            for i in 0..d / 2 {
                let (a, b) = (h[2 * i], h[2 * i + 1]);
                let (c, dd) = (r[2 * i], r[2 * i + 1]);
                let (e, f) = (t[2 * i], t[2 * i + 1]);
                g.head[2 * i] += up * (c * e + dd * f);
                g.head[2 * i + 1] += up * (-dd * e + c * f);
                g.prepared[2 * i] += up * (a * e + b * f);
                g.prepared[2 * i + 1] += up * (-b * e + a * f);
                g.tail[2 * i] += up * (a * c - b * dd);
                g.tail[2 * i + 1] += up * (a * dd + b * c);
            }
            score(m, r, h, t, w)
        }
        Family::SimplE => {
            let k = 0.5 * up;
            for i in 0..d {
                let (hh, ht) = (h[i], h[d + i]);
                let (th, tt) = (t[i], t[d + i]);
                let (r1, r2) = (r[i], r[d + i]);
                g.head[i] += k * r1 * tt;
                g.tail[d + i] += k * hh * r1;
                g.prepared[i] += k * hh * tt;
                g.tail[i] += k * r2 * ht;
                g.head[d + i] += k * th * r2;
                g.prepared[d + i] += k * th * ht;
            }
            score(m, r, h, t, w)
        }
        Family::HolE => {
            let mut s = 0.0;
            for k in 0..d {
                let mut corr = 0.0;
                for i in 0..d {
                    let j = (i + k) % d;
                    corr += h[i] * t[j];
                    g.head[i] += up * r[k] * t[j];
                    g.tail[j] += up * r[k] * h[i];
                }
                g.prepared[k] += up * corr;
                s += r[k] * corr;
            }
            s
        }
        Family::Rescal => {
            let mut s = 0.0;
            for i in 0..d {
                let row = &r[i * d..(i + 1) * d];
                let mt = dot(row, t);
                s += h[i] * mt;
                g.head[i] += up * mt;
                let grow = &mut g.prepared[i * d..(i + 1) * d];
                for j in 0..d {
                    grow[j] += up * h[i] * t[j];
                    g.tail[j] += up * h[i] * row[j];
                }
            }
            s
        }
        Family::QuatE => {
            let mut s = 0.0;
            for n in 0..d / 4 {
                let span = 4 * n..4 * n + 4;
                let (hq, qq, tq) = (&h[span.clone()], &r[span.clone()], &t[span.clone()]);
                let o = hamilton(hq, qq);
                s += dot(&o, tq);
                let go = [up * tq[0], up * tq[1], up * tq[2], up * tq[3]];
                for c in 0..4 {
                    g.tail[4 * n + c] += up * o[c];
                }
                let (p, q, u, v) = (qq[0], qq[1], qq[2], qq[3]);
                let dh = [[p, q, u, v], [-q, p, -v, u], [-u, v, p, -q], [-v, -u, q, p]];
                let (a, b, c, dd) = (hq[0], hq[1], hq[2], hq[3]);
                let dq = [[a, b, c, dd], [-b, a, dd, -c], [-c, -dd, a, b], [-dd, c, -b, a]];
                for c in 0..4 {
                    g.head[4 * n + c] += dot(&dh[c], &go);
                    g.prepared[4 * n + c] += dot(&dq[c], &go);
                }
            }
            s
        }
        Family::TuckER => {
            let dr = spec.relation_dim;
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..dr {
                    let off = (i * dr + j) * d;
                    let core = &w[off..off + d];
                    let wt = dot(core, t);
                    let c = h[i] * r[j];
                    s += c * wt;
                    g.head[i] += up * r[j] * wt;
                    g.prepared[j] += up * h[i] * wt;
                    let gcore = &mut g.shared[off..off + d];
                    for k in 0..d {
                        g.tail[k] += up * c * core[k];
                        gcore[k] += up * c * t[k];
                    }
                }
            }
            s
        }
        Family::Hake => hake_grad(m, r, h, t, up, g),
        Family::TransM => {
            let kind = dist_kind(m);
            let mut e = vec![0.0; d];
            residual(m, r, h, t, &mut e);
            let dv = dist(kind, &e);
            let wr = r[d];
            let mut ge = vec![0.0; d];
            dist_backward(kind, &e, dv, -up * wr, &mut ge);
            residual_backward(m, r, h, t, &ge, g);
            g.prepared[d] += -up * dv;
            -wr * dv
        }
        _ => {
            let kind = dist_kind(m);
            let mut e = vec![0.0; residual_len(m)];
            residual(m, r, h, t, &mut e);
            let dv = dist(kind, &e);
            let mut ge = vec![0.0; e.len()];
            dist_backward(kind, &e, dv, -up, &mut ge);
            residual_backward(m, r, h, t, &ge, g);
            -dv
        }
    }
}

fn hake_grad(m: &Model, r: &[f64], h: &[f64], t: &[f64], up: f64, g: &mut PairGrad) -> f64 {
    let spec = m.spec();
    let d = spec.entity_dim;
    let lambda = spec.hake_lambda;
    let parts = hake_parts(m, r, h, t);
    let scale = if parts.dm > 0.0 { -up / parts.dm } else { 0.0 };
    for i in 0..d {
        let gem = scale * parts.em[i];
        g.head[i] += gem * parts.mult[i];
        g.tail[i] -= gem;
        let gmult = gem * h[i];
        let b_raw = r[d + i];
        let b = clamp_bias(b_raw);
        g.prepared[i] += gmult / (1.0 - b);
        if b == b_raw {
            g.prepared[d + i] += gmult * (1.0 + r[i]) / ((1.0 - b) * (1.0 - b));
        }
        let x = h[d + i] + r[2 * d + i] - t[d + i];
        let s = (x / 2.0).sin();
        let sign = if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        };
        let gx = -up * lambda * sign * (x / 2.0).cos() / 2.0;
        g.head[d + i] += gx;
        g.prepared[2 * d + i] += gx;
        g.tail[d + i] -= gx;
    }
    -(parts.dm + lambda * parts.dp)
}

/// Map a prepared-form gradient onto the raw relation row.
pub(super) fn finish(m: &Model, row: &[f64], prep: &[f64], gp: &[f64], out: &mut [f64]) {
    let spec = m.spec();
    let d = spec.entity_dim;
    match spec.family {
        Family::TransH => {
            add_scaled(&mut out[..d], &gp[..d], 1.0);
            normalize_backward(&row[d..], &prep[d..], &gp[d..], &mut out[d..]);
        }
        Family::RotatE => {
            for (i, o) in out.iter_mut().enumerate() {
                let (c, s) = (prep[2 * i], prep[2 * i + 1]);
                *o += -s * gp[2 * i] + c * gp[2 * i + 1];
            }
        }
        Family::QuatE => {
            for n in 0..d / 4 {
                let span = 4 * n..4 * n + 4;
                normalize_backward(
                    &row[span.clone()],
                    &prep[span.clone()],
                    &gp[span.clone()],
                    &mut out[span],
                );
            }
        }
        Family::CompoundE | Family::CompoundE3D => {
            let layout = m.compound_layout().unwrap();
            let dim = layout.block_dim();
            let per = layout.params_per_block();
            let stride = block_entries(dim);
            let mut chain = FactorChain::new(dim);
            for (b, (block, gblock)) in row.chunks(per).zip(gp.chunks(stride)).enumerate() {
                if gblock.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let mut gm: Mat4 = [[0.0; 4]; 4];
                for i in 0..dim {
                    for j in 0..=dim {
                        gm[i][j] = gblock[i * (dim + 1) + j];
                    }
                }
                layout.build_chain(block, &mut chain);
                chain.vjp_matrix(&gm, &mut out[b * per..(b + 1) * per]);
            }
        }
        _ => add_scaled(out, gp, 1.0),
    }
}

/// Gradient through `ŵ = w / |w|`.
fn normalize_backward(raw: &[f64], unit: &[f64], g_unit: &[f64], out: &mut [f64]) {
    let n = norm2(raw);
    if n == 0.0 {
        return;
    }
    let proj = dot(unit, g_unit);
    for i in 0..raw.len() {
        out[i] += (g_unit[i] - proj * unit[i]) / n;
    }
}
