//! Projection step: multiplicative minorize–maximization updates of `P`.
//!
//! With the kernel coefficients fixed, the log-likelihood is a function of the
//! vectorized augmented projection `p` (index `u·(r+1) + i`):
//! `Σ_m ln(pᵀΞ^m p) − pᵀΨp`. Baselines enter through the augmented
//! coordinate `(d, r)`, which is frozen at 1; the coordinates `(d, i < r)` and
//! `(u < d, r)` are structural zeros.

use log::warn;

use crate::error::{Error, Result};
use crate::exec;
use crate::tensors::TensorPair;
use crate::types::LowRankModel;

/// Denominators `(Ψp)_a` at or below this value freeze the coordinate.
pub const PSI_FLOOR: f64 = 1e-12;
/// Events whose `pᵀΞp` is below this value are left out of a sweep.
pub const XI_FLOOR: f64 = 1e-300;

/// Symmetric sparse matrix stored as upper-triangle triplets. Duplicate
/// positions are allowed and add up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymSparse {
    rows: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SymSparse {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `w·x_a·x_b` to the quadratic form `xᵀSx`: symmetric halves off
    /// the diagonal, the full weight on it.
    pub fn add_bilinear(&mut self, a: usize, b: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.rows.push(lo as u32);
        self.cols.push(hi as u32);
        self.vals.push(if a == b { w } else { 0.5 * w });
    }

    /// Adds a single upper-triangle entry `S_ab` (and its mirror).
    pub fn add_entry(&mut self, a: usize, b: usize, w: f64) {
        if w == 0.0 {
            return;
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.rows.push(lo as u32);
        self.cols.push(hi as u32);
        self.vals.push(w);
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Sorts and merges duplicate positions.
    pub fn compact(&mut self) {
        let mut order: Vec<usize> = (0..self.vals.len()).collect();
        order.sort_by_key(|&e| (self.rows[e], self.cols[e]));
        let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::<f64>::new());
        for e in order {
            let key = (self.rows[e], self.cols[e]);
            if rows.last().copied() == Some(key.0) && cols.last().copied() == Some(key.1) {
                *vals.last_mut().unwrap() += self.vals[e];
            } else {
                rows.push(key.0);
                cols.push(key.1);
                vals.push(self.vals[e]);
            }
        }
        self.rows = rows;
        self.cols = cols;
        self.vals = vals;
    }

    /// Dense `S_ab` value (sums duplicates).
    pub fn get(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = if a <= b { (a as u32, b as u32) } else { (b as u32, a as u32) };
        self.iter().filter(|&(r, c, _)| (r, c) == (lo as usize, hi as usize)).map(|e| e.2).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(&self.cols)
            .zip(&self.vals)
            .map(|((&r, &c), &v)| (r as usize, c as usize, v))
    }

    /// `out += S x`.
    pub fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        for (a, b, w) in self.iter() {
            if a == b {
                out[a] += w * x[a];
            } else {
                out[a] += w * x[b];
                out[b] += w * x[a];
            }
        }
    }

    /// `xᵀ S y` for symmetric `S`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.iter()
            .map(|(a, b, w)| if a == b { w * x[a] * y[a] } else { w * (x[a] * y[b] + x[b] * y[a]) })
            .sum()
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        self.bilinear(x, x)
    }
}

/// The per-event forms `Ξ^m` and the compensator form `Ψ`.
#[derive(Debug, Clone)]
pub struct QuadForms {
    dim: usize,
    frozen: Vec<bool>,
    xi: Vec<SymSparse>,
    psi: SymSparse,
}

impl QuadForms {
    /// Generic instance; `frozen` coordinates are never updated.
    pub fn new(dim: usize, xi: Vec<SymSparse>, psi: SymSparse, frozen: &[usize]) -> Result<Self> {
        let check = |s: &SymSparse| s.iter().all(|(a, b, _)| a < dim && b < dim);
        if !xi.iter().all(check) || !check(&psi) {
            return Err(Error::DimensionMismatch(format!("quadratic form index exceeds dimension {dim}")));
        }
        let mut mask = vec![false; dim];
        for &f in frozen {
            if f >= dim {
                return Err(Error::IndexOutOfRange { index: f, size: dim });
            }
            mask[f] = true;
        }
        Ok(QuadForms { dim, frozen: mask, xi, psi })
    }

    /// Builds an instance from dense row-major matrices (the upper triangle is
    /// read; the matrices are assumed symmetric).
    pub fn from_dense(dim: usize, xi: &[Vec<f64>], psi: &[f64]) -> Result<Self> {
        let to_sparse = |m: &[f64]| -> Result<SymSparse> {
            if m.len() != dim * dim {
                return Err(Error::DimensionMismatch(format!(
                    "dense form has {} entries, expected {}",
                    m.len(),
                    dim * dim
                )));
            }
            let mut s = SymSparse::new();
            for a in 0..dim {
                for b in a..dim {
                    s.add_entry(a, b, m[a * dim + b]);
                }
            }
            Ok(s)
        };
        let xi = xi.iter().map(|m| to_sparse(m)).collect::<Result<Vec<_>>>()?;
        let psi = to_sparse(psi)?;
        QuadForms::new(dim, xi, psi, &[])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_events(&self) -> usize {
        self.xi.len()
    }

    pub fn xi(&self, m: usize) -> &SymSparse {
        &self.xi[m]
    }

    pub fn psi(&self) -> &SymSparse {
        &self.psi
    }

    pub fn is_frozen(&self, a: usize) -> bool {
        self.frozen[a]
    }
}

/// Index of the augmented coordinate `(u, i)`.
#[inline]
pub fn aug_index(u: usize, i: usize, rank: usize) -> usize {
    u * (rank + 1) + i
}

/// The augmented projection of `model`, vectorized row-major.
pub fn augmented_vector(model: &LowRankModel) -> Vec<f64> {
    model.augmented_projection()
}

/// Writes the free part of an augmented vector back into `model`.
pub fn write_projection(p: &[f64], model: &mut LowRankModel) {
    let (d, r) = (model.d(), model.rank());
    for u in 0..d {
        for i in 0..r {
            model.projection_mut()[u * r + i] = p[aug_index(u, i, r)];
        }
    }
}

/// Builds `Ξ^m` for every event and `Ψ` from the model's coefficients.
pub fn build_quadforms(model: &LowRankModel, tensors: &TensorPair) -> Result<QuadForms> {
    if model.basis() != tensors.basis() || model.d() != tensors.d() {
        return Err(Error::DimensionMismatch("model and tensors disagree on dimension or basis".into()));
    }
    let (d, r, k_len) = (model.d(), model.rank(), model.kernels());
    let dim = (d + 1) * (r + 1);
    let frozen = aug_index(d, r, r);

    let blocks = tensors.event_blocks();
    let parts = exec::map(&blocks, |range| {
        let mut out = Vec::with_capacity(range.len());
        for m in range.clone() {
            let u = tensors.event_type(m);
            let mut s = SymSparse::new();
            let e = tensors.base_decay(m);
            for i in 0..r {
                let mu: f64 = model.beta_slice(i).iter().zip(e).map(|(b, x)| b * x).sum();
                s.add_bilinear(aug_index(u, i, r), frozen, mu);
            }
            let (src, vals) = tensors.row(m);
            for (a, &v) in src.iter().enumerate() {
                let dv = &vals[a * k_len..(a + 1) * k_len];
                for j in 0..r {
                    for i in 0..r {
                        let g: f64 = model.alpha_slice(j, i).iter().zip(dv).map(|(al, x)| al * x).sum();
                        s.add_bilinear(aug_index(u, i, r), aug_index(v as usize, j, r), g);
                    }
                }
            }
            out.push(s);
        }
        out
    });
    let xi: Vec<SymSparse> = parts.into_iter().flatten().collect();

    let (src_agg, base_agg) = tensors.aggregate_compensator();
    let mut psi = SymSparse::new();
    for v in 0..d {
        let bv = &src_agg[v * k_len..(v + 1) * k_len];
        if bv.iter().all(|&x| x == 0.0) {
            continue;
        }
        for j in 0..r {
            for i in 0..r {
                let f: f64 = model.alpha_slice(j, i).iter().zip(bv).map(|(al, x)| al * x).sum();
                for &u in tensors.network().out_neighbors(v) {
                    psi.add_bilinear(aug_index(u as usize, i, r), aug_index(v, j, r), f);
                }
            }
        }
    }
    for i in 0..r {
        let f: f64 = model.beta_slice(i).iter().zip(&base_agg).map(|(b, x)| b * x).sum();
        for u in 0..d {
            psi.add_bilinear(aug_index(u, i, r), frozen, f);
        }
    }
    psi.compact();

    let mut quad = QuadForms::new(dim, xi, psi, &[frozen])?;
    // Structural zeros never receive mass; freezing them keeps them exactly 0.
    for i in 0..r {
        quad.frozen[aug_index(d, i, r)] = true;
    }
    for u in 0..d {
        quad.frozen[aug_index(u, r, r)] = true;
    }
    Ok(quad)
}

/// `Σ_m ln(pᵀΞ^m p) − pᵀΨp`, or `−∞` when some event has a non-positive rate.
pub fn objective(p: &[f64], quad: &QuadForms) -> f64 {
    let blocks = exec::blocks(quad.num_events(), exec::EVENT_BLOCK);
    let parts = exec::map(&blocks, |range| {
        let mut acc = 0.0;
        for m in range.clone() {
            let q = quad.xi[m].quad(p);
            if !(q > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += q.ln();
        }
        acc
    });
    parts.into_iter().sum::<f64>() - quad.psi.quad(p)
}

/// One multiplicative update of every free coordinate.
pub fn mm_update(p: &[f64], quad: &QuadForms) -> Vec<f64> {
    assert_eq!(p.len(), quad.dim, "vector length does not match the forms");
    let dim = quad.dim;
    let blocks = exec::blocks(quad.num_events(), exec::EVENT_BLOCK);
    let parts = exec::map(&blocks, |range| {
        let mut num = vec![0.0; dim];
        let mut scratch = vec![0.0; dim];
        let mut skipped = 0usize;
        for m in range.clone() {
            let xi = &quad.xi[m];
            let q = xi.quad(p);
            if !(q >= XI_FLOOR) {
                skipped += 1;
                continue;
            }
            xi.mul_add(p, &mut scratch);
            let inv = 1.0 / q;
            for (a, _, _) in xi.iter() {
                if scratch[a] != 0.0 {
                    num[a] += scratch[a] * inv;
                    scratch[a] = 0.0;
                }
            }
            for (_, b, _) in xi.iter() {
                if scratch[b] != 0.0 {
                    num[b] += scratch[b] * inv;
                    scratch[b] = 0.0;
                }
            }
        }
        (num, skipped)
    });
    let mut num = vec![0.0; dim];
    let mut skipped = 0;
    for (part, s) in parts {
        skipped += s;
        for (a, b) in num.iter_mut().zip(&part) {
            *a += b;
        }
    }
    if skipped > 0 {
        warn!("{skipped} events with vanishing rate left out of the projection update");
    }
    let mut psi_p = vec![0.0; dim];
    quad.psi.mul_add(p, &mut psi_p);
    (0..dim)
        .map(|a| {
            if quad.frozen[a] || psi_p[a] <= PSI_FLOOR || p[a] == 0.0 {
                p[a]
            } else {
                p[a] * (num[a].max(0.0) / psi_p[a]).sqrt()
            }
        })
        .collect()
}

/// The auxiliary function of the update, in minimization form:
/// `g(p,q) = −Σ_m (2qᵀΞ^m[q ln(p/q)] / qᵀΞ^m q + ln qᵀΞ^m q) + qᵀΨ[p²/q]`.
/// `g(p,q) ≥ f(p)` and `g(p,p) = f(p)` with `f = −objective`. Coordinates
/// where both vectors are zero are skipped.
pub fn auxiliary_value(p: &[f64], q: &[f64], quad: &QuadForms) -> Result<f64> {
    if p.len() != quad.dim || q.len() != quad.dim {
        return Err(Error::DimensionMismatch("vector length does not match the forms".into()));
    }
    let mut log_ratio = vec![0.0; quad.dim];
    let mut sq_ratio = vec![0.0; quad.dim];
    for a in 0..quad.dim {
        match (p[a], q[a]) {
            (x, y) if x > 0.0 && y > 0.0 => {
                log_ratio[a] = y * (x / y).ln();
                sq_ratio[a] = x * x / y;
            }
            (x, y) if x == 0.0 && y == 0.0 => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "auxiliary function needs positive coordinates (index {a})"
                )))
            }
        }
    }
    let mut value = quad.psi.bilinear(q, &sq_ratio);
    for xi in &quad.xi {
        let qq = xi.quad(q);
        if !(qq > 0.0) {
            return Err(Error::InvalidArgument("reference point has a vanishing rate".into()));
        }
        value -= 2.0 * xi.bilinear(q, &log_ratio) / qq + qq.ln();
    }
    Ok(value)
}

/// Runs up to `sweeps` updates on the model's projection with its current
/// coefficients. Stops early (keeping the previous iterate) if a sweep would
/// lower the log-likelihood by more than `1e-9·|LL|`, which can only happen
/// when signed coefficients make some form entries negative. Returns the
/// updated model and the log-likelihood after each accepted sweep.
pub fn optimize_projection(model: &LowRankModel, tensors: &TensorPair, sweeps: usize) -> Result<(LowRankModel, Vec<f64>)> {
    let quad = build_quadforms(model, tensors)?;
    let mut p = augmented_vector(model);
    let mut ll = objective(&p, &quad);
    let mut trace = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let next = mm_update(&p, &quad);
        let next_ll = objective(&next, &quad);
        if !next_ll.is_finite() || next_ll < ll - 1e-9 * ll.abs() {
            warn!("projection sweep would lower the log-likelihood ({ll} -> {next_ll}); stopping");
            break;
        }
        let stalled = next == p;
        p = next;
        ll = next_ll;
        trace.push(ll);
        if stalled {
            break;
        }
    }
    let mut out = model.clone();
    write_projection(&p, &mut out);
    Ok((out, trace))
}
