//! Kernel-coefficient step.
//!
//! With `P` fixed the log-likelihood is `Σ_m ln(c_mᵀθ) − bᵀθ`, concave in the
//! coefficient vector `θ` (group kernels and baselines). Non-negativity of
//! the kernels is imposed where the data probes them: every observed kernel
//! sum `Σ_k α_{ji,k} D_{m,v,k}` and every baseline value at an event time must
//! stay positive. The same constraint is also imposed on a fixed grid of the
//! kernel and baseline supports, which keeps the objective bounded when the
//! observed lags are sparse. A log-barrier with weight `ε` keeps the iterates
//! strictly inside that set, and the barrier objective is maximized by damped
//! Newton (or BFGS for large parameter counts).
//!
//! Parameter layout: for target group `i`, a block of `L = rK + K + 1`
//! entries: first `α_{ji,k}` for `j = 0..r`, `k = 1..=K` (offset `j·K + k − 1`),
//! then `β_{i,k}` for `k = 0..=K` (offset `rK + k`). In this layout
//! `c_m = P_{u_m} ⊗ q̃_m`, which is what keeps the Hessian assembly cheap.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::tensors::TensorPair;
use crate::types::{AlphaSolver, Hyperparams, LowRankModel};

/// Newton is used up to this many unknowns; BFGS above.
pub const NEWTON_MAX_PARAMS: usize = 2000;
/// Value given to coefficients that no observation constrains.
pub const ALPHA_FLOOR: f64 = 1e-12;
const ARMIJO: f64 = 0.01;
const SHRINK: f64 = 0.5;
const MIN_STEP: f64 = 1e-14;
/// Minimum number of grid points per kernel and baseline support.
const GRID_POINTS: usize = 32;

/// Statistics of the tensors after projection through `P`.
#[derive(Debug, Clone)]
pub struct ProjectedStats<'a> {
    tensors: &'a TensorPair,
    rank: usize,
    kernels: usize,
    len: usize,
    projection: Vec<f64>,
    /// Event indices sorted (stably) by type. Per-event data below is stored
    /// in this order so the objective streams through memory.
    order: Vec<u32>,
    /// Position of each event in `order`.
    slot: Vec<u32>,
    /// Event types, in sorted order.
    types: Vec<u32>,
    /// `q̃_m`, `L` entries per event, in sorted order.
    qtilde: Vec<f64>,
    /// Rows of `D` (K values per source), in sorted order.
    row_ptr: Vec<usize>,
    row_vals: Vec<f64>,
    b: Vec<f64>,
    /// Kernel basis `x^k`, `k = 1..=K`, at grid points `x = e^{−δt} ∈ (0, 1]`.
    kernel_grid: Vec<f64>,
    /// Baseline basis `y^k`, `k = 0..=K`, at `y = e^{−γτ}` over the longest window.
    base_grid: Vec<f64>,
}

/// Projects `D` and `B` through the `d × r` projection.
pub fn project_tensors<'a>(projection: &[f64], rank: usize, tensors: &'a TensorPair) -> Result<ProjectedStats<'a>> {
    let d = tensors.d();
    if rank == 0 || projection.len() != d * rank {
        return Err(Error::DimensionMismatch(format!(
            "projection has {} entries, expected {d} x {rank}",
            projection.len()
        )));
    }
    let k_len = tensors.kernels();
    let len = rank * k_len + k_len + 1;
    let n = tensors.num_events();

    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&m| tensors.event_type(m as usize));
    let mut slot = vec![0u32; n];
    for (s, &m) in order.iter().enumerate() {
        slot[m as usize] = s as u32;
    }
    let types: Vec<u32> = order.iter().map(|&m| tensors.event_type(m as usize) as u32).collect();
    let mut row_ptr = Vec::with_capacity(n + 1);
    row_ptr.push(0);
    for &m in &order {
        row_ptr.push(row_ptr.last().expect("non-empty") + tensors.row(m as usize).1.len());
    }
    let mut row_vals = Vec::with_capacity(*row_ptr.last().expect("non-empty"));
    for &m in &order {
        row_vals.extend_from_slice(tensors.row(m as usize).1);
    }

    let blocks = exec::blocks(n, exec::EVENT_BLOCK);
    let parts = exec::map(&blocks, |range| {
        let mut out = vec![0.0; range.len() * len];
        for (pos, &m) in order[range.clone()].iter().enumerate() {
            let m = m as usize;
            let q = &mut out[pos * len..(pos + 1) * len];
            let (src, vals) = tensors.row(m);
            for (a, &v) in src.iter().enumerate() {
                let dv = &vals[a * k_len..(a + 1) * k_len];
                let pv = &projection[v as usize * rank..(v as usize + 1) * rank];
                for (j, &pvj) in pv.iter().enumerate() {
                    if pvj == 0.0 {
                        continue;
                    }
                    for (k, &x) in dv.iter().enumerate() {
                        q[j * k_len + k] += pvj * x;
                    }
                }
            }
            q[rank * k_len..].copy_from_slice(tensors.base_decay(m));
        }
        out
    });
    let mut qtilde = Vec::with_capacity(n * len);
    for p in parts {
        qtilde.extend(p);
    }

    // b_{i,(j,k)} = Σ_v P_vj R_vi B_{v,k}, with R_vi = Σ_{u: A_vu} P_ui;
    // b_{i,(base,k)} = (Σ_u P_ui) Σ_h f_{kγ}(T₊ − T₋).
    let (src_agg, base_agg) = tensors.aggregate_compensator();
    let mut b = vec![0.0; rank * len];
    let mut reach = vec![0.0; rank];
    for v in 0..d {
        let bv = &src_agg[v * k_len..(v + 1) * k_len];
        if bv.iter().all(|&x| x == 0.0) {
            continue;
        }
        reach.iter_mut().for_each(|x| *x = 0.0);
        for &u in tensors.network().out_neighbors(v) {
            for (i, x) in reach.iter_mut().enumerate() {
                *x += projection[u as usize * rank + i];
            }
        }
        for j in 0..rank {
            let pvj = projection[v * rank + j];
            if pvj == 0.0 {
                continue;
            }
            for i in 0..rank {
                let w = pvj * reach[i];
                for k in 0..k_len {
                    b[i * len + j * k_len + k] += w * bv[k];
                }
            }
        }
    }
    for i in 0..rank {
        let mass: f64 = (0..d).map(|u| projection[u * rank + i]).sum();
        for k in 0..=k_len {
            b[i * len + rank * k_len + k] = mass * base_agg[k];
        }
    }

    let points = GRID_POINTS.max(4 * k_len);
    let mut kernel_grid = Vec::with_capacity(points * k_len);
    for g in 1..=points {
        let x = g as f64 / points as f64;
        kernel_grid.extend((1..=k_len).map(|k| x.powi(k as i32)));
    }
    let longest = (0..tensors.num_realizations())
        .map(|h| {
            let (a, z) = tensors.window(h);
            z - a
        })
        .fold(0.0, f64::max);
    let y_min = (-tensors.basis().gamma * longest).exp();
    let mut base_grid = Vec::with_capacity(points * (k_len + 1));
    for g in 0..points {
        let y = y_min + (1.0 - y_min) * g as f64 / (points - 1) as f64;
        base_grid.extend((0..=k_len).map(|k| y.powi(k as i32)));
    }

    Ok(ProjectedStats {
        tensors,
        rank,
        kernels: k_len,
        len,
        projection: projection.to_vec(),
        order,
        slot,
        types,
        qtilde,
        row_ptr,
        row_vals,
        b,
        kernel_grid,
        base_grid,
    })
}

/// Value, gradient and (optionally) Hessian of the barrier objective.
#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Row-major `N × N`, present when requested.
    pub hessian: Option<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Want {
    Value,
    Gradient,
    /// Gradient plus the Hessian diagonal.
    Diagonal,
    Hessian,
}

struct Partial {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl<'a> ProjectedStats<'a> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    /// Number of coefficients `N = r (rK + K + 1)`.
    pub fn num_params(&self) -> usize {
        self.rank * self.len
    }

    pub fn num_events(&self) -> usize {
        self.tensors.num_events()
    }

    pub fn tensors(&self) -> &'a TensorPair {
        self.tensors
    }

    #[inline]
    fn q(&self, m: usize) -> &[f64] {
        self.q_at(self.slot[m] as usize)
    }

    /// `q̃` of the event at sorted position `s`.
    #[inline]
    fn q_at(&self, s: usize) -> &[f64] {
        &self.qtilde[s * self.len..(s + 1) * self.len]
    }

    #[inline]
    fn p_row(&self, u: usize) -> &[f64] {
        &self.projection[u * self.rank..(u + 1) * self.rank]
    }

    /// Index of `α_{ji,k}` (`k = 1..=K`) in the parameter vector.
    pub fn kernel_index(&self, j: usize, i: usize, k: usize) -> usize {
        i * self.len + j * self.kernels + k - 1
    }

    /// Index of `β_{i,k}` (`k = 0..=K`) in the parameter vector.
    pub fn baseline_index(&self, i: usize, k: usize) -> usize {
        i * self.len + self.rank * self.kernels + k
    }

    /// `c^{m}_{ijk} = Σ_{u,v} P_ui P_vj D_{m,u,v,k}` for `k = 1..=K`.
    pub fn c_kernel(&self, m: usize, i: usize, j: usize, k: usize) -> f64 {
        let u = self.tensors.event_type(m);
        self.p_row(u)[i] * self.q(m)[j * self.kernels + k - 1]
    }

    /// Baseline part of `c_m`: `P_{u_m i} e^{−kγ(t_m − T₋)}`.
    pub fn c_baseline(&self, m: usize, i: usize, k: usize) -> f64 {
        let u = self.tensors.event_type(m);
        self.p_row(u)[i] * self.q(m)[self.rank * self.kernels + k]
    }

    /// Full `c_m` in parameter layout.
    pub fn c(&self, m: usize) -> Vec<f64> {
        let u = self.tensors.event_type(m);
        let q = self.q(m);
        self.p_row(u)
            .iter()
            .flat_map(|&p| q.iter().map(move |&x| p * x))
            .collect()
    }

    /// The linear (compensator) coefficients `b`, in parameter layout.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Packs a model's coefficients into the parameter layout.
    pub fn pack(&self, model: &LowRankModel) -> Vec<f64> {
        let mut theta = vec![0.0; self.num_params()];
        for i in 0..self.rank {
            for j in 0..self.rank {
                for k in 1..=self.kernels {
                    theta[self.kernel_index(j, i, k)] = model.alpha(j, i, k);
                }
            }
            for k in 0..=self.kernels {
                theta[self.baseline_index(i, k)] = model.beta(i, k);
            }
        }
        theta
    }

    /// Writes a parameter vector back into `model`.
    pub fn unpack(&self, theta: &[f64], model: &mut LowRankModel) {
        let (r, k_len) = (self.rank, self.kernels);
        for i in 0..r {
            for j in 0..r {
                for k in 1..=k_len {
                    model.kernel_coefficients_mut()[(j * r + i) * k_len + k - 1] = theta[self.kernel_index(j, i, k)];
                }
            }
            for k in 0..=k_len {
                model.baseline_coefficients_mut()[i * (k_len + 1) + k] = theta[self.baseline_index(i, k)];
            }
        }
    }

    fn blocks(&self) -> Vec<Range<usize>> {
        exec::blocks(self.order.len(), exec::EVENT_BLOCK)
    }

    fn eval_block(&self, theta: &[f64], eps: f64, range: Range<usize>, want: Want) -> Option<Partial> {
        let (r, k_len, len) = (self.rank, self.kernels, self.len);
        let n_par = self.num_params();
        let mut value = 0.0;
        let mut grad = if want >= Want::Gradient { vec![0.0; n_par] } else { Vec::new() };
        let mut hess = match want {
            Want::Hessian => vec![0.0; n_par * n_par],
            Want::Diagonal => vec![0.0; n_par],
            _ => Vec::new(),
        };
        let mut w = if want == Want::Hessian { vec![0.0; len * len] } else { Vec::new() };
        let mut run_type: Option<usize> = None;
        let mut y = vec![0.0; r];
        let base_off = r * k_len;

        for s in range {
            let u = self.types[s] as usize;
            if want == Want::Hessian && run_type != Some(u) {
                if let Some(prev) = run_type {
                    self.flush_run(prev, &mut w, &mut hess);
                }
                run_type = Some(u);
            }
            let q = self.q_at(s);
            let pu = self.p_row(u);
            let mut rate = 0.0;
            for i in 0..r {
                let th = &theta[i * len..(i + 1) * len];
                y[i] = th.iter().zip(q).map(|(a, b)| a * b).sum();
                rate += pu[i] * y[i];
            }
            if !(rate > 0.0) {
                return None;
            }
            value += rate.ln();
            if want >= Want::Gradient {
                let inv = 1.0 / rate;
                for i in 0..r {
                    let f = pu[i] * inv;
                    if f == 0.0 {
                        continue;
                    }
                    for (g, &x) in grad[i * len..(i + 1) * len].iter_mut().zip(q) {
                        *g += f * x;
                    }
                }
                if want == Want::Diagonal {
                    let inv2 = inv * inv;
                    for i in 0..r {
                        let f = pu[i] * pu[i] * inv2;
                        for (h, &x) in hess[i * len..(i + 1) * len].iter_mut().zip(q) {
                            *h -= f * x * x;
                        }
                    }
                }
                if want == Want::Hessian {
                    let inv2 = inv * inv;
                    for s in 0..len {
                        let f = q[s] * inv2;
                        if f == 0.0 {
                            continue;
                        }
                        let row = &mut w[s * len..(s + 1) * len];
                        for s2 in s..len {
                            row[s2] += f * q[s2];
                        }
                    }
                }
            }

            // Barrier on every observed kernel sum.
            for dv in self.row_vals[self.row_ptr[s]..self.row_ptr[s + 1]].chunks_exact(k_len) {
                for i in 0..r {
                    for j in 0..r {
                        let off = i * len + j * k_len;
                        self.barrier_term(theta, eps, dv, off, &mut value, &mut grad, &mut hess, want)?;
                    }
                }
            }
            // Barrier on the baseline at the event time.
            let e = &q[base_off..];
            for i in 0..r {
                let off = i * len + base_off;
                self.barrier_term(theta, eps, e, off, &mut value, &mut grad, &mut hess, want)?;
            }
        }
        if let Some(prev) = run_type {
            self.flush_run(prev, &mut w, &mut hess);
        }
        Some(Partial { value, grad, hess })
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn barrier_term(
        &self,
        theta: &[f64],
        eps: f64,
        x: &[f64],
        off: usize,
        value: &mut f64,
        grad: &mut [f64],
        hess: &mut [f64],
        want: Want,
    ) -> Option<()> {
        let s: f64 = theta[off..off + x.len()].iter().zip(x).map(|(a, b)| a * b).sum();
        if !(s > 0.0) {
            return None;
        }
        *value += eps * s.ln();
        if want >= Want::Gradient {
            let f = eps / s;
            for (g, &xk) in grad[off..off + x.len()].iter_mut().zip(x) {
                *g += f * xk;
            }
            if want == Want::Diagonal {
                let f2 = f / s;
                for (h, &xk) in hess[off..off + x.len()].iter_mut().zip(x) {
                    *h -= f2 * xk * xk;
                }
            }
            if want == Want::Hessian {
                let n_par = self.num_params();
                let f2 = f / s;
                for (a, &xa) in x.iter().enumerate() {
                    if xa == 0.0 {
                        continue;
                    }
                    let row = &mut hess[(off + a) * n_par + off..(off + a) * n_par + off + x.len()];
                    for (h, &xb) in row.iter_mut().zip(x) {
                        *h -= f2 * xa * xb;
                    }
                }
            }
        }
        Some(())
    }

    /// Adds `−(P_u P_uᵀ) ⊗ W` to the Hessian and clears `W` (upper triangle).
    fn flush_run(&self, u: usize, w: &mut [f64], hess: &mut [f64]) {
        let (r, len) = (self.rank, self.len);
        let n_par = self.num_params();
        let pu = self.p_row(u);
        for s in 0..len {
            for s2 in 0..s {
                w[s * len + s2] = w[s2 * len + s];
            }
        }
        for i in 0..r {
            for i2 in 0..r {
                let f = pu[i] * pu[i2];
                if f == 0.0 {
                    continue;
                }
                for s in 0..len {
                    let row = &mut hess[(i * len + s) * n_par + i2 * len..(i * len + s) * n_par + i2 * len + len];
                    for (h, &x) in row.iter_mut().zip(&w[s * len..(s + 1) * len]) {
                        *h -= f * x;
                    }
                }
            }
        }
        w.iter_mut().for_each(|x| *x = 0.0);
    }

    /// Barrier on the grid, for every kernel and baseline carrying compensator
    /// mass. Functions without mass are left alone: their barrier would have
    /// no linear term to balance it.
    fn grid_terms(
        &self,
        theta: &[f64],
        eps: f64,
        value: &mut f64,
        grad: &mut [f64],
        hess: &mut [f64],
        want: Want,
    ) -> Option<()> {
        let (r, k_len, len) = (self.rank, self.kernels, self.len);
        for i in 0..r {
            for j in 0..r {
                let off = i * len + j * k_len;
                if !(self.b[off] > 0.0) {
                    continue;
                }
                for x in self.kernel_grid.chunks_exact(k_len) {
                    self.barrier_term(theta, eps, x, off, value, grad, hess, want)?;
                }
            }
            let off = i * len + r * k_len;
            if !(self.b[off] > 0.0) {
                continue;
            }
            for y in self.base_grid.chunks_exact(k_len + 1) {
                self.barrier_term(theta, eps, y, off, value, grad, hess, want)?;
            }
        }
        Some(())
    }

    fn evaluate(&self, theta: &[f64], eps: f64, want: Want) -> Option<Objective> {
        let n_par = self.num_params();
        assert_eq!(theta.len(), n_par, "parameter vector has the wrong length");
        let blocks = self.blocks();
        let parts = exec::map(&blocks, |range| self.eval_block(theta, eps, range.clone(), want));
        let mut value = 0.0;
        let mut grad = if want >= Want::Gradient { vec![0.0; n_par] } else { Vec::new() };
        let mut hess = match want {
            Want::Hessian => vec![0.0; n_par * n_par],
            Want::Diagonal => vec![0.0; n_par],
            _ => Vec::new(),
        };
        for part in parts {
            let part = part?;
            value += part.value;
            for (g, p) in grad.iter_mut().zip(&part.grad) {
                *g += p;
            }
            for (h, p) in hess.iter_mut().zip(&part.hess) {
                *h += p;
            }
        }
        self.grid_terms(theta, eps, &mut value, &mut grad, &mut hess, want)?;
        value -= self.b.iter().zip(theta).map(|(b, t)| b * t).sum::<f64>();
        for (g, b) in grad.iter_mut().zip(&self.b) {
            *g -= b;
        }
        Some(Objective {
            value,
            gradient: grad,
            hessian: (want >= Want::Diagonal).then_some(hess),
        })
    }
}

/// Barrier objective `Σ_m (ln(c_mᵀθ) + ε b(θ)_m) + ε Σ_grid ln(·) − bᵀθ` with its analytic
/// gradient and Hessian, or `None` when `θ` is infeasible.
pub fn barrier_objective(theta: &[f64], stats: &ProjectedStats<'_>, epsilon: f64) -> Option<Objective> {
    stats.evaluate(theta, epsilon, Want::Hessian)
}

/// Value and gradient only.
pub fn barrier_gradient(theta: &[f64], stats: &ProjectedStats<'_>, epsilon: f64) -> Option<Objective> {
    stats.evaluate(theta, epsilon, Want::Gradient)
}

/// Value and gradient, with only the Hessian diagonal in `hessian`.
fn barrier_diagonal(theta: &[f64], stats: &ProjectedStats<'_>, epsilon: f64) -> Option<Objective> {
    stats.evaluate(theta, epsilon, Want::Diagonal)
}

/// Objective value, `f64::NEG_INFINITY` when infeasible.
pub fn barrier_value(theta: &[f64], stats: &ProjectedStats<'_>, epsilon: f64) -> f64 {
    stats
        .evaluate(theta, epsilon, Want::Value)
        .map_or(f64::NEG_INFINITY, |o| o.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverUsed {
    Newton,
    QuasiNewton,
}

#[derive(Debug, Clone)]
pub struct AlphaReport {
    pub solver: SolverUsed,
    pub iterations: usize,
    pub converged: bool,
    pub initial_objective: f64,
    pub objective: f64,
}

/// Coordinates that appear in at least one log term (the rest only enter the
/// linear compensator term).
fn covered(obj: &Objective) -> Vec<bool> {
    let n = obj.gradient.len();
    let h = obj.hessian.as_ref().expect("coverage needs the Hessian");
    (0..n).map(|c| h[c * n + c] < 0.0).collect()
}

fn covered_without_hessian(stats: &ProjectedStats<'_>) -> Vec<bool> {
    let n_par = stats.num_params();
    let mut cov = vec![false; n_par];
    if stats.num_events() == 0 {
        return cov;
    }
    let any_row = (0..stats.num_events()).any(|m| !stats.tensors.row(m).0.is_empty());
    for i in 0..stats.rank {
        for k in 0..=stats.kernels {
            cov[stats.baseline_index(i, k)] = true;
        }
        if any_row {
            for j in 0..stats.rank {
                for k in 1..=stats.kernels {
                    cov[stats.kernel_index(j, i, k)] = true;
                }
            }
        }
    }
    cov
}

fn newton_direction(hess: &[f64], grad: &[f64], active: &[usize], n_par: usize) -> Option<Vec<f64>> {
    let na = active.len();
    let mut neg = DMatrix::<f64>::zeros(na, na);
    for (a, &ca) in active.iter().enumerate() {
        for (b, &cb) in active.iter().enumerate() {
            neg[(a, b)] = -hess[ca * n_par + cb];
        }
    }
    let rhs = DVector::from_iterator(na, active.iter().map(|&c| grad[c]));
    let scale = (0..na).map(|a| neg[(a, a)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = neg.clone();
        if ridge > 0.0 {
            for a in 0..na {
                m[(a, a)] += ridge;
            }
        }
        if let Some(ch) = m.cholesky() {
            let step = ch.solve(&rhs);
            if step.iter().all(|x| x.is_finite()) {
                return Some(step.iter().copied().collect());
            }
        }
        ridge = if ridge == 0.0 { scale * 1e-12 } else { ridge * 100.0 };
    }
    None
}

/// Damped Newton with backtracking; every iterate stays strictly feasible.
pub fn newton_solve(
    stats: &ProjectedStats<'_>,
    theta0: &[f64],
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, AlphaReport)> {
    let n_par = stats.num_params();
    let mut theta = theta0.to_vec();
    let mut obj = barrier_objective(&theta, stats, epsilon)
        .ok_or_else(|| Error::InvalidArgument("initial kernel coefficients are infeasible".into()))?;
    let cov = covered(&obj);
    if cov.iter().any(|c| !c) {
        for (t, _) in theta.iter_mut().zip(&cov).filter(|(_, c)| !**c) {
            *t = ALPHA_FLOOR;
        }
        obj = barrier_objective(&theta, stats, epsilon)
            .ok_or_else(|| Error::InvalidArgument("kernel coefficients infeasible after clamping".into()))?;
    }
    let active: Vec<usize> = (0..n_par).filter(|&c| cov[c]).collect();
    let initial = obj.value;
    let mut converged = active.is_empty();
    let mut iterations = 0;
    while !converged && iterations < max_iters {
        let hess = obj.hessian.as_ref().expect("hessian requested");
        let Some(dir) = newton_direction(hess, &obj.gradient, &active, n_par) else {
            break;
        };
        let decrement: f64 = dir.iter().zip(&active).map(|(s, &c)| s * obj.gradient[c]).sum();
        if decrement / 2.0 <= tol * obj.value.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut trial = theta.clone();
        let accepted = loop {
            for (s, &c) in dir.iter().zip(&active) {
                trial[c] = theta[c] + t * s;
            }
            let v = barrier_value(&trial, stats, epsilon);
            if v.is_finite() && v >= obj.value + ARMIJO * t * decrement {
                break true;
            }
            t *= SHRINK;
            if t < MIN_STEP {
                break false;
            }
        };
        if !accepted {
            // No ascent possible along the Newton direction: numerically at
            // the optimum.
            converged = decrement / 2.0 <= 1e-6 * obj.value.abs().max(1.0);
            break;
        }
        theta = trial;
        obj = barrier_objective(&theta, stats, epsilon).expect("accepted iterate is feasible");
    }
    Ok((
        theta,
        AlphaReport {
            solver: SolverUsed::Newton,
            iterations,
            converged,
            initial_objective: initial,
            objective: obj.value,
        },
    ))
}

/// BFGS on the same objective; `O(N²)` memory instead of a Hessian solve.
pub fn quasi_newton_solve(
    stats: &ProjectedStats<'_>,
    theta0: &[f64],
    epsilon: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Vec<f64>, AlphaReport)> {
    let n_par = stats.num_params();
    let mut theta = theta0.to_vec();
    let cov = covered_without_hessian(stats);
    for (t, _) in theta.iter_mut().zip(&cov).filter(|(_, c)| !**c) {
        *t = ALPHA_FLOOR;
    }
    let active: Vec<usize> = (0..n_par).filter(|&c| cov[c]).collect();
    let na = active.len();
    let mut obj = barrier_gradient(&theta, stats, epsilon)
        .ok_or_else(|| Error::InvalidArgument("initial kernel coefficients are infeasible".into()))?;
    let initial = obj.value;
    // Work with φ = −f. The inverse-Hessian estimate starts from (and is reset
    // to) the inverse of the exact Hessian diagonal.
    let diagonal_start = |theta: &[f64]| -> DMatrix<f64> {
        let diag = barrier_diagonal(theta, stats, epsilon)
            .and_then(|o| o.hessian)
            .unwrap_or_else(|| vec![-1.0; n_par]);
        let mut m = DMatrix::<f64>::zeros(na, na);
        for (a, &c) in active.iter().enumerate() {
            let h = -diag[c];
            m[(a, a)] = if h > 0.0 && h.is_finite() { 1.0 / h } else { 1.0 };
        }
        m
    };
    let mut g: Vec<f64> = active.iter().map(|&c| -obj.gradient[c]).collect();
    let mut hinv = diagonal_start(&theta);
    let mut fresh = true;
    let mut converged = na == 0;
    let mut small_steps = 0;
    let mut iterations = 0;
    while !converged && iterations < max_iters {
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&hinv * &gv)).iter().copied().collect();
        let mut slope: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) && !fresh {
            hinv = diagonal_start(&theta);
            fresh = true;
            dir = (-(&hinv * &gv)).iter().copied().collect();
            slope = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        }
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut t = 1.0;
        let mut trial = theta.clone();
        let accepted = loop {
            for (s, &c) in dir.iter().zip(&active) {
                trial[c] = theta[c] + t * s;
            }
            let v = barrier_value(&trial, stats, epsilon);
            // φ(trial) ≤ φ + c t slope  ⇔  f(trial) ≥ f − c t slope
            if v.is_finite() && v >= obj.value - ARMIJO * t * slope {
                break true;
            }
            t *= SHRINK;
            if t < MIN_STEP {
                break false;
            }
        };
        if !accepted {
            if fresh {
                // No progress even along the preconditioned gradient.
                converged = true;
                break;
            }
            hinv = diagonal_start(&theta);
            fresh = true;
            continue;
        }
        let new_obj = barrier_gradient(&trial, stats, epsilon).expect("accepted iterate is feasible");
        let new_g: Vec<f64> = active.iter().map(|&c| -new_obj.gradient[c]).collect();
        let s = DVector::from_iterator(na, active.iter().map(|&c| trial[c] - theta[c]));
        let yv = DVector::from_iterator(na, new_g.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        if sy > 1e-300 {
            fresh = false;
            let rho = 1.0 / sy;
            let hy = &hinv * &yv;
            let yhy = yv.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        let gain = new_obj.value - obj.value;
        theta = trial;
        obj = new_obj;
        g = new_g;
        if gain <= tol * obj.value.abs().max(1.0) {
            small_steps += 1;
            if small_steps >= 3 {
                converged = true;
            }
        } else {
            small_steps = 0;
        }
    }
    Ok((
        theta,
        AlphaReport {
            solver: SolverUsed::QuasiNewton,
            iterations,
            converged,
            initial_objective: initial,
            objective: obj.value,
        },
    ))
}

/// Runs the configured solver from `theta0` with barrier weight `epsilon`.
pub fn solve(
    stats: &ProjectedStats<'_>,
    theta0: &[f64],
    hp: &Hyperparams,
    epsilon: f64,
) -> Result<(Vec<f64>, AlphaReport)> {
    let use_newton = match hp.alpha_solver {
        AlphaSolver::Newton => true,
        AlphaSolver::QuasiNewton => false,
        AlphaSolver::Auto => stats.num_params() <= NEWTON_MAX_PARAMS,
    };
    if use_newton {
        newton_solve(stats, theta0, epsilon, hp.max_newton_iters, hp.newton_tol)
    } else {
        quasi_newton_solve(stats, theta0, epsilon, hp.max_newton_iters * 20, hp.newton_tol)
    }
}

/// One kernel-coefficient step: projects the tensors through the model's
/// `P`, then maximizes the barrier objective starting from the model's
/// current coefficients (which must be strictly feasible).
pub fn optimize_alpha(
    model: &LowRankModel,
    tensors: &TensorPair,
    hp: &Hyperparams,
) -> Result<(LowRankModel, AlphaReport)> {
    optimize_alpha_with_epsilon(model, tensors, hp, hp.epsilon)
}

pub fn optimize_alpha_with_epsilon(
    model: &LowRankModel,
    tensors: &TensorPair,
    hp: &Hyperparams,
    epsilon: f64,
) -> Result<(LowRankModel, AlphaReport)> {
    if model.basis() != tensors.basis() {
        return Err(Error::DimensionMismatch("model and tensors use different bases".into()));
    }
    let stats = project_tensors(model.projection(), model.rank(), tensors)?;
    let theta0 = stats.pack(model);
    let (theta, report) = solve(&stats, &theta0, hp, epsilon)?;
    let mut out = model.clone();
    stats.unpack(&theta, &mut out);
    Ok((out, report))
}
