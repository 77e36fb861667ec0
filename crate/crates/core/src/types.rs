//! Shared domain types: networks, event histories, hyperparameters and the
//! low-rank model.
//!
//! Indices are 0-based throughout. Event types run over `0..d` and latent
//! groups over `0..r`. In the augmented (tensor) view the extra source slot is
//! type `d` and the extra group is `r`; the baseline coefficients live in the
//! `(r, i)` slice of the augmented kernel tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `∫₀ᵗ e^{-k x s} ds`, i.e. `(1 − e^{−kxt})/(kx)`, with the `k = 0` limit `t`.
pub fn exp_integral(k: usize, x: f64, t: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::InvalidArgument(format!("decay rate must be positive, got {x}")));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("integration horizon must be >= 0, got {t}")));
    }
    Ok(exp_integral_unchecked(k, x, t))
}

#[inline]
pub(crate) fn exp_integral_unchecked(k: usize, x: f64, t: f64) -> f64 {
    if k == 0 {
        return t;
    }
    let a = k as f64 * x;
    -(-a * t).exp_m1() / a
}

/// Directed, unweighted excitation network. `A[v][u] = 1` means events of
/// type `v` can excite type `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    d: usize,
    adjacency: Vec<bool>,
    out: Vec<Vec<u32>>,
    inc: Vec<Vec<u32>>,
}

impl Network {
    /// Builds a network from `(src, dst)` pairs. Duplicates are merged.
    pub fn from_edges(d: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("network needs d >= 1".into()));
        }
        let mut adjacency = vec![false; d * d];
        for (src, dst) in edges {
            if src >= d {
                return Err(Error::IndexOutOfRange { index: src, size: d });
            }
            if dst >= d {
                return Err(Error::IndexOutOfRange { index: dst, size: d });
            }
            adjacency[src * d + dst] = true;
        }
        Ok(Self::from_dense(d, adjacency))
    }

    fn from_dense(d: usize, adjacency: Vec<bool>) -> Self {
        let mut out = vec![Vec::new(); d];
        let mut inc = vec![Vec::new(); d];
        for v in 0..d {
            for u in 0..d {
                if adjacency[v * d + u] {
                    out[v].push(u as u32);
                    inc[u].push(v as u32);
                }
            }
        }
        Self {
            d,
            adjacency,
            out,
            inc,
        }
    }

    /// Every ordered pair `u ≠ v` connected, plus the diagonal when
    /// `self_loops` is set. This is the default when no network is known.
    pub fn complete(d: usize, self_loops: bool) -> Result<Self> {
        let edges = (0..d).flat_map(|v| (0..d).map(move |u| (v, u)));
        Self::from_edges(d, edges.filter(|&(v, u)| self_loops || v != u))
    }

    /// Network with no edges at all.
    pub fn empty(d: usize) -> Result<Self> {
        Self::from_edges(d, std::iter::empty())
    }

    /// Copy of this network with the diagonal forced on or off.
    pub fn with_self_loops(&self, on: bool) -> Self {
        let mut adjacency = self.adjacency.clone();
        for u in 0..self.d {
            adjacency[u * self.d + u] = on;
        }
        Self::from_dense(self.d, adjacency)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.adjacency[src * self.d + dst]
    }

    /// Targets excited by `src`.
    #[inline]
    pub fn out_neighbors(&self, src: usize) -> &[u32] {
        &self.out[src]
    }

    /// Sources that excite `dst`.
    #[inline]
    pub fn in_neighbors(&self, dst: usize) -> &[u32] {
        &self.inc[dst]
    }

    /// `Δ`: the largest out-degree.
    pub fn max_out_degree(&self) -> usize {
        self.out.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn max_in_degree(&self) -> usize {
        self.inc.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn num_edges(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(|(v, us)| us.iter().map(move |&u| (v, u as usize)))
    }
}

/// A single event: its occurrence time and its type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: usize,
}

/// One observed realization on the window `[t_minus, t_plus]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub t_minus: f64,
    pub t_plus: f64,
    pub events: Vec<Event>,
}

impl Realization {
    pub fn new(t_minus: f64, t_plus: f64, events: Vec<Event>) -> Self {
        Self {
            t_minus,
            t_plus,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// `H` i.i.d. realizations of a `d`-type process.
#[derive(Debug, Clone, PartialEq)]
pub struct EventHistory {
    d: usize,
    realizations: Vec<Realization>,
}

impl EventHistory {
    /// Validates windows, time ordering and type ranges.
    pub fn new(d: usize, realizations: Vec<Realization>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("history needs d >= 1".into()));
        }
        for (h, real) in realizations.iter().enumerate() {
            validate_realization(h, real, d)?;
        }
        Ok(Self { d, realizations })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn realizations(&self) -> &[Realization] {
        &self.realizations
    }

    pub fn into_realizations(self) -> Vec<Realization> {
        self.realizations
    }

    /// Total number of events `n`.
    pub fn num_events(&self) -> usize {
        self.realizations.iter().map(Realization::len).sum()
    }

    /// `σ`: the largest number of distinct types in one realization.
    pub fn sigma(&self) -> usize {
        let mut seen = vec![usize::MAX; self.d];
        let mut best = 0;
        for (h, real) in self.realizations.iter().enumerate() {
            let mut count = 0;
            for e in &real.events {
                if seen[e.kind] != h {
                    seen[e.kind] = h;
                    count += 1;
                }
            }
            best = best.max(count);
        }
        best
    }

    /// Per-type event counts.
    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.d];
        for real in &self.realizations {
            for e in &real.events {
                counts[e.kind] += 1;
            }
        }
        counts
    }

    /// Keeps the realizations selected by `range` (in order).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            d: self.d,
            realizations: self.realizations[range].to_vec(),
        }
    }

    /// Splits into the first `H − ⌈fraction·H⌉` realizations (train) and the
    /// remaining tail (test).
    pub fn split_holdout(&self, fraction: f64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!("holdout fraction {fraction} not in [0, 1]")));
        }
        let h = self.realizations.len();
        let test = ((fraction * h as f64).ceil() as usize).min(h);
        Ok((self.slice(0..h - test), self.slice(h - test..h)))
    }

    /// Truncates every realization at `t_split`: events strictly before it are
    /// kept and the window end becomes `min(t_plus, t_split)`.
    pub fn truncate_at(&self, t_split: f64) -> Self {
        let realizations = self
            .realizations
            .iter()
            .map(|r| {
                let end = r.t_plus.min(t_split).max(r.t_minus);
                Realization::new(
                    r.t_minus,
                    end,
                    r.events.iter().copied().filter(|e| e.time < t_split).collect(),
                )
            })
            .collect();
        Self {
            d: self.d,
            realizations,
        }
    }
}

fn validate_realization(h: usize, real: &Realization, d: usize) -> Result<()> {
    if !(real.t_minus.is_finite() && real.t_plus.is_finite() && real.t_minus <= real.t_plus) {
        return Err(Error::InvalidWindow {
            realization: h,
            t_minus: real.t_minus,
            t_plus: real.t_plus,
        });
    }
    let mut last = real.t_minus;
    for (m, e) in real.events.iter().enumerate() {
        if e.kind >= d {
            return Err(Error::TypeOutOfRange {
                realization: h,
                event: m,
                kind: e.kind,
                d,
            });
        }
        if !(e.time >= real.t_minus && e.time <= real.t_plus) {
            return Err(Error::OutOfWindow {
                realization: h,
                event: m,
                time: e.time,
                t_minus: real.t_minus,
                t_plus: real.t_plus,
            });
        }
        if e.time < last {
            return Err(Error::NonMonotoneTime {
                realization: h,
                event: m,
            });
        }
        last = e.time;
    }
    Ok(())
}

/// Which solver the kernel-coefficient step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSolver {
    /// Newton below [`crate::alpha::NEWTON_MAX_PARAMS`] unknowns, BFGS above.
    #[default]
    Auto,
    Newton,
    QuasiNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of exponential basis functions `K`.
    pub kernels: usize,
    /// Rank `r` of the projection.
    pub rank: usize,
    /// Decay rate of the baseline basis `e^{-kγt}`, `k = 0..=K`.
    pub gamma: f64,
    /// Decay rate of the triggering basis `e^{-kδt}`, `k = 1..=K`.
    pub delta: f64,
    /// Target log-barrier weight of the kernel step. The fit starts at
    /// [`crate::fit::EPSILON_START`] and shrinks the weight tenfold per outer
    /// iteration down to this value.
    pub epsilon: f64,
    /// Re-solve the last kernel step once with `epsilon / 10`.
    pub barrier_refine: bool,
    pub max_outer_iters: usize,
    pub max_newton_iters: usize,
    /// Relative log-likelihood improvement below which the outer loop stops.
    pub rel_tol: f64,
    /// Newton stops once half the squared Newton decrement drops below
    /// `newton_tol · max(1, |objective|)`.
    pub newton_tol: f64,
    /// Minorize–maximization sweeps per outer iteration.
    pub mm_sweeps: usize,
    pub alpha_solver: AlphaSolver,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            kernels: 6,
            rank: 2,
            gamma: 0.5,
            delta: 0.5,
            epsilon: 1e-5,
            barrier_refine: false,
            max_outer_iters: 50,
            max_newton_iters: 30,
            rel_tol: 1e-6,
            newton_tol: 1e-10,
            mm_sweeps: 5,
            alpha_solver: AlphaSolver::Auto,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.kernels == 0 {
            return bad("kernels (K) must be >= 1");
        }
        if self.rank == 0 {
            return bad("rank (r) must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad("delta must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.rel_tol >= 0.0) {
            return bad("rel_tol must be >= 0");
        }
        if !(self.newton_tol >= 0.0) {
            return bad("newton_tol must be >= 0");
        }
        Ok(())
    }

    pub fn basis(&self) -> Basis {
        Basis {
            kernels: self.kernels,
            gamma: self.gamma,
            delta: self.delta,
        }
    }
}

/// The exponential basis shared by a model and its tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub kernels: usize,
    pub gamma: f64,
    pub delta: f64,
}

/// Projection `P` (`d × r`, nonnegative), group kernel coefficients
/// `α[j][i][k]` for source group `j`, target group `i`, `k = 1..=K`, and
/// baseline coefficients `β[i][k]`, `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    d: usize,
    rank: usize,
    basis: Basis,
    projection: Vec<f64>,
    kernel: Vec<f64>,
    baseline: Vec<f64>,
}

impl LowRankModel {
    /// All-zero model.
    pub fn zeros(d: usize, rank: usize, basis: Basis) -> Self {
        Self {
            d,
            rank,
            basis,
            projection: vec![0.0; d * rank],
            kernel: vec![0.0; rank * rank * basis.kernels],
            baseline: vec![0.0; rank * (basis.kernels + 1)],
        }
    }

    pub fn from_parts(
        d: usize,
        rank: usize,
        basis: Basis,
        projection: Vec<f64>,
        kernel: Vec<f64>,
        baseline: Vec<f64>,
    ) -> Result<Self> {
        let k = basis.kernels;
        if projection.len() != d * rank {
            return Err(Error::DimensionMismatch(format!(
                "projection has {} entries, expected {}",
                projection.len(),
                d * rank
            )));
        }
        if kernel.len() != rank * rank * k {
            return Err(Error::DimensionMismatch(format!(
                "kernel coefficients have {} entries, expected {}",
                kernel.len(),
                rank * rank * k
            )));
        }
        if baseline.len() != rank * (k + 1) {
            return Err(Error::DimensionMismatch(format!(
                "baseline coefficients have {} entries, expected {}",
                baseline.len(),
                rank * (k + 1)
            )));
        }
        if projection.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("projection entries must be finite and >= 0".into()));
        }
        if kernel.iter().chain(&baseline).any(|a| !a.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self {
            d,
            rank,
            basis,
            projection,
            kernel,
            baseline,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn kernels(&self) -> usize {
        self.basis.kernels
    }

    /// Row-major `d × r`.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    #[inline]
    pub fn p(&self, u: usize, i: usize) -> f64 {
        self.projection[u * self.rank + i]
    }

    #[inline]
    pub fn projection_row(&self, u: usize) -> &[f64] {
        &self.projection[u * self.rank..(u + 1) * self.rank]
    }

    /// Flat `α`, index `((j·r + i)·K + (k − 1))`.
    pub fn kernel_coefficients(&self) -> &[f64] {
        &self.kernel
    }

    pub fn kernel_coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.kernel
    }

    /// Flat `β`, index `(i·(K + 1) + k)`.
    pub fn baseline_coefficients(&self) -> &[f64] {
        &self.baseline
    }

    pub fn baseline_coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.baseline
    }

    /// `α_{ji,k}` for `k` in `1..=K`.
    #[inline]
    pub fn alpha(&self, j: usize, i: usize, k: usize) -> f64 {
        self.kernel[(j * self.rank + i) * self.basis.kernels + (k - 1)]
    }

    /// The `K` coefficients of `ĝ_{ji}`.
    #[inline]
    pub fn alpha_slice(&self, j: usize, i: usize) -> &[f64] {
        let k = self.basis.kernels;
        let start = (j * self.rank + i) * k;
        &self.kernel[start..start + k]
    }

    #[inline]
    pub fn beta(&self, i: usize, k: usize) -> f64 {
        self.baseline[i * (self.basis.kernels + 1) + k]
    }

    #[inline]
    pub fn beta_slice(&self, i: usize) -> &[f64] {
        let k1 = self.basis.kernels + 1;
        &self.baseline[i * k1..(i + 1) * k1]
    }

    fn check_groups(&self, groups: &[usize]) -> Result<()> {
        for &g in groups {
            if g >= self.rank {
                return Err(Error::IndexOutOfRange {
                    index: g,
                    size: self.rank,
                });
            }
        }
        Ok(())
    }

    /// `ĝ_{ji}(t) = Σ_{k=1}^K α_{ji,k} e^{−kδt}`: effect of group `j` on group `i`.
    pub fn kernel_value(&self, j: usize, i: usize, t: f64) -> Result<f64> {
        self.check_groups(&[j, i])?;
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("kernel lag must be >= 0, got {t}")));
        }
        Ok(exp_series(self.alpha_slice(j, i), self.basis.delta, t, 1))
    }

    /// `μ̂_i(t) = Σ_{k=0}^K β_{i,k} e^{−kγt}`, `t` measured from the window start.
    pub fn baseline_value(&self, i: usize, t: f64) -> Result<f64> {
        self.check_groups(&[i])?;
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("baseline time must be >= 0, got {t}")));
        }
        Ok(exp_series(self.beta_slice(i), self.basis.gamma, t, 0))
    }

    /// Augmented `(d+1) × (r+1)` projection: row `d` is the indicator of
    /// column `r`, and column `r` is zero on the first `d` rows.
    pub fn augmented_projection(&self) -> Vec<f64> {
        let (d, r) = (self.d, self.rank);
        let mut p = vec![0.0; (d + 1) * (r + 1)];
        for u in 0..d {
            p[u * (r + 1)..u * (r + 1) + r].copy_from_slice(self.projection_row(u));
        }
        p[d * (r + 1) + r] = 1.0;
        p
    }

    /// Augmented `(r+1) × (r+1) × (K+1)` coefficient tensor, index
    /// `((j·(r+1) + i)·(K+1) + k)`. Slot `k = 0` of the group kernels is zero,
    /// row `j = r` holds `β`, and column `i = r` is zero.
    pub fn augmented_alpha(&self) -> Vec<f64> {
        let (r, k) = (self.rank, self.basis.kernels);
        let mut a = vec![0.0; (r + 1) * (r + 1) * (k + 1)];
        for j in 0..r {
            for i in 0..r {
                let base = (j * (r + 1) + i) * (k + 1);
                a[base + 1..base + k + 1].copy_from_slice(self.alpha_slice(j, i));
            }
        }
        for i in 0..r {
            let base = (r * (r + 1) + i) * (k + 1);
            a[base..base + k + 1].copy_from_slice(self.beta_slice(i));
        }
        a
    }
}

/// `Σ_idx coeffs[idx] · e^{−(idx + first)·rate·t}`.
#[inline]
pub(crate) fn exp_series(coeffs: &[f64], rate: f64, t: f64, first: usize) -> f64 {
    let step = (-rate * t).exp();
    let mut pow = if first == 0 { 1.0 } else { step };
    let mut acc = 0.0;
    for &c in coeffs {
        acc += c * pow;
        pow *= step;
    }
    acc
}
