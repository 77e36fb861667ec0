//! Intensities and log-likelihoods.
//!
//! The tensor path evaluates the log-likelihood from [`TensorPair`] in
//! `O(nnz · r² K)`. The direct path sums the low-rank intensity over all past
//! events and integrates the compensator in closed form; it is quadratic in
//! the realization length and serves as the reference.
//!
//! A non-positive intensity at any observed event makes the log-likelihood
//! `f64::NEG_INFINITY`. Callers treat that value as "infeasible" rather than
//! as an error.

use crate::error::{Error, Result};
use crate::exec;
use crate::tensors::TensorPair;
use crate::types::{exp_integral_unchecked, exp_series, EventHistory, LowRankModel, Network};

fn check_model(model: &LowRankModel, d: usize, what: &str) -> Result<()> {
    if model.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "model has d = {}, {what} has d = {d}",
            model.d()
        )));
    }
    Ok(())
}

/// `λ_u(t)` for every type `u` of realization `h`, from the events strictly
/// before `t`.
pub fn intensity(
    model: &LowRankModel,
    history: &EventHistory,
    network: &Network,
    h: usize,
    t: f64,
) -> Result<Vec<f64>> {
    check_model(model, history.d(), "history")?;
    check_model(model, network.d(), "network")?;
    let real = history.realizations().get(h).ok_or(Error::IndexOutOfRange {
        index: h,
        size: history.realizations().len(),
    })?;
    if !(t >= real.t_minus && t <= real.t_plus) {
        return Err(Error::InvalidArgument(format!(
            "time {t} outside window [{}, {}] of realization {h}",
            real.t_minus, real.t_plus
        )));
    }
    let (d, r) = (model.d(), model.rank());
    let basis = model.basis();
    // Per-target group excitation: w_i = Σ_j P_{u_l j} ĝ_{ji}(t − t_l).
    let mut group_rate = vec![0.0; r];
    for i in 0..r {
        group_rate[i] = exp_series(model.beta_slice(i), basis.gamma, t - real.t_minus, 0);
    }
    let mut rates: Vec<f64> = (0..d)
        .map(|u| (0..r).map(|i| model.p(u, i) * group_rate[i]).sum())
        .collect();
    let mut w = vec![0.0; r];
    for e in real.events.iter().take_while(|e| e.time < t) {
        let lag = t - e.time;
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = (0..r)
                .map(|j| model.p(e.kind, j) * exp_series(model.alpha_slice(j, i), basis.delta, lag, 1))
                .sum();
        }
        for &u in network.out_neighbors(e.kind) {
            let u = u as usize;
            rates[u] += (0..r).map(|i| model.p(u, i) * w[i]).sum::<f64>();
        }
    }
    Ok(rates)
}

/// Log-likelihood by direct summation over the history.
pub fn log_likelihood_direct(model: &LowRankModel, history: &EventHistory, network: &Network) -> Result<f64> {
    check_model(model, history.d(), "history")?;
    check_model(model, network.d(), "network")?;
    let (d, r, k_len) = (model.d(), model.rank(), model.kernels());
    let basis = model.basis();
    let mut total = 0.0;
    for (h, real) in history.realizations().iter().enumerate() {
        for e in &real.events {
            let rate = intensity(model, history, network, h, e.time)?[e.kind];
            if !(rate > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            total += rate.ln();
        }
        // Baseline compensator: Σ_{u,i} P_ui ∫ μ̂_i.
        let window = real.t_plus - real.t_minus;
        for i in 0..r {
            let integral: f64 = (0..=k_len)
                .map(|k| model.beta(i, k) * exp_integral_unchecked(k, basis.gamma, window))
                .sum();
            let mass: f64 = (0..d).map(|u| model.p(u, i)).sum();
            total -= mass * integral;
        }
        // Triggered compensator of every event on each of its targets.
        for e in &real.events {
            let horizon = real.t_plus - e.time;
            for &u in network.out_neighbors(e.kind) {
                let u = u as usize;
                for i in 0..r {
                    for j in 0..r {
                        let integral: f64 = (1..=k_len)
                            .map(|k| model.alpha(j, i, k) * exp_integral_unchecked(k, basis.delta, horizon))
                            .sum();
                        total -= model.p(u, i) * model.p(e.kind, j) * integral;
                    }
                }
            }
        }
    }
    Ok(total)
}

/// `λ_{u_m}(t_m)` from the tensors.
#[inline]
pub(crate) fn event_intensity(model: &LowRankModel, tensors: &TensorPair, m: usize) -> f64 {
    let r = model.rank();
    let k_len = model.kernels();
    let u = tensors.event_type(m);
    let pu = model.projection_row(u);
    let base = tensors.base_decay(m);
    let mut rate = 0.0;
    for i in 0..r {
        if pu[i] != 0.0 {
            let mu: f64 = model.beta_slice(i).iter().zip(base).map(|(b, e)| b * e).sum();
            rate += pu[i] * mu;
        }
    }
    let (src, vals) = tensors.row(m);
    for (a, &v) in src.iter().enumerate() {
        let dv = &vals[a * k_len..(a + 1) * k_len];
        let pv = model.projection_row(v as usize);
        for j in 0..r {
            if pv[j] == 0.0 {
                continue;
            }
            for i in 0..r {
                if pu[i] == 0.0 {
                    continue;
                }
                let g: f64 = model.alpha_slice(j, i).iter().zip(dv).map(|(a, x)| a * x).sum();
                rate += pu[i] * pv[j] * g;
            }
        }
    }
    rate
}

/// Intensity at every event, in tensor order.
pub fn event_intensities(model: &LowRankModel, tensors: &TensorPair) -> Result<Vec<f64>> {
    check_model(model, tensors.d(), "tensors")?;
    check_basis(model, tensors)?;
    let blocks = tensors.event_blocks();
    let parts = exec::map(&blocks, |range| {
        range
            .clone()
            .map(|m| event_intensity(model, tensors, m))
            .collect::<Vec<_>>()
    });
    Ok(parts.into_iter().flatten().collect())
}

fn check_basis(model: &LowRankModel, tensors: &TensorPair) -> Result<()> {
    if model.basis() != tensors.basis() {
        return Err(Error::DimensionMismatch(format!(
            "model basis {:?} differs from tensor basis {:?}",
            model.basis(),
            tensors.basis()
        )));
    }
    Ok(())
}

/// Total compensator `Σ_h ∫ Σ_u λ_u` from the tensors.
pub fn compensator_tensor(model: &LowRankModel, tensors: &TensorPair) -> f64 {
    let (d, r, k_len) = (model.d(), model.rank(), model.kernels());
    let (src_agg, base_agg) = tensors.aggregate_compensator();
    let network = tensors.network();
    let mut total = 0.0;
    for i in 0..r {
        let mass: f64 = (0..d).map(|u| model.p(u, i)).sum();
        let integral: f64 = model.beta_slice(i).iter().zip(&base_agg).map(|(b, x)| b * x).sum();
        total += mass * integral;
    }
    let mut reach = vec![0.0; r];
    for v in 0..d {
        let bv = &src_agg[v * k_len..(v + 1) * k_len];
        if bv.iter().all(|&x| x == 0.0) {
            continue;
        }
        reach.iter_mut().for_each(|x| *x = 0.0);
        for &u in network.out_neighbors(v) {
            for (i, x) in reach.iter_mut().enumerate() {
                *x += model.p(u as usize, i);
            }
        }
        for j in 0..r {
            let pvj = model.p(v, j);
            if pvj == 0.0 {
                continue;
            }
            for i in 0..r {
                let integral: f64 = model.alpha_slice(j, i).iter().zip(bv).map(|(a, x)| a * x).sum();
                total += pvj * reach[i] * integral;
            }
        }
    }
    total
}

/// Log-likelihood from the sparse tensors.
pub fn log_likelihood_tensor(model: &LowRankModel, tensors: &TensorPair) -> Result<f64> {
    check_model(model, tensors.d(), "tensors")?;
    check_basis(model, tensors)?;
    let blocks = tensors.event_blocks();
    let parts = exec::map(&blocks, |range| {
        let mut acc = 0.0;
        for m in range.clone() {
            let rate = event_intensity(model, tensors, m);
            if !(rate > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc += rate.ln();
        }
        acc
    });
    let mut total = 0.0;
    for p in parts {
        if p == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        total += p;
    }
    Ok(total - compensator_tensor(model, tensors))
}
