//! Alternating inference driver.

use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alpha::optimize_alpha_with_epsilon;
use crate::error::{Error, Result};
use crate::likelihood::log_likelihood_tensor;
use crate::projection::optimize_projection;
use crate::tensors::{build_tensors, TensorPair};
use crate::types::{EventHistory, Hyperparams, LowRankModel, Network};

const MAX_REINITS: usize = 3;
/// Barrier weight of the first outer iteration. The weight shrinks tenfold
/// per iteration down to `hp.epsilon` (path following from a well-centered
/// start); convergence is only tested once the target weight is reached.
pub const EPSILON_START: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Alpha,
    Projection,
    Refine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub trace: Vec<TraceEntry>,
    pub outer_iters_used: usize,
    pub converged: bool,
    /// Newton (or BFGS) iterations of each kernel step.
    pub alpha_iters: Vec<usize>,
    /// Wall time of each outer iteration, seconds.
    pub wall_times: Vec<f64>,
    pub tensor_seconds: f64,
    pub reinitializations: usize,
    pub final_log_likelihood: f64,
}

/// Random strictly positive starting point.
pub fn init_params(d: usize, hp: &Hyperparams, seed: u64) -> LowRankModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LowRankModel::zeros(d, hp.rank, hp.basis());
    for p in model.projection_mut() {
        *p = rng.random_range(0.1..1.0);
    }
    let scale = 1.0 / (hp.kernels * hp.rank) as f64;
    for a in model.kernel_coefficients_mut() {
        *a = rng.random_range(0.1..1.0) * scale;
    }
    for b in model.baseline_coefficients_mut() {
        *b = rng.random_range(0.1..1.0) * scale;
    }
    model
}

/// Types that occur in the data but whose projection row vanished.
fn dead_rows(model: &LowRankModel, tensors: &TensorPair) -> Vec<usize> {
    let mut seen = vec![false; model.d()];
    for &u in tensors.event_types() {
        seen[u as usize] = true;
    }
    (0..model.d())
        .filter(|&u| seen[u] && model.projection_row(u).iter().all(|&x| x <= 0.0))
        .collect()
}

fn reseed_rows(model: &mut LowRankModel, rows: &[usize], rng: &mut ChaCha8Rng) {
    let r = model.rank();
    for &u in rows {
        for i in 0..r {
            model.projection_mut()[u * r + i] = rng.random_range(0.1..1.0);
        }
    }
}

/// Fits a model with tensors built from `history` and `network`.
pub fn fit(
    history: &EventHistory,
    network: &Network,
    hp: &Hyperparams,
    init: Option<LowRankModel>,
) -> Result<(LowRankModel, FitReport)> {
    hp.validate()?;
    if history.num_events() == 0 {
        return Err(Error::InvalidArgument("cannot fit an empty history".into()));
    }
    let start = Instant::now();
    let tensors = build_tensors(history, network, hp)?;
    let tensor_seconds = start.elapsed().as_secs_f64();
    fit_tensors(&tensors, hp, init, tensor_seconds)
}

/// Same as [`fit`] on prebuilt tensors.
pub fn fit_tensors(
    tensors: &TensorPair,
    hp: &Hyperparams,
    init: Option<LowRankModel>,
    tensor_seconds: f64,
) -> Result<(LowRankModel, FitReport)> {
    hp.validate()?;
    let d = tensors.d();
    let mut model = match init {
        Some(m) => {
            if m.d() != d || m.rank() != hp.rank || m.basis() != hp.basis() {
                return Err(Error::DimensionMismatch(
                    "initial model does not match the data or hyperparameters".into(),
                ));
            }
            m
        }
        None => init_params(d, hp, hp.seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut reinits = 0;

    let mut ll = log_likelihood_tensor(&model, tensors)?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        phase: Phase::Init,
        log_likelihood: ll,
    }];
    let mut alpha_iters = Vec::new();
    let mut wall_times = Vec::new();
    let mut converged = false;
    let mut outer = 0;

    while outer < hp.max_outer_iters {
        outer += 1;
        let t0 = Instant::now();

        let dead = dead_rows(&model, tensors);
        if !dead.is_empty() {
            if reinits >= MAX_REINITS {
                return Err(Error::InvalidArgument(format!(
                    "projection rows {dead:?} keep vanishing after {MAX_REINITS} re-initializations"
                )));
            }
            warn!("re-initializing {} vanished projection rows", dead.len());
            reseed_rows(&mut model, &dead, &mut rng);
            reinits += 1;
        }

        let epsilon = (EPSILON_START * 0.1f64.powi(outer as i32 - 1)).max(hp.epsilon);
        let (next, report) = optimize_alpha_with_epsilon(&model, tensors, hp, epsilon)?;
        if !report.converged {
            warn!("kernel step {outer} stopped after {} iterations without converging", report.iterations);
        }
        alpha_iters.push(report.iterations);
        model = next;
        let ll_alpha = log_likelihood_tensor(&model, tensors)?;
        trace.push(TraceEntry {
            iteration: outer,
            phase: Phase::Alpha,
            log_likelihood: ll_alpha,
        });

        let (next, _) = optimize_projection(&model, tensors, hp.mm_sweeps)?;
        model = next;
        let ll_proj = log_likelihood_tensor(&model, tensors)?;
        trace.push(TraceEntry {
            iteration: outer,
            phase: Phase::Projection,
            log_likelihood: ll_proj,
        });
        wall_times.push(t0.elapsed().as_secs_f64());

        let gain = (ll_proj - ll) / ll.abs().max(1.0);
        info!("outer iteration {outer}: log-likelihood {ll_proj:.6} (relative gain {gain:.3e})");
        ll = ll_proj;
        let at_target = epsilon <= hp.epsilon || hp.rel_tol == f64::INFINITY;
        if at_target && !(gain >= hp.rel_tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("fit stopped after {outer} outer iterations without reaching rel_tol");
    }

    if hp.barrier_refine {
        let (next, report) = optimize_alpha_with_epsilon(&model, tensors, hp, hp.epsilon / 10.0)?;
        alpha_iters.push(report.iterations);
        model = next;
        ll = log_likelihood_tensor(&model, tensors)?;
        trace.push(TraceEntry {
            iteration: outer,
            phase: Phase::Refine,
            log_likelihood: ll,
        });
    }

    Ok((
        model,
        FitReport {
            trace,
            outer_iters_used: outer,
            converged,
            alpha_iters,
            wall_times,
            tensor_seconds,
            reinitializations: reinits,
            final_log_likelihood: ll,
        },
    ))
}
