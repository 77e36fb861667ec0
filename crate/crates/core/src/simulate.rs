//! Synthetic ground truth and simulation by thinning.
//!
//! Every simulated intensity has the low-rank shape
//! `λ_u(t) = Σ_i P_ui μ_i(t − T₋) + Σ_{l: A[u_l][u]} Σ_{ij} P_ui P_{u_l j} g_ji(t − t_l)`,
//! clamped at zero. Thinning uses the dominating rate obtained by replacing
//! every `μ_i` and `g_ji` by a non-increasing envelope, so the bound computed
//! right after the current time stays valid until the next candidate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::types::{exp_series, Event, EventHistory, LowRankModel, Network, Realization};

/// Default per-realization event cap.
pub const DEFAULT_EVENT_CAP: usize = 1_000_000;

/// Two-group synthetic truth: oscillating power-law kernels between groups
/// and constant group baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub d: usize,
    pub erdos_p: f64,
    pub r_true: usize,
    /// Periods `ω[src][dst]`, in `[1, 10]`.
    pub omega: Vec<Vec<f64>>,
    /// Amplitudes `ν[src][dst]`, in `[0, 1/50]`.
    pub nu: Vec<Vec<f64>>,
    /// Group baselines, in `[0, 0.01]`.
    pub mu_true: Vec<f64>,
    pub group_of: Vec<usize>,
    pub seed: u64,
}

/// Draws a synthetic configuration with two groups and an Erdős–Rényi
/// network on `d` types.
pub fn generate_synthetic_config(d: usize, erdos_p: f64, seed: u64, self_loops: bool) -> Result<(SyntheticConfig, Network)> {
    generate_synthetic_config_with_groups(d, erdos_p, 2, seed, self_loops)
}

pub fn generate_synthetic_config_with_groups(
    d: usize,
    erdos_p: f64,
    groups: usize,
    seed: u64,
    self_loops: bool,
) -> Result<(SyntheticConfig, Network)> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 event types, got {d}")));
    }
    if !(0.0..=1.0).contains(&erdos_p) {
        return Err(Error::InvalidArgument(format!("edge probability {erdos_p} outside [0, 1]")));
    }
    if groups == 0 {
        return Err(Error::InvalidArgument("need at least one group".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group_of: Vec<usize> = (0..d).map(|_| rng.random_range(0..groups)).collect();
    let mut edges = Vec::new();
    for v in 0..d {
        for u in 0..d {
            if u != v && rng.random_bool(erdos_p) {
                edges.push((v, u));
            }
        }
    }
    let network = Network::from_edges(d, edges)?.with_self_loops(self_loops);
    let mut grid = |lo: f64, hi: f64| -> Vec<Vec<f64>> {
        (0..groups)
            .map(|_| (0..groups).map(|_| rng.random_range(lo..=hi)).collect())
            .collect()
    };
    let omega = grid(1.0, 10.0);
    let nu = grid(0.0, 1.0 / 50.0);
    let mu_true = (0..groups).map(|_| rng.random_range(0.0..=0.01)).collect();
    Ok((
        SyntheticConfig {
            d,
            erdos_p,
            r_true: groups,
            omega,
            nu,
            mu_true,
            group_of,
            seed,
        },
        network,
    ))
}

/// `ν_ij (sin(2πt/ω_ij + (π/2)((i+j) mod 2)) + 2) / (3(t+1)²)` for source
/// group `i` and target group `j`.
pub fn true_kernel(cfg: &SyntheticConfig, i: usize, j: usize, t: f64) -> f64 {
    let phase = 0.5 * PI * ((i + j) % 2) as f64;
    cfg.nu[i][j] * ((2.0 * PI * t / cfg.omega[i][j] + phase).sin() + 2.0) / (3.0 * (t + 1.0) * (t + 1.0))
}

impl SyntheticConfig {
    /// One-hot `d × r` group indicator.
    pub fn group_projection(&self) -> Vec<f64> {
        let r = self.r_true;
        let mut p = vec![0.0; self.d * r];
        for (u, &g) in self.group_of.iter().enumerate() {
            p[u * r + g] = 1.0;
        }
        p
    }
}

/// An intensity of the low-rank shape described in the module docs.
pub trait IntensitySpec: Sync {
    fn d(&self) -> usize;
    fn rank(&self) -> usize;
    fn p(&self, u: usize, i: usize) -> f64;
    /// Group kernel from source group `j` to target group `i`.
    fn kernel(&self, j: usize, i: usize, dt: f64) -> f64;
    /// Non-increasing bound on `|kernel(j, i, ·)|` from `dt` on.
    fn kernel_envelope(&self, j: usize, i: usize, dt: f64) -> f64;
    fn baseline(&self, i: usize, tau: f64) -> f64;
    /// Non-increasing bound on `|baseline(i, ·)|` from `tau` on.
    fn baseline_envelope(&self, i: usize, tau: f64) -> f64;
}

impl IntensitySpec for SyntheticConfig {
    fn d(&self) -> usize {
        self.d
    }

    fn rank(&self) -> usize {
        self.r_true
    }

    fn p(&self, u: usize, i: usize) -> f64 {
        if self.group_of[u] == i {
            1.0
        } else {
            0.0
        }
    }

    fn kernel(&self, j: usize, i: usize, dt: f64) -> f64 {
        true_kernel(self, j, i, dt)
    }

    fn kernel_envelope(&self, j: usize, i: usize, dt: f64) -> f64 {
        self.nu[j][i] / ((dt + 1.0) * (dt + 1.0))
    }

    fn baseline(&self, i: usize, _tau: f64) -> f64 {
        self.mu_true[i]
    }

    fn baseline_envelope(&self, i: usize, _tau: f64) -> f64 {
        self.mu_true[i]
    }
}

impl IntensitySpec for LowRankModel {
    fn d(&self) -> usize {
        LowRankModel::d(self)
    }

    fn rank(&self) -> usize {
        LowRankModel::rank(self)
    }

    fn p(&self, u: usize, i: usize) -> f64 {
        LowRankModel::p(self, u, i)
    }

    fn kernel(&self, j: usize, i: usize, dt: f64) -> f64 {
        exp_series(self.alpha_slice(j, i), self.basis().delta, dt, 1)
    }

    fn kernel_envelope(&self, j: usize, i: usize, dt: f64) -> f64 {
        let delta = self.basis().delta;
        self.alpha_slice(j, i)
            .iter()
            .enumerate()
            .map(|(k, a)| a.abs() * (-((k + 1) as f64) * delta * dt).exp())
            .sum()
    }

    fn baseline(&self, i: usize, tau: f64) -> f64 {
        exp_series(self.beta_slice(i), self.basis().gamma, tau, 0)
    }

    fn baseline_envelope(&self, i: usize, tau: f64) -> f64 {
        let gamma = self.basis().gamma;
        self.beta_slice(i)
            .iter()
            .enumerate()
            .map(|(k, b)| b.abs() * (-(k as f64) * gamma * tau).exp())
            .sum()
    }
}

struct Prepared<'a, S: IntensitySpec> {
    spec: &'a S,
    network: &'a Network,
    d: usize,
    r: usize,
    p: Vec<f64>,
    /// `Σ_u P_ui`.
    col_mass: Vec<f64>,
    /// `Σ_{u ∈ out(v)} P_ui`.
    out_mass: Vec<f64>,
}

impl<'a, S: IntensitySpec> Prepared<'a, S> {
    fn new(spec: &'a S, network: &'a Network) -> Self {
        let (d, r) = (spec.d(), spec.rank());
        let mut p = vec![0.0; d * r];
        for u in 0..d {
            for i in 0..r {
                p[u * r + i] = spec.p(u, i);
            }
        }
        let mut col_mass = vec![0.0; r];
        for u in 0..d {
            for i in 0..r {
                col_mass[i] += p[u * r + i];
            }
        }
        let mut out_mass = vec![0.0; d * r];
        for v in 0..d {
            for &u in network.out_neighbors(v) {
                for i in 0..r {
                    out_mass[v * r + i] += p[u as usize * r + i];
                }
            }
        }
        Prepared {
            spec,
            network,
            d,
            r,
            p,
            col_mass,
            out_mass,
        }
    }

    fn bound(&self, t: f64, t_minus: f64, past: &[Event]) -> f64 {
        let r = self.r;
        let mut total: f64 = (0..r)
            .map(|i| self.col_mass[i] * self.spec.baseline_envelope(i, t - t_minus))
            .sum();
        for e in past {
            let v = e.kind;
            let dt = t - e.time;
            for j in 0..r {
                let pvj = self.p[v * r + j];
                if pvj == 0.0 {
                    continue;
                }
                for i in 0..r {
                    let mass = self.out_mass[v * r + i];
                    if mass != 0.0 {
                        total += pvj * mass * self.spec.kernel_envelope(j, i, dt);
                    }
                }
            }
        }
        total
    }

    fn rates(&self, t: f64, t_minus: f64, past: &[Event], out: &mut [f64]) {
        let r = self.r;
        let mu: Vec<f64> = (0..r).map(|i| self.spec.baseline(i, t - t_minus)).collect();
        for u in 0..self.d {
            out[u] = (0..r).map(|i| self.p[u * r + i] * mu[i]).sum();
        }
        let mut w = vec![0.0; r];
        for e in past {
            let v = e.kind;
            let dt = t - e.time;
            for (i, wi) in w.iter_mut().enumerate() {
                *wi = (0..r)
                    .map(|j| {
                        let pvj = self.p[v * r + j];
                        if pvj == 0.0 {
                            0.0
                        } else {
                            pvj * self.spec.kernel(j, i, dt)
                        }
                    })
                    .sum();
            }
            for &u in self.network.out_neighbors(v) {
                let u = u as usize;
                out[u] += (0..r).map(|i| self.p[u * r + i] * w[i]).sum::<f64>();
            }
        }
        for x in out.iter_mut() {
            *x = x.max(0.0);
        }
    }

    fn realization(&self, h: usize, t_minus: f64, t_plus: f64, seed: u64, cap: usize) -> Result<Realization> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(h as u64);
        let mut events: Vec<Event> = Vec::new();
        let mut rates = vec![0.0; self.d];
        let mut t = t_minus;
        loop {
            let bound = self.bound(t, t_minus, &events);
            if !(bound > 0.0) {
                break;
            }
            let u: f64 = rng.random();
            t -= (1.0 - u).ln() / bound;
            if t >= t_plus {
                break;
            }
            self.rates(t, t_minus, &events, &mut rates);
            let total: f64 = rates.iter().sum();
            let accept: f64 = rng.random::<f64>() * bound;
            if accept >= total {
                continue;
            }
            let mut acc = 0.0;
            let mut kind = self.d - 1;
            for (k, &x) in rates.iter().enumerate() {
                acc += x;
                if accept < acc {
                    kind = k;
                    break;
                }
            }
            events.push(Event { time: t, kind });
            if events.len() > cap {
                return Err(Error::Explosion { realization: h, cap });
            }
        }
        Ok(Realization::new(t_minus, t_plus, events))
    }
}

/// Simulates `realizations` independent realizations on `window`.
pub fn simulate<S: IntensitySpec>(
    spec: &S,
    network: &Network,
    window: (f64, f64),
    realizations: usize,
    seed: u64,
) -> Result<EventHistory> {
    simulate_with_cap(spec, network, window, realizations, seed, DEFAULT_EVENT_CAP)
}

pub fn simulate_with_cap<S: IntensitySpec>(
    spec: &S,
    network: &Network,
    window: (f64, f64),
    realizations: usize,
    seed: u64,
    cap: usize,
) -> Result<EventHistory> {
    let (t_minus, t_plus) = window;
    if !(t_minus.is_finite() && t_plus.is_finite() && t_minus < t_plus) {
        return Err(Error::InvalidWindow {
            realization: 0,
            t_minus,
            t_plus,
        });
    }
    if network.d() != spec.d() {
        return Err(Error::DimensionMismatch(format!(
            "network has {} types, intensity has {}",
            network.d(),
            spec.d()
        )));
    }
    let prepared = Prepared::new(spec, network);
    let reals = exec::map_range(realizations, |h| prepared.realization(h, t_minus, t_plus, seed, cap));
    let reals = reals.into_iter().collect::<Result<Vec<_>>>()?;
    EventHistory::new(spec.d(), reals)
}
