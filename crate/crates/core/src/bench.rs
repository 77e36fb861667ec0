//! Scaling and rank-sensitivity harness.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{aligned_l2_error, assignment_accuracy, cluster_kernel, evaluate_model, recover_groups, Grid};
use crate::fit::{fit_tensors, init_params};
use crate::io::csv_writer;
use crate::simulate::{generate_synthetic_config, simulate, true_kernel, SyntheticConfig};
use crate::tensors::build_tensors;
use crate::types::{EventHistory, Hyperparams, Network, Realization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub d: usize,
    pub erdos_p: f64,
    pub window: f64,
    pub seed: u64,
    /// Timed repetitions per size (a warm-up run is added and discarded).
    pub reps: usize,
    pub hyperparams: Hyperparams,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            d: 50,
            erdos_p: 0.1,
            window: 100.0,
            seed: 1,
            reps: 3,
            hyperparams: Hyperparams {
                max_outer_iters: 1,
                max_newton_iters: 5,
                newton_tol: 0.0,
                mm_sweeps: 5,
                ..Hyperparams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub d: usize,
    pub realizations: usize,
    pub build_seconds: f64,
    pub iter_seconds: f64,
}

impl ScalingRow {
    pub fn total_seconds(&self) -> f64 {
        self.build_seconds + self.iter_seconds
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Leading realizations holding at least `target` events in total.
fn prefix_with_events(pool: &[Realization], target: usize) -> Option<Vec<Realization>> {
    let mut total = 0;
    for (h, r) in pool.iter().enumerate() {
        total += r.len();
        if total >= target {
            return Some(pool[..=h].to_vec());
        }
    }
    None
}

/// Times tensor construction and one outer iteration (fixed number of Newton
/// steps) on synthetic histories of increasing size. Histories are prefixes of
/// one simulated pool, so every size sees the same process.
pub fn scaling_run(sizes: &[usize], cfg: &ScalingConfig) -> Result<Vec<ScalingRow>> {
    if sizes.is_empty() {
        return Ok(Vec::new());
    }
    let (truth, network) = generate_synthetic_config(cfg.d, cfg.erdos_p, cfg.seed, false)?;
    let target = *sizes.iter().max().expect("non-empty");
    let pilot = simulate(&truth, &network, (0.0, cfg.window), 500, cfg.seed)?;
    let per_real = (pilot.num_events() as f64 / 500.0).max(1e-3);
    let pool_size = ((target as f64 / per_real) * 1.2).ceil() as usize + 10;
    let pool = simulate(&truth, &network, (0.0, cfg.window), pool_size, cfg.seed)?.into_realizations();

    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let reals = prefix_with_events(&pool, n)
            .ok_or_else(|| Error::InvalidArgument(format!("simulated pool holds fewer than {n} events")))?;
        let history = EventHistory::new(cfg.d, reals)?;
        let (build, iter) = time_one(&history, &network, cfg)?;
        rows.push(ScalingRow {
            n: history.num_events(),
            d: cfg.d,
            realizations: history.realizations().len(),
            build_seconds: build,
            iter_seconds: iter,
        });
    }
    Ok(rows)
}

fn time_one(history: &EventHistory, network: &Network, cfg: &ScalingConfig) -> Result<(f64, f64)> {
    let hp = &cfg.hyperparams;
    let mut builds = Vec::new();
    let mut iters = Vec::new();
    for rep in 0..=cfg.reps.max(1) {
        let t0 = Instant::now();
        let tensors = build_tensors(history, network, hp)?;
        let build = t0.elapsed().as_secs_f64();
        let init = init_params(history.d(), hp, hp.seed);
        let t1 = Instant::now();
        fit_tensors(&tensors, hp, Some(init), build)?;
        let iter = t1.elapsed().as_secs_f64();
        if rep > 0 {
            builds.push(build);
            iters.push(iter);
        }
    }
    Ok((median(builds), median(iters)))
}

pub fn write_scaling_csv(rows: &[ScalingRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["n", "d", "realizations", "build_seconds", "iter_seconds"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.d.to_string(),
            r.realizations.to_string(),
            r.build_seconds.to_string(),
            r.iter_seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    pub log_likelihood: f64,
    pub outer_iters: usize,
    pub fit_seconds: f64,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub l2: Option<f64>,
    pub group_accuracy: Option<f64>,
}

/// Ground truth used to score kernel and group recovery.
pub struct Truth<'a> {
    pub config: &'a SyntheticConfig,
    pub grid: Grid,
}

/// Fits one model per rank with the same seed and reports likelihood,
/// held-out prediction quality (when `test` is given) and kernel/group
/// recovery (when `truth` is given).
pub fn rank_sweep(
    train: &EventHistory,
    test: Option<&EventHistory>,
    network: &Network,
    hp: &Hyperparams,
    ranks: &[usize],
    truth: Option<&Truth<'_>>,
) -> Result<Vec<RankRow>> {
    let tensors = build_tensors(train, network, hp)?;
    let mut rows = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let hp_r = Hyperparams { rank, ..hp.clone() };
        let start = Instant::now();
        let (model, report) = fit_tensors(&tensors, &hp_r, None, 0.0)?;
        let fit_seconds = start.elapsed().as_secs_f64();
        let (auc, accuracy) = match test {
            Some(t) => {
                let m = evaluate_model(&model, network, t, 0.3)?;
                (Some(m.auc), Some(m.accuracy))
            }
            None => (None, None),
        };
        let (l2, group_accuracy) = match truth {
            Some(tr) => {
                let k = tr.config.r_true;
                let groups = recover_groups(model.projection(), rank, k, 10, hp.seed)?;
                let (err, _) = aligned_l2_error(
                    k,
                    |j, i, t| cluster_kernel(&model, &groups, j, i, t),
                    |j, i, t| true_kernel(tr.config, j, i, t),
                    tr.grid,
                )?;
                (Some(err), Some(assignment_accuracy(&groups.assignment, &tr.config.group_of, k)))
            }
            None => (None, None),
        };
        rows.push(RankRow {
            rank,
            log_likelihood: report.final_log_likelihood,
            outer_iters: report.outer_iters_used,
            fit_seconds,
            auc,
            accuracy,
            l2,
            group_accuracy,
        });
    }
    Ok(rows)
}

pub fn write_rank_csv(rows: &[RankRow], path: &Path) -> Result<()> {
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| v.to_string());
    let mut w = csv_writer(path)?;
    w.write_record(["rank", "log_likelihood", "outer_iters", "fit_seconds", "auc", "accuracy", "l2", "group_accuracy"])?;
    for r in rows {
        w.write_record([
            r.rank.to_string(),
            r.log_likelihood.to_string(),
            r.outer_iters.to_string(),
            r.fit_seconds.to_string(),
            opt(r.auc),
            opt(r.accuracy),
            opt(r.l2),
            opt(r.group_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_size_list_gives_empty_table() {
        assert!(scaling_run(&[], &ScalingConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn prefix_reaches_target() {
        let r = |n: usize| Realization::new(0.0, 1.0, vec![crate::types::Event { time: 0.5, kind: 0 }; n]);
        let pool = vec![r(3), r(0), r(4), r(2)];
        assert_eq!(prefix_with_events(&pool, 5).unwrap().len(), 3);
        assert!(prefix_with_events(&pool, 100).is_none());
    }
}
