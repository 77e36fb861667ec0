//! Evaluation: kernel recovery, group recovery and next-event prediction.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::likelihood::intensity;
use crate::types::{EventHistory, LowRankModel, Network, Realization};

/// Uniform quadrature grid on `[0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_max: f64,
    pub n_points: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            n_points: 1000,
        }
    }
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        let n = self.n_points.max(2);
        (0..n).map(|s| self.t_max * s as f64 / (n - 1) as f64).collect()
    }
}

/// `‖f‖₂` by the trapezoidal rule on uniformly spaced samples.
fn l2_norm(values: &[f64], step: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len();
    let inner: f64 = values[1..n - 1].iter().map(|v| v * v).sum();
    let ends = 0.5 * (values[0] * values[0] + values[n - 1] * values[n - 1]);
    (step * (inner + ends)).sqrt()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, or 0 when both vanish.
pub fn pair_error(a: &[f64], b: &[f64], step: f64) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = l2_norm(a, step) + l2_norm(b, step);
    if denom == 0.0 {
        0.0
    } else {
        l2_norm(&diff, step) / denom
    }
}

/// Mean over the `r²` group pairs of the normalized L² distance between the
/// kernel families `inferred(j, i, t)` and `truth(j, i, t)` (source `j`,
/// target `i`).
pub fn normalized_l2_error<F, G>(r: usize, inferred: F, truth: G, grid: Grid) -> f64
where
    F: Fn(usize, usize, f64) -> f64,
    G: Fn(usize, usize, f64) -> f64,
{
    let ts = grid.points();
    let step = ts[1] - ts[0];
    let sample = |f: &dyn Fn(usize, usize, f64) -> f64| -> Vec<Vec<f64>> {
        (0..r * r)
            .map(|c| ts.iter().map(|&t| f(c / r, c % r, t)).collect())
            .collect()
    };
    let a = sample(&inferred);
    let b = sample(&truth);
    l2_error_sampled(r, &a, &b, step, &(0..r).collect::<Vec<_>>())
}

fn l2_error_sampled(r: usize, inferred: &[Vec<f64>], truth: &[Vec<f64>], step: f64, perm: &[usize]) -> f64 {
    let mut total = 0.0;
    for j in 0..r {
        for i in 0..r {
            let a = &inferred[perm[j] * r + perm[i]];
            total += pair_error(a, &truth[j * r + i], step);
        }
    }
    total / (r * r) as f64
}

/// Like [`normalized_l2_error`], minimized over relabelings of the inferred
/// groups (`inferred` group `σ(j)` is compared with true group `j`). Returns
/// the error and the permutation.
pub fn aligned_l2_error<F, G>(r: usize, inferred: F, truth: G, grid: Grid) -> Result<(f64, Vec<usize>)>
where
    F: Fn(usize, usize, f64) -> f64,
    G: Fn(usize, usize, f64) -> f64,
{
    if r > 8 {
        return Err(Error::InvalidArgument(format!("label alignment over {r}! permutations is not supported")));
    }
    let ts = grid.points();
    let step = ts[1] - ts[0];
    let inf: Vec<Vec<f64>> = (0..r * r)
        .map(|c| ts.iter().map(|&t| inferred(c / r, c % r, t)).collect())
        .collect();
    let tru: Vec<Vec<f64>> = (0..r * r)
        .map(|c| ts.iter().map(|&t| truth(c / r, c % r, t)).collect())
        .collect();
    let mut best = (f64::INFINITY, (0..r).collect::<Vec<_>>());
    for perm in (0..r).permutations(r) {
        let e = l2_error_sampled(r, &inf, &tru, step, &perm);
        if e < best.0 {
            best = (e, perm);
        }
    }
    Ok(best)
}

/// Cluster centers and assignment of the projection rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecovery {
    pub assignment: Vec<usize>,
    /// `clusters × r`, row-major.
    pub centers: Vec<f64>,
    pub clusters: usize,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(rows: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Option<GroupRecovery> {
    // k-means++ seeding.
    let row = |u: usize| &rows[u * dim..(u + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|u| sq_dist(row(u), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (u, &dd) in dist.iter().enumerate() {
                if x < dd {
                    chosen = u;
                    break;
                }
                x -= dd;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick).to_vec();
        for (u, dd) in dist.iter_mut().enumerate() {
            *dd = dd.min(sq_dist(row(u), &c));
        }
        centers.extend(c);
    }

    let mut assignment = vec![0usize; n];
    for iter in 0..300 {
        let mut changed = false;
        for u in 0..n {
            let best = (0..k)
                .map(|c| (c, sq_dist(row(u), &centers[c * dim..(c + 1) * dim])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|x| x.0)
                .unwrap();
            if best != assignment[u] || iter == 0 {
                changed |= best != assignment[u];
                assignment[u] = best;
            }
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for u in 0..n {
            counts[assignment[u]] += 1;
            for (s, x) in sums[assignment[u] * dim..(assignment[u] + 1) * dim].iter_mut().zip(row(u)) {
                *s += x;
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return None;
        }
        for c in 0..k {
            for x in 0..dim {
                centers[c * dim + x] = sums[c * dim + x] / counts[c] as f64;
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    let inertia = (0..n)
        .map(|u| sq_dist(row(u), &centers[assignment[u] * dim..(assignment[u] + 1) * dim]))
        .sum();
    Some(GroupRecovery {
        assignment,
        centers,
        clusters: k,
        inertia,
    })
}

/// k-means (k-means++ seeding, best inertia over `restarts`) on the rows of
/// the `d × r` projection.
pub fn recover_groups(projection: &[f64], rank: usize, clusters: usize, restarts: usize, seed: u64) -> Result<GroupRecovery> {
    if rank == 0 || projection.len() % rank != 0 {
        return Err(Error::DimensionMismatch("projection length is not a multiple of the rank".into()));
    }
    let n = projection.len() / rank;
    if clusters == 0 || clusters > n {
        return Err(Error::InvalidArgument(format!("cannot form {clusters} clusters from {n} rows")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<GroupRecovery> = None;
    let mut attempts = 0;
    let mut done = 0;
    while done < restarts.max(1) && attempts < 10 * restarts.max(1) {
        attempts += 1;
        let Some(run) = kmeans_once(projection, n, rank, clusters, &mut rng) else {
            continue;
        };
        done += 1;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("k-means produced empty clusters on every restart".into()))
}

/// Fraction of labels matching `truth` under the best relabeling.
pub fn assignment_accuracy(assignment: &[usize], truth: &[usize], labels: usize) -> f64 {
    if assignment.is_empty() {
        return 1.0;
    }
    let mut best = 0usize;
    for perm in (0..labels).permutations(labels) {
        let hits = assignment
            .iter()
            .zip(truth)
            .filter(|(&a, &t)| a < labels && perm[a] == t)
            .count();
        best = best.max(hits);
    }
    best as f64 / assignment.len() as f64
}

/// Kernel between clusters as seen at type level: an event of a type at
/// center `b` excites a type at center `a` through
/// `Σ_ij c_ai c_bj ĝ_ji(t)`.
pub fn cluster_kernel(model: &LowRankModel, groups: &GroupRecovery, b: usize, a: usize, t: f64) -> f64 {
    let r = model.rank();
    let ca = &groups.centers[a * r..(a + 1) * r];
    let cb = &groups.centers[b * r..(b + 1) * r];
    let mut acc = 0.0;
    for j in 0..r {
        for i in 0..r {
            if ca[i] == 0.0 || cb[j] == 0.0 {
                continue;
            }
            acc += ca[i] * cb[j] * model.kernel_value(j, i, t).unwrap_or(0.0);
        }
    }
    acc
}

/// Scores for the next event at time `t` of realization `h`: `λ_u(t)`.
pub fn predict_scores(model: &LowRankModel, history: &EventHistory, network: &Network, h: usize, t: f64) -> Result<Vec<f64>> {
    intensity(model, history, network, h, t)
}

/// `λ_u(t_m)` for every event `m` of `real`, from the events strictly before
/// `t_m`; computed by a single forward pass.
pub fn score_realization(model: &LowRankModel, network: &Network, real: &Realization) -> Result<Vec<Vec<f64>>> {
    if network.d() != model.d() {
        return Err(Error::DimensionMismatch("network and model disagree on d".into()));
    }
    let (d, r, k_len) = (model.d(), model.rank(), model.kernels());
    let basis = model.basis();
    // z[(u·r + j)·K + k] = Σ_{l: A[u_l][u]} P_{u_l j} e^{−kδ(t − t_l)}, k = 1..=K.
    let mut z = vec![0.0; d * r * k_len];
    let mut now = real.t_minus;
    let mut out = Vec::with_capacity(real.events.len());
    let mut m = 0;
    let events = &real.events;
    while m < events.len() {
        let t = events[m].time;
        let lag = t - now;
        if lag > 0.0 {
            let step = (-basis.delta * lag).exp();
            let mut f = Vec::with_capacity(k_len);
            let mut pow = step;
            for _ in 0..k_len {
                f.push(pow);
                pow *= step;
            }
            for chunk in z.chunks_mut(k_len) {
                for (x, &fk) in chunk.iter_mut().zip(&f) {
                    *x *= fk;
                }
            }
            now = t;
        }
        let mu: Vec<f64> = (0..r).map(|i| model.baseline_value(i, t - real.t_minus).unwrap_or(0.0)).collect();
        let scores: Vec<f64> = (0..d)
            .map(|u| {
                let pu = model.projection_row(u);
                let mut s = 0.0;
                for i in 0..r {
                    if pu[i] == 0.0 {
                        continue;
                    }
                    let mut g = mu[i];
                    for j in 0..r {
                        let zz = &z[(u * r + j) * k_len..(u * r + j + 1) * k_len];
                        g += model.alpha_slice(j, i).iter().zip(zz).map(|(a, x)| a * x).sum::<f64>();
                    }
                    s += pu[i] * g;
                }
                s
            })
            .collect();
        let mut end = m;
        while end < events.len() && events[end].time == t {
            out.push(scores.clone());
            end += 1;
        }
        for e in &events[m..end] {
            let pv = model.projection_row(e.kind);
            for &u in network.out_neighbors(e.kind) {
                for j in 0..r {
                    if pv[j] == 0.0 {
                        continue;
                    }
                    for x in &mut z[(u as usize * r + j) * k_len..(u as usize * r + j + 1) * k_len] {
                        *x += pv[j];
                    }
                }
            }
        }
        m = end;
    }
    Ok(out)
}

/// Score vectors and true types of every event in `history`.
pub fn score_history(model: &LowRankModel, network: &Network, history: &EventHistory) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let parts = exec::map(history.realizations(), |real| score_realization(model, network, real));
    let mut scores = Vec::with_capacity(history.num_events());
    for p in parts {
        scores.extend(p?);
    }
    let truth = history.realizations().iter().flat_map(|r| r.events.iter().map(|e| e.kind)).collect();
    Ok((scores, truth))
}

fn rank_counts(scores: &[f64], truth: usize) -> (usize, usize, usize) {
    let s = scores[truth];
    let (mut lower, mut ties, mut higher) = (0, 0, 0);
    for (u, &x) in scores.iter().enumerate() {
        if u == truth {
            continue;
        }
        if x < s {
            lower += 1;
        } else if x > s {
            higher += 1;
        } else {
            ties += 1;
        }
    }
    (lower, ties, higher)
}

/// Per-event one-vs-rest AUC of the true type, averaged over events; ties
/// count one half.
pub fn auc(scores: &[Vec<f64>], truth: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(Error::InvalidArgument("AUC needs at least one scored event and matching labels".into()));
    }
    let mut total = 0.0;
    for (s, &t) in scores.iter().zip(truth) {
        if s.len() < 2 {
            total += 0.5;
            continue;
        }
        let (lower, ties, _) = rank_counts(s, t);
        total += (lower as f64 + 0.5 * ties as f64) / (s.len() - 1) as f64;
    }
    Ok(total / scores.len() as f64)
}

/// Share of events whose true type is among the top `⌈fraction·d⌉` scores.
/// Ties with the true type are broken uniformly at random, in expectation.
pub fn accuracy_at(scores: &[Vec<f64>], truth: &[usize], fraction: f64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(Error::InvalidArgument("accuracy needs at least one scored event and matching labels".into()));
    }
    let mut total = 0.0;
    for (s, &t) in scores.iter().zip(truth) {
        let top = (fraction * s.len() as f64).ceil() as usize;
        let (_, ties, higher) = rank_counts(s, t);
        let hit = (top as f64 - higher as f64) / (ties + 1) as f64;
        total += hit.clamp(0.0, 1.0);
    }
    Ok(total / scores.len() as f64)
}

/// Training frequency of each type.
pub fn naive_baseline(train: &EventHistory) -> Vec<f64> {
    train.type_counts().into_iter().map(|c| c as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub events: usize,
    pub auc: f64,
    pub accuracy: f64,
    pub fraction: f64,
}

/// AUC and accuracy of the model's scores on every event of `test`.
pub fn evaluate_model(model: &LowRankModel, network: &Network, test: &EventHistory, fraction: f64) -> Result<PredictionMetrics> {
    let (scores, truth) = score_history(model, network, test)?;
    Ok(PredictionMetrics {
        events: truth.len(),
        auc: auc(&scores, &truth)?,
        accuracy: accuracy_at(&scores, &truth, fraction)?,
        fraction,
    })
}

/// AUC and accuracy of the frequency ranking learned on `train`.
pub fn evaluate_naive(train: &EventHistory, test: &EventHistory, fraction: f64) -> Result<PredictionMetrics> {
    let base = naive_baseline(train);
    let truth: Vec<usize> = test.realizations().iter().flat_map(|r| r.events.iter().map(|e| e.kind)).collect();
    let scores = vec![base; truth.len()];
    Ok(PredictionMetrics {
        events: truth.len(),
        auc: auc(&scores, &truth)?,
        accuracy: accuracy_at(&scores, &truth, fraction)?,
        fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Basis, Event};

    #[test]
    fn identical_kernels_have_zero_error() {
        let f = |j: usize, i: usize, t: f64| (j + 2 * i + 1) as f64 * (-t).exp();
        assert_eq!(normalized_l2_error(2, f, f, Grid::default()), 0.0);
    }

    #[test]
    fn zero_inferred_gives_one() {
        let f = |_: usize, _: usize, t: f64| 1.0 / (1.0 + t);
        let z = |_: usize, _: usize, _: f64| 0.0;
        assert!((normalized_l2_error(2, z, f, Grid::default()) - 1.0).abs() < 1e-15);
        assert_eq!(normalized_l2_error(2, z, z, Grid::default()), 0.0);
    }

    #[test]
    fn trapezoid_norm_of_constant() {
        let v = vec![2.0; 101];
        assert!((l2_norm(&v, 0.1) - (4.0f64 * 10.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn alignment_finds_swapped_labels() {
        let truth = |j: usize, i: usize, t: f64| [1.0, 2.0, 3.0, 4.0][j * 2 + i] * (-t).exp();
        let swapped = |j: usize, i: usize, t: f64| truth(1 - j, 1 - i, t);
        let (e, perm) = aligned_l2_error(2, swapped, truth, Grid::default()).unwrap();
        assert!(e < 1e-15);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let mut p = Vec::new();
        let truth: Vec<usize> = (0..20).map(|u| (u * 7) % 2).collect();
        for &g in &truth {
            if g == 0 {
                p.extend([1.0, 0.1]);
            } else {
                p.extend([0.2, 0.9]);
            }
        }
        let rec = recover_groups(&p, 2, 2, 5, 1).unwrap();
        assert_eq!(assignment_accuracy(&rec.assignment, &truth, 2), 1.0);
        assert!(rec.inertia < 1e-20);
    }

    #[test]
    fn auc_examples() {
        let truth = vec![0, 2];
        let perfect = vec![vec![3.0, 1.0, 0.0], vec![0.0, 1.0, 5.0]];
        assert_eq!(auc(&perfect, &truth).unwrap(), 1.0);
        let flat = vec![vec![1.0; 3]; 2];
        assert_eq!(auc(&flat, &truth).unwrap(), 0.5);
        assert_eq!(accuracy_at(&flat, &truth, 1.0).unwrap(), 1.0);
        assert!((accuracy_at(&flat, &truth, 0.3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy_at(&perfect, &truth, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn naive_orders_by_count() {
        let ev = |t: f64, k: usize| Event { time: t, kind: k };
        let h = EventHistory::new(
            3,
            vec![Realization::new(
                0.0,
                10.0,
                vec![ev(1.0, 0), ev(2.0, 0), ev(3.0, 1), ev(4.0, 0), ev(5.0, 2), ev(6.0, 1), ev(7.0, 0), ev(8.0, 0), ev(9.0, 1)],
            )],
        )
        .unwrap();
        assert_eq!(naive_baseline(&h), vec![5.0, 3.0, 1.0]);
    }

    #[test]
    fn streaming_scores_match_direct_intensity() {
        let basis = Basis {
            kernels: 3,
            gamma: 0.4,
            delta: 0.7,
        };
        let mut m = LowRankModel::zeros(4, 2, basis);
        for (c, x) in m.projection_mut().iter_mut().enumerate() {
            *x = 0.1 + 0.13 * c as f64;
        }
        for (c, x) in m.kernel_coefficients_mut().iter_mut().enumerate() {
            *x = 0.3 - 0.05 * c as f64;
        }
        for (c, x) in m.baseline_coefficients_mut().iter_mut().enumerate() {
            *x = 0.2 + 0.01 * c as f64;
        }
        let net = Network::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 0), (2, 1)]).unwrap();
        let ev = |t: f64, k: usize| Event { time: t, kind: k };
        let h = EventHistory::new(
            4,
            vec![Realization::new(0.5, 9.0, vec![ev(1.0, 0), ev(1.5, 2), ev(1.5, 1), ev(3.0, 3), ev(7.2, 0), ev(8.0, 2)])],
        )
        .unwrap();
        let fast = score_realization(&m, &net, &h.realizations()[0]).unwrap();
        for (e, s) in h.realizations()[0].events.iter().zip(&fast) {
            let slow = predict_scores(&m, &h, &net, 0, e.time).unwrap();
            for (a, b) in s.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
