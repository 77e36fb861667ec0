#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lrhawkes::types::Basis;
use lrhawkes::{Event, EventHistory, Hyperparams, LowRankModel, Network, Realization};

pub struct Instance {
    pub history: EventHistory,
    pub network: Network,
    pub hp: Hyperparams,
}

/// Random history on a random Erdős network: H ≤ 5, n_h ≤ 50, d ≤ 10, K ≤ 4.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(1..=10);
    let p = rng.random_range(0.0..=1.0);
    let self_loops = rng.random_bool(0.5);
    let edges: Vec<(usize, usize)> = (0..d)
        .flat_map(|u| (0..d).map(move |v| (u, v)))
        .filter(|&(u, v)| if u == v { self_loops } else { rng.random_bool(p) })
        .collect();
    let network = Network::from_edges(d, edges).unwrap();
    let reals = (0..rng.random_range(1..=5))
        .map(|_| {
            let t_minus = rng.random_range(-5.0..5.0);
            let t_plus = t_minus + rng.random_range(0.5..20.0);
            let mut times: Vec<f64> = (0..rng.random_range(0..=50))
                .map(|_| rng.random_range(t_minus..t_plus))
                .collect();
            times.sort_by(f64::total_cmp);
            let events = times
                .into_iter()
                .map(|time| Event { time, kind: rng.random_range(0..d) })
                .collect();
            Realization::new(t_minus, t_plus, events)
        })
        .collect();
    let history = EventHistory::new(d, reals).unwrap();
    let hp = Hyperparams {
        kernels: rng.random_range(1..=4),
        rank: rng.random_range(1..=3),
        gamma: rng.random_range(0.1..2.0),
        delta: rng.random_range(0.1..2.0),
        ..Hyperparams::default()
    };
    Instance { history, network, hp }
}

/// Random model with a nonnegative projection (some exact zeros) and positive
/// coefficients, so every rate is positive.
pub fn random_model(d: usize, rank: usize, basis: Basis, seed: u64) -> LowRankModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut projection: Vec<f64> = (0..d * rank)
        .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) })
        .collect();
    for row in projection.chunks_mut(rank) {
        if row.iter().all(|&x| x == 0.0) {
            row[0] = 0.5;
        }
    }
    let kernel = (0..rank * rank * basis.kernels).map(|_| rng.random_range(0.0..0.5)).collect();
    let baseline = (0..rank * (basis.kernels + 1)).map(|_| rng.random_range(0.01..0.5)).collect();
    LowRankModel::from_parts(d, rank, basis, projection, kernel, baseline).unwrap()
}
