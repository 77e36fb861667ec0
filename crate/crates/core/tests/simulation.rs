use lrhawkes::simulate::{generate_synthetic_config, simulate};
use lrhawkes::types::Basis;
use lrhawkes::{LowRankModel, Network};

fn single_type(mu: f64, alpha: f64, delta: f64) -> LowRankModel {
    let basis = Basis { kernels: 1, gamma: 1.0, delta };
    LowRankModel::from_parts(1, 1, basis, vec![1.0], vec![alpha], vec![mu, 0.0]).unwrap()
}

#[test]
fn constant_baseline_counts_are_poisson() {
    let (mut cfg, network) = generate_synthetic_config(2, 0.0, 9, false).unwrap();
    cfg.group_of = vec![0, 1];
    cfg.nu = vec![vec![0.0; 2]; 2];
    cfg.mu_true = vec![0.01, 0.01];
    let h = 10_000;
    let history = simulate(&cfg, &network, (0.0, 100.0), h, 9).unwrap();
    let counts: Vec<f64> = history
        .realizations()
        .iter()
        .flat_map(|r| (0..2).map(move |u| r.events.iter().filter(|e| e.kind == u).count() as f64))
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // Poisson(1): the sample mean has standard deviation 1/√n.
    assert!((mean - 1.0).abs() <= 3.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() <= 0.05, "variance {var}");
}

#[test]
fn homogeneous_gaps_pass_kolmogorov_smirnov() {
    let rate = 2.0;
    let model = single_type(rate, 0.0, 1.0);
    let network = Network::empty(1).unwrap();
    let history = simulate(&model, &network, (0.0, 50.0), 200, 21).unwrap();
    let mut gaps: Vec<f64> = history
        .realizations()
        .iter()
        .flat_map(|r| r.events.windows(2).map(|w| w[1].time - w[0].time).collect::<Vec<_>>())
        .take(10_000)
        .collect();
    assert_eq!(gaps.len(), 10_000);
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len() as f64;
    let stat = gaps
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic critical value at significance 0.01.
    assert!(stat < 1.628 / n.sqrt(), "KS statistic {stat}");
}

#[test]
fn self_exciting_mean_count_matches_branching_ratio() {
    let (mu, alpha, delta, t) = (0.5, 0.5, 1.0, 100.0);
    let model = single_type(mu, alpha, delta);
    let network = Network::complete(1, true).unwrap();
    let history = simulate(&model, &network, (0.0, t), 10_000, 33).unwrap();
    let mean = history.num_events() as f64 / 10_000.0;
    let ratio: f64 = alpha / delta;
    let expected = mu * t / (1.0 - ratio);
    assert!((mean - expected).abs() <= 0.05 * expected, "{mean} vs {expected}");
    // Exact finite-window mean, including the start-up transient.
    let beta = delta * (1.0 - ratio);
    let exact = expected - mu * ratio / ((1.0 - ratio) * beta) * (1.0 - (-beta * t).exp());
    let se = (mu * t / (1.0 - ratio).powi(3) / 10_000.0).sqrt();
    assert!((mean - exact).abs() <= 4.0 * se, "{mean} vs {exact}");
}

#[test]
fn silent_network_without_baseline_has_no_events() {
    let (mut cfg, _) = generate_synthetic_config(5, 0.5, 2, false).unwrap();
    cfg.mu_true = vec![0.0; 2];
    let history = simulate(&cfg, &Network::empty(5).unwrap(), (0.0, 100.0), 50, 2).unwrap();
    assert_eq!(history.num_events(), 0);
}

#[test]
fn simulation_is_reproducible_and_valid() {
    let (cfg, network) = generate_synthetic_config(20, 0.1, 8, false).unwrap();
    let a = simulate(&cfg, &network, (0.0, 100.0), 100, 8).unwrap();
    let b = simulate(&cfg, &network, (0.0, 100.0), 100, 8).unwrap();
    assert_eq!(a, b);
    for r in a.realizations() {
        assert!(r.events.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(r.events.iter().all(|e| e.time >= 0.0 && e.time <= 100.0 && e.kind < 20));
    }
}
