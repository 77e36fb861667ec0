mod common;

use common::{random_instance, random_model};
use lrhawkes::alpha::{barrier_objective, project_tensors};
use lrhawkes::exec;
use lrhawkes::projection::{augmented_vector, build_quadforms, mm_update};
use lrhawkes::simulate::{generate_synthetic_config, simulate};
use lrhawkes::{build_tensors, fit, Hyperparams};

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn parallel_and_sequential_paths_agree_bitwise() {
    let (cfg, network) = generate_synthetic_config(15, 0.3, 1, false).unwrap();
    let history = simulate(&cfg, &network, (0.0, 100.0), 600, 1).unwrap();
    assert_eq!(history, exec::sequential(|| simulate(&cfg, &network, (0.0, 100.0), 600, 1).unwrap()));

    let hp = Hyperparams { max_outer_iters: 4, seed: 1, ..Hyperparams::default() };
    let par = build_tensors(&history, &network, &hp).unwrap();
    let seq = exec::sequential(|| build_tensors(&history, &network, &hp).unwrap());
    assert_eq!(par.max_abs_diff(&seq).unwrap(), 0.0);

    let model = random_model(15, 2, hp.basis(), 3);
    let stats = project_tensors(model.projection(), 2, &par).unwrap();
    let theta = stats.pack(&model);
    let a = barrier_objective(&theta, &stats, 1e-3).unwrap();
    let b = exec::sequential(|| barrier_objective(&theta, &stats, 1e-3).unwrap());
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(bits(&a.gradient), bits(&b.gradient));
    assert_eq!(bits(a.hessian.as_ref().unwrap()), bits(b.hessian.as_ref().unwrap()));

    let quad = build_quadforms(&model, &par).unwrap();
    let p = augmented_vector(&model);
    assert_eq!(bits(&mm_update(&p, &quad)), bits(&exec::sequential(|| mm_update(&p, &quad))));

    let (m1, r1) = fit(&history, &network, &hp, None).unwrap();
    let (m2, r2) = exec::sequential(|| fit(&history, &network, &hp, None).unwrap());
    assert_eq!(m1, m2);
    assert_eq!(r1.final_log_likelihood.to_bits(), r2.final_log_likelihood.to_bits());
}

#[test]
fn fits_repeat_exactly_given_the_seed() {
    let inst = random_instance(42);
    let hp = Hyperparams { max_outer_iters: 5, seed: 9, ..inst.hp.clone() };
    let (a, _) = fit(&inst.history, &inst.network, &hp, None).unwrap();
    let (b, _) = fit(&inst.history, &inst.network, &hp, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sequential_flag_is_scoped() {
    assert_eq!(exec::is_parallel(), cfg!(feature = "parallel"));
    exec::sequential(|| assert!(!exec::is_parallel()));
    assert_eq!(exec::is_parallel(), cfg!(feature = "parallel"));
}
