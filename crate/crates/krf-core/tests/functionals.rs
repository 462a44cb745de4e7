use krf_core::field::{hessian_field, Setup};
use krf_core::flow::{perturbation, FlowConfig};
use krf_core::functionals::{
    alpha_integral, compute_f, compute_i, compute_j, compute_nu, delta_sweep, delta_sweep_from, properness_scatter,
    Properness,
};
use krf_core::model::build_model;
use proptest::prelude::*;

fn setup(name: &str, half_width: f64, nodes: usize) -> Setup {
    Setup::new(build_model(name).unwrap(), half_width, nodes, 1.0).unwrap()
}

fn sample(setup: &Setup, seed: u64, amplitude: f64) -> Vec<f64> {
    perturbation(setup, &FlowConfig { seed, amplitude, symmetrize: false, ..FlowConfig::default() }).unwrap()
}

#[test]
fn alpha_integral_is_one_at_zero_delta_and_for_constants() {
    let s = setup("cp1", 12.0, 129);
    let phi = sample(&s, 3, 0.5);
    assert!((alpha_integral(&phi, &s, 0.0) - 1.0).abs() < 1e-14);
    let c = vec![0.7; s.len()];
    for d in [0.1, 0.5, 1.5] {
        assert!((alpha_integral(&c, &s, d) - 1.0).abs() < 1e-14);
    }
}

#[test]
fn sweep_of_constants_reaches_the_top_of_the_grid() {
    let s = setup("cp1", 12.0, 129);
    let deltas = FlowConfig::default().deltas;
    let traj = vec![vec![0.0; s.len()], vec![-2.0; s.len()]];
    let r = delta_sweep(&traj, &s, &deltas, 10.0);
    assert_eq!(r.alpha_hat, *deltas.last().unwrap());
    assert!(r.threshold_passed);
    assert_eq!(r.threshold, 0.5);
}

#[test]
fn sweep_stops_at_first_delta_over_budget() {
    let integrals = vec![vec![1.0, 2.0, 9.0, 50.0], vec![1.5, 3.0, 4.0, 5.0]];
    let r = delta_sweep_from(&integrals, &[0.25, 0.5, 0.75, 1.0], 8.0, 2);
    assert_eq!(r.sup_integrals, vec![1.5, 3.0, 9.0, 50.0]);
    assert_eq!(r.alpha_hat, 0.5);
    assert!(!r.threshold_passed);
}

#[test]
fn energy_functionals_vanish_at_the_reference() {
    let s = setup("cp1", 12.0, 129);
    let f = hessian_field(&vec![0.0; s.len()], &s).unwrap();
    assert!(compute_i(&f, &s).value.abs() < 1e-14);
    assert!(compute_j(&f, &s).abs() < 1e-14);
}

#[test]
fn energy_gap_uses_both_forms() {
    let s = setup("p1xp1", 10.0, 41);
    let phi = sample(&s, 1, 0.5);
    let f = hessian_field(&phi, &s).unwrap();
    let i = compute_i(&f, &s);
    assert!(i.value > 0.0);
    assert!(i.relative_gap < 1e-6, "gap {}", i.relative_gap);
    assert!(((i.value - i.dirichlet) / i.value).abs() <= i.relative_gap + 1e-15);
}

#[test]
fn properness_flags_follow_the_final_slope() {
    let t: Vec<f64> = (0..30).map(|k| k as f64).collect();
    let i = vec![0.1; 30];
    let plateau: Vec<f64> = t.iter().map(|x| (-x).exp()).collect();
    let falling: Vec<f64> = t.iter().map(|x| -0.5 * x).collect();
    let (pairs, flag) = properness_scatter(&t, &i, &plateau);
    assert_eq!(pairs.len(), 30);
    assert_eq!(flag, Properness::Consistent);
    assert_eq!(properness_scatter(&t, &i, &falling).1, Properness::Violating);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn alpha_integral_is_nondecreasing_in_delta(seed in 0u64..1000, amp in 0.05f64..1.0) {
        let s = setup("cp1", 12.0, 65);
        let phi = sample(&s, seed, amp);
        let a: Vec<f64> = (0..=30).map(|k| alpha_integral(&phi, &s, k as f64 * 0.05)).collect();
        for w in a.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn j_over_i_lies_between_the_dimension_bounds(seed in 0u64..1000, amp in 0.05f64..1.0) {
        let s = setup("p1xp1", 8.0, 25);
        let phi = sample(&s, seed, amp);
        let f = hessian_field(&phi, &s).unwrap();
        let i = compute_i(&f, &s).value;
        let j = compute_j(&f, &s);
        prop_assume!(i > 1e-8);
        prop_assert!(j / i >= 1.0 / 3.0 - 1e-9 && j / i <= 2.0 / 3.0 + 1e-9, "J/I = {}", j / i);
    }

    #[test]
    fn functionals_ignore_added_constants(seed in 0u64..1000, c in -5.0f64..5.0) {
        let s = setup("cp1", 12.0, 65);
        let phi = sample(&s, seed, 0.5);
        let shifted: Vec<f64> = phi.iter().map(|p| p + c).collect();
        let (a, b) = (hessian_field(&phi, &s).unwrap(), hessian_field(&shifted, &s).unwrap());
        let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(1e-300);
        prop_assert!(rel(compute_f(&a, &s), compute_f(&b, &s)) < 1e-10);
        prop_assert!(rel(compute_nu(&a, &s), compute_nu(&b, &s)) < 1e-10);
        prop_assert!((compute_i(&a, &s).value - compute_i(&b, &s).value).abs() < 1e-12);
    }
}
