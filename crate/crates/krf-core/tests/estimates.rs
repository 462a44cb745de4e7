use krf_core::estimates::{
    equivalence_report, inequality_monitors, laplacian, poincare_proxy, BoundsRecord, Classification, Label,
};
use krf_core::field::{hessian_field, Setup};
use krf_core::flow::{perturbation, run, FlowConfig};
use krf_core::model::build_model;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn cp1(nodes: usize) -> Setup {
    Setup::new(build_model("cp1").unwrap(), 12.0, nodes, 1e-4).unwrap()
}

fn record(t: f64, q: [f64; 7]) -> BoundsRecord {
    BoundsRecord { t, q1: q[0], q2: q[1], q3: q[2], q4: q[3], q5: q[4], q6: q[5], q7: q[6] }
}

#[test]
fn poincare_eigenvalue_matches_dense_solve() {
    let s = cp1(129);
    let phi = perturbation(&s, &FlowConfig { amplitude: 0.3, ..FlowConfig::default() }).unwrap();
    let field = hessian_field(&phi, &s).unwrap();
    let (mass, stiff) = laplacian(&field, &s);
    let n = stiff.n;
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for e in stiff.ptr[i]..stiff.ptr[i + 1] {
            let j = stiff.idx[e];
            a[(i, j)] = stiff.val[e] / (mass[i] * mass[j]).sqrt();
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    assert!(ev[0].abs() < 1e-8 * ev[n - 1], "kernel eigenvalue {}", ev[0]);
    let p = poincare_proxy(&field, &s).unwrap();
    assert!(((p.lambda - ev[1]) / ev[1]).abs() < 1e-6, "{} vs {}", p.lambda, ev[1]);
    assert!((p.proxy * p.lambda - 1.0).abs() < 1e-12);
}

#[test]
fn flat_series_are_all_bounded() {
    let b: Vec<BoundsRecord> =
        (0..30).map(|k| record(k as f64, [0.3, 0.3, -0.2, 0.01, 0.02, 0.05, 0.5])).collect();
    let r = equivalence_report(&b, 1.5);
    assert_eq!(r.labels, [Label::Bounded; 7]);
    assert_eq!(r.classification, Classification::AllBounded);
}

#[test]
fn growing_series_are_all_unbounded() {
    let b: Vec<BoundsRecord> = (0..30)
        .map(|k| {
            let x = 0.1 * k as f64;
            record(x, [x, x, -x, x, x, x, 2.0 * x])
        })
        .collect();
    let r = equivalence_report(&b, 1.5);
    assert_eq!(r.classification, Classification::AllUnbounded);
}

#[test]
fn split_labels_are_mixed() {
    let b: Vec<BoundsRecord> = (0..30)
        .map(|k| {
            let x = 0.1 * k as f64;
            record(x, [x, x, -0.1, 0.0, 0.0, 0.0, x + 0.1])
        })
        .collect();
    assert_eq!(equivalence_report(&b, 1.5).classification, Classification::Mixed);
}

#[test]
fn short_series_are_inconclusive() {
    let b: Vec<BoundsRecord> = (0..5).map(|k| record(k as f64, [0.0; 7])).collect();
    assert_eq!(equivalence_report(&b, 1.5).classification, Classification::Inconclusive);
}

#[test]
fn monitors_hold_on_a_converging_run() {
    let s = cp1(257);
    let traj = run(&s, FlowConfig { t_max: 10.0, ..FlowConfig::default() }).unwrap();
    let m = inequality_monitors(&traj.snapshots, 1, 1.5, 1.5);
    assert!(m.monitor("i_by_osc").unwrap().violations.is_empty());
    assert!(m.identity_residual.iter().all(|r| r.abs() < 1e-8));
    assert!(!m.delta_flag);
    assert_eq!(m.equivalence.classification, Classification::AllBounded);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bounds_records_are_consistent(seed in 0u64..500, amp in 0.05f64..1.0) {
        let s = cp1(65);
        let cfg = FlowConfig { seed, amplitude: amp, t_max: 1.0, snapshot_every: 0.25, ..FlowConfig::default() };
        let traj = run(&s, cfg).unwrap();
        for snap in &traj.snapshots {
            let b = BoundsRecord::from_snapshot(snap);
            prop_assert!((b.q7 - (b.q2 - b.q3)).abs() < 1e-12);
            prop_assert_eq!(b.q1, b.q2.abs().max(b.q3.abs()));
            prop_assert!(b.q6 >= -1e-14);
            prop_assert!(b.q6 <= b.q7 + 1e-6);
        }
    }
}
