use krf_core::field::{hessian_field, Measure, Setup};
use krf_core::flow::{
    bisect_constant, init_state, perturbation, rhs, run, C0Policy, Flow, FlowConfig, Outcome, Scheme,
};
use krf_core::model::build_model;

fn cp1(nodes: usize) -> Setup {
    Setup::new(build_model("cp1").unwrap(), 12.0, nodes, 1e-4).unwrap()
}

fn cp1_ke(nodes: usize) -> Setup {
    let model = build_model("cp1").unwrap().with_ke_reference().unwrap();
    Setup::new(model, 12.0, nodes, 1e-4).unwrap()
}

fn short(t_max: f64) -> FlowConfig {
    FlowConfig { t_max, snapshot_every: 0.25, ..FlowConfig::default() }
}

#[test]
fn rhs_is_log_ratio_minus_reference_potential_plus_phi() {
    let setup = cp1(65);
    let phi = perturbation(&setup, &FlowConfig { amplitude: 0.4, ..FlowConfig::default() }).unwrap();
    let field = hessian_field(&phi, &setup).unwrap();
    let masses = setup.masses(&phi);
    let got = rhs(&field, &setup);
    for i in 0..setup.len() {
        let want = (masses[i] / setup.reference.mass0[i]).ln() - setup.reference.h_ref[i] + phi[i];
        assert!((got[i] - want).abs() < 1e-13, "node {i}: {} vs {want}", got[i]);
    }
}

#[test]
fn unperturbed_start_moves_against_reference_potential() {
    let setup = cp1(129);
    let cfg = FlowConfig { amplitude: 0.0, c0_policy: C0Policy::Zero, ..FlowConfig::default() };
    let (state, c0) = init_state(&setup, &cfg).unwrap();
    assert_eq!(c0, 0.0);
    let phidot = state.phidot(&setup).unwrap();
    for (v, h) in phidot.iter().zip(&setup.reference.h_ref) {
        assert!((v + h).abs() < 1e-12);
    }
}

#[test]
fn ke_reference_is_stationary() {
    let setup = cp1_ke(129);
    let cfg = FlowConfig {
        amplitude: 0.0,
        c0_policy: C0Policy::Zero,
        dt: 0.01,
        t_max: 1.0,
        snapshot_every: 0.1,
        ..FlowConfig::default()
    };
    let traj = run(&setup, cfg).unwrap();
    for s in &traj.snapshots {
        assert!(s.sup_phi.abs() < 1e-10 && s.inf_phi.abs() < 1e-10, "t={} sup={} inf={}", s.t, s.sup_phi, s.inf_phi);
    }
}

#[test]
fn constants_grow_like_exp_t() {
    let imex = FlowConfig { dt: 0.05, ..FlowConfig::default() };
    assert!((imex.growth(1) - 0.05f64.exp()).abs() < 1e-15);
    let rk = FlowConfig { dt: 0.05, scheme: Scheme::Rk4, ..FlowConfig::default() };
    assert!((rk.growth(1) - 0.05f64.exp()).abs() < 1e-8);
    let h = 0.0125f64;
    let p = 1.0 + h + h * h / 2.0 + h * h * h / 6.0 + h * h * h * h / 24.0;
    assert!((rk.growth(4) - p.powi(4)).abs() < 1e-15);
}

#[test]
fn added_constant_grows_like_exp_t_on_ke_reference() {
    let setup = cp1_ke(129);
    let cfg = FlowConfig {
        amplitude: 0.0,
        c0_policy: C0Policy::Zero,
        dt: 0.01,
        t_max: 1.0,
        snapshot_every: 0.5,
        ..FlowConfig::default()
    };
    let end = |a0: f64| {
        let mut flow = Flow::new(&setup, cfg.clone()).unwrap();
        flow.state.a += a0;
        flow.run_to_end();
        flow.state.a
    };
    let shift = end(1e-3) - end(0.0);
    assert!((shift - 1e-3 * 1f64.exp()).abs() < 1e-15, "shift = {shift}");
}

#[test]
fn bisected_constant_lies_in_range_and_is_deterministic() {
    let setup = cp1(65);
    let cfg = FlowConfig { c0_policy: C0Policy::Bisect, bisect_probe: 1.0, ..FlowConfig::default() };
    let (state, _) = init_state(&setup, &FlowConfig { c0_policy: C0Policy::Zero, ..cfg.clone() }).unwrap();
    let a = bisect_constant(&setup, &cfg, &state.psi, state.a).unwrap();
    let b = bisect_constant(&setup, &cfg, &state.psi, state.a).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!(a.abs() <= cfg.bisect_range);
}

#[test]
fn energies_do_not_increase_on_a_short_run() {
    let setup = cp1(129);
    let traj = run(&setup, short(3.0)).unwrap();
    for w in traj.energies.windows(2) {
        assert!(w[1].f - w[0].f <= 1e-8, "F rose at t={}", w[1].t);
        assert!(w[1].nu - w[0].nu <= 1e-8, "nu rose at t={}", w[1].t);
    }
}

#[test]
fn volume_is_conserved() {
    let setup = cp1(129);
    let traj = run(&setup, short(3.0)).unwrap();
    for s in &traj.snapshots {
        assert!(s.vol_err.abs() < 1e-10, "t={} vol_err={}", s.t, s.vol_err);
    }
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    let setup = cp1(129);
    let cfg = FlowConfig { checkpoint_every: 17, ..short(2.0) };
    let whole = run(&setup, cfg.clone()).unwrap();
    let mut first = Flow::new(&setup, cfg.clone()).unwrap();
    for _ in 0..17 {
        first.advance();
    }
    let cp = first.checkpoint();
    let mut second = Flow::resume(&setup, cfg, cp).unwrap();
    second.run_to_end();
    let resumed = second.finish();
    assert_eq!(whole.snapshots, resumed.snapshots);
    assert_eq!(whole.energies, resumed.energies);
}

#[test]
fn symmetrization_is_idempotent_and_fixes_reference_data() {
    let model = build_model("p1xp1").unwrap();
    let setup = Setup::new(model, 8.0, 41, 1.0).unwrap();
    let phi = perturbation(&setup, &FlowConfig { symmetrize: false, ..FlowConfig::default() }).unwrap();
    let once = setup.symmetrize(&phi);
    let twice = setup.symmetrize(&once);
    for (a, b) in once.iter().zip(&twice) {
        assert!((a - b).abs() < 1e-12);
    }
    let h = setup.symmetrize(&setup.reference.h_ref);
    for (a, b) in h.iter().zip(&setup.reference.h_ref) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn reference_mean_of_split_part_vanishes() {
    let setup = cp1(129);
    let (state, _) = init_state(&setup, &FlowConfig::default()).unwrap();
    let field = hessian_field(&state.psi, &setup).unwrap();
    assert!(setup.integrate(&state.psi, Measure::Reference, &field).abs() < 1e-14);
}

#[test]
fn converges_on_cp1() {
    let setup = cp1(257);
    let traj = run(&setup, FlowConfig { t_max: 20.0, ..FlowConfig::default() }).unwrap();
    assert_eq!(traj.outcome, Outcome::ConvergedKe, "{}", traj.message);
    assert!(traj.rate.unwrap() > 0.0);
}
