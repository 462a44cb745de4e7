use std::process::ExitCode;
use std::time::Instant;

use krf_core::estimates::{Classification, MonitorKind};
use krf_core::field::{hessian_field, ricci_potential, Measure, Setup};
use krf_core::flow::{perturbation, C0Policy, FlowConfig, Outcome, Scheme};
use krf_core::functionals::{alpha_integral, compute_f, compute_i, compute_j, compute_nu};
use krflow::config::ExperimentConfig;
use krflow::experiment::{analyze, build_setup, integrate, run_experiment, RunResult};
use krflow::sweep::sweep;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Named {
    name: &'static str,
    result: RunResult,
    secs: f64,
}

struct Verdicts {
    lines: Vec<(usize, &'static str, bool, String)>,
}

impl Verdicts {
    fn add(&mut self, k: usize, name: &'static str, pass: bool, detail: String) {
        println!("criterion {k:2} {name}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((k, name, pass, detail));
    }
}

fn cfg(preset: &str, edit: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut c = ExperimentConfig::for_preset(preset).expect("built-in preset");
    edit(&mut c);
    c
}

fn execute(name: &'static str, c: &ExperimentConfig) -> Named {
    let start = Instant::now();
    let setup = build_setup(c).expect("setup");
    let traj = integrate(c, &setup, None).expect("integrate");
    let secs = start.elapsed().as_secs_f64();
    let result = analyze(c, &setup, traj, secs);
    println!(
        "  run {name}: {} in {secs:.1} s, {} snapshots, classification {}",
        result.summary.outcome, result.summary.snapshots, result.summary.classification
    );
    Named { name, result, secs }
}

/// Slope of a least-squares line through the final third of `(t, y)`.
fn final_third_slope(t: &[f64], y: &[f64]) -> f64 {
    let s = t.len() - t.len().div_ceil(3);
    let (t, y) = (&t[s..], &y[s..]);
    let m = t.len() as f64;
    if m < 2.0 {
        return 0.0;
    }
    let (mt, my) = (t.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxy: f64 = t.iter().zip(y).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    sxy / sxx
}

struct Sampled {
    ref_norm: f64,
    ev_norm: f64,
    gap: f64,
    gauge_f: f64,
    gauge_nu: f64,
    ratio_lo: f64,
    ratio_hi: f64,
    skipped: usize,
}

fn sample_potentials(setup: &Setup, count: u64) -> Sampled {
    let r = &setup.reference;
    let ref_field = hessian_field(&vec![0.0; setup.len()], setup).expect("reference field");
    let e: Vec<f64> = r.h_ref.iter().map(|h| h.exp() - 1.0).collect();
    let ref_norm = (setup.integrate(&e, Measure::Reference, &ref_field) / r.v_red).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Sampled {
        ref_norm,
        ev_norm: 0.0,
        gap: 0.0,
        gauge_f: 0.0,
        gauge_nu: 0.0,
        ratio_lo: f64::INFINITY,
        ratio_hi: f64::NEG_INFINITY,
        skipped: 0,
    };
    let n = setup.n() as f64;
    for seed in 0..count {
        let fc = FlowConfig {
            seed,
            amplitude: rng.gen_range(0.05..1.0),
            bumps: rng.gen_range(1..6),
            symmetrize: false,
            ..FlowConfig::default()
        };
        let phi = perturbation(setup, &fc).expect("admissible sample");
        let field = hessian_field(&phi, setup).expect("field");
        let (h, _) = ricci_potential(&field, setup);
        let eh: Vec<f64> = h.iter().map(|v| v.exp()).collect();
        let ev = setup.integrate(&eh, Measure::Evolved, &field) / setup.volume(Measure::Evolved, &field);
        out.ev_norm = out.ev_norm.max((ev - 1.0).abs());
        let i = compute_i(&field, setup);
        out.gap = out.gap.max(i.relative_gap);
        let c = rng.gen_range(-5.0..5.0);
        let shifted: Vec<f64> = phi.iter().map(|p| p + c).collect();
        let sfield = hessian_field(&shifted, setup).expect("shifted field");
        let (f0, f1) = (compute_f(&field, setup), compute_f(&sfield, setup));
        let (n0, n1) = (compute_nu(&field, setup), compute_nu(&sfield, setup));
        out.gauge_f = out.gauge_f.max((f1 - f0).abs() / f0.abs().max(f64::MIN_POSITIVE));
        out.gauge_nu = out.gauge_nu.max((n1 - n0).abs() / n0.abs().max(f64::MIN_POSITIVE));
        if i.value > 1e-8 {
            let q = compute_j(&field, setup) / i.value;
            out.ratio_lo = out.ratio_lo.min(q - 1.0 / (n + 1.0));
            out.ratio_hi = out.ratio_hi.max(q - n / (n + 1.0));
        } else {
            out.skipped += 1;
        }
    }
    out
}

/// Trapezoid value of `(1/V) ∫ e^{−δ(φ_s − sup φ_s)} u₀''` on the real line
/// for the segment `φ_s = s (ln(eˣ + e⁻ˣ) − u₀)`, `u₀ = ln(e⁻ˣ + 1 + eˣ)`.
fn family_integral(s: f64, delta: f64) -> f64 {
    let (l, m) = (60.0f64, 240_000usize);
    let hstep = 2.0 * l / m as f64;
    let u0 = |x: f64| x.abs() + (1.0 + (-x.abs()).exp() + (-2.0 * x.abs()).exp()).ln();
    let v = |x: f64| x.abs() + (1.0 + (-2.0 * x.abs()).exp()).ln();
    let dens = |x: f64| {
        let (a, b) = (x.exp(), (-x).exp());
        let z = a + 1.0 + b;
        ((a + b) * z - (a - b) * (a - b)) / (z * z)
    };
    // sup of φ_s is its limit 0 at infinity.
    let mut acc = 0.0;
    for k in 0..=m {
        let x = -l + k as f64 * hstep;
        let w = if k == 0 || k == m { 0.5 } else { 1.0 };
        acc += w * (-delta * s * (v(x) - u0(x))).exp() * dens(x);
    }
    acc * hstep / 2.0
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut v = Verdicts { lines: Vec::new() };
    let tmp = tempfile::tempdir().expect("temp dir");

    // Criteria 1 and 2 on sampled potentials.
    let t12 = Instant::now();
    let cp1 = build_setup(&cfg("cp1", |_| {})).expect("cp1 setup");
    let cp2 = build_setup(&cfg("cp2", |c| c.nodes = 129)).expect("cp2 setup");
    let s1 = sample_potentials(&cp1, 100);
    let s2 = sample_potentials(&cp2, 100);
    let secs12 = t12.elapsed().as_secs_f64();
    let ref_norm = s1.ref_norm.max(s2.ref_norm);
    let ev_norm = s1.ev_norm.max(s2.ev_norm);
    v.add(
        1,
        "normalizations",
        ref_norm <= 1e-8 && ev_norm <= 1e-8 && secs12 < 120.0,
        format!("reference {ref_norm:.2e}, evolved {ev_norm:.2e} over 200 potentials ({secs12:.1} s for both criteria)"),
    );
    let gap = s1.gap.max(s2.gap);
    let gauge = s1.gauge_f.max(s1.gauge_nu).max(s2.gauge_f).max(s2.gauge_nu);
    let lo = s1.ratio_lo.min(s2.ratio_lo);
    let hi = s1.ratio_hi.max(s2.ratio_hi);
    v.add(
        2,
        "functional identities",
        gap <= 1e-6 && gauge <= 1e-10 && lo >= -1e-9 && hi <= 1e-9,
        format!(
            "two-form gap {gap:.2e}, gauge shift {gauge:.2e}, J/I margins {lo:.2e} below and {hi:.2e} above, skipped {}",
            s1.skipped + s2.skipped
        ),
    );

    // Flow runs.
    let configs: Vec<(&'static str, ExperimentConfig)> = vec![
        ("cp1", cfg("cp1", |_| {})),
        ("cp1_n257", cfg("cp1", |c| c.nodes = 257)),
        ("p1xp1", cfg("p1xp1", |_| {})),
        ("blowup3", cfg("blowup3", |_| {})),
        ("blowup1", cfg("blowup1", |c| c.flow.snapshot_every = 0.1)),
        (
            "cp1_ke",
            cfg("cp1", |c| {
                c.ke_reference = true;
                c.flow.amplitude = 0.0;
                c.flow.dt = 1e-3;
                c.flow.t_max = 5.0;
                c.flow.c0_policy = C0Policy::Zero;
                c.flow.snapshot_every = 0.1;
            }),
        ),
    ];
    let runs: Vec<Named> = configs.iter().map(|(n, c)| execute(n, c)).collect();
    let get = |name: &str| runs.iter().find(|r| r.name == name).expect("run exists");
    let converging = ["cp1", "cp1_n257", "p1xp1", "blowup3"];

    let mono: Vec<String> = ["cp1", "p1xp1", "blowup3", "blowup1"]
        .iter()
        .map(|n| {
            let m = &get(n).result.summary.monotonicity;
            format!("{n} dF {:.1e} dnu {:.1e} bad {}", m.max_increase_f, m.max_increase_nu, m.violations.len())
        })
        .collect();
    let mono_ok = ["cp1", "p1xp1", "blowup3", "blowup1"]
        .iter()
        .all(|n| get(n).result.summary.monotonicity.violations.is_empty());
    v.add(3, "monotonicity", mono_ok, mono.join("; "));

    let ke = &get("cp1_ke").result.trajectory;
    let ke_sup = ke.snapshots.iter().map(|s| s.sup_phi.abs().max(s.inf_phi.abs())).fold(0.0, f64::max);
    let ke_t = ke.snapshots.last().map_or(0.0, |s| s.t);
    v.add(
        4,
        "KE fixed point",
        ke_sup <= 1e-6 && ke_t >= 5.0 - 1e-9,
        format!("sup |phi| {ke_sup:.2e} on [0, {ke_t}]"),
    );

    let conv = |n: &str| {
        let r = &get(n).result;
        let fin = &r.summary.final_snapshot;
        let ok = r.trajectory.outcome == Outcome::ConvergedKe && fin.sup_h < 1e-3 && fin.t <= 30.0 + 1e-9;
        (ok, fin.sup_h, fin.t, r.trajectory.rate.unwrap_or(f64::NAN))
    };
    let (ok_a, h_a, t_a, rate_a) = conv("cp1");
    let (ok_b, h_b, t_b, rate_b) = conv("cp1_n257");
    let (ok_c, h_c, t_c, rate_c) = conv("blowup3");
    let rel = (rate_a - rate_b).abs() / rate_a;
    let slow = converging.iter().map(|n| get(n).secs).fold(0.0, f64::max);
    v.add(
        5,
        "convergence",
        ok_a && ok_b && ok_c && rate_a > 0.0 && rate_b > 0.0 && rate_c > 0.0 && rel <= 0.2 && slow < 300.0,
        format!(
            "cp1 sup|h| {h_a:.1e} at t={t_a} rate {rate_a:.3}; n257 sup|h| {h_b:.1e} at t={t_b} rate {rate_b:.3} (diff {:.1}%); blowup3 sup|h| {h_c:.1e} at t={t_c} rate {rate_c:.3}; slowest {slow:.0} s",
            100.0 * rel
        ),
    );

    let b1 = &get("blowup1");
    let b1_class = b1.result.monitors.equivalence.classification;
    let mixed: Vec<&str> = runs
        .iter()
        .filter(|r| r.result.monitors.equivalence.classification == Classification::Mixed)
        .map(|r| r.name)
        .collect();
    let not_bounded: Vec<&str> = converging
        .iter()
        .copied()
        .filter(|n| get(n).result.monitors.equivalence.classification != Classification::AllBounded)
        .collect();
    v.add(
        6,
        "equivalence",
        b1_class == Classification::AllUnbounded
            && b1.result.trajectory.outcome == Outcome::Diverged
            && mixed.is_empty()
            && not_bounded.is_empty()
            && b1.secs < 300.0,
        format!(
            "blowup1 {} / {} in {:.0} s; mixed {:?}; converging runs not AllBounded {:?}",
            b1.result.summary.classification, b1.result.summary.outcome, b1.secs, mixed, not_bounded
        ),
    );

    let mut exact_bad = Vec::new();
    let mut identity = 0.0f64;
    for r in &runs {
        let m = &r.result.monitors;
        let i_osc = m.monitor("i_by_osc").expect("exact monitor present");
        if !i_osc.violations.is_empty() {
            exact_bad.push(r.name);
        }
        identity = m.identity_residual.iter().fold(identity, |a, x| a.max(x.abs()));
    }
    let mut trending = Vec::new();
    for n in converging {
        for m in &get(n).result.monitors.monitors {
            if !matches!(m.kind, MonitorKind::Exact { .. }) && !m.trend_free {
                trending.push(format!("{n}:{}", m.name));
            }
        }
    }
    v.add(
        7,
        "inequality monitors",
        exact_bad.is_empty() && identity <= 1e-8 && trending.is_empty(),
        format!("I <= Osc violated on {exact_bad:?}; identity residual {identity:.2e}; trending {trending:?}"),
    );

    let mut perelman = Vec::new();
    let mut perelman_ok = true;
    for n in converging {
        let snaps = &get(n).result.trajectory.snapshots;
        let t: Vec<f64> = snaps.iter().map(|s| s.t).collect();
        let cols: [(&str, Vec<f64>); 3] = [
            ("R", snaps.iter().map(|s| s.sup_r).collect()),
            ("h", snaps.iter().map(|s| s.sup_h).collect()),
            ("grad h", snaps.iter().map(|s| s.sup_gradh).collect()),
        ];
        for (label, y) in cols {
            let slope = final_third_slope(&t, &y);
            if !y.iter().all(|x| x.is_finite()) || slope > 1e-3 {
                perelman_ok = false;
                perelman.push(format!("{n} sup|{label}| slope {slope:.1e}"));
            }
        }
    }
    let r_minus_n = get("cp1").result.summary.final_snapshot.sup_r_minus_n;
    v.add(
        8,
        "curvature monitors",
        perelman_ok && r_minus_n < 1e-2,
        format!("cp1 terminal sup|R - n| {r_minus_n:.2e}; trending {perelman:?}"),
    );

    let deltas = FlowConfig::default().deltas;
    let step = deltas[1] - deltas[0];
    let mut monotone = true;
    for r in &runs {
        for s in &r.result.trajectory.snapshots {
            monotone &= s.alpha.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        }
    }
    for phi in [vec![0.0; cp1.len()], perturbation(&cp1, &FlowConfig::default()).expect("sample")] {
        let a: Vec<f64> = (0..=40).map(|k| alpha_integral(&phi, &cp1, k as f64 * 0.05)).collect();
        monotone &= a.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
    }
    let frozen = [(0.5, 1.15039595720322597), (1.0, 1.32779328935557539), (1.5, 1.53738455976091573)];
    let quad_err = frozen
        .iter()
        .map(|(d, want)| (family_integral(1.0, *d) - want).abs())
        .fold(0.0, f64::max);
    let budget = FlowConfig::default().alpha_budget;
    let mut oracle = 0.0;
    for &d in &deltas {
        let sup = (0..=20).map(|k| family_integral(k as f64 / 20.0, d)).fold(0.0, f64::max);
        if sup <= budget {
            oracle = d;
        } else {
            break;
        }
    }
    let cp1_sum = &get("cp1").result.summary;
    v.add(
        9,
        "alpha sweep",
        monotone && quad_err <= 1e-8 && (cp1_sum.alpha_hat - oracle).abs() <= step + 1e-12,
        format!(
            "monotone {monotone}; oracle quadrature error {quad_err:.1e}; cp1 alpha_hat {} vs oracle {oracle}; alpha_hat vs n/(n+1) = {:.4}: {}",
            cp1_sum.alpha_hat,
            cp1_sum.delta_sweep.threshold,
            if cp1_sum.alpha_threshold_passed { "above" } else { "not above" }
        ),
    );

    let order_base = cfg("cp1", |c| {
        c.half_width = 3.0;
        c.nodes = 13;
        c.tail_tolerance = 0.9;
        c.flow.scheme = Scheme::Rk4;
        c.flow.c0_policy = C0Policy::Zero;
        c.flow.amplitude = 1.0;
        c.flow.t_max = 1.0;
        c.flow.snapshot_every = 0.25;
    });
    let dts: Vec<String> = ["0.0125", "0.00625", "0.003125", "0.0015625"].iter().map(|s| s.to_string()).collect();
    let index = sweep(&order_base, "dt", &dts, &tmp.path().join("order"), 1).expect("dt sweep");
    let orders: Vec<f64> = index.order_table.iter().find(|r| r.quantity == "phi").map_or(Vec::new(), |r| r.orders.clone());
    let order_ok = !orders.is_empty() && orders.iter().all(|o| *o >= 3.5);
    let vol = runs
        .iter()
        .flat_map(|r| r.result.trajectory.snapshots.iter().map(|s| s.vol_err.abs()))
        .fold(0.0, f64::max);
    let rerun_cfg = cfg("cp1", |_| {});
    let (da, db) = (tmp.path().join("rerun_a"), tmp.path().join("rerun_b"));
    run_experiment(&rerun_cfg, &da).expect("first run");
    run_experiment(&rerun_cfg, &db).expect("second run");
    let same = std::fs::read(da.join("run.csv")).expect("csv") == std::fs::read(db.join("run.csv")).expect("csv");
    let total = start.elapsed().as_secs_f64();
    v.add(
        10,
        "numerics",
        order_ok && vol <= 1e-5 && same && total < 900.0,
        format!("RK4 orders {orders:.2?}; max volume error {vol:.1e}; byte-identical rerun {same}; suite {total:.0} s"),
    );

    let failed: Vec<usize> = v.lines.iter().filter(|l| !l.2).map(|l| l.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", v.lines.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
