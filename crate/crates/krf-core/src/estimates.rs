//! Boundedness quantities, inequality monitors between them, curvature
//! monitors and a Poincaré-constant proxy.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{grad_norm_sq, ricci_potential, scalar_curvature, Measure, PotentialField, Setup};
use crate::flow::{sup_abs_on, FunctionalSnapshot};
use crate::functionals::compute_i;
use crate::linalg::{sym_eigen, BandLu, Csr};
use crate::math;
use crate::stats::{final_third, increasing_fraction, linear_fit, pairwise_dot, pairwise_sum};

/// The seven quantities whose boundedness along the flow is equivalent.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BoundsRecord {
    pub t: f64,
    /// `‖φ‖_{C⁰}`
    pub q1: f64,
    /// `sup φ`
    pub q2: f64,
    /// `inf φ`
    pub q3: f64,
    /// `(1/V) ∫ φ ωⁿ`
    pub q4: f64,
    /// `(1/V) ∫ (−φ) ω_φⁿ`
    pub q5: f64,
    /// `I(φ)`
    pub q6: f64,
    /// `Osc φ`
    pub q7: f64,
}

impl BoundsRecord {
    /// Values oriented so that each should stay bounded above.
    pub fn signed(&self) -> [f64; 7] {
        [self.q1, self.q2, -self.q3, self.q4, self.q5, self.q6, self.q7]
    }

    pub fn from_snapshot(s: &FunctionalSnapshot) -> BoundsRecord {
        BoundsRecord {
            t: s.t,
            q1: math::abs(s.sup_phi).max(math::abs(s.inf_phi)),
            q2: s.sup_phi,
            q3: s.inf_phi,
            q4: s.int_phi_ref,
            q5: s.int_negphi_ev,
            q6: s.i,
            q7: s.sup_phi - s.inf_phi,
        }
    }
}

pub const QUANTITY_NAMES: [&str; 7] =
    ["c0_norm", "sup_phi", "neg_inf_phi", "int_phi_ref", "int_negphi_ev", "i_functional", "osc_phi"];

pub fn snapshot_bounds(field: &PotentialField, setup: &Setup, t: f64) -> BoundsRecord {
    let phi = &field.values;
    let q2 = math::max(phi);
    let q3 = math::min(phi);
    let neg: Vec<f64> = phi.iter().map(|p| -p).collect();
    BoundsRecord {
        t,
        q1: math::abs(q2).max(math::abs(q3)),
        q2,
        q3,
        q4: setup.integrate(phi, Measure::Reference, field),
        q5: setup.integrate(&neg, Measure::Evolved, field),
        q6: compute_i(field, setup).value,
        q7: q2 - q3,
    }
}

/// `(sup|R|, sup|h|, sup|∇h|)` away from the boundary band; curvature and
/// gradient are taken where the reference density is resolved.
pub fn perelman_monitor(field: &PotentialField, setup: &Setup) -> Result<(f64, f64, f64)> {
    let (h, _) = ricci_potential(field, setup);
    let r = scalar_curvature(field, setup);
    let g = grad_norm_sq(&h, field, setup);
    Ok((
        sup_abs_on(&r, &setup.curvature_core),
        sup_abs_on(&h, &setup.core),
        math::sqrt(sup_abs_on(&g, &setup.curvature_core)),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoincareProxy {
    /// Smallest nonzero eigenvalue of the weighted Laplacian.
    pub lambda: f64,
    /// `1 / lambda`.
    pub proxy: f64,
    pub eigenvector: Vec<f64>,
    /// `‖S u − λ M u‖_{M⁻¹} / ‖u‖_M`.
    pub residual: f64,
    pub iterations: usize,
}

/// Stiffness matrix of the weighted Laplacian: the symmetric part of minus
/// the mass Jacobian, with the diagonal adjusted so constants lie in the
/// kernel. Returned with the masses.
pub fn laplacian(field: &PotentialField, setup: &Setup) -> (Vec<f64>, Csr) {
    let (mass, jac) = setup.mass_jacobian(&field.values);
    let n = jac.n;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        for e in jac.ptr[i]..jac.ptr[i + 1] {
            let j = jac.idx[e];
            let v = -0.5 * jac.val[e];
            rows[i].push((j, v));
            rows[j].push((i, v));
        }
    }
    let mut ptr = vec![0];
    let mut idx = Vec::new();
    let mut val = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        row.sort_by_key(|e| e.0);
        let start = idx.len();
        let mut diag = None;
        for &(j, v) in row.iter() {
            if idx.len() > start && *idx.last().expect("entry") == j {
                *val.last_mut().expect("entry") += v;
            } else {
                idx.push(j);
                val.push(v);
            }
        }
        let sum = pairwise_sum(&val[start..]);
        for e in start..idx.len() {
            if idx[e] == i {
                diag = Some(e);
            }
        }
        match diag {
            Some(e) => val[e] -= sum,
            None => {
                let pos = idx[start..].iter().position(|&j| j > i).map(|p| start + p).unwrap_or(idx.len());
                idx.insert(pos, i);
                val.insert(pos, -sum);
            }
        }
        ptr.push(idx.len());
    }
    (mass, Csr { n, ptr, idx, val })
}

/// Accepted eigen-residual `‖S u − λ M u‖_{M⁻¹}` for `‖u‖_M = 1`.
pub const PROXY_TOL: f64 = 1e-8;

/// Block size of the subspace iteration.
const BLOCK: usize = 4;

/// Shifted subspace iteration with constants deflated in the evolved-measure
/// inner product, refined by Rayleigh–Ritz. Only torus-invariant functions
/// are seen, so this is a proxy for the Poincaré constant.
pub fn poincare_proxy(field: &PotentialField, setup: &Setup) -> Result<PoincareProxy> {
    let (mass, s) = laplacian(field, setup);
    let n = s.n;
    let total = pairwise_sum(&mass);
    let sigma = 1e-2;
    let mut shifted = s.clone();
    for i in 0..n {
        for e in shifted.ptr[i]..shifted.ptr[i + 1] {
            if shifted.idx[e] == i {
                shifted.val[e] += sigma * mass[i];
            }
        }
    }
    let fail = |reason: String| Error::Numerical { t: 0.0, reason };
    let lu = BandLu::factor(&shifted).ok_or_else(|| fail("singular Laplacian".into()))?;
    let m_dot = |a: &[f64], b: &[f64]| {
        let w: Vec<f64> = a.iter().zip(&mass).map(|(x, m)| x * m).collect();
        pairwise_dot(&w, b)
    };
    let orthonormalize = |block: &mut Vec<Vec<f64>>| {
        for k in 0..block.len() {
            for _ in 0..2 {
                let c = m_dot(&block[k], &vec![1.0; n]) / total;
                for x in block[k].iter_mut() {
                    *x -= c;
                }
                for j in 0..k {
                    let c = m_dot(&block[k], &block[j]);
                    let (head, tail) = block.split_at_mut(k);
                    for (x, y) in tail[0].iter_mut().zip(&head[j]) {
                        *x -= c * y;
                    }
                }
            }
            let norm = math::sqrt(m_dot(&block[k], &block[k]));
            for x in block[k].iter_mut() {
                *x /= norm;
            }
        }
    };
    let p = BLOCK.min(n.saturating_sub(1)).max(1);
    let mut block: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            setup
                .grid
                .x
                .iter()
                .map(|x| match k {
                    0 => x[0] + 0.37 * x[1],
                    1 => x[1] - 0.21 * x[0] + 0.1 * math::tanh(x[0]),
                    2 => math::tanh(x[0]) * math::tanh(x[1]) + 0.3 * math::tanh(x[0] * 0.5),
                    _ => math::cosh(0.3 * x[0]) - math::cosh(0.2 * x[1]) + 0.05 * x[0] * x[1],
                })
                .collect()
        })
        .collect();
    orthonormalize(&mut block);
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    for it in 1..=300 {
        let sb: Vec<Vec<f64>> = block.iter().map(|u| s.mul(u)).collect();
        let h: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| 0.5 * (pairwise_dot(&sb[i], &block[j]) + pairwise_dot(&sb[j], &block[i]))).collect()).collect();
        let (w, q) = sym_eigen(&h);
        let rotate = |vs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            (0..p).map(|k| (0..n).map(|i| (0..p).map(|j| vs[j][i] * q[j][k]).sum()).collect()).collect()
        };
        block = rotate(&block);
        let sb = rotate(&sb);
        lambda = w[0];
        let r: Vec<f64> = (0..n)
            .map(|i| {
                let d = sb[0][i] - lambda * mass[i] * block[0][i];
                d * d / mass[i]
            })
            .collect();
        residual = math::sqrt(pairwise_sum(&r));
        if !(lambda > 0.0) {
            return Err(fail(alloc::format!("nonpositive Laplacian eigenvalue {lambda}")));
        }
        if residual <= PROXY_TOL * lambda.max(1.0) {
            return Ok(PoincareProxy { lambda, proxy: 1.0 / lambda, eigenvector: block.swap_remove(0), residual, iterations: it });
        }
        for u in block.iter_mut() {
            let mut next: Vec<f64> = u.iter().zip(&mass).map(|(a, b)| a * b).collect();
            lu.solve(&mut next);
            *u = next;
        }
        orthonormalize(&mut block);
    }
    Err(fail(alloc::format!("Poincaré iteration stalled at λ = {lambda}, residual {residual}")))
}

/// How a monitored inequality is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum MonitorKind {
    /// `lhs ≤ rhs + tolerance` with no constant.
    Exact { tolerance: f64 },
    /// `lhs ≤ rhs + C` with `C` calibrated on the burn-in window.
    Additive { budget: f64 },
    /// `lhs ≤ C · rhs` with `C` calibrated on the burn-in window.
    Ratio { budget: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct Monitor {
    pub name: &'static str,
    pub kind: MonitorKind,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `lhs − rhs`, or `lhs / rhs` for ratio monitors.
    pub residual: Vec<f64>,
    pub constant: f64,
    /// Snapshots where the inequality fails beyond tolerance or budget.
    pub violations: Vec<usize>,
    /// Linear trend of the residual over the final third.
    pub trend: f64,
    pub trend_free: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Label {
    Bounded,
    Unbounded,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Classification {
    AllBounded,
    AllUnbounded,
    Mixed,
    /// Some quantity is neither clearly bounded nor clearly growing.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EquivalenceReport {
    pub labels: [Label; 7],
    pub slopes: [f64; 7],
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct MonitorReport {
    pub t: Vec<f64>,
    pub bounds: Vec<BoundsRecord>,
    pub monitors: Vec<Monitor>,
    /// `q5 − q6 − (1/V)∫(−φ)ωⁿ` per snapshot.
    pub identity_residual: Vec<f64>,
    /// δ used in the sup-by-energy monitor; zero when no admissible δ exists.
    pub delta: f64,
    pub delta_flag: bool,
    pub equivalence: EquivalenceReport,
}

/// Final-third slope below which a series counts as trend-free.
pub const FLAT_SLOPE: f64 = 1e-3;
/// Final-third slope above which a growing series counts as unbounded.
pub const GROWTH_SLOPE: f64 = 1e-2;
/// Share of the run used to calibrate monitor constants.
pub const BURN_IN: f64 = 0.1;

fn trend(t: &[f64], y: &[f64]) -> f64 {
    if t.len() < 3 {
        return 0.0;
    }
    let s = final_third(t.len());
    linear_fit(&t[s..], &y[s..]).0
}

fn burn_in_len(t: &[f64]) -> usize {
    let Some(&end) = t.last() else { return 0 };
    let start = t[0];
    let cut = start + BURN_IN * (end - start);
    t.iter().take_while(|&&x| x <= cut).count().max(1)
}

fn build_monitor(name: &'static str, kind: MonitorKind, t: &[f64], lhs: Vec<f64>, rhs: Vec<f64>) -> Monitor {
    let residual: Vec<f64> = match kind {
        MonitorKind::Ratio { .. } => lhs.iter().zip(&rhs).map(|(a, b)| a / b).collect(),
        _ => lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect(),
    };
    let burn = burn_in_len(t);
    let constant = match kind {
        MonitorKind::Exact { .. } => 0.0,
        _ => residual[..burn].iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let violations = residual
        .iter()
        .enumerate()
        .filter(|(_, &r)| match kind {
            MonitorKind::Exact { tolerance } => r > tolerance,
            MonitorKind::Additive { budget } | MonitorKind::Ratio { budget } => r > constant + budget,
        })
        .map(|(k, _)| k)
        .collect();
    let slope = trend(t, &residual);
    Monitor {
        name,
        kind,
        lhs,
        rhs,
        residual,
        constant,
        violations,
        trend: slope,
        trend_free: slope <= FLAT_SLOPE,
    }
}

/// Label each quantity and combine. Requires at least ten snapshots.
pub fn equivalence_report(bounds: &[BoundsRecord], budget: f64) -> EquivalenceReport {
    let t: Vec<f64> = bounds.iter().map(|b| b.t).collect();
    let mut labels = [Label::Undetermined; 7];
    let mut slopes = [0.0; 7];
    for q in 0..7 {
        let y: Vec<f64> = bounds.iter().map(|b| b.signed()[q]).collect();
        if y.len() < 10 {
            continue;
        }
        let s = final_third(y.len());
        let slope = trend(&t, &y);
        slopes[q] = slope;
        let last = *y.last().expect("nonempty");
        labels[q] = if slope < FLAT_SLOPE && last <= budget {
            Label::Bounded
        } else if slope > GROWTH_SLOPE && increasing_fraction(&y[s..]) >= 0.8 && last > y[s] {
            Label::Unbounded
        } else {
            Label::Undetermined
        };
    }
    let all = |l: Label| labels.iter().all(|&x| x == l);
    let classification = if all(Label::Bounded) {
        Classification::AllBounded
    } else if all(Label::Unbounded) {
        Classification::AllUnbounded
    } else if labels.contains(&Label::Bounded) && labels.contains(&Label::Unbounded) {
        Classification::Mixed
    } else {
        Classification::Inconclusive
    };
    EquivalenceReport { labels, slopes, classification }
}

/// Tolerance for inequalities that hold up to quadrature only.
pub const QUADRATURE_TOL: f64 = 1e-6;

/// Both sides of every implication between the boundedness quantities.
///
/// `n` is the complex dimension, `delta` the largest δ with a bounded
/// α-integral along the run and `budget` the bound used to label quantities.
pub fn inequality_monitors(snapshots: &[FunctionalSnapshot], n: usize, delta: f64, budget: f64) -> MonitorReport {
    let bounds: Vec<BoundsRecord> = snapshots.iter().map(BoundsRecord::from_snapshot).collect();
    let t: Vec<f64> = bounds.iter().map(|b| b.t).collect();
    let col = |f: &dyn Fn(&BoundsRecord) -> f64| -> Vec<f64> { bounds.iter().map(f).collect() };
    let nf = n as f64;
    let delta_flag = !(delta > nf / (nf + 1.0));
    let factor = if delta > 0.0 { (1.0 - delta) / delta } else { 0.0 };
    let generous = MonitorKind::Additive { budget };
    let mut monitors = vec![
        build_monitor("sup_by_neg_int_ev", generous, &t, col(&|b| b.q2), col(&|b| factor * b.q5)),
        build_monitor("c0_by_sup", MonitorKind::Ratio { budget }, &t, col(&|b| b.q1), col(&|b| b.q2.max(0.0) + 1.0)),
        build_monitor(
            "neg_inf_by_c0",
            MonitorKind::Exact { tolerance: 0.0 },
            &t,
            col(&|b| -b.q3),
            col(&|b| b.q1),
        ),
    ];
    let vol: Vec<f64> = snapshots.iter().map(|s| 1.0 + s.vol_err).collect();
    monitors.push(build_monitor(
        "neg_int_ev_by_neg_inf",
        MonitorKind::Exact { tolerance: QUADRATURE_TOL },
        &t,
        col(&|b| b.q5),
        bounds.iter().zip(&vol).map(|(b, v)| -b.q3 * v).collect(),
    ));
    monitors.push(build_monitor(
        "int_ref_by_c0",
        MonitorKind::Exact { tolerance: QUADRATURE_TOL },
        &t,
        col(&|b| b.q4),
        col(&|b| b.q1),
    ));
    monitors.push(build_monitor("sup_by_int_ref", generous, &t, col(&|b| b.q2), col(&|b| b.q4)));
    monitors.push(build_monitor(
        "osc_by_c0",
        MonitorKind::Exact { tolerance: 0.0 },
        &t,
        col(&|b| b.q7),
        col(&|b| 2.0 * b.q1),
    ));
    monitors.push(build_monitor(
        "i_by_osc",
        MonitorKind::Exact { tolerance: QUADRATURE_TOL },
        &t,
        col(&|b| b.q6),
        col(&|b| b.q7),
    ));
    monitors.push(build_monitor("neg_int_ev_by_i", generous, &t, col(&|b| b.q5), col(&|b| b.q6)));
    monitors.push(build_monitor(
        "neg_int_ref_by_neg_phidot",
        MonitorKind::Exact { tolerance: QUADRATURE_TOL },
        &t,
        col(&|b| -b.q4),
        snapshots.iter().map(|s| s.ref_mean_neg_phidot_h + math::ln(1.0 + s.vol_err)).collect(),
    ));
    monitors.push(build_monitor("neg_int_ev_by_n_sup", generous, &t, col(&|b| b.q5), col(&|b| nf * b.q2)));
    monitors.push(build_monitor(
        "neg_int_ev_by_n_sup_wedge",
        generous,
        &t,
        col(&|b| b.q5),
        bounds
            .iter()
            .zip(snapshots)
            .map(|(b, s)| nf * b.q2 - s.wedge.iter().enumerate().map(|(i, w)| i as f64 * w).sum::<f64>())
            .collect(),
    ));
    let identity_residual = bounds.iter().map(|b| b.q5 - b.q6 + b.q4).collect();
    let equivalence = equivalence_report(&bounds, budget);
    MonitorReport { t, bounds, monitors, identity_residual, delta, delta_flag, equivalence }
}

impl MonitorReport {
    pub fn monitor(&self, name: &str) -> Option<&Monitor> {
        self.monitors.iter().find(|m| m.name == name)
    }

    /// Names of monitors with violations.
    pub fn violated(&self) -> Vec<String> {
        self.monitors.iter().filter(|m| !m.violations.is_empty()).map(|m| String::from(m.name)).collect()
    }
}

pub fn label_name(l: Label) -> &'static str {
    match l {
        Label::Bounded => "bounded",
        Label::Unbounded => "unbounded",
        Label::Undetermined => "undetermined",
    }
}

pub fn classification_name(c: Classification) -> &'static str {
    match c {
        Classification::AllBounded => "AllBounded",
        Classification::AllUnbounded => "AllUnbounded",
        Classification::Mixed => "Mixed",
        Classification::Inconclusive => "Inconclusive",
    }
}
