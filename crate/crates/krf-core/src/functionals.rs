//! Energy functionals I, J, F⁰, F, ν, the α-integral and properness data.
//!
//! Wedge products of (1,1)-forms become mixed areas of gradient images: for
//! a cell with image polygon `X`, the term `i∂φ∧∂̄φ∧(form of X)` integrated
//! against φ is `−φ · d/dε area(X + ε∇φ)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::field::{ricci_potential, vertex_gradients, Measure, PotentialField, Setup};
use crate::grid::{ACROSS_2D, CELL_1D};
use crate::math;
use crate::stats::{linear_fit, pairwise_sum};

/// Both realizations of I and their relative gap.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct IReport {
    /// `(1/V) ∫ φ (ωⁿ − ω_φⁿ)`.
    pub value: f64,
    /// Sum of gradient pairings over the dual-cell sides.
    pub dirichlet: f64,
    pub relative_gap: f64,
}

/// `(1/V) ∫ i∂φ∧∂̄φ∧ωⁱ∧ω_φ^{n−1−i}` for `i = 0..n`, from cell sums.
pub fn wedge_terms(field: &PotentialField, setup: &Setup) -> Vec<f64> {
    let v = setup.reference.v_red;
    let g = &setup.grid;
    let m = g.m;
    let d = g.point_gradients(&field.values);
    let q_ev = setup.cell_points(&field.values);
    let phi = &field.values;
    let pairing = |q: &[[f64; 2]]| -> f64 {
        let terms: Vec<f64> = (0..setup.len())
            .map(|i| {
                let vg = vertex_gradients(&q[i * m..(i + 1) * m]);
                let b: f64 = (0..m)
                    .map(|j| {
                        let dj = d[g.cell[i * m + j]];
                        vg[j][0] * dj[0] + vg[j][1] * dj[1]
                    })
                    .sum();
                -phi[i] * b
            })
            .collect();
        pairwise_sum(&terms) / v
    };
    if setup.n() == 1 {
        vec![pairing(&q_ev)]
    } else {
        let e_ev = pairing(&q_ev);
        let e_ref = pairing(&setup.reference.offsets0);
        vec![0.5 * e_ev, 0.5 * e_ref]
    }
}

/// The same pairings summed side by side: each dual-cell side contributes
/// the jump of φ across it times the flux of the mixed area through it.
pub fn dirichlet_terms(field: &PotentialField, setup: &Setup) -> Vec<f64> {
    let v = setup.reference.v_red;
    let g = &setup.grid;
    let m = g.m;
    let d = g.point_gradients(&field.values);
    let phi = &field.values;
    let g0 = &setup.reference.point_grad0;
    let jump = |i: usize, j: usize| -> f64 {
        let node = g.nodes[i];
        let off = if m == 2 { CELL_1D[j] } else { ACROSS_2D[j] };
        g.ext_value(phi, [node[0] + off[0], node[1] + off[1]]) - phi[i]
    };
    if setup.n() == 1 {
        let terms: Vec<f64> = (0..setup.len())
            .map(|i| {
                (0..2)
                    .map(|j| {
                        let dj = d[g.cell[i * 2 + j]][0];
                        let sign = if j == 0 { -1.0 } else { 1.0 };
                        0.5 * jump(i, j) * sign * dj
                    })
                    .sum()
            })
            .collect();
        return vec![pairwise_sum(&terms) / v];
    }
    let side = |with_phi: bool| -> f64 {
        let terms: Vec<f64> = (0..setup.len())
            .map(|i| {
                (0..m)
                    .map(|j| {
                        let a = g.cell[i * m + j];
                        let b = g.cell[i * m + (j + 1) % m];
                        let (da, db) = (d[a], d[b]);
                        let mut xa = g0[a];
                        let mut xb = g0[b];
                        if with_phi {
                            xa = [xa[0] + da[0], xa[1] + da[1]];
                            xb = [xb[0] + db[0], xb[1] + db[1]];
                        }
                        let flux = 0.5
                            * ((xa[0] * db[1] - xa[1] * db[0]) + (da[0] * xb[1] - da[1] * xb[0]));
                        0.5 * jump(i, j) * flux
                    })
                    .sum()
            })
            .collect();
        pairwise_sum(&terms) / v
    };
    vec![0.5 * side(true), 0.5 * side(false)]
}

/// I from the difference of measures, with its side-sum counterpart.
pub fn compute_i(field: &PotentialField, setup: &Setup) -> IReport {
    let diff: Vec<f64> = setup
        .reference
        .mass0
        .iter()
        .zip(&field.mass)
        .zip(&field.values)
        .map(|((a, b), p)| p * (a - b))
        .collect();
    let value = pairwise_sum(&diff) / setup.reference.v_red;
    let dirichlet: f64 = dirichlet_terms(field, setup).iter().sum();
    let scale = math::abs(value).max(math::abs(dirichlet));
    let relative_gap = if scale > 0.0 { math::abs(value - dirichlet) / scale } else { 0.0 };
    IReport { value, dirichlet, relative_gap }
}

/// Fails when the two forms of I disagree beyond `tolerance`.
pub fn check_calibration(report: &IReport, tolerance: f64) -> Result<()> {
    if report.relative_gap > tolerance {
        Err(Error::Calibration { relative: report.relative_gap })
    } else {
        Ok(())
    }
}

/// `J = Σ (i+1)/(n+1) · wedge term i`.
pub fn compute_j(field: &PotentialField, setup: &Setup) -> f64 {
    let t = wedge_terms(field, setup);
    let n = t.len() as f64;
    t.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) / (n + 1.0) * v).sum()
}

/// `F⁰ = J − (1/V) ∫ φ ωⁿ`.
pub fn compute_f0(field: &PotentialField, setup: &Setup) -> f64 {
    compute_j(field, setup) - setup.integrate(&field.values, Measure::Reference, field)
}

/// `log (1/V) ∫ e^{h_ref − φ} ωⁿ`, evaluated with the maximum factored out.
pub fn log_partition(field: &PotentialField, setup: &Setup) -> f64 {
    let r = &setup.reference;
    let e: Vec<f64> = r.h_ref.iter().zip(&field.values).map(|(h, p)| h - p).collect();
    let top = math::max(&e);
    let w: Vec<f64> = e.iter().zip(&r.mass0).map(|(v, a)| a * math::exp(v - top)).collect();
    top + math::ln(pairwise_sum(&w) / r.v_red)
}

/// `F = F⁰ − log (1/V) ∫ e^{h_ref − φ} ωⁿ`.
pub fn compute_f(field: &PotentialField, setup: &Setup) -> f64 {
    compute_f0(field, setup) - log_partition(field, setup)
}

/// `ν = F + (1/V)∫ h_ref ωⁿ − (1/V)∫ h_φ ω_φⁿ`.
pub fn compute_nu(field: &PotentialField, setup: &Setup) -> f64 {
    let (h, _) = ricci_potential(field, setup);
    compute_f(field, setup) + setup.integrate(&setup.reference.h_ref, Measure::Reference, field)
        - setup.integrate(&h, Measure::Evolved, field)
}

/// `(1/V) ∫ e^{−δ(φ − sup φ)} ωⁿ`.
pub fn alpha_integral(phi: &[f64], setup: &Setup, delta: f64) -> f64 {
    let top = math::max(phi);
    let r = &setup.reference;
    let w: Vec<f64> = phi
        .iter()
        .zip(&r.mass0)
        .map(|(p, a)| a * math::exp(-delta * (p - top)))
        .collect();
    pairwise_sum(&w) / r.v_red
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaSweepResult {
    pub deltas: Vec<f64>,
    pub sup_integrals: Vec<f64>,
    pub alpha_hat: f64,
    pub budget: f64,
    /// `n / (n + 1)`.
    pub threshold: f64,
    pub threshold_passed: bool,
}

/// Sup over a trajectory of the α-integral for each δ, and the largest δ
/// staying within `budget`. `integrals[s][k]` is snapshot `s` at `deltas[k]`.
pub fn delta_sweep_from(integrals: &[Vec<f64>], deltas: &[f64], budget: f64, n: usize) -> DeltaSweepResult {
    let sup_integrals: Vec<f64> = (0..deltas.len())
        .map(|k| integrals.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let mut alpha_hat = 0.0;
    for (d, s) in deltas.iter().zip(&sup_integrals) {
        if *s <= budget {
            alpha_hat = *d;
        } else {
            break;
        }
    }
    let threshold = n as f64 / (n as f64 + 1.0);
    DeltaSweepResult {
        deltas: deltas.to_vec(),
        sup_integrals,
        alpha_hat,
        budget,
        threshold,
        threshold_passed: alpha_hat > threshold,
    }
}

/// δ-sweep over potentials sampled along a trajectory.
pub fn delta_sweep(trajectory: &[Vec<f64>], setup: &Setup, deltas: &[f64], budget: f64) -> DeltaSweepResult {
    let integrals: Vec<Vec<f64>> = trajectory
        .iter()
        .map(|phi| deltas.iter().map(|&d| alpha_integral(phi, setup, d)).collect())
        .collect();
    delta_sweep_from(&integrals, deltas, budget, setup.n())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Properness {
    /// F stays bounded below over the horizon.
    Consistent,
    /// F keeps decreasing with no plateau.
    Violating,
}

/// `(I, F)` pairs along a trajectory and whether F plateaus.
pub fn properness_scatter(t: &[f64], i: &[f64], f: &[f64]) -> (Vec<(f64, f64)>, Properness) {
    let pairs: Vec<(f64, f64)> = i.iter().copied().zip(f.iter().copied()).collect();
    let start = crate::stats::final_third(t.len());
    let (slope, _) = linear_fit(&t[start..], &f[start..]);
    let flag = if slope < -1e-2 { Properness::Violating } else { Properness::Consistent };
    (pairs, flag)
}
