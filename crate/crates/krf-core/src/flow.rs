//! Time integration of `φ̇ = log(ω_φⁿ/ωⁿ) + φ − h_ref`.
//!
//! The potential is split as `φ = ψ + a(t)` with `ψ` of zero reference mean.
//! The right-hand side ignores constants, so `ψ` evolves on its own and the
//! constant obeys the scalar recursion `a ← g·a + d` where `g` is the growth
//! factor of the scheme and `d` the mean the step would have added. Choosing
//! the initial constant is then a one-dimensional problem solved after or
//! before the field integration, depending on the policy.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimates::poincare_proxy;
use crate::field::{
    grad_norm_sq, hessian_field, ricci_potential, scalar_curvature, Measure, PotentialField, Setup,
};
use crate::functionals::{alpha_integral, compute_f, compute_i, compute_j, compute_nu, wedge_terms};
use crate::linalg::{BandLu, Csr};
use crate::math;
use crate::stats::{final_third, increasing_fraction, linear_fit};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Scheme {
    Rk4,
    Imex,
}

/// How the additive constant of the initial potential is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum C0Policy {
    Zero,
    MeanH,
    Bisect,
    /// The unique constant keeping `φ` bounded, solved backward in time.
    Bounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Outcome {
    ConvergedKe,
    Diverged,
    Inconclusive,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowConfig {
    pub dt: f64,
    pub t_max: f64,
    pub scheme: Scheme,
    pub c0_policy: C0Policy,
    pub symmetrize: bool,
    pub seed: u64,
    pub amplitude: f64,
    pub bumps: usize,
    pub convergence_tol: f64,
    pub divergence_osc_budget: f64,
    /// Time between snapshots.
    pub snapshot_every: f64,
    /// Steps between checkpoints; zero disables them.
    pub checkpoint_every: usize,
    pub newton_tol: f64,
    pub bisect_probe: f64,
    pub bisect_range: f64,
    pub deltas: Vec<f64>,
    pub alpha_budget: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dt: 0.05,
            t_max: 30.0,
            scheme: Scheme::Imex,
            c0_policy: C0Policy::Bounded,
            symmetrize: true,
            seed: 0,
            amplitude: 0.2,
            bumps: 3,
            convergence_tol: 1e-3,
            divergence_osc_budget: 1.5,
            snapshot_every: 0.5,
            checkpoint_every: 0,
            newton_tol: 1e-10,
            bisect_probe: 5.0,
            bisect_range: 10.0,
            deltas: default_deltas(),
            alpha_budget: 1e3,
        }
    }
}

/// `0.05, 0.10, …, 1.50`.
pub fn default_deltas() -> Vec<f64> {
    (1..=30).map(|k| k as f64 * 0.05).collect()
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("dt", self.dt)?;
        positive("convergence_tol", self.convergence_tol)?;
        positive("divergence_osc_budget", self.divergence_osc_budget)?;
        positive("snapshot_every", self.snapshot_every)?;
        positive("newton_tol", self.newton_tol)?;
        positive("bisect_probe", self.bisect_probe)?;
        positive("bisect_range", self.bisect_range)?;
        positive("alpha_budget", self.alpha_budget)?;
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(Error::Config(format!("t_max must be nonnegative, got {}", self.t_max)));
        }
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::Config(format!("amplitude must be nonnegative, got {}", self.amplitude)));
        }
        if self.bumps > 5 {
            return Err(Error::Config(format!("bumps must be at most 5, got {}", self.bumps)));
        }
        if self.deltas.is_empty()
            || self.deltas.windows(2).any(|w| w[1] <= w[0])
            || self.deltas.iter().any(|&d| !(d > 0.0 && d <= 1.5))
        {
            return Err(Error::Config("deltas must increase strictly within (0, 1.5]".into()));
        }
        Ok(())
    }

    /// Steps between snapshots.
    pub fn cadence(&self) -> usize {
        (math::round(self.snapshot_every / self.dt) as usize).max(1)
    }

    /// Total number of steps.
    pub fn total_steps(&self) -> usize {
        math::round(self.t_max / self.dt) as usize
    }

    /// Growth factor of constants over one step of `substeps` RK4 stages
    /// or one exponential step.
    pub fn growth(&self, substeps: usize) -> f64 {
        match self.scheme {
            Scheme::Imex => math::exp(self.dt),
            Scheme::Rk4 => {
                let h = self.dt / substeps as f64;
                let p = 1.0 + h + h * h / 2.0 + h * h * h / 6.0 + h * h * h * h / 24.0;
                (0..substeps).fold(1.0, |a, _| a * p)
            }
        }
    }

    /// Whether the solver restarts its cached state before `step`.
    pub fn restarts_at(&self, step: usize) -> bool {
        step % self.cadence() == 0 || (self.checkpoint_every > 0 && step % self.checkpoint_every == 0)
    }
}

/// Gauge-free observables of `ψ` at one time; constant-dependent columns
/// are completed once the gauge constant is known.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawSnapshot {
    pub step: usize,
    pub t: f64,
    /// `I(ψ)`.
    pub i: f64,
    pub i_dirichlet: f64,
    pub i_gap: f64,
    pub j: f64,
    pub f: f64,
    pub nu: f64,
    pub wedge: Vec<f64>,
    pub sup_psi: f64,
    pub inf_psi: f64,
    pub ref_mean_psi: f64,
    pub ev_mean_negpsi: f64,
    pub ev_volume: f64,
    pub rhs_sup: f64,
    pub rhs_inf: f64,
    pub ref_mean_rhs: f64,
    pub ref_mean_href: f64,
    pub sup_r: f64,
    pub sup_r_minus_n: f64,
    pub sup_h: f64,
    pub sup_gradh: f64,
    pub cp_proxy: f64,
    pub vol_err: f64,
    pub alpha: Vec<f64>,
}

/// All scalar observables at one flow time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FunctionalSnapshot {
    pub t: f64,
    pub sup_phi: f64,
    pub inf_phi: f64,
    pub osc: f64,
    /// `I(φ)`, which differs from `I(ψ)` by the gauge times the volume error.
    pub i: f64,
    pub j: f64,
    pub f0: f64,
    pub f: f64,
    pub nu: f64,
    pub int_phi_ref: f64,
    pub int_negphi_ev: f64,
    pub sup_phidot: f64,
    pub sup_r: f64,
    pub sup_h: f64,
    pub sup_gradh: f64,
    pub cp_proxy: f64,
    pub vol_err: f64,
    /// Gauge constant `a(t)`.
    pub gauge: f64,
    pub i_dirichlet: f64,
    pub i_gap: f64,
    pub wedge: Vec<f64>,
    pub sup_r_minus_n: f64,
    /// `(1/V) ∫ (−φ̇ − h_ref) ωⁿ`.
    pub ref_mean_neg_phidot_h: f64,
    pub alpha: Vec<f64>,
}

impl RawSnapshot {
    /// Complete with the gauge constant `a`.
    pub fn with_gauge(&self, a: f64) -> FunctionalSnapshot {
        let sup_phi = self.sup_psi + a;
        let inf_phi = self.inf_psi + a;
        let int_phi_ref = self.ref_mean_psi + a;
        FunctionalSnapshot {
            t: self.t,
            sup_phi,
            inf_phi,
            osc: self.sup_psi - self.inf_psi,
            i: self.i + a * (1.0 - self.ev_volume),
            j: self.j,
            f0: self.j - int_phi_ref,
            f: self.f,
            nu: self.nu,
            int_phi_ref,
            int_negphi_ev: self.ev_mean_negpsi - a * self.ev_volume,
            sup_phidot: math::abs(self.rhs_sup + a).max(math::abs(self.rhs_inf + a)),
            sup_r: self.sup_r,
            sup_h: self.sup_h,
            sup_gradh: self.sup_gradh,
            cp_proxy: self.cp_proxy,
            vol_err: self.vol_err,
            gauge: a,
            i_dirichlet: self.i_dirichlet,
            i_gap: self.i_gap,
            wedge: self.wedge.clone(),
            sup_r_minus_n: self.sup_r_minus_n,
            ref_mean_neg_phidot_h: -(self.ref_mean_rhs + a) - self.ref_mean_href,
            alpha: self.alpha.clone(),
        }
    }
}

/// Right-hand side without the constant: `log ratio − h_ref + ψ`.
pub fn rhs(field: &PotentialField, setup: &Setup) -> Vec<f64> {
    field
        .ratio
        .iter()
        .zip(&setup.reference.h_ref)
        .zip(&field.values)
        .map(|((r, h), p)| math::ln(*r) - h + p)
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * u
}

/// Sum of Gaussian bumps in `x`, scaled to sup norm `amplitude`, optionally
/// symmetrized, then shrunk until the volume ratio stays above one half.
pub fn perturbation(setup: &Setup, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = setup.n();
    let mut phi = vec![0.0; setup.len()];
    for _ in 0..cfg.bumps {
        let c = [uniform(&mut rng, -1.0, 1.0), if n == 2 { uniform(&mut rng, -1.0, 1.0) } else { 0.0 }];
        let s = uniform(&mut rng, 1.0, 1.5);
        let w = uniform(&mut rng, -1.0, 1.0);
        for (p, x) in phi.iter_mut().zip(&setup.grid.x) {
            let r2 = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]);
            *p += w * math::exp(-r2 / (2.0 * s * s));
        }
    }
    if cfg.symmetrize {
        phi = setup.symmetrize(&phi);
    }
    let top = math::max_abs(&phi);
    if top == 0.0 || cfg.amplitude == 0.0 {
        return Ok(vec![0.0; setup.len()]);
    }
    for p in phi.iter_mut() {
        *p *= cfg.amplitude / top;
    }
    for _ in 0..200 {
        if let Ok(f) = hessian_field(&phi, setup) {
            if math::min(&f.ratio) >= 0.5 {
                return Ok(phi);
            }
        }
        for p in phi.iter_mut() {
            *p *= 0.9;
        }
    }
    Err(Error::Config("perturbation cannot be made admissible".into()))
}

/// State of the split potential.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowState {
    pub step: usize,
    pub t: f64,
    pub psi: Vec<f64>,
    /// Constant integrated forward from the initial choice.
    pub a: f64,
}

impl FlowState {
    pub fn phi(&self) -> Vec<f64> {
        self.psi.iter().map(|p| p + self.a).collect()
    }

    /// `φ̇` recomputed from the state.
    pub fn phidot(&self, setup: &Setup) -> Result<Vec<f64>> {
        let f = hessian_field(&self.psi, setup)?;
        Ok(rhs(&f, setup).iter().map(|v| v + self.a).collect())
    }
}

/// Initial potential `perturbation + c₀`, split into zero-mean part and
/// constant. For the bisect policy the constant comes from a probe run.
pub fn init_state(setup: &Setup, cfg: &FlowConfig) -> Result<(FlowState, f64)> {
    cfg.validate()?;
    let phi = perturbation(setup, cfg)?;
    let field = hessian_field(&phi, setup)?;
    let mean = setup.integrate(&phi, Measure::Reference, &field);
    let psi: Vec<f64> = phi.iter().map(|p| p - mean).collect();
    let c0 = match cfg.c0_policy {
        C0Policy::Zero | C0Policy::Bounded => 0.0,
        C0Policy::MeanH => setup.integrate(&setup.reference.h_ref, Measure::Reference, &field),
        C0Policy::Bisect => bisect_constant(setup, cfg, &psi, mean)?,
    };
    Ok((FlowState { step: 0, t: 0.0, psi, a: mean + c0 }, c0))
}

/// Constant whose forward gauge neither grows nor decays at the end of a
/// probe run of length `bisect_probe`, found by bisection on `[−D, D]`.
pub fn bisect_constant(setup: &Setup, cfg: &FlowConfig, psi0: &[f64], mean: f64) -> Result<f64> {
    let steps = math::round(cfg.bisect_probe / cfg.dt) as usize;
    let mut psi = psi0.to_vec();
    let mut inc = Vec::with_capacity(steps);
    let mut solver = Stepper::new(setup, cfg);
    for k in 0..steps {
        let (next, d) = solver.step(setup, cfg, &psi, k as f64 * cfg.dt)?;
        psi = next;
        inc.push(d);
    }
    let g = solver.growth(cfg);
    let drift = |c0: f64| {
        let mut a = mean + c0;
        for d in &inc {
            a = g * a + d;
        }
        let last = inc.last().copied().unwrap_or(0.0);
        a + last / (g - 1.0)
    };
    let (mut lo, mut hi) = (-cfg.bisect_range, cfg.bisect_range);
    if drift(lo) > 0.0 {
        return Ok(lo);
    }
    if drift(hi) < 0.0 {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if drift(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Newton solver state. The factorization is kept across steps and only
/// refreshed when contraction slows, or when `reset` is called.
pub struct Stepper {
    lu: Option<BandLu>,
    /// RK4 stages per step, from the explicit stability bound at the
    /// reference potential.
    pub substeps: usize,
    pub newton_iterations: usize,
    pub factorizations: usize,
}

impl Stepper {
    pub fn new(setup: &Setup, cfg: &FlowConfig) -> Stepper {
        let substeps = match cfg.scheme {
            Scheme::Imex => 1,
            Scheme::Rk4 => {
                let bound = 0.5 * explicit_step_bound(setup, &vec![0.0; setup.len()]);
                math::ceil(cfg.dt / bound).max(1.0) as usize
            }
        };
        Stepper { lu: None, substeps, newton_iterations: 0, factorizations: 0 }
    }

    pub fn growth(&self, cfg: &FlowConfig) -> f64 {
        cfg.growth(self.substeps)
    }

    /// Drop the cached factorization.
    pub fn reset(&mut self) {
        self.lu = None;
    }

    /// Advance the zero-mean part one step; returns it with the mean `d`
    /// the step added.
    pub fn step(&mut self, setup: &Setup, cfg: &FlowConfig, psi: &[f64], t: f64) -> Result<(Vec<f64>, f64)> {
        let raw = match cfg.scheme {
            Scheme::Imex => self.imex(setup, cfg, psi, t)?,
            Scheme::Rk4 => {
                let h = cfg.dt / self.substeps as f64;
                let mut x = psi.to_vec();
                for _ in 0..self.substeps {
                    x = rk4(setup, h, &x, t)?;
                }
                x
            }
        };
        if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical { t, reason: format!("non-finite value at node {i}") });
        }
        let field = hessian_field(&raw, setup).map_err(|e| Error::Numerical { t, reason: format!("{e}") })?;
        let d = setup.integrate(&raw, Measure::Reference, &field);
        let mut next: Vec<f64> = raw.iter().map(|v| v - d).collect();
        if cfg.symmetrize {
            next = setup.symmetrize(&next);
        }
        Ok((next, d))
    }

    fn imex(&mut self, setup: &Setup, cfg: &FlowConfig, psi: &[f64], t: f64) -> Result<Vec<f64>> {
        let g = math::exp(cfg.dt);
        let c = math::expm1(cfg.dt);
        let r = &setup.reference;
        let n = setup.len();
        let fail = |reason: String| Error::Numerical { t, reason };
        let mut x = psi.to_vec();
        let mut last = f64::INFINITY;
        for _ in 0..60 {
            let mass = if self.lu.is_none() {
                let (mass, jac) = setup.mass_jacobian(&x);
                let m = newton_matrix(&jac, &mass, c);
                self.lu = Some(BandLu::factor(&m).ok_or_else(|| fail("singular Newton matrix".into()))?);
                self.factorizations += 1;
                last = f64::INFINITY;
                mass
            } else {
                setup.masses(&x)
            };
            if let Some(i) = mass.iter().position(|&a| !(a > 0.0)) {
                return Err(fail(format!("admissibility lost at node {i}")));
            }
            let mut delta: Vec<f64> = (0..n)
                .map(|k| -(x[k] - g * psi[k] - c * (math::ln(mass[k] / r.mass0[k]) - r.h_ref[k])))
                .collect();
            self.lu.as_ref().expect("factored").solve(&mut delta);
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + alpha * b).collect();
                if setup.masses(&trial).iter().all(|&a| a > 0.0) {
                    x = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-8 {
                    return Err(fail("line search cannot keep the potential admissible".into()));
                }
            }
            self.newton_iterations += 1;
            let size = alpha * math::max_abs(&delta);
            if size < cfg.newton_tol {
                return Ok(x);
            }
            if size > 0.25 * last || alpha < 1.0 {
                self.lu = None;
            }
            last = size;
        }
        Err(fail("Newton iteration did not converge".into()))
    }
}

/// `I − c·diag(1/mass)·J` for the implicit step.
fn newton_matrix(jac: &Csr, mass: &[f64], c: f64) -> Csr {
    let mut m = jac.clone();
    for i in 0..m.n {
        for e in m.ptr[i]..m.ptr[i + 1] {
            m.val[e] *= -c / mass[i];
            if m.idx[e] == i {
                m.val[e] += 1.0;
            }
        }
    }
    m
}

fn rk4(setup: &Setup, h: f64, psi: &[f64], t: f64) -> Result<Vec<f64>> {
    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let field = hessian_field(x, setup).map_err(|e| Error::Numerical { t, reason: format!("{e}") })?;
        Ok(rhs(&field, setup))
    };
    let axpy = |x: &[f64], k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(psi)?;
    let k2 = f(&axpy(psi, &k1, h / 2.0))?;
    let k3 = f(&axpy(psi, &k2, h / 2.0))?;
    let k4 = f(&axpy(psi, &k3, h))?;
    Ok((0..psi.len())
        .map(|i| psi[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Largest explicit step for which RK4 stays inside its stability region,
/// from a Gershgorin bound on the linearized operator at `psi`.
pub fn explicit_step_bound(setup: &Setup, psi: &[f64]) -> f64 {
    let (mass, jac) = setup.mass_jacobian(psi);
    let mut lam: f64 = 1.0;
    for i in 0..jac.n {
        let row: f64 = (jac.ptr[i]..jac.ptr[i + 1]).map(|e| math::abs(jac.val[e])).sum();
        lam = lam.max(row / mass[i]);
    }
    2.5 / lam
}

/// `max |v|` over the masked nodes.
pub fn sup_abs_on(v: &[f64], mask: &[bool]) -> f64 {
    v.iter().zip(mask).filter(|(_, &c)| c).fold(0.0, |a, (&x, _)| a.max(math::abs(x)))
}

fn masked(v: &[f64], mask: &[bool], pick: fn(f64, f64) -> f64) -> f64 {
    v.iter().zip(mask).filter(|(_, &c)| c).map(|(&x, _)| x).reduce(pick).unwrap_or(0.0)
}

/// Observables of `ψ` at step `step`.
pub fn observe(setup: &Setup, cfg: &FlowConfig, psi: &[f64], step: usize) -> Result<RawSnapshot> {
    let t = step as f64 * cfg.dt;
    let field = hessian_field(psi, setup)?;
    let (h, _) = ricci_potential(&field, setup);
    let r = scalar_curvature(&field, setup);
    let gh = grad_norm_sq(&h, &field, setup);
    let n = setup.n() as f64;
    let r_minus_n: Vec<f64> = r.iter().map(|v| v - n).collect();
    let ir = compute_i(&field, setup);
    let rh = rhs(&field, setup);
    let neg: Vec<f64> = psi.iter().map(|p| -p).collect();
    Ok(RawSnapshot {
        step,
        t,
        i: ir.value,
        i_dirichlet: ir.dirichlet,
        i_gap: ir.relative_gap,
        j: compute_j(&field, setup),
        f: compute_f(&field, setup),
        nu: compute_nu(&field, setup),
        wedge: wedge_terms(&field, setup),
        sup_psi: math::max(psi),
        inf_psi: math::min(psi),
        ref_mean_psi: setup.integrate(psi, Measure::Reference, &field),
        ev_mean_negpsi: setup.integrate(&neg, Measure::Evolved, &field),
        ev_volume: setup.volume(Measure::Evolved, &field),
        rhs_sup: masked(&rh, &setup.core, f64::max),
        rhs_inf: masked(&rh, &setup.core, f64::min),
        ref_mean_rhs: setup.integrate(&rh, Measure::Reference, &field),
        ref_mean_href: setup.integrate(&setup.reference.h_ref, Measure::Reference, &field),
        sup_r: sup_abs_on(&r, &setup.curvature_core),
        sup_r_minus_n: sup_abs_on(&r_minus_n, &setup.curvature_core),
        sup_h: sup_abs_on(&h, &setup.core),
        sup_gradh: math::sqrt(sup_abs_on(&gh, &setup.curvature_core)),
        cp_proxy: poincare_proxy(&field, setup).map(|p| p.proxy).unwrap_or(f64::NAN),
        vol_err: setup.volume(Measure::Evolved, &field) - 1.0,
        alpha: cfg.deltas.iter().map(|&d| alpha_integral(psi, setup, d)).collect(),
    })
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Checkpoint {
    pub state: FlowState,
    pub c0: f64,
    pub increments: Vec<f64>,
    pub raw: Vec<RawSnapshot>,
    pub fields: Vec<Vec<f64>>,
    pub energies: Vec<StepEnergy>,
    pub finished: Option<(Outcome, String)>,
}

/// A run in progress.
pub struct Flow<'a> {
    pub setup: &'a Setup,
    pub cfg: FlowConfig,
    pub state: FlowState,
    pub c0: f64,
    /// Mean added by each step.
    pub increments: Vec<f64>,
    pub raw: Vec<RawSnapshot>,
    /// `ψ` at each snapshot.
    pub fields: Vec<Vec<f64>>,
    /// F and ν after every step.
    pub energies: Vec<StepEnergy>,
    pub finished: Option<(Outcome, String)>,
    stepper: Stepper,
}

/// F and ν at one step; both are unchanged by the gauge.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepEnergy {
    pub t: f64,
    pub f: f64,
    pub nu: f64,
}

fn step_energy(setup: &Setup, psi: &[f64], t: f64) -> Result<StepEnergy> {
    let field = hessian_field(psi, setup)?;
    Ok(StepEnergy { t, f: compute_f(&field, setup), nu: compute_nu(&field, setup) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<FunctionalSnapshot>,
    /// `φ` at each snapshot.
    pub fields: Vec<Vec<f64>>,
    pub c0_policy: C0Policy,
    /// Initial constant added to the perturbation.
    pub c0: f64,
    pub energies: Vec<StepEnergy>,
    pub outcome: Outcome,
    pub rate: Option<f64>,
    pub message: String,
}

impl<'a> Flow<'a> {
    pub fn new(setup: &'a Setup, cfg: FlowConfig) -> Result<Flow<'a>> {
        let (state, c0) = init_state(setup, &cfg)?;
        let stepper = Stepper::new(setup, &cfg);
        let mut flow = Flow {
            setup,
            cfg,
            state,
            c0,
            increments: Vec::new(),
            raw: Vec::new(),
            fields: Vec::new(),
            energies: Vec::new(),
            finished: None,
            stepper,
        };
        flow.snapshot()?;
        let e = step_energy(setup, &flow.state.psi, 0.0)?;
        flow.energies.push(e);
        Ok(flow)
    }

    pub fn resume(setup: &'a Setup, cfg: FlowConfig, cp: Checkpoint) -> Result<Flow<'a>> {
        cfg.validate()?;
        let stepper = Stepper::new(setup, &cfg);
        Ok(Flow {
            setup,
            cfg,
            state: cp.state,
            c0: cp.c0,
            increments: cp.increments,
            raw: cp.raw,
            fields: cp.fields,
            energies: cp.energies,
            finished: cp.finished,
            stepper,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            state: self.state.clone(),
            c0: self.c0,
            increments: self.increments.clone(),
            raw: self.raw.clone(),
            fields: self.fields.clone(),
            energies: self.energies.clone(),
            finished: self.finished.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.finished.is_some()
    }

    pub fn stats(&self) -> (usize, usize) {
        (self.stepper.newton_iterations, self.stepper.factorizations)
    }

    fn snapshot(&mut self) -> Result<()> {
        let s = observe(self.setup, &self.cfg, &self.state.psi, self.state.step)?;
        self.raw.push(s);
        self.fields.push(self.state.psi.clone());
        Ok(())
    }

    /// One step, with a snapshot at the cadence. Sets `finished` when the
    /// run ends.
    pub fn advance(&mut self) {
        if self.finished.is_some() {
            return;
        }
        let total = self.cfg.total_steps();
        if self.state.step >= total {
            self.finished = Some((Outcome::Inconclusive, String::new()));
            return;
        }
        let t = self.state.t;
        if self.cfg.restarts_at(self.state.step) {
            self.stepper.reset();
        }
        match self.stepper.step(self.setup, &self.cfg, &self.state.psi, t) {
            Ok((psi, d)) => {
                let step = self.state.step + 1;
                self.state = FlowState {
                    step,
                    t: step as f64 * self.cfg.dt,
                    psi,
                    a: self.stepper.growth(&self.cfg) * self.state.a + d,
                };
                self.increments.push(d);
            }
            Err(e) => {
                self.finished = Some((Outcome::NumericalFailure, format!("{e}")));
                return;
            }
        }
        let step = self.state.step;
        match step_energy(self.setup, &self.state.psi, self.state.t) {
            Ok(e) => self.energies.push(e),
            Err(e) => {
                self.finished = Some((Outcome::NumericalFailure, format!("{e}")));
                return;
            }
        }
        if step % self.cfg.cadence() == 0 || step == total {
            if let Err(e) = self.snapshot() {
                self.finished = Some((Outcome::NumericalFailure, format!("{e}")));
                return;
            }
            if diverging(&self.raw, self.cfg.divergence_osc_budget) {
                self.finished = Some((Outcome::Diverged, String::new()));
                return;
            }
        }
        if step >= total {
            self.finished = Some((Outcome::Inconclusive, String::new()));
        }
    }

    pub fn run_to_end(&mut self) {
        if self.cfg.total_steps() == 0 && self.finished.is_none() {
            self.finished = Some((Outcome::Inconclusive, String::new()));
        }
        while self.finished.is_none() {
            self.advance();
        }
    }

    /// Gauge constant at every step, per the policy.
    pub fn gauge_series(&self) -> Vec<f64> {
        let g = self.stepper.growth(&self.cfg);
        let k = self.increments.len();
        let mut a = vec![0.0; k + 1];
        if self.cfg.c0_policy == C0Policy::Bounded {
            a[k] = terminal_gauge(&self.increments, g).unwrap_or(self.state.a);
            for j in (0..k).rev() {
                a[j] = (a[j + 1] - self.increments[j]) / g;
            }
        } else {
            a[0] = self.state.a;
            let mut back = self.state.a;
            for j in (0..k).rev() {
                back = (back - self.increments[j]) / g;
            }
            a[0] = back;
            for j in 0..k {
                a[j + 1] = g * a[j] + self.increments[j];
            }
        }
        a
    }

    /// Finished trajectory with the outcome classified.
    pub fn finish(&self) -> Trajectory {
        let a = self.gauge_series();
        let snapshots: Vec<FunctionalSnapshot> =
            self.raw.iter().map(|s| s.with_gauge(a[s.step])).collect();
        let fields = self
            .raw
            .iter()
            .zip(&self.fields)
            .map(|(s, psi)| psi.iter().map(|p| p + a[s.step]).collect())
            .collect();
        let (outcome, message) = self.finished.clone().unwrap_or((Outcome::Inconclusive, String::new()));
        let c0 = if self.cfg.c0_policy == C0Policy::Bounded {
            a[0] - self.raw.first().map(|_| self.initial_mean()).unwrap_or(0.0)
        } else {
            self.c0
        };
        let mut traj = Trajectory {
            snapshots,
            fields,
            c0_policy: self.cfg.c0_policy,
            c0,
            energies: self.energies.clone(),
            outcome,
            rate: None,
            message,
        };
        if outcome != Outcome::NumericalFailure {
            let (o, rate) = classify_outcome(&traj, &self.cfg);
            traj.outcome = o;
            traj.rate = rate;
        }
        traj
    }

    fn initial_mean(&self) -> f64 {
        let g = self.stepper.growth(&self.cfg);
        let mut back = self.state.a;
        for d in self.increments.iter().rev() {
            back = (back - d) / g;
        }
        back - self.c0
    }
}

/// Terminal gauge value for the bounded policy: the one for which `a` has
/// zero second difference over the last two steps, so a gauge drifting at a
/// steady rate is continued rather than frozen. With a single increment the
/// stationary value `−d/(g−1)` is used.
fn terminal_gauge(increments: &[f64], g: f64) -> Option<f64> {
    match *increments {
        [] => None,
        [d] => Some(-d / (g - 1.0)),
        [.., d2, d1] => {
            let r = 1.0 / g;
            Some((d2 * r + d1 * r * r - 2.0 * d1 * r) / ((1.0 - r) * (1.0 - r)))
        }
    }
}

/// Osc beyond budget with growth over the final third.
fn osc_growing(t: &[f64], osc: &[f64], budget: f64) -> bool {
    let Some(&last) = osc.last() else { return false };
    if last <= budget || osc.len() < 3 {
        return false;
    }
    let start = final_third(osc.len());
    let (slope, _) = linear_fit(&t[start..], &osc[start..]);
    slope > 1e-2 && increasing_fraction(&osc[start..]) >= 0.8
}

fn diverging(raw: &[RawSnapshot], budget: f64) -> bool {
    let t: Vec<f64> = raw.iter().map(|s| s.t).collect();
    let osc: Vec<f64> = raw.iter().map(|s| s.sup_psi - s.inf_psi).collect();
    osc_growing(&t, &osc, budget)
}

/// Outcome of a trajectory and, when converged, the exponential rate of
/// `Osc(φ_t − φ_final)` fitted over the last third of the window where it
/// is above round-off.
pub fn classify_outcome(traj: &Trajectory, cfg: &FlowConfig) -> (Outcome, Option<f64>) {
    let Some(last) = traj.snapshots.last() else { return (Outcome::Inconclusive, None) };
    if last.sup_h < cfg.convergence_tol {
        let fin = traj.fields.last().expect("fields");
        let mut t = Vec::new();
        let mut y = Vec::new();
        for (s, phi) in traj.snapshots.iter().zip(&traj.fields) {
            let diff: Vec<f64> = phi.iter().zip(fin).map(|(a, b)| a - b).collect();
            let osc = math::max(&diff) - math::min(&diff);
            if osc > 1e-9 {
                t.push(s.t);
                y.push(math::ln(osc));
            }
        }
        let rate = if t.len() >= 3 {
            let start = final_third(t.len());
            Some(-linear_fit(&t[start..], &y[start..]).0)
        } else {
            None
        };
        return (Outcome::ConvergedKe, rate);
    }
    let t: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    let osc: Vec<f64> = traj.snapshots.iter().map(|s| s.osc).collect();
    if osc_growing(&t, &osc, cfg.divergence_osc_budget) {
        return (Outcome::Diverged, None);
    }
    (Outcome::Inconclusive, None)
}

/// Run to the end and classify.
pub fn run(setup: &Setup, cfg: FlowConfig) -> Result<Trajectory> {
    let mut flow = Flow::new(setup, cfg)?;
    flow.run_to_end();
    Ok(flow.finish())
}

/// Forward-gauge potential after `steps` steps from `phi0`, without the
/// split; used to cross-check the split integration.
pub fn integrate_plain(setup: &Setup, cfg: &FlowConfig, phi0: &[f64], steps: usize) -> Result<Vec<f64>> {
    let mut phi = phi0.to_vec();
    let mut stepper = Stepper::new(setup, cfg);
    let g = stepper.growth(cfg);
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let field = hessian_field(&phi, setup)?;
        let mean = setup.integrate(&phi, Measure::Reference, &field);
        let psi: Vec<f64> = phi.iter().map(|p| p - mean).collect();
        let (next, d) = stepper.step(setup, cfg, &psi, t)?;
        let a = g * mean + d;
        phi = next.iter().map(|p| p + a).collect();
    }
    Ok(phi)
}

/// Placeholder text for outcome names in reports.
pub fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::ConvergedKe => "Converged-KE",
        Outcome::Diverged => "Diverged",
        Outcome::Inconclusive => "Inconclusive",
        Outcome::NumericalFailure => "NumericalFailure",
    }
}

pub fn policy_name(p: C0Policy) -> &'static str {
    match p {
        C0Policy::Zero => "zero",
        C0Policy::MeanH => "mean_h",
        C0Policy::Bisect => "bisect",
        C0Policy::Bounded => "bounded",
    }
}

pub fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Rk4 => "rk4",
        Scheme::Imex => "imex",
    }
}

