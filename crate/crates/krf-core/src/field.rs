//! Potentials on the grid and the pointwise geometry they induce: discrete
//! Monge–Ampère masses, Hessians, Ricci potentials, scalar curvature and
//! quadrature.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::Csr;
use crate::math;
use crate::model::ReducedModel;
use crate::reference::{build_reference, cell_area, ReferenceData};
use crate::stats::{pairwise_dot, pairwise_sum};

/// Band of outermost rings excluded from pointwise sup monitors.
pub const BOUNDARY_BAND: i64 = 2;
/// Curvature is monitored where `det D²F0` is at least this share of its
/// maximum; further out, grid round-off in `h` is amplified beyond use.
pub const CURVATURE_FLOOR: f64 = 1e-3;

/// Which measure an integral is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Reference,
    Evolved,
}

/// Model, grid and reference data bundled with precomputed stencils.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: ReducedModel,
    pub grid: Grid,
    pub reference: ReferenceData,
    /// Node permutations of the symmetry group.
    pub perms: Vec<Vec<usize>>,
    pub core: Vec<bool>,
    /// Core nodes where curvature is resolved.
    pub curvature_core: Vec<bool>,
    jac: JacobianPattern,
}

#[derive(Debug, Clone)]
struct JacobianPattern {
    ptr: Vec<usize>,
    idx: Vec<usize>,
    /// Per row: (entry, cell point, stencil coefficient).
    cptr: Vec<usize>,
    contrib: Vec<(usize, usize, [f64; 2])>,
}

impl Setup {
    pub fn new(model: ReducedModel, half_width: f64, nodes_per_axis: usize, tail_tolerance: f64) -> Result<Setup> {
        let grid = Grid::new(&model, half_width, nodes_per_axis)?;
        let reference = build_reference(&model, &grid, tail_tolerance)?;
        let perms = grid.symmetry_permutations(&model)?;
        let core = grid.core_mask(BOUNDARY_BAND);
        let jac = JacobianPattern::new(&grid);
        let floor = CURVATURE_FLOOR * math::max(&reference.det0);
        let curvature_core = core.iter().zip(&reference.det0).map(|(&c, &d)| c && d >= floor).collect();
        Ok(Setup { model, grid, reference, perms, core, curvature_core, jac })
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Anchored cell corners of `∇(F0 + φ)` for every node.
    pub fn cell_points(&self, phi: &[f64]) -> Vec<[f64; 2]> {
        let d = self.grid.point_gradients(phi);
        let m = self.grid.m;
        let mut q = Vec::with_capacity(self.len() * m);
        for i in 0..self.len() {
            let d0 = d[self.grid.cell[i * m]];
            for j in 0..m {
                let dj = d[self.grid.cell[i * m + j]];
                let r = self.reference.offsets0[i * m + j];
                q.push([r[0] + dj[0] - d0[0], r[1] + dj[1] - d0[1]]);
            }
        }
        q
    }

    /// Image mass of every dual cell under `∇(F0 + φ)`.
    pub fn masses(&self, phi: &[f64]) -> Vec<f64> {
        let m = self.grid.m;
        self.cell_points(phi).chunks(m).map(cell_area).collect()
    }

    /// Derivative of the cell masses at `phi` in the direction `v`.
    pub fn mass_derivative(&self, phi: &[f64], v: &[f64]) -> Vec<f64> {
        let q = self.cell_points(phi);
        let e = self.grid.point_gradients(v);
        let m = self.grid.m;
        (0..self.len())
            .map(|i| {
                let g = vertex_gradients(&q[i * m..(i + 1) * m]);
                (0..m)
                    .map(|j| {
                        let ej = e[self.grid.cell[i * m + j]];
                        g[j][0] * ej[0] + g[j][1] * ej[1]
                    })
                    .sum()
            })
            .collect()
    }

    /// Jacobian of the cell masses with respect to nodal values, together
    /// with the masses themselves.
    pub fn mass_jacobian(&self, phi: &[f64]) -> (Vec<f64>, Csr) {
        let q = self.cell_points(phi);
        let m = self.grid.m;
        let p = &self.jac;
        let mut val = vec![0.0; p.idx.len()];
        let mut mass = Vec::with_capacity(self.len());
        for i in 0..self.len() {
            let cq = &q[i * m..(i + 1) * m];
            mass.push(cell_area(cq));
            let g = vertex_gradients(cq);
            for &(e, j, c) in &p.contrib[p.cptr[i]..p.cptr[i + 1]] {
                val[e] += g[j][0] * c[0] + g[j][1] * c[1];
            }
        }
        (mass, Csr { n: self.len(), ptr: p.ptr.clone(), idx: p.idx.clone(), val })
    }

    /// Average over the symmetry group orbit of each node.
    pub fn symmetrize(&self, phi: &[f64]) -> Vec<f64> {
        let g = self.perms.len() as f64;
        (0..phi.len())
            .map(|i| self.perms.iter().map(|p| phi[p[i]]).sum::<f64>() / g)
            .collect()
    }

    /// Normalized integral `(1/V) Σ weights · f · density`.
    pub fn integrate(&self, f: &[f64], measure: Measure, field: &PotentialField) -> f64 {
        let mass: &[f64] = match measure {
            Measure::Reference => &self.reference.mass0,
            Measure::Evolved => &field.mass,
        };
        pairwise_dot(f, mass) / self.reference.v_red
    }

    /// Integral of the constant 1, which is the normalized total volume.
    pub fn volume(&self, measure: Measure, field: &PotentialField) -> f64 {
        match measure {
            Measure::Reference => pairwise_sum(&self.reference.mass0) / self.reference.v_red,
            Measure::Evolved => pairwise_sum(&field.mass) / self.reference.v_red,
        }
    }
}

impl JacobianPattern {
    fn new(grid: &Grid) -> Self {
        let m = grid.m;
        let mut ptr = vec![0];
        let mut idx = Vec::new();
        let mut cptr = vec![0];
        let mut contrib = Vec::new();
        for i in 0..grid.len() {
            let mut cols: BTreeMap<usize, ()> = BTreeMap::new();
            for j in 0..m {
                let q = grid.cell[i * m + j];
                for e in grid.pg_ptr[q]..grid.pg_ptr[q + 1] {
                    cols.insert(grid.pg_idx[e], ());
                }
            }
            let base = idx.len();
            let pos: BTreeMap<usize, usize> =
                cols.keys().enumerate().map(|(k, &c)| (c, base + k)).collect();
            idx.extend(cols.keys());
            ptr.push(idx.len());
            for j in 0..m {
                let q = grid.cell[i * m + j];
                for e in grid.pg_ptr[q]..grid.pg_ptr[q + 1] {
                    contrib.push((pos[&grid.pg_idx[e]], j, grid.pg_val[e]));
                }
            }
            cptr.push(contrib.len());
        }
        JacobianPattern { ptr, idx, cptr, contrib }
    }
}

/// Gradient of the cell area with respect to each vertex.
pub fn vertex_gradients(q: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let m = q.len();
    if m == 2 {
        return vec![[-1.0, 0.0], [1.0, 0.0]];
    }
    (0..m)
        .map(|j| {
            let next = q[(j + 1) % m];
            let prev = q[(j + m - 1) % m];
            [0.5 * (next[1] - prev[1]), -0.5 * (next[0] - prev[0])]
        })
        .collect()
}

/// A potential with its cached geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
    /// `D²F0 + D²_h φ` with centred differences.
    pub hessian: Vec<[[f64; 2]; 2]>,
    /// Pointwise `det D²(F0 + φ)`: analytic `det0` times the mass ratio.
    pub det: Vec<f64>,
    /// Centred gradient of `φ`.
    pub grad: Vec<[f64; 2]>,
    /// Image mass of each dual cell.
    pub mass: Vec<f64>,
    /// Monge–Ampère ratio `ω_φⁿ / ωⁿ`.
    pub ratio: Vec<f64>,
}

/// Centred first and second differences read off the cell-side gradients.
fn centred(setup: &Setup, d: &[[f64; 2]], i: usize) -> ([f64; 2], [[f64; 2]; 2]) {
    let g = &setup.grid;
    let c = |j: usize| d[g.cell[i * g.m + j]];
    let h = g.spacing;
    if g.n == 1 {
        let (l, r) = (c(0), c(1));
        ([0.5 * (l[0] + r[0]), 0.0], [[(r[0] - l[0]) / h, 0.0], [0.0, 0.0]])
    } else {
        let (b, r, t, l) = (c(1), c(3), c(5), c(7));
        let hxx = (r[0] - l[0]) / h;
        let hyy = (t[1] - b[1]) / h;
        let hxy = (r[1] - l[1]) / h;
        ([0.5 * (l[0] + r[0]), 0.5 * (b[1] + t[1])], [[hxx, hxy], [hxy, hyy]])
    }
}

/// Geometry of `F0 + φ`; fails if some cell mass is not positive.
pub fn hessian_field(phi: &[f64], setup: &Setup) -> Result<PotentialField> {
    if phi.len() != setup.len() {
        return Err(Error::Config("potential length does not match grid".into()));
    }
    if let Some(i) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NotAdmissible { node: i, det: f64::NAN });
    }
    let mass = setup.masses(phi);
    if let Some(i) = mass.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::NotAdmissible { node: i, det: mass[i] });
    }
    let r = &setup.reference;
    let ratio: Vec<f64> = mass.iter().zip(&r.mass0).map(|(a, b)| a / b).collect();
    let det = ratio.iter().zip(&r.det0).map(|(q, d)| q * d).collect();
    let d = setup.grid.point_gradients(phi);
    let mut grad = Vec::with_capacity(setup.len());
    let mut hessian = Vec::with_capacity(setup.len());
    for i in 0..setup.len() {
        let (gr, hs) = centred(setup, &d, i);
        let h0 = r.h0[i];
        grad.push(gr);
        hessian.push([
            [h0[0][0] + hs[0][0], h0[0][1] + hs[0][1]],
            [h0[1][0] + hs[1][0], h0[1][1] + hs[1][1]],
        ]);
    }
    Ok(PotentialField { values: phi.to_vec(), hessian, det, grad, mass, ratio })
}

/// Monge–Ampère ratio `det D²(F0+φ) / det D²F0` per node.
pub fn ma_ratio(field: &PotentialField) -> Vec<f64> {
    field.ratio.clone()
}

/// Ricci potential `−log det − F0 − φ + c` of the evolved metric, with `c`
/// fixed by `(1/V) ∫ e^h ω_φⁿ = 1`.
pub fn ricci_potential(field: &PotentialField, setup: &Setup) -> (Vec<f64>, f64) {
    let r = &setup.reference;
    let raw: Vec<f64> = field
        .det
        .iter()
        .zip(&r.f0)
        .zip(&field.values)
        .map(|((d, f), p)| -math::ln(*d) - f - p)
        .collect();
    let top = math::max(&raw);
    let e: Vec<f64> = raw.iter().zip(&field.mass).map(|(v, a)| a * math::exp(v - top)).collect();
    let c = -(top + math::ln(pairwise_sum(&e) / r.v_red));
    (raw.iter().map(|v| v + c).collect(), c)
}

/// Scalar curvature `n + Δ_φ h_φ`, with `Δ_φ` the linearized discrete
/// Monge–Ampère operator divided by the cell mass.
pub fn scalar_curvature(field: &PotentialField, setup: &Setup) -> Vec<f64> {
    let (h, _) = ricci_potential(field, setup);
    let lap = setup.mass_derivative(&field.values, &h);
    let n = setup.n() as f64;
    lap.iter().zip(&field.mass).map(|(l, a)| n + l / a).collect()
}

/// `(1/V) ∫ f · density` against the reference or evolved measure.
pub fn integrate(f: &[f64], measure: Measure, field: &PotentialField, setup: &Setup) -> f64 {
    setup.integrate(f, measure, field)
}

/// `∇fᵀ H⁻¹ ∇f` per node, with the metric from [`metric`].
pub fn grad_norm_sq(f: &[f64], field: &PotentialField, setup: &Setup) -> Vec<f64> {
    let d = setup.grid.point_gradients(f);
    let n = setup.n();
    (0..setup.len())
        .map(|i| {
            let (g, _) = centred(setup, &d, i);
            quadratic_inverse(&metric(field, setup, i), g, n)
        })
        .collect()
}

/// Finite-difference Hessian at node `i`, or the reference Hessian scaled
/// to the cell's volume ratio where the former is not positive definite.
pub fn metric(field: &PotentialField, setup: &Setup, i: usize) -> [[f64; 2]; 2] {
    let n = setup.n();
    let hm = field.hessian[i];
    if positive_definite(&hm, n) {
        return hm;
    }
    let s = if n == 1 { field.ratio[i] } else { math::sqrt(field.ratio[i]) };
    let h0 = setup.reference.h0[i];
    [[s * h0[0][0], s * h0[0][1]], [s * h0[1][0], s * h0[1][1]]]
}

/// Nodes whose finite-difference Hessian is not positive definite.
pub fn indefinite_nodes(field: &PotentialField, setup: &Setup) -> usize {
    field.hessian.iter().filter(|h| !positive_definite(h, setup.n())).count()
}

fn det2(h: &[[f64; 2]; 2], n: usize) -> f64 {
    if n == 1 {
        h[0][0]
    } else {
        h[0][0] * h[1][1] - h[0][1] * h[1][0]
    }
}

fn positive_definite(h: &[[f64; 2]; 2], n: usize) -> bool {
    h[0][0] > 0.0 && det2(h, n) > 0.0
}

/// `gᵀ H⁻¹ g` for symmetric positive `H`.
pub fn quadratic_inverse(h: &[[f64; 2]; 2], g: [f64; 2], n: usize) -> f64 {
    if n == 1 {
        g[0] * g[0] / h[0][0]
    } else {
        let det = det2(h, n);
        (h[1][1] * g[0] * g[0] - 2.0 * h[0][1] * g[0] * g[1] + h[0][0] * g[1] * g[1]) / det
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    fn setup(name: &str, l: f64, n: usize) -> Setup {
        Setup::new(build_model(name).unwrap(), l, n, 1.0).unwrap()
    }

    #[test]
    fn zero_potential_reproduces_reference() {
        let s = setup("blowup3", 8.0, 33);
        let f = hessian_field(&vec![0.0; s.len()], &s).unwrap();
        assert!(f.ratio.iter().all(|&r| r == 1.0));
        assert_eq!(f.hessian, s.reference.h0);
        assert_eq!(f.det, s.reference.det0);
    }

    #[test]
    fn jacobian_matches_directional_derivative() {
        for name in ["cp1", "blowup1"] {
            let s = setup(name, 6.0, 25);
            let phi: Vec<f64> = s.grid.x.iter().map(|x| 0.1 * math::exp(-(x[0] * x[0] + x[1] * x[1]) / 4.0)).collect();
            let v: Vec<f64> = s.grid.x.iter().map(|x| math::exp(-(x[0] - 1.0) * (x[0] - 1.0) / 3.0 - x[1] * x[1])).collect();
            let (_, j) = s.mass_jacobian(&phi);
            let a = j.mul(&v);
            let b = s.mass_derivative(&phi, &v);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12 * (1.0 + y.abs()), "{name} {x} {y}");
            }
        }
    }

    #[test]
    fn concave_bump_is_not_admissible() {
        let s = setup("cp1", 12.0, 129);
        let phi: Vec<f64> = s.grid.x.iter().map(|x| -x[0] * x[0] / 2.0).collect();
        assert!(matches!(hessian_field(&phi, &s), Err(Error::NotAdmissible { .. })));
    }
}
