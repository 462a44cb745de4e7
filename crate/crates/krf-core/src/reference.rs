//! Reference metric `F0 = log Σ c_u e^{⟨u,x⟩}` sampled on a grid.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math;
use crate::model::{Lattice, ReducedModel};
use crate::stats::pairwise_sum;

/// Softmax weights of the lattice points at `x`, with the log-sum-exp value.
pub fn softmax(model: &ReducedModel, x: [f64; 2]) -> (f64, Vec<f64>) {
    let z: Vec<f64> = model
        .lattice_points
        .iter()
        .zip(&model.weights)
        .map(|(u, &c)| math::ln(c) + u[0] as f64 * x[0] + u[1] as f64 * x[1])
        .collect();
    let top = math::max(&z);
    let e: Vec<f64> = z.iter().map(|&v| math::exp(v - top)).collect();
    let s: f64 = e.iter().sum();
    (top + math::ln(s), e.iter().map(|v| v / s).collect())
}

/// Lattice point maximizing `⟨u, x⟩`, used to anchor differences.
pub fn anchor(model: &ReducedModel, x: [f64; 2]) -> Lattice {
    let mut best = model.lattice_points[0];
    let mut top = f64::NEG_INFINITY;
    for u in &model.lattice_points {
        let v = u[0] as f64 * x[0] + u[1] as f64 * x[1];
        if v > top {
            top = v;
            best = *u;
        }
    }
    best
}

/// Value, gradient, Hessian and Hessian determinant of `F0` at `x`.
///
/// The covariance is accumulated from centred differences so that the
/// determinant keeps full relative accuracy where it is tiny.
pub fn analytic(model: &ReducedModel, x: [f64; 2]) -> (f64, [f64; 2], [[f64; 2]; 2], f64) {
    let (f, p) = softmax(model, x);
    let star = anchor(model, x);
    let du: Vec<[f64; 2]> = model
        .lattice_points
        .iter()
        .map(|u| [(u[0] - star[0]) as f64, (u[1] - star[1]) as f64])
        .collect();
    let mut w = [0.0; 2];
    for (d, &pu) in du.iter().zip(&p) {
        w[0] += pu * d[0];
        w[1] += pu * d[1];
    }
    let grad = [star[0] as f64 + w[0], star[1] as f64 + w[1]];
    let c: Vec<[f64; 2]> = du.iter().map(|d| [d[0] - w[0], d[1] - w[1]]).collect();
    let mut hm = [[0.0; 2]; 2];
    for (v, &pu) in c.iter().zip(&p) {
        hm[0][0] += pu * v[0] * v[0];
        hm[0][1] += pu * v[0] * v[1];
        hm[1][1] += pu * v[1] * v[1];
    }
    hm[1][0] = hm[0][1];
    let det = if model.n == 1 {
        hm[0][0]
    } else {
        let mut s = 0.0;
        for (a, &pa) in c.iter().zip(&p) {
            for (b, &pb) in c.iter().zip(&p) {
                let x = a[0] * b[1] - a[1] * b[0];
                s += pa * pb * x * x;
            }
        }
        0.5 * s
    };
    (f, grad, hm, det)
}

/// Signed area of the polygon `0, q[1], …, q[m-1]`; in one dimension the
/// length `q[1]`.
pub fn cell_area(q: &[[f64; 2]]) -> f64 {
    if q.len() == 2 {
        return q[1][0] - q[0][0];
    }
    let m = q.len();
    let mut s = 0.0;
    for j in 0..m {
        let a = q[j];
        let b = q[(j + 1) % m];
        s += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * s
}

#[derive(Debug, Clone)]
pub struct ReferenceData {
    pub f0: Vec<f64>,
    pub grad0: Vec<[f64; 2]>,
    pub h0: Vec<[[f64; 2]; 2]>,
    /// Analytic `det D²F0` per node.
    pub det0: Vec<f64>,
    /// Image area of each dual cell under `∇F0`.
    pub mass0: Vec<f64>,
    /// Quadrature weights: `Σ weights·det0` is the discrete total mass.
    pub weights: Vec<f64>,
    /// Reduced volume used in every normalized integral.
    pub v_red: f64,
    pub polytope_volume: f64,
    /// `1 − v_red / polytope_volume`.
    pub tail: f64,
    pub h_ref: Vec<f64>,
    pub h_ref_constant: f64,
    /// `∇F0` at every gradient point.
    pub point_grad0: Vec<[f64; 2]>,
    /// Cell corners of `∇F0` relative to the first corner, per node.
    pub offsets0: Vec<[f64; 2]>,
}

/// Sample the reference potential and normalize its Ricci potential.
pub fn build_reference(model: &ReducedModel, grid: &Grid, tail_tolerance: f64) -> Result<ReferenceData> {
    if grid.n != model.n {
        return Err(Error::Config("grid and model dimensions differ".into()));
    }
    let ni = grid.len();
    let mut f0 = Vec::with_capacity(ni);
    let mut grad0 = Vec::with_capacity(ni);
    let mut h0 = Vec::with_capacity(ni);
    let mut det0 = Vec::with_capacity(ni);
    for &x in &grid.x {
        let (f, g, hm, d) = analytic(model, x);
        f0.push(f);
        grad0.push(g);
        h0.push(hm);
        det0.push(d);
    }
    let point_grad0: Vec<[f64; 2]> = (0..grid.points.len())
        .map(|q| analytic(model, grid.point_x(q)).1)
        .collect();

    let m = grid.m;
    let mut offsets0 = Vec::with_capacity(ni * m);
    let mut mass0 = Vec::with_capacity(ni);
    for (i, &x) in grid.x.iter().enumerate() {
        let star = anchor(model, x);
        let du: Vec<[f64; 2]> = model
            .lattice_points
            .iter()
            .map(|u| [(u[0] - star[0]) as f64, (u[1] - star[1]) as f64])
            .collect();
        let probs: Vec<Vec<f64>> = (0..m)
            .map(|j| softmax(model, grid.point_x(grid.cell[i * m + j])).1)
            .collect();
        let start = offsets0.len();
        for pj in &probs {
            let mut r = [0.0; 2];
            for ((a, b), d) in pj.iter().zip(&probs[0]).zip(&du) {
                r[0] += (a - b) * d[0];
                r[1] += (a - b) * d[1];
            }
            offsets0.push(r);
        }
        let a = cell_area(&offsets0[start..]);
        if !(a > 0.0) {
            return Err(Error::NotAdmissible { node: i, det: a });
        }
        mass0.push(a);
    }
    let weights: Vec<f64> = mass0.iter().zip(&det0).map(|(a, d)| a / d).collect();
    let v_red = pairwise_sum(&mass0);
    let tail = 1.0 - v_red / model.polytope_volume;
    if tail > tail_tolerance {
        return Err(Error::DomainTooSmall { tail, tolerance: tail_tolerance });
    }
    let raw: Vec<f64> = det0.iter().zip(&f0).map(|(d, f)| -math::ln(*d) - f).collect();
    let top = math::max(&raw);
    let s: Vec<f64> = raw.iter().zip(&mass0).map(|(r, a)| a * math::exp(r - top)).collect();
    let c = -(top + math::ln(pairwise_sum(&s) / v_red));
    let h_ref = raw.iter().map(|r| r + c).collect();
    Ok(ReferenceData {
        f0,
        grad0,
        h0,
        det0,
        mass0,
        weights,
        v_red,
        polytope_volume: model.polytope_volume,
        tail,
        h_ref,
        h_ref_constant: c,
        point_grad0,
        offsets0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_model;

    #[test]
    fn cp1_values_at_origin() {
        let m = build_model("cp1").unwrap();
        let (f, g, hm, d) = analytic(&m, [0.0, 0.0]);
        assert!((f - math::ln(3.0)).abs() < 1e-15);
        assert!(g[0].abs() < 1e-15);
        assert!((hm[0][0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ke_reference_has_vanishing_ricci_potential() {
        let m = build_model("cp1").unwrap().with_ke_reference().unwrap();
        let g = Grid::new(&m, 12.0, 129).unwrap();
        let r = build_reference(&m, &g, 1e-3).unwrap();
        assert!(math::max_abs(&r.h_ref) < 1e-12);
    }

    #[test]
    fn determinant_matches_matrix_and_stays_positive_in_corners() {
        let m = build_model("cp2").unwrap();
        let (_, _, hm, d) = analytic(&m, [0.3, -0.2]);
        assert!((hm[0][0] * hm[1][1] - hm[0][1] * hm[1][0] - d).abs() < 1e-14);
        let (_, _, _, d) = analytic(&m, [-11.0, -11.5]);
        assert!(d > 0.0 && d < 1e-8);
    }
}
