//! Sparse rows and a banded LU factorization with partial pivoting.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (self.ptr[i]..self.ptr[i + 1]).map(|e| self.val[e] * x[self.idx[e]]).sum())
            .collect()
    }

    pub fn mul_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for i in 0..self.n {
            for e in self.ptr[i]..self.ptr[i + 1] {
                y[self.idx[e]] += self.val[e] * x[i];
            }
        }
        y
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for i in 0..self.n {
            for e in self.ptr[i]..self.ptr[i + 1] {
                d[i][self.idx[e]] += self.val[e];
            }
        }
        d
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for e in self.ptr[i]..self.ptr[i + 1] {
                let j = self.idx[e];
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// LU factors of a banded matrix, stored row-wise with room for pivot fill.
#[derive(Debug, Clone)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    /// Factor `a`; `None` if a zero pivot appears.
    pub fn factor(a: &Csr) -> Option<BandLu> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut ab = vec![0.0; n * width];
        for i in 0..n {
            for e in a.ptr[i]..a.ptr[i + 1] {
                ab[i * width + a.idx[e] + kl - i] += a.val[e];
            }
        }
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = math::abs(ab[k * width + kl]);
            for r in k + 1..=last {
                let v = math::abs(ab[r * width + k + kl - r]);
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            piv[k] = p;
            let right = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=right {
                    ab.swap(k * width + c + kl - k, p * width + c + kl - p);
                }
            }
            let d = ab[k * width + kl];
            for r in k + 1..=last {
                let rk = r * width + k + kl - r;
                let l = ab[rk] / d;
                ab[rk] = l;
                if l != 0.0 {
                    let (top, bottom) = ab.split_at_mut(r * width);
                    let src = &top[k * width + kl + 1..k * width + kl + 1 + (right - k)];
                    let dst = &mut bottom[k + 1 + kl - r..k + 1 + kl - r + (right - k)];
                    for (x, y) in dst.iter_mut().zip(src) {
                        *x -= l * y;
                    }
                }
            }
        }
        Some(BandLu { n, kl, ku, width, ab, piv })
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, w) = (self.n, self.kl, self.width);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for r in k + 1..=(k + kl).min(n - 1) {
                    b[r] -= self.ab[r * w + k + kl - r] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let right = (k + kl + self.ku).min(n - 1);
            let row = &self.ab[k * w + kl..k * w + kl + 1 + (right - k)];
            let mut s = b[k];
            for (c, a) in (k + 1..=right).zip(&row[1..]) {
                s -= a * b[c];
            }
            b[k] = s / row[0];
        }
    }
}

/// Eigenvalues (ascending) and column eigenvectors of a small symmetric
/// matrix by cyclic Jacobi rotations.
pub fn sym_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let diag: f64 = (0..p).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for i in 0..p {
            for j in i + 1..p {
                if a[i][j] == 0.0 {
                    continue;
                }
                let theta = (a[j][j] - a[i][i]) / (2.0 * a[i][j]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (math::abs(theta) + math::sqrt(theta * theta + 1.0));
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..p {
                    let (x, y) = (a[k][i], a[k][j]);
                    a[k][i] = c * x - s * y;
                    a[k][j] = s * x + c * y;
                }
                for k in 0..p {
                    let (x, y) = (a[i][k], a[j][k]);
                    a[i][k] = c * x - s * y;
                    a[j][k] = s * x + c * y;
                }
                for row in v.iter_mut() {
                    let (x, y) = (row[i], row[j]);
                    row[i] = c * x - s * y;
                    row[j] = s * x + c * y;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&x, &y| a[x][x].partial_cmp(&a[y][y]).unwrap_or(core::cmp::Ordering::Equal));
    let values = order.iter().map(|&k| a[k][k]).collect();
    let vectors = (0..p).map(|i| order.iter().map(|&k| v[i][k]).collect()).collect();
    (values, vectors)
}
