//! Deterministic reductions and small trend fits.

/// Sum with a fixed pairwise tree, independent of any scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `Σ a_i b_i` with the same fixed tree.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    if a.len() <= 8 {
        return a.iter().zip(b).map(|(x, y)| x * y).sum();
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

/// Least-squares line `y ≈ slope·t + intercept`.
pub fn linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    if t.len() < 2 {
        return (0.0, y.first().copied().unwrap_or(0.0));
    }
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in t.iter().zip(y) {
        sxy += (a - tm) * (b - ym);
        sxx += (a - tm) * (a - tm);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, ym - slope * tm)
}

/// Index where the final third of a series of length `n` starts.
pub fn final_third(n: usize) -> usize {
    n - (n / 3).max(2).min(n)
}

/// Fraction of consecutive increments that are nonnegative.
pub fn increasing_fraction(y: &[f64]) -> f64 {
    if y.len() < 2 {
        return 1.0;
    }
    let up = y.windows(2).filter(|w| w[1] >= w[0]).count();
    up as f64 / (y.len() - 1) as f64
}
