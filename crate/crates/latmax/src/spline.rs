//! Cubic smoothing splines (Reinsch algorithm), cross-validated smoothing
//! parameter selection, and isotonic projection.

use crate::error::{Error, Result};

/// A fitted natural cubic smoothing spline.
#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    /// Fitted values at the knots.
    values: Vec<f64>,
    /// Second derivatives at the knots (zero at both ends).
    second: Vec<f64>,
}

/// Solves the Reinsch system: minimize sum (y_i - f_i)^2 + lambda int f''^2.
///
/// `x` must be strictly increasing with at least 3 points.
pub fn fit(x: &[f64], y: &[f64], lambda: f64) -> Result<SmoothingSpline> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::invalid("x and y must have equal length"));
    }
    if n < 3 {
        return Err(Error::invalid("smoothing spline needs at least 3 points"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("knots must be strictly increasing"));
    }

    let m = n - 2; // interior knots
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

    // pentadiagonal symmetric system (R + lambda Q^T Q) gamma = Q^T y,
    // stored as three bands
    let mut d0 = vec![0.0f64; m]; // diagonal
    let mut d1 = vec![0.0f64; m.saturating_sub(1)]; // first superdiagonal
    let mut d2 = vec![0.0f64; m.saturating_sub(2)]; // second superdiagonal
    let mut rhs = vec![0.0f64; m];

    for i in 0..m {
        let (h0, h1) = (h[i], h[i + 1]);
        let (q0, q1, q2) = (1.0 / h0, -1.0 / h0 - 1.0 / h1, 1.0 / h1);
        d0[i] = (h0 + h1) / 3.0 + lambda * (q0 * q0 + q1 * q1 + q2 * q2);
        if i + 1 < m {
            let h2 = h[i + 2];
            let (p1, p2) = (1.0 / h1, -1.0 / h1 - 1.0 / h2);
            d1[i] = h1 / 6.0 + lambda * (q1 * p1 + q2 * p2);
        }
        if i + 2 < m {
            // only Q^T Q reaches the second band: (1/h_{i+1})(1/h_{i+2})
            d2[i] = lambda * q2 / h[i + 2];
        }
        rhs[i] = q0 * y[i] + q1 * y[i + 1] + q2 * y[i + 2];
    }

    let gamma = solve_penta(&mut d0, &mut d1, &mut d2, &mut rhs)?;

    // f = y - lambda Q gamma
    let mut values = y.to_vec();
    for (i, &g) in gamma.iter().enumerate() {
        let (h0, h1) = (h[i], h[i + 1]);
        values[i] -= lambda * (1.0 / h0) * g;
        values[i + 1] -= lambda * (-1.0 / h0 - 1.0 / h1) * g;
        values[i + 2] -= lambda * (1.0 / h1) * g;
    }

    let mut second = vec![0.0f64; n];
    second[1..n - 1].copy_from_slice(&gamma);
    Ok(SmoothingSpline {
        knots: x.to_vec(),
        values,
        second,
    })
}

/// In-place banded Cholesky solve of a symmetric positive-definite
/// pentadiagonal system.
fn solve_penta(
    d0: &mut [f64],
    d1: &mut [f64],
    d2: &mut [f64],
    rhs: &mut [f64],
) -> Result<Vec<f64>> {
    let n = d0.len();
    // L D L^T factorization with bandwidth 2
    for i in 0..n {
        let mut di = d0[i];
        if i >= 1 {
            di -= d1[i - 1] * d1[i - 1] * d0[i - 1];
        }
        if i >= 2 {
            di -= d2[i - 2] * d2[i - 2] * d0[i - 2];
        }
        if !(di > 0.0) {
            return Err(Error::numeric("spline system is not positive definite"));
        }
        d0[i] = di;
        if i + 1 < n {
            let mut e = d1[i];
            if i >= 1 {
                e -= d1[i - 1] * d2[i - 1] * d0[i - 1];
            }
            d1[i] = e / di;
        }
        if i + 2 < n {
            d2[i] /= di;
        }
    }
    // forward: L z = rhs
    for i in 0..n {
        let mut z = rhs[i];
        if i >= 1 {
            z -= d1[i - 1] * rhs[i - 1];
        }
        if i >= 2 {
            z -= d2[i - 2] * rhs[i - 2];
        }
        rhs[i] = z;
    }
    // diagonal
    for i in 0..n {
        rhs[i] /= d0[i];
    }
    // backward: L^T gamma = z
    for i in (0..n).rev() {
        let mut g = rhs[i];
        if i + 1 < n {
            g -= d1[i] * rhs[i + 1];
        }
        if i + 2 < n {
            g -= d2[i] * rhs[i + 2];
        }
        rhs[i] = g;
    }
    Ok(rhs.to_vec())
}

impl SmoothingSpline {
    /// Fitted values at the knots.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Natural cubic spline evaluation; linear extrapolation beyond the ends.
    pub fn eval(&self, t: f64) -> f64 {
        let x = &self.knots;
        let n = x.len();
        if t <= x[0] {
            let h = x[1] - x[0];
            let slope = (self.values[1] - self.values[0]) / h - h * self.second[1] / 6.0;
            return self.values[0] + slope * (t - x[0]);
        }
        if t >= x[n - 1] {
            let h = x[n - 1] - x[n - 2];
            let slope =
                (self.values[n - 1] - self.values[n - 2]) / h + h * self.second[n - 2] / 6.0;
            return self.values[n - 1] + slope * (t - x[n - 1]);
        }
        let i = match x.partition_point(|&k| k <= t) {
            0 => 0,
            p => p - 1,
        };
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - t) / h;
        let b = (t - x[i]) / h;
        a * self.values[i]
            + b * self.values[i + 1]
            + ((a * a * a - a) * self.second[i] + (b * b * b - b) * self.second[i + 1]) * h * h
                / 6.0
    }
}

/// Log-spaced smoothing-parameter candidates adapted to the grid scale.
///
/// The natural unit is the fourth power of the mean spacing: at that lambda
/// the penalty and residual terms balance, largely independently of the
/// point count. The grid spans near-interpolation to heavy smoothing while
/// staying within f64 factorization range.
pub fn lambda_grid(x: &[f64]) -> Vec<f64> {
    let span = x[x.len() - 1] - x[0];
    let mean_h = span / (x.len() - 1) as f64;
    let base = mean_h.powi(4);
    (0..=14).step_by(2).map(|k| base * 10f64.powi(k)).collect()
}

/// Fits with the given lambda, backing off by factors of 10 when the
/// penalized system is too ill-conditioned to factor. Lambda 0 (the natural
/// cubic interpolant) always factors.
pub fn fit_with_backoff(x: &[f64], y: &[f64], lambda: f64) -> Result<SmoothingSpline> {
    let mut l = lambda;
    loop {
        match fit(x, y, l) {
            Ok(s) => return Ok(s),
            Err(_) if l > 1e-300 => l /= 10.0,
            Err(_) => return fit(x, y, 0.0),
        }
        if l < 1e-30 * lambda.max(1e-300) {
            return fit(x, y, 0.0);
        }
    }
}

/// Selects the smoothing parameter by k-fold cross-validation with squared
/// error, sharing one lambda across all series (each series is a y-vector on
/// the common grid `x`). Folds interleave grid points deterministically.
/// Candidates whose system fails to factor on any fold are skipped.
pub fn cv_select_lambda(
    x: &[f64],
    series: &mut dyn Iterator<Item = Vec<f64>>,
    lambdas: &[f64],
    folds: usize,
) -> Result<f64> {
    if lambdas.is_empty() {
        return Err(Error::invalid("lambda grid must be nonempty"));
    }
    if folds < 2 {
        return Err(Error::invalid("cross-validation needs at least 2 folds"));
    }
    let n = x.len();
    let mut errors = vec![0.0f64; lambdas.len()];
    let mut any_variation = false;
    let mut n_series = 0usize;
    for y in series {
        if y.len() != n {
            return Err(Error::invalid("series length must match the grid"));
        }
        n_series += 1;
        if y.windows(2).any(|w| w[0] != w[1]) {
            any_variation = true;
        }
        for fold in 0..folds {
            let train_x: Vec<f64> = (0..n).filter(|i| i % folds != fold).map(|i| x[i]).collect();
            let train_y: Vec<f64> = (0..n).filter(|i| i % folds != fold).map(|i| y[i]).collect();
            if train_x.len() < 3 {
                return Err(Error::invalid("folds leave too few training points"));
            }
            for (li, &lambda) in lambdas.iter().enumerate() {
                if errors[li].is_infinite() {
                    continue;
                }
                match fit(&train_x, &train_y, lambda) {
                    Ok(s) => {
                        let err: f64 = (0..n)
                            .filter(|i| i % folds == fold)
                            .map(|i| {
                                let d = s.eval(x[i]) - y[i];
                                d * d
                            })
                            .sum();
                        errors[li] += err;
                    }
                    Err(_) => errors[li] = f64::INFINITY,
                }
            }
        }
    }
    if n_series == 0 {
        return Err(Error::invalid("cross-validation needs at least one series"));
    }
    if !any_variation {
        return Err(Error::numeric(
            "cross-validation degenerate: constant series",
        ));
    }
    let (best, best_err) = errors
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    if best_err.is_infinite() {
        return Err(Error::numeric(
            "no smoothing parameter candidate was solvable",
        ));
    }
    Ok(lambdas[best])
}

/// Pool-adjacent-violators projection to a non-decreasing sequence.
pub fn isotonic_non_decreasing(y: &mut [f64]) {
    let n = y.len();
    if n < 2 {
        return;
    }
    // (mean, count) blocks
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::with_capacity(n);
    for &v in y.iter() {
        means.push(v);
        counts.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, c2) = (means.pop().unwrap(), counts.pop().unwrap());
            let last = means.len() - 1;
            let c1 = counts[last];
            means[last] = (means[last] * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64;
            counts[last] = c1 + c2;
        }
    }
    let mut pos = 0usize;
    for (m, c) in means.iter().zip(&counts) {
        for slot in y.iter_mut().skip(pos).take(*c) {
            *slot = *m;
        }
        pos += c;
    }
}
