//! Precomputed lookup table of the Monte Carlo peak height CDF over a grid
//! of adjacent-voxel correlations, for the isotropic fully connected case.
//!
//! The raw table row for each rho holds the empirical CDF of accepted
//! heights evaluated at a common pooled u grid. Cubic spline smoothing is
//! applied across rho and then across u (one cross-validated smoothing
//! parameter per axis), followed by an isotonic projection along u so every
//! row remains a valid CDF.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cov::kronecker_cov;
use crate::error::{Error, Result};
use crate::mcdlm::{derive_seed, sample_local_maxima, PValue, PeakModel};
use crate::spline;

/// rho grid: 0.01 to 0.99 in steps of 0.01.
pub const RHO_START: f64 = 0.01;
pub const RHO_STEP: f64 = 0.01;
pub const N_RHO: usize = 99;

/// Number of pooled heights kept as the u grid.
pub const U_GRID_SIZE: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    dim: usize,
    u_grid: Vec<f64>,
    /// Row-major CDF values, N_RHO rows by u_grid.len() columns.
    f: Vec<f64>,
    smooth_rho: Option<f64>,
    smooth_u: Option<f64>,
    seed: u64,
    samples_per_rho: usize,
}

impl LookupTable {
    pub fn from_parts(
        dim: usize,
        u_grid: Vec<f64>,
        f: Vec<f64>,
        smooth_rho: Option<f64>,
        smooth_u: Option<f64>,
        seed: u64,
        samples_per_rho: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("table dimension must be >= 1"));
        }
        if u_grid.len() < 2 || u_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("u grid must be strictly increasing"));
        }
        if f.len() != N_RHO * u_grid.len() {
            return Err(Error::invalid("table payload size mismatch"));
        }
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("CDF values must lie in [0, 1]"));
        }
        Ok(LookupTable {
            dim,
            u_grid,
            f,
            smooth_rho,
            smooth_u,
            seed,
            samples_per_rho,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho_at(&self, row: usize) -> f64 {
        RHO_START + row as f64 * RHO_STEP
    }

    pub fn u_grid(&self) -> &[f64] {
        &self.u_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.f
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.u_grid.len();
        &self.f[r * n..(r + 1) * n]
    }

    pub fn smoothing(&self) -> (Option<f64>, Option<f64>) {
        (self.smooth_rho, self.smooth_u)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples_per_rho(&self) -> usize {
        self.samples_per_rho
    }

    /// True when every row is non-decreasing along u.
    pub fn rows_monotone(&self) -> bool {
        (0..N_RHO).all(|r| self.row(r).windows(2).all(|w| w[0] <= w[1] + 1e-15))
    }

    /// Bilinear interpolation of the CDF at (rho, u).
    fn cdf_at(&self, rho: f64, u: f64) -> Result<(f64, bool)> {
        if !(RHO_START..=RHO_START + (N_RHO - 1) as f64 * RHO_STEP + 1e-12).contains(&rho) {
            return Err(Error::invalid(format!(
                "rho {rho} outside the table range [{RHO_START}, 0.99]"
            )));
        }
        let pos = ((rho - RHO_START) / RHO_STEP).clamp(0.0, (N_RHO - 1) as f64);
        let r0 = (pos.floor() as usize).min(N_RHO - 2);
        let rf = (pos - r0 as f64).clamp(0.0, 1.0);

        let n = self.u_grid.len();
        let (c0, c1, uf, censored) = if u <= self.u_grid[0] {
            (0, 0, 0.0, u < self.u_grid[0])
        } else if u >= self.u_grid[n - 1] {
            (n - 1, n - 1, 0.0, u > self.u_grid[n - 1])
        } else {
            let hi = self.u_grid.partition_point(|&g| g <= u);
            let lo = hi - 1;
            let span = self.u_grid[hi] - self.u_grid[lo];
            ((lo), (hi), (u - self.u_grid[lo]) / span, false)
        };
        let read = |r: usize| -> f64 {
            let row = self.row(r);
            row[c0] + (row[c1] - row[c0]) * uf
        };
        let f = read(r0) * (1.0 - rf) + read(r0 + 1) * rf;
        Ok((f.clamp(0.0, 1.0), censored))
    }

    /// p-value 1 - F(u; rho); u beyond the grid is clamped and flagged.
    pub fn query(&self, rho: f64, u: f64) -> Result<PValue> {
        let (f, censored) = self.cdf_at(rho, u)?;
        Ok(PValue {
            value: 1.0 - f,
            censored,
        })
    }
}

/// Builds the raw table: one MCDLM run per rho on the Kronecker covariance,
/// a pooled u grid, and per-row empirical CDF values.
pub fn build_table(dim: usize, samples_per_rho: usize, seed: u64) -> Result<LookupTable> {
    if !(1..=3).contains(&dim) {
        return Err(Error::invalid(
            "lookup tables are built for dimensions 1 to 3",
        ));
    }
    if samples_per_rho < 100 {
        return Err(Error::invalid("samples_per_rho must be at least 100"));
    }
    let rows: Vec<Vec<f64>> = (0..N_RHO)
        .into_par_iter()
        .map(|r| {
            let rho = RHO_START + r as f64 * RHO_STEP;
            let cov = kronecker_cov(rho, dim)?;
            let set = sample_local_maxima(
                &cov,
                PeakModel::Gaussian,
                samples_per_rho,
                samples_per_rho as u64 * 100,
                derive_seed(seed, r as u64),
            )?;
            Ok(set.heights().to_vec())
        })
        .collect::<Result<_>>()?;

    // pool and subsample the u grid
    let mut pool: Vec<f64> = rows.iter().flatten().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xFFFF));
    pool.shuffle(&mut rng);
    pool.truncate(U_GRID_SIZE);
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // nearly coincident order statistics are redundant and destabilize the
    // spline systems; enforce a minimum spacing
    let span = pool[pool.len() - 1] - pool[0];
    let min_gap = span * 1e-6;
    let mut u_grid = Vec::with_capacity(pool.len());
    for v in pool {
        if u_grid.last().is_none_or(|&last| v - last >= min_gap) {
            u_grid.push(v);
        }
    }

    let n = u_grid.len();
    let mut f = vec![0.0f64; N_RHO * n];
    f.par_chunks_mut(n)
        .zip(rows.par_iter())
        .for_each(|(slot, heights)| {
            // heights are sorted; two-pointer ECDF evaluation
            let total = heights.len() as f64;
            let mut i = 0usize;
            for (j, &u) in u_grid.iter().enumerate() {
                while i < heights.len() && heights[i] <= u {
                    i += 1;
                }
                slot[j] = i as f64 / total;
            }
        });

    LookupTable::from_parts(dim, u_grid, f, None, None, seed, samples_per_rho)
}

/// Cubic spline smoothing across rho then across u, each with a 5-fold
/// cross-validated smoothing parameter, followed by an isotonic projection
/// along u.
pub fn smooth_table(table: &LookupTable) -> Result<LookupTable> {
    let n = table.u_grid.len();
    let rho_x: Vec<f64> = (0..N_RHO).map(|r| table.rho_at(r)).collect();

    // lambda across rho, scored on a column subsample
    let col_step = (n / 4000).max(1);
    let lambda_rho = {
        let grid = spline::lambda_grid(&rho_x);
        let mut cols = (0..n)
            .step_by(col_step)
            .map(|j| (0..N_RHO).map(|r| table.f[r * n + j]).collect::<Vec<f64>>());
        spline::cv_select_lambda(&rho_x, &mut cols, &grid, 5)?
    };
    let mut smoothed = vec![0.0f64; N_RHO * n];
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = (0..N_RHO).map(|r| table.f[r * n + j]).collect();
            spline::fit_with_backoff(&rho_x, &col, lambda_rho).map(|s| s.values().to_vec())
        })
        .collect::<Result<_>>()?;
    for (j, col) in columns.iter().enumerate() {
        for r in 0..N_RHO {
            smoothed[r * n + j] = col[r];
        }
    }

    // lambda across u, scored on a row subsample of the rho-smoothed table
    let lambda_u = {
        let grid = spline::lambda_grid(&table.u_grid);
        let mut rows = (0..N_RHO)
            .step_by(3)
            .map(|r| smoothed[r * n..(r + 1) * n].to_vec());
        spline::cv_select_lambda(&table.u_grid, &mut rows, &grid, 5)?
    };
    let rows: Vec<Vec<f64>> = (0..N_RHO)
        .into_par_iter()
        .map(|r| {
            let row = &smoothed[r * n..(r + 1) * n];
            spline::fit_with_backoff(&table.u_grid, row, lambda_u).map(|s| s.values().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut f = vec![0.0f64; N_RHO * n];
    for (r, row) in rows.iter().enumerate() {
        let mut row = row.clone();
        spline::isotonic_non_decreasing(&mut row);
        for v in row.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        f[r * n..(r + 1) * n].copy_from_slice(&row);
    }

    LookupTable::from_parts(
        table.dim,
        table.u_grid.clone(),
        f,
        Some(lambda_rho),
        Some(lambda_u),
        table.seed,
        table.samples_per_rho,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_table(n_u: usize) -> LookupTable {
        // smooth sigmoid rows: F(u; rho) = logistic((u - m(rho)) / s(rho))
        let u_grid: Vec<f64> = (0..n_u)
            .map(|j| -3.0 + 8.0 * j as f64 / (n_u - 1) as f64)
            .collect();
        let mut f = vec![0.0; N_RHO * n_u];
        for r in 0..N_RHO {
            let rho = RHO_START + r as f64 * RHO_STEP;
            let m = 0.5 + rho;
            let s = 0.6 + 0.3 * rho;
            for (j, &u) in u_grid.iter().enumerate() {
                f[r * n_u + j] = 1.0 / (1.0 + (-(u - m) / s).exp());
            }
        }
        LookupTable::from_parts(2, u_grid, f, None, None, 0, 0).unwrap()
    }

    #[test]
    fn query_at_grid_node_returns_stored_value() {
        let t = synthetic_table(200);
        let r = 49; // rho = 0.50
        let j = 100;
        let p = t.query(t.rho_at(r), t.u_grid[j]).unwrap();
        assert!((p.value - (1.0 - t.row(r)[j])).abs() < 1e-12);
        assert!(!p.censored);
    }

    #[test]
    fn query_between_rows_is_bracketed() {
        let t = synthetic_table(200);
        let u = 1.234;
        let lo = t.query(0.50, u).unwrap().value;
        let hi = t.query(0.51, u).unwrap().value;
        let mid = t.query(0.505, u).unwrap().value;
        let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        assert!(mid >= a - 1e-12 && mid <= b + 1e-12);
    }

    #[test]
    fn query_monotone_in_u() {
        let t = synthetic_table(300);
        let mut prev = 1.0;
        for i in 0..60 {
            let u = -3.0 + 0.12 * i as f64;
            let p = t.query(0.37, u).unwrap().value;
            assert!(p <= prev + 1e-12);
            prev = p;
        }
    }

    #[test]
    fn query_clamps_and_flags_outside_u_grid() {
        let t = synthetic_table(100);
        let below = t.query(0.5, -100.0).unwrap();
        assert!(below.censored);
        assert!(below.value > 0.9);
        let above = t.query(0.5, 100.0).unwrap();
        assert!(above.censored);
    }

    #[test]
    fn query_rejects_rho_outside_grid() {
        let t = synthetic_table(100);
        assert!(t.query(0.005, 1.0).is_err());
        assert!(t.query(0.995, 1.0).is_err());
    }

    #[test]
    fn build_is_reproducible() {
        let a = build_table(1, 400, 7).unwrap();
        let b = build_table(1, 400, 7).unwrap();
        assert_eq!(a.u_grid(), b.u_grid());
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn build_rows_track_direct_mcdlm() {
        let t = build_table(1, 5_000, 11).unwrap();
        let cov = kronecker_cov(0.50, 1).unwrap();
        let fresh =
            sample_local_maxima(&cov, PeakModel::Gaussian, 50_000, 5_000_000, 1234).unwrap();
        let r = 49;
        let mut sup = 0.0f64;
        for (j, &u) in t.u_grid().iter().enumerate() {
            sup = sup.max((t.row(r)[j] - fresh.cdf(u)).abs());
        }
        assert!(sup < 0.03, "sup {sup}");
    }

    #[test]
    fn smoothing_smooth_input_changes_little() {
        let t = synthetic_table(400);
        let s = smooth_table(&t).unwrap();
        let max_change = t
            .values()
            .iter()
            .zip(s.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_change < 1e-3, "max change {max_change}");
        assert!(s.rows_monotone());
    }

    #[test]
    fn smoothing_denoises_but_keeps_shape() {
        // add deterministic noise to the sigmoid table; smoothing should
        // reduce the error to the clean truth
        let clean = synthetic_table(300);
        let n = clean.u_grid().len();
        let mut noisy_f = clean.values().to_vec();
        for (i, v) in noisy_f.iter_mut().enumerate() {
            let jitter =
                (((i as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0 - 0.5) * 0.05;
            *v = (*v + jitter).clamp(0.0, 1.0);
        }
        let noisy =
            LookupTable::from_parts(2, clean.u_grid().to_vec(), noisy_f, None, None, 0, 0).unwrap();
        let smoothed = smooth_table(&noisy).unwrap();
        let err = |t: &LookupTable| -> f64 {
            t.values()
                .iter()
                .zip(clean.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / (N_RHO * n) as f64
        };
        assert!(
            err(&smoothed) < err(&noisy) * 0.5,
            "{} vs {}",
            err(&smoothed),
            err(&noisy)
        );
        assert!(smoothed.rows_monotone());
    }
}
