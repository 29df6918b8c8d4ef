//! Monte Carlo sampling of the peak height distribution (MCDLM).
//!
//! Draws (center, neighbors) vectors from N(0, Sigma) or a multivariate t
//! with shape Sigma, keeps the center height whenever it strictly exceeds
//! every neighbor, and exposes the empirical CDF of accepted heights.
//!
//! Every attempt has its own counter-based RNG stream (attempt m uses
//! stream m of a ChaCha8 generator keyed by the seed), so results are a
//! deterministic function of (Sigma, model, seed, chunk constant) and do
//! not depend on thread count.

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::cov::NeighborhoodCov;
use crate::error::{Error, Result};
use crate::lattice::Field;

/// Marginal model of the neighborhood vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakModel {
    Gaussian,
    StudentT { nu: u64 },
}

impl PeakModel {
    pub fn label(&self) -> String {
        match self {
            PeakModel::Gaussian => "gaussian".to_string(),
            PeakModel::StudentT { nu } => format!("t{nu}"),
        }
    }
}

/// Accepted local-maximum heights from the Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakSampleSet {
    heights: Vec<f64>, // sorted ascending
    attempted: u64,
    seed: u64,
    model: PeakModel,
    cov_fingerprint: u64,
}

/// A p-value that may be right-censored at the Monte Carlo resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PValue {
    pub value: f64,
    /// True when the queried height exceeded every sampled height; the value
    /// is then reported as 1/(N+1) rather than zero.
    pub censored: bool,
}

impl PeakSampleSet {
    /// Builds a set from raw parts, validating the invariants.
    pub fn from_parts(
        mut heights: Vec<f64>,
        attempted: u64,
        seed: u64,
        model: PeakModel,
        cov_fingerprint: u64,
    ) -> Result<Self> {
        if heights.is_empty() {
            return Err(Error::invalid(
                "sample set must contain at least one height",
            ));
        }
        if heights.len() as u64 > attempted {
            return Err(Error::invalid("accepted count exceeds attempted count"));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(Error::invalid("heights must be finite"));
        }
        heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(PeakSampleSet {
            heights,
            attempted,
            seed,
            model,
            cov_fingerprint,
        })
    }

    /// Sorted accepted heights.
    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// N, the number of accepted samples.
    pub fn accepted(&self) -> usize {
        self.heights.len()
    }

    /// M, the number of attempts consumed.
    pub fn attempted(&self) -> u64 {
        self.attempted
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> PeakModel {
        self.model
    }

    pub fn cov_fingerprint(&self) -> u64 {
        self.cov_fingerprint
    }

    /// Empirical CDF: fraction of accepted heights <= u.
    pub fn cdf(&self, u: f64) -> f64 {
        let le = self.heights.partition_point(|&h| h <= u);
        le as f64 / self.heights.len() as f64
    }

    /// Peak p-value 1 - F(u), censored to 1/(N+1) when u exceeds every
    /// sampled height.
    pub fn pvalue(&self, u: f64) -> PValue {
        let n = self.heights.len();
        let gt = n - self.heights.partition_point(|&h| h <= u);
        if gt == 0 {
            PValue {
                value: 1.0 / (n as f64 + 1.0),
                censored: true,
            }
        } else {
            PValue {
                value: gt as f64 / n as f64,
                censored: false,
            }
        }
    }
}

/// Standalone form of [`PeakSampleSet::cdf`].
pub fn empirical_cdf(set: &PeakSampleSet, u: f64) -> f64 {
    set.cdf(u)
}

/// Standalone form of [`PeakSampleSet::pvalue`].
pub fn peak_pvalue(set: &PeakSampleSet, u: f64) -> PValue {
    set.pvalue(u)
}

/// Attempts per RNG chunk. Fixed so that results are independent of the
/// number of worker threads.
const CHUNK: u64 = 4096;

/// Default accepted-sample budgets: 10^6 below the near-singular regime,
/// 2 x 10^5 at rho >= 0.99; attempts capped at 100x the target.
pub fn default_budget(max_axis_rho: f64) -> (usize, u64) {
    let target = if max_axis_rho < 0.99 {
        1_000_000
    } else {
        200_000
    };
    (target, target as u64 * 100)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// 32-byte ChaCha key expanded from a 64-bit seed.
pub(crate) fn key_from_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for i in 0..4 {
        key[i * 8..(i + 1) * 8].copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

/// Derives an independent sub-seed, e.g. one per lookup-table row.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed ^ index.wrapping_mul(0xA076_1D64_78BD_642F);
    splitmix64(&mut state)
}

/// A square root of Sigma for sampling: triangular factorization with
/// diagonal jitter retries, falling back to an eigendecomposition square
/// root with eigenvalues clipped at zero.
fn sampling_root(cov: &NeighborhoodCov) -> Result<Vec<f64>> {
    let m = cov.matrix();
    let n = m.nrows();
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += jitter;
        }
        if let Some(chol) = jittered.cholesky() {
            let l = chol.l();
            let mut flat = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    flat[i * n + j] = l[(i, j)];
                }
            }
            return Ok(flat);
        }
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -1e-6 {
        return Err(Error::numeric(
            "covariance is not positive semidefinite; run psd repair first",
        ));
    }
    let mut flat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            flat[i * n + j] = eig.eigenvectors[(i, j)] * eig.eigenvalues[j].max(0.0).sqrt();
        }
    }
    Ok(flat)
}

struct AttemptKernel {
    key: [u8; 32],
    root: Vec<f64>, // row-major (k+1) x (k+1)
    n: usize,
    nu: Option<f64>,
}

impl AttemptKernel {
    /// Runs attempt `m`; returns the center height when it is a strict max.
    fn run(&self, m: u64, z: &mut [f64]) -> Option<f64> {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(m);
        for slot in z.iter_mut() {
            *slot = StandardNormal.sample(&mut rng);
        }
        let scale = match self.nu {
            None => 1.0,
            Some(nu) => {
                let chi2: f64 = ChiSquared::new(nu).unwrap().sample(&mut rng);
                (nu / chi2).sqrt()
            }
        };
        let n = self.n;
        let x0 = self.root[0] * z[0];
        for i in 1..n {
            let row = &self.root[i * n..i * n + n];
            let mut xi = 0.0;
            for j in 0..n {
                xi += row[j] * z[j];
            }
            if xi >= x0 {
                return None;
            }
        }
        Some(x0 * scale)
    }
}

/// Algorithm: draw neighborhood vectors until `target_n` centers have been
/// accepted as strict local maxima or `max_m` attempts are consumed.
pub fn sample_local_maxima(
    cov: &NeighborhoodCov,
    model: PeakModel,
    target_n: usize,
    max_m: u64,
    seed: u64,
) -> Result<PeakSampleSet> {
    if target_n == 0 {
        return Err(Error::invalid("target_n must be >= 1"));
    }
    if max_m < target_n as u64 {
        return Err(Error::invalid("max_m must be at least target_n"));
    }
    if let PeakModel::StudentT { nu } = model {
        if nu == 0 {
            return Err(Error::invalid("degrees of freedom must be >= 1"));
        }
    }
    let kernel = AttemptKernel {
        key: key_from_seed(seed),
        root: sampling_root(cov)?,
        n: cov.size(),
        nu: match model {
            PeakModel::Gaussian => None,
            PeakModel::StudentT { nu } => Some(nu as f64),
        },
    };

    let threads = rayon::current_num_threads() as u64;
    let chunks_per_wave = (threads * 8).max(8);
    let total_chunks = max_m.div_ceil(CHUNK);

    let mut heights: Vec<f64> = Vec::with_capacity(target_n.min(1 << 20));
    let mut attempted: u64 = 0;
    let mut wave_start: u64 = 0;
    'outer: while wave_start < total_chunks {
        let wave_end = (wave_start + chunks_per_wave).min(total_chunks);
        let wave: Vec<Vec<(u64, f64)>> = (wave_start..wave_end)
            .into_par_iter()
            .map(|chunk| {
                let lo = chunk * CHUNK;
                let hi = ((chunk + 1) * CHUNK).min(max_m);
                let mut z = vec![0.0f64; kernel.n];
                let mut local = Vec::new();
                for m in lo..hi {
                    if let Some(h) = kernel.run(m, &mut z) {
                        local.push((m, h));
                    }
                }
                local
            })
            .collect();
        for (offset, chunk_hits) in wave.iter().enumerate() {
            let chunk = wave_start + offset as u64;
            let chunk_end = ((chunk + 1) * CHUNK).min(max_m);
            for &(m, h) in chunk_hits {
                heights.push(h);
                if heights.len() == target_n {
                    attempted = m + 1;
                    break 'outer;
                }
            }
            attempted = chunk_end;
        }
        wave_start = wave_end;
    }

    if heights.is_empty() {
        return Err(Error::numeric(
            "no local maxima accepted within the attempt budget; covariance may be degenerate",
        ));
    }
    PeakSampleSet::from_parts(heights, attempted, seed, model, cov.fingerprint())
}

/// Voxelwise Gaussianization of a t-statistic field:
/// Z = -Phi^{-1}(F_{t,nu}(-T)). Strictly increasing, so peak locations are
/// preserved.
pub fn gaussianize_t(field: &Field, nu: u64) -> Result<Field> {
    if nu == 0 {
        return Err(Error::invalid("degrees of freedom must be >= 1"));
    }
    let t_dist = StudentsT::new(0.0, 1.0, nu as f64)
        .map_err(|e| Error::numeric(format!("t distribution: {e}")))?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    field.map(|t| {
        let p = t_dist.cdf(-t).clamp(1e-300, 1.0 - 1e-16);
        -normal.inverse_cdf(p)
    })
}

/// Transforms a single t value to its Gaussianized height.
pub fn gaussianize_value(t: f64, nu: u64) -> Result<f64> {
    let t_dist = StudentsT::new(0.0, 1.0, nu as f64)
        .map_err(|e| Error::numeric(format!("t distribution: {e}")))?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let p = t_dist.cdf(-t).clamp(1e-300, 1.0 - 1e-16);
    Ok(-normal.inverse_cdf(p))
}
