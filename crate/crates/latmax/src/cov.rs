//! Neighborhood covariance construction and repair.
//!
//! The (k+1) x (k+1) covariance of (center, neighbors) can be built
//! analytically from a kernel specification, from the Kronecker closed form
//! for isotropic Gaussian-kernel fields, or estimated from data by lag
//! averaging. All constructions restandardize to unit diagonal.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeSpec, Neighborhood, NeighborhoodKind};

/// Smoothing kernel specification. Bandwidths are standard deviations in
/// physical units (voxels times step size).
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// Discrete lattice convolution with an isotropic Gaussian kernel.
    IsotropicGaussian { eta: f64 },
    /// Discrete lattice convolution with an axis-aligned elliptical kernel.
    EllipticalGaussian { etas: Vec<f64> },
    /// Closed-form separable correlation exp(-(s-t)' Lambda (s-t)/2) with
    /// Lambda = diag(1/(2 eta_d^2)); no lattice summation.
    ContinuousGaussian { etas: Vec<f64> },
}

impl KernelSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            KernelSpec::IsotropicGaussian { eta } => *eta > 0.0 && eta.is_finite(),
            KernelSpec::EllipticalGaussian { etas } | KernelSpec::ContinuousGaussian { etas } => {
                etas.len() == dim && etas.iter().all(|e| *e > 0.0 && e.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "kernel bandwidths must be positive and match the dimension",
            ))
        }
    }

    fn eta(&self, d: usize) -> f64 {
        match self {
            KernelSpec::IsotropicGaussian { eta } => *eta,
            KernelSpec::EllipticalGaussian { etas } | KernelSpec::ContinuousGaussian { etas } => {
                etas[d]
            }
        }
    }
}

/// How a neighborhood covariance was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovProvenance {
    Kronecker,
    DiscreteKernel,
    ContinuousKernel,
    Empirical,
    Mixture,
}

/// Symmetric covariance of (center, neighbors); row and column 0 are the
/// center voxel, rows 1..=k follow the neighborhood's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodCov {
    nbhd: Neighborhood,
    matrix: DMatrix<f64>,
    provenance: CovProvenance,
    psd_repaired: bool,
    max_clipped: f64,
}

impl NeighborhoodCov {
    pub fn from_matrix(
        nbhd: Neighborhood,
        matrix: DMatrix<f64>,
        provenance: CovProvenance,
    ) -> Result<Self> {
        let k1 = nbhd.len() + 1;
        if matrix.nrows() != k1 || matrix.ncols() != k1 {
            return Err(Error::invalid("covariance size must be (k+1) x (k+1)"));
        }
        Ok(NeighborhoodCov {
            nbhd,
            matrix,
            provenance,
            psd_repaired: false,
            max_clipped: 0.0,
        })
    }

    pub fn nbhd(&self) -> &Neighborhood {
        &self.nbhd
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// k + 1, the covariance order.
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn provenance(&self) -> CovProvenance {
        self.provenance
    }

    pub fn psd_repaired(&self) -> bool {
        self.psd_repaired
    }

    /// Largest magnitude among eigenvalues clipped by [`psd_repair`].
    pub fn max_clipped(&self) -> f64 {
        self.max_clipped
    }

    /// Lag-1 correlation along axis `d`: the (center, +e_d) entry.
    pub fn axis_rho(&self, d: usize) -> Option<f64> {
        let mut e = vec![0i32; self.nbhd.dim()];
        e[d] = 1;
        self.nbhd
            .offsets()
            .iter()
            .position(|o| *o == e)
            .map(|i| self.matrix[(0, i + 1)])
    }

    /// FNV-1a hash of the matrix bit patterns (order, then entries row-major).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(&(self.size() as u64).to_le_bytes());
        for i in 0..self.matrix.nrows() {
            for j in 0..self.matrix.ncols() {
                eat(&self.matrix[(i, j)].to_le_bytes());
            }
        }
        h
    }
}

fn restandardize(m: &mut DMatrix<f64>) -> Result<()> {
    let n = m.nrows();
    let mut scale = DVector::zeros(n);
    for i in 0..n {
        let d = m[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::numeric("covariance diagonal must be positive"));
        }
        scale[i] = 1.0 / d.sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= scale[i] * scale[j];
        }
    }
    Ok(())
}

/// Offset vectors of (center, neighbors): position 0 is the zero vector.
fn positions(nbhd: &Neighborhood) -> Vec<Vec<i32>> {
    let mut pos = Vec::with_capacity(nbhd.len() + 1);
    pos.push(vec![0i32; nbhd.dim()]);
    pos.extend(nbhd.offsets().iter().cloned());
    pos
}

/// Closed-form covariance rho^{||s-t||^2} for the fully connected
/// neighborhood, built as the D-fold Kronecker power of the 3 x 3 matrix
/// A = [[1, rho, rho^4], [rho, 1, rho], [rho^4, rho, 1]] under the base-3
/// indexing, then reordered so the center occupies slot 0.
pub fn kronecker_cov(rho: f64, dim: usize) -> Result<NeighborhoodCov> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho must lie in (0, 1)"));
    }
    if dim == 0 {
        return Err(Error::invalid("dimension must be >= 1"));
    }
    let r4 = rho.powi(4);
    let a = DMatrix::from_row_slice(3, 3, &[1.0, rho, r4, rho, 1.0, rho, r4, rho, 1.0]);
    let mut kron = a.clone();
    for _ in 1..dim {
        kron = kron.kronecker(&a);
    }
    let n = 3usize.pow(dim as u32);
    let center = (n - 1) / 2;
    // slot 0 = center, then the remaining base-3 slots in order
    let mut perm = Vec::with_capacity(n);
    perm.push(center);
    perm.extend((0..n).filter(|&i| i != center));
    let mut matrix = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            matrix[(i, j)] = kron[(perm[i], perm[j])];
        }
    }
    let nbhd = Neighborhood::build(NeighborhoodKind::FullConnectivity, dim)?;
    Ok(NeighborhoodCov {
        nbhd,
        matrix,
        provenance: CovProvenance::Kronecker,
        psd_repaired: false,
        max_clipped: 0.0,
    })
}

/// One-axis lattice sum sum_j K((a-j) v) K(j v) for an integer lag `a`,
/// half-window `w` lattice points beyond both kernel centers.
fn axis_kernel_sum(a: i64, step: f64, eta: f64, w: i64) -> f64 {
    let lo = a.min(0) - w;
    let hi = a.max(0) + w;
    let inv2 = 1.0 / (2.0 * eta * eta);
    let mut s = 0.0;
    for j in lo..=hi {
        let d1 = (a - j) as f64 * step;
        let d2 = j as f64 * step;
        s += (-(d1 * d1 + d2 * d2) * inv2).exp();
    }
    s
}

/// Covariance of (center, neighbors) for a field obtained by smoothing white
/// noise with the given kernel. Discrete kinds evaluate the normalized
/// lattice sum truncated at ceil(8 eta / v) per axis; the continuous kind
/// uses the closed form.
#[allow(clippy::needless_range_loop)]
pub fn kernel_cov(
    kernel: &KernelSpec,
    lattice: &LatticeSpec,
    nbhd: &Neighborhood,
) -> Result<NeighborhoodCov> {
    let dim = lattice.dim();
    kernel.validate(dim)?;
    if nbhd.dim() != dim {
        return Err(Error::invalid(
            "neighborhood dimension does not match lattice",
        ));
    }
    let pos = positions(nbhd);
    let k1 = pos.len();
    let mut matrix = DMatrix::zeros(k1, k1);

    let continuous = matches!(kernel, KernelSpec::ContinuousGaussian { .. });
    // per-axis sums for integer lags 0..=2 (pairwise offsets differ by at most 2)
    let mut axis_ratio = vec![[0.0f64; 3]; dim];
    if !continuous {
        for (d, ratios) in axis_ratio.iter_mut().enumerate() {
            let eta = kernel.eta(d);
            let v = lattice.steps()[d];
            let w = (8.0 * eta / v).ceil() as i64;
            let denom = axis_kernel_sum(0, v, eta, w);
            if !(denom > 0.0) || !denom.is_finite() {
                return Err(Error::numeric("kernel weights degenerate to zero"));
            }
            for (lag, slot) in ratios.iter_mut().enumerate() {
                *slot = axis_kernel_sum(lag as i64, v, eta, w) / denom;
            }
        }
    }

    for i in 0..k1 {
        for j in i..k1 {
            let mut r = 1.0;
            if continuous {
                let mut expo = 0.0;
                for d in 0..dim {
                    let dp = (pos[i][d] - pos[j][d]) as f64 * lattice.steps()[d];
                    let eta = kernel.eta(d);
                    expo += dp * dp / (4.0 * eta * eta);
                }
                r = (-expo).exp();
            } else {
                for d in 0..dim {
                    let lag = (pos[i][d] - pos[j][d]).unsigned_abs() as usize;
                    r *= axis_ratio[d][lag];
                }
            }
            matrix[(i, j)] = r;
            matrix[(j, i)] = r;
        }
    }
    restandardize(&mut matrix)?;
    Ok(NeighborhoodCov {
        nbhd: nbhd.clone(),
        matrix,
        provenance: if continuous {
            CovProvenance::ContinuousKernel
        } else {
            CovProvenance::DiscreteKernel
        },
        psd_repaired: false,
        max_clipped: 0.0,
    })
}

/// Standardizes each voxel across samples: subtract the cross-sample mean,
/// divide by the unbiased cross-sample standard deviation.
pub fn voxelwise_standardize(fields: &[Field]) -> Result<Vec<Field>> {
    if fields.len() < 2 {
        return Err(Error::invalid(
            "voxelwise standardization needs at least 2 fields",
        ));
    }
    let lattice = fields[0].lattice().clone();
    if fields.iter().any(|f| f.lattice() != &lattice) {
        return Err(Error::invalid("fields must share a common lattice"));
    }
    let n = fields.len() as f64;
    let len = lattice.len();
    let mut mean = vec![0.0f64; len];
    for f in fields {
        for (m, v) in mean.iter_mut().zip(f.values()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut sd = vec![0.0f64; len];
    for f in fields {
        for ((s, m), v) in sd.iter_mut().zip(&mean).zip(f.values()) {
            let d = v - m;
            *s += d * d;
        }
    }
    for s in sd.iter_mut() {
        *s = (*s / (n - 1.0)).sqrt();
        if !(*s > 0.0) {
            return Err(Error::numeric("zero cross-sample variance at a voxel"));
        }
    }
    fields
        .iter()
        .map(|f| {
            let vals: Vec<f64> = f
                .values()
                .iter()
                .zip(&mean)
                .zip(&sd)
                .map(|((v, m), s)| (v - m) / s)
                .collect();
            Field::new(lattice.clone(), vals)
        })
        .collect()
}

fn canonical_lag(lag: &[i32]) -> Vec<i32> {
    match lag.iter().find(|&&a| a != 0) {
        Some(&first) if first < 0 => lag.iter().map(|&a| -a).collect(),
        _ => lag.to_vec(),
    }
}

/// Estimates the neighborhood covariance from standardized fields by
/// averaging products over all in-lattice pairs with the same lag
/// (or the same lag length when `isotropic`), then restandardizing.
/// The result is block-Toeplitz by construction.
pub fn empirical_cov(
    fields: &[Field],
    nbhd: &Neighborhood,
    isotropic: bool,
) -> Result<NeighborhoodCov> {
    empirical_cov_masked(fields, nbhd, isotropic, None)
}

/// [`empirical_cov`] with an optional mask; pairs with either endpoint
/// off-mask are dropped from the averaging sets.
pub fn empirical_cov_masked(
    fields: &[Field],
    nbhd: &Neighborhood,
    isotropic: bool,
    mask: Option<&[bool]>,
) -> Result<NeighborhoodCov> {
    if fields.len() < 2 {
        return Err(Error::invalid(
            "empirical covariance needs at least 2 fields",
        ));
    }
    let lattice = fields[0].lattice().clone();
    if fields.iter().any(|f| f.lattice() != &lattice) {
        return Err(Error::invalid("fields must share a common lattice"));
    }
    if nbhd.dim() != lattice.dim() {
        return Err(Error::invalid(
            "neighborhood dimension does not match lattice",
        ));
    }
    if let Some(m) = mask {
        if m.len() != lattice.len() {
            return Err(Error::invalid("mask length does not match lattice"));
        }
    }
    let pos = positions(nbhd);
    let k1 = pos.len();
    let dim = lattice.dim();

    // unique canonical lags needed by the matrix
    let mut lag_of_pair = vec![vec![Vec::new(); k1]; k1];
    let mut lags: Vec<Vec<i32>> = Vec::new();
    for i in 0..k1 {
        for j in 0..k1 {
            let lag: Vec<i32> = (0..dim).map(|d| pos[i][d] - pos[j][d]).collect();
            let lag = canonical_lag(&lag);
            if !lags.contains(&lag) {
                lags.push(lag.clone());
            }
            lag_of_pair[i][j] = lag;
        }
    }

    // per-lag sums of products and pair counts, accumulated over fields
    let mut sums: HashMap<Vec<i32>, (f64, u64)> =
        lags.iter().map(|l| (l.clone(), (0.0, 0))).collect();
    let mut coord = vec![0usize; dim];
    for lag in &lags {
        let (mut total, mut count) = (0.0f64, 0u64);
        coord.iter_mut().for_each(|c| *c = 0);
        for idx in 0..lattice.len() {
            if let Some(jdx) = lattice.shifted_index(&coord, lag) {
                if mask.is_none_or(|m| m[idx] && m[jdx]) {
                    for f in fields {
                        total += f.values()[idx] * f.values()[jdx];
                    }
                    count += fields.len() as u64;
                }
            }
            crate::lattice::advance(&mut coord, lattice.sizes());
        }
        if count == 0 {
            return Err(Error::numeric(
                "no in-lattice pairs available for a required lag",
            ));
        }
        sums.insert(lag.clone(), (total, count));
    }

    // isotropic pooling merges lags with equal physical squared length
    let lag_value: HashMap<Vec<i32>, f64> = if isotropic {
        let mut pooled: HashMap<i64, (f64, u64)> = HashMap::new();
        let sq_key = |lag: &[i32]| -> i64 {
            let sq: f64 = lag
                .iter()
                .enumerate()
                .map(|(d, &a)| {
                    let x = a as f64 * lattice.steps()[d];
                    x * x
                })
                .sum();
            (sq * 1e9).round() as i64
        };
        for (lag, &(s, c)) in &sums {
            let e = pooled.entry(sq_key(lag)).or_insert((0.0, 0));
            e.0 += s;
            e.1 += c;
        }
        sums.keys()
            .map(|lag| {
                let (s, c) = pooled[&sq_key(lag)];
                (lag.clone(), s / c as f64)
            })
            .collect()
    } else {
        sums.iter()
            .map(|(lag, &(s, c))| (lag.clone(), s / c as f64))
            .collect()
    };

    let mut matrix = DMatrix::zeros(k1, k1);
    for i in 0..k1 {
        for j in 0..k1 {
            matrix[(i, j)] = lag_value[&lag_of_pair[i][j]];
        }
    }
    // exact symmetry: lag canonicalization already makes (i,j) and (j,i) equal
    restandardize(&mut matrix)?;
    Ok(NeighborhoodCov {
        nbhd: nbhd.clone(),
        matrix,
        provenance: CovProvenance::Empirical,
        psd_repaired: false,
        max_clipped: 0.0,
    })
}

/// Covariance of the average of two independent fields: (Sigma1 + Sigma2)/4,
/// restandardized to unit diagonal.
pub fn mixture_cov(sigma1: &NeighborhoodCov, sigma2: &NeighborhoodCov) -> Result<NeighborhoodCov> {
    if sigma1.nbhd() != sigma2.nbhd() || sigma1.size() != sigma2.size() {
        return Err(Error::invalid(
            "mixture components must share the neighborhood",
        ));
    }
    let mut matrix = (sigma1.matrix() + sigma2.matrix()) * 0.25;
    restandardize(&mut matrix)?;
    Ok(NeighborhoodCov {
        nbhd: sigma1.nbhd().clone(),
        matrix,
        provenance: CovProvenance::Mixture,
        psd_repaired: false,
        max_clipped: 0.0,
    })
}

/// Eigenvalue floor used by [`psd_repair`].
pub const PSD_EIGENVALUE_FLOOR: f64 = 1e-10;

/// Pushes eigenvalues below 1e-10 up to 1e-10 and reconstitutes the matrix.
/// Already-PSD input is returned unchanged (up to symmetrization).
pub fn psd_repair(cov: &NeighborhoodCov) -> Result<NeighborhoodCov> {
    let m = cov.matrix();
    let n = m.nrows();
    let max_asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0f64, f64::max);
    if max_asym > 1e-8 {
        return Err(Error::numeric("psd repair requires a symmetric matrix"));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.min();
    if min_eig >= PSD_EIGENVALUE_FLOOR {
        let mut out = cov.clone();
        out.matrix = sym;
        return Ok(out);
    }
    let max_clipped = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l < PSD_EIGENVALUE_FLOOR)
        .fold(0.0f64, |acc, &l| acc.max(l.abs()));
    let clipped = DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|&l| l.max(PSD_EIGENVALUE_FLOOR)),
    );
    let mut repaired =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    repaired = (&repaired + repaired.transpose()) * 0.5;
    restandardize(&mut repaired)?;
    Ok(NeighborhoodCov {
        nbhd: cov.nbhd.clone(),
        matrix: repaired,
        provenance: cov.provenance,
        psd_repaired: true,
        max_clipped,
    })
}

/// Convenience: kronecker covariance for a FWHM given in voxels.
pub fn kronecker_cov_from_fwhm(fwhm: f64, dim: usize) -> Result<NeighborhoodCov> {
    kronecker_cov(crate::lattice::fwhm_to_rho(fwhm)?, dim)
}
