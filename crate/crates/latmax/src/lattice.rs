//! Lattice geometry, neighborhoods, fields and peak records.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a regular lattice: dimension, voxel counts and step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    sizes: Vec<usize>,
    steps: Vec<f64>,
}

impl LatticeSpec {
    /// Lattice with the given voxel counts and per-axis step sizes.
    pub fn new(sizes: Vec<usize>, steps: Vec<f64>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("lattice dimension must be at least 1"));
        }
        if sizes.len() != steps.len() {
            return Err(Error::invalid("sizes and steps must have equal length"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("all lattice sizes must be >= 1"));
        }
        if steps.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid("all lattice steps must be positive"));
        }
        Ok(LatticeSpec { sizes, steps })
    }

    /// Lattice with unit step sizes.
    pub fn unit(sizes: Vec<usize>) -> Result<Self> {
        let steps = vec![1.0; sizes.len()];
        LatticeSpec::new(sizes, steps)
    }

    /// Cubic lattice: `size` voxels along each of `dim` axes, unit steps.
    pub fn cubic(dim: usize, size: usize) -> Result<Self> {
        LatticeSpec::unit(vec![size; dim])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.sizes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // sizes >= 1 per invariant
    }

    /// Flat index of a coordinate, row-major with the last axis fastest.
    pub fn index(&self, coord: &[usize]) -> usize {
        debug_assert_eq!(coord.len(), self.dim());
        let mut idx = 0usize;
        for (d, &c) in coord.iter().enumerate() {
            debug_assert!(c < self.sizes[d]);
            idx = idx * self.sizes[d] + c;
        }
        idx
    }

    /// Coordinate of a flat index (inverse of [`LatticeSpec::index`]).
    pub fn coord(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0usize; self.dim()];
        for d in (0..self.dim()).rev() {
            out[d] = idx % self.sizes[d];
            idx /= self.sizes[d];
        }
        out
    }

    /// Whether `coord + offset` stays inside the lattice; returns the shifted
    /// flat index when it does.
    pub fn shifted_index(&self, coord: &[usize], offset: &[i32]) -> Option<usize> {
        let mut idx = 0usize;
        for d in 0..self.dim() {
            let c = coord[d] as i64 + offset[d] as i64;
            if c < 0 || c >= self.sizes[d] as i64 {
                return None;
            }
            idx = idx * self.sizes[d] + c as usize;
        }
        Some(idx)
    }
}

/// Neighborhood kinds over the surrounding unit hypercube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborhoodKind {
    /// The 2D axis-adjacent points only.
    PartialConnectivity,
    /// All 3^D - 1 points of the surrounding hypercube.
    FullConnectivity,
    Custom,
}

/// An ordered set of integer offsets around a center voxel.
///
/// Offsets are held in canonical order: offset `a` maps to the base-3 flat
/// index `sum_i 3^(i-1) (a_i + 1)` and offsets are sorted by that index with
/// the center slot (all zeros) removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    kind: NeighborhoodKind,
    dim: usize,
    offsets: Vec<Vec<i32>>,
}

/// Base-3 flat index of an offset with components in {-1, 0, 1}.
/// The first axis is the fastest-varying digit.
pub fn offset_to_flat(offset: &[i32]) -> usize {
    let mut idx = 0usize;
    let mut pow = 1usize;
    for &a in offset {
        debug_assert!((-1..=1).contains(&a));
        idx += pow * (a + 1) as usize;
        pow *= 3;
    }
    idx
}

/// Inverse of [`offset_to_flat`] for a given dimension.
pub fn flat_to_offset(mut idx: usize, dim: usize) -> Vec<i32> {
    let mut out = vec![0i32; dim];
    for slot in out.iter_mut() {
        *slot = (idx % 3) as i32 - 1;
        idx /= 3;
    }
    out
}

impl Neighborhood {
    /// The partially or fully connected neighborhood in `dim` dimensions.
    pub fn build(kind: NeighborhoodKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("neighborhood dimension must be >= 1"));
        }
        let offsets: Vec<Vec<i32>> = match kind {
            NeighborhoodKind::PartialConnectivity => {
                let mut offs = Vec::with_capacity(2 * dim);
                for d in 0..dim {
                    for s in [-1i32, 1i32] {
                        let mut o = vec![0i32; dim];
                        o[d] = s;
                        offs.push(o);
                    }
                }
                offs
            }
            NeighborhoodKind::FullConnectivity => (0..3usize.pow(dim as u32))
                .map(|i| flat_to_offset(i, dim))
                .filter(|o| o.iter().any(|&a| a != 0))
                .collect(),
            NeighborhoodKind::Custom => {
                return Err(Error::invalid(
                    "custom neighborhoods are built from explicit offsets",
                ))
            }
        };
        Self::from_offsets(kind, dim, offsets)
    }

    /// A custom neighborhood from explicit offsets; offsets are deduplicated
    /// and put into canonical order.
    pub fn custom(dim: usize, offsets: Vec<Vec<i32>>) -> Result<Self> {
        Self::from_offsets(NeighborhoodKind::Custom, dim, offsets)
    }

    fn from_offsets(
        kind: NeighborhoodKind,
        dim: usize,
        mut offsets: Vec<Vec<i32>>,
    ) -> Result<Self> {
        for o in &offsets {
            if o.len() != dim {
                return Err(Error::invalid("offset dimension mismatch"));
            }
            if o.iter().any(|&a| !(-1..=1).contains(&a)) {
                return Err(Error::invalid("offset entries must lie in {-1,0,1}"));
            }
            if o.iter().all(|&a| a == 0) {
                return Err(Error::invalid("the zero offset is not a neighbor"));
            }
        }
        offsets.sort_by_key(|o| offset_to_flat(o));
        offsets.dedup();
        if offsets.is_empty() {
            return Err(Error::invalid(
                "neighborhood must contain at least one offset",
            ));
        }
        Ok(Neighborhood { kind, dim, offsets })
    }

    pub fn kind(&self) -> NeighborhoodKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of neighbors k.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Neighbor displacements in canonical order.
    pub fn offsets(&self) -> &[Vec<i32>] {
        &self.offsets
    }
}

/// A scalar field on a lattice, stored row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    lattice: LatticeSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn new(lattice: LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::invalid(format!(
                "field length {} does not match lattice size {}",
                values.len(),
                lattice.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("field values must be finite"));
        }
        Ok(Field { lattice, values })
    }

    pub fn zeros(lattice: LatticeSpec) -> Self {
        let n = lattice.len();
        Field {
            lattice,
            values: vec![0.0; n],
        }
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Applies a strictly monotone map voxelwise.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(
            self.lattice.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// How to treat voxels whose neighborhood pokes outside the lattice (or mask).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryPolicy {
    /// Skip voxels with any out-of-lattice neighbor.
    Exclude,
    /// Compare against the in-lattice subset and flag the record.
    ReducedNeighborhood,
}

/// A detected local maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakRecord {
    pub location: Vec<usize>,
    pub height: f64,
    pub kind: NeighborhoodKind,
    /// True when any neighbor fell outside the lattice or mask.
    pub boundary: bool,
    /// Method name -> p-value in [0, 1].
    pub pvalues: BTreeMap<String, f64>,
    /// Methods whose p-value was right-censored at the Monte Carlo
    /// resolution (reported as 1/(N+1)).
    pub censored: BTreeSet<String>,
}

impl PeakRecord {
    pub fn set_pvalue(&mut self, method: impl Into<String>, p: f64, censored: bool) {
        debug_assert!((0.0..=1.0).contains(&p));
        let name = method.into();
        if censored {
            self.censored.insert(name.clone());
        }
        self.pvalues.insert(name, p);
    }
}

/// Finds every voxel whose value strictly exceeds all in-lattice neighbors.
///
/// Under [`BoundaryPolicy::Exclude`] voxels with any out-of-lattice neighbor
/// are skipped; under [`BoundaryPolicy::ReducedNeighborhood`] the comparison
/// set is the in-lattice subset and the record's boundary flag is set.
pub fn find_peaks(
    field: &Field,
    nbhd: &Neighborhood,
    policy: BoundaryPolicy,
) -> Result<Vec<PeakRecord>> {
    find_peaks_masked(field, nbhd, policy, None)
}

/// [`find_peaks`] restricted to a boolean mask (true = in analysis region).
/// Off-mask voxels are never peaks; off-mask neighbors are treated like
/// out-of-lattice ones.
pub fn find_peaks_masked(
    field: &Field,
    nbhd: &Neighborhood,
    policy: BoundaryPolicy,
    mask: Option<&[bool]>,
) -> Result<Vec<PeakRecord>> {
    let lattice = field.lattice();
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
    let values = field.values();
    let mut peaks = Vec::new();
    let mut coord = vec![0usize; lattice.dim()];
    for idx in 0..lattice.len() {
        // coord tracks idx with the last axis fastest
        if mask.is_none_or(|m| m[idx]) {
            let center = values[idx];
            let mut boundary = false;
            let mut is_peak = true;
            for off in nbhd.offsets() {
                match lattice.shifted_index(&coord, off) {
                    Some(j) if mask.is_none_or(|m| m[j]) => {
                        if values[j] >= center {
                            is_peak = false;
                            break;
                        }
                    }
                    _ => match policy {
                        BoundaryPolicy::Exclude => {
                            is_peak = false;
                            break;
                        }
                        BoundaryPolicy::ReducedNeighborhood => boundary = true,
                    },
                }
            }
            if is_peak {
                peaks.push(PeakRecord {
                    location: coord.clone(),
                    height: center,
                    kind: nbhd.kind(),
                    boundary,
                    pvalues: BTreeMap::new(),
                    censored: BTreeSet::new(),
                });
            }
        }
        advance(&mut coord, lattice.sizes());
    }
    Ok(peaks)
}

/// Steps a coordinate to the next row-major position (last axis fastest).
pub(crate) fn advance(coord: &mut [usize], sizes: &[usize]) {
    for d in (0..coord.len()).rev() {
        coord[d] += 1;
        if coord[d] < sizes[d] {
            return;
        }
        coord[d] = 0;
    }
}

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 sqrt(2 ln 2)

/// Kernel bandwidth (standard deviation, in voxels) for a given FWHM.
pub fn fwhm_to_eta(fwhm: f64) -> f64 {
    fwhm / FWHM_PER_SIGMA
}

/// FWHM for a given kernel bandwidth.
pub fn eta_to_fwhm(eta: f64) -> f64 {
    eta * FWHM_PER_SIGMA
}

/// Adjacent-voxel correlation rho = exp(-1/(4 eta^2)) for a Gaussian kernel
/// of the given FWHM (in voxels).
pub fn fwhm_to_rho(fwhm: f64) -> Result<f64> {
    if !(fwhm > 0.0) || !fwhm.is_finite() {
        return Err(Error::invalid("fwhm must be positive"));
    }
    let eta = fwhm_to_eta(fwhm);
    Ok((-1.0 / (4.0 * eta * eta)).exp())
}

/// Inverse of [`fwhm_to_rho`].
pub fn rho_to_fwhm(rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid("rho must lie in (0, 1)"));
    }
    let eta = (-1.0 / (4.0 * rho.ln())).sqrt();
    Ok(eta_to_fwhm(eta))
}

/// Kernel bandwidth eta for a target adjacent-voxel correlation.
pub fn rho_to_eta(rho: f64) -> Result<f64> {
    Ok(fwhm_to_eta(rho_to_fwhm(rho)?))
}
