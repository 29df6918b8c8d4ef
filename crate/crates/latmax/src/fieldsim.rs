//! Synthetic field ensembles: smoothed Gaussian fields, t-fields and
//! nonseparable mixtures, plus the pooled reference peak distribution.
//!
//! Fields are generated on a padded grid (ceil(4 eta) per side), smoothed by
//! direct truncated-kernel summation (half-window ceil(8 eta) per axis, run
//! as separable 1D passes), divided by the exact pointwise standard
//! deviation so every voxel has variance one, and cropped to the target
//! region. Field `index` is a deterministic function of (seed, index).

use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cov::KernelSpec;
use crate::error::{Error, Result};
use crate::lattice::{BoundaryPolicy, Field, LatticeSpec, Neighborhood};
use crate::mcdlm::key_from_seed;

/// Field ensemble model.
#[derive(Debug, Clone, PartialEq)]
pub enum SimModel {
    Gaussian,
    StudentT {
        nu: u64,
    },
    /// Average of two independently smoothed fields (2D only). Elliptical
    /// kernels with the axis bandwidths swapped give a known nonseparable
    /// covariance.
    NonseparableMixture {
        kernel_a: KernelSpec,
        kernel_b: KernelSpec,
    },
}

/// Simulation specification: target lattice, kernel, model, count and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub lattice: LatticeSpec,
    pub kernel: KernelSpec,
    pub model: SimModel,
    pub n_fields: usize,
    pub seed: u64,
}

/// Per-axis kernel state for one smoothing pass.
struct AxisKernel {
    weights: Vec<f64>, // index j + window
    window: usize,
}

impl AxisKernel {
    fn new(eta: f64, step: f64) -> Self {
        let window = (8.0 * eta / step).ceil() as usize;
        let inv = 1.0 / (2.0 * eta * eta);
        let weights = (-(window as i64)..=window as i64)
            .map(|j| {
                let d = j as f64 * step;
                (-d * d * inv).exp()
            })
            .collect();
        AxisKernel { weights, window }
    }
}

fn kernel_etas(kernel: &KernelSpec, dim: usize) -> Result<Vec<f64>> {
    kernel.validate(dim)?;
    Ok(match kernel {
        KernelSpec::IsotropicGaussian { eta } => vec![*eta; dim],
        KernelSpec::EllipticalGaussian { etas } | KernelSpec::ContinuousGaussian { etas } => {
            etas.clone()
        }
    })
}

impl SimSpec {
    pub fn new(
        lattice: LatticeSpec,
        kernel: KernelSpec,
        model: SimModel,
        n_fields: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_fields == 0 {
            return Err(Error::invalid("n_fields must be >= 1"));
        }
        kernel.validate(lattice.dim())?;
        match &model {
            SimModel::Gaussian => {}
            SimModel::StudentT { nu } => {
                if *nu < 1 {
                    return Err(Error::invalid("degrees of freedom must be >= 1"));
                }
            }
            SimModel::NonseparableMixture { kernel_a, kernel_b } => {
                if lattice.dim() != 2 {
                    return Err(Error::invalid("nonseparable mixtures are 2D only"));
                }
                kernel_a.validate(2)?;
                kernel_b.validate(2)?;
            }
        }
        Ok(SimSpec {
            lattice,
            kernel,
            model,
            n_fields,
            seed,
        })
    }

    fn streams_per_field(&self) -> u64 {
        match &self.model {
            SimModel::Gaussian => 1,
            SimModel::StudentT { nu } => nu + 1,
            SimModel::NonseparableMixture { .. } => 2,
        }
    }

    /// Padding per side, per axis: ceil(4 eta / v) for the widest kernel in
    /// the model.
    fn padding(&self) -> Result<Vec<usize>> {
        let dim = self.lattice.dim();
        let mut etas = kernel_etas(&self.kernel, dim)?;
        if let SimModel::NonseparableMixture { kernel_a, kernel_b } = &self.model {
            let ea = kernel_etas(kernel_a, dim)?;
            let eb = kernel_etas(kernel_b, dim)?;
            for d in 0..dim {
                etas[d] = etas[d].max(ea[d]).max(eb[d]);
            }
        }
        Ok((0..dim)
            .map(|d| (4.0 * etas[d] / self.lattice.steps()[d]).ceil() as usize)
            .collect())
    }

    /// The `index`-th field of the ensemble.
    pub fn field(&self, index: usize) -> Result<Field> {
        let pad = self.padding()?;
        let generator = FieldGenerator {
            spec: self,
            pad,
            key: key_from_seed(self.seed),
        };
        generator.field(index)
    }

    /// All fields, generated in parallel by index.
    pub fn generate_all(&self) -> Result<Vec<Field>> {
        let pad = self.padding()?;
        let generator = FieldGenerator {
            spec: self,
            pad,
            key: key_from_seed(self.seed),
        };
        (0..self.n_fields)
            .into_par_iter()
            .map(|i| generator.field(i))
            .collect()
    }
}

struct FieldGenerator<'a> {
    spec: &'a SimSpec,
    pad: Vec<usize>,
    key: [u8; 32],
}

impl FieldGenerator<'_> {
    fn padded_sizes(&self) -> Vec<usize> {
        self.spec
            .lattice
            .sizes()
            .iter()
            .zip(&self.pad)
            .map(|(&n, &p)| n + 2 * p)
            .collect()
    }

    fn white_noise(&self, stream: u64, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Smooth a padded noise box with the kernel and normalize to exact unit
    /// variance, then crop the central target region.
    fn smoothed(&self, kernel: &KernelSpec, stream: u64) -> Result<Vec<f64>> {
        let dim = self.spec.lattice.dim();
        let etas = kernel_etas(kernel, dim)?;
        let steps = self.spec.lattice.steps();
        let padded = self.padded_sizes();
        let len: usize = padded.iter().product();
        let mut data = self.white_noise(stream, len);
        let mut scratch = vec![0.0f64; len];

        // per-axis sum of squared available weights, for the exact variance
        let mut sq_sums: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for d in 0..dim {
            let ax = AxisKernel::new(etas[d], steps[d]);
            convolve_axis(&data, &mut scratch, &padded, d, &ax);
            std::mem::swap(&mut data, &mut scratch);
            let n = padded[d];
            let w = ax.window as i64;
            let sq: Vec<f64> = (0..n as i64)
                .map(|t| {
                    let lo = (-w).max(-t);
                    let hi = w.min(n as i64 - 1 - t);
                    (lo..=hi)
                        .map(|j| {
                            let wj = ax.weights[(j + w) as usize];
                            wj * wj
                        })
                        .sum()
                })
                .collect();
            sq_sums.push(sq);
        }

        // crop and normalize
        let sizes = self.spec.lattice.sizes();
        let out_len: usize = sizes.iter().product();
        let mut out = vec![0.0f64; out_len];
        let mut coord = vec![0usize; dim];
        for slot in out.iter_mut() {
            let mut idx = 0usize;
            let mut var = 1.0f64;
            for d in 0..dim {
                let padded_coord = coord[d] + self.pad[d];
                idx = idx * padded[d] + padded_coord;
                var *= sq_sums[d][padded_coord];
            }
            *slot = data[idx] / var.sqrt();
            crate::lattice::advance(&mut coord, sizes);
        }
        Ok(out)
    }

    fn field(&self, index: usize) -> Result<Field> {
        let base = index as u64 * self.spec.streams_per_field();
        let values = match &self.spec.model {
            SimModel::Gaussian => self.smoothed(&self.spec.kernel, base)?,
            SimModel::StudentT { nu } => {
                let eps = self.smoothed(&self.spec.kernel, base)?;
                let mut sumsq = vec![0.0f64; eps.len()];
                for i in 0..*nu {
                    let z = self.smoothed(&self.spec.kernel, base + 1 + i)?;
                    for (acc, v) in sumsq.iter_mut().zip(&z) {
                        *acc += v * v;
                    }
                }
                let inv_nu = 1.0 / *nu as f64;
                eps.iter()
                    .zip(&sumsq)
                    .map(|(e, s)| e / (s * inv_nu).sqrt())
                    .collect()
            }
            SimModel::NonseparableMixture { kernel_a, kernel_b } => {
                let a = self.smoothed(kernel_a, base)?;
                let b = self.smoothed(kernel_b, base + 1)?;
                // both halves have unit variance; the average is rescaled
                // back to unit variance
                a.iter()
                    .zip(&b)
                    .map(|(x, y)| (x + y) / std::f64::consts::SQRT_2)
                    .collect()
            }
        };
        Field::new(self.spec.lattice.clone(), values)
    }
}

/// One separable 1D convolution pass along `axis` of a row-major box.
fn convolve_axis(
    input: &[f64],
    output: &mut [f64],
    sizes: &[usize],
    axis: usize,
    kernel: &AxisKernel,
) {
    let n = sizes[axis];
    // stride between consecutive points along the axis
    let stride: usize = sizes[axis + 1..].iter().product();
    // number of lines and iteration over them: outer block x inner offset
    let outer: usize = sizes[..axis].iter().product();
    let inner = stride;
    let w = kernel.window as i64;
    for o in 0..outer {
        let block = o * n * stride;
        for i in 0..inner {
            let base = block + i;
            for t in 0..n as i64 {
                let lo = (-w).max(-t);
                let hi = w.min(n as i64 - 1 - t);
                let mut acc = 0.0;
                for j in lo..=hi {
                    acc += kernel.weights[(j + w) as usize]
                        * input[base + ((t + j) as usize) * stride];
                }
                output[base + t as usize * stride] = acc;
            }
        }
    }
}

/// Pooled reference distribution of peak heights with strict-count
/// p-values: p_i = (1/n) #{g_j > g_i}.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    heights: Vec<f64>, // sorted ascending
}

impl ReferenceDistribution {
    pub fn from_heights(mut heights: Vec<f64>) -> Result<Self> {
        if heights.is_empty() {
            return Err(Error::invalid(
                "reference distribution needs at least one peak",
            ));
        }
        heights.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(ReferenceDistribution { heights })
    }

    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Reference p-value: fraction of pooled heights strictly above `h`.
    pub fn pvalue(&self, h: f64) -> f64 {
        let gt = self.heights.len() - self.heights.partition_point(|&g| g <= h);
        gt as f64 / self.heights.len() as f64
    }

    /// Reference p-values aligned with the sorted heights.
    pub fn pvalues(&self) -> Vec<f64> {
        self.heights.iter().map(|&h| self.pvalue(h)).collect()
    }
}

/// Pools peak heights across fields into a reference distribution.
pub fn reference_distribution(
    fields: &[Field],
    nbhd: &Neighborhood,
    policy: BoundaryPolicy,
) -> Result<ReferenceDistribution> {
    let mut heights = Vec::new();
    for f in fields {
        for p in crate::lattice::find_peaks(f, nbhd, policy)? {
            heights.push(p.height);
        }
    }
    if heights.is_empty() {
        return Err(Error::numeric("no peaks found in the supplied fields"));
    }
    ReferenceDistribution::from_heights(heights)
}
