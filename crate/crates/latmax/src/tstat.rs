//! One-sample t pipeline: t map, covariance estimation from standardized
//! subject residuals, peak extraction and per-peak p-values.

use std::collections::BTreeMap;

use crate::cov::{empirical_cov_masked, psd_repair, NeighborhoodCov};
use crate::error::{Error, Result};
use crate::lattice::{find_peaks_masked, BoundaryPolicy, Field, Neighborhood, PeakRecord};
use crate::lookup::LookupTable;
use crate::mcdlm::{gaussianize_value, sample_local_maxima, PeakModel, PeakSampleSet};

/// Subject volumes on a common lattice with an optional analysis mask.
#[derive(Debug, Clone)]
pub struct StudyData {
    subjects: Vec<Field>,
    mask: Option<Vec<bool>>,
}

impl StudyData {
    pub fn new(subjects: Vec<Field>, mask: Option<Vec<bool>>) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::invalid("a study needs at least 2 subjects"));
        }
        let lattice = subjects[0].lattice().clone();
        if subjects.iter().any(|f| f.lattice() != &lattice) {
            return Err(Error::invalid("subjects must share a common lattice"));
        }
        if let Some(m) = &mask {
            if m.len() != lattice.len() {
                return Err(Error::invalid("mask length does not match the lattice"));
            }
            if !m.iter().any(|&b| b) {
                return Err(Error::invalid("mask excludes every voxel"));
            }
        }
        Ok(StudyData { subjects, mask })
    }

    pub fn subjects(&self) -> &[Field] {
        &self.subjects
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }
}

/// Voxelwise one-sample t map: t = mean * sqrt(n) / sd with the unbiased
/// standard deviation. Off-mask voxels are set to 0 and excluded downstream.
/// Returns the map and nu = n - 1.
pub fn one_sample_t(study: &StudyData) -> Result<(Field, u64)> {
    let n = study.n_subjects();
    let lattice = study.subjects[0].lattice().clone();
    let len = lattice.len();
    let sqrt_n = (n as f64).sqrt();
    let mut out = vec![0.0f64; len];
    for idx in 0..len {
        if let Some(m) = &study.mask {
            if !m[idx] {
                continue;
            }
        }
        let mut mean = 0.0;
        for s in &study.subjects {
            mean += s.values()[idx];
        }
        mean /= n as f64;
        let mut ss = 0.0;
        for s in &study.subjects {
            let d = s.values()[idx] - mean;
            ss += d * d;
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::numeric(format!(
                "zero variance at in-mask voxel {idx}"
            )));
        }
        out[idx] = mean * sqrt_n / sd;
    }
    Ok((Field::new(lattice, out)?, (n - 1) as u64))
}

/// Standardizes each in-mask voxel across subjects (subtract cross-subject
/// mean, divide by the unbiased SD); off-mask voxels become 0.
fn standardized_residuals(study: &StudyData) -> Result<Vec<Field>> {
    let n = study.n_subjects();
    let lattice = study.subjects[0].lattice().clone();
    let len = lattice.len();
    let mut mean = vec![0.0f64; len];
    for s in &study.subjects {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut sd = vec![0.0f64; len];
    for s in &study.subjects {
        for ((acc, m), v) in sd.iter_mut().zip(&mean).zip(s.values()) {
            let d = v - m;
            *acc += d * d;
        }
    }
    for (idx, acc) in sd.iter_mut().enumerate() {
        let in_mask = study.mask.as_ref().is_none_or(|m| m[idx]);
        if in_mask {
            *acc = (*acc / (n - 1) as f64).sqrt();
            if !(*acc > 0.0) {
                return Err(Error::numeric(format!(
                    "zero variance at in-mask voxel {idx}"
                )));
            }
        } else {
            *acc = 1.0;
        }
    }
    study
        .subjects
        .iter()
        .map(|s| {
            let vals: Vec<f64> = s
                .values()
                .iter()
                .enumerate()
                .map(|(idx, v)| {
                    let in_mask = study.mask.as_ref().is_none_or(|m| m[idx]);
                    if in_mask {
                        (v - mean[idx]) / sd[idx]
                    } else {
                        0.0
                    }
                })
                .collect();
            Field::new(lattice.clone(), vals)
        })
        .collect()
}

/// Peak p-value method for [`analyze_peaks`].
#[derive(Debug, Clone)]
pub enum AnalysisMethod<'a> {
    /// Multivariate-t MCDLM with nu = n - 1.
    McdlmT,
    /// Gaussianize the t map, then Gaussian MCDLM.
    McdlmGaussianized,
    /// Query a prebuilt isotropic lookup table at the mean axis correlation.
    Lookup(&'a LookupTable),
    /// Join externally computed p-values by peak location (for comparison
    /// against e.g. continuous-RFT values).
    ExternalP(&'a BTreeMap<Vec<usize>, f64>),
}

impl AnalysisMethod<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            AnalysisMethod::McdlmT => "mcdlm_t",
            AnalysisMethod::McdlmGaussianized => "mcdlm_gauss",
            AnalysisMethod::Lookup(_) => "lookup",
            AnalysisMethod::ExternalP(_) => "external",
        }
    }
}

/// Tunables for [`analyze_peaks`].
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Pool lags of equal length when estimating the covariance.
    pub isotropic: bool,
    pub boundary: BoundaryPolicy,
    pub target_n: usize,
    pub max_m: u64,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            isotropic: false,
            boundary: BoundaryPolicy::Exclude,
            target_n: 100_000,
            max_m: 10_000_000,
            seed: 42,
        }
    }
}

/// Full pipeline output.
#[derive(Debug, Clone)]
pub struct AnalysisReport {
    pub peaks: Vec<PeakRecord>,
    /// Estimated lag-1 correlation per axis.
    pub axis_rhos: Vec<f64>,
    pub cov: NeighborhoodCov,
    pub tmap: Field,
    pub nu: u64,
    /// The Monte Carlo sample set behind the p-values, when one was drawn.
    pub sample_set: Option<PeakSampleSet>,
}

/// Standardizes subjects, estimates and repairs the neighborhood covariance,
/// computes the t map, extracts peaks, and attaches p-values by the chosen
/// method.
pub fn analyze_peaks(
    study: &StudyData,
    nbhd: &Neighborhood,
    method: &AnalysisMethod,
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let residuals = standardized_residuals(study)?;
    let raw_cov = empirical_cov_masked(&residuals, nbhd, opts.isotropic, study.mask())?;
    let cov = psd_repair(&raw_cov)?;
    let (tmap, nu) = one_sample_t(study)?;
    let mut peaks = find_peaks_masked(&tmap, nbhd, opts.boundary, study.mask())?;
    if peaks.is_empty() {
        return Err(Error::numeric("no peaks found in the t map"));
    }
    let dim = tmap.lattice().dim();
    let axis_rhos: Vec<f64> = (0..dim).filter_map(|d| cov.axis_rho(d)).collect();

    let label = method.label();
    let mut sample_set = None;
    match method {
        AnalysisMethod::McdlmT => {
            let set = sample_local_maxima(
                &cov,
                PeakModel::StudentT { nu },
                opts.target_n,
                opts.max_m,
                opts.seed,
            )?;
            for peak in peaks.iter_mut() {
                let p = set.pvalue(peak.height);
                peak.set_pvalue(label, p.value, p.censored);
            }
            sample_set = Some(set);
        }
        AnalysisMethod::McdlmGaussianized => {
            let set = sample_local_maxima(
                &cov,
                PeakModel::Gaussian,
                opts.target_n,
                opts.max_m,
                opts.seed,
            )?;
            for peak in peaks.iter_mut() {
                let g = gaussianize_value(peak.height, nu)?;
                let p = set.pvalue(g);
                peak.set_pvalue(label, p.value, p.censored);
            }
            sample_set = Some(set);
        }
        AnalysisMethod::Lookup(table) => {
            if table.dim() != dim {
                return Err(Error::invalid(
                    "lookup table dimension does not match the study",
                ));
            }
            let rho = axis_rhos.iter().sum::<f64>() / axis_rhos.len() as f64;
            for peak in peaks.iter_mut() {
                // the table is Gaussian; transform t heights first
                let g = gaussianize_value(peak.height, nu)?;
                let p = table.query(rho, g)?;
                peak.set_pvalue(label, p.value.clamp(0.0, 1.0), p.censored);
            }
        }
        AnalysisMethod::ExternalP(map) => {
            for peak in peaks.iter_mut() {
                if let Some(&p) = map.get(&peak.location) {
                    peak.set_pvalue(label, p, false);
                }
            }
        }
    }
    Ok(AnalysisReport {
        peaks,
        axis_rhos,
        cov,
        tmap,
        nu,
        sample_set,
    })
}
