//! Calibration metrics: pp-plot data, mean ratio and RMSE against the
//! identity, Kolmogorov distances, Benjamini-Hochberg adjustment, and SVG
//! emission of pp curves.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Paired (reference, method) p-values sorted by reference p, one series per
/// method, plus the alternative uniform-grid plotting abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct PPData {
    reference: Vec<f64>,
    /// i/n grid, the alternative plotting mechanism.
    uniform_grid: Vec<f64>,
    methods: BTreeMap<String, Vec<f64>>,
}

impl PPData {
    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn uniform_grid(&self) -> &[f64] {
        &self.uniform_grid
    }

    pub fn methods(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.methods
    }
}

/// Builds pp data: pairs are sorted jointly by the reference p-value and
/// each method series is carried along.
pub fn pp_data(reference_p: &[f64], method_p: &BTreeMap<String, Vec<f64>>) -> Result<PPData> {
    let n = reference_p.len();
    if n == 0 {
        return Err(Error::invalid("reference p-values must be nonempty"));
    }
    for (label, m) in method_p {
        if m.len() != n {
            return Err(Error::invalid(format!(
                "method '{label}' has {} p-values, expected {n}",
                m.len()
            )));
        }
    }
    let all_in_range = reference_p
        .iter()
        .chain(method_p.values().flatten())
        .all(|p| (0.0..=1.0).contains(p));
    if !all_in_range {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| reference_p[a].partial_cmp(&reference_p[b]).unwrap());
    let reference: Vec<f64> = order.iter().map(|&i| reference_p[i]).collect();
    let methods: BTreeMap<String, Vec<f64>> = method_p
        .iter()
        .map(|(label, m)| (label.clone(), order.iter().map(|&i| m[i]).collect()))
        .collect();
    let uniform_grid: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    Ok(PPData {
        reference,
        uniform_grid,
        methods,
    })
}

/// Mean of method_p / reference_p over pairs whose reference p lies in
/// (window.0, window.1]. A value of 1 indicates exact calibration.
pub fn mean_ratio(reference_p: &[f64], method_p: &[f64], window: (f64, f64)) -> Result<f64> {
    if reference_p.len() != method_p.len() {
        return Err(Error::invalid("length mismatch"));
    }
    let (lo, hi) = window;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&r, &m) in reference_p.iter().zip(method_p) {
        if r > lo && r <= hi {
            sum += m / r;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::numeric("no reference p-values in the window"));
    }
    Ok(sum / count as f64)
}

/// Root mean squared difference between method and reference p-values over
/// the window (applied to the reference p).
pub fn rmse_identity(reference_p: &[f64], method_p: &[f64], window: (f64, f64)) -> Result<f64> {
    if reference_p.len() != method_p.len() {
        return Err(Error::invalid("length mismatch"));
    }
    let (lo, hi) = window;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&r, &m) in reference_p.iter().zip(method_p) {
        if r > lo && r <= hi {
            let d = m - r;
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::numeric("no reference p-values in the window"));
    }
    Ok((sum / count as f64).sqrt())
}

/// Largest absolute deviation between the sorted method p-values and the
/// sorted reference p-values (the pp curve's distance from the identity).
pub fn pp_sup_deviation(reference_p: &[f64], method_p: &[f64]) -> f64 {
    let mut r = reference_p.to_vec();
    let mut m = method_p.to_vec();
    r.sort_by(|a, b| a.partial_cmp(b).unwrap());
    m.sort_by(|a, b| a.partial_cmp(b).unwrap());
    r.iter()
        .zip(&m)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov statistic between sorted samples.
pub fn ks_two_sample(a_sorted: &[f64], b_sorted: &[f64]) -> f64 {
    let (na, nb) = (a_sorted.len() as f64, b_sorted.len() as f64);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < a_sorted.len() || j < b_sorted.len() {
        // next distinct value across both samples
        let x = match (a_sorted.get(i), b_sorted.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => break,
        };
        while i < a_sorted.len() && a_sorted[i] <= x {
            i += 1;
        }
        while j < b_sorted.len() && b_sorted[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample Kolmogorov statistic of a sorted sample against a CDF.
pub fn ks_to_cdf(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max((f - (i + 1) as f64 / n).abs());
    }
    d
}

/// Benjamini-Hochberg step-up outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BhOutcome {
    /// Per-input rejection flags (original order).
    pub rejected: Vec<bool>,
    /// BH-adjusted p-values (original order).
    pub adjusted: Vec<f64>,
    /// Number of rejections.
    pub n_rejected: usize,
}

/// Standard Benjamini-Hochberg step-up rule at level `alpha`.
pub fn bh_adjust(pvalues: &[f64], alpha: f64) -> Result<BhOutcome> {
    if pvalues.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let m = pvalues.len();
    if m == 0 {
        return Ok(BhOutcome {
            rejected: vec![],
            adjusted: vec![],
            n_rejected: 0,
        });
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].partial_cmp(&pvalues[b]).unwrap());

    // largest k with p_(k) <= k alpha / m
    let mut k = 0usize;
    for (rank, &idx) in order.iter().enumerate() {
        if pvalues[idx] <= (rank + 1) as f64 * alpha / m as f64 {
            k = rank + 1;
        }
    }
    let mut rejected = vec![false; m];
    for &idx in order.iter().take(k) {
        rejected[idx] = true;
    }

    // adjusted p: running minimum of m p_(i) / i from the largest rank down
    let mut adjusted = vec![0.0f64; m];
    let mut running = 1.0f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        running = running.min(pvalues[idx] * m as f64 / (rank + 1) as f64);
        adjusted[idx] = running;
    }
    Ok(BhOutcome {
        rejected,
        adjusted,
        n_rejected: k,
    })
}

const SVG_COLORS: [&str; 6] = [
    "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Writes a self-contained SVG pp plot: identity line plus one polyline per
/// method. Byte output is a deterministic function of the input.
pub fn emit_pp_svg(pp: &PPData, path: &Path) -> Result<()> {
    let size = 480.0;
    let margin = 48.0;
    let span = size - 2.0 * margin;
    let sx = |p: f64| margin + p * span;
    let sy = |p: f64| size - margin - p * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">"
    );
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{size}\" height=\"{size}\" fill=\"white\"/>"
    );
    // axes
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"1\"/>",
        sx(0.0), sy(0.0), sx(1.0), sy(0.0)
    );
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"1\"/>",
        sx(0.0), sy(0.0), sx(0.0), sy(1.0)
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{tick}</text>",
            sx(tick),
            sy(0.0) + 14.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{tick}</text>",
            sx(0.0) - 4.0,
            sy(tick) + 3.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">reference p</text>",
        sx(0.5),
        size - 8.0
    );
    // identity line
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"4 3\"/>",
        sx(0.0), sy(0.0), sx(1.0), sy(1.0)
    );
    for (mi, (label, series)) in pp.methods.iter().enumerate() {
        let color = SVG_COLORS[mi % SVG_COLORS.len()];
        let mut points = String::new();
        for (&r, &q) in pp.reference.iter().zip(series) {
            let _ = write!(points, "{:.2},{:.2} ", sx(r), sy(q));
        }
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            points.trim_end()
        );
        let ly = margin + 16.0 * mi as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            margin + 8.0, ly, margin + 28.0, ly
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{label}</text>",
            margin + 34.0,
            ly + 3.5
        );
    }
    let _ = writeln!(s, "</svg>");
    crate::io::atomic_write(path, s.as_bytes())
}
