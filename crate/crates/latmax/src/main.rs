//! Command-line interface. File formats and CSV column layouts are
//! documented in FORMATS.md.

// `!(a < b)` deliberately rejects NaN alongside out-of-order bounds.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latmax::cov::{
    empirical_cov_masked, kernel_cov, kronecker_cov, psd_repair, CovProvenance, KernelSpec,
    NeighborhoodCov,
};
use latmax::error::{Error, Result};
use latmax::fieldsim::{reference_distribution, SimModel, SimSpec};
use latmax::lattice::{
    find_peaks_masked, fwhm_to_rho, rho_to_eta, rho_to_fwhm, BoundaryPolicy, Field, LatticeSpec,
    Neighborhood, NeighborhoodKind,
};
use latmax::mcdlm::{default_budget, sample_local_maxima, PeakModel};
use latmax::tstat::{analyze_peaks, one_sample_t, AnalysisMethod, AnalysisOptions, StudyData};
use latmax::{adlm, io, lookup, validate};

#[derive(Parser)]
#[command(
    name = "latmax",
    version,
    about = "Peak height distributions of local maxima on regular lattices",
    propagate_version = true
)]
struct Cli {
    /// Seed for all randomized subcommands.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Worker threads (defaults to available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Suppress informational output.
    #[arg(long, global = true, default_value_t = false)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct NbhdArgs {
    /// Neighborhood kind: pc or fc.
    #[arg(long, default_value = "fc")]
    nbhd: String,

    /// Boundary policy: exclude or reduced.
    #[arg(long, default_value = "exclude")]
    boundary: String,
}

impl NbhdArgs {
    fn kind(&self) -> Result<NeighborhoodKind> {
        match self.nbhd.as_str() {
            "pc" => Ok(NeighborhoodKind::PartialConnectivity),
            "fc" => Ok(NeighborhoodKind::FullConnectivity),
            other => Err(Error::invalid(format!("unknown neighborhood '{other}'"))),
        }
    }

    fn policy(&self) -> Result<BoundaryPolicy> {
        match self.boundary.as_str() {
            "exclude" => Ok(BoundaryPolicy::Exclude),
            "reduced" => Ok(BoundaryPolicy::ReducedNeighborhood),
            other => Err(Error::invalid(format!("unknown boundary policy '{other}'"))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Convert between FWHM (voxels) and adjacent-voxel correlation rho.
    Rho {
        #[arg(long)]
        fwhm: Option<f64>,
        #[arg(long)]
        rho: Option<f64>,
    },

    /// Build or estimate a neighborhood covariance matrix (CSV output).
    Cov {
        #[command(subcommand)]
        action: CovAction,
    },

    /// Run the Monte Carlo sampler and write a sample-set file.
    Sample {
        /// gaussian or t:<nu>.
        #[arg(long, default_value = "gaussian")]
        model: String,
        /// Isotropic correlation for the closed-form covariance.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
        /// Covariance matrix CSV (alternative to --rho).
        #[arg(long)]
        cov: Option<PathBuf>,
        #[arg(long)]
        nbhd: Option<String>,
        #[arg(long)]
        target_n: Option<usize>,
        #[arg(long)]
        max_m: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Evaluate peak p-values from a sample set or a lookup table.
    Pvalue {
        #[arg(long)]
        set: Option<PathBuf>,
        #[arg(long)]
        table: Option<PathBuf>,
        /// rho for lookup-table queries.
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        height: Option<f64>,
        /// CSV with a 'height' column.
        #[arg(long)]
        heights: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Closed-form ADLM p-value for partially connected peaks.
    Adlm {
        /// Comma-separated per-axis correlations.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        #[arg(long)]
        u: f64,
        /// Per-axis count of present neighbors (0, 1 or 2), for boundary
        /// voxels.
        #[arg(long, value_delimiter = ',')]
        profile: Option<Vec<u8>>,
    },

    /// Generate synthetic field volumes.
    Simulate {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 50)]
        size: usize,
        /// Isotropic rho, or comma-separated per-axis rhos.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        /// gaussian, t:<nu> or nonsep:<rho1>,<rho2>.
        #[arg(long, default_value = "gaussian")]
        model: String,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },

    /// Extract local maxima from a volume.
    Peaks {
        #[command(flatten)]
        nbhd: NbhdArgs,
        #[arg(long)]
        out: PathBuf,
        volume: PathBuf,
    },

    /// Pool peak heights across volumes into a reference distribution.
    Reference {
        #[command(flatten)]
        nbhd: NbhdArgs,
        #[arg(long)]
        out: PathBuf,
        volumes: Vec<PathBuf>,
    },

    /// Build, smooth or query the lookup table.
    Lookup {
        #[command(subcommand)]
        action: LookupAction,
    },

    /// One-sample t map from subject volumes.
    Tstat {
        #[arg(long)]
        out: PathBuf,
        /// Optional mask volume (nonzero = in analysis region).
        #[arg(long)]
        mask: Option<PathBuf>,
        subjects: Vec<PathBuf>,
    },

    /// End-to-end pipeline: t map, covariance estimation, peaks, p-values,
    /// BH adjustment.
    Analyze {
        #[command(flatten)]
        nbhd: NbhdArgs,
        /// mcdlm-t, mcdlm-gauss, lookup or external.
        #[arg(long, default_value = "mcdlm-t")]
        method: String,
        #[arg(long)]
        table: Option<PathBuf>,
        /// CSV with loc_0..loc_{D-1} and p columns for method=external.
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        isotropic: bool,
        #[arg(long)]
        target_n: Option<usize>,
        #[arg(long)]
        max_m: Option<u64>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        subjects: Vec<PathBuf>,
    },

    /// Calibration metrics and pp plot from reference and method p-values.
    Validate {
        /// Reference CSV with height,p columns.
        #[arg(long)]
        reference: PathBuf,
        /// label=path.csv pairs; each CSV needs a p column aligned with the
        /// reference rows.
        #[arg(long)]
        method: Vec<String>,
        /// Window over reference p: lo,hi (open at lo, closed at hi).
        #[arg(long, value_delimiter = ',', default_values_t = [0.001, 0.05])]
        window: Vec<f64>,
        #[arg(long)]
        out_metrics: PathBuf,
        #[arg(long)]
        out_svg: Option<PathBuf>,
    },

    /// Benjamini-Hochberg adjustment of a p-value CSV.
    Bh {
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CovAction {
    /// Analytic covariance from a kernel specification.
    Build {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// kronecker, discrete or continuous.
        #[arg(long, default_value = "kronecker")]
        kind: String,
        /// Isotropic rho, or comma-separated per-axis rhos for elliptical
        /// kernels.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        /// Per-axis voxel step sizes.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<f64>>,
        #[arg(long, default_value = "fc")]
        nbhd: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Empirical covariance from volumes (lag averaging).
    Estimate {
        #[arg(long, default_value = "fc")]
        nbhd: String,
        #[arg(long, default_value_t = false)]
        isotropic: bool,
        /// Clip negative eigenvalues to 1e-10 afterwards.
        #[arg(long, default_value_t = false)]
        repair: bool,
        #[arg(long)]
        out: PathBuf,
        volumes: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LookupAction {
    Build {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 100_000)]
        samples_per_rho: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Smooth {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Query {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        u: f64,
    },
}

fn parse_model(s: &str) -> Result<PeakModel> {
    if s == "gaussian" {
        return Ok(PeakModel::Gaussian);
    }
    if let Some(nu) = s.strip_prefix("t:") {
        let nu: u64 = nu
            .parse()
            .map_err(|_| Error::invalid(format!("bad degrees of freedom in '{s}'")))?;
        return Ok(PeakModel::StudentT { nu });
    }
    Err(Error::invalid(format!("unknown model '{s}'")))
}

fn neighborhood_for_matrix(kind: &str, order: usize) -> Result<Neighborhood> {
    // recover the dimension from the matrix order
    let build = |k: NeighborhoodKind, dim: usize| Neighborhood::build(k, dim);
    match kind {
        "pc" => {
            if order < 3 || !(order - 1).is_multiple_of(2) {
                return Err(Error::invalid(
                    "matrix order does not match a PC neighborhood",
                ));
            }
            build(NeighborhoodKind::PartialConnectivity, (order - 1) / 2)
        }
        "fc" => {
            let mut dim = 1usize;
            while 3usize.pow(dim as u32) < order {
                dim += 1;
            }
            if 3usize.pow(dim as u32) != order {
                return Err(Error::invalid(
                    "matrix order does not match an FC neighborhood",
                ));
            }
            build(NeighborhoodKind::FullConnectivity, dim)
        }
        other => Err(Error::invalid(format!("unknown neighborhood '{other}'"))),
    }
}

fn load_fields(paths: &[PathBuf]) -> Result<Vec<Field>> {
    if paths.is_empty() {
        return Err(Error::invalid("at least one volume path is required"));
    }
    paths.iter().map(|p| io::read_volume(p)).collect()
}

fn load_mask(path: &Option<PathBuf>) -> Result<Option<Vec<bool>>> {
    Ok(match path {
        Some(p) => Some(
            io::read_volume(p)?
                .values()
                .iter()
                .map(|&v| v != 0.0)
                .collect(),
        ),
        None => None,
    })
}

fn peaks_csv(path: &Path, peaks: &[latmax::lattice::PeakRecord], dim: usize) -> Result<()> {
    let mut columns: Vec<String> = (0..dim).map(|d| format!("loc_{d}")).collect();
    columns.push("height".to_string());
    columns.push("boundary".to_string());
    let method_names: Vec<String> = peaks
        .iter()
        .flat_map(|p| p.pvalues.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for name in &method_names {
        columns.push(format!("{name}_p"));
        columns.push(format!("{name}_censored"));
    }
    let has_bh = peaks.iter().any(|p| p.pvalues.contains_key("bh"));
    let col_refs: Vec<&str> = columns.iter().map(|c| c.as_str()).collect();
    let _ = has_bh;
    let rows: Vec<Vec<String>> = peaks
        .iter()
        .map(|p| {
            let mut row: Vec<String> = p.location.iter().map(|c| c.to_string()).collect();
            row.push(format!("{}", p.height));
            row.push(if p.boundary { "1" } else { "0" }.to_string());
            for name in &method_names {
                match p.pvalues.get(name) {
                    Some(v) => {
                        row.push(format!("{v}"));
                        row.push(if p.censored.contains(name) { "1" } else { "0" }.to_string());
                    }
                    None => {
                        row.push(String::new());
                        row.push(String::new());
                    }
                }
            }
            row
        })
        .collect();
    io::write_csv(path, &col_refs, &rows)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed;
    let quiet = cli.quiet;

    match cli.command {
        Command::Rho { fwhm, rho } => match (fwhm, rho) {
            (Some(f), None) => println!("{}", fwhm_to_rho(f)?),
            (None, Some(r)) => println!("{}", rho_to_fwhm(r)?),
            _ => return Err(Error::invalid("pass exactly one of --fwhm or --rho")),
        },

        Command::Cov { action } => match action {
            CovAction::Build {
                dim,
                kind,
                rho,
                steps,
                nbhd,
                out,
            } => {
                if rho.is_empty() {
                    return Err(Error::invalid("--rho is required"));
                }
                let cov = match kind.as_str() {
                    "kronecker" => {
                        if rho.len() != 1 {
                            return Err(Error::invalid("kronecker takes a single isotropic rho"));
                        }
                        kronecker_cov(rho[0], dim)?
                    }
                    "discrete" | "continuous" => {
                        let etas: Vec<f64> =
                            rho.iter().map(|&r| rho_to_eta(r)).collect::<Result<_>>()?;
                        let etas = if etas.len() == 1 {
                            vec![etas[0]; dim]
                        } else {
                            etas
                        };
                        if etas.len() != dim {
                            return Err(Error::invalid("need one rho, or one per axis"));
                        }
                        let kernel = if kind == "discrete" {
                            KernelSpec::EllipticalGaussian { etas }
                        } else {
                            KernelSpec::ContinuousGaussian { etas }
                        };
                        let lattice = LatticeSpec::new(
                            vec![3; dim],
                            steps.unwrap_or_else(|| vec![1.0; dim]),
                        )?;
                        let nb = neighborhood_for_kind(&nbhd, dim)?;
                        kernel_cov(&kernel, &lattice, &nb)?
                    }
                    other => return Err(Error::invalid(format!("unknown kind '{other}'"))),
                };
                io::write_matrix_csv(&out, cov.matrix())?;
                if !quiet {
                    eprintln!("wrote {} ({}x{})", out.display(), cov.size(), cov.size());
                }
            }
            CovAction::Estimate {
                nbhd,
                isotropic,
                repair,
                out,
                volumes,
            } => {
                let fields = load_fields(&volumes)?;
                let dim = fields[0].lattice().dim();
                let nb = neighborhood_for_kind(&nbhd, dim)?;
                let mut cov = empirical_cov_masked(&fields, &nb, isotropic, None)?;
                if repair {
                    cov = psd_repair(&cov)?;
                    if !quiet && cov.psd_repaired() {
                        eprintln!("clipped eigenvalues up to {:.3e}", cov.max_clipped());
                    }
                }
                io::write_matrix_csv(&out, cov.matrix())?;
            }
        },

        Command::Sample {
            model,
            rho,
            dim,
            cov,
            nbhd,
            target_n,
            max_m,
            out,
        } => {
            let model = parse_model(&model)?;
            let cov = match (rho, cov) {
                (Some(r), None) => kronecker_cov(
                    r,
                    dim.ok_or_else(|| Error::invalid("--dim is required with --rho"))?,
                )?,
                (None, Some(path)) => {
                    let m = io::read_matrix_csv(&path)?;
                    if m.nrows() != m.ncols() {
                        return Err(Error::invalid("covariance matrix must be square"));
                    }
                    let nb = neighborhood_for_matrix(nbhd.as_deref().unwrap_or("fc"), m.nrows())?;
                    let raw = NeighborhoodCov::from_matrix(nb, m, CovProvenance::Empirical)?;
                    psd_repair(&raw)?
                }
                _ => return Err(Error::invalid("pass exactly one of --rho or --cov")),
            };
            let max_rho = (0..cov.nbhd().dim())
                .filter_map(|d| cov.axis_rho(d))
                .fold(0.0f64, f64::max);
            let (default_n, default_m) = default_budget(max_rho);
            let target = target_n.unwrap_or(default_n);
            let budget = max_m.unwrap_or_else(|| max_m_for(target, default_m));
            let set = sample_local_maxima(&cov, model, target, budget, seed)?;
            io::write_sample_set(&out, &set)?;
            if !quiet {
                eprintln!(
                    "accepted {} of {} attempts (rate {:.4})",
                    set.accepted(),
                    set.attempted(),
                    set.accepted() as f64 / set.attempted() as f64
                );
            }
        }

        Command::Pvalue {
            set,
            table,
            rho,
            height,
            heights,
            out,
        } => {
            enum Source {
                Set(latmax::mcdlm::PeakSampleSet),
                Table(lookup::LookupTable, f64),
            }
            let source = match (set, table) {
                (Some(s), None) => Source::Set(io::read_sample_set(&s)?),
                (None, Some(t)) => {
                    let rho =
                        rho.ok_or_else(|| Error::invalid("--rho is required with --table"))?;
                    Source::Table(io::read_table(&t)?, rho)
                }
                _ => return Err(Error::invalid("pass exactly one of --set or --table")),
            };
            let eval = |u: f64| -> Result<latmax::mcdlm::PValue> {
                Ok(match &source {
                    Source::Set(s) => s.pvalue(u),
                    Source::Table(t, r) => t.query(*r, u)?,
                })
            };
            match (height, heights) {
                (Some(u), None) => {
                    let p = eval(u)?;
                    println!("{}{}", p.value, if p.censored { " (censored)" } else { "" });
                }
                (None, Some(path)) => {
                    let (header, rows) = io::read_csv(&path)?;
                    let hs = io::csv_column(&header, &rows, "height")?;
                    let mut out_rows = Vec::with_capacity(hs.len());
                    for &u in &hs {
                        let p = eval(u)?;
                        out_rows.push(vec![
                            format!("{u}"),
                            format!("{}", p.value),
                            if p.censored { "1" } else { "0" }.to_string(),
                        ]);
                    }
                    let out =
                        out.ok_or_else(|| Error::invalid("--out is required with --heights"))?;
                    io::write_csv(&out, &["height", "p", "censored"], &out_rows)?;
                }
                _ => return Err(Error::invalid("pass exactly one of --height or --heights")),
            }
        }

        Command::Adlm { rho, u, profile } => {
            let params = match profile {
                Some(p) => adlm::AdlmParams::with_boundary(rho, p)?,
                None => adlm::AdlmParams::new(rho)?,
            };
            if params.ill_conditioned() && !quiet {
                eprintln!("warning: rho near 1; the conditional density is poorly conditioned");
            }
            println!("{}", adlm::adlm_pvalue(&params, u)?);
        }

        Command::Simulate {
            dim,
            size,
            rho,
            model,
            n,
            out_dir,
        } => {
            if rho.is_empty() {
                return Err(Error::invalid("--rho is required"));
            }
            let etas: Vec<f64> = rho.iter().map(|&r| rho_to_eta(r)).collect::<Result<_>>()?;
            let etas = if etas.len() == 1 {
                vec![etas[0]; dim]
            } else {
                etas
            };
            if etas.len() != dim {
                return Err(Error::invalid("need one rho, or one per axis"));
            }
            let kernel = if etas.windows(2).all(|w| w[0] == w[1]) {
                KernelSpec::IsotropicGaussian { eta: etas[0] }
            } else {
                KernelSpec::EllipticalGaussian { etas: etas.clone() }
            };
            let sim_model = if model == "gaussian" {
                SimModel::Gaussian
            } else if let Some(nu) = model.strip_prefix("t:") {
                SimModel::StudentT {
                    nu: nu.parse().map_err(|_| {
                        Error::invalid(format!("bad degrees of freedom in '{model}'"))
                    })?,
                }
            } else if let Some(pair) = model.strip_prefix("nonsep:") {
                let parts: Vec<f64> = pair
                    .split(',')
                    .map(|x| {
                        x.parse::<f64>()
                            .map_err(|_| Error::invalid("bad nonsep rhos"))
                    })
                    .collect::<Result<_>>()?;
                if parts.len() != 2 || dim != 2 {
                    return Err(Error::invalid("nonsep:<rho1>,<rho2> requires --dim 2"));
                }
                let e1 = rho_to_eta(parts[0])?;
                let e2 = rho_to_eta(parts[1])?;
                SimModel::NonseparableMixture {
                    kernel_a: KernelSpec::EllipticalGaussian { etas: vec![e1, e2] },
                    kernel_b: KernelSpec::EllipticalGaussian { etas: vec![e2, e1] },
                }
            } else {
                return Err(Error::invalid(format!("unknown model '{model}'")));
            };
            let spec = SimSpec::new(LatticeSpec::cubic(dim, size)?, kernel, sim_model, n, seed)?;
            std::fs::create_dir_all(&out_dir)?;
            for i in 0..n {
                let f = spec.field(i)?;
                io::write_volume(&out_dir.join(format!("vol_{i:06}.lmv")), &f)?;
            }
            if !quiet {
                eprintln!("wrote {n} volumes to {}", out_dir.display());
            }
        }

        Command::Peaks { nbhd, out, volume } => {
            let field = io::read_volume(&volume)?;
            let dim = field.lattice().dim();
            let nb = Neighborhood::build(nbhd.kind()?, dim)?;
            let peaks = find_peaks_masked(&field, &nb, nbhd.policy()?, None)?;
            peaks_csv(&out, &peaks, dim)?;
            if !quiet {
                eprintln!("{} peaks", peaks.len());
            }
        }

        Command::Reference { nbhd, out, volumes } => {
            let fields = load_fields(&volumes)?;
            let dim = fields[0].lattice().dim();
            let nb = Neighborhood::build(nbhd.kind()?, dim)?;
            let reference = reference_distribution(&fields, &nb, nbhd.policy()?)?;
            let rows: Vec<Vec<String>> = reference
                .heights()
                .iter()
                .zip(reference.pvalues())
                .map(|(h, p)| vec![format!("{h}"), format!("{p}")])
                .collect();
            io::write_csv(&out, &["height", "p"], &rows)?;
        }

        Command::Lookup { action } => match action {
            LookupAction::Build {
                dim,
                samples_per_rho,
                out,
            } => {
                let table = lookup::build_table(dim, samples_per_rho, seed)?;
                io::write_table(&out, &table)?;
            }
            LookupAction::Smooth { table, out } => {
                let t = io::read_table(&table)?;
                let smoothed = lookup::smooth_table(&t)?;
                io::write_table(&out, &smoothed)?;
                if !quiet {
                    let (lr, lu) = smoothed.smoothing();
                    eprintln!("lambda_rho={:?} lambda_u={:?}", lr, lu);
                }
            }
            LookupAction::Query { table, rho, u } => {
                let t = io::read_table(&table)?;
                let p = t.query(rho, u)?;
                println!("{}{}", p.value, if p.censored { " (censored)" } else { "" });
            }
        },

        Command::Tstat {
            out,
            mask,
            subjects,
        } => {
            let fields = load_fields(&subjects)?;
            let mask = load_mask(&mask)?;
            let study = StudyData::new(fields, mask)?;
            let (tmap, nu) = one_sample_t(&study)?;
            io::write_volume(&out, &tmap)?;
            if !quiet {
                eprintln!("nu = {nu}");
            }
        }

        Command::Analyze {
            nbhd,
            method,
            table,
            external,
            mask,
            isotropic,
            target_n,
            max_m,
            alpha,
            out,
            subjects,
        } => {
            let fields = load_fields(&subjects)?;
            let dim = fields[0].lattice().dim();
            let mask = load_mask(&mask)?;
            let study = StudyData::new(fields, mask)?;
            let nb = Neighborhood::build(nbhd.kind()?, dim)?;
            let target = target_n.unwrap_or(100_000);
            let opts = AnalysisOptions {
                isotropic,
                boundary: nbhd.policy()?,
                target_n: target,
                max_m: max_m.unwrap_or(target as u64 * 100),
                seed,
            };
            let loaded_table;
            let loaded_external;
            let method = match method.as_str() {
                "mcdlm-t" => AnalysisMethod::McdlmT,
                "mcdlm-gauss" => AnalysisMethod::McdlmGaussianized,
                "lookup" => {
                    let path = table.ok_or_else(|| Error::invalid("--table is required"))?;
                    loaded_table = io::read_table(&path)?;
                    AnalysisMethod::Lookup(&loaded_table)
                }
                "external" => {
                    let path = external.ok_or_else(|| Error::invalid("--external is required"))?;
                    let (header, rows) = io::read_csv(&path)?;
                    let p = io::csv_column(&header, &rows, "p")?;
                    let mut map = BTreeMap::new();
                    for (row, &pv) in rows.iter().zip(&p) {
                        let mut loc = Vec::with_capacity(dim);
                        for d in 0..dim {
                            let idx = header
                                .iter()
                                .position(|h| h == &format!("loc_{d}"))
                                .ok_or_else(|| Error::format("external csv needs loc_* columns"))?;
                            loc.push(
                                row[idx]
                                    .parse::<usize>()
                                    .map_err(|_| Error::format("bad location"))?,
                            );
                        }
                        map.insert(loc, pv);
                    }
                    loaded_external = map;
                    AnalysisMethod::ExternalP(&loaded_external)
                }
                other => return Err(Error::invalid(format!("unknown method '{other}'"))),
            };
            let label = method.label().to_string();
            let mut report = analyze_peaks(&study, &nb, &method, &opts)?;
            // BH over the method p-values
            let ps: Vec<f64> = report
                .peaks
                .iter()
                .map(|p| p.pvalues.get(&label).copied().unwrap_or(1.0))
                .collect();
            let bh = validate::bh_adjust(&ps, alpha)?;
            for (peak, adj) in report.peaks.iter_mut().zip(&bh.adjusted) {
                peak.set_pvalue("bh", *adj, false);
            }
            peaks_csv(&out, &report.peaks, dim)?;
            if !quiet {
                let rhos: Vec<String> =
                    report.axis_rhos.iter().map(|r| format!("{r:.4}")).collect();
                eprintln!(
                    "axis lag-1 correlations: [{}]; {} peaks, {} BH-significant at alpha={alpha}",
                    rhos.join(", "),
                    report.peaks.len(),
                    bh.n_rejected
                );
            }
        }

        Command::Validate {
            reference,
            method,
            window,
            out_metrics,
            out_svg,
        } => {
            if window.len() != 2 || !(window[0] < window[1]) {
                return Err(Error::invalid("--window takes lo,hi with lo < hi"));
            }
            let (href, rrows) = io::read_csv(&reference)?;
            let ref_p = io::csv_column(&href, &rrows, "p")?;
            let mut methods = BTreeMap::new();
            for spec in &method {
                let (label, path) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::invalid("--method takes label=path.csv"))?;
                let (h, rows) = io::read_csv(Path::new(path))?;
                let p = io::csv_column(&h, &rows, "p")?;
                methods.insert(label.to_string(), p);
            }
            let pp = validate::pp_data(&ref_p, &methods)?;
            let mut rows = Vec::new();
            for (label, series) in methods.iter() {
                let ratio = validate::mean_ratio(&ref_p, series, (window[0], window[1]));
                let rmse = validate::rmse_identity(&ref_p, series, (window[0], window[1]));
                rows.push(vec![
                    label.clone(),
                    ratio.map(|v| v.to_string()).unwrap_or_default(),
                    rmse.map(|v| v.to_string()).unwrap_or_default(),
                    format!("{}", validate::pp_sup_deviation(&ref_p, series)),
                ]);
            }
            io::write_csv(
                &out_metrics,
                &["method", "mean_ratio", "rmse", "pp_sup"],
                &rows,
            )?;
            if let Some(svg) = out_svg {
                validate::emit_pp_svg(&pp, &svg)?;
            }
        }

        Command::Bh { alpha, input, out } => {
            let (header, rows) = io::read_csv(&input)?;
            let p = io::csv_column(&header, &rows, "p")?;
            let outcome = validate::bh_adjust(&p, alpha)?;
            let out_rows: Vec<Vec<String>> = p
                .iter()
                .zip(&outcome.adjusted)
                .zip(&outcome.rejected)
                .map(|((p, adj), rej)| {
                    vec![
                        format!("{p}"),
                        format!("{adj}"),
                        if *rej { "1" } else { "0" }.to_string(),
                    ]
                })
                .collect();
            io::write_csv(&out, &["p", "adjusted_p", "rejected"], &out_rows)?;
            if !quiet {
                eprintln!(
                    "{} of {} rejected at alpha={alpha}",
                    outcome.n_rejected,
                    p.len()
                );
            }
        }
    }
    Ok(())
}

fn neighborhood_for_kind(kind: &str, dim: usize) -> Result<Neighborhood> {
    match kind {
        "pc" => Neighborhood::build(NeighborhoodKind::PartialConnectivity, dim),
        "fc" => Neighborhood::build(NeighborhoodKind::FullConnectivity, dim),
        other => Err(Error::invalid(format!("unknown neighborhood '{other}'"))),
    }
}

fn max_m_for(target: usize, default_m: u64) -> u64 {
    (target as u64 * 100).max(default_m.min(target as u64 * 100))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InvalidArgument(_) => 2,
                Error::Numeric(_) => 3,
                Error::Io(_) | Error::Format(_) => 4,
            };
            ExitCode::from(code)
        }
    }
}
