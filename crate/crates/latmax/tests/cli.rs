//! End-to-end CLI checks: subcommand behavior, file round trips,
//! determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn latmax(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latmax"))
        .args(args)
        .output()
        .expect("failed to spawn latmax")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn rho_conversion_matches_paper_value() {
    let out = latmax(&["rho", "--fwhm", "11.7"]);
    assert_ok(&out);
    let rho: f64 = stdout_of(&out).parse().unwrap();
    assert!((rho - 0.99).abs() < 0.001, "rho {rho}");

    let back = latmax(&["rho", "--rho", &rho.to_string()]);
    assert_ok(&back);
    let fwhm: f64 = stdout_of(&back).parse().unwrap();
    assert!((fwhm - 11.7).abs() < 1e-9);
}

#[test]
fn rho_requires_exactly_one_flag() {
    let out = latmax(&["rho"]);
    assert_eq!(out.status.code(), Some(2));
    let both = latmax(&["rho", "--fwhm", "2", "--rho", "0.5"]);
    assert_eq!(both.status.code(), Some(2));
}

#[test]
fn adlm_far_tail_is_zero() {
    let out = latmax(&["adlm", "--rho", "0.5", "--u", "1e9"]);
    assert_ok(&out);
    let p: f64 = stdout_of(&out).parse().unwrap();
    assert_eq!(p, 0.0);
}

#[test]
fn adlm_rejects_bad_rho_with_exit_2() {
    let out = latmax(&["adlm", "--rho", "1.5", "--u", "1.0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_volume_exits_4() {
    let out = latmax(&["peaks", "--out", "/tmp/never.csv", "/nonexistent/vol.lmv"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn asymmetric_covariance_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("asym.csv");
    std::fs::write(&cov, "1,0.5,0.2\n0.1,1,0\n0,0,1\n").unwrap();
    let out = latmax(&[
        "sample",
        "--cov",
        cov.to_str().unwrap(),
        "--nbhd",
        "pc",
        "--target-n",
        "100",
        "--out",
        dir.path().join("never.lms").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_variance_study_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let vols = simulate_volumes(dir.path(), 1, 33);
    let copy = dir.path().join("copy.lmv");
    std::fs::copy(&vols[0], &copy).unwrap();
    let out = latmax(&[
        "tstat",
        "--out",
        dir.path().join("t.lmv").to_str().unwrap(),
        &vols[0],
        copy.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sample_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.lms");
    let b = dir.path().join("b.lms");
    for path in [&a, &b] {
        let out = latmax(&[
            "--seed",
            "7",
            "sample",
            "--model",
            "gaussian",
            "--rho",
            "0.5",
            "--dim",
            "2",
            "--target-n",
            "2000",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_ok(&out);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.lms");
    let out = latmax(&[
        "--seed",
        "8",
        "sample",
        "--rho",
        "0.5",
        "--dim",
        "2",
        "--target-n",
        "2000",
        "--out",
        c.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn pvalue_from_sample_set_scalar_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("set.lms");
    assert_ok(&latmax(&[
        "sample",
        "--rho",
        "0.5",
        "--dim",
        "1",
        "--target-n",
        "5000",
        "--out",
        set.to_str().unwrap(),
    ]));
    let out = latmax(&["pvalue", "--set", set.to_str().unwrap(), "--height", "0.0"]);
    assert_ok(&out);
    let p: f64 = stdout_of(&out).parse().unwrap();
    assert!(p > 0.5 && p < 1.0);

    // censored query far beyond the sample maximum
    let censored = latmax(&["pvalue", "--set", set.to_str().unwrap(), "--height", "1e9"]);
    assert_ok(&censored);
    assert!(stdout_of(&censored).contains("(censored)"));

    let heights = dir.path().join("h.csv");
    std::fs::write(&heights, "height\n-1.0\n0.0\n2.0\n").unwrap();
    let table = dir.path().join("p.csv");
    assert_ok(&latmax(&[
        "pvalue",
        "--set",
        set.to_str().unwrap(),
        "--heights",
        heights.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&table).unwrap();
    assert!(text.starts_with("height,p,censored\n"));
    assert_eq!(text.lines().count(), 4);
}

fn simulate_volumes(dir: &Path, n: usize, seed: u64) -> Vec<String> {
    let out_dir = dir.join(format!("vols-{seed}"));
    let out = latmax(&[
        "--seed",
        &seed.to_string(),
        "simulate",
        "--dim",
        "2",
        "--size",
        "24",
        "--rho",
        "0.5",
        "--n",
        &n.to_string(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    (0..n)
        .map(|i| {
            out_dir
                .join(format!("vol_{i:06}.lmv"))
                .to_str()
                .unwrap()
                .to_string()
        })
        .collect()
}

#[test]
fn simulate_peaks_reference_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let vols = simulate_volumes(dir.path(), 4, 11);

    let peaks = dir.path().join("peaks.csv");
    assert_ok(&latmax(&[
        "peaks",
        "--nbhd",
        "fc",
        "--boundary",
        "exclude",
        "--out",
        peaks.to_str().unwrap(),
        &vols[0],
    ]));
    let text = std::fs::read_to_string(&peaks).unwrap();
    assert!(text.starts_with("loc_0,loc_1,height,boundary\n"));
    assert!(text.lines().count() > 1);

    let reference = dir.path().join("ref.csv");
    let mut args = vec![
        "reference".to_string(),
        "--nbhd".to_string(),
        "fc".to_string(),
        "--out".to_string(),
        reference.to_str().unwrap().to_string(),
    ];
    args.extend(vols.iter().cloned());
    let argrefs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_ok(&latmax(&argrefs));
    let rtext = std::fs::read_to_string(&reference).unwrap();
    assert!(rtext.starts_with("height,p\n"));

    // covariance estimation from the same volumes
    let cov = dir.path().join("cov.csv");
    let mut cargs = vec![
        "cov".to_string(),
        "estimate".to_string(),
        "--nbhd".to_string(),
        "fc".to_string(),
        "--repair".to_string(),
        "--out".to_string(),
        cov.to_str().unwrap().to_string(),
    ];
    cargs.extend(vols.iter().cloned());
    let crefs: Vec<&str> = cargs.iter().map(|s| s.as_str()).collect();
    assert_ok(&latmax(&crefs));
    let ctext = std::fs::read_to_string(&cov).unwrap();
    assert_eq!(ctext.lines().count(), 9);

    // and sampling from the estimated covariance
    let set = dir.path().join("est.lms");
    assert_ok(&latmax(&[
        "sample",
        "--cov",
        cov.to_str().unwrap(),
        "--nbhd",
        "fc",
        "--target-n",
        "1000",
        "--out",
        set.to_str().unwrap(),
    ]));
}

#[test]
fn cov_build_matches_kronecker_entries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cov.csv");
    assert_ok(&latmax(&[
        "cov",
        "build",
        "--dim",
        "2",
        "--kind",
        "kronecker",
        "--rho",
        "0.99",
        "--out",
        out.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let first: Vec<f64> = text
        .lines()
        .next()
        .unwrap()
        .split(',')
        .map(|c| c.parse().unwrap())
        .collect();
    assert_eq!(first.len(), 9);
    assert_eq!(first[0], 1.0);
    // first neighbor in canonical order is the (-1,-1) diagonal
    assert!((first[1] - 0.99f64.powi(2)).abs() < 1e-12);
    assert!((first[2] - 0.99).abs() < 1e-12);
}

#[test]
fn tstat_analyze_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let vols = simulate_volumes(dir.path(), 10, 21);

    let tmap = dir.path().join("tmap.lmv");
    let mut targs = vec![
        "tstat".to_string(),
        "--out".to_string(),
        tmap.to_str().unwrap().to_string(),
    ];
    targs.extend(vols.iter().cloned());
    let trefs: Vec<&str> = targs.iter().map(|s| s.as_str()).collect();
    let tout = latmax(&trefs);
    assert_ok(&tout);
    assert!(String::from_utf8_lossy(&tout.stderr).contains("nu = 9"));

    let peaks = dir.path().join("analyzed.csv");
    let mut aargs = vec![
        "--seed".to_string(),
        "3".to_string(),
        "analyze".to_string(),
        "--nbhd".to_string(),
        "fc".to_string(),
        "--method".to_string(),
        "mcdlm-t".to_string(),
        "--target-n".to_string(),
        "2000".to_string(),
        "--out".to_string(),
        peaks.to_str().unwrap().to_string(),
    ];
    aargs.extend(vols.iter().cloned());
    let arefs: Vec<&str> = aargs.iter().map(|s| s.as_str()).collect();
    assert_ok(&latmax(&arefs));
    let text = std::fs::read_to_string(&peaks).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("mcdlm_t_p"));
    assert!(header.contains("bh_p"));
}

#[test]
fn bh_adjustment_hand_checked() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("p.csv");
    std::fs::write(&input, "p\n0.01\n0.02\n0.2\n").unwrap();
    let out = dir.path().join("adj.csv");
    assert_ok(&latmax(&[
        "bh",
        "--alpha",
        "0.05",
        "--in",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "p,adjusted_p,rejected");
    assert!(lines[1].ends_with(",1"));
    assert!(lines[2].ends_with(",1"));
    assert!(lines[3].ends_with(",0"));
}

#[test]
fn validate_emits_metrics_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.csv");
    let method = dir.path().join("m.csv");
    let mut ref_rows = String::from("height,p\n");
    let mut m_rows = String::from("height,p\n");
    for i in 0..200 {
        let p = (i as f64 + 0.5) / 200.0;
        ref_rows.push_str(&format!("{},{}\n", 3.0 - p, p));
        m_rows.push_str(&format!("{},{}\n", 3.0 - p, p * 0.9));
    }
    std::fs::write(&reference, ref_rows).unwrap();
    std::fs::write(&method, m_rows).unwrap();

    let metrics = dir.path().join("metrics.csv");
    let svg = dir.path().join("pp.svg");
    assert_ok(&latmax(&[
        "validate",
        "--reference",
        reference.to_str().unwrap(),
        "--method",
        &format!("test={}", method.to_str().unwrap()),
        "--window",
        "0.001,0.5",
        "--out-metrics",
        metrics.to_str().unwrap(),
        "--out-svg",
        svg.to_str().unwrap(),
    ]));
    let mtext = std::fs::read_to_string(&metrics).unwrap();
    assert!(mtext.starts_with("method,mean_ratio,rmse,pp_sup\n"));
    let row = mtext.lines().nth(1).unwrap();
    let ratio: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((ratio - 0.9).abs() < 1e-9, "ratio {ratio}");
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
}

#[test]
fn lookup_build_smooth_query_small() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.lmt");
    assert_ok(&latmax(&[
        "--seed",
        "5",
        "lookup",
        "build",
        "--dim",
        "1",
        "--samples-per-rho",
        "400",
        "--out",
        raw.to_str().unwrap(),
    ]));
    let smooth = dir.path().join("smooth.lmt");
    assert_ok(&latmax(&[
        "lookup",
        "smooth",
        "--table",
        raw.to_str().unwrap(),
        "--out",
        smooth.to_str().unwrap(),
    ]));
    let out = latmax(&[
        "lookup",
        "query",
        "--table",
        smooth.to_str().unwrap(),
        "--rho",
        "0.505",
        "--u",
        "1.0",
    ]);
    assert_ok(&out);
    let p: f64 = stdout_of(&out)
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&p));

    // rho outside the tabulated range is a usage error
    let bad = latmax(&[
        "lookup",
        "query",
        "--table",
        smooth.to_str().unwrap(),
        "--rho",
        "0.999",
        "--u",
        "1.0",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}
