//! File formats: volumes, sample sets and lookup tables (single-line JSON
//! header + raw little-endian f64 payload), plus CSV helpers.
//!
//! All writes are atomic (write to a temp file in the same directory, then
//! rename).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Field, LatticeSpec};
use crate::lookup::LookupTable;
use crate::mcdlm::{PeakModel, PeakSampleSet};

pub const VOLUME_MAGIC: &str = "LATMAX-VOL";
pub const SET_MAGIC: &str = "LATMAX-SET";
pub const TABLE_MAGIC: &str = "LATMAX-TAB";
pub const FORMAT_VERSION: u32 = 1;

/// Writes bytes to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let tmp = dir.join(format!(
        ".{}.tmp-{}-{stamp}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(bytes)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Streams a header line plus an f64le payload to `path` atomically.
fn write_header_payload<H: Serialize>(path: &Path, header: &H, payloads: &[&[f64]]) -> Result<()> {
    let mut bytes = serde_json::to_vec(header).map_err(|e| Error::format(e.to_string()))?;
    bytes.push(b'\n');
    for payload in payloads {
        bytes.reserve(payload.len() * 8);
        for v in payload.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

fn read_header_line(reader: &mut impl Read) -> Result<Vec<u8>> {
    let mut line = Vec::with_capacity(256);
    let mut byte = [0u8; 1];
    loop {
        let n = reader.read(&mut byte)?;
        if n == 0 {
            return Err(Error::format("missing header line"));
        }
        if byte[0] == b'\n' {
            return Ok(line);
        }
        line.push(byte[0]);
        if line.len() > 1 << 16 {
            return Err(Error::format("header line too long"));
        }
    }
}

fn read_f64_payload(reader: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::format("payload shorter than the header declares"))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    magic: String,
    version: u32,
    dim: usize,
    sizes: Vec<usize>,
    steps: Vec<f64>,
    dtype: String,
    order: String,
}

/// Writes a field as a volume file.
pub fn write_volume(path: &Path, field: &Field) -> Result<()> {
    let header = VolumeHeader {
        magic: VOLUME_MAGIC.to_string(),
        version: FORMAT_VERSION,
        dim: field.lattice().dim(),
        sizes: field.lattice().sizes().to_vec(),
        steps: field.lattice().steps().to_vec(),
        dtype: "f64le".to_string(),
        order: "row-major".to_string(),
    };
    write_header_payload(path, &header, &[field.values()])
}

/// Reads a volume file back into a field.
pub fn read_volume(path: &Path) -> Result<Field> {
    let mut reader = BufReader::new(File::open(path)?);
    let line = read_header_line(&mut reader)?;
    let header: VolumeHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format(format!("volume header: {e}")))?;
    if header.magic != VOLUME_MAGIC {
        return Err(Error::format("not a volume file"));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.dtype != "f64le" || header.order != "row-major" {
        return Err(Error::format("unsupported dtype or order"));
    }
    if header.sizes.len() != header.dim {
        return Err(Error::format("sizes do not match dim"));
    }
    let lattice = LatticeSpec::new(header.sizes, header.steps)?;
    let values = read_f64_payload(&mut reader, lattice.len())?;
    Field::new(lattice, values)
}

#[derive(Debug, Serialize, Deserialize)]
struct SetHeader {
    magic: String,
    version: u32,
    model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    nu: Option<u64>,
    seed: u64,
    accepted: usize,
    attempted: u64,
    cov_fingerprint: String,
}

/// Writes a peak sample set.
pub fn write_sample_set(path: &Path, set: &PeakSampleSet) -> Result<()> {
    let (model, nu) = match set.model() {
        PeakModel::Gaussian => ("gaussian".to_string(), None),
        PeakModel::StudentT { nu } => ("t".to_string(), Some(nu)),
    };
    let header = SetHeader {
        magic: SET_MAGIC.to_string(),
        version: FORMAT_VERSION,
        model,
        nu,
        seed: set.seed(),
        accepted: set.accepted(),
        attempted: set.attempted(),
        cov_fingerprint: format!("{:016x}", set.cov_fingerprint()),
    };
    write_header_payload(path, &header, &[set.heights()])
}

/// Reads a peak sample set.
pub fn read_sample_set(path: &Path) -> Result<PeakSampleSet> {
    let mut reader = BufReader::new(File::open(path)?);
    let line = read_header_line(&mut reader)?;
    let header: SetHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format(format!("set header: {e}")))?;
    if header.magic != SET_MAGIC {
        return Err(Error::format("not a sample-set file"));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    let model = match (header.model.as_str(), header.nu) {
        ("gaussian", _) => PeakModel::Gaussian,
        ("t", Some(nu)) => PeakModel::StudentT { nu },
        _ => return Err(Error::format("unknown sample-set model")),
    };
    let fingerprint = u64::from_str_radix(&header.cov_fingerprint, 16)
        .map_err(|_| Error::format("bad covariance fingerprint"))?;
    let heights = read_f64_payload(&mut reader, header.accepted)?;
    PeakSampleSet::from_parts(heights, header.attempted, header.seed, model, fingerprint)
}

#[derive(Debug, Serialize, Deserialize)]
struct TableHeader {
    magic: String,
    version: u32,
    dim: usize,
    n_rho: usize,
    rho_start: f64,
    rho_step: f64,
    n_u: usize,
    seed: u64,
    samples_per_rho: usize,
    smooth_rho: Option<f64>,
    smooth_u: Option<f64>,
}

/// Writes a lookup table (u grid, then the CDF matrix row-major).
pub fn write_table(path: &Path, table: &LookupTable) -> Result<()> {
    let (smooth_rho, smooth_u) = table.smoothing();
    let header = TableHeader {
        magic: TABLE_MAGIC.to_string(),
        version: FORMAT_VERSION,
        dim: table.dim(),
        n_rho: crate::lookup::N_RHO,
        rho_start: crate::lookup::RHO_START,
        rho_step: crate::lookup::RHO_STEP,
        n_u: table.u_grid().len(),
        seed: table.seed(),
        samples_per_rho: table.samples_per_rho(),
        smooth_rho,
        smooth_u,
    };
    write_header_payload(path, &header, &[table.u_grid(), table.values()])
}

/// Reads a lookup table.
pub fn read_table(path: &Path) -> Result<LookupTable> {
    let mut reader = BufReader::new(File::open(path)?);
    let line = read_header_line(&mut reader)?;
    let header: TableHeader =
        serde_json::from_slice(&line).map_err(|e| Error::format(format!("table header: {e}")))?;
    if header.magic != TABLE_MAGIC {
        return Err(Error::format("not a lookup-table file"));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.n_rho != crate::lookup::N_RHO
        || header.rho_start != crate::lookup::RHO_START
        || header.rho_step != crate::lookup::RHO_STEP
    {
        return Err(Error::format("unsupported rho grid"));
    }
    let u_grid = read_f64_payload(&mut reader, header.n_u)?;
    let f = read_f64_payload(&mut reader, header.n_rho * header.n_u)?;
    LookupTable::from_parts(
        header.dim,
        u_grid,
        f,
        header.smooth_rho,
        header.smooth_u,
        header.seed,
        header.samples_per_rho,
    )
}

/// Writes a numeric CSV with a header row. Floats use the shortest
/// round-trip representation, so emission is deterministic and lossless.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut s = String::new();
    s.push_str(&columns.join(","));
    s.push('\n');
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::invalid("csv row width mismatch"));
        }
        s.push_str(&row.join(","));
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}

/// Reads a CSV written by [`write_csv`]: header row plus string cells.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("empty csv"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if cells.len() != header.len() {
            return Err(Error::format(format!(
                "csv row has {} cells, expected {}",
                cells.len(),
                header.len()
            )));
        }
        rows.push(cells);
    }
    Ok((header, rows))
}

/// Writes a square matrix as headerless CSV rows.
pub fn write_matrix_csv(path: &Path, m: &nalgebra::DMatrix<f64>) -> Result<()> {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    atomic_write(path, s.as_bytes())
}

/// Reads a headerless numeric CSV as a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<nalgebra::DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(format!("bad matrix entry '{c}'")))
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format("ragged matrix csv"));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format("empty matrix csv"));
    }
    let n = rows.len();
    let m = rows[0].len();
    Ok(nalgebra::DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Extracts a named f64 column from parsed CSV content.
pub fn csv_column(header: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let idx = header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::format(format!("csv column '{name}' not found")))?;
    rows.iter()
        .map(|r| {
            r[idx]
                .parse::<f64>()
                .map_err(|_| Error::format(format!("bad number '{}' in column '{name}'", r[idx])))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cov::kronecker_cov;
    use crate::mcdlm::sample_local_maxima;

    #[test]
    fn volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.lmv");
        let lat = LatticeSpec::new(vec![3, 4], vec![1.0, 2.5]).unwrap();
        let f = Field::new(lat, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect()).unwrap();
        write_volume(&path, &f).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(&back, &f);
    }

    #[test]
    fn sample_set_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.lms");
        let cov = kronecker_cov(0.5, 1).unwrap();
        let set =
            sample_local_maxima(&cov, PeakModel::StudentT { nu: 7 }, 500, 100_000, 3).unwrap();
        write_sample_set(&path, &set).unwrap();
        let back = read_sample_set(&path).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            vec!["1".to_string(), "0.25".to_string()],
            vec!["2".to_string(), "0.5".to_string()],
        ];
        write_csv(&path, &["height", "p"], &rows).unwrap();
        let (header, back) = read_csv(&path).unwrap();
        assert_eq!(header, vec!["height", "p"]);
        assert_eq!(back, rows);
        let p = csv_column(&header, &back, "p").unwrap();
        assert_eq!(p, vec![0.25, 0.5]);
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lmv");
        atomic_write(&path, b"{\"magic\":\"NOPE\"}\n").unwrap();
        assert!(read_volume(&path).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.lmv");
        let lat = LatticeSpec::cubic(1, 4).unwrap();
        let f = Field::new(lat, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        write_volume(&path, &f).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        atomic_write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(read_volume(&path).is_err());
    }
}
