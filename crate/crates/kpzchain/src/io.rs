//! On-disk formats: trajectory/profile CSVs (`t,r,value`), fit-report and
//! run-manifest JSON, and atomic writes. Floats are written in Rust's
//! shortest round-trip form, so identical data produces identical bytes
//! and parsing back loses nothing.

use crate::engine::ProbeSeries;
use crate::error::{Error, Result};
use crate::observables::{Profile, TransferSeries};
use crate::scaling::FitResult;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

/// Write bytes via a temporary file in the same directory plus rename, so
/// readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// SHA-256 hex digest of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

// ---------- t,r,value tables ----------

fn render_rows(times: &[f64], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut out = String::from("t,r,value\n");
    for (t, row) in times.iter().zip(rows) {
        for (col, v) in row.iter().enumerate() {
            out.push_str(&format!("{t},{},{v}\n", col + 1));
        }
    }
    out
}

fn parse_rows(content: &str, what: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut times: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t,") {
            continue;
        }
        let mut fields = line.split(',');
        let (a, b, c) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => {
                return Err(Error::Data(format!(
                    "{what}: line {} is not t,r,value: {line}",
                    k + 1
                )))
            }
        };
        let t: f64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{what}: bad time on line {}", k + 1)))?;
        let r: usize = b
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{what}: bad index on line {}", k + 1)))?;
        let v: f64 = c
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("{what}: bad value on line {}", k + 1)))?;
        if times.last().map_or(true, |&last| t != last) {
            times.push(t);
            rows.push(Vec::new());
        }
        let row = rows.last_mut().unwrap();
        if r != row.len() + 1 {
            return Err(Error::Data(format!(
                "{what}: line {} has index {r}, expected {}",
                k + 1,
                row.len() + 1
            )));
        }
        row.push(v);
    }
    if times.is_empty() {
        return Err(Error::Data(format!("{what}: no data rows")));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Data(format!("{what}: ragged rows")));
    }
    Ok((times, rows))
}

/// Write a probe series as a `t,r,value` CSV (`r` is the 1-based column).
pub fn write_series_csv(path: &Path, series: &ProbeSeries) -> Result<()> {
    let body = render_rows(&series.times, series.rows.iter().cloned());
    atomic_write(path, body.as_bytes())
}

/// Read a probe series back; the label is the file stem.
pub fn read_series_csv(path: &Path) -> Result<ProbeSeries> {
    let content = std::fs::read_to_string(path)?;
    let (times, rows) = parse_rows(&content, &path.display().to_string())?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "series".into());
    Ok(ProbeSeries { label, times, rows })
}

/// Write a site/bond profile as a `t,r,value` CSV.
pub fn write_profile_csv(path: &Path, profile: &Profile) -> Result<()> {
    let body = render_rows(
        &profile.times,
        (0..profile.n_times()).map(|k| profile.row(k).to_vec()),
    );
    atomic_write(path, body.as_bytes())
}

/// Read a profile written by [`write_profile_csv`] (or any `t,r,value`
/// table with strictly increasing times).
pub fn read_profile_csv(path: &Path) -> Result<Profile> {
    let content = std::fs::read_to_string(path)?;
    let (times, rows) = parse_rows(&content, &path.display().to_string())?;
    let width = rows[0].len();
    let mut values = Array2::zeros((times.len(), width));
    for (k, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            values[[k, c]] = v;
        }
    }
    Profile::from_parts(times, values)
}

/// Write a scalar time series as `t,r,value` with `r = 1` throughout.
pub fn write_transfer_csv(path: &Path, series: &TransferSeries) -> Result<()> {
    let body = render_rows(&series.times, series.values.iter().map(|&v| vec![v]));
    atomic_write(path, body.as_bytes())
}

pub fn read_transfer_csv(path: &Path) -> Result<TransferSeries> {
    let content = std::fs::read_to_string(path)?;
    let (times, rows) = parse_rows(&content, &path.display().to_string())?;
    if rows[0].len() != 1 {
        return Err(Error::Data(format!(
            "{}: expected a single column, found {}",
            path.display(),
            rows[0].len()
        )));
    }
    Ok(TransferSeries { times, values: rows.into_iter().map(|r| r[0]).collect() })
}

/// Plot-ready comparison of a measured scaling curve against both
/// reference shapes (columns: `xi,measured,kpz,gauss`).
pub fn write_scaling_comparison_csv(
    path: &Path,
    xi: &[f64],
    measured: &[f64],
    kpz: &[f64],
    gauss: &[f64],
) -> Result<()> {
    if xi.len() != measured.len() || xi.len() != kpz.len() || xi.len() != gauss.len() {
        return Err(Error::Argument("comparison columns differ in length".into()));
    }
    let mut out = String::from("xi,measured,kpz,gauss\n");
    for k in 0..xi.len() {
        out.push_str(&format!("{},{},{},{}\n", xi[k], measured[k], kpz[k], gauss[k]));
    }
    atomic_write(path, out.as_bytes())
}

// ---------- fit reports ----------

/// JSON-friendly rendering of a [`FitResult`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub params: Vec<(String, f64)>,
    pub uncertainties: Vec<(String, f64)>,
    pub covariance: Vec<Vec<f64>>,
    pub window: (f64, f64),
    pub residual_norm: f64,
}

impl From<&FitResult> for FitReport {
    fn from(fit: &FitResult) -> Self {
        let covariance = (0..fit.covariance.nrows())
            .map(|i| fit.covariance.row(i).to_vec())
            .collect();
        let uncertainties = fit
            .params
            .iter()
            .map(|(name, _)| (name.clone(), fit.uncertainty(name).unwrap_or(f64::NAN)))
            .collect();
        Self {
            params: fit.params.clone(),
            uncertainties,
            covariance,
            window: fit.window,
            residual_norm: fit.residual_norm,
        }
    }
}

/// Write a named set of fit reports as pretty JSON.
pub fn write_fit_reports(path: &Path, reports: &BTreeMap<String, FitReport>) -> Result<()> {
    let body = serde_json::to_string_pretty(reports)
        .map_err(|e| Error::Data(format!("fit-report serialization: {e}")))?;
    atomic_write(path, body.as_bytes())
}

// ---------- run manifest ----------

/// Summary of an evolution log carried in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogSummary {
    pub steps: usize,
    pub truncation_events: u64,
    pub audit_events: u64,
    pub audit_max_deviation: f64,
    pub total_discarded_weight: f64,
    pub max_bond: usize,
    pub trace_drift: f64,
}

/// Everything needed to reproduce a run directory exactly: the full
/// configuration, code version, seeds, input-data checksums, and the
/// checksums of every produced file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub code_version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub data_checksums: BTreeMap<String, String>,
    pub log: Option<LogSummary>,
    pub outputs: BTreeMap<String, String>,
}

pub const MANIFEST_SCHEMA: &str = "kpzchain-run/1";

impl Manifest {
    pub fn new(config: serde_json::Value, seed: u64) -> Self {
        Self {
            schema: MANIFEST_SCHEMA.into(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            data_checksums: BTreeMap::new(),
            log: None,
            outputs: BTreeMap::new(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let body = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("manifest serialization: {e}")))?;
    atomic_write(path, body.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let content = std::fs::read_to_string(path)?;
    serde_json::from_str(&content)
        .map_err(|e| Error::Data(format!("{}: bad manifest: {e}", path.display())))
}
