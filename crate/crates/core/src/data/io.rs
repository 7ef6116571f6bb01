use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, Oracle};
use crate::error::{Error, Result};
use crate::models::TreatmentMode;

/// How to interpret a dataset CSV. Columns: `x0..x{d-1}, t, y` plus optional `mu0, mu1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub mode: TreatmentMode,
    /// Oracle descriptor; defaults to `<csv path>.oracle.json` when that file exists.
    #[serde(default)]
    pub oracle: Option<PathBuf>,
}

impl CsvSchema {
    pub fn new(mode: TreatmentMode) -> Self {
        Self { mode, oracle: None }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".oracle.json");
    PathBuf::from(s)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();
    let mut xcols: Vec<(usize, usize)> = Vec::new();
    let (mut tcol, mut ycol, mut mu0col, mut mu1col) = (None, None, None, None);
    for (j, name) in header.iter().enumerate() {
        match name.trim() {
            "t" => tcol = Some(j),
            "y" => ycol = Some(j),
            "mu0" => mu0col = Some(j),
            "mu1" => mu1col = Some(j),
            other => {
                let k = other
                    .strip_prefix('x')
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(1, format!("unknown column {other:?}")))?;
                xcols.push((k, j));
            }
        }
    }
    xcols.sort_unstable();
    if xcols.is_empty() || xcols.iter().enumerate().any(|(i, &(k, _))| i != k) {
        return Err(parse_err(1, "covariate columns must be x0..x{d-1}"));
    }
    let tcol = tcol.ok_or_else(|| parse_err(1, "missing column t"))?;
    let ycol = ycol.ok_or_else(|| parse_err(1, "missing column y"))?;
    if mu0col.is_some() != mu1col.is_some() {
        return Err(parse_err(1, "mu0 and mu1 must appear together"));
    }

    let d = xcols.len();
    let (mut xs, mut t, mut y, mut mu0, mut mu1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |j: usize| -> Result<f64> {
            let raw = rec.get(j).ok_or_else(|| parse_err(line, format!("missing field {j}")))?;
            raw.trim().parse::<f64>().map_err(|_| parse_err(line, format!("cannot parse {raw:?} as a number")))
        };
        for &(_, j) in &xcols {
            xs.push(field(j)?);
        }
        let ti = field(tcol)?;
        schema.mode.check(ti).map_err(|e| parse_err(line, e.to_string()))?;
        t.push(ti);
        y.push(field(ycol)?);
        if let (Some(a), Some(b)) = (mu0col, mu1col) {
            mu0.push(field(a)?);
            mu1.push(field(b)?);
        }
    }
    let n = t.len();
    let x = Array2::from_shape_vec((n, d), xs).map_err(|e| parse_err(1, e.to_string()))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut ds = Dataset::new(x, t, y, schema.mode)?.with_id(stem);
    if mu0col.is_some() {
        ds = ds.with_truth(GroundTruth::Table { mu0, mu1 })?;
    }
    let sidecar = schema.oracle.clone().or_else(|| Some(sidecar_path(path)).filter(|p| p.exists()));
    if let Some(p) = sidecar {
        let oracle: Oracle = serde_json::from_str(&fs::read_to_string(p)?)?;
        ds = ds.with_truth(GroundTruth::Oracle(Arc::new(oracle)))?;
    }
    Ok(ds)
}

/// Writes the dataset; binary data with ground truth gets `mu0, mu1` columns, and an
/// oracle-backed continuous dataset also gets a JSON sidecar.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let binary_truth = ds.mode == TreatmentMode::Binary && ds.truth.is_some();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["t", "y"].map(String::from));
    if binary_truth {
        header.extend(["mu0", "mu1"].map(String::from));
    }
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(ds.t[i].to_string());
        rec.push(ds.y[i].to_string());
        if binary_truth {
            rec.push(ds.potential(i, 0.0)?.to_string());
            rec.push(ds.potential(i, 1.0)?.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let (TreatmentMode::Continuous5Bin, Some(GroundTruth::Oracle(o))) = (ds.mode, &ds.truth) {
        fs::write(sidecar_path(path), serde_json::to_string_pretty(o.as_ref())?)?;
    }
    Ok(())
}
