//! Merges the distance tables of convergence runs and refits the rates.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use meanfield::experiments::{fit_rate, RateFit};
use serde::Serialize;
use serde_json::Value;

use crate::output::MANIFEST_SCHEMA;

#[derive(Debug)]
pub enum ReportError {
    Read { dir: PathBuf, message: String },
    Schema { dir: PathBuf, found: Value },
    Incompatible(String),
    Conflict { n: usize, t: f64, first: (PathBuf, f64), second: (PathBuf, f64) },
}

impl fmt::Display for ReportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportError::Read { dir, message } => write!(f, "{}: {message}", dir.display()),
            ReportError::Schema { dir, found } => {
                write!(f, "{}: manifest schema {found} does not match {MANIFEST_SCHEMA}", dir.display())
            }
            ReportError::Incompatible(m) => write!(f, "{m}"),
            ReportError::Conflict { n, t, first, second } => write!(
                f,
                "conflicting rows for N={n}, t={t}: {} in {} vs {} in {}",
                first.1,
                first.0.display(),
                second.1,
                second.0.display()
            ),
        }
    }
}

impl std::error::Error for ReportError {}

#[derive(Clone, Debug)]
pub struct RunData {
    pub dir: PathBuf,
    pub experiment: String,
    pub floor: f64,
    pub rows: Vec<(usize, f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MergedFit {
    pub t: f64,
    pub fit: Option<RateFit>,
    pub notice: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Merged {
    pub runs: Vec<PathBuf>,
    pub floor: f64,
    /// `(n, t, distance)` sorted by `n`, then `t`, the order runs write.
    pub rows: Vec<(usize, f64, f64)>,
    pub fits: Vec<MergedFit>,
    /// Runs that contributed points at or below the fit floor.
    pub flagged: Vec<(PathBuf, String)>,
}

fn read_err(dir: &Path, message: impl Into<String>) -> ReportError {
    ReportError::Read { dir: dir.to_path_buf(), message: message.into() }
}

pub fn load_run(dir: &Path) -> Result<RunData, ReportError> {
    let text = fs::read_to_string(dir.join("manifest.json")).map_err(|e| read_err(dir, format!("manifest.json: {e}")))?;
    let manifest: Value = serde_json::from_str(&text).map_err(|e| read_err(dir, format!("manifest.json: {e}")))?;
    let schema = manifest.get("schema_version").cloned().unwrap_or(Value::Null);
    if schema.as_u64() != Some(MANIFEST_SCHEMA as u64) {
        return Err(ReportError::Schema { dir: dir.to_path_buf(), found: schema });
    }
    let experiment = manifest["experiment"].as_str().unwrap_or_default().to_string();
    if !matches!(experiment.as_str(), "converge-factorized" | "converge-coherent" | "fluctuations") {
        return Err(ReportError::Incompatible(format!("{}: experiment {experiment:?} has no rate table", dir.display())));
    }
    let floor = manifest["floors"]["floor"].as_f64().ok_or_else(|| read_err(dir, "manifest lacks floors.floor"))?;
    let mut rdr = csv::Reader::from_path(dir.join("distances.csv")).map_err(|e| read_err(dir, format!("distances.csv: {e}")))?;
    let headers = rdr.headers().map_err(|e| read_err(dir, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| read_err(dir, format!("distances.csv lacks {name}")));
    let (cn, ct, cd) = (col("n")?, col("t")?, col("distance")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| read_err(dir, e.to_string()))?;
        let parse = |i: usize| rec.get(i).unwrap_or("").to_string();
        let n: usize = parse(cn).parse().map_err(|_| read_err(dir, format!("bad n {:?}", parse(cn))))?;
        let t: f64 = parse(ct).parse().map_err(|_| read_err(dir, format!("bad t {:?}", parse(ct))))?;
        let d: f64 = parse(cd).parse().map_err(|_| read_err(dir, format!("bad distance {:?}", parse(cd))))?;
        rows.push((n, t, d));
    }
    Ok(RunData { dir: dir.to_path_buf(), experiment, floor, rows })
}

pub fn merge(runs: &[RunData]) -> Result<Merged, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::Incompatible("no run directories given".into()));
    }
    if let Some(r) = runs.iter().find(|r| r.experiment != runs[0].experiment) {
        return Err(ReportError::Incompatible(format!(
            "cannot merge {} with {}",
            r.experiment, runs[0].experiment
        )));
    }
    let mut table: BTreeMap<(u64, usize), (f64, usize)> = BTreeMap::new();
    for (i, run) in runs.iter().enumerate() {
        for &(n, t, d) in &run.rows {
            match table.get(&(t.to_bits(), n)) {
                Some(&(d0, j)) if d0.to_bits() != d.to_bits() => {
                    return Err(ReportError::Conflict {
                        n,
                        t,
                        first: (runs[j].dir.clone(), d0),
                        second: (run.dir.clone(), d),
                    });
                }
                Some(_) => {}
                None => {
                    table.insert((t.to_bits(), n), (d, i));
                }
            }
        }
    }
    let floor = runs.iter().map(|r| r.floor).fold(0.0, f64::max);
    let mut rows: Vec<(usize, f64, f64)> = table.iter().map(|(&(tb, n), &(d, _))| (n, f64::from_bits(tb), d)).collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut times: Vec<f64> = rows.iter().map(|r| r.1).filter(|t| *t > 0.0).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let fits = times
        .iter()
        .map(|&t| {
            let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.1 == t).map(|r| (r.0 as f64, r.2)).collect();
            match fit_rate(&pts, floor) {
                Ok(fit) => MergedFit { t, fit: Some(fit), notice: None },
                Err(e) => MergedFit { t, fit: None, notice: Some(e.to_string()) },
            }
        })
        .collect();
    let mut flagged = Vec::new();
    for run in runs {
        let low: Vec<String> = run
            .rows
            .iter()
            .filter(|r| r.1 > 0.0 && r.2 <= 10.0 * floor)
            .map(|r| format!("N={} t={}", r.0, r.1))
            .collect();
        if !low.is_empty() {
            flagged.push((run.dir.clone(), format!("points at or below 10x floor {floor:e}: {}", low.join(", "))));
        }
    }
    Ok(Merged { runs: runs.iter().map(|r| r.dir.clone()).collect(), floor, rows, fits, flagged })
}

pub fn report(dirs: &[PathBuf]) -> Result<Merged, ReportError> {
    let runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    merge(&runs)
}
