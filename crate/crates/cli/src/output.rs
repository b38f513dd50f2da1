//! Run directories: `manifest.json`, one CSV per table, `summary.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::run::{Outcome, Table};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Debug)]
pub struct RunMeta {
    pub seed: u64,
    pub workers: usize,
    pub dense_cap: usize,
}

/// Canonical JSON of everything that determines the CSVs.
fn canonical(cfg: &Config, meta: &RunMeta) -> String {
    json!({ "config": cfg, "seed": meta.seed, "dense_cap": meta.dense_cap }).to_string()
}

pub fn config_hash(cfg: &Config, meta: &RunMeta) -> String {
    let digest = Sha256::digest(canonical(cfg, meta).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_dir(out: &Path, cfg: &Config, meta: &RunMeta) -> PathBuf {
    out.join(format!("{}-{}", cfg.experiment.name(), &config_hash(cfg, meta)[..12]))
}

pub fn write_table(dir: &Path, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", table.name)))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush()
}

fn write_json(path: &Path, v: &Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn manifest(cfg: &Config, meta: &RunMeta, outcome: &Outcome) -> Value {
    json!({
        "schema_version": MANIFEST_SCHEMA,
        "code_version": env!("CARGO_PKG_VERSION"),
        "experiment": cfg.experiment.name(),
        "config_hash": config_hash(cfg, meta),
        "seed": meta.seed,
        "workers": meta.workers,
        "dense_cap": meta.dense_cap,
        "enumeration_version": meanfield::fock::ENUMERATION_VERSION,
        "tolerances": cfg.tolerances,
        "floors": outcome.floors,
        "tables": outcome.tables.iter().map(|t| format!("{}.csv", t.name)).collect::<Vec<_>>(),
        "assertions": outcome.checks,
        "budget": outcome.budget,
        "config": cfg,
    })
}

/// Writes the run and returns its directory.
pub fn write_run(out: &Path, cfg: &Config, meta: &RunMeta, outcome: &Outcome) -> io::Result<PathBuf> {
    let dir = run_dir(out, cfg, meta);
    fs::create_dir_all(&dir)?;
    for t in &outcome.tables {
        write_table(&dir, t)?;
    }
    write_json(&dir.join("summary.json"), &outcome.summary)?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, meta, outcome))?;
    Ok(dir)
}
