//! Report files: long-format CSV plus a JSON summary embedding config and seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{io_err, HarnessError, Result};
use crate::harness::{Fate, FateReport, FateRun, HydroReport, SCHEMA_VERSION};

pub const HYDRO_CSV: &str = "hydro.csv";
pub const HYDRO_JSON: &str = "hydro.json";
pub const FATE_CSV: &str = "fate_series.csv";
pub const FATE_JSON: &str = "fate.json";

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::IoFailure { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

pub fn hydro_csv(rep: &HydroReport) -> Result<Vec<u8>> {
    let d = rep.rows.first().map_or(0, |r| r.block.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let here = Path::new(HYDRO_CSV);
    let mut head = vec!["epsilon".to_string(), "t".to_string()];
    head.extend((1..=d).map(|i| format!("block_x{i}")));
    head.extend(["empirical", "reference", "abs_err"].map(String::from));
    w.write_record(&head).map_err(csv_err(here))?;
    for r in &rep.rows {
        let mut rec = vec![r.epsilon.to_string(), r.t.to_string()];
        rec.extend(r.block.iter().map(|b| b.to_string()));
        rec.extend([r.empirical, r.reference, r.abs_err].map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err(here))?;
    }
    w.into_inner().map_err(|e| HarnessError::IoFailure { path: here.into(), source: std::io::Error::other(e.to_string()) })
}

pub fn emit_hydro(rep: &HydroReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (c, j) = (dir.join(HYDRO_CSV), dir.join(HYDRO_JSON));
    fs::write(&c, hydro_csv(rep)?).map_err(io_err(&c))?;
    write(&j, &to_json(rep))?;
    Ok(vec![c, j])
}

#[derive(Serialize)]
pub struct FateSummary<'a> {
    pub schema_version: u32,
    pub classification: Fate,
    pub series_path: &'a str,
    pub thresholds: [f64; 2],
    pub seed: u64,
    pub t_max: f64,
    pub window: f64,
    pub torus_side: usize,
    pub counts: &'a [(Fate, usize)],
    pub runs: &'a [FateRun],
    pub config: &'a crate::config::Config,
}

pub fn fate_summary(rep: &FateReport) -> FateSummary<'_> {
    FateSummary {
        schema_version: SCHEMA_VERSION,
        classification: rep.classification,
        series_path: FATE_CSV,
        thresholds: rep.thresholds,
        seed: rep.seed,
        t_max: rep.t_max,
        window: rep.window,
        torus_side: rep.torus_side,
        counts: &rep.counts,
        runs: &rep.runs,
        config: &rep.config,
    }
}

pub fn fate_csv(rep: &FateReport) -> Result<Vec<u8>> {
    let here = Path::new(FATE_CSV);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["replicate", "t", "density"]).map_err(csv_err(here))?;
    for r in &rep.runs {
        for (t, x) in &r.series {
            w.write_record([r.replicate.to_string(), t.to_string(), x.to_string()]).map_err(csv_err(here))?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::IoFailure { path: here.into(), source: std::io::Error::other(e.to_string()) })
}

pub fn emit_fate(rep: &FateReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (c, j) = (dir.join(FATE_CSV), dir.join(FATE_JSON));
    fs::write(&c, fate_csv(rep)?).map_err(io_err(&c))?;
    write(&j, &to_json(&fate_summary(rep)))?;
    Ok(vec![c, j])
}
