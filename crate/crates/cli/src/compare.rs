//! `compare`: deviations between two run directories on shared times.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::output::{OBSERVABLES, SECTORS};

#[derive(Debug, Deserialize)]
pub struct ObservableRecord {
    pub time: f64,
    pub bond: usize,
    #[serde(rename = "S_op")]
    pub s_op: f64,
}

#[derive(Debug, Deserialize)]
pub struct SectorRecord {
    pub time: f64,
    pub bond: usize,
    pub sector_type: String,
    pub sector_value: i64,
    pub p: f64,
    #[serde(rename = "S_resolved")]
    pub s_resolved: f64,
}

/// Time key with a nanounit grid, so equal step counts compare equal.
pub fn time_key(t: f64) -> i64 {
    (t * 1e9).round() as i64
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Output(format!("{}: {e}", path.display())),
        _ => CliError::Input(format!("{}: {e}", path.display())),
    })?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, PartialEq)]
pub struct BondDeviation {
    pub bond: usize,
    pub shared_times: usize,
    pub max_delta_s_op: f64,
    pub at_time: f64,
    /// Largest `|Δp|` over magnetization sectors, when both runs have
    /// sector tables.
    pub max_delta_p_sz: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct CompareReport {
    pub run_a: PathBuf,
    pub run_b: PathBuf,
    pub window: (f64, f64),
    pub tolerance: Option<f64>,
    pub bonds: Vec<BondDeviation>,
    pub pass: bool,
}

type SectorTable = BTreeMap<(usize, i64), BTreeMap<i64, f64>>;

fn sz_table(dir: &Path) -> Result<Option<SectorTable>> {
    let path = dir.join(SECTORS);
    if !path.exists() {
        return Ok(None);
    }
    let mut table: SectorTable = BTreeMap::new();
    for r in read_csv::<SectorRecord>(&path)? {
        if r.sector_type == "Sz" {
            table.entry((r.bond, time_key(r.time))).or_default().insert(r.sector_value, r.p);
        }
    }
    Ok(Some(table))
}

pub fn compare(run_a: &Path, run_b: &Path, window: (f64, f64), tolerance: Option<f64>) -> Result<CompareReport> {
    if !(window.0 <= window.1) {
        return Err(CliError::Input(format!("empty window [{}, {}]", window.0, window.1)));
    }
    let load = |dir: &Path| -> Result<BTreeMap<(usize, i64), (f64, f64)>> {
        Ok(read_csv::<ObservableRecord>(&dir.join(OBSERVABLES))?
            .into_iter()
            .filter(|r| r.time >= window.0 - 1e-9 && r.time <= window.1 + 1e-9)
            .map(|r| ((r.bond, time_key(r.time)), (r.time, r.s_op)))
            .collect())
    };
    let a = load(run_a)?;
    let b = load(run_b)?;
    let (pa, pb) = (sz_table(run_a)?, sz_table(run_b)?);

    let bonds: BTreeSet<usize> = a.keys().map(|k| k.0).filter(|bond| b.keys().any(|k| k.0 == *bond)).collect();
    let mut out = Vec::new();
    for bond in bonds {
        let shared: Vec<(usize, i64)> = a.keys().filter(|k| k.0 == bond && b.contains_key(k)).copied().collect();
        if shared.is_empty() {
            continue;
        }
        let mut dev = BondDeviation {
            bond,
            shared_times: shared.len(),
            max_delta_s_op: 0.0,
            at_time: a[&shared[0]].0,
            max_delta_p_sz: None,
        };
        for key in &shared {
            let d = (a[key].1 - b[key].1).abs();
            if d > dev.max_delta_s_op {
                dev.max_delta_s_op = d;
                dev.at_time = a[key].0;
            }
        }
        if let (Some(pa), Some(pb)) = (&pa, &pb) {
            let empty = BTreeMap::new();
            let mut worst: f64 = 0.0;
            for key in &shared {
                let (x, y) = (pa.get(key).unwrap_or(&empty), pb.get(key).unwrap_or(&empty));
                for m in x.keys().chain(y.keys()) {
                    let gap = x.get(m).copied().unwrap_or(0.0) - y.get(m).copied().unwrap_or(0.0);
                    worst = worst.max(gap.abs());
                }
            }
            dev.max_delta_p_sz = Some(worst);
        }
        out.push(dev);
    }
    if out.is_empty() {
        return Err(CliError::Input("the runs share no observation times in the window".into()));
    }
    let pass = tolerance.is_none_or(|tol| {
        out.iter().all(|d| d.max_delta_s_op < tol && d.max_delta_p_sz.is_none_or(|p| p < tol))
    });
    Ok(CompareReport { run_a: run_a.into(), run_b: run_b.into(), window, tolerance, bonds: out, pass })
}
