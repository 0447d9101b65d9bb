//! `analyze`: fits over a finished run directory, written to `fits.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use opent_core::analysis::{
    fit_decay, fit_gaussian, fit_log_tangent, fit_power_law, fit_trial_ps, AnalysisError, FitKind, FitResult,
};
use serde::{Deserialize, Serialize};

use crate::compare::{read_csv, time_key, ObservableRecord, SectorRecord};
use crate::error::{CliError, Result};
use crate::output::{write_atomic, OBSERVABLES, SECTORS};

pub const FITS: &str = "fits.csv";
pub const FITS_HEADER: [&str; 10] =
    ["kind", "bond", "time", "window_lo", "window_hi", "sector", "param", "value", "residual", "status"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub bond: usize,
    /// Time window of the power-law fit to the Gaussian widths.
    pub power_window: (f64, f64),
    /// Magnetization sectors, doubled, whose `ΔS_op,Sz / Sz²` is fitted.
    pub decay_sectors: Vec<i64>,
    /// Earliest time entering the decay fits.
    pub decay_from: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self { bond: 1, power_window: (20.0, 60.0), decay_sectors: vec![2, 4, 6, 8, 10], decay_from: 10.0 }
    }
}

#[derive(Debug, Serialize, PartialEq)]
pub struct FitRow {
    pub kind: &'static str,
    pub bond: usize,
    pub time: Option<f64>,
    pub window_lo: Option<f64>,
    pub window_hi: Option<f64>,
    pub sector: Option<i64>,
    pub param: String,
    pub value: f64,
    pub residual: f64,
    pub status: String,
}

struct Rows {
    bond: usize,
    rows: Vec<FitRow>,
}

impl Rows {
    fn fit(&mut self, time: Option<f64>, sector: Option<i64>, fit: &FitResult) {
        let status = if fit.degenerate {
            "degenerate"
        } else if !fit.converged {
            "not_converged"
        } else {
            "ok"
        };
        for (name, value) in &fit.params {
            self.rows.push(FitRow {
                kind: fit.kind.name(),
                bond: self.bond,
                time,
                window_lo: Some(fit.window.0),
                window_hi: Some(fit.window.1),
                sector,
                param: name.clone(),
                value: *value,
                residual: fit.residual,
                status: status.into(),
            });
        }
    }

    fn failed(&mut self, kind: FitKind, time: Option<f64>, sector: Option<i64>, reason: impl std::fmt::Display) {
        self.rows.push(FitRow {
            kind: kind.name(),
            bond: self.bond,
            time,
            window_lo: None,
            window_hi: None,
            sector,
            param: String::new(),
            value: f64::NAN,
            residual: f64::NAN,
            status: format!("failed: {reason}"),
        });
    }

    fn record(&mut self, kind: FitKind, time: Option<f64>, sector: Option<i64>, fit: std::result::Result<FitResult, AnalysisError>) -> Option<FitResult> {
        match fit {
            Ok(f) => {
                self.fit(time, sector, &f);
                Some(f)
            }
            Err(e) => {
                self.failed(kind, time, sector, e);
                None
            }
        }
    }
}

/// Sector tables per time for one bond and sector type: `(p, S_resolved)`.
type Sectors = BTreeMap<i64, (f64, BTreeMap<i64, (f64, f64)>)>;

fn sectors_of(records: &[SectorRecord], bond: usize, sector_type: &str) -> Sectors {
    let mut out: Sectors = BTreeMap::new();
    for r in records.iter().filter(|r| r.bond == bond && r.sector_type == sector_type) {
        out.entry(time_key(r.time)).or_insert_with(|| (r.time, BTreeMap::new())).1.insert(r.sector_value, (r.p, r.s_resolved));
    }
    out
}

/// Runs every fit for `spec.bond` and returns the rows of `fits.csv`.
pub fn analyze_rows(run_dir: &Path, spec: &AnalysisSpec) -> Result<Vec<FitRow>> {
    let mut series: Vec<(f64, f64)> = read_csv::<ObservableRecord>(&run_dir.join(OBSERVABLES))?
        .into_iter()
        .filter(|r| r.bond == spec.bond)
        .map(|r| (r.time, r.s_op))
        .collect();
    series.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rows = Rows { bond: spec.bond, rows: Vec::new() };

    // Local tangent at every time whose neighbours were observed.
    let spacing = series.windows(2).map(|w| w[1].0 - w[0].0).next();
    let mut tangents = 0;
    if let Some(dt) = spacing {
        for &(t0, _) in &series {
            if let Ok(fit) = fit_log_tangent(&series, t0, dt) {
                rows.fit(Some(t0), None, &fit);
                tangents += 1;
            }
        }
    }
    if tangents == 0 {
        rows.failed(FitKind::LogTangent, None, None, "no positive time with both neighbours observed");
    }

    let sectors_path = run_dir.join(SECTORS);
    if !sectors_path.exists() {
        let reason = format!("{SECTORS} is missing");
        for kind in [FitKind::Gaussian, FitKind::TrialPS, FitKind::PowerLaw, FitKind::Decay] {
            rows.failed(kind, None, None, &reason);
        }
        return Ok(rows.rows);
    }
    let records = read_csv::<SectorRecord>(&sectors_path)?;
    let sz = sectors_of(&records, spec.bond, "Sz");
    let spin = sectors_of(&records, spec.bond, "S");

    let mut widths = Vec::new();
    for (t, table) in sz.values() {
        let probs: BTreeMap<i64, f64> = table.iter().map(|(&m, &(p, _))| (m, p)).collect();
        if let Some(fit) = rows.record(FitKind::Gaussian, Some(*t), None, fit_gaussian(&probs)) {
            widths.push((*t, fit.param("delta").expect("gaussian width")));
        }
    }
    if sz.is_empty() {
        rows.failed(FitKind::Gaussian, None, None, "no magnetization-sector rows");
    }

    for (t, table) in spin.values() {
        let probs: BTreeMap<i64, f64> = table.iter().map(|(&s2, &(p, _))| (s2, p)).collect();
        rows.record(FitKind::TrialPS, Some(*t), None, fit_trial_ps(&probs));
    }
    if spin.is_empty() {
        rows.failed(FitKind::TrialPS, None, None, "no spin-sector rows");
    }

    rows.record(FitKind::PowerLaw, None, None, fit_power_law(&widths, spec.power_window));

    for &m in &spec.decay_sectors {
        if m <= 0 {
            rows.failed(FitKind::Decay, None, Some(m), "sector must be positive");
            continue;
        }
        let scale = (m as f64 / 2.0).powi(2);
        // First stretch of positive values: late-time noise can push the
        // difference through zero.
        let decay: Vec<(f64, f64)> = sz
            .values()
            .filter(|(t, _)| *t >= spec.decay_from)
            .filter_map(|(t, table)| {
                let (_, zero) = table.get(&0)?;
                let (_, s) = table.get(&m)?;
                Some((*t, (s - zero) / scale))
            })
            .skip_while(|p| p.1 <= 0.0)
            .take_while(|p| p.1 > 0.0)
            .collect();
        rows.record(FitKind::Decay, None, Some(m), fit_decay(&decay));
    }
    Ok(rows.rows)
}

pub fn analyze(run_dir: &Path, spec: &AnalysisSpec, out: &Path) -> Result<usize> {
    let rows = analyze_rows(run_dir, spec)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(FITS_HEADER)?;
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    write_atomic(&out.join(FITS), &bytes)?;
    Ok(rows.len())
}
