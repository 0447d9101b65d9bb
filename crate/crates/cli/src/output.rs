//! CSV outputs shared by every run source.
//!
//! Rows go to `<name>.partial` while a run is in progress and are renamed
//! into place only when the run finishes, so a failed run never leaves a
//! truncated `<name>` behind.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use opent_core::observables::{
    detect_multiplets, eps_mult, operator_entanglement, resolved_entanglement, sector_probabilities, shannon,
    SectorLabel, SpectrumSnapshot,
};
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SPECTRA: &str = "spectra.csv";
pub const OBSERVABLES: &str = "observables.csv";
pub const SECTORS: &str = "sectors.csv";
pub const RUN_JSON: &str = "run.json";
pub const CHECKPOINT: &str = "checkpoint.bin";

pub const SPECTRA_HEADER: [&str; 5] = ["time", "bond", "qk", "qb", "lambda"];
pub const OBSERVABLES_HEADER: [&str; 8] =
    ["time", "bond", "S_op", "shannon_Sz", "trace_dev", "herm_dev", "trunc_weight", "chi_used"];
pub const SECTORS_HEADER: [&str; 6] = ["time", "bond", "sector_type", "sector_value", "p", "S_resolved"];

const FILES: [(&str, &[&str]); 3] =
    [(SPECTRA, &SPECTRA_HEADER), (OBSERVABLES, &OBSERVABLES_HEADER), (SECTORS, &SECTORS_HEADER)];

#[derive(Debug, Serialize)]
pub struct SpectrumRow {
    pub time: f64,
    pub bond: usize,
    pub qk: i64,
    pub qb: i64,
    pub lambda: f64,
}

#[derive(Debug, Serialize)]
pub struct ObservableRow {
    pub time: f64,
    pub bond: usize,
    #[serde(rename = "S_op")]
    pub s_op: f64,
    #[serde(rename = "shannon_Sz")]
    pub shannon_sz: f64,
    pub trace_dev: f64,
    pub herm_dev: f64,
    pub trunc_weight: f64,
    pub chi_used: usize,
}

#[derive(Debug, Serialize)]
pub struct SectorRow {
    pub time: f64,
    pub bond: usize,
    pub sector_type: &'static str,
    /// `2·Sz` or `2·S`.
    pub sector_value: i64,
    pub p: f64,
    #[serde(rename = "S_resolved")]
    pub s_resolved: f64,
}

/// One recorded spectrum: the snapshot and the bond class it belongs to.
pub struct Record {
    pub bond: usize,
    pub snapshot: SpectrumSnapshot,
}

/// Entropies of pure spectra come out as `-0.0`; print them as `0.0`.
fn unsigned_zero(x: f64) -> f64 {
    x + 0.0
}

fn partial_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.partial"))
}

/// Open CSV writers for one run directory.
pub struct RunFiles {
    dir: PathBuf,
    spectra: csv::Writer<BufWriter<File>>,
    observables: csv::Writer<BufWriter<File>>,
    sectors: csv::Writer<BufWriter<File>>,
}

impl RunFiles {
    fn open(dir: &Path) -> Result<[csv::Writer<BufWriter<File>>; 3]> {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        let mut out = Vec::with_capacity(3);
        for (name, header) in FILES {
            let path = partial_path(dir, name);
            let file = File::create(&path).map_err(CliError::io(&path))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
            w.write_record(header)?;
            out.push(w);
        }
        Ok(out.try_into().ok().expect("three writers"))
    }

    pub fn create(dir: &Path) -> Result<Self> {
        let [spectra, observables, sectors] = Self::open(dir)?;
        Ok(Self { dir: dir.to_path_buf(), spectra, observables, sectors })
    }

    /// Starts new partial files holding the rows of an earlier run up to
    /// `t_keep`, taken from the finished files or, failing that, from the
    /// partial files of an interrupted run.
    pub fn resume(dir: &Path, t_keep: f64) -> Result<Self> {
        let mut kept: Vec<Vec<csv::StringRecord>> = Vec::new();
        for (name, header) in FILES {
            let done = dir.join(name);
            let source = if done.exists() { done } else { partial_path(dir, name) };
            let mut reader = csv::Reader::from_path(&source)
                .map_err(|e| CliError::Input(format!("cannot resume from {}: {e}", source.display())))?;
            if reader.headers()?.iter().ne(header.iter().copied()) {
                return Err(CliError::Input(format!("{} has an unexpected header", source.display())));
            }
            let mut rows = Vec::new();
            for rec in reader.records() {
                let rec = rec?;
                let t: f64 = rec[0]
                    .parse()
                    .map_err(|_| CliError::Input(format!("bad time `{}` in {}", &rec[0], source.display())))?;
                if t <= t_keep + 1e-9 {
                    rows.push(rec);
                }
            }
            kept.push(rows);
        }
        let mut files = Self::create(dir)?;
        for (w, rows) in [&mut files.spectra, &mut files.observables, &mut files.sectors].into_iter().zip(&kept) {
            for rec in rows {
                w.write_record(rec)?;
            }
        }
        Ok(files)
    }

    pub fn write(&mut self, rec: &Record) -> Result<()> {
        let snap = &rec.snapshot;
        let (time, bond) = (snap.time, rec.bond);
        for e in snap.entries() {
            self.spectra.serialize(SpectrumRow { time, bond, qk: e.qk, qb: e.qb, lambda: e.lambda })?;
        }
        let p_sz = sector_probabilities(snap, SectorLabel::Ket);
        let d = &snap.diagnostics;
        self.observables.serialize(ObservableRow {
            time,
            bond,
            s_op: unsigned_zero(operator_entanglement(snap).map_err(|e| CliError::Numerical(e.to_string()))?),
            shannon_sz: unsigned_zero(shannon(&p_sz)),
            trace_dev: d.trace_dev,
            herm_dev: d.herm_dev,
            trunc_weight: d.trunc_weight,
            chi_used: d.chi_used,
        })?;
        let s_sz = resolved_entanglement(snap, SectorLabel::Ket);
        for (&m, &p) in &p_sz {
            self.sectors.serialize(SectorRow {
                time,
                bond,
                sector_type: "Sz",
                sector_value: m,
                p,
                s_resolved: unsigned_zero(s_sz.get(&m).copied().unwrap_or(0.0)),
            })?;
        }
        // Spin sectors only exist when the spectrum groups into multiplets.
        let spin = detect_multiplets(snap, eps_mult(d.trunc_weight));
        if spin.table.residual.is_finite() {
            for (&s2, &p) in &spin.probabilities {
                self.sectors.serialize(SectorRow {
                    time,
                    bond,
                    sector_type: "S",
                    sector_value: s2,
                    p,
                    s_resolved: unsigned_zero(spin.entropies.get(&s2).copied().unwrap_or(0.0)),
                })?;
            }
        }
        Ok(())
    }

    /// Flushes every file and renames the partial files into place.
    pub fn finish(self) -> Result<()> {
        let dir = self.dir;
        for (mut w, (name, _)) in [self.spectra, self.observables, self.sectors].into_iter().zip(FILES) {
            w.flush().map_err(CliError::io(partial_path(&dir, name)))?;
            let file = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
            file.into_inner()
                .map_err(|e| CliError::Output(e.to_string()))?
                .sync_all()
                .map_err(CliError::io(partial_path(&dir, name)))?;
            fs::rename(partial_path(&dir, name), dir.join(name)).map_err(CliError::io(dir.join(name)))?;
        }
        Ok(())
    }
}

/// Writer thread fed through a channel; rows land in arrival order.
pub struct WriterLane {
    tx: mpsc::Sender<Vec<Record>>,
    handle: JoinHandle<Result<RunFiles>>,
}

impl WriterLane {
    pub fn spawn(mut files: RunFiles) -> Self {
        let (tx, rx) = mpsc::channel::<Vec<Record>>();
        let handle = std::thread::spawn(move || {
            for batch in rx {
                for rec in &batch {
                    files.write(rec)?;
                }
            }
            Ok(files)
        });
        Self { tx, handle }
    }

    /// Queues a batch; fails only if the writer thread has already stopped.
    pub fn send(&self, batch: Vec<Record>) -> std::result::Result<(), String> {
        self.tx.send(batch).map_err(|_| "csv writer stopped".to_string())
    }

    /// Drains the queue and returns the files, or the writer's error.
    pub fn join(self) -> Result<RunFiles> {
        drop(self.tx);
        self.handle.join().map_err(|_| CliError::Output("csv writer panicked".into()))?
    }
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(CliError::io(path))
}
