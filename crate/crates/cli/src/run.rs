//! `evolve` and `oracle`: produce a run directory.

use std::path::Path;

use opent_core::edoracle::{exact_operator_schmidt, DenseSuperket, Liouvillian};
use opent_core::impdo::checkpoint::{self, CheckpointError};
use opent_core::impdo::{init_state, steps_for, Evolver, Observation, RunSummary, SinkError, StateError, UnitCellMPDO};
use serde_json::json;

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result};
use crate::output::{write_atomic, Record, RunFiles, WriterLane, CHECKPOINT, RUN_JSON};

fn check_resumable(cfg: &RunConfig, state: &UnitCellMPDO) -> Result<()> {
    let mismatch = |field: &str| CliError::Config(format!("checkpoint does not match config field `{field}`"));
    if state.params != cfg.model {
        return Err(mismatch("model"));
    }
    if state.grading != cfg.state.grading() {
        return Err(mismatch("state"));
    }
    let t = cfg.truncation();
    if state.truncation.chi_max != t.chi_max {
        return Err(mismatch("chi_max"));
    }
    if state.truncation.eps_trunc != t.eps_trunc {
        return Err(mismatch("eps_trunc"));
    }
    Ok(())
}

fn records(obs: Observation, bonds: &[usize]) -> Vec<Record> {
    let [s0, s1] = obs.snapshots;
    let mut by_bond = [Some(s0), Some(s1)];
    bonds.iter().filter_map(|&b| by_bond[b].take().map(|snapshot| Record { bond: b, snapshot })).collect()
}

fn summary_json(s: &RunSummary) -> serde_json::Value {
    json!({
        "steps": s.steps,
        "time": s.time,
        "trunc_weight": s.trunc_weight,
        "max_chi": s.max_chi,
        "chi_saturated": s.chi_saturated,
        "split_groups": s.split_groups,
        "unconverged_fixed_points": s.unconverged_fixed_points,
    })
}

fn write_run_json(out: &Path, value: serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&value).expect("metadata serializes");
    text.push('\n');
    write_atomic(&out.join(RUN_JSON), text.as_bytes())
}

/// Runs iTEBD per `cfg` into `out`, optionally continuing from a checkpoint.
pub fn evolve(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<RunSummary> {
    let (state, files) = match resume {
        Some(path) => {
            let state = checkpoint::load(path)?;
            check_resumable(cfg, &state)?;
            log::info!("resuming from step {} (tJ = {})", state.meta.steps, state.time());
            let files = RunFiles::resume(out, state.time())?;
            (state, files)
        }
        None => (init_state(cfg.state, cfg.model, cfg.truncation())?, RunFiles::create(out)?),
    };
    let resumed_from = resume.map(|_| state.meta.steps);
    let target = steps_for(cfg.t_max, cfg.model.dt);
    let lane = WriterLane::spawn(files);
    let mut ev = Evolver::new(state)?;

    let ckpt_path = out.join(CHECKPOINT);
    let mut ckpt_error: Option<CheckpointError> = None;
    let outcome = (|| -> std::result::Result<RunSummary, StateError> {
        let mut sink = |obs: Observation| -> std::result::Result<(), SinkError> {
            log::info!("tJ = {:.4}", obs.time);
            lane.send(records(obs, &cfg.bonds)).map_err(Into::into)
        };
        if ev.state().meta.steps == 0 {
            sink(ev.observe()?).map_err(|e| StateError::Sink(e.to_string()))?;
        }
        ev.run_to(target, cfg.observe_every, &mut sink, |state| {
            if cfg.checkpoint_every > 0 && state.meta.steps % cfg.checkpoint_every == 0 {
                if let Err(e) = checkpoint::save(state, &ckpt_path) {
                    ckpt_error = Some(e);
                    return Err(StateError::Sink("checkpoint write failed".into()));
                }
            }
            Ok(())
        })
    })();

    let files = lane.join();
    if let Some(e) = ckpt_error {
        return Err(e.into());
    }
    let (summary, files) = match (outcome, files) {
        (Err(_), Err(writer)) => return Err(writer),
        (outcome, files) => (outcome?, files?),
    };
    checkpoint::save(ev.state(), &ckpt_path)?;
    files.finish()?;
    write_run_json(
        out,
        json!({
            "schema_version": SCHEMA_VERSION,
            "source": "itebd",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "resumed_from_step": resumed_from,
            "summary": summary_json(&summary),
        }),
    )?;
    Ok(summary)
}

/// Cut of an open chain of `n` sites that realizes bond class `bond`,
/// as close to the middle as possible.
pub fn oracle_cut(n: usize, bond: usize) -> Result<usize> {
    let mid = n / 2;
    // Cuts after an even number of sites fall between pairs.
    let cut = if (mid % 2 == 0) == (bond == 1) { mid } else { mid - 1 };
    if cut == 0 {
        return Err(CliError::Config(format!("field `bonds`: bond class {bond} needs more than {n} sites")));
    }
    Ok(cut)
}

/// Exact evolution of an open chain with the CSV layout of [`evolve`].
pub fn oracle(cfg: &RunConfig, out: &Path) -> Result<()> {
    let settings = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Config("field `oracle` is required for oracle runs".into()))?;
    let n = settings.n_sites;
    let cuts: Vec<(usize, usize)> =
        cfg.bonds.iter().map(|&b| oracle_cut(n, b).map(|c| (b, c))).collect::<Result<_>>()?;
    let liouv = Liouvillian::new(n, cfg.model)?;
    let mut rho = DenseSuperket::pair_product(cfg.state, n)?;
    let grading = cfg.state.grading();
    let target = steps_for(cfg.t_max, cfg.model.dt);
    let lane = WriterLane::spawn(RunFiles::create(out)?);

    let outcome = (|| -> Result<()> {
        let mut step = 0u64;
        loop {
            let time = step as f64 * cfg.model.dt;
            let mut batch = Vec::with_capacity(cuts.len());
            for &(bond, cut) in &cuts {
                batch.push(Record { bond, snapshot: exact_operator_schmidt(&rho, cut, grading, time)? });
            }
            log::info!("tJ = {time:.4}");
            lane.send(batch).map_err(CliError::Output)?;
            let next = step + cfg.observe_every;
            if next > target {
                return Ok(());
            }
            rho = liouv.evolve(&rho, (next - step) as f64 * cfg.model.dt, settings.tol)?;
            step = next;
        }
    })();

    let files = lane.join();
    if let (Err(_), Err(writer)) = (&outcome, &files) {
        return Err(CliError::Output(writer.to_string()));
    }
    outcome?;
    files?.finish()?;
    write_run_json(
        out,
        json!({
            "schema_version": SCHEMA_VERSION,
            "source": "ed",
            "version": env!("CARGO_PKG_VERSION"),
            "config": cfg,
            "cuts": cuts.iter().map(|&(bond, cut)| json!({"bond": bond, "cut": cut})).collect::<Vec<_>>(),
            "final_trace": rho.trace().re,
        }),
    )
}
