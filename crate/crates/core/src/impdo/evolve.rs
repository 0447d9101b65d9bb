use super::canonical::{canonicalize, trace_per_cell, CanonicalReport, FixedPointParams};
use super::state::{apply_gate, UnitCellMPDO};
use super::StateError;
use crate::lindblad::LiouvillianGate;
use crate::observables::{Diagnostics, SpectrumSnapshot};

/// Everything recorded at one observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub time: f64,
    /// Bond 0 then bond 1.
    pub snapshots: [SpectrumSnapshot; 2],
    /// Physical trace per unit cell.
    pub trace: f64,
}

pub type SinkError = Box<dyn std::error::Error + Send + Sync>;

/// Receiver of observations emitted during a run.
pub trait ObservationSink {
    fn accept(&mut self, obs: Observation) -> Result<(), SinkError>;
}

/// Collects observations in memory.
#[derive(Clone, Debug, Default)]
pub struct VecSink(pub Vec<Observation>);

impl ObservationSink for VecSink {
    fn accept(&mut self, obs: Observation) -> Result<(), SinkError> {
        self.0.push(obs);
        Ok(())
    }
}

impl<F: FnMut(Observation) -> Result<(), SinkError>> ObservationSink for F {
    fn accept(&mut self, obs: Observation) -> Result<(), SinkError> {
        self(obs)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub time: f64,
    pub trunc_weight: f64,
    pub max_chi: usize,
    /// True if some bond reached `chi_max`.
    pub chi_saturated: bool,
    pub split_groups: u64,
    /// Canonicalizations whose power iteration hit the iteration cap.
    pub unconverged_fixed_points: u64,
}

/// Owns the state and the gate cache for a run.
#[derive(Debug)]
pub struct Evolver {
    state: UnitCellMPDO,
    gates: LiouvillianGate,
    pub fixed_point: FixedPointParams,
    summary: RunSummary,
}

impl Evolver {
    pub fn new(state: UnitCellMPDO) -> Result<Self, StateError> {
        let gates = LiouvillianGate::new(state.params, state.grading)?;
        let summary = RunSummary {
            steps: state.meta.steps,
            time: state.time(),
            trunc_weight: state.meta.trunc_weight,
            max_chi: state.chi(),
            chi_saturated: state.chi() >= state.truncation.chi_max,
            split_groups: state.meta.split_groups,
            unconverged_fixed_points: 0,
        };
        Ok(Self { state, gates, fixed_point: FixedPointParams::default(), summary })
    }

    pub fn state(&self) -> &UnitCellMPDO {
        &self.state
    }

    pub fn into_state(self) -> UnitCellMPDO {
        self.state
    }

    pub fn summary(&self) -> RunSummary {
        self.summary
    }

    /// One full Trotter step followed by canonicalization.
    pub fn step(&mut self) -> Result<CanonicalReport, StateError> {
        for step in self.gates.schedule().to_vec() {
            let gate = self.gates.gate(step.tau)?;
            apply_gate(&mut self.state, &gate, step.parity)?;
        }
        let report = canonicalize(&mut self.state, &self.fixed_point)?;
        if !self.state.is_finite() || !self.state.meta.log_norm.is_finite() {
            return Err(StateError::BlowUp("time step"));
        }
        self.state.meta.steps += 1;
        let chi = self.state.chi();
        let s = &mut self.summary;
        s.steps = self.state.meta.steps;
        s.time = self.state.time();
        s.trunc_weight = self.state.meta.trunc_weight;
        s.max_chi = s.max_chi.max(chi);
        s.chi_saturated |= chi >= self.state.truncation.chi_max;
        s.split_groups = self.state.meta.split_groups;
        if !report.converged {
            s.unconverged_fixed_points += 1;
        }
        Ok(report)
    }

    /// Snapshots of both bonds with diagnostics.
    pub fn observe(&self) -> Result<Observation, StateError> {
        observe(&self.state)
    }

    /// Steps until `target_steps` full steps are done, emitting an
    /// observation whenever the step count is a multiple of
    /// `observe_every` and calling `after_step` after every step.
    pub fn run_to(
        &mut self,
        target_steps: u64,
        observe_every: u64,
        sink: &mut dyn ObservationSink,
        mut after_step: impl FnMut(&UnitCellMPDO) -> Result<(), StateError>,
    ) -> Result<RunSummary, StateError> {
        if observe_every == 0 {
            return Err(StateError::InvalidSetting("observe_every must be at least 1".into()));
        }
        while self.state.meta.steps < target_steps {
            self.step()?;
            if self.state.meta.steps % observe_every == 0 {
                sink.accept(self.observe()?).map_err(|e| StateError::Sink(e.to_string()))?;
            }
            after_step(&self.state)?;
        }
        Ok(self.summary)
    }
}

/// Number of full steps needed to reach `t_max`.
pub fn steps_for(t_max: f64, dt: f64) -> u64 {
    (t_max / dt - 1e-9).ceil().max(0.0) as u64
}

pub fn observe(state: &UnitCellMPDO) -> Result<Observation, StateError> {
    let trace = trace_per_cell(state)?;
    let trace_dev = (trace / state.meta.trace_ref - 1.0).abs();
    let time = state.time();
    let snap = |bond: usize| {
        SpectrumSnapshot::from_schmidt(
            time,
            bond,
            &state.lambdas[bond],
            Diagnostics {
                trace_dev,
                herm_dev: state.hermiticity_residual(bond),
                trunc_weight: state.meta.trunc_weight,
                chi_used: state.lambdas[bond].dim(),
            },
        )
    };
    Ok(Observation { step: state.meta.steps, time, snapshots: [snap(0)?, snap(1)?], trace })
}

/// Runs from the current state to `t_max`, observing every
/// `observe_every` steps. The starting state is observed when it is at step 0.
pub fn evolve(
    state: UnitCellMPDO,
    t_max: f64,
    observe_every: u64,
    sink: &mut dyn ObservationSink,
) -> Result<(UnitCellMPDO, RunSummary), StateError> {
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(StateError::InvalidSetting(format!("t_max must be positive, got {t_max}")));
    }
    if observe_every == 0 {
        return Err(StateError::InvalidSetting("observe_every must be at least 1".into()));
    }
    let target = steps_for(t_max, state.params.dt);
    let mut ev = Evolver::new(state)?;
    if ev.state.meta.steps == 0 {
        sink.accept(ev.observe()?).map_err(|e| StateError::Sink(e.to_string()))?;
    }
    let summary = ev.run_to(target, observe_every, sink, |_| Ok(()))?;
    Ok((ev.into_state(), summary))
}
