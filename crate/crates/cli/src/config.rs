//! Run configuration: one JSON document, versioned by `schema_version`.

use std::path::{Path, PathBuf};

use opent_core::impdo::StateKind;
use opent_core::lindblad::ModelParams;
use opent_core::symtensor::TruncationParams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSettings {
    pub n_sites: usize,
    /// Local error target of the Taylor integrator.
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: ModelParams,
    pub state: StateKind,
    pub chi_max: usize,
    pub eps_trunc: f64,
    pub t_max: f64,
    /// Observation interval in full steps.
    pub observe_every: u64,
    /// Bond classes to record: 0 intra-pair, 1 inter-pair.
    pub bonds: Vec<usize>,
    pub output_dir: PathBuf,
    /// Checkpoint interval in full steps; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSettings>,
}

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}` {reason}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_json(&text)
    }

    /// Canonical serialization: pretty JSON in declaration order, one
    /// trailing newline.
    pub fn to_canonical(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format_args!("is {}, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        let m = &self.model;
        if !(m.coupling.is_finite() && m.coupling > 0.0) {
            return Err(invalid("model.J", format_args!("must be positive, got {}", m.coupling)));
        }
        if !(m.gamma.is_finite() && m.gamma >= 0.0) {
            return Err(invalid("model.gamma", format_args!("must be non-negative, got {}", m.gamma)));
        }
        if !(m.dt.is_finite() && m.dt > 0.0) {
            return Err(invalid("model.dt", format_args!("must be positive, got {}", m.dt)));
        }
        if self.chi_max == 0 {
            return Err(invalid("chi_max", "must be at least 1"));
        }
        if !(self.eps_trunc.is_finite() && self.eps_trunc >= 0.0) {
            return Err(invalid("eps_trunc", format_args!("must be non-negative, got {}", self.eps_trunc)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(invalid("t_max", format_args!("must be positive, got {}", self.t_max)));
        }
        if self.observe_every == 0 {
            return Err(invalid("observe_every", "must be at least 1"));
        }
        if self.bonds.is_empty() || self.bonds.iter().any(|&b| b > 1) {
            return Err(invalid("bonds", "must list bond classes 0 and/or 1"));
        }
        if let Some(o) = &self.oracle {
            if !(2..=8).contains(&o.n_sites) || o.n_sites % 2 != 0 {
                return Err(invalid("oracle.n_sites", format_args!("must be even and in 2..=8, got {}", o.n_sites)));
            }
            if !(o.tol.is_finite() && o.tol > 0.0) {
                return Err(invalid("oracle.tol", format_args!("must be positive, got {}", o.tol)));
            }
        }
        Ok(())
    }

    pub fn truncation(&self) -> TruncationParams {
        TruncationParams { eps_trunc: self.eps_trunc, ..TruncationParams::with_chi(self.chi_max) }
    }
}
