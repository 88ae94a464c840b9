// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Scenario resolution: JSON file defaults overlaid by command-line flags.

use serde::{Deserialize, Serialize};
use stirap_core::ProblemSpec;

use crate::CliError;

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// u may change sign; bangs are instantaneous.
    Unconstrained,
    /// u ≥ 0 with instantaneous bangs.
    Nonnegative,
    /// 0 ≤ u ≤ u_max; bangs realized as ramps at u_max.
    Bounded,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverChoice {
    Analytic,
    Shooting,
    Direct,
    Both,
}

/// Scenario file schema; every field optional so files can stay minimal.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub gamma: Option<f64>,
    pub duration: Option<f64>,
    pub u_max: Option<f64>,
    pub mode: Option<Mode>,
    pub solver: Option<SolverChoice>,
    pub dt: Option<f64>,
    pub n: Option<usize>,
}

/// Fully resolved scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub gamma: f64,
    pub duration: f64,
    pub u_max: f64,
    pub mode: Mode,
    pub solver: SolverChoice,
    pub dt: f64,
    pub n: usize,
}

impl Scenario {
    /// Problem data implied by the scenario; the control bound is infinite
    /// except in bounded mode.
    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let u_max = match self.mode {
            Mode::Bounded => self.u_max,
            _ => f64::INFINITY,
        };
        let spec = ProblemSpec::new(self.gamma, self.duration, u_max)
            .map_err(|e| CliError::Input(e.to_string()))?;
        Ok(spec.with_negative_u(self.mode == Mode::Unconstrained))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match self.solver {
            SolverChoice::Analytic => {
                if self.gamma != 0.0 {
                    return Err(CliError::Input(
                        "the analytic solver covers the lossless problem only; set --gamma 0".into(),
                    ));
                }
                if self.mode == Mode::Bounded {
                    return Err(CliError::Input(
                        "the analytic solutions assume instantaneous bangs; use --mode unconstrained or nonnegative".into(),
                    ));
                }
            }
            SolverChoice::Shooting => {
                if self.mode == Mode::Unconstrained && self.gamma > 0.0 {
                    return Err(CliError::Input(
                        "the dissipative shooting solver assumes u >= 0; --mode unconstrained is lossless-only".into(),
                    ));
                }
            }
            SolverChoice::Direct | SolverChoice::Both => {
                if self.mode != Mode::Bounded {
                    return Err(CliError::Input(
                        "direct transcription needs a finite control bound; use --mode bounded".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Overlay precedence: built-in defaults, then the scenario file, then flags.
pub struct ScenarioBuilder {
    pub file: ScenarioFile,
    pub gamma: Option<f64>,
    pub duration: Option<f64>,
    pub u_max: Option<f64>,
    pub mode: Option<Mode>,
    pub solver: Option<SolverChoice>,
    pub dt: Option<f64>,
    pub n: Option<usize>,
}

impl ScenarioBuilder {
    pub fn resolve(self) -> Scenario {
        let duration = self.duration.or(self.file.duration).unwrap_or(20.0);
        Scenario {
            gamma: self.gamma.or(self.file.gamma).unwrap_or(0.1),
            duration,
            u_max: self.u_max.or(self.file.u_max).unwrap_or(1.0),
            mode: self.mode.or(self.file.mode).unwrap_or(Mode::Bounded),
            solver: self.solver.or(self.file.solver).unwrap_or(SolverChoice::Both),
            dt: self.dt.or(self.file.dt).unwrap_or(1e-3),
            n: self.n.or(self.file.n).unwrap_or_else(|| ((duration / 0.05).round() as usize).max(40)),
        }
    }
}
