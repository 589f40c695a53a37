//! Fusion-coefficient schedules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Ramp from 0 at step 0 to the target at `total_steps`, then hold.
    Linear,
    Static,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Static => "static",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "static" => Ok(ScheduleKind::Static),
            other => Err(Error::input(format!("unknown schedule kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSchedule {
    pub kind: ScheduleKind,
    pub target: f64,
    /// Length of the ramp. `None` in a config file means "the whole run".
    #[serde(default)]
    pub total_steps: Option<usize>,
}

impl FusionSchedule {
    pub fn linear(target: f64, total_steps: usize) -> Result<Self> {
        let s = FusionSchedule {
            kind: ScheduleKind::Linear,
            target,
            total_steps: Some(total_steps),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(target: f64) -> Result<Self> {
        let s = FusionSchedule {
            kind: ScheduleKind::Static,
            target,
            total_steps: Some(1),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target) {
            return Err(Error::input(format!(
                "schedule target must be in [0, 1], got {}",
                self.target
            )));
        }
        if self.total_steps == Some(0) {
            return Err(Error::input("schedule total_steps must be >= 1"));
        }
        Ok(())
    }

    /// Fills in an unset ramp length with the run length.
    pub fn resolved(self, run_steps: usize) -> Self {
        FusionSchedule {
            total_steps: Some(self.total_steps.unwrap_or(run_steps.max(1))),
            ..self
        }
    }

    pub fn alpha_at(&self, step: usize) -> f64 {
        match self.kind {
            ScheduleKind::Static => self.target,
            ScheduleKind::Linear => {
                let total = self.total_steps.unwrap_or(1).max(1);
                if step >= total {
                    self.target
                } else {
                    (self.target * step as f64 / total as f64).min(self.target)
                }
            }
        }
    }
}
