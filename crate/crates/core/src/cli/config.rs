use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::TaskConfig;
use crate::error::{Error, Result};
use crate::objectives::{ObjectiveConfig, ObjectiveKind};
use crate::policy::SamplingConfig;
use crate::schedule::{FusionSchedule, ScheduleKind};
use crate::trainer::{OptimizerConfig, PairSelection, PoConfig};

pub const ENV_OUT_DIR: &str = "WRPO_OUT_DIR";
pub const ENV_THREADS: &str = "WRPO_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    #[serde(default = "SamplingSection::default_temperature")]
    pub temperature: f64,
    #[serde(default = "SamplingSection::default_top_p")]
    pub top_p: f64,
    #[serde(default = "SamplingSection::default_max_length")]
    pub max_length: usize,
}

impl SamplingSection {
    fn default_temperature() -> f64 {
        0.8
    }
    fn default_top_p() -> f64 {
        0.95
    }
    fn default_max_length() -> usize {
        12
    }

    pub fn to_config(self, seed: u64) -> SamplingConfig {
        SamplingConfig {
            temperature: self.temperature,
            top_p: self.top_p,
            max_length: self.max_length,
            seed,
        }
    }
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            temperature: Self::default_temperature(),
            top_p: Self::default_top_p(),
            max_length: Self::default_max_length(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Samples per (prompt, model), `N`.
    #[serde(default = "DataSection::default_samples")]
    pub samples_per_prompt: usize,
    #[serde(default = "DataSection::default_sft_fraction")]
    pub sft_fraction: f64,
    /// Share of the PO split held out for reward-accuracy evaluation.
    #[serde(default = "DataSection::default_heldout_fraction")]
    pub heldout_fraction: f64,
    #[serde(default)]
    pub include_yls: bool,
    #[serde(default = "DataSection::default_bins")]
    pub histogram_bins: usize,
}

impl DataSection {
    fn default_samples() -> usize {
        5
    }
    fn default_sft_fraction() -> f64 {
        1.0 / 3.0
    }
    fn default_heldout_fraction() -> f64 {
        0.1
    }
    fn default_bins() -> usize {
        20
    }
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            samples_per_prompt: Self::default_samples(),
            sft_fraction: Self::default_sft_fraction(),
            heldout_fraction: Self::default_heldout_fraction(),
            include_yls: false,
            histogram_bins: Self::default_bins(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoSection {
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub schedule: Option<FusionSchedule>,
    #[serde(default)]
    pub pair: PairSelection,
    pub optimizer: OptimizerConfig,
}

impl Default for PoSection {
    fn default() -> Self {
        PoSection {
            objective: ObjectiveConfig {
                beta: 0.1,
                ..ObjectiveConfig::new(ObjectiveKind::WrpoDpo)
            },
            schedule: Some(FusionSchedule {
                kind: ScheduleKind::Linear,
                target: 0.5,
                total_steps: None,
            }),
            pair: PairSelection::OnPolicy,
            optimizer: toy_optimizer(),
        }
    }
}

impl PoSection {
    pub fn to_config(&self, seed: u64) -> PoConfig {
        PoConfig {
            objective: self.objective,
            schedule: self.schedule,
            pair: self.pair,
            optimizer: self.optimizer,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "EvalSection::default_prompts")]
    pub prompts: usize,
    #[serde(default = "EvalSection::default_samples")]
    pub samples_per_prompt: usize,
}

impl EvalSection {
    fn default_prompts() -> usize {
        100
    }
    fn default_samples() -> usize {
        4
    }
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            prompts: Self::default_prompts(),
            samples_per_prompt: Self::default_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "SweepSection::default_targets")]
    pub targets: Vec<f64>,
    #[serde(default = "SweepSection::default_kinds")]
    pub kinds: Vec<ScheduleKind>,
}

impl SweepSection {
    fn default_targets() -> Vec<f64> {
        vec![0.1, 0.3, 0.5, 0.7, 0.9]
    }
    fn default_kinds() -> Vec<ScheduleKind> {
        vec![ScheduleKind::Linear, ScheduleKind::Static]
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            targets: Self::default_targets(),
            kinds: Self::default_kinds(),
        }
    }
}

fn toy_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        batch_size: 8,
        ..OptimizerConfig::adam(0.01)
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

/// Everything one run needs. Loaded from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default = "toy_optimizer")]
    pub sft: OptimizerConfig,
    #[serde(default)]
    pub po: PoSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: default_out_dir(),
            threads: None,
            sampling: SamplingSection::default(),
            task: TaskConfig::default(),
            data: DataSection::default(),
            sft: toy_optimizer(),
            po: PoSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

/// Re-labels a validation failure from a lower layer as a configuration error.
fn as_config(e: Error) -> Error {
    match e {
        Error::Input(m) | Error::Usage(m) | Error::Data(m) | Error::Numeric(m) => Error::Config(m),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies `WRPO_OUT_DIR` / `WRPO_THREADS`. Nothing else is read from the environment.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUT_DIR) {
            if !dir.is_empty() {
                self.out_dir = PathBuf::from(dir);
            }
        }
        if let Ok(t) = std::env::var(ENV_THREADS) {
            if !t.is_empty() {
                let n = t
                    .parse()
                    .map_err(|_| Error::config(format!("{ENV_THREADS} must be an integer, got {t:?}")))?;
                self.threads = Some(n);
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.to_config(self.seed).validate().map_err(as_config)?;
        self.task.validate().map_err(as_config)?;
        let d = &self.data;
        if d.samples_per_prompt == 0 {
            return Err(Error::config("data.samples_per_prompt must be >= 1"));
        }
        if !(d.sft_fraction > 0.0 && d.sft_fraction < 1.0) {
            return Err(Error::config("data.sft_fraction must be in (0, 1)"));
        }
        if !(0.0..1.0).contains(&d.heldout_fraction) {
            return Err(Error::config("data.heldout_fraction must be in [0, 1)"));
        }
        if d.histogram_bins == 0 {
            return Err(Error::config("data.histogram_bins must be >= 1"));
        }
        if self.task.prompts < 2 {
            return Err(Error::config("task.prompts must be >= 2 to form both splits"));
        }
        self.sft.validate().map_err(as_config)?;
        self.po.to_config(self.seed).validate().map_err(as_config)?;
        if self.eval.prompts == 0 || self.eval.samples_per_prompt == 0 {
            return Err(Error::config("eval.prompts and eval.samples_per_prompt must be >= 1"));
        }
        if self.sweep.targets.is_empty() || self.sweep.kinds.is_empty() {
            return Err(Error::config("sweep.targets and sweep.kinds must be non-empty"));
        }
        if let Some(t) = self.sweep.targets.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::config(format!("sweep target {t} outside [0, 1]")));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads must be >= 1"));
        }
        Ok(())
    }

    pub fn sampling_config(&self) -> SamplingConfig {
        self.sampling.to_config(self.seed)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("serializing config: {e}")))
    }

    /// Writes `config.resolved.toml` into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join("config.resolved.toml");
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.data.samples_per_prompt, 5);
        assert_eq!(cfg.sampling.top_p, 0.95);
        assert_eq!(cfg.sampling.temperature, 0.8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[task]\nprompt = 3", "[po.optimizer]\nkind = \"adam\"\nlearning_rate = 0.1\nlr = 2"] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig {
            seed: 9,
            threads: Some(2),
            ..RunConfig::default()
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn schedule_objective_mismatch_is_a_config_error() {
        let text = r#"
[po.objective]
kind = "dpo"
[po.optimizer]
kind = "adam"
learning_rate = 0.01
[po.schedule]
kind = "linear"
target = 0.1
"#;
        assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))));
    }

    #[test]
    fn range_checks() {
        let mut cfg = RunConfig::default();
        cfg.data.sft_fraction = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.sampling.top_p = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.sweep.targets = vec![1.5];
        assert!(cfg.validate().is_err());
    }
}
