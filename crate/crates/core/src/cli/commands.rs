use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    read_quadruples, write_attribution_csv, write_quadruples, DeviationReport, PreferenceQuadruple, SftRecord, ToyWorld,
};
use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::schedule::{FusionSchedule, ScheduleKind};
use crate::trainer::{TelemetryRecord, TrainingTelemetry};

use super::config::{PoSection, RunConfig};
use super::pipeline::{self, Dataset, Metrics};

/// Artifact file names inside the output directory.
pub mod files {
    pub const CONFIG: &str = "config.resolved.toml";
    pub const QUADRUPLES: &str = "quadruples.jsonl";
    pub const SFT_RECORDS: &str = "sft_records.jsonl";
    pub const PO_QUADRUPLES: &str = "po_quadruples.jsonl";
    pub const HELDOUT_QUADRUPLES: &str = "heldout_quadruples.jsonl";
    pub const ATTRIBUTION: &str = "attribution.csv";
    pub const DEVIATION: &str = "deviation_report.json";
    pub const SFT_CHECKPOINT: &str = "target_sft.ckpt.json";
    pub const SFT_TELEMETRY: &str = "telemetry_sft.jsonl";
    pub const PO_PAIRS: &str = "po_pairs.jsonl";
    pub const HELDOUT_PAIRS: &str = "heldout_pairs.jsonl";
    pub const PO_CHECKPOINT: &str = "policy_po.ckpt.json";
    pub const PO_TELEMETRY: &str = "telemetry_po.jsonl";
    pub const METRICS: &str = "metrics.json";
    pub const SWEEP_CSV: &str = "alpha_sweep.csv";
    pub const SWEEP_DIR: &str = "sweep";
    pub const FIGURES_DIR: &str = "figures";
    pub const MARGIN_CSV: &str = "margin_dynamics.csv";
    pub const HISTOGRAM_CSV: &str = "deviation_histogram.csv";
}

pub const MARGIN_HEADER: &str = "step,alpha,on_policy_margin,hybrid_policy_margin,run";
pub const HISTOGRAM_HEADER: &str = "role,bin_lo,bin_hi,count";
pub const SWEEP_HEADER: &str = "target,kind,objective,seed,reward_accuracy,mean_score,win_rate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Sft,
    Po,
    Full,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sft" => Ok(Stage::Sft),
            "po" => Ok(Stage::Po),
            "full" => Ok(Stage::Full),
            other => Err(Error::usage(format!("unknown stage {other:?} (expected sft, po or full)"))),
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| Error::data(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(|e| Error::data(e.to_string()))?);
        text.push('\n');
    }
    write_text(path, &text)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::data(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::data(format!("{} not found; {hint}", path.display())))
    }
}

/// Samples candidates, assembles quadruples, splits them and writes every
/// data artifact plus the resolved config.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    cfg.write_resolved()?;
    let ds = pipeline::build_dataset(cfg)?;
    let out = &cfg.out_dir;
    write_quadruples(&out.join(files::QUADRUPLES), &ds.assembly.quadruples)?;
    write_jsonl(&out.join(files::SFT_RECORDS), &ds.sft_records)?;
    write_quadruples(&out.join(files::PO_QUADRUPLES), &ds.po_quadruples)?;
    write_quadruples(&out.join(files::HELDOUT_QUADRUPLES), &ds.heldout)?;
    write_attribution_csv(&out.join(files::ATTRIBUTION), &ds.assembly.attribution)?;
    write_json(&out.join(files::DEVIATION), &ds.deviation)?;
    log::info!(
        "wrote {} quadruples ({} sft / {} po / {} held out) to {}",
        ds.assembly.quadruples.len(),
        ds.sft_records.len(),
        ds.po_quadruples.len(),
        ds.heldout.len(),
        out.display()
    );
    Ok(ds)
}

fn load_snapshot(cfg: &RunConfig) -> Result<PolicyModel> {
    let path = require(cfg.out_dir.join(files::SFT_CHECKPOINT), "run `train --stage sft` first")?;
    let (model, _) = PolicyModel::load(&path)?;
    Ok(model.snapshot())
}

fn train_sft(cfg: &RunConfig) -> Result<PolicyModel> {
    let out = &cfg.out_dir;
    let records: Vec<SftRecord> =
        read_jsonl(&require(out.join(files::SFT_RECORDS), "run `gen-data` first")?)?;
    let world = pipeline::build_world(cfg)?;
    let (snapshot, telemetry) = pipeline::sft_stage(cfg, &world, &records)?;
    snapshot.save(&out.join(files::SFT_CHECKPOINT), Some("sft"))?;
    write_text(&out.join(files::SFT_TELEMETRY), &telemetry.to_jsonl()?)?;
    log::info!(
        "sft: {} steps, snapshot {}",
        telemetry.steps().count(),
        &snapshot.param_digest()[..16]
    );
    Ok(snapshot)
}

type PoInputs = (ToyWorld, PolicyModel, Vec<PreferenceQuadruple>, Vec<PreferenceQuadruple>);

/// Loads the SFT snapshot and regenerates the on-policy pairs from it.
fn prepared_po_inputs(cfg: &RunConfig) -> Result<PoInputs> {
    let out = &cfg.out_dir;
    let snapshot = load_snapshot(cfg)?;
    let world = pipeline::build_world(cfg)?;
    let po = read_quadruples(&require(out.join(files::PO_QUADRUPLES), "run `gen-data` first")?)?;
    let heldout = read_quadruples(&require(out.join(files::HELDOUT_QUADRUPLES), "run `gen-data` first")?)?;
    let (pairs, held_pairs) = pipeline::regenerate_stage(cfg, &world, &snapshot, &po, &heldout)?;
    write_quadruples(&out.join(files::PO_PAIRS), &pairs)?;
    write_quadruples(&out.join(files::HELDOUT_PAIRS), &held_pairs)?;
    Ok((world, snapshot, pairs, held_pairs))
}

fn train_po(cfg: &RunConfig) -> Result<Metrics> {
    let out = &cfg.out_dir;
    let (world, snapshot, pairs, heldout) = prepared_po_inputs(cfg)?;
    let outcome = pipeline::po_stage(cfg, &cfg.po, &world, &snapshot, &pairs, &heldout)?;
    outcome.policy.save(&out.join(files::PO_CHECKPOINT), Some("po"))?;
    write_text(&out.join(files::PO_TELEMETRY), &outcome.telemetry.to_jsonl()?)?;
    write_json(&out.join(files::METRICS), &outcome.metrics)?;
    let m = &outcome.metrics;
    log::info!(
        "po ({}): {} steps, accuracy {:?}, mean score {:.4} vs {:.4}, win rate {:.3}",
        m.objective,
        m.steps,
        m.reward_accuracy,
        m.quality.mean_score,
        m.quality.baseline_mean_score,
        m.quality.win_rate
    );
    Ok(outcome.metrics)
}

/// `sft` and `po` resume from artifacts on disk; `full` runs data generation
/// when needed, then both stages. Returns PO metrics when PO ran.
pub fn cmd_train(cfg: &RunConfig, stage: Stage) -> Result<Option<Metrics>> {
    cfg.validate()?;
    cfg.write_resolved()?;
    match stage {
        Stage::Sft => {
            train_sft(cfg)?;
            Ok(None)
        }
        Stage::Po => train_po(cfg).map(Some),
        Stage::Full => {
            if !cfg.out_dir.join(files::SFT_RECORDS).exists() {
                cmd_gen_data(cfg)?;
            }
            train_sft(cfg)?;
            train_po(cfg).map(Some)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub target: f64,
    pub kind: ScheduleKind,
    pub objective: String,
    pub seed: u64,
    pub reward_accuracy: Option<f64>,
    pub mean_score: f64,
    pub win_rate: f64,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6}",
            self.target,
            self.kind,
            self.objective,
            self.seed,
            self.reward_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default(),
            self.mean_score,
            self.win_rate
        )
    }
}

pub fn sweep_telemetry_name(kind: ScheduleKind, target: f64) -> String {
    format!("telemetry_{kind}_{target}.jsonl")
}

/// One PO run per `(kind, target)` from a shared SFT snapshot.
pub fn cmd_sweep_alpha(cfg: &RunConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if !cfg.po.objective.kind.is_wrpo() {
        return Err(Error::config(format!(
            "sweep-alpha needs a weighted-reward objective, got {}",
            cfg.po.objective.kind
        )));
    }
    cfg.write_resolved()?;
    let out = &cfg.out_dir;
    if !out.join(files::SFT_RECORDS).exists() {
        cmd_gen_data(cfg)?;
    }
    if !out.join(files::SFT_CHECKPOINT).exists() {
        train_sft(cfg)?;
    }
    let (world, snapshot, pairs, heldout) = prepared_po_inputs(cfg)?;
    let mut rows = Vec::new();
    for &kind in &cfg.sweep.kinds {
        for &target in &cfg.sweep.targets {
            let section = PoSection {
                schedule: Some(FusionSchedule {
                    kind,
                    target,
                    total_steps: None,
                }),
                ..cfg.po.clone()
            };
            let outcome = pipeline::po_stage(cfg, &section, &world, &snapshot, &pairs, &heldout)?;
            write_text(
                &out.join(files::SWEEP_DIR).join(sweep_telemetry_name(kind, target)),
                &outcome.telemetry.to_jsonl()?,
            )?;
            let row = SweepRow {
                target,
                kind,
                objective: outcome.metrics.objective.clone(),
                seed: cfg.seed,
                reward_accuracy: outcome.metrics.reward_accuracy,
                mean_score: outcome.metrics.quality.mean_score,
                win_rate: outcome.metrics.quality.win_rate,
            };
            log::info!("sweep {}", row.csv_line());
            rows.push(row);
        }
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    write_text(&out.join(files::SWEEP_CSV), &csv)?;
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExportSummary {
    pub margin_rows: usize,
    pub histogram_rows: usize,
    pub sweep_rows: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ExportInputs {
    pub telemetry: Vec<PathBuf>,
    pub deviation: Option<PathBuf>,
    pub sweep: Option<PathBuf>,
}

impl ExportInputs {
    /// The artifacts a run directory normally contains.
    pub fn from_run_dir(dir: &Path) -> Self {
        let mut telemetry = vec![dir.join(files::PO_TELEMETRY)];
        if let Ok(entries) = fs::read_dir(dir.join(files::SWEEP_DIR)) {
            let mut extra: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            extra.sort();
            telemetry.extend(extra);
        }
        ExportInputs {
            telemetry,
            deviation: Some(dir.join(files::DEVIATION)),
            sweep: Some(dir.join(files::SWEEP_CSV)),
        }
    }
}

fn run_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Margin rows for every PO step record in `telemetry`.
pub fn margin_csv_rows(telemetry: &TrainingTelemetry, run: &str) -> Vec<String> {
    telemetry
        .records
        .iter()
        .filter_map(|r| match r {
            TelemetryRecord::Step(s) if s.stage == "po" => Some(format!(
                "{},{},{},{},{run}",
                s.step,
                opt(s.alpha),
                opt(s.on_policy_margin),
                opt(s.hybrid_policy_margin)
            )),
            _ => None,
        })
        .collect()
}

/// Writes `margin_dynamics.csv`, `deviation_histogram.csv` and
/// `alpha_sweep.csv` into `out`. Missing or unreadable inputs produce a
/// warning and header-only output rather than an error.
pub fn cmd_export_figures(inputs: &ExportInputs, out: &Path) -> Result<ExportSummary> {
    let mut summary = ExportSummary::default();
    let warn = |summary: &mut ExportSummary, msg: String| {
        log::warn!("{msg}");
        summary.warnings.push(msg);
    };

    let mut margins = format!("{MARGIN_HEADER}\n");
    for path in &inputs.telemetry {
        match TrainingTelemetry::read_jsonl_lenient(path) {
            Ok((tel, skipped)) => {
                if skipped > 0 {
                    warn(&mut summary, format!("{}: skipped {skipped} malformed lines", path.display()));
                }
                let rows = margin_csv_rows(&tel, &run_label(path));
                if rows.is_empty() {
                    warn(&mut summary, format!("{}: no preference-optimization steps", path.display()));
                }
                summary.margin_rows += rows.len();
                for r in rows {
                    margins.push_str(&r);
                    margins.push('\n');
                }
            }
            Err(e) => warn(&mut summary, format!("skipping telemetry: {e}")),
        }
    }
    if inputs.telemetry.is_empty() {
        warn(&mut summary, "no telemetry files given".into());
    }
    write_text(&out.join(files::MARGIN_CSV), &margins)?;

    let mut hist = format!("{HISTOGRAM_HEADER}\n");
    match &inputs.deviation {
        Some(path) => match read_json::<DeviationReport>(path) {
            Ok(report) => {
                let edges = &report.histogram.edges;
                for (role, counts) in &report.histogram.counts {
                    for (i, c) in counts.iter().enumerate() {
                        let _ = writeln!(hist, "{role},{},{},{c}", edges[i], edges[i + 1]);
                        summary.histogram_rows += 1;
                    }
                }
            }
            Err(e) => warn(&mut summary, format!("skipping deviation report: {e}")),
        },
        None => warn(&mut summary, "no deviation report given".into()),
    }
    write_text(&out.join(files::HISTOGRAM_CSV), &hist)?;

    let mut sweep = format!("{SWEEP_HEADER}\n");
    match &inputs.sweep {
        Some(path) => match fs::read_to_string(path) {
            Ok(text) => {
                let mut lines = text.lines();
                if lines.next() != Some(SWEEP_HEADER) {
                    warn(&mut summary, format!("{}: unexpected header, ignored", path.display()));
                } else {
                    for l in lines.filter(|l| !l.trim().is_empty()) {
                        sweep.push_str(l);
                        sweep.push('\n');
                        summary.sweep_rows += 1;
                    }
                }
            }
            Err(e) => warn(&mut summary, format!("skipping sweep summary {}: {e}", path.display())),
        },
        None => warn(&mut summary, "no sweep summary given".into()),
    }
    write_text(&out.join(files::SWEEP_CSV), &sweep)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names() {
        assert_eq!("sft".parse::<Stage>().unwrap(), Stage::Sft);
        assert_eq!("full".parse::<Stage>().unwrap(), Stage::Full);
        assert!("both".parse::<Stage>().is_err());
    }

    #[test]
    fn export_with_nothing_writes_headers() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = ExportInputs {
            telemetry: vec![dir.path().join("missing.jsonl")],
            deviation: None,
            sweep: None,
        };
        let s = cmd_export_figures(&inputs, dir.path()).unwrap();
        assert_eq!((s.margin_rows, s.histogram_rows, s.sweep_rows), (0, 0, 0));
        assert!(!s.warnings.is_empty());
        let margin = fs::read_to_string(dir.path().join(files::MARGIN_CSV)).unwrap();
        assert_eq!(margin, format!("{MARGIN_HEADER}\n"));
    }
}
