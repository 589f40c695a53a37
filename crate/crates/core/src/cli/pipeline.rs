//! In-memory stages shared by the commands and by the tests.

use serde::{Deserialize, Serialize};

use crate::datagen::{
    assemble_quadruples, distribution_deviation_report, generate_candidates, split_dataset, Assembly,
    DeviationReport, Generator, PreferenceQuadruple, SftRecord, ToyWorld,
};
use crate::error::Result;
use crate::policy::PolicyModel;
use crate::seed::tag;
use crate::trainer::{
    eval_policy_quality, eval_reward_accuracy, regenerate_target_pairs, run_preference_optimization,
    run_sft, EvalRecord, QualityReport, TelemetryRecord, TrainingTelemetry,
};

use super::config::{PoSection, RunConfig};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub world: ToyWorld,
    pub assembly: Assembly,
    pub sft_records: Vec<SftRecord>,
    pub po_quadruples: Vec<PreferenceQuadruple>,
    pub heldout: Vec<PreferenceQuadruple>,
    pub deviation: DeviationReport,
}

pub fn build_world(cfg: &RunConfig) -> Result<ToyWorld> {
    ToyWorld::build(&cfg.task, &cfg.sampling_config(), cfg.seed)
}

/// Tail `floor(fraction · n)` records become the held-out set.
pub fn split_heldout(
    mut po: Vec<PreferenceQuadruple>,
    fraction: f64,
) -> (Vec<PreferenceQuadruple>, Vec<PreferenceQuadruple>) {
    let n_held = (fraction * po.len() as f64).floor() as usize;
    let n_held = n_held.min(po.len().saturating_sub(1));
    let heldout = po.split_off(po.len() - n_held);
    (po, heldout)
}

/// Source and target sampling, quadruple assembly, the SFT/PO split and the
/// deviation report for the untrained target.
pub fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let world = build_world(cfg)?;
    let sampling = cfg.sampling_config();
    let n = cfg.data.samples_per_prompt;
    let sources = Generator::from_ensemble(&world.ensemble);
    let source_set = generate_candidates(&sources, &world.prompts, n, &world.oracle, cfg.seed, tag::CANDIDATES)?;
    let target = [Generator {
        name: &cfg.task.target.name,
        model: &world.target,
        sampling: &sampling,
    }];
    let target_set = generate_candidates(
        &target,
        &world.prompts,
        n,
        &world.oracle,
        cfg.seed,
        tag::TARGET_CANDIDATES,
    )?;
    let assembly = assemble_quadruples(&source_set, &target_set, cfg.data.include_yls)?;
    let deviation =
        distribution_deviation_report(&world.target, &assembly.quadruples, cfg.data.histogram_bins)?;
    let split = split_dataset(&assembly.quadruples, cfg.data.sft_fraction, cfg.seed)?;
    let (po_quadruples, heldout) = split_heldout(split.po_records, cfg.data.heldout_fraction);
    Ok(Dataset {
        world,
        assembly,
        sft_records: split.sft_records,
        po_quadruples,
        heldout,
        deviation,
    })
}

pub fn sft_stage(
    cfg: &RunConfig,
    world: &ToyWorld,
    records: &[SftRecord],
) -> Result<(PolicyModel, TrainingTelemetry)> {
    run_sft(&world.target, records, &cfg.sft, cfg.seed)
}

/// Regenerates `y_wt`/`y_l` from the SFT snapshot for the PO and held-out sets.
pub fn regenerate_stage(
    cfg: &RunConfig,
    world: &ToyWorld,
    snapshot: &PolicyModel,
    po: &[PreferenceQuadruple],
    heldout: &[PreferenceQuadruple],
) -> Result<(Vec<PreferenceQuadruple>, Vec<PreferenceQuadruple>)> {
    let all: Vec<PreferenceQuadruple> = po.iter().chain(heldout).cloned().collect();
    let mut regenerated = regenerate_target_pairs(
        snapshot,
        &all,
        cfg.data.samples_per_prompt,
        &cfg.sampling_config(),
        &world.oracle,
        cfg.seed,
    )?;
    let held = regenerated.split_off(po.len());
    Ok((regenerated, held))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub objective: String,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_accuracy: Option<f64>,
    pub quality: QualityReport,
    pub policy_digest: String,
    pub reference_digest: String,
}

#[derive(Debug, Clone)]
pub struct PoOutcome {
    pub policy: PolicyModel,
    /// Step records followed by one eval record.
    pub telemetry: TrainingTelemetry,
    pub metrics: Metrics,
}

/// Preference optimization from `snapshot` (which is also the reference),
/// then held-out accuracy and sampled quality against the untrained target.
pub fn po_stage(
    cfg: &RunConfig,
    po: &PoSection,
    world: &ToyWorld,
    snapshot: &PolicyModel,
    pairs: &[PreferenceQuadruple],
    heldout: &[PreferenceQuadruple],
) -> Result<PoOutcome> {
    let po_cfg = po.to_config(cfg.seed);
    let (policy, mut telemetry) = run_preference_optimization(snapshot, snapshot, pairs, &po_cfg)?;
    let steps = telemetry.steps().count();
    let reward_accuracy = if heldout.is_empty() {
        None
    } else {
        Some(eval_reward_accuracy(&policy, snapshot, heldout, po.objective.beta)?)
    };
    let quality = evaluate_quality(cfg, world, &policy)?;
    telemetry.records.push(TelemetryRecord::Eval(EvalRecord {
        stage: "po".into(),
        step: steps,
        reward_accuracy,
        mean_score: Some(quality.mean_score),
        baseline_mean_score: Some(quality.baseline_mean_score),
        win_rate: Some(quality.win_rate),
    }));
    let metrics = Metrics {
        objective: po.objective.kind.name().to_string(),
        steps,
        reward_accuracy,
        quality,
        policy_digest: policy.param_digest(),
        reference_digest: snapshot.param_digest(),
    };
    Ok(PoOutcome {
        policy,
        telemetry,
        metrics,
    })
}

/// Sampled oracle quality of `model` against the untrained target on fresh prompts.
pub fn evaluate_quality(cfg: &RunConfig, world: &ToyWorld, model: &PolicyModel) -> Result<QualityReport> {
    let prompts = world.eval_prompts(&cfg.task, cfg.eval.prompts, cfg.seed)?;
    eval_policy_quality(
        model,
        &world.target,
        &prompts,
        &cfg.sampling_config(),
        &world.oracle,
        cfg.eval.samples_per_prompt,
        cfg.seed,
    )
}

/// Dataset, SFT, regeneration and PO in one call.
pub fn run_full(cfg: &RunConfig) -> Result<(Dataset, PolicyModel, PoOutcome)> {
    let ds = build_dataset(cfg)?;
    let (snapshot, sft_tel) = sft_stage(cfg, &ds.world, &ds.sft_records)?;
    let (pairs, heldout) = regenerate_stage(cfg, &ds.world, &snapshot, &ds.po_quadruples, &ds.heldout)?;
    let mut outcome = po_stage(cfg, &cfg.po, &ds.world, &snapshot, &pairs, &heldout)?;
    let mut telemetry = sft_tel;
    telemetry.extend(outcome.telemetry);
    outcome.telemetry = telemetry;
    Ok((ds, snapshot, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(i: usize) -> PreferenceQuadruple {
        let r = crate::datagen::ScoredResponse {
            tokens: vec![1],
            score: 0.0,
            origin: "t".into(),
            sample_index: 0,
        };
        PreferenceQuadruple {
            prompt: vec![2 + i],
            y_ws: r.clone(),
            y_wt: r.clone(),
            y_l: r,
            y_ls: None,
            degenerate: true,
        }
    }

    #[test]
    fn heldout_takes_the_tail_and_leaves_training_data() {
        let po: Vec<_> = (0..10).map(quad).collect();
        let (train, held) = split_heldout(po.clone(), 0.25);
        assert_eq!(train.len(), 8);
        assert_eq!(held, po[8..].to_vec());
        let (train, held) = split_heldout(po[..1].to_vec(), 0.9);
        assert_eq!((train.len(), held.len()), (1, 0));
    }
}
