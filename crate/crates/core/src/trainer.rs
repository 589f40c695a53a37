//! Two-stage training: SFT on source-preferred responses, then preference
//! optimization against the SFT snapshot.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    generate_candidates, Generator, PreferenceQuadruple, RewardOracle, ScoredResponse, SftRecord,
};
use crate::error::{Error, Result};
use crate::objectives::{self, internal_reward, LogProbBundle, ObjectiveConfig, ObjectiveKind, Role, RoleLogProbs};
use crate::policy::{Gradient, PolicyModel, SamplingConfig, Sequence, TokenId};
use crate::schedule::FusionSchedule;
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    Cosine { warmup_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "OptimizerConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "OptimizerConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "OptimizerConfig::default_eps")]
    pub eps: f64,
    #[serde(default = "OptimizerConfig::default_lr_schedule")]
    pub lr_schedule: LrSchedule,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "OptimizerConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "OptimizerConfig::default_epochs")]
    pub epochs: usize,
}

impl OptimizerConfig {
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }
    fn default_lr_schedule() -> LrSchedule {
        LrSchedule::Cosine {
            warmup_fraction: 0.1,
        }
    }
    fn default_batch_size() -> usize {
        16
    }
    fn default_epochs() -> usize {
        1
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            eps: Self::default_eps(),
            lr_schedule: Self::default_lr_schedule(),
            max_grad_norm: None,
            batch_size: Self::default_batch_size(),
            epochs: Self::default_epochs(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr_schedule: LrSchedule::Constant,
            ..Self::adam(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be > 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be > 0"));
        }
        if let LrSchedule::Cosine { warmup_fraction } = self.lr_schedule {
            if !(0.0..1.0).contains(&warmup_fraction) {
                return Err(Error::config("warmup_fraction must be in [0, 1)"));
            }
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) {
                return Err(Error::config("max_grad_norm must be > 0"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// First-order optimizer state over one model's logit table.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    cfg: OptimizerConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: usize,
    total_steps: usize,
}

impl OptimizerState {
    pub fn new(cfg: OptimizerConfig, params: usize, total_steps: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(OptimizerState {
            cfg,
            first_moment: vec![0.0; params],
            second_moment: vec![0.0; params],
            step: 0,
            total_steps: total_steps.max(1),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate for a 0-based step: linear warm-up then cosine decay to 0.
    pub fn lr_at(&self, step: usize) -> f64 {
        let base = self.cfg.learning_rate;
        match self.cfg.lr_schedule {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { warmup_fraction } => {
                let total = self.total_steps;
                let warmup = (warmup_fraction * total as f64).ceil() as usize;
                if step < warmup {
                    base * (step + 1) as f64 / warmup as f64
                } else {
                    let span = (total - warmup).max(1) as f64;
                    let progress = ((step - warmup) as f64 / span).min(1.0);
                    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
                }
            }
        }
    }

    /// Applies one descent step along `grad`; returns the learning rate used.
    pub fn apply(&mut self, model: &mut PolicyModel, grad: &Gradient) -> Result<f64> {
        if model.is_frozen() {
            return Err(Error::usage("cannot train a frozen model"));
        }
        if grad.len() != self.first_moment.len() {
            return Err(Error::input("gradient shape does not match optimizer state"));
        }
        let lr = self.lr_at(self.step);
        self.step += 1;
        let update: Vec<f64> = match self.cfg.kind {
            OptimizerKind::Sgd => grad.values.iter().map(|g| lr * g).collect(),
            OptimizerKind::Adam => {
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                grad.values
                    .iter()
                    .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
                    .map(|(&g, (m, v))| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        lr * (*m / c1) / ((*v / c2).sqrt() + self.cfg.eps)
                    })
                    .collect()
            }
        };
        model.apply_update(&update)?;
        Ok(lr)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: String,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub lr: f64,
    pub loss: f64,
    /// Mean internal reward `β·log(π_θ/π_ref)` per role short name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rewards: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_policy_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid_policy_margin: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub stage: String,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mean_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TelemetryRecord {
    Step(StepRecord),
    Eval(EvalRecord),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTelemetry {
    pub records: Vec<TelemetryRecord>,
}

impl TrainingTelemetry {
    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            TelemetryRecord::Step(s) => Some(s),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter_map(|r| match r {
            TelemetryRecord::Eval(e) => Some(e),
            _ => None,
        })
    }

    pub fn extend(&mut self, other: TrainingTelemetry) {
        self.records.extend(other.records);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(
                &serde_json::to_string(r)
                    .map_err(|e| Error::data(format!("serializing telemetry: {e}")))?,
            );
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    /// Reads a telemetry file, skipping lines that do not parse. Returns the
    /// telemetry and the number of skipped lines.
    pub fn read_jsonl_lenient(path: &Path) -> Result<(TrainingTelemetry, usize)> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        let mut skipped = 0;
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(r) => records.push(r),
                Err(_) => skipped += 1,
            }
        }
        Ok((TrainingTelemetry { records }, skipped))
    }
}

/// Sum of per-item gradients in item order, so parallel runs reduce identically.
fn ordered_sum(parts: Vec<Gradient>, len: usize) -> Gradient {
    parts.into_iter().fold(Gradient::zeros(len), |mut acc, g| {
        acc.add_scaled(&g, 1.0);
        acc
    })
}

fn clip(grad: &mut Gradient, max_norm: Option<f64>) -> f64 {
    let norm = grad.norm();
    if let Some(c) = max_norm {
        if norm > c {
            grad.scale(c / norm);
        }
    }
    norm
}

fn batches(n: usize, batch_size: usize, epochs: usize, root: u64, stage: u64) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::stream(root, &[tag::BATCHES, stage, epoch as u64]));
        out.extend(order.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out
}

/// Supervised fine-tuning on `(prompt, y_ws)` records.
///
/// Minimizes mean negative sequence log-likelihood and returns a frozen
/// snapshot plus per-step telemetry (stage `"sft"`).
pub fn run_sft(
    initial: &PolicyModel,
    records: &[SftRecord],
    opt: &OptimizerConfig,
    root: u64,
) -> Result<(PolicyModel, TrainingTelemetry)> {
    if records.is_empty() {
        return Err(Error::input("SFT needs at least one record"));
    }
    opt.validate()?;
    let seqs: Vec<Sequence> = records.iter().map(SftRecord::sequence).collect();
    for s in &seqs {
        initial.validate_sequence(s)?;
    }
    let mut model = initial.thawed();
    let plan = batches(seqs.len(), opt.batch_size, opt.epochs, root, 0);
    let mut state = OptimizerState::new(*opt, model.param_count(), plan.len())?;
    let mut telemetry = TrainingTelemetry::default();
    let len = model.param_count();
    for (step, batch) in plan.iter().enumerate() {
        let n = batch.len() as f64;
        let parts = batch
            .par_iter()
            .map(|&i| {
                let mut g = Gradient::zeros(len);
                model.accumulate_log_prob_gradient(&seqs[i], -1.0, &mut g)?;
                Ok((g, -model.sequence_log_prob(&seqs[i])?))
            })
            .collect::<Result<Vec<_>>>()?;
        let loss = parts.iter().map(|p| p.1).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("SFT loss is not finite at step {step}")));
        }
        let mut grad = ordered_sum(parts.into_iter().map(|p| p.0).collect(), len);
        grad.scale(1.0 / n);
        let grad_norm = clip(&mut grad, opt.max_grad_norm);
        let lr = state.apply(&mut model, &grad)?;
        telemetry.records.push(TelemetryRecord::Step(StepRecord {
            stage: "sft".into(),
            step,
            alpha: None,
            lr,
            loss,
            rewards: BTreeMap::new(),
            on_policy_margin: None,
            hybrid_policy_margin: None,
            grad_norm,
        }));
    }
    Ok((model.snapshot(), telemetry))
}

/// Mean negative log-likelihood of `records` under `model`.
pub fn sft_loss(model: &PolicyModel, records: &[SftRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::input("no records"));
    }
    let total = records
        .iter()
        .map(|r| model.sequence_log_prob(&r.sequence()).map(|lp| -lp))
        .sum::<Result<f64>>()?;
    Ok(total / records.len() as f64)
}

/// Replaces `y_wt`/`y_l` with the best/worst of `n` fresh samples from the
/// SFT snapshot; `y_ws` and `y_ls` are untouched.
pub fn regenerate_target_pairs(
    snapshot: &PolicyModel,
    quadruples: &[PreferenceQuadruple],
    n: usize,
    sampling: &SamplingConfig,
    oracle: &RewardOracle,
    root: u64,
) -> Result<Vec<PreferenceQuadruple>> {
    if !snapshot.is_frozen() {
        return Err(Error::usage("pair regeneration requires a frozen snapshot"));
    }
    let prompts: Vec<Vec<TokenId>> = quadruples.iter().map(|q| q.prompt.clone()).collect();
    let name = "target-sft";
    let gens = [Generator {
        name,
        model: snapshot,
        sampling,
    }];
    let set = generate_candidates(&gens, &prompts, n, oracle, root, tag::REGENERATE)?;
    Ok(quadruples
        .iter()
        .zip(&set.samples)
        .map(|(q, per_model)| {
            let samples = &per_model[0];
            let mut best = &samples[0];
            let mut worst = &samples[0];
            for c in samples {
                if c.score > best.score {
                    best = c;
                }
                if c.score < worst.score {
                    worst = c;
                }
            }
            let to = |c: &crate::datagen::Candidate| ScoredResponse {
                tokens: c.response.clone(),
                score: c.score,
                origin: name.to_string(),
                sample_index: c.sample_index,
            };
            PreferenceQuadruple {
                y_wt: to(best),
                y_l: to(worst),
                degenerate: best.score == worst.score,
                ..q.clone()
            }
        })
        .collect())
}

/// Which quadruple responses feed the two-role objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSelection {
    /// `(y_wt, y_l)`
    #[default]
    OnPolicy,
    /// `(y_ws, y_l)`
    Hybrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoConfig {
    pub objective: ObjectiveConfig,
    pub schedule: Option<FusionSchedule>,
    pub pair: PairSelection,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl PoConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective
            .validate()
            .map_err(|e| Error::config(e.to_string()))?;
        self.optimizer.validate()?;
        match (self.objective.kind.is_wrpo(), &self.schedule) {
            (true, None) => Err(Error::config(format!(
                "objective {} needs a fusion schedule",
                self.objective.kind
            ))),
            (false, Some(_)) => Err(Error::config(format!(
                "objective {} does not take a fusion schedule",
                self.objective.kind
            ))),
            (_, Some(s)) => s.validate().map_err(|e| Error::config(e.to_string())),
            _ => Ok(()),
        }
    }
}

/// Maps objective roles onto quadruple responses.
fn role_source(kind: ObjectiveKind, pair: PairSelection, role: Role) -> Role {
    match (kind.is_wrpo(), role, pair) {
        (false, Role::Chosen, PairSelection::OnPolicy) => Role::TargetChosen,
        (false, Role::Chosen, PairSelection::Hybrid) => Role::SourceChosen,
        (false, Role::Rejected, _) => Role::Rejected,
        (_, r, _) => r,
    }
}

const DIAGNOSTIC_ROLES: [Role; 3] = [Role::SourceChosen, Role::TargetChosen, Role::Rejected];

struct PreparedQuadruple {
    seqs: BTreeMap<Role, Sequence>,
    ref_logps: BTreeMap<Role, f64>,
}

fn prepare(
    reference: &PolicyModel,
    quadruples: &[PreferenceQuadruple],
    with_yls: bool,
) -> Result<Vec<PreparedQuadruple>> {
    quadruples
        .par_iter()
        .map(|q| {
            let mut roles = DIAGNOSTIC_ROLES.to_vec();
            if with_yls {
                roles.push(Role::SourceRejected);
            }
            let mut seqs = BTreeMap::new();
            let mut ref_logps = BTreeMap::new();
            for role in roles {
                let r = q.response(role).ok_or_else(|| {
                    Error::data("quadruple lacks y_ls required by wrpo_with_yls")
                })?;
                let s = q.sequence(r);
                ref_logps.insert(role, reference.sequence_log_prob(&s)?);
                seqs.insert(role, s);
            }
            Ok(PreparedQuadruple { seqs, ref_logps })
        })
        .collect()
}

struct ItemOutcome {
    loss: f64,
    grad: Gradient,
    rewards: BTreeMap<Role, f64>,
}

fn evaluate_item(
    policy: &PolicyModel,
    item: &PreparedQuadruple,
    objective: &ObjectiveConfig,
    pair: PairSelection,
) -> Result<ItemOutcome> {
    let mut theta = BTreeMap::new();
    for (&role, s) in &item.seqs {
        theta.insert(role, policy.sequence_log_prob(s)?);
    }
    let mut bundle = LogProbBundle::new();
    for &role in objective.kind.roles() {
        let src = role_source(objective.kind, pair, role);
        let src = if src == Role::TargetRejected { Role::Rejected } else { src };
        bundle.insert(
            role,
            RoleLogProbs::new(theta[&src], item.ref_logps[&src], item.seqs[&src].response_len()),
        );
    }
    let result = objectives::evaluate(&bundle, objective)?;
    let mut grad = Gradient::zeros(policy.param_count());
    for (&role, &coeff) in &result.grad_wrt_logps {
        if coeff != 0.0 {
            let src = role_source(objective.kind, pair, role);
            let src = if src == Role::TargetRejected { Role::Rejected } else { src };
            policy.accumulate_log_prob_gradient(&item.seqs[&src], coeff, &mut grad)?;
        }
    }
    let rewards = theta
        .iter()
        .map(|(&role, &t)| (role, internal_reward(t, item.ref_logps[&role], objective.beta)))
        .collect();
    Ok(ItemOutcome {
        loss: result.loss,
        grad,
        rewards,
    })
}

/// Gradient of the mean objective over `quadruples` with respect to the policy logits.
pub fn loss_gradient_wrt_params(
    policy: &PolicyModel,
    reference: &PolicyModel,
    quadruples: &[PreferenceQuadruple],
    objective: &ObjectiveConfig,
    pair: PairSelection,
) -> Result<(f64, Gradient)> {
    if quadruples.is_empty() {
        return Err(Error::input("no quadruples"));
    }
    let prepared = prepare(
        reference,
        quadruples,
        objective.kind == ObjectiveKind::WrpoWithYls,
    )?;
    let n = prepared.len() as f64;
    let outcomes = prepared
        .iter()
        .map(|p| evaluate_item(policy, p, objective, pair))
        .collect::<Result<Vec<_>>>()?;
    let loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / n;
    let mut grad = ordered_sum(outcomes.into_iter().map(|o| o.grad).collect(), policy.param_count());
    grad.scale(1.0 / n);
    Ok((loss, grad))
}

/// One or more passes of preference optimization starting from `initial`.
///
/// `reference` must be frozen. The fusion coefficient follows `cfg.schedule`
/// per optimizer step; the schedule's ramp defaults to the run length. The
/// returned model is a frozen snapshot.
pub fn run_preference_optimization(
    initial: &PolicyModel,
    reference: &PolicyModel,
    quadruples: &[PreferenceQuadruple],
    cfg: &PoConfig,
) -> Result<(PolicyModel, TrainingTelemetry)> {
    cfg.validate()?;
    if !reference.is_frozen() {
        return Err(Error::usage("reference model must be frozen"));
    }
    if quadruples.is_empty() {
        return Err(Error::input("preference optimization needs at least one quadruple"));
    }
    let kind = cfg.objective.kind;
    let with_yls = kind == ObjectiveKind::WrpoWithYls;
    let prepared = prepare(reference, quadruples, with_yls)?;
    let opt = &cfg.optimizer;
    let plan = batches(prepared.len(), opt.batch_size, opt.epochs, cfg.seed, 1);
    let schedule = cfg.schedule.map(|s| s.resolved(plan.len()));
    let mut policy = initial.thawed();
    let len = policy.param_count();
    let mut state = OptimizerState::new(*opt, len, plan.len())?;
    let mut telemetry = TrainingTelemetry::default();

    for (step, batch) in plan.iter().enumerate() {
        let alpha = schedule.map(|s| s.alpha_at(step));
        let objective = cfg.objective.with_alpha(alpha.unwrap_or(0.0));
        let outcomes = batch
            .par_iter()
            .map(|&i| evaluate_item(&policy, &prepared[i], &objective, cfg.pair))
            .collect::<Result<Vec<_>>>()?;
        let n = batch.len() as f64;
        let loss = outcomes.iter().map(|o| o.loss).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::numeric(format!("{kind} loss is not finite at step {step}")));
        }
        let mut rewards: BTreeMap<String, f64> = BTreeMap::new();
        for o in &outcomes {
            for (role, r) in &o.rewards {
                *rewards.entry(role.short_name().to_string()).or_insert(0.0) += r / n;
            }
        }
        let rejected = rewards["l"];
        let on_policy_margin = Some(rewards["w_t"] - rejected);
        let hybrid_policy_margin = Some(rewards["w_s"] - rejected);
        let mut grad = ordered_sum(outcomes.into_iter().map(|o| o.grad).collect(), len);
        grad.scale(1.0 / n);
        let grad_norm = clip(&mut grad, opt.max_grad_norm);
        let lr = state.apply(&mut policy, &grad)?;
        telemetry.records.push(TelemetryRecord::Step(StepRecord {
            stage: "po".into(),
            step,
            alpha,
            lr,
            loss,
            rewards,
            on_policy_margin,
            hybrid_policy_margin,
            grad_norm,
        }));
    }
    Ok((policy.snapshot(), telemetry))
}

/// Fraction of quadruples where `r̂(y_ws) > r̂(y_l)`; ties count as failures.
pub fn eval_reward_accuracy(
    model: &PolicyModel,
    reference: &PolicyModel,
    quadruples: &[PreferenceQuadruple],
    beta: f64,
) -> Result<f64> {
    if quadruples.is_empty() {
        return Err(Error::input("accuracy needs a non-empty held-out set"));
    }
    let mut hits = 0usize;
    for q in quadruples {
        let ws = q.sequence(&q.y_ws);
        let l = q.sequence(&q.y_l);
        let r_ws = internal_reward(model.sequence_log_prob(&ws)?, reference.sequence_log_prob(&ws)?, beta);
        let r_l = internal_reward(model.sequence_log_prob(&l)?, reference.sequence_log_prob(&l)?, beta);
        if r_ws > r_l {
            hits += 1;
        }
    }
    Ok(hits as f64 / quadruples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub mean_score: f64,
    pub baseline_mean_score: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// `wins / prompts`
    pub win_rate: f64,
}

/// Samples both models on every prompt with identical random streams and
/// compares per-prompt mean oracle scores.
pub fn eval_policy_quality(
    candidate: &PolicyModel,
    baseline: &PolicyModel,
    prompts: &[Vec<TokenId>],
    sampling: &SamplingConfig,
    oracle: &RewardOracle,
    samples_per_prompt: usize,
    root: u64,
) -> Result<QualityReport> {
    if prompts.is_empty() || samples_per_prompt == 0 {
        return Err(Error::input("quality evaluation needs prompts and samples"));
    }
    let mean_scores = |model: &PolicyModel| -> Result<Vec<f64>> {
        prompts
            .par_iter()
            .enumerate()
            .map(|(j, p)| {
                let mut rng = seed::stream(root, &[tag::EVAL, j as u64]);
                let mut total = 0.0;
                for _ in 0..samples_per_prompt {
                    total += oracle.score_sequence(&model.sample_response_with(p, sampling, &mut rng)?);
                }
                Ok(total / samples_per_prompt as f64)
            })
            .collect()
    };
    let cand = mean_scores(candidate)?;
    let base = mean_scores(baseline)?;
    let (mut wins, mut ties, mut losses) = (0, 0, 0);
    for (c, b) in cand.iter().zip(&base) {
        if c > b {
            wins += 1;
        } else if c == b {
            ties += 1;
        } else {
            losses += 1;
        }
    }
    let n = prompts.len() as f64;
    Ok(QualityReport {
        mean_score: cand.iter().sum::<f64>() / n,
        baseline_mean_score: base.iter().sum::<f64>() / n,
        wins,
        ties,
        losses,
        win_rate: wins as f64 / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Vocabulary;

    fn vocab() -> Vocabulary {
        Vocabulary::toy(4).unwrap()
    }

    #[test]
    fn cosine_schedule_shape() {
        let cfg = OptimizerConfig::adam(1.0);
        let s = OptimizerState::new(cfg, 1, 100).unwrap();
        assert!((s.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((s.lr_at(10) - 1.0).abs() < 1e-12);
        assert!(s.lr_at(99) < 0.01);
        assert!((0..99).skip(10).all(|t| s.lr_at(t + 1) <= s.lr_at(t)));
    }

    #[test]
    fn optimizer_config_validation() {
        let ok = OptimizerConfig::adam(0.1);
        assert!(ok.validate().is_ok());
        assert!(OptimizerConfig { learning_rate: 0.0, ..ok }.validate().is_err());
        assert!(OptimizerConfig { batch_size: 0, ..ok }.validate().is_err());
        assert!(OptimizerConfig {
            lr_schedule: LrSchedule::Cosine { warmup_fraction: 1.0 },
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sft_with_zero_epochs_is_identity() {
        let m = PolicyModel::random(vocab(), 2, 1.0, &mut seed::stream(1, &[])).unwrap();
        let rec = [SftRecord {
            prompt: vec![2],
            response: vec![3, 1],
        }];
        let opt = OptimizerConfig {
            epochs: 0,
            ..OptimizerConfig::adam(0.1)
        };
        let (snap, tel) = run_sft(&m, &rec, &opt, 0).unwrap();
        assert!(snap.is_frozen());
        assert_eq!(snap.logits(), m.logits());
        assert_eq!(tel.steps().count(), 0);
        assert!(run_sft(&m, &[], &opt, 0).is_err());
    }

    #[test]
    fn frozen_models_are_rejected() {
        let snap = PolicyModel::uniform(vocab(), 2).unwrap().snapshot();
        let mut state = OptimizerState::new(OptimizerConfig::sgd(0.1), snap.param_count(), 1).unwrap();
        let mut m = snap.clone();
        assert!(matches!(
            state.apply(&mut m, &Gradient::zeros(snap.param_count())),
            Err(Error::Usage(_))
        ));
        let oracle = RewardOracle::synthetic(vocab(), 3, 0.1, 1).unwrap();
        assert!(matches!(
            regenerate_target_pairs(&snap.thawed(), &[], 1, &SamplingConfig::default(), &oracle, 0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn schedule_must_match_objective() {
        let base = PoConfig {
            objective: ObjectiveConfig::new(ObjectiveKind::Dpo),
            schedule: Some(FusionSchedule::linear(0.1, 10).unwrap()),
            pair: PairSelection::OnPolicy,
            optimizer: OptimizerConfig::adam(0.01),
            seed: 0,
        };
        assert!(matches!(base.validate(), Err(Error::Config(_))));
        let wrpo_without = PoConfig {
            objective: ObjectiveConfig::new(ObjectiveKind::WrpoDpo),
            schedule: None,
            ..base.clone()
        };
        assert!(matches!(wrpo_without.validate(), Err(Error::Config(_))));
        let ok = PoConfig {
            schedule: None,
            ..base
        };
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn accuracy_of_identical_models_is_zero_and_beta_invariant() {
        let mut rng = seed::stream(4, &[]);
        let m = PolicyModel::random(vocab(), 2, 1.0, &mut rng).unwrap();
        let r = PolicyModel::random(vocab(), 2, 1.0, &mut rng).unwrap().snapshot();
        let resp = |t: Vec<usize>| ScoredResponse {
            tokens: t,
            score: 0.0,
            origin: "x".into(),
            sample_index: 0,
        };
        let quads: Vec<PreferenceQuadruple> = (0..6)
            .map(|i| PreferenceQuadruple {
                prompt: vec![2 + i % 4],
                y_ws: resp(vec![3, 4, 1]),
                y_wt: resp(vec![2, 1]),
                y_l: resp(vec![5, 5, 1]),
                y_ls: None,
                degenerate: false,
            })
            .collect();
        assert_eq!(eval_reward_accuracy(&r, &r, &quads, 0.1).unwrap(), 0.0);
        let a1 = eval_reward_accuracy(&m, &r, &quads, 0.01).unwrap();
        let a2 = eval_reward_accuracy(&m, &r, &quads, 7.0).unwrap();
        assert_eq!(a1, a2);
        assert!(eval_reward_accuracy(&m, &r, &[], 0.1).is_err());
    }
}
