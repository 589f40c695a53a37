//! Synthetic preference-data construction.
//!
//! The toy task: a hidden affinity table says how good each token is as a
//! successor of each other token. The reward oracle scores a response by its
//! mean successor affinity (starting from the last prompt token) minus a
//! penalty on distance from a target length. Source models are tabular
//! policies built from the affinity table with varying sharpness and noise;
//! the target starts out much weaker.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Role;
use crate::policy::{PolicyModel, SamplingConfig, Sequence, TokenId, Vocabulary};
use crate::seed::{self, tag};

pub const QUADRUPLE_SCHEMA: &str = "wrpo.quadruple.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardOracle {
    vocab: Vocabulary,
    /// Row-major `V × V`; rows and columns of `bos`/`eos` are zero.
    affinity: Vec<f64>,
    target_len: usize,
    length_penalty: f64,
}

impl RewardOracle {
    pub fn new(
        vocab: Vocabulary,
        affinity: Vec<f64>,
        target_len: usize,
        length_penalty: f64,
    ) -> Result<Self> {
        let v = vocab.size();
        if affinity.len() != v * v {
            return Err(Error::input(format!(
                "affinity table needs {} entries, got {}",
                v * v,
                affinity.len()
            )));
        }
        if affinity.iter().any(|a| !a.is_finite()) || !length_penalty.is_finite() {
            return Err(Error::input("oracle parameters must be finite"));
        }
        Ok(RewardOracle {
            vocab,
            affinity,
            target_len,
            length_penalty,
        })
    }

    /// Each content token gets one favourite successor (affinity 1.0), a runner-up
    /// (0.6), and small random affinities elsewhere.
    pub fn synthetic(vocab: Vocabulary, target_len: usize, length_penalty: f64, root: u64) -> Result<Self> {
        let v = vocab.size();
        let content: Vec<TokenId> = vocab.content_ids().collect();
        if content.len() < 3 {
            return Err(Error::input("toy task needs at least 3 content tokens"));
        }
        let mut rng = seed::stream(root, &[tag::ORACLE]);
        let mut affinity = vec![0.0; v * v];
        for &a in &content {
            let mut order = content.clone();
            order.shuffle(&mut rng);
            for &b in &content {
                affinity[a * v + b] = rng.gen_range(0.0..0.3);
            }
            affinity[a * v + order[0]] = 1.0;
            affinity[a * v + order[1]] = 0.6;
        }
        RewardOracle::new(vocab, affinity, target_len, length_penalty)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn affinity(&self, prev: TokenId, next: TokenId) -> f64 {
        self.affinity[prev * self.vocab.size() + next]
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    /// Successor with the highest affinity, ties to the lower index.
    pub fn best_successor(&self, prev: TokenId) -> TokenId {
        let v = self.vocab.size();
        let row = &self.affinity[prev * v..(prev + 1) * v];
        row.iter()
            .enumerate()
            .fold(0, |best, (j, &a)| if a > row[best] { j } else { best })
    }

    pub fn score(&self, prompt: &[TokenId], response: &[TokenId]) -> f64 {
        let eos = self.vocab.eos();
        let body = match response.last() {
            Some(&t) if t == eos => &response[..response.len() - 1],
            _ => response,
        };
        let mut prev = prompt.last().copied();
        let mut total = 0.0;
        let mut count = 0usize;
        for &t in body {
            if let Some(p) = prev {
                total += self.affinity(p, t);
                count += 1;
            }
            prev = Some(t);
        }
        let mean = if count == 0 { 0.0 } else { total / count as f64 };
        mean - self.length_penalty * (body.len() as f64 - self.target_len as f64).abs()
    }

    pub fn score_sequence(&self, seq: &Sequence) -> f64 {
        self.score(&seq.prompt, &seq.response)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemberSpec {
    pub name: String,
    /// Multiplier on the oracle affinities in every logit row.
    pub sharpness: f64,
    /// Half-width of the uniform logit noise.
    pub noise: f64,
}

/// Tabular policy whose logits follow the oracle's affinity table.
///
/// The `eos` logit of each row is set so that, before noise, the stop
/// probability is `1 / (target_len + 1)`; `bos` is strongly suppressed.
pub fn fitted_policy(
    oracle: &RewardOracle,
    order: usize,
    spec: &MemberSpec,
    rng: &mut impl Rng,
) -> Result<PolicyModel> {
    if !(spec.sharpness.is_finite() && spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::input(format!("bad member spec for {}", spec.name)));
    }
    let vocab = oracle.vocab().clone();
    let v = vocab.size();
    let mut model = PolicyModel::uniform(vocab.clone(), order)?;
    let contexts = model.num_contexts();
    let logits = model.logits_mut()?;
    for ctx in 0..contexts {
        let last = ctx % v;
        let row = &mut logits[ctx * v..(ctx + 1) * v];
        for b in vocab.content_ids() {
            row[b] = spec.sharpness * oracle.affinity(last, b);
        }
        let mass: f64 = vocab.content_ids().map(|b| row[b].exp()).sum();
        row[vocab.eos()] = mass.ln() - (oracle.target_len().max(1) as f64).ln();
        row[vocab.bos()] = -6.0;
        for l in row.iter_mut() {
            if spec.noise > 0.0 {
                *l += rng.gen_range(-spec.noise..=spec.noise);
            }
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceMember {
    pub name: String,
    pub model: PolicyModel,
    pub sampling: SamplingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceEnsemble {
    members: Vec<SourceMember>,
}

impl SourceEnsemble {
    pub fn new(members: Vec<SourceMember>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::input("source ensemble needs at least one member"));
        }
        let mut names = HashSet::new();
        for m in &members {
            if !names.insert(m.name.as_str()) {
                return Err(Error::input(format!("duplicate source model name {:?}", m.name)));
            }
            if !m.model.is_frozen() {
                return Err(Error::input(format!("source model {:?} is not frozen", m.name)));
            }
            m.sampling.validate()?;
        }
        Ok(SourceEnsemble { members })
    }

    pub fn members(&self) -> &[SourceMember] {
        &self.members
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "TaskConfig::default_content_tokens")]
    pub content_tokens: usize,
    #[serde(default = "TaskConfig::default_order")]
    pub order: usize,
    #[serde(default = "TaskConfig::default_prompts")]
    pub prompts: usize,
    #[serde(default = "TaskConfig::default_prompt_len")]
    pub prompt_len: [usize; 2],
    #[serde(default = "TaskConfig::default_target_len")]
    pub target_len: usize,
    #[serde(default = "TaskConfig::default_length_penalty")]
    pub length_penalty: f64,
    #[serde(default = "TaskConfig::default_sources")]
    pub sources: Vec<MemberSpec>,
    #[serde(default = "TaskConfig::default_target")]
    pub target: MemberSpec,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            content_tokens: Self::default_content_tokens(),
            order: Self::default_order(),
            prompts: Self::default_prompts(),
            prompt_len: Self::default_prompt_len(),
            target_len: Self::default_target_len(),
            length_penalty: Self::default_length_penalty(),
            sources: Self::default_sources(),
            target: Self::default_target(),
        }
    }
}

impl TaskConfig {
    fn default_content_tokens() -> usize {
        8
    }
    fn default_order() -> usize {
        2
    }
    fn default_prompts() -> usize {
        300
    }
    fn default_prompt_len() -> [usize; 2] {
        [2, 4]
    }
    fn default_target_len() -> usize {
        5
    }
    fn default_length_penalty() -> f64 {
        0.05
    }
    fn default_sources() -> Vec<MemberSpec> {
        vec![
            MemberSpec {
                name: "source-a".into(),
                sharpness: 5.0,
                noise: 0.5,
            },
            MemberSpec {
                name: "source-b".into(),
                sharpness: 4.0,
                noise: 1.0,
            },
            MemberSpec {
                name: "source-c".into(),
                sharpness: 3.0,
                noise: 1.5,
            },
        ]
    }
    fn default_target() -> MemberSpec {
        MemberSpec {
            name: "target".into(),
            sharpness: 1.0,
            noise: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.content_tokens < 3 || self.content_tokens > 26 {
            return Err(Error::config("task.content_tokens must be in 3..=26"));
        }
        if self.order == 0 || self.order > 3 {
            return Err(Error::config("task.order must be in 1..=3"));
        }
        if self.prompts == 0 {
            return Err(Error::config("task.prompts must be >= 1"));
        }
        let [lo, hi] = self.prompt_len;
        if lo == 0 || lo > hi {
            return Err(Error::config("task.prompt_len must be [min, max] with 1 <= min <= max"));
        }
        let possible = (lo..=hi)
            .map(|n| (self.content_tokens as f64).powi(n as i32))
            .sum::<f64>();
        if possible < self.prompts as f64 {
            return Err(Error::config(format!(
                "task.prompt_len admits only {possible} distinct prompts, {} requested",
                self.prompts
            )));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::config("task.length_penalty must be >= 0"));
        }
        if self.sources.is_empty() {
            return Err(Error::config("task.sources must list at least one source model"));
        }
        let mut names: HashSet<&str> = HashSet::new();
        for m in self.sources.iter().chain(std::iter::once(&self.target)) {
            if !names.insert(m.name.as_str()) {
                return Err(Error::config(format!("model name {:?} used twice", m.name)));
            }
            if !(m.sharpness.is_finite() && m.noise >= 0.0 && m.noise.is_finite()) {
                return Err(Error::config(format!("model {:?}: bad sharpness/noise", m.name)));
            }
        }
        Ok(())
    }
}

/// Everything derived deterministically from a [`TaskConfig`] and a root seed.
#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub vocab: Vocabulary,
    pub oracle: RewardOracle,
    pub ensemble: SourceEnsemble,
    /// The untrained target model (frozen).
    pub target: PolicyModel,
    pub prompts: Vec<Vec<TokenId>>,
}

impl ToyWorld {
    pub fn build(task: &TaskConfig, sampling: &SamplingConfig, root: u64) -> Result<Self> {
        task.validate()?;
        let vocab = Vocabulary::toy(task.content_tokens)?;
        let oracle = RewardOracle::synthetic(vocab.clone(), task.target_len, task.length_penalty, root)?;
        let members = task
            .sources
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut rng = seed::stream(root, &[tag::ENSEMBLE, i as u64]);
                Ok(SourceMember {
                    name: spec.name.clone(),
                    model: fitted_policy(&oracle, task.order, spec, &mut rng)?.snapshot(),
                    sampling: *sampling,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut rng = seed::stream(root, &[tag::ENSEMBLE, u64::MAX]);
        let target = fitted_policy(&oracle, task.order, &task.target, &mut rng)?.snapshot();
        let prompts = unique_prompts(&vocab, task.prompts, task.prompt_len, root, tag::PROMPTS)?;
        Ok(ToyWorld {
            vocab,
            oracle,
            ensemble: SourceEnsemble::new(members)?,
            target,
            prompts,
        })
    }
}

impl ToyWorld {
    /// Fresh distinct prompts for evaluation, drawn from their own stream.
    pub fn eval_prompts(&self, task: &TaskConfig, count: usize, root: u64) -> Result<Vec<Vec<TokenId>>> {
        unique_prompts(&self.vocab, count, task.prompt_len, root, tag::EVAL)
    }
}

fn unique_prompts(
    vocab: &Vocabulary,
    count: usize,
    len: [usize; 2],
    root: u64,
    stream: u64,
) -> Result<Vec<Vec<TokenId>>> {
    let content: Vec<TokenId> = vocab.content_ids().collect();
    let mut rng = seed::stream(root, &[stream]);
    let mut seen = HashSet::new();
    let mut prompts = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while prompts.len() < count {
        attempts += 1;
        if attempts > count * 1000 + 10_000 {
            return Err(Error::config("could not draw enough distinct prompts"));
        }
        let n = rng.gen_range(len[0]..=len[1]);
        let p: Vec<TokenId> = (0..n).map(|_| *content.choose(&mut rng).unwrap()).collect();
        if seen.insert(p.clone()) {
            prompts.push(p);
        }
    }
    Ok(prompts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub response: Vec<TokenId>,
    pub score: f64,
    pub sample_index: usize,
}

/// Scored samples indexed `[prompt][model][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub model_names: Vec<String>,
    pub prompts: Vec<Vec<TokenId>>,
    pub samples: Vec<Vec<Vec<Candidate>>>,
}

/// A model taking part in candidate generation.
#[derive(Debug, Clone, Copy)]
pub struct Generator<'a> {
    pub name: &'a str,
    pub model: &'a PolicyModel,
    pub sampling: &'a SamplingConfig,
}

impl<'a> Generator<'a> {
    pub fn from_ensemble(ensemble: &'a SourceEnsemble) -> Vec<Generator<'a>> {
        ensemble
            .members()
            .iter()
            .map(|m| Generator {
                name: &m.name,
                model: &m.model,
                sampling: &m.sampling,
            })
            .collect()
    }
}

/// Draws `n` scored responses per `(prompt, model)`.
///
/// The random stream for `(model i, prompt j)` is keyed by
/// `(root, stream, i, j)`, so results do not depend on scheduling.
pub fn generate_candidates(
    generators: &[Generator<'_>],
    prompts: &[Vec<TokenId>],
    n: usize,
    oracle: &RewardOracle,
    root: u64,
    stream: u64,
) -> Result<CandidateSet> {
    if prompts.is_empty() {
        return Err(Error::input("no prompts to generate candidates for"));
    }
    if n == 0 {
        return Err(Error::input("samples per model must be >= 1"));
    }
    if generators.is_empty() {
        return Err(Error::input("no models to sample from"));
    }
    let samples = prompts
        .par_iter()
        .enumerate()
        .map(|(j, prompt)| {
            generators
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut rng = seed::stream(root, &[stream, i as u64, j as u64]);
                    (0..n)
                        .map(|k| {
                            let seq = g.model.sample_response_with(prompt, g.sampling, &mut rng)?;
                            Ok(Candidate {
                                score: oracle.score_sequence(&seq),
                                response: seq.response,
                                sample_index: k,
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateSet {
        model_names: generators.iter().map(|g| g.name.to_string()).collect(),
        prompts: prompts.to_vec(),
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredResponse {
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub origin: String,
    pub sample_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceQuadruple {
    pub prompt: Vec<TokenId>,
    pub y_ws: ScoredResponse,
    pub y_wt: ScoredResponse,
    pub y_l: ScoredResponse,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_ls: Option<ScoredResponse>,
    /// `y_wt` and `y_l` have equal scores.
    #[serde(default)]
    pub degenerate: bool,
}

impl PreferenceQuadruple {
    pub fn sequence(&self, r: &ScoredResponse) -> Sequence {
        Sequence::new(self.prompt.clone(), r.tokens.clone())
    }

    /// Response for a quadruple role; `l_t` is `y_l`.
    pub fn response(&self, role: Role) -> Option<&ScoredResponse> {
        match role {
            Role::SourceChosen => Some(&self.y_ws),
            Role::TargetChosen => Some(&self.y_wt),
            Role::Rejected | Role::TargetRejected => Some(&self.y_l),
            Role::SourceRejected => self.y_ls.as_ref(),
            Role::Chosen => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRow {
    pub model: String,
    pub wins: usize,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub quadruples: Vec<PreferenceQuadruple>,
    pub attribution: Vec<AttributionRow>,
}

fn scored(c: &Candidate, origin: &str) -> ScoredResponse {
    ScoredResponse {
        tokens: c.response.clone(),
        score: c.score,
        origin: origin.to_string(),
        sample_index: c.sample_index,
    }
}

/// First maximum (or minimum) by score in iteration order.
fn extreme<'a>(it: impl Iterator<Item = &'a Candidate>, want_max: bool) -> Option<&'a Candidate> {
    it.fold(None, |best: Option<&Candidate>, c| match best {
        None => Some(c),
        Some(b) if (want_max && c.score > b.score) || (!want_max && c.score < b.score) => Some(c),
        keep => keep,
    })
}

/// Best source sample, best and worst target samples, per prompt.
///
/// Ties resolve to the earlier model in ensemble order, then the lower sample index.
pub fn assemble_quadruples(
    source: &CandidateSet,
    target: &CandidateSet,
    include_yls: bool,
) -> Result<Assembly> {
    if source.prompts != target.prompts {
        return Err(Error::input("source and target candidates cover different prompts"));
    }
    if target.model_names.len() != 1 {
        return Err(Error::input("target candidates must come from exactly one model"));
    }
    let target_name = &target.model_names[0];
    let mut wins = vec![0usize; source.model_names.len()];
    let mut quadruples = Vec::with_capacity(source.prompts.len());
    for (j, prompt) in source.prompts.iter().enumerate() {
        let per_model = &source.samples[j];
        let mut best: Option<(usize, &Candidate)> = None;
        for (i, samples) in per_model.iter().enumerate() {
            if let Some(c) = extreme(samples.iter(), true) {
                if best.is_none_or(|(_, b)| c.score > b.score) {
                    best = Some((i, c));
                }
            }
        }
        let (src, ws) = best.ok_or_else(|| Error::input("empty source candidate list"))?;
        wins[src] += 1;
        let t = &target.samples[j][0];
        let wt = extreme(t.iter(), true).ok_or_else(|| Error::input("empty target candidates"))?;
        let l = extreme(t.iter(), false).expect("non-empty");
        let y_ls = if include_yls {
            Some(scored(
                extreme(per_model[src].iter(), false).expect("non-empty"),
                &source.model_names[src],
            ))
        } else {
            None
        };
        quadruples.push(PreferenceQuadruple {
            prompt: prompt.clone(),
            y_ws: scored(ws, &source.model_names[src]),
            y_wt: scored(wt, target_name),
            y_l: scored(l, target_name),
            y_ls,
            degenerate: wt.score == l.score,
        });
    }
    let total = quadruples.len().max(1) as f64;
    let attribution = source
        .model_names
        .iter()
        .zip(&wins)
        .map(|(name, &w)| AttributionRow {
            model: name.clone(),
            wins: w,
            percentage: 100.0 * w as f64 / total,
        })
        .collect();
    Ok(Assembly {
        quadruples,
        attribution,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

impl SftRecord {
    pub fn sequence(&self) -> Sequence {
        Sequence::new(self.prompt.clone(), self.response.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub sft_records: Vec<SftRecord>,
    pub po_records: Vec<PreferenceQuadruple>,
    pub split_fraction: f64,
}

/// Seeded shuffle, then the first `floor(fraction · n)` records go to SFT
/// (as `(prompt, y_ws)`) and the rest to preference optimization.
pub fn split_dataset(
    quadruples: &[PreferenceQuadruple],
    fraction: f64,
    root: u64,
) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::input(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    if quadruples.len() < 2 {
        return Err(Error::input("need at least 2 records to split"));
    }
    let mut order: Vec<usize> = (0..quadruples.len()).collect();
    order.shuffle(&mut seed::stream(root, &[tag::SPLIT]));
    let n_sft = (fraction * quadruples.len() as f64).floor() as usize;
    let (sft, po) = order.split_at(n_sft);
    Ok(DatasetSplit {
        sft_records: sft
            .iter()
            .map(|&i| SftRecord {
                prompt: quadruples[i].prompt.clone(),
                response: quadruples[i].y_ws.tokens.clone(),
            })
            .collect(),
        po_records: po.iter().map(|&i| quadruples[i].clone()).collect(),
        split_fraction: fraction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleStats {
    pub count: usize,
    pub mean_avg_log_prob: f64,
    pub std_avg_log_prob: f64,
    pub std_err: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: BTreeMap<String, Vec<usize>>,
}

/// Per-token log-probability of each response role under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub kind: String,
    /// Keyed by role short name (`w_s`, `w_t`, `l`, `l_s`).
    pub roles: BTreeMap<String, RoleStats>,
    /// `y_wt` and `y_l` pooled.
    pub target_origin: RoleStats,
    pub histogram: Histogram,
}

fn stats(values: &[(f64, f64)]) -> RoleStats {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / nf;
    let var = if n > 1 {
        values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        0.0
    };
    RoleStats {
        count: n,
        mean_avg_log_prob: mean,
        std_avg_log_prob: var.sqrt(),
        std_err: (var / nf).sqrt(),
        mean_score: values.iter().map(|v| v.1).sum::<f64>() / nf,
    }
}

pub fn distribution_deviation_report(
    model: &PolicyModel,
    quadruples: &[PreferenceQuadruple],
    bins: usize,
) -> Result<DeviationReport> {
    if quadruples.is_empty() {
        return Err(Error::input("deviation report needs at least one quadruple"));
    }
    let bins = bins.max(1);
    let mut per_role: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for q in quadruples {
        for role in [Role::SourceChosen, Role::TargetChosen, Role::Rejected, Role::SourceRejected] {
            if let Some(r) = q.response(role) {
                let avg = model.avg_log_prob(&q.sequence(r))?;
                per_role
                    .entry(role.short_name().to_string())
                    .or_default()
                    .push((avg, r.score));
            }
        }
    }
    let pooled: Vec<(f64, f64)> = ["w_t", "l"]
        .iter()
        .flat_map(|k| per_role[*k].iter().copied())
        .collect();
    let all = per_role.values().flatten().map(|v| v.0);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let counts = per_role
        .iter()
        .map(|(k, vals)| {
            let mut c = vec![0usize; bins];
            for &(v, _) in vals {
                let idx = (((v - lo) / width) as usize).min(bins - 1);
                c[idx] += 1;
            }
            (k.clone(), c)
        })
        .collect();
    Ok(DeviationReport {
        kind: "deviation_report".into(),
        roles: per_role.iter().map(|(k, v)| (k.clone(), stats(v))).collect(),
        target_origin: stats(&pooled),
        histogram: Histogram { edges, counts },
    })
}

#[derive(Serialize)]
struct QuadrupleLine<'a> {
    schema: &'a str,
    #[serde(flatten)]
    record: &'a PreferenceQuadruple,
}

pub fn write_quadruples(path: &Path, quadruples: &[PreferenceQuadruple]) -> Result<()> {
    let mut out = Vec::new();
    for q in quadruples {
        let line = QuadrupleLine {
            schema: QUADRUPLE_SCHEMA,
            record: q,
        };
        serde_json::to_writer(&mut out, &line)
            .map_err(|e| Error::data(format!("serializing quadruple: {e}")))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_quadruples(path: &Path) -> Result<Vec<PreferenceQuadruple>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| Error::data(format!("{}:{}: {msg}", path.display(), n + 1));
        let mut value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| bad("expected a JSON object".into()))?;
        match obj.remove("schema") {
            Some(serde_json::Value::String(s)) if s == QUADRUPLE_SCHEMA => {}
            other => return Err(bad(format!("unsupported schema tag {other:?}"))),
        }
        out.push(serde_json::from_value(value).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_attribution_csv(path: &Path, rows: &[AttributionRow]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "model,wins,percentage").unwrap();
    for r in rows {
        writeln!(out, "{},{},{:.4}", r.model, r.wins, r.percentage).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
