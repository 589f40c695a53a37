//! Independent re-implementations used as test oracles.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::Rng;
use wrpo_core::cli::RunConfig;
use wrpo_core::datagen::{PreferenceQuadruple, ScoredResponse};
use wrpo_core::objectives::{ObjectiveConfig, ObjectiveKind};
use wrpo_core::policy::{PolicyModel, TokenId, Vocabulary};
use wrpo_core::seed::StreamRng;
use wrpo_core::trainer::PairSelection;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn toy_config() -> RunConfig {
    RunConfig::load(&repo_root().join("configs/toy.toml")).expect("configs/toy.toml")
}

/// `log p(response | prompt)` straight from the logit table: for each position
/// build the last-`order` window (bos-padded), index the row, log-sum-exp.
pub fn brute_log_prob(model: &PolicyModel, prompt: &[TokenId], response: &[TokenId]) -> f64 {
    let v = model.vocab().size();
    let k = model.order();
    let bos = model.vocab().bos();
    let mut history: Vec<TokenId> = vec![bos; k];
    history.extend_from_slice(prompt);
    let mut total = 0.0;
    for &y in response {
        let window = &history[history.len() - k..];
        let mut idx = 0;
        for &t in window {
            idx = idx * v + t;
        }
        let row = &model.logits()[idx * v..(idx + 1) * v];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += row[y] - lse;
        history.push(y);
    }
    total
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The objective written out per kind, evaluated on raw parameters.
pub fn reference_loss(
    policy: &PolicyModel,
    reference: &PolicyModel,
    q: &PreferenceQuadruple,
    cfg: &ObjectiveConfig,
    pair: PairSelection,
) -> f64 {
    let lp = |m: &PolicyModel, r: &ScoredResponse| brute_log_prob(m, &q.prompt, &r.tokens);
    let delta = |r: &ScoredResponse| lp(policy, r) - lp(reference, r);
    let norm = |r: &ScoredResponse| lp(policy, r) / r.tokens.len() as f64;
    let chosen = match pair {
        PairSelection::OnPolicy => &q.y_wt,
        PairSelection::Hybrid => &q.y_ws,
    };
    let (b, a, tau, g) = (cfg.beta, cfg.alpha, cfg.tau, cfg.gamma);
    match cfg.kind {
        ObjectiveKind::Dpo => softplus(-b * (delta(chosen) - delta(&q.y_l))),
        ObjectiveKind::Ipo => (delta(chosen) - delta(&q.y_l) - 1.0 / (2.0 * tau)).powi(2),
        ObjectiveKind::Simpo => softplus(-(b * norm(chosen) - b * norm(&q.y_l) - g)),
        ObjectiveKind::WrpoDpo => {
            softplus(-b * (a * delta(&q.y_ws) + (1.0 - a) * delta(&q.y_wt) - delta(&q.y_l)))
        }
        ObjectiveKind::WrpoSimpo => softplus(
            -(a * b * norm(&q.y_ws) + (1.0 - a) * b * norm(&q.y_wt) - b * norm(&q.y_l) - g),
        ),
        ObjectiveKind::WrpoIpo => {
            (a * delta(&q.y_ws) + (1.0 - a) * delta(&q.y_wt) - delta(&q.y_l) - 1.0 / (2.0 * tau)).powi(2)
        }
        ObjectiveKind::WrpoWithYls => {
            let ls = q.y_ls.as_ref().expect("y_ls");
            softplus(
                -b * (a * delta(&q.y_ws) + (1.0 - a) * delta(&q.y_wt)
                    - a * delta(ls)
                    - (1.0 - a) * delta(&q.y_l)),
            )
        }
    }
}

pub fn random_response(rng: &mut StreamRng, vocab: &Vocabulary, max_body: usize) -> Vec<TokenId> {
    let content: Vec<TokenId> = vocab.content_ids().collect();
    let n = rng.gen_range(0..=max_body);
    let mut r: Vec<TokenId> = (0..n).map(|_| content[rng.gen_range(0..content.len())]).collect();
    r.push(vocab.eos());
    r
}

pub fn scored(tokens: Vec<TokenId>, score: f64) -> ScoredResponse {
    ScoredResponse {
        tokens,
        score,
        origin: "test".into(),
        sample_index: 0,
    }
}

pub fn random_quadruple(rng: &mut StreamRng, vocab: &Vocabulary) -> PreferenceQuadruple {
    let content: Vec<TokenId> = vocab.content_ids().collect();
    let plen = rng.gen_range(1..=3);
    let prompt = (0..plen).map(|_| content[rng.gen_range(0..content.len())]).collect();
    PreferenceQuadruple {
        prompt,
        y_ws: scored(random_response(rng, vocab, 4), 0.0),
        y_wt: scored(random_response(rng, vocab, 4), 0.0),
        y_l: scored(random_response(rng, vocab, 4), 0.0),
        y_ls: Some(scored(random_response(rng, vocab, 4), 0.0)),
        degenerate: false,
    }
}

pub fn random_objective(kind: ObjectiveKind, rng: &mut StreamRng) -> ObjectiveConfig {
    let beta = if kind.is_length_normalized() {
        rng.gen_range(0.5..10.0)
    } else {
        rng.gen_range(0.01..2.0)
    };
    ObjectiveConfig {
        kind,
        beta,
        tau: rng.gen_range(0.01..1.0),
        gamma: rng.gen_range(0.0..1.0),
        alpha: rng.gen_range(0.0..=1.0),
    }
}

/// Central differences of `f` over every logit of `policy`.
pub fn finite_difference(policy: &PolicyModel, h: f64, f: impl Fn(&PolicyModel) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(policy.param_count());
    let mut probe = policy.clone();
    for p in 0..policy.param_count() {
        let orig = probe.logits()[p];
        probe.logits_mut().unwrap()[p] = orig + h;
        let plus = f(&probe);
        probe.logits_mut().unwrap()[p] = orig - h;
        let minus = f(&probe);
        probe.logits_mut().unwrap()[p] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mean of each full `width`-step window; a trailing partial window is dropped.
pub fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks_exact(width)
        .map(|c| c.iter().sum::<f64>() / width as f64)
        .collect()
}

/// Mean over the last `ceil(10%)` of `values`.
pub fn final_window_mean(values: &[f64]) -> f64 {
    let w = values.len().div_ceil(10).max(1);
    values[values.len() - w..].iter().sum::<f64>() / w as f64
}
