//! A quick invariant suite runnable from the binary.

use rand::Rng;

use crate::datagen::{PreferenceQuadruple, ScoredResponse};
use crate::error::Result;
use crate::objectives::{ObjectiveConfig, ObjectiveKind};
use crate::policy::{PolicyModel, TokenId, Vocabulary};
use crate::seed::{self, StreamRng};
use crate::trainer::{loss_gradient_wrt_params, PairSelection};

use super::config::RunConfig;
use super::pipeline;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, worst: f64, tol: f64) -> Self {
        Check {
            name: name.to_string(),
            passed: worst <= tol,
            detail: format!("worst deviation {worst:.3e} (tolerance {tol:.0e})"),
        }
    }
}

fn random_response(rng: &mut StreamRng, vocab: &Vocabulary) -> Vec<TokenId> {
    let content: Vec<TokenId> = vocab.content_ids().collect();
    let len = rng.gen_range(0..4);
    let mut r: Vec<TokenId> = (0..len).map(|_| content[rng.gen_range(0..content.len())]).collect();
    r.push(vocab.eos());
    r
}

fn random_quadruple(rng: &mut StreamRng, vocab: &Vocabulary) -> PreferenceQuadruple {
    let resp = |rng: &mut StreamRng| ScoredResponse {
        tokens: random_response(rng, vocab),
        score: 0.0,
        origin: "random".into(),
        sample_index: 0,
    };
    PreferenceQuadruple {
        prompt: vec![2 + rng.gen_range(0..vocab.size() - 2)],
        y_ws: resp(rng),
        y_wt: resp(rng),
        y_l: resp(rng),
        y_ls: Some(resp(rng)),
        degenerate: false,
    }
}

fn random_objective(kind: ObjectiveKind, rng: &mut StreamRng) -> ObjectiveConfig {
    ObjectiveConfig {
        kind,
        beta: rng.gen_range(0.05..1.0),
        tau: rng.gen_range(0.5..2.0),
        gamma: rng.gen_range(0.0..0.5),
        alpha: rng.gen_range(0.0..1.0),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn gradient_check(seed: u64, instances: usize) -> Result<Check> {
    let vocab = Vocabulary::toy(3)?;
    let mut worst: f64 = 0.0;
    for (k, &kind) in ObjectiveKind::ALL.iter().enumerate() {
        for i in 0..instances {
            let mut rng = seed::stream(seed, &[1, k as u64, i as u64]);
            let policy = PolicyModel::random(vocab.clone(), 2, 1.0, &mut rng)?;
            let reference = PolicyModel::random(vocab.clone(), 2, 1.0, &mut rng)?.snapshot();
            let quad = [random_quadruple(&mut rng, &vocab)];
            let obj = random_objective(kind, &mut rng);
            let (_, grad) = loss_gradient_wrt_params(&policy, &reference, &quad, &obj, PairSelection::OnPolicy)?;
            let h = 1e-5;
            for p in 0..policy.param_count() {
                let mut plus = policy.clone();
                plus.logits_mut()?[p] += h;
                let mut minus = policy.clone();
                minus.logits_mut()?[p] -= h;
                let lp = loss_gradient_wrt_params(&plus, &reference, &quad, &obj, PairSelection::OnPolicy)?.0;
                let lm = loss_gradient_wrt_params(&minus, &reference, &quad, &obj, PairSelection::OnPolicy)?.0;
                let fd = (lp - lm) / (2.0 * h);
                let err = (fd - grad.values[p]).abs();
                let scaled = err / (1e-7 + 1e-4 * fd.abs().max(grad.values[p].abs()));
                worst = worst.max(scaled);
            }
        }
    }
    let mut c = Check::new("gradients match central differences", worst, 1.0);
    c.detail = format!("worst error / (1e-7 + 1e-4·|g|) = {worst:.3}");
    Ok(c)
}

fn reduction_check(seed: u64, instances: usize) -> Result<Check> {
    let vocab = Vocabulary::toy(3)?;
    let pairs = [
        (ObjectiveKind::WrpoDpo, ObjectiveKind::Dpo),
        (ObjectiveKind::WrpoSimpo, ObjectiveKind::Simpo),
        (ObjectiveKind::WrpoIpo, ObjectiveKind::Ipo),
    ];
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let mut rng = seed::stream(seed, &[2, i as u64]);
        let policy = PolicyModel::random(vocab.clone(), 2, 1.0, &mut rng)?;
        let reference = PolicyModel::random(vocab.clone(), 2, 1.0, &mut rng)?.snapshot();
        let quad = [random_quadruple(&mut rng, &vocab)];
        for (wrpo, base) in pairs {
            let obj = random_objective(wrpo, &mut rng);
            for (alpha, pair) in [(0.0, PairSelection::OnPolicy), (1.0, PairSelection::Hybrid)] {
                let (lw, gw) = loss_gradient_wrt_params(&policy, &reference, &quad, &obj.with_alpha(alpha), pair)?;
                let base_obj = ObjectiveConfig { kind: base, ..obj };
                let (lb, gb) = loss_gradient_wrt_params(&policy, &reference, &quad, &base_obj, pair)?;
                worst = worst.max((lw - lb).abs()).max(max_abs_diff(&gw.values, &gb.values));
            }
        }
    }
    Ok(Check::new("alpha endpoints reduce to the pair objectives", worst, 1e-12))
}

fn initialization_check(seed: u64) -> Result<Check> {
    let vocab = Vocabulary::toy(3)?;
    let mut rng = seed::stream(seed, &[3]);
    let model = PolicyModel::random(vocab.clone(), 2, 1.0, &mut rng)?;
    let reference = model.snapshot();
    let quad = [random_quadruple(&mut rng, &vocab)];
    let mut worst: f64 = 0.0;
    for kind in [ObjectiveKind::Dpo, ObjectiveKind::WrpoDpo, ObjectiveKind::WrpoWithYls] {
        let obj = ObjectiveConfig::new(kind).with_alpha(0.3);
        let loss = loss_gradient_wrt_params(&model, &reference, &quad, &obj, PairSelection::OnPolicy)?.0;
        worst = worst.max((loss - std::f64::consts::LN_2).abs());
    }
    let tau = 0.01;
    let ipo = ObjectiveConfig {
        tau,
        ..ObjectiveConfig::new(ObjectiveKind::Ipo)
    };
    let loss = loss_gradient_wrt_params(&model, &reference, &quad, &ipo, PairSelection::OnPolicy)?.0;
    let ipo_err = (loss - (1.0 / (2.0 * tau)).powi(2)).abs();
    Ok(Check {
        name: "losses at initialization".into(),
        passed: worst <= 1e-12 && ipo_err <= 1e-9,
        detail: format!("log 2 deviation {worst:.3e}, squared-loss deviation {ipo_err:.3e}"),
    })
}

fn determinism_check(seed: u64) -> Result<Check> {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.task.prompts = 24;
    let a = pipeline::build_dataset(&cfg)?;
    let b = pipeline::build_dataset(&cfg)?;
    let same = a.assembly == b.assembly && a.sft_records == b.sft_records && a.po_quadruples == b.po_quadruples;
    Ok(Check {
        name: "dataset construction is deterministic".into(),
        passed: same,
        detail: format!("{} quadruples", a.assembly.quadruples.len()),
    })
}

fn checkpoint_check(seed: u64) -> Result<Check> {
    let mut rng = seed::stream(seed, &[5]);
    let model = PolicyModel::random(Vocabulary::toy(5)?, 2, 3.0, &mut rng)?;
    let dir = std::env::temp_dir().join(format!("wrpo-verify-{}-{seed}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
    let path = dir.join("model.json");
    model.save(&path, Some("verify"))?;
    let (back, stage) = PolicyModel::load(&path)?;
    let _ = std::fs::remove_dir_all(&dir);
    Ok(Check {
        name: "checkpoint round trip is exact".into(),
        passed: back.param_digest() == model.param_digest() && stage.as_deref() == Some("verify"),
        detail: model.param_digest()[..16].to_string(),
    })
}

/// Runs every check; `instances` controls the random-instance count per check.
pub fn run_checks(seed: u64, instances: usize) -> Result<Vec<Check>> {
    Ok(vec![
        gradient_check(seed, instances)?,
        reduction_check(seed, instances)?,
        initialization_check(seed)?,
        determinism_check(seed)?,
        checkpoint_check(seed)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_checks(7, 2).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
