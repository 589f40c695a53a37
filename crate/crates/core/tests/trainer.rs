mod common;

use common::*;
use wrpo_core::cli::pipeline;
use wrpo_core::datagen::{PreferenceQuadruple, RewardOracle, SftRecord};
use wrpo_core::objectives::{ObjectiveConfig, ObjectiveKind};
use wrpo_core::policy::{PolicyModel, SamplingConfig, TokenId, Vocabulary};
use wrpo_core::schedule::{FusionSchedule, ScheduleKind};
use wrpo_core::trainer::{
    eval_policy_quality, eval_reward_accuracy, regenerate_target_pairs, run_preference_optimization, run_sft,
    sft_loss, LrSchedule, OptimizerConfig, PairSelection, PoConfig,
};

fn constant_adam(lr: f64, batch: usize, epochs: usize) -> OptimizerConfig {
    OptimizerConfig {
        lr_schedule: LrSchedule::Constant,
        batch_size: batch,
        epochs,
        ..OptimizerConfig::adam(lr)
    }
}

#[test]
fn sft_memorizes_down_to_the_entropy_floor() {
    let vocab = Vocabulary::toy(3).unwrap();
    // Same prompt, two continuations that only clash on the first token:
    // the best achievable mean NLL is ln 2.
    let records = vec![
        SftRecord {
            prompt: vec![2],
            response: vec![3, 4, 1],
        },
        SftRecord {
            prompt: vec![2],
            response: vec![4, 3, 1],
        },
    ];
    let initial = PolicyModel::uniform(vocab, 2).unwrap();
    let (model, tel) = run_sft(&initial, &records, &constant_adam(0.1, 2, 3000), 7).unwrap();
    let loss = sft_loss(&model, &records).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-3, "loss {loss}");
    assert_eq!(tel.steps().count(), 3000);
    assert!(model.is_frozen());
}

#[test]
fn sft_loss_decreases_over_windows() {
    let cfg = toy_config();
    let ds = pipeline::build_dataset(&cfg).unwrap();
    let (_, tel) = run_sft(&ds.world.target, &ds.sft_records, &cfg.sft, cfg.seed).unwrap();
    let losses: Vec<f64> = tel.steps().map(|s| s.loss).collect();
    let windows = window_means(&losses, 50);
    assert!(windows.len() >= 2);
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}

fn small_world() -> (wrpo_core::cli::RunConfig, pipeline::Dataset, PolicyModel) {
    let mut cfg = toy_config();
    cfg.task.prompts = 300;
    let ds = pipeline::build_dataset(&cfg).unwrap();
    let (snapshot, _) = pipeline::sft_stage(&cfg, &ds.world, &ds.sft_records).unwrap();
    (cfg, ds, snapshot)
}

#[test]
fn regeneration_is_seeded_and_ordered() {
    let (cfg, ds, snapshot) = small_world();
    let sampling = cfg.sampling_config();
    let quads = &ds.po_quadruples;
    let a = regenerate_target_pairs(&snapshot, quads, 5, &sampling, &ds.world.oracle, 11).unwrap();
    let b = regenerate_target_pairs(&snapshot, quads, 5, &sampling, &ds.world.oracle, 11).unwrap();
    assert_eq!(a, b);
    let c = regenerate_target_pairs(&snapshot, quads, 5, &sampling, &ds.world.oracle, 12).unwrap();
    assert_ne!(a, c);
    for (q, orig) in a.iter().zip(quads) {
        assert_eq!(q.y_ws, orig.y_ws);
        assert_eq!(q.y_ls, orig.y_ls);
        let wt = ds.world.oracle.score(&q.prompt, &q.y_wt.tokens);
        let l = ds.world.oracle.score(&q.prompt, &q.y_l.tokens);
        assert_eq!(wt, q.y_wt.score);
        assert_eq!(l, q.y_l.score);
        assert!(wt >= l);
        assert_eq!(q.degenerate, wt == l);
    }
    let single = regenerate_target_pairs(&snapshot, quads, 1, &sampling, &ds.world.oracle, 11).unwrap();
    assert!(single.iter().all(|q| q.degenerate && q.y_wt == q.y_l));
}

#[test]
fn regeneration_requires_a_frozen_snapshot() {
    let (cfg, ds, snapshot) = small_world();
    let err = regenerate_target_pairs(
        &snapshot.thawed(),
        &ds.po_quadruples,
        5,
        &cfg.sampling_config(),
        &ds.world.oracle,
        1,
    )
    .unwrap_err();
    assert_eq!(err.exit_code(), wrpo_core::Error::usage("").exit_code());
}

#[test]
fn reference_is_untouched_and_telemetry_is_complete() {
    let (cfg, ds, snapshot) = small_world();
    let pairs = regenerate_target_pairs(
        &snapshot,
        &ds.po_quadruples,
        5,
        &cfg.sampling_config(),
        &ds.world.oracle,
        cfg.seed,
    )
    .unwrap();
    let digest = snapshot.param_digest();
    let schedule = FusionSchedule {
        kind: ScheduleKind::Linear,
        target: 0.5,
        total_steps: None,
    };
    let po = PoConfig {
        objective: ObjectiveConfig::new(ObjectiveKind::WrpoDpo),
        schedule: Some(schedule),
        pair: PairSelection::OnPolicy,
        optimizer: cfg.po.optimizer,
        seed: cfg.seed,
    };
    let (policy, tel) = run_preference_optimization(&snapshot, &snapshot, &pairs, &po).unwrap();
    assert_eq!(snapshot.param_digest(), digest);
    assert_ne!(policy.param_digest(), digest);

    let steps: Vec<_> = tel.steps().collect();
    let expected = pairs.len().div_ceil(cfg.po.optimizer.batch_size) * cfg.po.optimizer.epochs;
    assert_eq!(steps.len(), expected);
    let resolved = schedule.resolved(steps.len());
    for (i, s) in steps.iter().enumerate() {
        assert_eq!(s.step, i);
        assert_eq!(s.stage, "po");
        assert_eq!(s.alpha, Some(resolved.alpha_at(i)));
        assert!(s.loss.is_finite() && s.grad_norm.is_finite() && s.lr > 0.0);
        for key in ["w_s", "w_t", "l"] {
            assert!(s.rewards[key].is_finite());
        }
        let on = s.rewards["w_t"] - s.rewards["l"];
        let hy = s.rewards["w_s"] - s.rewards["l"];
        assert!((s.on_policy_margin.unwrap() - on).abs() < 1e-12);
        assert!((s.hybrid_policy_margin.unwrap() - hy).abs() < 1e-12);
    }
    let t = steps.len() as f64;
    assert_eq!(steps.last().unwrap().alpha, Some(0.5 * (t - 1.0) / t));
}

#[test]
fn reward_accuracy_on_constructed_quadruples() {
    let vocab = Vocabulary::toy(3).unwrap();
    let reference = PolicyModel::uniform(vocab.clone(), 1).unwrap();
    // Policy strongly prefers 'a' (id 2) after any context.
    let mut logits = vec![0.0; reference.param_count()];
    for row in logits.chunks_mut(vocab.size()) {
        row[2] = 3.0;
    }
    let policy = PolicyModel::from_logits(vocab, 1, logits).unwrap();
    let q = |ws: Vec<TokenId>, l: Vec<TokenId>| PreferenceQuadruple {
        prompt: vec![3],
        y_ws: scored(ws, 1.0),
        y_wt: scored(vec![1], 0.0),
        y_l: scored(l, 0.0),
        y_ls: None,
        degenerate: false,
    };
    let quads = vec![
        q(vec![2, 1], vec![3, 1]),
        q(vec![2, 2, 1], vec![4, 4, 1]),
        q(vec![2, 3, 1], vec![4, 3, 1]),
    ];
    assert_eq!(eval_reward_accuracy(&policy, &reference, &quads, 0.1).unwrap(), 1.0);
    assert_eq!(eval_reward_accuracy(&reference, &reference, &quads, 0.1).unwrap(), 0.0);
    assert!(eval_reward_accuracy(&policy, &reference, &[], 0.1).is_err());
}

fn best_content_successor(oracle: &RewardOracle, prev: TokenId) -> TokenId {
    let content: Vec<TokenId> = oracle.vocab().content_ids().collect();
    content
        .iter()
        .copied()
        .fold(content[0], |b, t| if oracle.affinity(prev, t) > oracle.affinity(prev, b) { t } else { b })
}

#[test]
fn greedy_optimal_policy_beats_uniform() {
    let vocab = Vocabulary::toy(6).unwrap();
    let oracle = RewardOracle::synthetic(vocab.clone(), 6, 0.0, 3).unwrap();
    let v = vocab.size();
    let mut logits = vec![0.0; v * v];
    for prev in 0..v {
        logits[prev * v + best_content_successor(&oracle, prev)] = 50.0;
    }
    let greedy = PolicyModel::from_logits(vocab.clone(), 1, logits).unwrap();
    let uniform = PolicyModel::uniform(vocab.clone(), 1).unwrap();
    let prompts: Vec<Vec<TokenId>> = vocab.content_ids().map(|t| vec![t]).collect();
    let sampling = SamplingConfig {
        temperature: 1.0,
        top_p: 1.0,
        max_length: 6,
        seed: 0,
    };
    let r = eval_policy_quality(&greedy, &uniform, &prompts, &sampling, &oracle, 8, 5).unwrap();
    assert_eq!(r.win_rate, 1.0, "{r:?}");
    assert!(r.mean_score > r.baseline_mean_score);

    let same = eval_policy_quality(&uniform, &uniform, &prompts, &sampling, &oracle, 8, 5).unwrap();
    assert_eq!((same.wins, same.ties, same.losses), (0, prompts.len(), 0));
    assert_eq!(same.win_rate, 0.0);
}
