//! Preference objectives over sequence log-probabilities.
//!
//! Every objective in the family scores each response role, takes a weighted
//! linear combination of those scores (the margin `z`), and applies either the
//! logistic loss `-log σ(z)` or the squared loss `h²`. Role scores are
//!
//! * `β·(log π_θ − log π_ref)` for the reference-based logistic kinds,
//! * `β·log π_θ / |y|` for the length-normalized kinds (no reference),
//! * `log π_θ − log π_ref` for the squared kinds.
//!
//! The partition term of the reparameterized reward cancels in every pairwise
//! comparison and is never computed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "w")]
    Chosen,
    #[serde(rename = "l")]
    Rejected,
    #[serde(rename = "w_s")]
    SourceChosen,
    #[serde(rename = "w_t")]
    TargetChosen,
    #[serde(rename = "l_s")]
    SourceRejected,
    #[serde(rename = "l_t")]
    TargetRejected,
}

impl Role {
    pub fn short_name(self) -> &'static str {
        match self {
            Role::Chosen => "w",
            Role::Rejected => "l",
            Role::SourceChosen => "w_s",
            Role::TargetChosen => "w_t",
            Role::SourceRejected => "l_s",
            Role::TargetRejected => "l_t",
        }
    }

    pub fn is_preferred(self) -> bool {
        matches!(self, Role::Chosen | Role::SourceChosen | Role::TargetChosen)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleLogProbs {
    pub theta_logp: f64,
    pub ref_logp: f64,
    pub length: usize,
}

impl RoleLogProbs {
    pub fn new(theta_logp: f64, ref_logp: f64, length: usize) -> Self {
        RoleLogProbs {
            theta_logp,
            ref_logp,
            length,
        }
    }

    /// `log π_θ(y|x) − log π_ref(y|x)`
    pub fn log_ratio(&self) -> f64 {
        self.theta_logp - self.ref_logp
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogProbBundle {
    pub roles: BTreeMap<Role, RoleLogProbs>,
}

impl LogProbBundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, role: Role, theta_logp: f64, ref_logp: f64, length: usize) -> Self {
        self.roles
            .insert(role, RoleLogProbs::new(theta_logp, ref_logp, length));
        self
    }

    pub fn insert(&mut self, role: Role, entry: RoleLogProbs) {
        self.roles.insert(role, entry);
    }

    pub fn get(&self, role: Role) -> Result<&RoleLogProbs> {
        self.roles
            .get(&role)
            .ok_or_else(|| Error::input(format!("log-prob bundle is missing role {role}")))
    }

    fn validate(&self, needed: &[Role]) -> Result<()> {
        for &role in needed {
            let e = self.get(role)?;
            if e.length == 0 {
                return Err(Error::input(format!("role {role} has zero length")));
            }
            if !e.theta_logp.is_finite() || !e.ref_logp.is_finite() {
                return Err(Error::input(format!("role {role} has non-finite log-probs")));
            }
            if e.theta_logp > 0.0 || e.ref_logp > 0.0 {
                return Err(Error::input(format!(
                    "role {role} has a positive sequence log-probability"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Dpo,
    Ipo,
    Simpo,
    WrpoDpo,
    WrpoSimpo,
    WrpoIpo,
    WrpoWithYls,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 7] = [
        ObjectiveKind::Dpo,
        ObjectiveKind::Ipo,
        ObjectiveKind::Simpo,
        ObjectiveKind::WrpoDpo,
        ObjectiveKind::WrpoSimpo,
        ObjectiveKind::WrpoIpo,
        ObjectiveKind::WrpoWithYls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Dpo => "dpo",
            ObjectiveKind::Ipo => "ipo",
            ObjectiveKind::Simpo => "simpo",
            ObjectiveKind::WrpoDpo => "wrpo_dpo",
            ObjectiveKind::WrpoSimpo => "wrpo_simpo",
            ObjectiveKind::WrpoIpo => "wrpo_ipo",
            ObjectiveKind::WrpoWithYls => "wrpo_with_yls",
        }
    }

    pub fn is_wrpo(self) -> bool {
        matches!(
            self,
            ObjectiveKind::WrpoDpo
                | ObjectiveKind::WrpoSimpo
                | ObjectiveKind::WrpoIpo
                | ObjectiveKind::WrpoWithYls
        )
    }

    /// Logistic (`-log σ`) rather than squared loss.
    pub fn is_sigmoid(self) -> bool {
        !matches!(self, ObjectiveKind::Ipo | ObjectiveKind::WrpoIpo)
    }

    pub fn is_length_normalized(self) -> bool {
        matches!(self, ObjectiveKind::Simpo | ObjectiveKind::WrpoSimpo)
    }

    pub fn uses_reference(self) -> bool {
        !self.is_length_normalized()
    }

    /// Roles the objective consumes, in margin order.
    pub fn roles(self) -> &'static [Role] {
        match self {
            ObjectiveKind::Dpo | ObjectiveKind::Ipo | ObjectiveKind::Simpo => {
                &[Role::Chosen, Role::Rejected]
            }
            ObjectiveKind::WrpoDpo | ObjectiveKind::WrpoSimpo | ObjectiveKind::WrpoIpo => {
                &[Role::SourceChosen, Role::TargetChosen, Role::Rejected]
            }
            ObjectiveKind::WrpoWithYls => &[
                Role::SourceChosen,
                Role::TargetChosen,
                Role::SourceRejected,
                Role::TargetRejected,
            ],
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::input(format!("unknown objective kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Reward scale; for the squared kinds it only scales reported internal rewards.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub gamma: f64,
    /// Fusion coefficient; the trainer overwrites it every step from the schedule.
    #[serde(default)]
    pub alpha: f64,
}

fn default_beta() -> f64 {
    0.01
}

fn default_tau() -> f64 {
    0.01
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveConfig {
            kind,
            beta: default_beta(),
            tau: default_tau(),
            gamma: 0.0,
            alpha: 0.0,
        }
    }

    /// Selected settings for each kind when training from the SFT snapshot.
    pub fn tuned_defaults(kind: ObjectiveKind) -> Self {
        let base = ObjectiveConfig::new(kind);
        match kind {
            ObjectiveKind::Dpo => base,
            ObjectiveKind::Ipo => ObjectiveConfig { tau: 0.01, ..base },
            ObjectiveKind::Simpo => ObjectiveConfig {
                beta: 10.0,
                gamma: 1.0,
                ..base
            },
            ObjectiveKind::WrpoDpo | ObjectiveKind::WrpoWithYls => ObjectiveConfig {
                alpha: 0.1,
                ..base
            },
            ObjectiveKind::WrpoIpo => ObjectiveConfig {
                tau: 0.01,
                alpha: 0.1,
                ..base
            },
            ObjectiveKind::WrpoSimpo => ObjectiveConfig {
                beta: 10.0,
                gamma: 0.0,
                alpha: 0.5,
                ..base
            },
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        ObjectiveConfig { alpha, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::input(format!("beta must be > 0, got {}", self.beta)));
        }
        if !self.kind.is_sigmoid() && !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::input(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.kind.is_length_normalized() && !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::input(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.kind.is_wrpo() && !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::input(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub loss: f64,
    /// The argument of the loss: `z` for logistic kinds, `h` for squared kinds.
    pub margin: f64,
    pub internal_rewards: BTreeMap<Role, f64>,
    pub on_policy_margin: Option<f64>,
    pub hybrid_policy_margin: Option<f64>,
    /// ∂loss/∂log π_θ(y|x) per role.
    pub grad_wrt_logps: BTreeMap<Role, f64>,
}

/// `r̂(x,y) = β·(log π_θ − log π_ref)`.
pub fn internal_reward(theta_logp: f64, ref_logp: f64, beta: f64) -> f64 {
    beta * (theta_logp - ref_logp)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow or cancellation.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Bradley-Terry preference probability `σ(r_w − r_l)`.
pub fn bt_probability(reward_w: f64, reward_l: f64) -> f64 {
    sigmoid(reward_w - reward_l)
}

/// `α·r_ws + (1−α)·r_wt`
pub fn compound_reward(r_ws: f64, r_wt: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("alpha must be in [0, 1], got {alpha}")));
    }
    Ok(alpha * r_ws + (1.0 - alpha) * r_wt)
}

/// Margin weights per role, in margin order.
fn margin_weights(kind: ObjectiveKind, alpha: f64) -> Vec<(Role, f64)> {
    match kind {
        ObjectiveKind::Dpo | ObjectiveKind::Ipo | ObjectiveKind::Simpo => {
            vec![(Role::Chosen, 1.0), (Role::Rejected, -1.0)]
        }
        ObjectiveKind::WrpoDpo | ObjectiveKind::WrpoSimpo | ObjectiveKind::WrpoIpo => vec![
            (Role::SourceChosen, alpha),
            (Role::TargetChosen, 1.0 - alpha),
            (Role::Rejected, -1.0),
        ],
        ObjectiveKind::WrpoWithYls => vec![
            (Role::SourceChosen, alpha),
            (Role::TargetChosen, 1.0 - alpha),
            (Role::SourceRejected, -alpha),
            (Role::TargetRejected, -(1.0 - alpha)),
        ],
    }
}

/// Evaluates any objective of the family on one instance.
pub fn evaluate(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    cfg.validate()?;
    let kind = cfg.kind;
    bundle.validate(kind.roles())?;

    // (score, ∂score/∂θ_logp) per role
    let score = |e: &RoleLogProbs| -> (f64, f64) {
        if kind.is_length_normalized() {
            let scale = cfg.beta / e.length as f64;
            (scale * e.theta_logp, scale)
        } else if kind.is_sigmoid() {
            (internal_reward(e.theta_logp, e.ref_logp, cfg.beta), cfg.beta)
        } else {
            (e.log_ratio(), 1.0)
        }
    };

    let weights = margin_weights(kind, cfg.alpha);
    let mut margin = 0.0;
    let mut terms = Vec::with_capacity(weights.len());
    for &(role, w) in &weights {
        let (s, ds) = score(bundle.get(role)?);
        margin += w * s;
        terms.push((role, w, ds));
    }

    let (loss, dloss_dmargin) = if kind.is_sigmoid() {
        if kind.is_length_normalized() {
            margin -= cfg.gamma;
        }
        (softplus(-margin), -sigmoid(-margin))
    } else {
        margin -= 1.0 / (2.0 * cfg.tau);
        (margin * margin, 2.0 * margin)
    };

    if !loss.is_finite() {
        return Err(Error::numeric(format!("{kind} loss is not finite")));
    }

    let grad_wrt_logps = terms
        .iter()
        .map(|&(role, w, ds)| (role, dloss_dmargin * w * ds))
        .collect();

    let internal_rewards: BTreeMap<Role, f64> = kind
        .roles()
        .iter()
        .map(|&role| {
            let e = bundle.roles[&role];
            let r = if kind.is_length_normalized() {
                cfg.beta / e.length as f64 * e.theta_logp
            } else {
                internal_reward(e.theta_logp, e.ref_logp, cfg.beta)
            };
            (role, r)
        })
        .collect();

    let (on_policy_margin, hybrid_policy_margin) = if kind.is_wrpo() {
        let rejected = if kind == ObjectiveKind::WrpoWithYls {
            Role::TargetRejected
        } else {
            Role::Rejected
        };
        let r = &internal_rewards;
        (
            Some(r[&Role::TargetChosen] - r[&rejected]),
            Some(r[&Role::SourceChosen] - r[&rejected]),
        )
    } else {
        (None, None)
    };

    Ok(LossResult {
        loss,
        margin,
        internal_rewards,
        on_policy_margin,
        hybrid_policy_margin,
        grad_wrt_logps,
    })
}

fn expect_kind(cfg: &ObjectiveConfig, allowed: ObjectiveKind) -> Result<()> {
    if cfg.kind != allowed {
        return Err(Error::input(format!(
            "objective config has kind {}, expected {allowed}",
            cfg.kind
        )));
    }
    Ok(())
}

pub fn dpo_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::Dpo)?;
    evaluate(bundle, cfg)
}

pub fn ipo_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::Ipo)?;
    evaluate(bundle, cfg)
}

pub fn simpo_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::Simpo)?;
    evaluate(bundle, cfg)
}

pub fn wrpo_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::WrpoDpo)?;
    evaluate(bundle, cfg)
}

pub fn wrpo_simpo_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::WrpoSimpo)?;
    evaluate(bundle, cfg)
}

pub fn wrpo_ipo_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::WrpoIpo)?;
    evaluate(bundle, cfg)
}

pub fn wrpo_with_yls_loss(bundle: &LogProbBundle, cfg: &ObjectiveConfig) -> Result<LossResult> {
    expect_kind(cfg, ObjectiveKind::WrpoWithYls)?;
    evaluate(bundle, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn cfg(kind: ObjectiveKind, beta: f64) -> ObjectiveConfig {
        ObjectiveConfig {
            beta,
            ..ObjectiveConfig::new(kind)
        }
    }

    /// Bundle from log-ratios with a fixed reference log-prob.
    fn ratios(pairs: &[(Role, f64)]) -> LogProbBundle {
        pairs.iter().fold(LogProbBundle::new(), |b, &(role, d)| {
            b.with(role, -100.0 + d, -100.0, 4)
        })
    }

    #[test]
    fn internal_reward_examples() {
        assert_eq!(internal_reward(-3.0, -3.0, 0.01), 0.0);
        assert!((internal_reward(-3.0, -5.0, 0.01) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn bt_probability_examples() {
        assert_eq!(bt_probability(1.5, 1.5), 0.5);
        assert!((bt_probability(2.0, 0.0) - 0.880797).abs() < 1e-6);
        assert!((bt_probability(1e4, 0.0) - 1.0).abs() < 1e-12);
        assert!(bt_probability(-1e4, 0.0) >= 0.0);
        assert!(softplus(1e4).is_finite() && softplus(-1e4) >= 0.0);
    }

    #[test]
    fn compound_reward_examples() {
        assert_eq!(compound_reward(2.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(compound_reward(2.0, 1.0, 1.0).unwrap(), 2.0);
        assert!((compound_reward(2.0, 1.0, 0.3).unwrap() - 1.3).abs() < 1e-15);
        assert!(compound_reward(2.0, 1.0, 1.5).is_err());
        assert!(compound_reward(2.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn dpo_examples() {
        let zero = ratios(&[(Role::Chosen, 0.0), (Role::Rejected, 0.0)]);
        let r = dpo_loss(&zero, &cfg(ObjectiveKind::Dpo, 0.01)).unwrap();
        assert!((r.loss - LN2).abs() < 1e-15);

        let b = ratios(&[(Role::Chosen, 1.0), (Role::Rejected, -1.0)]);
        let r = dpo_loss(&b, &cfg(ObjectiveKind::Dpo, 1.0)).unwrap();
        assert!((r.margin - 2.0).abs() < 1e-12);
        assert!((r.loss - 0.126928).abs() < 1e-6);
        let s = sigmoid(-2.0);
        assert!((r.grad_wrt_logps[&Role::Chosen] + s).abs() < 1e-12);
        assert!((r.grad_wrt_logps[&Role::Rejected] - s).abs() < 1e-12);
    }

    #[test]
    fn dpo_missing_role_is_input_error() {
        let b = ratios(&[(Role::Chosen, 0.0)]);
        assert!(matches!(
            dpo_loss(&b, &cfg(ObjectiveKind::Dpo, 0.1)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn ipo_examples() {
        let tau = 0.01;
        let c = ObjectiveConfig {
            tau,
            ..ObjectiveConfig::new(ObjectiveKind::Ipo)
        };
        let b = ratios(&[(Role::Chosen, 0.3), (Role::Rejected, 0.3)]);
        let r = ipo_loss(&b, &c).unwrap();
        assert!((r.loss - 2500.0).abs() < 1e-9);

        let b = ratios(&[(Role::Chosen, 50.0), (Role::Rejected, 0.0)]);
        assert!(ipo_loss(&b, &c).unwrap().loss.abs() < 1e-18);

        let bad = ObjectiveConfig { tau: 0.0, ..c };
        assert!(matches!(ipo_loss(&b, &bad), Err(Error::Input(_))));
        let bad = ObjectiveConfig { tau: -1.0, ..c };
        assert!(ipo_loss(&b, &bad).is_err());
    }

    #[test]
    fn simpo_examples() {
        let c = ObjectiveConfig {
            beta: 10.0,
            gamma: 0.0,
            ..ObjectiveConfig::new(ObjectiveKind::Simpo)
        };
        let b = LogProbBundle::new()
            .with(Role::Chosen, -4.0, 0.0, 4)
            .with(Role::Rejected, -2.0, 0.0, 2);
        assert!((simpo_loss(&b, &c).unwrap().loss - LN2).abs() < 1e-15);

        let c = ObjectiveConfig { gamma: 1.0, ..c };
        let b = LogProbBundle::new()
            .with(Role::Chosen, -3.0, -0.5, 3)
            .with(Role::Rejected, -6.0, -9.0, 5);
        let r = simpo_loss(&b, &c).unwrap();
        assert!((r.margin - 1.0).abs() < 1e-12);
        assert!((r.loss - 0.313262).abs() < 1e-6);

        let zero_len = LogProbBundle::new()
            .with(Role::Chosen, -3.0, 0.0, 0)
            .with(Role::Rejected, -6.0, 0.0, 5);
        assert!(matches!(simpo_loss(&zero_len, &c), Err(Error::Input(_))));
    }

    #[test]
    fn wrpo_examples() {
        let c = cfg(ObjectiveKind::WrpoDpo, 0.01).with_alpha(0.5);
        let b = ratios(&[
            (Role::SourceChosen, 2.0),
            (Role::TargetChosen, 1.0),
            (Role::Rejected, 0.0),
        ]);
        let r = wrpo_loss(&b, &c).unwrap();
        assert!((r.margin - 0.015).abs() < 1e-15);
        assert!((r.loss - 0.6856753).abs() < 1e-6);
        assert!((r.on_policy_margin.unwrap() - 0.01).abs() < 1e-15);
        assert!((r.hybrid_policy_margin.unwrap() - 0.02).abs() < 1e-15);
        let s = sigmoid(-0.015);
        assert!((r.grad_wrt_logps[&Role::SourceChosen] + 0.5 * 0.01 * s).abs() < 1e-15);
        assert!((r.grad_wrt_logps[&Role::TargetChosen] + 0.5 * 0.01 * s).abs() < 1e-15);
        assert!((r.grad_wrt_logps[&Role::Rejected] - 0.01 * s).abs() < 1e-15);

        assert!(wrpo_loss(&b, &c.with_alpha(1.2)).is_err());
        let missing = ratios(&[(Role::SourceChosen, 2.0), (Role::Rejected, 0.0)]);
        assert!(matches!(wrpo_loss(&missing, &c), Err(Error::Input(_))));
    }

    #[test]
    fn wrpo_with_yls_examples() {
        let c = cfg(ObjectiveKind::WrpoWithYls, 0.01).with_alpha(0.5);
        let b = ratios(&[
            (Role::SourceChosen, 2.0),
            (Role::TargetChosen, 1.0),
            (Role::SourceRejected, 0.5),
            (Role::TargetRejected, 0.0),
        ]);
        let r = wrpo_with_yls_loss(&b, &c).unwrap();
        assert!((r.margin - 0.0125).abs() < 1e-15);
        assert!((r.loss - 0.6869167).abs() < 1e-6);

        let zero = ratios(&[
            (Role::SourceChosen, 0.0),
            (Role::TargetChosen, 0.0),
            (Role::SourceRejected, 0.0),
            (Role::TargetRejected, 0.0),
        ]);
        assert!((wrpo_with_yls_loss(&zero, &c).unwrap().loss - LN2).abs() < 1e-15);
    }

    #[test]
    fn wrpo_simpo_all_equal_is_ln2() {
        let c = ObjectiveConfig {
            beta: 10.0,
            gamma: 0.0,
            ..ObjectiveConfig::new(ObjectiveKind::WrpoSimpo)
        }
        .with_alpha(0.3);
        let b = LogProbBundle::new()
            .with(Role::SourceChosen, -2.0, 0.0, 2)
            .with(Role::TargetChosen, -3.0, 0.0, 3)
            .with(Role::Rejected, -5.0, 0.0, 5);
        assert!((wrpo_simpo_loss(&b, &c).unwrap().loss - LN2).abs() < 1e-15);
    }

    #[test]
    fn positive_log_prob_rejected() {
        let b = LogProbBundle::new()
            .with(Role::Chosen, 0.5, -1.0, 2)
            .with(Role::Rejected, -1.0, -1.0, 2);
        assert!(evaluate(&b, &cfg(ObjectiveKind::Dpo, 0.1)).is_err());
    }

    #[test]
    fn wrong_kind_wrapper_is_rejected() {
        let b = ratios(&[(Role::Chosen, 0.0), (Role::Rejected, 0.0)]);
        assert!(ipo_loss(&b, &cfg(ObjectiveKind::Dpo, 0.1)).is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.name().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert!("kto".parse::<ObjectiveKind>().is_err());
    }

    proptest! {
        #[test]
        fn bt_complement(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assert!((bt_probability(a, b) + bt_probability(b, a) - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn wrpo_margin_is_linear(alpha in 0.0f64..=1.0, beta in 0.001f64..2.0,
                                 ws in -3.0f64..3.0, wt in -3.0f64..3.0, l in -3.0f64..3.0) {
            let c = cfg(ObjectiveKind::WrpoDpo, beta).with_alpha(alpha);
            let base = |dws: f64, dwt: f64, dl: f64| {
                let b = ratios(&[(Role::SourceChosen, ws + dws), (Role::TargetChosen, wt + dwt), (Role::Rejected, l + dl)]);
                evaluate(&b, &c).unwrap().margin
            };
            let z0 = base(0.0, 0.0, 0.0);
            prop_assert!((base(1.0, 0.0, 0.0) - z0 - alpha * beta).abs() < 1e-9);
            prop_assert!((base(0.0, 1.0, 0.0) - z0 - (1.0 - alpha) * beta).abs() < 1e-9);
            prop_assert!((base(0.0, 0.0, 1.0) - z0 + beta).abs() < 1e-9);
        }

        #[test]
        fn sigmoid_losses_decrease_in_margin(z in -30.0f64..30.0, dz in 1e-3f64..5.0) {
            prop_assert!(softplus(-(z + dz)) < softplus(-z));
        }
    }
}
