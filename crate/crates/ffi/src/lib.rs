//! C ABI for `wrpo-core`.
//!
//! Every fallible function returns a [`WrpoStatus`]; on failure the message is
//! available from [`wrpo_last_error_message`] on the same thread. Models are
//! exposed through the opaque [`WrpoPolicy`] handle and must be released with
//! [`wrpo_policy_free`]. Token ids are `size_t`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use wrpo_core::cli::{cmd_gen_data, cmd_train, RunConfig, Stage};
use wrpo_core::objectives::{self, LogProbBundle, ObjectiveConfig, ObjectiveKind, Role, RoleLogProbs};
use wrpo_core::policy::{PolicyModel, SamplingConfig, Sequence, Vocabulary};
use wrpo_core::schedule::{FusionSchedule, ScheduleKind};
use wrpo_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Usage = 3,
    Config = 4,
    Data = 5,
    Numeric = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&Error> for WrpoStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Input(_) => WrpoStatus::InvalidInput,
            Error::Usage(_) => WrpoStatus::Usage,
            Error::Config(_) => WrpoStatus::Config,
            Error::Data(_) => WrpoStatus::Data,
            Error::Numeric(_) => WrpoStatus::Numeric,
            Error::Io { .. } => WrpoStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: WrpoStatus, msg: impl Into<String>) -> WrpoStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (WrpoStatus, String)>) -> WrpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WrpoStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(_) => fail(WrpoStatus::Panic, "internal panic"),
    }
}

fn core_err(e: Error) -> (WrpoStatus, String) {
    (WrpoStatus::from(&e), e.to_string())
}

fn null(name: &str) -> (WrpoStatus, String) {
    (WrpoStatus::NullPointer, format!("{name} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (WrpoStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (WrpoStatus::InvalidInput, format!("{name} is not valid UTF-8")))
}

unsafe fn tokens<'a>(p: *const usize, len: usize, name: &str) -> Result<&'a [usize], (WrpoStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wrpo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn wrpo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opaque policy handle.
pub struct WrpoPolicy {
    model: PolicyModel,
}

fn policy_out(out: *mut *mut WrpoPolicy, model: PolicyModel) {
    let boxed = Box::new(WrpoPolicy { model });
    unsafe { *out = Box::into_raw(boxed) };
}

/// Loads a checkpoint written by `wrpo`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_load(path: *const c_char, out: *mut *mut WrpoPolicy) -> WrpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let (model, _) = PolicyModel::load(&PathBuf::from(path)).map_err(core_err)?;
        policy_out(out, model);
        Ok(())
    })
}

/// A uniform policy over `content_tokens` content symbols plus bos/eos.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_uniform(
    content_tokens: usize,
    order: usize,
    out: *mut *mut WrpoPolicy,
) -> WrpoStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let vocab = Vocabulary::toy(content_tokens).map_err(core_err)?;
        let model = PolicyModel::uniform(vocab, order).map_err(core_err)?;
        policy_out(out, model);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_free(policy: *mut WrpoPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// # Safety
/// `policy` must be a valid handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_save(policy: *const WrpoPolicy, path: *const c_char) -> WrpoStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let path = c_str(path, "path")?;
        p.model.save(&PathBuf::from(path), None).map_err(core_err)
    })
}

/// Vocabulary size including bos and eos; 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_vocab_size(policy: *const WrpoPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.model.vocab().size())
}

/// # Safety
/// `policy` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_eos(policy: *const WrpoPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.model.vocab().eos())
}

unsafe fn log_prob_impl(
    policy: *const WrpoPolicy,
    prompt: *const usize,
    prompt_len: usize,
    response: *const usize,
    response_len: usize,
    out: *mut f64,
    average: bool,
) -> WrpoStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let seq = Sequence::new(
            tokens(prompt, prompt_len, "prompt")?.to_vec(),
            tokens(response, response_len, "response")?.to_vec(),
        );
        let v = if average {
            p.model.avg_log_prob(&seq)
        } else {
            p.model.sequence_log_prob(&seq)
        }
        .map_err(core_err)?;
        *out = v;
        Ok(())
    })
}

/// `log π(response | prompt)`; the response must end with eos.
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_sequence_log_prob(
    policy: *const WrpoPolicy,
    prompt: *const usize,
    prompt_len: usize,
    response: *const usize,
    response_len: usize,
    out: *mut f64,
) -> WrpoStatus {
    log_prob_impl(policy, prompt, prompt_len, response, response_len, out, false)
}

/// Per-token average of [`wrpo_policy_sequence_log_prob`].
///
/// # Safety
/// Pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_avg_log_prob(
    policy: *const WrpoPolicy,
    prompt: *const usize,
    prompt_len: usize,
    response: *const usize,
    response_len: usize,
    out: *mut f64,
) -> WrpoStatus {
    log_prob_impl(policy, prompt, prompt_len, response, response_len, out, true)
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WrpoSamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_length: usize,
    pub seed: u64,
}

/// Fills `cfg` with the library defaults.
///
/// # Safety
/// `cfg` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrpo_sampling_default(cfg: *mut WrpoSamplingConfig) -> WrpoStatus {
    guard(|| {
        let d = SamplingConfig::default();
        let out = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        *out = WrpoSamplingConfig {
            temperature: d.temperature,
            top_p: d.top_p,
            max_length: d.max_length,
            seed: d.seed,
        };
        Ok(())
    })
}

/// Samples one response (always eos-terminated) into `out_tokens`.
/// `*out_len` receives the response length; if it exceeds `capacity` the
/// call returns `BufferTooSmall` and nothing is written to `out_tokens`.
///
/// # Safety
/// Pointers must be valid; `out_tokens` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_sample(
    policy: *const WrpoPolicy,
    prompt: *const usize,
    prompt_len: usize,
    cfg: *const WrpoSamplingConfig,
    out_tokens: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> WrpoStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let sampling = SamplingConfig {
            temperature: c.temperature,
            top_p: c.top_p,
            max_length: c.max_length,
            seed: c.seed,
        };
        let seq = p
            .model
            .sample_response(tokens(prompt, prompt_len, "prompt")?, &sampling)
            .map_err(core_err)?;
        *out_len = seq.response.len();
        if seq.response.len() > capacity {
            return Err((
                WrpoStatus::BufferTooSmall,
                format!("response has {} tokens, buffer holds {capacity}", seq.response.len()),
            ));
        }
        if out_tokens.is_null() {
            return Err(null("out_tokens"));
        }
        ptr::copy_nonoverlapping(seq.response.as_ptr(), out_tokens, seq.response.len());
        Ok(())
    })
}

/// Writes the 64-character hex parameter digest plus a nul into `buf`.
///
/// # Safety
/// `buf` must hold `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn wrpo_policy_digest(
    policy: *const WrpoPolicy,
    buf: *mut c_char,
    capacity: usize,
) -> WrpoStatus {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        let digest = p.model.param_digest();
        if capacity < digest.len() + 1 {
            return Err((WrpoStatus::BufferTooSmall, format!("need {} bytes", digest.len() + 1)));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(digest.as_ptr().cast(), buf, digest.len());
        *buf.add(digest.len()) = 0;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrpoObjectiveKind {
    Dpo = 0,
    Ipo = 1,
    Simpo = 2,
    WrpoDpo = 3,
    WrpoSimpo = 4,
    WrpoIpo = 5,
    WrpoWithYls = 6,
}

impl From<WrpoObjectiveKind> for ObjectiveKind {
    fn from(k: WrpoObjectiveKind) -> Self {
        match k {
            WrpoObjectiveKind::Dpo => ObjectiveKind::Dpo,
            WrpoObjectiveKind::Ipo => ObjectiveKind::Ipo,
            WrpoObjectiveKind::Simpo => ObjectiveKind::Simpo,
            WrpoObjectiveKind::WrpoDpo => ObjectiveKind::WrpoDpo,
            WrpoObjectiveKind::WrpoSimpo => ObjectiveKind::WrpoSimpo,
            WrpoObjectiveKind::WrpoIpo => ObjectiveKind::WrpoIpo,
            WrpoObjectiveKind::WrpoWithYls => ObjectiveKind::WrpoWithYls,
        }
    }
}

/// Response roles; also the index into [`WrpoLossOutput::grad_wrt_logps`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrpoRole {
    Chosen = 0,
    Rejected = 1,
    SourceChosen = 2,
    TargetChosen = 3,
    SourceRejected = 4,
    TargetRejected = 5,
}

pub const WRPO_ROLE_COUNT: usize = 6;

impl From<WrpoRole> for Role {
    fn from(r: WrpoRole) -> Self {
        match r {
            WrpoRole::Chosen => Role::Chosen,
            WrpoRole::Rejected => Role::Rejected,
            WrpoRole::SourceChosen => Role::SourceChosen,
            WrpoRole::TargetChosen => Role::TargetChosen,
            WrpoRole::SourceRejected => Role::SourceRejected,
            WrpoRole::TargetRejected => Role::TargetRejected,
        }
    }
}

fn role_index(r: Role) -> usize {
    match r {
        Role::Chosen => 0,
        Role::Rejected => 1,
        Role::SourceChosen => 2,
        Role::TargetChosen => 3,
        Role::SourceRejected => 4,
        Role::TargetRejected => 5,
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WrpoObjectiveConfig {
    pub kind: WrpoObjectiveKind,
    pub beta: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WrpoRoleInput {
    pub role: WrpoRole,
    pub theta_logp: f64,
    pub ref_logp: f64,
    pub length: usize,
}

/// Margins that do not apply to the objective are NaN; gradient entries for
/// absent roles are 0.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct WrpoLossOutput {
    pub loss: f64,
    pub margin: f64,
    pub on_policy_margin: f64,
    pub hybrid_policy_margin: f64,
    pub grad_wrt_logps: [f64; WRPO_ROLE_COUNT],
}

/// Evaluates one objective on per-role sequence log-probabilities.
///
/// # Safety
/// `roles` must hold `count` entries; `cfg` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wrpo_objective_evaluate(
    roles: *const WrpoRoleInput,
    count: usize,
    cfg: *const WrpoObjectiveConfig,
    out: *mut WrpoLossOutput,
) -> WrpoStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let inputs: &[WrpoRoleInput] = if count == 0 {
            &[]
        } else if roles.is_null() {
            return Err(null("roles"));
        } else {
            std::slice::from_raw_parts(roles, count)
        };
        let mut bundle = LogProbBundle::new();
        for r in inputs {
            bundle.insert(r.role.into(), RoleLogProbs::new(r.theta_logp, r.ref_logp, r.length));
        }
        let config = ObjectiveConfig {
            kind: c.kind.into(),
            beta: c.beta,
            tau: c.tau,
            gamma: c.gamma,
            alpha: c.alpha,
        };
        let res = objectives::evaluate(&bundle, &config).map_err(core_err)?;
        let mut grad = [0.0; WRPO_ROLE_COUNT];
        for (role, g) in &res.grad_wrt_logps {
            grad[role_index(*role)] = *g;
        }
        *o = WrpoLossOutput {
            loss: res.loss,
            margin: res.margin,
            on_policy_margin: res.on_policy_margin.unwrap_or(f64::NAN),
            hybrid_policy_margin: res.hybrid_policy_margin.unwrap_or(f64::NAN),
            grad_wrt_logps: grad,
        };
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WrpoScheduleKind {
    Linear = 0,
    Static = 1,
}

/// Fusion coefficient at `step` for a schedule ramping over `total_steps`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wrpo_schedule_alpha_at(
    kind: WrpoScheduleKind,
    target: f64,
    total_steps: usize,
    step: usize,
    out: *mut f64,
) -> WrpoStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let schedule = FusionSchedule {
            kind: match kind {
                WrpoScheduleKind::Linear => ScheduleKind::Linear,
                WrpoScheduleKind::Static => ScheduleKind::Static,
            },
            target,
            total_steps: Some(total_steps),
        };
        schedule.validate().map_err(core_err)?;
        *o = schedule.alpha_at(step);
        Ok(())
    })
}

unsafe fn run_config(config_path: *const c_char, out_dir: *const c_char) -> Result<RunConfig, (WrpoStatus, String)> {
    let mut cfg = if config_path.is_null() {
        RunConfig::default()
    } else {
        RunConfig::load(&PathBuf::from(c_str(config_path, "config_path")?)).map_err(core_err)?
    };
    if !out_dir.is_null() {
        cfg.out_dir = PathBuf::from(c_str(out_dir, "out_dir")?);
    }
    cfg.validate().map_err(core_err)?;
    Ok(cfg)
}

/// Equivalent of `wrpo gen-data`. A null `config_path` uses defaults; a
/// non-null `out_dir` overrides the configured output directory.
///
/// # Safety
/// Non-null arguments must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn wrpo_gen_data(config_path: *const c_char, out_dir: *const c_char) -> WrpoStatus {
    guard(|| {
        let cfg = run_config(config_path, out_dir)?;
        cmd_gen_data(&cfg).map_err(core_err)?;
        Ok(())
    })
}

/// Equivalent of `wrpo train --stage <stage>` with `stage` one of
/// `"sft"`, `"po"`, `"full"`.
///
/// # Safety
/// `stage` and non-null path arguments must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn wrpo_train(
    config_path: *const c_char,
    out_dir: *const c_char,
    stage: *const c_char,
) -> WrpoStatus {
    guard(|| {
        let stage: Stage = c_str(stage, "stage")?.parse().map_err(core_err)?;
        let cfg = run_config(config_path, out_dir)?;
        cmd_train(&cfg, stage).map_err(core_err)?;
        Ok(())
    })
}
