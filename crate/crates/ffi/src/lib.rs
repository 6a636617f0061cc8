//! C ABI over `poca-core`.
//!
//! Every function returns a [`PocaStatus`]; results come back through out
//! pointers, which are written only on `POCA_STATUS_OK`. After a failure,
//! [`poca_last_error_message`] describes it until the next call on the same
//! thread. Strings returned by the library are owned by the caller and must
//! be released with [`poca_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, UnwindSafe};
use std::ptr;

use poca_core::backends::{ChatMessage, Role};
use poca_core::evaluation::{
    clip_score, meteor_exact, pearson, render_no_caption_prompt, render_vqa_prompt,
};
use poca_core::info::{
    entropy, kl_divergence, mutual_information, DiscreteDistribution, Divergence, JointDistribution,
};
use poca_core::pipeline::{MergeInputs, TemplatePreset};
use poca_core::theory::{
    run_monte_carlo, ConcaveErrorModel, MonteCarloConfig, MonteCarloSummary, PhiKind,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PocaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Internal = 4,
}

pub const POCA_PHI_PARABOLIC: u32 = 0;
pub const POCA_PHI_TENT: u32 = 1;
pub const POCA_PHI_SQRT_PARABOLIC: u32 = 2;

/// Monte Carlo configuration handle.
pub struct PocaSimConfig(MonteCarloConfig);

/// Result of one Monte Carlo run.
pub struct PocaSimSummary(MonteCarloSummary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PocaStatus, String);

impl Failure {
    fn arg(msg: impl std::fmt::Display) -> Self {
        Failure(PocaStatus::InvalidArgument, msg.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure> + UnwindSafe) -> PocaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(f) {
        Ok(Ok(())) => PocaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PocaStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(PocaStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must point to `len` readable values or be null with `len == 0`.
unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be a NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            PocaStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PocaStatus::Internal, "output contains NUL".into()))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn poca_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn poca_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Shannon entropy in bits.
///
/// # Safety
/// `probs` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_entropy(probs: *const f64, len: usize, out: *mut f64) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let d = DiscreteDistribution::new(slice(probs, len, "probs")?.to_vec())
            .map_err(Failure::arg)?;
        *out = entropy(&d);
        Ok(())
    })
}

/// Mutual information in bits of a row-major `rows x cols` joint table.
///
/// # Safety
/// `cells` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_mutual_information(
    cells: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure::arg("table too large"))?;
        let j = JointDistribution::from_flat(rows, cols, slice(cells, n, "cells")?.to_vec())
            .map_err(Failure::arg)?;
        *out = mutual_information(&j);
        Ok(())
    })
}

/// `KL(p || q)` in bits. When `q` misses mass that `p` has, `*out_infinite`
/// is set and `*out` is `+inf`.
///
/// # Safety
/// `p` and `q` must point to `len` doubles; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_kl_divergence(
    p: *const f64,
    q: *const f64,
    len: usize,
    out: *mut f64,
    out_infinite: *mut bool,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        non_null(out_infinite, "out_infinite")?;
        let p = DiscreteDistribution::new(slice(p, len, "p")?.to_vec()).map_err(Failure::arg)?;
        let q = DiscreteDistribution::new(slice(q, len, "q")?.to_vec()).map_err(Failure::arg)?;
        let d = kl_divergence(&p, &q).map_err(Failure::arg)?;
        *out = d.as_f64();
        *out_infinite = matches!(d, Divergence::Infinite);
        Ok(())
    })
}

/// New configuration with uniform eta, Dirichlet alpha and seeded random
/// signs. `phi` is one of the `POCA_PHI_*` constants.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_config_new(
    n: usize,
    m: usize,
    trials: u64,
    seed: u64,
    phi: u32,
    scale: f64,
    out: *mut *mut PocaSimConfig,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let kind = match phi {
            POCA_PHI_PARABOLIC => PhiKind::Parabolic,
            POCA_PHI_TENT => PhiKind::Tent,
            POCA_PHI_SQRT_PARABOLIC => PhiKind::SqrtParabolic,
            other => return Err(Failure::arg(format!("unknown phi kind {other}"))),
        };
        let model = ConcaveErrorModel::new(kind, scale).map_err(Failure::arg)?;
        let cfg = MonteCarloConfig::new(n, m, trials, seed, model);
        cfg.validate().map_err(Failure::arg)?;
        *out = Box::into_raw(Box::new(PocaSimConfig(cfg)));
        Ok(())
    })
}

/// Worker threads for [`poca_sim_run`]; 0 means all cores. Results do not
/// depend on this setting.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_config_set_threads(
    cfg: *mut PocaSimConfig,
    threads: usize,
) -> PocaStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        (*cfg).0.threads = (threads > 0).then_some(threads);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a live handle; it is dangling afterwards.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_config_free(cfg: *mut PocaSimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_run(
    cfg: *const PocaSimConfig,
    out: *mut *mut PocaSimSummary,
) -> PocaStatus {
    guard(|| {
        non_null(cfg, "cfg")?;
        non_null(out, "out")?;
        let s = run_monte_carlo(&(*cfg).0).map_err(Failure::arg)?;
        *out = Box::into_raw(Box::new(PocaSimSummary(s)));
        Ok(())
    })
}

/// Per-unit gap violations and the sum of L1, L2 and L-infinity norm
/// violations.
///
/// # Safety
/// `s` must be a live handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_summary_violations(
    s: *const PocaSimSummary,
    out_per_unit: *mut u64,
    out_norm: *mut u64,
) -> PocaStatus {
    guard(|| {
        non_null(s, "summary")?;
        non_null(out_per_unit, "out_per_unit")?;
        non_null(out_norm, "out_norm")?;
        let v = &(*s).0.violations;
        *out_per_unit = v.per_unit_gap;
        *out_norm = v.norm_l1 + v.norm_l2 + v.norm_linf;
        Ok(())
    })
}

/// Full summary as JSON; free with [`poca_string_free`].
///
/// # Safety
/// `s` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_summary_to_json(
    s: *const PocaSimSummary,
    out: *mut *mut c_char,
) -> PocaStatus {
    guard(|| {
        non_null(s, "summary")?;
        non_null(out, "out")?;
        let json = serde_json::to_string(&(*s).0)
            .map_err(|e| Failure(PocaStatus::Internal, e.to_string()))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a live handle; it is dangling afterwards.
#[no_mangle]
pub unsafe extern "C" fn poca_sim_summary_free(s: *mut PocaSimSummary) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Exact-match METEOR against the best of `n_refs` references.
///
/// # Safety
/// `candidate` and each of the `n_refs` entries of `refs` must be
/// NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_meteor_exact(
    candidate: *const c_char,
    refs: *const *const c_char,
    n_refs: usize,
    out: *mut f64,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let cand = text(candidate, "candidate")?;
        let mut references = Vec::with_capacity(n_refs);
        if n_refs > 0 {
            non_null(refs, "refs")?;
            for (i, &r) in std::slice::from_raw_parts(refs, n_refs).iter().enumerate() {
                references.push(text(r, &format!("refs[{i}]"))?);
            }
        }
        *out = meteor_exact(cand, &references).map_err(Failure::arg)?;
        Ok(())
    })
}

/// `2.5 * max(cos, 0)` between two `dim`-dimensional embeddings.
///
/// # Safety
/// Both vectors must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_clip_score(
    image_vec: *const f64,
    text_vec: *const f64,
    dim: usize,
    out: *mut f64,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = clip_score(
            slice(image_vec, dim, "image_vec")?,
            slice(text_vec, dim, "text_vec")?,
        )
        .map_err(Failure::arg)?;
        Ok(())
    })
}

/// # Safety
/// Both arrays must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_pearson(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out: *mut f64,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = pearson(slice(xs, len, "xs")?, slice(ys, len, "ys")?).map_err(Failure::arg)?;
        Ok(())
    })
}

fn messages_json(messages: &[ChatMessage]) -> Result<*mut c_char, Failure> {
    let list: Vec<serde_json::Value> = messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            serde_json::json!({"role": role, "content": m.content})
        })
        .collect();
    into_c_string(serde_json::Value::Array(list).to_string())
}

/// VQA prompt as a JSON array of `{role, content}` messages; a trailing
/// assistant message is the answer prefix.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_render_vqa_prompt(
    caption: *const c_char,
    question: *const c_char,
    out: *mut *mut c_char,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let msgs = render_vqa_prompt(text(caption, "caption")?, text(question, "question")?)
            .map_err(Failure::arg)?;
        *out = messages_json(&msgs)?;
        Ok(())
    })
}

/// # Safety
/// `question` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_render_no_caption_prompt(
    question: *const c_char,
    out: *mut *mut c_char,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let msgs = render_no_caption_prompt(text(question, "question")?).map_err(Failure::arg)?;
        *out = messages_json(&msgs)?;
        Ok(())
    })
}

/// Merge prompt for one global and four local captions. `preset` is
/// `corrected`, `paper-verbatim` or `naive`.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn poca_render_merge_prompt(
    preset: *const c_char,
    global: *const c_char,
    top_left: *const c_char,
    top_right: *const c_char,
    bottom_left: *const c_char,
    bottom_right: *const c_char,
    out: *mut *mut c_char,
) -> PocaStatus {
    guard(|| {
        non_null(out, "out")?;
        let preset: TemplatePreset = text(preset, "preset")?.parse().map_err(Failure::arg)?;
        let inputs = MergeInputs::new(
            text(global, "global")?,
            [
                text(top_left, "top_left")?,
                text(top_right, "top_right")?,
                text(bottom_left, "bottom_left")?,
                text(bottom_right, "bottom_right")?,
            ],
        );
        *out = messages_json(&preset.template().render(&inputs))?;
        Ok(())
    })
}
