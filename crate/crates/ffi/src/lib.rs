//! C ABI over `chisme-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new` or
//! `*_from_*` functions and released by the matching `*_free`. Every
//! fallible call returns a [`ChismeStatus`]; on failure a description is
//! available from [`chisme_last_error`] on the same thread. Panics are
//! caught and reported as [`ChismeStatus::Panic`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chisme_core::cli::config::parse_experiment;
use chisme_core::engine::{message_budget, run_experiment, ExperimentConfig, MetricsTable, Paradigm};
use chisme_core::paramvec::{scaled_similarity, ParamVector};
use chisme_core::protocol::{combined_influence, ChismeState, ExperienceRule, UpdateMessage};
use chisme_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChismeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    LengthMismatch = 4,
    NonFinite = 5,
    Runtime = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// A validated experiment configuration.
pub struct ChismeExperiment {
    config: ExperimentConfig,
}

/// Per-round metrics of a finished run.
pub struct ChismeMetrics {
    table: MetricsTable,
}

/// One Chisme client driven by the caller.
pub struct ChismeNode {
    state: ChismeState,
}

/// Round summary. Similarities are NaN when not measured.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ChismeRoundSummary {
    pub round: u64,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub merges_applied: u64,
    pub intra_sim: f64,
    pub inter_sim: f64,
}

/// Quantities computed while merging one message.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ChismeMergeTrace {
    pub alpha: f64,
    pub scaled_similarity: f64,
    pub omega: f64,
    pub eta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn fail(status: ChismeStatus, msg: impl Into<String>) -> ChismeStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> ChismeStatus {
    let status = match &err {
        Error::LengthMismatch { .. } => ChismeStatus::LengthMismatch,
        Error::NonFinite(_) => ChismeStatus::NonFinite,
        Error::InvalidConfig(_) | Error::Field { .. } => ChismeStatus::InvalidConfig,
        Error::UnknownNode { .. } => ChismeStatus::OutOfRange,
        Error::EmptyDataset | Error::InvalidArgument(_) => ChismeStatus::InvalidArgument,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> ChismeStatus) -> ChismeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(ChismeStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        (len == 0).then_some(&[])
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

unsafe fn vector(ptr: *const f64, len: usize) -> Result<ParamVector, ChismeStatus> {
    let values = slice(ptr, len).ok_or_else(|| fail(ChismeStatus::NullPointer, "null parameter array"))?;
    ParamVector::new(values.to_vec()).map_err(from_core)
}

unsafe fn text<'a>(ptr: *const c_char) -> Result<&'a str, ChismeStatus> {
    if ptr.is_null() {
        return Err(fail(ChismeStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(ChismeStatus::InvalidArgument, "string is not UTF-8"))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(ChismeStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message for the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn chisme_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses an experiment from TOML text. Missing keys take their defaults.
#[no_mangle]
pub unsafe extern "C" fn chisme_experiment_from_toml(
    toml: *const c_char,
    out: *mut *mut ChismeExperiment,
) -> ChismeStatus {
    guard(|| {
        non_null!(out);
        let src = try_status!(text(toml));
        match parse_experiment(src) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(ChismeExperiment { config }));
                ChismeStatus::Ok
            }
            Err(e) => fail(ChismeStatus::InvalidConfig, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_experiment_free(exp: *mut ChismeExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

#[no_mangle]
pub unsafe extern "C" fn chisme_experiment_set_seed(exp: *mut ChismeExperiment, seed: u64) -> ChismeStatus {
    guard(|| {
        non_null!(exp);
        (*exp).config.seed = seed;
        ChismeStatus::Ok
    })
}

/// `name` is one of chisme, gossip, dfl, cossimdfl, fedavg, local.
#[no_mangle]
pub unsafe extern "C" fn chisme_experiment_set_paradigm(
    exp: *mut ChismeExperiment,
    name: *const c_char,
) -> ChismeStatus {
    guard(|| {
        non_null!(exp);
        let name = try_status!(text(name));
        match name.parse::<Paradigm>() {
            Ok(p) => {
                (*exp).config.paradigm = p;
                ChismeStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_experiment_message_budget(exp: *const ChismeExperiment, out: *mut u64) -> ChismeStatus {
    guard(|| {
        non_null!(exp, out);
        match message_budget(&(*exp).config) {
            Ok(b) => {
                *out = b;
                ChismeStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_experiment_run(
    exp: *const ChismeExperiment,
    out: *mut *mut ChismeMetrics,
) -> ChismeStatus {
    guard(|| {
        non_null!(exp, out);
        match run_experiment(&(*exp).config) {
            Ok(table) => {
                *out = Box::into_raw(Box::new(ChismeMetrics { table }));
                ChismeStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_metrics_free(m: *mut ChismeMetrics) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of rounds, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn chisme_metrics_round_count(m: *const ChismeMetrics) -> usize {
    if m.is_null() {
        0
    } else {
        (*m).table.rounds.len()
    }
}

/// `index` is 0-based; the summary's `round` field is 1-based.
#[no_mangle]
pub unsafe extern "C" fn chisme_metrics_round(
    m: *const ChismeMetrics,
    index: usize,
    out: *mut ChismeRoundSummary,
) -> ChismeStatus {
    guard(|| {
        non_null!(m, out);
        let m = &*m;
        let Some(r) = m.table.rounds.get(index) else {
            return fail(ChismeStatus::OutOfRange, format!("round index {index} out of range"));
        };
        *out = ChismeRoundSummary {
            round: r.round as u64,
            mean_loss: r.mean_loss,
            std_loss: r.std_loss,
            messages_sent: r.messages_sent,
            messages_delivered: r.messages_delivered,
            merges_applied: r.merges_applied,
            intra_sim: r.intra_sim.unwrap_or(f64::NAN),
            inter_sim: r.inter_sim.unwrap_or(f64::NAN),
        };
        ChismeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_metrics_client_loss(
    m: *const ChismeMetrics,
    index: usize,
    client: usize,
    out: *mut f64,
) -> ChismeStatus {
    guard(|| {
        non_null!(m, out);
        let m = &*m;
        match m.table.rounds.get(index).and_then(|r| r.client_losses.get(client)) {
            Some(&l) => {
                *out = l;
                ChismeStatus::Ok
            }
            None => fail(
                ChismeStatus::OutOfRange,
                format!("round {index}, client {client} out of range"),
            ),
        }
    })
}

/// Writes a newly allocated CSV string to `*out`; release it with
/// [`chisme_string_free`].
#[no_mangle]
pub unsafe extern "C" fn chisme_metrics_to_csv(m: *const ChismeMetrics, out: *mut *mut c_char) -> ChismeStatus {
    guard(|| {
        non_null!(m, out);
        *out = CString::new((*m).table.to_csv()).expect("csv has no nul").into_raw();
        ChismeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// New client `id` starting from `init` with zero experience.
#[no_mangle]
pub unsafe extern "C" fn chisme_node_new(
    id: u64,
    init: *const f64,
    len: usize,
    out: *mut *mut ChismeNode,
) -> ChismeStatus {
    guard(|| {
        non_null!(out);
        let init = try_status!(vector(init, len));
        let state = ChismeState::new(id as usize, &init, ExperienceRule::EpochScaled);
        *out = Box::into_raw(Box::new(ChismeNode { state }));
        ChismeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_node_free(node: *mut ChismeNode) {
    if !node.is_null() {
        drop(Box::from_raw(node));
    }
}

#[no_mangle]
pub unsafe extern "C" fn chisme_node_param_count(node: *const ChismeNode) -> usize {
    if node.is_null() {
        0
    } else {
        (*node).state.params().len()
    }
}

/// Copies the current parameters into `out`, which must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn chisme_node_params(node: *const ChismeNode, out: *mut f64, len: usize) -> ChismeStatus {
    guard(|| {
        non_null!(node, out);
        let p = (*node).state.params().as_slice();
        if p.len() != len {
            return from_core(Error::LengthMismatch {
                expected: p.len(),
                found: len,
            });
        }
        ptr::copy_nonoverlapping(p.as_ptr(), out, len);
        ChismeStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn chisme_node_experience(node: *const ChismeNode, out: *mut f64) -> ChismeStatus {
    guard(|| {
        non_null!(node, out);
        *out = (*node).state.experience();
        ChismeStatus::Ok
    })
}

/// Records a local training step done by the caller: the current
/// parameters become the checkpoint and `trained` becomes current.
#[no_mangle]
pub unsafe extern "C" fn chisme_node_commit_training(
    node: *mut ChismeNode,
    trained: *const f64,
    len: usize,
    experience_gain: f64,
) -> ChismeStatus {
    guard(|| {
        non_null!(node);
        let trained = try_status!(vector(trained, len));
        match (*node).state.apply_training(trained, experience_gain) {
            Ok(()) => ChismeStatus::Ok,
            Err(e) => from_core(e),
        }
    })
}

/// Merges a peer's model. `trace` may be null.
#[no_mangle]
pub unsafe extern "C" fn chisme_node_receive(
    node: *mut ChismeNode,
    sender: u64,
    params: *const f64,
    len: usize,
    experience: f64,
    trace: *mut ChismeMergeTrace,
) -> ChismeStatus {
    guard(|| {
        non_null!(node);
        let params = try_status!(vector(params, len));
        let msg = match UpdateMessage::new(sender as usize, params, experience) {
            Ok(m) => m,
            Err(e) => return from_core(e),
        };
        match (*node).state.on_receive(&msg) {
            Ok(t) => {
                if !trace.is_null() {
                    *trace = ChismeMergeTrace {
                        alpha: t.alpha,
                        scaled_similarity: t.scaled_similarity,
                        omega: t.omega,
                        eta: t.eta,
                    };
                }
                ChismeStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Merge weight from experience influence `alpha` and scaled similarity `s`.
#[no_mangle]
pub extern "C" fn chisme_combined_influence(alpha: f64, s: f64) -> f64 {
    combined_influence(alpha, s)
}

#[no_mangle]
pub unsafe extern "C" fn chisme_scaled_similarity(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> ChismeStatus {
    guard(|| {
        non_null!(out);
        let a = try_status!(vector(a, len));
        let b = try_status!(vector(b, len));
        match scaled_similarity(&a, &b) {
            Ok(s) => {
                *out = s;
                ChismeStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}
