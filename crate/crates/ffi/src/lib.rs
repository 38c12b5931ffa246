//! C ABI over `mta-core`.
//!
//! Every fallible call returns an [`MtaStatus`]; on failure the message is
//! available from [`mta_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function. Strings are UTF-8 and
//! NUL-terminated.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mta_core::darnn::{load_model, predict_conversion, DarnnParams};
use mta_core::evalkit::{self, BudgetPlan, ChannelRoi, ReplayEvent, Replayer, RoiEntry};
use mta_core::seqdata::{FeatureVocab, Sequence, TouchPoint};
use mta_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Shape = 6,
    Contract = 7,
    NonFinite = 8,
    UndefinedMetric = 9,
    Version = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for MtaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } | Error::Stream(_) => MtaStatus::Io,
            Error::Parse(_) => MtaStatus::Parse,
            Error::Config(_) => MtaStatus::Config,
            Error::Shape { .. } | Error::Index { .. } => MtaStatus::Shape,
            Error::Contract(_) => MtaStatus::Contract,
            Error::NonFinite(_) => MtaStatus::NonFinite,
            Error::UndefinedMetric(_) => MtaStatus::UndefinedMetric,
            Error::Version(_) => MtaStatus::Version,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(MtaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(MtaStatus::from(&e), e.to_string())
    }
}

fn fail<T>(status: MtaStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MtaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MtaStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside mta".into());
            MtaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return fail(MtaStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .or_else(|_| fail(MtaStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(MtaStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .map_or_else(|| fail(MtaStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .map_or_else(|| fail(MtaStatus::NullPointer, format!("{what} is null")), Ok)
}

/// Message of the last failed call on this thread, or NULL after a success.
/// Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn mta_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn mta_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---- metrics ----

unsafe fn labels_of(labels: *const u8, n: usize) -> Result<Vec<bool>, Fail> {
    Ok(slice_arg(labels, n, "labels")?.iter().map(|&l| l != 0).collect())
}

/// Rank-sum AUC; ties count one half. Fails with `UndefinedMetric` when only
/// one class is present.
///
/// # Safety
/// `scores` and `labels` must point to `n` readable elements and `out` to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn mta_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> MtaStatus {
    guard(|| {
        let s = slice_arg(scores, n, "scores")?;
        let l = labels_of(labels, n)?;
        *mut_arg(out, "out")? = evalkit::auc(s, &l)?;
        Ok(())
    })
}

/// Mean binary cross-entropy, probabilities clipped away from 0 and 1.
///
/// # Safety
/// As for [`mta_auc`].
#[no_mangle]
pub unsafe extern "C" fn mta_logloss(probs: *const f64, labels: *const u8, n: usize, out: *mut f64) -> MtaStatus {
    guard(|| {
        let p = slice_arg(probs, n, "probs")?;
        let l = labels_of(labels, n)?;
        *mut_arg(out, "out")? = evalkit::logloss(p, &l)?;
        Ok(())
    })
}

/// Splits `total` over `n` channels in proportion to their ROI (uniformly
/// when every ROI is 0) and writes the budgets to `out_budgets`.
///
/// # Safety
/// `channels`, `roi` and `out_budgets` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn mta_allocate_budget(
    channels: *const *const c_char,
    roi: *const f64,
    n: usize,
    total: f64,
    out_budgets: *mut f64,
) -> MtaStatus {
    guard(|| {
        let names = slice_arg(channels, n, "channels")?;
        let roi = slice_arg(roi, n, "roi")?;
        let mut table = ChannelRoi::default();
        for (i, (&c, &r)) in names.iter().zip(roi).enumerate() {
            if !(r >= 0.0 && r.is_finite()) {
                return fail(MtaStatus::InvalidArgument, format!("roi[{i}] = {r}"));
            }
            let name = str_arg(c, "channel name")?.to_string();
            let entry = RoiEntry {
                credit: r,
                spend: 1.0,
                roi: r,
            };
            if table.channels.insert(name.clone(), entry).is_some() {
                return fail(MtaStatus::InvalidArgument, format!("channel {name} given twice"));
            }
        }
        let plan = evalkit::allocate_budget(&table, total)?;
        if n > 0 {
            if out_budgets.is_null() {
                return fail(MtaStatus::NullPointer, "out_budgets is null");
            }
            let out = std::slice::from_raw_parts_mut(out_budgets, n);
            for (o, &c) in out.iter_mut().zip(names) {
                *o = plan.budgets[str_arg(c, "channel name")?];
            }
        }
        Ok(())
    })
}

// ---- sequences ----

/// A touch-point sequence under construction.
pub struct MtaSequence(Sequence);

/// # Safety
/// `id` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mta_sequence_new(id: *const c_char, out: *mut *mut MtaSequence) -> MtaStatus {
    guard(|| {
        let id = str_arg(id, "id")?.to_string();
        let seq = Sequence {
            user_id: id.clone(),
            id,
            points: Vec::new(),
            converted: false,
            conversion_time: None,
        };
        *mut_arg(out, "out")? = Box::into_raw(Box::new(MtaSequence(seq)));
        Ok(())
    })
}

/// Appends a touch point. `keys[i]`/`values[i]` are the extra feature
/// columns the model was trained with; unknown values map to the field's
/// unknown slot.
///
/// # Safety
/// `seq` must come from [`mta_sequence_new`]; `keys` and `values` must hold
/// `n_features` strings each.
#[no_mangle]
pub unsafe extern "C" fn mta_sequence_push(
    seq: *mut MtaSequence,
    channel: *const c_char,
    timestamp: i64,
    click: bool,
    cost: f64,
    keys: *const *const c_char,
    values: *const *const c_char,
    n_features: usize,
) -> MtaStatus {
    guard(|| {
        let seq = &mut mut_arg(seq, "seq")?.0;
        if seq.points.last().is_some_and(|p| p.timestamp > timestamp) {
            return fail(MtaStatus::Contract, "touch points must be pushed in time order");
        }
        let channel = str_arg(channel, "channel")?;
        let ks = slice_arg(keys, n_features, "keys")?;
        let vs = slice_arg(values, n_features, "values")?;
        let extra = ks
            .iter()
            .zip(vs)
            .map(|(&k, &v)| Ok((str_arg(k, "key")?.to_string(), str_arg(v, "value")?.to_string())))
            .collect::<Result<Vec<_>, Fail>>()?;
        seq.points.push(TouchPoint::new(channel, timestamp, click, cost, extra));
        Ok(())
    })
}

/// Number of touch points; 0 for NULL.
///
/// # Safety
/// `seq` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn mta_sequence_len(seq: *const MtaSequence) -> usize {
    seq.as_ref().map_or(0, |s| s.0.points.len())
}

/// # Safety
/// `seq` must come from [`mta_sequence_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mta_sequence_free(seq: *mut MtaSequence) {
    if !seq.is_null() {
        drop(Box::from_raw(seq));
    }
}

// ---- model ----

/// A trained model with its feature vocabulary.
pub struct MtaModel {
    params: DarnnParams,
    vocab: FeatureVocab,
}

/// Loads a model directory written by `mta train`.
///
/// # Safety
/// `dir` must be a valid string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mta_model_load(dir: *const c_char, out: *mut *mut MtaModel) -> MtaStatus {
    guard(|| {
        let dir = Path::new(str_arg(dir, "dir")?);
        let out = mut_arg(out, "out")?;
        let (params, manifest) = load_model(dir)?;
        let vocab = FeatureVocab::load(&dir.join(&manifest.vocab))?;
        *out = Box::into_raw(Box::new(MtaModel { params, vocab }));
        Ok(())
    })
}

/// Conversion probability of `seq`. When `credits` is non-NULL it receives
/// one credit per touch point and must hold at least `capacity` doubles;
/// a shorter buffer yields `BufferTooSmall`. `lambda` may be NULL.
///
/// # Safety
/// Handles must be live; output pointers must be writable where non-NULL.
#[no_mangle]
pub unsafe extern "C" fn mta_model_predict(
    model: *const MtaModel,
    seq: *const MtaSequence,
    prob: *mut f64,
    credits: *mut f64,
    capacity: usize,
    lambda: *mut f64,
) -> MtaStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let s = &ref_arg(seq, "seq")?.0;
        if s.points.is_empty() {
            return fail(MtaStatus::InvalidArgument, "sequence has no touch points");
        }
        let (p, rec) = predict_conversion(&m.params, s, &m.vocab)?;
        if !credits.is_null() {
            if capacity < rec.attr.len() {
                return fail(
                    MtaStatus::BufferTooSmall,
                    format!("{} credits, buffer holds {capacity}", rec.attr.len()),
                );
            }
            std::slice::from_raw_parts_mut(credits, rec.attr.len()).copy_from_slice(&rec.attr);
        }
        if let Some(l) = lambda.as_mut() {
            *l = rec.lambda;
        }
        *mut_arg(prob, "prob")? = p;
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mta_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mta_model_free(model: *mut MtaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- replay ----

/// Streaming budget replay.
pub struct MtaReplay(Replayer);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MtaReplayReport {
    pub budget: f64,
    pub conversions: u64,
    pub cost: f64,
    pub blacklisted: u64,
    pub touched: u64,
}

/// Starts a replay with the given per-channel budgets. Channels not listed
/// have budget 0.
///
/// # Safety
/// `channels` and `budgets` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mta_replay_new(
    channels: *const *const c_char,
    budgets: *const f64,
    n: usize,
    out: *mut *mut MtaReplay,
) -> MtaStatus {
    guard(|| {
        let names = slice_arg(channels, n, "channels")?;
        let amounts = slice_arg(budgets, n, "budgets")?;
        let mut plan = BudgetPlan {
            total: 0.0,
            budgets: Default::default(),
        };
        for (&c, &b) in names.iter().zip(amounts) {
            if !(b >= 0.0) {
                return fail(MtaStatus::InvalidArgument, format!("budget {b}"));
            }
            plan.budgets.insert(str_arg(c, "channel name")?.to_string(), b);
            plan.total += b;
        }
        *mut_arg(out, "out")? = Box::into_raw(Box::new(MtaReplay(Replayer::new(&plan))));
        Ok(())
    })
}

/// Feeds one event; events must arrive in time order.
///
/// # Safety
/// `replay` must be live; strings must be valid.
#[no_mangle]
pub unsafe extern "C" fn mta_replay_push(
    replay: *mut MtaReplay,
    sequence_id: *const c_char,
    timestamp: i64,
    channel: *const c_char,
    cost: f64,
    converted: bool,
) -> MtaStatus {
    guard(|| {
        let r = mut_arg(replay, "replay")?;
        let e = ReplayEvent {
            sequence_id: str_arg(sequence_id, "sequence_id")?.to_string(),
            timestamp,
            channel: str_arg(channel, "channel")?.to_string(),
            cost,
            y: converted,
        };
        r.0.push(&e)?;
        Ok(())
    })
}

/// # Safety
/// `replay` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mta_replay_report(replay: *const MtaReplay, out: *mut MtaReplayReport) -> MtaStatus {
    guard(|| {
        let r = ref_arg(replay, "replay")?.0.report();
        *mut_arg(out, "out")? = MtaReplayReport {
            budget: r.budget,
            conversions: r.conversions as u64,
            cost: r.cost,
            blacklisted: r.blacklisted as u64,
            touched: r.touched as u64,
        };
        Ok(())
    })
}

/// # Safety
/// `replay` must come from [`mta_replay_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mta_replay_free(replay: *mut MtaReplay) {
    if !replay.is_null() {
        drop(Box::from_raw(replay));
    }
}
