use std::ffi::{CStr, CString};
use std::ptr;

use mta_core::darnn::{save_model, DarnnConfig, DarnnParams, InputDims};
use mta_core::seqdata::{build_vocab, Sequence, TouchPoint};
use mta_ffi::*;

fn last_error() -> String {
    let p = mta_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn metrics_match_core() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut out = 0.0;
    assert_eq!(
        unsafe { mta_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out) },
        MtaStatus::Ok
    );
    assert_eq!(out, 0.75);
    assert!(mta_last_error().is_null());

    let mut ll = 0.0;
    assert_eq!(
        unsafe { mta_logloss(scores.as_ptr(), labels.as_ptr(), 4, &mut ll) },
        MtaStatus::Ok
    );
    let want = -((0.9f64).ln() + (0.6f64).ln() + (0.35f64).ln() + (0.8f64).ln()) / 4.0;
    assert!((ll - want).abs() < 1e-12);

    let one_class = [1u8; 4];
    assert_eq!(
        unsafe { mta_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut out) },
        MtaStatus::UndefinedMetric
    );
    assert!(last_error().contains("AUC"));
    assert_eq!(
        unsafe { mta_auc(ptr::null(), labels.as_ptr(), 4, &mut out) },
        MtaStatus::NullPointer
    );
}

#[test]
fn allocation_is_proportional() {
    let names = [c("a"), c("b"), c("c")];
    let ptrs: Vec<_> = names.iter().map(|s| s.as_ptr()).collect();
    let roi = [1.0, 3.0, 0.0];
    let mut out = [0.0; 3];
    let st = unsafe { mta_allocate_budget(ptrs.as_ptr(), roi.as_ptr(), 3, 100.0, out.as_mut_ptr()) };
    assert_eq!(st, MtaStatus::Ok);
    assert_eq!(out, [25.0, 75.0, 0.0]);

    let dup = [ptrs[0], ptrs[0]];
    let st = unsafe { mta_allocate_budget(dup.as_ptr(), roi.as_ptr(), 2, 100.0, out.as_mut_ptr()) };
    assert_eq!(st, MtaStatus::InvalidArgument);
    let st = unsafe { mta_allocate_budget(ptrs.as_ptr(), roi.as_ptr(), 3, -1.0, out.as_mut_ptr()) };
    assert_eq!(st, MtaStatus::Config);
}

#[test]
fn replay_follows_strict_budget_rule() {
    let names = [c("a"), c("b")];
    let ptrs: Vec<_> = names.iter().map(|s| s.as_ptr()).collect();
    let budgets = [3.0, 10.0];
    let mut r = ptr::null_mut();
    assert_eq!(
        unsafe { mta_replay_new(ptrs.as_ptr(), budgets.as_ptr(), 2, &mut r) },
        MtaStatus::Ok
    );
    let push = |id: &str, ts: i64, ch: &str, cost: f64, y: bool| unsafe {
        mta_replay_push(r, c(id).as_ptr(), ts, c(ch).as_ptr(), cost, y)
    };
    assert_eq!(push("s1", 1, "a", 2.0, false), MtaStatus::Ok);
    // 1 remaining on `a`: not strictly greater than 1, so s2 is blacklisted.
    assert_eq!(push("s2", 2, "a", 1.0, false), MtaStatus::Ok);
    assert_eq!(push("s2", 3, "b", 1.0, true), MtaStatus::Ok);
    assert_eq!(push("s1", 4, "b", 0.0, true), MtaStatus::Ok);
    assert_eq!(push("s3", 5, "zz", 0.5, false), MtaStatus::Ok);
    assert_eq!(push("s4", 4, "b", 0.5, false), MtaStatus::Contract);
    assert!(last_error().contains("precedes"));

    let mut rep = MtaReplayReport::default();
    assert_eq!(unsafe { mta_replay_report(r, &mut rep) }, MtaStatus::Ok);
    assert_eq!(
        rep,
        MtaReplayReport {
            budget: 13.0,
            conversions: 1,
            cost: 2.0,
            blacklisted: 2,
            touched: 1,
        }
    );
    unsafe { mta_replay_free(r) };
}

fn trained_model_dir() -> (tempfile::TempDir, Vec<Sequence>) {
    let seqs: Vec<Sequence> = (0..4)
        .map(|i| Sequence {
            id: format!("s{i}"),
            user_id: format!("u{i}"),
            points: (0..3)
                .map(|j| {
                    let ch = if (i + j) % 2 == 0 { "a" } else { "b" };
                    TouchPoint::new(ch, 3600 * j, false, 1.0, vec![("device".into(), "mobile".into())])
                })
                .collect(),
            converted: i % 2 == 0,
            conversion_time: None,
        })
        .collect();
    let vocab = build_vocab(&seqs, 1).unwrap();
    let params = DarnnParams::init(&DarnnConfig::default(), InputDims::of(&vocab), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    vocab.save(&dir.path().join("vocab.tsv")).unwrap();
    save_model(&dir.path().join("m"), &params, "../vocab.tsv").unwrap();
    (dir, seqs)
}

#[test]
fn model_predicts_like_core() {
    let (dir, seqs) = trained_model_dir();
    let path = c(dir.path().join("m").to_str().unwrap());
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { mta_model_load(path.as_ptr(), &mut model) }, MtaStatus::Ok);

    let mut seq = ptr::null_mut();
    assert_eq!(unsafe { mta_sequence_new(c("s0").as_ptr(), &mut seq) }, MtaStatus::Ok);
    let (k, v) = (c("device"), c("mobile"));
    for p in &seqs[0].points {
        let st = unsafe {
            mta_sequence_push(
                seq,
                c(&p.channel).as_ptr(),
                p.timestamp,
                p.click,
                p.cost,
                &k.as_ptr(),
                &v.as_ptr(),
                1,
            )
        };
        assert_eq!(st, MtaStatus::Ok);
    }
    assert_eq!(unsafe { mta_sequence_len(seq) }, 3);

    let (mut prob, mut lambda) = (0.0, 0.0);
    let mut credits = [0.0; 3];
    let st = unsafe { mta_model_predict(model, seq, &mut prob, credits.as_mut_ptr(), 3, &mut lambda) };
    assert_eq!(st, MtaStatus::Ok);

    let (params, manifest) = mta_core::darnn::load_model(&dir.path().join("m")).unwrap();
    let vocab = mta_core::seqdata::FeatureVocab::load(&dir.path().join("m").join(manifest.vocab)).unwrap();
    let (want, rec) = mta_core::darnn::predict_conversion(&params, &seqs[0], &vocab).unwrap();
    assert_eq!(prob, want);
    assert_eq!(credits.to_vec(), rec.attr);
    assert_eq!(lambda, rec.lambda);
    assert!((credits.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut small = [0.0; 2];
    let st = unsafe { mta_model_predict(model, seq, &mut prob, small.as_mut_ptr(), 2, ptr::null_mut()) };
    assert_eq!(st, MtaStatus::BufferTooSmall);
    let st = unsafe { mta_model_predict(model, seq, &mut prob, ptr::null_mut(), 0, ptr::null_mut()) };
    assert_eq!(st, MtaStatus::Ok);

    let st = unsafe { mta_sequence_push(seq, c("a").as_ptr(), 0, false, 1.0, ptr::null(), ptr::null(), 0) };
    assert_eq!(st, MtaStatus::Contract);

    unsafe {
        mta_sequence_free(seq);
        mta_model_free(model);
    }
}

#[test]
fn missing_model_is_io_error() {
    let mut model = ptr::null_mut();
    let st = unsafe { mta_model_load(c("/nonexistent/model").as_ptr(), &mut model) };
    assert_eq!(st, MtaStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("model.toml"));
    unsafe { mta_model_free(ptr::null_mut()) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(mta_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
