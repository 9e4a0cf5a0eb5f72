use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use tribeflow::corpus::dedup_revisits;
use tribeflow::model_io;
use tribeflow::predict::{self, Query};
use tribeflow::sampler::{train, TrainConfig};
use tribeflow::synth::{generate, SynthConfig};
use tribeflow::windows::build_windows;
use tribeflow::Model;
use tribeflow_ffi::*;

fn trained(dir: &Path) -> (Model, PathBuf) {
    let data = generate(&SynthConfig { users: 12, groups: 3, items_per_group: 6, days: 2, seed: 8, ..SynthConfig::default() }).unwrap();
    let log = dedup_revisits(&data.log);
    let ws = build_windows(&log, 1).unwrap();
    let config = TrainConfig { k_init: 3, iterations: 20, adapt_every: 0, seed: 8, log_every: 0, ..TrainConfig::default() };
    let model = train(&ws, &config).unwrap().with_dictionaries(log.users.clone(), log.items.clone()).unwrap();
    let path = dir.join("model.tf");
    model_io::save(&model, &path).unwrap();
    (model, path)
}

fn load(path: &Path) -> *mut TfModel {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { tf_model_load(c.as_ptr(), &mut handle) }, TfStatus::Ok);
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tf_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn answers_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = trained(dir.path());
    let h = load(&path);
    unsafe {
        assert_eq!(tf_model_num_envs(h), model.k);
        assert_eq!(tf_model_num_items(h), model.n_items);
        assert_eq!(tf_model_num_users(h), model.n_users);

        let mut id = 0u32;
        let name = CString::new(model.items.name(3).unwrap()).unwrap();
        assert_eq!(tf_model_item_id(h, name.as_ptr(), &mut id), TfStatus::Ok);
        assert_eq!(id, 3);
        let mut uid = 0u32;
        let uname = CString::new(model.users.name(2).unwrap()).unwrap();
        assert_eq!(tf_model_user_id(h, uname.as_ptr(), &mut uid), TfStatus::Ok);
        assert_eq!(uid, 2);

        let history = [1u32, 3];
        let taus = [25.0f64];
        let q = TfQuery {
            user: 2,
            history: history.as_ptr(),
            history_len: 2,
            taus: taus.as_ptr(),
            taus_len: 1,
            candidates: ptr::null(),
            candidates_len: 0,
        };
        let reference = Query { user: Some(2), history: history.to_vec(), taus: taus.to_vec(), candidates: None };

        let mut items = [0u32; 5];
        let mut scores = [0f64; 5];
        let mut n = 0usize;
        assert_eq!(tf_rank(h, &q, items.as_mut_ptr(), scores.as_mut_ptr(), 5, &mut n), TfStatus::Ok);
        assert_eq!(n, 5);
        let expected = predict::rank_candidates(&model, &reference).unwrap();
        for j in 0..5 {
            assert_eq!((items[j], scores[j]), expected[j]);
        }

        let mut probs = vec![0f64; model.n_items];
        assert_eq!(tf_next_item_likelihood(h, &q, probs.as_mut_ptr(), probs.len(), &mut n), TfStatus::Ok);
        assert_eq!(n, model.n_items);
        let expected: Vec<f64> = predict::next_item_likelihood(&model, &reference).unwrap().into_iter().map(|p| p.1).collect();
        assert_eq!(probs, expected);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut post = vec![0f64; model.k];
        assert_eq!(tf_env_posterior(h, &q, post.as_mut_ptr(), post.len(), &mut n), TfStatus::Ok);
        assert_eq!(post, predict::env_posterior(&model, &reference).unwrap());

        let mut p = 0.0;
        assert_eq!(tf_pairwise_likelihood(h, 1, 4, &mut p), TfStatus::Ok);
        assert_eq!(p, predict::pairwise_likelihood(&model, 1, 4));

        let mut buf = [0 as std::ffi::c_char; 64];
        assert_eq!(tf_model_item_name(h, 3, buf.as_mut_ptr(), buf.len(), &mut n), TfStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), model.items.name(3).unwrap());
        assert_eq!(n, model.items.name(3).unwrap().len());

        tf_model_free(h);
    }
}

#[test]
fn errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = trained(dir.path());
    let h = load(&path);
    unsafe {
        let mut handle = ptr::null_mut();
        let missing = CString::new(dir.path().join("nope.tf").to_str().unwrap()).unwrap();
        assert_eq!(tf_model_load(missing.as_ptr(), &mut handle), TfStatus::Io);
        assert!(handle.is_null());
        assert!(!last_error().is_empty());

        let junk = dir.path().join("junk.tf");
        std::fs::write(&junk, b"junk").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(tf_model_load(junk.as_ptr(), &mut handle), TfStatus::Format);
        assert_eq!(tf_model_load(ptr::null(), &mut handle), TfStatus::NullPointer);

        let mut id = 0;
        let unknown = CString::new("no such item").unwrap();
        assert_eq!(tf_model_item_id(h, unknown.as_ptr(), &mut id), TfStatus::UnknownItem);
        assert!(last_error().contains("no such item"));
        assert_eq!(tf_model_item_id(ptr::null(), unknown.as_ptr(), &mut id), TfStatus::NullPointer);

        let history = [0u32];
        let mut q = TfQuery { user: -1, history: history.as_ptr(), history_len: 1, taus: ptr::null(), taus_len: 0, candidates: ptr::null(), candidates_len: 0 };
        let mut small = [0f64; 1];
        let mut n = 0;
        assert_eq!(tf_next_item_likelihood(h, &q, small.as_mut_ptr(), 1, &mut n), TfStatus::BufferTooSmall);
        assert_eq!(n, model.n_items);

        q.user = model.n_users as i64;
        assert_eq!(tf_env_posterior(h, &q, small.as_mut_ptr(), 1, &mut n), TfStatus::InvalidArgument);
        q.user = -1;
        q.history_len = 0;
        assert_eq!(tf_env_posterior(h, &q, small.as_mut_ptr(), 1, &mut n), TfStatus::InvalidArgument);

        let mut p = 0.0;
        assert_eq!(tf_pairwise_likelihood(h, 0, model.n_items as u32, &mut p), TfStatus::UnknownItem);
        assert_eq!(tf_pairwise_likelihood(h, 0, 1, &mut p), TfStatus::Ok);
        assert!(last_error().is_empty());

        assert_eq!(CStr::from_ptr(tf_status_string(TfStatus::BufferTooSmall)).to_str().unwrap(), "buffer too small");
        assert_eq!(tf_model_num_envs(ptr::null()), 0);
        tf_model_free(ptr::null_mut());
        tf_model_free(h);
    }
}

#[test]
fn c_program_uses_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let (model, path) = trained(dir.path());
    let crate_dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    // integration tests live in target/<profile>/deps
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libtribeflow_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = dir.path().join("probe");
    let status = std::process::Command::new("cc")
        .arg(crate_dir.join("tests/probe.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = std::process::Command::new(&exe).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let top = predict::rank_candidates(&model, &Query { user: None, history: vec![0], ..Query::default() }).unwrap()[0].0;
    assert_eq!(text.trim(), format!("envs={} items={} top={top}", model.k, model.n_items));
}
