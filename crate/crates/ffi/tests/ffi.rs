use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use discourse::corpus::{make_split, write_dataset, DiscourseLabel, MultimediaPost};
use discourse::pipeline::{fit, FeatureExtractor};
use discourse::classifier::Checkpoint;
use discourse_ffi::*;
use image::{Rgb, RgbImage};

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = discourse_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn write_corpus(dir: &Path, n: usize, inline_captions: bool) -> PathBuf {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let posts: Vec<MultimediaPost> = (0..n)
        .map(|i| {
            let label = DiscourseLabel::from_code(i % 5).unwrap();
            let v = (label.code() * 50) as u8;
            let img = RgbImage::from_fn(24, 20, |x, y| Rgb([v, ((x + y + i as u32) % 7 * 30) as u8, 255 - v]));
            let name = format!("images/q{i:02}.png");
            img.save(dir.join(&name)).unwrap();
            MultimediaPost {
                id: format!("q{i:02}"),
                text: format!("{} post number {i}", label.name()),
                image: name,
                caption: inline_captions.then(|| format!("a picture {i}")),
                label: Some(label),
            }
        })
        .collect();
    let path = dir.join("posts.jsonl");
    write_dataset(&path, &posts).unwrap();
    path
}

fn load(path: &Path) -> *mut DiscourseDataset {
    let mut ds = ptr::null_mut();
    let status = unsafe { discourse_dataset_load(cstr(path).as_ptr(), true, &mut ds) };
    assert_eq!(status, DiscourseStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn dataset_load_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let ds = load(&write_corpus(dir.path(), 15, true));
    unsafe {
        assert_eq!(discourse_dataset_len(ds), 15);
        let mut json = ptr::null_mut();
        assert_eq!(discourse_dataset_stats_json(ds, &mut json), DiscourseStatus::Ok);
        let value: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(value["total_count"], 15);
        assert_eq!(value["per_label"]["insertion"]["count"], 3);
        discourse_string_free(json);
        discourse_dataset_free(ds);
        assert_eq!(discourse_dataset_len(ptr::null()), 0);
    }
}

#[test]
fn load_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut ds = ptr::null_mut();
    let missing = cstr(&dir.path().join("nope.jsonl"));
    assert_eq!(unsafe { discourse_dataset_load(missing.as_ptr(), true, &mut ds) }, DiscourseStatus::Io);
    assert!(ds.is_null());
    assert!(last_error().contains("nope.jsonl"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\":\"a\",\"text\":\"t\",\"image\":\"a.png\",\"label\":\"sarcasm\"}\n").unwrap();
    assert_eq!(unsafe { discourse_dataset_load(cstr(&bad).as_ptr(), true, &mut ds) }, DiscourseStatus::Parse);
    assert!(last_error().contains("sarcasm"));

    assert_eq!(unsafe { discourse_dataset_load(ptr::null(), true, &mut ds) }, DiscourseStatus::NullPointer);
    assert_eq!(
        unsafe { discourse_dataset_load(missing.as_ptr(), true, ptr::null_mut()) },
        DiscourseStatus::NullPointer
    );
}

#[test]
fn f1_report_worked_example() {
    // class 0: P 1/2 R 1 -> 66.67; class 1: P 1 R 2/3 -> 80; class 2: 100.
    // Weighted by support (1, 3, 1): (66.67 + 240 + 100) / 5.
    let preds = [0u8, 0, 1, 1, 2];
    let truths = [0u8, 1, 1, 1, 2];
    let mut per_class = [f64::NAN; 5];
    let mut weighted = f64::NAN;
    let status =
        unsafe { discourse_f1_report(preds.as_ptr(), truths.as_ptr(), 5, per_class.as_mut_ptr(), &mut weighted) };
    assert_eq!(status, DiscourseStatus::Ok);
    let expect = [200.0 / 3.0, 80.0, 100.0, 0.0, 0.0];
    for (got, want) in per_class.iter().zip(expect) {
        assert!((got - want).abs() < 1e-9, "{per_class:?}");
    }
    assert!((weighted - (200.0 / 3.0 + 240.0 + 100.0) / 5.0).abs() < 1e-9);

    let bad = [0u8, 7, 1, 1, 2];
    let status =
        unsafe { discourse_f1_report(bad.as_ptr(), truths.as_ptr(), 5, per_class.as_mut_ptr(), &mut weighted) };
    assert_eq!(status, DiscourseStatus::InvalidArgument);
    assert!(last_error().contains('7'));
}

#[test]
fn class_weights_inverse_frequency() {
    let counts = [10usize, 20, 30, 40, 50];
    let mut w = [0.0; 5];
    assert_eq!(unsafe { discourse_class_weights(counts.as_ptr(), w.as_mut_ptr()) }, DiscourseStatus::Ok);
    for (got, want) in w.iter().zip([3.0, 1.5, 1.0, 0.75, 0.6]) {
        assert!((got - want).abs() < 1e-12, "{w:?}");
    }
    let counts = [10usize, 20, 30, 40, 0];
    assert_ne!(unsafe { discourse_class_weights(counts.as_ptr(), w.as_mut_ptr()) }, DiscourseStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn significance_identical_and_seeded() {
    let truths: Vec<u8> = (0..60).map(|i| (i % 5) as u8).collect();
    let a: Vec<u8> = truths.iter().enumerate().map(|(i, &t)| if i % 4 == 0 { (t + 1) % 5 } else { t }).collect();
    let b: Vec<u8> = truths.iter().enumerate().map(|(i, &t)| if i % 2 == 0 { (t + 2) % 5 } else { t }).collect();
    let mut p = f64::NAN;
    let run = |x: &[u8], y: &[u8], p: &mut f64| unsafe {
        discourse_significance(x.as_ptr(), y.as_ptr(), truths.as_ptr(), truths.len(), 2000, 9, p)
    };
    assert_eq!(run(&a, &a, &mut p), DiscourseStatus::Ok);
    assert_eq!(p, 1.0);
    assert_eq!(run(&a, &b, &mut p), DiscourseStatus::Ok);
    let first = p;
    assert!((0.0..=1.0).contains(&first));
    assert!(first < 0.05, "a is clearly better than b, p={first}");
    assert_eq!(run(&a, &b, &mut p), DiscourseStatus::Ok);
    assert_eq!(p, first);
}

#[test]
fn model_predict_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = write_corpus(dir.path(), 30, true);
    let data = discourse::load_dataset(&data_path, true).unwrap();
    let split = make_split(&data.posts, 3).unwrap();
    let mut cfg = discourse::RunConfig::default();
    cfg.apply_str("hidden = 8\nheads = 2\ngrid-size = 2\nimage-channels = 4\nepochs = 2\nbatch-size = 8\n")
        .unwrap();
    let result = fit(&cfg, &data, &split).unwrap();
    let ck_dir = dir.path().join("ck");
    Checkpoint::new(
        &result.outcome.model,
        &cfg.train,
        &cfg.text_backend,
        &cfg.image_backend,
        Some(split.seed),
        result.outcome.best_epoch,
        result.outcome.class_weights,
    )
    .save(&ck_dir)
    .unwrap();

    let extractor = FeatureExtractor::from_config(&cfg).unwrap();
    let id = split.test[0].clone();
    let encoded = extractor.encode(&data, std::slice::from_ref(&id)).unwrap();
    let (_, want) = result.outcome.model.forward(&encoded[0]).unwrap();

    unsafe {
        let ds = load(&data_path);
        let mut model = ptr::null_mut();
        assert_eq!(discourse_model_load(cstr(&ck_dir).as_ptr(), ptr::null(), &mut model), DiscourseStatus::Ok);
        let mut probs = [0.0; 5];
        let mut label = 99u8;
        let post = CString::new(id).unwrap();
        let status = discourse_model_predict(model, ds, post.as_ptr(), probs.as_mut_ptr(), &mut label);
        assert_eq!(status, DiscourseStatus::Ok);
        assert_eq!(probs.as_slice(), want.as_slice());
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = (0..5).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        assert_eq!(label as usize, best);

        let ghost = CString::new("zz").unwrap();
        let status = discourse_model_predict(model, ds, ghost.as_ptr(), probs.as_mut_ptr(), &mut label);
        assert_eq!(status, DiscourseStatus::InvalidArgument);
        assert!(last_error().contains("zz"));
        assert_eq!(
            discourse_model_predict(ptr::null(), ds, post.as_ptr(), probs.as_mut_ptr(), &mut label),
            DiscourseStatus::NullPointer
        );
        discourse_model_free(model);
        discourse_dataset_free(ds);
    }
}

#[test]
fn model_load_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    let path = cstr(&dir.path().join("absent"));
    let status = unsafe { discourse_model_load(path.as_ptr(), ptr::null(), &mut model) };
    assert_ne!(status, DiscourseStatus::Ok);
    assert!(model.is_null());
}

#[test]
fn label_names() {
    let name = |c| unsafe { CStr::from_ptr(discourse_label_name(c)) }.to_str().unwrap();
    assert_eq!(name(0), "insertion");
    assert_eq!(name(4), "extension");
    for code in 0..5u8 {
        assert_eq!(name(code), DiscourseLabel::from_code(code as usize).unwrap().name());
    }
    assert!(discourse_label_name(5).is_null());
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/discourse.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert_eq!(exports.len(), 13);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct DiscourseModel DiscourseModel;"));
    assert!(header.contains("DISCOURSE_STATUS_PANIC = 8"));
}
