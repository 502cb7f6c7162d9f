use std::ffi::{CStr, CString};
use std::ptr;

use stenoseg::config::RunConfig;
use stenoseg::models::{count_params, Model};
use stenoseg_ffi::*;

const CONFIG: &str = "model.variant = lightm_unet\ndata.size = 32\ntrain.seed = 3\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(steno_last_error()) }.to_string_lossy().into_owned()
}

fn build(text: &str) -> *mut StenoModel {
    let c = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { steno_model_build(c.as_ptr(), &mut m) }, StenoStatus::Ok, "{}", last_error());
    assert!(!m.is_null());
    m
}

#[test]
fn build_reports_count_and_size() {
    let m = build(CONFIG);
    let (mut n, mut size) = (0u64, 0usize);
    unsafe {
        assert_eq!(steno_model_param_count(m, &mut n), StenoStatus::Ok);
        assert_eq!(steno_model_input_size(m, &mut size), StenoStatus::Ok);
        steno_model_free(m);
    }
    let spec = RunConfig::parse(CONFIG).unwrap().model_spec();
    assert_eq!(n as usize, count_params(&spec).unwrap());
    assert_eq!(size, 32);
    assert_eq!(last_error(), "");
}

#[test]
fn predict_matches_library() {
    let m = build(CONFIG);
    let image: Vec<f32> = (0..32 * 32).map(|k| ((k * 37) % 101) as f32 / 100.0).collect();
    let mut mask = vec![7u8; 32 * 32];
    assert_eq!(unsafe { steno_model_predict(m, image.as_ptr(), 32, mask.as_mut_ptr()) }, StenoStatus::Ok);
    unsafe { steno_model_free(m) };
    assert!(mask.iter().all(|&v| v <= 1));

    let cfg = RunConfig::parse(CONFIG).unwrap();
    let model = Model::<f32>::build(&cfg.model_spec(), cfg.optim.seed).unwrap();
    let x = stenoseg::tensor::Tensor::new([1, 1, 32, 32], image).unwrap();
    let logits = stenoseg::train::predict_logits(&model, &x).unwrap();
    let per = stenoseg::train::split_batch(&logits).remove(0);
    let want = stenoseg::metrics::thresholded_mask(&per, cfg.train.threshold).unwrap();
    assert_eq!(mask, want.data());
}

#[test]
fn predict_rejects_wrong_size() {
    let m = build(CONFIG);
    let image = vec![0.0f32; 30 * 30];
    let mut mask = vec![0u8; 30 * 30];
    let status = unsafe { steno_model_predict(m, image.as_ptr(), 30, mask.as_mut_ptr()) };
    unsafe { steno_model_free(m) };
    assert_ne!(status, StenoStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn bad_config_names_key() {
    let c = CString::new("model.colour = red\n").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { steno_model_build(c.as_ptr(), &mut m) }, StenoStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("model.colour"), "{}", last_error());
}

#[test]
fn null_pointers_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { steno_model_build(ptr::null(), &mut m) }, StenoStatus::NullPointer);
    let mut n = 0u64;
    assert_eq!(unsafe { steno_model_param_count(ptr::null(), &mut n) }, StenoStatus::NullPointer);
    assert_eq!(unsafe { steno_prf1(ptr::null(), ptr::null_mut()) }, StenoStatus::NullPointer);
    unsafe { steno_model_free(ptr::null_mut()) };
}

#[test]
fn load_missing_checkpoint_is_io() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { steno_model_load(path.as_ptr(), &mut m) }, StenoStatus::Io);
}

#[test]
fn confusion_and_prf() {
    let pred = [1u8, 1, 0, 0, 1, 0];
    let gt = [1u8, 0, 1, 0, 1, 0];
    let mut c = StenoConfusion::default();
    assert_eq!(unsafe { steno_confusion(pred.as_ptr(), gt.as_ptr(), 6, &mut c) }, StenoStatus::Ok);
    assert_eq!(c, StenoConfusion { tp: 2, fp: 1, fn_: 1, tn: 2 });
    let mut p = StenoPrf::default();
    assert_eq!(unsafe { steno_prf1(&c, &mut p) }, StenoStatus::Ok);
    assert!((p.precision - 2.0 / 3.0).abs() < 1e-15 && (p.recall - 2.0 / 3.0).abs() < 1e-15);
    assert!((p.f1 - 2.0 / 3.0).abs() < 1e-15 && p.f1_defined);

    let empty = StenoConfusion { tp: 0, fp: 0, fn_: 0, tn: 9 };
    assert_eq!(unsafe { steno_prf1(&empty, &mut p) }, StenoStatus::Ok);
    assert!(!p.precision_defined && !p.recall_defined && !p.f1_defined);
}

#[test]
fn confusion_rejects_non_binary() {
    let pred = [2u8, 0];
    let gt = [1u8, 0];
    let mut c = StenoConfusion::default();
    assert_ne!(unsafe { steno_confusion(pred.as_ptr(), gt.as_ptr(), 2, &mut c) }, StenoStatus::Ok);
    assert!(!last_error().is_empty());
}
