use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use sedm::model::{checkpoint, ModelConfig, Sedm};
use sedm_ffi::*;

fn small_model() -> Sedm {
    let cfg = ModelConfig {
        n_blocks: 2,
        channels: 4,
        steps: 2,
        ..ModelConfig::default()
    };
    Sedm::new(cfg, 3).unwrap()
}

fn last_error() -> String {
    let p = sedm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tone(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.3 * (i as f64 * 0.07).sin()).collect()
}

#[test]
fn load_enhance_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sedm");
    let model = small_model();
    checkpoint::save(&model, &path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(sedm_model_load(c_path.as_ptr(), &mut handle), SedmStatus::Ok);
        assert!(sedm_last_error().is_null());
        assert_eq!(sedm_model_steps(handle), 2);
        let input = tone(8000);
        let mut out = vec![0.0; input.len()];
        let s = sedm_enhance(handle, input.as_ptr(), input.len(), out.as_mut_ptr(), out.len());
        assert_eq!(s, SedmStatus::Ok);
        let expected = sedm::experiment::enhance_waveform(
            &model,
            &sedm::dsp::Waveform::new(input.clone(), sedm_sample_rate()),
        )
        .unwrap();
        assert_eq!(out, expected.samples);

        let mut short = vec![0.0; 10];
        let s = sedm_enhance(handle, input.as_ptr(), input.len(), short.as_mut_ptr(), short.len());
        assert_eq!(s, SedmStatus::BufferTooSmall);
        assert!(last_error().contains("need 8000"));
        sedm_model_free(handle);
    }
}

#[test]
fn from_bytes_and_corruption() {
    let mut bytes = checkpoint::to_bytes(&small_model());
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(sedm_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut handle), SedmStatus::Ok);
        sedm_model_free(handle);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        let s = sedm_model_from_bytes(bytes.as_ptr(), bytes.len(), &mut handle);
        assert_eq!(s, SedmStatus::BadCheckpoint);
        assert!(handle.is_null());
        assert!(last_error().contains("CRC"));
    }
}

#[test]
fn null_and_missing_inputs() {
    let mut handle = ptr::null_mut();
    unsafe {
        assert_eq!(sedm_model_load(ptr::null(), &mut handle), SedmStatus::NullPointer);
        assert_eq!(sedm_model_load(ptr::null(), ptr::null_mut()), SedmStatus::NullPointer);
        let missing = CString::new("/nonexistent/model.sedm").unwrap();
        assert_eq!(sedm_model_load(missing.as_ptr(), &mut handle), SedmStatus::Io);
        assert!(!last_error().is_empty());
        let x = [0.0; 4];
        let mut y = [0.0; 4];
        assert_eq!(sedm_enhance(ptr::null(), x.as_ptr(), 4, y.as_mut_ptr(), 4), SedmStatus::NullPointer);
        assert_eq!(sedm_model_steps(ptr::null()), 0);
        sedm_model_free(ptr::null_mut());
    }
}

#[test]
fn si_sdr_matches_core() {
    let r = tone(4000);
    let e: Vec<f64> = r.iter().enumerate().map(|(i, v)| 2.0 * v + 0.01 * ((i * 7919) % 13) as f64 / 13.0).collect();
    let mut v = 0.0;
    unsafe {
        assert_eq!(sedm_si_sdr(r.as_ptr(), e.as_ptr(), r.len(), &mut v), SedmStatus::Ok);
        let w = |s: &[f64]| sedm::dsp::Waveform::new(s.to_vec(), 16_000);
        assert_eq!(v, sedm::metrics::si_sdr(&w(&r), &w(&e)).unwrap());
        let zeros = vec![0.0; 4000];
        assert_ne!(sedm_si_sdr(zeros.as_ptr(), e.as_ptr(), 4000, &mut v), SedmStatus::Ok);
        assert_eq!(sedm_si_sdr(r.as_ptr(), e.as_ptr(), 4000, ptr::null_mut()), SedmStatus::NullPointer);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(sedm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/sedm.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["sedm_model_load", "sedm_enhance", "sedm_model_free", "sedm_last_error", "SEDM_STATUS_OK"] {
        assert!(text.contains(sym), "{sym}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler, skipping syntax check");
        return;
    };
    assert!(status.success());
}
