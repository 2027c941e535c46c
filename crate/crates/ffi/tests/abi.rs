use std::ffi::{CStr, CString};
use std::ptr;

use silt_ffi::*;

fn last_error() -> String {
    let p = silt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn two_site_green_matches_closed_form() {
    unsafe {
        let mut law = ptr::null_mut();
        assert_eq!(silt_law_nearest_neighbor(1, &mut law), SiltStatus::Ok);
        let mut k = ptr::null_mut();
        assert_eq!(silt_green_new(law, 2, 1.0, &mut k), SiltStatus::Ok);
        let mut g = 0.0;
        assert_eq!(silt_green_value(k, [0, 0, 0].as_ptr(), [0, 0, 0].as_ptr(), &mut g), SiltStatus::Ok);
        assert!((g - 2.0 / 3.0).abs() < 1e-15);

        let mut n = 0;
        assert_eq!(silt_green_len(k, &mut n), SiltStatus::Ok);
        assert_eq!(n, 2);
        let h = [1.0, -0.5];
        let (mut gh, mut back) = ([0.0; 2], [0.0; 2]);
        assert_eq!(silt_green_apply(k, h.as_ptr(), gh.as_mut_ptr(), 2), SiltStatus::Ok);
        assert_eq!(silt_green_apply_inverse(k, gh.as_ptr(), back.as_mut_ptr(), 2), SiltStatus::Ok);
        assert!((back[0] - h[0]).abs() < 1e-14 && (back[1] - h[1]).abs() < 1e-14);
        assert_eq!(silt_green_apply(k, h.as_ptr(), gh.as_mut_ptr(), 3), SiltStatus::InvalidArgument);

        silt_green_free(k);
        silt_law_free(law);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut law = ptr::null_mut();
        assert_eq!(silt_law_power_tail(1, 2.5, 0, &mut law), SiltStatus::InvalidLaw);
        assert!(law.is_null());
        assert!(!last_error().is_empty());

        assert_eq!(silt_law_finite_range(1, ptr::null_mut()), SiltStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut v = 0.0;
        let mut cert = 0;
        let s = silt_rho_whole_space(2, 1.0, 2.0, 1.0, 1.0, 16.0, 64, &mut v, &mut cert);
        assert_eq!(s, SiltStatus::NotSubcritical);

        assert_eq!(silt_law_sigma(ptr::null(), &mut v), SiltStatus::NullPointer);
        silt_law_free(ptr::null_mut());
        silt_green_free(ptr::null_mut());
    }
}

#[test]
fn law_from_toml_round_trips_sigma() {
    unsafe {
        let text = CString::new("kind = \"finite-range\"\nalpha = 2.0\ndim = 1\n").unwrap();
        let mut law = ptr::null_mut();
        assert_eq!(silt_law_from_toml(text.as_ptr(), &mut law), SiltStatus::Ok);
        let (mut sigma, mut dim, mut alpha) = (0.0, 0, 0.0);
        assert_eq!(silt_law_sigma(law, &mut sigma), SiltStatus::Ok);
        assert_eq!(silt_law_shape(law, &mut dim, &mut alpha), SiltStatus::Ok);
        assert_eq!((dim, alpha), (1, 2.0));
        let mut direct = ptr::null_mut();
        assert_eq!(silt_law_finite_range(1, &mut direct), SiltStatus::Ok);
        let mut s2 = 0.0;
        silt_law_sigma(direct, &mut s2);
        assert_eq!(sigma, s2);
        silt_law_free(law);
        silt_law_free(direct);
    }
}

#[test]
fn run_config_reports_refusal_and_success() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().join("run").to_str().unwrap()).unwrap();
    let good = CString::new(
        "seed = 1\n[law]\nkind = \"finite-range\"\nalpha = 2.0\ndim = 1\n\
         [experiment]\nkind = \"green-scan\"\nr = 8.0\na = 1.0\nbetas = [8.0, 16.0, 32.0, 64.0]\n",
    )
    .unwrap();
    let mut code = -1;
    unsafe {
        assert_eq!(silt_run_config(good.as_ptr(), out.as_ptr(), 2, &mut code), SiltStatus::Ok);
    }
    assert_eq!(code, 0);
    assert!(dir.path().join("run/results.csv").exists());

    let empty = CString::new(good.to_str().unwrap().replace("[8.0, 16.0, 32.0, 64.0]", "[]")).unwrap();
    unsafe {
        assert_eq!(silt_run_config(empty.as_ptr(), out.as_ptr(), 0, &mut code), SiltStatus::ConfigRefused);
    }
    assert!(last_error().contains("empty grid"));
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(silt_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
