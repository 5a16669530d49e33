use std::ffi::{CStr, CString};
use std::ptr;

use mechprior_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mp_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn mechanism_round_trip() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mp_mechanism_generate(MpKind::Slider, 7, &mut m), MpStatus::Ok);
        assert!(!m.is_null());
        let mut a = [0.0; 2];
        let mut r_star = 0.0;
        assert_eq!(mp_mechanism_optimal(m, a.as_mut_ptr(), 2, &mut r_star), MpStatus::Ok);
        let mut r = -1.0;
        assert_eq!(mp_mechanism_execute(m, a.as_ptr(), 2, &mut r), MpStatus::Ok);
        assert_eq!(r, r_star);

        let lib = mechprior::mechanism::Mechanism::generate(mechprior::mechanism::MechanismKind::Slider, 7);
        assert_eq!(r_star, lib.optimal().1);

        let n = mp_image_size() * mp_image_size();
        let mut pixels = vec![0.0; n];
        assert_eq!(mp_mechanism_render(m, pixels.as_mut_ptr(), n), MpStatus::Ok);
        assert_eq!(pixels, lib.render().pixels());
        assert_eq!(mp_mechanism_render(m, pixels.as_mut_ptr(), n - 1), MpStatus::BufferTooSmall);

        let (mut lo, mut hi) = ([0.0; 2], [0.0; 2]);
        assert_eq!(mp_mechanism_bounds(m, lo.as_mut_ptr(), hi.as_mut_ptr(), 2), MpStatus::Ok);
        assert!(lo[0] < hi[0] && lo[1] < hi[1]);
        mp_mechanism_free(m);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(mp_mechanism_generate(MpKind::Door, 1, &mut m), MpStatus::Ok);
        let mut r = 0.0;
        let bad = [10.0, 0.0, 0.0];
        assert_eq!(mp_mechanism_execute(m, bad.as_ptr(), 3, &mut r), MpStatus::OutOfBounds);
        assert!(last_error().contains("out of bounds"));
        let short = [0.1, 0.0];
        assert_eq!(mp_mechanism_execute(m, short.as_ptr(), 2, &mut r), MpStatus::DimensionMismatch);
        assert_eq!(mp_mechanism_execute(ptr::null(), short.as_ptr(), 2, &mut r), MpStatus::NullPointer);
        let ok = [0.1, 0.0, 0.0];
        assert_eq!(mp_mechanism_execute(m, ok.as_ptr(), 3, &mut r), MpStatus::Ok);
        assert_eq!(last_error(), "");
        mp_mechanism_free(m);
        mp_mechanism_free(ptr::null_mut());
    }
}

#[test]
fn gp_has_value_semantics() {
    unsafe {
        let ls = [0.5, 0.5];
        let mut g0 = ptr::null_mut();
        assert_eq!(mp_gp_new(ls.as_ptr(), 2, 0.04, 1e-6, &mut g0), MpStatus::Ok);
        let a = [0.1, 0.2];
        let mut g1 = ptr::null_mut();
        assert_eq!(mp_gp_add_observation(g0, a.as_ptr(), 2, 0.3, &mut g1), MpStatus::Ok);
        assert_eq!(mp_gp_len(g0), 0);
        assert_eq!(mp_gp_len(g1), 1);
        let (mut mean, mut var) = (0.0, 0.0);
        assert_eq!(mp_gp_posterior(g1, a.as_ptr(), 2, &mut mean, &mut var), MpStatus::Ok);
        assert!((mean - 0.3).abs() < 1e-3);
        let mut s = 0.0;
        assert_eq!(mp_gp_ucb_score(g0, 0.4, a.as_ptr(), 2, 4.0, &mut s), MpStatus::Ok);
        assert!((s - 0.8).abs() < 1e-12);
        assert_eq!(mp_gp_ucb_score(g0, 0.4, a.as_ptr(), 2, -1.0, &mut s), MpStatus::InvalidArgument);
        let bad = [-1.0, 0.5];
        let mut g2 = ptr::null_mut();
        assert_eq!(mp_gp_new(bad.as_ptr(), 2, 0.04, 1e-6, &mut g2), MpStatus::InvalidArgument);
        assert!(g2.is_null());
        mp_gp_free(g0);
        mp_gp_free(g1);
    }
}

#[test]
fn weights_save_load_predict() {
    let dir = tempfile::tempdir().unwrap();
    let file = CString::new(dir.path().join("w.json").to_str().unwrap()).unwrap();
    unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(mp_weights_init(3, &mut w), MpStatus::Ok);
        assert_eq!(mp_weights_save(w, file.as_ptr()), MpStatus::Ok);
        let mut w2 = ptr::null_mut();
        assert_eq!(mp_weights_load(file.as_ptr(), &mut w2), MpStatus::Ok);
        let mut m = ptr::null_mut();
        assert_eq!(mp_mechanism_generate(MpKind::Slider, 2, &mut m), MpStatus::Ok);
        let a = [0.3, 0.2];
        let (mut p1, mut p2) = (0.0, 1.0);
        assert_eq!(mp_weights_predict(w, m, a.as_ptr(), 2, &mut p1), MpStatus::Ok);
        assert_eq!(mp_weights_predict(w2, m, a.as_ptr(), 2, &mut p2), MpStatus::Ok);
        assert_eq!(p1, p2);
        assert!(mp_weights_param_count() > 0);

        let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
        let mut w3 = ptr::null_mut();
        assert_eq!(mp_weights_load(missing.as_ptr(), &mut w3), MpStatus::Io);
        assert!(!last_error().is_empty());
        mp_weights_free(w);
        mp_weights_free(w2);
        mp_mechanism_free(m);
    }
}

#[test]
fn header_declares_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mechprior.h")).unwrap();
    for name in [
        "typedef struct MpMechanism MpMechanism",
        "typedef struct MpGp MpGp",
        "typedef struct MpWeights MpWeights",
        "mp_last_error_message",
        "mp_mechanism_execute",
        "mp_gp_add_observation",
        "mp_weights_predict",
        "MP_STATUS_OUT_OF_BOUNDS",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    assert_eq!(mp_action_dim(MpKind::Door), 3);
    let v = unsafe { CStr::from_ptr(mp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
