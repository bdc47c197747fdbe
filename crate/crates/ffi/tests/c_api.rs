use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use maslov_stab_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        ms_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn pt(c: f64, m: f64) -> *mut MsProblem {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ms_problem_poeschl_teller(c, m, &mut p) }, MsStatus::Ok);
    assert!(!p.is_null());
    p
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ms_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        assert_eq!(ms_problem_poeschl_teller(1.0, 2.0, ptr::null_mut()), MsStatus::NullPointer);
        assert_eq!(ms_problem_from_file(ptr::null(), ptr::null_mut()), MsStatus::NullPointer);
        let mut n = 0;
        assert_eq!(ms_problem_dimension(ptr::null(), &mut n), MsStatus::NullPointer);
        assert!(last_error().contains("null"));
        ms_problem_free(ptr::null_mut());
    }
}

#[test]
fn invalid_parameters_map_to_usage_status() {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ms_problem_poeschl_teller(-1.0, 2.0, &mut p) }, MsStatus::InvalidArgument);
    assert!(p.is_null());
    assert!(last_error().contains("c > 0"));
}

#[test]
fn missing_file_is_a_usage_error() {
    let path = CString::new("/nonexistent/problem.toml").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { ms_problem_from_file(path.as_ptr(), &mut p) }, MsStatus::InvalidArgument);
    assert!(last_error().contains("/nonexistent/problem.toml"));
}

#[test]
fn file_problem_dimension() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/problems/pt_block.json");
    let path = CString::new(path.to_str().unwrap()).unwrap();
    let mut p = ptr::null_mut();
    unsafe {
        assert_eq!(ms_problem_from_file(path.as_ptr(), &mut p), MsStatus::Ok, "{}", last_error());
        let mut n = 0;
        assert_eq!(ms_problem_dimension(p, &mut n), MsStatus::Ok);
        assert_eq!(n, 2);
        ms_problem_free(p);
    }
}

#[test]
fn conjugate_points_with_buffer_protocol() {
    let p = pt(0.5, 2.0);
    unsafe {
        let mut len = 0;
        assert_eq!(ms_conjugate_points(p, 10.0, ptr::null_mut(), 0, &mut len), MsStatus::BufferTooSmall);
        assert_eq!(len, 2);
        let mut buf = vec![MsCrossing::default(); len];
        assert_eq!(ms_conjugate_points(p, 10.0, buf.as_mut_ptr(), buf.len(), &mut len), MsStatus::Ok);
        assert!(buf.iter().all(|c| c.multiplicity == 1 && c.signature == 1));
        assert!(buf[0].location < buf[1].location);
        assert_eq!(ms_conjugate_points(p, -1.0, buf.as_mut_ptr(), buf.len(), &mut len), MsStatus::InvalidArgument);
        ms_problem_free(p);
    }
}

#[test]
fn morse_counts_agree_for_poeschl_teller() {
    let p = pt(1.0, 2.0);
    let mut counts = MsMorseCounts::default();
    unsafe {
        assert_eq!(ms_morse_counts(p, &mut counts), MsStatus::Ok, "{}", last_error());
        ms_problem_free(p);
    }
    assert_eq!((counts.maslov, counts.oracle, counts.evans, counts.consistent), (1, 1, 1, 1));
}

#[test]
fn pulse_verdict() {
    let mut p = ptr::null_mut();
    let mut verdict = MsVerdict::Inconclusive;
    let mut morse = 0;
    unsafe {
        assert_eq!(ms_problem_scalar_pulse(0.0, &mut p), MsStatus::Ok);
        assert_eq!(ms_pulse_verdict(p, &mut verdict, &mut morse), MsStatus::Ok, "{}", last_error());
        ms_problem_free(p);
    }
    assert_eq!((verdict, morse), (MsVerdict::Unstable, 1));

    let q = pt(1.0, 2.0);
    unsafe {
        assert_eq!(ms_pulse_verdict(q, &mut verdict, &mut morse), MsStatus::InvalidArgument);
        ms_problem_free(q);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/maslov_stab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["ms_problem_from_file", "ms_morse_counts", "ms_conjugate_points", "ms_last_error", "MS_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"maslov_stab.h\"\nint main(void) { MsProblem *p = 0; MsCrossing c; (void)c;\n\
         return ms_problem_poeschl_teller(1.0, 2.0, &p) == MS_STATUS_OK ? 0 : 1; }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("cc unavailable, syntax check skipped: {e}"),
    }
}
