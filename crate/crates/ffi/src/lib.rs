//! C interface: opaque problem handles, status codes and a thread-local error message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use maslov_stab::cli::{Options, Settings};
use maslov_stab::evans::{count_negative_evans_zeros, EvansControls};
use maslov_stab::maslov::{find_conjugate_points, morse_index_via_maslov, MaslovControls};
use maslov_stab::oracle::{morse_whole_line, OracleControls};
use maslov_stab::problem::{build_from_gradient_rd, choose_lambda_inf, Grid, Problem, PulseProblem, DEFAULT_LAMBDA_MARGIN};
use maslov_stab::pulse::{instability_verdict, PulseControls, Verdict};
use maslov_stab::{config, Error};

/// Result of every call. Values match the command-line exit codes where one exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    Io = 1,
    Hypothesis = 2,
    Inconclusive = 3,
    Numerical = 4,
    NullPointer = 10,
    BufferTooSmall = 11,
    Panic = 12,
    InvalidArgument = 64,
}

/// Opaque problem handle.
pub struct MsProblem {
    problem: Problem,
    pulse: Option<PulseProblem>,
    settings: Settings,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MsMorseCounts {
    pub maslov: u32,
    pub oracle: u32,
    pub evans: u32,
    /// 1 when the three counts agree.
    pub consistent: u8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MsCrossing {
    pub location: f64,
    pub multiplicity: u32,
    pub signature: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsVerdict {
    Unstable = 0,
    Inconclusive = 1,
    UnstableEssentialSpectrum = 2,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MsStatus {
    match maslov_stab::cli::exit_code(e) {
        1 => MsStatus::Io,
        2 => MsStatus::Hypothesis,
        64 => MsStatus::InvalidArgument,
        _ => MsStatus::Numerical,
    }
}

/// Runs `f`, records any error message and converts panics.
fn guard<F>(f: F) -> MsStatus
where
    F: FnOnce() -> Result<(), (MsStatus, String)>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MsStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (MsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (MsStatus, String) {
    (MsStatus::NullPointer, "null pointer argument".into())
}

fn default_settings(problem: &Problem) -> Settings {
    let grid = Grid::default();
    let maslov = MaslovControls::default();
    Settings {
        grid,
        maslov,
        evans: EvansControls::default(),
        oracle: OracleControls::default(),
        pulse: PulseControls { grid, maslov, ..PulseControls::default() },
        lambda_inf: choose_lambda_inf(problem, &grid, DEFAULT_LAMBDA_MARGIN),
        l: None,
    }
}

unsafe fn emit(out: *mut *mut MsProblem, handle: MsProblem) -> Result<(), (MsStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(handle));
    Ok(())
}

unsafe fn problem_ref<'a>(p: *const MsProblem) -> Result<&'a MsProblem, (MsStatus, String)> {
    p.as_ref().ok_or_else(null)
}

/// Loads a problem file (TOML, or JSON with a `.json` extension).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_from_file(path: *const c_char, out: *mut *mut MsProblem) -> MsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null());
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (MsStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let lp = config::load(Path::new(path)).map_err(lib_err)?;
        let settings = Settings::resolve(&lp, &Options::default());
        emit(out, MsProblem { problem: lp.problem, pulse: lp.pulse, settings })
    })
}

/// Scalar Poeschl-Teller problem `V = c - m(m+1) sech^2 x`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_poeschl_teller(c: f64, m: f64, out: *mut *mut MsProblem) -> MsStatus {
    guard(|| {
        if !(c.is_finite() && m.is_finite()) || c <= 0.0 || m <= 0.0 {
            return Err((MsStatus::InvalidArgument, format!("need c > 0 and m > 0, got c = {c}, m = {m}")));
        }
        let problem = Problem::poeschl_teller(c, m);
        let settings = default_settings(&problem);
        emit(out, MsProblem { problem, pulse: None, settings })
    })
}

/// Linearization about the pulse of `u_t = u_xx - u + u^2` centered at `center`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_scalar_pulse(center: f64, out: *mut *mut MsProblem) -> MsStatus {
    guard(|| {
        if !center.is_finite() {
            return Err((MsStatus::InvalidArgument, "center must be finite".into()));
        }
        let pp = PulseProblem::scalar_quadratic(center);
        let problem = build_from_gradient_rd(&pp, &Grid::default(), None).map_err(lib_err)?;
        let settings = default_settings(&problem);
        emit(out, MsProblem { problem, pulse: Some(pp), settings })
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `p` must come from one of the constructors and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_free(p: *mut MsProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// System dimension `n`.
///
/// # Safety
/// `p` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_problem_dimension(p: *const MsProblem, out: *mut u32) -> MsStatus {
    guard(|| {
        let h = problem_ref(p)?;
        let out = out.as_mut().ok_or_else(null)?;
        *out = h.problem.n() as u32;
        Ok(())
    })
}

/// Morse index from conjugate points, finite differences and the Evans function.
///
/// # Safety
/// `p` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ms_morse_counts(p: *const MsProblem, out: *mut MsMorseCounts) -> MsStatus {
    guard(|| {
        let h = problem_ref(p)?;
        let out = out.as_mut().ok_or_else(null)?;
        let s = &h.settings;
        let maslov = morse_index_via_maslov(&h.problem, &s.maslov).map_err(lib_err)?;
        let oracle = morse_whole_line(&h.problem, &s.oracle).map_err(lib_err)?;
        let evans = count_negative_evans_zeros(&h.problem, s.lambda_inf, &s.evans).map_err(lib_err)?;
        let consistent = maslov.morse == oracle.morse && oracle.morse == evans.count;
        *out = MsMorseCounts {
            maslov: maslov.morse as u32,
            oracle: oracle.morse as u32,
            evans: evans.count as u32,
            consistent: consistent as u8,
        };
        if consistent {
            Ok(())
        } else {
            Err((
                MsStatus::Numerical,
                format!("counts disagree: {} (maslov), {} (oracle), {} (evans)", maslov.morse, oracle.morse, evans.count),
            ))
        }
    })
}

/// Conjugate points in `(x_min, l]`. `*len` receives the number found; when it
/// exceeds `cap` nothing is written and `MS_STATUS_BUFFER_TOO_SMALL` is returned.
/// `buf` may be null when `cap` is 0.
///
/// # Safety
/// `p` must be a live handle, `len` a valid pointer and `buf` valid for `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn ms_conjugate_points(
    p: *const MsProblem,
    l: f64,
    buf: *mut MsCrossing,
    cap: usize,
    len: *mut usize,
) -> MsStatus {
    guard(|| {
        let h = problem_ref(p)?;
        let len = len.as_mut().ok_or_else(null)?;
        if !(l.is_finite() && l > 0.0) {
            return Err((MsStatus::InvalidArgument, format!("L must be positive, got {l}")));
        }
        let scan = find_conjugate_points(&h.problem, l, &h.settings.maslov).map_err(lib_err)?;
        let points: Vec<MsCrossing> = scan
            .conjugate_points
            .iter()
            .chain(scan.endpoint.iter())
            .map(|c| MsCrossing { location: c.location, multiplicity: c.multiplicity as u32, signature: c.signature as i32 })
            .collect();
        *len = points.len();
        if points.len() > cap {
            return Err((MsStatus::BufferTooSmall, format!("{} conjugate points, buffer holds {cap}", points.len())));
        }
        if !points.is_empty() {
            if buf.is_null() {
                return Err(null());
            }
            ptr::copy_nonoverlapping(points.as_ptr(), buf, points.len());
        }
        Ok(())
    })
}

/// Instability verdict for a pulse problem. An inconclusive verdict is still
/// written, with status `MS_STATUS_INCONCLUSIVE`.
///
/// # Safety
/// `p` must be a live handle; `verdict` and `morse` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ms_pulse_verdict(p: *const MsProblem, verdict: *mut MsVerdict, morse: *mut u32) -> MsStatus {
    guard(|| {
        let h = problem_ref(p)?;
        let verdict = verdict.as_mut().ok_or_else(null)?;
        let morse = morse.as_mut().ok_or_else(null)?;
        let pp = h
            .pulse
            .as_ref()
            .ok_or_else(|| (MsStatus::InvalidArgument, "problem is not a gradient reaction-diffusion pulse".to_string()))?;
        let v = instability_verdict(pp, &h.settings.pulse).map_err(lib_err)?;
        *verdict = match v.verdict {
            Verdict::Unstable => MsVerdict::Unstable,
            Verdict::Inconclusive => MsVerdict::Inconclusive,
            Verdict::UnstableEssentialSpectrum => MsVerdict::UnstableEssentialSpectrum,
        };
        *morse = v.full_morse.unwrap_or(v.morse_lower_bound) as u32;
        if v.verdict == Verdict::Inconclusive {
            return Err((MsStatus::Inconclusive, v.notes.join("; ")));
        }
        Ok(())
    })
}

/// Copies the calling thread's last error message, NUL-terminated and truncated
/// to `cap` bytes. Returns the full message length without the terminator.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn ms_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
