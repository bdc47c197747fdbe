//! Instability of even pulses of gradient reaction–diffusion systems: the
//! derivative `phi_x` vanishes at the centre of symmetry `x0`, so `x0` is a
//! conjugate point and `Mor(H) >= 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::maslov::{morse_index_via_maslov, s_crossings, Crossing, MaslovControls};
use crate::problem::{build_from_gradient_rd, Grid, PulseProblem};
use crate::propagation::propagate_frame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseControls {
    pub maslov: MaslovControls,
    pub grid: Grid,
    /// Symmetry tolerance; `1e-6 ||phi||_inf` when absent.
    pub tol_sym: Option<f64>,
    /// Tolerance on `||phi_x(x0)||`; `1e-6 ||phi_x||_inf` when absent.
    pub tol_derivative: Option<f64>,
    pub tol_steady: Option<f64>,
    /// How far the conjugate point may sit from `x0`.
    pub tol_location: f64,
    /// Largest allowed angle between `(phi_x, D phi_xx)` and the propagated frame.
    pub span_tol: f64,
    /// The span check runs on `[x_min, x0 + span_window]`.
    pub span_window: f64,
    pub span_samples: usize,
    pub k_max: f64,
    pub k_points: usize,
    /// Also compute `Mor(H)` by conjugate-point counting.
    pub full: bool,
}

impl Default for PulseControls {
    fn default() -> Self {
        Self {
            maslov: MaslovControls::default(),
            grid: Grid::default(),
            tol_sym: None,
            tol_derivative: None,
            tol_steady: None,
            tol_location: 1e-6,
            span_tol: 1e-6,
            span_window: 4.0,
            span_samples: 400,
            k_max: 50.0,
            k_points: 201,
            full: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryPoint {
    pub x0: f64,
    /// `sup_x ||phi(x0 + x) - phi(x0 - x)||_inf` over the sampled offsets.
    pub residual: f64,
    pub tol_sym: f64,
    pub symmetric: bool,
    /// `||phi_x(x0)||_inf`.
    pub derivative_norm: f64,
}

fn norm_inf(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Centre of even symmetry of the profile, by a scan over grid points and a
/// golden-section refinement of the reflection residual.
pub fn detect_symmetry_point(pp: &PulseProblem, grid: &Grid, tol_sym: Option<f64>) -> SymmetryPoint {
    let profile = pp.profile();
    let h = grid.spacing();
    let half = 0.25 * (grid.x_max - grid.x_min);
    let offsets: Vec<f64> = (1..=(half / h).floor() as usize).map(|k| k as f64 * h).collect();
    let residual = |x0: f64| {
        offsets
            .iter()
            .map(|&d| norm_inf(&(profile.value(x0 + d) - profile.value(x0 - d))))
            .fold(0.0, f64::max)
    };
    let lo = grid.x_min + half;
    let hi = grid.x_max - half;
    let coarse = (((hi - lo) / h).round() as usize).max(1);
    let (mut best, mut best_r) = (lo, f64::INFINITY);
    for k in 0..=coarse {
        let x0 = lo + (hi - lo) * k as f64 / coarse as f64;
        let r = residual(x0);
        if r < best_r {
            best = x0;
            best_r = r;
        }
    }
    let (x0, r) = linalg::golden_min(residual, (best - h).max(lo), (best + h).min(hi), 1e-12);
    let (x0, r) = if r <= best_r { (x0, r) } else { (best, best_r) };
    let tol = tol_sym.unwrap_or_else(|| 1e-6 * pp.sup_norm(grid));
    SymmetryPoint { x0, residual: r, tol_sym: tol, symmetric: r <= tol, derivative_norm: norm_inf(&profile.derivative(x0)) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub crossing: Crossing,
    /// Largest angle between `(phi_x, D phi_xx)` and the frame on the sampled points.
    pub span_angle_max: f64,
    pub det_x_at_x0: f64,
    pub x_min: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

/// Checks that `x0` is a conjugate point of the `lambda = 0` propagation, and
/// that the propagated plane contains the kernel solution `(phi_x, D phi_xx)`.
pub fn certify_conjugate_point(pp: &PulseProblem, x0: f64, ctl: &PulseControls) -> Result<Certificate> {
    let profile = pp.profile();
    let tol_d = ctl.tol_derivative.unwrap_or_else(|| 1e-6 * sup_derivative(pp, &ctl.grid));
    let dn = norm_inf(&profile.derivative(x0));
    if dn > tol_d {
        return Err(Error::Precondition(format!(
            "|phi_x(x0)| = {dn:.3e} exceeds {tol_d:.3e} at x0 = {x0:.9}; x0 is not a critical point of the pulse"
        )));
    }
    let p = build_from_gradient_rd(pp, &ctl.grid, ctl.tol_steady)?;
    let x_min = ctl.maslov.x_min(&p)?;
    let l = x0 + ctl.span_window.max(1.0);
    let trace = propagate_frame(&p, 0.0, x_min, l, &ctl.maslov.propagation)?;

    let d = DVector::from_column_slice(pp.diffusion());
    let n = pp.n();
    let mut span_angle_max: f64 = 0.0;
    for k in 0..ctl.span_samples {
        let x = x_min + (l - x_min) * (k as f64 + 0.5) / ctl.span_samples as f64;
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&profile.derivative(x));
        v.rows_mut(n, n).copy_from(&d.component_mul(&profile.second_derivative(x)));
        if v.norm() == 0.0 {
            continue;
        }
        let frame = trace.frame_at(x);
        span_angle_max = span_angle_max.max(linalg::angle_to_span(frame.matrix(), &v));
    }
    if span_angle_max > ctl.span_tol {
        return Err(Error::Precondition(format!(
            "kernel solution (phi_x, D phi_xx) leaves the propagated plane: angle {span_angle_max:.3e} > {:.1e}",
            ctl.span_tol
        )));
    }
    let crossing = s_crossings(&trace, &ctl.maslov)?
        .into_iter()
        .filter(|c| (c.location - x0).abs() <= ctl.tol_location)
        .min_by(|a, b| (a.location - x0).abs().total_cmp(&(b.location - x0).abs()))
        .ok_or_else(|| Error::Precondition(format!("no conjugate point within {:.1e} of x0 = {x0:.9}", ctl.tol_location)))?;
    Ok(Certificate { det_x_at_x0: trace.det_x_at(x0), crossing, span_angle_max, x_min, l })
}

fn sup_derivative(pp: &PulseProblem, grid: &Grid) -> f64 {
    grid.points().into_iter().map(|x| norm_inf(&pp.profile().derivative(x))).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Unstable,
    Inconclusive,
    /// `k^2 D - hess F(0)` fails to be positive: unstable without any Maslov count.
    UnstableEssentialSpectrum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundCheck {
    /// Smallest eigenvalue of `k^2 D - hess F(0)` over the sampled `k`.
    pub min_eigenvalue: f64,
    pub k_at_min: f64,
    pub pass: bool,
}

/// `k^2 D - hess F(0) > 0` on `k in [0, k_max]`; for larger `k` the `k^2 D` term
/// only adds a positive definite matrix.
pub fn background_check(pp: &PulseProblem, k_max: f64, k_points: usize) -> BackgroundCheck {
    let v = pp.background_potential();
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(pp.diffusion()));
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..k_points.max(2) {
        let k = k_max * i as f64 / (k_points.max(2) - 1) as f64;
        let e = linalg::sym_eigenvalues(&(&d * (k * k) + &v))[0];
        if e < best.0 {
            best = (e, k);
        }
    }
    BackgroundCheck { min_eigenvalue: best.0, k_at_min: best.1, pass: best.0 > 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictChecks {
    pub background: BackgroundCheck,
    pub span_angle_max: Option<f64>,
    pub det_x_at_x0: Option<f64>,
    pub lower_bound_le_full: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstabilityVerdict {
    pub symmetric: bool,
    pub x0: Option<f64>,
    pub residual: Option<f64>,
    pub crossing: Option<Crossing>,
    pub morse_lower_bound: usize,
    pub full_morse: Option<usize>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
    pub checks: VerdictChecks,
}

pub fn instability_verdict(pp: &PulseProblem, ctl: &PulseControls) -> Result<InstabilityVerdict> {
    let background = background_check(pp, ctl.k_max, ctl.k_points);
    let mut checks = VerdictChecks { background, span_angle_max: None, det_x_at_x0: None, lower_bound_le_full: None };
    if !background.pass {
        return Ok(InstabilityVerdict {
            symmetric: false,
            x0: None,
            residual: None,
            crossing: None,
            morse_lower_bound: 0,
            full_morse: None,
            verdict: Verdict::UnstableEssentialSpectrum,
            notes: vec![format!(
                "k^2 D - hess F(0) has eigenvalue {:.6e} at k = {:.4}: the essential spectrum reaches the unstable side",
                background.min_eigenvalue, background.k_at_min
            )],
            checks,
        });
    }
    let sym = detect_symmetry_point(pp, &ctl.grid, ctl.tol_sym);
    if !sym.symmetric {
        return Ok(InstabilityVerdict {
            symmetric: false,
            x0: Some(sym.x0),
            residual: Some(sym.residual),
            crossing: None,
            morse_lower_bound: 0,
            full_morse: None,
            verdict: Verdict::Inconclusive,
            notes: vec![format!(
                "profile is not even about any point: best residual {:.3e} at x0 = {:.6} exceeds {:.3e}",
                sym.residual, sym.x0, sym.tol_sym
            )],
            checks,
        });
    }
    let cert = certify_conjugate_point(pp, sym.x0, ctl)?;
    checks.span_angle_max = Some(cert.span_angle_max);
    checks.det_x_at_x0 = Some(cert.det_x_at_x0);
    let lower = cert.crossing.multiplicity;
    let full_morse = if ctl.full {
        let p = build_from_gradient_rd(pp, &ctl.grid, ctl.tol_steady)?;
        Some(morse_index_via_maslov(&p, &ctl.maslov)?.morse)
    } else {
        None
    };
    checks.lower_bound_le_full = full_morse.map(|m| lower <= m);
    Ok(InstabilityVerdict {
        symmetric: true,
        x0: Some(sym.x0),
        residual: Some(sym.residual),
        crossing: Some(cert.crossing),
        morse_lower_bound: lower,
        full_morse,
        verdict: Verdict::Unstable,
        notes: Vec::new(),
        checks,
    })
}
