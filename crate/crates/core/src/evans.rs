//! Evans function `E(lambda) = det[F_s^+(0) | F_u^-(0)]` from orthonormal frames
//! and its zeros on the negative real axis.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::linalg;
use crate::maslov::{candidates, check_separation, linspace, locate, Sample};
use crate::problem::Problem;
use crate::propagation::{
    propagate_from, stable_subspace_at_plus_infinity, truncation_point_side, unstable_subspace_at_minus_infinity,
    PropagationControls, DEFAULT_TOL_ASYM,
};
use crate::symplectic::{LagrangianFrame, Position};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvansControls {
    pub propagation: PropagationControls,
    pub tol_asym: f64,
    /// Zeros in `(-kernel_shift, 0]` are reported as a boundary case, not counted.
    pub kernel_shift: f64,
    pub points: usize,
    pub tol_lambda: f64,
    pub tol_rank: f64,
    pub dip_threshold: f64,
    /// Where the two frames are compared.
    pub x_match: f64,
}

impl Default for EvansControls {
    fn default() -> Self {
        Self {
            propagation: PropagationControls::default(),
            tol_asym: DEFAULT_TOL_ASYM,
            kernel_shift: 1e-6,
            points: 200,
            tol_lambda: 1e-10,
            tol_rank: 1e-8,
            dip_threshold: 0.25,
            x_match: 0.0,
        }
    }
}

pub const NORMALIZATION: &str = "columns of both frames orthonormalized by QR with nonnegative diagonal, \
starting from the graph bases [I; +-S(lambda)] of the asymptotic subspaces, which depend continuously on lambda";

/// Frame of solutions decaying at `+inf`, started at `x_max` and carried back to `x`.
pub fn stable_subspace_from_plus_infinity(
    p: &Problem,
    lambda: f64,
    x_max: f64,
    x: f64,
    controls: &PropagationControls,
) -> Result<LagrangianFrame> {
    let init = stable_subspace_at_plus_infinity(p, lambda)?;
    let tr = propagate_from(p, lambda, init.matrix(), x_max, x, controls, false)?;
    let f = tr.final_frame();
    LagrangianFrame::from_matrix(f.into_matrix(), Position::At(x), lambda)
}

/// Frame of solutions decaying at `-inf`, started at `x_min` and carried to `x`.
pub fn unstable_subspace_at(
    p: &Problem,
    lambda: f64,
    x_min: f64,
    x: f64,
    controls: &PropagationControls,
) -> Result<LagrangianFrame> {
    let init = unstable_subspace_at_minus_infinity(p, lambda)?;
    Ok(propagate_from(p, lambda, init.matrix(), x_min, x, controls, false)?.final_frame())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvansEvaluation {
    pub lambda: f64,
    #[serde(rename = "E_value")]
    pub value: f64,
    /// Smallest singular value of `[F_s^+ | F_u^-]`.
    pub sigma_min_intersection: f64,
}

/// Truncation points on both sides and the comparison point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvansDomain {
    pub x_min: f64,
    pub x_max: f64,
    pub x_match: f64,
}

impl EvansDomain {
    pub fn new(p: &Problem, ctl: &EvansControls) -> Result<Self> {
        let x_min = truncation_point_side(p, Side::Minus, ctl.tol_asym)?.x;
        let x_max = truncation_point_side(p, Side::Plus, ctl.tol_asym)?.x;
        Ok(Self { x_min, x_max, x_match: ctl.x_match.clamp(x_min, x_max) })
    }
}

fn evans_matrix(p: &Problem, lambda: f64, dom: &EvansDomain, ctl: &EvansControls) -> Result<DMatrix<f64>> {
    let fs = stable_subspace_from_plus_infinity(p, lambda, dom.x_max, dom.x_match, &ctl.propagation)?;
    let fu = unstable_subspace_at(p, lambda, dom.x_min, dom.x_match, &ctl.propagation)?;
    let n = p.n();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (2 * n, n)).copy_from(fs.matrix());
    m.view_mut((0, n), (2 * n, n)).copy_from(fu.matrix());
    Ok(m)
}

fn evaluate_on(p: &Problem, lambda: f64, dom: &EvansDomain, ctl: &EvansControls) -> Result<EvansEvaluation> {
    let m = evans_matrix(p, lambda, dom, ctl)?;
    Ok(EvansEvaluation { lambda, value: m.determinant(), sigma_min_intersection: linalg::sigma_min(&m) })
}

pub fn evans_evaluate(p: &Problem, lambda: f64, ctl: &EvansControls) -> Result<EvansEvaluation> {
    evaluate_on(p, lambda, &EvansDomain::new(p, ctl)?, ctl)
}

pub fn evans_value(p: &Problem, lambda: f64, ctl: &EvansControls) -> Result<f64> {
    Ok(evans_evaluate(p, lambda, ctl)?.value)
}

/// Dimension of `F_s^+ ∩ F_u^-` at `lambda`, with singular values below
/// `tol * sigma_max` treated as zero.
pub fn intersection_dimension(p: &Problem, lambda: f64, tol: f64, ctl: &EvansControls) -> Result<usize> {
    let m = evans_matrix(p, lambda, &EvansDomain::new(p, ctl)?, ctl)?;
    Ok(dimension_of(&m, tol))
}

fn dimension_of(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = linalg::singular_values(m);
    let scale = sv[0];
    sv.iter().filter(|&&s| s <= tol * scale).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvansZero {
    pub lambda: f64,
    pub multiplicity: usize,
    pub bracket_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvansTrace {
    pub lambda_inf: f64,
    pub kernel_shift: f64,
    pub domain: EvansDomain,
    pub normalization: String,
    pub samples: Vec<EvansEvaluation>,
    /// Zeros on `[-lambda_inf, -kernel_shift]`.
    pub zeros: Vec<EvansZero>,
    /// Sum of multiplicities of `zeros`.
    pub count: usize,
    /// `E` at `lambda = 0`, evaluated separately.
    pub at_zero: EvansEvaluation,
    /// Dimension of the intersection at `lambda = 0` (translational kernel).
    pub kernel_dimension_at_zero: usize,
}

/// Negative zeros of `E` with multiplicity: sign changes and `sigma_min` dips on
/// a grid over `[-lambda_inf, -kernel_shift]`, refined by bisection or
/// golden-section search.
pub fn count_negative_evans_zeros(p: &Problem, lambda_inf: f64, ctl: &EvansControls) -> Result<EvansTrace> {
    if !(lambda_inf > ctl.kernel_shift) {
        return Err(Error::Precondition(format!("lambda_inf = {lambda_inf} must be positive")));
    }
    let dom = EvansDomain::new(p, ctl)?;
    let grid = linspace(-lambda_inf, -ctl.kernel_shift, ctl.points);
    let samples: Vec<EvansEvaluation> =
        grid.par_iter().map(|&lam| evaluate_on(p, lam, &dom, ctl)).collect::<Result<_>>()?;
    let scan: Vec<Sample> = samples
        .iter()
        .map(|e| Sample { t: e.lambda, det: e.value, sigma: e.sigma_min_intersection })
        .collect();
    let cands = candidates(&scan, ctl.dip_threshold);
    let det = |lam: f64| evaluate_on(p, lam, &dom, ctl).map(|e| e.value).unwrap_or(f64::NAN);
    let sigma = |lam: f64| evaluate_on(p, lam, &dom, ctl).map(|e| e.sigma_min_intersection).unwrap_or(f64::NAN);
    let located = locate(&cands, det, sigma, ctl.tol_lambda, ctl.tol_rank);
    check_separation(&located, ctl.tol_lambda)?;
    let zeros: Vec<EvansZero> = located
        .par_iter()
        .map(|loc| {
            let m = evans_matrix(p, loc.t, &dom, ctl)?;
            let mut multiplicity = dimension_of(&m, ctl.tol_rank.sqrt());
            if multiplicity == 0 && loc.sign_change {
                multiplicity = 1;
            }
            Ok(EvansZero { lambda: loc.t, multiplicity, bracket_error: loc.error })
        })
        .collect::<Result<_>>()?;
    let at_zero_m = evans_matrix(p, 0.0, &dom, ctl)?;
    let at_zero = EvansEvaluation {
        lambda: 0.0,
        value: at_zero_m.determinant(),
        sigma_min_intersection: linalg::sigma_min(&at_zero_m),
    };
    let kernel_dimension_at_zero = dimension_of(&at_zero_m, ctl.kernel_shift);
    let mut all = samples;
    all.push(at_zero);
    Ok(EvansTrace {
        lambda_inf,
        kernel_shift: ctl.kernel_shift,
        domain: dom,
        normalization: NORMALIZATION.to_string(),
        count: zeros.iter().map(|z| z.multiplicity).sum(),
        zeros,
        samples: all,
        at_zero,
        kernel_dimension_at_zero,
    })
}

impl EvansTrace {
    /// CSV with columns `lambda, E_value, sigma_min_intersection`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["lambda", "E_value", "sigma_min_intersection"])?;
        for s in &self.samples {
            wtr.write_record(&[
                format!("{:.17e}", s.lambda),
                format!("{:.17e}", s.value),
                format!("{:.17e}", s.sigma_min_intersection),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
