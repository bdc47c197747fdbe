//! Propagation of the unstable (decaying at `-inf`) solution space of
//! `p' = A(x, lambda) p`, `A = [[0, D^-1], [V(x) - lambda, 0]]`, as an orthonormal
//! Lagrangian frame.
//!
//! Every accepted Runge–Kutta step is followed by a thin QR with nonnegative
//! diagonal `R`. That keeps the frame well conditioned and leaves `sign(det X)`
//! untouched, so sign changes of `det X` along a trace are crossings.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::linalg;
use crate::ode::{dopri5_step, next_step, DenseStep, StepControls};
use crate::problem::{DecayModel, Problem};
use crate::symplectic::{LagrangianFrame, Position};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagationControls {
    pub step: StepControls,
    /// Lagrangian tolerance; integration aborts beyond `100 * tol_lag`.
    pub tol_lag: f64,
    /// Interior dense-output samples recorded per accepted step.
    pub samples_per_step: usize,
}

impl Default for PropagationControls {
    fn default() -> Self {
        Self { step: StepControls::default(), tol_lag: 1e-8, samples_per_step: 4 }
    }
}

/// Constant-coefficient limit `A_side(lambda)` and its hyperbolic splitting.
///
/// Solves `(V_side - lambda) U = mu D U` in the `D` inner product; the
/// eigenvalues of `A` are `+-sqrt(mu)` with eigenvectors `(U, +-sqrt(mu) D U)`.
#[derive(Debug, Clone)]
pub struct AsymptoticSystem {
    pub side: Side,
    pub lambda: f64,
    /// Generalized eigenvalues `mu`, ascending.
    pub mu: DVector<f64>,
    /// `D`-orthonormal generalized eigenvectors (`U^T D U = I`).
    pub vectors: DMatrix<f64>,
    diffusion: DVector<f64>,
}

impl AsymptoticSystem {
    pub fn new(p: &Problem, side: Side, lambda: f64) -> Result<Self> {
        let n = p.n();
        let d = p.diffusion();
        let d_isqrt = DMatrix::from_diagonal(&d.map(|v| 1.0 / v.sqrt()));
        let shifted = p.limit(side) - DMatrix::identity(n, n) * lambda;
        let reduced = &d_isqrt * shifted * &d_isqrt;
        let (mu, w) = linalg::sym_eigen(&reduced);
        if !(mu[0] > 0.0) {
            return Err(Error::NonHyperbolic { mu: mu[0] });
        }
        Ok(Self { side, lambda, mu, vectors: d_isqrt * w, diffusion: d.clone() })
    }

    /// Spatial rates `nu_j = sqrt(mu_j) > 0`.
    pub fn rates(&self) -> Vec<f64> {
        self.mu.iter().map(|m| m.sqrt()).collect()
    }

    /// The full `2n x 2n` coefficient matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.mu.len();
        let d = DMatrix::from_diagonal(&self.diffusion);
        let d_inv = DMatrix::from_diagonal(&self.diffusion.map(|v| 1.0 / v));
        // V - lambda = D U diag(mu) U^T D.
        let du = &d * &self.vectors;
        let vl = &du * DMatrix::from_diagonal(&self.mu) * du.transpose();
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        a.view_mut((0, n), (n, n)).copy_from(&d_inv);
        a.view_mut((n, 0), (n, n)).copy_from(&vl);
        a
    }

    /// Columns `(U_j, +-nu_j D U_j)`; `+` spans the unstable, `-` the stable subspace.
    pub fn eigen_columns(&self, unstable: bool) -> DMatrix<f64> {
        let n = self.mu.len();
        let sign = if unstable { 1.0 } else { -1.0 };
        let nu = DMatrix::from_diagonal(&self.mu.map(|m| sign * m.sqrt()));
        let d = DMatrix::from_diagonal(&self.diffusion);
        let mut f = DMatrix::zeros(2 * n, n);
        f.view_mut((0, 0), (n, n)).copy_from(&self.vectors);
        f.view_mut((n, 0), (n, n)).copy_from(&(&d * &self.vectors * nu));
        f
    }

    /// The symmetric `S` with unstable subspace `= graph(S) = {(u, S u)}`.
    ///
    /// Writing the plane as a graph removes the arbitrary sign and ordering of
    /// eigenvectors, so the initial frame depends continuously on `lambda`.
    pub fn graph_matrix(&self, unstable: bool) -> DMatrix<f64> {
        let sign = if unstable { 1.0 } else { -1.0 };
        let d = DMatrix::from_diagonal(&self.diffusion);
        let du = &d * &self.vectors;
        let nu = DMatrix::from_diagonal(&self.mu.map(|m| sign * m.sqrt()));
        &du * nu * du.transpose()
    }

    fn graph_frame(&self, unstable: bool, position: Position) -> LagrangianFrame {
        let n = self.mu.len();
        let s = self.graph_matrix(unstable);
        LagrangianFrame::from_blocks(&DMatrix::identity(n, n), &s, position, self.lambda)
            .expect("square blocks")
            .orthonormalized()
    }
}

/// Orthonormal frame of the subspace of solutions decaying at `-inf`.
pub fn unstable_subspace_at_minus_infinity(p: &Problem, lambda: f64) -> Result<LagrangianFrame> {
    Ok(AsymptoticSystem::new(p, Side::Minus, lambda)?.graph_frame(true, Position::MinusInfinity))
}

/// Orthonormal frame of the subspace of solutions decaying at `+inf`.
pub fn stable_subspace_at_plus_infinity(p: &Problem, lambda: f64) -> Result<LagrangianFrame> {
    Ok(AsymptoticSystem::new(p, Side::Plus, lambda)?.graph_frame(false, Position::PlusInfinity))
}

#[derive(Debug, Clone)]
struct TraceStep {
    frame0: DMatrix<f64>,
    /// Raw end of the step equals `frame1 * r`.
    r: DMatrix<f64>,
    /// Raw interpolant starting from `frame0`.
    dense: DenseStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub x: f64,
    pub det_x: f64,
    pub sigma_min: f64,
    pub lagrangian_residual: f64,
}

/// Result of a propagation: stored steps with dense output, sampled `det X`,
/// `sigma_min(X)` and Lagrangian residual, and the final frame.
#[derive(Debug, Clone)]
pub struct PropagationTrace {
    pub lambda: f64,
    pub x_start: f64,
    pub x_end: f64,
    n: usize,
    diffusion: DVector<f64>,
    steps: Vec<TraceStep>,
    final_frame: DMatrix<f64>,
    samples: Vec<TraceSample>,
    pub max_lagrangian_residual: f64,
    /// Renormalizations where `sign(det X)` changed (must stay 0).
    pub sign_violations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

impl PropagationTrace {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diffusion(&self) -> &DVector<f64> {
        &self.diffusion
    }

    pub fn direction(&self) -> f64 {
        if self.x_end >= self.x_start {
            1.0
        } else {
            -1.0
        }
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn final_frame(&self) -> LagrangianFrame {
        LagrangianFrame::from_matrix(self.final_frame.clone(), Position::At(self.x_end), self.lambda)
            .expect("valid frame")
    }

    /// Whether `x` lies between the start and end of the trace.
    pub fn covers(&self, x: f64) -> bool {
        let (lo, hi) = if self.x_start <= self.x_end { (self.x_start, self.x_end) } else { (self.x_end, self.x_start) };
        x >= lo && x <= hi
    }

    fn step_index(&self, x: f64) -> usize {
        let dir = self.direction();
        // First step whose end lies at or beyond x along the direction of integration.
        let idx = self.steps.partition_point(|s| (s.dense.x1() - x) * dir < 0.0);
        idx.min(self.steps.len().saturating_sub(1))
    }

    /// Raw (unnormalized) frame at `x` from the dense output of the containing step.
    fn raw_at(&self, x: f64) -> DMatrix<f64> {
        if self.steps.is_empty() {
            return self.final_frame.clone();
        }
        self.steps[self.step_index(x)].dense.eval(x)
    }

    pub fn frame_at(&self, x: f64) -> LagrangianFrame {
        LagrangianFrame::from_matrix(linalg::orthonormalize(&self.raw_at(x)), Position::At(x), self.lambda)
            .expect("valid frame")
    }

    pub fn det_x_at(&self, x: f64) -> f64 {
        self.frame_at(x).det_top()
    }

    pub fn sigma_min_at(&self, x: f64) -> f64 {
        self.frame_at(x).sigma_min_top()
    }

    /// Gram matrix `int <p1^(a), p1^(b)> dx` over the whole trace, for the
    /// solutions whose coordinates in the final orthonormal frame are the
    /// columns of `coeffs`.
    pub fn top_block_gram(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        // 5-point Gauss–Legendre is exact for the degree-8 integrand of the
        // quartic dense output.
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let n = self.n;
        let k = coeffs.ncols();
        let mut gram = DMatrix::zeros(k, k);
        let mut a = coeffs.clone();
        for step in self.steps.iter().rev() {
            a = step.r.clone().solve_upper_triangular(&a).expect("R has positive diagonal");
            let h = step.dense.h.abs();
            for (t, w) in NODES.iter().zip(WEIGHTS) {
                let x = step.dense.x0 + 0.5 * (t + 1.0) * step.dense.h;
                let sol = step.dense.eval(x) * &a;
                let top = sol.rows(0, n);
                gram += top.transpose() * top * (0.5 * h * w);
            }
        }
        gram
    }

    /// Solutions at `x` whose final-frame coordinates are the columns of `coeffs`.
    pub fn solution_at(&self, x: f64, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        let idx = self.step_index(x);
        let mut a = coeffs.clone();
        for step in self.steps[idx..].iter().rev() {
            a = step.r.clone().solve_upper_triangular(&a).expect("R has positive diagonal");
        }
        self.steps[idx].dense.eval(x) * a
    }

    /// CSV with columns `x, detX, sigma_min, lagrangian_residual`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "detX", "sigma_min", "lagrangian_residual"])?;
        for s in &self.samples {
            wtr.write_record(&[
                format!("{:.17e}", s.x),
                format!("{:.17e}", s.det_x),
                format!("{:.17e}", s.sigma_min),
                format!("{:.17e}", s.lagrangian_residual),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn frame_rhs<'a>(p: &'a Problem, lambda: f64) -> impl Fn(f64, &DMatrix<f64>) -> DMatrix<f64> + 'a {
    let n = p.n();
    let d_inv = p.diffusion().map(|v| 1.0 / v);
    move |x, f| {
        let mut out = DMatrix::zeros(2 * n, f.ncols());
        let top = f.rows(0, n);
        let bottom = f.rows(n, n);
        for i in 0..n {
            for j in 0..f.ncols() {
                out[(i, j)] = d_inv[i] * bottom[(i, j)];
            }
        }
        let mut v = p.v(x);
        for i in 0..n {
            v[(i, i)] -= lambda;
        }
        out.rows_mut(n, n).copy_from(&(v * top));
        out
    }
}

/// Integrates the frame from `x_start` to `x_end` (either direction) starting
/// from `init` (orthonormalized internally). With `store == false` only the final
/// frame is kept.
pub fn propagate_from(
    p: &Problem,
    lambda: f64,
    init: &DMatrix<f64>,
    x_start: f64,
    x_end: f64,
    controls: &PropagationControls,
    store: bool,
) -> Result<PropagationTrace> {
    let n = p.n();
    if init.nrows() != 2 * n || init.ncols() != n {
        return Err(Error::DimensionMismatch { expected: 2 * n, got: init.nrows() });
    }
    let rhs = frame_rhs(p, lambda);
    let ctl = &controls.step;
    let dir = if x_end >= x_start { 1.0 } else { -1.0 };
    let mut frame = linalg::orthonormalize(init);
    let mut x = x_start;
    let mut h = (0.01_f64).min(ctl.h_max) * dir;
    let mut steps = Vec::new();
    let mut max_lag = LagrangianFrame::from_matrix(frame.clone(), Position::At(x), lambda)?.lagrangian_residual();
    let mut sign_violations = 0;
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let lag_limit = 100.0 * controls.tol_lag;

    while (x_end - x) * dir > 0.0 {
        if accepted + rejected > ctl.max_steps {
            return Err(Error::TooManySteps { x });
        }
        let last = (x + h - x_end) * dir >= 0.0;
        if last {
            h = x_end - x;
        }
        let step = dopri5_step(&rhs, x, &frame, h, ctl);
        if !(step.err <= 1.0) {
            rejected += 1;
            h = next_step(h, if step.err.is_finite() { step.err } else { 1e10 }, ctl);
            if h.abs() < ctl.h_min {
                return Err(Error::StepUnderflow { x });
            }
            continue;
        }
        accepted += 1;
        let (q, r) = linalg::qr_positive(&step.y1);
        let det_raw = step.y1.rows(0, n).clone_owned().determinant();
        let det_q = q.rows(0, n).clone_owned().determinant();
        if det_q.abs() > 1e-12 && det_raw.signum() != det_q.signum() {
            sign_violations += 1;
        }
        let x_new = if last { x_end } else { x + h };
        let lag = LagrangianFrame::from_matrix(q.clone(), Position::At(x_new), lambda)?.lagrangian_residual();
        max_lag = max_lag.max(lag);
        if lag > lag_limit {
            return Err(Error::LagrangianDrift { x: x_new, residual: lag, limit: lag_limit });
        }
        if store {
            steps.push(TraceStep { frame0: frame, r, dense: step.dense });
        }
        frame = q;
        x = x_new;
        if last {
            break;
        }
        h = next_step(h, step.err, ctl);
    }

    let mut trace = PropagationTrace {
        lambda,
        x_start,
        x_end,
        n,
        diffusion: p.diffusion().clone(),
        steps,
        final_frame: frame,
        samples: Vec::new(),
        max_lagrangian_residual: max_lag,
        sign_violations,
        accepted_steps: accepted,
        rejected_steps: rejected,
    };
    if store {
        trace.samples = sample_trace(&trace, controls.samples_per_step);
    }
    Ok(trace)
}

fn sample_of(frame: &LagrangianFrame, x: f64) -> TraceSample {
    TraceSample {
        x,
        det_x: frame.det_top(),
        sigma_min: frame.sigma_min_top(),
        lagrangian_residual: frame.lagrangian_residual(),
    }
}

fn sample_trace(trace: &PropagationTrace, per_step: usize) -> Vec<TraceSample> {
    let mut out = Vec::with_capacity(trace.steps.len() * (per_step + 1) + 1);
    for step in &trace.steps {
        let f0 = LagrangianFrame::from_matrix(step.frame0.clone(), Position::At(step.dense.x0), trace.lambda)
            .expect("valid frame");
        out.push(sample_of(&f0, step.dense.x0));
        for j in 1..=per_step {
            let x = step.dense.x0 + step.dense.h * j as f64 / (per_step + 1) as f64;
            let f = LagrangianFrame::from_matrix(linalg::orthonormalize(&step.dense.eval(x)), Position::At(x), trace.lambda)
                .expect("valid frame");
            out.push(sample_of(&f, x));
        }
    }
    out.push(sample_of(&trace.final_frame(), trace.x_end));
    out
}

/// Propagates the unstable subspace from `x_min` (initialized from the
/// asymptotic system at `-inf`) to `x_end`.
pub fn propagate_frame(
    p: &Problem,
    lambda: f64,
    x_min: f64,
    x_end: f64,
    controls: &PropagationControls,
) -> Result<PropagationTrace> {
    let init = unstable_subspace_at_minus_infinity(p, lambda)?;
    propagate_from(p, lambda, init.matrix(), x_min, x_end, controls, true)
}

/// Same as [`propagate_frame`] but keeps only the final frame.
pub fn propagate_final_frame(
    p: &Problem,
    lambda: f64,
    x_min: f64,
    x_end: f64,
    controls: &PropagationControls,
) -> Result<LagrangianFrame> {
    let init = unstable_subspace_at_minus_infinity(p, lambda)?;
    Ok(propagate_from(p, lambda, init.matrix(), x_min, x_end, controls, false)?.final_frame())
}

/// Where the potential is within `tol_asym` of its limit for good.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub side: Side,
    pub x: f64,
    pub tol_asym: f64,
    pub model: DecayModel,
}

impl Truncation {
    /// Decay length used for safety margins: `1 / rate`, or 1 for exact limits.
    pub fn decay_length(&self) -> f64 {
        self.model.rate.map_or(1.0, |r| 1.0 / r)
    }
}

pub const DEFAULT_TOL_ASYM: f64 = 1e-10;

/// Smallest-magnitude point on the given side beyond which
/// `||V(x) - V_side|| <= tol_asym`.
pub fn truncation_point_side(p: &Problem, side: Side, tol_asym: f64) -> Result<Truncation> {
    const STEP: f64 = 0.05;
    const REACH: f64 = 200.0;
    let sign = match side {
        Side::Minus => -1.0,
        Side::Plus => 1.0,
    };
    let model = match p.decay_model(side) {
        Ok(m) => m,
        // Tables held constant beyond their grid have no exponential regime to fit.
        Err(_) => DecayModel { side, rate: None, amplitude: 0.0, samples_used: 0 },
    };
    let count = (REACH / STEP) as usize;
    let mut last_bad: Option<usize> = None;
    for k in 0..=count {
        if p.tail_residual(side, sign * STEP * k as f64) > tol_asym {
            last_bad = Some(k);
        }
    }
    let x = match last_bad {
        None => 0.0,
        Some(k) if k >= count => {
            return Err(Error::DecayFit {
                side,
                reason: format!("potential still differs from its limit by more than {tol_asym:.1e} at |x| = {REACH}"),
            })
        }
        Some(k) => {
            let (lo, hi) = (STEP * k as f64, STEP * (k + 1) as f64);
            let (d, _) = linalg::bisect(|d| p.tail_residual(side, sign * d) - tol_asym, lo, hi, 1e-12);
            sign * d
        }
    };
    if model.predict(REACH) > tol_asym {
        return Err(Error::DecayFit { side, reason: "fitted decay model exceeds tolerance beyond the sampled window".into() });
    }
    Ok(Truncation { side, x, tol_asym, model })
}

/// Left truncation point `x_min <= 0`.
pub fn truncation_point(p: &Problem, tol_asym: f64) -> Result<Truncation> {
    truncation_point_side(p, Side::Minus, tol_asym)
}
