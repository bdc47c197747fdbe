//! Operator data `H = -D d^2/dx^2 + V(x)` and its standing hypotheses.

mod gradient;
mod hypotheses;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::linalg;
use crate::potential::{
    BlockDiagonal, ConstantPotential, PoeschlTeller, SechPulsePotential, SharedPotential, SpectralShift, Translated,
};

pub use gradient::{
    build_from_gradient_rd, FnNonlinearity, FnProfile, GradientNonlinearity, PulseProblem, PulseProfile,
    QuadraticNonlinearity, SechSquaredPulse, TabulatedPulse,
};
pub use hypotheses::{
    check_hypotheses, EssentialCheck, HypothesisReport, HypothesisTolerances, LimitCheck, SymmetryCheck, TailCheck,
};

/// Uniform sampling grid `x_min, ..., x_max` with `n_points` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Self {
        Self { x_min, x_max, n_points }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = self.n_points.max(2);
        let h = (self.x_max - self.x_min) / (n - 1) as f64;
        (0..n).map(|i| self.x_min + h * i as f64).collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points.max(2) - 1) as f64
    }
}

impl Default for Grid {
    fn default() -> Self {
        Self { x_min: -40.0, x_max: 40.0, n_points: 4001 }
    }
}

#[derive(Clone)]
pub struct Problem {
    diffusion: DVector<f64>,
    potential: SharedPotential,
    v_minus: DMatrix<f64>,
    v_plus: DMatrix<f64>,
    label: String,
}

impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("label", &self.label)
            .field("diffusion", &self.diffusion.as_slice())
            .field("potential", &self.potential)
            .finish()
    }
}

impl Problem {
    /// Validates `D > 0`, dimensions, and symmetry of the limits. (H2) is not
    /// enforced here so that it can be reported by [`check_hypotheses`].
    pub fn new(
        diffusion: Vec<f64>,
        potential: SharedPotential,
        v_minus: DMatrix<f64>,
        v_plus: DMatrix<f64>,
    ) -> Result<Self> {
        let n = diffusion.len();
        if n == 0 {
            return Err(Error::InvalidProblem("dimension must be positive".into()));
        }
        if let Some(d) = diffusion.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidProblem(format!("diffusion entries must be positive, got {d}")));
        }
        if potential.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: potential.dim() });
        }
        for m in [&v_minus, &v_plus] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
            }
            if crate::potential::symmetric_residual(m) > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidProblem("limit potential is not symmetric".into()));
            }
        }
        Ok(Self { diffusion: DVector::from_vec(diffusion), potential, v_minus, v_plus, label: String::new() })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Scalar Pöschl–Teller operator `-u'' + (c - m(m+1) sech^2 x) u`.
    pub fn poeschl_teller(c: f64, m: f64) -> Self {
        let lim = DMatrix::from_element(1, 1, c);
        Self::new(vec![1.0], Arc::new(PoeschlTeller::new(c, m)), lim.clone(), lim)
            .expect("valid scalar data")
            .with_label(format!("poeschl-teller(c={c}, m={m})"))
    }

    /// Linearization of `u_t = u_xx - u + u^2` about its pulse centred at `center`.
    pub fn scalar_pulse(center: f64) -> Self {
        let lim = DMatrix::from_element(1, 1, 1.0);
        Self::new(vec![1.0], Arc::new(SechPulsePotential { center }), lim.clone(), lim)
            .expect("valid scalar data")
            .with_label(format!("scalar-pulse(center={center})"))
    }

    pub fn constant(diffusion: Vec<f64>, value: DMatrix<f64>) -> Result<Self> {
        Self::new(diffusion, Arc::new(ConstantPotential { value: value.clone() }), value.clone(), value)
            .map(|p| p.with_label("constant"))
    }

    /// Decoupled direct sum of several problems.
    pub fn block_diagonal(parts: &[Problem]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidProblem("block-diagonal problem needs at least one block".into()));
        }
        let mut diffusion = Vec::new();
        let n: usize = parts.iter().map(Problem::n).sum();
        let mut vm = DMatrix::zeros(n, n);
        let mut vp = DMatrix::zeros(n, n);
        let mut off = 0;
        for p in parts {
            let k = p.n();
            diffusion.extend(p.diffusion.iter());
            vm.view_mut((off, off), (k, k)).copy_from(&p.v_minus);
            vp.view_mut((off, off), (k, k)).copy_from(&p.v_plus);
            off += k;
        }
        let pot = BlockDiagonal::new(parts.iter().map(|p| p.potential.clone()).collect())?;
        let label = format!(
            "block-diagonal[{}]",
            parts.iter().map(|p| p.label.as_str()).collect::<Vec<_>>().join(", ")
        );
        Ok(Self::new(diffusion, Arc::new(pot), vm, vp)?.with_label(label))
    }

    /// The same operator with `V(x)` replaced by `V(x - shift)`.
    pub fn translated(&self, shift: f64) -> Self {
        Self {
            diffusion: self.diffusion.clone(),
            potential: Arc::new(Translated { inner: self.potential.clone(), shift }),
            v_minus: self.v_minus.clone(),
            v_plus: self.v_plus.clone(),
            label: format!("{} shifted by {shift}", self.label),
        }
    }

    /// `H + c` (explicit spectral shift, never applied implicitly).
    pub fn spectrally_shifted(&self, c: f64) -> Self {
        let n = self.n();
        let id = DMatrix::identity(n, n) * c;
        Self {
            diffusion: self.diffusion.clone(),
            potential: Arc::new(SpectralShift { inner: self.potential.clone(), c }),
            v_minus: &self.v_minus + &id,
            v_plus: &self.v_plus + &id,
            label: format!("{} + {c}", self.label),
        }
    }

    pub fn n(&self) -> usize {
        self.diffusion.len()
    }

    pub fn diffusion(&self) -> &DVector<f64> {
        &self.diffusion
    }

    pub fn potential(&self) -> &SharedPotential {
        &self.potential
    }

    pub fn v(&self, x: f64) -> DMatrix<f64> {
        self.potential.eval(x)
    }

    pub fn limit(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Minus => &self.v_minus,
            Side::Plus => &self.v_plus,
        }
    }

    pub fn v_minus(&self) -> &DMatrix<f64> {
        &self.v_minus
    }

    pub fn v_plus(&self) -> &DMatrix<f64> {
        &self.v_plus
    }

    /// `||V(x) - V_side||_2`.
    pub fn tail_residual(&self, side: Side, x: f64) -> f64 {
        linalg::sym_norm2(&(self.v(x) - self.limit(side)))
    }

    /// Fits `||V(x) - V_side|| ~ A exp(-rate |x|)` from samples on the tail.
    pub fn decay_model(&self, side: Side) -> Result<DecayModel> {
        DecayModel::fit(self, side)
    }
}

/// Exponential model of how fast the potential reaches its limit on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayModel {
    pub side: Side,
    /// `None` when the potential equals its limit on the whole sampled tail.
    pub rate: Option<f64>,
    pub amplitude: f64,
    pub samples_used: usize,
}

impl DecayModel {
    const STEP: f64 = 0.5;
    const REACH: f64 = 200.0;

    fn fit(p: &Problem, side: Side) -> Result<Self> {
        let sign = match side {
            Side::Minus => -1.0,
            Side::Plus => 1.0,
        };
        let scale = linalg::sym_norm2(p.limit(side)).max(1.0);
        let count = (Self::REACH / Self::STEP) as usize;
        let samples: Vec<(f64, f64)> = (1..=count)
            .map(|k| {
                let d = Self::STEP * k as f64;
                (d, p.tail_residual(side, sign * d))
            })
            .collect();
        if samples.iter().all(|&(_, r)| r <= 1e-13 * scale) {
            return Ok(Self { side, rate: None, amplitude: 0.0, samples_used: 0 });
        }
        // Log-linear least squares on the clean exponential regime.
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|&&(_, r)| r > 1e-12 * scale && r < 1e-1 * scale)
            .map(|&(d, r)| (d, r.ln()))
            .collect();
        if pts.len() < 3 {
            return Err(Error::DecayFit {
                side,
                reason: format!("only {} usable tail samples", pts.len()),
            });
        }
        let m = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        let intercept = (sy - slope * sx) / m;
        if !(slope < 0.0) {
            return Err(Error::DecayFit { side, reason: format!("tail does not decay (fitted slope {slope:.3e})") });
        }
        Ok(Self { side, rate: Some(-slope), amplitude: intercept.exp(), samples_used: pts.len() })
    }

    /// Model value at distance `d >= 0` from the origin.
    pub fn predict(&self, d: f64) -> f64 {
        match self.rate {
            Some(r) => self.amplitude * (-r * d).exp(),
            None => 0.0,
        }
    }

    /// `int_d^inf A e^{-r t} dt`.
    pub fn tail_integral(&self, d: f64) -> f64 {
        match self.rate {
            Some(r) => self.predict(d) / r,
            None => 0.0,
        }
    }
}

/// Maximum over the grid of `||V(x)||_2`, refined near the best sample.
#[allow(non_snake_case)]
pub fn sup_norm_V(p: &Problem, grid: &Grid) -> f64 {
    let xs = grid.points();
    let norm = |x: f64| linalg::sym_norm2(&p.v(x));
    let vals: Vec<f64> = xs.iter().map(|&x| norm(x)).collect();
    let (imax, &vmax) = vals
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    let lo = xs[imax.saturating_sub(1)];
    let hi = xs[(imax + 1).min(xs.len() - 1)];
    let (_, neg) = linalg::golden_min(|x| -norm(x), lo, hi, 1e-12);
    let limits = linalg::sym_norm2(p.v_minus()).max(linalg::sym_norm2(p.v_plus()));
    vmax.max(-neg).max(limits)
}

pub const DEFAULT_LAMBDA_MARGIN: f64 = 1.0;

/// `lambda_inf = ||V||_inf + margin`, so that no crossings occur at `lambda = -lambda_inf`.
pub fn choose_lambda_inf(p: &Problem, grid: &Grid, margin: f64) -> f64 {
    sup_norm_V(p, grid) + margin
}
