//! Problems coming from gradient reaction–diffusion systems `u_t = D u_xx + grad F(u)`
//! linearized about a pulse `phi`: `V(x) = -hess F(phi(x))`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{check_hypotheses, Grid, HypothesisTolerances, Problem};
use crate::error::{Error, Result};
use crate::potential::{vec_norm_inf, Potential};
use crate::spline::CubicSpline;

/// A scalar potential `F` given through its gradient and Hessian.
pub trait GradientNonlinearity: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn gradient(&self, u: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, u: &DVector<f64>) -> DMatrix<f64>;
}

/// `F(u) = sum_i (-u_i^2 / 2 + u_i^3 / 3)`, i.e. `G(u)_i = -u_i + u_i^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadraticNonlinearity {
    pub n: usize,
}

impl GradientNonlinearity for QuadraticNonlinearity {
    fn dim(&self) -> usize {
        self.n
    }
    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|v| -v + v * v)
    }
    fn hessian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&u.map(|v| -1.0 + 2.0 * v))
    }
}

pub struct FnNonlinearity<G, H> {
    n: usize,
    gradient: G,
    hessian: H,
}

impl<G, H> FnNonlinearity<G, H> {
    pub fn new(n: usize, gradient: G, hessian: H) -> Self {
        Self { n, gradient, hessian }
    }
}

impl<G, H> fmt::Debug for FnNonlinearity<G, H> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnNonlinearity").field("n", &self.n).finish_non_exhaustive()
    }
}

impl<G, H> GradientNonlinearity for FnNonlinearity<G, H>
where
    G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
    H: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }
    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(u)
    }
    fn hessian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        (self.hessian)(u)
    }
}

/// A steady profile `x -> phi(x)` with derivatives.
pub trait PulseProfile: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: f64) -> DVector<f64>;
    fn derivative(&self, x: f64) -> DVector<f64>;
    fn second_derivative(&self, x: f64) -> DVector<f64> {
        let h = 1e-4;
        (self.derivative(x + h) - self.derivative(x - h)) / (2.0 * h)
    }
}

/// Componentwise `phi_i(x) = 3/2 sech^2((x - center) / (2 sqrt(d_i)))`, the pulse of
/// `d_i u'' - u + u^2 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SechSquaredPulse {
    pub diffusion: Vec<f64>,
    pub center: f64,
}

impl SechSquaredPulse {
    fn component(&self, i: usize, x: f64) -> (f64, f64, f64) {
        let d = self.diffusion[i];
        let a = 0.5 / d.sqrt();
        let z = a * (x - self.center);
        let s = 1.0 / z.cosh();
        let t = z.tanh();
        let phi = 1.5 * s * s;
        let phi_x = -3.0 * a * s * s * t;
        let phi_xx = (phi - phi * phi) / d;
        (phi, phi_x, phi_xx)
    }
}

impl PulseProfile for SechSquaredPulse {
    fn dim(&self) -> usize {
        self.diffusion.len()
    }
    fn value(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.component(i, x).0)
    }
    fn derivative(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.component(i, x).1)
    }
    fn second_derivative(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.component(i, x).2)
    }
}

/// Spline-interpolated profile from samples (one spline per component).
#[derive(Debug, Clone)]
pub struct TabulatedPulse {
    splines: Vec<CubicSpline>,
}

impl TabulatedPulse {
    pub fn new(xs: Vec<f64>, components: Vec<Vec<f64>>) -> Result<Self> {
        let splines = components
            .into_iter()
            .map(|ys| CubicSpline::new(xs.clone(), ys))
            .collect::<Result<Vec<_>>>()?;
        if splines.is_empty() {
            return Err(Error::InvalidProblem("tabulated pulse needs at least one component".into()));
        }
        Ok(Self { splines })
    }

    /// CSV layout `x, phi_1, ..., phi_n`, optional header.
    pub fn from_csv_reader<R: std::io::Read>(n: usize, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut xs = Vec::new();
        let mut comps = vec![Vec::new(); n];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if row == 0 => continue,
                Err(e) => return Err(Error::Config(format!("pulse CSV row {}: {e}", row + 1))),
            };
            if vals.len() != n + 1 {
                return Err(Error::Config(format!("pulse CSV row {} has {} columns, expected {}", row + 1, vals.len(), n + 1)));
            }
            xs.push(vals[0]);
            for (c, v) in comps.iter_mut().zip(&vals[1..]) {
                c.push(*v);
            }
        }
        Self::new(xs, comps)
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.splines[0].x_range()
    }
}

impl PulseProfile for TabulatedPulse {
    fn dim(&self) -> usize {
        self.splines.len()
    }
    fn value(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.splines.iter().map(|s| s.eval_all(x).0))
    }
    fn derivative(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.splines.iter().map(|s| s.eval_all(x).1))
    }
    fn second_derivative(&self, x: f64) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.splines.iter().map(|s| s.eval_all(x).2))
    }
}

pub struct FnProfile<P, Q> {
    n: usize,
    value: P,
    derivative: Q,
}

impl<P, Q> FnProfile<P, Q> {
    pub fn new(n: usize, value: P, derivative: Q) -> Self {
        Self { n, value, derivative }
    }
}

impl<P, Q> fmt::Debug for FnProfile<P, Q> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnProfile").field("n", &self.n).finish_non_exhaustive()
    }
}

impl<P, Q> PulseProfile for FnProfile<P, Q>
where
    P: Fn(f64) -> DVector<f64> + Send + Sync,
    Q: Fn(f64) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, x: f64) -> DVector<f64> {
        (self.value)(x)
    }
    fn derivative(&self, x: f64) -> DVector<f64> {
        (self.derivative)(x)
    }
}

/// Gradient nonlinearity plus a steady pulse of `D u_xx + grad F(u) = 0`.
#[derive(Clone)]
pub struct PulseProblem {
    diffusion: Vec<f64>,
    nonlinearity: Arc<dyn GradientNonlinearity>,
    profile: Arc<dyn PulseProfile>,
    label: String,
}

impl fmt::Debug for PulseProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PulseProblem")
            .field("label", &self.label)
            .field("diffusion", &self.diffusion)
            .field("nonlinearity", &self.nonlinearity)
            .field("profile", &self.profile)
            .finish()
    }
}

impl PulseProblem {
    pub fn new(
        diffusion: Vec<f64>,
        nonlinearity: Arc<dyn GradientNonlinearity>,
        profile: Arc<dyn PulseProfile>,
    ) -> Result<Self> {
        let n = diffusion.len();
        if n == 0 || diffusion.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::InvalidProblem("diffusion entries must be positive".into()));
        }
        if nonlinearity.dim() != n || profile.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: nonlinearity.dim().max(profile.dim()) });
        }
        Ok(Self { diffusion, nonlinearity, profile, label: String::new() })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// `u_t = u_xx - u + u^2` with pulse `3/2 sech^2((x - center)/2)`.
    pub fn scalar_quadratic(center: f64) -> Self {
        Self::decoupled_quadratic(vec![1.0], center)
    }

    /// Independent copies `u_i,t = d_i u_i,xx - u_i + u_i^2`, all pulses centred at `center`.
    pub fn decoupled_quadratic(diffusion: Vec<f64>, center: f64) -> Self {
        let n = diffusion.len();
        let profile = SechSquaredPulse { diffusion: diffusion.clone(), center };
        Self::new(diffusion, Arc::new(QuadraticNonlinearity { n }), Arc::new(profile))
            .expect("consistent dimensions")
            .with_label(format!("quadratic pulse x{n} (center={center})"))
    }

    pub fn n(&self) -> usize {
        self.diffusion.len()
    }

    pub fn diffusion(&self) -> &[f64] {
        &self.diffusion
    }

    pub fn nonlinearity(&self) -> &Arc<dyn GradientNonlinearity> {
        &self.nonlinearity
    }

    pub fn profile(&self) -> &Arc<dyn PulseProfile> {
        &self.profile
    }

    /// `-hess F(0)`, the limit of the potential at both ends.
    pub fn background_potential(&self) -> DMatrix<f64> {
        -self.nonlinearity.hessian(&DVector::zeros(self.n()))
    }

    /// Maximum of `||D phi_xx + grad F(phi)||_inf` over the grid and where it occurs.
    pub fn steady_state_residual(&self, grid: &Grid) -> (f64, f64) {
        let d = DVector::from_column_slice(&self.diffusion);
        grid.points()
            .into_iter()
            .map(|x| {
                let phi = self.profile.value(x);
                let r = d.component_mul(&self.profile.second_derivative(x)) + self.nonlinearity.gradient(&phi);
                (vec_norm_inf(&r), x)
            })
            .fold((0.0, grid.x_min), |acc, v| if v.0 > acc.0 { v } else { acc })
    }

    /// `sup ||phi||_inf` on the grid.
    pub fn sup_norm(&self, grid: &Grid) -> f64 {
        grid.points().into_iter().map(|x| vec_norm_inf(&self.profile.value(x))).fold(0.0, f64::max)
    }

    /// Default steady-state tolerance `1e-6 (1 + ||phi||_inf)`.
    pub fn default_tol_steady(&self, grid: &Grid) -> f64 {
        1e-6 * (1.0 + self.sup_norm(grid))
    }
}

#[derive(Debug)]
struct PulsePotential {
    nonlinearity: Arc<dyn GradientNonlinearity>,
    profile: Arc<dyn PulseProfile>,
}

impl Potential for PulsePotential {
    fn dim(&self) -> usize {
        self.profile.dim()
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        -self.nonlinearity.hessian(&self.profile.value(x))
    }
}

/// Builds `H = -D d^2/dx^2 - hess F(phi(x))` after checking that `phi` is a
/// steady pulse on `grid`, then reruns the hypothesis checks on the result.
pub fn build_from_gradient_rd(pp: &PulseProblem, grid: &Grid, tol_steady: Option<f64>) -> Result<Problem> {
    let n = pp.n();
    for &x in &[grid.x_min, grid.x_min + grid.spacing(), 0.5 * (grid.x_min + grid.x_max), grid.x_max] {
        let h = pp.nonlinearity.hessian(&pp.profile.value(x));
        if crate::potential::symmetric_residual(&h) > 1e-12 * h.amax().max(1.0) {
            return Err(Error::InvalidProblem(format!("hess F(phi(x)) is not symmetric at x = {x}")));
        }
    }
    let tol = tol_steady.unwrap_or_else(|| pp.default_tol_steady(grid));
    let (residual, x) = pp.steady_state_residual(grid);
    if residual > tol {
        return Err(Error::SteadyStateResidual { residual, x, tol });
    }
    let scale = 1e-6 * (1.0 + pp.sup_norm(grid));
    for x in [grid.x_min, grid.x_max] {
        let tail = vec_norm_inf(&pp.profile.value(x));
        if tail > scale {
            return Err(Error::InvalidProblem(format!(
                "profile does not decay: |phi({x})| = {tail:.3e} (not a pulse on this grid)"
            )));
        }
    }
    let limit = pp.background_potential();
    let potential = Arc::new(PulsePotential { nonlinearity: pp.nonlinearity.clone(), profile: pp.profile.clone() });
    let label = if pp.label.is_empty() { format!("gradient-rd n={n}") } else { pp.label.clone() };
    let problem = Problem::new(pp.diffusion.clone(), potential, limit.clone(), limit)?.with_label(label);
    check_hypotheses(&problem, grid, &HypothesisTolerances::default())?;
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::SechPulsePotential;

    #[test]
    fn scalar_pulse_potential_matches_closed_form() {
        let pp = PulseProblem::scalar_quadratic(0.0);
        let p = build_from_gradient_rd(&pp, &Grid::default(), None).unwrap();
        let reference = SechPulsePotential { center: 0.0 };
        for x in [-7.0, -1.3, 0.0, 0.4, 12.0] {
            assert!((p.v(x)[(0, 0)] - reference.eval(x)[(0, 0)]).abs() < 1e-14);
        }
        assert_eq!(p.v_minus()[(0, 0)], 1.0);
        assert_eq!(p.v_plus()[(0, 0)], 1.0);
        // Tails approach the background value.
        assert!((p.v(-40.0)[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pulse_derivatives_are_consistent() {
        let pulse = SechSquaredPulse { diffusion: vec![1.0, 2.5], center: 0.7 };
        for x in [-3.0, 0.1, 2.2] {
            let h = 1e-5;
            let fd = (pulse.value(x + h) - pulse.value(x - h)) / (2.0 * h);
            assert!((fd - pulse.derivative(x)).amax() < 1e-8);
            let fd2 = (pulse.derivative(x + h) - pulse.derivative(x - h)) / (2.0 * h);
            assert!((fd2 - pulse.second_derivative(x)).amax() < 1e-8);
        }
        // phi_x(0) = 0 and phi_xx(0) = 1.5 - 2.25 for d = 1.
        let s = SechSquaredPulse { diffusion: vec![1.0], center: 0.0 };
        assert_eq!(s.derivative(0.0)[0], 0.0);
        assert!((s.second_derivative(0.0)[0] + 0.75).abs() < 1e-15);
    }

    #[test]
    fn decoupled_copy_is_block_diagonal() {
        let pp = PulseProblem::decoupled_quadratic(vec![1.0, 1.0], 0.0);
        let p = build_from_gradient_rd(&pp, &Grid::default(), None).unwrap();
        assert_eq!(p.v_minus(), &DMatrix::identity(2, 2));
        let v = p.v(0.3);
        assert_eq!(v[(0, 1)], 0.0);
        assert_eq!(v[(0, 0)], v[(1, 1)]);
    }

    #[test]
    fn zero_profile_gives_constant_potential() {
        let profile = FnProfile::new(1, |_| DVector::zeros(1), |_| DVector::zeros(1));
        let pp = PulseProblem::new(vec![1.0], Arc::new(QuadraticNonlinearity { n: 1 }), Arc::new(profile)).unwrap();
        let p = build_from_gradient_rd(&pp, &Grid::default(), None).unwrap();
        assert_eq!(p.v(3.0)[(0, 0)], 1.0);
        assert_eq!(p.v(-3.0), *p.v_minus());
    }

    #[test]
    fn wrong_profile_is_rejected_with_location() {
        // Amplitude 1 instead of 3/2: not a steady state.
        let profile = FnProfile::new(
            1,
            |x: f64| DVector::from_element(1, 1.0 / (0.5 * x).cosh().powi(2)),
            |x: f64| DVector::from_element(1, -(0.5 * x).tanh() / (0.5 * x).cosh().powi(2)),
        );
        let pp = PulseProblem::new(vec![1.0], Arc::new(QuadraticNonlinearity { n: 1 }), Arc::new(profile)).unwrap();
        match build_from_gradient_rd(&pp, &Grid::default(), None) {
            Err(Error::SteadyStateResidual { residual, x, .. }) => {
                assert!(residual > 1e-2);
                assert!(x.abs() < 5.0);
            }
            other => panic!("expected steady-state error, got {other:?}"),
        }
    }
}
