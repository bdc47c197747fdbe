use serde::{Deserialize, Serialize};

use super::{DecayModel, Grid, Problem};
use crate::error::{Error, Result, Side};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisTolerances {
    /// Relative symmetry tolerance for (H1).
    pub symmetry: f64,
    /// Upper end of the wavenumber grid used for `k^2 D + V_pm > 0`.
    pub k_max: f64,
    pub k_points: usize,
}

impl Default for HypothesisTolerances {
    fn default() -> Self {
        Self { symmetry: 1e-12, k_max: 50.0, k_points: 201 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SymmetryCheck {
    pub max_residual: f64,
    pub worst_x: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LimitCheck {
    pub min_eigenvalue_minus: f64,
    pub min_eigenvalue_plus: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TailCheck {
    pub decay_minus: Option<DecayModel>,
    pub decay_plus: Option<DecayModel>,
    /// Extrapolated `int ||V - V_-||` over `(-inf, grid.x_min]`.
    pub tail_integral_minus: f64,
    /// Extrapolated `int ||V - V_+||` over `[grid.x_max, inf)`.
    pub tail_integral_plus: f64,
    /// Sampled integrals over the grid halves plus the extrapolated tails.
    pub integral_minus: f64,
    pub integral_plus: f64,
    pub pass: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EssentialCheck {
    /// `min_k min_side lambda_min(k^2 D + V_side)` over the sampled wavenumbers.
    pub min_symbol_eigenvalue: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HypothesisReport {
    pub h1_symmetry: SymmetryCheck,
    pub h2_limits: LimitCheck,
    pub h3_integrability: TailCheck,
    pub essential_spectrum: EssentialCheck,
    pub all_pass: bool,
}

/// Checks (H1)-(H3) on the sampled grid.
///
/// A failing (H2) is returned as [`Error::EssentialSpectrum`]: the rest of the
/// theory does not apply and the state is already unstable.
pub fn check_hypotheses(p: &Problem, grid: &Grid, tols: &HypothesisTolerances) -> Result<HypothesisReport> {
    let xs = grid.points();

    let mut max_residual = 0.0_f64;
    let mut worst_x = xs[0];
    for &x in &xs {
        let v = p.v(x);
        let r = crate::potential::symmetric_residual(&v) / v.amax().max(1.0);
        if r > max_residual {
            max_residual = r;
            worst_x = x;
        }
    }
    let h1 = SymmetryCheck { max_residual, worst_x, pass: max_residual <= tols.symmetry };

    let min_m = linalg::sym_eigenvalues(p.v_minus())[0];
    let min_p = linalg::sym_eigenvalues(p.v_plus())[0];
    if !(min_m > 0.0) {
        return Err(Error::EssentialSpectrum { side: Side::Minus, min_eigenvalue: min_m });
    }
    if !(min_p > 0.0) {
        return Err(Error::EssentialSpectrum { side: Side::Plus, min_eigenvalue: min_p });
    }
    let h2 = LimitCheck { min_eigenvalue_minus: min_m, min_eigenvalue_plus: min_p, pass: true };

    let h3 = tail_check(p, grid, &xs);

    let d = linalg::diag(p.diffusion().as_slice());
    let mut min_symbol = f64::INFINITY;
    for i in 0..tols.k_points.max(2) {
        let k = tols.k_max * i as f64 / (tols.k_points.max(2) - 1) as f64;
        for lim in [p.v_minus(), p.v_plus()] {
            let sym = &d * (k * k) + lim;
            min_symbol = min_symbol.min(linalg::sym_eigenvalues(&sym)[0]);
        }
    }
    let essential = EssentialCheck { min_symbol_eigenvalue: min_symbol, pass: min_symbol > 0.0 };

    let all_pass = h1.pass && h2.pass && h3.pass && essential.pass;
    Ok(HypothesisReport { h1_symmetry: h1, h2_limits: h2, h3_integrability: h3, essential_spectrum: essential, all_pass })
}

fn tail_check(p: &Problem, grid: &Grid, xs: &[f64]) -> TailCheck {
    let mut notes = Vec::new();
    let mut fit = |side| match p.decay_model(side) {
        Ok(m) => Some(m),
        Err(e) => {
            notes.push(e.to_string());
            None
        }
    };
    let decay_minus = fit(Side::Minus);
    let decay_plus = fit(Side::Plus);

    let tail_minus = decay_minus.map_or(f64::INFINITY, |m| m.tail_integral(grid.x_min.min(0.0).abs()));
    let tail_plus = decay_plus.map_or(f64::INFINITY, |m| m.tail_integral(grid.x_max.max(0.0)));

    // Trapezoid over each half of the grid.
    let h = grid.spacing();
    let mut int_minus = 0.0;
    let mut int_plus = 0.0;
    for w in xs.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= 0.0 {
            int_minus += 0.5 * h * (p.tail_residual(Side::Minus, a) + p.tail_residual(Side::Minus, b));
        } else if a >= 0.0 {
            int_plus += 0.5 * h * (p.tail_residual(Side::Plus, a) + p.tail_residual(Side::Plus, b));
        }
    }

    // Tail integrals of the outermost grid stretch must shrink outward.
    let mut monotone = true;
    for side in [Side::Minus, Side::Plus] {
        let edge = match side {
            Side::Minus => grid.x_min,
            Side::Plus => grid.x_max,
        };
        let inward = if edge < 0.0 { 1.0 } else { -1.0 };
        let r: Vec<f64> = (0..5).map(|k| p.tail_residual(side, edge + inward * 2.0 * k as f64)).collect();
        if r.windows(2).any(|w| w[0] > w[1] * (1.0 + 1e-9) + 1e-14) {
            monotone = false;
            notes.push(format!("tail residual on the {side} side is not decreasing outward"));
        }
    }

    let pass = tail_minus.is_finite() && tail_plus.is_finite() && monotone;
    TailCheck {
        decay_minus,
        decay_plus,
        tail_integral_minus: tail_minus,
        tail_integral_plus: tail_plus,
        integral_minus: int_minus + tail_minus,
        integral_plus: int_plus + tail_plus,
        pass,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn poeschl_teller_passes() {
        let r = check_hypotheses(&Problem::poeschl_teller(1.0, 2.0), &Grid::default(), &Default::default()).unwrap();
        assert!(r.all_pass, "{r:?}");
        assert_eq!(r.h2_limits.min_eigenvalue_minus, 1.0);
    }

    #[test]
    fn scalar_pulse_passes() {
        let r = check_hypotheses(&Problem::scalar_pulse(0.0), &Grid::default(), &Default::default()).unwrap();
        assert!(r.all_pass);
        assert!((r.essential_spectrum.min_symbol_eigenvalue - 1.0).abs() < 1e-14);
    }

    #[test]
    fn negative_constant_limit_is_an_error() {
        let p = Problem::constant(vec![1.0, 1.0], -DMatrix::identity(2, 2)).unwrap();
        let e = check_hypotheses(&p, &Grid::default(), &Default::default()).unwrap_err();
        assert!(matches!(e, Error::EssentialSpectrum { side: Side::Minus, .. }), "{e}");
    }

    #[test]
    fn deterministic() {
        let p = Problem::poeschl_teller(0.5, 2.0);
        let g = Grid::new(-30.0, 30.0, 601);
        let a = serde_json::to_string(&check_hypotheses(&p, &g, &Default::default()).unwrap()).unwrap();
        let b = serde_json::to_string(&check_hypotheses(&p, &g, &Default::default()).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
