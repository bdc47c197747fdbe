//! Dormand–Prince 5(4) steps on matrix-valued linear ODEs with dense output.
//!
//! Only single steps and the step-size controller live here; the caller owns
//! the integration loop so it can renormalize the state between steps.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControls {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for StepControls {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h_max: 0.25, h_min: 1e-12, max_steps: 2_000_000 }
    }
}

/// Continuous extension of one accepted step (Hairer's coefficients).
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub x0: f64,
    pub h: f64,
    r: [DMatrix<f64>; 5],
}

impl DenseStep {
    pub fn x1(&self) -> f64 {
        self.x0 + self.h
    }

    /// Solution at `x` (meant for `x` inside the step).
    pub fn eval(&self, x: f64) -> DMatrix<f64> {
        let theta = (x - self.x0) / self.h;
        let t1 = 1.0 - theta;
        let [r1, r2, r3, r4, r5] = &self.r;
        let inner = r4 + r5 * t1;
        let inner = r3 + inner * theta;
        let inner = r2 + inner * t1;
        r1 + inner * theta
    }

    /// Re-expresses the step in another basis: returns the interpolant of `y * g`.
    pub fn right_mul(&self, g: &DMatrix<f64>) -> DenseStep {
        DenseStep { x0: self.x0, h: self.h, r: self.r.clone().map(|m| m * g) }
    }
}

pub struct StepResult {
    pub y1: DMatrix<f64>,
    /// Scaled RMS error estimate; accept when `<= 1`.
    pub err: f64,
    pub dense: DenseStep,
}

/// One Dormand–Prince step from `(x, y)` with step `h` (may be negative).
pub fn dopri5_step<F>(f: &F, x: f64, y: &DMatrix<f64>, h: f64, ctl: &StepControls) -> StepResult
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(x, y);
    let k2 = f(x + C2 * h, &(y + &k1 * (h * A21)));
    let k3 = f(x + C3 * h, &(y + (&k1 * A31 + &k2 * A32) * h));
    let k4 = f(x + C4 * h, &(y + (&k1 * A41 + &k2 * A42 + &k3 * A43) * h));
    let k5 = f(x + C5 * h, &(y + (&k1 * A51 + &k2 * A52 + &k3 * A53 + &k4 * A54) * h));
    let k6 = f(x + h, &(y + (&k1 * A61 + &k2 * A62 + &k3 * A63 + &k4 * A64 + &k5 * A65) * h));
    let y1 = y + (&k1 * A71 + &k3 * A73 + &k4 * A74 + &k5 * A75 + &k6 * A76) * h;
    let k7 = f(x + h, &y1);

    let errv = (&k1 * E1 + &k3 * E3 + &k4 * E4 + &k5 * E5 + &k6 * E6 + &k7 * E7) * h;
    let mut acc = 0.0;
    for ((e, a), b) in errv.iter().zip(y.iter()).zip(y1.iter()) {
        let sc = ctl.atol + ctl.rtol * a.abs().max(b.abs());
        acc += (e / sc) * (e / sc);
    }
    let err = (acc / errv.len() as f64).sqrt();

    let r1 = y.clone();
    let r2 = &y1 - y;
    let r3 = &k1 * h - &r2;
    let r4 = &r2 - &k7 * h - &r3;
    let r5 = (&k1 * D1 + &k3 * D3 + &k4 * D4 + &k5 * D5 + &k6 * D6 + &k7 * D7) * h;
    StepResult { y1, err, dense: DenseStep { x0: x, h, r: [r1, r2, r3, r4, r5] } }
}

/// Standard controller: `h_new = h * clamp(0.9 err^{-1/5}, 0.2, 5)`, capped at `h_max`.
pub fn next_step(h: f64, err: f64, ctl: &StepControls) -> f64 {
    let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
    let mag = (h.abs() * fac).min(ctl.h_max);
    mag.copysign(h)
}
