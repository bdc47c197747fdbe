//! Finite-difference spectral oracle for `H_L` and for `H` on a large interval.
//!
//! The operator is discretized with second-order central differences and
//! Dirichlet conditions at both ends, giving a symmetric block-tridiagonal
//! matrix. Eigenvalues below the essential floor are found by bisection on
//! Sylvester inertia counts from a block `LDL^T` factorization, so no dense
//! eigensolver is needed.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Side};
use crate::linalg;
use crate::problem::Problem;
use crate::propagation::{truncation_point, DEFAULT_TOL_ASYM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleControls {
    /// Coarse grid spacing; the Richardson partner uses `h / 2`.
    pub h: f64,
    /// Left end for `H_L`; derived from the truncation point when absent.
    pub x_left: Option<f64>,
    pub tol_asym: f64,
    /// Extra margin beyond the truncation point, in decay lengths.
    pub margin_decay_lengths: f64,
    /// Half width of the symmetric interval used for the whole line.
    pub half_width: f64,
    /// Lower bound for the kernel-ambiguity cutoff.
    pub zero_tol_floor: f64,
    pub max_eigenvalues: usize,
}

impl Default for OracleControls {
    fn default() -> Self {
        Self {
            h: 0.02,
            x_left: None,
            tol_asym: DEFAULT_TOL_ASYM,
            margin_decay_lengths: 5.0,
            half_width: 40.0,
            zero_tol_floor: 1e-8,
            max_eigenvalues: 64,
        }
    }
}

/// Dirichlet discretization of `H` on `[x_left, x_right]` with spacing `h`.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub x_left: f64,
    pub x_right: f64,
    pub h: f64,
    n: usize,
    xs: Vec<f64>,
    diag: Vec<DMatrix<f64>>,
    /// Off-diagonal blocks are `-D / h^2`, stored as the diagonal of `D / h^2`.
    off: DVector<f64>,
}

impl Discretization {
    /// Interior nodes `x_left + i h`, `i = 1..N`; `h` is adjusted so the
    /// interval is an integer number of cells.
    pub fn new(p: &Problem, x_left: f64, x_right: f64, h: f64) -> Result<Self> {
        if !(x_right > x_left) || !(h > 0.0) {
            return Err(Error::Precondition(format!("bad discretization [{x_left}, {x_right}] with h = {h}")));
        }
        let cells = ((x_right - x_left) / h).round().max(2.0) as usize;
        let h = (x_right - x_left) / cells as f64;
        let n = p.n();
        let d = p.diffusion();
        let xs: Vec<f64> = (1..cells).map(|i| x_left + h * i as f64).collect();
        let scale = 1.0 / (h * h);
        let diag = xs
            .iter()
            .map(|&x| {
                let mut b = p.v(x);
                for i in 0..n {
                    b[(i, i)] += 2.0 * d[i] * scale;
                }
                b
            })
            .collect();
        Ok(Self { x_left, x_right, h, n, xs, diag, off: d * scale })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn dimension(&self) -> usize {
        self.xs.len() * self.n
    }

    /// The assembled matrix; only sensible for small grids.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let m = self.xs.len();
        let mut a = DMatrix::zeros(n * m, n * m);
        for (i, b) in self.diag.iter().enumerate() {
            a.view_mut((i * n, i * n), (n, n)).copy_from(b);
            if i + 1 < m {
                for k in 0..n {
                    a[(i * n + k, (i + 1) * n + k)] = -self.off[k];
                    a[((i + 1) * n + k, i * n + k)] = -self.off[k];
                }
            }
        }
        a
    }

    /// Number of eigenvalues strictly below `sigma` (Sylvester inertia).
    pub fn count_below(&self, sigma: f64) -> usize {
        if self.n == 1 {
            return self.count_below_scalar(sigma);
        }
        let n = self.n;
        let b = DMatrix::from_diagonal(&self.off);
        let mut count = 0;
        let mut prev_inv: Option<DMatrix<f64>> = None;
        for blk in &self.diag {
            let mut s = blk.clone();
            for i in 0..n {
                s[(i, i)] -= sigma;
            }
            if let Some(inv) = &prev_inv {
                s -= &b * inv * &b;
            }
            let (mu, w) = linalg::sym_eigen(&s);
            count += mu.iter().filter(|&&m| m < 0.0).count();
            let guarded = mu.map(|m| if m.abs() < f64::MIN_POSITIVE.sqrt() { f64::MIN_POSITIVE.sqrt() } else { m });
            prev_inv = Some(&w * DMatrix::from_diagonal(&guarded.map(|m| 1.0 / m)) * w.transpose());
        }
        count
    }

    fn count_below_scalar(&self, sigma: f64) -> usize {
        let b2 = self.off[0] * self.off[0];
        let mut count = 0;
        let mut prev = f64::INFINITY;
        for blk in &self.diag {
            let mut s = blk[(0, 0)] - sigma - b2 / prev;
            if s == 0.0 {
                s = -f64::EPSILON * blk[(0, 0)].abs().max(1.0);
            }
            if s < 0.0 {
                count += 1;
            }
            prev = s;
        }
        count
    }

    /// Lower bound for the spectrum (the difference part is nonnegative).
    pub fn lower_bound(&self) -> f64 {
        let v_min = self
            .xs
            .iter()
            .zip(&self.diag)
            .map(|(_, b)| {
                let mut v = b.clone();
                for i in 0..self.n {
                    v[(i, i)] -= 2.0 * self.off[i];
                }
                linalg::sym_eigenvalues(&v)[0]
            })
            .fold(f64::INFINITY, f64::min);
        v_min - 1.0
    }

    /// All eigenvalues below `cutoff` (at most `max`), ascending.
    pub fn eigenvalues_below(&self, cutoff: f64, max: usize) -> Vec<f64> {
        let k = self.count_below(cutoff).min(max);
        let lo = self.lower_bound();
        (0..k)
            .map(|j| {
                let (mut a, mut b) = (lo, cutoff);
                while b - a > 1e-14 * (1.0 + a.abs().max(b.abs())) {
                    let mid = 0.5 * (a + b);
                    if self.count_below(mid) > j {
                        b = mid;
                    } else {
                        a = mid;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }

    /// Solves `(A - sigma) y = r` with block Thomas elimination.
    fn solve_shifted(&self, sigma: f64, r: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.n;
        let m = self.xs.len();
        let b = DMatrix::from_diagonal(&self.off.map(|v| -v));
        let mut factors: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = Vec::with_capacity(m);
        let mut c: Vec<DMatrix<f64>> = Vec::with_capacity(m);
        let mut d: Vec<DVector<f64>> = Vec::with_capacity(m);
        for i in 0..m {
            let mut a = self.diag[i].clone();
            for k in 0..n {
                a[(k, k)] -= sigma;
            }
            let mut rhs = r[i].clone();
            if i > 0 {
                a -= &b * &c[i - 1];
                rhs -= &b * &d[i - 1];
            }
            let lu = a.lu();
            let ci = lu.solve(&b).unwrap_or_else(|| DMatrix::zeros(n, n));
            let di = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
            factors.push(lu);
            c.push(ci);
            d.push(di);
        }
        let mut y = vec![DVector::zeros(n); m];
        y[m - 1] = d[m - 1].clone();
        for i in (0..m - 1).rev() {
            y[i] = &d[i] - &c[i] * &y[i + 1];
        }
        y
    }

    /// Eigenvector for the eigenvalue `lambda` by inverse iteration, normalized
    /// in the discrete `L^2` norm. Returns the node values `u(x_i)`.
    pub fn eigenvector(&self, lambda: f64) -> Vec<DVector<f64>> {
        let n = self.n;
        let m = self.xs.len();
        let shift = lambda - 1e-10 * (1.0 + lambda.abs());
        let mut v: Vec<DVector<f64>> = (0..m)
            .map(|i| DVector::from_fn(n, |k, _| 1.0 + 0.1 * ((i * n + k) as f64 * 0.7).sin()))
            .collect();
        for _ in 0..4 {
            let y = self.solve_shifted(shift, &v);
            let norm = (y.iter().map(|u| u.norm_squared()).sum::<f64>() * self.h).sqrt();
            v = y.into_iter().map(|u| u / norm).collect();
        }
        v
    }
}

/// One eigenvalue with its Richardson estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleEigenvalue {
    /// 1-based index in ascending order.
    pub j: usize,
    /// Richardson-extrapolated value `(4 lambda_{h/2} - lambda_h) / 3`.
    pub value: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `|lambda_h - lambda_{h/2}| / 3`.
    pub error: f64,
    /// `max(10 error, floor)`.
    pub zero_tol: f64,
    pub kernel_ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub x_left: f64,
    pub x_right: f64,
    pub h: f64,
    /// Eigenvalues below this value were computed (the essential floor).
    pub cutoff: f64,
    pub eigenvalues: Vec<OracleEigenvalue>,
    /// Strictly negative eigenvalues, beyond their zero tolerance.
    pub morse: usize,
    /// Eigenvalues `<= zero_tol`, with kernel-ambiguous ones left out.
    pub nonpositive_count: usize,
    /// Eigenvalues within their zero tolerance of 0; flagged, not counted.
    pub kernel_ambiguous: usize,
    pub symmetric: bool,
}

impl SpectrumReport {
    pub fn values(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.value).collect()
    }

    pub fn richardson_errors(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e.error).collect()
    }
}

/// Bottom of the essential spectrum, `min Sp(V_-) cup Sp(V_+)` (scaled by nothing:
/// the symbol `k^2 D + V_pm` is smallest at `k = 0`).
pub fn essential_floor(p: &Problem) -> f64 {
    let a = linalg::sym_eigenvalues(p.limit(Side::Minus))[0];
    let b = linalg::sym_eigenvalues(p.limit(Side::Plus))[0];
    a.min(b)
}

/// Eigenvalues of `H` on `[x_left, x_right]` with Dirichlet ends, on grids `h`
/// and `h / 2`.
pub fn eigenvalues_on(p: &Problem, x_left: f64, x_right: f64, ctl: &OracleControls) -> Result<SpectrumReport> {
    let cutoff = essential_floor(p);
    let grids = [ctl.h, 0.5 * ctl.h];
    let discs: Vec<Discretization> =
        grids.iter().map(|&h| Discretization::new(p, x_left, x_right, h)).collect::<Result<_>>()?;
    let spectra: Vec<Vec<f64>> =
        discs.par_iter().map(|d| d.eigenvalues_below(cutoff, ctl.max_eigenvalues)).collect();
    let k = spectra[0].len().min(spectra[1].len());
    let mut eigenvalues = Vec::with_capacity(k);
    for j in 0..k {
        let (coarse, fine) = (spectra[0][j], spectra[1][j]);
        let error = (coarse - fine).abs() / 3.0;
        let value = (4.0 * fine - coarse) / 3.0;
        let zero_tol = (10.0 * error).max(ctl.zero_tol_floor);
        eigenvalues.push(OracleEigenvalue {
            j: j + 1,
            value,
            coarse,
            fine,
            error,
            zero_tol,
            kernel_ambiguous: value.abs() <= zero_tol,
        });
    }
    let morse = eigenvalues.iter().filter(|e| e.value < -e.zero_tol).count();
    let kernel_ambiguous = eigenvalues.iter().filter(|e| e.kernel_ambiguous).count();
    let nonpositive_count = eigenvalues.iter().filter(|e| e.value <= e.zero_tol && !e.kernel_ambiguous).count();
    Ok(SpectrumReport {
        x_left,
        x_right,
        h: discs[0].h,
        cutoff,
        eigenvalues,
        morse,
        nonpositive_count,
        kernel_ambiguous,
        symmetric: discs.iter().all(|d| {
            // Off-diagonal blocks are built from one vector and potentials are
            // checked symmetric upstream; verify the diagonal blocks here.
            d.diag.iter().all(|b| b == &b.transpose())
        }),
    })
}

/// Left end used for `H_L`: the truncation point pushed out by a few decay lengths.
pub fn default_x_left(p: &Problem, ctl: &OracleControls) -> Result<f64> {
    if let Some(x) = ctl.x_left {
        return Ok(x);
    }
    let t = truncation_point(p, ctl.tol_asym)?;
    Ok(t.x - ctl.margin_decay_lengths * t.decay_length())
}

/// Spectrum of `H_L` (Dirichlet at `L`, and at a far left end standing in for
/// decay at `-inf`).
pub fn eigenvalues_hl(p: &Problem, l: f64, ctl: &OracleControls) -> Result<SpectrumReport> {
    let x_left = default_x_left(p, ctl)?;
    if !(l > x_left) {
        return Err(Error::Precondition(format!("L = {l} must exceed the left end {x_left}")));
    }
    eigenvalues_on(p, x_left, l, ctl)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WholeLineReport {
    pub morse: usize,
    /// Spectrum on `[-w, w]`.
    pub base: SpectrumReport,
    /// Spectrum on `[-2w, 2w]`.
    pub doubled: SpectrumReport,
    /// Coarse and fine grids agree on the negative count, and so do both intervals.
    pub stabilized: bool,
}

/// Morse index of `H` from a large symmetric interval, checked under interval
/// doubling and grid halving.
pub fn morse_whole_line(p: &Problem, ctl: &OracleControls) -> Result<WholeLineReport> {
    let w = ctl.half_width;
    let base = eigenvalues_on(p, -w, w, ctl)?;
    let doubled = eigenvalues_on(p, -2.0 * w, 2.0 * w, ctl)?;
    let grid_consistent = |r: &SpectrumReport| {
        let coarse = r.eigenvalues.iter().filter(|e| e.coarse < -e.zero_tol).count();
        let fine = r.eigenvalues.iter().filter(|e| e.fine < -e.zero_tol).count();
        coarse == fine && fine == r.morse
    };
    let stabilized = base.morse == doubled.morse && grid_consistent(&base) && grid_consistent(&doubled);
    if !stabilized {
        return Err(Error::NotStabilized { doublings: 1, last_l: 2.0 * w });
    }
    Ok(WholeLineReport { morse: base.morse, base, doubled, stabilized })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityRow {
    #[serde(rename = "L")]
    pub l: f64,
    pub h: f64,
    pub j: usize,
    pub lambda: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityTable {
    pub j: usize,
    pub rows: Vec<MonotonicityRow>,
    /// No increase larger than the combined error bars.
    pub monotone_within_error: bool,
    /// Every decrement is larger than the combined error bars.
    pub strictly_decreasing_resolved: bool,
    /// `(L_a, L_b, decrement, combined_error)` for every consecutive pair.
    pub steps: Vec<(f64, f64, f64, f64)>,
}

/// `lambda_j(L)` on the given `L` values, all with the same left end.
pub fn eigenvalue_monotonicity(p: &Problem, j: usize, ls: &[f64], ctl: &OracleControls) -> Result<MonotonicityTable> {
    if j == 0 {
        return Err(Error::Precondition("eigenvalue index is 1-based".into()));
    }
    let x_left = default_x_left(p, ctl)?;
    let ctl = OracleControls { x_left: Some(x_left), ..*ctl };
    let reports: Vec<SpectrumReport> = ls.par_iter().map(|&l| eigenvalues_hl(p, l, &ctl)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(ls.len());
    for (&l, r) in ls.iter().zip(&reports) {
        let e = r.eigenvalues.get(j - 1).ok_or_else(|| {
            Error::Precondition(format!(
                "H_L with L = {l} has only {} eigenvalues below the essential floor {:.6}; index {j} does not exist",
                r.eigenvalues.len(),
                r.cutoff
            ))
        })?;
        rows.push(MonotonicityRow { l, h: r.h, j, lambda: e.value, error: e.error });
    }
    let steps: Vec<(f64, f64, f64, f64)> = rows
        .windows(2)
        .map(|w| (w[0].l, w[1].l, w[0].lambda - w[1].lambda, w[0].error + w[1].error))
        .collect();
    Ok(MonotonicityTable {
        j,
        monotone_within_error: steps.iter().all(|&(_, _, dec, err)| dec >= -err),
        strictly_decreasing_resolved: steps.iter().all(|&(_, _, dec, err)| dec > err),
        rows,
        steps,
    })
}

/// Spectrum CSV with columns `L, h, j, lambda_j, error_estimate`.
pub fn write_spectrum_csv<W: Write>(rows: &[MonotonicityRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["L", "h", "j", "lambda_j", "error_estimate"])?;
    for r in rows {
        wtr.write_record(&[
            format!("{:.17e}", r.l),
            format!("{:.17e}", r.h),
            r.j.to_string(),
            format!("{:.17e}", r.lambda),
            format!("{:.17e}", r.error),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Rows for the spectrum CSV from one report.
pub fn spectrum_rows(r: &SpectrumReport) -> Vec<MonotonicityRow> {
    r.eigenvalues
        .iter()
        .map(|e| MonotonicityRow { l: r.x_right, h: r.h, j: e.j, lambda: e.value, error: e.error })
        .collect()
}
