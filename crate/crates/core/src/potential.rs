//! Potentials `x -> V(x)` (symmetric `n x n`) used to build problems.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spline::CubicSpline;

/// A matrix potential. Implementations must be pure functions of `x`.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: f64) -> DMatrix<f64>;
}

pub type SharedPotential = Arc<dyn Potential>;

fn sech(x: f64) -> f64 {
    1.0 / x.cosh()
}

/// `V(x) = c - m (m + 1) sech^2(x)`, bound states at `c - (m - j)^2`, `0 <= j < m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoeschlTeller {
    pub c: f64,
    pub m: f64,
}

impl PoeschlTeller {
    pub fn new(c: f64, m: f64) -> Self {
        Self { c, m }
    }

    /// Closed-form whole-line eigenvalues below the threshold `c`.
    pub fn bound_states(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut j = 0.0;
        while j < self.m {
            out.push(self.c - (self.m - j) * (self.m - j));
            j += 1.0;
        }
        out
    }
}

impl Potential for PoeschlTeller {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        let s = sech(x);
        DMatrix::from_element(1, 1, self.c - self.m * (self.m + 1.0) * s * s)
    }
}

/// Linearization about the quadratic pulse: `V(x) = 1 - 3 sech^2((x - center) / 2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SechPulsePotential {
    pub center: f64,
}

impl Potential for SechPulsePotential {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        let s = sech(0.5 * (x - self.center));
        DMatrix::from_element(1, 1, 1.0 - 3.0 * s * s)
    }
}

#[derive(Debug, Clone)]
pub struct ConstantPotential {
    pub value: DMatrix<f64>,
}

impl Potential for ConstantPotential {
    fn dim(&self) -> usize {
        self.value.nrows()
    }
    fn eval(&self, _x: f64) -> DMatrix<f64> {
        self.value.clone()
    }
}

#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<SharedPotential>,
    dim: usize,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<SharedPotential>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidProblem("block-diagonal potential needs at least one block".into()));
        }
        let dim = blocks.iter().map(|b| b.dim()).sum();
        Ok(Self { blocks, dim })
    }

    pub fn blocks(&self) -> &[SharedPotential] {
        &self.blocks
    }
}

impl Potential for BlockDiagonal {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        let mut off = 0;
        for b in &self.blocks {
            let k = b.dim();
            out.view_mut((off, off), (k, k)).copy_from(&b.eval(x));
            off += k;
        }
        out
    }
}

/// Row-major tabulated samples, cubic-spline interpolated entrywise and held
/// constant beyond the grid.
#[derive(Debug, Clone)]
pub struct Tabulated {
    n: usize,
    splines: Vec<CubicSpline>,
    first: DMatrix<f64>,
    last: DMatrix<f64>,
}

impl Tabulated {
    pub fn new(n: usize, xs: Vec<f64>, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != xs.len() || samples.is_empty() {
            return Err(Error::InvalidProblem("tabulated potential: sample count mismatch".into()));
        }
        for (x, m) in xs.iter().zip(&samples) {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch { expected: n, got: m.nrows() });
            }
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidProblem(format!(
                    "tabulated potential not symmetric at x = {x} (asymmetry {asym:.3e})"
                )));
            }
        }
        let mut splines = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let ys = samples.iter().map(|m| m[(i, j)]).collect();
                splines.push(CubicSpline::new(xs.clone(), ys)?);
            }
        }
        Ok(Self { n, splines, first: samples[0].clone(), last: samples[samples.len() - 1].clone() })
    }

    /// Parses the CSV layout `x, V11, V12, ..., Vnn` (row-major), optional header.
    pub fn from_csv_reader<R: std::io::Read>(n: usize, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
        let mut xs = Vec::new();
        let mut samples = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let vals = match vals {
                Ok(v) => v,
                Err(_) if row == 0 => continue, // header
                Err(e) => return Err(Error::Config(format!("tabulated CSV row {}: {e}", row + 1))),
            };
            if vals.len() != 1 + n * n {
                return Err(Error::Config(format!(
                    "tabulated CSV row {} has {} columns, expected {}",
                    row + 1,
                    vals.len(),
                    1 + n * n
                )));
            }
            xs.push(vals[0]);
            samples.push(DMatrix::from_row_slice(n, n, &vals[1..]));
        }
        Self::new(n, xs, samples)
    }

    pub fn limits(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.first.clone(), self.last.clone())
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.splines[0].x_range()
    }
}

impl Potential for Tabulated {
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = self.splines[i * n + j].eval(x);
            }
        }
        // Interpolation of a symmetric table is symmetric up to rounding.
        (&out + out.transpose()) * 0.5
    }
}

/// `x -> V(x - shift)`.
#[derive(Debug, Clone)]
pub struct Translated {
    pub inner: SharedPotential,
    pub shift: f64,
}

impl Potential for Translated {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        self.inner.eval(x - self.shift)
    }
}

/// `x -> V(x) + c I`, the spectral shift used when a limit is not hyperbolic.
#[derive(Debug, Clone)]
pub struct SpectralShift {
    pub inner: SharedPotential,
    pub c: f64,
}

impl Potential for SpectralShift {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        let n = self.inner.dim();
        self.inner.eval(x) + DMatrix::identity(n, n) * self.c
    }
}

/// Wraps an arbitrary closure.
pub struct FnPotential<F> {
    n: usize,
    f: F,
}

impl<F> FnPotential<F>
where
    F: Fn(f64) -> DMatrix<f64> + Send + Sync,
{
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F> fmt::Debug for FnPotential<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPotential").field("n", &self.n).finish_non_exhaustive()
    }
}

impl<F> Potential for FnPotential<F>
where
    F: Fn(f64) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.n
    }
    fn eval(&self, x: f64) -> DMatrix<f64> {
        (self.f)(x)
    }
}

pub(crate) fn symmetric_residual(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

pub(crate) fn vec_norm_inf(v: &DVector<f64>) -> f64 {
    v.amax()
}
