//! Crossings of the unstable frame with the Dirichlet plane, their crossing
//! forms, and the Maslov box `[-lambda_inf, 0] x [x_min, L]`.
//!
//! A kernel eigenvalue `0` of `H` makes the `lambda = 0` trace ill conditioned
//! far to the right: the decaying kernel solution is swamped by the growing
//! mode and the trace can show crossings that are not there. Counts are
//! therefore taken on the box with top edge `lambda = -kernel_shift`; the
//! `lambda = 0` trace supplies the reported locations, and a `lambda = 0`
//! crossing without a partner on the shifted trace is reported as
//! kernel-ambiguous instead of being counted.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{eigenvalues_hl, OracleControls, SpectrumReport};
use crate::problem::Problem;
use crate::error::Side;
use crate::propagation::{
    propagate_from, propagate_frame, truncation_point, truncation_point_side, unstable_subspace_at_minus_infinity,
    PropagationControls, PropagationTrace, DEFAULT_TOL_ASYM,
};
use crate::symplectic::{dirichlet_intersection, DirichletPlane, LagrangianFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "s-axis")]
    S,
    #[serde(rename = "lambda-axis")]
    Lambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub location: f64,
    pub axis: Axis,
    pub multiplicity: usize,
    /// Eigenvalues of the crossing form on the intersection, ascending.
    pub form_eigenvalues: Vec<f64>,
    /// `n_+ - n_-` of the crossing form.
    pub signature: i64,
    pub location_error: f64,
}

impl Crossing {
    /// Builds a crossing from its form; a form that is not positive definite is
    /// a hard error.
    pub fn from_form(location: f64, axis: Axis, form: &DMatrix<f64>, location_error: f64) -> Result<Self> {
        let eig: Vec<f64> = linalg::sym_eigenvalues(form).iter().copied().collect();
        let pos = eig.iter().filter(|&&e| e > 0.0).count() as i64;
        let neg = eig.iter().filter(|&&e| e < 0.0).count() as i64;
        if let Some(&min) = eig.first() {
            if !(min > 0.0) {
                return Err(Error::MonotonicityViolated { location, min_eigenvalue: min });
            }
        }
        Ok(Self { location, axis, multiplicity: eig.len(), form_eigenvalues: eig, signature: pos - neg, location_error })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaslovControls {
    pub propagation: PropagationControls,
    /// Location tolerance for crossings along `s`.
    pub tol_s: f64,
    /// Relative singular-value threshold deciding `dim(frame ∩ D)`.
    pub tol_rank: f64,
    /// Location tolerance for crossings along `lambda`.
    pub tol_lambda: f64,
    /// Distance of the shifted top edge below `lambda = 0`.
    pub kernel_shift: f64,
    /// Grid points on each `lambda` edge.
    pub lambda_points: usize,
    /// Largest distance between a `lambda = 0` crossing and its shifted partner.
    pub match_window: f64,
    /// Sampled `sigma_min` minima above this are not examined.
    pub dip_threshold: f64,
    pub x_min: Option<f64>,
    pub tol_asym: f64,
    /// First `L` tried by [`morse_index_via_maslov`].
    pub initial_l: f64,
    pub max_doublings: usize,
}

impl Default for MaslovControls {
    fn default() -> Self {
        Self {
            propagation: PropagationControls::default(),
            tol_s: 1e-8,
            tol_rank: 1e-8,
            tol_lambda: 1e-10,
            kernel_shift: 1e-6,
            lambda_points: 200,
            match_window: 1e-2,
            dip_threshold: 0.25,
            x_min: None,
            tol_asym: DEFAULT_TOL_ASYM,
            initial_l: 10.0,
            max_doublings: 6,
        }
    }
}

impl MaslovControls {
    pub fn x_min(&self, p: &Problem) -> Result<f64> {
        match self.x_min {
            Some(x) => Ok(x),
            None => Ok(truncation_point(p, self.tol_asym)?.x),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample {
    pub(crate) t: f64,
    pub(crate) det: f64,
    pub(crate) sigma: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Candidate {
    SignChange(f64, f64),
    Dip(f64, f64),
}

pub(crate) fn candidates(samples: &[Sample], dip_threshold: f64) -> Vec<Candidate> {
    let mut out = Vec::new();
    for w in samples.windows(2) {
        if w[0].det * w[1].det < 0.0 {
            out.push(Candidate::SignChange(w[0].t, w[1].t));
        }
    }
    let m = samples.len();
    for i in 0..m {
        let s = samples[i].sigma;
        if s >= dip_threshold {
            continue;
        }
        let left = if i > 0 { samples[i - 1].sigma } else { f64::INFINITY };
        let right = if i + 1 < m { samples[i + 1].sigma } else { f64::INFINITY };
        if s <= left && s < right || s < left && s <= right {
            let a = samples[i.saturating_sub(1)].t;
            let b = samples[(i + 1).min(m - 1)].t;
            out.push(Candidate::Dip(a, b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Located {
    pub(crate) t: f64,
    pub(crate) error: f64,
    pub(crate) sign_change: bool,
}

/// Refines candidates into crossing locations; `det` and `sigma` evaluate the
/// orthonormal frame's `det X` and `sigma_min(X)`. Each dip is resampled until
/// crossings more than `10 tol` apart are resolved.
pub(crate) fn locate<D, S>(cands: &[Candidate], det: D, sigma: S, tol: f64, tol_rank: f64) -> Vec<Located>
where
    D: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    let mut found: Vec<Located> = Vec::new();
    for c in cands {
        match *c {
            Candidate::SignChange(a, b) => {
                let (t, err) = linalg::bisect(&det, a, b, tol);
                found.push(Located { t, error: err, sign_change: true });
            }
            Candidate::Dip(a, b) => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                zoom_dip(&det, &sigma, lo, hi, tol, tol_rank, &mut found);
            }
        }
    }
    found.sort_by(|a, b| a.t.total_cmp(&b.t));
    let merge = 5.0 * tol;
    let mut out: Vec<Located> = Vec::new();
    for f in found {
        match out.last_mut() {
            Some(last) if (f.t - last.t).abs() <= merge => {
                if f.sign_change && !last.sign_change {
                    *last = f;
                }
            }
            _ => out.push(f),
        }
    }
    out
}

fn push_dip<S: Fn(f64) -> f64>(sigma: &S, lo: f64, hi: f64, tol: f64, tol_rank: f64, found: &mut Vec<Located>) {
    let (t, s) = linalg::golden_min(sigma, lo, hi, tol);
    if s <= tol_rank {
        found.push(Located { t, error: tol, sign_change: false });
    }
}

const ZOOM_POINTS: usize = 17;

fn zoom_dip<D, S>(det: &D, sigma: &S, lo: f64, hi: f64, tol: f64, tol_rank: f64, found: &mut Vec<Located>)
where
    D: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    let samples: Vec<Sample> = linspace(lo, hi, ZOOM_POINTS)
        .into_iter()
        .map(|t| Sample { t, det: det(t), sigma: sigma(t) })
        .collect();
    for c in candidates(&samples, f64::INFINITY) {
        match c {
            Candidate::SignChange(a, b) => {
                let (t, err) = linalg::bisect(det, a, b, tol);
                found.push(Located { t, error: err, sign_change: true });
            }
            Candidate::Dip(a, b) if (b - a).abs() > 20.0 * tol => {
                zoom_dip(det, sigma, a.min(b), a.max(b), tol, tol_rank, found)
            }
            Candidate::Dip(a, b) => push_dip(sigma, a.min(b), a.max(b), tol, tol_rank, found),
        }
    }
}

/// Kernel of `X` at a located crossing; a sign change forces dimension >= 1.
fn kernel_of(frame: &LagrangianFrame, tol_rank: f64, sign_change: bool) -> DMatrix<f64> {
    let inter = dirichlet_intersection(frame, tol_rank);
    if inter.dimension == 0 && sign_change {
        let n = frame.n();
        let (_, v) = linalg::svd_sorted(&frame.top().clone_owned());
        return v.columns(n - 1, 1).clone_owned();
    }
    inter.kernel_basis
}

/// `Q[c, c'] = <D^-1 Y c, Y c'>` on `ker X` of the frame at `s`.
pub fn crossing_form_s(trace: &PropagationTrace, s: f64, kernel_basis: &DMatrix<f64>) -> DMatrix<f64> {
    let frame = trace.frame_at(s);
    form_s_of(&frame, trace.diffusion(), kernel_basis)
}

fn form_s_of(frame: &LagrangianFrame, d: &nalgebra::DVector<f64>, kernel: &DMatrix<f64>) -> DMatrix<f64> {
    let yk = frame.bottom() * kernel;
    let d_inv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
    yk.transpose() * d_inv * yk
}

/// `Q[c, c'] = int_{x_min}^{s} <p1^(c), p1^(c')> dx` for the solutions whose
/// coordinates in the orthonormal frame at `s` are the columns of `kernel_basis`.
pub fn crossing_form_lambda(
    p: &Problem,
    lambda0: f64,
    x_min: f64,
    s: f64,
    kernel_basis: &DMatrix<f64>,
    controls: &PropagationControls,
) -> Result<DMatrix<f64>> {
    let trace = propagate_frame(p, lambda0, x_min, s, controls)?;
    Ok(trace.top_block_gram(kernel_basis))
}

/// All crossings along a stored trace, with multiplicities and crossing forms.
pub fn s_crossings(trace: &PropagationTrace, ctl: &MaslovControls) -> Result<Vec<Crossing>> {
    let samples: Vec<Sample> =
        trace.samples().iter().map(|s| Sample { t: s.x, det: s.det_x, sigma: s.sigma_min }).collect();
    let cands = candidates(&samples, ctl.dip_threshold);
    let located = locate(&cands, |x| trace.det_x_at(x), |x| trace.sigma_min_at(x), ctl.tol_s, ctl.tol_rank);
    check_separation(&located, ctl.tol_s)?;
    located
        .iter()
        .map(|l| {
            let frame = trace.frame_at(l.t);
            let kernel = kernel_of(&frame, ctl.tol_rank, l.sign_change);
            let q = form_s_of(&frame, trace.diffusion(), &kernel);
            Crossing::from_form(l.t, Axis::S, &q, l.error)
        })
        .collect()
}

pub(crate) fn check_separation(located: &[Located], tol: f64) -> Result<()> {
    for w in located.windows(2) {
        if (w[1].t - w[0].t).abs() <= 10.0 * tol {
            return Err(Error::Precondition(format!(
                "crossings at {:.12} and {:.12} are not isolated",
                w[0].t, w[1].t
            )));
        }
    }
    Ok(())
}

/// Point where crossings of the right edge are detected: the middle of the
/// region where the potential differs from its limits, kept inside `[x_min, L]`.
pub fn matching_point(p: &Problem, x_min: f64, l: f64, tol_asym: f64) -> f64 {
    let left = truncation_point_side(p, Side::Minus, tol_asym).map(|t| t.x).unwrap_or(x_min);
    let right = truncation_point_side(p, Side::Plus, tol_asym).map(|t| t.x).unwrap_or(l);
    (0.5 * (left + right)).clamp(x_min, l)
}

/// The two halves of the right-edge problem at one `lambda`: the unstable frame
/// carried from `x_min` to `x_m`, and the Dirichlet plane at `L` carried back to `x_m`.
struct Matching {
    forward: PropagationTrace,
    backward: PropagationTrace,
}

impl Matching {
    fn new(p: &Problem, lambda: f64, x_min: f64, x_m: f64, l: f64, pc: &PropagationControls, store: bool) -> Result<Self> {
        let init = unstable_subspace_at_minus_infinity(p, lambda)?;
        let forward = propagate_from(p, lambda, init.matrix(), x_min, x_m, pc, store)?;
        let dirichlet = DirichletPlane::new(p.n()).canonical_frame();
        let backward = propagate_from(p, lambda, dirichlet.matrix(), l, x_m, pc, store)?;
        Ok(Self { forward, backward })
    }

    /// `[F_u | F_D]` at `x_m`; singular exactly when `X(L; lambda)` is.
    fn matrix(&self) -> DMatrix<f64> {
        let fu = self.forward.final_frame();
        let fd = self.backward.final_frame();
        let n = fu.n();
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (2 * n, n)).copy_from(fu.matrix());
        m.view_mut((0, n), (2 * n, n)).copy_from(fd.matrix());
        m
    }

    /// Crossing form on the intersection, in a basis orthonormal at `x_m`:
    /// `int_{x_min}^{L} <p1, p1'>` split at `x_m` between the two traces.
    fn form(&self, multiplicity: usize) -> DMatrix<f64> {
        let m = self.matrix();
        let n = m.ncols() / 2;
        let (_, v) = linalg::svd_sorted(&m);
        let null = v.columns(2 * n - multiplicity, multiplicity).clone_owned();
        let fu = self.forward.final_frame().into_matrix();
        let fd = self.backward.final_frame().into_matrix();
        let b = linalg::orthonormalize(&null.rows(0, n).clone_owned());
        let solutions = &fu * &b;
        let c = fd.transpose() * &solutions;
        self.forward.top_block_gram(&b) + self.backward.top_block_gram(&c)
    }
}

/// Crossings of `lambda -> frame(L; lambda)` with `D` on `[lo, hi]`, sampled on
/// `lambda_points` grid values and refined.
///
/// Far from the potential the forward frame at `L` is dominated by the growing
/// mode and its intersection with `D` lives on a `lambda` window of width about
/// `exp(-2 nu L)`; the matching matrix at an interior point has the same zeros
/// with `O(1)` dips, so even multiplicities are seen on a coarse grid.
pub fn lambda_crossings(
    p: &Problem,
    x_min: f64,
    l: f64,
    lo: f64,
    hi: f64,
    ctl: &MaslovControls,
) -> Result<Vec<Crossing>> {
    let pc = ctl.propagation;
    let x_m = matching_point(p, x_min, l, ctl.tol_asym);
    let matrix = |lam: f64| Matching::new(p, lam, x_min, x_m, l, &pc, false).map(|m| m.matrix());
    let grid: Vec<f64> = linspace(lo, hi, ctl.lambda_points);
    let mats: Vec<DMatrix<f64>> = grid.par_iter().map(|&lam| matrix(lam)).collect::<Result<_>>()?;
    let samples: Vec<Sample> = grid
        .iter()
        .zip(&mats)
        .map(|(&t, m)| Sample { t, det: m.determinant(), sigma: linalg::sigma_min(m) })
        .collect();
    let cands = candidates(&samples, ctl.dip_threshold);
    let det = |lam: f64| matrix(lam).map(|m| m.determinant()).unwrap_or(f64::NAN);
    let sigma = |lam: f64| matrix(lam).map(|m| linalg::sigma_min(&m)).unwrap_or(f64::NAN);
    let located = locate(&cands, det, sigma, ctl.tol_lambda, ctl.tol_rank);
    check_separation(&located, ctl.tol_lambda)?;
    let matched: Vec<(Matching, usize)> = located
        .par_iter()
        .map(|loc| {
            let m = Matching::new(p, loc.t, x_min, x_m, l, &pc, true)?;
            let sv = linalg::singular_values(&m.matrix());
            let scale = sv[0];
            let mut mult = sv.iter().filter(|&&s| s <= ctl.tol_rank.sqrt() * scale).count();
            if mult == 0 && loc.sign_change {
                mult = 1;
            }
            Ok((m, mult))
        })
        .collect::<Result<_>>()?;
    let mults = split_shared_rank(&matched.iter().map(|(_, k)| *k).collect::<Vec<_>>());
    located
        .iter()
        .zip(&matched)
        .zip(mults)
        .map(|((loc, (m, _)), k)| Crossing::from_form(loc.t, Axis::Lambda, &m.form(k), loc.error))
        .collect()
}

/// Neighbouring crossings closer than the rank window each see the other's
/// small singular values. Runs of points reporting multiplicity >= 2 share
/// `max(largest report, run length)`, at least one per point.
pub(crate) fn split_shared_rank(reported: &[usize]) -> Vec<usize> {
    let mut out = reported.to_vec();
    let mut i = 0;
    while i < reported.len() {
        let mut j = i + 1;
        while j < reported.len() && reported[i] >= 2 && reported[j] >= 2 {
            j += 1;
        }
        if j - i >= 2 {
            let run = &reported[i..j];
            let peak = run.iter().copied().max().unwrap_or(0);
            let first_max = i + run.iter().position(|&k| k == peak).unwrap_or(0);
            let total = peak.max(run.len());
            for (idx, slot) in out[i..j].iter_mut().enumerate() {
                *slot = if i + idx == first_max { total - (run.len() - 1) } else { 1 };
            }
        }
        i = j;
    }
    out
}

pub(crate) fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Conjugate points on `(x_min, L]` together with the data used to count them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePointScan {
    pub x_min: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub kernel_shift: f64,
    /// Crossings of the `lambda = 0` trace confirmed by the shifted trace.
    pub conjugate_points: Vec<Crossing>,
    /// Crossings of the `lambda = -kernel_shift` trace; these are counted.
    pub shifted_crossings: Vec<Crossing>,
    /// `lambda = 0` crossings with no shifted partner (not counted).
    pub kernel_ambiguous: Vec<Crossing>,
    /// A `lambda = 0` crossing at `s = L` itself.
    pub endpoint: Option<Crossing>,
    pub max_lagrangian_residual: f64,
    pub sign_violations: usize,
}

impl ConjugatePointScan {
    /// Conjugate points in `(x_min, L]` with multiplicity.
    pub fn count(&self) -> usize {
        self.shifted_crossings.iter().map(|c| c.multiplicity).sum::<usize>()
            + self.endpoint.as_ref().map_or(0, |c| c.multiplicity)
    }
}

/// Locates all `s` in `(x_min, L]` with `frame(s; 0) ∩ D != {0}`.
pub fn find_conjugate_points(p: &Problem, l: f64, ctl: &MaslovControls) -> Result<ConjugatePointScan> {
    let x_min = ctl.x_min(p)?;
    if !(l > x_min) {
        return Err(Error::Precondition(format!("L = {l} must exceed x_min = {x_min}")));
    }
    let eps = ctl.kernel_shift;
    let traces: Vec<PropagationTrace> = [0.0, -eps]
        .par_iter()
        .map(|&lam| propagate_frame(p, lam, x_min, l, &ctl.propagation))
        .collect::<Result<_>>()?;
    let at_zero = s_crossings(&traces[0], ctl)?;
    let shifted = s_crossings(&traces[1], ctl)?;

    let endpoint_tol = (10.0 * ctl.tol_s).max(1e-7);
    let mut endpoint = None;
    let mut interior = Vec::new();
    for c in at_zero {
        if (l - c.location).abs() <= endpoint_tol.max(c.location_error) {
            endpoint = Some(c);
        } else {
            interior.push(c);
        }
    }
    let (conjugate_points, kernel_ambiguous) = match_clusters(interior, &shifted, ctl.match_window);
    Ok(ConjugatePointScan {
        x_min,
        l,
        kernel_shift: eps,
        conjugate_points,
        shifted_crossings: shifted,
        kernel_ambiguous,
        endpoint,
        max_lagrangian_residual: traces.iter().map(|t| t.max_lagrangian_residual).fold(0.0, f64::max),
        sign_violations: traces.iter().map(|t| t.sign_violations).sum(),
    })
}

/// Groups crossings of the `lambda = 0` and shifted traces into clusters whose
/// members are chained by gaps of at most `window`. A `lambda = 0` crossing is
/// kept when its cluster has the same total multiplicity on both traces.
fn match_clusters(at_zero: Vec<Crossing>, shifted: &[Crossing], window: f64) -> (Vec<Crossing>, Vec<Crossing>) {
    let mut events: Vec<(f64, Option<usize>, usize)> = at_zero
        .iter()
        .enumerate()
        .map(|(i, c)| (c.location, Some(i), c.multiplicity))
        .chain(shifted.iter().map(|c| (c.location, None, c.multiplicity)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut matched = vec![false; at_zero.len()];
    let mut start = 0;
    for end in 1..=events.len() {
        if end < events.len() && events[end].0 - events[end - 1].0 <= window {
            continue;
        }
        let cluster = &events[start..end];
        let zero: usize = cluster.iter().filter(|e| e.1.is_some()).map(|e| e.2).sum();
        let moved: usize = cluster.iter().filter(|e| e.1.is_none()).map(|e| e.2).sum();
        if zero == moved {
            for e in cluster {
                if let Some(i) = e.1 {
                    matched[i] = true;
                }
            }
        }
        start = end;
    }
    let (kept, flagged): (Vec<_>, Vec<_>) = at_zero.into_iter().zip(matched).partition(|(_, m)| *m);
    (kept.into_iter().map(|(c, _)| c).collect(), flagged.into_iter().map(|(c, _)| c).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCount {
    pub nonpositive_count: usize,
    pub morse: usize,
    pub kernel_ambiguous: usize,
    pub eigenvalues: Vec<f64>,
}

impl From<&SpectrumReport> for OracleCount {
    fn from(r: &SpectrumReport) -> Self {
        Self {
            nonpositive_count: r.nonpositive_count,
            morse: r.morse,
            kernel_ambiguous: r.kernel_ambiguous,
            eigenvalues: r.values(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleChecks {
    pub a1_zero: bool,
    pub a4_zero: bool,
    pub identity_holds: bool,
    pub a2_equals_abs_a3: bool,
    /// `|A3|` equals the oracle's nonpositive count of `H_L`.
    pub a3_matches_oracle: bool,
    /// A nonzero `lambda = 0` kernel is present (flagged, not counted).
    pub kernel_flagged: bool,
    pub max_lagrangian_residual: f64,
    pub lagrangian_ok: bool,
    pub sign_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaslovReport {
    #[serde(rename = "A1")]
    pub a1: i64,
    #[serde(rename = "A2")]
    pub a2: i64,
    #[serde(rename = "A3")]
    pub a3: i64,
    #[serde(rename = "A4")]
    pub a4: i64,
    pub conjugate_points: Vec<Crossing>,
    pub shifted_conjugate_points: Vec<Crossing>,
    pub kernel_ambiguous: Vec<Crossing>,
    pub lambda_crossings: Vec<Crossing>,
    #[serde(rename = "endpoint_crossing_at_L")]
    pub endpoint_crossing_at_l: Option<Crossing>,
    /// Negative eigenvalues of `H_L` counted by the `lambda` sweep.
    pub morse_from_maslov: usize,
    pub oracle: OracleCount,
    pub lambda_inf: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub x_min: f64,
    pub kernel_shift: f64,
    pub checks: RectangleChecks,
}

fn total(cs: &[Crossing]) -> i64 {
    cs.iter().map(|c| c.multiplicity as i64).sum()
}

/// The four edges of the box and the identity `A1 + A2 + A3 + A4 = 0`.
pub fn maslov_rectangle(p: &Problem, l: f64, lambda_inf: f64, ctl: &MaslovControls) -> Result<MaslovReport> {
    if !(lambda_inf > ctl.kernel_shift) {
        return Err(Error::Precondition(format!("lambda_inf = {lambda_inf} must be positive")));
    }
    let scan = find_conjugate_points(p, l, ctl)?;
    let x_min = scan.x_min;
    let top = -ctl.kernel_shift;

    // Left edge: initial frames are graphs over the X block, so no crossings
    // are expected; sample them anyway.
    let grid = linspace(-lambda_inf, top, ctl.lambda_points);
    let mut a1 = 0i64;
    for &lam in &grid {
        let f = unstable_subspace_at_minus_infinity(p, lam)?;
        a1 += dirichlet_intersection(&f, ctl.tol_rank).dimension as i64;
    }

    // Bottom edge.
    let bottom = propagate_frame(p, -lambda_inf, x_min, l, &ctl.propagation)?;
    let a4 = -total(&s_crossings(&bottom, ctl)?);

    // Right edge, swept downward from the shifted top.
    let lam_cross = lambda_crossings(p, x_min, l, -lambda_inf, top, ctl)?;
    let endpoint_mult = scan.endpoint.as_ref().map_or(0, |c| c.multiplicity as i64);
    let a3 = -total(&lam_cross) - endpoint_mult;
    let a2 = total(&scan.shifted_crossings) + endpoint_mult;

    let oracle_ctl = OracleControls { x_left: None, tol_asym: ctl.tol_asym, ..OracleControls::default() };
    let spectrum = eigenvalues_hl(p, l, &oracle_ctl)?;
    let oracle = OracleCount::from(&spectrum);

    let max_lag = scan.max_lagrangian_residual.max(bottom.max_lagrangian_residual);
    let checks = RectangleChecks {
        a1_zero: a1 == 0,
        a4_zero: a4 == 0,
        identity_holds: a1 + a2 + a3 + a4 == 0,
        a2_equals_abs_a3: a2 == -a3,
        a3_matches_oracle: (-a3) as usize == oracle.nonpositive_count + endpoint_mult as usize,
        kernel_flagged: !scan.kernel_ambiguous.is_empty() || spectrum.kernel_ambiguous > 0,
        max_lagrangian_residual: max_lag,
        lagrangian_ok: max_lag <= ctl.propagation.tol_lag,
        sign_violations: scan.sign_violations + bottom.sign_violations,
    };
    let report = MaslovReport {
        a1,
        a2,
        a3,
        a4,
        conjugate_points: scan.conjugate_points,
        shifted_conjugate_points: scan.shifted_crossings,
        kernel_ambiguous: scan.kernel_ambiguous,
        lambda_crossings: lam_cross,
        endpoint_crossing_at_l: scan.endpoint,
        morse_from_maslov: (-a3 - endpoint_mult) as usize,
        oracle,
        lambda_inf,
        l,
        x_min,
        kernel_shift: ctl.kernel_shift,
        checks,
    };
    if !report.checks.identity_holds {
        return Err(Error::Identity(format!(
            "A = ({}, {}, {}, {}) does not sum to zero; report: {}",
            a1,
            a2,
            a3,
            a4,
            serde_json::to_string(&report)?
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationStep {
    #[serde(rename = "L")]
    pub l: f64,
    pub count: usize,
    pub locations: Vec<f64>,
    pub multiplicities: Vec<usize>,
    pub kernel_ambiguous: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorseFromMaslov {
    pub morse: usize,
    pub conjugate_points: Vec<Crossing>,
    pub history: Vec<StabilizationStep>,
    /// First `L` of the final run of three agreeing scans.
    pub stabilized_at: f64,
}

fn same_points(a: &StabilizationStep, b: &StabilizationStep, tol: f64) -> bool {
    a.count == b.count
        && a.multiplicities == b.multiplicities
        && a.locations.len() == b.locations.len()
        && a.locations.iter().zip(&b.locations).all(|(x, y)| (x - y).abs() < tol)
}

/// `Mor(H)` as the number of conjugate points, with `L` doubled until count
/// and locations are unchanged over two consecutive doublings.
pub fn morse_index_via_maslov(p: &Problem, ctl: &MaslovControls) -> Result<MorseFromMaslov> {
    let mut l = ctl.initial_l;
    let mut history: Vec<StabilizationStep> = Vec::new();
    for _ in 0..=ctl.max_doublings {
        let scan = find_conjugate_points(p, l, ctl)?;
        history.push(StabilizationStep {
            l,
            count: scan.count(),
            locations: scan.conjugate_points.iter().map(|c| c.location).collect(),
            multiplicities: scan.conjugate_points.iter().map(|c| c.multiplicity).collect(),
            kernel_ambiguous: scan.kernel_ambiguous.len(),
        });
        let k = history.len();
        if k >= 3 {
            let tol = ctl.tol_s.max(1e-12);
            if same_points(&history[k - 3], &history[k - 2], tol) && same_points(&history[k - 2], &history[k - 1], tol) {
                return Ok(MorseFromMaslov {
                    morse: history[k - 1].count,
                    conjugate_points: scan.conjugate_points,
                    stabilized_at: history[k - 3].l,
                    history,
                });
            }
        }
        log::debug!("L = {l}: {} conjugate points", history[k - 1].count);
        l *= 2.0;
    }
    Err(Error::NotStabilized { doublings: ctl.max_doublings, last_l: l / 2.0 })
}
