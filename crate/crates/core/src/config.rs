//! Problem files (TOML or JSON) and the tolerance overrides they may carry.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::Tabulated;
use crate::problem::{FnNonlinearity, Grid, Problem, PulseProblem, QuadraticNonlinearity, SechSquaredPulse, TabulatedPulse};

/// Top level of a problem file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n: usize,
    #[serde(rename = "D")]
    pub diffusion: Vec<f64>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub label: Option<String>,
    /// Explicit spectral shift `H + shift`, for limits that are not positive definite.
    #[serde(default)]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    PoeschlTeller {
        c: f64,
        m: f64,
    },
    /// `1 - 3 sech^2((x - center)/2)`.
    #[serde(alias = "shifted-sech-pulse")]
    ScalarPulse {
        #[serde(default)]
        center: f64,
    },
    /// Constant symmetric matrix, given row by row.
    Constant {
        value: Vec<Vec<f64>>,
    },
    /// Direct sum; each block takes the next entries of `D`.
    BlockDiagonal {
        blocks: Vec<PotentialSpec>,
    },
    /// CSV with `x` then the `n^2` row-major entries of `V(x)`.
    Tabulated {
        csv_path: PathBuf,
        #[serde(default)]
        n: Option<usize>,
    },
    GradientRd {
        nonlinearity: NonlinearitySpec,
        profile: ProfileSpec,
        #[serde(default)]
        tol_steady: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    /// `G(u)_i = -u_i + u_i^2`.
    Quadratic,
    /// `G(u)_i = -a_i u_i + b_i u_i^2`.
    DiagonalQuadratic { a: Vec<f64>, b: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileSpec {
    /// `(3/2) sech^2((x - center) / (2 sqrt(d_i)))` in every component.
    SechSquared {
        #[serde(default)]
        center: f64,
    },
    /// CSV with `x, phi_1, ..., phi_n`.
    Tabulated { csv_path: PathBuf },
}

/// Optional overrides; anything absent keeps the library default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub tol_s: Option<f64>,
    pub tol_rank: Option<f64>,
    pub tol_lambda: Option<f64>,
    pub tol_asym: Option<f64>,
    pub tol_lag: Option<f64>,
    pub tol_sym: Option<f64>,
    pub kernel_shift: Option<f64>,
    pub lambda_points: Option<usize>,
    pub lambda_inf: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    pub x_min: Option<f64>,
    /// Finite-difference step of the eigenvalue oracle.
    pub h: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
}

/// A parsed problem: always an operator, and the reaction–diffusion data when
/// the potential came from a pulse.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub file: ProblemFile,
    pub problem: Problem,
    pub pulse: Option<PulseProblem>,
}

impl ProblemFile {
    /// TOML unless the extension is `.json`.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, json).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Builds the operator; relative CSV paths resolve against `base`.
    pub fn build(&self, base: &Path) -> Result<LoadedProblem> {
        if self.diffusion.len() != self.n {
            return Err(Error::Config(format!("D has {} entries but n = {}", self.diffusion.len(), self.n)));
        }
        if self.grid.n_points < 2 || !(self.grid.x_max > self.grid.x_min) {
            return Err(Error::Config("grid needs x_min < x_max and at least two points".into()));
        }
        let (problem, pulse) = match &self.potential {
            PotentialSpec::GradientRd { nonlinearity, profile, tol_steady } => {
                let pp = pulse_problem(self.n, &self.diffusion, nonlinearity, profile, base)?;
                let p = crate::problem::build_from_gradient_rd(&pp, &self.grid, *tol_steady)?;
                (p, Some(pp))
            }
            spec => (build_potential(spec, &self.diffusion, base)?, None),
        };
        let mut problem = match self.shift {
            Some(c) => problem.spectrally_shifted(c),
            None => problem,
        };
        if let Some(label) = &self.label {
            problem = problem.with_label(label.clone());
        }
        Ok(LoadedProblem { file: self.clone(), problem, pulse })
    }
}

impl PotentialSpec {
    fn dim(&self) -> Result<usize> {
        Ok(match self {
            PotentialSpec::PoeschlTeller { .. } | PotentialSpec::ScalarPulse { .. } => 1,
            PotentialSpec::Constant { value } => value.len(),
            PotentialSpec::BlockDiagonal { blocks } => {
                blocks.iter().map(|b| b.dim()).collect::<Result<Vec<_>>>()?.into_iter().sum()
            }
            PotentialSpec::Tabulated { n: Some(n), .. } => *n,
            PotentialSpec::Tabulated { n: None, .. } => {
                return Err(Error::Config("a tabulated block inside block-diagonal needs an explicit n".into()))
            }
            PotentialSpec::GradientRd { .. } => {
                return Err(Error::Config("gradient-rd is only allowed as the top-level potential".into()))
            }
        })
    }
}

fn build_potential(spec: &PotentialSpec, diffusion: &[f64], base: &Path) -> Result<Problem> {
    let n = diffusion.len();
    let scalar = |p: Problem| -> Result<Problem> {
        if n != 1 {
            return Err(Error::Config(format!("{} is scalar but n = {n}", p.label())));
        }
        let label = p.label().to_string();
        Ok(Problem::new(diffusion.to_vec(), p.potential().clone(), p.v_minus().clone(), p.v_plus().clone())?
            .with_label(label))
    };
    match spec {
        PotentialSpec::PoeschlTeller { c, m } => scalar(Problem::poeschl_teller(*c, *m)),
        PotentialSpec::ScalarPulse { center } => scalar(Problem::scalar_pulse(*center)),
        PotentialSpec::Constant { value } => {
            if value.len() != n || value.iter().any(|r| r.len() != n) {
                return Err(Error::Config(format!("constant potential must be {n}x{n}")));
            }
            let m = DMatrix::from_fn(n, n, |i, j| value[i][j]);
            Problem::constant(diffusion.to_vec(), m)
        }
        PotentialSpec::BlockDiagonal { blocks } => {
            let mut parts = Vec::with_capacity(blocks.len());
            let mut off = 0;
            for b in blocks {
                let k = b.dim()?;
                if off + k > n {
                    return Err(Error::Config(format!("blocks need more than the {n} diffusion entries given")));
                }
                parts.push(build_potential(b, &diffusion[off..off + k], base)?);
                off += k;
            }
            if off != n {
                return Err(Error::Config(format!("blocks have total dimension {off} but n = {n}")));
            }
            Problem::block_diagonal(&parts)
        }
        PotentialSpec::Tabulated { csv_path, n: k } => {
            if let Some(k) = k {
                if *k != n {
                    return Err(Error::Config(format!("tabulated n = {k} but {n} diffusion entries")));
                }
            }
            let path = base.join(csv_path);
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
            let tab = Tabulated::from_csv_reader(n, file)?;
            let (vm, vp) = tab.limits();
            Ok(Problem::new(diffusion.to_vec(), Arc::new(tab), vm, vp)?.with_label(format!("tabulated({})", csv_path.display())))
        }
        PotentialSpec::GradientRd { .. } => {
            Err(Error::Config("gradient-rd is only allowed as the top-level potential".into()))
        }
    }
}

fn pulse_problem(
    n: usize,
    diffusion: &[f64],
    nonlinearity: &NonlinearitySpec,
    profile: &ProfileSpec,
    base: &Path,
) -> Result<PulseProblem> {
    let nl: Arc<dyn crate::problem::GradientNonlinearity> = match nonlinearity {
        NonlinearitySpec::Quadratic => Arc::new(QuadraticNonlinearity { n }),
        NonlinearitySpec::DiagonalQuadratic { a, b } => {
            if a.len() != n || b.len() != n {
                return Err(Error::Config(format!("diagonal-quadratic needs {n} entries in a and b")));
            }
            let (a, b) = (DVector::from_vec(a.clone()), DVector::from_vec(b.clone()));
            let (a2, b2) = (a.clone(), b.clone());
            Arc::new(FnNonlinearity::new(
                n,
                move |u: &DVector<f64>| DVector::from_fn(u.len(), |i, _| -a[i] * u[i] + b[i] * u[i] * u[i]),
                move |u: &DVector<f64>| {
                    DMatrix::from_diagonal(&DVector::from_fn(u.len(), |i, _| -a2[i] + 2.0 * b2[i] * u[i]))
                },
            ))
        }
    };
    let pr: Arc<dyn crate::problem::PulseProfile> = match profile {
        ProfileSpec::SechSquared { center } => {
            Arc::new(SechSquaredPulse { diffusion: diffusion.to_vec(), center: *center })
        }
        ProfileSpec::Tabulated { csv_path } => {
            let path = base.join(csv_path);
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
            Arc::new(TabulatedPulse::from_csv_reader(n, file)?)
        }
    };
    Ok(PulseProblem::new(diffusion.to_vec(), nl, pr)?.with_label(format!("gradient-rd n={n}")))
}

/// Reads and builds a problem file.
pub fn load(path: &Path) -> Result<LoadedProblem> {
    let file = ProblemFile::read(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    file.build(base)
}
