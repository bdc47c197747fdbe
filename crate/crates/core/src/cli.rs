//! The `maslov-stab` command line.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::rngs::Xoshiro256PlusPlus;
use rand::{RngExt, SeedableRng};
use serde::Serialize;

use crate::config::{self, LoadedProblem};
use crate::error::{Error, Result};
use crate::evans::{count_negative_evans_zeros, EvansControls, EvansTrace};
use crate::maslov::{
    find_conjugate_points, maslov_rectangle, morse_index_via_maslov, ConjugatePointScan, MaslovControls, MaslovReport,
    MorseFromMaslov,
};
use crate::oracle::{morse_whole_line, spectrum_rows, write_spectrum_csv, OracleControls, WholeLineReport};
use crate::problem::{check_hypotheses, choose_lambda_inf, sup_norm_V, Grid, HypothesisReport, HypothesisTolerances, Problem};
use crate::propagation::propagate_frame;
use crate::pulse::{instability_verdict, InstabilityVerdict, PulseControls, Verdict};
use crate::report::{self, Envelope, ErrorReport, OutDir};

pub const EXIT_OK: i32 = 0;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_CONSISTENCY: i32 = 4;
pub const EXIT_USAGE: i32 = 64;
/// I/O and serialization failures.
pub const EXIT_OTHER: i32 = 1;

pub const LOG_ENV: &str = "MASLOV_STAB_LOG";

#[derive(Debug, Parser)]
#[command(name = "maslov-stab", version, about = "Spectral stability of H = -D u'' + V(x) u via the Maslov index")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Options {
    /// Problem file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub problem: Option<PathBuf>,
    /// Right end of the half-line (initial L for stabilization runs).
    #[arg(long = "L", global = true)]
    pub l: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_inf: Option<f64>,
    /// Left truncation point; derived from the potential's decay when absent.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub x_min: Option<f64>,
    #[arg(long, global = true)]
    pub tol_s: Option<f64>,
    #[arg(long, global = true)]
    pub tol_rank: Option<f64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "maslov-stab-out")]
    pub out_dir: PathBuf,
    /// Seed for the randomized spot checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Check the hypotheses on the potential.
    Check,
    /// Conjugate points of the lambda = 0 propagation, stabilized in L.
    ConjugatePoints,
    /// Maslov indices along the boundary of [-lambda_inf, 0] x [x_min, L].
    MaslovRect,
    /// Morse index by conjugate points, finite differences and the Evans function.
    Morse,
    /// Negative zeros of the Evans function.
    Evans,
    /// Instability verdict for a pulse of a gradient reaction-diffusion system.
    Pulse,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::ConjugatePoints => "conjugate-points",
            Command::MaslovRect => "maslov-rect",
            Command::Morse => "morse",
            Command::Evans => "evans",
            Command::Pulse => "pulse",
        }
    }
}

/// Exit code for a failed run.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidProblem(_) | Error::DimensionMismatch { .. } => EXIT_USAGE,
        Error::EssentialSpectrum { .. } | Error::SteadyStateResidual { .. } | Error::NonHyperbolic { .. } => {
            EXIT_HYPOTHESIS
        }
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => EXIT_OTHER,
        _ => EXIT_CONSISTENCY,
    }
}

/// Resolved numerical controls for one run.
#[derive(Debug, Clone)]
pub struct Settings {
    pub grid: Grid,
    pub maslov: MaslovControls,
    pub evans: EvansControls,
    pub oracle: OracleControls,
    pub pulse: PulseControls,
    pub lambda_inf: f64,
    pub l: Option<f64>,
}

impl Settings {
    pub fn resolve(lp: &LoadedProblem, opts: &Options) -> Self {
        let t = &lp.file.tolerances;
        let mut maslov = MaslovControls::default();
        let mut evans = EvansControls::default();
        let mut oracle = OracleControls::default();
        let mut pulse = PulseControls { grid: lp.file.grid, ..PulseControls::default() };

        let tol_s = opts.tol_s.or(t.tol_s);
        let tol_rank = opts.tol_rank.or(t.tol_rank);
        let x_min = opts.x_min.or(t.x_min);
        if let Some(v) = tol_s {
            maslov.tol_s = v;
        }
        if let Some(v) = tol_rank {
            maslov.tol_rank = v;
            evans.tol_rank = v;
        }
        if let Some(v) = t.tol_lambda {
            maslov.tol_lambda = v;
            evans.tol_lambda = v;
        }
        if let Some(v) = t.tol_asym {
            maslov.tol_asym = v;
            evans.tol_asym = v;
            oracle.tol_asym = v;
        }
        if let Some(v) = t.kernel_shift {
            maslov.kernel_shift = v;
            evans.kernel_shift = v;
        }
        if let Some(v) = t.lambda_points {
            maslov.lambda_points = v;
            evans.points = v;
        }
        for pc in [&mut maslov.propagation, &mut evans.propagation] {
            if let Some(v) = t.tol_lag {
                pc.tol_lag = v;
            }
            if let Some(v) = t.rtol {
                pc.step.rtol = v;
            }
            if let Some(v) = t.atol {
                pc.step.atol = v;
            }
        }
        if let Some(v) = t.h {
            oracle.h = v;
        }
        maslov.x_min = x_min;
        oracle.x_left = x_min;
        let l = opts.l.or(t.l);
        if let Some(v) = l {
            maslov.initial_l = v;
        }
        pulse.maslov = maslov;
        pulse.tol_sym = t.tol_sym;
        if let config::PotentialSpec::GradientRd { tol_steady, .. } = &lp.file.potential {
            pulse.tol_steady = *tol_steady;
        }
        let lambda_inf = opts
            .lambda_inf
            .or(t.lambda_inf)
            .unwrap_or_else(|| choose_lambda_inf(&lp.problem, &lp.file.grid, crate::problem::DEFAULT_LAMBDA_MARGIN));
        Self { grid: lp.file.grid, maslov, evans, oracle, pulse, lambda_inf, l }
    }
}

/// What a command produced: its exit code and the lines printed to stdout.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit: i32,
    pub lines: Vec<String>,
}

fn yes(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "NO"
    }
}

/// Six decimals without a negative zero.
fn f6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

struct Run<'a> {
    command: Command,
    lp: &'a LoadedProblem,
    settings: Settings,
    out: OutDir,
    seed: u64,
}

impl Run<'_> {
    fn problem(&self) -> &Problem {
        &self.lp.problem
    }

    fn write<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let env = Envelope {
            tool: report::TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.name(),
            problem: self.problem().label(),
            seed: self.seed,
            result: value,
        };
        report::write_json(&self.out.file(name), &env)
    }

    fn dispatch(&self) -> Result<Outcome> {
        match self.command {
            Command::Check => self.check(),
            Command::ConjugatePoints => self.conjugate_points(),
            Command::MaslovRect => self.maslov_rect(),
            Command::Morse => self.morse(),
            Command::Evans => self.evans(),
            Command::Pulse => self.pulse(),
        }
    }

    fn check(&self) -> Result<Outcome> {
        let p = self.problem();
        let hypotheses = check_hypotheses(p, &self.settings.grid, &HypothesisTolerances::default())?;
        let spot = spot_check(p, &self.settings.grid, self.seed, SPOT_POINTS);
        let report = CheckReport {
            sup_norm_v: sup_norm_V(p, &self.settings.grid),
            lambda_inf: self.settings.lambda_inf,
            all_pass: hypotheses.all_pass && spot.pass,
            hypotheses,
            spot_check: spot,
        };
        self.write("hypotheses.json", &report)?;
        let h = &report.hypotheses;
        let pass = |b: bool| if b { "pass" } else { "FAIL" };
        let lines = vec![
            format!(
                "hypotheses: H1 {}, H2 {}, H3 {}, essential spectrum {}; lambda_inf = {}",
                pass(h.h1_symmetry.pass),
                pass(h.h2_limits.pass),
                pass(h.h3_integrability.pass),
                pass(h.essential_spectrum.pass),
                f6(report.lambda_inf)
            ),
            format!(
                "random symmetry spot check ({} points, seed {}): {}",
                report.spot_check.points,
                self.seed,
                pass(report.spot_check.pass)
            ),
        ];
        Ok(Outcome { exit: if report.all_pass { EXIT_OK } else { EXIT_HYPOTHESIS }, lines })
    }

    fn conjugate_points(&self) -> Result<Outcome> {
        let p = self.problem();
        let ctl = &self.settings.maslov;
        let stab = morse_index_via_maslov(p, ctl)?;
        let l = stab.history.last().map_or(ctl.initial_l, |s| s.l);
        let scan = find_conjugate_points(p, l, ctl)?;
        let trace = propagate_frame(p, 0.0, scan.x_min, l, &ctl.propagation)?;
        report::write_csv_with(&self.out.file("trace_lambda0.csv"), |buf| trace.write_csv(buf))?;
        let report = ConjugatePointsReport { count: stab.morse, stabilization: stab, scan };
        self.write("conjugate_points.json", &report)?;
        let pts: Vec<String> = report
            .stabilization
            .conjugate_points
            .iter()
            .map(|c| format!("s={} (mult {})", f6(c.location), c.multiplicity))
            .collect();
        let mut lines = vec![format!(
            "{} conjugate point(s) on (x_min, L] (stabilized at L={}){}{}",
            report.count,
            report.stabilization.stabilized_at,
            if pts.is_empty() { "" } else { ": " },
            pts.join(", ")
        )];
        lines.push(format!(
            "count constant over two doublings: yes; kernel crossings at lambda=0 flagged: {}",
            report.scan.kernel_ambiguous.len()
        ));
        Ok(Outcome { exit: EXIT_OK, lines })
    }

    fn maslov_rect(&self) -> Result<Outcome> {
        let l = self.settings.l.unwrap_or(DEFAULT_RECT_L);
        let r = match maslov_rectangle(self.problem(), l, self.settings.lambda_inf, &self.settings.maslov) {
            Ok(r) => r,
            Err(Error::Identity(msg)) => {
                return Ok(Outcome {
                    exit: EXIT_CONSISTENCY,
                    lines: vec![format!("identity FAILS: {}", msg.split("; report").next().unwrap_or(&msg))],
                })
            }
            Err(e) => return Err(e),
        };
        self.write("maslov_rect.json", &r)?;
        Ok(rect_outcome(&r))
    }

    fn morse(&self) -> Result<Outcome> {
        let p = self.problem();
        let s = &self.settings;
        let (maslov, (oracle, evans)) = rayon::join(
            || morse_index_via_maslov(p, &s.maslov),
            || rayon::join(|| morse_whole_line(p, &s.oracle), || count_negative_evans_zeros(p, s.lambda_inf, &s.evans)),
        );
        let (maslov, oracle, evans) = (maslov?, oracle?, evans?);
        report::write_csv_with(&self.out.file("spectrum.csv"), |buf| {
            write_spectrum_csv(&spectrum_rows(&oracle.base), buf)
        })?;
        report::write_csv_with(&self.out.file("evans.csv"), |buf| evans.write_csv(buf))?;
        let consistent = maslov.morse == oracle.morse && oracle.morse == evans.count;
        let report = MorseReport {
            morse: MorseCounts { maslov: maslov.morse, oracle: oracle.morse, evans: evans.count },
            consistent,
            lambda_inf: s.lambda_inf,
            maslov,
            oracle,
            evans,
        };
        self.write("morse.json", &report)?;
        let m = &report.morse;
        let line = if consistent {
            format!("Mor(H)={} (maslov) = {} (oracle) = {} (evans)", m.maslov, m.oracle, m.evans)
        } else {
            format!("Mor(H) MISMATCH: {} (maslov), {} (oracle), {} (evans)", m.maslov, m.oracle, m.evans)
        };
        let eig: Vec<String> = report.oracle.base.values().iter().map(|v| f6(*v)).collect();
        Ok(Outcome {
            exit: if consistent { EXIT_OK } else { EXIT_CONSISTENCY },
            lines: vec![
                line,
                format!(
                    "maslov = oracle = evans: {}; oracle eigenvalues below the essential spectrum: [{}]",
                    yes(consistent),
                    eig.join(", ")
                ),
            ],
        })
    }

    fn evans(&self) -> Result<Outcome> {
        let e = count_negative_evans_zeros(self.problem(), self.settings.lambda_inf, &self.settings.evans)?;
        report::write_csv_with(&self.out.file("evans.csv"), |buf| e.write_csv(buf))?;
        self.write("evans.json", &e)?;
        let zeros: Vec<String> =
            e.zeros.iter().map(|z| format!("lambda={} (mult {})", f6(z.lambda), z.multiplicity)).collect();
        Ok(Outcome {
            exit: EXIT_OK,
            lines: vec![
                format!(
                    "Evans: {} negative zero(s) on [-{}, -{:.0e}]{}{}",
                    e.count,
                    f6(e.lambda_inf),
                    e.kernel_shift,
                    if zeros.is_empty() { "" } else { ": " },
                    zeros.join(", ")
                ),
                format!("kernel dimension at lambda=0: {}", e.kernel_dimension_at_zero),
            ],
        })
    }

    fn pulse(&self) -> Result<Outcome> {
        let pp = self
            .lp
            .pulse
            .as_ref()
            .ok_or_else(|| Error::Config("the pulse command needs a gradient-rd problem".into()))?;
        let v = instability_verdict(pp, &self.settings.pulse)?;
        self.write("pulse.json", &v)?;
        Ok(pulse_outcome(&v))
    }
}

const DEFAULT_RECT_L: f64 = 20.0;
const SPOT_POINTS: usize = 256;

fn rect_outcome(r: &MaslovReport) -> Outcome {
    let c = &r.checks;
    let ok = c.a1_zero && c.a4_zero && c.identity_holds && c.a2_equals_abs_a3 && c.a3_matches_oracle && c.lagrangian_ok;
    let lines = vec![
        format!(
            "A=({},{},{},{}); identity {}",
            r.a1,
            r.a2,
            r.a3,
            r.a4,
            if c.identity_holds { "holds" } else { "FAILS" }
        ),
        format!(
            "A2 = |A3|: {}; |A3| = oracle count ({}): {}; Lagrangian residual {:.1e}; kernel flagged: {}",
            yes(c.a2_equals_abs_a3),
            r.oracle.nonpositive_count,
            yes(c.a3_matches_oracle),
            c.max_lagrangian_residual,
            yes(c.kernel_flagged)
        ),
    ];
    Outcome { exit: if ok { EXIT_OK } else { EXIT_CONSISTENCY }, lines }
}

fn pulse_outcome(v: &InstabilityVerdict) -> Outcome {
    match v.verdict {
        Verdict::Unstable => {
            let c = v.crossing.as_ref().expect("unstable verdict carries its crossing");
            let mut line = format!("UNSTABLE: conjugate point at s={} (mult {})", f6(c.location), c.multiplicity);
            if let Some(m) = v.full_morse {
                line.push_str(&format!("; Mor(H)={m}"));
            }
            let consistent = v.checks.lower_bound_le_full.unwrap_or(true);
            let mut lines = vec![line];
            if let Some(m) = v.full_morse {
                lines.push(format!("lower bound {} <= Mor(H) {}: {}", v.morse_lower_bound, m, yes(consistent)));
            }
            Outcome { exit: if consistent { EXIT_OK } else { EXIT_CONSISTENCY }, lines }
        }
        Verdict::Inconclusive => Outcome {
            exit: EXIT_INCONCLUSIVE,
            lines: vec![format!("INCONCLUSIVE: {}", v.notes.join("; "))],
        },
        Verdict::UnstableEssentialSpectrum => Outcome {
            exit: EXIT_HYPOTHESIS,
            lines: vec![format!("UNSTABLE (essential spectrum): {}", v.notes.join("; "))],
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpotCheck {
    pub seed: u64,
    pub points: usize,
    /// Largest relative asymmetry `||V - V^T|| / max(1, ||V||)` at the drawn points.
    pub max_symmetry_residual: f64,
    pub pass: bool,
}

/// Symmetry of `V` at points drawn uniformly from the grid interval.
pub fn spot_check(p: &Problem, grid: &Grid, seed: u64, points: usize) -> SpotCheck {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = rng.random_range(grid.x_min..grid.x_max);
        let v = p.v(x);
        worst = worst.max((&v - v.transpose()).amax() / v.amax().max(1.0));
    }
    SpotCheck { seed, points, max_symmetry_residual: worst, pass: worst <= 1e-12 }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub hypotheses: HypothesisReport,
    pub spot_check: SpotCheck,
    pub sup_norm_v: f64,
    pub lambda_inf: f64,
    pub all_pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugatePointsReport {
    pub count: usize,
    pub stabilization: MorseFromMaslov,
    pub scan: ConjugatePointScan,
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseCounts {
    pub maslov: usize,
    pub oracle: usize,
    pub evans: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MorseReport {
    pub morse: MorseCounts,
    pub consistent: bool,
    pub lambda_inf: f64,
    pub maslov: MorseFromMaslov,
    pub oracle: WholeLineReport,
    pub evans: EvansTrace,
}

fn init_logging() {
    let env = env_logger::Env::default().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn fail(command: &str, out: Option<&OutDir>, e: &Error) -> i32 {
    let code = exit_code(e);
    eprintln!("error[{}]: {e}", e.kind());
    if let Some(out) = out {
        let rep = ErrorReport {
            tool: report::TOOL,
            version: env!("CARGO_PKG_VERSION"),
            command,
            error: e.kind(),
            message: e.to_string(),
            exit_code: code,
        };
        if let Err(w) = report::write_json(&out.file("error.json"), &rep) {
            eprintln!("error: could not write error report: {w}");
        }
    }
    code
}

/// Parses `args`, runs the command, prints its summary, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let command = cli.command;
    let opts = cli.opts;
    let out = OutDir(opts.out_dir.clone());
    let Some(path) = opts.problem.clone() else {
        eprintln!("error: --problem is required");
        return EXIT_USAGE;
    };
    let lp = match config::load(&path) {
        Ok(lp) => lp,
        Err(e) => return fail(command.name(), Some(&out), &e),
    };
    let settings = Settings::resolve(&lp, &opts);
    let run = Run { command, lp: &lp, settings, out: out.clone(), seed: opts.seed };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let result = match builder.build() {
        Ok(pool) => pool.install(|| run.dispatch()),
        Err(e) => Err(Error::Config(format!("cannot start {} worker threads: {e}", opts.jobs.unwrap_or(0)))),
    };
    match result {
        Ok(o) => {
            for line in &o.lines {
                println!("{line}");
            }
            o.exit
        }
        Err(e) => fail(command.name(), Some(&out), &e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_zero_is_printed_as_zero() {
        assert_eq!(f6(-5.9e-11), "0.000000");
        assert_eq!(f6(-1.25), "-1.250000");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_USAGE);
        assert_eq!(
            exit_code(&Error::EssentialSpectrum { side: crate::Side::Minus, min_eigenvalue: -1.0 }),
            EXIT_HYPOTHESIS
        );
        assert_eq!(exit_code(&Error::Identity("x".into())), EXIT_CONSISTENCY);
        assert_eq!(exit_code(&Error::NotStabilized { doublings: 6, last_l: 640.0 }), EXIT_CONSISTENCY);
    }

    #[test]
    fn spot_check_is_seeded() {
        let p = Problem::poeschl_teller(1.0, 2.0);
        let a = spot_check(&p, &Grid::default(), 7, 16);
        let b = spot_check(&p, &Grid::default(), 7, 16);
        assert!(a.pass && a.max_symmetry_residual == b.max_symmetry_residual);
    }
}
