use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_maslov-stab");

fn problem(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("problems").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("MASLOV_STAB_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Reads `out/name` and validates it against `schemas/<stem>.schema.json`.
fn validated(out: &Path, name: &str) -> Value {
    let stem = name.trim_end_matches(".json");
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{stem}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out.join(name)).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name} violates its schema: {errors:#?}");
    doc
}

#[test]
fn check_passes_for_scalar_pulse() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check", "--problem", problem("scalar_pulse.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("hypotheses: H1 pass, H2 pass, H3 pass"));
    let doc = validated(dir.path(), "hypotheses.json");
    assert_eq!(doc["result"]["all_pass"], Value::Bool(true));
}

#[test]
fn negative_limit_is_a_hypothesis_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check", "--problem", problem("negative_constant.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("H2"));
    let doc = validated(dir.path(), "error.json");
    assert_eq!(doc["error"], "essential-spectrum");
    assert_eq!(doc["exit_code"], 2);
}

#[test]
fn malformed_and_unknown_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "n = 1\nD = [1.0\n").unwrap();
    let o = run(&["check", "--problem", bad.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(64));
    validated(dir.path(), "error.json");

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(
        &unknown,
        "n = 1\nD = [1.0]\ncolour = \"red\"\n[potential]\nkind = \"poeschl-teller\"\nc = 1.0\nm = 2.0\n",
    )
    .unwrap();
    let o = run(&["check", "--problem", unknown.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn missing_problem_and_bad_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["check"], dir.path()).status.code(), Some(64));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(64));
    let p = problem("pt_c1_m2.toml");
    assert_eq!(run(&["check", "--problem", p.to_str().unwrap(), "--tol-s", "abc"], dir.path()).status.code(), Some(64));
}

#[test]
fn pulse_requires_a_reaction_diffusion_problem() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pulse", "--problem", problem("pt_c1_m2.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn scalar_pulse_is_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["pulse", "--problem", problem("scalar_pulse.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().next().unwrap(), "UNSTABLE: conjugate point at s=0.000000 (mult 1); Mor(H)=1");
    let doc = validated(dir.path(), "pulse.json");
    assert_eq!(doc["result"]["verdict"], "unstable");
    assert_eq!(doc["result"]["full_morse"], 1);
}

#[test]
fn asymmetric_pulse_is_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::new();
    for i in 0..=8000 {
        let x = -40.0 + 0.01 * i as f64;
        let f = |s: f64| 1.5 / (0.5 * s).cosh().powi(2);
        csv.push_str(&format!("{x},{},{}\n", f(x), f(x - 3.0)));
    }
    std::fs::write(dir.path().join("profile.csv"), csv).unwrap();
    let file = dir.path().join("asym.toml");
    std::fs::write(
        &file,
        "n = 2\nD = [1.0, 1.0]\n[potential]\nkind = \"gradient-rd\"\nnonlinearity = { kind = \"quadratic\" }\n\
         profile = { kind = \"tabulated\", csv_path = \"profile.csv\" }\ntol_steady = 1e-3\n",
    )
    .unwrap();
    let o = run(&["pulse", "--problem", file.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("INCONCLUSIVE"));
    let doc = validated(dir.path(), "pulse.json");
    assert_eq!(doc["result"]["symmetric"], false);
}

#[test]
fn rectangle_for_poeschl_teller_without_bound_states_below_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["maslov-rect", "--problem", problem("pt_c1_m1.toml").to_str().unwrap(), "--L", "20"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().next().unwrap(), "A=(0,0,0,0); identity holds");
    let doc = validated(dir.path(), "maslov_rect.json");
    assert_eq!(doc["result"]["checks"]["kernel_flagged"], true);
}

#[test]
fn morse_agrees_three_ways() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["morse", "--problem", problem("pt_c1_m2.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().next().unwrap(), "Mor(H)=1 (maslov) = 1 (oracle) = 1 (evans)");
    validated(dir.path(), "morse.json");
    let spectrum = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("L,h,j,lambda_j,error_estimate"));
    let evans = std::fs::read_to_string(dir.path().join("evans.csv")).unwrap();
    assert!(evans.starts_with("lambda,E_value,sigma_min_intersection"));
}

#[test]
fn evans_and_conjugate_point_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem("pt_c05_m2.toml");
    let o = run(&["evans", "--problem", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = validated(dir.path(), "evans.json");
    assert_eq!(doc["result"]["count"], 2);

    let o = run(&["conjugate-points", "--problem", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let doc = validated(dir.path(), "conjugate_points.json");
    assert_eq!(doc["result"]["count"], 2);
    let trace = std::fs::read_to_string(dir.path().join("trace_lambda0.csv")).unwrap();
    assert!(trace.starts_with("x,detX,sigma_min,lagrangian_residual"));
}

#[test]
fn reports_are_byte_identical_for_the_same_seed() {
    let p = problem("pt_c1_m2.toml");
    let p = p.to_str().unwrap();
    let read = |cmd: &str, file: &str, seed: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&[cmd, "--problem", p, "--seed", seed], dir.path());
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(dir.path().join(file)).unwrap()
    };
    assert_eq!(read("check", "hypotheses.json", "11"), read("check", "hypotheses.json", "11"));
    assert_ne!(read("check", "hypotheses.json", "11"), read("check", "hypotheses.json", "12"));
    assert_eq!(
        read("conjugate-points", "conjugate_points.json", "3"),
        read("conjugate-points", "conjugate_points.json", "3")
    );
}

#[test]
fn json_problem_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["check", "--problem", problem("pt_block.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    validated(dir.path(), "hypotheses.json");
}
