use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use persuade::consistency::{goalposts_strategies, GoalpostsSpec};
use persuade::io::{distribution_from_records, to_json_string, AtomRecord};
use persuade_cli::RunManifest;
use serde_json::Value;

fn persuade(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_persuade")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(out.status.success(), "exit {:?}\nstdout: {stdout}\nstderr: {}", out.status, String::from_utf8_lossy(&out.stderr));
    stdout
}

fn manifest(path: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_problem(dir: &Path, prior: [f64; 2]) {
    let times = [0.0, 0.25, 0.5, 0.75, 1.0];
    let u: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|s| (0..2).map(|a| times.iter().map(|t| f64::from(s == a) - 0.3 * t).collect()).collect())
        .collect();
    let v: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|_| (0..2).map(|a| times.iter().map(|t| if a == 1 { 1.0 + 0.5 * t } else { 0.2 * t }).collect()).collect())
        .collect();
    let doc = serde_json::json!({
        "states": ["L", "R"], "actions": ["l", "r"], "times": times, "prior": prior, "u": u, "v": v,
    });
    fs::write(dir.join("prob.json"), doc.to_string()).unwrap();
}

#[test]
fn binary_log_example_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&persuade(
        dir.path(),
        &["binary", "--mu0", "0.4", "--dv", "0.546", "--h-ell", "log:0.5", "--h-r", "log:1", "--verify-lp", "0.01", "--out", "s.json"],
    ));
    assert!(stdout.contains("lp_cross_check: PASS"), "{stdout}");
    let m = manifest(&dir.path().join("s.manifest.json"));
    assert_eq!(m.kind, "binary");
    let roles: Vec<&str> = m.artifacts.iter().map(|a| a.role.as_str()).collect();
    assert_eq!(roles, ["strategy", "paths"]);
    let csv = fs::read_to_string(dir.path().join("s.paths.csv")).unwrap();
    assert!(csv.starts_with("t,mu_l,mu_r,targeting,cdf_revealed,atom_other\r\n"));
    let strategy = json(&dir.path().join("s.json"));
    assert_eq!(strategy["choice"]["strategy"]["variant"], "suspense_ell");
    let gap = strategy["lp_cross_check"]["relative_gap"].as_f64().unwrap();
    assert!(gap.abs() < 0.01, "{gap}");
}

#[test]
fn goalposts_emits_two_paths_and_dc1_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    ok(&persuade(dir.path(), &["goalposts", "--dt", "0.025", "--out", "g/report.json", "--strict"]));
    let m = manifest(&dir.path().join("g/report.manifest.json"));
    assert_eq!(m.verdicts["inch_dc1"].verdict, persuade_cli::Verdict::Pass);
    assert_eq!(m.verdicts["teleport_dc1"].verdict, persuade_cli::Verdict::Fail);
    assert!(!m.verdicts["teleport_dc1"].gating);
    for name in ["teleport", "inch"] {
        let csv = fs::read_to_string(dir.path().join(format!("g/report.{name}.csv"))).unwrap();
        assert!(csv.starts_with("time,expected_x,reveal_low,reveal_high\r\n"));
        assert!(csv.lines().count() > 40);
    }
    let report = json(&dir.path().join("g/report.json"));
    let mu_bar = report["closed_form"]["mu_bar"].as_f64().unwrap();
    assert!((mu_bar - (1f64.exp() - 1.0) / 2.5).abs() < 1e-12);
}

#[test]
fn invalid_prior_is_a_schema_error_naming_prior() {
    let dir = tempfile::tempdir().unwrap();
    write_problem(dir.path(), [0.5, 0.4]);
    let out = persuade(dir.path(), &["solve", "--problem", "prob.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("schema error") && err.contains("prior"), "{err}");
    assert!(!dir.path().join("solution.json").exists());
}

#[test]
fn config_rejects_unknown_keys_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.json"),
        r#"{"kind": "censorship", "out": "p.csv", "prior": {"family": "uniform"}, "r": 1, "theta_bar": 0.9, "rr": 2}"#,
    )
    .unwrap();
    let out = persuade(dir.path(), &["run", "--config", "c.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rr"));

    fs::write(dir.path().join("d.json"), r#"{"kind": "censor", "out": "p.csv"}"#).unwrap();
    let out = persuade(dir.path(), &["run", "--config", "d.json"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown kind"));
}

#[test]
fn identical_config_and_seed_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    write_problem(dir.path(), [0.7, 0.3]);
    let mut digests = Vec::new();
    for sub in ["a", "b"] {
        let out_path = format!("{sub}/solution.json");
        ok(&persuade(dir.path(), &["solve", "--problem", "prob.json", "--paths", "50", "--seed", "11", "--out", &out_path]));
        let m = manifest(&dir.path().join(format!("{sub}/solution.manifest.json")));
        digests.push((m.digest.clone(), m.config_hash.clone(), m.artifacts.clone()));
    }
    assert_eq!(digests[0], digests[1]);
    for name in ["solution.json", "solution.paths.csv", "solution.process.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(name)).unwrap(), fs::read(dir.path().join("b").join(name)).unwrap());
    }
    ok(&persuade(dir.path(), &["solve", "--problem", "prob.json", "--paths", "50", "--seed", "12", "--out", "c/solution.json"]));
    let m = manifest(&dir.path().join("c/solution.manifest.json"));
    assert_ne!(m.config_hash, digests[0].1);
}

#[test]
fn solution_round_trips_through_verify_foc() {
    let dir = tempfile::tempdir().unwrap();
    write_problem(dir.path(), [0.7, 0.3]);
    ok(&persuade(dir.path(), &["solve", "--problem", "prob.json", "--out", "s.json"]));
    let sol = json(&dir.path().join("s.json"));
    let records: Vec<AtomRecord> = serde_json::from_value(sol["f"].clone()).unwrap();
    let f = distribution_from_records(&[0.0, 0.25, 0.5, 0.75, 1.0], &records).unwrap();
    // Re-emitting the parsed distribution reproduces the file's f exactly.
    let again: Value = serde_json::from_str(&to_json_string(&persuade::io::distribution_records(&f))).unwrap();
    assert_eq!(again, sol["f"]);

    let stdout = ok(&persuade(dir.path(), &["verify-foc", "--problem", "prob.json", "--solution", "s.json", "--out", "foc.json"]));
    assert!(stdout.contains("foc: PASS"), "{stdout}");
    let value = json(&dir.path().join("foc.json"))["value"].as_f64().unwrap();
    assert_eq!(value, sol["value"].as_f64().unwrap());
}

#[test]
fn saddle_matches_solve() {
    let dir = tempfile::tempdir().unwrap();
    write_problem(dir.path(), [0.7, 0.3]);
    ok(&persuade(dir.path(), &["solve", "--problem", "prob.json", "--out", "s.json"]));
    ok(&persuade(dir.path(), &["saddle", "--problem", "prob.json", "--tol", "1e-6", "--out", "r.json", "--strict"]));
    let lp = json(&dir.path().join("s.json"))["value"].as_f64().unwrap();
    let report = json(&dir.path().join("r.json"));
    assert!((report["value"].as_f64().unwrap() - lp).abs() < 1e-4);
    for key in ["lambda", "b", "a"] {
        assert!(report["certificate"][key].is_array(), "{key}");
    }
}

#[test]
fn strict_turns_a_failed_cross_check_into_exit_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["censorship", "--prior", "uniform", "--r", "1", "--theta-bar", "0.9", "--oracle", "21x9", "--out", "p.csv"];
    let relaxed = persuade(dir.path(), &args);
    assert!(relaxed.status.success());
    assert!(String::from_utf8_lossy(&relaxed.stdout).contains("oracle_cross_check: FAIL"));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(persuade(dir.path(), &strict).status.code(), Some(2));
}

#[test]
fn censorship_policy_csv_and_table_prior() {
    let dir = tempfile::tempdir().unwrap();
    let table: String = std::iter::once("pdf\n".to_string()).chain((0..=20).map(|_| "1.0\n".to_string())).collect();
    fs::write(dir.path().join("flat.csv"), table).unwrap();
    ok(&persuade(dir.path(), &["censorship", "--prior", "flat.csv", "--r", "1", "--theta-bar", "0.9", "--out", "t.csv"]));
    ok(&persuade(dir.path(), &["censorship", "--prior", "uniform", "--r", "1", "--theta-bar", "0.9", "--out", "u.csv"]));
    let t = fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let u = fs::read_to_string(dir.path().join("u.csv")).unwrap();
    assert!(u.starts_with("t,alpha,beta,m_hat,res_forward_alpha,res_forward_beta,res_no_upward_surprise,res_indifference\r\n"));
    let last = |s: &str| s.lines().last().unwrap().split(',').take(3).map(|x| x.parse::<f64>().unwrap()).collect::<Vec<_>>();
    let (a, b) = (last(&t), last(&u));
    for k in 0..3 {
        assert!((a[k] - b[k]).abs() < 1e-6, "{a:?} vs {b:?}");
    }
    let out = persuade(dir.path(), &["censorship", "--prior", "beta(2,2)", "--r", "1", "--theta-bar", "0.9"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("prior"));
}

#[test]
fn consistency_repairs_the_teleporting_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let g = goalposts_strategies(&GoalpostsSpec::reference(), 0.05).unwrap();
    fs::write(dir.path().join("proc.json"), to_json_string(&g.teleport)).unwrap();
    fs::write(dir.path().join("prob.json"), to_json_string(&g.primitives)).unwrap();
    ok(&persuade(dir.path(), &["consistency", "--process", "proc.json", "--problem", "prob.json", "--out", "c.json", "--strict"]));
    let m = manifest(&dir.path().join("c.manifest.json"));
    assert_eq!(m.verdicts["zero_surplus"].verdict, persuade_cli::Verdict::Fail);
    assert_eq!(m.verdicts["transform_zero_surplus"].verdict, persuade_cli::Verdict::Pass);
    assert_eq!(m.verdicts["transform_preserves_law"].verdict, persuade_cli::Verdict::Pass);
    let report = json(&dir.path().join("c.json"));
    assert!(!report["transform"]["splits"].as_array().unwrap().is_empty());
}

#[test]
fn coase_defaults_to_the_canonical_game() {
    let dir = tempfile::tempdir().unwrap();
    ok(&persuade(dir.path(), &["coase", "--strict"]));
    let report = json(&dir.path().join("coase.json"));
    assert_eq!(report["full_revelation_at_first"], true);
    assert!(report["max_deviation_gain"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn thread_cap_is_honoured_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_persuade"))
            .current_dir(dir.path())
            .env("PERSUADE_THREADS", threads)
            .args(["coase", "--out", "c.json"])
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    let bad = run("zero");
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("PERSUADE_THREADS"));
}

#[test]
fn config_file_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cfg");
    fs::create_dir(&sub).unwrap();
    write_problem(&sub, [0.7, 0.3]);
    fs::write(sub.join("grid.json"), r#"{"kind": "grid", "out": "out/s.json", "problem_file": "prob.json", "belief_grid": 51}"#)
        .unwrap();
    ok(&persuade(dir.path(), &["run", "--config", "cfg/grid.json"]));
    assert!(sub.join("out/s.json").exists());
    assert!(sub.join("out/s.manifest.json").exists());
}
