use std::path::Path;
use std::process::{Command, Output};

use proxboost::harness::emit::{RunSummary, CSV_HEADER};
use proxboost::harness::mask_wall_ms;

const SMALL: &str = r#"
problem = "quadratic"
dim = 3
mu = 1.0
lip_grad = 4.0
sigma2 = 0.5
methods = ["naive-markov", "boost-alg"]
epsilon_rel = 0.05
p = 0.2
initial_gap = 5.0
replications = 5
base_seed = 8
"#;

fn proxboost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxboost"))
        .args(args)
        .output()
        .unwrap()
}

fn run(config: &Path, out: &Path, jobs: &str) -> Output {
    proxboost(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        jobs,
    ])
}

#[test]
fn verify_passes() {
    let out = proxboost(&["verify"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5, "{text}");
}

#[test]
fn run_writes_deterministic_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    assert!(run(&cfg, &dir.path().join("a"), "1").status.success());
    assert!(run(&cfg, &dir.path().join("b"), "3").status.success());
    let read = |d: &str, f: &str| std::fs::read_to_string(dir.path().join(d).join(f)).unwrap();
    let csv = read("a", "trials.csv");
    assert!(csv.starts_with(&format!("{CSV_HEADER}\n")));
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert_eq!(mask_wall_ms(&csv), mask_wall_ms(&read("b", "trials.csv")));
    assert_eq!(read("a", "summary.json"), read("b", "summary.json"));
    let summary: RunSummary = serde_json::from_str(&read("a", "summary.json")).unwrap();
    assert_eq!(summary.reports.len(), 2);
    assert!(summary.reports.iter().all(|r| r.replications == 5));
}

#[test]
fn seed_flag_changes_the_draws() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let go = |seed: &str, out: &str| {
        let o = dir.path().join(out);
        let s = proxboost(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            o.to_str().unwrap(),
        ]);
        assert!(s.status.success());
        std::fs::read_to_string(o.join("trials.csv")).unwrap()
    };
    assert_ne!(mask_wall_ms(&go("1", "x")), mask_wall_ms(&go("2", "y")));
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("sweep");
    let s = proxboost(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--vary",
        "p=0.1,0.3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    for v in ["p=0.1", "p=0.3"] {
        let summary = std::fs::read_to_string(out.join(v).join("summary.json")).unwrap();
        assert!(summary.contains(&format!("\"p\": {}", &v[2..])));
    }
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMALL.replace("replications = 5", "replications = 0")).unwrap();
    let s = run(&cfg, &dir.path().join("o"), "1");
    assert_eq!(s.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&s.stderr).contains("replications"));

    std::fs::write(&cfg, SMALL).unwrap();
    let s = proxboost(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(2));
    let s = proxboost(&["calibrate", "--oracle", "newton"]);
    assert_eq!(s.status.code(), Some(2));
}
