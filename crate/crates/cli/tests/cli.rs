use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use berry_core::field::read_brw1;

fn berry(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_berry")).args(args).env_remove("BERRY_THREADS").output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("berry-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Data rows of a CSV with a metadata line and a header.
fn rows(csv: &str) -> Vec<Vec<String>> {
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# berry "));
    lines.next().unwrap();
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn simulate_writes_a_grid_and_its_metadata() {
    let dir = scratch("simulate");
    let out = dir.join("f.brw");
    let o = berry(&["simulate", "--n", "70", "--ppu", "1", "--waves", "256", "--seed", "42", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    let bytes = std::fs::read(&out).unwrap();
    let sample = read_brw1(&bytes[..]).unwrap();
    assert_eq!(sample.side(), 140);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("f.brw.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "simulate");
    assert_eq!(meta["config"]["master_seed"], 42);
    assert_eq!(meta["config"]["waves"], 256);

    let again = dir.join("g.brw");
    berry(&["simulate", "--n", "70", "--ppu", "1", "--waves", "256", "--seed", "42", "--out", again.to_str().unwrap()]);
    assert_eq!(bytes, std::fs::read(&again).unwrap());
}

#[test]
fn simulate_rejects_bad_flags() {
    let dir = scratch("simulate-bad");
    let out = dir.join("f.brw");
    assert_eq!(code(&berry(&["simulate", "--n", "5", "--waves", "0", "--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&berry(&["simulate", "--n", "-1", "--out", out.to_str().unwrap()])), 2);
    // 2·N·ppu must be an integer
    assert_eq!(code(&berry(&["simulate", "--n", "0.3", "--ppu", "1", "--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&berry(&["simulate", "--n", "5"])), 2);
    let unwritable = dir.join("missing-dir").join("f.brw");
    assert_eq!(code(&berry(&["simulate", "--n", "5", "--out", unwritable.to_str().unwrap()])), 1);
}

#[test]
fn epc_level_grid_and_errors() {
    let dir = scratch("epc");
    let grid = dir.join("f.brw");
    berry(&["simulate", "--n", "20", "--ppu", "2", "--seed", "3", "--out", grid.to_str().unwrap()]);
    let g = grid.to_str().unwrap();

    let o = berry(&["epc", "--in", g, "--levels", "-3.5:3.5:0.1", "--method", "pixel"]);
    assert_eq!(code(&o), 0);
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 71);
    // seed provenance comes from the sidecar
    assert!(r.iter().all(|row| row[10] == "3" && row[0] == "0"));

    let r = rows(&stdout(&berry(&["epc", "--in", g, "--levels", "5:5:0.1"])));
    assert_eq!(r.len(), 1);
    assert!(r[0][5].parse::<f64>().unwrap().abs() <= 1.0);

    assert_eq!(code(&berry(&["epc", "--in", g, "--levels", "1:x"])), 2);
    let o = berry(&["epc", "--in", g, "--method", "critical"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ensemble"));
    assert_eq!(code(&berry(&["epc", "--in", dir.join("nope.brw").to_str().unwrap()])), 1);
}

#[test]
fn epc_critical_counts_add_up() {
    let o = berry(&["epc", "--n", "8", "--seed", "5", "--method", "critical", "--levels", "-1,0,1"]);
    assert_eq!(code(&o), 0);
    for row in rows(&stdout(&o)) {
        let n = |i: usize| row[i].parse::<i64>().unwrap();
        assert_eq!(n(5), n(6) + n(7) - n(8));
    }
}

#[test]
fn theory_rows() {
    let o = berry(&["theory", "--n", "30", "--levels", "1,2"]);
    assert_eq!(code(&o), 0);
    let r = rows(&stdout(&o));
    for (row, u) in r.iter().zip([1.0f64, 2.0]) {
        let target = 3600.0 * std::f64::consts::TAU.powf(-1.5) * 0.5 * u * (-0.5 * u * u).exp();
        assert!((row[1].parse::<f64>().unwrap() - target).abs() < 1e-9 * target);
    }
    assert!((r[1][1].parse::<f64>().unwrap() - 30.93).abs() < 0.01);

    let r = rows(&stdout(&berry(&["theory", "--n", "30", "--levels", "-1,0,1"])));
    assert!(r.iter().all(|row| row[2].parse::<f64>().unwrap() == 0.0));

    assert_eq!(code(&berry(&["theory", "--n", "30", "--model", "pareto:0"])), 2);
    assert_eq!(code(&berry(&["theory", "--n", "30", "--link", "sideways"])), 2);
}

#[test]
fn theory_pareto_mean_matches_mixture_average() {
    // (2N)²·½·E[ρ₂(u/Λ)] with Λ^{-1} = s and density 2α s^{2α−1} on (0, 1), by Simpson
    let (alpha, n) = (4.0f64, 30.0f64);
    let rho2 = |x: f64| std::f64::consts::TAU.powf(-1.5) * x * (-0.5 * x * x).exp();
    let average = |u: f64| {
        let steps = 4000;
        let h = 1.0 / steps as f64;
        let f = |s: f64| rho2(u * s) * 2.0 * alpha * s.powf(2.0 * alpha - 1.0);
        let mut acc = f(0.0) + f(1.0);
        for i in 1..steps {
            acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    };
    let o = berry(&["theory", "--n", "30", "--levels", "0.5,1,2,3", "--model", "pareto:4", "--link", "scale"]);
    for row in rows(&stdout(&o)) {
        let u: f64 = row[0].parse().unwrap();
        let target = (2.0 * n).powi(2) * 0.5 * average(u);
        assert!((row[1].parse::<f64>().unwrap() - target).abs() < 1e-9 * target, "u={u}");
        assert_eq!(row[4], "pareto");
    }
}

#[test]
fn mc_from_config_files() {
    let dir = scratch("mc");
    let start = std::time::Instant::now();
    let o = berry(&["mc", "--config", &config("smoke.toml"), "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
    let results = std::fs::read_to_string(dir.join("results.csv")).unwrap();
    assert_eq!(rows(&results).len(), 3 * 9);
    assert!(results.lines().next().unwrap().contains("\"master_seed\":1"));
    let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(rows(&summary).len(), 9);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["completed_replicates"], 3);
    // runtime goes to stderr only
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicates in"));

    assert_eq!(code(&berry(&["mc", "--config", dir.join("missing.toml").to_str().unwrap()])), 1);
    let bad = dir.join("bad.toml");
    std::fs::write(&bad, "replicates = 3\nhalf_width = 5.0\npixels_per_unit = 2\nlevels = \"0\"\nmaster_seed = 1\nbogus = 1\n").unwrap();
    assert_eq!(code(&berry(&["mc", "--config", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&berry(&["mc", "--config", &config("smoke.toml"), "--n", "5"])), 2);
}

#[test]
fn mc_mirror_config_completes() {
    let dir = scratch("mirror");
    let o = berry(&["mc", "--config", &config("gaussian_n70.toml"), "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["completed_replicates"], 250);
    assert_eq!(report["checks"]["levels"], 81);
}

#[test]
fn mc_from_flags_with_custom_paths() {
    let dir = scratch("mc-flags");
    let summary = dir.join("s.csv");
    let o = berry(&[
        "mc", "--n", "4", "--replicates", "10", "--levels", "-1,2", "--model", "exp:2", "--link", "location",
        "--out-dir", dir.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(summary.exists() && dir.join("results.csv").exists() && !dir.join("summary.csv").exists());
    let head = std::fs::read_to_string(&summary).unwrap();
    assert!(head.lines().next().unwrap().contains("\"lambda_law\":\"exp:2\""));
}

#[test]
fn validate_suites() {
    let o = berry(&["validate", "--suite", "covariance"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = v["report"]["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"g3_forms_agree") && names.contains(&"g7_forms_agree"));

    let v: serde_json::Value = serde_json::from_str(&stdout(&berry(&["validate", "--suite", "chaos"]))).unwrap();
    let text = v.to_string();
    assert!(text.contains("dominant") && text.contains("slope_r3") && text.contains("bracket"));

    let dir = scratch("validate");
    let out = dir.join("v.json");
    assert_eq!(code(&berry(&["validate", "--suite", "all", "--out", out.to_str().unwrap()])), 0);
    assert!(out.exists());
    assert_eq!(code(&berry(&["validate", "--suite", "everything"])), 2);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = scratch("threads");
    let run = |threads: &str, tag: &str, via_env: bool| -> Vec<Vec<u8>> {
        let sub = dir.join(tag);
        std::fs::create_dir_all(&sub).unwrap();
        let cmd = |args: &[&str]| {
            // relative paths, since the epc metadata records the input path
            let mut c = Command::new(env!("CARGO_BIN_EXE_berry"));
            c.current_dir(&sub);
            if via_env {
                c.env("BERRY_THREADS", threads);
            } else {
                c.env_remove("BERRY_THREADS").args(["--threads", threads]);
            }
            let o = c.args(args).output().unwrap();
            assert!(o.status.success(), "{o:?}");
            o.stdout
        };
        cmd(&["simulate", "--n", "10", "--ppu", "4", "--seed", "9", "--derivs", "--out", "f.brw"]);
        let epc = cmd(&["epc", "--n", "8", "--seed", "9", "--method", "critical", "--levels=-2:2:0.5"]);
        let pixel = cmd(&["epc", "--in", "f.brw", "--levels=-2:2:0.5"]);
        let theory = cmd(&["theory", "--n", "10", "--model", "exp:1"]);
        cmd(&["mc", "--n", "6", "--replicates", "12", "--levels=-2:2:1", "--out-dir", "."]);
        let validate = cmd(&["validate"]);
        let mut files: Vec<Vec<u8>> = ["f.brw", "f.brw.meta.json", "results.csv", "summary.csv", "report.json"]
            .iter()
            .map(|f| std::fs::read(sub.join(f)).unwrap())
            .collect();
        files.extend([epc, pixel, theory, validate]);
        files
    };
    let one = run("1", "a", false);
    assert_eq!(one, run("3", "b", false));
    assert_eq!(one, run("2", "c", true));
    assert_eq!(code(&berry(&["--threads", "0", "validate"])), 2);
}
