use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clark-lab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn enumerate_n3_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["enumerate", "--n", "3", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&dir.path().join("results.json"));
    assert_eq!(r["results"]["counts"]["N"], 27);
    assert_eq!(r["results"]["counts"]["NegN"], 27);
    assert!(r["results"]["counts"]["Z"].as_u64().unwrap() > 0);
    assert_eq!(r["passed"], true);
    let csv = fs::read_to_string(dir.path().join("critical_set.csv")).unwrap();
    assert!(csv.starts_with("label,pattern,t,value,residual,x1,x2,x3\n"));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["params"]["n"], 3);
}

#[test]
fn results_are_byte_identical_across_runs() {
    for args in [
        &["deform", "--samples", "40", "--per-axis", "81"][..],
        &["lemma21", "--random-clouds", "10"][..],
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for (dir, threads) in [(&a, "1"), (&b, "2")] {
            let mut full = args.to_vec();
            full.extend([
                "--seed",
                "7",
                "--threads",
                threads,
                "--out",
                dir.path().to_str().unwrap(),
            ]);
            assert_eq!(run(&full).status.code(), Some(0));
        }
        let ra = fs::read(a.path().join("results.json")).unwrap();
        let rb = fs::read(b.path().join("results.json")).unwrap();
        assert_eq!(ra, rb, "{args:?}");
    }
}

#[test]
fn result_keys_are_sorted() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["psdiag", "--out", dir.path().to_str().unwrap()]).status.code(),
        Some(0)
    );
    let text = fs::read_to_string(dir.path().join("results.json")).unwrap();
    let top: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \""))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = top.clone();
    sorted.sort();
    assert_eq!(top, sorted);
}

#[test]
fn bvp_family_csv_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "bvp",
        "--p",
        "0.5",
        "--kmax",
        "6",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("family.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,norm_sq,j_value"));
    assert_eq!(csv.lines().count(), 7);
    let r = json(&dir.path().join("results.json"));
    let slope = r["results"]["slope"]["fitted"].as_f64().unwrap();
    assert!((slope + 6.0).abs() < 0.01);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["enumerate", "--bogus", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(run(&[]).status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("minimax"));
}

#[test]
fn config_file_with_flags_winning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!("# enumerate\nn = 2\nz_samples = 5\nout = {}\n", out.display()),
    )
    .unwrap();
    let o = run(&["enumerate", "--config", cfg.to_str().unwrap(), "--z-samples", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("results.json"));
    assert_eq!(r["params"]["n"], 2);
    assert_eq!(r["params"]["z-samples"], 7);
    assert_eq!(r["results"]["counts"]["N"], 9);
    assert_eq!(r["results"]["counts"]["Z"], 7);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "n = 2\nkmax = 3\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "enumerate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kmax"));
    assert_eq!(json(&out.join("manifest.json"))["exit_code"], 1);
}

#[test]
fn failed_check_exits_two_and_still_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    // Radii above the optimal 4/9 cannot reach the model value -8/243.
    let o = run(&[
        "minimax",
        "--jmax",
        "1",
        "--grid-lo",
        "0.5",
        "--grid-hi",
        "1",
        "--grid-points",
        "3",
        "--floor-seeds",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["status"], "verification-failed");
    assert!(m["message"].as_str().unwrap().contains("c1_at_most_model_sphere_value"));
    assert!(dir.path().join("results.json").exists());
}

#[test]
fn contract_error_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    // At j = 2 every sphere of radius >= 0.5 has a positive supremum.
    let o = run(&[
        "minimax",
        "--jmax",
        "2",
        "--grid-lo",
        "0.5",
        "--grid-hi",
        "1",
        "--grid-points",
        "3",
        "--floor-seeds",
        "4",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "contract-failed");
}
