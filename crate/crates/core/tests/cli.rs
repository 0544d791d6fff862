use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use flate2::write::GzEncoder;
use flate2::Compression;

fn edgemig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgemig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"
scenario = "cli"
policy = "srcl"
compare = ["am", "nm"]
seeds = [3]
[env]
rows = 2
cols = 2
region_side = 2000.0
n_vehicles = 4
horizon = 8
[agent]
episodes = 4
hidden = [16, 16]
batch_size = 8
[eval]
episodes = 2
"#;

#[test]
fn selftest_passes() {
    let out = edgemig(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("all checks passed"));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"x\"\n[env]\nrowz = 3\n");
    let out = edgemig(&["eval", "--config", &cfg, "--policy", "nm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rowz"));
}

#[test]
fn invalid_value_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"x\"\n[agent]\ngamma = 1.5\n");
    let out = edgemig(&["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("agent.gamma"));
}

#[test]
fn missing_trace_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = edgemig(&[
        "eval",
        "--policy",
        "nm",
        "--trace",
        "/nonexistent/trace.txt",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = dir.path().join("train");
    let out = edgemig(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "timing.csv", "manifest.toml", "curves/srcl_v0_s3.csv"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let ckpt = run.join("checkpoints/srcl_v0_s3.json");
    let eval = dir.path().join("eval");
    let out = edgemig(&[
        "eval",
        "--config",
        &cfg,
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        eval.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(run.join("metrics.csv")).unwrap(),
        fs::read(eval.join("metrics.csv")).unwrap()
    );

    let out = edgemig(&[
        "eval",
        "--config",
        &cfg,
        "--policy",
        "jsr",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        dir.path().join("wrong").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_comparison_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("policy = \"srcl\"", "policy = \"ga\"")
        + "[ga]\npopulation = 6\ngenerations = 3\n[sweep]\naxis = \"vehicle_count\"\nvalues = [2, 3]\n";
    let cfg = write_config(dir.path(), &body);
    let out_dir = dir.path().join("sweep");
    let out = edgemig(&["sweep", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("comparison_total_delay_s.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "sweep_value,ga,am,nm");
    assert_eq!(lines.len(), 3);
    let freq = fs::read_to_string(out_dir.join("comparison_migration_frequency.csv")).unwrap();
    for row in freq.lines().skip(1) {
        assert_eq!(row.split(',').last().unwrap(), "0");
    }
    for f in ["convergence.csv", "breakdown.csv", "sweep.csv"] {
        assert!(out_dir.join("plots").join(f).exists());
    }
}

#[test]
fn trace_convert_reads_gzip() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for id in 1..=3 {
        for k in 0..12 {
            let (m, s) = (k * 30 / 60, k * 30 % 60);
            text.push_str(&format!(
                "{id};2014-02-01 00:{m:02}:{s:02}.000000+01;POINT({} {})\n",
                41.86 + 0.005 * k as f64,
                12.45 + 0.002 * id as f64
            ));
        }
    }
    text.push_str("not a record\n");
    let gz = dir.path().join("taxi.txt.gz");
    let mut enc = GzEncoder::new(fs::File::create(&gz).unwrap(), Compression::default());
    enc.write_all(text.as_bytes()).unwrap();
    enc.finish().unwrap();
    let cfg = write_config(
        dir.path(),
        "scenario = \"t\"\n[env]\nn_vehicles = 2\nhorizon = 5\n",
    );
    let csv = dir.path().join("slots.csv");
    let out = edgemig(&[
        "trace-convert",
        "--config",
        &cfg,
        "--trace",
        gz.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "vehicle_id,slot,x_m,y_m");
    assert_eq!(lines.len(), 1 + 2 * 5);
    for l in &lines[1..] {
        let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((0.0..=4000.0).contains(&f[2]) && (0.0..=4000.0).contains(&f[3]));
    }
}
