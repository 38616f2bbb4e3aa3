//! End-to-end recipe tests against the built binary: artifact layout,
//! determinism of reports, config validation, and thread-count independence.

use std::path::Path;
use std::process::{Command, Output};

fn braggsynth() -> Command {
    Command::new(env!("CARGO_BIN_EXE_braggsynth"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small, fast configuration: coarse grid, loose tolerance.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(
        &path,
        r#"
seeds = [1]
threads = 1

[bragg]
n0 = 1
steps = 60
amplitude_bound = 8.0

[solver]
error_tolerance = 5e-2
max_iterations_stage1 = 60
max_iterations_stage2 = 10
"#,
    )
    .unwrap();
    path
}

fn scrub_volatile(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map.iter_mut() {
                if k.contains("clock") || k.contains("seconds") || k.contains("minutes") {
                    *v = serde_json::Value::Null;
                } else {
                    scrub_volatile(v);
                }
            }
        }
        serde_json::Value::Array(items) => {
            for v in items {
                scrub_volatile(v);
            }
        }
        _ => {}
    }
}

fn load_scrubbed(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    scrub_volatile(&mut v);
    v
}

#[test]
fn synth_recipe_writes_artifacts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(
            braggsynth()
                .arg("synth")
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(out),
        );
    }
    assert!(out_a.join("pulse_seed1.pulse").exists());
    assert!(out_a.join("fidelity_trace_seed1.csv").exists());
    assert!(out_a.join("energy_trace_seed1.csv").exists());
    assert!(out_a.join("report.json").exists());
    // identical config + seeds -> identical reports up to wall-clock fields
    let ra = load_scrubbed(&out_a.join("report.json"));
    let rb = load_scrubbed(&out_b.join("report.json"));
    assert_eq!(ra, rb);
    // pulse files bit-identical
    let pa = std::fs::read(out_a.join("pulse_seed1.pulse")).unwrap();
    let pb = std::fs::read(out_b.join("pulse_seed1.pulse")).unwrap();
    assert_eq!(pa, pb);
    // CSV is rectangular with a header
    let csv = std::fs::read_to_string(out_a.join("fidelity_trace_seed1.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert_eq!(header, "iteration,error,surrogate");
    let cols = header.split(',').count();
    for line in lines {
        assert_eq!(line.split(',').count(), cols);
    }
}

#[test]
fn verify_recipe_is_thread_count_independent() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let synth_out = tmp.path().join("synth");
    run_ok(
        braggsynth()
            .arg("synth")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&synth_out),
    );
    let pulse = synth_out.join("pulse_seed1.pulse");
    let v1 = tmp.path().join("v1");
    let v2 = tmp.path().join("v2");
    for (out, threads) in [(&v1, "1"), (&v2, "2")] {
        run_ok(
            braggsynth()
                .arg("verify")
                .arg("--config")
                .arg(&config)
                .arg("--pulse")
                .arg(&pulse)
                .arg("--out")
                .arg(out)
                .arg("--threads")
                .arg(threads),
        );
    }
    let a = std::fs::read_to_string(v1.join("grid_errors.csv")).unwrap();
    let b = std::fs::read_to_string(v2.join("grid_errors.csv")).unwrap();
    assert_eq!(a, b, "grid errors must not depend on the thread count");
    // errors live in [0, 1]
    for line in a.lines().skip(1) {
        let err: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&err));
    }
}

#[test]
fn filtersweep_recipe_produces_full_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let synth_out = tmp.path().join("synth");
    run_ok(
        braggsynth()
            .arg("synth")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&synth_out),
    );
    let out = tmp.path().join("sweep");
    run_ok(
        braggsynth()
            .arg("filtersweep")
            .arg("--config")
            .arg(&config)
            .arg("--pulse")
            .arg(&synth_out.join("pulse_seed1.pulse"))
            .arg("--out")
            .arg(&out),
    );
    let csv = std::fs::read_to_string(out.join("filter_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 201, "header plus 200 cutoffs");
    let report = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("\"skipped\": []"));
}

#[test]
fn invalid_config_fails_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"
seeds = [1]

[bragg]
n0 = 0

[solver]
lambda_decay = 1.5
"#,
    )
    .unwrap();
    let out = braggsynth()
        .arg("synth")
        .arg("--config")
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("target index must be ≥ 1"), "{stderr}");
    assert!(stderr.contains("lambda_decay"), "{stderr}");
}

#[test]
fn ladder_recipe_stacks_rungs() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("config.toml");
    std::fs::write(
        &path,
        r#"
seeds = [1, 2]
threads = 1

[bragg]
n0 = 2
steps = 60
amplitude_bound = 8.0

[solver]
error_tolerance = 5e-2
max_iterations_stage1 = 80
max_iterations_stage2 = 8
"#,
    )
    .unwrap();
    let out = tmp.path().join("ladder");
    run_ok(
        braggsynth()
            .arg("ladder")
            .arg("--config")
            .arg(&path)
            .arg("--out")
            .arg(&out),
    );
    assert!(out.join("pulse_n01_seed1.pulse").exists());
    assert!(out.join("convergence.csv").exists());
    let energy = std::fs::read_to_string(out.join("energy_summary.csv")).unwrap();
    assert!(energy.lines().count() >= 2, "{energy}");
}
