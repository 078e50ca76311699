//! End-to-end tests of the `mlqd` binary: run a small problem through the
//! command-line interface and inspect the run directory it writes.

use std::path::Path;
use std::process::{Command, Output};

fn mlqd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlqd"))
        .args(args)
        .output()
        .expect("failed to spawn the mlqd binary")
}

/// Runs the binary, asserting success, and returns its stdout.
fn mlqd_ok(args: &[&str]) -> String {
    let out = mlqd(args);
    assert!(
        out.status.success(),
        "`mlqd {}` failed\nstdout:\n{}\nstderr:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Data rows of a CSV file after checking its header line.
fn csv_data_rows(path: &Path, header: &str) -> Vec<Vec<String>> {
    let text = read(path);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(header), "header of {}", path.display());
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

const TINY_PROBLEM: &str = r#"
[mesh]
nx = 4
ny = 4
lx = 3.0
ly = 3.0

[groups]
count = 2
lo = 1e-2
hi = 1e2

[quadrature]
kind = "product"
n_polar = 2
n_azimuthal = 2

[time]
dt = 0.02
t_end = 0.12
block_len = {BLOCK}

[material]
c_v_factor = 0.5917
opacity = "fleck_cummings"
coefficient = 27.0

[boundary]
left = "blackbody 1.0"
right = "vacuum"
bottom = "vacuum"
top = "vacuum"

[initial]
temperature = 1e-3

[tolerances]
epsilon = 1e-10
"#;

#[test]
fn run_compare_rates_pipeline() {
    let dir = tempfile::tempdir().unwrap();

    // Per-step blocks, default output directory next to the configuration.
    let cfg_a = dir.path().join("a.cfg");
    std::fs::write(&cfg_a, TINY_PROBLEM.replace("{BLOCK}", "0.02")).unwrap();
    let stdout = mlqd_ok(&["run", cfg_a.to_str().unwrap()]);
    assert!(stdout.contains("run: 6 steps in 6 blocks"), "stdout: {stdout}");
    assert!(stdout.contains("wrote "), "stdout: {stdout}");

    let out_a = dir.path().join("a_out");
    assert!(out_a.join("run_meta.toml").is_file());
    for n in 1..=6 {
        assert!(out_a.join(format!("fields_{n}.csv")).is_file(), "fields_{n}.csv");
    }
    let iters = csv_data_rows(&out_a.join("itercount.csv"), "block,steps,outer");
    assert_eq!(iters.len(), 6);
    for row in &iters {
        assert_eq!(row[1], "1", "single-step blocks: {row:?}");
    }
    assert!(out_a.join("balance.csv").is_file());
    assert!(out_a.join("inner.csv").is_file());
    // No reference attached, so the convergence log has no error columns.
    let conv = read(&out_a.join("conv.csv"));
    assert!(conv.starts_with("block,j,n,xi_e,xi_t\n"), "conv header: {conv}");

    // Same problem in three-step blocks, logging errors against run A.
    let cfg_b = dir.path().join("b.cfg");
    let with_ref = format!(
        "{}\n[output]\nreference = \"{}\"\n",
        TINY_PROBLEM.replace("{BLOCK}", "0.06"),
        out_a.display()
    );
    std::fs::write(&cfg_b, with_ref).unwrap();
    let out_b = dir.path().join("b_run");
    let stdout = mlqd_ok(&["run", cfg_b.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    assert!(stdout.contains("run: 6 steps in 2 blocks"), "stdout: {stdout}");
    let conv = read(&out_b.join("conv.csv"));
    assert!(
        conv.starts_with("block,j,n,xi_e,xi_t,err_e,err_t\n"),
        "conv header: {conv}"
    );

    // Contraction-rate estimate of run B against the per-step reference.
    let stdout = mlqd_ok(&["rates", out_b.to_str().unwrap(), out_a.to_str().unwrap()]);
    assert!(stdout.contains("block_steps = 3"), "stdout: {stdout}");
    assert!(stdout.contains("rho_E = "), "stdout: {stdout}");
    let rates = csv_data_rows(&out_b.join("rates.csv"), "block_steps,rho_e,rho_t");
    assert_eq!(rates.len(), 1);
    assert_eq!(rates[0][0], "3");
    for field in &rates[0][1..] {
        let rho: f64 = field.parse().unwrap();
        assert!(rho > 0.0 && rho < 1.0, "contraction rate {rho}");
    }

    // Both runs solved the same problem, so their fields agree closely.
    let stdout = mlqd_ok(&["compare", out_a.to_str().unwrap(), out_b.to_str().unwrap()]);
    assert!(stdout.contains("max over 6 saved steps"), "stdout: {stdout}");
    for line in stdout.lines().filter(|l| l.starts_with("step ")) {
        for part in line.split(", ") {
            let (_, value) = part.rsplit_once(" = ").unwrap();
            let err: f64 = value.parse().unwrap();
            assert!(err <= 1e-8, "runs disagree: {line}");
        }
    }
}

#[test]
fn equilibrium_run_logs_one_iteration_per_block() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eq.cfg");
    std::fs::write(
        &cfg,
        r#"
[mesh]
nx = 3
ny = 2
lx = 2.25
ly = 1.5

[groups]
count = 2
lo = 0.1
hi = 10.0

[quadrature]
kind = "product"
n_polar = 2
n_azimuthal = 2

[time]
dt = 0.05
t_end = 0.2
block_len = 0.05

[material]
c_v = 0.05
opacity = "constant"
kappa = 2.0

[boundary]
left = "reflective"
right = "reflective"
bottom = "reflective"
top = "reflective"

[initial]
temperature = 0.5

[tolerances]
epsilon = 1e-12
"#,
    )
    .unwrap();

    mlqd_ok(&["run", cfg.to_str().unwrap()]);
    let out = dir.path().join("eq_out");

    // A problem starting in equilibrium is already converged: every block
    // stops after one outer iteration with vanishing change measures.
    let iters = csv_data_rows(&out.join("itercount.csv"), "block,steps,outer");
    assert_eq!(iters.len(), 4);
    for row in &iters {
        assert_eq!(row[2], "1", "outer count in {row:?}");
    }
    let conv = csv_data_rows(&out.join("conv.csv"), "block,j,n,xi_e,xi_t");
    assert_eq!(conv.len(), 4, "one convergence row per block");
    for row in &conv {
        assert_eq!(row[1], "1", "outer index in {row:?}");
        for field in &row[3..] {
            let xi: f64 = field.parse().unwrap();
            assert!(xi.abs() <= 1e-12, "change measure {xi} in {row:?}");
        }
    }
}

#[test]
fn bad_inputs_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();

    let cfg = dir.path().join("incomplete.cfg");
    std::fs::write(&cfg, "[mesh]\nnx = 4\n").unwrap();
    let out = mlqd(&["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error"), "stderr: {stderr}");
    assert!(stderr.contains("missing"), "stderr: {stderr}");
    assert!(stderr.contains("mesh.ny"), "stderr: {stderr}");

    let out = mlqd(&["run", dir.path().join("no_such.cfg").to_str().unwrap()]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("cannot read"), "stderr: {stderr}");

    let out = mlqd(&["compare", dir.path().to_str().unwrap(), dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}
