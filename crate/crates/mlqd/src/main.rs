use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use mlqd::{
    average_convergence_rate, parse_config, read_run, run_problem, saved_step_numbers,
    write_rates_csv, write_run, RunMeta, RunRecord, DEFAULT_RATE_FLOOR,
};

/// Thermal radiative transfer with a multilevel quasidiffusion iteration
/// over coarse time blocks.
#[derive(Parser)]
#[command(name = "mlqd", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration file and write the run directory.
    Run {
        /// Path to the TOML configuration.
        config: PathBuf,
        /// Output directory (default: the configuration stem plus `_out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the saved fields of two run directories.
    Compare { run_a: PathBuf, run_b: PathBuf },
    /// Estimate average outer-cycle contraction rates of a run against a
    /// fully saved reference run, and write `rates.csv` into the run.
    Rates { run: PathBuf, reference: PathBuf },
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_l2_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    num / l2(b).max(f64::MIN_POSITIVE)
}

/// Reads a run directory, requiring every step to be present on disk.
fn load_full_run(dir: &Path) -> anyhow::Result<(RunRecord, RunMeta)> {
    let (record, meta) = read_run(dir)?;
    if record.steps.len() != meta.n_steps {
        bail!(
            "{} holds {} of {} steps (written with save_every = {}); \
             rewrite it with save_every = 1",
            dir.display(),
            record.steps.len(),
            meta.n_steps,
            meta.save_every
        );
    }
    Ok((record, meta))
}

fn cmd_run(config_path: &Path, out: Option<PathBuf>) -> anyhow::Result<()> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("cannot read {}", config_path.display()))?;
    let cfg = parse_config(&text)?;
    let problem = cfg.problem()?;
    let criteria = cfg.criteria();
    let reference = match &cfg.reference {
        Some(dir) => Some(
            load_full_run(Path::new(dir))
                .with_context(|| format!("loading reference run {dir}"))?
                .0,
        ),
        None => None,
    };
    let record = run_problem(&problem, &criteria, reference.as_ref())?;

    let out = out.unwrap_or_else(|| {
        let stem = config_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into());
        config_path.with_file_name(format!("{stem}_out"))
    });
    let meta = RunMeta {
        nx: record.nx,
        ny: record.ny,
        n_groups: record.n_groups,
        dt: record.dt,
        n_steps: record.steps.len(),
        block_len_steps: problem.blocks.block_len(0),
        epsilon: cfg.epsilon,
        save_every: cfg.save_every,
    };
    write_run(&out, &record, &meta)?;

    for log in &record.blocks {
        println!(
            "block {}: steps {}, outer {}, multi-step residual {:.3e}, conservation {:.3e}",
            log.block, log.n_steps, log.outer_iterations, log.multi_step_residual, log.conservation_max
        );
    }
    let total_outer: usize = record.blocks.iter().map(|b| b.outer_iterations).sum();
    println!(
        "run: {} steps in {} blocks, {} outer iterations total",
        record.steps.len(),
        record.blocks.len(),
        total_outer
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_compare(dir_a: &Path, dir_b: &Path) -> anyhow::Result<()> {
    let (a, meta_a) = read_run(dir_a)?;
    let (b, meta_b) = read_run(dir_b)?;
    if (a.nx, a.ny, a.n_groups) != (b.nx, b.ny, b.n_groups)
        || (a.dt - b.dt).abs() > 1e-12 * a.dt.abs().max(b.dt.abs())
        || meta_a.n_steps != meta_b.n_steps
    {
        bail!(
            "runs are not comparable: {}x{} / {} groups / {} steps of dt={} vs {}x{} / {} groups / {} steps of dt={}",
            a.nx, a.ny, a.n_groups, meta_a.n_steps, a.dt,
            b.nx, b.ny, b.n_groups, meta_b.n_steps, b.dt
        );
    }
    let saved_a = saved_step_numbers(&meta_a);
    let saved_b = saved_step_numbers(&meta_b);
    if saved_a != saved_b {
        bail!("runs saved different step sets; rewrite both with save_every = 1");
    }
    let (mut max_t, mut max_e) = (0.0f64, 0.0f64);
    for ((n, sa), sb) in saved_a.iter().zip(&a.steps).zip(&b.steps) {
        let err_t = rel_l2_diff(&sa.temperature, &sb.temperature);
        let err_e = rel_l2_diff(&sa.e_total, &sb.e_total);
        max_t = max_t.max(err_t);
        max_e = max_e.max(err_e);
        println!("step {n}: err_T = {err_t:.6e}, err_E = {err_e:.6e}");
    }
    println!(
        "max over {} saved steps: err_T = {max_t:.6e}, err_E = {max_e:.6e}",
        saved_a.len()
    );
    Ok(())
}

fn cmd_rates(run_dir: &Path, ref_dir: &Path) -> anyhow::Result<()> {
    let (run, meta) = load_full_run(run_dir)?;
    let (reference, _) = load_full_run(ref_dir)?;
    let (rho_e, rho_t) = average_convergence_rate(&run, &reference, DEFAULT_RATE_FLOOR)?;
    let path = run_dir.join("rates.csv");
    write_rates_csv(&path, meta.block_len_steps, rho_e, rho_t)?;
    println!("block_steps = {}, rho_E = {rho_e:.6}, rho_T = {rho_t:.6}", meta.block_len_steps);
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out.clone()),
        Command::Compare { run_a, run_b } => cmd_compare(run_a, run_b),
        Command::Rates { run, reference } => cmd_rates(run, reference),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
