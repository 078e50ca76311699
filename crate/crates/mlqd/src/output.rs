//! Run artifacts on disk: per-step field tables and iteration logs under a
//! run directory, written deterministically and in shortest round-trip
//! form, so reading a run back reproduces it bit for bit.
//!
//! A run directory contains:
//!
//! * `run_meta.toml` — grid shape, step count, tolerances, save cadence;
//! * `fields_<n>.csv` — `i,j,T,E,E_g1..` per cell for each saved step `n`;
//! * `itercount.csv` — `block,steps,outer`, one line per block;
//! * `balance.csv` — per-block multi-step and conservation residuals;
//! * `conv.csv` — `block,j,n,xi_e,xi_t[,err_e,err_t]`, one line per outer
//!   iteration and step;
//! * `inner.csv` — nested-cycle iteration counts per pass and step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::{BlockLog, RunRecord, StepSolution, XiEntry};
use crate::error::{Error, IoError, Result};

/// Sidecar metadata for a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub nx: usize,
    pub ny: usize,
    pub n_groups: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Steps per block as configured (the final block may be shorter).
    pub block_len_steps: usize,
    pub epsilon: f64,
    pub save_every: usize,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io(IoError::File {
        path: path.display().to_string(),
        source,
    })
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Io(IoError::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn parse_f64(path: &Path, line_no: usize, tok: &str) -> Result<f64> {
    tok.parse()
        .map_err(|_| malformed(path, format!("line {line_no}: `{tok}` is not a number")))
}

fn parse_usize(path: &Path, line_no: usize, tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| malformed(path, format!("line {line_no}: `{tok}` is not a count")))
}

/// Rows of a CSV file after checking the header, as `(line_no, fields)`.
fn csv_rows<'a>(
    path: &Path,
    text: &'a str,
    header: &str,
) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        Some((_, first)) => {
            return Err(malformed(
                path,
                format!("expected header `{header}`, found `{first}`"),
            ))
        }
        None => return Err(malformed(path, "empty file")),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(malformed(
                path,
                format!("line {}: expected {width} fields, found {}", idx + 1, fields.len()),
            ));
        }
        rows.push((idx + 1, fields));
    }
    Ok(rows)
}

/// Global 1-based step numbers that get a `fields_<n>.csv` file: every
/// `save_every`-th step plus the final one.
pub fn saved_step_numbers(meta: &RunMeta) -> Vec<usize> {
    (1..=meta.n_steps)
        .filter(|s| s % meta.save_every == 0 || *s == meta.n_steps)
        .collect()
}

pub fn fields_file_name(n: usize) -> String {
    format!("fields_{n}.csv")
}

/// Writes one step's cell table.
pub fn write_fields_csv(
    path: &Path,
    nx: usize,
    ny: usize,
    n_groups: usize,
    step: &StepSolution,
) -> Result<()> {
    let n_cells = nx * ny;
    if step.temperature.len() != n_cells
        || step.e_total.len() != n_cells
        || step.e_groups.len() != n_groups * n_cells
    {
        return Err(malformed(path, "field lengths disagree with the grid shape"));
    }
    let mut text = String::from("i,j,T,E");
    for g in 1..=n_groups {
        write!(text, ",E_g{g}").unwrap();
    }
    text.push('\n');
    for j in 0..ny {
        for i in 0..nx {
            let c = j * nx + i;
            write!(text, "{i},{j},{},{}", step.temperature[c], step.e_total[c]).unwrap();
            for g in 0..n_groups {
                write!(text, ",{}", step.e_groups[g * n_cells + c]).unwrap();
            }
            text.push('\n');
        }
    }
    write_text(path, &text)
}

/// Reads one step's cell table back, returning `(nx, ny, n_groups, step)`.
pub fn read_fields_csv(path: &Path) -> Result<(usize, usize, usize, StepSolution)> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let header = match lines.next() {
        Some((_, h)) => h,
        None => return Err(malformed(path, "empty file")),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 || cols[..4] != ["i", "j", "T", "E"] {
        return Err(malformed(path, format!("unrecognized header `{header}`")));
    }
    let n_groups = cols.len() - 4;
    for (g, name) in cols[4..].iter().enumerate() {
        let want = format!("E_g{}", g + 1);
        if *name != want {
            return Err(malformed(path, format!("group column `{name}`, expected `{want}`")));
        }
    }
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let (mut nx, mut ny) = (0usize, 0usize);
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(malformed(
                path,
                format!("line {}: expected {} fields, found {}", idx + 1, cols.len(), fields.len()),
            ));
        }
        let i = parse_usize(path, idx + 1, fields[0])?;
        let j = parse_usize(path, idx + 1, fields[1])?;
        let vals: Vec<f64> = fields[2..]
            .iter()
            .map(|t| parse_f64(path, idx + 1, t))
            .collect::<Result<_>>()?;
        nx = nx.max(i + 1);
        ny = ny.max(j + 1);
        rows.push((i, j, vals));
    }
    let n_cells = nx * ny;
    if rows.len() != n_cells {
        return Err(malformed(
            path,
            format!("{} rows for a {nx}x{ny} grid", rows.len()),
        ));
    }
    let mut step = StepSolution {
        temperature: vec![0.0; n_cells],
        e_total: vec![0.0; n_cells],
        e_groups: vec![0.0; n_groups * n_cells],
    };
    let mut seen = vec![false; n_cells];
    for (i, j, vals) in rows {
        let c = j * nx + i;
        if seen[c] {
            return Err(malformed(path, format!("duplicate cell ({i}, {j})")));
        }
        seen[c] = true;
        step.temperature[c] = vals[0];
        step.e_total[c] = vals[1];
        for g in 0..n_groups {
            step.e_groups[g * n_cells + c] = vals[2 + g];
        }
    }
    Ok((nx, ny, n_groups, step))
}

/// Whether the run logged per-iteration reference errors; mixed logs are
/// rejected because the `conv.csv` schema is per-file.
fn reference_errors_logged(dir: &Path, blocks: &[BlockLog]) -> Result<bool> {
    let mut has: Option<bool> = None;
    for log in blocks {
        for entry in &log.xi_history {
            let this = entry.err_e.is_some() && entry.err_t.is_some();
            match has {
                None => has = Some(this),
                Some(h) if h != this => {
                    return Err(malformed(
                        &dir.join("conv.csv"),
                        "mixed presence of reference-error columns",
                    ))
                }
                _ => {}
            }
        }
    }
    Ok(has.unwrap_or(false))
}

/// Writes a complete run directory.
pub fn write_run(dir: &Path, run: &RunRecord, meta: &RunMeta) -> Result<()> {
    if meta.nx != run.nx
        || meta.ny != run.ny
        || meta.n_groups != run.n_groups
        || meta.n_steps != run.steps.len()
    {
        return Err(malformed(dir, "metadata disagrees with the run record"));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let meta_text = toml::to_string(meta)
        .map_err(|e| malformed(&dir.join("run_meta.toml"), e.to_string()))?;
    write_text(&dir.join("run_meta.toml"), &meta_text)?;

    for n in saved_step_numbers(meta) {
        write_fields_csv(
            &dir.join(fields_file_name(n)),
            run.nx,
            run.ny,
            run.n_groups,
            &run.steps[n - 1],
        )?;
    }

    let mut iter_text = String::from("block,steps,outer\n");
    let mut balance_text = String::from("block,multi_step_residual,conservation_max\n");
    for log in &run.blocks {
        writeln!(iter_text, "{},{},{}", log.block, log.n_steps, log.outer_iterations).unwrap();
        writeln!(
            balance_text,
            "{},{},{}",
            log.block, log.multi_step_residual, log.conservation_max
        )
        .unwrap();
    }
    write_text(&dir.join("itercount.csv"), &iter_text)?;
    write_text(&dir.join("balance.csv"), &balance_text)?;

    let with_err = reference_errors_logged(dir, &run.blocks)?;
    let mut conv_text = String::from(if with_err {
        "block,j,n,xi_e,xi_t,err_e,err_t\n"
    } else {
        "block,j,n,xi_e,xi_t\n"
    });
    let mut inner_text = String::from("block,pass,n,inner\n");
    for log in &run.blocks {
        for entry in &log.xi_history {
            for k in 0..log.n_steps {
                let n = log.first_step + k + 1;
                write!(conv_text, "{},{},{n},{},{}", log.block, entry.j, entry.xi_e[k], entry.xi_t[k])
                    .unwrap();
                if with_err {
                    write!(
                        conv_text,
                        ",{},{}",
                        entry.err_e.as_ref().unwrap()[k],
                        entry.err_t.as_ref().unwrap()[k]
                    )
                    .unwrap();
                }
                conv_text.push('\n');
            }
        }
        for (pass, counts) in log.inner_iterations.iter().enumerate() {
            for (k, count) in counts.iter().enumerate() {
                let n = log.first_step + k + 1;
                writeln!(inner_text, "{},{pass},{n},{count}", log.block).unwrap();
            }
        }
    }
    write_text(&dir.join("conv.csv"), &conv_text)?;
    write_text(&dir.join("inner.csv"), &inner_text)?;
    Ok(())
}

fn read_logs(dir: &Path) -> Result<Vec<BlockLog>> {
    let iter_path = dir.join("itercount.csv");
    let iter_text = read_text(&iter_path)?;
    let mut blocks: Vec<BlockLog> = Vec::new();
    let mut first_step = 0usize;
    for (ln, fields) in csv_rows(&iter_path, &iter_text, "block,steps,outer")? {
        let block = parse_usize(&iter_path, ln, fields[0])?;
        if block != blocks.len() + 1 {
            return Err(malformed(&iter_path, format!("line {ln}: blocks out of order")));
        }
        let n_steps = parse_usize(&iter_path, ln, fields[1])?;
        blocks.push(BlockLog {
            block,
            first_step,
            n_steps,
            outer_iterations: parse_usize(&iter_path, ln, fields[2])?,
            xi_history: Vec::new(),
            inner_iterations: Vec::new(),
            multi_step_residual: 0.0,
            conservation_max: 0.0,
        });
        first_step += n_steps;
    }

    let bal_path = dir.join("balance.csv");
    let bal_text = read_text(&bal_path)?;
    for (ln, fields) in csv_rows(&bal_path, &bal_text, "block,multi_step_residual,conservation_max")? {
        let block = parse_usize(&bal_path, ln, fields[0])?;
        let log = blocks
            .get_mut(block.wrapping_sub(1))
            .ok_or_else(|| malformed(&bal_path, format!("line {ln}: unknown block {block}")))?;
        log.multi_step_residual = parse_f64(&bal_path, ln, fields[1])?;
        log.conservation_max = parse_f64(&bal_path, ln, fields[2])?;
    }

    let conv_path = dir.join("conv.csv");
    let conv_text = read_text(&conv_path)?;
    let (header, with_err) = match conv_text.lines().next() {
        Some("block,j,n,xi_e,xi_t,err_e,err_t") => ("block,j,n,xi_e,xi_t,err_e,err_t", true),
        Some("block,j,n,xi_e,xi_t") => ("block,j,n,xi_e,xi_t", false),
        other => {
            return Err(malformed(
                &conv_path,
                format!("unrecognized header `{}`", other.unwrap_or("")),
            ))
        }
    };
    for (ln, fields) in csv_rows(&conv_path, &conv_text, header)? {
        let block = parse_usize(&conv_path, ln, fields[0])?;
        let j = parse_usize(&conv_path, ln, fields[1])?;
        let n = parse_usize(&conv_path, ln, fields[2])?;
        let log = blocks
            .get_mut(block.wrapping_sub(1))
            .ok_or_else(|| malformed(&conv_path, format!("line {ln}: unknown block {block}")))?;
        if log.xi_history.last().map(|e| e.j) != Some(j) {
            log.xi_history.push(XiEntry {
                j,
                xi_e: Vec::new(),
                xi_t: Vec::new(),
                err_e: with_err.then(Vec::new),
                err_t: with_err.then(Vec::new),
            });
        }
        let entry = log.xi_history.last_mut().unwrap();
        if n != log.first_step + entry.xi_e.len() + 1 {
            return Err(malformed(&conv_path, format!("line {ln}: step {n} out of order")));
        }
        entry.xi_e.push(parse_f64(&conv_path, ln, fields[3])?);
        entry.xi_t.push(parse_f64(&conv_path, ln, fields[4])?);
        if with_err {
            let err_e = parse_f64(&conv_path, ln, fields[5])?;
            let err_t = parse_f64(&conv_path, ln, fields[6])?;
            entry.err_e.as_mut().unwrap().push(err_e);
            entry.err_t.as_mut().unwrap().push(err_t);
        }
    }

    let inner_path = dir.join("inner.csv");
    let inner_text = read_text(&inner_path)?;
    for (ln, fields) in csv_rows(&inner_path, &inner_text, "block,pass,n,inner")? {
        let block = parse_usize(&inner_path, ln, fields[0])?;
        let pass = parse_usize(&inner_path, ln, fields[1])?;
        let count = parse_usize(&inner_path, ln, fields[3])?;
        let log = blocks
            .get_mut(block.wrapping_sub(1))
            .ok_or_else(|| malformed(&inner_path, format!("line {ln}: unknown block {block}")))?;
        if pass == log.inner_iterations.len() {
            log.inner_iterations.push(Vec::new());
        } else if pass + 1 != log.inner_iterations.len() {
            return Err(malformed(&inner_path, format!("line {ln}: pass {pass} out of order")));
        }
        log.inner_iterations[pass].push(count);
    }
    Ok(blocks)
}

/// Reads a run directory back. The returned record holds only the saved
/// steps (all of them when the run was written with `save_every = 1`).
pub fn read_run(dir: &Path) -> Result<(RunRecord, RunMeta)> {
    let meta_path = dir.join("run_meta.toml");
    let meta: RunMeta = toml::from_str(&read_text(&meta_path)?)
        .map_err(|e| malformed(&meta_path, e.to_string()))?;
    if meta.nx == 0 || meta.ny == 0 || meta.n_groups == 0 || meta.n_steps == 0 || meta.save_every == 0
    {
        return Err(malformed(&meta_path, "zero-sized grid or step count"));
    }
    let mut steps = Vec::new();
    for n in saved_step_numbers(&meta) {
        let path = dir.join(fields_file_name(n));
        let (nx, ny, n_groups, sol) = read_fields_csv(&path)?;
        if (nx, ny, n_groups) != (meta.nx, meta.ny, meta.n_groups) {
            return Err(malformed(&path, "grid shape disagrees with run_meta.toml"));
        }
        steps.push(sol);
    }
    let blocks = read_logs(dir)?;
    let record = RunRecord {
        nx: meta.nx,
        ny: meta.ny,
        n_groups: meta.n_groups,
        dt: meta.dt,
        steps,
        blocks,
    };
    Ok((record, meta))
}

/// Writes the contraction-rate summary produced by the rate estimator.
pub fn write_rates_csv(path: &Path, block_steps: usize, rho_e: f64, rho_t: f64) -> Result<()> {
    write_text(
        path,
        &format!("block_steps,rho_e,rho_t\n{block_steps},{rho_e},{rho_t}\n"),
    )
}
