//! Post-processing: error norms of a run against a reference run and the
//! average per-iteration contraction factor of the outer cycle.

use crate::driver::{l2, l2_diff, RunRecord};
use crate::error::{Error, Result};

/// Relative space-time errors below this are treated as measurement noise
/// when estimating contraction factors: once iterates agree with the
/// reference to this level, further ratios measure roundoff, not the
/// iteration.
pub const DEFAULT_RATE_FLOOR: f64 = 1e-9;

/// Terminal-field errors of a run against a reference on the same grid.
#[derive(Debug, Clone)]
pub struct ErrorVsReference {
    /// Per global step: relative L2 error of the total energy density.
    pub step_err_e: Vec<f64>,
    pub step_err_t: Vec<f64>,
    /// Per block: relative error in the 2-norm over space and time (all
    /// cells and steps of the block pooled).
    pub block_err_e: Vec<f64>,
    pub block_err_t: Vec<f64>,
}

/// Compares the converged per-step fields of two runs.
pub fn error_vs_reference(run: &RunRecord, reference: &RunRecord) -> Result<ErrorVsReference> {
    run.check_same_grid(reference)?;
    let mut out = ErrorVsReference {
        step_err_e: Vec::with_capacity(run.steps.len()),
        step_err_t: Vec::with_capacity(run.steps.len()),
        block_err_e: Vec::with_capacity(run.blocks.len()),
        block_err_t: Vec::with_capacity(run.blocks.len()),
    };
    for (a, r) in run.steps.iter().zip(&reference.steps) {
        out.step_err_e
            .push(l2_diff(&a.e_total, &r.e_total) / l2(&r.e_total).max(f64::MIN_POSITIVE));
        out.step_err_t.push(
            l2_diff(&a.temperature, &r.temperature) / l2(&r.temperature).max(f64::MIN_POSITIVE),
        );
    }
    for log in &run.blocks {
        let (mut ne, mut de, mut nt, mut dt) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for k in 0..log.n_steps {
            let a = &run.steps[log.first_step + k];
            let r = &reference.steps[log.first_step + k];
            ne += l2_diff(&a.e_total, &r.e_total).powi(2);
            de += l2(&r.e_total).powi(2);
            nt += l2_diff(&a.temperature, &r.temperature).powi(2);
            dt += l2(&r.temperature).powi(2);
        }
        out.block_err_e
            .push(ne.sqrt() / de.sqrt().max(f64::MIN_POSITIVE));
        out.block_err_t
            .push(nt.sqrt() / dt.sqrt().max(f64::MIN_POSITIVE));
    }
    Ok(out)
}

/// Geometric mean of the ratios of consecutive errors, pooled over every
/// sequence. Pairs where either error is at or below `floor` are excluded
/// as stagnation noise; having no usable pair is an error.
pub fn geometric_rate(series: &[Vec<f64>], floor: f64) -> Result<f64> {
    let mut log_sum = 0.0f64;
    let mut count = 0usize;
    for seq in series {
        for w in seq.windows(2) {
            if w[0] > floor && w[1] > floor {
                log_sum += (w[1] / w[0]).ln();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Diagnostics(
            "no error pairs above the noise floor; cannot estimate a contraction rate".into(),
        ));
    }
    Ok((log_sum / count as f64).exp())
}

/// Per-block sequences, over outer iterations, of the relative errors
/// against the reference in the 2-norm over space and time. Requires the
/// run to have logged per-iteration errors (i.e. it was produced with a
/// reference attached).
fn spacetime_series(
    run: &RunRecord,
    reference: &RunRecord,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut all_e = Vec::with_capacity(run.blocks.len());
    let mut all_t = Vec::with_capacity(run.blocks.len());
    for log in &run.blocks {
        let re: Vec<f64> = (0..log.n_steps)
            .map(|k| l2(&reference.steps[log.first_step + k].e_total))
            .collect();
        let rt: Vec<f64> = (0..log.n_steps)
            .map(|k| l2(&reference.steps[log.first_step + k].temperature))
            .collect();
        let ref_e = re.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ref_t = rt.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut seq_e = Vec::with_capacity(log.xi_history.len());
        let mut seq_t = Vec::with_capacity(log.xi_history.len());
        for entry in &log.xi_history {
            let (err_e, err_t) = match (&entry.err_e, &entry.err_t) {
                (Some(e), Some(t)) => (e, t),
                _ => {
                    return Err(Error::Diagnostics(
                        "run has no per-iteration reference errors; rerun with a reference".into(),
                    ))
                }
            };
            let st_e = err_e
                .iter()
                .zip(&re)
                .map(|(rel, norm)| (rel * norm).powi(2))
                .sum::<f64>()
                .sqrt();
            let st_t = err_t
                .iter()
                .zip(&rt)
                .map(|(rel, norm)| (rel * norm).powi(2))
                .sum::<f64>()
                .sqrt();
            seq_e.push(st_e / ref_e.max(f64::MIN_POSITIVE));
            seq_t.push(st_t / ref_t.max(f64::MIN_POSITIVE));
        }
        all_e.push(seq_e);
        all_t.push(seq_t);
    }
    Ok((all_e, all_t))
}

/// Average contraction factors `(rho_E, rho_T)` of the outer cycle,
/// measured against the reference solution and averaged geometrically
/// over all (block, iteration) pairs.
pub fn average_convergence_rate(
    run: &RunRecord,
    reference: &RunRecord,
    floor: f64,
) -> Result<(f64, f64)> {
    run.check_same_grid(reference)?;
    let (se, st) = spacetime_series(run, reference)?;
    Ok((geometric_rate(&se, floor)?, geometric_rate(&st, floor)?))
}
