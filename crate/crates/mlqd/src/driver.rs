//! Iteration driver: outer cycles over time blocks that alternate a
//! high-order transport pass with a low-order pass over every step in the
//! block, nested per-step multigroup/grey cycles, and all convergence
//! bookkeeping needed by the post-processing layer.

use std::fs::File;
use std::io::{Read as _, Seek, SeekFrom, Write as _};

use crate::error::{Error, IoError, Result, SolverError};
use crate::grid::{AngularQuadrature, FrequencyGroups, SpatialMesh, TimeBlockPartition};
use crate::loqd::{grey_coefficients, grey_meb_solve, mg_loqd_step, GreyResult, MgStepResult, MomentFields};
use crate::physics::{MaterialModel, MaterialTables};
use crate::transport::{
    eddington_tensor, sweep_step, AngularIntensity, BoundaryCondition, BoundaryIntensities,
    BoundarySet, EddingtonClosure, SIDES,
};

/// Discrete L2 norm over a field (no volume weighting; the grid is
/// uniform, so the weighted norm is proportional).
pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------------------
// Problem definition and iteration state
// ---------------------------------------------------------------------------

/// A complete discretized problem: all meshes, the material, boundary
/// conditions, and the block partition of the time grid.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: SpatialMesh,
    pub quad: AngularQuadrature,
    pub groups: FrequencyGroups,
    pub material: MaterialModel,
    pub bc: BoundarySet,
    pub blocks: TimeBlockPartition,
    /// Uniform initial temperature (keV); radiation starts in local
    /// equilibrium with it.
    pub t_initial: f64,
    /// Maximum number of per-step closures kept in memory per block;
    /// closures beyond the budget spill to a temporary file.
    pub memory_budget_steps: Option<usize>,
}

/// Outer/inner tolerances and iteration caps.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceCriteria {
    pub epsilon: f64,
    pub epsilon_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl ConvergenceCriteria {
    /// Criteria with the default nesting: the inner tolerance two decades
    /// tighter than the outer one, floored at 1e-15 so the nested cycle
    /// always out-converges the outer cycle without chasing roundoff.
    pub fn from_outer(epsilon: f64) -> Self {
        ConvergenceCriteria {
            epsilon,
            epsilon_inner: (1e-2 * epsilon).max(1e-15),
            max_outer: 200,
            max_inner: 500,
        }
    }
}

/// Solution state at a block edge: everything block `b + 1` consumes from
/// block `b`. Immutable while a block's outer cycle runs.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub intensity: AngularIntensity,
    pub boundary: BoundaryIntensities,
    pub moments: MomentFields,
    pub temperature: Vec<f64>,
}

impl BlockState {
    /// The problem's initial condition: the material at the uniform
    /// initial temperature and the radiation field in local equilibrium
    /// with it (isotropic Planck intensities, zero net fluxes).
    pub fn initial(problem: &Problem) -> Result<Self> {
        let mesh = &problem.mesh;
        let n_groups = problem.groups.count();
        let n_dirs = problem.quad.len();
        let t0 = vec![problem.t_initial; mesh.n_cells()];
        let tables = MaterialTables::build(&problem.material, &problem.groups, &t0)?;
        let intensity = AngularIntensity::isotropic_planck(&tables, n_dirs);
        let mut boundary = BoundaryIntensities::zeros(n_groups, n_dirs, mesh.nx, mesh.ny);
        for g in 0..n_groups {
            for m in 0..n_dirs {
                for j in 0..mesh.ny {
                    let k = boundary.x_idx(g, m, j);
                    boundary.left[k] = tables.planck(g, mesh.cell(0, j));
                    boundary.right[k] = tables.planck(g, mesh.cell(mesh.nx - 1, j));
                }
                for i in 0..mesh.nx {
                    let k = boundary.y_idx(g, m, i);
                    boundary.bottom[k] = tables.planck(g, mesh.cell(i, 0));
                    boundary.top[k] = tables.planck(g, mesh.cell(i, mesh.ny - 1));
                }
            }
        }
        Ok(BlockState {
            intensity,
            boundary,
            moments: MomentFields::equilibrium(mesh, &tables),
            temperature: t0,
        })
    }
}

// ---------------------------------------------------------------------------
// Closure storage with optional disk spill
// ---------------------------------------------------------------------------

/// Per-step Eddington closures collected during a high-order pass. The
/// first `budget` entries stay in memory; the rest are written to an
/// unnamed temporary file in a fixed binary layout (the round trip is
/// bitwise exact, so spilling never changes results).
pub struct ClosureStore {
    n_groups: usize,
    n_cells: usize,
    nx: usize,
    ny: usize,
    budget: usize,
    in_memory: Vec<EddingtonClosure>,
    spill: Option<File>,
    spilled: usize,
}

fn spill_io(source: std::io::Error) -> Error {
    Error::Io(IoError::File {
        path: "<closure spill>".into(),
        source,
    })
}

impl ClosureStore {
    pub fn new(mesh: &SpatialMesh, n_groups: usize, budget: Option<usize>) -> Self {
        ClosureStore {
            n_groups,
            n_cells: mesh.n_cells(),
            nx: mesh.nx,
            ny: mesh.ny,
            budget: budget.unwrap_or(usize::MAX),
            in_memory: Vec::new(),
            spill: None,
            spilled: 0,
        }
    }

    /// Values per serialized entry: the degeneracy counter plus the four
    /// tensor components and the eight per-side arrays.
    fn entry_len(&self) -> usize {
        1 + 4 * self.n_groups * self.n_cells + 4 * self.n_groups * (self.nx + self.ny)
    }

    pub fn len(&self) -> usize {
        self.in_memory.len() + self.spilled
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Discards all entries, keeping the spill file for reuse.
    pub fn clear(&mut self) -> Result<()> {
        self.in_memory.clear();
        self.spilled = 0;
        if let Some(f) = &mut self.spill {
            f.set_len(0).map_err(spill_io)?;
            f.seek(SeekFrom::Start(0)).map_err(spill_io)?;
        }
        Ok(())
    }

    pub fn push(&mut self, closure: EddingtonClosure) -> Result<()> {
        if closure.n_groups != self.n_groups || closure.n_cells != self.n_cells {
            return Err(Error::Solver(SolverError::Domain(
                "closure dimensions do not match the store".into(),
            )));
        }
        if self.in_memory.len() < self.budget {
            self.in_memory.push(closure);
            return Ok(());
        }
        if self.spill.is_none() {
            self.spill = Some(tempfile::tempfile().map_err(spill_io)?);
        }
        let mut buf = Vec::with_capacity(self.entry_len() * 8);
        buf.extend_from_slice(&(closure.degenerate as f64).to_le_bytes());
        for arr in [
            &closure.fxx,
            &closure.fyy,
            &closure.fzz,
            &closure.fxy,
            &closure.c_left,
            &closure.c_right,
            &closure.c_bottom,
            &closure.c_top,
            &closure.fin_left,
            &closure.fin_right,
            &closure.fin_bottom,
            &closure.fin_top,
        ] {
            for v in arr {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let f = self.spill.as_mut().unwrap();
        f.seek(SeekFrom::End(0)).map_err(spill_io)?;
        f.write_all(&buf).map_err(spill_io)?;
        self.spilled += 1;
        Ok(())
    }

    pub fn get(&mut self, idx: usize) -> Result<EddingtonClosure> {
        if idx < self.in_memory.len() {
            return Ok(self.in_memory[idx].clone());
        }
        let spilled_idx = idx - self.in_memory.len();
        if spilled_idx >= self.spilled {
            return Err(Error::Solver(SolverError::Domain(format!(
                "closure store has {} entries, requested {idx}",
                self.len()
            ))));
        }
        let entry_bytes = self.entry_len() as u64 * 8;
        let f = self.spill.as_mut().unwrap();
        f.seek(SeekFrom::Start(spilled_idx as u64 * entry_bytes))
            .map_err(spill_io)?;
        let mut buf = vec![0u8; entry_bytes as usize];
        f.read_exact(&mut buf).map_err(spill_io)?;
        let mut vals = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |len: usize| -> Vec<f64> { vals.by_ref().take(len).collect() };
        let degenerate = take(1)[0] as usize;
        let nc = self.n_groups * self.n_cells;
        let (sx, sy) = (self.n_groups * self.nx, self.n_groups * self.ny);
        Ok(EddingtonClosure {
            n_groups: self.n_groups,
            n_cells: self.n_cells,
            fxx: take(nc),
            fyy: take(nc),
            fzz: take(nc),
            fxy: take(nc),
            c_left: take(sy),
            c_right: take(sy),
            c_bottom: take(sx),
            c_top: take(sx),
            fin_left: take(sy),
            fin_right: take(sy),
            fin_bottom: take(sx),
            fin_top: take(sx),
            degenerate,
        })
    }
}

// ---------------------------------------------------------------------------
// Logs and records
// ---------------------------------------------------------------------------

/// Convergence record of one outer iteration of one block: per-step change
/// norms and, when a reference run is attached, per-step relative errors
/// against its terminal fields.
#[derive(Debug, Clone, PartialEq)]
pub struct XiEntry {
    pub j: usize,
    /// Per step in the block: `|| E^(j)(t^n) - E^(j-1)(t^n) ||_2`.
    pub xi_e: Vec<f64>,
    pub xi_t: Vec<f64>,
    pub err_e: Option<Vec<f64>>,
    pub err_t: Option<Vec<f64>>,
}

/// Everything logged for one time block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLog {
    /// 1-based block number.
    pub block: usize,
    /// Global 0-based index of the block's first step.
    pub first_step: usize,
    pub n_steps: usize,
    /// Outer iterations taken (the preamble pass is not counted).
    pub outer_iterations: usize,
    pub xi_history: Vec<XiEntry>,
    /// Nested-cycle iteration counts: row 0 is the preamble pass, row `j`
    /// the j-th outer pass; one entry per step.
    pub inner_iterations: Vec<Vec<usize>>,
    /// Relative L2 residual of the multi-step identity
    /// `I(T_b) = I(T_{b-1}) + sum_n tau^n H^n` over the last high-order
    /// pass.
    pub multi_step_residual: f64,
    /// Largest energy-conservation residual over the accepted steps.
    pub conservation_max: f64,
}

/// Converged fields at the end of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub temperature: Vec<f64>,
    pub e_total: Vec<f64>,
    /// `[g * n_cells + cell]`.
    pub e_groups: Vec<f64>,
}

/// Full output of a run: terminal fields for every step plus per-block
/// iteration logs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub nx: usize,
    pub ny: usize,
    pub n_groups: usize,
    pub dt: f64,
    pub steps: Vec<StepSolution>,
    pub blocks: Vec<BlockLog>,
}

impl RunRecord {
    /// Errors unless `other` is defined on the same mesh, group count and
    /// time grid.
    pub fn check_same_grid(&self, other: &RunRecord) -> Result<()> {
        if self.nx != other.nx
            || self.ny != other.ny
            || self.n_groups != other.n_groups
            || (self.dt - other.dt).abs() > 1e-12 * self.dt.abs()
            || self.steps.len() != other.steps.len()
        {
            return Err(Error::Io(IoError::GridMismatch(format!(
                "{}x{} cells / {} groups / {} steps of dt={} vs {}x{} / {} / {} of dt={}",
                self.nx,
                self.ny,
                self.n_groups,
                self.steps.len(),
                self.dt,
                other.nx,
                other.ny,
                other.n_groups,
                other.steps.len(),
                other.dt,
            ))));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Nested per-step cycle
// ---------------------------------------------------------------------------

struct InnerSolution {
    mg: MgStepResult,
    grey: GreyResult,
    iters: usize,
}

/// Converges the nested multigroup / effective-grey cycle for one time
/// step at a frozen closure. `prev_*` are the fields at the previous time
/// level; `t_start` / `e_lag_start` / `e_total_start` seed the cycle (the
/// previous outer iterate of this step, or the previous step's result on
/// the zeroth pass).
#[allow(clippy::too_many_arguments)]
fn solve_step_nested(
    problem: &Problem,
    closure: &EddingtonClosure,
    prev_mg: &MomentFields,
    prev_grey: &MomentFields,
    prev_t: &[f64],
    t_start: &[f64],
    e_lag_start: &[f64],
    e_total_start: &[f64],
    dt: f64,
    criteria: &ConvergenceCriteria,
    step: usize,
) -> Result<InnerSolution> {
    let mut t_hat = t_start.to_vec();
    let mut e_lag = e_lag_start.to_vec();
    let mut e_prev = e_total_start.to_vec();
    for s in 1..=criteria.max_inner {
        let tables = MaterialTables::build(&problem.material, &problem.groups, &t_hat)?;
        let mg = mg_loqd_step(
            &problem.mesh,
            closure,
            &tables,
            &problem.bc,
            prev_mg,
            &e_lag,
            dt,
        )?;
        let coefs = grey_coefficients(&problem.mesh, closure, &tables, &mg);
        let e_init = mg.fields.group_sum().e;
        let grey = grey_meb_solve(
            &problem.mesh,
            &coefs,
            &problem.bc,
            prev_grey,
            prev_t,
            &problem.material,
            dt,
            &e_init,
        )?;
        let de = l2_diff(&grey.fields.e, &e_prev);
        let dte = l2_diff(&grey.temperature, &t_hat);
        let ok_e = de <= criteria.epsilon_inner * l2(&grey.fields.e);
        let ok_t = dte <= criteria.epsilon_inner * l2(&grey.temperature);
        if ok_e && ok_t {
            return Ok(InnerSolution { mg, grey, iters: s });
        }
        if s == criteria.max_inner {
            return Err(Error::Solver(SolverError::InnerStagnation {
                step,
                max_inner: criteria.max_inner,
                xi_e: de / l2(&grey.fields.e).max(f64::MIN_POSITIVE),
                xi_t: dte / l2(&grey.temperature).max(f64::MIN_POSITIVE),
            }));
        }
        t_hat = grey.temperature;
        e_lag = mg.fields.e;
        e_prev = grey.fields.e;
    }
    unreachable!("inner loop always returns or errors at max_inner");
}

fn snapshot(sol: &InnerSolution) -> StepSolution {
    StepSolution {
        temperature: sol.grey.temperature.clone(),
        e_total: sol.grey.fields.e.clone(),
        e_groups: sol.mg.fields.e.clone(),
    }
}

/// Per-step relative L2 errors of a pass against the reference terminal
/// fields for the same global steps.
fn reference_errors(
    snaps: &[StepSolution],
    first_step: usize,
    reference: &RunRecord,
) -> (Vec<f64>, Vec<f64>) {
    let mut err_e = Vec::with_capacity(snaps.len());
    let mut err_t = Vec::with_capacity(snaps.len());
    for (k, snap) in snaps.iter().enumerate() {
        let r = &reference.steps[first_step + k];
        err_e.push(l2_diff(&snap.e_total, &r.e_total) / l2(&r.e_total).max(f64::MIN_POSITIVE));
        err_t.push(l2_diff(&snap.temperature, &r.temperature) / l2(&r.temperature).max(f64::MIN_POSITIVE));
    }
    (err_e, err_t)
}

// ---------------------------------------------------------------------------
// Block driver
// ---------------------------------------------------------------------------

/// Runs the outer iteration cycle for block `b` (0-based) starting from
/// `state`, returning the state at the block's end, the converged per-step
/// fields, and the iteration log.
///
/// The cycle: a zeroth low-order pass over all steps with the isotropic
/// closure; then repeated outer iterations, each being one transport pass
/// (storing per-step closures) followed by one low-order pass with nested
/// per-step cycles, until the largest per-step change of both E and T
/// drops below `epsilon` relative to the largest per-step norm.
pub fn run_block(
    problem: &Problem,
    b: usize,
    state: &BlockState,
    criteria: &ConvergenceCriteria,
    reference: Option<&RunRecord>,
    store: &mut ClosureStore,
) -> Result<(BlockState, Vec<StepSolution>, BlockLog)> {
    let mesh = &problem.mesh;
    let steps = problem.blocks.block_steps(b);
    let first_step = steps.start;
    let nb = steps.len();
    let dt = problem.blocks.dt;
    let n_groups = problem.groups.count();
    let reflective = SIDES
        .iter()
        .any(|s| problem.bc.side(*s) == BoundaryCondition::Reflective);

    let mut inner_hist: Vec<Vec<usize>> = Vec::new();
    let mut xi_history: Vec<XiEntry> = Vec::new();

    // Zeroth pass: low-order solves over the whole block with the
    // isotropic closure, each step warm-started from the previous one.
    let iso = EddingtonClosure::isotropic(mesh, &problem.quad, &problem.groups, n_groups, &problem.bc)?;
    let mut prev_snaps: Vec<StepSolution> = Vec::with_capacity(nb);
    {
        let mut carry_mg = state.moments.clone();
        let mut carry_t = state.temperature.clone();
        let mut inner_row = Vec::with_capacity(nb);
        for n_global in steps.clone() {
            let prev_grey = carry_mg.group_sum();
            let sol = solve_step_nested(
                problem,
                &iso,
                &carry_mg,
                &prev_grey,
                &carry_t,
                &carry_t,
                &carry_mg.e,
                &prev_grey.e,
                dt,
                criteria,
                n_global,
            )?;
            inner_row.push(sol.iters);
            prev_snaps.push(snapshot(&sol));
            carry_t = sol.grey.temperature;
            carry_mg = sol.mg.fields;
        }
        inner_hist.push(inner_row);
    }

    let mut h_sum = vec![0.0f64; state.intensity.values.len()];
    let mut xi_e_inf_hist: Vec<f64> = Vec::new();
    let mut xi_t_inf_hist: Vec<f64> = Vec::new();
    let mut outer = 0usize;

    loop {
        outer += 1;

        // High-order pass: sweep every step at the previous outer
        // temperatures, storing the per-step closures.
        let mut i_carry = state.intensity.clone();
        let mut b_carry = state.boundary.clone();
        h_sum.fill(0.0);
        store.clear()?;
        for (k, _n_global) in steps.clone().enumerate() {
            let tables =
                MaterialTables::build(&problem.material, &problem.groups, &prev_snaps[k].temperature)?;
            let swept = sweep_step(
                mesh,
                &problem.quad,
                &problem.groups,
                &tables,
                dt,
                &i_carry,
                &problem.bc,
                reflective.then_some(&b_carry),
                Some(&mut h_sum),
            )?;
            store.push(eddington_tensor(
                &swept.intensity,
                &swept.boundary,
                &problem.quad,
                mesh,
                &problem.bc,
            ))?;
            i_carry = swept.intensity;
            b_carry = swept.boundary;
        }
        let mut res_num = 0.0f64;
        let mut res_den = 0.0f64;
        for (i, &h) in h_sum.iter().enumerate() {
            let r = i_carry.values[i] - state.intensity.values[i] - h;
            res_num += r * r;
            res_den += i_carry.values[i] * i_carry.values[i];
        }
        let multi_step_residual = (res_num / res_den.max(f64::MIN_POSITIVE)).sqrt();

        // Low-order pass with the stored closures; each step's nested
        // cycle warm-starts from the previous outer iterate of that step.
        let mut carry_mg = state.moments.clone();
        let mut carry_t = state.temperature.clone();
        let mut new_snaps: Vec<StepSolution> = Vec::with_capacity(nb);
        let mut inner_row = Vec::with_capacity(nb);
        let mut conservation_max = 0.0f64;
        for (k, n_global) in steps.clone().enumerate() {
            let closure = store.get(k)?;
            let prev_grey = carry_mg.group_sum();
            let sol = solve_step_nested(
                problem,
                &closure,
                &carry_mg,
                &prev_grey,
                &carry_t,
                &prev_snaps[k].temperature,
                &prev_snaps[k].e_groups,
                &prev_snaps[k].e_total,
                dt,
                criteria,
                n_global,
            )?;
            inner_row.push(sol.iters);
            conservation_max = conservation_max.max(sol.grey.conservation_residual);
            new_snaps.push(snapshot(&sol));
            carry_t = sol.grey.temperature;
            carry_mg = sol.mg.fields;
        }
        inner_hist.push(inner_row);

        // Convergence over the block: max over steps of the change norms
        // against max over steps of the iterate norms.
        let mut xi_e = Vec::with_capacity(nb);
        let mut xi_t = Vec::with_capacity(nb);
        let (mut ebar, mut tbar) = (0.0f64, 0.0f64);
        for k in 0..nb {
            xi_e.push(l2_diff(&new_snaps[k].e_total, &prev_snaps[k].e_total));
            xi_t.push(l2_diff(&new_snaps[k].temperature, &prev_snaps[k].temperature));
            ebar = ebar.max(l2(&new_snaps[k].e_total));
            tbar = tbar.max(l2(&new_snaps[k].temperature));
        }
        let xi_e_inf = xi_e.iter().cloned().fold(0.0f64, f64::max);
        let xi_t_inf = xi_t.iter().cloned().fold(0.0f64, f64::max);
        xi_e_inf_hist.push(xi_e_inf);
        xi_t_inf_hist.push(xi_t_inf);
        let (err_e, err_t) = match reference {
            Some(r) => {
                let (e, t) = reference_errors(&new_snaps, first_step, r);
                (Some(e), Some(t))
            }
            None => (None, None),
        };
        xi_history.push(XiEntry {
            j: outer,
            xi_e,
            xi_t,
            err_e,
            err_t,
        });

        let done = xi_e_inf <= criteria.epsilon * ebar && xi_t_inf <= criteria.epsilon * tbar;
        prev_snaps = new_snaps;
        if done {
            let log = BlockLog {
                block: b + 1,
                first_step,
                n_steps: nb,
                outer_iterations: outer,
                xi_history,
                inner_iterations: inner_hist,
                multi_step_residual,
                conservation_max,
            };
            let next = BlockState {
                intensity: i_carry,
                boundary: b_carry,
                moments: carry_mg,
                temperature: carry_t,
            };
            return Ok((next, prev_snaps, log));
        }
        if outer >= criteria.max_outer {
            return Err(Error::Solver(SolverError::OuterStagnation {
                block: b + 1,
                max_outer: criteria.max_outer,
                xi_e_history: xi_e_inf_hist,
                xi_t_history: xi_t_inf_hist,
            }));
        }
    }
}

fn check_criteria(criteria: &ConvergenceCriteria) -> Result<()> {
    if !(criteria.epsilon > 0.0)
        || !(criteria.epsilon_inner > 0.0)
        || criteria.max_outer == 0
        || criteria.max_inner == 0
    {
        return Err(Error::Solver(SolverError::Domain(
            "convergence criteria need positive tolerances and nonzero iteration caps".into(),
        )));
    }
    Ok(())
}

/// Runs every block in sequence from the problem's initial condition.
/// When `reference` is given, per-iteration relative errors against its
/// terminal fields are logged for every block (the reference must cover
/// the same grid and time steps).
pub fn run_problem(
    problem: &Problem,
    criteria: &ConvergenceCriteria,
    reference: Option<&RunRecord>,
) -> Result<RunRecord> {
    check_criteria(criteria)?;
    let mut record = RunRecord {
        nx: problem.mesh.nx,
        ny: problem.mesh.ny,
        n_groups: problem.groups.count(),
        dt: problem.blocks.dt,
        steps: Vec::with_capacity(problem.blocks.n_steps),
        blocks: Vec::with_capacity(problem.blocks.n_blocks()),
    };
    if let Some(r) = reference {
        if record.nx != r.nx
            || record.ny != r.ny
            || record.n_groups != r.n_groups
            || (record.dt - r.dt).abs() > 1e-12 * record.dt
            || r.steps.len() != problem.blocks.n_steps
        {
            return Err(Error::Io(IoError::GridMismatch(
                "reference run does not match this problem's mesh, groups, or time grid".into(),
            )));
        }
    }
    let mut store = ClosureStore::new(&problem.mesh, problem.groups.count(), problem.memory_budget_steps);
    let mut state = BlockState::initial(problem)?;
    for b in 0..problem.blocks.n_blocks() {
        let (next, snaps, log) = run_block(problem, b, &state, criteria, reference, &mut store)?;
        record.steps.extend(snaps);
        record.blocks.push(log);
        state = next;
    }
    Ok(record)
}

/// A direct per-step driver: the standard scheme that converges the full
/// hierarchy on each time step before moving to the next, written without
/// any of the block machinery. Used to verify that the block driver at
/// one step per block adds no arithmetic.
pub fn run_per_step_reference(
    problem: &Problem,
    criteria: &ConvergenceCriteria,
) -> Result<RunRecord> {
    check_criteria(criteria)?;
    let mesh = &problem.mesh;
    let n_groups = problem.groups.count();
    let dt = problem.blocks.dt;
    let reflective = SIDES
        .iter()
        .any(|s| problem.bc.side(*s) == BoundaryCondition::Reflective);
    let iso = EddingtonClosure::isotropic(mesh, &problem.quad, &problem.groups, n_groups, &problem.bc)?;

    let init = BlockState::initial(problem)?;
    let mut intensity = init.intensity;
    let mut boundary = init.boundary;
    let mut moments = init.moments;
    let mut temperature = init.temperature;

    let mut record = RunRecord {
        nx: mesh.nx,
        ny: mesh.ny,
        n_groups,
        dt,
        steps: Vec::with_capacity(problem.blocks.n_steps),
        blocks: Vec::with_capacity(problem.blocks.n_steps),
    };
    let mut h_sum = vec![0.0f64; intensity.values.len()];

    for n in 0..problem.blocks.n_steps {
        let mut inner_hist: Vec<Vec<usize>> = Vec::new();
        let mut xi_history: Vec<XiEntry> = Vec::new();
        let mut xi_e_inf_hist: Vec<f64> = Vec::new();
        let mut xi_t_inf_hist: Vec<f64> = Vec::new();

        let prev_grey = moments.group_sum();
        let sol0 = solve_step_nested(
            problem,
            &iso,
            &moments,
            &prev_grey,
            &temperature,
            &temperature,
            &moments.e,
            &prev_grey.e,
            dt,
            criteria,
            n,
        )?;
        inner_hist.push(vec![sol0.iters]);
        let mut prev_snap = snapshot(&sol0);

        let mut outer = 0usize;
        loop {
            outer += 1;
            let tables =
                MaterialTables::build(&problem.material, &problem.groups, &prev_snap.temperature)?;
            h_sum.fill(0.0);
            let swept = sweep_step(
                mesh,
                &problem.quad,
                &problem.groups,
                &tables,
                dt,
                &intensity,
                &problem.bc,
                reflective.then_some(&boundary),
                Some(&mut h_sum),
            )?;
            let closure =
                eddington_tensor(&swept.intensity, &swept.boundary, &problem.quad, mesh, &problem.bc);
            let mut res_num = 0.0f64;
            let mut res_den = 0.0f64;
            for (i, &h) in h_sum.iter().enumerate() {
                let r = swept.intensity.values[i] - intensity.values[i] - h;
                res_num += r * r;
                res_den += swept.intensity.values[i] * swept.intensity.values[i];
            }
            let multi_step_residual = (res_num / res_den.max(f64::MIN_POSITIVE)).sqrt();

            let prev_grey = moments.group_sum();
            let sol = solve_step_nested(
                problem,
                &closure,
                &moments,
                &prev_grey,
                &temperature,
                &prev_snap.temperature,
                &prev_snap.e_groups,
                &prev_snap.e_total,
                dt,
                criteria,
                n,
            )?;
            inner_hist.push(vec![sol.iters]);
            let new_snap = snapshot(&sol);
            let xi_e = l2_diff(&new_snap.e_total, &prev_snap.e_total);
            let xi_t = l2_diff(&new_snap.temperature, &prev_snap.temperature);
            xi_e_inf_hist.push(xi_e);
            xi_t_inf_hist.push(xi_t);
            xi_history.push(XiEntry {
                j: outer,
                xi_e: vec![xi_e],
                xi_t: vec![xi_t],
                err_e: None,
                err_t: None,
            });
            let done = xi_e <= criteria.epsilon * l2(&new_snap.e_total)
                && xi_t <= criteria.epsilon * l2(&new_snap.temperature);
            prev_snap = new_snap;
            if done {
                record.blocks.push(BlockLog {
                    block: n + 1,
                    first_step: n,
                    n_steps: 1,
                    outer_iterations: outer,
                    xi_history,
                    inner_iterations: inner_hist,
                    multi_step_residual,
                    conservation_max: sol.grey.conservation_residual,
                });
                intensity = swept.intensity;
                boundary = swept.boundary;
                moments = sol.mg.fields;
                temperature = sol.grey.temperature;
                break;
            }
            if outer >= criteria.max_outer {
                return Err(Error::Solver(SolverError::OuterStagnation {
                    block: n + 1,
                    max_outer: criteria.max_outer,
                    xi_e_history: xi_e_inf_hist,
                    xi_t_history: xi_t_inf_hist,
                }));
            }
        }
        record.steps.push(prev_snap);
    }
    Ok(record)
}
