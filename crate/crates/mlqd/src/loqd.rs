//! Low-order quasidiffusion (LOQD) systems.
//!
//! Two moment systems share one discretization skeleton here: the
//! multigroup system, closed by the Eddington data computed from the
//! transport sweep, and the effective grey system, whose coefficients are
//! assembled from the multigroup solution so that — at frozen coefficients
//! — the grey equations are the exact group sum of the multigroup ones.
//! The grey system carries the material energy balance, so the
//! temperature nonlinearity is solved here with a cell-local Newton
//! inside a global Newton on the grey energy density.
//!
//! Discretization: cell-centered energy densities and face-centered
//! normal fluxes on the rectangular mesh, backward Euler in time. Each
//! face flux is eliminated analytically from its momentum equation,
//! producing a 5-point banded system per group; the mixed-derivative
//! terms (the off-diagonal Eddington component) are lagged at the latest
//! available energy iterate and contribute to the right-hand side only.
//! Boundary faces carry an additional face energy unknown closed by the
//! transport boundary factor `F . n = c C E_b - F_in`; it is eliminated
//! against the half-cell momentum equation.

mod banded;

pub use banded::BandedMatrix;

use crate::error::{Error, Result, SolverError};
use crate::grid::SpatialMesh;
use crate::physics::{MaterialModel, MaterialTables, A_RAD, C_LIGHT};
use crate::transport::{BoundaryCondition, BoundarySet, EddingtonClosure, Side};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Relative residual bound enforced on every banded solve.
pub const LINEAR_SOLVE_TOL: f64 = 1e-12;

/// Relative residual bound for the grey Newton iteration.
pub const GREY_NEWTON_TOL: f64 = 1e-12;

/// Floor under boundary-elimination denominators; falling below it means
/// the boundary closure degenerated (zero factor and zero face tensor).
const DEN_FLOOR: f64 = 1e-290;

/// Cell energies, face normal fluxes, and boundary face energies for one
/// or more groups. Grey fields use `n_groups == 1`. Layouts follow the
/// mesh indexers: `e[g * n_cells + cell]`, `fx[g * n_x_faces + f]`,
/// `fy[g * n_y_faces + f]`, boundary energies `[g * ny + j]` (left/right)
/// and `[g * nx + i]` (bottom/top).
#[derive(Debug, Clone)]
pub struct MomentFields {
    pub n_groups: usize,
    pub e: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
    pub eb_left: Vec<f64>,
    pub eb_right: Vec<f64>,
    pub eb_bottom: Vec<f64>,
    pub eb_top: Vec<f64>,
}

impl MomentFields {
    pub fn zeros(n_groups: usize, mesh: &SpatialMesh) -> Self {
        MomentFields {
            n_groups,
            e: vec![0.0; n_groups * mesh.n_cells()],
            fx: vec![0.0; n_groups * mesh.n_x_faces()],
            fy: vec![0.0; n_groups * mesh.n_y_faces()],
            eb_left: vec![0.0; n_groups * mesh.ny],
            eb_right: vec![0.0; n_groups * mesh.ny],
            eb_bottom: vec![0.0; n_groups * mesh.nx],
            eb_top: vec![0.0; n_groups * mesh.nx],
        }
    }

    /// Equilibrium seed: `E_g = 4 pi B_g / c` from the given tables, zero
    /// fluxes, boundary energies copied from the adjacent cells.
    pub fn equilibrium(mesh: &SpatialMesh, tables: &MaterialTables) -> Self {
        let n = mesh.n_cells();
        let mut out = Self::zeros(tables.n_groups, mesh);
        for g in 0..tables.n_groups {
            for cell in 0..n {
                out.e[g * n + cell] = FOUR_PI * tables.planck(g, cell) / C_LIGHT;
            }
            for j in 0..mesh.ny {
                out.eb_left[g * mesh.ny + j] = out.e[g * n + mesh.cell(0, j)];
                out.eb_right[g * mesh.ny + j] = out.e[g * n + mesh.cell(mesh.nx - 1, j)];
            }
            for i in 0..mesh.nx {
                out.eb_bottom[g * mesh.nx + i] = out.e[g * n + mesh.cell(i, 0)];
                out.eb_top[g * mesh.nx + i] = out.e[g * n + mesh.cell(i, mesh.ny - 1)];
            }
        }
        out
    }

    /// Sums all groups into a single-group (grey) field set.
    pub fn group_sum(&self) -> MomentFields {
        let sum = |v: &[f64], len: usize| -> Vec<f64> {
            let mut out = vec![0.0; len];
            for g in 0..self.n_groups {
                for (o, x) in out.iter_mut().zip(&v[g * len..(g + 1) * len]) {
                    *o += x;
                }
            }
            out
        };
        MomentFields {
            n_groups: 1,
            e: sum(&self.e, self.e.len() / self.n_groups),
            fx: sum(&self.fx, self.fx.len() / self.n_groups),
            fy: sum(&self.fy, self.fy.len() / self.n_groups),
            eb_left: sum(&self.eb_left, self.eb_left.len() / self.n_groups),
            eb_right: sum(&self.eb_right, self.eb_right.len() / self.n_groups),
            eb_bottom: sum(&self.eb_bottom, self.eb_bottom.len() / self.n_groups),
            eb_top: sum(&self.eb_top, self.eb_top.len() / self.n_groups),
        }
    }
}

/// Multigroup low-order step output: the new fields plus the lagged mixed
/// derivative terms that entered each face equation (kept so the grey
/// system can reuse their exact group sums).
#[derive(Debug, Clone)]
pub struct MgStepResult {
    pub fields: MomentFields,
    /// `c d_y(f_xy E_lag)` per x-face, `[g * n_x_faces + f]`.
    pub y_x: Vec<f64>,
    /// `c d_x(f_xy E_lag)` per y-face, `[g * n_y_faces + f]`.
    pub y_y: Vec<f64>,
}

/// Flux coefficients after face elimination: `F = k0 + kl E_L + kr E_R`
/// where `E_L`/`E_R` are the adjacent cell energies in ascending axis
/// order (a missing neighbor has coefficient zero). Boundary faces also
/// record the face-energy elimination `E_b = e0 + e1 E_cell`.
#[derive(Debug, Clone, Copy, Default)]
struct FaceCoef {
    k0: f64,
    kl: f64,
    kr: f64,
    e0: f64,
    e1: f64,
}

/// Per-side boundary data for the face elimination.
struct SideFactor<'a> {
    c: &'a [f64],
    fin: &'a [f64],
    f_b: &'a [f64],
}

enum SideMode<'a> {
    /// Zero net flux through the face (reflective proxy).
    ZeroFlux,
    /// Boundary-factor closure `F . n = c C E_b - F_in`.
    Factor(SideFactor<'a>),
}

fn side_mode<'a>(
    bc: BoundaryCondition,
    c: &'a [f64],
    fin: &'a [f64],
    f_b: &'a [f64],
) -> SideMode<'a> {
    match bc {
        BoundaryCondition::Reflective => SideMode::ZeroFlux,
        _ => SideMode::Factor(SideFactor { c, fin, f_b }),
    }
}

/// Mean of `f_xy * e` over the cells touching vertex (iv, jv).
fn corner_mean(mesh: &SpatialMesh, fxy: &[f64], e: &[f64], iv: usize, jv: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for djj in 0..2usize {
        if jv + djj < 1 {
            continue;
        }
        let jj = jv + djj - 1;
        if jj >= mesh.ny {
            continue;
        }
        for dii in 0..2usize {
            if iv + dii < 1 {
                continue;
            }
            let ii = iv + dii - 1;
            if ii >= mesh.nx {
                continue;
            }
            let cell = mesh.cell(ii, jj);
            sum += fxy[cell] * e[cell];
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Lagged mixed term `c d_y(f_xy E)` on interior x-faces (zero on domain
/// boundary faces, where the half-cell momentum equation drops it).
fn mixed_lag_x(mesh: &SpatialMesh, fxy: &[f64], e_lag: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_x_faces()];
    for j in 0..mesh.ny {
        for i in 1..mesh.nx {
            let top = corner_mean(mesh, fxy, e_lag, i, j + 1);
            let bottom = corner_mean(mesh, fxy, e_lag, i, j);
            out[mesh.x_face(i, j)] = C_LIGHT * (top - bottom) / mesh.dy;
        }
    }
    out
}

/// Lagged mixed term `c d_x(f_xy E)` on interior y-faces.
fn mixed_lag_y(mesh: &SpatialMesh, fxy: &[f64], e_lag: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_y_faces()];
    for j in 1..mesh.ny {
        for i in 0..mesh.nx {
            let right = corner_mean(mesh, fxy, e_lag, i + 1, j);
            let left = corner_mean(mesh, fxy, e_lag, i, j);
            out[mesh.y_face(i, j)] = C_LIGHT * (right - left) / mesh.dx;
        }
    }
    out
}

/// Face opacities along x: arithmetic mean of the adjacent cells on
/// interior faces, the adjacent cell value on boundary faces. The grey
/// assembly measures its flux-weighted means against exactly these
/// values, so both systems must draw them from this one routine.
fn face_kappa_x(mesh: &SpatialMesh, kappa_cell: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_x_faces()];
    for j in 0..mesh.ny {
        for i in 0..=mesh.nx {
            out[mesh.x_face(i, j)] = if i == 0 {
                kappa_cell[mesh.cell(0, j)]
            } else if i == mesh.nx {
                kappa_cell[mesh.cell(mesh.nx - 1, j)]
            } else {
                0.5 * (kappa_cell[mesh.cell(i - 1, j)] + kappa_cell[mesh.cell(i, j)])
            };
        }
    }
    out
}

fn face_kappa_y(mesh: &SpatialMesh, kappa_cell: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_y_faces()];
    for j in 0..=mesh.ny {
        for i in 0..mesh.nx {
            out[mesh.y_face(i, j)] = if j == 0 {
                kappa_cell[mesh.cell(i, 0)]
            } else if j == mesh.ny {
                kappa_cell[mesh.cell(i, mesh.ny - 1)]
            } else {
                0.5 * (kappa_cell[mesh.cell(i, j - 1)] + kappa_cell[mesh.cell(i, j)])
            };
        }
    }
    out
}

/// Builds the eliminated flux coefficients for all faces along one axis.
///
/// `n_along` counts cells along the axis, `n_across` across it; `face_idx`
/// and `cell_idx` map (along, across) to the flat face/cell indices, so
/// the same code serves both axes. `eta_face`, when present, is the grey
/// compensation coefficient (interior faces use `eta (E_L + E_R) / 2`,
/// boundary faces `eta E_b`). The lagged mixed term `y_face` is zero on
/// boundary faces by construction.
#[allow(clippy::too_many_arguments)]
fn build_axis_face_coefs(
    n_along: usize,
    n_across: usize,
    delta: f64,
    dt: f64,
    face_idx: impl Fn(usize, usize) -> usize,
    cell_idx: impl Fn(usize, usize) -> usize,
    f_cell: &[f64],
    kappa_face: &[f64],
    fp_face: &[f64],
    y_face: &[f64],
    eta_face: Option<&[f64]>,
    lo: &SideMode,
    hi: &SideMode,
) -> Result<Vec<FaceCoef>> {
    let mut out = vec![FaceCoef::default(); (n_along + 1) * n_across];
    let cdt_inv = 1.0 / (C_LIGHT * dt);
    let h = 0.5 * delta;
    for across in 0..n_across {
        for along in 0..=n_along {
            let f = face_idx(along, across);
            out[f] = if along == 0 || along == n_along {
                let is_lo = along == 0;
                let sigma = if is_lo { -1.0 } else { 1.0 };
                let cell = cell_idx(if is_lo { 0 } else { n_along - 1 }, across);
                match if is_lo { lo } else { hi } {
                    SideMode::ZeroFlux => FaceCoef::default(),
                    SideMode::Factor(sf) => {
                        let beta = kappa_face[f] + cdt_inv;
                        let c_fac = sf.c[across];
                        let fin = sf.fin[across];
                        let eta_b = eta_face.map_or(0.0, |a| a[f]);
                        let den =
                            beta * C_LIGHT * c_fac + sigma * eta_b + C_LIGHT / h * sf.f_b[across];
                        if !(den.abs() > DEN_FLOOR) {
                            return Err(Error::Solver(SolverError::DegenerateCell {
                                cell,
                                reason: format!(
                                    "singular boundary flux elimination (C = {c_fac}, f_b = {})",
                                    sf.f_b[across]
                                ),
                            }));
                        }
                        let e0 = (beta * fin + sigma * fp_face[f] * cdt_inv) / den;
                        let e1 = C_LIGHT / h * f_cell[cell] / den;
                        if is_lo {
                            FaceCoef {
                                k0: fin - C_LIGHT * c_fac * e0,
                                kl: 0.0,
                                kr: -C_LIGHT * c_fac * e1,
                                e0,
                                e1,
                            }
                        } else {
                            FaceCoef {
                                k0: C_LIGHT * c_fac * e0 - fin,
                                kl: C_LIGHT * c_fac * e1,
                                kr: 0.0,
                                e0,
                                e1,
                            }
                        }
                    }
                }
            } else {
                let cl = cell_idx(along - 1, across);
                let cr = cell_idx(along, across);
                let beta = kappa_face[f] + cdt_inv;
                let eta = eta_face.map_or(0.0, |a| a[f]);
                FaceCoef {
                    k0: (fp_face[f] * cdt_inv - y_face[f]) / beta,
                    kl: (C_LIGHT * f_cell[cl] / delta - 0.5 * eta) / beta,
                    kr: -(C_LIGHT * f_cell[cr] / delta + 0.5 * eta) / beta,
                    e0: 0.0,
                    e1: 0.0,
                }
            };
        }
    }
    Ok(out)
}

/// Assembles the 5-point cell balance system
/// `E/dt + div F + c kappa E = source` with the eliminated face fluxes.
fn assemble_cell_system(
    mesh: &SpatialMesh,
    dt: f64,
    kappa_cell: &[f64],
    source: &[f64],
    fcx: &[FaceCoef],
    fcy: &[FaceCoef],
) -> (BandedMatrix, Vec<f64>) {
    let n = mesh.n_cells();
    let hb = mesh.nx.min(n.saturating_sub(1));
    let mut a = BandedMatrix::zeros(n, hb);
    let mut rhs = vec![0.0; n];
    let (dx, dy) = (mesh.dx, mesh.dy);
    for j in 0..mesh.ny {
        for i in 0..mesh.nx {
            let cell = mesh.cell(i, j);
            let mut diag = 1.0 / dt + C_LIGHT * kappa_cell[cell];
            let mut b = source[cell];
            let rf = fcx[mesh.x_face(i + 1, j)];
            diag += rf.kl / dx;
            if i + 1 < mesh.nx {
                a.add(cell, cell + 1, rf.kr / dx);
            }
            b -= rf.k0 / dx;
            let lf = fcx[mesh.x_face(i, j)];
            diag -= lf.kr / dx;
            if i > 0 {
                a.add(cell, cell - 1, -lf.kl / dx);
            }
            b += lf.k0 / dx;
            let tf = fcy[mesh.y_face(i, j + 1)];
            diag += tf.kl / dy;
            if j + 1 < mesh.ny {
                a.add(cell, cell + mesh.nx, tf.kr / dy);
            }
            b -= tf.k0 / dy;
            let bf = fcy[mesh.y_face(i, j)];
            diag -= bf.kr / dy;
            if j > 0 {
                a.add(cell, cell - mesh.nx, -bf.kl / dy);
            }
            b += bf.k0 / dy;
            a.add(cell, cell, diag);
            rhs[cell] = b;
        }
    }
    (a, rhs)
}

/// Back-substitutes the solved cell energies into the face flux
/// expressions along one axis.
fn axis_fluxes(
    fc: &[FaceCoef],
    e: &[f64],
    n_along: usize,
    n_across: usize,
    face_idx: impl Fn(usize, usize) -> usize,
    cell_idx: impl Fn(usize, usize) -> usize,
    out: &mut [f64],
) {
    for across in 0..n_across {
        for along in 0..=n_along {
            let f = face_idx(along, across);
            let el = if along > 0 {
                e[cell_idx(along - 1, across)]
            } else {
                0.0
            };
            let er = if along < n_along {
                e[cell_idx(along, across)]
            } else {
                0.0
            };
            out[f] = fc[f].k0 + fc[f].kl * el + fc[f].kr * er;
        }
    }
}

/// Recovers the boundary face energies of one side from the elimination
/// coefficients (zero-flux sides report the adjacent cell energy).
#[allow(clippy::too_many_arguments)]
fn boundary_energy(
    fc: &[FaceCoef],
    e: &[f64],
    mode: &SideMode,
    is_lo: bool,
    n_along: usize,
    n_across: usize,
    face_idx: impl Fn(usize, usize) -> usize,
    cell_idx: impl Fn(usize, usize) -> usize,
    out: &mut [f64],
) {
    for across in 0..n_across {
        let cell = cell_idx(if is_lo { 0 } else { n_along - 1 }, across);
        out[across] = match mode {
            SideMode::ZeroFlux => e[cell],
            SideMode::Factor(_) => {
                let c = fc[face_idx(if is_lo { 0 } else { n_along }, across)];
                c.e0 + c.e1 * e[cell]
            }
        };
    }
}

/// One backward-Euler step of the multigroup low-order system at frozen
/// material state. Opacities and emission come from `tables` (evaluated
/// at the current temperature iterate), the closure from transport, and
/// the mixed-derivative terms are lagged at `e_lag` (layout
/// `[g * n_cells + cell]`). Group systems are independent and each is
/// solved to the banded-solver residual bound.
pub fn mg_loqd_step(
    mesh: &SpatialMesh,
    closure: &EddingtonClosure,
    tables: &MaterialTables,
    bc: &BoundarySet,
    prev: &MomentFields,
    e_lag: &[f64],
    dt: f64,
) -> Result<MgStepResult> {
    let n = mesh.n_cells();
    let n_groups = tables.n_groups;
    let (nxf, nyf) = (mesh.n_x_faces(), mesh.n_y_faces());
    if closure.n_groups != n_groups || closure.n_cells != n {
        return Err(Error::Solver(SolverError::Domain(
            "closure does not match mesh/group counts".into(),
        )));
    }
    if prev.n_groups != n_groups
        || prev.e.len() != n_groups * n
        || prev.fx.len() != n_groups * nxf
        || prev.fy.len() != n_groups * nyf
    {
        return Err(Error::Solver(SolverError::Domain(
            "previous fields do not match mesh/group counts".into(),
        )));
    }
    if e_lag.len() != n_groups * n {
        return Err(Error::Solver(SolverError::Domain(
            "lagged energy does not match mesh/group counts".into(),
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Solver(SolverError::Domain(format!(
            "low-order step needs dt > 0, got {dt}"
        ))));
    }

    let mut fields = MomentFields::zeros(n_groups, mesh);
    let mut y_x_all = vec![0.0; n_groups * nxf];
    let mut y_y_all = vec![0.0; n_groups * nyf];
    let (nx, ny) = (mesh.nx, mesh.ny);

    for g in 0..n_groups {
        let kappa_g = &tables.kappa[g * n..(g + 1) * n];
        let planck_g = &tables.planck[g * n..(g + 1) * n];
        let fxx_g = &closure.fxx[g * n..(g + 1) * n];
        let fyy_g = &closure.fyy[g * n..(g + 1) * n];
        let fxy_g = &closure.fxy[g * n..(g + 1) * n];
        let e_lag_g = &e_lag[g * n..(g + 1) * n];

        let y_x = mixed_lag_x(mesh, fxy_g, e_lag_g);
        let y_y = mixed_lag_y(mesh, fxy_g, e_lag_g);
        let kfx = face_kappa_x(mesh, kappa_g);
        let kfy = face_kappa_y(mesh, kappa_g);

        let fb_left: Vec<f64> = (0..ny).map(|j| fxx_g[mesh.cell(0, j)]).collect();
        let fb_right: Vec<f64> = (0..ny).map(|j| fxx_g[mesh.cell(nx - 1, j)]).collect();
        let fb_bottom: Vec<f64> = (0..nx).map(|i| fyy_g[mesh.cell(i, 0)]).collect();
        let fb_top: Vec<f64> = (0..nx).map(|i| fyy_g[mesh.cell(i, ny - 1)]).collect();
        let lo_x = side_mode(
            bc.side(Side::Left),
            &closure.c_left[g * ny..(g + 1) * ny],
            &closure.fin_left[g * ny..(g + 1) * ny],
            &fb_left,
        );
        let hi_x = side_mode(
            bc.side(Side::Right),
            &closure.c_right[g * ny..(g + 1) * ny],
            &closure.fin_right[g * ny..(g + 1) * ny],
            &fb_right,
        );
        let lo_y = side_mode(
            bc.side(Side::Bottom),
            &closure.c_bottom[g * nx..(g + 1) * nx],
            &closure.fin_bottom[g * nx..(g + 1) * nx],
            &fb_bottom,
        );
        let hi_y = side_mode(
            bc.side(Side::Top),
            &closure.c_top[g * nx..(g + 1) * nx],
            &closure.fin_top[g * nx..(g + 1) * nx],
            &fb_top,
        );

        let fcx = build_axis_face_coefs(
            nx,
            ny,
            mesh.dx,
            dt,
            |i, j| mesh.x_face(i, j),
            |i, j| mesh.cell(i, j),
            fxx_g,
            &kfx,
            &prev.fx[g * nxf..(g + 1) * nxf],
            &y_x,
            None,
            &lo_x,
            &hi_x,
        )?;
        let fcy = build_axis_face_coefs(
            ny,
            nx,
            mesh.dy,
            dt,
            |j, i| mesh.y_face(i, j),
            |j, i| mesh.cell(i, j),
            fyy_g,
            &kfy,
            &prev.fy[g * nyf..(g + 1) * nyf],
            &y_y,
            None,
            &lo_y,
            &hi_y,
        )?;

        let source: Vec<f64> = (0..n)
            .map(|c| prev.e[g * n + c] / dt + FOUR_PI * kappa_g[c] * planck_g[c])
            .collect();
        let (a, rhs) = assemble_cell_system(mesh, dt, kappa_g, &source, &fcx, &fcy);
        let e_g = a.solve(&rhs, LINEAR_SOLVE_TOL).map_err(|err| match err {
            Error::Solver(SolverError::LinearSolve { step, reason, .. }) => {
                Error::Solver(SolverError::LinearSolve {
                    group: g,
                    step,
                    reason,
                })
            }
            other => other,
        })?;

        axis_fluxes(
            &fcx,
            &e_g,
            nx,
            ny,
            |i, j| mesh.x_face(i, j),
            |i, j| mesh.cell(i, j),
            &mut fields.fx[g * nxf..(g + 1) * nxf],
        );
        axis_fluxes(
            &fcy,
            &e_g,
            ny,
            nx,
            |j, i| mesh.y_face(i, j),
            |j, i| mesh.cell(i, j),
            &mut fields.fy[g * nyf..(g + 1) * nyf],
        );
        boundary_energy(
            &fcx,
            &e_g,
            &lo_x,
            true,
            nx,
            ny,
            |i, j| mesh.x_face(i, j),
            |i, j| mesh.cell(i, j),
            &mut fields.eb_left[g * ny..(g + 1) * ny],
        );
        boundary_energy(
            &fcx,
            &e_g,
            &hi_x,
            false,
            nx,
            ny,
            |i, j| mesh.x_face(i, j),
            |i, j| mesh.cell(i, j),
            &mut fields.eb_right[g * ny..(g + 1) * ny],
        );
        boundary_energy(
            &fcy,
            &e_g,
            &lo_y,
            true,
            ny,
            nx,
            |j, i| mesh.y_face(i, j),
            |j, i| mesh.cell(i, j),
            &mut fields.eb_bottom[g * nx..(g + 1) * nx],
        );
        boundary_energy(
            &fcy,
            &e_g,
            &hi_y,
            false,
            ny,
            nx,
            |j, i| mesh.y_face(i, j),
            |j, i| mesh.cell(i, j),
            &mut fields.eb_top[g * nx..(g + 1) * nx],
        );
        fields.e[g * n..(g + 1) * n].copy_from_slice(&e_g);
        y_x_all[g * nxf..(g + 1) * nxf].copy_from_slice(&y_x);
        y_y_all[g * nyf..(g + 1) * nyf].copy_from_slice(&y_y);
    }
    Ok(MgStepResult {
        fields,
        y_x: y_x_all,
        y_y: y_y_all,
    })
}

/// Coefficients of the effective grey system, assembled from a multigroup
/// solution so that — with these values frozen — the grey equations sum
/// the multigroup ones exactly. Cell quantities are energy- or
/// emission-weighted means; face opacities are weighted by the group flux
/// magnitudes, and the compensation coefficients `eta` restore exactness
/// of the summed face equations for the residual spectral spread.
#[derive(Debug, Clone)]
pub struct GreyCoefficients {
    /// Absorption opacity, energy-weighted, per cell.
    pub kappa_e: Vec<f64>,
    /// Emission opacity, Planck-weighted, per cell.
    pub kappa_b: Vec<f64>,
    /// Energy-weighted Eddington tensor components per cell.
    pub f_xx: Vec<f64>,
    pub f_yy: Vec<f64>,
    pub f_xy: Vec<f64>,
    /// Flux-weighted face opacities.
    pub kappa_fx: Vec<f64>,
    pub kappa_fy: Vec<f64>,
    /// Compensation coefficients per face: `sum_g (kappa_gf - kappa_f)
    /// F_g / E_f` with the face energy the grey equation itself uses.
    pub eta_x: Vec<f64>,
    pub eta_y: Vec<f64>,
    /// Cell-centered compensation, kept for inspection (the solver uses
    /// the face values).
    pub eta_cell_x: Vec<f64>,
    pub eta_cell_y: Vec<f64>,
    /// Group sums of the lagged mixed terms per face.
    pub y_x: Vec<f64>,
    pub y_y: Vec<f64>,
    /// Boundary factors, face energies as weights.
    pub c_left: Vec<f64>,
    pub c_right: Vec<f64>,
    pub c_bottom: Vec<f64>,
    pub c_top: Vec<f64>,
    /// Boundary-face tensor components, face-energy weighted.
    pub fb_left: Vec<f64>,
    pub fb_right: Vec<f64>,
    pub fb_bottom: Vec<f64>,
    pub fb_top: Vec<f64>,
    /// Summed incident fluxes.
    pub fin_left: Vec<f64>,
    pub fin_right: Vec<f64>,
    pub fin_bottom: Vec<f64>,
    pub fin_top: Vec<f64>,
}

fn weighted(num: f64, den: f64, fallback: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        fallback
    }
}

/// Assembles the grey coefficients from a multigroup step result.
pub fn grey_coefficients(
    mesh: &SpatialMesh,
    closure: &EddingtonClosure,
    tables: &MaterialTables,
    mg: &MgStepResult,
) -> GreyCoefficients {
    let n = mesh.n_cells();
    let n_groups = tables.n_groups;
    let (nx, ny) = (mesh.nx, mesh.ny);
    let (nxf, nyf) = (mesh.n_x_faces(), mesh.n_y_faces());
    let e = &mg.fields.e;

    let mut kappa_e = vec![0.0; n];
    let mut kappa_b = vec![0.0; n];
    let mut f_xx = vec![0.0; n];
    let mut f_yy = vec![0.0; n];
    let mut f_xy = vec![0.0; n];
    for cell in 0..n {
        let (mut se, mut ske, mut sb, mut skb) = (0.0, 0.0, 0.0, 0.0);
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for g in 0..n_groups {
            let k = g * n + cell;
            let (eg, kg, bg) = (e[k], tables.kappa[k], tables.planck[k]);
            se += eg;
            ske += kg * eg;
            sb += bg;
            skb += kg * bg;
            sxx += closure.fxx[k] * eg;
            syy += closure.fyy[k] * eg;
            sxy += closure.fxy[k] * eg;
        }
        let kappa_mean = (0..n_groups).map(|g| tables.kappa[g * n + cell]).sum::<f64>()
            / n_groups as f64;
        kappa_b[cell] = weighted(skb, sb, kappa_mean);
        kappa_e[cell] = weighted(ske, se, kappa_b[cell]);
        f_xx[cell] = weighted(sxx, se, 1.0 / 3.0);
        f_yy[cell] = weighted(syy, se, 1.0 / 3.0);
        f_xy[cell] = weighted(sxy, se, 0.0);
    }

    // Face opacities and compensation along x. The per-group face kappa
    // must match what the multigroup assembly used.
    let mut kappa_fx = vec![0.0; nxf];
    let mut eta_x = vec![0.0; nxf];
    let mut face_kx_g: Vec<Vec<f64>> = Vec::with_capacity(n_groups);
    let mut face_ky_g: Vec<Vec<f64>> = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        face_kx_g.push(face_kappa_x(mesh, &tables.kappa[g * n..(g + 1) * n]));
        face_ky_g.push(face_kappa_y(mesh, &tables.kappa[g * n..(g + 1) * n]));
    }
    for j in 0..ny {
        for i in 0..=nx {
            let f = mesh.x_face(i, j);
            let (mut sfa, mut ska, mut sfe, mut skfe) = (0.0, 0.0, 0.0, 0.0);
            for g in 0..n_groups {
                let kf = face_kx_g[g][f];
                let fg = mg.fields.fx[g * nxf + f];
                sfa += fg.abs();
                ska += kf * fg.abs();
                let ef = if i == 0 {
                    mg.fields.eb_left[g * ny + j]
                } else if i == nx {
                    mg.fields.eb_right[g * ny + j]
                } else {
                    0.5 * (e[g * n + mesh.cell(i - 1, j)] + e[g * n + mesh.cell(i, j)])
                };
                sfe += ef;
                skfe += kf * ef;
            }
            let cell_fb = if i == 0 {
                kappa_b[mesh.cell(0, j)]
            } else if i == nx {
                kappa_b[mesh.cell(nx - 1, j)]
            } else {
                0.5 * (kappa_b[mesh.cell(i - 1, j)] + kappa_b[mesh.cell(i, j)])
            };
            kappa_fx[f] = weighted(ska, sfa, weighted(skfe, sfe, cell_fb));
            let mut num = 0.0;
            for g in 0..n_groups {
                num += (face_kx_g[g][f] - kappa_fx[f]) * mg.fields.fx[g * nxf + f];
            }
            eta_x[f] = if sfe > 0.0 { num / sfe } else { 0.0 };
        }
    }

    let mut kappa_fy = vec![0.0; nyf];
    let mut eta_y = vec![0.0; nyf];
    for j in 0..=ny {
        for i in 0..nx {
            let f = mesh.y_face(i, j);
            let (mut sfa, mut ska, mut sfe, mut skfe) = (0.0, 0.0, 0.0, 0.0);
            for g in 0..n_groups {
                let kf = face_ky_g[g][f];
                let fg = mg.fields.fy[g * nyf + f];
                sfa += fg.abs();
                ska += kf * fg.abs();
                let ef = if j == 0 {
                    mg.fields.eb_bottom[g * nx + i]
                } else if j == ny {
                    mg.fields.eb_top[g * nx + i]
                } else {
                    0.5 * (e[g * n + mesh.cell(i, j - 1)] + e[g * n + mesh.cell(i, j)])
                };
                sfe += ef;
                skfe += kf * ef;
            }
            let cell_fb = if j == 0 {
                kappa_b[mesh.cell(i, 0)]
            } else if j == ny {
                kappa_b[mesh.cell(i, ny - 1)]
            } else {
                0.5 * (kappa_b[mesh.cell(i, j - 1)] + kappa_b[mesh.cell(i, j)])
            };
            kappa_fy[f] = weighted(ska, sfa, weighted(skfe, sfe, cell_fb));
            let mut num = 0.0;
            for g in 0..n_groups {
                num += (face_ky_g[g][f] - kappa_fy[f]) * mg.fields.fy[g * nyf + f];
            }
            eta_y[f] = if sfe > 0.0 { num / sfe } else { 0.0 };
        }
    }

    // Cell-centered compensation diagnostics from face-averaged fluxes.
    let mut eta_cell_x = vec![0.0; n];
    let mut eta_cell_y = vec![0.0; n];
    for j in 0..ny {
        for i in 0..nx {
            let cell = mesh.cell(i, j);
            let se: f64 = (0..n_groups).map(|g| e[g * n + cell]).sum();
            let (mut sfa_x, mut ska_x, mut sfa_y, mut ska_y) = (0.0, 0.0, 0.0, 0.0);
            let mut fbar_x = vec![0.0; n_groups];
            let mut fbar_y = vec![0.0; n_groups];
            for g in 0..n_groups {
                let kg = tables.kappa[g * n + cell];
                fbar_x[g] = 0.5
                    * (mg.fields.fx[g * nxf + mesh.x_face(i, j)]
                        + mg.fields.fx[g * nxf + mesh.x_face(i + 1, j)]);
                fbar_y[g] = 0.5
                    * (mg.fields.fy[g * nyf + mesh.y_face(i, j)]
                        + mg.fields.fy[g * nyf + mesh.y_face(i, j + 1)]);
                sfa_x += fbar_x[g].abs();
                ska_x += kg * fbar_x[g].abs();
                sfa_y += fbar_y[g].abs();
                ska_y += kg * fbar_y[g].abs();
            }
            let kx = weighted(ska_x, sfa_x, kappa_e[cell]);
            let ky = weighted(ska_y, sfa_y, kappa_e[cell]);
            if se > 0.0 {
                for g in 0..n_groups {
                    let kg = tables.kappa[g * n + cell];
                    eta_cell_x[cell] += (kg - kx) * fbar_x[g] / se;
                    eta_cell_y[cell] += (kg - ky) * fbar_y[g] / se;
                }
            }
        }
    }

    // Boundary factor / tensor / incident-flux means per side.
    let side_means = |c_arr: &[f64],
                      fin_arr: &[f64],
                      eb: &[f64],
                      f_diag: &[f64],
                      cells: &[usize],
                      n_faces: usize|
     -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut c_out = vec![0.0; n_faces];
        let mut fb_out = vec![0.0; n_faces];
        let mut fin_out = vec![0.0; n_faces];
        for f in 0..n_faces {
            let (mut seb, mut sceb, mut sfeb, mut sfin) = (0.0, 0.0, 0.0, 0.0);
            for g in 0..n_groups {
                let ebg = eb[g * n_faces + f];
                seb += ebg;
                sceb += c_arr[g * n_faces + f] * ebg;
                sfeb += f_diag[g * n + cells[f]] * ebg;
                sfin += fin_arr[g * n_faces + f];
            }
            c_out[f] = weighted(sceb, seb, 0.25);
            fb_out[f] = weighted(sfeb, seb, 1.0 / 3.0);
            fin_out[f] = sfin;
        }
        (c_out, fb_out, fin_out)
    };
    let left_cells: Vec<usize> = (0..ny).map(|j| mesh.cell(0, j)).collect();
    let right_cells: Vec<usize> = (0..ny).map(|j| mesh.cell(nx - 1, j)).collect();
    let bottom_cells: Vec<usize> = (0..nx).map(|i| mesh.cell(i, 0)).collect();
    let top_cells: Vec<usize> = (0..nx).map(|i| mesh.cell(i, ny - 1)).collect();
    let (c_left, fb_left, fin_left) = side_means(
        &closure.c_left,
        &closure.fin_left,
        &mg.fields.eb_left,
        &closure.fxx,
        &left_cells,
        ny,
    );
    let (c_right, fb_right, fin_right) = side_means(
        &closure.c_right,
        &closure.fin_right,
        &mg.fields.eb_right,
        &closure.fxx,
        &right_cells,
        ny,
    );
    let (c_bottom, fb_bottom, fin_bottom) = side_means(
        &closure.c_bottom,
        &closure.fin_bottom,
        &mg.fields.eb_bottom,
        &closure.fyy,
        &bottom_cells,
        nx,
    );
    let (c_top, fb_top, fin_top) = side_means(
        &closure.c_top,
        &closure.fin_top,
        &mg.fields.eb_top,
        &closure.fyy,
        &top_cells,
        nx,
    );

    // Group sums of the lagged mixed terms.
    let mut y_x = vec![0.0; nxf];
    let mut y_y = vec![0.0; nyf];
    for g in 0..n_groups {
        for f in 0..nxf {
            y_x[f] += mg.y_x[g * nxf + f];
        }
        for f in 0..nyf {
            y_y[f] += mg.y_y[g * nyf + f];
        }
    }

    GreyCoefficients {
        kappa_e,
        kappa_b,
        f_xx,
        f_yy,
        f_xy,
        kappa_fx,
        kappa_fy,
        eta_x,
        eta_y,
        eta_cell_x,
        eta_cell_y,
        y_x,
        y_y,
        c_left,
        c_right,
        c_bottom,
        c_top,
        fb_left,
        fb_right,
        fb_bottom,
        fb_top,
        fin_left,
        fin_right,
        fin_bottom,
        fin_top,
    }
}

/// Output of the coupled grey + material-energy solve.
#[derive(Debug, Clone)]
pub struct GreyResult {
    /// Grey fields (`n_groups == 1`).
    pub fields: MomentFields,
    /// New cell temperatures.
    pub temperature: Vec<f64>,
    /// Global Newton iterations used.
    pub newton_iters: usize,
    /// Relative global energy balance residual of the accepted step.
    pub conservation_residual: f64,
    /// Net outward boundary energy flow rate (per unit time).
    pub boundary_net_flux: f64,
}

/// Solves the cell-local material energy balance for `T` given the grey
/// energy density: `c_v T / dt + gamma T^4 = c_v T_prev / dt + c kappa_E
/// E`. The right-hand side is positive for admissible states, making the
/// root unique; Newton from the linear-bound start is monotone. Returns
/// `(T, phi')` with `phi' = c_v / dt + 4 gamma T^3`.
fn cell_temperature(
    cell: usize,
    c_v: f64,
    dt: f64,
    gamma: f64,
    t_prev: f64,
    c_kappa_e: f64,
    e_val: f64,
) -> Result<(f64, f64)> {
    let a = c_v / dt;
    let rhs = a * t_prev + c_kappa_e * e_val;
    if !(rhs > 0.0) || !rhs.is_finite() {
        return Err(Error::Solver(SolverError::NewtonNonConvergence {
            cell,
            iters: 0,
            t: t_prev,
            e: e_val,
            residual: rhs,
        }));
    }
    let mut t = rhs / a;
    let mut iters = 0usize;
    loop {
        let t3 = t * t * t;
        let phi = a * t + gamma * t3 * t - rhs;
        let step = phi / (a + 4.0 * gamma * t3);
        let mut t_new = t - step;
        if !(t_new > 0.0) {
            t_new = 0.5 * t;
        }
        iters += 1;
        let done = (t - t_new).abs() <= 1e-15 * t_new.max(f64::MIN_POSITIVE) || iters >= 200;
        t = t_new;
        if done {
            break;
        }
    }
    let t3 = t * t * t;
    let phi = a * t + gamma * t3 * t - rhs;
    if phi.abs() > 1e-10 * rhs {
        return Err(Error::Solver(SolverError::NewtonNonConvergence {
            cell,
            iters,
            t,
            e: e_val,
            residual: phi,
        }));
    }
    Ok((t, a + 4.0 * gamma * t3))
}

/// Solves the coupled grey low-order + material energy balance step by a
/// global Newton iteration on the grey energy density, with the cell
/// temperature eliminated through `cell_temperature`. `prev` holds the
/// grey fields of the previous time level (group sums of the multigroup
/// previous fields), `e_init` the warm start (group sum of the current
/// multigroup solution).
#[allow(clippy::too_many_arguments)]
pub fn grey_meb_solve(
    mesh: &SpatialMesh,
    coefs: &GreyCoefficients,
    bc: &BoundarySet,
    prev: &MomentFields,
    t_prev: &[f64],
    material: &MaterialModel,
    dt: f64,
    e_init: &[f64],
) -> Result<GreyResult> {
    let n = mesh.n_cells();
    let (nx, ny) = (mesh.nx, mesh.ny);
    if prev.n_groups != 1 || t_prev.len() != n || e_init.len() != n {
        return Err(Error::Solver(SolverError::Domain(
            "grey solve needs single-group previous fields sized to the mesh".into(),
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Solver(SolverError::Domain(format!(
            "grey solve needs dt > 0, got {dt}"
        ))));
    }

    let lo_x = side_mode(bc.side(Side::Left), &coefs.c_left, &coefs.fin_left, &coefs.fb_left);
    let hi_x = side_mode(
        bc.side(Side::Right),
        &coefs.c_right,
        &coefs.fin_right,
        &coefs.fb_right,
    );
    let lo_y = side_mode(
        bc.side(Side::Bottom),
        &coefs.c_bottom,
        &coefs.fin_bottom,
        &coefs.fb_bottom,
    );
    let hi_y = side_mode(bc.side(Side::Top), &coefs.c_top, &coefs.fin_top, &coefs.fb_top);
    let fcx = build_axis_face_coefs(
        nx,
        ny,
        mesh.dx,
        dt,
        |i, j| mesh.x_face(i, j),
        |i, j| mesh.cell(i, j),
        &coefs.f_xx,
        &coefs.kappa_fx,
        &prev.fx,
        &coefs.y_x,
        Some(&coefs.eta_x),
        &lo_x,
        &hi_x,
    )?;
    let fcy = build_axis_face_coefs(
        ny,
        nx,
        mesh.dy,
        dt,
        |j, i| mesh.y_face(i, j),
        |j, i| mesh.cell(i, j),
        &coefs.f_yy,
        &coefs.kappa_fy,
        &prev.fy,
        &coefs.y_y,
        Some(&coefs.eta_y),
        &lo_y,
        &hi_y,
    )?;

    let source0: Vec<f64> = prev.e.iter().map(|v| v / dt).collect();
    let (a0, rhs0) = assemble_cell_system(mesh, dt, &coefs.kappa_e, &source0, &fcx, &fcy);
    let gamma: Vec<f64> = coefs.kappa_b.iter().map(|k| C_LIGHT * k * A_RAD).collect();

    let mut e = e_init.to_vec();
    let mut t = vec![0.0; n];
    let mut dtde = vec![0.0; n];
    let mut iters = 0usize;
    let max_newton = 80usize;
    loop {
        for cell in 0..n {
            let (tc, phi_p) = cell_temperature(
                cell,
                material.c_v,
                dt,
                gamma[cell],
                t_prev[cell],
                C_LIGHT * coefs.kappa_e[cell],
                e[cell],
            )?;
            t[cell] = tc;
            dtde[cell] = C_LIGHT * coefs.kappa_e[cell] / phi_p;
        }
        let ax = a0.mul_vec(&e);
        let mut resid = 0.0f64;
        let mut scale = 0.0f64;
        let mut r = vec![0.0; n];
        for cell in 0..n {
            let emission = gamma[cell] * t[cell].powi(4);
            r[cell] = ax[cell] - rhs0[cell] - emission;
            resid = resid.max(r[cell].abs());
            scale = scale.max(rhs0[cell].abs()).max(emission).max(ax[cell].abs());
        }
        if resid <= GREY_NEWTON_TOL * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        if iters >= max_newton {
            return Err(Error::Solver(SolverError::GreyNonConvergence {
                iters,
                tol: GREY_NEWTON_TOL,
                residual: resid / scale.max(f64::MIN_POSITIVE),
            }));
        }
        iters += 1;
        let mut jac = a0.clone();
        for cell in 0..n {
            jac.add(cell, cell, -4.0 * gamma[cell] * t[cell].powi(3) * dtde[cell]);
        }
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = jac.solve(&neg_r, LINEAR_SOLVE_TOL)?;
        // Damp the update if it would make some cell's material balance
        // right-hand side non-positive (no admissible temperature).
        let admissible = |lambda: f64, e: &[f64], delta: &[f64]| {
            (0..n).all(|c| {
                material.c_v * t_prev[c] / dt
                    + C_LIGHT * coefs.kappa_e[c] * (e[c] + lambda * delta[c])
                    > 0.0
            })
        };
        let mut lambda = 1.0;
        let mut ok = false;
        for _ in 0..60 {
            if admissible(lambda, &e, &delta) {
                ok = true;
                break;
            }
            lambda *= 0.5;
        }
        if !ok {
            return Err(Error::Solver(SolverError::GreyNonConvergence {
                iters,
                tol: GREY_NEWTON_TOL,
                residual: resid / scale.max(f64::MIN_POSITIVE),
            }));
        }
        for cell in 0..n {
            e[cell] += lambda * delta[cell];
        }
    }

    let mut fields = MomentFields::zeros(1, mesh);
    fields.e.copy_from_slice(&e);
    axis_fluxes(
        &fcx,
        &e,
        nx,
        ny,
        |i, j| mesh.x_face(i, j),
        |i, j| mesh.cell(i, j),
        &mut fields.fx,
    );
    axis_fluxes(
        &fcy,
        &e,
        ny,
        nx,
        |j, i| mesh.y_face(i, j),
        |j, i| mesh.cell(i, j),
        &mut fields.fy,
    );
    boundary_energy(
        &fcx,
        &e,
        &lo_x,
        true,
        nx,
        ny,
        |i, j| mesh.x_face(i, j),
        |i, j| mesh.cell(i, j),
        &mut fields.eb_left,
    );
    boundary_energy(
        &fcx,
        &e,
        &hi_x,
        false,
        nx,
        ny,
        |i, j| mesh.x_face(i, j),
        |i, j| mesh.cell(i, j),
        &mut fields.eb_right,
    );
    boundary_energy(
        &fcy,
        &e,
        &lo_y,
        true,
        ny,
        nx,
        |j, i| mesh.y_face(i, j),
        |j, i| mesh.cell(i, j),
        &mut fields.eb_bottom,
    );
    boundary_energy(
        &fcy,
        &e,
        &hi_y,
        false,
        ny,
        nx,
        |j, i| mesh.y_face(i, j),
        |j, i| mesh.cell(i, j),
        &mut fields.eb_top,
    );

    // Global balance of the accepted step: radiation + material energy
    // change against the net boundary outflow.
    let vol = mesh.cell_volume();
    let (mut dsum, mut dabs, mut content) = (0.0, 0.0, 0.0);
    for cell in 0..n {
        let de = e[cell] - prev.e[cell];
        let deps = material.c_v * (t[cell] - t_prev[cell]);
        dsum += vol * (de + deps);
        dabs += vol * (de.abs() + deps.abs());
        content += vol * (e[cell].abs() + material.c_v * t[cell].abs());
    }
    let (mut bnd, mut babs) = (0.0, 0.0);
    for j in 0..ny {
        let fl = -fields.fx[mesh.x_face(0, j)] * mesh.dy;
        let fr = fields.fx[mesh.x_face(nx, j)] * mesh.dy;
        bnd += fl + fr;
        babs += fl.abs() + fr.abs();
    }
    for i in 0..nx {
        let fb = -fields.fy[mesh.y_face(i, 0)] * mesh.dx;
        let ft = fields.fy[mesh.y_face(i, ny)] * mesh.dx;
        bnd += fb + ft;
        babs += fb.abs() + ft.abs();
    }
    let num = dsum + dt * bnd;
    let den = dabs + dt * babs + content + f64::MIN_POSITIVE;
    Ok(GreyResult {
        fields,
        temperature: t,
        newton_iters: iters,
        conservation_residual: num.abs() / den,
        boundary_net_flux: bnd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_quadrature, FrequencyGroups, QuadratureLayout};
    use crate::physics::OpacityLaw;
    use crate::transport::{eddington_tensor, sweep_step, AngularIntensity};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    /// Dense Gaussian elimination with partial pivoting (oracle solver).
    fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = a.to_vec();
        let mut x = b.to_vec();
        for k in 0..n {
            let piv = (k..n)
                .max_by(|&i, &j| m[i][k].abs().total_cmp(&m[j][k].abs()))
                .unwrap();
            m.swap(k, piv);
            x.swap(k, piv);
            assert!(m[k][k] != 0.0, "singular oracle system");
            for i in (k + 1)..n {
                let l = m[i][k] / m[k][k];
                for j in k..n {
                    let v = m[k][j];
                    m[i][j] -= l * v;
                }
                x[i] -= l * x[k];
            }
        }
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let xj = x[j];
                x[i] -= m[i][j] * xj;
            }
            x[i] /= m[i][i];
        }
        x
    }

    fn rel_close(a: f64, b: f64, tol: f64, what: &str) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!(
            (a - b).abs() <= tol * scale,
            "{what}: {a} vs {b} (rel {})",
            (a - b).abs() / scale
        );
    }

    #[test]
    fn equilibrium_is_stationary_under_mg_step() {
        let mesh = SpatialMesh::new(3, 2, 2.25, 1.5).unwrap();
        let groups = FrequencyGroups::log_spaced(4, 1e-2, 1e2).unwrap();
        let material =
            MaterialModel::new(0.1, OpacityLaw::FleckCummings { coefficient: 27.0 }).unwrap();
        let t_eq = 1.0;
        let t_field = vec![t_eq; mesh.n_cells()];
        let tables = MaterialTables::build(&material, &groups, &t_field).unwrap();
        let quad = build_quadrature(QuadratureLayout::Product {
            n_polar: 2,
            n_azimuthal: 2,
        })
        .unwrap();
        let bc = BoundarySet::uniform(BoundaryCondition::Blackbody { t: t_eq });
        let dt = 0.02;
        let i_prev = AngularIntensity::isotropic_planck(&tables, quad.len());
        let swept = sweep_step(&mesh, &quad, &groups, &tables, dt, &i_prev, &bc, None, None)
            .unwrap();
        let closure = eddington_tensor(&swept.intensity, &swept.boundary, &quad, &mesh, &bc);

        let prev = MomentFields::equilibrium(&mesh, &tables);
        let out = mg_loqd_step(&mesh, &closure, &tables, &bc, &prev, &prev.e, dt).unwrap();

        for (idx, (&e_new, &e_old)) in out.fields.e.iter().zip(&prev.e).enumerate() {
            rel_close(e_new, e_old, 1e-12, &format!("cell energy {idx}"));
        }
        let scale = C_LIGHT * prev.e.iter().cloned().fold(0.0f64, f64::max);
        for &f in out.fields.fx.iter().chain(&out.fields.fy) {
            assert!(f.abs() <= 1e-12 * scale, "residual flux {f} vs scale {scale}");
        }
        // Boundary face energies match the adjacent equilibrium energies.
        let n = mesh.n_cells();
        for g in 0..tables.n_groups {
            for j in 0..mesh.ny {
                rel_close(
                    out.fields.eb_left[g * mesh.ny + j],
                    prev.e[g * n + mesh.cell(0, j)],
                    1e-11,
                    "left boundary energy",
                );
            }
        }
    }

    #[test]
    fn mg_step_matches_dense_elimination_oracle() {
        let mesh = SpatialMesh::new(4, 3, 2.0, 1.2).unwrap();
        let (nx, ny) = (mesh.nx, mesh.ny);
        let n = mesh.n_cells();
        let (nxf, nyf) = (mesh.n_x_faces(), mesh.n_y_faces());
        let n_groups = 2;
        let dt = 0.04;
        let mut rng = StdRng::seed_from_u64(2024);

        let mut tables = MaterialTables {
            n_groups,
            n_cells: n,
            kappa: Vec::new(),
            planck: Vec::new(),
        };
        for _ in 0..n_groups * n {
            tables.kappa.push(rng.gen_range(0.5..6.0));
            tables.planck.push(rng.gen_range(0.1..1.0));
        }

        let mut fxx = Vec::new();
        let mut fyy = Vec::new();
        let mut fxy = Vec::new();
        for _ in 0..n_groups * n {
            fxx.push(rng.gen_range(0.25..0.45));
            fyy.push(rng.gen_range(0.25..0.45));
            fxy.push(rng.gen_range(-0.05..0.05));
        }
        let fzz: Vec<f64> = fxx.iter().zip(&fyy).map(|(a, b)| 1.0 - a - b).collect();
        let rand_vec = |rng: &mut StdRng, len: usize, lo: f64, hi: f64| -> Vec<f64> {
            (0..len).map(|_| rng.gen_range(lo..hi)).collect()
        };
        let closure = EddingtonClosure {
            n_groups,
            n_cells: n,
            fxx,
            fyy,
            fzz,
            fxy,
            c_left: rand_vec(&mut rng, n_groups * ny, 0.2, 0.35),
            c_right: rand_vec(&mut rng, n_groups * ny, 0.2, 0.35),
            c_bottom: rand_vec(&mut rng, n_groups * nx, 0.2, 0.35),
            c_top: rand_vec(&mut rng, n_groups * nx, 0.2, 0.35),
            fin_left: rand_vec(&mut rng, n_groups * ny, 0.1, 0.6),
            fin_right: vec![0.0; n_groups * ny],
            fin_bottom: vec![0.0; n_groups * nx],
            fin_top: rand_vec(&mut rng, n_groups * nx, 0.05, 0.3),
            degenerate: 0,
        };
        let bc = BoundarySet {
            left: BoundaryCondition::Blackbody { t: 1.0 },
            right: BoundaryCondition::Vacuum,
            bottom: BoundaryCondition::Vacuum,
            top: BoundaryCondition::Blackbody { t: 0.5 },
        };
        let mut prev = MomentFields::zeros(n_groups, &mesh);
        for v in prev.e.iter_mut() {
            *v = rng.gen_range(0.5..1.5);
        }
        for v in prev.fx.iter_mut().chain(prev.fy.iter_mut()) {
            *v = rng.gen_range(-0.2..0.2);
        }
        let e_lag: Vec<f64> = (0..n_groups * n).map(|_| rng.gen_range(0.3..1.2)).collect();

        let mg = mg_loqd_step(&mesh, &closure, &tables, &bc, &prev, &e_lag, dt).unwrap();

        // Independent oracle: per group, solve the full coupled system of
        // cell balances, face momentum equations (with half-cell forms at
        // the boundary), and boundary-factor conditions, without any
        // elimination.
        let cdti = 1.0 / (C_LIGHT * dt);
        let (hx, hy) = (0.5 * mesh.dx, 0.5 * mesh.dy);
        for g in 0..n_groups {
            let kappa = &tables.kappa[g * n..(g + 1) * n];
            let planck = &tables.planck[g * n..(g + 1) * n];
            let fxx = &closure.fxx[g * n..(g + 1) * n];
            let fyy = &closure.fyy[g * n..(g + 1) * n];
            let fxy = &closure.fxy[g * n..(g + 1) * n];
            let e_lag_g = &e_lag[g * n..(g + 1) * n];
            let prev_e = &prev.e[g * n..(g + 1) * n];
            let prev_fx = &prev.fx[g * nxf..(g + 1) * nxf];
            let prev_fy = &prev.fy[g * nyf..(g + 1) * nyf];

            // Lagged mixed terms, recomputed from the corner-average rule.
            let corner = |iv: isize, jv: isize| -> f64 {
                let mut s = 0.0;
                let mut k = 0usize;
                for jj in [jv - 1, jv] {
                    for ii in [iv - 1, iv] {
                        if ii >= 0 && jj >= 0 && (ii as usize) < nx && (jj as usize) < ny {
                            let c = mesh.cell(ii as usize, jj as usize);
                            s += fxy[c] * e_lag_g[c];
                            k += 1;
                        }
                    }
                }
                s / k as f64
            };
            let mut y_x = vec![0.0; nxf];
            for j in 0..ny {
                for i in 1..nx {
                    y_x[mesh.x_face(i, j)] = C_LIGHT
                        * (corner(i as isize, j as isize + 1) - corner(i as isize, j as isize))
                        / mesh.dy;
                }
            }
            let mut y_y = vec![0.0; nyf];
            for j in 1..ny {
                for i in 0..nx {
                    y_y[mesh.y_face(i, j)] = C_LIGHT
                        * (corner(i as isize + 1, j as isize) - corner(i as isize, j as isize))
                        / mesh.dx;
                }
            }
            for f in 0..nxf {
                rel_close(mg.y_x[g * nxf + f], y_x[f], 1e-13, "mixed lag x");
            }
            for f in 0..nyf {
                rel_close(mg.y_y[g * nyf + f], y_y[f], 1e-13, "mixed lag y");
            }

            // Unknown layout: cells, x-faces, y-faces, then boundary face
            // energies (left, right, bottom, top).
            let idx_e = |c: usize| c;
            let idx_fx = |f: usize| n + f;
            let idx_fy = |f: usize| n + nxf + f;
            let eb0 = n + nxf + nyf;
            let idx_eb_left = |j: usize| eb0 + j;
            let idx_eb_right = |j: usize| eb0 + ny + j;
            let idx_eb_bottom = |i: usize| eb0 + 2 * ny + i;
            let idx_eb_top = |i: usize| eb0 + 2 * ny + nx + i;
            let m_tot = eb0 + 2 * ny + 2 * nx;
            let mut a = vec![vec![0.0; m_tot]; m_tot];
            let mut b = vec![0.0; m_tot];

            for j in 0..ny {
                for i in 0..nx {
                    let c = mesh.cell(i, j);
                    let row = idx_e(c);
                    a[row][idx_e(c)] += 1.0 / dt + C_LIGHT * kappa[c];
                    a[row][idx_fx(mesh.x_face(i + 1, j))] += 1.0 / mesh.dx;
                    a[row][idx_fx(mesh.x_face(i, j))] -= 1.0 / mesh.dx;
                    a[row][idx_fy(mesh.y_face(i, j + 1))] += 1.0 / mesh.dy;
                    a[row][idx_fy(mesh.y_face(i, j))] -= 1.0 / mesh.dy;
                    b[row] = prev_e[c] / dt + 4.0 * PI * kappa[c] * planck[c];
                }
            }
            for j in 0..ny {
                for i in 0..=nx {
                    let f = mesh.x_face(i, j);
                    let row = idx_fx(f);
                    if i == 0 {
                        let c = mesh.cell(0, j);
                        a[row][idx_fx(f)] += cdti + kappa[c];
                        a[row][idx_e(c)] += C_LIGHT / hx * fxx[c];
                        a[row][idx_eb_left(j)] -= C_LIGHT / hx * fxx[c];
                        b[row] = prev_fx[f] * cdti;
                        let bcrow = idx_eb_left(j);
                        a[bcrow][idx_fx(f)] += 1.0;
                        a[bcrow][idx_eb_left(j)] += C_LIGHT * closure.c_left[g * ny + j];
                        b[bcrow] = closure.fin_left[g * ny + j];
                    } else if i == nx {
                        let c = mesh.cell(nx - 1, j);
                        a[row][idx_fx(f)] += cdti + kappa[c];
                        a[row][idx_eb_right(j)] += C_LIGHT / hx * fxx[c];
                        a[row][idx_e(c)] -= C_LIGHT / hx * fxx[c];
                        b[row] = prev_fx[f] * cdti;
                        let bcrow = idx_eb_right(j);
                        a[bcrow][idx_fx(f)] += 1.0;
                        a[bcrow][idx_eb_right(j)] -= C_LIGHT * closure.c_right[g * ny + j];
                        b[bcrow] = -closure.fin_right[g * ny + j];
                    } else {
                        let cl = mesh.cell(i - 1, j);
                        let cr = mesh.cell(i, j);
                        a[row][idx_fx(f)] += cdti + 0.5 * (kappa[cl] + kappa[cr]);
                        a[row][idx_e(cr)] += C_LIGHT / mesh.dx * fxx[cr];
                        a[row][idx_e(cl)] -= C_LIGHT / mesh.dx * fxx[cl];
                        b[row] = prev_fx[f] * cdti - y_x[f];
                    }
                }
            }
            for j in 0..=ny {
                for i in 0..nx {
                    let f = mesh.y_face(i, j);
                    let row = idx_fy(f);
                    if j == 0 {
                        let c = mesh.cell(i, 0);
                        a[row][idx_fy(f)] += cdti + kappa[c];
                        a[row][idx_e(c)] += C_LIGHT / hy * fyy[c];
                        a[row][idx_eb_bottom(i)] -= C_LIGHT / hy * fyy[c];
                        b[row] = prev_fy[f] * cdti;
                        let bcrow = idx_eb_bottom(i);
                        a[bcrow][idx_fy(f)] += 1.0;
                        a[bcrow][idx_eb_bottom(i)] += C_LIGHT * closure.c_bottom[g * nx + i];
                        b[bcrow] = closure.fin_bottom[g * nx + i];
                    } else if j == ny {
                        let c = mesh.cell(i, ny - 1);
                        a[row][idx_fy(f)] += cdti + kappa[c];
                        a[row][idx_eb_top(i)] += C_LIGHT / hy * fyy[c];
                        a[row][idx_e(c)] -= C_LIGHT / hy * fyy[c];
                        b[row] = prev_fy[f] * cdti;
                        let bcrow = idx_eb_top(i);
                        a[bcrow][idx_fy(f)] += 1.0;
                        a[bcrow][idx_eb_top(i)] -= C_LIGHT * closure.c_top[g * nx + i];
                        b[bcrow] = -closure.fin_top[g * nx + i];
                    } else {
                        let cb = mesh.cell(i, j - 1);
                        let ct = mesh.cell(i, j);
                        a[row][idx_fy(f)] += cdti + 0.5 * (kappa[cb] + kappa[ct]);
                        a[row][idx_e(ct)] += C_LIGHT / mesh.dy * fyy[ct];
                        a[row][idx_e(cb)] -= C_LIGHT / mesh.dy * fyy[cb];
                        b[row] = prev_fy[f] * cdti - y_y[f];
                    }
                }
            }

            let x = dense_solve(&a, &b);
            for c in 0..n {
                rel_close(mg.fields.e[g * n + c], x[idx_e(c)], 1e-10, "oracle cell energy");
            }
            for f in 0..nxf {
                rel_close(mg.fields.fx[g * nxf + f], x[idx_fx(f)], 1e-10, "oracle x flux");
            }
            for f in 0..nyf {
                rel_close(mg.fields.fy[g * nyf + f], x[idx_fy(f)], 1e-10, "oracle y flux");
            }
            for j in 0..ny {
                rel_close(
                    mg.fields.eb_left[g * ny + j],
                    x[idx_eb_left(j)],
                    1e-10,
                    "oracle left face energy",
                );
                rel_close(
                    mg.fields.eb_right[g * ny + j],
                    x[idx_eb_right(j)],
                    1e-10,
                    "oracle right face energy",
                );
            }
            for i in 0..nx {
                rel_close(
                    mg.fields.eb_bottom[g * nx + i],
                    x[idx_eb_bottom(i)],
                    1e-10,
                    "oracle bottom face energy",
                );
                rel_close(
                    mg.fields.eb_top[g * nx + i],
                    x[idx_eb_top(i)],
                    1e-10,
                    "oracle top face energy",
                );
            }
        }
    }

    #[test]
    fn single_cell_vacuum_hand_values() {
        let mesh = SpatialMesh::new(1, 1, 1.0, 1.0).unwrap();
        let (kappa, planck, ep, dt) = (2.0, 0.3, 0.1, 0.04);
        let tables = MaterialTables {
            n_groups: 1,
            n_cells: 1,
            kappa: vec![kappa],
            planck: vec![planck],
        };
        let closure = EddingtonClosure {
            n_groups: 1,
            n_cells: 1,
            fxx: vec![1.0 / 3.0],
            fyy: vec![1.0 / 3.0],
            fzz: vec![1.0 / 3.0],
            fxy: vec![0.0],
            c_left: vec![0.25],
            c_right: vec![0.25],
            c_bottom: vec![0.25],
            c_top: vec![0.25],
            fin_left: vec![0.0],
            fin_right: vec![0.0],
            fin_bottom: vec![0.0],
            fin_top: vec![0.0],
            degenerate: 0,
        };
        let bc = BoundarySet::uniform(BoundaryCondition::Vacuum);
        let mut prev = MomentFields::zeros(1, &mesh);
        prev.e[0] = ep;
        let out = mg_loqd_step(&mesh, &closure, &tables, &bc, &prev, &[ep], dt).unwrap();

        let c = C_LIGHT;
        let h = 0.5;
        let beta = kappa + 1.0 / (c * dt);
        let den = beta * c * 0.25 + (c / h) / 3.0;
        let e1 = (c / h) / 3.0 / den;
        let diag = 1.0 / dt + c * kappa + 4.0 * (c * 0.25 * e1);
        let e_hand = (ep / dt + 4.0 * PI * kappa * planck) / diag;
        rel_close(out.fields.e[0], e_hand, 1e-13, "hand cell energy");
        let eb_hand = e1 * e_hand;
        rel_close(out.fields.eb_left[0], eb_hand, 1e-13, "hand boundary energy");
        rel_close(out.fields.fx[0], -c * 0.25 * eb_hand, 1e-13, "hand left flux");
        rel_close(out.fields.fx[1], c * 0.25 * eb_hand, 1e-13, "hand right flux");
        rel_close(out.fields.fy[0], -c * 0.25 * eb_hand, 1e-13, "hand bottom flux");
        rel_close(out.fields.fy[1], c * 0.25 * eb_hand, 1e-13, "hand top flux");
    }

    #[test]
    fn grey_coefficient_weighted_means() {
        let mesh = SpatialMesh::new(1, 1, 1.0, 1.0).unwrap();
        let n_groups = 2;
        let tables = MaterialTables {
            n_groups,
            n_cells: 1,
            kappa: vec![2.0, 4.0],
            planck: vec![0.6, 0.2],
        };
        let closure = EddingtonClosure {
            n_groups,
            n_cells: 1,
            fxx: vec![0.4, 0.3],
            fyy: vec![0.3, 0.35],
            fzz: vec![0.3, 0.35],
            fxy: vec![0.01, -0.02],
            c_left: vec![0.3, 0.2],
            c_right: vec![0.25, 0.25],
            c_bottom: vec![0.25, 0.25],
            c_top: vec![0.25, 0.25],
            fin_left: vec![0.7, 0.1],
            fin_right: vec![0.0, 0.0],
            fin_bottom: vec![0.0, 0.0],
            fin_top: vec![0.0, 0.0],
            degenerate: 0,
        };
        let mut fields = MomentFields::zeros(n_groups, &mesh);
        fields.e = vec![1.0, 3.0];
        // x faces: [left, right] per group; make the left-face fluxes have
        // opposite signs so the compensation coefficient is exercised.
        fields.fx = vec![0.5, 0.25, -0.25, 0.125];
        fields.fy = vec![0.1, 0.2, 0.05, 0.1];
        fields.eb_left = vec![0.8, 0.4];
        fields.eb_right = vec![0.6, 0.3];
        fields.eb_bottom = vec![0.5, 0.25];
        fields.eb_top = vec![0.5, 0.25];
        let mg = MgStepResult {
            fields,
            y_x: vec![0.0; 2 * mesh.n_x_faces()],
            y_y: vec![0.0; 2 * mesh.n_y_faces()],
        };
        let coefs = grey_coefficients(&mesh, &closure, &tables, &mg);

        assert_eq!(coefs.kappa_e[0], 3.5); // (2*1 + 4*3) / 4
        assert_eq!(coefs.kappa_b[0], 2.5); // (2*0.6 + 4*0.2) / 0.8
        rel_close(coefs.f_xx[0], (0.4 + 0.3 * 3.0) / 4.0, 1e-14, "grey f_xx");
        rel_close(coefs.f_xy[0], (0.01 - 0.02 * 3.0) / 4.0, 1e-14, "grey f_xy");

        // Left x-face: group fluxes 0.5 and -0.25, face kappas 2 and 4.
        let kbar = (2.0 * 0.5 + 4.0 * 0.25) / 0.75;
        rel_close(coefs.kappa_fx[0], kbar, 1e-14, "flux-weighted face kappa");
        let eta = ((2.0 - kbar) * 0.5 + (4.0 - kbar) * (-0.25)) / 1.2;
        rel_close(coefs.eta_x[0], eta, 1e-14, "face compensation");

        // Boundary means weighted by the face energies.
        rel_close(
            coefs.c_left[0],
            (0.3 * 0.8 + 0.2 * 0.4) / 1.2,
            1e-14,
            "grey boundary factor",
        );
        rel_close(
            coefs.fb_left[0],
            (0.4 * 0.8 + 0.3 * 0.4) / 1.2,
            1e-14,
            "grey boundary tensor",
        );
        assert_eq!(coefs.fin_left[0], 0.7 + 0.1);

        // Equal opacities across groups: compensation vanishes.
        let tables_eq = MaterialTables {
            n_groups,
            n_cells: 1,
            kappa: vec![3.0, 3.0],
            planck: vec![0.6, 0.2],
        };
        let coefs_eq = grey_coefficients(&mesh, &closure, &tables_eq, &mg);
        rel_close(coefs_eq.kappa_e[0], 3.0, 1e-14, "equal-group kappa");
        assert!(coefs_eq.eta_x.iter().all(|v| v.abs() < 1e-14));
        assert!(coefs_eq.eta_y.iter().all(|v| v.abs() < 1e-14));

        // Single group: every mean degenerates to the group value.
        let tables_1 = MaterialTables {
            n_groups: 1,
            n_cells: 1,
            kappa: vec![2.0],
            planck: vec![0.6],
        };
        let closure_1 = EddingtonClosure {
            n_groups: 1,
            n_cells: 1,
            fxx: vec![0.4],
            fyy: vec![0.3],
            fzz: vec![0.3],
            fxy: vec![0.01],
            c_left: vec![0.3],
            c_right: vec![0.25],
            c_bottom: vec![0.25],
            c_top: vec![0.25],
            fin_left: vec![0.7],
            fin_right: vec![0.0],
            fin_bottom: vec![0.0],
            fin_top: vec![0.0],
            degenerate: 0,
        };
        let mut fields_1 = MomentFields::zeros(1, &mesh);
        fields_1.e = vec![1.7];
        fields_1.fx = vec![0.5, 0.25];
        fields_1.fy = vec![0.1, 0.2];
        fields_1.eb_left = vec![0.8];
        fields_1.eb_right = vec![0.6];
        fields_1.eb_bottom = vec![0.5];
        fields_1.eb_top = vec![0.5];
        let mg_1 = MgStepResult {
            fields: fields_1,
            y_x: vec![0.0; mesh.n_x_faces()],
            y_y: vec![0.0; mesh.n_y_faces()],
        };
        let coefs_1 = grey_coefficients(&mesh, &closure_1, &tables_1, &mg_1);
        rel_close(coefs_1.kappa_e[0], 2.0, 1e-14, "single-group kappa_e");
        rel_close(coefs_1.kappa_b[0], 2.0, 1e-14, "single-group kappa_b");
        rel_close(coefs_1.f_xx[0], 0.4, 1e-14, "single-group f_xx");
        assert!(coefs_1.eta_x.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn zero_d_relaxation_matches_scalar_oracle() {
        let mesh = SpatialMesh::new(1, 1, 1.0, 1.0).unwrap();
        let groups = FrequencyGroups::log_spaced(3, 0.1, 10.0).unwrap();
        let material =
            MaterialModel::new(0.02, OpacityLaw::FleckCummings { coefficient: 5.0 }).unwrap();
        let quad = build_quadrature(QuadratureLayout::Product {
            n_polar: 1,
            n_azimuthal: 1,
        })
        .unwrap();
        let bc = BoundarySet::uniform(BoundaryCondition::Reflective);
        let dt = 0.5;
        let t_prev = 0.35;

        // Radiation starts at equilibrium with a hotter state than the
        // material, then both relax together over one implicit step.
        let tables_r = MaterialTables::build(&material, &groups, &[0.8]).unwrap();
        let prev = MomentFields::equilibrium(&mesh, &tables_r);
        let prev_grey = prev.group_sum();

        let mut t_hat = t_prev;
        let mut e_lag = prev.e.clone();
        let mut last = None;
        for _ in 0..300 {
            let tables = MaterialTables::build(&material, &groups, &[t_hat]).unwrap();
            let closure =
                EddingtonClosure::isotropic(&mesh, &quad, &groups, groups.count(), &bc).unwrap();
            let mg = mg_loqd_step(&mesh, &closure, &tables, &bc, &prev, &e_lag, dt).unwrap();
            let coefs = grey_coefficients(&mesh, &closure, &tables, &mg);
            let e_init = mg.fields.group_sum().e;
            let grey = grey_meb_solve(
                &mesh,
                &coefs,
                &bc,
                &prev_grey,
                &[t_prev],
                &material,
                dt,
                &e_init,
            )
            .unwrap();
            let t_new = grey.temperature[0];
            e_lag = mg.fields.e.clone();
            let done = (t_new - t_hat).abs() <= 1e-15 * t_new;
            t_hat = t_new;
            last = Some((mg, grey));
            if done {
                break;
            }
        }
        let (mg, grey) = last.unwrap();

        // Oracle: scalar bisection on the fully implicit system with the
        // group energies eliminated analytically.
        let psi = |t: f64| -> f64 {
            let tab = MaterialTables::build(&material, &groups, &[t]).unwrap();
            let mut sum = 0.0;
            for g in 0..groups.count() {
                let k = tab.kappa(g, 0);
                let b = tab.planck(g, 0);
                let e_g = (prev.e[g] / dt + 4.0 * PI * k * b) / (1.0 / dt + C_LIGHT * k);
                sum += C_LIGHT * k * e_g - 4.0 * PI * k * b;
            }
            material.c_v * (t - t_prev) / dt - sum
        };
        let (mut lo, mut hi) = (1e-3, 3.0);
        assert!(psi(lo) < 0.0 && psi(hi) > 0.0, "oracle bracket failed");
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if psi(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let t_star = 0.5 * (lo + hi);
        rel_close(t_hat, t_star, 1e-10, "relaxed temperature");

        let tab = MaterialTables::build(&material, &groups, &[t_star]).unwrap();
        for g in 0..groups.count() {
            let k = tab.kappa(g, 0);
            let b = tab.planck(g, 0);
            let e_exact = (prev.e[g] / dt + 4.0 * PI * k * b) / (1.0 / dt + C_LIGHT * k);
            rel_close(mg.fields.e[g], e_exact, 1e-10, &format!("group {g} energy"));
        }
        let e_sum: f64 = mg.fields.e.iter().sum();
        rel_close(grey.fields.e[0], e_sum, 1e-12, "grey equals group sum");
        assert!(grey.conservation_residual <= 1e-12);
        // All sides reflective: no boundary flow.
        assert_eq!(grey.boundary_net_flux, 0.0);
    }

    #[test]
    fn grey_sum_matches_multigroup_at_inner_convergence() {
        let mesh = SpatialMesh::new(3, 3, 1.5, 1.5).unwrap();
        let n = mesh.n_cells();
        let groups = FrequencyGroups::log_spaced(4, 1e-2, 1e2).unwrap();
        let material =
            MaterialModel::new(8.1e-3, OpacityLaw::FleckCummings { coefficient: 27.0 }).unwrap();
        let quad = build_quadrature(QuadratureLayout::Product {
            n_polar: 2,
            n_azimuthal: 2,
        })
        .unwrap();
        let bc = BoundarySet {
            left: BoundaryCondition::Blackbody { t: 1.0 },
            right: BoundaryCondition::Vacuum,
            bottom: BoundaryCondition::Vacuum,
            top: BoundaryCondition::Vacuum,
        };
        let dt = 0.02;
        let t0 = 0.05;
        let t_prev = vec![t0; n];
        let tables0 = MaterialTables::build(&material, &groups, &t_prev).unwrap();
        let prev = MomentFields::equilibrium(&mesh, &tables0);
        let prev_grey = prev.group_sum();
        let closure =
            EddingtonClosure::isotropic(&mesh, &quad, &groups, groups.count(), &bc).unwrap();

        let mut t_hat = t_prev.clone();
        let mut e_lag = prev.e.clone();
        let mut last = None;
        let mut converged = false;
        for _ in 0..300 {
            let tables = MaterialTables::build(&material, &groups, &t_hat).unwrap();
            let mg = mg_loqd_step(&mesh, &closure, &tables, &bc, &prev, &e_lag, dt).unwrap();
            let coefs = grey_coefficients(&mesh, &closure, &tables, &mg);
            let e_init = mg.fields.group_sum().e;
            let grey = grey_meb_solve(
                &mesh,
                &coefs,
                &bc,
                &prev_grey,
                &t_prev,
                &material,
                dt,
                &e_init,
            )
            .unwrap();
            let mut dmax = 0.0f64;
            for cell in 0..n {
                dmax = dmax.max((grey.temperature[cell] - t_hat[cell]).abs() / t_hat[cell]);
            }
            t_hat = grey.temperature.clone();
            e_lag = mg.fields.e.clone();
            last = Some((mg, grey));
            if dmax <= 1e-15 {
                converged = true;
                break;
            }
        }
        assert!(converged, "inner cycle failed to converge");
        let (mg, grey) = last.unwrap();

        let scale = grey.fields.e.iter().cloned().fold(0.0f64, f64::max);
        for cell in 0..n {
            let sum: f64 = (0..groups.count()).map(|g| mg.fields.e[g * n + cell]).sum();
            assert!(
                (grey.fields.e[cell] - sum).abs() <= 1e-10 * scale,
                "cell {cell}: grey {} vs sum {}",
                grey.fields.e[cell],
                sum
            );
        }
        let fx_scale = grey
            .fields
            .fx
            .iter()
            .chain(&grey.fields.fy)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for f in 0..mesh.n_x_faces() {
            let sum: f64 = (0..groups.count())
                .map(|g| mg.fields.fx[g * mesh.n_x_faces() + f])
                .sum();
            assert!(
                (grey.fields.fx[f] - sum).abs() <= 1e-9 * fx_scale,
                "x-face {f}: grey {} vs sum {}",
                grey.fields.fx[f],
                sum
            );
        }
        assert!(grey.conservation_residual <= 1e-12, "conservation {}", grey.conservation_residual);
        for cell in 0..n {
            assert!(grey.temperature[cell] > 0.0 && grey.temperature[cell] <= 1.05);
            assert!(grey.fields.e[cell] >= 0.0);
        }
        for (g, chunk) in mg.fields.e.chunks(n).enumerate() {
            for (cell, &v) in chunk.iter().enumerate() {
                assert!(v >= 0.0, "negative group energy g={g} cell={cell}: {v}");
            }
        }
    }

    #[test]
    fn grey_equilibrium_is_stationary() {
        let mesh = SpatialMesh::new(3, 2, 2.25, 1.5).unwrap();
        let n = mesh.n_cells();
        let groups = FrequencyGroups::log_spaced(4, 1e-2, 1e2).unwrap();
        let material =
            MaterialModel::new(0.1, OpacityLaw::FleckCummings { coefficient: 27.0 }).unwrap();
        let t_eq = 1.0;
        let t_field = vec![t_eq; n];
        let tables = MaterialTables::build(&material, &groups, &t_field).unwrap();
        let quad = build_quadrature(QuadratureLayout::Product {
            n_polar: 2,
            n_azimuthal: 2,
        })
        .unwrap();
        let bc = BoundarySet::uniform(BoundaryCondition::Blackbody { t: t_eq });
        let dt = 0.02;
        let i_prev = AngularIntensity::isotropic_planck(&tables, quad.len());
        let swept = sweep_step(&mesh, &quad, &groups, &tables, dt, &i_prev, &bc, None, None)
            .unwrap();
        let closure = eddington_tensor(&swept.intensity, &swept.boundary, &quad, &mesh, &bc);
        let prev = MomentFields::equilibrium(&mesh, &tables);
        let prev_grey = prev.group_sum();

        let mg = mg_loqd_step(&mesh, &closure, &tables, &bc, &prev, &prev.e, dt).unwrap();
        let coefs = grey_coefficients(&mesh, &closure, &tables, &mg);
        let e_init = mg.fields.group_sum().e;
        let grey = grey_meb_solve(
            &mesh,
            &coefs,
            &bc,
            &prev_grey,
            &t_field,
            &material,
            dt,
            &e_init,
        )
        .unwrap();

        let e_eq = A_RAD * t_eq.powi(4);
        for cell in 0..n {
            rel_close(grey.fields.e[cell], e_eq, 1e-11, "grey equilibrium energy");
            rel_close(grey.temperature[cell], t_eq, 1e-12, "equilibrium temperature");
        }
        assert!(grey.conservation_residual <= 1e-13);
    }
}
