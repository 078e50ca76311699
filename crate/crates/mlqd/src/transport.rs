//! High-order solver: backward-Euler discrete-ordinates sweep of the
//! multigroup transport equation over one time step, with a
//! step-characteristics cell closure, plus extraction of the Eddington
//! tensors and boundary factors that close the low-order systems.

use crate::error::{Error, Result, SolverError};
use crate::grid::{AngularQuadrature, SpatialMesh};
use crate::physics::MaterialTables;

/// Floor below which an angular integral is treated as vanishing and the
/// closure falls back to its isotropic value.
const CLOSURE_FLOOR: f64 = 1e-290;

// ---------------------------------------------------------------------------
// Fields
// ---------------------------------------------------------------------------

/// Specific intensity cell averages at one time level, laid out
/// `[(g * n_dirs + m) * n_cells + cell]`.
#[derive(Debug, Clone)]
pub struct AngularIntensity {
    pub n_groups: usize,
    pub n_dirs: usize,
    pub n_cells: usize,
    pub values: Vec<f64>,
}

impl AngularIntensity {
    pub fn zeros(n_groups: usize, n_dirs: usize, n_cells: usize) -> Self {
        AngularIntensity {
            n_groups,
            n_dirs,
            n_cells,
            values: vec![0.0; n_groups * n_dirs * n_cells],
        }
    }

    /// Isotropic intensity equal to the tabulated Planck function in every
    /// cell: the initial condition of a problem starting in local
    /// equilibrium at the initial temperature field.
    pub fn isotropic_planck(tables: &MaterialTables, n_dirs: usize) -> Self {
        let mut out = Self::zeros(tables.n_groups, n_dirs, tables.n_cells);
        for g in 0..tables.n_groups {
            for m in 0..n_dirs {
                for cell in 0..tables.n_cells {
                    out.set(g, m, cell, tables.planck(g, cell));
                }
            }
        }
        out
    }

    #[inline]
    pub fn idx(&self, g: usize, m: usize, cell: usize) -> usize {
        (g * self.n_dirs + m) * self.n_cells + cell
    }

    #[inline]
    pub fn at(&self, g: usize, m: usize, cell: usize) -> f64 {
        self.values[self.idx(g, m, cell)]
    }

    #[inline]
    pub fn set(&mut self, g: usize, m: usize, cell: usize, v: f64) {
        let k = self.idx(g, m, cell);
        self.values[k] = v;
    }
}

/// Domain boundary sides in the order used by all per-side arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

pub const SIDES: [Side; 4] = [Side::Left, Side::Right, Side::Bottom, Side::Top];

/// Boundary condition on one side of the domain.
///
/// `Reflective` is a testing device (0-D and symmetry checks): the incoming
/// intensity is the mirrored outgoing intensity of a *previous* sweep, so
/// it becomes exact only at a fixed point of repeated sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryCondition {
    Vacuum,
    /// Incoming black-body radiation at temperature `t` (keV).
    Blackbody { t: f64 },
    Reflective,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySet {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
    pub bottom: BoundaryCondition,
    pub top: BoundaryCondition,
}

impl BoundarySet {
    pub fn uniform(bc: BoundaryCondition) -> Self {
        BoundarySet {
            left: bc,
            right: bc,
            bottom: bc,
            top: bc,
        }
    }

    pub fn side(&self, side: Side) -> BoundaryCondition {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }
}

/// Face-average intensities on the four domain boundaries for every
/// direction, both incoming (as applied) and outgoing (as swept).
/// Left/right arrays are indexed `[(g * n_dirs + m) * ny + j]`, bottom/top
/// `[(g * n_dirs + m) * nx + i]`.
#[derive(Debug, Clone)]
pub struct BoundaryIntensities {
    pub n_groups: usize,
    pub n_dirs: usize,
    pub nx: usize,
    pub ny: usize,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub bottom: Vec<f64>,
    pub top: Vec<f64>,
}

impl BoundaryIntensities {
    pub fn zeros(n_groups: usize, n_dirs: usize, nx: usize, ny: usize) -> Self {
        BoundaryIntensities {
            n_groups,
            n_dirs,
            nx,
            ny,
            left: vec![0.0; n_groups * n_dirs * ny],
            right: vec![0.0; n_groups * n_dirs * ny],
            bottom: vec![0.0; n_groups * n_dirs * nx],
            top: vec![0.0; n_groups * n_dirs * nx],
        }
    }

    #[inline]
    pub fn x_idx(&self, g: usize, m: usize, j: usize) -> usize {
        (g * self.n_dirs + m) * self.ny + j
    }

    #[inline]
    pub fn y_idx(&self, g: usize, m: usize, i: usize) -> usize {
        (g * self.n_dirs + m) * self.nx + i
    }

    pub fn side(&self, side: Side) -> &[f64] {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
            Side::Bottom => &self.bottom,
            Side::Top => &self.top,
        }
    }
}

/// Zeroth and first angular moments accumulated during a sweep. `e` is the
/// group energy density from cell-average intensities; `fx`/`fy` are net
/// fluxes built from the *face* intensities the sweep actually used, so
/// they satisfy the discrete moment balance together with `e`.
#[derive(Debug, Clone)]
pub struct TransportMoments {
    pub n_groups: usize,
    /// `[g * n_cells + cell]`, jerk cm^-3.
    pub e: Vec<f64>,
    /// `[g * n_x_faces + face]`, jerk cm^-2 ns^-1.
    pub fx: Vec<f64>,
    /// `[g * n_y_faces + face]`.
    pub fy: Vec<f64>,
}

/// Result of one transport time step.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub intensity: AngularIntensity,
    pub boundary: BoundaryIntensities,
    pub moments: TransportMoments,
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// The step-characteristics cell closure for one direction.
///
/// `a` and `b` are the optical crossing parameters `kt dx / |mu|` and
/// `kt dy / |eta|`; `s` is the saturation intensity `q / kt`; `psi_ux` /
/// `psi_uy` are the upwind x- and y-face averages. Returns the downwind
/// face averages and the cell average `(psi_dx, psi_dy, psi_a)`.
///
/// The face averages are the exact averages of the analytic in-cell
/// solution; the cell average is recovered from the discrete balance
/// `|mu| (psi_dx - psi_ux)/dx + |eta| (psi_dy - psi_uy)/dy + kt psi_a = q`,
/// which therefore holds to roundoff for every cell — the property the
/// quasidiffusion closure relies on.
#[inline]
fn cell_update(a: f64, b: f64, s: f64, psi_ux: f64, psi_uy: f64) -> (f64, f64, f64) {
    let f0 = |x: f64| -> f64 { -(-x).exp_m1() / x };
    let (psi_dx, psi_dy);
    if a <= b {
        let ea = (-a).exp();
        psi_dx = s + (psi_uy - s) * (1.0 - ea) / b + (psi_ux - s) * (1.0 - a / b) * ea;
        psi_dy = s + (psi_ux - s) * f0(a);
    } else {
        let eb = (-b).exp();
        psi_dy = s + (psi_ux - s) * (1.0 - eb) / a + (psi_uy - s) * (1.0 - b / a) * eb;
        psi_dx = s + (psi_uy - s) * f0(b);
    }
    let psi_dx = psi_dx.max(0.0);
    let psi_dy = psi_dy.max(0.0);
    let psi_a = (s - (psi_dx - psi_ux) / a - (psi_dy - psi_uy) / b).max(0.0);
    (psi_dx, psi_dy, psi_a)
}

/// Incoming black-body intensities per group for each side, or `None`
/// where the side is vacuum/reflective.
fn boundary_planck(
    bc: &BoundarySet,
    groups: &crate::grid::FrequencyGroups,
) -> Result<[Option<Vec<f64>>; 4]> {
    let mut out: [Option<Vec<f64>>; 4] = [None, None, None, None];
    for (k, side) in SIDES.iter().enumerate() {
        if let BoundaryCondition::Blackbody { t } = bc.side(*side) {
            let vals: Result<Vec<f64>> = (0..groups.count())
                .map(|g| crate::physics::planck_group(t, g, groups))
                .collect();
            out[k] = Some(vals?);
        }
    }
    Ok(out)
}

/// Half-range incoming flux `sum_{incoming} w |Omega . n| I_in` for one
/// side and group, using the quadrature's own half-range sum so that the
/// low-order boundary closure is discretely consistent with transport.
/// Zero for vacuum; `None` for reflective (whose low-order closure is a
/// zero-net-flux condition instead).
pub fn incoming_flux(
    quad: &AngularQuadrature,
    side: Side,
    bc: BoundaryCondition,
    bg: Option<&[f64]>,
    g: usize,
) -> Option<f64> {
    match bc {
        BoundaryCondition::Reflective => None,
        BoundaryCondition::Vacuum => Some(0.0),
        BoundaryCondition::Blackbody { .. } => {
            let b = bg.expect("blackbody side needs precomputed Planck values")[g];
            let mut sum = 0.0;
            for m in 0..quad.len() {
                let cosine = match side {
                    Side::Left => quad.mu[m],
                    Side::Right => -quad.mu[m],
                    Side::Bottom => quad.eta[m],
                    Side::Top => -quad.eta[m],
                };
                if cosine > 0.0 {
                    sum += quad.weight[m] * cosine * b;
                }
            }
            Some(sum)
        }
    }
}

/// One backward-Euler transport step: for every group and direction solves
/// `(1/(c dt) + Omega . grad + kappa) I = kappa B + I_prev / (c dt)` by a
/// single corner-origin sweep with the step-characteristics closure.
///
/// `prev_boundary` supplies the lagged outgoing intensities that feed
/// reflective sides; it is required iff any side is reflective.
/// `h_accum`, when given, is incremented by `tau * H` per unknown, where
/// `tau = c dt` and `H = kappa B - kappa I - Omega . grad I` is the
/// discrete right-hand side of the step written in multi-step form; the
/// buffer must have intensity layout.
#[allow(clippy::too_many_arguments)]
pub fn sweep_step(
    mesh: &SpatialMesh,
    quad: &AngularQuadrature,
    groups: &crate::grid::FrequencyGroups,
    tables: &MaterialTables,
    dt: f64,
    i_prev: &AngularIntensity,
    bc: &BoundarySet,
    prev_boundary: Option<&BoundaryIntensities>,
    mut h_accum: Option<&mut [f64]>,
) -> Result<SweepResult> {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let n_cells = mesh.n_cells();
    let n_dirs = quad.len();
    let n_groups = tables.n_groups;
    if i_prev.n_groups != n_groups || i_prev.n_dirs != n_dirs || i_prev.n_cells != n_cells {
        return Err(Error::Solver(SolverError::Domain(
            "previous intensity does not match mesh/quadrature/group counts".into(),
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Solver(SolverError::Domain(format!(
            "sweep needs dt > 0, got {dt}"
        ))));
    }
    let any_reflective = SIDES
        .iter()
        .any(|s| bc.side(*s) == BoundaryCondition::Reflective);
    if any_reflective && prev_boundary.is_none() {
        return Err(Error::Solver(SolverError::Domain(
            "reflective boundary needs lagged boundary intensities".into(),
        )));
    }
    if let Some(h) = h_accum.as_ref() {
        if h.len() != n_groups * n_dirs * n_cells {
            return Err(Error::Solver(SolverError::Domain(
                "h accumulator must have intensity layout".into(),
            )));
        }
    }

    let bg_sides = boundary_planck(bc, groups)?;
    let c_dt_inv = 1.0 / (crate::physics::C_LIGHT * dt);
    let tau = crate::physics::C_LIGHT * dt;

    let mut intensity = AngularIntensity::zeros(n_groups, n_dirs, n_cells);
    let mut boundary = BoundaryIntensities::zeros(n_groups, n_dirs, nx, ny);
    let mut moments = TransportMoments {
        n_groups,
        e: vec![0.0; n_groups * n_cells],
        fx: vec![0.0; n_groups * mesh.n_x_faces()],
        fy: vec![0.0; n_groups * mesh.n_y_faces()],
    };

    // Per-direction sweep state: upwind y-face averages for the current
    // row, reused across rows.
    let mut psi_row = vec![0.0f64; nx];

    for g in 0..n_groups {
        let e_g = &mut moments.e[g * n_cells..(g + 1) * n_cells];
        for m in 0..n_dirs {
            let (mu, eta, w) = (quad.mu[m], quad.eta[m], quad.weight[m]);
            let pos_x = mu > 0.0;
            let pos_y = eta > 0.0;
            let (abs_mu, abs_eta) = (mu.abs(), eta.abs());

            // Incoming value at one boundary slot for this (g, m).
            let incoming = |side: Side, face: usize| -> f64 {
                match bc.side(side) {
                    BoundaryCondition::Vacuum => 0.0,
                    BoundaryCondition::Blackbody { .. } => {
                        bg_sides[SIDES.iter().position(|s| *s == side).unwrap()]
                            .as_ref()
                            .unwrap()[g]
                    }
                    BoundaryCondition::Reflective => {
                        let prev = prev_boundary.unwrap();
                        match side {
                            Side::Left | Side::Right => {
                                prev.side(side)[prev.x_idx(g, quad.mirror_mu[m], face)]
                            }
                            Side::Bottom | Side::Top => {
                                prev.side(side)[prev.y_idx(g, quad.mirror_eta[m], face)]
                            }
                        }
                    }
                }
            };

            // Seed the row buffer from the upwind y-side and record those
            // boundary values.
            let y_side = if pos_y { Side::Bottom } else { Side::Top };
            for i in 0..nx {
                let v = incoming(y_side, i);
                psi_row[i] = v;
                let slot = boundary.y_idx(g, m, i);
                match y_side {
                    Side::Bottom => boundary.bottom[slot] = v,
                    _ => boundary.top[slot] = v,
                }
                // The boundary y-face flux contribution.
                let jf = if pos_y { 0 } else { ny };
                moments.fy[g * mesh.n_y_faces() + mesh.y_face(i, jf)] += w * eta * v;
            }

            let x_side = if pos_x { Side::Left } else { Side::Right };
            for jj in 0..ny {
                let j = if pos_y { jj } else { ny - 1 - jj };
                // Upwind x-face value entering the row.
                let mut psi_x = incoming(x_side, j);
                {
                    let slot = boundary.x_idx(g, m, j);
                    match x_side {
                        Side::Left => boundary.left[slot] = psi_x,
                        _ => boundary.right[slot] = psi_x,
                    }
                    let xf = if pos_x { 0 } else { nx };
                    moments.fx[g * mesh.n_x_faces() + mesh.x_face(xf, j)] += w * mu * psi_x;
                }
                for ii in 0..nx {
                    let i = if pos_x { ii } else { nx - 1 - ii };
                    let cell = mesh.cell(i, j);
                    let kappa = tables.kappa(g, cell);
                    let kt = kappa + c_dt_inv;
                    let q = kappa * tables.planck(g, cell) + i_prev.at(g, m, cell) * c_dt_inv;
                    let s = q / kt;
                    let a = kt * mesh.dx / abs_mu;
                    let b = kt * mesh.dy / abs_eta;
                    let (psi_dx, psi_dy, psi_a) = cell_update(a, b, s, psi_x, psi_row[i]);

                    intensity.set(g, m, cell, psi_a);
                    e_g[cell] += w * psi_a;
                    if let Some(h) = h_accum.as_deref_mut() {
                        // Signed streaming divergence; equals the
                        // upwind/downwind difference form for either sign.
                        let stream = abs_mu * (psi_dx - psi_x) / mesh.dx
                            + abs_eta * (psi_dy - psi_row[i]) / mesh.dy;
                        h[intensity.idx(g, m, cell)] +=
                            tau * (kappa * tables.planck(g, cell) - kappa * psi_a - stream);
                    }

                    // Downwind x-face.
                    let xf = if pos_x { i + 1 } else { i };
                    moments.fx[g * mesh.n_x_faces() + mesh.x_face(xf, j)] += w * mu * psi_dx;
                    if (pos_x && i == nx - 1) || (!pos_x && i == 0) {
                        let slot = boundary.x_idx(g, m, j);
                        match x_side {
                            Side::Left => boundary.right[slot] = psi_dx,
                            _ => boundary.left[slot] = psi_dx,
                        }
                    }
                    // Downwind y-face.
                    let yf = if pos_y { j + 1 } else { j };
                    moments.fy[g * mesh.n_y_faces() + mesh.y_face(i, yf)] += w * eta * psi_dy;
                    if (pos_y && j == ny - 1) || (!pos_y && j == 0) {
                        let slot = boundary.y_idx(g, m, i);
                        match y_side {
                            Side::Bottom => boundary.top[slot] = psi_dy,
                            _ => boundary.bottom[slot] = psi_dy,
                        }
                    }

                    psi_x = psi_dx;
                    psi_row[i] = psi_dy;
                }
            }
        }
        for e in e_g.iter_mut() {
            *e /= crate::physics::C_LIGHT;
        }
    }

    Ok(SweepResult {
        intensity,
        boundary,
        moments,
    })
}

// ---------------------------------------------------------------------------
// Moments and closure
// ---------------------------------------------------------------------------

/// Cell-centered moment fields of an intensity: group energy densities and
/// (cell-centered) flux components from plain quadrature sums.
#[derive(Debug, Clone)]
pub struct CellMoments {
    pub e: Vec<f64>,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

pub fn moments(i: &AngularIntensity, quad: &AngularQuadrature) -> CellMoments {
    let n = i.n_groups * i.n_cells;
    let mut out = CellMoments {
        e: vec![0.0; n],
        fx: vec![0.0; n],
        fy: vec![0.0; n],
    };
    for g in 0..i.n_groups {
        for m in 0..i.n_dirs {
            let (mu, eta, w) = (quad.mu[m], quad.eta[m], quad.weight[m]);
            for cell in 0..i.n_cells {
                let v = i.at(g, m, cell);
                out.e[g * i.n_cells + cell] += w * v;
                out.fx[g * i.n_cells + cell] += w * mu * v;
                out.fy[g * i.n_cells + cell] += w * eta * v;
            }
        }
    }
    for e in out.e.iter_mut() {
        *e /= crate::physics::C_LIGHT;
    }
    out
}

/// Eddington tensors per cell and group plus the boundary factors closing
/// the low-order boundary conditions.
///
/// The tensor is `f = int Omega x Omega I dOmega / int I dOmega` (2x2 in
/// the plane plus the zz entry; trace 1). The boundary factor on a
/// boundary face is `C = F_out / (c E_face)` with `F_out` the outgoing
/// half-range flux and `E_face` the face radiation energy density, so the
/// low-order condition `F . n = c C E - F_in` reproduces the transport
/// flux when `E` matches the transport face energy. `f_in` carries the
/// incoming half-range flux per face (zero on vacuum sides).
#[derive(Debug, Clone)]
pub struct EddingtonClosure {
    pub n_groups: usize,
    pub n_cells: usize,
    pub fxx: Vec<f64>,
    pub fyy: Vec<f64>,
    pub fzz: Vec<f64>,
    pub fxy: Vec<f64>,
    /// Boundary factors per side: left/right `[g * ny + j]`, bottom/top
    /// `[g * nx + i]`.
    pub c_left: Vec<f64>,
    pub c_right: Vec<f64>,
    pub c_bottom: Vec<f64>,
    pub c_top: Vec<f64>,
    /// Incoming half-range fluxes, same layout as the factors.
    pub fin_left: Vec<f64>,
    pub fin_right: Vec<f64>,
    pub fin_bottom: Vec<f64>,
    pub fin_top: Vec<f64>,
    /// Number of (cell, group) or (face, group) slots that fell back to
    /// the isotropic closure because the angular integral vanished.
    pub degenerate: usize,
}

impl EddingtonClosure {
    /// The isotropic closure used by the zeroth low-order pass before any
    /// transport solution exists: `f = diag(1/3)`, `C = 1/4`, and
    /// quadrature-consistent incident fluxes.
    pub fn isotropic(
        mesh: &SpatialMesh,
        quad: &AngularQuadrature,
        groups: &crate::grid::FrequencyGroups,
        n_groups: usize,
        bc: &BoundarySet,
    ) -> Result<Self> {
        let n_cells = mesh.n_cells();
        let bg_sides = boundary_planck(bc, groups)?;
        let mut closure = EddingtonClosure {
            n_groups,
            n_cells,
            fxx: vec![1.0 / 3.0; n_groups * n_cells],
            fyy: vec![1.0 / 3.0; n_groups * n_cells],
            fzz: vec![1.0 / 3.0; n_groups * n_cells],
            fxy: vec![0.0; n_groups * n_cells],
            c_left: vec![0.25; n_groups * mesh.ny],
            c_right: vec![0.25; n_groups * mesh.ny],
            c_bottom: vec![0.25; n_groups * mesh.nx],
            c_top: vec![0.25; n_groups * mesh.nx],
            fin_left: vec![0.0; n_groups * mesh.ny],
            fin_right: vec![0.0; n_groups * mesh.ny],
            fin_bottom: vec![0.0; n_groups * mesh.nx],
            fin_top: vec![0.0; n_groups * mesh.nx],
            degenerate: 0,
        };
        for (k, side) in SIDES.iter().enumerate() {
            let n_faces = match side {
                Side::Left | Side::Right => mesh.ny,
                _ => mesh.nx,
            };
            for g in 0..n_groups {
                let fin = incoming_flux(quad, *side, bc.side(*side), bg_sides[k].as_deref(), g)
                    .unwrap_or(0.0);
                let arr = match side {
                    Side::Left => &mut closure.fin_left,
                    Side::Right => &mut closure.fin_right,
                    Side::Bottom => &mut closure.fin_bottom,
                    Side::Top => &mut closure.fin_top,
                };
                for f in 0..n_faces {
                    arr[g * n_faces + f] = fin;
                }
            }
        }
        Ok(closure)
    }
}

/// Computes the Eddington closure from an intensity and its boundary face
/// values.
pub fn eddington_tensor(
    i: &AngularIntensity,
    boundary: &BoundaryIntensities,
    quad: &AngularQuadrature,
    mesh: &SpatialMesh,
    bc: &BoundarySet,
) -> EddingtonClosure {
    let (n_groups, n_cells, n_dirs) = (i.n_groups, i.n_cells, i.n_dirs);
    let mut out = EddingtonClosure {
        n_groups,
        n_cells,
        fxx: vec![0.0; n_groups * n_cells],
        fyy: vec![0.0; n_groups * n_cells],
        fzz: vec![0.0; n_groups * n_cells],
        fxy: vec![0.0; n_groups * n_cells],
        c_left: vec![0.0; n_groups * mesh.ny],
        c_right: vec![0.0; n_groups * mesh.ny],
        c_bottom: vec![0.0; n_groups * mesh.nx],
        c_top: vec![0.0; n_groups * mesh.nx],
        fin_left: vec![0.0; n_groups * mesh.ny],
        fin_right: vec![0.0; n_groups * mesh.ny],
        fin_bottom: vec![0.0; n_groups * mesh.nx],
        fin_top: vec![0.0; n_groups * mesh.nx],
        degenerate: 0,
    };

    // Cell tensors.
    for g in 0..n_groups {
        for cell in 0..n_cells {
            let (mut s0, mut sxx, mut syy, mut szz, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for m in 0..n_dirs {
                let v = quad.weight[m] * i.at(g, m, cell);
                s0 += v;
                sxx += v * quad.mu[m] * quad.mu[m];
                syy += v * quad.eta[m] * quad.eta[m];
                szz += v * quad.xi[m] * quad.xi[m];
                sxy += v * quad.mu[m] * quad.eta[m];
            }
            let k = g * n_cells + cell;
            if s0 > CLOSURE_FLOOR {
                out.fxx[k] = sxx / s0;
                out.fyy[k] = syy / s0;
                out.fzz[k] = szz / s0;
                out.fxy[k] = sxy / s0;
            } else {
                out.fxx[k] = 1.0 / 3.0;
                out.fyy[k] = 1.0 / 3.0;
                out.fzz[k] = 1.0 / 3.0;
                out.fxy[k] = 0.0;
                out.degenerate += 1;
            }
        }
    }

    // Boundary factors: C = F_out / (c E_face), plus the incoming fluxes.
    for side in SIDES {
        let n_faces = match side {
            Side::Left | Side::Right => mesh.ny,
            _ => mesh.nx,
        };
        for g in 0..n_groups {
            for f in 0..n_faces {
                let (mut e_face, mut f_out, mut f_in) = (0.0, 0.0, 0.0);
                for m in 0..n_dirs {
                    let v = match side {
                        Side::Left | Side::Right => boundary.side(side)[boundary.x_idx(g, m, f)],
                        _ => boundary.side(side)[boundary.y_idx(g, m, f)],
                    };
                    let cosine = match side {
                        Side::Left => -quad.mu[m],
                        Side::Right => quad.mu[m],
                        Side::Bottom => -quad.eta[m],
                        Side::Top => quad.eta[m],
                    };
                    e_face += quad.weight[m] * v;
                    if cosine > 0.0 {
                        f_out += quad.weight[m] * cosine * v;
                    } else {
                        f_in += quad.weight[m] * (-cosine) * v;
                    }
                }
                e_face /= crate::physics::C_LIGHT;
                let k = g * n_faces + f;
                let c_val = if e_face > CLOSURE_FLOOR / crate::physics::C_LIGHT {
                    f_out / (crate::physics::C_LIGHT * e_face)
                } else {
                    out.degenerate += 1;
                    0.25
                };
                let (c_arr, fin_arr) = match side {
                    Side::Left => (&mut out.c_left, &mut out.fin_left),
                    Side::Right => (&mut out.c_right, &mut out.fin_right),
                    Side::Bottom => (&mut out.c_bottom, &mut out.fin_bottom),
                    Side::Top => (&mut out.c_top, &mut out.fin_top),
                };
                c_arr[k] = c_val;
                // Reflective sides close with a zero-net-flux condition in
                // the low-order system; their recorded incoming flux is
                // informational only.
                fin_arr[k] = match bc.side(side) {
                    BoundaryCondition::Vacuum => 0.0,
                    _ => f_in,
                };
            }
        }
    }
    out
}
