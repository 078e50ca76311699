//! Discretization metadata: uniform rectangular spatial mesh, discrete
//! ordinate quadrature on the unit sphere, photon frequency groups, and the
//! time grid with its coarse block partition.

use crate::error::{ConfigError, Error, Result};
use std::f64::consts::PI;

/// Smallest direction cosine magnitude accepted by the sweep. Directions
/// closer to a coordinate axis than this would make the upwind ordering
/// degenerate.
pub const MIN_DIRECTION_COSINE: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Spatial mesh
// ---------------------------------------------------------------------------

/// Uniform orthogonal mesh of `nx * ny` rectangular cells covering
/// `[0, lx] x [0, ly]` (cm). Cells are indexed row-major with x fastest:
/// `cell(i, j) = j * nx + i`.
///
/// Faces are stored per orientation: x-faces carry normals along x and sit
/// at `x = i * dx` for `i in 0..=nx` (there are `(nx + 1) * ny` of them);
/// y-faces carry normals along y at `y = j * dy` for `j in 0..=ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub dx: f64,
    pub dy: f64,
}

impl SpatialMesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "mesh.nx/ny".into(),
                reason: "cell counts must be at least 1".into(),
            }));
        }
        if !(lx > 0.0) || !(ly > 0.0) {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "mesh.lx/ly".into(),
                reason: "domain extents must be positive".into(),
            }));
        }
        Ok(SpatialMesh {
            nx,
            ny,
            lx,
            ly,
            dx: lx / nx as f64,
            dy: ly / ny as f64,
        })
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn cell(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    /// Index of the x-face at `x = i * dx` bounding row `j`; `i in 0..=nx`.
    #[inline]
    pub fn x_face(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.nx && j < self.ny);
        j * (self.nx + 1) + i
    }

    /// Index of the y-face at `y = j * dy` bounding column `i`; `j in 0..=ny`.
    #[inline]
    pub fn y_face(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j <= self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn n_x_faces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    #[inline]
    pub fn n_y_faces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Cell area (2D volume per unit depth), cm^2.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }
}

// ---------------------------------------------------------------------------
// Angular quadrature
// ---------------------------------------------------------------------------

/// Layout of the discrete-ordinate set. Both layouts place polar levels at
/// the positive nodes of a symmetric Gauss-Legendre rule (weights doubled,
/// using the up/down symmetry of 2D Cartesian geometry) and azimuthal
/// angles at equal-weight midpoints around the full circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureLayout {
    /// `n_polar` levels, each with `n_azimuthal` directions per quadrant.
    /// Total count `M = 4 * n_polar * n_azimuthal`.
    Product { n_polar: usize, n_azimuthal: usize },
    /// `n_levels` levels; the level nearest the equator carries `n_levels`
    /// directions per quadrant, decreasing by one toward the pole.
    /// Total count `M = 2 * n_levels * (n_levels + 1)`.
    Triangular { n_levels: usize },
}

/// Discrete directions `(mu, eta, xi)` on the unit sphere with weights
/// summing to 4 pi. Only `mu` (x) and `eta` (y) take part in streaming;
/// `xi` enters the second angular moment. The set has exact quadrant
/// mirror symmetry, recorded in `mirror_mu` / `mirror_eta`.
#[derive(Debug, Clone)]
pub struct AngularQuadrature {
    pub mu: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub weight: Vec<f64>,
    /// Index of the direction `(-mu, eta, xi)`.
    pub mirror_mu: Vec<usize>,
    /// Index of the direction `(mu, -eta, xi)`.
    pub mirror_eta: Vec<usize>,
}

impl AngularQuadrature {
    #[inline]
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Verifies the zeroth/first/second moment identities of the set:
    /// weights sum to 4 pi, odd moments vanish, and the second moment is
    /// (4 pi / 3) times the identity.
    pub fn check_moments(&self) -> Result<()> {
        let four_pi = 4.0 * PI;
        let mut w_sum = 0.0;
        let mut m1 = [0.0f64; 2];
        let mut m2 = [0.0f64; 4]; // xx, yy, zz, xy
        for m in 0..self.len() {
            let (mu, eta, xi, w) = (self.mu[m], self.eta[m], self.xi[m], self.weight[m]);
            w_sum += w;
            m1[0] += w * mu;
            m1[1] += w * eta;
            m2[0] += w * mu * mu;
            m2[1] += w * eta * eta;
            m2[2] += w * xi * xi;
            m2[3] += w * mu * eta;
        }
        let check = |val: f64, target: f64, tol: f64, what: &str| -> Result<()> {
            if (val - target).abs() > tol * four_pi {
                return Err(Error::Config(ConfigError::InvalidValue {
                    key: "quadrature".into(),
                    reason: format!("{what} = {val:.17e}, expected {target:.17e}"),
                }));
            }
            Ok(())
        };
        check(w_sum, four_pi, 1e-12, "weight sum")?;
        check(m1[0], 0.0, 1e-12, "first moment (x)")?;
        check(m1[1], 0.0, 1e-12, "first moment (y)")?;
        check(m2[0], four_pi / 3.0, 1e-10, "second moment (xx)")?;
        check(m2[1], four_pi / 3.0, 1e-10, "second moment (yy)")?;
        check(m2[2], four_pi / 3.0, 1e-10, "second moment (zz)")?;
        check(m2[3], 0.0, 1e-10, "second moment (xy)")?;
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on (-1, 1), ascending order.
/// Newton iteration on the Legendre recurrence; n up to a few hundred is
/// well within the accuracy of the cos initial guess.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Root i (descending in this guess), refined by Newton.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // The guess enumerates roots in descending order; flip to ascending.
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

/// Legendre polynomial P_n and derivative P_n' at x via the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p_next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = p_next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

/// Builds the discrete-ordinate set for a layout. Every generated set
/// satisfies the moment identities checked by
/// [`AngularQuadrature::check_moments`], and no direction has a streaming
/// cosine smaller in magnitude than [`MIN_DIRECTION_COSINE`].
pub fn build_quadrature(layout: QuadratureLayout) -> Result<AngularQuadrature> {
    // (xi, doubled GL weight, directions per quadrant) per polar level.
    let levels: Vec<(f64, f64, usize)> = match layout {
        QuadratureLayout::Product {
            n_polar,
            n_azimuthal,
        } => {
            if n_polar == 0 || n_azimuthal == 0 {
                return Err(Error::Config(ConfigError::InvalidValue {
                    key: "quadrature".into(),
                    reason: "product layout needs n_polar >= 1 and n_azimuthal >= 1".into(),
                }));
            }
            let (nodes, weights) = gauss_legendre(2 * n_polar);
            (0..n_polar)
                .map(|l| {
                    let idx = n_polar + l; // positive half of the symmetric rule
                    (nodes[idx], 2.0 * weights[idx], n_azimuthal)
                })
                .collect()
        }
        QuadratureLayout::Triangular { n_levels } => {
            if n_levels == 0 {
                return Err(Error::Config(ConfigError::InvalidValue {
                    key: "quadrature".into(),
                    reason: "triangular layout needs n_levels >= 1".into(),
                }));
            }
            let (nodes, weights) = gauss_legendre(2 * n_levels);
            (0..n_levels)
                .map(|l| {
                    let idx = n_levels + l;
                    // l = 0 is nearest the equator and carries the most
                    // azimuthal directions; the polemost level carries one.
                    (nodes[idx], 2.0 * weights[idx], n_levels - l)
                })
                .collect()
        }
    };

    let mut mu = Vec::new();
    let mut eta = Vec::new();
    let mut xi_all = Vec::new();
    let mut weight = Vec::new();
    let mut mirror_mu = Vec::new();
    let mut mirror_eta = Vec::new();

    // Quadrant sign patterns for (mu, eta), in the emission order below.
    const QUAD_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    // mirror_mu flips the sign of mu: quadrant 0 <-> 1, 3 <-> 2.
    const MIRROR_MU_QUAD: [usize; 4] = [1, 0, 3, 2];
    // mirror_eta flips the sign of eta: quadrant 0 <-> 3, 1 <-> 2.
    const MIRROR_ETA_QUAD: [usize; 4] = [3, 2, 1, 0];

    for &(xi, w_polar, n_az) in &levels {
        let sin_theta = (1.0 - xi * xi).sqrt();
        // Midpoint azimuths covering the first quadrant; the other
        // quadrants are exact sign reflections, so the full circle is the
        // uniform midpoint set of 4 * n_az angles.
        let dphi = 0.5 * PI / n_az as f64;
        let level_start = mu.len();
        for quad in 0..4 {
            let (sx, sy) = QUAD_SIGNS[quad];
            for k in 0..n_az {
                let phi = (k as f64 + 0.5) * dphi;
                let m = sin_theta * phi.cos();
                let e = sin_theta * phi.sin();
                if m.abs() < MIN_DIRECTION_COSINE || e.abs() < MIN_DIRECTION_COSINE {
                    return Err(Error::Config(ConfigError::InvalidValue {
                        key: "quadrature".into(),
                        reason: format!(
                            "layout produces a direction with |mu| or |eta| < {MIN_DIRECTION_COSINE:e} \
                             (sweep degeneracy)"
                        ),
                    }));
                }
                mu.push(sx * m);
                eta.push(sy * e);
                xi_all.push(xi);
                weight.push(w_polar * dphi);
                mirror_mu.push(level_start + MIRROR_MU_QUAD[quad] * n_az + k);
                mirror_eta.push(level_start + MIRROR_ETA_QUAD[quad] * n_az + k);
            }
        }
    }

    let quad = AngularQuadrature {
        mu,
        eta,
        xi: xi_all,
        weight,
        mirror_mu,
        mirror_eta,
    };
    quad.check_moments()?;
    Ok(quad)
}

// ---------------------------------------------------------------------------
// Frequency groups
// ---------------------------------------------------------------------------

/// Photon frequency group boundaries `nu_0 < nu_1 < ... < nu_G` (keV).
/// Group `g` (0-based) spans `(nu_g, nu_{g+1})`. The Planck tails below
/// `nu_0` and above `nu_G` are folded into the first and last groups by the
/// physics module, so group sums reproduce full-spectrum integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGroups {
    pub bounds: Vec<f64>,
}

impl FrequencyGroups {
    pub fn from_bounds(bounds: Vec<f64>) -> Result<Self> {
        if bounds.len() < 2 {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "groups.bounds".into(),
                reason: "need at least two boundaries".into(),
            }));
        }
        if !(bounds[0] > 0.0) {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "groups.bounds".into(),
                reason: "lowest boundary must be positive".into(),
            }));
        }
        if bounds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "groups.bounds".into(),
                reason: "boundaries must be strictly increasing".into(),
            }));
        }
        Ok(FrequencyGroups { bounds })
    }

    /// `count` groups with logarithmically spaced boundaries over
    /// `[lo, hi]` keV.
    pub fn log_spaced(count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "groups.count".into(),
                reason: "need at least one group".into(),
            }));
        }
        if !(lo > 0.0) || !(hi > lo) {
            return Err(Error::Config(ConfigError::InvalidValue {
                key: "groups.range".into(),
                reason: "need 0 < lo < hi".into(),
            }));
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        let bounds = (0..=count)
            .map(|k| (llo + (lhi - llo) * k as f64 / count as f64).exp())
            .collect();
        FrequencyGroups::from_bounds(bounds)
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Boundaries `(nu_lo, nu_hi)` of 0-based group `g`.
    #[inline]
    pub fn group_bounds(&self, g: usize) -> (f64, f64) {
        (self.bounds[g], self.bounds[g + 1])
    }
}

// ---------------------------------------------------------------------------
// Time grid and blocks
// ---------------------------------------------------------------------------

/// Uniform time grid `t^n = n * dt` for `n = 0..=n_steps`, partitioned into
/// consecutive blocks by `block_edges` (step-edge indices, starting at 0
/// and ending at `n_steps`). Block `b` (0-based) covers steps
/// `block_edges[b]..block_edges[b + 1]` (0-based step index `n` advances
/// `t^n -> t^{n+1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeBlockPartition {
    pub dt: f64,
    pub n_steps: usize,
    pub block_edges: Vec<usize>,
}

impl TimeBlockPartition {
    #[inline]
    pub fn n_blocks(&self) -> usize {
        self.block_edges.len() - 1
    }

    /// 0-based step indices making up block `b`.
    #[inline]
    pub fn block_steps(&self, b: usize) -> std::ops::Range<usize> {
        self.block_edges[b]..self.block_edges[b + 1]
    }

    #[inline]
    pub fn block_len(&self, b: usize) -> usize {
        self.block_edges[b + 1] - self.block_edges[b]
    }

    #[inline]
    pub fn time_at(&self, edge: usize) -> f64 {
        edge as f64 * self.dt
    }
}

/// Splits the ratio `num / den` into an integer count, requiring
/// commensurability to 1e-12 relative.
fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let ratio = num / den;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-12 * ratio.max(1.0) {
        None
    } else {
        Some(rounded as usize)
    }
}

/// Uniform steps of `dt` to `t_end`, grouped into blocks of
/// `block_len / dt` steps each; the final block is shorter when `t_end` is
/// not a multiple of `block_len`.
pub fn build_time_blocks(dt: f64, t_end: f64, block_len: f64) -> Result<TimeBlockPartition> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(Error::Config(ConfigError::InvalidValue {
            key: "time.dt/t_end".into(),
            reason: "dt and t_end must be positive".into(),
        }));
    }
    let n_steps = integer_ratio(t_end, dt).ok_or(Error::Config(ConfigError::NonCommensurateBlock {
        block_len: t_end,
        dt,
    }))?;
    let steps_per_block = if block_len >= t_end {
        n_steps
    } else {
        integer_ratio(block_len, dt).ok_or(Error::Config(ConfigError::NonCommensurateBlock {
            block_len,
            dt,
        }))?
    };
    let mut block_edges = vec![0];
    let mut n = 0;
    while n < n_steps {
        n = (n + steps_per_block).min(n_steps);
        block_edges.push(n);
    }
    Ok(TimeBlockPartition {
        dt,
        n_steps,
        block_edges,
    })
}
