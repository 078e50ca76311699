//! Run configuration: a flat TOML format with strict validation (unknown
//! keys rejected, all missing keys reported at once) and conversion into
//! a ready-to-run problem definition.

use serde::Deserialize;

use crate::driver::{ConvergenceCriteria, Problem};
use crate::error::{ConfigError, Error, Result};
use crate::grid::{build_quadrature, build_time_blocks, FrequencyGroups, QuadratureLayout, SpatialMesh};
use crate::physics::{MaterialModel, OpacityLaw, A_RAD};
use crate::transport::{BoundaryCondition, BoundarySet};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mesh: Option<RawMesh>,
    groups: Option<RawGroups>,
    quadrature: Option<RawQuadrature>,
    time: Option<RawTime>,
    material: Option<RawMaterial>,
    boundary: Option<RawBoundary>,
    initial: Option<RawInitial>,
    tolerances: Option<RawTolerances>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMesh {
    nx: Option<usize>,
    ny: Option<usize>,
    lx: Option<f64>,
    ly: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroups {
    count: Option<usize>,
    lo: Option<f64>,
    hi: Option<f64>,
    bounds: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrature {
    kind: Option<String>,
    n_polar: Option<usize>,
    n_azimuthal: Option<usize>,
    n_levels: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    dt: Option<f64>,
    t_end: Option<f64>,
    block_len: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMaterial {
    c_v: Option<f64>,
    /// Specific heat as a multiple of the radiation constant (the form
    /// used by the standard test definitions, with a 1 keV reference).
    c_v_factor: Option<f64>,
    opacity: Option<String>,
    coefficient: Option<f64>,
    kappa: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    left: Option<String>,
    right: Option<String>,
    bottom: Option<String>,
    top: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    temperature: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    epsilon: Option<f64>,
    epsilon_inner: Option<f64>,
    max_outer: Option<usize>,
    max_inner: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    save_every: Option<usize>,
    reference: Option<String>,
    memory_budget_steps: Option<usize>,
}

/// A fully validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub group_bounds: Vec<f64>,
    pub quadrature: QuadratureLayout,
    pub dt: f64,
    pub t_end: f64,
    pub block_len: f64,
    pub c_v: f64,
    pub opacity: OpacityLaw,
    pub bc: BoundarySet,
    pub t_initial: f64,
    pub epsilon: f64,
    pub epsilon_inner: Option<f64>,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Save `fields_<n>.csv` for every `save_every`-th step (the final
    /// step is always saved).
    pub save_every: usize,
    /// Directory of a previously written run to log per-iteration errors
    /// against.
    pub reference: Option<String>,
    pub memory_budget_steps: Option<usize>,
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::Config(ConfigError::InvalidValue {
        key: key.into(),
        reason: reason.into(),
    })
}

fn parse_side(key: &str, text: &str) -> Result<BoundaryCondition> {
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("vacuum"), None, _) => Ok(BoundaryCondition::Vacuum),
        (Some("reflective"), None, _) => Ok(BoundaryCondition::Reflective),
        (Some("blackbody"), Some(t), None) => {
            let t: f64 = t
                .parse()
                .map_err(|_| invalid(key, format!("unreadable temperature `{t}`")))?;
            if !(t > 0.0) || !t.is_finite() {
                return Err(invalid(key, "boundary temperature must be positive"));
            }
            Ok(BoundaryCondition::Blackbody { t })
        }
        _ => Err(invalid(
            key,
            format!("`{text}` is not `vacuum`, `reflective`, or `blackbody <T>`"),
        )),
    }
}

/// Collects every missing required key before reporting, so a skeleton
/// file can be fixed in one pass.
fn require<T: Clone>(slot: &Option<T>, key: &str, missing: &mut Vec<String>) -> Option<T> {
    match slot {
        Some(v) => Some(v.clone()),
        None => {
            missing.push(key.to_string());
            None
        }
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text)
        .map_err(|e| Error::Config(ConfigError::Syntax(e.to_string())))?;

    let mut missing: Vec<String> = Vec::new();
    let mesh = raw.mesh.unwrap_or_else(|| {
        missing.push("[mesh]".into());
        RawMesh::default()
    });
    let groups = raw.groups.unwrap_or_else(|| {
        missing.push("[groups]".into());
        RawGroups::default()
    });
    let quadrature = raw.quadrature.unwrap_or_else(|| {
        missing.push("[quadrature]".into());
        RawQuadrature::default()
    });
    let time = raw.time.unwrap_or_else(|| {
        missing.push("[time]".into());
        RawTime::default()
    });
    let material = raw.material.unwrap_or_else(|| {
        missing.push("[material]".into());
        RawMaterial::default()
    });
    let boundary = raw.boundary.unwrap_or_else(|| {
        missing.push("[boundary]".into());
        RawBoundary::default()
    });
    let initial = raw.initial.unwrap_or_else(|| {
        missing.push("[initial]".into());
        RawInitial::default()
    });
    let tolerances = raw.tolerances.unwrap_or_default();
    let output = raw.output.unwrap_or_default();

    let nx = require(&mesh.nx, "mesh.nx", &mut missing);
    let ny = require(&mesh.ny, "mesh.ny", &mut missing);
    let lx = require(&mesh.lx, "mesh.lx", &mut missing);
    let ly = require(&mesh.ly, "mesh.ly", &mut missing);
    let dt = require(&time.dt, "time.dt", &mut missing);
    let t_end = require(&time.t_end, "time.t_end", &mut missing);
    let block_len = require(&time.block_len, "time.block_len", &mut missing);
    let opacity_kind = require(&material.opacity, "material.opacity", &mut missing);
    let quad_kind = require(&quadrature.kind, "quadrature.kind", &mut missing);
    let bc_left = require(&boundary.left, "boundary.left", &mut missing);
    let bc_right = require(&boundary.right, "boundary.right", &mut missing);
    let bc_bottom = require(&boundary.bottom, "boundary.bottom", &mut missing);
    let bc_top = require(&boundary.top, "boundary.top", &mut missing);
    let t_initial = require(&initial.temperature, "initial.temperature", &mut missing);

    // Groups come as explicit bounds, or a log-spaced (count, lo, hi) triple.
    let group_bounds = if let Some(bounds) = &groups.bounds {
        if groups.count.is_some() || groups.lo.is_some() || groups.hi.is_some() {
            return Err(invalid(
                "groups",
                "give either `bounds` or the `count`/`lo`/`hi` triple, not both",
            ));
        }
        Some(bounds.clone())
    } else {
        let count = require(&groups.count, "groups.count", &mut missing);
        let lo = require(&groups.lo, "groups.lo", &mut missing);
        let hi = require(&groups.hi, "groups.hi", &mut missing);
        match (count, lo, hi) {
            (Some(count), Some(lo), Some(hi)) => {
                Some(FrequencyGroups::log_spaced(count, lo, hi)?.bounds)
            }
            _ => None,
        }
    };

    if !missing.is_empty() {
        return Err(Error::Config(ConfigError::MissingKeys(missing.join(", "))));
    }
    let (nx, ny, lx, ly) = (nx.unwrap(), ny.unwrap(), lx.unwrap(), ly.unwrap());
    let (dt, t_end, block_len) = (dt.unwrap(), t_end.unwrap(), block_len.unwrap());

    let quadrature = match quad_kind.unwrap().as_str() {
        "product" => QuadratureLayout::Product {
            n_polar: quadrature
                .n_polar
                .ok_or_else(|| invalid("quadrature.n_polar", "required for `product`"))?,
            n_azimuthal: quadrature
                .n_azimuthal
                .ok_or_else(|| invalid("quadrature.n_azimuthal", "required for `product`"))?,
        },
        "triangular" => QuadratureLayout::Triangular {
            n_levels: quadrature
                .n_levels
                .ok_or_else(|| invalid("quadrature.n_levels", "required for `triangular`"))?,
        },
        other => {
            return Err(invalid(
                "quadrature.kind",
                format!("`{other}` is not `product` or `triangular`"),
            ))
        }
    };

    let c_v = match (material.c_v, material.c_v_factor) {
        (Some(v), None) => v,
        (None, Some(f)) => f * A_RAD,
        (Some(_), Some(_)) => {
            return Err(invalid("material", "give `c_v` or `c_v_factor`, not both"))
        }
        (None, None) => {
            return Err(Error::Config(ConfigError::MissingKeys(
                "material.c_v (or material.c_v_factor)".into(),
            )))
        }
    };
    let opacity = match opacity_kind.unwrap().as_str() {
        "fleck_cummings" => OpacityLaw::FleckCummings {
            coefficient: material
                .coefficient
                .ok_or_else(|| invalid("material.coefficient", "required for `fleck_cummings`"))?,
        },
        "constant" => OpacityLaw::Constant {
            kappa: material
                .kappa
                .ok_or_else(|| invalid("material.kappa", "required for `constant`"))?,
        },
        other => {
            return Err(invalid(
                "material.opacity",
                format!("`{other}` is not `fleck_cummings` or `constant`"),
            ))
        }
    };

    let bc = BoundarySet {
        left: parse_side("boundary.left", &bc_left.unwrap())?,
        right: parse_side("boundary.right", &bc_right.unwrap())?,
        bottom: parse_side("boundary.bottom", &bc_bottom.unwrap())?,
        top: parse_side("boundary.top", &bc_top.unwrap())?,
    };

    let t_initial = t_initial.unwrap();
    if !(t_initial > 0.0) || !t_initial.is_finite() {
        return Err(invalid("initial.temperature", "must be positive and finite"));
    }
    let epsilon = tolerances.epsilon.unwrap_or(1e-14);
    if !(epsilon > 0.0) {
        return Err(invalid("tolerances.epsilon", "must be positive"));
    }
    if let Some(ei) = tolerances.epsilon_inner {
        if !(ei > 0.0) {
            return Err(invalid("tolerances.epsilon_inner", "must be positive"));
        }
    }
    let save_every = output.save_every.unwrap_or(1);
    if save_every == 0 {
        return Err(invalid("output.save_every", "must be at least 1"));
    }

    let config = RunConfig {
        nx,
        ny,
        lx,
        ly,
        group_bounds: group_bounds.unwrap(),
        quadrature,
        dt,
        t_end,
        block_len,
        c_v,
        opacity,
        bc,
        t_initial,
        epsilon,
        epsilon_inner: tolerances.epsilon_inner,
        max_outer: tolerances.max_outer.unwrap_or(200),
        max_inner: tolerances.max_inner.unwrap_or(500),
        save_every,
        reference: output.reference,
        memory_budget_steps: output.memory_budget_steps,
    };
    // Fail fast on anything the constructors would reject, so errors point
    // at the configuration rather than at the solver.
    config.problem()?;
    Ok(config)
}

impl RunConfig {
    /// Builds the discretized problem this configuration describes.
    pub fn problem(&self) -> Result<Problem> {
        Ok(Problem {
            mesh: SpatialMesh::new(self.nx, self.ny, self.lx, self.ly)?,
            quad: build_quadrature(self.quadrature)?,
            groups: FrequencyGroups::from_bounds(self.group_bounds.clone())?,
            material: MaterialModel::new(self.c_v, self.opacity)?,
            bc: self.bc,
            blocks: build_time_blocks(self.dt, self.t_end, self.block_len)?,
            t_initial: self.t_initial,
            memory_budget_steps: self.memory_budget_steps,
        })
    }

    pub fn criteria(&self) -> ConvergenceCriteria {
        let mut c = ConvergenceCriteria::from_outer(self.epsilon);
        if let Some(ei) = self.epsilon_inner {
            c.epsilon_inner = ei;
        }
        c.max_outer = self.max_outer;
        c.max_inner = self.max_inner;
        c
    }
}
