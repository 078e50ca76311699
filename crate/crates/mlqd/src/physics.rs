//! Material physics: Planck spectrum integrals, group opacities, and the
//! (linear) material energy density, in the cm / ns / keV / jerk unit
//! system used throughout.

use crate::error::{Error, Result, SolverError};
use crate::grid::FrequencyGroups;
use std::f64::consts::PI;

/// Speed of light, cm / ns.
pub const C_LIGHT: f64 = 29.9792458;

/// Radiation constant a_R, jerk cm^-3 keV^-4 (1 jerk = 1e9 J), from exact
/// SI defining constants: a_R = 8 pi^5 (keV)^4 / (15 h^3 c^3).
pub const A_RAD: f64 = 1.3720169264801068e-2;

/// pi^4 / 15 = full Planck integral of x^3/(e^x - 1) over (0, inf).
pub const PI4_OVER_15: f64 = 6.493939402266829;

// ---------------------------------------------------------------------------
// Planck integrals
// ---------------------------------------------------------------------------

// Power-series coefficients for the lower incomplete Planck integral,
// Q(x) = int_0^x t^3/(e^t - 1) dt
//      = x^3/3 - x^4/8 + sum_{k>=1} C[k-1] * x^{2k+3},
// where C[k-1] = B_{2k} / ((2k+3) (2k)!) with B the Bernoulli numbers.
// Truncation at 20 terms leaves a relative error below 1e-21 for x <= 2.
const LOWER_SERIES: [f64; 20] = [
    1.66666666666666664e-2,
    -1.98412698412698413e-4,
    3.67430922986478553e-6,
    -7.51563251563251607e-8,
    1.60590438368216149e-9,
    -3.52279342579166215e-11,
    7.87208031216745774e-13,
    -1.78404226122241216e-14,
    4.08860097917992578e-16,
    -9.45595086329592140e-18,
    2.20360113134409181e-19,
    -5.16832025400463853e-21,
    1.21886449642395423e-22,
    -2.88823142807662809e-24,
    6.87258318890207039e-26,
    -1.64136876253491499e-27,
    3.93289858274287837e-29,
    -9.45126907862900100e-31,
    2.27725225782805975e-32,
    -5.50005212953634837e-34,
];

/// Where the lower (power series) and upper (exponential series)
/// evaluations meet.
const SERIES_SPLIT: f64 = 2.0;

/// Q(x) = int_0^x t^3/(e^t - 1) dt for 0 <= x <= 2.
fn planck_lower(x: f64) -> f64 {
    debug_assert!((0.0..=SERIES_SPLIT + 1e-12).contains(&x));
    let x2 = x * x;
    let mut tail = 0.0;
    for &c in LOWER_SERIES.iter().rev() {
        tail = tail * x2 + c;
    }
    let x3 = x2 * x;
    x3 / 3.0 - x2 * x2 / 8.0 + x3 * x2 * tail
}

/// P(x) = int_x^inf t^3/(e^t - 1) dt for x >= 2, by expanding
/// 1/(e^t - 1) = sum_k e^{-kt} and integrating each term exactly.
fn planck_upper(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    debug_assert!(x >= SERIES_SPLIT - 1e-12);
    let mut sum = 0.0;
    for k in 1..400u32 {
        let kf = f64::from(k);
        let term = (-kf * x).exp()
            * (x * x * x / kf + 3.0 * x * x / (kf * kf) + 6.0 * x / (kf * kf * kf)
                + 6.0 / (kf * kf * kf * kf));
        sum += term;
        if term <= 1e-18 * sum {
            break;
        }
    }
    sum
}

/// e^x * P(x) for x >= 2. Stays O(x^3) as x grows, where P itself
/// underflows; used for opacity ratios of two underflowing integrals.
fn planck_upper_scaled(x: f64) -> f64 {
    debug_assert!(x.is_finite() && x >= SERIES_SPLIT - 1e-12);
    let mut sum = 0.0;
    for k in 1..400u32 {
        let kf = f64::from(k);
        let term = (-(kf - 1.0) * x).exp()
            * (x * x * x / kf + 3.0 * x * x / (kf * kf) + 6.0 * x / (kf * kf * kf)
                + 6.0 / (kf * kf * kf * kf));
        sum += term;
        if term <= 1e-18 * sum {
            break;
        }
    }
    sum
}

/// int_{xa}^{xb} t^3/(e^t - 1) dt with 0 <= xa < xb; accepts xb = inf.
/// Evaluated without subtracting near-equal full-range values.
pub fn planck_integral_between(xa: f64, xb: f64) -> f64 {
    debug_assert!(xa >= 0.0 && xb > xa);
    if xb <= SERIES_SPLIT {
        planck_lower(xb) - planck_lower(xa)
    } else if xa >= SERIES_SPLIT {
        planck_upper(xa) - planck_upper(xb)
    } else {
        (planck_lower(SERIES_SPLIT) - planck_lower(xa))
            + (planck_upper(SERIES_SPLIT) - planck_upper(xb))
    }
}

/// Group bounds in units of T, with the spectrum tails folded into the
/// boundary groups: group 0 extends down to 0 and the last group to
/// infinity, so that group sums reproduce full-spectrum integrals at any
/// temperature.
fn scaled_group_bounds(t: f64, g: usize, groups: &FrequencyGroups) -> (f64, f64) {
    let (lo, hi) = groups.group_bounds(g);
    let xa = if g == 0 { 0.0 } else { lo / t };
    let xb = if g == groups.count() - 1 {
        f64::INFINITY
    } else {
        hi / t
    };
    (xa, xb)
}

/// Group-integrated Planck intensity B_g(T), normalized so that the sum
/// over all groups is a_R c T^4 / (4 pi). Units: jerk cm^-2 ns^-1 sr^-1
/// per group.
pub fn planck_group(t: f64, g: usize, groups: &FrequencyGroups) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Solver(SolverError::Domain(format!(
            "planck_group needs T > 0, got {t}"
        ))));
    }
    Ok(planck_group_unchecked(t, g, groups))
}

fn planck_group_unchecked(t: f64, g: usize, groups: &FrequencyGroups) -> f64 {
    let (xa, xb) = scaled_group_bounds(t, g, groups);
    let norm = 15.0 * A_RAD * C_LIGHT / (4.0 * PI.powi(5));
    norm * t.powi(4) * planck_integral_between(xa, xb)
}

// ---------------------------------------------------------------------------
// Opacity
// ---------------------------------------------------------------------------

/// Spectral opacity law kappa_nu(T), cm^-1 with nu in keV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpacityLaw {
    /// kappa_nu = coefficient / nu^3 * (1 - e^{-nu/T}).
    FleckCummings { coefficient: f64 },
    /// Frequency- and temperature-independent kappa.
    Constant { kappa: f64 },
}

impl OpacityLaw {
    /// Pointwise spectral value kappa_nu(T).
    pub fn spectral(&self, nu: f64, t: f64) -> f64 {
        match *self {
            OpacityLaw::FleckCummings { coefficient } => {
                coefficient / (nu * nu * nu) * (-(-nu / t).exp_m1())
            }
            OpacityLaw::Constant { kappa } => kappa,
        }
    }
}

/// Planck-weighted group opacity
/// kappa_g = int_g kappa_nu B_nu dnu / int_g B_nu dnu.
///
/// For the Fleck-Cummings law the weighted integrand collapses to a pure
/// exponential (kappa_nu B_nu ~ e^{-nu/T}), so the average is evaluated in
/// closed form; for x = nu/T beyond the series split both integrals are
/// rescaled by e^{x_lo} to avoid forming a 0/0 ratio of underflowed values.
pub fn group_opacity(t: f64, g: usize, groups: &FrequencyGroups, law: &OpacityLaw) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Solver(SolverError::Domain(format!(
            "group_opacity needs T > 0, got {t}"
        ))));
    }
    Ok(group_opacity_unchecked(t, g, groups, law))
}

fn group_opacity_unchecked(t: f64, g: usize, groups: &FrequencyGroups, law: &OpacityLaw) -> f64 {
    match *law {
        OpacityLaw::Constant { kappa } => kappa,
        OpacityLaw::FleckCummings { coefficient } => {
            let (xa, xb) = scaled_group_bounds(t, g, groups);
            let t3 = t * t * t;
            if xa < SERIES_SPLIT {
                // int_g kappa B = coeff * C_B * T * (e^{-xa} - e^{-xb});
                // no underflow risk on this branch.
                let num = (-xa).exp() - if xb.is_finite() { (-xb).exp() } else { 0.0 };
                coefficient * num / (t3 * planck_integral_between(xa, xb))
            } else {
                // Both integrals scale like e^{-xa}; factor it out.
                let (decay, scaled_b) = if xb.is_finite() {
                    ((xa - xb).exp(), planck_upper_scaled(xb))
                } else {
                    (0.0, 0.0)
                };
                let den = planck_upper_scaled(xa) - decay * scaled_b;
                coefficient * (1.0 - decay) / (t3 * den)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Material model
// ---------------------------------------------------------------------------

/// Material description: linear energy density eps(T) = c_v * T plus the
/// spectral opacity law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialModel {
    /// Specific heat, jerk cm^-3 keV^-1.
    pub c_v: f64,
    pub opacity: OpacityLaw,
}

impl MaterialModel {
    pub fn new(c_v: f64, opacity: OpacityLaw) -> Result<Self> {
        if !(c_v > 0.0) {
            return Err(Error::Solver(SolverError::Domain(format!(
                "specific heat must be positive, got {c_v}"
            ))));
        }
        match opacity {
            OpacityLaw::FleckCummings { coefficient } if !(coefficient > 0.0) => {
                return Err(Error::Solver(SolverError::Domain(
                    "opacity coefficient must be positive".into(),
                )));
            }
            OpacityLaw::Constant { kappa } if !(kappa > 0.0) => {
                return Err(Error::Solver(SolverError::Domain(
                    "constant opacity must be positive".into(),
                )));
            }
            _ => {}
        }
        Ok(MaterialModel { c_v, opacity })
    }

    /// eps(T) = c_v T, jerk cm^-3.
    pub fn material_energy(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Solver(SolverError::Domain(format!(
                "material_energy needs T > 0, got {t}"
            ))));
        }
        Ok(self.c_v * t)
    }

    /// Exact inverse of [`Self::material_energy`].
    pub fn temperature_of(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return Err(Error::Solver(SolverError::Domain(format!(
                "temperature_of needs eps > 0, got {eps}"
            ))));
        }
        Ok(eps / self.c_v)
    }
}

// ---------------------------------------------------------------------------
// Per-pass material tables
// ---------------------------------------------------------------------------

/// Group opacities and Planck intensities evaluated on a temperature
/// field, laid out `[g * n_cells + cell]`. B_g is the hot inner-loop
/// function, so each solver pass builds the table once per temperature
/// iterate and reads from it everywhere.
#[derive(Debug, Clone)]
pub struct MaterialTables {
    pub n_groups: usize,
    pub n_cells: usize,
    /// kappa_g(T_cell), cm^-1.
    pub kappa: Vec<f64>,
    /// B_g(T_cell), jerk cm^-2 ns^-1 sr^-1.
    pub planck: Vec<f64>,
}

impl MaterialTables {
    pub fn build(model: &MaterialModel, groups: &FrequencyGroups, temperature: &[f64]) -> Result<Self> {
        if let Some((cell, &t)) = temperature
            .iter()
            .enumerate()
            .find(|(_, t)| !(**t > 0.0) || !t.is_finite())
        {
            return Err(Error::Solver(SolverError::DegenerateCell {
                cell,
                reason: format!("non-positive or non-finite temperature {t}"),
            }));
        }
        let (n_groups, n_cells) = (groups.count(), temperature.len());
        let mut kappa = vec![0.0; n_groups * n_cells];
        let mut planck = vec![0.0; n_groups * n_cells];
        for g in 0..n_groups {
            for (cell, &t) in temperature.iter().enumerate() {
                kappa[g * n_cells + cell] = group_opacity_unchecked(t, g, groups, &model.opacity);
                planck[g * n_cells + cell] = planck_group_unchecked(t, g, groups);
            }
        }
        Ok(MaterialTables {
            n_groups,
            n_cells,
            kappa,
            planck,
        })
    }

    #[inline]
    pub fn kappa(&self, g: usize, cell: usize) -> f64 {
        self.kappa[g * self.n_cells + cell]
    }

    #[inline]
    pub fn planck(&self, g: usize, cell: usize) -> f64 {
        self.planck[g * self.n_cells + cell]
    }
}
