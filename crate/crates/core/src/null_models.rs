//! The zero-inflated Generalized Poisson family and its nested members.
//!
//! `GP(λ, θ)` has mass `λ (λ + θj)^(j-1) e^(-λ-θj) / j!`. Adding a point mass
//! `η` at zero gives ZIGP; ZIP, GP and Poisson are the `θ = 0`, `η = 0` and
//! `η = θ = 0` restrictions. Every mass is evaluated in log space because the
//! `(λ + θj)^(j-1)` factor overflows for counts in the low hundreds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};

/// Upper limit enforced on `η` and `θ`.
pub const PARAM_UPPER: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Zigp,
    Zip,
    Gp,
    Poisson,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Zigp, Family::Zip, Family::Gp, Family::Poisson];

    pub fn free_params(self) -> usize {
        match self {
            Family::Zigp => 3,
            Family::Zip | Family::Gp => 2,
            Family::Poisson => 1,
        }
    }

    pub fn has_zero_inflation(self) -> bool {
        matches!(self, Family::Zigp | Family::Zip)
    }

    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Zigp | Family::Gp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Zigp => "zigp",
            Family::Zip => "zip",
            Family::Gp => "gp",
            Family::Poisson => "poisson",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zigp" => Ok(Family::Zigp),
            "zip" => Ok(Family::Zip),
            "gp" => Ok(Family::Gp),
            "poisson" | "p" => Ok(Family::Poisson),
            other => Err(Error::InvalidParams(format!("unknown family {other:?}"))),
        }
    }
}

/// Parameters `(η, λ, θ)` tagged with the family they belong to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullParams {
    pub family: Family,
    pub eta: f64,
    pub lambda: f64,
    pub theta: f64,
}

impl NullParams {
    /// Validate and build. Parameters the family does not carry must be zero.
    pub fn new(family: Family, eta: f64, lambda: f64, theta: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be > 0, got {lambda}")));
        }
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidParams(format!("eta must lie in [0, 1), got {eta}")));
        }
        if !(0.0..1.0).contains(&theta) {
            return Err(Error::InvalidParams(format!("theta must lie in [0, 1), got {theta}")));
        }
        if !family.has_zero_inflation() && eta != 0.0 {
            return Err(Error::InvalidParams(format!("family {family} requires eta = 0")));
        }
        if !family.has_dispersion() && theta != 0.0 {
            return Err(Error::InvalidParams(format!("family {family} requires theta = 0")));
        }
        Ok(Self {
            family,
            eta,
            lambda,
            theta,
        })
    }

    pub fn zigp(eta: f64, lambda: f64, theta: f64) -> Result<Self> {
        Self::new(Family::Zigp, eta, lambda, theta)
    }

    pub fn zip(eta: f64, lambda: f64) -> Result<Self> {
        Self::new(Family::Zip, eta, lambda, 0.0)
    }

    pub fn gp(lambda: f64, theta: f64) -> Result<Self> {
        Self::new(Family::Gp, 0.0, lambda, theta)
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        Self::new(Family::Poisson, 0.0, lambda, 0.0)
    }

    /// Build without validation, forcing family restrictions and clamping
    /// into the admissible box. Used by the EM iterations.
    pub(crate) fn clamped(family: Family, eta: f64, lambda: f64, theta: f64) -> Self {
        let clamp01 = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, PARAM_UPPER) };
        let lambda = if lambda.is_nan() { 1e-8 } else { lambda.max(1e-8) };
        Self {
            family,
            eta: if family.has_zero_inflation() { clamp01(eta) } else { 0.0 },
            lambda,
            theta: if family.has_dispersion() { clamp01(theta) } else { 0.0 },
        }
    }

    /// `ln f0(j)`.
    pub fn ln_pmf(&self, j: u64) -> f64 {
        let ln_g = gp_ln_pmf_unchecked(j, self.lambda, self.theta);
        if j == 0 {
            // η + (1 - η) e^{-λ}
            (self.eta + (1.0 - self.eta) * ln_g.exp()).ln()
        } else if self.eta == 0.0 {
            ln_g
        } else {
            (1.0 - self.eta).ln() + ln_g
        }
    }

    /// `f0(j)`.
    pub fn pmf(&self, j: u64) -> f64 {
        self.ln_pmf(j).exp()
    }

    /// Masses `f0(0..=upto)`.
    pub fn pmf_table(&self, upto: u64) -> Vec<f64> {
        self.masses().take(upto as usize + 1).collect()
    }

    /// Smallest `J >= floor` whose cumulative mass exceeds `1 - tail`,
    /// searched no further than `floor + cap`.
    pub fn mass_horizon(&self, floor: u64, tail: f64, cap: u64) -> u64 {
        self.pmf_table_to_horizon(floor, tail, cap).len() as u64 - 1
    }

    /// Masses `f0(0..=J)` with `J` as returned by [`mass_horizon`](Self::mass_horizon).
    pub fn pmf_table_to_horizon(&self, floor: u64, tail: f64, cap: u64) -> Vec<f64> {
        let mut out = Vec::with_capacity(floor as usize + 16);
        let mut cum = 0.0;
        for (j, f) in self.masses().enumerate() {
            let j = j as u64;
            cum += f;
            out.push(f);
            if (j >= floor && cum > 1.0 - tail) || j >= floor + cap {
                break;
            }
        }
        out
    }

    /// `f0(0), f0(1), ...` evaluated incrementally.
    fn masses(&self) -> impl Iterator<Item = f64> + '_ {
        let ln_lambda = self.lambda.ln();
        let ln_keep = (1.0 - self.eta).ln();
        let mut ln_fact = 0.0;
        (0u64..).map(move |j| {
            if j == 0 {
                return self.pmf(0);
            }
            let jf = j as f64;
            ln_fact += jf.ln();
            let ln_g = ln_lambda + (jf - 1.0) * (self.lambda + self.theta * jf).ln()
                - ln_fact
                - self.lambda
                - self.theta * jf;
            (ln_keep + ln_g).exp()
        })
    }
}

impl fmt::Display for NullParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}(eta={:.4}, lambda={:.4}, theta={:.4})",
            self.family, self.eta, self.lambda, self.theta
        )
    }
}

fn check_gp(lambda: f64, theta: f64) -> Result<()> {
    if !(lambda.is_finite() && lambda > 0.0) || !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidParams(format!(
            "need lambda > 0 and 0 <= theta < 1, got lambda={lambda}, theta={theta}"
        )));
    }
    Ok(())
}

fn gp_ln_pmf_unchecked(j: u64, lambda: f64, theta: f64) -> f64 {
    if j == 0 {
        return -lambda;
    }
    let jf = j as f64;
    lambda.ln() + (jf - 1.0) * (lambda + theta * jf).ln() - ln_factorial(j) - lambda - theta * jf
}

/// Log mass of `GP(λ, θ)` at `j`.
pub fn gp_ln_pmf(j: u64, lambda: f64, theta: f64) -> Result<f64> {
    check_gp(lambda, theta)?;
    Ok(gp_ln_pmf_unchecked(j, lambda, theta))
}

/// Mass of `GP(λ, θ)` at `j`.
pub fn gp_pmf(j: u64, lambda: f64, theta: f64) -> Result<f64> {
    gp_ln_pmf(j, lambda, theta).map(f64::exp)
}

/// Klar's upper bound on `P(T >= D)` for `T ~ GP(λ, θ)`, `0 < θ < 1`.
///
/// Requires `D >= λ / (e^(θ-1) - θ)` and
/// `δ_D = 1 - e^(1-θ) (θ + λ/(D+1)) > 0`.
pub fn gp_tail_bound(d: u64, lambda: f64, theta: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(Error::BoundNotApplicable(format!(
            "need lambda > 0 and 0 < theta < 1, got lambda={lambda}, theta={theta}"
        )));
    }
    if d == 0 {
        return Err(Error::BoundNotApplicable("D must be positive".into()));
    }
    let df = d as f64;
    let min_d = lambda / ((theta - 1.0).exp() - theta);
    if df < min_d {
        return Err(Error::BoundNotApplicable(format!(
            "D = {d} is below lambda / (e^(theta-1) - theta) = {min_d:.4}"
        )));
    }
    let delta = 1.0 - (1.0 - theta).exp() * (theta + lambda / (df + 1.0));
    if delta <= 0.0 {
        return Err(Error::BoundNotApplicable(format!(
            "delta_D = {delta:.4e} is not positive"
        )));
    }
    let ln_core = lambda.ln() + (df - 1.0) * (lambda + theta * df).ln()
        - (df + 0.5) * df.ln()
        - lambda
        - (theta - 1.0) * df;
    Ok(ln_core.exp() / delta)
}

/// Chernoff bound `e^(-λ) (eλ)^D / D^D` on `P(T >= D)` for `T ~ Poisson(λ)`,
/// valid for `0 < λ < D`.
pub fn poisson_tail_bound(d: u64, lambda: f64) -> Result<f64> {
    let df = d as f64;
    if !(lambda.is_finite() && lambda > 0.0) || df <= lambda {
        return Err(Error::BoundNotApplicable(format!(
            "need 0 < lambda < D, got lambda={lambda}, D={d}"
        )));
    }
    Ok((-lambda + df * (1.0 + lambda.ln()) - df * df.ln()).exp())
}
