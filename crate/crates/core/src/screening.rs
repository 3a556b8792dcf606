//! Screening threshold `D_N` and the two-stage procedure.
//!
//! Under the fitted null the largest of `N` draws stays below `D_N` with
//! probability tending to one, so every observed count at or above `D_N` is
//! declared significant outright. Counts below it go through the local FDR.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::em::NullFit;
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::lfdr;
use crate::null_models::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `max(λ/(e^(θ-1) - θ), log N/(θ - 1 - log θ), C + 1)`.
    Gp,
    /// `max(λ, log N, C + 1)`.
    Poisson,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Gp => "gp",
            Branch::Poisson => "poisson",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningThreshold {
    pub d_n: u64,
    pub branch: Branch,
    pub lambda_term: f64,
    pub log_n_term: f64,
    pub c_plus_1: u64,
    pub k: u64,
    /// Ceiling of the largest term, before the clamp at `K`.
    pub pre_clamp: u64,
}

impl ScreeningThreshold {
    /// Whether the clamp at `K` fired.
    pub fn clamped_at_k(&self) -> bool {
        self.pre_clamp > self.k
    }

    /// Whether `C + 1` was the largest term.
    pub fn clamped_at_c(&self) -> bool {
        self.pre_clamp == self.c_plus_1
            && self.lambda_term <= self.c_plus_1 as f64
            && self.log_n_term <= self.c_plus_1 as f64
    }
}

/// Threshold for the fitted null of `fit`, with `N` positions, cut-off `C`
/// and largest observed count `K`.
pub fn d_n(fit: &NullFit, n: u64, cutoff: u64, k: u64) -> Result<ScreeningThreshold> {
    if n < 2 {
        return Err(Error::ScreeningUndefined(format!("need N >= 2, got {n}")));
    }
    if cutoff >= k {
        return Err(Error::ScreeningUndefined(format!(
            "need C < K, got C = {cutoff}, K = {k}"
        )));
    }
    let p = &fit.params;
    if p.theta >= 1.0 {
        return Err(Error::ScreeningUndefined(format!("theta = {} >= 1", p.theta)));
    }
    let gp_type = matches!(p.family, Family::Zigp | Family::Gp) && p.theta > 0.0;
    let ln_n = (n as f64).ln();
    let (branch, lambda_term, log_n_term) = if gp_type {
        let t = p.theta;
        (
            Branch::Gp,
            p.lambda / ((t - 1.0).exp() - t),
            ln_n / (t - 1.0 - t.ln()),
        )
    } else {
        (Branch::Poisson, p.lambda, ln_n)
    };
    let c_plus_1 = cutoff + 1;
    let top = lambda_term.max(log_n_term).max(c_plus_1 as f64);
    let pre_clamp = if top.is_finite() && top < u64::MAX as f64 {
        top.ceil() as u64
    } else {
        u64::MAX
    };
    Ok(ScreeningThreshold {
        d_n: pre_clamp.min(k),
        branch,
        lambda_term,
        log_n_term,
        c_plus_1,
        k,
        pre_clamp,
    })
}

/// Observed counts at or above `D_N`, together with those below it whose local
/// FDR is under `alpha`.
pub fn two_stage_decide(
    fit: &NullFit,
    h: &CountHistogram,
    alpha: f64,
    threshold: &ScreeningThreshold,
) -> BTreeSet<u64> {
    let mut out = lfdr::one_stage_decide(fit, h, alpha);
    out.extend(h.support().filter(|&j| j >= threshold.d_n));
    out
}
