//! Local FDR and the per-count decision procedures.
//!
//! All positions sharing a count share a decision, so every procedure works
//! on the distinct observed counts and reports rejections both as count
//! values and as the number of positions they cover.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, NullFit, HORIZON_TAIL};
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::screening::{self, ScreeningThreshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    OneStage,
    TwoStage,
    Storey,
    Bh,
}

impl Procedure {
    pub const ALL: [Procedure; 4] = [
        Procedure::OneStage,
        Procedure::TwoStage,
        Procedure::Storey,
        Procedure::Bh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::OneStage => "one-stage",
            Procedure::TwoStage => "two-stage",
            Procedure::Storey => "storey",
            Procedure::Bh => "bh",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Procedure::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidParams(format!(
                    "unknown procedure {s:?}; expected one-stage, two-stage, storey or bh"
                ))
            })
    }
}

/// `π̂0 f̂0(j) / f̂(j)` with `f̂(j) = n_j / N`. Not clamped.
pub fn local_fdr(fit: &NullFit, h: &CountHistogram, j: u64) -> Result<f64> {
    let nj = h.n_at(j);
    if nj == 0 {
        return Err(Error::FdrOffSupport(j));
    }
    let f_hat = nj as f64 / h.total() as f64;
    Ok(fit.pi0 * fit.params.pmf(j) / f_hat)
}

/// Observed counts with local FDR below `alpha`.
pub fn one_stage_decide(fit: &NullFit, h: &CountHistogram, alpha: f64) -> BTreeSet<u64> {
    h.support()
        .filter(|&j| local_fdr(fit, h, j).is_ok_and(|f| f < alpha))
        .collect()
}

/// Upper tail `Σ_{t>=j} f̂0(t)` of the fitted null.
pub fn null_p_value(fit: &NullFit, j: u64) -> f64 {
    if j == 0 {
        return 1.0;
    }
    let table = fit
        .params
        .pmf_table_to_horizon(j, HORIZON_TAIL, EmConfig::default().horizon_cap);
    upper_tails(&table)[j as usize]
}

/// `tails[j] = Σ_{t>=j} f[t]` plus whatever mass lies beyond the table.
fn upper_tails(table: &[f64]) -> Vec<f64> {
    let covered: f64 = table.iter().sum();
    let beyond = (1.0 - covered).max(0.0);
    let mut tails = vec![0.0; table.len()];
    let mut acc = beyond;
    for j in (0..table.len()).rev() {
        acc += table[j];
        tails[j] = acc;
    }
    tails[0] = 1.0;
    tails
}

/// P-values at every observed count, in increasing count order.
fn observed_p_values(fit: &NullFit, h: &CountHistogram) -> Vec<(u64, u64, f64)> {
    let table = fit.params.pmf_table_to_horizon(
        h.max_count(),
        HORIZON_TAIL,
        EmConfig::default().horizon_cap,
    );
    let tails = upper_tails(&table);
    h.iter().map(|(j, n)| (j, n, tails[j as usize])).collect()
}

/// Storey's step-up rule with the fit's `π̂0`.
pub fn storey_decide(fit: &NullFit, h: &CountHistogram, alpha: f64) -> BTreeSet<u64> {
    step_up(&observed_p_values(fit, h), h.total(), fit.pi0, alpha)
}

/// Benjamini-Hochberg: Storey's rule with `π̂0 = 1`.
pub fn bh_decide(fit: &NullFit, h: &CountHistogram, alpha: f64) -> BTreeSet<u64> {
    step_up(&observed_p_values(fit, h), h.total(), 1.0, alpha)
}

/// Reject every count whose p-value is at most the largest `p` satisfying
/// `p <= alpha * #{positions with p-value <= p} / (N π0)`.
fn step_up(p_values: &[(u64, u64, f64)], total: u64, pi0: f64, alpha: f64) -> BTreeSet<u64> {
    let mut order: Vec<&(u64, u64, f64)> = p_values.iter().collect();
    order.sort_by(|a, b| a.2.total_cmp(&b.2).then(b.0.cmp(&a.0)));
    let scale = alpha / (total as f64 * pi0);
    let mut threshold: Option<f64> = None;
    let mut i = 0;
    let mut positions = 0u64;
    while i < order.len() {
        let p = order[i].2;
        let mut k = i;
        while k < order.len() && order[k].2 == p {
            positions += order[k].1;
            k += 1;
        }
        if p <= scale * positions as f64 {
            threshold = Some(p);
        }
        i = k;
    }
    match threshold {
        Some(t) => p_values
            .iter()
            .filter(|(_, _, p)| *p <= t)
            .map(|&(j, _, _)| j)
            .collect(),
        None => BTreeSet::new(),
    }
}

/// Number of positions covered by a set of count values.
pub fn positions_in(h: &CountHistogram, rejected: &BTreeSet<u64>) -> u64 {
    rejected.iter().map(|&j| h.n_at(j)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub count: u64,
    pub n_positions: u64,
    pub f_hat: f64,
    pub f0_hat: f64,
    /// Local FDR clamped to `[0, 1]`.
    pub lfdr: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureResult {
    pub procedure: Procedure,
    pub rejected: BTreeSet<u64>,
    pub positions_rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub alpha: f64,
    pub cutoff: u64,
    pub pi0: f64,
    pub per_count: Vec<CountRow>,
    /// Absent when `C = K`, where no count lies above the cut-off.
    pub screening: Option<ScreeningThreshold>,
    pub results: Vec<ProcedureResult>,
}

impl DecisionReport {
    /// Apply `procedures` to `fit` at level `alpha`.
    ///
    /// When `C = K` there is nothing to screen and the two-stage result equals
    /// the one-stage one.
    pub fn build(
        fit: &NullFit,
        h: &CountHistogram,
        alpha: f64,
        procedures: &[Procedure],
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParams(format!("alpha must lie in (0,1), got {alpha}")));
        }
        let total = h.total() as f64;
        let per_count = observed_p_values(fit, h)
            .into_iter()
            .map(|(j, n, p)| {
                let f_hat = n as f64 / total;
                let f0_hat = fit.params.pmf(j);
                CountRow {
                    count: j,
                    n_positions: n,
                    f_hat,
                    f0_hat,
                    lfdr: (fit.pi0 * f0_hat / f_hat).clamp(0.0, 1.0),
                    p_value: p,
                }
            })
            .collect();
        let screening = if fit.cutoff < h.max_count() {
            Some(screening::d_n(fit, h.total(), fit.cutoff, h.max_count())?)
        } else {
            None
        };
        let results = procedures
            .iter()
            .map(|&procedure| {
                let rejected = decide(procedure, fit, h, alpha, screening.as_ref());
                ProcedureResult {
                    procedure,
                    positions_rejected: positions_in(h, &rejected),
                    rejected,
                }
            })
            .collect();
        Ok(Self {
            alpha,
            cutoff: fit.cutoff,
            pi0: fit.pi0,
            per_count,
            screening,
            results,
        })
    }

    pub fn result(&self, procedure: Procedure) -> Option<&ProcedureResult> {
        self.results.iter().find(|r| r.procedure == procedure)
    }

    /// Per-count table with one 0/1 column per procedure.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "count\tn_positions\tf_hat\tf0_hat\tlfdr\tp_value")?;
        for r in &self.results {
            write!(w, "\treject_{}", r.procedure.name().replace('-', ""))?;
        }
        writeln!(w)?;
        for row in &self.per_count {
            write!(
                w,
                "{}\t{}\t{}\t{}\t{}\t{}",
                row.count, row.n_positions, row.f_hat, row.f0_hat, row.lfdr, row.p_value
            )?;
            for r in &self.results {
                write!(w, "\t{}", u8::from(r.rejected.contains(&row.count)))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Rejection set of one procedure. Two-stage without a threshold reduces to
/// one-stage.
pub fn decide(
    procedure: Procedure,
    fit: &NullFit,
    h: &CountHistogram,
    alpha: f64,
    screening: Option<&ScreeningThreshold>,
) -> BTreeSet<u64> {
    match procedure {
        Procedure::OneStage => one_stage_decide(fit, h, alpha),
        Procedure::TwoStage => match screening {
            Some(t) => screening::two_stage_decide(fit, h, alpha, t),
            None => one_stage_decide(fit, h, alpha),
        },
        Procedure::Storey => storey_decide(fit, h, alpha),
        Procedure::Bh => bh_decide(fit, h, alpha),
    }
}
