//! Data-driven choice of the null cut-off `C`.
//!
//! Every candidate `ν = 1..=K` gets its own EM fit. The CUSUM criterion scores
//! `S_ν = Σ_{j<=ν} n_j log(f̂0(j)/f̂(j)) + Σ_{j<=K} n_j log f̂(j)`; the second
//! criterion is the truncated binomial-multinomial likelihood
//! `n log ξ + (N-n) log(1-ξ) + Σ_{j<=ν} n_j log f̂0(j)` with
//! `ξ = π̂0 Σ_{j<=ν} f̂0(j)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit_null, EmConfig, NullFit};
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::null_models::Family;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutoffMethod {
    C1,
    C2,
}

impl fmt::Display for CutoffMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CutoffMethod::C1 => "c1",
            CutoffMethod::C2 => "c2",
        })
    }
}

/// How `C` is obtained: one of the two scans, or a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CutoffChoice {
    Scan(CutoffMethod),
    Fixed(u64),
}

impl Default for CutoffChoice {
    fn default() -> Self {
        CutoffChoice::Scan(CutoffMethod::C1)
    }
}

impl FromStr for CutoffChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "c1" => Ok(CutoffChoice::Scan(CutoffMethod::C1)),
            "c2" => Ok(CutoffChoice::Scan(CutoffMethod::C2)),
            _ => {
                let value = lower.strip_prefix("fixed:").ok_or_else(|| {
                    Error::InvalidParams(format!("cut-off must be c1, c2 or fixed:<int>, got {s:?}"))
                })?;
                let c: u64 = value
                    .parse()
                    .map_err(|_| Error::InvalidParams(format!("bad fixed cut-off {value:?}")))?;
                if c == 0 {
                    return Err(Error::InvalidParams("fixed cut-off must be >= 1".into()));
                }
                Ok(CutoffChoice::Fixed(c))
            }
        }
    }
}

impl fmt::Display for CutoffChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CutoffChoice::Scan(m) => m.fmt(f),
            CutoffChoice::Fixed(c) => write!(f, "fixed:{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub em: EmConfig,
    /// Pick `argmin` of the C2 log-likelihood instead of `argmax`.
    pub c2_literal_argmin: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            c2_literal_argmin: false,
        }
    }
}

/// One candidate of the scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub nu: u64,
    /// `None` when the candidate was skipped or the fit failed.
    pub fit: Option<NullFit>,
    /// Criterion value; `-inf` disqualifies the candidate.
    pub score: f64,
    /// Unpenalised profile log-likelihood `S_ν + N_ν log π̂0` (C1 only).
    pub profile_loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffScan {
    pub family: Family,
    pub method: CutoffMethod,
    pub per_nu: Vec<ScanEntry>,
    pub chosen: u64,
}

impl CutoffScan {
    pub fn chosen_entry(&self) -> &ScanEntry {
        self.per_nu
            .iter()
            .find(|e| e.nu == self.chosen)
            .expect("chosen cut-off is in the scan")
    }

    /// Fit at the chosen cut-off.
    pub fn chosen_fit(&self) -> &NullFit {
        self.chosen_entry()
            .fit
            .as_ref()
            .expect("chosen cut-off has a fit")
    }

    /// Scan table as TSV: `nu, eta, lambda, theta, pi0, score, profile_loglik`.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "nu\teta\tlambda\ttheta\tpi0\tscore\tprofile_loglik")?;
        for e in &self.per_nu {
            match &e.fit {
                Some(fit) => writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    e.nu,
                    fit.params.eta,
                    fit.params.lambda,
                    fit.params.theta,
                    fit.pi0,
                    e.score,
                    e.profile_loglik
                )?,
                None => writeln!(w, "{}\tNA\tNA\tNA\tNA\t{}\t{}", e.nu, e.score, e.profile_loglik)?,
            }
        }
        Ok(())
    }
}

/// CUSUM score `S_ν` of a fit computed at `C = ν`.
///
/// `π̂0` cancels between the log-ratio and the `-log π̂0` penalty, leaving
/// `Σ_{j<=ν} n_j log(f̂0(j)/f̂(j)) + Σ_j n_j log f̂(j)`.
pub fn c1_score(fit: &NullFit, h: &CountHistogram, nu: u64) -> f64 {
    let total = h.total() as f64;
    let mut cusum = 0.0;
    for (j, nj) in h.iter_upto(nu) {
        let ln_f0 = fit.params.ln_pmf(j);
        if !ln_f0.is_finite() {
            return f64::NEG_INFINITY;
        }
        let f_hat = nj as f64 / total;
        cusum += nj as f64 * (ln_f0 - f_hat.ln());
    }
    cusum + empirical_loglik(h)
}

/// `Σ_j n_j log(n_j / N)`.
pub fn empirical_loglik(h: &CountHistogram) -> f64 {
    let total = h.total() as f64;
    h.iter()
        .map(|(_, n)| n as f64 * (n as f64 / total).ln())
        .sum()
}

/// Truncated likelihood `ξ^n (1-ξ)^(N-n) Π_{j<=ν} f̂0(j)^{n_j}` on log scale.
pub fn c2_score(fit: &NullFit, h: &CountHistogram, nu: u64) -> f64 {
    let mut null_mass = 0.0;
    for j in 0..=nu {
        null_mass += fit.params.pmf(j);
    }
    let xi = fit.pi0 * null_mass;
    if !(xi > 0.0 && xi < 1.0) {
        return f64::NEG_INFINITY;
    }
    let n: u64 = h.iter_upto(nu).map(|(_, n)| n).sum();
    let rest = h.total() - n;
    let mut ll = n as f64 * xi.ln() + rest as f64 * (1.0 - xi).ln();
    for (j, nj) in h.iter_upto(nu) {
        let ln_f0 = fit.params.ln_pmf(j);
        if !ln_f0.is_finite() {
            return f64::NEG_INFINITY;
        }
        ll += nj as f64 * ln_f0;
    }
    ll
}

fn scan(
    family: Family,
    h: &CountHistogram,
    cfg: &ScanConfig,
    method: CutoffMethod,
) -> Result<CutoffScan> {
    let k = h.max_count();
    if k < 1 || h.support_len() < family.free_params().min(2) {
        return Err(Error::Unidentifiable(format!(
            "{family} needs at least {} distinct observed counts, found {}",
            family.free_params().min(2),
            h.support_len()
        )));
    }
    let per_nu: Vec<ScanEntry> = (1..=k)
        .into_par_iter()
        .map(|nu| {
            let skipped = ScanEntry {
                nu,
                fit: None,
                score: f64::NEG_INFINITY,
                profile_loglik: f64::NEG_INFINITY,
            };
            if h.support_len_upto(nu) < family.free_params() {
                return skipped;
            }
            let Ok(fit) = fit_null(family, h, nu, &cfg.em) else {
                return skipped;
            };
            let (score, profile) = match method {
                CutoffMethod::C1 => {
                    let s = c1_score(&fit, h, nu);
                    let n_nu: u64 = h.iter_upto(nu).map(|(_, n)| n).sum();
                    (s, s + n_nu as f64 * fit.pi0.ln())
                }
                CutoffMethod::C2 => {
                    let s = c2_score(&fit, h, nu);
                    (s, s)
                }
            };
            ScanEntry {
                nu,
                fit: Some(fit),
                score: if score.is_nan() { f64::NEG_INFINITY } else { score },
                profile_loglik: profile,
            }
        })
        .collect();

    let literal_min = method == CutoffMethod::C2 && cfg.c2_literal_argmin;
    let mut best: Option<(u64, f64)> = None;
    for e in &per_nu {
        if !e.score.is_finite() {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, b)) if literal_min => e.score < b,
            Some((_, b)) => e.score > b,
        };
        if better {
            best = Some((e.nu, e.score));
        }
    }
    let (chosen, _) = best.ok_or(Error::NoAdmissibleCutoff)?;
    Ok(CutoffScan {
        family,
        method,
        per_nu,
        chosen,
    })
}

/// Choose `C` by maximising the CUSUM score over `ν = 1..=K`.
pub fn select_c1(family: Family, h: &CountHistogram, cfg: &ScanConfig) -> Result<CutoffScan> {
    scan(family, h, cfg, CutoffMethod::C1)
}

/// Choose `C` by maximising the truncated likelihood over `ν = 1..=K`.
pub fn select_c2(family: Family, h: &CountHistogram, cfg: &ScanConfig) -> Result<CutoffScan> {
    scan(family, h, cfg, CutoffMethod::C2)
}

pub fn select(
    method: CutoffMethod,
    family: Family,
    h: &CountHistogram,
    cfg: &ScanConfig,
) -> Result<CutoffScan> {
    scan(family, h, cfg, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::null_models::NullParams;
    use approx::assert_relative_eq;

    fn hist(pairs: &[(u64, u64)]) -> CountHistogram {
        CountHistogram::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn fake_fit(params: NullParams, cutoff: u64, pi0: f64) -> NullFit {
        NullFit {
            params,
            cutoff,
            pi0,
            loglik_trace: vec![0.0],
            converged: true,
            iterations: 0,
        }
    }

    #[test]
    fn parse_choice() {
        assert_eq!("c1".parse::<CutoffChoice>().unwrap(), CutoffChoice::Scan(CutoffMethod::C1));
        assert_eq!("C2".parse::<CutoffChoice>().unwrap(), CutoffChoice::Scan(CutoffMethod::C2));
        assert_eq!("fixed:3".parse::<CutoffChoice>().unwrap(), CutoffChoice::Fixed(3));
        assert!("fixed:0".parse::<CutoffChoice>().is_err());
        assert!("c3".parse::<CutoffChoice>().is_err());
    }

    #[test]
    fn c1_is_cusum_plus_empirical_term() {
        let h = hist(&[(0, 9), (1, 1)]);
        let p = NullParams::poisson(1.0).unwrap();
        let fit = fake_fit(p, 1, 1.0);
        let cusum = 9.0 * (p.ln_pmf(0) - 0.9f64.ln()) + (p.ln_pmf(1) - 0.1f64.ln());
        assert_relative_eq!(c1_score(&fit, &h, 1), cusum + empirical_loglik(&h), epsilon = 1e-12);
        // π̂0 does not enter the score
        let other = fake_fit(p, 1, 0.3);
        assert_eq!(c1_score(&fit, &h, 1), c1_score(&other, &h, 1));
    }

    #[test]
    fn c1_differences_are_cusum_increments() {
        let h = hist(&[(0, 600), (1, 150), (2, 80), (3, 40), (5, 20), (8, 60), (12, 50)]);
        let fit = fake_fit(NullParams::zigp(0.5, 1.2, 0.2).unwrap(), 3, 0.9);
        let total = h.total() as f64;
        for nu in 1..=h.max_count() {
            let diff = c1_score(&fit, &h, nu) - c1_score(&fit, &h, nu - 1);
            let nj = h.n_at(nu);
            let want = if nj > 0 {
                nj as f64 * (fit.params.ln_pmf(nu) - (nj as f64 / total).ln())
            } else {
                0.0
            };
            assert_relative_eq!(diff, want, epsilon = 1e-8);
        }
    }

    #[test]
    fn two_point_support_picks_one() {
        let h = hist(&[(0, 80), (1, 20)]);
        for family in [Family::Poisson, Family::Zip] {
            let s1 = select_c1(family, &h, &ScanConfig::default()).unwrap();
            assert_eq!(s1.chosen, 1);
            assert_eq!(s1.per_nu.len(), 1);
        }
        // a Poisson fit on {0,1} leaves mass above 1, so ξ < 1 and C2 is defined
        let s2 = select_c2(Family::Poisson, &h, &ScanConfig::default()).unwrap();
        assert_eq!(s2.chosen, 1);
    }

    #[test]
    fn no_admissible_cutoff() {
        let h = hist(&[(0, 80), (1, 20)]);
        assert!(matches!(
            select_c1(Family::Zigp, &h, &ScanConfig::default()),
            Err(Error::NoAdmissibleCutoff)
        ));
        let h = hist(&[(0, 10)]);
        assert!(matches!(
            select_c1(Family::Poisson, &h, &ScanConfig::default()),
            Err(Error::Unidentifiable(_))
        ));
        let h = hist(&[(3, 10)]);
        assert!(matches!(
            select_c1(Family::Zip, &h, &ScanConfig::default()),
            Err(Error::Unidentifiable(_))
        ));
    }

    #[test]
    fn c2_boundary_disqualified() {
        let h = hist(&[(0, 80), (1, 20)]);
        // π̂0 = 1 and all fitted mass at or below ν: ξ = 1
        let fit = fake_fit(NullParams::poisson(1e-300).unwrap(), 1, 1.0);
        assert_eq!(c2_score(&fit, &h, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn scan_is_deterministic() {
        let h = hist(&[(0, 700), (1, 90), (2, 45), (3, 20), (4, 9), (6, 4), (9, 30), (13, 40), (20, 30), (25, 32)]);
        let cfg = ScanConfig::default();
        let a = select_c1(Family::Zigp, &h, &cfg).unwrap();
        let b = select_c1(Family::Zigp, &h, &cfg).unwrap();
        assert_eq!(a, b);
        for e in &a.per_nu {
            if e.score.is_finite() {
                assert!(e.score <= a.chosen_entry().score);
            }
        }
        // ties resolve to the smallest ν
        let first_best = a
            .per_nu
            .iter()
            .find(|e| e.score == a.chosen_entry().score)
            .unwrap();
        assert_eq!(first_best.nu, a.chosen);
    }

    #[test]
    fn literal_argmin_flag_changes_direction() {
        let h = hist(&[(0, 700), (1, 90), (2, 45), (3, 20), (4, 9), (6, 4), (9, 30), (13, 40)]);
        let max = select_c2(Family::Zip, &h, &ScanConfig::default()).unwrap();
        let min = select_c2(
            Family::Zip,
            &h,
            &ScanConfig {
                c2_literal_argmin: true,
                ..ScanConfig::default()
            },
        )
        .unwrap();
        let finite: Vec<f64> = max.per_nu.iter().map(|e| e.score).filter(|s| s.is_finite()).collect();
        let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min.chosen_entry().score, lo);
    }
}
