//! EM estimation of the null parameters from the truncated null sample.
//!
//! Positions with counts `j <= C` are taken as draws from `f0` conditioned on
//! `{0..=C}`; their likelihood is the multinomial with cell probabilities
//! `p_j = f0(j) / F0(C)`. The E-step imputes the null draws that fell above
//! `C` as `n f0(j) / F0(C)` and splits zeros between the structural and the
//! GP component. The GP kernel `(λ + θj)^(j-1)` is split between its `λ` and
//! `θj` parts, which gives closed-form updates for every family.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::null_models::{Family, NullParams, PARAM_UPPER};

/// Probability mass left beyond the imputation horizon.
pub const HORIZON_TAIL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Stop when the log-likelihood changes by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Hard limit on how far past `K` imputation may reach.
    pub horizon_cap: u64,
    /// Extrapolate between EM steps (SQUAREM) while keeping the likelihood
    /// non-decreasing.
    pub accelerate: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            horizon_cap: 2_000,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullFit {
    pub params: NullParams,
    /// Cut-off `C` the fit was computed at.
    pub cutoff: u64,
    /// `min(1, π̂0)`.
    pub pi0: f64,
    /// Multinomial log-likelihood of the null sample, one entry per iterate.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl NullFit {
    /// Log-likelihood at the returned parameters.
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

/// Latent-class weights for a count `j` under the current parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Responsibilities {
    /// Structural zero.
    pub tau0: f64,
    /// GP component.
    pub tau1: f64,
    /// Share of `(λ + θj)` attributed to `λ`.
    pub tau2: f64,
    /// Share attributed to `θj`.
    pub tau3: f64,
}

pub fn responsibilities(p: &NullParams, j: u64) -> Responsibilities {
    let tau0 = if j == 0 && p.eta > 0.0 {
        p.eta / p.pmf(0)
    } else {
        0.0
    };
    let jf = j as f64;
    let denom = p.lambda + p.theta * jf;
    Responsibilities {
        tau0,
        tau1: 1.0 - tau0,
        tau2: p.lambda / denom,
        tau3: p.theta * jf / denom,
    }
}

/// Cell probabilities `p_j = f0(j) / Σ_{t<=C} f0(t)` for `j = 0..=C`.
pub fn multinomial_probs(p: &NullParams, cutoff: u64) -> Result<Vec<f64>> {
    let table = p.pmf_table(cutoff);
    let mass: f64 = table.iter().sum();
    if mass < 1e-300 {
        return Err(Error::NullMassVanishes(cutoff));
    }
    Ok(table.into_iter().map(|f| f / mass).collect())
}

/// Log of the multinomial likelihood of the null sample `{n_j : j <= C}`.
///
/// When `C` equals the largest observed count nothing is truncated and the
/// cell probabilities are the unconditional masses.
pub fn truncated_loglik(p: &NullParams, h: &CountHistogram, cutoff: u64) -> Result<f64> {
    let table = p.pmf_table(cutoff);
    loglik_from_table(&table, h, cutoff)
}

fn loglik_from_table(table: &[f64], h: &CountHistogram, cutoff: u64) -> Result<f64> {
    let truncated = cutoff < h.max_count();
    let mass: f64 = table[..=cutoff as usize].iter().sum();
    if truncated && mass < 1e-300 {
        return Err(Error::NullMassVanishes(cutoff));
    }
    let ln_mass = if truncated { mass.ln() } else { 0.0 };
    let (n, _) = h.null_mass_split(cutoff)?;
    let mut ll = ln_factorial(n);
    for (j, nj) in h.iter_upto(cutoff) {
        let f = table[j as usize];
        ll += -ln_factorial(nj) + nj as f64 * (f.ln() - ln_mass);
    }
    Ok(ll)
}

/// Moment-based starting values for the truncated sample.
pub fn initial_params(family: Family, h: &CountHistogram, cutoff: u64) -> NullParams {
    let (n, _) = h.null_mass_split(cutoff.min(h.max_count())).unwrap_or((0, 0));
    let n = n.max(1) as f64;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (j, nj) in h.iter_upto(cutoff) {
        let jf = j as f64;
        s1 += nj as f64 * jf;
        s2 += nj as f64 * jf * jf;
    }
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0);
    let n0 = h.n_at(0) as f64;
    let em = (-mean).exp();
    let eta = if mean > 0.0 {
        ((n0 / n - em) / (1.0 - em)).clamp(0.01, 0.99)
    } else {
        0.01
    };
    let theta = if var > 0.0 {
        (1.0 - (mean / var).sqrt()).clamp(0.01, 0.9)
    } else {
        0.01
    };
    NullParams::clamped(family, eta, mean.max(1e-8), theta)
}

/// Sufficient state of one E-step: current masses out to the imputation
/// horizon.
struct EStep {
    table: Vec<f64>,
    weights: Vec<f64>,
    /// False when the horizon cap cut the imputed tail short.
    exact: bool,
}

impl EStep {
    fn new(p: &NullParams, h: &CountHistogram, cutoff: u64, horizon_cap: u64) -> Result<Self> {
        let k = h.max_count();
        let truncated = cutoff < k;
        let table = if truncated {
            p.pmf_table_to_horizon(k, HORIZON_TAIL, horizon_cap)
        } else {
            p.pmf_table(cutoff)
        };
        let exact = !truncated || table.iter().sum::<f64>() > 1.0 - HORIZON_TAIL;
        let mass: f64 = table[..=cutoff as usize].iter().sum();
        if mass < 1e-300 {
            return Err(Error::NullMassVanishes(cutoff));
        }
        let (n, _) = h.null_mass_split(cutoff)?;
        let mut weights = vec![0.0; table.len()];
        for (j, nj) in h.iter_upto(cutoff) {
            weights[j as usize] = nj as f64;
        }
        let scale = n as f64 / mass;
        for j in (cutoff as usize + 1)..table.len() {
            weights[j] = scale * table[j];
        }
        Ok(Self {
            table,
            weights,
            exact,
        })
    }

    fn m_step(&self, p: &NullParams) -> NullParams {
        let zero_mass = self.table[0];
        let tau00 = if p.eta > 0.0 { p.eta / zero_mass } else { 0.0 };

        let mut structural = 0.0; // Σ w τ0
        let mut gp_weight = 0.0; // Σ w τ1
        let mut lam_num = 0.0; // Σ w τ1 [1 + (j-1) τ2]
        let mut theta_num = 0.0; // Σ w τ1 (j-1) τ3
        let mut theta_den = 0.0; // Σ w τ1 j
        for (j, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let jf = j as f64;
            let (t0, t1) = if j == 0 { (tau00, 1.0 - tau00) } else { (0.0, 1.0) };
            let denom = p.lambda + p.theta * jf;
            let t2 = p.lambda / denom;
            let t3 = p.theta * jf / denom;
            let wt = w * t1;
            structural += w * t0;
            gp_weight += wt;
            lam_num += wt * (1.0 + (jf - 1.0) * t2);
            theta_num += wt * (jf - 1.0) * t3;
            theta_den += wt * jf;
        }

        let eta = if p.family.has_zero_inflation() {
            structural / (structural + gp_weight)
        } else {
            0.0
        };
        let lambda = if gp_weight > 0.0 {
            lam_num / gp_weight
        } else {
            p.lambda
        };
        let theta = if p.family.has_dispersion() && theta_den > 0.0 {
            theta_num / theta_den
        } else {
            p.theta
        };
        NullParams::clamped(p.family, eta, lambda, theta)
    }
}

fn check_sample(family: Family, h: &CountHistogram, cutoff: u64) -> Result<()> {
    if cutoff > h.max_count() {
        return Err(Error::CutoffBeyondSupport {
            cutoff,
            max_count: h.max_count(),
        });
    }
    let support = h.support_len_upto(cutoff);
    if support == 0 {
        return Err(Error::Unidentifiable(format!(
            "no observed counts at or below C = {cutoff}"
        )));
    }
    if family.free_params() > 1 && support < 2 {
        return Err(Error::Unidentifiable(format!(
            "{family} needs at least 2 distinct counts at or below C = {cutoff}, found {support}"
        )));
    }
    Ok(())
}

/// One EM update `Θ(p) -> Θ(p+1)`.
pub fn em_step(p: &NullParams, h: &CountHistogram, cutoff: u64) -> Result<NullParams> {
    check_sample(p.family, h, cutoff)?;
    let e = EStep::new(p, h, cutoff, EmConfig::default().horizon_cap)?;
    Ok(e.m_step(p))
}

/// `min(1, Σ_{j<=C} f̂(j) / Σ_{j<=C} f̂0(j))` with `f̂(j) = n_j / N`.
pub fn estimate_pi0(params: &NullParams, h: &CountHistogram, cutoff: u64) -> Result<f64> {
    let (n, _) = h.null_mass_split(cutoff)?;
    let null_mass: f64 = params.pmf_table(cutoff).iter().sum();
    if null_mass <= 0.0 {
        return Err(Error::NullMassVanishes(cutoff));
    }
    let empirical = n as f64 / h.total() as f64;
    Ok((empirical / null_mass).min(1.0))
}

/// Fit `family` to the null sample below `cutoff` and estimate `π0`.
pub fn fit_null(family: Family, h: &CountHistogram, cutoff: u64, cfg: &EmConfig) -> Result<NullFit> {
    if cutoff == 0 {
        return Err(Error::Unidentifiable("cut-off must be at least 1".into()));
    }
    check_sample(family, h, cutoff)?;
    let start = initial_params(family, h, cutoff);
    let mut fit = fit_from(start, h, cutoff, cfg)?;
    for reduced in boundary_families(family, &fit.params) {
        let Ok(sub) = fit_null(reduced, h, cutoff, cfg) else {
            continue;
        };
        if sub.loglik() > fit.loglik() {
            let p = sub.params;
            fit.params = NullParams::clamped(family, p.eta, p.lambda, p.theta);
            fit.pi0 = sub.pi0;
            fit.loglik_trace.push(sub.loglik());
            fit.iterations += sub.iterations;
            fit.converged = sub.converged;
        }
    }
    Ok(fit)
}

/// Parameters below this are treated as heading for zero, where EM slows to a
/// crawl; the nested family without them is then fitted as well.
const BOUNDARY: f64 = 0.05;

/// Nested families reached by setting a near-zero `η` or `θ` to zero.
fn boundary_families(family: Family, p: &NullParams) -> Vec<Family> {
    let mut out = Vec::new();
    if family.has_zero_inflation() && p.eta < BOUNDARY {
        out.push(match family {
            Family::Zigp => Family::Gp,
            _ => Family::Poisson,
        });
    }
    if family.has_dispersion() && p.theta < BOUNDARY {
        out.push(match family {
            Family::Zigp => Family::Zip,
            _ => Family::Poisson,
        });
    }
    out
}

/// Run EM from a given starting point.
pub fn fit_from(
    start: NullParams,
    h: &CountHistogram,
    cutoff: u64,
    cfg: &EmConfig,
) -> Result<NullFit> {
    check_sample(start.family, h, cutoff)?;
    let mut run = Run::new(h, cutoff, cfg);
    let (mut params, mut converged) = if cfg.accelerate {
        run.squarem(start)?
    } else {
        run.plain(start)?
    };
    if cutoff < h.max_count() {
        if let Some((better, ll)) = polish(&params, h, cutoff, run.trace.last().copied()) {
            run.trace.push(ll);
            params = better;
            converged = true;
        }
    }
    let pi0 = estimate_pi0(&params, h, cutoff)?;
    Ok(NullFit {
        params,
        cutoff,
        pi0,
        loglik_trace: run.trace,
        converged,
        iterations: run.steps,
    })
}

/// Direct maximisation of the truncated likelihood from `start`.
///
/// EM crawls along flat ridges, and once the horizon cap cuts the imputed
/// tail short its fixed point is no longer the maximum. The likelihood itself
/// only needs the masses on `0..=C`, so a simplex search from the EM point is
/// cheap. Returns the new point only if it improves on `current`.
fn polish(
    start: &NullParams,
    h: &CountHistogram,
    cutoff: u64,
    current: Option<f64>,
) -> Option<(NullParams, f64)> {
    let problem = Truncated { family: start.family, h, cutoff };
    let x0 = problem.to_free(start);
    let mut simplex = vec![x0.clone()];
    for i in 0..x0.len() {
        let mut x = x0.clone();
        x[i] += 0.1;
        simplex.push(x);
    }
    let solver = NelderMead::new(simplex).with_sd_tolerance(1e-12).ok()?;
    let res = Executor::new(problem, solver)
        .configure(|s| s.max_iters(2_000))
        .run()
        .ok()?;
    let state = res.state();
    let best = problem.from_free(state.best_param.as_ref()?);
    let ll = truncated_loglik(&best, h, cutoff).ok()?;
    (ll.is_finite() && current.is_none_or(|c| ll > c)).then_some((best, ll))
}

/// Negative truncated log-likelihood over unconstrained coordinates: logits
/// for `η` and `θ`, log for `λ`.
#[derive(Clone, Copy)]
struct Truncated<'a> {
    family: Family,
    h: &'a CountHistogram,
    cutoff: u64,
}

impl Truncated<'_> {
    fn to_free(&self, p: &NullParams) -> Vec<f64> {
        let logit = |x: f64| {
            let x = (x / PARAM_UPPER).clamp(1e-10, 1.0 - 1e-10);
            (x / (1.0 - x)).ln()
        };
        let mut x = vec![p.lambda.ln()];
        if self.family.has_zero_inflation() {
            x.push(logit(p.eta));
        }
        if self.family.has_dispersion() {
            x.push(logit(p.theta));
        }
        x
    }

    fn from_free(&self, x: &[f64]) -> NullParams {
        let expit = |u: f64| PARAM_UPPER / (1.0 + (-u).exp());
        let mut it = x.iter().skip(1);
        let eta = if self.family.has_zero_inflation() { expit(*it.next().unwrap()) } else { 0.0 };
        let theta = if self.family.has_dispersion() { expit(*it.next().unwrap()) } else { 0.0 };
        NullParams::clamped(self.family, eta, x[0].exp(), theta)
    }
}

impl CostFunction for Truncated<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let ll = truncated_loglik(&self.from_free(x), self.h, self.cutoff);
        Ok(match ll {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        })
    }
}

struct Run<'a> {
    h: &'a CountHistogram,
    cutoff: u64,
    cfg: &'a EmConfig,
    trace: Vec<f64>,
    /// M-steps taken.
    steps: usize,
}

impl<'a> Run<'a> {
    fn new(h: &'a CountHistogram, cutoff: u64, cfg: &'a EmConfig) -> Self {
        Self {
            h,
            cutoff,
            cfg,
            trace: Vec::with_capacity(64),
            steps: 0,
        }
    }

    /// Log-likelihood at `p` and the EM update from `p`.
    fn step(&mut self, p: &NullParams) -> Result<(f64, NullParams)> {
        self.step_checked(p).map(|(ll, next, _)| (ll, next))
    }

    /// As `step`, also reporting whether the imputation was exact.
    fn step_checked(&mut self, p: &NullParams) -> Result<(f64, NullParams, bool)> {
        let e = EStep::new(p, self.h, self.cutoff, self.cfg.horizon_cap)?;
        let ll = loglik_from_table(&e.table, self.h, self.cutoff)?;
        self.steps += 1;
        Ok((ll, e.m_step(p), e.exact))
    }

    fn loglik(&self, p: &NullParams) -> Result<f64> {
        truncated_loglik(p, self.h, self.cutoff)
    }

    /// Record `ll`; true once the change from the previous entry is below tol.
    fn record(&mut self, ll: f64) -> bool {
        let done = self
            .trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() < self.cfg.tol);
        self.trace.push(ll);
        done
    }

    /// True when `ll` falls below the last recorded value. Exact EM never
    /// does this; it happens when the imputation horizon cuts a heavy tail.
    fn declines(&self, ll: f64) -> bool {
        self.trace.last().is_some_and(|&prev| ll < prev)
    }

    /// Convergence flag when stopping because of a decline to `ll`.
    fn stalled(&self, ll: f64) -> bool {
        self.trace.last().is_some_and(|&prev| prev - ll < self.cfg.tol)
    }

    fn plain(&mut self, start: NullParams) -> Result<(NullParams, bool)> {
        let mut params = start;
        let mut prev = start;
        loop {
            if self.steps >= self.cfg.max_iter {
                let ll = self.loglik(&params)?;
                if self.declines(ll) {
                    return Ok((prev, self.stalled(ll)));
                }
                self.record(ll);
                return Ok((params, false));
            }
            let (ll, next) = self.step(&params)?;
            if self.declines(ll) {
                return Ok((prev, self.stalled(ll)));
            }
            if self.record(ll) {
                return Ok((params, true));
            }
            prev = params;
            params = next;
        }
    }

    /// Squared iterative extrapolation of the EM map with a monotone
    /// safeguard: the extrapolated point is kept only if it does not lower
    /// the likelihood relative to two plain steps.
    fn squarem(&mut self, start: NullParams) -> Result<(NullParams, bool)> {
        let mut p0 = start;
        let (mut ll0, mut p1) = self.step(&p0)?;
        self.record(ll0);
        loop {
            if self.steps + 2 > self.cfg.max_iter {
                return Ok((p0, false));
            }
            let (ll1, p2) = self.step(&p1)?;
            if self.declines(ll1) {
                return Ok((p0, self.stalled(ll1)));
            }
            if (ll1 - ll0).abs() < self.cfg.tol {
                self.record(ll1);
                return Ok((p1, true));
            }
            let (ll2, p3) = self.step(&p2)?;
            let x0 = free_vector(&p0);
            let x1 = free_vector(&p1);
            let x2 = free_vector(&p2);
            let r: Vec<f64> = x1.iter().zip(&x0).map(|(a, b)| a - b).collect();
            let v: Vec<f64> = (0..3).map(|i| x2[i] - 2.0 * x1[i] + x0[i]).collect();
            let rn = norm(&r);
            let vn = norm(&v);

            // Best plain candidate: p2 (two steps) with its successor p3.
            let (mut best, mut best_ll, mut best_next) = (p2, ll2, Some(p3));
            if vn > 0.0 && rn > 0.0 {
                let a = (-rn / vn).min(-1.0);
                let x: Vec<f64> = (0..3)
                    .map(|i| x0[i] - 2.0 * a * r[i] + a * a * v[i])
                    .collect();
                let extrapolated = NullParams::clamped(p0.family, x[0], x[1], x[2]);
                // A jump into a region where the imputation is cut short can
                // look better while the updates from there are unreliable.
                if let Ok((ll_e, next_e, true)) = self.step_checked(&extrapolated) {
                    if ll_e.is_finite() && ll_e >= best_ll {
                        best = extrapolated;
                        best_ll = ll_e;
                        best_next = Some(next_e);
                    }
                }
            }
            if self.declines(best_ll) {
                return Ok((p0, self.stalled(best_ll)));
            }
            if self.record(best_ll) || (best_ll - ll0).abs() < self.cfg.tol {
                return Ok((best, true));
            }
            p0 = best;
            ll0 = best_ll;
            p1 = best_next.expect("set above");
        }
    }
}

fn free_vector(p: &NullParams) -> [f64; 3] {
    [p.eta, p.lambda, p.theta]
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
