//! Monte-Carlo comparison of the decision procedures.
//!
//! Each replication draws `N` positions from the mixture
//! `π0 f0 + (1 - π0) f1`, keeps the component labels, and for every fitted
//! family runs cut-off selection, the EM fit and all four procedures. False
//! discovery proportion and true positive rate are computed per position.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::{self, CutoffChoice, ScanConfig};
use crate::em::{self, NullFit, HORIZON_TAIL};
use crate::error::{Error, Result};
use crate::histogram::CountHistogram;
use crate::lfdr::{DecisionReport, Procedure};
use crate::null_models::{Family, NullParams};

/// Seed used when none is given.
pub const DEFAULT_SEED: u64 = 42;

/// Distribution of the non-null counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NonNull {
    /// Number of failures before the first success, support `0, 1, ...`.
    Geometric { p: f64 },
    Binomial { n_trials: u64, p: f64 },
}

impl fmt::Display for NonNull {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NonNull::Geometric { p } => write!(f, "Geometric(p={p})"),
            NonNull::Binomial { n_trials, p } => write!(f, "Binomial(n={n_trials}, p={p})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub null: NullParams,
    pub nonnull: NonNull,
    pub pi0: f64,
    pub n_positions: u64,
    pub reps: u64,
    pub alpha: f64,
    pub cutoff: CutoffChoice,
    pub fit_families: Vec<Family>,
    pub seed: u64,
    pub scan: ScanConfig,
    /// Count a position as non-null when its value exceeds the largest count
    /// below every non-null draw, instead of using its generator label.
    pub truth_by_cutoff: bool,
}

impl SimDesign {
    pub fn new(null: NullParams, nonnull: NonNull, pi0: f64) -> Self {
        Self {
            null,
            nonnull,
            pi0,
            n_positions: 1000,
            reps: 300,
            alpha: 0.05,
            cutoff: CutoffChoice::default(),
            fit_families: Family::ALL.to_vec(),
            seed: DEFAULT_SEED,
            scan: ScanConfig::default(),
            truth_by_cutoff: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        if !(self.pi0 > 0.0 && self.pi0 <= 1.0) {
            return bad(format!("pi0 must lie in (0, 1], got {}", self.pi0));
        }
        if self.reps < 1 {
            return bad("reps must be >= 1".into());
        }
        if self.n_positions < 10 {
            return bad(format!("N must be >= 10, got {}", self.n_positions));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.fit_families.is_empty() {
            return bad("no fit families".into());
        }
        match self.nonnull {
            NonNull::Geometric { p } if !(p > 0.0 && p <= 1.0) => {
                bad(format!("geometric p must lie in (0, 1], got {p}"))
            }
            NonNull::Binomial { p, .. } if !(0.0..=1.0).contains(&p) => {
                bad(format!("binomial p must lie in [0, 1], got {p}"))
            }
            _ => Ok(()),
        }
    }

    /// Parse the `key = value` design format. Unknown keys are errors.
    ///
    /// ```text
    /// null.family = zigp
    /// null.eta = 0.8
    /// null.lambda = 1.5
    /// null.theta = 0.3
    /// nonnull.kind = geometric      # or binomial
    /// nonnull.p = 0.08
    /// nonnull.n = 250               # binomial only
    /// pi0 = 0.8
    /// N = 1000
    /// reps = 300
    /// alpha = 0.05
    /// cutoff = c1                   # c1 | c2 | fixed:<int>
    /// fit = zigp, zip, gp, poisson
    /// seed = 42
    /// ```
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut null_family: Option<Family> = None;
        let (mut eta, mut lambda, mut theta) = (0.0, None, 0.0);
        let mut kind: Option<String> = None;
        let mut p: Option<f64> = None;
        let mut trials: Option<u64> = None;
        let mut pi0: Option<f64> = None;
        let mut rest: Vec<(usize, String, String)> = Vec::new();

        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected key = value, got {content:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("{key}: {v:?} is not a number"),
                })
            };
            match key {
                "null.family" => null_family = Some(value.parse()?),
                "null.eta" => eta = num(value)?,
                "null.lambda" => lambda = Some(num(value)?),
                "null.theta" => theta = num(value)?,
                "nonnull.kind" => kind = Some(value.to_ascii_lowercase()),
                "nonnull.p" => p = Some(num(value)?),
                "nonnull.n" => trials = Some(parse_int(value, key, lineno)?),
                "pi0" => pi0 = Some(num(value)?),
                _ => rest.push((lineno, key.to_string(), value.to_string())),
            }
        }

        let missing = |k: &str| Error::InvalidDesign(format!("missing key {k}"));
        let family = null_family.ok_or_else(|| missing("null.family"))?;
        let lambda = lambda.ok_or_else(|| missing("null.lambda"))?;
        let null = NullParams::new(family, eta, lambda, theta)
            .map_err(|e| Error::InvalidDesign(e.to_string()))?;
        let p = p.ok_or_else(|| missing("nonnull.p"))?;
        let nonnull = match kind.as_deref() {
            Some("geometric") => NonNull::Geometric { p },
            Some("binomial") => NonNull::Binomial {
                n_trials: trials.ok_or_else(|| missing("nonnull.n"))?,
                p,
            },
            Some(other) => {
                return Err(Error::InvalidDesign(format!(
                    "nonnull.kind must be geometric or binomial, got {other:?}"
                )))
            }
            None => return Err(missing("nonnull.kind")),
        };
        let mut design = SimDesign::new(null, nonnull, pi0.ok_or_else(|| missing("pi0"))?);

        for (lineno, key, value) in rest {
            let num = |v: &str| -> Result<f64> {
                v.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    msg: format!("{key}: {v:?} is not a number"),
                })
            };
            match key.as_str() {
                "N" => design.n_positions = parse_int(&value, &key, lineno)?,
                "reps" => design.reps = parse_int(&value, &key, lineno)?,
                "alpha" => design.alpha = num(&value)?,
                "seed" => design.seed = parse_int(&value, &key, lineno)?,
                "cutoff" => design.cutoff = value.parse()?,
                "fit" => {
                    design.fit_families = value
                        .split(',')
                        .map(|s| s.trim().parse::<Family>())
                        .collect::<Result<_>>()?;
                }
                "em.tol" => design.scan.em.tol = num(&value)?,
                "em.max_iter" => design.scan.em.max_iter = parse_int(&value, &key, lineno)? as usize,
                "truth_by_cutoff" => design.truth_by_cutoff = parse_bool(&value, &key, lineno)?,
                "c2_literal_argmin" => {
                    design.scan.c2_literal_argmin = parse_bool(&value, &key, lineno)?
                }
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        design.validate()?;
        Ok(design)
    }
}

fn parse_int(v: &str, key: &str, line: usize) -> Result<u64> {
    v.parse::<u64>().map_err(|_| Error::Parse {
        line,
        msg: format!("{key}: {v:?} is not a nonnegative integer"),
    })
}

fn parse_bool(v: &str, key: &str, line: usize) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse {
            line,
            msg: format!("{key}: {v:?} is not a boolean"),
        }),
    }
}

/// One simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub histogram: CountHistogram,
    /// Per-position counts in generation order.
    pub counts: Vec<u64>,
    /// `true` for positions drawn from the null component.
    pub is_null: Vec<bool>,
}

/// Inversion sampler for the null, with the zero-inflation drawn first.
struct NullSampler {
    eta: f64,
    /// Cumulative GP masses out to the horizon.
    cdf: Vec<f64>,
}

impl NullSampler {
    fn new(p: &NullParams) -> Self {
        let gp = NullParams {
            family: p.family,
            eta: 0.0,
            lambda: p.lambda,
            theta: p.theta,
        };
        let table = gp.pmf_table_to_horizon(0, HORIZON_TAIL, em::EmConfig::default().horizon_cap);
        let mut acc = 0.0;
        let cdf = table
            .into_iter()
            .map(|f| {
                acc += f;
                acc
            })
            .collect();
        Self { eta: p.eta, cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        if self.eta > 0.0 && rng.gen::<f64>() < self.eta {
            return 0;
        }
        let u: f64 = rng.gen();
        let idx = self.cdf.partition_point(|&c| c < u);
        idx.min(self.cdf.len() - 1) as u64
    }
}

enum NonNullSampler {
    Geometric(Geometric),
    Binomial(Binomial),
}

impl NonNullSampler {
    fn new(spec: &NonNull) -> Result<Self> {
        let bad = |e: String| Error::InvalidDesign(e);
        Ok(match *spec {
            NonNull::Geometric { p } => {
                NonNullSampler::Geometric(Geometric::new(p).map_err(|e| bad(e.to_string()))?)
            }
            NonNull::Binomial { n_trials, p } => {
                NonNullSampler::Binomial(Binomial::new(n_trials, p).map_err(|e| bad(e.to_string()))?)
            }
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            NonNullSampler::Geometric(d) => d.sample(rng),
            NonNullSampler::Binomial(d) => d.sample(rng),
        }
    }
}

struct Generator {
    null: NullSampler,
    nonnull: NonNullSampler,
    pi0: f64,
    n: u64,
    seed: u64,
}

impl Generator {
    fn new(design: &SimDesign) -> Result<Self> {
        design.validate()?;
        Ok(Self {
            null: NullSampler::new(&design.null),
            nonnull: NonNullSampler::new(&design.nonnull)?,
            pi0: design.pi0,
            n: design.n_positions,
            seed: design.seed,
        })
    }

    fn draw(&self, rep_index: u64) -> Replicate {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep_index);
        let mut counts = Vec::with_capacity(self.n as usize);
        let mut is_null = Vec::with_capacity(self.n as usize);
        for _ in 0..self.n {
            let null = self.pi0 >= 1.0 || rng.gen::<f64>() < self.pi0;
            let a = if null {
                self.null.sample(&mut rng)
            } else {
                self.nonnull.sample(&mut rng)
            };
            counts.push(a);
            is_null.push(null);
        }
        let histogram = CountHistogram::from_positions(&counts).expect("N >= 10");
        Replicate {
            histogram,
            counts,
            is_null,
        }
    }
}

/// Draw replication `rep_index`. Each replication has its own stream of the
/// design seed, so replications can be drawn in any order.
pub fn generate(design: &SimDesign, rep_index: u64) -> Result<Replicate> {
    Ok(Generator::new(design)?.draw(rep_index))
}

/// Per-replication confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// Rejected null positions.
    pub v: u64,
    /// Rejected positions.
    pub r: u64,
    /// Rejected non-null positions.
    pub s: u64,
    /// Accepted non-null positions.
    pub t: u64,
    pub fdp: f64,
    /// `1` when there are no non-null positions.
    pub tpr: f64,
}

/// Score a rejection set of count values against per-position truth.
pub fn fdp_tpr(rejected: &BTreeSet<u64>, counts: &[u64], is_null: &[bool]) -> Confusion {
    let (mut v, mut s, mut t) = (0, 0, 0);
    for (&a, &null) in counts.iter().zip(is_null) {
        match (rejected.contains(&a), null) {
            (true, true) => v += 1,
            (true, false) => s += 1,
            (false, false) => t += 1,
            (false, true) => {}
        }
    }
    let r = v + s;
    Confusion {
        v,
        r,
        s,
        t,
        fdp: if r > 0 { v as f64 / r as f64 } else { 0.0 },
        tpr: if s + t > 0 { s as f64 / (s + t) as f64 } else { 1.0 },
    }
}

/// Labels under the cut-off accounting: everything above the largest count
/// that lies below every non-null draw is non-null.
pub fn labels_by_cutoff(counts: &[u64], is_null: &[bool]) -> Vec<bool> {
    let smallest_alt = counts
        .iter()
        .zip(is_null)
        .filter(|(_, &null)| !null)
        .map(|(&a, _)| a)
        .min();
    match smallest_alt {
        // C_true = smallest non-null count - 1; null iff a <= C_true.
        Some(m) => counts.iter().map(|&a| a < m).collect(),
        None => vec![true; counts.len()],
    }
}

/// Outcome of one fitted family on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyOutcome {
    pub family: Family,
    pub cutoff: u64,
    pub d_n: Option<u64>,
    pub pi0: f64,
    pub params: NullParams,
    pub per_procedure: Vec<(Procedure, Confusion)>,
    /// Rejected count values per procedure.
    pub rejected: Vec<(Procedure, BTreeSet<u64>)>,
}

impl FamilyOutcome {
    pub fn confusion(&self, p: Procedure) -> Option<&Confusion> {
        self.per_procedure.iter().find(|(q, _)| *q == p).map(|(_, c)| c)
    }

    pub fn rejected(&self, p: Procedure) -> Option<&BTreeSet<u64>> {
        self.rejected.iter().find(|(q, _)| *q == p).map(|(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: u64,
    /// `Err` holds the failure message of a family that could not be fitted.
    pub per_family: Vec<std::result::Result<FamilyOutcome, (Family, String)>>,
}

/// Fit one family to a replicate and score every procedure.
pub fn evaluate(
    design: &SimDesign,
    family: Family,
    rep: &Replicate,
) -> Result<FamilyOutcome> {
    let fit = fit_for(design, family, &rep.histogram)?;
    let report = DecisionReport::build(&fit, &rep.histogram, design.alpha, &Procedure::ALL)?;
    let labels = if design.truth_by_cutoff {
        labels_by_cutoff(&rep.counts, &rep.is_null)
    } else {
        rep.is_null.clone()
    };
    let per_procedure = report
        .results
        .iter()
        .map(|r| (r.procedure, fdp_tpr(&r.rejected, &rep.counts, &labels)))
        .collect();
    Ok(FamilyOutcome {
        family,
        cutoff: fit.cutoff,
        d_n: report.screening.map(|s| s.d_n),
        pi0: fit.pi0,
        params: fit.params,
        per_procedure,
        rejected: report
            .results
            .into_iter()
            .map(|r| (r.procedure, r.rejected))
            .collect(),
    })
}

fn fit_for(design: &SimDesign, family: Family, h: &CountHistogram) -> Result<NullFit> {
    match design.cutoff {
        CutoffChoice::Scan(method) => {
            let scan = cutoff::select(method, family, h, &design.scan)?;
            Ok(scan.chosen_fit().clone())
        }
        CutoffChoice::Fixed(c) => em::fit_null(family, h, c.min(h.max_count()), &design.scan.em),
    }
}

/// Summary over replications for one (procedure, family) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub procedure: Procedure,
    pub family: Family,
    pub r_bar: f64,
    pub fdr: f64,
    pub tpr: f64,
    pub sd_r: f64,
    pub sd_fdr: f64,
    pub sd_tpr: f64,
    /// Replications that contributed.
    pub reps_ok: u64,
    /// Replications where the fit failed.
    pub reps_failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub design: SimDesign,
    pub rows: Vec<SummaryRow>,
    pub replicates: Vec<RepOutcome>,
}

impl SimResult {
    pub fn row(&self, procedure: Procedure, family: Family) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.procedure == procedure && r.family == family)
    }

    /// Table layout: one row per procedure and fitted family.
    pub fn write_tsv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "procedure\tfamily\tR\tFDR\tTPR\tsd_R\tsd_FDR\tsd_TPR\treps_ok\treps_failed"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{}\t{:.2}\t{:.5}\t{:.5}\t{:.2}\t{:.5}\t{:.5}\t{}\t{}",
                r.procedure,
                r.family,
                r.r_bar,
                r.fdr,
                r.tpr,
                r.sd_r,
                r.sd_fdr,
                r.sd_tpr,
                r.reps_ok,
                r.reps_failed
            )?;
        }
        Ok(())
    }
}

/// Run every replication of `design`. Replications are evaluated in parallel
/// and aggregated in replication order.
pub fn run(design: &SimDesign) -> Result<SimResult> {
    let generator = Generator::new(design)?;
    let replicates: Vec<RepOutcome> = (0..design.reps)
        .into_par_iter()
        .map(|rep| {
            let data = generator.draw(rep);
            let per_family = design
                .fit_families
                .iter()
                .map(|&family| {
                    evaluate(design, family, &data).map_err(|e| (family, e.to_string()))
                })
                .collect();
            RepOutcome { rep, per_family }
        })
        .collect();
    let rows = summarise(design, &replicates);
    Ok(SimResult {
        design: design.clone(),
        rows,
        replicates,
    })
}

fn summarise(design: &SimDesign, replicates: &[RepOutcome]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for procedure in [
        Procedure::TwoStage,
        Procedure::OneStage,
        Procedure::Storey,
        Procedure::Bh,
    ] {
        for (fi, &family) in design.fit_families.iter().enumerate() {
            let mut r = Vec::new();
            let mut fdp = Vec::new();
            let mut tpr = Vec::new();
            let mut failed = 0;
            for rep in replicates {
                match &rep.per_family[fi] {
                    Ok(o) => {
                        let c = o.confusion(procedure).expect("all procedures evaluated");
                        r.push(c.r as f64);
                        fdp.push(c.fdp);
                        tpr.push(c.tpr);
                    }
                    Err(_) => failed += 1,
                }
            }
            rows.push(SummaryRow {
                procedure,
                family,
                r_bar: mean(&r),
                fdr: mean(&fdp),
                tpr: mean(&tpr),
                sd_r: sd(&r),
                sd_fdr: sd(&fdp),
                sd_tpr: sd(&tpr),
                reps_ok: r.len() as u64,
                reps_failed: failed,
            });
        }
    }
    rows
}

fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}
