//! Worked examples checked against oracles written independently of the
//! library: a direct GP mass formula, grid-search likelihood maximisation and
//! generator labels.

use discrete_lfdr::cutoff::{self, ScanConfig};
use discrete_lfdr::em::{self, EmConfig};
use discrete_lfdr::lfdr::{self, Procedure};
use discrete_lfdr::screening;
use discrete_lfdr::sim::{self, NonNull, SimDesign};
use discrete_lfdr::{CountHistogram, Family, NullParams};

mod common;
use common::{grid, grid_best, grid_best_full, oracle_ln_pmf, small_support_cases};

fn zigp1() -> SimDesign {
    SimDesign::new(
        NullParams::zigp(0.8, 1.5, 0.3).unwrap(),
        NonNull::Geometric { p: 0.08 },
        0.8,
    )
}

#[test]
fn library_pmf_matches_oracle() {
    for &(eta, lambda, theta) in &[(0.8, 1.5, 0.3), (0.0, 3.0, 0.0), (0.4, 0.7, 0.6)] {
        let p = NullParams::zigp(eta, lambda, theta).unwrap();
        for j in 0..200 {
            let a = p.ln_pmf(j);
            let b = oracle_ln_pmf(eta, lambda, theta, j);
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "j={j}: {a} vs {b}");
        }
    }
}

#[test]
fn multinomial_cells_match_oracle() {
    let p = NullParams::zigp(0.8, 1.5, 0.3).unwrap();
    let got = em::multinomial_probs(&p, 3).unwrap();
    let f: Vec<f64> = (0..=3).map(|j| oracle_ln_pmf(0.8, 1.5, 0.3, j).exp()).collect();
    let total: f64 = f.iter().sum();
    for (g, x) in got.iter().zip(&f) {
        assert!((g - x / total).abs() < 1e-12);
    }
}

#[test]
fn generated_histogram_retallies() {
    let mut d = zigp1();
    d.seed = 7;
    let r = sim::generate(&d, 0).unwrap();
    assert_eq!(r.histogram.total(), 1000);
    assert_eq!(r.counts.len(), 1000);
    let mut tally = std::collections::BTreeMap::new();
    for &a in &r.counts {
        *tally.entry(a).or_insert(0u64) += 1;
    }
    let from_hist: std::collections::BTreeMap<u64, u64> = r.histogram.iter().collect();
    assert_eq!(tally, from_hist);
}

/// EM reaches the grid optimum on small supports with a cut-off inside it.
#[test]
fn em_matches_grid_oracle_on_small_support() {
    let cfg = EmConfig::default();
    for h in small_support_cases() {
        for c in [2u64, 3] {
            for family in Family::ALL {
                let fit = em::fit_null(family, &h, c, &cfg).unwrap();
                let oracle = grid_best_full(family, &h, c);
                assert!(
                    fit.loglik() >= oracle - 1e-6,
                    "{family} C={c}: EM {} < grid {oracle}",
                    fit.loglik()
                );
            }
        }
    }
}

/// Large pure-null ZIGP sample: estimates land near the truth and match a
/// fine local grid search.
#[test]
fn zigp_consistency_on_large_sample() {
    let mut d = SimDesign::new(NullParams::zigp(0.8, 1.5, 0.3).unwrap(), NonNull::Geometric { p: 0.5 }, 1.0);
    d.n_positions = 100_000;
    d.seed = 1;
    let h = sim::generate(&d, 0).unwrap().histogram;
    let k = h.max_count();
    let fit = em::fit_null(Family::Zigp, &h, k, &EmConfig::default()).unwrap();
    let p = fit.params;
    assert!((p.eta - 0.8).abs() < 0.05, "{p}");
    assert!((p.lambda - 1.5).abs() < 0.05, "{p}");
    assert!((p.theta - 0.3).abs() < 0.05, "{p}");

    let around = |x: f64| grid((x - 0.1).max(0.01), x + 0.1, 0.01);
    let oracle = grid_best(Family::Zigp, &h, k, around(0.8), around(1.5), around(0.3));
    assert!(fit.loglik() >= oracle - 1e-6, "EM {} < grid {oracle}", fit.loglik());

    let zip = em::fit_null(Family::Zip, &h, k, &EmConfig::default()).unwrap();
    assert!(zip.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

fn zip_binomial(seed: u64) -> CountHistogram {
    let mut d = SimDesign::new(
        NullParams::zip(0.4, 1.5).unwrap(),
        NonNull::Binomial { n_trials: 250, p: 0.2 },
        0.8,
    );
    d.seed = seed;
    sim::generate(&d, 0).unwrap().histogram
}

#[test]
fn scans_separate_binomial_signal() {
    let cfg = ScanConfig::default();
    let mut c2_not_above = 0;
    let seeds = 50;
    for seed in 0..seeds {
        let h = zip_binomial(seed);
        let c1 = cutoff::select_c1(Family::Zip, &h, &cfg).unwrap().chosen;
        let c2 = cutoff::select_c2(Family::Zip, &h, &cfg).unwrap().chosen;
        assert!(c1 < 30, "seed {seed}: C1 = {c1}");
        if c2 <= c1 {
            c2_not_above += 1;
        }
    }
    assert!(
        c2_not_above * 10 >= seeds * 6,
        "C2 <= C1 in only {c2_not_above}/{seeds} seeds"
    );
}

#[test]
fn fdr_not_below_alpha_up_to_cutoff() {
    let mut d = zigp1();
    let cfg = ScanConfig::default();
    for seed in 0..50 {
        d.seed = seed;
        let h = sim::generate(&d, 0).unwrap().histogram;
        let scan = cutoff::select_c1(Family::Zigp, &h, &cfg).unwrap();
        let fit = scan.chosen_fit();
        for (j, _) in h.iter_upto(fit.cutoff) {
            let fdr = lfdr::local_fdr(fit, &h, j).unwrap();
            assert!(fdr >= 0.05, "seed {seed}: fdr({j}) = {fdr} with C = {}", fit.cutoff);
        }
    }
}

/// Soft check: the maximum of a pure-null GP sample rarely reaches `D_N`.
#[test]
fn pure_null_maximum_rarely_reaches_threshold() {
    let params = NullParams::gp(1.5, 0.3).unwrap();
    let mut d = SimDesign::new(params, NonNull::Geometric { p: 0.5 }, 1.0);
    d.n_positions = 1000;
    let fit = em::NullFit {
        params,
        cutoff: 1,
        pi0: 1.0,
        loglik_trace: vec![0.0],
        converged: true,
        iterations: 0,
    };
    let seeds = 500;
    let mut hits = 0;
    for seed in 0..seeds {
        d.seed = seed;
        let h = sim::generate(&d, 0).unwrap().histogram;
        let t = screening::d_n(&fit, h.total(), 1, u64::MAX).unwrap();
        if h.max_count() >= t.d_n {
            hits += 1;
        }
    }
    let freq = hits as f64 / seeds as f64;
    eprintln!("pure-null GP(1.5, 0.3), N=1000: P(max >= D_N) = {freq:.3} over {seeds} seeds");
}

/// With no signal the rejection rate of a correctly specified fit stays near
/// the level.
#[test]
fn pure_null_design_controls_false_rejections() {
    let mut d = SimDesign::new(NullParams::poisson(2.0).unwrap(), NonNull::Geometric { p: 0.5 }, 1.0);
    d.reps = 300;
    d.fit_families = vec![Family::Poisson];
    let res = sim::run(&d).unwrap();
    for proc_ in [Procedure::OneStage, Procedure::Storey, Procedure::Bh] {
        let row = res.row(proc_, Family::Poisson).unwrap();
        assert_eq!(row.tpr, 1.0);
        assert!(
            row.fdr <= d.alpha + 3.0 * row.sd_fdr,
            "{proc_}: FDR {} sd {}",
            row.fdr,
            row.sd_fdr
        );
    }
}

/// The cut-off scan on the mixture of the worked example lands near the
/// largest count below every non-null draw. The geometric non-null puts mass
/// on zero, so that count is -1 and the window cannot contain a cut-off >= 1.
#[test]
#[ignore = "true cut-off is -1 under a geometric supported from zero"]
fn c1_recovers_true_cutoff() {
    let mut d = zigp1();
    d.seed = 3;
    let r = sim::generate(&d, 0).unwrap();
    let smallest_alt = r
        .counts
        .iter()
        .zip(&r.is_null)
        .filter(|(_, &null)| !null)
        .map(|(&a, _)| a)
        .min()
        .unwrap();
    let c_true = smallest_alt as i64 - 1;
    let chosen = cutoff::select_c1(Family::Zigp, &r.histogram, &ScanConfig::default())
        .unwrap()
        .chosen as i64;
    eprintln!("C_true = {c_true}, chosen = {chosen}");
    assert!((c_true - 1..=c_true + 2).contains(&chosen));
}
