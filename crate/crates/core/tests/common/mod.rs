//! Oracles shared by the integration tests, written from the definitions
//! without going through the library.

#![allow(dead_code)]

use discrete_lfdr::{CountHistogram, Family};
use statrs::function::factorial::ln_factorial;

/// `ln g(j)`, the GP mass written out from the definition.
pub fn oracle_ln_gp(lambda: f64, theta: f64, j: u64) -> f64 {
    let jf = j as f64;
    lambda.ln() + (jf - 1.0) * (lambda + theta * jf).ln() - lambda - theta * jf - ln_factorial(j)
}

/// `ln f0(j)` for ZIGP from the GP mass.
pub fn oracle_ln_pmf(eta: f64, lambda: f64, theta: f64, j: u64) -> f64 {
    if j == 0 {
        (eta + (1.0 - eta) * (-lambda).exp()).ln()
    } else {
        (1.0 - eta).ln() + oracle_ln_gp(lambda, theta, j)
    }
}

pub fn grid(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> + Clone {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(move |i| lo + i as f64 * step)
}

/// Best multinomial log-likelihood of the counts at or below `c` over the
/// lattice, truncated to `0..=c` unless `c` is the largest count. `eta` and
/// `theta` are held at zero for families without them.
pub fn grid_best(
    family: Family,
    h: &CountHistogram,
    c: u64,
    etas: impl Iterator<Item = f64> + Clone,
    lambdas: impl Iterator<Item = f64> + Clone,
    thetas: impl Iterator<Item = f64> + Clone,
) -> f64 {
    let etas: Vec<f64> = if family.has_zero_inflation() { etas.collect() } else { vec![0.0] };
    let thetas: Vec<f64> = if family.has_dispersion() { thetas.collect() } else { vec![0.0] };
    let truncated = c < h.max_count();
    let n0 = h.n_at(0) as f64;
    let n: u64 = h.iter_upto(c).map(|(_, n)| n).sum();
    let n_pos = n as f64 - n0;
    let constant =
        ln_factorial(n) - h.iter_upto(c).map(|(_, nj)| ln_factorial(nj)).sum::<f64>();
    let mut best = f64::NEG_INFINITY;
    for lambda in lambdas {
        for &theta in &thetas {
            // f0(0) = η + (1-η) g(0), f0(j) = (1-η) g(j), mass = η + (1-η) G.
            let g0 = (-lambda).exp();
            let mut big_g = g0;
            let mut sum_ln_g = 0.0;
            for j in 1..=c {
                let ln_g = oracle_ln_gp(lambda, theta, j);
                big_g += ln_g.exp();
                sum_ln_g += h.n_at(j) as f64 * ln_g;
            }
            for &eta in &etas {
                let mut ll = constant
                    + n0 * (eta + (1.0 - eta) * g0).ln()
                    + n_pos * (1.0 - eta).ln()
                    + sum_ln_g;
                if truncated {
                    ll -= n as f64 * (eta + (1.0 - eta) * big_g).ln();
                }
                if ll > best {
                    best = ll;
                }
            }
        }
    }
    best
}

/// Small-support instances for the grid comparison.
pub fn small_support_cases() -> Vec<CountHistogram> {
    [
        vec![(0, 120), (1, 40), (2, 25), (3, 9), (4, 4), (5, 2), (6, 1)],
        vec![(0, 300), (1, 20), (2, 30), (3, 12), (4, 3), (6, 2)],
        vec![(0, 60), (1, 55), (2, 30), (3, 20), (4, 8), (5, 3), (6, 6)],
    ]
    .into_iter()
    .map(|pairs| CountHistogram::from_pairs(pairs).unwrap())
    .collect()
}

/// Grid optimum over the full parameter box at step 0.005, `λ <= 8`.
pub fn grid_best_full(family: Family, h: &CountHistogram, c: u64) -> f64 {
    let step = 0.005;
    grid_best(
        family,
        h,
        c,
        grid(0.0, 0.995, step),
        grid(step, 8.0, step),
        grid(0.0, 0.995, step),
    )
}
