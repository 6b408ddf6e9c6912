//! Self-checks against closed forms and brute-force oracles, run by
//! `dc-hb verify`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::Result;
use crate::expfam::{ExpFamModel, Link, PriorSpec};
use crate::nested_gibbs::{gibbs_run, ChainConfig, FixedVariances};
use crate::posterior_limit::{posterior_mean_psi_prime, SinglePopSample};
use crate::quadrature::{pairwise_sum, QuadratureConfig};
use crate::rng::stream;
use crate::sample::StratifiedSample;
use crate::stratified::tail_ratio_check;
use crate::survey_design::{
    enumerate_designs, hansen_hurwitz_mean, ppswr_sample, Draw, FinitePopulation, PopulationStratum,
};
use crate::uncertainty::{h1m, reml_fit, H1Variant, VarianceComponents};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

pub fn all_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.passed)
}

fn toy_population() -> Result<FinitePopulation> {
    FinitePopulation::new(vec![PopulationStratum::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0])?])
}

fn hh_over_designs(pop: &FinitePopulation, n: usize) -> Result<(f64, f64, f64)> {
    let s = pop.stratum(0)?;
    let designs = enumerate_designs(pop, 0, n)?;
    let mut total_p = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for (units, p) in &designs {
        let draws: Vec<Draw> = units
            .iter()
            .map(|&j| Draw {
                unit: j,
                value: s.values()[j],
                prob: s.probs()[j],
            })
            .collect();
        let est = hansen_hurwitz_mean(&draws, s.len())?;
        total_p += p;
        mean += p * est;
        second += p * est * est;
    }
    Ok((total_p, mean, second - mean * mean))
}

/// Exact design checks on enumerable populations plus a seeded frequency test.
pub fn design_checks() -> Vec<Check> {
    let mut out = Vec::new();
    out.push(Check::from_result(
        "hansen-hurwitz unbiased (N=3, n=2)",
        (|| {
            let pop = toy_population()?;
            let (total, mean, _) = hh_over_designs(&pop, 2)?;
            let err = (mean - 2.0).abs().max((total - 1.0).abs());
            Ok((err < 1e-12, format!("E_d = {mean}, Σp = {total}")))
        })(),
    ));
    out.push(Check::from_result(
        "hansen-hurwitz variance (N=3, n=2)",
        (|| {
            let pop = FinitePopulation::new(vec![PopulationStratum::new(vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0])?])?;
            let (_, _, var) = hh_over_designs(&pop, 2)?;
            let expected = pop.stratum(0)?.hansen_hurwitz_variance(2);
            Ok((
                expected > 0.0 && (var - expected).abs() < 1e-12,
                format!("{var} vs {expected}"),
            ))
        })(),
    ));
    out.push(Check::from_result(
        "design probabilities sum to one (N=5, n=3)",
        (|| {
            let pop = FinitePopulation::new(vec![PopulationStratum::new(
                vec![0.5, 1.0, 4.0, 2.0, 3.0],
                vec![0.3, 1.7, 2.2, 0.9, 1.1],
            )?])?;
            let designs = enumerate_designs(&pop, 0, 3)?;
            let total: f64 = designs.iter().map(|(_, p)| p).sum();
            Ok((
                designs.len() == 125 && (total - 1.0).abs() < 1e-12,
                format!("{} designs, Σp = {total}", designs.len()),
            ))
        })(),
    ));
    out.push(Check::from_result(
        "self-weighting reduces to the sample mean",
        (|| {
            let pop = FinitePopulation::new(vec![PopulationStratum::new(vec![1.5, 2.0, 7.0, 3.25], vec![1.0; 4])?])?;
            let draws = ppswr_sample(&pop, 0, 9, 11)?;
            let hh = hansen_hurwitz_mean(&draws.draws, 4)?;
            Ok((hh == draws.mean(), format!("{hh} vs {}", draws.mean())))
        })(),
    ));
    out.push(Check::from_result(
        "PPSWR frequencies (sizes 1, 2, 3)",
        (|| {
            let pop = toy_population()?;
            let n = 100_000;
            let draws = ppswr_sample(&pop, 0, n, 5)?;
            let mut counts = [0usize; 3];
            for d in &draws.draws {
                counts[d.unit] += 1;
            }
            let ok = counts.iter().zip([1.0, 2.0, 3.0]).all(|(&c, w)| {
                let p = w / 6.0;
                let sd = (n as f64 * p * (1.0 - p)).sqrt();
                (c as f64 - n as f64 * p).abs() < 3.0 * sd
            });
            Ok((ok, format!("counts {counts:?}")))
        })(),
    ));
    out
}

fn conjugate_mean(n: f64, ybar: f64, beta: f64, r: f64, s2: f64) -> f64 {
    (n * ybar / s2 + r * beta) / (n / s2 + r)
}

/// Monte Carlo estimate of `E(η̂_m − θ_m)²` under the one-way model with
/// known variances and GLS `μ̂`, with its standard error.
pub fn h1m_monte_carlo(sizes: &[usize], sigma2_v: f64, sigma2_e: f64, m: usize, draws: usize, seed: u64) -> (f64, f64) {
    let chunks = 64;
    let per = draws.div_ceil(chunks);
    let phi: Vec<f64> = sizes.iter().map(|&n| 1.0 / (sigma2_v + sigma2_e / n as f64)).collect();
    let sum_phi: f64 = phi.iter().sum();
    let gamma = sigma2_v * phi[m];
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(seed, &[0x6831, c as u64]);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut theta = vec![0.0; sizes.len()];
            let mut ybar = vec![0.0; sizes.len()];
            for _ in 0..per {
                for (i, &n) in sizes.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let e: f64 = StandardNormal.sample(&mut rng);
                    theta[i] = sigma2_v.sqrt() * z;
                    ybar[i] = theta[i] + (sigma2_e / n as f64).sqrt() * e;
                }
                let mu_hat = phi.iter().zip(&ybar).map(|(p, y)| p * y).sum::<f64>() / sum_phi;
                let eta = gamma * ybar[m] + (1.0 - gamma) * mu_hat;
                let d = (eta - theta[m]).powi(2);
                s1 += d;
                s2 += d * d;
            }
            (s1, s2)
        })
        .collect();
    let total = (per * chunks) as f64;
    let s1 = pairwise_sum(&partial.iter().map(|p| p.0).collect::<Vec<_>>());
    let s2 = pairwise_sum(&partial.iter().map(|p| p.1).collect::<Vec<_>>());
    let mean = s1 / total;
    let var = (s2 / total - mean * mean).max(0.0);
    (mean, (var / total).sqrt())
}

/// Numerical routines against closed forms and Monte Carlo oracles.
pub fn oracle_checks() -> Vec<Check> {
    let cfg = QuadratureConfig::default();
    let mut out = Vec::new();
    out.push(Check::from_result(
        "flat prior: bernoulli and poisson means equal ȳ",
        (|| {
            let b = posterior_mean_psi_prime(
                &ExpFamModel::bernoulli(),
                &Link::Identity,
                &PriorSpec::flat(),
                &SinglePopSample::new(10, 0.3, 100)?,
                &cfg,
            )?;
            let p = posterior_mean_psi_prime(
                &ExpFamModel::poisson(),
                &Link::Identity,
                &PriorSpec::flat(),
                &SinglePopSample::new(10, 2.0, 100)?,
                &cfg,
            )?;
            let err = (b - 0.3).abs().max((p - 2.0).abs());
            Ok((err < 1e-8, format!("bernoulli {b}, poisson {p}")))
        })(),
    ));
    out.push(Check::from_result(
        "gaussian conjugate grid (50 cases)",
        (|| {
            let mut worst: f64 = 0.0;
            for k in 0..50 {
                let n = [1, 3, 10, 40, 200][k % 5];
                let ybar = -2.0 + 0.37 * k as f64;
                let beta = [0.0, 1.0, -3.0, 5.0, 0.5][(k / 5) % 5];
                let r = [0.1, 1.0, 4.0][k % 3];
                let s2 = [0.25, 1.0, 9.0][(k / 3) % 3];
                let got = posterior_mean_psi_prime(
                    &ExpFamModel::gaussian(s2),
                    &Link::Identity,
                    &PriorSpec::normal(beta, r),
                    &SinglePopSample::new(n, ybar, 10 * n)?,
                    &cfg,
                )?;
                worst = worst.max((got - conjugate_mean(n as f64, ybar, beta, r, s2)).abs());
            }
            Ok((worst < 1e-8, format!("max error {worst:e}")))
        })(),
    ));
    out.push(Check::from_result(
        "tail ratio n=2 closed form",
        (|| {
            let anti = |x: f64| {
                let u = 2f64.sqrt() * x;
                (u / (2.0 * (u * u + 1.0)) + 0.5 * u.atan()) / 2f64.sqrt()
            };
            let total = std::f64::consts::FRAC_PI_2 / 2.0 / 2f64.sqrt();
            let got = tail_ratio_check(2, 1.0, 0.7)?;
            let expected = (total - anti(0.7)) / total;
            Ok(((got - expected).abs() < 1e-8, format!("{got} vs {expected}")))
        })(),
    ));
    out.push(Check::from_result(
        "balanced REML equals ANOVA",
        (|| {
            let groups = vec![
                vec![3.1, 2.2, 4.0, 3.3],
                vec![5.2, 6.1, 5.5, 4.9],
                vec![1.0, 2.4, 1.9, 1.1],
                vec![3.9, 4.4, 3.0, 4.2],
                vec![6.6, 5.1, 6.0, 7.2],
            ];
            let s = StratifiedSample::from_values(30, groups.clone())?;
            let vc = reml_fit(&s)?;
            let means: Vec<f64> = groups.iter().map(|g| g.iter().sum::<f64>() / 4.0).collect();
            let grand = means.iter().sum::<f64>() / 5.0;
            let msw = groups
                .iter()
                .zip(&means)
                .map(|(g, mu)| g.iter().map(|y| (y - mu).powi(2)).sum::<f64>())
                .sum::<f64>()
                / 15.0;
            let msb = 4.0 * means.iter().map(|y| (y - grand).powi(2)).sum::<f64>() / 4.0;
            let sv = ((msb - msw) / 4.0).max(0.0);
            let err = (vc.sigma2_v - sv).abs().max((vc.sigma2_e - msw).abs());
            Ok((
                err < 1e-6,
                format!("REML ({}, {}) vs ANOVA ({sv}, {msw})", vc.sigma2_v, vc.sigma2_e),
            ))
        })(),
    ));
    out.push(Check::from_result(
        "h1m against Monte Carlo",
        (|| {
            let s = StratifiedSample::from_values(10, vec![vec![1.0], vec![2.0], vec![3.0]])?;
            let vc = VarianceComponents::fixed(&s, 1.0, 1.0)?;
            let formula = h1m(&vc, &s, 2, H1Variant::WithMeanTerm)?;
            let (mc, se) = h1m_monte_carlo(&[1, 1, 1], 1.0, 1.0, 2, 200_000, 1);
            Ok(((formula - mc).abs() < 3.0 * se, format!("{formula} vs {mc} ± {se}")))
        })(),
    ));
    out.push(Check::from_result(
        "fixed-variance Gibbs against conjugate posterior",
        (|| {
            let s = StratifiedSample::from_values(
                50,
                vec![vec![1.0, 2.0, 1.5], vec![3.0, 2.5], vec![0.0, 0.4, 0.2, 0.9], vec![2.2]],
            )?;
            let (sv, se) = (0.8, 0.5);
            let cfg = ChainConfig {
                total_draws: 20_050,
                burn_in: 50,
                seed: 2,
                fixed_variances: Some(FixedVariances {
                    sigma2_v: sv,
                    sigma2_e: se,
                }),
                ..Default::default()
            };
            let summary = gibbs_run(&s, &cfg)?;
            let vc = VarianceComponents::fixed(&s, sv, se)?;
            let mut worst: f64 = 0.0;
            for p in &summary.strata {
                let g = vc.gamma(p.n);
                let mean = g * p.ybar + (1.0 - g) * vc.mu;
                worst = worst.max((p.mean_theta - mean).abs() / p.mcse_theta);
            }
            Ok((worst < 3.0, format!("max |error|/MCSE = {worst:.2}")))
        })(),
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in design_checks().into_iter().chain(oracle_checks()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
