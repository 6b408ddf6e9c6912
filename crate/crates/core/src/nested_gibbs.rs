//! Gibbs sampler for the nested-error model `Y_ij = μ + v_i + e_ij` with
//! flat hyperpriors, and posterior summaries of the stratum population means.

use std::io::Write;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::sample::StratifiedSample;
use crate::stratified::batch_means_se;

/// Prior on the variance components, always together with a flat prior on `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariancePrior {
    /// `p(μ, σ_v², σ_e²) ∝ 1`.
    #[default]
    FlatVariance,
    /// Flat on the error precision `1/σ_e²` (so `p(σ_e²) ∝ σ_e⁻⁴`), flat on
    /// `σ_v²`.
    FlatPrecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    /// Grand mean, pooled within variance, moment estimate of `σ_v²`.
    #[default]
    DataMoments,
    /// Data moments pushed outward: `μ` shifted by two between-stratum
    /// standard deviations, both variances inflated tenfold.
    Overdispersed,
}

/// Variance components held fixed instead of sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedVariances {
    pub sigma2_v: f64,
    pub sigma2_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub total_draws: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub prior: VariancePrior,
    pub init: ChainInit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_variances: Option<FixedVariances>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            total_draws: 1050,
            burn_in: 50,
            seed: 0,
            prior: VariancePrior::FlatVariance,
            init: ChainInit::DataMoments,
            fixed_variances: None,
        }
    }
}

impl ChainConfig {
    pub fn retained(&self) -> usize {
        self.total_draws - self.burn_in
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_draws <= self.burn_in + 1 {
            return Err(Error::InvalidInput(format!(
                "total_draws ({}) must exceed burn_in ({}) by at least 2",
                self.total_draws, self.burn_in
            )));
        }
        if let Some(f) = self.fixed_variances {
            if !(f.sigma2_v > 0.0 && f.sigma2_e > 0.0) {
                return Err(Error::InvalidInput("fixed variances must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedErrorState {
    pub theta: Vec<f64>,
    pub mu: f64,
    pub sigma2_v: f64,
    pub sigma2_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumPosterior {
    pub ybar: f64,
    pub n: usize,
    pub population_size: usize,
    pub mean_theta: f64,
    pub var_theta: f64,
    /// Batch-means standard error of `mean_theta`.
    pub mcse_theta: f64,
    /// Rao-Blackwellized `E[Ȳ_m | y_s]`.
    pub mean_pop: f64,
    pub var_pop: f64,
    /// First-half minus second-half mean of `θ_m`, in standard-error units.
    pub split_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub strata: Vec<StratumPosterior>,
    pub mean_mu: f64,
    pub mean_sigma2_v: f64,
    pub mean_sigma2_e: f64,
    /// Retained draws, one row per iteration.
    pub theta_draws: Vec<Vec<f64>>,
    pub sigma2_e_draws: Vec<f64>,
    pub sigma2_v_draws: Vec<f64>,
    pub mu_draws: Vec<f64>,
}

impl PosteriorSummary {
    pub fn retained(&self) -> usize {
        self.theta_draws.len()
    }

    /// Largest absolute split-half z statistic over strata.
    pub fn max_split_z(&self) -> f64 {
        self.strata.iter().map(|s| s.split_z.abs()).fold(0.0, f64::max)
    }
}

fn check_sample(sample: &StratifiedSample, cfg: &ChainConfig) -> Result<()> {
    let m = sample.m();
    if cfg.fixed_variances.is_none() {
        // With a flat prior on σ_v² the marginal posterior decays like
        // (σ_v²)^{-(m-1)/2}, which is integrable only for m ≥ 4.
        if m < 4 {
            return Err(Error::Propriety(format!(
                "a flat prior on σ_v² needs at least 4 strata, got {m}"
            )));
        }
        if sample.n_total() < m + 2 {
            return Err(Error::Propriety(format!(
                "need n_T ≥ m + 2 observations, got n_T = {} with m = {m}",
                sample.n_total()
            )));
        }
        let scale = sample
            .strata()
            .iter()
            .flat_map(|s| s.values.iter())
            .map(|y| y * y)
            .sum::<f64>()
            .max(1.0);
        if sample.within_ss() <= 1e-14 * scale {
            return Err(Error::Singular("within-stratum residual sum of squares is zero".into()));
        }
    }
    Ok(())
}

fn initial_state(sample: &StratifiedSample, cfg: &ChainConfig) -> NestedErrorState {
    let means = sample.means();
    let m = means.len() as f64;
    let mu = sample.grand_mean();
    let df = (sample.n_total() as f64 - m).max(1.0);
    let pooled = (sample.within_ss() / df).max(1e-8);
    let mean_of_means = means.iter().sum::<f64>() / m;
    let between = means.iter().map(|y| (y - mean_of_means).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
    let nbar = sample.n_total() as f64 / m;
    let sigma2_v = (between - pooled / nbar).max(0.01);
    let (mu, sigma2_v, sigma2_e) = match cfg.init {
        ChainInit::DataMoments => (mu, sigma2_v, pooled),
        ChainInit::Overdispersed => (mu + 2.0 * between.sqrt(), 10.0 * sigma2_v, 10.0 * pooled),
    };
    let (sigma2_v, sigma2_e) = match cfg.fixed_variances {
        Some(f) => (f.sigma2_v, f.sigma2_e),
        None => (sigma2_v, sigma2_e),
    };
    NestedErrorState {
        theta: means,
        mu,
        sigma2_v,
        sigma2_e,
    }
}

fn scaled_inv_chi2<R: Rng + ?Sized>(rng: &mut R, ss: f64, df: f64) -> f64 {
    let chi: f64 = ChiSquared::new(df).expect("positive degrees of freedom").sample(rng);
    ss / chi
}

/// Run the sampler and summarize the retained draws.
///
/// Full conditionals:
/// `θ_i | · ~ N((n_iȳ_i/σ_e² + μ/σ_v²)/(n_i/σ_e² + 1/σ_v²), 1/(n_i/σ_e² + 1/σ_v²))`,
/// `μ | · ~ N(θ̄, σ_v²/m)`, and scaled inverse-χ² updates for `σ_e²` (from
/// `ΣΣ(y_ij − θ_i)²`) and `σ_v²` (from `Σ(θ_i − μ)²`).
pub fn gibbs_run(sample: &StratifiedSample, cfg: &ChainConfig) -> Result<PosteriorSummary> {
    cfg.validate()?;
    check_sample(sample, cfg)?;
    let m = sample.m();
    let mf = m as f64;
    let n: Vec<f64> = sample.strata().iter().map(|s| s.n() as f64).collect();
    let ybar = sample.means();
    let within = sample.within_ss();
    let n_total = sample.n_total() as f64;
    let (df_e, df_v) = match cfg.prior {
        VariancePrior::FlatVariance => (n_total - 2.0, mf - 2.0),
        VariancePrior::FlatPrecision => (n_total + 2.0, mf - 2.0),
    };

    let mut rng = stream(cfg.seed, &[0x6769_6262]);
    let mut state = initial_state(sample, cfg);
    let retained = cfg.retained();
    let mut theta_draws = Vec::with_capacity(retained);
    let mut sigma2_e_draws = Vec::with_capacity(retained);
    let mut sigma2_v_draws = Vec::with_capacity(retained);
    let mut mu_draws = Vec::with_capacity(retained);

    for iter in 0..cfg.total_draws {
        for i in 0..m {
            let prec = n[i] / state.sigma2_e + 1.0 / state.sigma2_v;
            let mean = (n[i] * ybar[i] / state.sigma2_e + state.mu / state.sigma2_v) / prec;
            let z: f64 = StandardNormal.sample(&mut rng);
            state.theta[i] = mean + z / prec.sqrt();
        }
        let theta_bar = state.theta.iter().sum::<f64>() / mf;
        let z: f64 = StandardNormal.sample(&mut rng);
        state.mu = theta_bar + z * (state.sigma2_v / mf).sqrt();
        if cfg.fixed_variances.is_none() {
            let sse = within
                + n.iter()
                    .zip(&ybar)
                    .zip(&state.theta)
                    .map(|((n, y), t)| n * (y - t) * (y - t))
                    .sum::<f64>();
            state.sigma2_e = scaled_inv_chi2(&mut rng, sse, df_e);
            let ssv: f64 = state.theta.iter().map(|t| (t - state.mu).powi(2)).sum();
            state.sigma2_v = scaled_inv_chi2(&mut rng, ssv, df_v).max(f64::MIN_POSITIVE);
        }
        if iter >= cfg.burn_in {
            theta_draws.push(state.theta.clone());
            sigma2_e_draws.push(state.sigma2_e);
            sigma2_v_draws.push(state.sigma2_v);
            mu_draws.push(state.mu);
        }
    }

    let mean_sigma2_e = mean(&sigma2_e_draws);
    let strata = (0..m)
        .map(|i| {
            let col: Vec<f64> = theta_draws.iter().map(|row| row[i]).collect();
            let mean_theta = mean(&col);
            let var_theta = variance(&col, mean_theta);
            let mcse = batch_means_se(&col);
            let half = col.len() / 2;
            let (a, b) = col.split_at(half);
            let se = (batch_means_se(a).powi(2) + batch_means_se(b).powi(2)).sqrt();
            let split_z = if se > 0.0 { (mean(a) - mean(b)) / se } else { 0.0 };
            let s = sample.stratum(i);
            let (mean_pop, var_pop) =
                rao_blackwell(s.mean(), s.n(), s.population_size, mean_theta, var_theta, mean_sigma2_e);
            StratumPosterior {
                ybar: s.mean(),
                n: s.n(),
                population_size: s.population_size,
                mean_theta,
                var_theta,
                mcse_theta: mcse,
                mean_pop,
                var_pop,
                split_z,
            }
        })
        .collect();

    Ok(PosteriorSummary {
        strata,
        mean_mu: mean(&mu_draws),
        mean_sigma2_v: mean(&sigma2_v_draws),
        mean_sigma2_e,
        theta_draws,
        sigma2_e_draws,
        sigma2_v_draws,
        mu_draws,
    })
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn variance(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn rao_blackwell(
    ybar: f64,
    n: usize,
    population_size: usize,
    mean_theta: f64,
    var_theta: f64,
    mean_sigma2_e: f64,
) -> (f64, f64) {
    if population_size <= n {
        return (ybar, 0.0);
    }
    let f = n as f64 / population_size as f64;
    let unobserved = (population_size - n) as f64;
    let mean = f * ybar + (1.0 - f) * mean_theta;
    let var = (1.0 - f).powi(2) * (var_theta + mean_sigma2_e / unobserved);
    (mean, var)
}

/// Rao-Blackwellized posterior mean and variance of the population mean of
/// stratum `m`: `f ȳ_m + (1 − f) E[θ_m | y_s]` and
/// `(1 − f)² [V(θ_m | y_s) + E(σ_e² | y_s)/(N_m − n_m)]`.
pub fn population_mean_posterior(
    summary: &PosteriorSummary,
    sample: &StratifiedSample,
    m: usize,
) -> Result<(f64, f64)> {
    sample.check_index(m)?;
    let s = sample.stratum(m);
    let p = &summary.strata[m];
    Ok(rao_blackwell(
        s.mean(),
        s.n(),
        s.population_size,
        p.mean_theta,
        p.var_theta,
        summary.mean_sigma2_e,
    ))
}

/// Draws of `Ȳ_m` by composition: each retained iteration contributes
/// `f ȳ_m + (1 − f)(θ_m + ē)` with `ē ~ N(0, σ_e²/(N_m − n_m))`.
pub fn composition_draws(
    summary: &PosteriorSummary,
    sample: &StratifiedSample,
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    sample.check_index(m)?;
    let s = sample.stratum(m);
    if s.population_size <= s.n() {
        return Ok(vec![s.mean(); summary.retained()]);
    }
    let f = s.fraction();
    let unobserved = (s.population_size - s.n()) as f64;
    let mut rng = stream(seed, &[0x636f_6d70, m as u64]);
    Ok(summary
        .theta_draws
        .iter()
        .zip(&summary.sigma2_e_draws)
        .map(|(row, s2)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            f * s.mean() + (1.0 - f) * (row[m] + z * (s2 / unobserved).sqrt())
        })
        .collect())
}

/// One row per stratum: `stratum,n,ybar,mean_theta,var_theta,mcse_theta,yhat_hb,postvar,split_z`.
pub fn write_summary_csv<W: Write>(summary: &PosteriorSummary, labels: Option<&[String]>, mut out: W) -> Result<()> {
    writeln!(
        out,
        "stratum,n,ybar,mean_theta,var_theta,mcse_theta,yhat_hb,postvar,split_z"
    )?;
    for (i, p) in summary.strata.iter().enumerate() {
        let label = labels.map_or_else(|| i.to_string(), |l| l[i].clone());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            label, p.n, p.ybar, p.mean_theta, p.var_theta, p.mcse_theta, p.mean_pop, p.var_pop, p.split_z
        )?;
    }
    Ok(())
}
