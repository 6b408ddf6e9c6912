use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_log_weighted, QuadratureConfig};
use crate::sample::StratifiedSample;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    pub draws: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            draws: 100_000,
            burn_in: 5_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseIIMethod {
    /// Nested adaptive quadrature over all `m` coordinates (`m ≤ 3`).
    Grid(QuadratureConfig),
    /// Componentwise random-walk Metropolis, steps tuned during burn-in only.
    Mcmc(McmcConfig),
}

impl Default for CaseIIMethod {
    fn default() -> Self {
        CaseIIMethod::Grid(QuadratureConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseIIEstimate {
    pub mean: f64,
    /// Batch-means Monte Carlo standard error (MCMC only).
    pub mcse: Option<f64>,
    /// Difference of first- and second-half chain means, in units of its
    /// standard error (MCMC only). Values beyond ~3 flag non-convergence.
    pub split_z: Option<f64>,
    pub acceptance: Option<Vec<f64>>,
}

/// Sufficient statistics for the case (ii) density.
struct Suff {
    n: Vec<f64>,
    ybar: Vec<f64>,
    within: f64,
    power: f64,
    exponent: f64,
    a: f64,
}

impl Suff {
    fn new(sample: &StratifiedSample, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidInput("a and b must be positive".into()));
        }
        let m = sample.m() as f64;
        Ok(Self {
            n: sample.strata().iter().map(|s| s.n() as f64).collect(),
            ybar: sample.means(),
            within: sample.within_ss(),
            power: sample.n_total() as f64 / 2.0 + 1.0,
            exponent: 0.5 * (b + m - 1.0),
            a,
        })
    }

    fn residual_ss(&self, theta: &[f64]) -> f64 {
        self.within
            + self
                .n
                .iter()
                .zip(&self.ybar)
                .zip(theta)
                .map(|((n, y), t)| n * (y - t) * (y - t))
                .sum::<f64>()
    }

    fn log_density(&self, theta: &[f64]) -> Result<f64> {
        let ss = self.residual_ss(theta);
        if ss <= 0.0 {
            return Err(Error::Singular("residual sum of squares is zero at this point".into()));
        }
        let mean = theta.iter().sum::<f64>() / theta.len() as f64;
        let disp: f64 = theta.iter().map(|t| (t - mean) * (t - mean)).sum();
        Ok(-self.power * ss.ln() - self.exponent * (self.a + disp).ln())
    }

    fn spread(&self, i: usize) -> f64 {
        let total_n: f64 = self.n.iter().sum();
        let s2 = (self.within / total_n).max(1e-12);
        (s2 / self.n[i]).sqrt()
    }
}

/// Log of the marginal posterior of `θ` under normal data with
/// `(β, r, 1/ϕ)` integrated out, up to an additive constant:
/// `−(n_T/2 + 1) log Σ(y_ij − θ_i)² − ((b + m − 1)/2) log[a + Σ(θ_i − θ̄)²]`.
pub fn case_ii_log_density(sample: &StratifiedSample, a: f64, b: f64, theta: &[f64]) -> Result<f64> {
    if theta.len() != sample.m() {
        return Err(Error::InvalidInput(format!(
            "θ has {} components, sample has {} strata",
            theta.len(),
            sample.m()
        )));
    }
    Suff::new(sample, a, b)?.log_density(theta)
}

/// Posterior mean of `θ_m` (the last stratum) under the case (ii) density.
pub fn case_ii_posterior_mean(
    sample: &StratifiedSample,
    a: f64,
    b: f64,
    method: &CaseIIMethod,
) -> Result<CaseIIEstimate> {
    let suff = Suff::new(sample, a, b)?;
    if suff.within <= 0.0 {
        return Err(Error::Singular(
            "all strata have zero within-stratum variation; the density is not integrable".into(),
        ));
    }
    match method {
        CaseIIMethod::Grid(cfg) => {
            if sample.m() > 3 {
                return Err(Error::Unsupported(format!(
                    "grid integration handles m ≤ 3, got m = {}",
                    sample.m()
                )));
            }
            let mean = grid_mean(&suff, cfg)?;
            Ok(CaseIIEstimate {
                mean,
                mcse: None,
                split_z: None,
                acceptance: None,
            })
        }
        CaseIIMethod::Mcmc(cfg) => mcmc_mean(&suff, cfg),
    }
}

/// Case (ii) posterior mean for stratum `target`.
pub fn case_ii_posterior_mean_for(
    sample: &StratifiedSample,
    a: f64,
    b: f64,
    method: &CaseIIMethod,
    target: usize,
) -> Result<CaseIIEstimate> {
    sample.check_index(target)?;
    let mut order: Vec<usize> = (0..sample.m()).filter(|&i| i != target).collect();
    order.push(target);
    case_ii_posterior_mean(&sample.permuted(&order), a, b, method)
}

fn grid_mean(suff: &Suff, cfg: &QuadratureConfig) -> Result<f64> {
    let m = suff.n.len();
    let last = m - 1;
    let err = RefCell::new(None);
    let r = integrate_log_weighted::<2, _>(
        |t| match log_marginal(suff, &mut vec![], t, &cfg.relaxed(0.01)) {
            Ok(v) => (v, [t, 1.0]),
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                (f64::NAN, [0.0, 0.0])
            }
        },
        suff.ybar[last],
        suff.spread(last),
        cfg,
    )?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(r.ratio(0, 1))
}

/// Log of the density integrated over `θ_k, …, θ_{m−2}` with the leading
/// coordinates in `fixed` and `θ_m = theta_m`.
fn log_marginal(suff: &Suff, fixed: &mut Vec<f64>, theta_m: f64, cfg: &QuadratureConfig) -> Result<f64> {
    let m = suff.n.len();
    let k = fixed.len();
    if k == m - 1 {
        fixed.push(theta_m);
        let v = suff.log_density(fixed);
        fixed.pop();
        return v;
    }
    let err = RefCell::new(None);
    let r = integrate_log_weighted::<1, _>(
        |t| {
            let mut buf = fixed.clone();
            buf.push(t);
            match log_marginal(suff, &mut buf, theta_m, cfg) {
                Ok(v) => (v, [1.0]),
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    (f64::NAN, [1.0])
                }
            }
        },
        suff.ybar[k],
        suff.spread(k),
        cfg,
    )?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(r.ln(0))
}

fn mcmc_mean(suff: &Suff, cfg: &McmcConfig) -> Result<CaseIIEstimate> {
    if cfg.draws < 100 {
        return Err(Error::InvalidInput("MCMC needs at least 100 retained draws".into()));
    }
    let m = suff.n.len();
    let last = m - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = suff.ybar.clone();
    let mut current = suff.log_density(&theta)?;
    let mut log_step: Vec<f64> = (0..m).map(|i| (2.4 * suff.spread(i)).ln()).collect();
    let mut accepted = vec![0usize; m];
    let mut window_acc = vec![0usize; m];
    let mut draws = Vec::with_capacity(cfg.draws);
    const TARGET: f64 = 0.44;
    const WINDOW: usize = 50;

    for iter in 0..cfg.burn_in + cfg.draws {
        for i in 0..m {
            let old = theta[i];
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            theta[i] = old + log_step[i].exp() * z;
            let proposal = match suff.log_density(&theta) {
                Ok(v) => v,
                Err(_) => f64::NEG_INFINITY,
            };
            let u: f64 = rng.gen();
            if u.ln() < proposal - current {
                current = proposal;
                if iter >= cfg.burn_in {
                    accepted[i] += 1;
                } else {
                    window_acc[i] += 1;
                }
            } else {
                theta[i] = old;
            }
        }
        if iter < cfg.burn_in && (iter + 1) % WINDOW == 0 {
            let round = ((iter + 1) / WINDOW) as f64;
            for i in 0..m {
                let rate = window_acc[i] as f64 / WINDOW as f64;
                log_step[i] += (rate - TARGET) / round.sqrt();
                window_acc[i] = 0;
            }
        }
        if iter >= cfg.burn_in {
            draws.push(theta[last]);
        }
    }

    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let mcse = batch_means_se(&draws);
    let half = draws.len() / 2;
    let (first, second) = draws.split_at(half);
    let m1 = first.iter().sum::<f64>() / first.len() as f64;
    let m2 = second.iter().sum::<f64>() / second.len() as f64;
    let se = (batch_means_se(first).powi(2) + batch_means_se(second).powi(2)).sqrt();
    Ok(CaseIIEstimate {
        mean,
        mcse: Some(mcse),
        split_z: Some((m1 - m2) / se),
        acceptance: Some(accepted.iter().map(|&a| a as f64 / cfg.draws as f64).collect()),
    })
}

/// Batch-means standard error with `⌊√n⌋` batches.
pub(crate) fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    let batches = ((n as f64).sqrt() as usize).max(2);
    let size = n / batches;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_density_example() {
        let s = StratifiedSample::from_values(10, vec![vec![0.0, 2.0], vec![1.0, 3.0]]).unwrap();
        let v = case_ii_log_density(&s, 1.0, 1.0, &[1.0, 2.0]).unwrap();
        // n_T = 4: exponent n_T/2 + 1 = 3.
        let expected = -3.0 * 4f64.ln() - 1.0 * (1.0f64 + 0.25 + 0.25).ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn zero_residuals_are_singular() {
        let s = StratifiedSample::from_values(10, vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(
            case_ii_log_density(&s, 1.0, 1.0, &[0.0, 1.0]),
            Err(Error::Singular(_))
        ));
        assert!(matches!(
            case_ii_posterior_mean(&s, 1.0, 1.0, &CaseIIMethod::default()),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn translation_invariance() {
        let s = StratifiedSample::from_values(10, vec![vec![0.0, 2.0, 0.5], vec![1.0, 3.0]]).unwrap();
        let shifted = StratifiedSample::from_values(10, vec![vec![5.0, 7.0, 5.5], vec![6.0, 8.0]]).unwrap();
        for th in [[0.1, 0.2], [1.0, 2.0], [-3.0, 4.0]] {
            let a = case_ii_log_density(&s, 1.0, 2.0, &th).unwrap();
            let b = case_ii_log_density(&shifted, 1.0, 2.0, &[th[0] + 5.0, th[1] + 5.0]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_mean_shrinks_toward_other_stratum() {
        let s = StratifiedSample::from_values(10, vec![vec![0.0, 0.4, -0.4], vec![1.5, 0.5, 1.0]]).unwrap();
        let est = case_ii_posterior_mean(&s, 1.0, 1.0, &CaseIIMethod::default()).unwrap();
        assert!(est.mean > 0.0 && est.mean < 1.0, "{}", est.mean);
    }

    #[test]
    fn batch_means_on_iid_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..40_000).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let se = batch_means_se(&x);
        assert!((se - 1.0 / 200.0).abs() < 0.0015);
    }
}
