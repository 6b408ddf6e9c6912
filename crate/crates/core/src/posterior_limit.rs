//! Single-population posterior quantities: the posterior mean of `ψ′(θ)`,
//! the Bayes estimator of a finite population mean, its large-sample limit
//! and the correction that makes it design-consistent.

use rayon::prelude::*;
use std::io::Write;

use crate::error::{Error, Result};
use crate::expfam::{ExpFamModel, Link, PriorSpec};
use crate::quadrature::{integrate_log_weighted, QuadratureConfig};

/// Sample summarized by `(n, ȳ_s)`, plus the population size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePopSample {
    pub n: usize,
    pub ybar: f64,
    pub population_size: usize,
}

impl SinglePopSample {
    pub fn new(n: usize, ybar: f64, population_size: usize) -> Result<Self> {
        if n == 0 || n > population_size {
            return Err(Error::InvalidInput(format!(
                "need 1 ≤ n ≤ N, got n={n}, N={population_size}"
            )));
        }
        if !ybar.is_finite() {
            return Err(Error::InvalidInput("sample mean must be finite".into()));
        }
        Ok(Self {
            n,
            ybar,
            population_size,
        })
    }

    /// Sampling fraction `n/N`.
    pub fn fraction(&self) -> f64 {
        self.n as f64 / self.population_size as f64
    }
}

/// Log posterior of `θ` (up to a constant) and its first two derivatives.
struct LogPosterior<'a> {
    model: &'a ExpFamModel,
    link: &'a Link,
    prior: &'a PriorSpec,
    n: f64,
    ybar: f64,
    phi: f64,
}

impl LogPosterior<'_> {
    fn value(&self, t: f64) -> f64 {
        self.n * (self.ybar * t - self.model.psi(t)) / self.phi + self.prior.log_weight(self.link, t)
    }

    fn prior_slope(&self, t: f64) -> f64 {
        if self.link.is_identity() {
            return -self.prior.r * (t - self.prior.beta);
        }
        let eps = 1e-6 * (1.0 + t.abs());
        (self.prior.log_weight(self.link, t + eps) - self.prior.log_weight(self.link, t - eps)) / (2.0 * eps)
    }

    fn slope(&self, t: f64) -> f64 {
        self.n * (self.ybar - self.model.psi_prime(t)) / self.phi + self.prior_slope(t)
    }

    fn curvature(&self, t: f64) -> f64 {
        let kernel = -self.n * self.model.psi_double_prime(t) / self.phi;
        if self.link.is_identity() {
            return kernel - self.prior.r;
        }
        let eps = 1e-4 * (1.0 + t.abs());
        kernel + (self.prior_slope(t + eps) - self.prior_slope(t - eps)) / (2.0 * eps)
    }

    /// Safeguarded Newton on the score, inside a bracket found by doubling.
    fn mode(&self, start: f64) -> Result<f64> {
        let s0 = self.slope(start);
        if s0 == 0.0 {
            return Ok(start);
        }
        let dir = s0.signum();
        let mut step = 1.0;
        let mut lo = start;
        let mut hi = start + dir * step;
        let mut found = false;
        for _ in 0..200 {
            if self.slope(hi).signum() != dir {
                found = true;
                break;
            }
            lo = hi;
            step *= 2.0;
            hi = start + dir * step;
            if !hi.is_finite() {
                break;
            }
        }
        if !found {
            return Err(Error::NonIntegrable(format!(
                "posterior kernel has no mode (ȳ = {} on the boundary with a flat prior?)",
                self.ybar
            )));
        }
        let (mut a, mut b) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let mut t = 0.5 * (a + b);
        for _ in 0..200 {
            let g = self.slope(t);
            if g == 0.0 {
                return Ok(t);
            }
            if g > 0.0 {
                a = t;
            } else {
                b = t;
            }
            let h = self.curvature(t);
            let newton = if h < 0.0 { t - g / h } else { f64::NAN };
            t = if newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if (b - a) <= 1e-14 * (1.0 + t.abs()) {
                break;
            }
            if g.abs() < 1e-13 * (1.0 + self.n / self.phi) {
                break;
            }
        }
        Ok(t)
    }
}

fn check_inputs(
    model: &ExpFamModel,
    link: &Link,
    prior: &PriorSpec,
    sample: &SinglePopSample,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    prior.validate()?;
    link.validate()?;
    cfg.validate()?;
    model.check_mean(sample.ybar)?;
    model.phi()
}

/// `E[ψ′(θ) | y_s]` as the ratio `∫ψ′·w·k / ∫w·k`, with `k` the sampling
/// kernel and `w(t) = exp[−(r/2){h(t) − β}²]·h′(t)` the prior factor.
pub fn posterior_mean_psi_prime(
    model: &ExpFamModel,
    link: &Link,
    prior: &PriorSpec,
    sample: &SinglePopSample,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let phi = check_inputs(model, link, prior, sample, cfg)?;
    let lp = LogPosterior {
        model,
        link,
        prior,
        n: sample.n as f64,
        ybar: sample.ybar,
        phi,
    };
    let start = model.canonical_parameter(sample.ybar).unwrap_or(prior.beta);
    let mode = lp.mode(start)?;
    let curv = lp.curvature(mode);
    let scale = if curv < 0.0 && curv.is_finite() {
        1.0 / (-curv).sqrt()
    } else {
        1.0
    };
    let r = integrate_log_weighted::<2, _>(|t| (lp.value(t), [model.psi_prime(t), 1.0]), mode, scale, cfg)?;
    let mean = r.ratio(0, 1);
    if !mean.is_finite() || !model.mean_range().contains(mean) {
        return Err(Error::NonIntegrable(format!(
            "posterior mean {mean} is not in the mean range"
        )));
    }
    Ok(mean)
}

/// Bayes estimator `f ȳ_s + (1 − f)·E[ψ′(θ) | y_s]` of the population mean.
pub fn bayes_estimator(
    model: &ExpFamModel,
    link: &Link,
    prior: &PriorSpec,
    sample: &SinglePopSample,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let f = sample.fraction();
    if f == 1.0 {
        check_inputs(model, link, prior, sample, cfg)?;
        return Ok(sample.ybar);
    }
    let m = posterior_mean_psi_prime(model, link, prior, sample, cfg)?;
    Ok(f * sample.ybar + (1.0 - f) * m)
}

/// Large-sample limit `C` of the posterior mean of `ψ′(θ)`. Known only for
/// the three canonical families, where it equals `ȳ_s`.
pub fn limit_constant(model: &ExpFamModel, link: &Link, ybar: f64) -> Result<f64> {
    if !link.is_identity() {
        return Err(Error::Unsupported(
            "the limit constant is only available for canonical links".into(),
        ));
    }
    if !model.mean_range().contains_interior(ybar) {
        return Err(Error::Domain {
            family: model.name(),
            value: ybar,
            lo: model.mean_range().lo,
            hi: model.mean_range().hi,
        });
    }
    Ok(ybar)
}

/// Design-consistent version of a Bayes estimator:
/// `Ŷ^B − {f ȳ_s + (1 − f) C − ȳ_w}`.
pub fn design_consistent_correct(yhat_b: f64, f: f64, ybar_s: f64, c: f64, ybar_w: f64) -> f64 {
    yhat_b - (f * ybar_s + (1.0 - f) * c - ybar_w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub model: &'static str,
    pub n: usize,
    pub posterior_mean: f64,
    pub limit_c: f64,
    pub abs_error: f64,
}

/// Posterior mean of `ψ′(θ)` along a grid of sample sizes with `ȳ_s` held
/// fixed, and its distance to the limit `C`.
pub fn convergence_sweep(
    model: &ExpFamModel,
    link: &Link,
    prior: &PriorSpec,
    ybar: f64,
    n_grid: &[usize],
    cfg: &QuadratureConfig,
) -> Result<Vec<SweepRow>> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "n grid must be non-empty and strictly increasing".into(),
        ));
    }
    let c = limit_constant(model, link, ybar)?;
    n_grid
        .par_iter()
        .map(|&n| {
            let sample = SinglePopSample::new(n, ybar, n)?;
            let pm = posterior_mean_psi_prime(model, link, prior, &sample, cfg)?;
            Ok(SweepRow {
                model: model.name(),
                n,
                posterior_mean: pm,
                limit_c: c,
                abs_error: (pm - c).abs(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "model,n,posterior_mean,limit_C,abs_error")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.model, r.n, r.posterior_mean, r.limit_c, r.abs_error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn conjugate(n: f64, ybar: f64, sigma2: f64, beta: f64, r: f64) -> f64 {
        (n * ybar / sigma2 + r * beta) / (n / sigma2 + r)
    }

    #[test]
    fn gaussian_conjugate_example() {
        let s = SinglePopSample::new(4, 1.0, 100).unwrap();
        let v = posterior_mean_psi_prime(
            &ExpFamModel::gaussian(1.0),
            &Link::Identity,
            &PriorSpec::normal(0.0, 1.0),
            &s,
            &cfg(),
        )
        .unwrap();
        assert!((v - 0.8).abs() < 1e-10);
        assert!((v - conjugate(4.0, 1.0, 1.0, 0.0, 1.0)).abs() < 1e-10);
    }

    #[test]
    fn flat_prior_identities() {
        let p = posterior_mean_psi_prime(
            &ExpFamModel::poisson(),
            &Link::Identity,
            &PriorSpec::flat(),
            &SinglePopSample::new(10, 2.0, 100).unwrap(),
            &cfg(),
        )
        .unwrap();
        assert!((p - 2.0).abs() < 1e-9, "{p}");
        let b = posterior_mean_psi_prime(
            &ExpFamModel::bernoulli(),
            &Link::Identity,
            &PriorSpec::flat(),
            &SinglePopSample::new(10, 0.3, 100).unwrap(),
            &cfg(),
        )
        .unwrap();
        assert!((b - 0.3).abs() < 1e-9, "{b}");
    }

    #[test]
    fn boundary_mean_with_flat_prior_is_not_integrable() {
        let r = posterior_mean_psi_prime(
            &ExpFamModel::bernoulli(),
            &Link::Identity,
            &PriorSpec::flat(),
            &SinglePopSample::new(10, 1.0, 100).unwrap(),
            &cfg(),
        );
        assert!(matches!(r, Err(Error::NonIntegrable(_))));
        // With a proper prior the boundary case is fine for finite n.
        let v = posterior_mean_psi_prime(
            &ExpFamModel::bernoulli(),
            &Link::Identity,
            &PriorSpec::normal(0.0, 1.0),
            &SinglePopSample::new(10, 1.0, 100).unwrap(),
            &cfg(),
        )
        .unwrap();
        assert!(v > 0.5 && v < 1.0);
    }

    #[test]
    fn bayes_estimator_examples() {
        let g = ExpFamModel::gaussian(1.0);
        let prior = PriorSpec::normal(0.0, 1.0);
        let v = bayes_estimator(
            &g,
            &Link::Identity,
            &prior,
            &SinglePopSample::new(4, 1.0, 8).unwrap(),
            &cfg(),
        )
        .unwrap();
        assert!((v - 0.9).abs() < 1e-10);
        let census = bayes_estimator(
            &g,
            &Link::Identity,
            &prior,
            &SinglePopSample::new(8, 3.3, 8).unwrap(),
            &cfg(),
        )
        .unwrap();
        assert_eq!(census, 3.3);
        let p = bayes_estimator(
            &ExpFamModel::poisson(),
            &Link::Identity,
            &PriorSpec::flat(),
            &SinglePopSample::new(10, 2.0, 100).unwrap(),
            &cfg(),
        )
        .unwrap();
        assert!((p - 2.0).abs() < 1e-9);
    }

    #[test]
    fn limit_constant_examples() {
        let id = Link::Identity;
        assert_eq!(limit_constant(&ExpFamModel::gaussian(1.0), &id, 3.7).unwrap(), 3.7);
        assert_eq!(limit_constant(&ExpFamModel::bernoulli(), &id, 0.25).unwrap(), 0.25);
        assert_eq!(limit_constant(&ExpFamModel::poisson(), &id, 5.0).unwrap(), 5.0);
        assert!(limit_constant(&ExpFamModel::bernoulli(), &id, 1.0).is_err());
        let affine = Link::Affine {
            slope: 2.0,
            intercept: 0.0,
        };
        assert!(matches!(
            limit_constant(&ExpFamModel::poisson(), &affine, 5.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn correction_examples() {
        assert_eq!(design_consistent_correct(0.9, 0.5, 1.0, 1.0, 1.0), 0.9);
        assert!((design_consistent_correct(0.9, 0.5, 1.0, 1.0, 1.2) - 1.1).abs() < 1e-15);
    }

    #[test]
    fn gaussian_sweep_errors() {
        let rows = convergence_sweep(
            &ExpFamModel::gaussian(1.0),
            &Link::Identity,
            &PriorSpec::normal(0.0, 1.0),
            1.0,
            &[10, 100, 1000],
            &cfg(),
        )
        .unwrap();
        for r in &rows {
            assert!((r.abs_error - 1.0 / (r.n as f64 + 1.0)).abs() < 1e-9);
        }
        assert!(convergence_sweep(
            &ExpFamModel::gaussian(1.0),
            &Link::Identity,
            &PriorSpec::normal(0.0, 1.0),
            1.0,
            &[10, 10],
            &cfg()
        )
        .is_err());
    }

    #[test]
    fn non_canonical_link_runs() {
        let link = Link::Affine {
            slope: 0.5,
            intercept: 1.0,
        };
        let v = posterior_mean_psi_prime(
            &ExpFamModel::gaussian(1.0),
            &link,
            &PriorSpec::normal(0.0, 4.0),
            &SinglePopSample::new(4, 1.0, 100).unwrap(),
            &cfg(),
        )
        .unwrap();
        // h(θ) = 0.5θ + 1 ~ N(0, 1/4) means θ ~ N(−2, 1): conjugate mean.
        let expected = conjugate(4.0, 1.0, 1.0, -2.0, 1.0);
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn sweep_csv_header() {
        let mut buf = Vec::new();
        write_sweep_csv(
            &[SweepRow {
                model: "gaussian",
                n: 10,
                posterior_mean: 0.5,
                limit_c: 1.0,
                abs_error: 0.5,
            }],
            &mut buf,
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "model,n,posterior_mean,limit_C,abs_error");
        assert_eq!(s.lines().nth(1).unwrap(), "gaussian,10,0.5,1,0.5");
    }
}
