use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::expfam::{ExpFamModel, Link};
use crate::quadrature::{integrate_log_weighted, QuadratureConfig};
use crate::sample::StratifiedSample;

/// Integrator for the `(m − 1)`-dimensional `g` integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GIntegrator {
    /// Tensor-product adaptive quadrature, for `m ≤ 3`.
    NestedQuadrature,
    /// Importance sampling with a per-stratum normal proposal centred at the
    /// stratum likelihood mode, for `m ≤ 10`. The same draws are reused for
    /// every `θ_m`, so `g` stays smooth in `θ_m`.
    ImportanceSampling { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct CaseIConfig {
    pub model: ExpFamModel,
    pub link: Link,
    pub a: f64,
    pub b: f64,
    pub integrator: GIntegrator,
    pub quadrature: QuadratureConfig,
}

impl CaseIConfig {
    pub fn new(model: ExpFamModel) -> Self {
        Self {
            model,
            link: Link::Identity,
            a: 1.0,
            b: 1.0,
            integrator: GIntegrator::NestedQuadrature,
            quadrature: QuadratureConfig::default(),
        }
    }

    fn validate(&self, m: usize) -> Result<()> {
        self.model.phi()?;
        self.link.validate()?;
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::InvalidInput("a and b must be positive".into()));
        }
        match self.integrator {
            GIntegrator::NestedQuadrature if m > 3 => Err(Error::Unsupported(format!(
                "nested quadrature handles m ≤ 3, got m = {m}"
            ))),
            GIntegrator::ImportanceSampling { .. } if m > 10 => Err(Error::Unsupported(format!(
                "importance sampling handles m ≤ 10, got m = {m}"
            ))),
            GIntegrator::ImportanceSampling { draws, .. } if draws == 0 => {
                Err(Error::InvalidInput("importance sampling needs draws > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-stratum log-likelihood `n_i(ȳ_iθ − ψ(θ))/ϕ`, its maximum and spread.
#[derive(Debug, Clone, Copy)]
struct StratumLik {
    n: f64,
    ybar: f64,
    mode: f64,
    peak: f64,
    spread: f64,
}

struct Context<'a> {
    cfg: &'a CaseIConfig,
    phi: f64,
    strata: Vec<StratumLik>,
    exponent: f64,
    is_draws: Option<ImportanceDraws>,
}

struct ImportanceDraws {
    // Row-major: draws × (m − 1).
    thetas: Vec<f64>,
    log_weights: Vec<f64>,
}

impl<'a> Context<'a> {
    fn new(sample: &StratifiedSample, cfg: &'a CaseIConfig) -> Result<Self> {
        let m = sample.m();
        cfg.validate(m)?;
        let phi = cfg.model.phi()?;
        let strata = sample
            .strata()
            .iter()
            .map(|s| {
                let ybar = s.mean();
                cfg.model.check_mean(ybar)?;
                let mode = cfg.model.canonical_parameter(ybar).map_err(|_| {
                    Error::NonIntegrable(format!(
                        "stratum mean {ybar} is on the boundary of the {} mean range",
                        cfg.model.name()
                    ))
                })?;
                let n = s.n() as f64;
                let peak = n * (ybar * mode - cfg.model.psi(mode)) / phi;
                let spread = (phi / (n * cfg.model.psi_double_prime(mode))).sqrt();
                Ok(StratumLik {
                    n,
                    ybar,
                    mode,
                    peak,
                    spread,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ctx = Self {
            cfg,
            phi,
            strata,
            exponent: 0.5 * (cfg.b + m as f64 - 1.0),
            is_draws: None,
        };
        if let GIntegrator::ImportanceSampling { draws, seed } = cfg.integrator {
            ctx.is_draws = Some(ctx.importance_draws(draws, seed));
        }
        Ok(ctx)
    }

    fn m(&self) -> usize {
        self.strata.len()
    }

    /// Log-likelihood of stratum `i` relative to its maximum.
    fn rel_lik(&self, i: usize, t: f64) -> f64 {
        let s = &self.strata[i];
        s.n * (s.ybar * t - self.cfg.model.psi(t)) / self.phi - s.peak
    }

    /// `−c·log[a + Σ(h(θ_i) − h̄)²]` for a full θ vector.
    fn log_dispersion(&self, thetas: &[f64]) -> f64 {
        let m = thetas.len() as f64;
        let hbar = thetas.iter().map(|&t| self.cfg.link.h(t)).sum::<f64>() / m;
        let ss: f64 = thetas
            .iter()
            .map(|&t| {
                let d = self.cfg.link.h(t) - hbar;
                d * d
            })
            .sum();
        -self.exponent * (self.cfg.a + ss).ln()
    }

    fn importance_draws(&self, draws: usize, seed: u64) -> ImportanceDraws {
        const INFLATE: f64 = 1.5;
        let k = self.m() - 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut thetas = Vec::with_capacity(draws * k);
        let mut log_weights = Vec::with_capacity(draws);
        for _ in 0..draws {
            let mut lw = 0.0;
            for i in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                let sd = INFLATE * self.strata[i].spread;
                let t = self.strata[i].mode + sd * z;
                let ln_q = -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                lw += self.rel_lik(i, t) + self.cfg.link.h_prime(t).ln() - ln_q;
                thetas.push(t);
            }
            log_weights.push(lw);
        }
        ImportanceDraws { thetas, log_weights }
    }

    /// Log of `g(θ_m)` minus `Σ_{i<m}` of the stratum likelihood peaks.
    fn rel_log_g(&self, theta_m: f64) -> Result<f64> {
        match &self.is_draws {
            Some(d) => Ok(self.log_g_importance(d, theta_m)),
            None => {
                let mut fixed = Vec::with_capacity(self.m());
                self.log_g_nested(&mut fixed, theta_m, &self.cfg.quadrature)
            }
        }
    }

    fn log_g_importance(&self, d: &ImportanceDraws, theta_m: f64) -> f64 {
        let k = self.m() - 1;
        let mut buf = vec![0.0; k + 1];
        let terms: Vec<f64> = d
            .log_weights
            .iter()
            .enumerate()
            .map(|(j, lw)| {
                buf[..k].copy_from_slice(&d.thetas[j * k..(j + 1) * k]);
                buf[k] = theta_m;
                lw + self.log_dispersion(&buf)
            })
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
        max + (sum / terms.len() as f64).ln()
    }

    fn log_g_nested(&self, fixed: &mut Vec<f64>, theta_m: f64, cfg: &QuadratureConfig) -> Result<f64> {
        let k = fixed.len();
        if k == self.m() - 1 {
            fixed.push(theta_m);
            let v = self.log_dispersion(fixed);
            fixed.pop();
            return Ok(v);
        }
        let inner_cfg = cfg.relaxed(0.01);
        let err = RefCell::new(None);
        let s = self.strata[k];
        let r = integrate_log_weighted::<1, _>(
            |t| {
                let mut buf = fixed.clone();
                buf.push(t);
                let inner = match self.log_g_nested(&mut buf, theta_m, &inner_cfg) {
                    Ok(v) => v,
                    Err(e) => {
                        err.borrow_mut().get_or_insert(e);
                        return (f64::NAN, [1.0]);
                    }
                };
                (self.rel_lik(k, t) + self.cfg.link.h_prime(t).ln() + inner, [1.0])
            },
            s.mode,
            s.spread,
            cfg,
        )?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(r.ln(0))
    }

    fn peaks_except_last(&self) -> f64 {
        self.strata[..self.m() - 1].iter().map(|s| s.peak).sum()
    }
}

/// `g(θ_m) = ∫ Π_{i<m} {h′(θ_i) Π_j exp[ϕ⁻¹{y_ij θ_i − ψ(θ_i)}]}
///           × [a + Σ_{i≤m}{h(θ_i) − h̄}²]^{−(b+m−1)/2} dθ_1…dθ_{m−1}`,
/// the factor that couples stratum `m` to the others once `β` and `r` are
/// integrated out.
pub fn g_integral(sample: &StratifiedSample, cfg: &CaseIConfig, theta_m: f64) -> Result<f64> {
    let ctx = Context::new(sample, cfg)?;
    Ok((ctx.rel_log_g(theta_m)? + ctx.peaks_except_last()).exp())
}

/// Upper bound `a^{−(b+m−1)/2} Π_{i<m} ∫ h′(θ) Π_j exp[ϕ⁻¹{y_ij θ − ψ(θ)}] dθ`
/// on `g`, obtained by dropping the dispersion term. It does not depend on
/// `θ_m`, so it also shows `g` is bounded.
pub fn g_upper_bound(sample: &StratifiedSample, cfg: &CaseIConfig) -> Result<f64> {
    let ctx = Context::new(sample, cfg)?;
    let mut total = -ctx.exponent * cfg.a.ln();
    for i in 0..ctx.m() - 1 {
        let s = ctx.strata[i];
        let r = integrate_log_weighted::<1, _>(
            |t| (ctx.rel_lik(i, t) + cfg.link.h_prime(t).ln(), [1.0]),
            s.mode,
            s.spread,
            &cfg.quadrature,
        )?;
        total += r.ln(0) + s.peak;
    }
    Ok(total.exp())
}

/// Posterior mean of `ψ′(θ_m)` for the last stratum:
/// `∫ψ′(t)h′(t)g(t)k(t)dt / ∫h′(t)g(t)k(t)dt` with `k` the stratum-`m`
/// sampling kernel.
pub fn case_i_posterior_mean(sample: &StratifiedSample, cfg: &CaseIConfig) -> Result<f64> {
    let ctx = Context::new(sample, cfg)?;
    let last = ctx.m() - 1;
    let s = ctx.strata[last];
    let err = RefCell::new(None);
    let r = integrate_log_weighted::<2, _>(
        |t| {
            let lg = match ctx.rel_log_g(t) {
                Ok(v) => v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    return (f64::NAN, [0.0, 0.0]);
                }
            };
            (
                ctx.rel_lik(last, t) + cfg.link.h_prime(t).ln() + lg,
                [cfg.model.psi_prime(t), 1.0],
            )
        },
        s.mode,
        s.spread,
        &cfg.quadrature,
    )?;
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    Ok(r.ratio(0, 1))
}

/// Case (i) posterior mean for stratum `target`, by moving it last.
pub fn case_i_posterior_mean_for(sample: &StratifiedSample, cfg: &CaseIConfig, target: usize) -> Result<f64> {
    sample.check_index(target)?;
    let mut order: Vec<usize> = (0..sample.m()).filter(|&i| i != target).collect();
    order.push(target);
    case_i_posterior_mean(&sample.permuted(&order), cfg)
}
