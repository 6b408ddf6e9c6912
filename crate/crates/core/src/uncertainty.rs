//! Measures of uncertainty for the corrected estimator: the posterior-variance
//! based MU1, the EBLUP based MU2 with REML variance components, and their
//! midpoint MU3.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nested_gibbs::PosteriorSummary;
use crate::sample::StratifiedSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub mu: f64,
    pub sigma2_v: f64,
    pub sigma2_e: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The optimum sits on `σ_v² = 0`.
    pub boundary: bool,
}

impl VarianceComponents {
    /// Components supplied directly; `μ̂` is the weighted mean under them.
    pub fn fixed(sample: &StratifiedSample, sigma2_v: f64, sigma2_e: f64) -> Result<Self> {
        if !(sigma2_v >= 0.0 && sigma2_e > 0.0 && sigma2_v.is_finite() && sigma2_e.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "variance components must satisfy σ_v² ≥ 0, σ_e² > 0, got ({sigma2_v}, {sigma2_e})"
            )));
        }
        let (mu, _) = weighted_mean(sample, sigma2_v, sigma2_e);
        Ok(Self {
            mu,
            sigma2_v,
            sigma2_e,
            converged: true,
            iterations: 0,
            boundary: sigma2_v == 0.0,
        })
    }

    /// `φ_i = 1/(σ_v² + σ_e²/n_i)`.
    pub fn phi(&self, n: usize) -> f64 {
        1.0 / (self.sigma2_v + self.sigma2_e / n as f64)
    }

    /// Shrinkage weight `γ = σ_v²/(σ_v² + σ_e²/n)`.
    pub fn gamma(&self, n: usize) -> f64 {
        self.sigma2_v * self.phi(n)
    }
}

fn weighted_mean(sample: &StratifiedSample, sigma2_v: f64, sigma2_e: f64) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in sample.strata() {
        let phi = 1.0 / (sigma2_v + sigma2_e / s.n() as f64);
        num += phi * s.mean();
        den += phi;
    }
    (num / den, den)
}

struct RemlData {
    n: Vec<f64>,
    ybar: Vec<f64>,
    within: f64,
    n_total: f64,
    total_ss: f64,
}

impl RemlData {
    fn new(sample: &StratifiedSample) -> Self {
        let grand = sample.grand_mean();
        let total_ss = sample
            .strata()
            .iter()
            .flat_map(|s| s.values.iter())
            .map(|y| (y - grand).powi(2))
            .sum();
        Self {
            n: sample.strata().iter().map(|s| s.n() as f64).collect(),
            ybar: sample.means(),
            within: sample.within_ss(),
            n_total: sample.n_total() as f64,
            total_ss,
        }
    }

    fn m(&self) -> f64 {
        self.n.len() as f64
    }

    /// `−2ℓ_R` up to a constant.
    fn objective(&self, s: f64, t: f64) -> f64 {
        let mut sum_w = 0.0;
        let mut sum_wy = 0.0;
        let mut ln_lambda = 0.0;
        for (&n, &y) in self.n.iter().zip(&self.ybar) {
            let lambda = t + n * s;
            let w = n / lambda;
            sum_w += w;
            sum_wy += w * y;
            ln_lambda += lambda.ln();
        }
        let mu = sum_wy / sum_w;
        let quad: f64 = self
            .n
            .iter()
            .zip(&self.ybar)
            .map(|(&n, &y)| n / (t + n * s) * (y - mu).powi(2))
            .sum();
        (self.n_total - self.m()) * t.ln() + ln_lambda + sum_w.ln() + self.within / t + quad
    }

    /// Gradient of the objective with respect to `(ln σ_v², ln σ_e²)`.
    fn log_gradient(&self, s: f64, t: f64) -> [f64; 2] {
        let mut sum_w = 0.0;
        let mut sum_wy = 0.0;
        for (&n, &y) in self.n.iter().zip(&self.ybar) {
            let w = n / (t + n * s);
            sum_w += w;
            sum_wy += w * y;
        }
        let mu = sum_wy / sum_w;
        let mut ds = 0.0;
        let mut dt = (self.n_total - self.m()) / t - self.within / (t * t);
        for (&n, &y) in self.n.iter().zip(&self.ybar) {
            let lambda = t + n * s;
            let w = n / lambda;
            let d2 = (y - mu).powi(2);
            ds += n / lambda - w * n / lambda / sum_w - w * n / lambda * d2;
            dt += 1.0 / lambda - w / lambda / sum_w - w / lambda * d2;
        }
        [s * ds, t * dt]
    }

    fn log_objective(&self, x: [f64; 2]) -> f64 {
        self.objective(x[0].exp(), x[1].exp())
    }

    fn log_hessian(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let h = 1e-5;
        let mut out = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut up = x;
            let mut dn = x;
            up[j] += h;
            dn[j] -= h;
            let gu = self.log_gradient(up[0].exp(), up[1].exp());
            let gd = self.log_gradient(dn[0].exp(), dn[1].exp());
            for i in 0..2 {
                out[i][j] = (gu[i] - gd[i]) / (2.0 * h);
            }
        }
        let off = 0.5 * (out[0][1] + out[1][0]);
        out[0][1] = off;
        out[1][0] = off;
        out
    }
}

/// REML log-likelihood of the one-way random-effects model, up to an additive
/// constant, with `μ` profiled out.
pub fn reml_loglik(sample: &StratifiedSample, sigma2_v: f64, sigma2_e: f64) -> f64 {
    -0.5 * RemlData::new(sample).objective(sigma2_v, sigma2_e)
}

const REML_MAX_ITER: usize = 200;
const REML_GRAD_TOL: f64 = 1e-9;

/// REML estimates of `(σ_v², σ_e²)` and the weighted-least-squares `μ̂`.
///
/// Levenberg-damped Newton in log-variance coordinates, golden-section
/// coordinate descent when that stalls, and a final comparison against the
/// boundary optimum `σ_v² = 0, σ_e² = SS_total/(n_T − 1)`.
pub fn reml_fit(sample: &StratifiedSample) -> Result<VarianceComponents> {
    let m = sample.m();
    if sample.n_total() < m + 1 {
        return Err(Error::InvalidInput(format!(
            "REML needs n_T ≥ m + 1, got n_T = {} with m = {m}",
            sample.n_total()
        )));
    }
    let data = RemlData::new(sample);
    let scale = data.total_ss.max(data.within);
    if data.total_ss <= 0.0 {
        return Err(Error::Singular("all observations are identical".into()));
    }
    if data.within <= 1e-14 * scale {
        return Err(Error::Singular("within-stratum sum of squares is zero".into()));
    }

    let boundary_t = data.total_ss / (data.n_total - 1.0);
    let boundary_obj = data.objective(0.0, boundary_t);

    let t0 = data.within / (data.n_total - data.m());
    let mean_of_means = data.ybar.iter().sum::<f64>() / data.m();
    let between = data.ybar.iter().map(|y| (y - mean_of_means).powi(2)).sum::<f64>() / (data.m() - 1.0);
    let nbar = data.n_total / data.m();
    let s0 = (between - t0 / nbar).max(0.1 * t0);

    let (mut x, mut iterations, mut converged) = newton(&data, [s0.ln(), t0.ln()]);
    if !converged && x[0] > t0.ln() - 25.0 {
        let (y, it) = coordinate_descent(&data, x);
        iterations += it;
        let (z, it2, ok) = newton(&data, y);
        x = z;
        iterations += it2;
        converged = ok;
    }

    let interior_obj = data.log_objective(x);
    let (s, t, boundary) = if converged && interior_obj <= boundary_obj {
        (x[0].exp(), x[1].exp(), false)
    } else if boundary_obj <= interior_obj {
        (0.0, boundary_t, true)
    } else {
        return Err(Error::RemlNonConvergence(iterations));
    };
    let (mu, _) = weighted_mean(sample, s, t);
    Ok(VarianceComponents {
        mu,
        sigma2_v: s,
        sigma2_e: t,
        converged: true,
        iterations,
        boundary,
    })
}

fn newton(data: &RemlData, start: [f64; 2]) -> ([f64; 2], usize, bool) {
    let mut x = start;
    let mut f = data.log_objective(x);
    let mut damping = 1e-3;
    for it in 1..=REML_MAX_ITER {
        let g = data.log_gradient(x[0].exp(), x[1].exp());
        // The log-coordinate gradient in σ_v² vanishes as σ_v² → 0, so a tiny
        // gradient there is not evidence of an interior optimum.
        if g[0].abs().max(g[1].abs()) < REML_GRAD_TOL && x[0] > x[1] - 14.0 {
            return (x, it, true);
        }
        // Drifting to σ_v² → 0: the boundary comparison takes over.
        if x[0] < x[1] - 40.0 {
            return (x, it, false);
        }
        let h = data.log_hessian(x);
        let mut accepted = false;
        for _ in 0..40 {
            let a = h[0][0] + damping;
            let d = h[1][1] + damping;
            let b = h[0][1];
            let det = a * d - b * b;
            if a > 0.0 && det > 0.0 {
                let step = [-(d * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det];
                let trial = [x[0] + step[0].clamp(-5.0, 5.0), x[1] + step[1].clamp(-5.0, 5.0)];
                let ft = data.log_objective(trial);
                if ft.is_finite() && ft <= f + 1e-12 * f.abs().max(1.0) {
                    x = trial;
                    f = ft;
                    damping = (damping * 0.1).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            damping = damping * 10.0 + 1e-8;
        }
        if !accepted {
            return (x, it, false);
        }
    }
    (x, REML_MAX_ITER, false)
}

fn coordinate_descent(data: &RemlData, start: [f64; 2]) -> ([f64; 2], usize) {
    let mut x = start;
    let mut it = 0;
    for _ in 0..50 {
        let before = x;
        for j in 0..2 {
            let f = |v: f64| {
                let mut y = x;
                y[j] = v;
                data.log_objective(y)
            };
            x[j] = golden_section(f, x[j] - 4.0, x[j] + 4.0, 1e-10);
            it += 1;
        }
        if (x[0] - before[0]).abs().max((x[1] - before[1]).abs()) < 1e-9 {
            break;
        }
    }
    (x, it)
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `η̂_m = γ_m ȳ_m + (1 − γ_m) μ̂`.
pub fn eblup_eta(sample: &StratifiedSample, vc: &VarianceComponents, m: usize) -> Result<f64> {
    sample.check_index(m)?;
    let s = sample.stratum(m);
    let gamma = vc.gamma(s.n());
    let (mu, _) = weighted_mean(sample, vc.sigma2_v, vc.sigma2_e);
    Ok(gamma * s.mean() + (1.0 - gamma) * mu)
}

/// Which terms of the prediction variance enter `h_1m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum H1Variant {
    /// `γ σ_e²/n_m + (1 − γ)²/Σφ_i`.
    #[default]
    WithMeanTerm,
    /// `γ σ_e²/n_m` only, treating `μ` as known.
    LeadingOnly,
}

pub fn h1m(vc: &VarianceComponents, sample: &StratifiedSample, m: usize, variant: H1Variant) -> Result<f64> {
    sample.check_index(m)?;
    let n = sample.stratum(m).n();
    let gamma = vc.gamma(n);
    let leading = gamma * vc.sigma2_e / n as f64;
    Ok(match variant {
        H1Variant::LeadingOnly => leading,
        H1Variant::WithMeanTerm => {
            let sum_phi: f64 = sample.strata().iter().map(|s| vc.phi(s.n())).sum();
            leading + (1.0 - gamma).powi(2) / sum_phi
        }
    })
}

/// `V(Ȳ_m | y_s) + (Ŷ_m − Ŷ_m^HB)²`.
pub fn mu1(posterior_variance: f64, yhat_m: f64, yhat_hb: f64) -> f64 {
    posterior_variance + (yhat_m - yhat_hb).powi(2)
}

/// `h_1m + (Ŷ_m − η̂_m)²`.
pub fn mu2(
    sample: &StratifiedSample,
    vc: &VarianceComponents,
    yhat_m: f64,
    m: usize,
    variant: H1Variant,
) -> Result<f64> {
    let h1 = h1m(vc, sample, m, variant)?;
    let eta = eblup_eta(sample, vc, m)?;
    Ok(h1 + (yhat_m - eta).powi(2))
}

pub fn mu3(mu1: f64, mu2: f64) -> f64 {
    0.5 * (mu1 + mu2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRow {
    pub stratum: usize,
    pub yhat_hb: f64,
    pub yhat_dc: f64,
    pub postvar: f64,
    pub mu1: f64,
    pub h1m: f64,
    pub h2m_hat: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub gamma: f64,
    pub eta_eb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub rows: Vec<UncertaintyRow>,
    pub components: VarianceComponents,
}

/// Per-stratum measures for a joint HB fit. `ybar_w` holds the design
/// weighted means (the sample means for a self-weighting design).
pub fn uncertainty_report(
    sample: &StratifiedSample,
    summary: &PosteriorSummary,
    vc: &VarianceComponents,
    ybar_w: &[f64],
    variant: H1Variant,
) -> Result<UncertaintyReport> {
    if ybar_w.len() != sample.m() || summary.strata.len() != sample.m() {
        return Err(Error::InvalidInput(format!(
            "expected {} strata, got {} weighted means and {} posterior summaries",
            sample.m(),
            ybar_w.len(),
            summary.strata.len()
        )));
    }
    let sum_phi: f64 = sample.strata().iter().map(|s| vc.phi(s.n())).sum();
    let rows = (0..sample.m())
        .map(|i| {
            let s = sample.stratum(i);
            let p = &summary.strata[i];
            let yhat_hb = p.mean_pop;
            let yhat_dc = yhat_hb - s.mean() + ybar_w[i];
            let gamma = vc.gamma(s.n());
            let eta = gamma * s.mean() + (1.0 - gamma) * vc.mu;
            let leading = gamma * vc.sigma2_e / s.n() as f64;
            let h1 = match variant {
                H1Variant::LeadingOnly => leading,
                H1Variant::WithMeanTerm => leading + (1.0 - gamma).powi(2) / sum_phi,
            };
            let h2 = (yhat_dc - eta).powi(2);
            let m1 = mu1(p.var_pop, yhat_dc, yhat_hb);
            let m2 = h1 + h2;
            UncertaintyRow {
                stratum: i,
                yhat_hb,
                yhat_dc,
                postvar: p.var_pop,
                mu1: m1,
                h1m: h1,
                h2m_hat: h2,
                mu2: m2,
                mu3: mu3(m1, m2),
                gamma,
                eta_eb: eta,
            }
        })
        .collect();
    Ok(UncertaintyReport { rows, components: *vc })
}

/// Strata are written by index unless `labels` are given.
pub fn write_report_csv<W: Write>(report: &UncertaintyReport, labels: Option<&[String]>, mut out: W) -> Result<()> {
    writeln!(out, "stratum,yhat_hb,yhat_dc,postvar,mu1,h1m,h2m_hat,mu2,mu3")?;
    for r in &report.rows {
        let label = labels.map_or_else(|| r.stratum.to_string(), |l| l[r.stratum].clone());
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            label, r.yhat_hb, r.yhat_dc, r.postvar, r.mu1, r.h1m, r.h2m_hat, r.mu2, r.mu3
        )?;
    }
    Ok(())
}
