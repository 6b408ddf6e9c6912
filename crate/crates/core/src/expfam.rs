//! Canonical exponential-family superpopulation models.
//!
//! A unit value `y` has density `exp[{yθ − ψ(θ)}/ϕ + ρ(y, ϕ)]`, with mean
//! `ψ′(θ)`. The prior on `θ` is placed on a link scale: `h(θ) = β + u`,
//! `u ~ N(0, 1/r)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "bernoulli" => Ok(Family::Bernoulli),
            "poisson" => Ok(Family::Poisson),
            other => Err(Error::InvalidInput(format!("unknown model family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Dispersion {
    Known(f64),
    Unknown,
}

/// Closed or open interval of attainable sample means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanRange {
    pub lo: f64,
    pub hi: f64,
}

impl MeanRange {
    /// Membership in the closure `[lo, hi]`.
    pub fn contains(&self, y: f64) -> bool {
        y >= self.lo && y <= self.hi
    }

    pub fn contains_interior(&self, y: f64) -> bool {
        y > self.lo && y < self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFamModel {
    pub family: Family,
    pub dispersion: Dispersion,
}

impl ExpFamModel {
    /// Normal with known variance `sigma2` (the dispersion).
    pub fn gaussian(sigma2: f64) -> Self {
        Self {
            family: Family::Gaussian,
            dispersion: Dispersion::Known(sigma2),
        }
    }

    /// Normal with unknown variance; only usable through the marginalized
    /// case-(ii) posterior.
    pub fn gaussian_unknown() -> Self {
        Self {
            family: Family::Gaussian,
            dispersion: Dispersion::Unknown,
        }
    }

    pub fn bernoulli() -> Self {
        Self {
            family: Family::Bernoulli,
            dispersion: Dispersion::Known(1.0),
        }
    }

    pub fn poisson() -> Self {
        Self {
            family: Family::Poisson,
            dispersion: Dispersion::Known(1.0),
        }
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    /// Known dispersion `ϕ`, or an error when it is unknown or not positive.
    pub fn phi(&self) -> Result<f64> {
        match self.dispersion {
            Dispersion::Known(phi) if phi > 0.0 && phi.is_finite() => Ok(phi),
            Dispersion::Known(phi) => Err(Error::InvalidInput(format!("dispersion must be positive, got {phi}"))),
            Dispersion::Unknown => Err(Error::InvalidInput("operation needs a known dispersion".into())),
        }
    }

    /// Cumulant function ψ.
    pub fn psi(&self, theta: f64) -> f64 {
        match self.family {
            Family::Gaussian => 0.5 * theta * theta,
            Family::Bernoulli => softplus(theta),
            Family::Poisson => theta.exp(),
        }
    }

    /// Mean function ψ′.
    pub fn psi_prime(&self, theta: f64) -> f64 {
        match self.family {
            Family::Gaussian => theta,
            Family::Bernoulli => logistic(theta),
            Family::Poisson => theta.exp(),
        }
    }

    /// Variance function ψ″.
    pub fn psi_double_prime(&self, theta: f64) -> f64 {
        match self.family {
            Family::Gaussian => 1.0,
            Family::Bernoulli => {
                let p = logistic(theta);
                p * (1.0 - p)
            }
            Family::Poisson => theta.exp(),
        }
    }

    /// Inverse of ψ′ on the interior of the mean range.
    pub fn canonical_parameter(&self, mean: f64) -> Result<f64> {
        let range = self.mean_range();
        if !range.contains_interior(mean) {
            return Err(self.domain_error(mean));
        }
        Ok(match self.family {
            Family::Gaussian => mean,
            Family::Bernoulli => (mean / (1.0 - mean)).ln(),
            Family::Poisson => mean.ln(),
        })
    }

    /// Carrier term ρ(y, ϕ).
    pub fn rho(&self, y: f64, phi: f64) -> f64 {
        match self.family {
            Family::Gaussian => -0.5 * y * y / phi - 0.5 * (2.0 * PI * phi).ln(),
            Family::Bernoulli => 0.0,
            Family::Poisson => -ln_factorial(y),
        }
    }

    /// Log density of a single observation.
    pub fn log_density(&self, y: f64, theta: f64) -> Result<f64> {
        let phi = self.phi()?;
        Ok((y * theta - self.psi(theta)) / phi + self.rho(y, phi))
    }

    pub fn natural_domain(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn mean_range(&self) -> MeanRange {
        mean_range(self)
    }

    pub fn check_mean(&self, ybar: f64) -> Result<()> {
        if ybar.is_nan() || !self.mean_range().contains(ybar) {
            return Err(self.domain_error(ybar));
        }
        Ok(())
    }

    fn domain_error(&self, value: f64) -> Error {
        let r = self.mean_range();
        Error::Domain {
            family: self.name(),
            value,
            lo: r.lo,
            hi: r.hi,
        }
    }

    /// `n(ȳθ − ψ(θ))/ϕ`: the log of the unnormalized sampling kernel of a
    /// sample of size `n` with mean `ybar`.
    pub fn log_kernel(&self, n: usize, ybar: f64, theta: f64) -> Result<f64> {
        log_kernel(self, n, ybar, theta)
    }
}

/// Log kernel `−nψ(θ)/ϕ + nȳθ/ϕ`, defined up to an additive constant.
pub fn log_kernel(model: &ExpFamModel, n: usize, ybar: f64, theta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    model.check_mean(ybar)?;
    let phi = model.phi()?;
    let n = n as f64;
    Ok(n * (ybar * theta - model.psi(theta)) / phi)
}

pub fn mean_range(model: &ExpFamModel) -> MeanRange {
    match model.family {
        Family::Gaussian => MeanRange {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        },
        Family::Bernoulli => MeanRange { lo: 0.0, hi: 1.0 },
        Family::Poisson => MeanRange {
            lo: 0.0,
            hi: f64::INFINITY,
        },
    }
}

/// Strictly increasing link `h` on which the normal prior lives.
#[derive(Clone, Copy)]
pub enum Link {
    /// `h(θ) = θ`, the canonical choice for all three families.
    Identity,
    /// `h(θ) = slope·θ + intercept` with `slope > 0`.
    Affine {
        slope: f64,
        intercept: f64,
    },
    Custom {
        h: fn(f64) -> f64,
        h_prime: fn(f64) -> f64,
    },
}

impl std::fmt::Debug for Link {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Link::Identity => write!(f, "Identity"),
            Link::Affine { slope, intercept } => f
                .debug_struct("Affine")
                .field("slope", slope)
                .field("intercept", intercept)
                .finish(),
            Link::Custom { .. } => write!(f, "Custom"),
        }
    }
}

impl Link {
    pub fn h(&self, theta: f64) -> f64 {
        match *self {
            Link::Identity => theta,
            Link::Affine { slope, intercept } => slope * theta + intercept,
            Link::Custom { h, .. } => h(theta),
        }
    }

    pub fn h_prime(&self, theta: f64) -> f64 {
        match *self {
            Link::Identity => 1.0,
            Link::Affine { slope, .. } => slope,
            Link::Custom { h_prime, .. } => h_prime(theta),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Link::Identity)
            || matches!(self, Link::Affine { slope, intercept } if *slope == 1.0 && *intercept == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if let Link::Affine { slope, intercept } = *self {
            if !(slope > 0.0 && slope.is_finite() && intercept.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "affine link needs a positive finite slope, got {slope}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DispersionPrior {
    #[default]
    Known,
    FlatOnPrecision,
}

/// Hyperparameters: `(β, r)` of the link-scale normal prior and the gamma
/// `(a, b)` used when `r` is itself unknown. `r = 0` is the flat prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub dispersion_prior: DispersionPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta: 0.0,
            r: 0.0,
            a: 1.0,
            b: 1.0,
            dispersion_prior: DispersionPrior::Known,
        }
    }
}

impl PriorSpec {
    pub fn normal(beta: f64, r: f64) -> Self {
        Self {
            beta,
            r,
            ..Self::default()
        }
    }

    pub fn flat() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "prior precision r must be ≥ 0, got {}",
                self.r
            )));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "gamma hyperparameters must be positive, got a={} b={}",
                self.a, self.b
            )));
        }
        if !self.beta.is_finite() {
            return Err(Error::InvalidInput("prior location must be finite".into()));
        }
        Ok(())
    }

    /// `log w(θ) = −(r/2){h(θ) − β}² + log h′(θ)`.
    pub fn log_weight(&self, link: &Link, theta: f64) -> f64 {
        let dev = link.h(theta) - self.beta;
        -0.5 * self.r * dev * dev + link.h_prime(theta).ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_factorial(y: f64) -> f64 {
    let k = y.round() as u64;
    (2..=k).map(|i| (i as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn models() -> [ExpFamModel; 3] {
        [
            ExpFamModel::gaussian(1.0),
            ExpFamModel::bernoulli(),
            ExpFamModel::poisson(),
        ]
    }

    #[test]
    fn log_kernel_examples() {
        let g = ExpFamModel::gaussian(1.0);
        assert_eq!(g.log_kernel(1, 0.0, 0.0).unwrap(), 0.0);
        let p = ExpFamModel::poisson();
        assert_eq!(p.log_kernel(3, 2.0, 0.0).unwrap(), -3.0);
        let b = ExpFamModel::bernoulli();
        let expected = 1.0 - 2.0 * (1.0 + 1f64.exp()).ln();
        assert!((b.log_kernel(2, 0.5, 1.0).unwrap() - expected).abs() < 1e-14);
        assert!((expected + 1.6265).abs() < 1e-4);
    }

    #[test]
    fn log_kernel_rejects_means_outside_range() {
        let b = ExpFamModel::bernoulli();
        assert!(matches!(b.log_kernel(4, 1.2, 0.0), Err(Error::Domain { .. })));
        let p = ExpFamModel::poisson();
        assert!(p.log_kernel(4, -0.1, 0.0).is_err());
        assert!(b.log_kernel(0, 0.5, 0.0).is_err());
        assert!(ExpFamModel::gaussian_unknown().log_kernel(3, 0.0, 0.0).is_err());
    }

    #[test]
    fn mean_ranges() {
        let g = mean_range(&ExpFamModel::gaussian(2.0));
        assert_eq!((g.lo, g.hi), (f64::NEG_INFINITY, f64::INFINITY));
        let b = mean_range(&ExpFamModel::bernoulli());
        assert_eq!((b.lo, b.hi), (0.0, 1.0));
        assert!(b.contains(0.0) && b.contains(1.0) && !b.contains_interior(1.0));
        let p = mean_range(&ExpFamModel::poisson());
        assert_eq!((p.lo, p.hi), (0.0, f64::INFINITY));
    }

    #[test]
    fn psi_prime_matches_finite_differences() {
        let eps = 1e-5;
        for model in models() {
            for k in -40..=40 {
                let t = k as f64 * 0.1;
                let fd = (model.psi(t + eps) - model.psi(t - eps)) / (2.0 * eps);
                assert!((fd - model.psi_prime(t)).abs() <= 1e-6, "{} at {t}", model.name());
                let fd2 = (model.psi_prime(t + eps) - model.psi_prime(t - eps)) / (2.0 * eps);
                assert!((fd2 - model.psi_double_prime(t)).abs() <= 1e-6);
                assert!(model.psi_double_prime(t) >= 0.0);
            }
        }
    }

    #[test]
    fn psi_prime_is_monotone_onto_interior() {
        for model in models() {
            let range = model.mean_range();
            let mut prev = f64::NEG_INFINITY;
            for k in -300..=300 {
                let t = k as f64 * 0.1;
                let m = model.psi_prime(t);
                assert!(m > prev);
                assert!(range.contains(m));
                prev = m;
            }
            if model.family != Family::Gaussian {
                let mid = 0.37;
                let theta = model.canonical_parameter(mid).unwrap();
                assert!((model.psi_prime(theta) - mid).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn closed_forms() {
        let b = ExpFamModel::bernoulli();
        assert!((b.psi(0.3) - (1.0 + 0.3f64.exp()).ln()).abs() < 1e-15);
        assert!((b.psi(800.0) - 800.0).abs() < 1e-12);
        assert!(b.psi(-800.0) >= 0.0);
        let p = ExpFamModel::poisson();
        assert_eq!(p.psi(0.0), 1.0);
    }

    #[test]
    fn identity_link_derivative() {
        let eps = 1e-5;
        let links = [
            Link::Identity,
            Link::Affine {
                slope: 2.5,
                intercept: -1.0,
            },
            Link::Custom {
                h: |t| t + t.powi(3) / 3.0,
                h_prime: |t| 1.0 + t * t,
            },
        ];
        for link in links {
            for k in -20..=20 {
                let t = k as f64 * 0.25;
                assert!(link.h_prime(t) > 0.0);
                let fd = (link.h(t + eps) - link.h(t - eps)) / (2.0 * eps);
                assert!((fd - link.h_prime(t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn densities_normalize() {
        let g = ExpFamModel::gaussian(2.0);
        let (a, b, n) = (-30.0, 30.0, 60_000);
        let h = (b - a) / n as f64;
        let s: f64 = (0..=n)
            .map(|i| {
                let y = a + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * g.log_density(y, 0.7).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        assert!((s - 1.0).abs() < 1e-9);

        let p = ExpFamModel::poisson();
        let theta = 1.3f64.ln();
        let total: f64 = (0..60).map(|y| p.log_density(y as f64, theta).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);

        let bern = ExpFamModel::bernoulli();
        let total: f64 = [0.0, 1.0]
            .iter()
            .map(|&y| bern.log_density(y, -0.4).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prior_validation() {
        assert!(PriorSpec::normal(0.0, -1.0).validate().is_err());
        assert!(PriorSpec {
            a: 0.0,
            ..PriorSpec::default()
        }
        .validate()
        .is_err());
        assert!(PriorSpec::flat().validate().is_ok());
    }
}
