//! Stratified hierarchical Bayes posteriors for the mean of one stratum.
//!
//! Case (i): known dispersion, unknown `(β, r)` with a flat prior on `β` and
//! a gamma prior on `r`. Case (ii): normal data with all of `(β, r, 1/ϕ)`
//! unknown and integrated out analytically.

mod case_i;
mod case_ii;

pub use case_i::{
    case_i_posterior_mean, case_i_posterior_mean_for, g_integral, g_upper_bound, CaseIConfig, GIntegrator,
};
pub(crate) use case_ii::batch_means_se;
pub use case_ii::{
    case_ii_log_density, case_ii_posterior_mean, case_ii_posterior_mean_for, CaseIIEstimate, CaseIIMethod, McmcConfig,
};

use std::io::Write;

use crate::error::{Error, Result};
use crate::quadrature::integrate_partitioned;
use crate::sample::{StratifiedSample, Stratum};

/// `Ŷ_m^HB − {f_m ȳ_m + (1 − f_m) C_m − ȳ_mw}`; in the normal canonical case
/// `C_m = ȳ_m` and this is `Ŷ_m^HB − ȳ_m + ȳ_mw`.
pub fn corrected_stratum_estimator(yhat_hb: f64, f_m: f64, ybar_m: f64, c_m: f64, ybar_mw: f64) -> f64 {
    yhat_hb - (f_m * ybar_m + (1.0 - f_m) * c_m - ybar_mw)
}

/// `∫_{ε₁}^∞ (nx² + d)^{−(n/2+1)} dx / ∫_0^∞ (nx² + d)^{−(n/2+1)} dx`.
pub fn tail_ratio_check(n: usize, d: f64, eps1: f64) -> Result<f64> {
    Ok(ln_tail_ratio(n, d, eps1)?.exp())
}

/// Log of [`tail_ratio_check`], usable when the ratio underflows.
///
/// With `x = (d/n)^{1/2} tan φ` both integrals become integrals of `cosⁿ φ`
/// over finite ranges, which adaptive quadrature handles to full precision.
pub fn ln_tail_ratio(n: usize, d: f64, eps1: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("tail ratio needs n ≥ 2, got {n}")));
    }
    if !(d > 0.0 && eps1 > 0.0 && d.is_finite() && eps1.is_finite()) {
        return Err(Error::InvalidInput("tail ratio needs d > 0 and eps1 > 0".into()));
    }
    let nf = n as f64;
    let phi0 = (eps1 * (nf / d).sqrt()).atan();
    let half_pi = std::f64::consts::FRAC_PI_2;
    let ln_cos0 = phi0.cos().ln();
    let num = integrate_partitioned::<1, _>(
        |p| [(nf * (p.cos().ln() - ln_cos0)).exp()],
        &[phi0, half_pi],
        f64::MIN_POSITIVE,
        1e-13,
        4000,
    )?;
    let den = integrate_partitioned::<1, _>(
        |p| [p.cos().powf(nf)],
        &[0.0, phi0.min(half_pi), half_pi],
        f64::MIN_POSITIVE,
        1e-13,
        4000,
    )?;
    Ok(num.value[0].ln() + nf * ln_cos0 - den.value[0].ln())
}

/// `n` observations with mean exactly `mean`, spread symmetrically by
/// `±spread`. Used to pin a stratum mean while its size grows.
pub fn pinned_stratum(n: usize, mean: f64, spread: f64, population_size: usize) -> Result<Stratum> {
    let mut values: Vec<f64> = (0..n)
        .map(|j| if j % 2 == 0 { mean + spread } else { mean - spread })
        .collect();
    if n % 2 == 1 {
        values[n - 1] = mean;
    }
    Stratum::new(population_size, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedSweepRow {
    pub case: &'static str,
    pub m: usize,
    pub n_m: usize,
    pub posterior_mean: f64,
    pub ybar_m: f64,
    pub abs_error: f64,
}

/// Case (i) and case (ii) posterior means of the last stratum as its sample
/// grows with its mean pinned at `ybar_m`, the other strata held fixed.
pub fn stratified_sweep(
    fixed: &[Vec<f64>],
    ybar_m: f64,
    spread: f64,
    n_grid: &[usize],
    case_i: &CaseIConfig,
    a: f64,
    b: f64,
) -> Result<Vec<StratifiedSweepRow>> {
    let mut rows = Vec::new();
    for &n in n_grid {
        let sample = sweep_sample(fixed, ybar_m, spread, n)?;
        let m = sample.m();
        let pm = case_i_posterior_mean(&sample, case_i)?;
        rows.push(StratifiedSweepRow {
            case: "i",
            m,
            n_m: n,
            posterior_mean: pm,
            ybar_m,
            abs_error: (pm - ybar_m).abs(),
        });
        let est = case_ii_posterior_mean(&sample, a, b, &CaseIIMethod::default())?;
        rows.push(StratifiedSweepRow {
            case: "ii",
            m,
            n_m: n,
            posterior_mean: est.mean,
            ybar_m,
            abs_error: (est.mean - ybar_m).abs(),
        });
    }
    Ok(rows)
}

pub(crate) fn sweep_sample(fixed: &[Vec<f64>], ybar_m: f64, spread: f64, n: usize) -> Result<StratifiedSample> {
    let pop = 1_000_000;
    let mut strata = fixed
        .iter()
        .map(|v| Stratum::new(pop, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    strata.push(pinned_stratum(n, ybar_m, spread, pop)?);
    StratifiedSample::new(strata)
}

pub fn write_stratified_csv<W: Write>(rows: &[StratifiedSweepRow], mut out: W) -> Result<()> {
    writeln!(out, "case,m,n_m,posterior_mean,ybar_m,abs_error")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.case, r.m, r.n_m, r.posterior_mean, r.ybar_m, r.abs_error
        )?;
    }
    Ok(())
}
