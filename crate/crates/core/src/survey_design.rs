//! Finite populations, probability-proportional-to-size sampling with
//! replacement (PPSWR) and the Hansen–Hurwitz estimator of a stratum mean.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::Deserialize;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::stream;

/// One stratum of a finite population: unit values, size measures and the
/// per-draw selection probabilities `p_j = x_j / Σ x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStratum {
    values: Vec<f64>,
    sizes: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl PopulationStratum {
    pub fn new(values: Vec<f64>, sizes: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != sizes.len() {
            return Err(Error::InvalidInput(format!(
                "stratum needs matching non-empty values and sizes ({} vs {})",
                values.len(),
                sizes.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("unit values must be finite".into()));
        }
        if sizes.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidInput("size measures must be positive and finite".into()));
        }
        let total: f64 = sizes.iter().sum();
        let probs: Vec<f64> = sizes.iter().map(|x| x / total).collect();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Self {
            values,
            sizes,
            probs,
            cumulative,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// True stratum mean `Ȳ_i`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Unit whose cumulative-probability interval contains `u ∈ [0, 1)`.
    pub fn unit_at(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.len() - 1)
    }

    /// Exact design variance of the Hansen–Hurwitz mean with `n` draws:
    /// `(1/n) Σ p_j (y_j/(N p_j) − Ȳ)²`.
    pub fn hansen_hurwitz_variance(&self, n: usize) -> f64 {
        let big_n = self.len() as f64;
        let mean = self.mean();
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(y, p)| p * (y / (big_n * p) - mean).powi(2))
            .sum::<f64>()
            / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    strata: Vec<PopulationStratum>,
}

impl FinitePopulation {
    pub fn new(strata: Vec<PopulationStratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::InvalidInput("population needs at least one stratum".into()));
        }
        Ok(Self { strata })
    }

    pub fn strata(&self) -> &[PopulationStratum] {
        &self.strata
    }

    pub fn stratum(&self, i: usize) -> Result<&PopulationStratum> {
        self.strata
            .get(i)
            .ok_or_else(|| Error::InvalidInput(format!("stratum {i} out of range (m = {})", self.strata.len())))
    }

    pub fn m(&self) -> usize {
        self.strata.len()
    }

    pub fn true_means(&self) -> Vec<f64> {
        self.strata.iter().map(PopulationStratum::mean).collect()
    }

    /// Copy of the population with every size measure set to 1, which makes
    /// PPSWR self-weighting.
    pub fn with_equal_sizes(&self) -> Self {
        let strata = self
            .strata
            .iter()
            .map(|s| PopulationStratum::new(s.values.clone(), vec![1.0; s.len()]).expect("valid stratum"))
            .collect();
        Self { strata }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "stratum,unit,value,size")?;
        for (i, s) in self.strata.iter().enumerate() {
            for (j, (y, x)) in s.values.iter().zip(&s.sizes).enumerate() {
                writeln!(out, "{i},{j},{y},{x}")?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            stratum: usize,
            unit: usize,
            value: f64,
            size: f64,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let header = reader.headers().map_err(csv_error)?.clone();
        if header.iter().collect::<Vec<_>>() != ["stratum", "unit", "value", "size"] {
            return Err(Error::InvalidInput(format!(
                "expected header `stratum,unit,value,size`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut strata: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (k, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(csv_error)?;
            let bad = || Error::InvalidInput(format!("population row {} is out of order", k + 2));
            if row.stratum > strata.len() {
                return Err(bad());
            }
            if row.stratum == strata.len() {
                strata.push((Vec::new(), Vec::new()));
            }
            let s = &mut strata[row.stratum];
            if row.unit != s.0.len() {
                return Err(bad());
            }
            s.0.push(row.value);
            s.1.push(row.size);
        }
        let strata = strata
            .into_iter()
            .map(|(v, x)| PopulationStratum::new(v, x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(strata)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("CSV: {e}"))
}

/// Nested-error population: `Y_ij = μ + v_i + e_ij` with
/// `v_i ~ N(0, σ_v²)`, `e_ij ~ N(0, σ_e²)` and sizes `x_ij ~ Exp(1)`.
/// Each stratum uses its own seed stream derived from `seed`.
pub fn generate_population(
    population_sizes: &[usize],
    mu: f64,
    sigma_v: f64,
    sigma_e: f64,
    seed: u64,
) -> Result<FinitePopulation> {
    if !(sigma_v >= 0.0 && sigma_e >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput("standard deviations must be non-negative".into()));
    }
    if population_sizes.iter().any(|&n| n == 0) {
        return Err(Error::InvalidInput("every stratum needs at least one unit".into()));
    }
    let strata = population_sizes
        .iter()
        .enumerate()
        .map(|(i, &big_n)| {
            let mut rng = stream(seed, &[0x504f_50, i as u64]);
            let z: f64 = StandardNormal.sample(&mut rng);
            let v = sigma_v * z;
            let values: Vec<f64> = (0..big_n)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mu + v + sigma_e * e
                })
                .collect();
            let sizes: Vec<f64> = (0..big_n)
                .map(|_| {
                    let x: f64 = Exp1.sample(&mut rng);
                    // Exp1 can return exactly 0 with negligible probability.
                    x.max(f64::MIN_POSITIVE)
                })
                .collect();
            PopulationStratum::new(values, sizes)
        })
        .collect::<Result<Vec<_>>>()?;
    FinitePopulation::new(strata)
}

/// One PPSWR draw: the unit, its value and its per-draw probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub unit: usize,
    pub value: f64,
    pub prob: f64,
}

/// Ordered draws from one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraws {
    pub stratum: usize,
    pub draws: Vec<Draw>,
}

impl SampleDraws {
    pub fn values(&self) -> Vec<f64> {
        self.draws.iter().map(|d| d.value).collect()
    }

    pub fn mean(&self) -> f64 {
        self.draws.iter().map(|d| d.value).sum::<f64>() / self.draws.len() as f64
    }
}

/// `n` independent draws with `P(unit j) = p_j`, by inverse CDF on the
/// cumulative probabilities.
pub fn ppswr_sample_with<R: Rng + ?Sized>(
    pop: &FinitePopulation,
    stratum: usize,
    n: usize,
    rng: &mut R,
) -> Result<SampleDraws> {
    if n == 0 {
        return Err(Error::InvalidInput("PPSWR needs n ≥ 1".into()));
    }
    let s = pop.stratum(stratum)?;
    let draws = (0..n)
        .map(|_| {
            let j = s.unit_at(rng.gen::<f64>());
            Draw {
                unit: j,
                value: s.values[j],
                prob: s.probs[j],
            }
        })
        .collect();
    Ok(SampleDraws { stratum, draws })
}

pub fn ppswr_sample(pop: &FinitePopulation, stratum: usize, n: usize, seed: u64) -> Result<SampleDraws> {
    let mut rng = stream(seed, &[stratum as u64]);
    ppswr_sample_with(pop, stratum, n, &mut rng)
}

/// Hansen–Hurwitz mean `(1/(nN)) Σ_k y_k / p_k`.
pub fn hansen_hurwitz_mean(draws: &[Draw], population_size: usize) -> Result<f64> {
    let values: Vec<f64> = draws.iter().map(|d| d.value).collect();
    let probs: Vec<f64> = draws.iter().map(|d| d.prob).collect();
    hansen_hurwitz_from(&values, &probs, population_size)
}

/// Hansen–Hurwitz mean from an external probability column.
pub fn hansen_hurwitz_from(values: &[f64], probs: &[f64], population_size: usize) -> Result<f64> {
    if values.is_empty() || values.len() != probs.len() {
        return Err(Error::InvalidInput(
            "values and probabilities must be non-empty and aligned".into(),
        ));
    }
    if population_size == 0 {
        return Err(Error::InvalidInput("population size must be positive".into()));
    }
    let mut total = 0.0;
    for (k, (y, p)) in values.iter().zip(probs).enumerate() {
        if !(*p > 0.0) {
            return Err(Error::ZeroProbability(k));
        }
        total += y / p;
    }
    // Equal probabilities of 1/N: return the plain mean so that a
    // self-weighting design reproduces the sample mean bit for bit.
    let nf = population_size as f64;
    if probs.iter().all(|&p| p == probs[0]) && (probs[0] * nf - 1.0).abs() <= 4.0 * f64::EPSILON {
        return Ok(values.iter().sum::<f64>() / values.len() as f64);
    }
    Ok(total / (values.len() as f64 * population_size as f64))
}

/// Ratio form `Σ (y_k/p_k) / Σ (1/p_k)` of the Hansen–Hurwitz mean.
pub fn hajek_mean(draws: &[Draw]) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no draws".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, d) in draws.iter().enumerate() {
        if !(d.prob > 0.0) {
            return Err(Error::ZeroProbability(k));
        }
        num += d.value / d.prob;
        den += 1.0 / d.prob;
    }
    Ok(num / den)
}

/// All `N^n` ordered with-replacement samples of one stratum with their
/// probabilities `Π_k p_{j_k}`.
pub fn enumerate_designs(pop: &FinitePopulation, stratum: usize, n: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    let s = pop.stratum(stratum)?;
    let big_n = s.len();
    let count = (big_n as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > 1_000_000 {
        return Err(Error::EnumerationTooLarge(count));
    }
    if n == 0 {
        return Err(Error::InvalidInput("enumeration needs n ≥ 1".into()));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut idx = vec![0usize; n];
    loop {
        let p: f64 = idx.iter().map(|&j| s.probs[j]).product();
        out.push((idx.clone(), p));
        let mut k = n;
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < big_n {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn toy() -> FinitePopulation {
        FinitePopulation::new(vec![
            PopulationStratum::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).unwrap()
        ])
        .unwrap()
    }

    #[test]
    fn probabilities_normalize() {
        let pop = generate_population(&[60; 5], 50.0, 1.0, 1.0, 3).unwrap();
        for s in pop.strata() {
            assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.probs().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn zero_variances_give_constant_population() {
        let pop = generate_population(&[10, 20], 50.0, 0.0, 0.0, 9).unwrap();
        assert!(pop.strata().iter().all(|s| s.values().iter().all(|&y| y == 50.0)));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_population(&[30; 4], 50.0, 1.0, 2.0, 11).unwrap();
        let b = generate_population(&[30; 4], 50.0, 1.0, 2.0, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_population(&[30; 4], 50.0, 1.0, 2.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn size_measures_have_unit_mean() {
        let pop = generate_population(&[60; 100], 50.0, 1.0, 1.0, 5).unwrap();
        let all: Vec<f64> = pop.strata().iter().flat_map(|s| s.sizes().iter().cloned()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        assert!(mean > 0.97 && mean < 1.03, "{mean}");
    }

    #[test]
    fn ppswr_frequencies_follow_sizes() {
        let pop = toy();
        let draws = ppswr_sample(&pop, 0, 100_000, 42).unwrap();
        let mut counts = [0usize; 3];
        for d in &draws.draws {
            counts[d.unit] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let p = (j + 1) as f64 / 6.0;
            let sd = (100_000.0 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - 100_000.0 * p).abs() < 3.0 * sd, "unit {j}: {c}");
        }
    }

    #[test]
    fn unit_lookup_boundaries() {
        let pop = toy();
        let s = &pop.strata()[0];
        assert_eq!(s.unit_at(0.0), 0);
        assert_eq!(s.unit_at(1.0 / 6.0 - 1e-12), 0);
        assert_eq!(s.unit_at(0.5), 2);
        assert_eq!(s.unit_at(0.999_999), 2);
    }

    #[test]
    fn hansen_hurwitz_is_unbiased_by_enumeration() {
        for sizes in [vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]] {
            let pop = FinitePopulation::new(vec![PopulationStratum::new(vec![1.0, 2.0, 3.0], sizes.clone()).unwrap()])
                .unwrap();
            let designs = enumerate_designs(&pop, 0, 2).unwrap();
            assert_eq!(designs.len(), 9);
            let s = &pop.strata()[0];
            let total_p: f64 = designs.iter().map(|(_, p)| p).sum();
            assert!((total_p - 1.0).abs() < 1e-12);
            let mut mean = 0.0;
            let mut second = 0.0;
            for (idx, p) in &designs {
                let draws: Vec<Draw> = idx
                    .iter()
                    .map(|&j| Draw {
                        unit: j,
                        value: s.values()[j],
                        prob: s.probs()[j],
                    })
                    .collect();
                let hh = hansen_hurwitz_mean(&draws, 3).unwrap();
                mean += p * hh;
                second += p * hh * hh;
            }
            assert!((mean - 2.0).abs() < 1e-12);
            // (1/n) Σ p_i (y_i/(N p_i) − Ȳ)²
            let total: f64 = sizes.iter().sum();
            let expected: f64 = [1.0, 2.0, 3.0]
                .iter()
                .zip(&sizes)
                .map(|(y, x)| {
                    let p = x / total;
                    p * (y / (3.0 * p) - 2.0).powi(2)
                })
                .sum::<f64>()
                / 2.0;
            assert!((second - mean * mean - expected).abs() < 1e-12);
            assert!((s.hansen_hurwitz_variance(2) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_probabilities_reduce_to_sample_mean() {
        let draws = [
            Draw {
                unit: 0,
                value: 1.5,
                prob: 0.25,
            },
            Draw {
                unit: 3,
                value: 4.0,
                prob: 0.25,
            },
            Draw {
                unit: 1,
                value: 2.5,
                prob: 0.25,
            },
        ];
        let hh = hansen_hurwitz_mean(&draws, 4).unwrap();
        assert!((hh - 8.0 / 3.0).abs() < 1e-14);
        assert!(matches!(
            hansen_hurwitz_from(&[1.0, 2.0], &[0.5, 0.0], 2),
            Err(Error::ZeroProbability(1))
        ));
    }

    #[test]
    fn enumeration_limits_and_small_cases() {
        let two = FinitePopulation::new(vec![PopulationStratum::new(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap()]).unwrap();
        let d = enumerate_designs(&two, 0, 2).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.iter().all(|(_, p)| (p - 0.25).abs() < 1e-15));
        let five = generate_population(&[5], 0.0, 1.0, 1.0, 1).unwrap();
        let d = enumerate_designs(&five, 0, 3).unwrap();
        assert_eq!(d.len(), 125);
        assert!((d.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
        let big = generate_population(&[60], 0.0, 1.0, 1.0, 1).unwrap();
        assert!(matches!(
            enumerate_designs(&big, 0, 4),
            Err(Error::EnumerationTooLarge(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let pop = generate_population(&[4, 3], 50.0, 1.0, 1.0, 2).unwrap();
        let mut buf = Vec::new();
        pop.write_csv(&mut buf).unwrap();
        let back = FinitePopulation::read_csv(&buf[..]).unwrap();
        assert_eq!(pop, back);
        assert!(FinitePopulation::read_csv("a,b\n".as_bytes()).is_err());
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let pop = toy();
        let a = ppswr_sample(&pop, 0, 20, 5).unwrap();
        let b = ppswr_sample(&pop, 0, 20, 5).unwrap();
        assert_eq!(a, b);
        let mut rng = stream(5, &[0]);
        let c = ppswr_sample_with(&pop, 0, 20, &mut rng).unwrap();
        assert_eq!(a, c);
    }
}
