use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::survey_design::{csv_error, hansen_hurwitz_from};

/// Observations from one stratum together with the stratum's population size.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub population_size: usize,
    pub values: Vec<f64>,
}

impl Stratum {
    pub fn new(population_size: usize, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "every stratum needs at least one observation".into(),
            ));
        }
        if values.len() > population_size {
            return Err(Error::InvalidInput(format!(
                "stratum sample size {} exceeds population size {population_size}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("observations must be finite".into()));
        }
        Ok(Self {
            population_size,
            values,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sum of squared deviations from the stratum mean.
    pub fn within_ss(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|y| (y - m) * (y - m)).sum()
    }

    pub fn fraction(&self) -> f64 {
        self.n() as f64 / self.population_size as f64
    }
}

/// Stratified sample: `n_i` observations from each of `m ≥ 2` strata.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedSample {
    strata: Vec<Stratum>,
}

impl StratifiedSample {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        if strata.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 strata, got {}",
                strata.len()
            )));
        }
        Ok(Self { strata })
    }

    /// Convenience constructor with a common population size.
    pub fn from_values(population_size: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        let strata = values
            .into_iter()
            .map(|v| Stratum::new(population_size, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(strata)
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub fn stratum(&self, i: usize) -> &Stratum {
        &self.strata[i]
    }

    pub fn m(&self) -> usize {
        self.strata.len()
    }

    pub fn n_total(&self) -> usize {
        self.strata.iter().map(Stratum::n).sum()
    }

    pub fn means(&self) -> Vec<f64> {
        self.strata.iter().map(Stratum::mean).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.strata.iter().map(Stratum::n).collect()
    }

    pub fn grand_mean(&self) -> f64 {
        let total: f64 = self.strata.iter().flat_map(|s| s.values.iter()).sum();
        total / self.n_total() as f64
    }

    /// Pooled within-stratum sum of squares.
    pub fn within_ss(&self) -> f64 {
        self.strata.iter().map(Stratum::within_ss).sum()
    }

    /// Same data with strata reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            strata: order.iter().map(|&i| self.strata[i].clone()).collect(),
        }
    }

    pub fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.m() {
            return Err(Error::InvalidInput(format!(
                "stratum index {i} out of range (m = {})",
                self.m()
            )));
        }
        Ok(())
    }
}

/// Observations read from a `stratum,value[,prob]` CSV. Strata keep the
/// order of their first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Per-draw selection probabilities, when the file has a `prob` column.
    pub probs: Option<Vec<Vec<f64>>>,
}

impl SampleTable {
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            stratum: String,
            value: f64,
            prob: Option<f64>,
        }
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers().map_err(csv_error)?.clone();
        let has = |name: &str| headers.iter().any(|h| h == name);
        if !has("stratum") || !has("value") {
            return Err(Error::InvalidInput(
                "sample CSV needs `stratum` and `value` columns".into(),
            ));
        }
        let with_prob = has("prob");
        let mut labels: Vec<String> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        let mut probs: Vec<Vec<f64>> = Vec::new();
        for (k, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(csv_error)?;
            let i = match labels.iter().position(|l| *l == row.stratum) {
                Some(i) => i,
                None => {
                    labels.push(row.stratum);
                    values.push(Vec::new());
                    probs.push(Vec::new());
                    labels.len() - 1
                }
            };
            values[i].push(row.value);
            if with_prob {
                let p = row
                    .prob
                    .ok_or_else(|| Error::InvalidInput(format!("row {} has no probability", k + 2)))?;
                probs[i].push(p);
            }
        }
        Ok(Self {
            labels,
            values,
            probs: with_prob.then_some(probs),
        })
    }

    pub fn to_sample(&self, population_size: usize) -> Result<StratifiedSample> {
        StratifiedSample::from_values(population_size, self.values.clone())
    }

    /// Hansen–Hurwitz means when probabilities are present, sample means
    /// otherwise.
    pub fn weighted_means(&self, population_size: usize) -> Result<Vec<f64>> {
        match &self.probs {
            Some(p) => self
                .values
                .iter()
                .zip(p)
                .map(|(v, p)| hansen_hurwitz_from(v, p, population_size))
                .collect(),
            None => Ok(self
                .values
                .iter()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_quantities() {
        let s = StratifiedSample::from_values(10, vec![vec![0.0, 2.0], vec![1.0, 3.0, 5.0]]).unwrap();
        assert_eq!(s.m(), 2);
        assert_eq!(s.n_total(), 5);
        assert_eq!(s.means(), vec![1.0, 3.0]);
        assert_eq!(s.within_ss(), 2.0 + 8.0);
        assert_eq!(s.stratum(1).fraction(), 0.3);
        assert_eq!(s.grand_mean(), 11.0 / 5.0);
    }

    #[test]
    fn invariants_enforced() {
        assert!(StratifiedSample::from_values(10, vec![vec![1.0]]).is_err());
        assert!(StratifiedSample::from_values(1, vec![vec![1.0, 2.0], vec![1.0]]).is_err());
        assert!(StratifiedSample::from_values(3, vec![vec![], vec![1.0]]).is_err());
        assert!(StratifiedSample::from_values(3, vec![vec![f64::NAN], vec![1.0]]).is_err());
    }

    #[test]
    fn sample_table_csv() {
        let t = SampleTable::read_csv("stratum,value\nb,1.0\na,2.0\nb,3.0\n".as_bytes()).unwrap();
        assert_eq!(t.labels, vec!["b", "a"]);
        assert_eq!(t.values, vec![vec![1.0, 3.0], vec![2.0]]);
        assert_eq!(t.weighted_means(10).unwrap(), vec![2.0, 2.0]);
        let w = SampleTable::read_csv("stratum,value,prob\n1,2.0,0.5\n1,4.0,0.25\n2,1.0,0.1\n".as_bytes()).unwrap();
        let hh = w.weighted_means(4).unwrap();
        assert!((hh[0] - (2.0 / 0.5 + 4.0 / 0.25) / 8.0).abs() < 1e-15);
        assert!(SampleTable::read_csv("stratum,value,prob\n1,2.0,\n".as_bytes()).is_err());
        assert!(SampleTable::read_csv("group,value\n1,2.0\n".as_bytes()).is_err());
        assert!(SampleTable::read_csv("stratum,value\n1,x\n".as_bytes()).is_err());
    }
}
