//! Monte Carlo study of the corrected HB estimator under repeated PPSWR
//! sampling from fixed nested-error populations.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nested_gibbs::{gibbs_run, ChainConfig};
use crate::quadrature::pairwise_sum;
use crate::rng::{derive_seed, stream};
use crate::sample::{StratifiedSample, Stratum};
use crate::survey_design::{generate_population, hajek_mean, hansen_hurwitz_mean, ppswr_sample_with, FinitePopulation};
use crate::uncertainty::{reml_fit, uncertainty_report, H1Variant};

const JACKKNIFE_GROUPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub table: String,
    pub mcse: String,
    /// One row per (cell, replicate, stratum, measure); skipped when empty.
    pub long: String,
    pub manifest: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            table: "table.csv".into(),
            mcse: "table_mcse.csv".into(),
            long: String::new(),
            manifest: "manifest.toml".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub m: usize,
    pub population_size: usize,
    pub mu: f64,
    pub sigma_v: f64,
    pub sigma_e: Vec<f64>,
    pub n: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    /// Give every unit the same size measure, making the design self-weighting.
    pub equal_sizes: bool,
    pub h1: H1Variant,
    pub weighted_mean: WeightedMean,
    /// Largest tolerated share of failed replicates.
    pub max_failure_rate: f64,
    /// Chain settings; `chain.seed` is unused because every replicate
    /// derives its own chain seed from `seed`.
    pub chain: ChainConfig,
    pub output: OutputConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl SimulationConfig {
    /// 100 strata of 60 units, `n ∈ {10, 20, 30}`, `σ_e ∈ {1, 2}`.
    pub fn full() -> Self {
        Self {
            m: 100,
            population_size: 60,
            mu: 50.0,
            sigma_v: 1.0,
            sigma_e: vec![1.0, 2.0],
            n: vec![10, 20, 30],
            replicates: 1000,
            seed: 20_240_601,
            equal_sizes: false,
            h1: H1Variant::WithMeanTerm,
            weighted_mean: WeightedMean::HansenHurwitz,
            max_failure_rate: 0.01,
            chain: ChainConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// A smaller run: 30 strata, 200 replicates, `n ∈ {10, 30}`.
    pub fn desk() -> Self {
        Self {
            m: 30,
            replicates: 200,
            n: vec![10, 30],
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m < 4 {
            return bad(format!("m must be at least 4, got {}", self.m));
        }
        if self.replicates < 2 {
            return bad(format!("replicates must be at least 2, got {}", self.replicates));
        }
        if self.population_size == 0 {
            return bad("population_size must be positive".into());
        }
        if self.n.is_empty() || self.sigma_e.is_empty() {
            return bad("n and sigma_e must each list at least one value".into());
        }
        if let Some(&n) = self.n.iter().find(|&&n| n == 0 || n > self.population_size) {
            return bad(format!("sample size {n} outside 1..={}", self.population_size));
        }
        if self.n.iter().any(|&n| n * self.m < self.m + 2) {
            return bad("need at least m + 2 observations in total".into());
        }
        if !(self.sigma_v >= 0.0 && self.sigma_e.iter().all(|&s| s > 0.0) && self.mu.is_finite()) {
            return bad("sigma_v must be non-negative and every sigma_e positive".into());
        }
        if !(0.0..1.0).contains(&self.max_failure_rate) {
            return bad("max_failure_rate must lie in [0, 1)".into());
        }
        self.chain.validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Parses a config or a run manifest (whose `config` table is used).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let table = match value.get("config") {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => value,
        };
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Settings for fitting a single observed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimateConfig {
    /// Population size assumed for every stratum.
    pub population_size: usize,
    pub h1: H1Variant,
    pub chain: ChainConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            population_size: 60,
            h1: H1Variant::WithMeanTerm,
            chain: ChainConfig::default(),
        }
    }
}

impl EstimateConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.chain.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

/// Design-weighted stratum mean entering the correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightedMean {
    /// `(1/(nN)) Σ y_k/p_k`.
    #[default]
    HansenHurwitz,
    /// `Σ (y_k/p_k) / Σ (1/p_k)`.
    Hajek,
}

/// One stratum of one replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumRecord {
    pub yhat: f64,
    pub yhat_hb: f64,
    pub postvar: f64,
    pub mu: [f64; 3],
    pub truth: f64,
    pub sq_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub strata: Vec<StratumRecord>,
}

/// Parameters of one (n, σ_e) cell of the study.
#[derive(Debug, Clone, Copy)]
pub struct CellSpec<'a> {
    pub n: usize,
    pub cell: u64,
    pub seed: u64,
    pub chain: &'a ChainConfig,
    pub h1: H1Variant,
    pub weighted_mean: WeightedMean,
}

/// Draw one PPSWR sample per stratum, fit the HB model jointly, correct,
/// and compute the three measures of uncertainty.
pub fn run_replicate(pop: &FinitePopulation, spec: &CellSpec, replicate: usize) -> Result<ReplicateRecord> {
    let m = pop.m();
    let mut strata = Vec::with_capacity(m);
    let mut ybar_w = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = stream(spec.seed, &[spec.cell, replicate as u64, i as u64]);
        let draws = ppswr_sample_with(pop, i, spec.n, &mut rng)?;
        let big_n = pop.stratum(i)?.len();
        ybar_w.push(match spec.weighted_mean {
            WeightedMean::HansenHurwitz => hansen_hurwitz_mean(&draws.draws, big_n)?,
            WeightedMean::Hajek => hajek_mean(&draws.draws)?,
        });
        strata.push(Stratum::new(big_n, draws.values())?);
    }
    let sample = StratifiedSample::new(strata)?;
    let chain = ChainConfig {
        seed: derive_seed(spec.seed, &[spec.cell, replicate as u64, 0x6368_6169_6e]),
        ..*spec.chain
    };
    let summary = gibbs_run(&sample, &chain)?;
    let vc = reml_fit(&sample)?;
    let report = uncertainty_report(&sample, &summary, &vc, &ybar_w, spec.h1)?;
    let truth = pop.true_means();
    let strata = report
        .rows
        .iter()
        .zip(truth)
        .map(|(r, t)| StratumRecord {
            yhat: r.yhat_dc,
            yhat_hb: r.yhat_hb,
            postvar: r.postvar,
            mu: [r.mu1, r.mu2, r.mu3],
            truth: t,
            sq_error: (r.yhat_dc - t).powi(2),
        })
        .collect();
    Ok(ReplicateRecord { replicate, strata })
}

/// Report invariants: `MU1 ≥ V(Ȳ_m | y_s)`, `MU2 ≥ 0`, `MU3` the exact midpoint.
pub fn invariant_violations(record: &ReplicateRecord) -> usize {
    record
        .strata
        .iter()
        .filter(|s| {
            !(s.mu[0] >= s.postvar && s.postvar >= 0.0 && s.mu[1] >= 0.0 && s.mu[2] == 0.5 * (s.mu[0] + s.mu[1]))
        })
        .count()
}

fn mean_of(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Replicate average of `(Ŷ_m − Ȳ_m)²` and its Monte Carlo standard error.
pub fn mse_d(records: &[ReplicateRecord], stratum: usize) -> Result<(f64, f64)> {
    if records.len() < 2 {
        return Err(Error::TooFewReplicates {
            needed: 2,
            got: records.len(),
        });
    }
    let sq: Vec<f64> = records.iter().map(|r| r.strata[stratum].sq_error).collect();
    let mean = mean_of(&sq);
    let dev: Vec<f64> = sq.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (sq.len() - 1) as f64;
    Ok((mean, (var / sq.len() as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumSummary {
    pub mse: f64,
    pub mean_mu: [f64; 3],
    pub rb: [f64; 3],
    pub rrmse: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub strata: Vec<StratumSummary>,
    pub arb: [f64; 3],
    pub arrmse: [f64; 3],
}

/// `RB = (E_d[MU] − MSE_d)/MSE_d` and `RRMSE = √E_d[(MU − MSE_d)²]/MSE_d`
/// per stratum, averaged over strata.
pub fn aggregate(records: &[ReplicateRecord]) -> Result<Aggregate> {
    if records.len() < 2 {
        return Err(Error::TooFewReplicates {
            needed: 2,
            got: records.len(),
        });
    }
    let m = records[0].strata.len();
    let strata = (0..m)
        .map(|i| {
            let (mse, _) = mse_d(records, i)?;
            if !(mse > 0.0) {
                return Err(Error::InvalidInput(format!("stratum {i} has zero design MSE")));
            }
            let mut mean_mu = [0.0; 3];
            let mut rb = [0.0; 3];
            let mut rrmse = [0.0; 3];
            for k in 0..3 {
                let mus: Vec<f64> = records.iter().map(|r| r.strata[i].mu[k]).collect();
                mean_mu[k] = mean_of(&mus);
                rb[k] = (mean_mu[k] - mse) / mse;
                let dev: Vec<f64> = mus.iter().map(|x| (x - mse).powi(2)).collect();
                rrmse[k] = mean_of(&dev).sqrt() / mse;
            }
            Ok(StratumSummary {
                mse,
                mean_mu,
                rb,
                rrmse,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut arb = [0.0; 3];
    let mut arrmse = [0.0; 3];
    for k in 0..3 {
        arb[k] = mean_of(&strata.iter().map(|s| s.rb[k]).collect::<Vec<_>>());
        arrmse[k] = mean_of(&strata.iter().map(|s| s.rrmse[k]).collect::<Vec<_>>());
    }
    Ok(Aggregate { strata, arb, arrmse })
}

/// Delete-a-group jackknife standard errors of `(ARB, ARRMSE)`.
pub fn jackknife_se(records: &[ReplicateRecord], groups: usize) -> Result<([f64; 3], [f64; 3])> {
    let g = groups.min(records.len());
    if g < 2 {
        return Err(Error::TooFewReplicates {
            needed: 2,
            got: records.len(),
        });
    }
    let estimates = (0..g)
        .map(|k| {
            let kept: Vec<ReplicateRecord> = records
                .iter()
                .enumerate()
                .filter(|(j, _)| j % g != k)
                .map(|(_, r)| r.clone())
                .collect();
            aggregate(&kept)
        })
        .collect::<Result<Vec<_>>>()?;
    let gf = g as f64;
    let se = |pick: &dyn Fn(&Aggregate) -> f64| {
        let vals: Vec<f64> = estimates.iter().map(pick).collect();
        let mean = mean_of(&vals);
        ((gf - 1.0) / gf * pairwise_sum(&vals.iter().map(|v| (v - mean).powi(2)).collect::<Vec<_>>())).sqrt()
    };
    let mut arb = [0.0; 3];
    let mut arrmse = [0.0; 3];
    for k in 0..3 {
        arb[k] = se(&|a| a.arb[k]);
        arrmse[k] = se(&|a| a.arrmse[k]);
    }
    Ok((arb, arrmse))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub sigma_e: f64,
    pub aggregate: Aggregate,
    pub arb_se: [f64; 3],
    pub arrmse_se: [f64; 3],
    pub replicates: usize,
    pub failed: Vec<(usize, String)>,
    pub invariant_violations: usize,
    pub records: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub cells: Vec<CellResult>,
}

impl SimulationResult {
    pub fn invariant_violations(&self) -> usize {
        self.cells.iter().map(|c| c.invariant_violations).sum()
    }

    pub fn cell(&self, n: usize, sigma_e: f64) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.n == n && c.sigma_e == sigma_e)
    }
}

/// The fixed population for the `index`-th value of `σ_e`.
pub fn cell_population(cfg: &SimulationConfig, sigma_index: usize) -> Result<FinitePopulation> {
    let sizes = vec![cfg.population_size; cfg.m];
    let seed = derive_seed(cfg.seed, &[0x706f_70, sigma_index as u64]);
    let pop = generate_population(&sizes, cfg.mu, cfg.sigma_v, cfg.sigma_e[sigma_index], seed)?;
    Ok(if cfg.equal_sizes { pop.with_equal_sizes() } else { pop })
}

fn run_cell(cfg: &SimulationConfig, pop: &FinitePopulation, n: usize, sigma_e: f64, cell: u64) -> Result<CellResult> {
    let spec = CellSpec {
        n,
        cell,
        seed: cfg.seed,
        chain: &cfg.chain,
        h1: cfg.h1,
        weighted_mean: cfg.weighted_mean,
    };
    let outcomes: Vec<Result<ReplicateRecord>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(pop, &spec, r))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rec) => records.push(rec),
            Err(e) => failed.push((r, e.to_string())),
        }
    }
    let limit = cfg.max_failure_rate;
    if failed.len() as f64 > limit * cfg.replicates as f64 {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: cfg.replicates,
            limit,
        });
    }
    let aggregate = aggregate(&records)?;
    let (arb_se, arrmse_se) = jackknife_se(&records, JACKKNIFE_GROUPS)?;
    let invariant_violations = records.iter().map(invariant_violations).sum();
    Ok(CellResult {
        n,
        sigma_e,
        aggregate,
        arb_se,
        arrmse_se,
        replicates: records.len(),
        failed,
        invariant_violations,
        records,
    })
}

/// Run every `(σ_e, n)` cell. `workers` sets the thread count; results do
/// not depend on it.
pub fn run_simulation(cfg: &SimulationConfig, workers: Option<usize>) -> Result<SimulationResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let mut cells = Vec::new();
        for (si, &sigma_e) in cfg.sigma_e.iter().enumerate() {
            let pop = cell_population(cfg, si)?;
            for (ni, &n) in cfg.n.iter().enumerate() {
                let cell = ((si as u64) << 32) | ni as u64;
                cells.push(run_cell(cfg, &pop, n, sigma_e, cell)?);
            }
        }
        Ok(SimulationResult { cells })
    })
}

pub fn write_table_csv<W: Write>(result: &SimulationResult, mut out: W) -> Result<()> {
    writeln!(out, "n,sigma_e,arb1,arb2,arb3,arrmse1,arrmse2,arrmse3")?;
    for c in &result.cells {
        let a = &c.aggregate;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.n, c.sigma_e, a.arb[0], a.arb[1], a.arb[2], a.arrmse[0], a.arrmse[1], a.arrmse[2]
        )?;
    }
    Ok(())
}

pub fn write_mcse_csv<W: Write>(result: &SimulationResult, mut out: W) -> Result<()> {
    writeln!(
        out,
        "n,sigma_e,arb1_se,arb2_se,arb3_se,arrmse1_se,arrmse2_se,arrmse3_se,replicates,failed"
    )?;
    for c in &result.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.n,
            c.sigma_e,
            c.arb_se[0],
            c.arb_se[1],
            c.arb_se[2],
            c.arrmse_se[0],
            c.arrmse_se[1],
            c.arrmse_se[2],
            c.replicates,
            c.failed.len()
        )?;
    }
    Ok(())
}

pub fn write_long_csv<W: Write>(result: &SimulationResult, mut out: W) -> Result<()> {
    writeln!(out, "n,sigma_e,replicate,stratum,measure,mu,sq_error")?;
    for c in &result.cells {
        for r in &c.records {
            for (i, s) in r.strata.iter().enumerate() {
                for k in 0..3 {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        c.n,
                        c.sigma_e,
                        r.replicate,
                        i,
                        k + 1,
                        s.mu[k],
                        s.sq_error
                    )?;
                }
            }
        }
    }
    Ok(())
}

/// TOML manifest: the full config under `config` plus run bookkeeping.
pub fn manifest_string(cfg: &SimulationConfig, result: &SimulationResult) -> Result<String> {
    let mut text = String::new();
    writeln!(text, "# rerun with: dc-hb simulate --config <this file>").unwrap();
    writeln!(text, "crate_version = \"{}\"", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(text, "invariant_violations = {}", result.invariant_violations()).unwrap();
    let failed: Vec<String> = result
        .cells
        .iter()
        .map(|c| {
            format!(
                "{{ n = {}, sigma_e = {}, failed = {} }}",
                c.n,
                c.sigma_e,
                c.failed.len()
            )
        })
        .collect();
    writeln!(text, "cells = [{}]", failed.join(", ")).unwrap();
    writeln!(text).unwrap();
    let body = cfg.to_toml_string()?;
    let mut cfg_table = toml::Table::new();
    cfg_table.insert(
        "config".into(),
        toml::Value::Table(
            body.parse()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
        ),
    );
    text.push_str(&toml::to_string(&cfg_table).map_err(|e| Error::Config(e.to_string()))?);
    Ok(text)
}

/// Write the table, its Monte Carlo standard errors, the manifest and (when
/// configured) the long-format records. Returns the written paths.
pub fn emit(cfg: &SimulationConfig, result: &SimulationResult) -> Result<Vec<PathBuf>> {
    let o = &cfg.output;
    std::fs::create_dir_all(&o.dir)?;
    let mut paths = Vec::new();
    let mut write = |name: &str, f: &dyn Fn(&mut Vec<u8>) -> Result<()>| -> Result<()> {
        let path = o.dir.join(name);
        let mut buf = Vec::new();
        f(&mut buf)?;
        std::fs::write(&path, buf)?;
        paths.push(path);
        Ok(())
    };
    write(&o.table, &|b| write_table_csv(result, b))?;
    write(&o.mcse, &|b| write_mcse_csv(result, b))?;
    if !o.long.is_empty() {
        write(&o.long, &|b| write_long_csv(result, b))?;
    }
    let manifest = manifest_string(cfg, result)?;
    write(&o.manifest, &|b| {
        b.extend_from_slice(manifest.as_bytes());
        Ok(())
    })?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SimulationConfig {
        SimulationConfig {
            m: 6,
            population_size: 12,
            sigma_e: vec![1.0],
            n: vec![4],
            replicates: 6,
            seed: 3,
            chain: ChainConfig {
                total_draws: 120,
                burn_in: 20,
                ..Default::default()
            },
            ..SimulationConfig::full()
        }
    }

    fn record(sq: f64, mu: [f64; 3]) -> StratumRecord {
        StratumRecord {
            yhat: 0.0,
            yhat_hb: 0.0,
            postvar: 0.0,
            mu,
            truth: 0.0,
            sq_error: sq,
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let records: Vec<ReplicateRecord> = [0.8, 1.2]
            .iter()
            .enumerate()
            .map(|(r, &sq)| ReplicateRecord {
                replicate: r,
                strata: vec![record(sq, [1.2, 1.0, 1.1]), record(sq, [1.2, 1.0, 1.1])],
            })
            .collect();
        let a = aggregate(&records).unwrap();
        assert!((a.arb[0] - 0.2).abs() < 1e-12);
        assert!(a.arb[1].abs() < 1e-12);
        assert!((a.arrmse[0] - 0.2).abs() < 1e-12);
        assert!(a.arrmse[1].abs() < 1e-12);
        assert!(aggregate(&records[..1]).is_err());
        let zero: Vec<ReplicateRecord> = (0..3)
            .map(|r| ReplicateRecord {
                replicate: r,
                strata: vec![record(0.0, [1.0; 3])],
            })
            .collect();
        assert_eq!(mse_d(&zero, 0).unwrap(), (0.0, 0.0));
        assert!(aggregate(&zero).is_err());
    }

    #[test]
    fn presets_and_config_round_trip() {
        let p = SimulationConfig::full();
        assert_eq!((p.m, p.population_size, p.mu, p.sigma_v), (100, 60, 50.0, 1.0));
        assert_eq!(p.n, vec![10, 20, 30]);
        assert_eq!((p.chain.total_draws, p.chain.burn_in), (1050, 50));
        let d = SimulationConfig::desk();
        assert_eq!((d.m, d.replicates), (30, 200));
        let text = d.to_toml_string().unwrap();
        assert_eq!(SimulationConfig::from_toml_str(&text).unwrap(), d);
        let partial = SimulationConfig::from_toml_str("m = 12\nreplicates = 5\n[chain]\nburn_in = 10\n").unwrap();
        assert_eq!((partial.m, partial.replicates, partial.chain.burn_in), (12, 5, 10));
        assert_eq!(partial.chain.total_draws, 1050);
        assert!(SimulationConfig::from_toml_str("m = 2").is_err());
        assert!(SimulationConfig::from_toml_str("n = [0]").is_err());
    }

    #[test]
    fn self_weighting_collapses_correction() {
        let cfg = SimulationConfig {
            equal_sizes: true,
            ..tiny()
        };
        let pop = cell_population(&cfg, 0).unwrap();
        let spec = CellSpec {
            n: 4,
            cell: 0,
            seed: cfg.seed,
            chain: &cfg.chain,
            h1: cfg.h1,
            weighted_mean: cfg.weighted_mean,
        };
        let rec = run_replicate(&pop, &spec, 1).unwrap();
        for s in &rec.strata {
            assert_eq!(s.yhat, s.yhat_hb);
            assert_eq!(s.mu[0], s.postvar);
        }
        assert_eq!(invariant_violations(&rec), 0);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = tiny();
        let a = run_simulation(&cfg, Some(1)).unwrap();
        let b = run_simulation(&cfg, Some(3)).unwrap();
        assert_eq!(a, b);
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        write_table_csv(&a, &mut ta).unwrap();
        write_table_csv(&b, &mut tb).unwrap();
        assert_eq!(ta, tb);
        assert!(String::from_utf8(ta)
            .unwrap()
            .starts_with("n,sigma_e,arb1,arb2,arb3,arrmse1,arrmse2,arrmse3\n"));
    }

    #[test]
    fn manifest_reproduces_config() {
        let cfg = tiny();
        let result = run_simulation(&cfg, Some(1)).unwrap();
        let text = manifest_string(&cfg, &result).unwrap();
        assert_eq!(SimulationConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
