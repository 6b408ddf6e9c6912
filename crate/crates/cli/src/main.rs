use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dchb_core::harness::{emit, run_simulation, write_table_csv, EstimateConfig, SimulationConfig};
use dchb_core::nested_gibbs::{gibbs_run, write_summary_csv};
use dchb_core::posterior_limit::{convergence_sweep, write_sweep_csv};
use dchb_core::stratified::{stratified_sweep, write_stratified_csv, CaseIConfig};
use dchb_core::uncertainty::{reml_fit, uncertainty_report, write_report_csv};
use dchb_core::verify::{all_passed, design_checks, oracle_checks, Check};
use dchb_core::{ExpFamModel, Link, PriorSpec, QuadratureConfig, SampleTable};

const WORKERS_ENV: &str = "DCHB_WORKERS";

#[derive(Parser)]
#[command(
    name = "dc-hb",
    version,
    about = "Design-consistent hierarchical Bayes estimation of finite population means"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo study described by a TOML config or manifest.
    Simulate {
        #[arg(long, required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Built-in configuration used when no file is given.
        #[arg(long, value_enum, conflicts_with = "config")]
        preset: Option<Preset>,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to $DCHB_WORKERS, then to all cores.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Posterior means of ψ′(θ) along growing sample sizes and their limits.
    Limits {
        /// Stratified case (i) and case (ii) sweep instead of single populations.
        #[arg(long)]
        stratified: bool,
        #[arg(long, value_enum, default_value = "all")]
        model: ModelArg,
        /// Sample sizes (comma separated); defaults to 10,100,1000 or 5,20,80.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        /// Sample mean held fixed; defaults to 1 (gaussian), 0.3 (bernoulli), 2 (poisson).
        #[arg(long)]
        ybar: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// Known variance of the gaussian model.
        #[arg(long, default_value_t = 1.0)]
        sigma2: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the nested-error model to a `stratum,value[,prob]` CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        /// TOML with `population_size`, `h1` and a `[chain]` table.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        population_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print measures of uncertainty instead of the posterior summary.
        #[arg(long)]
        uncertainty: bool,
    },
    /// Run the built-in oracle checks; exits non-zero if any fails.
    Verify {
        #[arg(long)]
        design: bool,
        #[arg(long)]
        oracles: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ModelArg {
    All,
    Gaussian,
    Bernoulli,
    Poisson,
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn workers(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{WORKERS_ENV}={v} is not a count"))?,
        )),
        Err(_) => Ok(None),
    }
}

fn simulate(
    config: Option<PathBuf>,
    preset: Option<Preset>,
    out: Option<PathBuf>,
    workers_flag: Option<usize>,
) -> Result<bool> {
    let mut cfg = match (config, preset) {
        (Some(path), _) => SimulationConfig::load(&path)?,
        (None, Some(Preset::Desk)) => SimulationConfig::desk(),
        (None, _) => SimulationConfig::full(),
    };
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let result = run_simulation(&cfg, workers(workers_flag)?)?;
    let paths = emit(&cfg, &result)?;
    write_table_csv(&result, io::stdout().lock())?;
    for c in &result.cells {
        if !c.failed.is_empty() {
            eprintln!(
                "n={} sigma_e={}: {} replicate(s) excluded",
                c.n,
                c.sigma_e,
                c.failed.len()
            );
        }
    }
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    let violations = result.invariant_violations();
    if violations > 0 {
        eprintln!("{violations} record(s) violate the report invariants");
    }
    Ok(violations == 0)
}

fn default_ybar(model: &ExpFamModel) -> f64 {
    match model.name() {
        "bernoulli" => 0.3,
        "poisson" => 2.0,
        _ => 1.0,
    }
}

#[allow(clippy::too_many_arguments)]
fn limits(
    stratified: bool,
    model: ModelArg,
    n: Vec<usize>,
    ybar: Option<f64>,
    beta: f64,
    r: f64,
    sigma2: f64,
    path: Option<PathBuf>,
) -> Result<()> {
    let mut out = output(path.as_ref())?;
    if stratified {
        if !matches!(model, ModelArg::All | ModelArg::Gaussian) {
            bail!("the stratified sweep covers the gaussian model only");
        }
        let grid = if n.is_empty() { vec![5, 20, 80] } else { n };
        let fixed = vec![vec![0.4, -0.3, 0.8, 0.1]];
        let case_i = CaseIConfig::new(ExpFamModel::gaussian(sigma2));
        let rows = stratified_sweep(&fixed, ybar.unwrap_or(1.0), 0.5, &grid, &case_i, 1.0, 1.0)?;
        write_stratified_csv(&rows, &mut out)?;
    } else {
        let models = match model {
            ModelArg::All => vec![
                ExpFamModel::gaussian(sigma2),
                ExpFamModel::bernoulli(),
                ExpFamModel::poisson(),
            ],
            ModelArg::Gaussian => vec![ExpFamModel::gaussian(sigma2)],
            ModelArg::Bernoulli => vec![ExpFamModel::bernoulli()],
            ModelArg::Poisson => vec![ExpFamModel::poisson()],
        };
        let grid = if n.is_empty() { vec![10, 100, 1000] } else { n };
        let prior = PriorSpec::normal(beta, r);
        let mut rows = Vec::new();
        for m in &models {
            let y = ybar.unwrap_or_else(|| default_ybar(m));
            rows.extend(convergence_sweep(
                m,
                &Link::Identity,
                &prior,
                y,
                &grid,
                &QuadratureConfig::default(),
            )?);
        }
        write_sweep_csv(&rows, &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn estimate(
    data: PathBuf,
    config: Option<PathBuf>,
    population_size: Option<usize>,
    seed: Option<u64>,
    uncertainty: bool,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => EstimateConfig::from_toml_str(
            &std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
        )?,
        None => EstimateConfig::default(),
    };
    if let Some(n) = population_size {
        cfg.population_size = n;
    }
    if let Some(s) = seed {
        cfg.chain.seed = s;
    }
    let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
    let table = SampleTable::read_csv(file)?;
    let sample = table.to_sample(cfg.population_size)?;
    let summary = gibbs_run(&sample, &cfg.chain)?;
    let mut out = output(None)?;
    if uncertainty {
        let vc = reml_fit(&sample)?;
        let ybar_w = table.weighted_means(cfg.population_size)?;
        let report = uncertainty_report(&sample, &summary, &vc, &ybar_w, cfg.h1)?;
        write_report_csv(&report, Some(&table.labels), &mut out)?;
    } else {
        write_summary_csv(&summary, Some(&table.labels), &mut out)?;
    }
    out.flush()?;
    Ok(())
}

fn verify(design: bool, oracles: bool) -> bool {
    let both = !design && !oracles;
    let mut checks: Vec<Check> = Vec::new();
    if design || both {
        checks.extend(design_checks());
    }
    if oracles || both {
        checks.extend(oracle_checks());
    }
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    all_passed(&checks)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            config,
            preset,
            out,
            workers,
        } => simulate(config, preset, out, workers),
        Command::Limits {
            stratified,
            model,
            n,
            ybar,
            beta,
            r,
            sigma2,
            output,
        } => limits(stratified, model, n, ybar, beta, r, sigma2, output).map(|_| true),
        Command::Estimate {
            data,
            config,
            population_size,
            seed,
            uncertainty,
        } => estimate(data, config, population_size, seed, uncertainty).map(|_| true),
        Command::Verify { design, oracles } => Ok(verify(design, oracles)),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
