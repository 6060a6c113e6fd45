//! Command-line front end: a thin, single-threaded orchestrator over the
//! library. Every command resolves its configuration (file defaults overridden
//! by flags), writes the resolved form next to its outputs, and is
//! deterministic given that resolved configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corrections::{dg_correction, ix_correction, naive_rnde, CorrectionOptions};
use crate::data::{CovariatePatternTable, Dataset};
use crate::error::{BdfError, Result};
use crate::estimands::{
    bdf_cf_estimate, bdf_sim_estimate, estimate_ace_tvc, estimate_ace_tvc_cf, estimate_cde,
    estimate_nde, estimate_nie, estimate_rnie, estimate_total_effect, rnde_regimes,
    EstimandResult,
};
use crate::mle::fit_external_models;
use crate::model::ModelSpec;
use crate::posterior::{sample_posterior, SamplerConfig};
use crate::prior::{build_prior, GaussianPrior, Inflation};
use crate::simgen::{generate_dataset, run_study, ScenarioConfig};

/// Command completed normally.
pub const EXIT_OK: i32 = 0;
/// Sampler convergence warning present but suppressed via a flag.
pub const EXIT_CONVERGENCE_SUPPRESSED: i32 = 2;
/// Any hard error.
pub const EXIT_ERROR: i32 = 3;

const RHAT_LIMIT: f64 = 1.1;

#[derive(Debug, Parser)]
#[command(name = "bdf", version, about = "Bayesian data fusion estimators for mediation effects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic main/external dataset pair.
    Simulate(SimulateArgs),
    /// Fit the external models and write the prior.
    FitPrior(FitPriorArgs),
    /// Sample the posterior and estimate a causal contrast.
    Estimate(EstimateArgs),
    /// Frequentist point estimates with bootstrap intervals.
    Correct(CorrectArgs),
    /// Run a multi-scenario simulation study.
    Study(StudyArgs),
}

/// Optional config file; keys mirror the flag names exactly and flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub delta_ua: Option<bool>,
    pub delta_yam: Option<bool>,
    pub transportable: Option<bool>,
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub iters: Option<usize>,
    pub warmup: Option<usize>,
    pub inflate_sigma: Option<f64>,
    pub n_boot: Option<usize>,
    pub estimand: Option<EstimandArg>,
    pub method: Option<MethodArg>,
    pub correction: Option<CorrectionArg>,
    pub main: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub prior: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub scenarios: Option<Vec<ScenarioConfig>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimandArg {
    Rnde,
    Rnie,
    Nde,
    Nie,
    Cde,
    AceTvc,
    TotalEffect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Sim,
    Cf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectionArg {
    Naive,
    Dg,
    Ix,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Main dataset size.
    #[arg(long)]
    pub n1: Option<usize>,
    /// External dataset size (default: n1 / 10).
    #[arg(long)]
    pub n2: Option<usize>,
    /// Exposure-induced confounder.
    #[arg(long)]
    pub delta_ua: Option<bool>,
    /// Exposure-mediator interaction in the outcome model.
    #[arg(long)]
    pub delta_yam: Option<bool>,
    /// When false the external data have inert confounder effects.
    #[arg(long)]
    pub transportable: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitPriorArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// External dataset CSV (must contain a `u` column).
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long)]
    pub delta_ua: Option<bool>,
    #[arg(long)]
    pub delta_yam: Option<bool>,
    /// Variance-inflation factor for identifiable coordinates (>= 1).
    #[arg(long)]
    pub inflate_sigma: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub main: Option<PathBuf>,
    /// Prior JSON written by fit-prior.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub estimand: Option<EstimandArg>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Active exposure level for two-level contrasts.
    #[arg(long, default_value_t = 1)]
    pub a: u8,
    /// Reference exposure level.
    #[arg(long, default_value_t = 0)]
    pub a_star: u8,
    /// Mediator level held fixed for the CDE.
    #[arg(long, default_value_t = 0)]
    pub m_fixed: u8,
    /// Exit 2 instead of failing when any R-hat exceeds 1.1.
    #[arg(long)]
    pub allow_nonconverged: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub main: Option<PathBuf>,
    /// External dataset; required for dg and ix.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub correction: Option<CorrectionArg>,
    #[arg(long)]
    pub delta_ua: Option<bool>,
    #[arg(long)]
    pub delta_yam: Option<bool>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Study config JSON with a `scenarios` array.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn out_dir(choice: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = choice
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_resolved(dir: &Path, resolved: &RunConfig) -> Result<()> {
    std::fs::write(
        dir.join("resolved_config.json"),
        serde_json::to_string_pretty(resolved)?,
    )?;
    Ok(())
}

fn require<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.ok_or_else(|| BdfError::Config(format!("missing required option --{flag}")))
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let file = RunConfig::load(args.config.as_deref())?;
    let n1 = require(args.n1.or(file.n1), "n1")?;
    let resolved = RunConfig {
        n1: Some(n1),
        n2: Some(args.n2.or(file.n2).unwrap_or_else(|| (n1 / 10).max(1))),
        delta_ua: Some(args.delta_ua.or(file.delta_ua).unwrap_or(false)),
        delta_yam: Some(args.delta_yam.or(file.delta_yam).unwrap_or(false)),
        transportable: Some(args.transportable.or(file.transportable).unwrap_or(true)),
        seed: Some(args.seed.or(file.seed).unwrap_or(0)),
        out_dir: Some(out_dir(&args.out_dir, &file)?),
        ..RunConfig::default()
    };
    let dir = resolved.out_dir.clone().unwrap();
    let (delta_ua, delta_yam) = (resolved.delta_ua.unwrap(), resolved.delta_yam.unwrap());
    let seed = resolved.seed.unwrap();
    let scenario = ScenarioConfig {
        transportable: resolved.transportable.unwrap(),
        ..ScenarioConfig::new(n1, delta_ua, delta_yam, true)
    };
    let main = generate_dataset(
        n1,
        &crate::simgen::GenCoefficients::transportable(),
        delta_ua,
        delta_yam,
        false,
        crate::rng::substream_seed(seed, &[1]),
    );
    let external = generate_dataset(
        resolved.n2.unwrap(),
        &scenario.external_coefficients(),
        delta_ua,
        delta_yam,
        true,
        crate::rng::substream_seed(seed, &[2]),
    );
    main.to_csv_path(dir.join("main.csv"))?;
    external.to_csv_path(dir.join("external.csv"))?;
    write_resolved(&dir, &resolved)?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        dir.join("main.csv").display(),
        main.n(),
        dir.join("external.csv").display(),
        external.n()
    );
    Ok(EXIT_OK)
}

pub fn cmd_fit_prior(args: &FitPriorArgs) -> Result<i32> {
    let file = RunConfig::load(args.config.as_deref())?;
    let external_path = require(args.external.clone().or(file.external.clone()), "external")?;
    let resolved = RunConfig {
        external: Some(external_path.clone()),
        delta_ua: Some(args.delta_ua.or(file.delta_ua).unwrap_or(false)),
        delta_yam: Some(args.delta_yam.or(file.delta_yam).unwrap_or(false)),
        inflate_sigma: args.inflate_sigma.or(file.inflate_sigma),
        out_dir: Some(out_dir(&args.out_dir, &file)?),
        ..RunConfig::default()
    };
    let dir = resolved.out_dir.clone().unwrap();
    let external = Dataset::from_csv_path(&external_path)?;
    let spec = ModelSpec::new(
        external.z_dim(),
        resolved.delta_yam.unwrap(),
        resolved.delta_ua.unwrap(),
    );
    let fits = fit_external_models(&external, &spec)?;
    let inflation = resolved.inflate_sigma.map(|sigma| Inflation { sigma, indices: None });
    let prior = build_prior(&fits, &spec, inflation)?;
    std::fs::write(dir.join("prior.json"), prior.to_json()?)?;
    write_resolved(&dir, &resolved)?;

    let names = spec.coef_names();
    let mut offset = 0usize;
    println!("{:<12} {:>12} {:>12}", "coefficient", "estimate", "std.err");
    for fit in [&fits.u, &fits.m, &fits.y] {
        let se = fit.standard_errors();
        for (j, (&est, &s)) in fit.estimate.iter().zip(se.iter()).enumerate() {
            println!("{:<12} {:>12.5} {:>12.5}", names[offset + j], est, s);
        }
        offset += fit.estimate.len();
    }
    println!("wrote {}", dir.join("prior.json").display());
    Ok(EXIT_OK)
}

fn run_estimand(
    estimand: EstimandArg,
    method: MethodArg,
    draws: &crate::posterior::PosteriorDraws,
    main: &Dataset,
    args: &EstimateArgs,
    seed: u64,
) -> Result<EstimandResult> {
    let unsupported =
        || BdfError::UnsupportedRegime("closed-form method is available for rnde and ace-tvc only");
    match (estimand, method) {
        (EstimandArg::Rnde, MethodArg::Sim) => bdf_sim_estimate(draws, main, rnde_regimes(), seed),
        (EstimandArg::Rnde, MethodArg::Cf) => {
            bdf_cf_estimate(draws, &CovariatePatternTable::from_dataset(main), seed)
        }
        (EstimandArg::Rnie, MethodArg::Sim) => {
            estimate_rnie(draws, main, args.a, args.a_star, seed)
        }
        (EstimandArg::Nde, MethodArg::Sim) => estimate_nde(draws, main, args.a, args.a_star, seed),
        (EstimandArg::Nie, MethodArg::Sim) => estimate_nie(draws, main, args.a, args.a_star, seed),
        (EstimandArg::Cde, MethodArg::Sim) => {
            estimate_cde(draws, main, args.a, args.a_star, args.m_fixed, seed)
        }
        (EstimandArg::TotalEffect, MethodArg::Sim) => {
            estimate_total_effect(draws, main, args.a, args.a_star, seed)
        }
        (EstimandArg::AceTvc, MethodArg::Sim) => {
            estimate_ace_tvc(draws, main, (args.a, args.a), (args.a_star, args.a_star), seed)
        }
        (EstimandArg::AceTvc, MethodArg::Cf) => estimate_ace_tvc_cf(
            draws,
            &CovariatePatternTable::from_dataset(main),
            (args.a, args.a),
            (args.a_star, args.a_star),
            seed,
        ),
        _ => Err(unsupported()),
    }
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<i32> {
    let file = RunConfig::load(args.config.as_deref())?;
    let main_path = require(args.main.clone().or(file.main.clone()), "main")?;
    let prior_path = require(args.prior.clone().or(file.prior.clone()), "prior")?;
    let resolved = RunConfig {
        main: Some(main_path.clone()),
        prior: Some(prior_path.clone()),
        estimand: Some(args.estimand.or(file.estimand).unwrap_or(EstimandArg::Rnde)),
        method: Some(args.method.or(file.method).unwrap_or(MethodArg::Cf)),
        seed: Some(args.seed.or(file.seed).unwrap_or(0)),
        chains: Some(args.chains.or(file.chains).unwrap_or(3)),
        iters: Some(args.iters.or(file.iters).unwrap_or(2000)),
        warmup: Some(args.warmup.or(file.warmup).unwrap_or(1000)),
        out_dir: Some(out_dir(&args.out_dir, &file)?),
        ..RunConfig::default()
    };
    let dir = resolved.out_dir.clone().unwrap();
    let main = Dataset::from_csv_path(&main_path)?;
    let prior = GaussianPrior::from_json(&std::fs::read_to_string(&prior_path)?)?;
    let seed = resolved.seed.unwrap();
    let sampler = SamplerConfig {
        chains: resolved.chains.unwrap(),
        iters: resolved.iters.unwrap(),
        warmup: resolved.warmup.unwrap(),
        seed: crate::rng::substream_seed(seed, &[1]),
        ..SamplerConfig::default()
    };
    let draws = sample_posterior(Some(&main), &prior.spec, &prior, &sampler)?;
    let result = run_estimand(
        resolved.estimand.unwrap(),
        resolved.method.unwrap(),
        &draws,
        &main,
        args,
        crate::rng::substream_seed(seed, &[2]),
    )?;

    std::fs::write(dir.join("result.json"), result.to_json(true)?)?;
    draws.to_csv_writer(std::fs::File::create(dir.join("draws.csv"))?)?;
    write_resolved(&dir, &resolved)?;

    let max_rhat = draws
        .rhat
        .as_ref()
        .map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    println!(
        "point = {:.5}  95% CI = [{:.5}, {:.5}]",
        result.point, result.ci_low, result.ci_high
    );
    match max_rhat {
        Some(r) => println!("max R-hat = {r:.4} over {} chains", draws.chains),
        None => println!("single chain: R-hat unavailable"),
    }
    if draws.divergence_warning {
        eprintln!("warning: more than 10% of post-warmup trajectories diverged");
    }
    if let Some(r) = max_rhat {
        if r > RHAT_LIMIT {
            if args.allow_nonconverged {
                eprintln!("warning: max R-hat {r:.4} exceeds {RHAT_LIMIT}; continuing as requested");
                return Ok(EXIT_CONVERGENCE_SUPPRESSED);
            }
            return Err(BdfError::Sampler(format!(
                "max R-hat {r:.4} exceeds {RHAT_LIMIT}; rerun longer or pass --allow-nonconverged"
            )));
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_correct(args: &CorrectArgs) -> Result<i32> {
    let file = RunConfig::load(args.config.as_deref())?;
    let main_path = require(args.main.clone().or(file.main.clone()), "main")?;
    let method = require(args.correction.or(file.correction), "correction")?;
    let resolved = RunConfig {
        main: Some(main_path.clone()),
        external: args.external.clone().or(file.external.clone()),
        correction: Some(method),
        delta_ua: Some(args.delta_ua.or(file.delta_ua).unwrap_or(false)),
        delta_yam: Some(args.delta_yam.or(file.delta_yam).unwrap_or(false)),
        n_boot: Some(args.n_boot.or(file.n_boot).unwrap_or(200)),
        seed: Some(args.seed.or(file.seed).unwrap_or(0)),
        out_dir: Some(out_dir(&args.out_dir, &file)?),
        ..RunConfig::default()
    };
    let dir = resolved.out_dir.clone().unwrap();
    let main = Dataset::from_csv_path(&main_path)?;
    let spec = ModelSpec::new(
        main.z_dim(),
        resolved.delta_yam.unwrap(),
        resolved.delta_ua.unwrap(),
    );
    let opts = CorrectionOptions {
        n_boot: resolved.n_boot.unwrap(),
        seed: resolved.seed.unwrap(),
        ..CorrectionOptions::default()
    };
    let result = match method {
        CorrectionArg::Naive => naive_rnde(&main, &spec, &opts)?,
        CorrectionArg::Dg | CorrectionArg::Ix => {
            let ext_path = require(resolved.external.clone(), "external")?;
            let external = Dataset::from_csv_path(ext_path)?;
            match method {
                CorrectionArg::Dg => dg_correction(&main, &external, &spec, &opts)?,
                _ => ix_correction(&main, &external, &spec, &opts)?,
            }
        }
    };
    std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&result)?)?;
    write_resolved(&dir, &resolved)?;
    println!(
        "point = {:.5}  95% CI = [{:.5}, {:.5}]",
        result.point, result.ci_low, result.ci_high
    );
    Ok(EXIT_OK)
}

pub fn cmd_study(args: &StudyArgs) -> Result<i32> {
    let file = RunConfig::load(Some(&args.config))?;
    let mut scenarios = file
        .scenarios
        .clone()
        .ok_or_else(|| BdfError::Config("study config must contain a `scenarios` array".into()))?;
    if let Some(seed) = args.seed {
        for s in &mut scenarios {
            s.seed = seed;
        }
    }
    let resolved = RunConfig {
        scenarios: Some(scenarios.clone()),
        seed: args.seed,
        out_dir: Some(out_dir(&args.out_dir, &file)?),
        ..RunConfig::default()
    };
    let dir = resolved.out_dir.clone().unwrap();
    let report = run_study(&scenarios)?;
    report.to_csv_writer(std::fs::File::create(dir.join("report.csv"))?)?;
    report.records_to_csv_writer(std::fs::File::create(dir.join("records.csv"))?)?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    write_resolved(&dir, &resolved)?;
    for (s, scen) in report.scenarios.iter().enumerate() {
        println!("scenario {s}: truth = {:.5}", scen.truth);
        for m in &scen.methods {
            println!(
                "  {:<8} coverage {:>6.1}%  mean bias {:>+8.5}  mean width {:.5}  ({} ok, {} failed)",
                m.method.name(),
                m.coverage_pct,
                m.mean_bias,
                m.mean_width,
                m.n_ok,
                m.n_failed
            );
        }
    }
    Ok(EXIT_OK)
}

/// Dispatch a parsed command line, mapping errors to the exit-code
/// convention (0 success, 2 suppressed convergence warning, 3 errors).
pub fn run(cli: &Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::FitPrior(a) => cmd_fit_prior(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Study(a) => cmd_study(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests;
