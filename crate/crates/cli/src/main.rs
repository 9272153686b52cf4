//! `lclogit`: design, simulate, estimate, wtp and recover from the command
//! line.
//!
//! Exit codes: 0 success, 1 user or data error, 2 finished with warnings
//! (design above its correlation threshold, fit not converged, undefined
//! WTP cells).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lclogit::report::{write_curves, write_parameter_table, write_shares, write_wtp_table};
use lclogit::simulate::{BiasReport, RecoveryReport};
use lclogit::wtp::{attribute_grid, posterior_shares};
use lclogit::{
    choice_prob_profile, fit, generate_design, levy_bounds, load_dataset, load_design, naysayer_bias_demo,
    recovery_experiment, simulate_population, wtp_table, CovariateModel, DataSchema, Design, DesignConfig,
    DesignDiagnostics, FitArtifact, FitSummary, Fixity, LevyBounds, LikelihoodContext, ModelSpec, SimConfig,
    WtpEntry, WtpOptions,
};
use serde::Serialize;

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "lclogit", version, about = "Latent-class referendum models with protest voters")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a blocked main-effects design.
    Design(DesignArgs),
    /// Simulate respondents and votes from a model with known values.
    Simulate(SimulateArgs),
    /// Fit a model to observations and respondents files.
    Estimate(DataArgs),
    /// Segment shares and willingness to pay from a fit artifact.
    Wtp(WtpArgs),
    /// Parameter recovery (and optionally the nay-sayer bias demo).
    Recover(RecoverArgs),
}

#[derive(Debug, Args)]
struct DesignArgs {
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of respondents.
    #[arg(long)]
    respondents: Option<usize>,
    /// True model specification with values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Covariate generator file.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Design CSV to use instead of generating one.
    #[arg(long)]
    design: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    observations: Option<PathBuf>,
    #[arg(long = "respondent-file")]
    respondent_file: Option<PathBuf>,
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WtpArgs {
    /// Fit artifact written by `estimate`.
    #[arg(long)]
    fit: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Debug, Args)]
struct RecoverArgs {
    #[arg(long)]
    respondents: Option<usize>,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    covariates: Option<PathBuf>,
    #[arg(long)]
    design: Option<PathBuf>,
    /// Also run the nay-sayer exclusion comparison.
    #[arg(long)]
    naysayer_demo: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Success,
    Warning,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LCLOGIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Warning) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Resolved settings shared by every command.
struct Ctx {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(1);
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let threads = cli.threads.or(config.threads);
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    config.seed = Some(seed);
    config.out = Some(out.clone());
    config.threads = threads;
    config.fit.seed = seed;
    apply_overrides(&mut config, &cli.command);
    check_inputs(&config, &cli.command)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), config.to_toml()).context("writing config echo")?;
    let ctx = Ctx { config, seed, out };
    match &cli.command {
        Command::Design(_) => cmd_design(&ctx),
        Command::Simulate(_) => cmd_simulate(&ctx),
        Command::Estimate(_) => cmd_estimate(&ctx),
        Command::Wtp(_) => cmd_wtp(&ctx),
        Command::Recover(_) => cmd_recover(&ctx),
    }
}

fn set<T>(slot: &mut T, v: &Option<T>)
where
    T: Clone,
{
    if let Some(v) = v {
        *slot = v.clone();
    }
}

fn set_path(slot: &mut Option<PathBuf>, v: &Option<PathBuf>) {
    if v.is_some() {
        slot.clone_from(v);
    }
}

fn apply_overrides(c: &mut RunConfig, command: &Command) {
    match command {
        Command::Design(a) => {
            set(&mut c.design.tasks, &a.tasks);
            set(&mut c.design.blocks, &a.blocks);
        }
        Command::Simulate(a) => {
            set(&mut c.simulate.respondents, &a.respondents);
            set_path(&mut c.model.spec, &a.spec);
            set_path(&mut c.simulate.covariates, &a.covariates);
            set_path(&mut c.design.file, &a.design);
        }
        Command::Estimate(a) => apply_data(c, a),
        Command::Wtp(a) => {
            set_path(&mut c.wtp.fit, &a.fit);
            apply_data(c, &a.data);
        }
        Command::Recover(a) => {
            set(&mut c.recover.respondents, &a.respondents);
            set_path(&mut c.model.spec, &a.spec);
            set_path(&mut c.simulate.covariates, &a.covariates);
            set_path(&mut c.design.file, &a.design);
            c.recover.naysayer_demo |= a.naysayer_demo;
        }
    }
}

fn apply_data(c: &mut RunConfig, a: &DataArgs) {
    set_path(&mut c.data.observations, &a.observations);
    set_path(&mut c.data.respondents, &a.respondent_file);
    set_path(&mut c.model.spec, &a.spec);
}

/// Fails before anything is written when a referenced input is missing.
fn check_inputs(c: &RunConfig, command: &Command) -> Result<()> {
    let mut paths: Vec<&Option<PathBuf>> = vec![];
    match command {
        Command::Design(_) => {}
        Command::Simulate(_) | Command::Recover(_) => {
            paths.extend([&c.model.spec, &c.simulate.covariates, &c.design.file]);
        }
        Command::Estimate(_) => paths.extend([&c.data.observations, &c.data.respondents, &c.model.spec]),
        Command::Wtp(_) => paths.extend([&c.wtp.fit, &c.data.observations, &c.data.respondents, &c.model.spec]),
    }
    for p in paths.into_iter().flatten() {
        if !p.exists() {
            bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| anyhow!("no {what} given (use {flag} or the config file)"))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = toml::to_string(value).context("serializing output")?;
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn design_config(ctx: &Ctx) -> DesignConfig {
    let d = &ctx.config.design;
    DesignConfig {
        attributes: ctx.config.attributes(),
        tasks: d.tasks,
        blocks: d.blocks,
        iterations: d.iterations,
        restarts: d.restarts,
        threshold: d.threshold,
    }
}

#[derive(Serialize)]
struct DesignReport<'a> {
    seed: u64,
    warning: bool,
    tasks: usize,
    blocks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    levy_bounds: Option<LevyBounds>,
    diagnostics: &'a DesignDiagnostics,
}

fn cmd_design(ctx: &Ctx) -> Result<Outcome> {
    let design = generate_design(&design_config(ctx), ctx.seed)?;
    let levy = match &ctx.config.design.levy {
        Some(r) => Some(levy_bounds(r.target_npv, r.households, r.rate, r.years, r.adjustment)?),
        None => None,
    };
    design.write_csv(&ctx.path("design.csv"))?;
    write_toml(
        &ctx.path("design_diagnostics.toml"),
        &DesignReport {
            seed: ctx.seed,
            warning: design.warning,
            tasks: design.tasks.len(),
            blocks: design.n_blocks(),
            levy_bounds: levy,
            diagnostics: &design.diagnostics,
        },
    )?;
    if design.warning {
        eprintln!(
            "warning: max |correlation| {:.4} is above the threshold {}",
            design.diagnostics.max_abs_correlation, ctx.config.design.threshold
        );
        return Ok(Outcome::Warning);
    }
    Ok(Outcome::Success)
}

fn load_or_generate_design(ctx: &Ctx) -> Result<Design> {
    match &ctx.config.design.file {
        Some(p) => Ok(load_design(p, &ctx.config.attributes())?),
        None => Ok(generate_design(&design_config(ctx), ctx.seed)?),
    }
}

fn sim_config(ctx: &Ctx, respondents: usize) -> Result<SimConfig> {
    let spec = ModelSpec::from_file(required(&ctx.config.model.spec, "model spec", "--spec")?)?;
    let covariates = match &ctx.config.simulate.covariates {
        Some(p) => CovariateModel::from_file(p)?,
        None => CovariateModel::default(),
    };
    Ok(SimConfig {
        spec,
        respondents,
        design: load_or_generate_design(ctx)?,
        covariates,
        seed: ctx.seed,
    })
}

fn cmd_simulate(ctx: &Ctx) -> Result<Outcome> {
    let cfg = sim_config(ctx, ctx.config.simulate.respondents)?;
    let sim = simulate_population(&cfg)?;
    cfg.design.write_csv(&ctx.path("design.csv"))?;
    sim.dataset.write_observations(&ctx.path("observations.csv"))?;
    sim.dataset.write_respondents(&ctx.path("respondents.csv"))?;
    sim.write_truth(&ctx.path("observations.truth.csv"))?;
    log::info!(
        "simulated {} respondents, {} observations",
        sim.dataset.n_respondents(),
        sim.dataset.n_observations()
    );
    Ok(Outcome::Success)
}

fn load_data(ctx: &Ctx) -> Result<lclogit::Dataset> {
    let obs = required(&ctx.config.data.observations, "observations file", "--observations")?;
    let resp = required(&ctx.config.data.respondents, "respondents file", "--respondent-file")?;
    let schema = DataSchema::new(ctx.config.attributes(), ctx.config.data.covariates.clone());
    Ok(load_dataset(obs, resp, &schema)?)
}

fn cmd_estimate(ctx: &Ctx) -> Result<Outcome> {
    let spec = ModelSpec::from_file(required(&ctx.config.model.spec, "model spec", "--spec")?)?;
    let data = load_data(ctx)?;
    let warnings = lclogit::validate_spec(&spec, &data)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let result = fit(&data, &spec, &ctx.config.fit)?;
    write_parameter_table(&ctx.path("parameters.csv"), &result.estimates)?;
    FitSummary::new(&spec, &result).write(&ctx.path("summary.toml"))?;
    FitArtifact::from_fit(&spec, &result).write(&ctx.path("fit.toml"))?;
    if !result.converged {
        eprintln!("warning: estimation did not converge (see summary.toml)");
        return Ok(Outcome::Warning);
    }
    Ok(Outcome::Success)
}

fn cmd_wtp(ctx: &Ctx) -> Result<Outcome> {
    let artifact = FitArtifact::from_file(required(&ctx.config.wtp.fit, "fit artifact", "--fit")?)?;
    let w = &ctx.config.wtp;
    let options = WtpOptions {
        lower: w.lower,
        upper: w.upper,
        profiles: w.profiles,
    };
    let (table, posterior, curves) = if artifact.has_overrides() {
        (artifact.override_table()?, None, vec![])
    } else {
        let spec = ModelSpec::from_file(required(&ctx.config.model.spec, "model spec", "--spec")?)?;
        let data = load_data(ctx)?;
        let params = artifact.params_for(&spec)?;
        let lc = LikelihoodContext::new(&data, &spec)?;
        let table = wtp_table(&data, &lc, &params, &options)?;
        let posterior = posterior_shares(&lc, &params)?;
        let schema = data.schema();
        let mut curves = Vec::new();
        for s in 0..lc.n_classes() {
            for c in 0..schema.categories().len() {
                if lc.fixity(s, c) != Fixity::Estimated {
                    continue;
                }
                for a in schema.continuous().filter(|a| a.name != schema.levy) {
                    let grid = attribute_grid(&lc, &a.name, w.curve_points)?;
                    curves.push(choice_prob_profile(&lc, &params, s, c, &a.name, &grid)?);
                }
            }
        }
        (table, Some(posterior), curves)
    };
    let extra: Vec<(&str, &lclogit::SegmentShares)> = posterior.iter().map(|p| ("posterior", p)).collect();
    write_shares(&ctx.path("shares.csv"), &table.shares, &extra)?;
    write_wtp_table(&ctx.path("wtp.csv"), &table)?;
    if !curves.is_empty() {
        write_curves(&ctx.path("curves.csv"), &curves)?;
    }
    if table.entries.iter().flatten().any(|e| *e == WtpEntry::Undefined) {
        eprintln!("warning: some segment WTP values are undefined (utility not decreasing in the levy)");
        return Ok(Outcome::Warning);
    }
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct RecoverySummary {
    seed: u64,
    respondents: usize,
    log_likelihood: f64,
    converged: bool,
    classes: Vec<String>,
    true_shares: Vec<f64>,
    fitted_shares: Vec<f64>,
    max_share_error: f64,
    coverage: f64,
    rmse: f64,
}

fn write_recovery(ctx: &Ctx, r: &RecoveryReport, respondents: usize) -> Result<()> {
    let path = ctx.path("recovery.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["parameter", "truth", "estimate", "std_err", "bias", "covered"])?;
    for p in &r.parameters {
        w.write_record([
            p.name.clone(),
            format!("{}", p.truth),
            format!("{}", p.estimate),
            p.se.map_or_else(|| "NA".into(), |s| format!("{s}")),
            format!("{}", p.bias()),
            p.covered.map_or_else(|| "NA".into(), |c| c.to_string()),
        ])?;
    }
    w.flush()?;
    write_toml(
        &ctx.path("recovery_summary.toml"),
        &RecoverySummary {
            seed: ctx.seed,
            respondents,
            log_likelihood: r.fit.log_likelihood,
            converged: r.fit.converged,
            classes: r.class_names.clone(),
            true_shares: r.true_shares.clone(),
            fitted_shares: r.fitted_shares.clone(),
            max_share_error: r.max_share_error(),
            coverage: r.coverage(),
            rmse: r.rmse(),
        },
    )
}

fn write_bias(ctx: &Ctx, b: &BiasReport) -> Result<()> {
    let path = ctx.path("naysayer_bias.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["variant", "respondents", "category", "household_average", "truth", "relative_bias"])?;
    let fmt = |v: Option<f64>, digits: usize| v.map_or_else(|| "NA".into(), |x| format!("{x:.digits$}"));
    let rel = b.relative_bias();
    for (v, (_, r)) in b.variants.iter().zip(&rel) {
        let h = v.household_average();
        for (c, cat) in b.categories.iter().enumerate() {
            w.write_record([
                v.label.clone(),
                v.respondents.to_string(),
                cat.clone(),
                fmt(h.get(c).copied().flatten(), 2),
                fmt(b.truth.household_average[c], 2),
                fmt(r.get(c).copied().flatten(), 6),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_recover(ctx: &Ctx) -> Result<Outcome> {
    let n = ctx.config.recover.respondents;
    let cfg = sim_config(ctx, n)?;
    let report = recovery_experiment(&cfg, &ctx.config.fit)?;
    write_recovery(ctx, &report, n)?;
    let mut outcome = if report.fit.converged {
        Outcome::Success
    } else {
        eprintln!("warning: the recovery fit did not converge");
        Outcome::Warning
    };
    if ctx.config.recover.naysayer_demo {
        let bias = naysayer_bias_demo(&cfg, &ctx.config.fit, &WtpOptions::default())?;
        write_bias(ctx, &bias)?;
        if bias.variants.iter().any(|v| v.fit.as_ref().map_or(true, |f| !f.converged)) {
            eprintln!("warning: some bias-demo fits failed or did not converge");
            outcome = Outcome::Warning;
        }
    }
    Ok(outcome)
}
