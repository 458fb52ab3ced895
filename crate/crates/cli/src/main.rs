//! Command-line front end: build a surface, apply a transform pipeline,
//! run the identity checks and write meshes, diagnostics and a report.

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fourfold::transforms::apply_stage;
use fourfold::transport::Solution;
use fourfold::verify::{default_base, run_checks};
use fourfold::{CheckStatus, Error, Immersion, SuiteReport, TransformedSurface, Vec2};

use config::{parse_grid, parse_point, Emit, Overrides, RunConfig};
use output::{RunReport, StageData, StageSummary};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fourfold",
    version,
    about = "Transforms of flat surfaces in R^4 and their identity checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply the pipeline, run every check and write meshes, diagnostics and the report.
    Run(RunArgs),
    /// Run the checks and write only the report.
    Check(RunArgs),
    /// Classify the points of the source surface and write its diagnostics.
    Classify(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    config: PathBuf,
    /// Output directory (overrides `outputs` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid size as NUxNV.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    /// Gauge base point as U,V.
    #[arg(long = "seed-gauge", value_parser = parse_point)]
    seed_gauge: Option<Vec2>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Treat inconclusive checks as failures.
    #[arg(long)]
    strict: bool,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let ov = Overrides {
            out: self.out.clone(),
            grid: self.grid,
            base_point: self.seed_gauge,
        };
        RunConfig::load(&self.config, &ov)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => a.common.load().and_then(|c| run(&c, a.strict, true)),
        Command::Check(a) => a.common.load().and_then(|c| run(&c, a.strict, false)),
        Command::Classify(a) => a.load().and_then(|c| classify(&c)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fourfold: {e}");
            ExitCode::from(2)
        }
    }
}

fn build(cfg: &RunConfig) -> Result<Arc<dyn Immersion>, CliError> {
    cfg.surface
        .build()
        .map_err(|e| CliError::Config(format!("invalid surface: {e}")))
}

fn base_of(cfg: &RunConfig) -> Vec2 {
    cfg.checks.base.unwrap_or_else(|| default_base(&cfg.grid))
}

/// Apply the stages in order, naming the stage that could not be applied.
fn apply(cfg: &RunConfig, surface: &Arc<dyn Immersion>) -> Result<Vec<TransformedSurface>, CliError> {
    let base = base_of(cfg);
    let mut out: Vec<TransformedSurface> = Vec::with_capacity(cfg.pipeline.len());
    for (i, spec) in cfg.pipeline.iter().enumerate() {
        let stage = match out.last() {
            None => apply_stage(
                surface.clone(),
                &Solution::stateless(cfg.grid),
                spec,
                base,
                &cfg.tolerances,
            ),
            Some(prev) => apply_stage(prev.map.clone(), &prev.solution, spec, base, &cfg.tolerances),
        };
        let label = format!("stage {} ({})", i + 1, spec.name());
        out.push(stage.map_err(|e| match e {
            Error::TangentNotFlat(_) | Error::NormalNotFlat(_) => {
                CliError::Config(format!("{label} needs a flat input surface: {e}"))
            }
            e => CliError::Config(format!("{label} failed: {e}")),
        })?);
    }
    Ok(out)
}

fn run(cfg: &RunConfig, strict: bool, files: bool) -> Result<ExitCode, CliError> {
    let surface = build(cfg)?;
    let stages = apply(cfg, &surface)?;
    let base = base_of(cfg);
    let checks = run_checks(surface.clone(), cfg.grid, &stages, &cfg.tolerances, &cfg.checks);
    let report = SuiteReport::new(&cfg.surface, &cfg.grid, base, &cfg.pipeline, &cfg.tolerances, checks);

    output::ensure_dir(&cfg.outputs)?;
    let want_diag = files && cfg.emits(Emit::Diagnostics);
    let want_mesh = files && cfg.emits(Emit::Mesh);
    let mut data = vec![StageData::source(&surface, cfg.grid, base, &cfg.tolerances, want_diag)];
    data.extend(
        stages
            .iter()
            .map(|s| StageData::image(s, base, &cfg.tolerances, want_diag)),
    );
    for (i, d) in data.iter().enumerate() {
        if want_mesh {
            output::write_mesh(&cfg.outputs.join(format!("mesh_{i}.csv")), d)?;
        }
        if want_diag {
            output::write_diag(&cfg.outputs.join(format!("diag_{i}.csv")), d, &cfg.tolerances)?;
        }
    }
    let summaries: Vec<StageSummary> = data
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, d)| StageSummary::new(i, d))
        .collect();
    let notes = summaries.iter().filter_map(StageSummary::note).collect();
    if cfg.emits(Emit::Report) {
        let full = RunReport {
            suite: &report,
            stages: summaries,
            notes,
        };
        output::write_json(&cfg.outputs.join("report.json"), &full)?;
    }

    for c in &report.checks {
        println!(
            "{:<36} {:<12} max_error {:>10.3e}  tol {:>8.1e}  checked {:>5}  masked {:>5}",
            c.name,
            format!("{:?}", c.status).to_lowercase(),
            c.max_error,
            c.tolerance,
            c.nodes_checked,
            c.nodes_masked
        );
    }
    let failed = report.checks.iter().any(|c| c.status == CheckStatus::Fail);
    let inconclusive = report.checks.iter().any(|c| c.status == CheckStatus::Inconclusive);
    Ok(if failed || (strict && inconclusive) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn classify(cfg: &RunConfig) -> Result<ExitCode, CliError> {
    let surface = build(cfg)?;
    let data = StageData::source(&surface, cfg.grid, base_of(cfg), &cfg.tolerances, true);
    output::ensure_dir(&cfg.outputs)?;
    output::write_diag(&cfg.outputs.join("diag_0.csv"), &data, &cfg.tolerances)?;
    let ctol = output::class_tol(data.analytic, &cfg.tolerances);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for g in &data.geometry {
        let key = g
            .as_ref()
            .map_or("masked", |g| fourfold::classify(g, &ctol).kind.as_str());
        *counts.entry(key).or_default() += 1;
    }
    for (k, n) in counts {
        println!("{k:<22} {n}");
    }
    Ok(ExitCode::SUCCESS)
}
