use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use windcollapse::frame::FrameDefinition;
use windcollapse::pipeline::{
    build_load_models, fit_hazard, hazard_report, load_completed, load_pilot, plan_from_pilot, report, run,
    store_plan, write_fragility, RunConfig, RunContext, RunOptions, RunStatus, RunSummary,
};
use windcollapse::reliability::fit_all_fragilities;
use windcollapse::{Error, Result};

#[derive(Parser)]
#[command(name = "windcollapse", version, about = "Collapse reliability of wind-excited steel frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "run.toml")]
    config: PathBuf,
    /// Overrides the base seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the worker count.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    /// Write per-sample response histories to `traces/`.
    #[arg(long, global = true)]
    verbose_traces: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the wind climate model and write `hazard.json`.
    FitHazard,
    /// Build the spectral load models and write `load_models.json`.
    BuildLoads,
    /// Run the pilot samples and derive the allocation.
    Pilot,
    /// Recompute the allocation from the stored pilot outcomes.
    Allocate,
    /// Pilot, allocation, main batch, estimates and fragility fits.
    Run,
    /// Refit fragility curves from a finished run.
    Fragility,
    /// Print the summary of a finished run.
    Report,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn options(cli: &Cli) -> RunOptions {
    RunOptions {
        resume: cli.resume,
        verbose_traces: cli.verbose_traces,
        ..Default::default()
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match cli.command {
        Command::FitHazard => {
            cfg.validate()?;
            let hash = cfg.hash()?;
            let model = fit_hazard(&cfg)?;
            let text = hazard_report(&model);
            let doc = serde_json::json!({ "config_hash": hash, "model": model });
            write(&cfg.output_dir.join("hazard.json"), &serde_json::to_vec_pretty(&doc)?)?;
            write(
                &cfg.output_dir.join("hazard_report.txt"),
                format!("# config-hash: {hash}\n{text}").as_bytes(),
            )?;
            print!("{text}");
        }
        Command::BuildLoads => {
            cfg.validate()?;
            let frame = FrameDefinition::load(&cfg.paths.frame)?;
            let set = build_load_models(&cfg, &frame)?;
            let doc = serde_json::json!({ "config_hash": cfg.hash()?, "models": set });
            write(&cfg.output_dir.join("load_models.json"), &serde_json::to_vec(&doc)?)?;
            println!(
                "{} directions, {} channels, {} phases per realization, reference speed {} m/s",
                set.directions.len(),
                set.channels(),
                set.n_phases(),
                set.reference_speed
            );
        }
        Command::Pilot => {
            let ctx = RunContext::prepare(cfg)?;
            let opts = RunOptions {
                pilot_only: true,
                ..options(cli)
            };
            match run(&ctx, &opts)? {
                RunStatus::PilotComplete(plan) => {
                    println!("pilot allocation: {:?}", plan.pilot);
                    println!("allocation:       {:?}", plan.allocation);
                }
                RunStatus::Complete(summary) => println!("allocation: {:?}", summary.plan.allocation),
                RunStatus::Interrupted { computed } => println!("interrupted after {computed} samples"),
            }
        }
        Command::Allocate => {
            let ctx = RunContext::prepare(cfg)?;
            let (pilot, outcomes) = load_pilot(&ctx)?;
            let plan = plan_from_pilot(&ctx, &pilot, &outcomes)?;
            store_plan(&ctx, &plan)?;
            println!("allocation: {:?}", plan.allocation);
        }
        Command::Run => {
            let ctx = RunContext::prepare(cfg)?;
            match run(&ctx, &options(cli))? {
                RunStatus::Complete(summary) => print!("{}", report(&summary)),
                RunStatus::PilotComplete(_) => unreachable!("full runs continue past the pilot"),
                RunStatus::Interrupted { computed } => println!("interrupted after {computed} samples"),
            }
        }
        Command::Fragility => {
            let ctx = RunContext::prepare(cfg)?;
            let (plan, records) = load_completed(&ctx)?;
            let outcomes: Vec<_> = records.into_iter().map(|r| r.outcome).collect();
            let fits = fit_all_fragilities(&outcomes, &plan, &ctx.config.limit_state_catalog());
            write_fragility(&ctx.config.output_dir.join("fragility.csv"), &ctx.hash, &fits)?;
            for f in &fits {
                match f.curve {
                    Some(c) => println!("{:<26} median {:>8.2} m/s  dispersion {:.3}", f.name, c.median, c.dispersion),
                    None => println!("{:<26} not identifiable", f.name),
                }
            }
        }
        Command::Report => {
            let path = cfg.output_dir.join("estimates.json");
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let summary: RunSummary = serde_json::from_slice(&bytes)?;
            print!("{}", report(&summary));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
