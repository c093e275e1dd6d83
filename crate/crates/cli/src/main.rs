use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use transit_rhythm::pipeline::{run_all, run_stage, Manifest, Overrides, PipelineConfig, PipelineError, Stage};

/// Weekly travel-pattern analysis of smart-card tap records.
#[derive(Debug, Parser)]
#[command(name = "transit-rhythm", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML config file. Built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long = "out", global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Neighbourhood radius of the ordering.
    #[arg(long, global = true)]
    epsilon: Option<f64>,

    /// Smoothing window (odd, at least 3).
    #[arg(long, global = true)]
    window: Option<usize>,

    /// Count-difference weight of the distance, in [0, 3].
    #[arg(long, global = true)]
    k: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic tap records for each period.
    Synth,
    /// Parse records into weekly profiles.
    Ingest,
    /// Score weekly regularity and its stability across periods.
    Regularity,
    /// Label early birds, night owls and itinerants.
    Extreme,
    /// Learn cluster centroids from a sample of profiles.
    Cluster,
    /// Assign every card to a learned cluster.
    Classify,
    /// Tabulate label changes between the two periods.
    Transitions,
    /// Per-cluster statistics and a run summary.
    Report,
    /// Run every stage in order.
    Run {
        /// Read existing records instead of generating them.
        #[arg(long)]
        no_synth: bool,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load(global: &GlobalArgs) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &global.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        out_dir: global.out_dir.clone(),
        seed: global.seed,
        epsilon: global.epsilon,
        window: global.window,
        k: global.k,
    });
    Ok(cfg)
}

fn report(m: &Manifest) {
    println!("{}: {} output file(s)", m.command, m.outputs.len());
    for f in &m.outputs {
        println!("  {} ({} rows)", f.path, f.rows);
    }
    for (key, value) in &m.summary {
        println!("  {key} = {value}");
    }
}

fn execute(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load(&cli.global)?;
    let stage = match &cli.command {
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
            return Ok(());
        }
        Command::Run { no_synth } => {
            for m in run_all(&cfg, !no_synth)? {
                report(&m);
            }
            return Ok(());
        }
        Command::Synth => Stage::Synth,
        Command::Ingest => Stage::Ingest,
        Command::Regularity => Stage::Regularity,
        Command::Extreme => Stage::Extreme,
        Command::Cluster => Stage::Cluster,
        Command::Classify => Stage::Classify,
        Command::Transitions => Stage::Transitions,
        Command::Report => Stage::Report,
    };
    report(&run_stage(stage, &cfg)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
