//! `accelsim`: characterize models, cluster layers into families, and run
//! schedules and scenario comparisons on heterogeneous edge accelerators.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;

#[derive(Parser, Debug)]
#[command(
    name = "accelsim",
    version,
    about = "Analytical models of edge inference accelerators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file, or `-` for standard output.
    #[arg(long, default_value = "-")]
    out: String,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug)]
struct HardwareArgs {
    /// Hardware suite JSON, or `canonical` for the bundled accelerators.
    #[arg(long, default_value = "canonical")]
    hw: String,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ModelSource {
    /// Model document (single model or an array of models); repeatable.
    #[arg(long)]
    model: Vec<PathBuf>,

    /// Use the seeded synthetic suite instead of model files.
    #[arg(long)]
    synthetic: bool,
}

#[derive(Args, Debug)]
struct SeedArgs {
    /// Seed for the synthetic suite.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Synthetic suite spec (JSON); omitted fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-layer footprint, reuse and MAC metrics with family labels.
    Characterize {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Family histogram over one or more models.
    Cluster {
        #[command(flatten)]
        source: ModelSource,
        #[command(flatten)]
        seed: SeedArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Throughput and energy rooflines per accelerator.
    Roofline {
        #[command(flatten)]
        hw: HardwareArgs,
        /// Restrict to one accelerator.
        #[arg(long)]
        accelerator: Option<String>,
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Lowest intensity, MAC/byte.
        #[arg(long, default_value_t = 0.1)]
        min: f64,
        /// Highest intensity, MAC/byte.
        #[arg(long, default_value_t = 1e4)]
        max: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Two-phase layer-to-accelerator plan.
    Schedule {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[command(flatten)]
        hw: HardwareArgs,
        /// Family routing JSON; defaults to the canonical routing.
        #[arg(long)]
        routing: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Schedule and execute models under one scenario.
    Simulate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[command(flatten)]
        hw: HardwareArgs,
        /// Baseline, Base+HB or Mensa-G.
        #[arg(long, default_value = "Mensa-G")]
        scenario: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Scenario totals normalized to a baseline.
    Compare {
        #[command(flatten)]
        source: ModelSource,
        #[command(flatten)]
        seed: SeedArgs,
        #[command(flatten)]
        hw: HardwareArgs,
        #[arg(long, default_value = "Baseline")]
        baseline: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write the synthetic model suite as a JSON array of model documents.
    Generate {
        #[command(flatten)]
        seed: SeedArgs,
        /// Output file, or `-` for standard output.
        #[arg(long, default_value = "-")]
        out: String,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    use commands::*;
    match cli.command {
        Command::Characterize { model, output } => {
            let text = characterize(&load_models(&model)?, output.format)?;
            output::emit(&output.out, &text)
        }
        Command::Cluster { source, seed, output } => {
            let models = resolve_models(&source.model, source.synthetic, &seed)?;
            output::emit(&output.out, &cluster(&models, output.format)?)
        }
        Command::Roofline {
            hw,
            accelerator,
            points,
            min,
            max,
            output,
        } => {
            let suite = load_hardware(&hw.hw)?;
            let text = roofline(&suite, accelerator.as_deref(), points, min, max, output.format)?;
            output::emit(&output.out, &text)
        }
        Command::Schedule {
            model,
            hw,
            routing,
            output,
        } => {
            let suite = load_hardware(&hw.hw)?;
            let routing = load_routing(routing.as_deref())?;
            let text = schedule(&load_models(&model)?, &suite, &routing, output.format)?;
            output::emit(&output.out, &text)
        }
        Command::Simulate {
            model,
            hw,
            scenario,
            output,
        } => {
            let suite = load_hardware(&hw.hw)?;
            let text = simulate(&load_models(&model)?, &suite, &scenario, output.format)?;
            output::emit(&output.out, &text)
        }
        Command::Compare {
            source,
            seed,
            hw,
            baseline,
            output,
        } => {
            let suite = load_hardware(&hw.hw)?;
            let models = resolve_models(&source.model, source.synthetic, &seed)?;
            output::emit(&output.out, &compare(&models, &suite, &baseline, output.format)?)
        }
        Command::Generate { seed, out } => output::emit(&out, &generate(&seed)?),
    }
}

fn main() -> ExitCode {
    // Usage errors exit with status 2 from inside `parse`.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {}", message.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
