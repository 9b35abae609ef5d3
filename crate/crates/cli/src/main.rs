use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bpsim::experiment::{preset_fig3, preset_fig4, ResultRow};
use bpsim::{run, run_experiment, ExperimentSpec, NextHopTable, OutputFormat, ResultTable, SimConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Backpressure routing simulator for a slotted backbone network.
#[derive(Parser)]
#[command(name = "bpsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one configuration and print its result row.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a parameter sweep over seeds, modes and sweep values.
    Sweep {
        #[arg(value_enum)]
        preset: Preset,
        /// Experiment spec file, required for `custom`.
        spec: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
        /// Concurrent runs; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        parallel: usize,
    },
    /// Check a run config or experiment spec without simulating it.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct CommonArgs {
    /// Traffic seed for `run`, base seed for `sweep`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; results go to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Run length in slots; the warmup is reset to a tenth of it.
    #[arg(long)]
    slots: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fig3,
    Fig4,
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn set_slots(config: &mut SimConfig, slots: Option<u64>) {
    if let Some(slots) = slots {
        config.slots = slots;
        config.warmup = slots / 10;
    }
}

fn emit(table: &ResultTable, out: Option<&Path>, format: Format) -> Result<()> {
    match out {
        Some(path) => table
            .save(path, format.into())
            .with_context(|| format!("saving results to {}", path.display())),
        None => {
            let body = match format {
                Format::Csv => table.to_csv_string(),
                Format::Json => table.to_json_string()? + "\n",
            };
            io::stdout().write_all(body.as_bytes())?;
            Ok(())
        }
    }
}

fn check_config(config: &SimConfig) -> Result<String> {
    config.validate()?;
    let topology = config.topology.build(config.batch_bytes, config.slot_sec)?;
    NextHopTable::compute(&topology)?;
    Ok(format!(
        "{} nodes, {} links, mode {}, {} slots",
        topology.node_count(),
        topology.links().len(),
        config.controller.mode,
        config.slots
    ))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, common } => {
            let mut sim: SimConfig = read_toml(&config)?;
            if let Some(seed) = common.seed {
                sim.traffic.seed = seed;
            }
            set_slots(&mut sim, common.slots);
            let report = run(&sim)?;
            let name = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
            let table = ResultTable {
                rows: vec![ResultRow::from_report(&name, sim.controller.mode, &report)],
            };
            emit(&table, common.out.as_deref(), common.format)
        }
        Command::Sweep {
            preset,
            spec,
            common,
            parallel,
        } => {
            let mut spec = match (preset, spec) {
                (Preset::Fig3, None) => preset_fig3(),
                (Preset::Fig4, None) => preset_fig4(),
                (Preset::Custom, Some(path)) => read_toml::<ExperimentSpec>(&path)?,
                (Preset::Custom, None) => bail!("`sweep custom` needs a spec file"),
                (_, Some(_)) => bail!("a spec file is only accepted with `sweep custom`"),
            };
            if let Some(seed) = common.seed {
                spec.base_seed = seed;
            }
            set_slots(&mut spec.template, common.slots);
            let table = run_experiment(&spec, parallel)?;
            let out = common.out.or_else(|| spec.output.clone());
            emit(&table, out.as_deref(), common.format)
        }
        Command::Validate { config } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let summary = match toml::from_str::<ExperimentSpec>(&text) {
                Ok(spec) => {
                    spec.validate()?;
                    let jobs = spec.jobs();
                    format!("experiment {}: {} runs; {}", spec.name, jobs.len(), check_config(&spec.template)?)
                }
                Err(as_spec) => {
                    let sim: SimConfig = toml::from_str(&text).map_err(|as_run| {
                        anyhow::anyhow!(
                            "{} is neither a run config ({as_run}) nor an experiment spec ({as_spec})",
                            config.display()
                        )
                    })?;
                    format!("run config: {}", check_config(&sim)?)
                }
            };
            println!("ok {summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
