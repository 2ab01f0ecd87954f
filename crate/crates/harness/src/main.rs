use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use dendrofet::config::{self, preset_names};
use dendrofet::experiments::{self, Experiment};
use dendrofet::output::OutputDir;
use dendrofet::Error;

/// Multi-gate FeFET dendritic neuron: device experiments, training and
/// device-in-the-loop inference.
#[derive(Debug, Parser)]
#[command(name = "dendrofet", version)]
struct Cli {
    #[arg(long, value_enum)]
    experiment: Experiment,

    /// TOML file layered over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Sets both `seed` and `network.seed`.
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// `key=value`, applied after the file; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Scaling preset applied before the file (lateral, vertical, low-ea, high-ea).
    #[arg(long)]
    preset: Option<String>,

    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,

    /// Worker threads; 1 is the bit-exact serial baseline.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    if cli.experiment == Experiment::ScalingPreset && cli.preset.is_none() {
        return Err(Error::Usage(format!("scaling-preset needs --preset <{}>", preset_names().join("|"))).into());
    }
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
        overrides.push(format!("network.seed={seed}"));
    }
    let resolved = config::resolve(cli.config.as_deref(), cli.preset.as_deref(), &overrides)?;
    let mut out = OutputDir::create(&cli.out, cli.force)?;
    experiments::run(cli.experiment, &resolved, &mut out).with_context(|| format!("experiment {} failed", cli.experiment.id()))?;
    let manifest = out.finish(cli.experiment.id(), &resolved, cli.threads)?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(3, Error::exit_code);
            ExitCode::from(code)
        }
    }
}
