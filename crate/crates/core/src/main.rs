use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use airfl::config::{parse_config, write_manifest, RunManifest};
use airfl::metrics::{compare_runs, MetricsWriter};
use airfl::{Error, Simulation};

#[derive(Parser)]
#[command(name = "airfl", version, about = "Byzantine-resilient federated learning over a simulated AirComp uplink")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write manifest.txt and metrics.csv.
    Run(RunArgs),
    /// Summarize metrics CSV files side by side.
    Compare {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Accuracy used for the rounds-to-threshold column.
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// ideal | aircomp | mean
    #[arg(long)]
    mode: Option<String>,
    /// none | classflip | weightflip
    #[arg(long)]
    attack: Option<String>,
    #[arg(long)]
    byzantine: Option<usize>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    cmult: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// mnist | synthetic
    #[arg(long)]
    dataset: Option<String>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print one line per round to stderr.
    #[arg(long)]
    verbose: bool,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for item in &self.set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {item:?}"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("mode", self.mode.clone());
        push("attack", self.attack.clone());
        push("B", self.byzantine.map(|v| v.to_string()));
        push("sigma2", self.sigma2.map(|v| v.to_string()));
        push("cmult", self.cmult.map(|v| v.to_string()));
        push("rounds", self.rounds.map(|v| v.to_string()));
        push("dataset", self.dataset.clone());
        Ok(out)
    }
}

fn run(args: &RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let config = parse_config(args.config.as_deref(), &args.overrides()?)?;
    fs::create_dir_all(&args.out).map_err(|source| Error::Io {
        path: args.out.clone(),
        source,
    })?;
    let metrics_path = args.out.join("metrics.csv");
    let manifest_path = args.out.join("manifest.txt");
    let manifest = RunManifest::new(config.clone(), metrics_path.clone());
    fs::write(&manifest_path, write_manifest(&manifest)).map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;

    let mut sim = Simulation::new(config)?;
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let verbose = args.verbose;
    let outcome = sim.run(|row| {
        if verbose {
            eprintln!(
                "round {:>4}  loss {:.5}  acc {:.4}  iters {:>4}  distorted {:>5}{}",
                row.round,
                row.train_loss,
                row.test_accuracy,
                row.weiszfeld_iters,
                row.distorted_devices,
                if row.aggregation_failed { "  (aggregation failed)" } else { "" }
            );
        }
        writer.write(row)
    })?;
    println!(
        "final test accuracy {:.4} after {} rounds; metrics in {}",
        outcome.final_accuracy(),
        outcome.metrics.len(),
        metrics_path.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Compare { csv, threshold } => compare_runs(csv, *threshold)
            .map(|table| print!("{table}"))
            .map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("airfl: {e}");
            ExitCode::FAILURE
        }
    }
}
