use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use optdist_cli::commands::{
    cmd_evaluate, cmd_generate, cmd_gradcheck, cmd_sweep, cmd_train, gradcheck_default_train_config,
    parse_axis,
};
use optdist_cli::config::{RunConfig, TrainOverrides};
use optdist_cli::CliError;

/// Customer-lifetime-value models with adaptive sub-distribution selection.
#[derive(Parser)]
#[command(name = "optdist", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic zero-inflated log-normal mixture dataset.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for data.csv, schema.toml, clusters.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and persist the best-validation snapshot.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset CSV (overrides the config's [data] section).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Schema manifest (overrides the config's [data] section).
        #[arg(long)]
        schema: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Score a CSV with a saved model artifact.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Optional schema manifest to verify against the artifact.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per hyper-parameter value per seed and tabulate metrics.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Axis to sweep: l, tau, or learning_rate.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. 2,3,4,5,6.
        #[arg(long)]
        values: String,
        /// Comma-separated seeds (default 1,2,3).
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
        seeds: Vec<u64>,
        #[command(flatten)]
        overrides: TrainOverrides,
    },
    /// Check analytic gradients against central finite differences.
    Gradcheck {
        /// Optional config whose [train] section sizes the checked model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Fault-injection hook: corrupt one gradient so the check fails.
        #[arg(long)]
        corrupt_gradient: bool,
    },
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, out } => {
            let config = RunConfig::load(&config)?;
            let summary = cmd_generate(&config, &out)?;
            println!("n={}", summary.n);
            println!("positive_ratio={:.6}", summary.positive_ratio);
            println!("csv={}", summary.csv.display());
            println!("schema={}", summary.schema.display());
            println!("clusters={}", summary.clusters.display());
        }
        Command::Train {
            config,
            out,
            data,
            schema,
            overrides,
        } => {
            let mut config = RunConfig::load(&config)?;
            overrides.apply(&mut config.train)?;
            if let (Some(csv), Some(schema)) = (&data, &schema) {
                config.data = Some(optdist_cli::config::DataSection {
                    csv: csv.clone(),
                    schema: schema.clone(),
                    split_seed: config.data.as_ref().map_or(13, |d| d.split_seed),
                    ratios: config.data.as_ref().map_or((0.7, 0.1, 0.2), |d| d.ratios),
                });
            } else if data.is_some() || schema.is_some() {
                return Err(CliError::new("--data and --schema must be given together"));
            }
            let outcome = cmd_train(&config, &out)?;
            println!("model={}", outcome.artifact_path.display());
            println!("history={}", outcome.history_path.display());
            println!("epochs={}", outcome.epochs);
            if let Some(metrics) = &outcome.final_metrics {
                print!("{}", metrics.to_key_values());
            }
        }
        Command::Evaluate {
            model,
            data,
            schema,
            out,
        } => {
            let outcome = cmd_evaluate(&model, &data, schema.as_deref(), &out)?;
            print!("{}", outcome.report.to_key_values());
            println!("report={}", outcome.report_path.display());
        }
        Command::Sweep {
            config,
            out,
            axis,
            values,
            seeds,
            overrides,
        } => {
            let mut config = RunConfig::load(&config)?;
            overrides.apply(&mut config.train)?;
            let axis = parse_axis(&axis, &values)?;
            let outcome = cmd_sweep(&config, &axis, &seeds, &out)?;
            println!("rows={}", outcome.rows.len());
            println!("table={}", outcome.table_path.display());
        }
        Command::Gradcheck {
            config,
            overrides,
            corrupt_gradient,
        } => {
            let mut train_config = match config {
                Some(path) => RunConfig::load(&path)?.train,
                None => gradcheck_default_train_config(),
            };
            overrides.apply(&mut train_config)?;
            let outcome = cmd_gradcheck(&train_config, corrupt_gradient)?;
            println!("params={}", outcome.params);
            println!("max_rel_error={:e}", outcome.max_rel_error);
            println!("threshold={:e}", outcome.threshold);
            println!("verdict={}", if outcome.pass { "PASS" } else { "FAIL" });
            if !outcome.pass {
                return Err(CliError::new(format!(
                    "gradient check failed: max relative error {:e} above {:e}",
                    outcome.max_rel_error, outcome.threshold
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
