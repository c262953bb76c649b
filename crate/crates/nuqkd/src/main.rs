use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nuqkd::config::SimConfig;
use nuqkd::error::Result;
use nuqkd::report;
use nuqkd::runner::{self, SweepAxis};
use nuqkd::transport;
use nuqkd::{attack, Error};

#[derive(Parser)]
#[command(
    name = "nuqkd",
    about = "Deterministic, seedable BB84 quantum key distribution simulator",
    version
)]
struct Cli {
    /// Master seed for the deterministic randomness source.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for result files (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat key=value config file; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Raw key size per iteration.
    #[arg(long)]
    photons: Option<u64>,
    /// Number of key distribution iterations.
    #[arg(long)]
    iterations: Option<u64>,
    /// Extra config overrides as key=value pairs.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run in a single process and write the result files.
    Run(ConfigArgs),
    /// One run per axis value; writes a combined summary CSV.
    Sweep {
        /// One of: p_depol, epsilon, photons, sharing_rate.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Listen for the peer terminal and run the session as the server.
    Serve(ConfigArgs),
    /// Connect to a serving terminal; the session config comes from the server.
    Connect {
        #[arg(long, default_value = "127.0.0.1")]
        ip: String,
        #[arg(long, default_value_t = 5005)]
        port: u16,
    },
    /// Run a bundled experiment preset (exp1 or exp2).
    Replicate {
        /// Preset name: exp1 or exp2.
        preset: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Post-process an iterations CSV into an ROC CSV.
    Roc {
        /// Path to an iterations.csv produced by a run.
        input: PathBuf,
        /// Output path; defaults to roc.csv inside --out-dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(base: Option<SimConfig>, args: &ConfigArgs, seed: Option<u64>) -> Result<SimConfig> {
    let mut config = match (&args.config, base) {
        (Some(path), _) => SimConfig::from_kv_text(&fs::read_to_string(path)?)?,
        (None, Some(preset)) => preset,
        (None, None) => SimConfig::default(),
    };
    for pair in &args.overrides {
        let Some((key, value)) = pair.split_once('=') else {
            return Err(Error::Config(vec![format!(
                "override `{pair}` is not of the form key=value"
            )]));
        };
        config
            .apply_kv(key.trim(), value.trim())
            .map_err(|p| Error::Config(vec![p]))?;
    }
    if let Some(n) = args.photons {
        config.photons = n;
    }
    if let Some(n) = args.iterations {
        config.iterations = n;
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let config = load_config(None, &args, cli.seed)?;
            let output = runner::run(&config)?;
            runner::write_run_outputs(&config, &output, &cli.out_dir)?;
            print_summary(&config, &output.summary);
        }
        Command::Sweep {
            axis,
            values,
            config,
        } => {
            let axis = SweepAxis::parse(&axis)?;
            let base = load_config(None, &config, cli.seed)?;
            let points = runner::sweep(&base, axis, &values)?;
            fs::create_dir_all(&cli.out_dir)?;
            let path = cli.out_dir.join("sweep.csv");
            runner::write_sweep_csv(&points, axis, &path)?;
            println!("wrote {} sweep points to {}", points.len(), path.display());
        }
        Command::Serve(args) => {
            let config = load_config(None, &args, cli.seed)?;
            let records = transport::serve(&config)?;
            let summary = report::summarize(&records);
            let output = runner::RunOutput {
                records,
                summary,
                schedule: session_schedule(&config)?,
            };
            runner::write_run_outputs(&config, &output, &cli.out_dir)?;
            print_summary(&config, &output.summary);
        }
        Command::Connect { ip, port } => {
            let (config, records) = transport::connect(&ip, port)?;
            let summary = report::summarize(&records);
            let output = runner::RunOutput {
                records,
                summary,
                schedule: session_schedule(&config)?,
            };
            runner::write_run_outputs(&config, &output, &cli.out_dir)?;
            print_summary(&config, &output.summary);
        }
        Command::Replicate { preset, config } => {
            let base = SimConfig::preset(&preset)?;
            let config = load_config(Some(base), &config, cli.seed)?;
            let output = runner::run(&config)?;
            runner::write_run_outputs(&config, &output, &cli.out_dir)?;
            print_summary(&config, &output.summary);
        }
        Command::Roc { input, output } => {
            let records = report::parse_iterations_csv(&input)?;
            let decisions: Vec<_> = records
                .iter()
                .map(|r| attack::DecisionRecord {
                    iteration: r.iteration,
                    qber_est: r.qber_est,
                    decided_attacked: r.decided_attacked.unwrap_or(false),
                    truly_attacked: r.truly_attacked,
                })
                .collect();
            let curve = attack::roc_points(&decisions, &attack::default_roc_thresholds())?;
            let path = output.unwrap_or_else(|| cli.out_dir.join("roc.csv"));
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            report::write_roc_csv(&curve, &path)?;
            println!("wrote {} ROC points to {}", curve.points.len(), path.display());
        }
    }
    Ok(())
}

/// The attack ground truth is derived from the seed, so either terminal can
/// reconstruct it for its own schedule.csv.
fn session_schedule(config: &SimConfig) -> Result<nuqkd::attack::AttackSchedule> {
    let factory = runner::make_factory(config);
    runner::attack_schedule_for(config, &factory)
}

fn print_summary(config: &SimConfig, summary: &report::RunSummary) {
    println!("iterations: {}", config.iterations);
    for (name, metric) in summary.metrics() {
        if let Some(mean) = metric.mean {
            match metric.std {
                Some(std) => println!("{name}: mean {mean:.6}, std {std:.6}"),
                None => println!("{name}: mean {mean:.6}"),
            }
        }
    }
    let c = &summary.confusion;
    if c.tp + c.fp + c.tn + c.fn_ > 0 {
        println!(
            "decisions: tp {} fp {} tn {} fn {}",
            c.tp, c.fp, c.tn, c.fn_
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
