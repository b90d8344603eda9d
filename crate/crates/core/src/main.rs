use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cdts::experiment::{bounds_report, detect_eval, parse_config, run_experiment, series_file_name};

#[derive(Parser)]
#[command(version, about = "Change-detection aided Thompson Sampling link-rate simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every policy in the config and write series CSVs plus summary.json
    Run {
        config: PathBuf,
        /// Override the config's output_dir
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the analytic regret and detection bounds for a config
    Bounds {
        config: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        epsilon: f64,
        /// Also write bounds.json and bounds.txt here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo false-alarm / missed-detection rates against their bounds
    DetectEval {
        #[arg(long, default_value_t = 50)]
        w: usize,
        #[arg(long, default_value_t = 0.4)]
        b: f64,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Mean shift for the miss-rate experiment; omitted means FA only
        #[arg(long, allow_hyphen_values = true)]
        shift: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> cdts::Result<ExitCode> {
    match cli.command {
        Command::Run { config, out } => {
            let mut config = parse_config(&config)?;
            if let Some(dir) = out {
                config.output_dir = dir;
            }
            let summary = run_experiment(&config)?;
            println!("{:<12} {:>16} {:>18} {:>12}", "policy", "final_regret", "final_throughput", "detections");
            for p in &summary.policies {
                println!(
                    "{:<12} {:>16.2} {:>18.2} {:>12.2}",
                    p.name, p.final_mean_cum_regret, p.final_mean_cum_throughput, p.mean_detections
                );
            }
            for p in &summary.policies {
                println!("wrote {}", config.output_dir.join(series_file_name(&p.name)).display());
            }
            println!("wrote {}", config.output_dir.join("summary.json").display());
        }
        Command::Bounds { config, alpha, epsilon, out } => {
            let config = parse_config(&config)?;
            let report = bounds_report(&config, alpha, epsilon)?;
            let text = report.to_text();
            print!("{text}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("bounds.txt"), &text)?;
                fs::write(dir.join("bounds.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
        Command::DetectEval { w, b, theta, shift, trials, seed } => {
            let eval = detect_eval(w, b, theta, shift, trials, seed)?;
            println!("{}", serde_json::to_string_pretty(&eval)?);
            let pass = eval.false_alarm.pass && eval.missed_detection.is_none_or(|m| m.pass);
            if !pass {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
