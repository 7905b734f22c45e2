use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blindinv::gan;
use blindinv::gradcheck;
use blindinv::harness::config::ExperimentConfig;
use blindinv::harness::experiment::{self, ExperimentSummary, BASELINES, SOLVE};
use clap::builder::PossibleValuesParser;
use clap::{Parser, Subcommand};

const GRAD_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "blindinv", version, about = "Blind inverse problems with a generative prior")]
struct Cli {
    /// Run independent trials concurrently (capped by BLINDINV_THREADS).
    #[arg(long, global = true)]
    parallel: bool,

    /// Print the run summary as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the GAN prior and write its checkpoint.
    TrainGan { config: PathBuf },
    /// Synthesize observations into <output>/observations.
    Observe { config: PathBuf },
    /// Run the alternating solver.
    Solve { config: PathBuf },
    /// Run one comparison method.
    Baseline {
        #[arg(value_parser = PossibleValuesParser::new(BASELINES))]
        method: String,
        config: PathBuf,
    },
    /// Re-score every result under an experiment directory.
    Evaluate { result_dir: PathBuf },
    /// Finite-difference check of every autodiff op and composite graph.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
    },
}

fn load(path: &Path) -> blindinv::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_summary(summary: &ExperimentSummary, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
        return;
    }
    println!("{:<6} {:<18} {:>10} {:>10} {:>12}", "trial", "method", "psnr", "mse", "final_loss");
    for m in &summary.methods {
        let loss = m.final_loss.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<6} {:<18} {:>10.3} {:>10.5} {:>12}",
            m.trial, m.method, m.report.mean_psnr, m.report.mean_mse, loss
        );
    }
}

fn run(cli: Cli) -> blindinv::Result<ExitCode> {
    match cli.command {
        Command::TrainGan { config } => {
            let cfg = load(&config)?;
            let log = experiment::train_gan(&cfg)?;
            let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
            println!(
                "trained {} epochs: d_loss {:.4} g_loss {:.4}, checkpoint {}",
                log.d_loss.len(),
                last(&log.d_loss),
                last(&log.g_loss),
                cfg.checkpoint.display()
            );
        }
        Command::Observe { config } => {
            let cfg = load(&config)?;
            let (gen, _) = gan::load_checkpoint(&cfg.checkpoint)?;
            let obs = experiment::observe(&cfg, &gen)?;
            let dir = cfg.output.join("observations");
            obs.save(&dir)?;
            println!("{} observations ({}) written to {}", obs.len(), obs.operator_id, dir.display());
        }
        Command::Solve { config } => {
            let cfg = load(&config)?;
            let summary = experiment::run_methods(&cfg, &[SOLVE.to_string()], cli.parallel)?;
            print_summary(&summary, cli.json);
        }
        Command::Baseline { method, config } => {
            let cfg = load(&config)?;
            let summary = experiment::run_methods(&cfg, &[method], cli.parallel)?;
            print_summary(&summary, cli.json);
        }
        Command::Evaluate { result_dir } => {
            let summary = experiment::evaluate(&result_dir)?;
            print_summary(&summary, cli.json);
        }
        Command::Gradcheck { trials, step } => {
            let mut ok = true;
            for case in gradcheck::run_suite(trials, step) {
                let pass = case.errors.is_empty() && case.max_rel_error < GRAD_TOL;
                ok &= pass;
                println!(
                    "{} {:<46} max rel err {:.2e} (trial {}), {} kinks skipped",
                    if pass { "ok  " } else { "FAIL" },
                    case.name,
                    case.max_rel_error,
                    case.worst_trial,
                    case.excluded
                );
                for e in &case.errors {
                    println!("     {e}");
                }
            }
            if !ok {
                return Ok(ExitCode::from(4));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
