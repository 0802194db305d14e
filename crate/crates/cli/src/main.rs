use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qber_risk_cli::{stages, CliError, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "qber-risk",
    version,
    about = "Learn QBER distributions and score QKD eavesdropping risk"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all stage outputs.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a channel and inject attacks.
    Simulate,
    /// Learn categories from the attack-free baseline.
    Train,
    /// Cross-validate the learner on the baseline.
    Test,
    /// Score the evaluated series against the trained categories.
    Risk,
    /// Summarise a run, optionally next to another run.
    Report {
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run every stage in order.
    All,
    /// Print the resolved configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate => {
            let meta = stages::simulate(&cfg, out)?;
            println!(
                "simulated {} samples ({} attack events) into {}",
                meta.n,
                meta.attack_events,
                out.display()
            );
        }
        Command::Train => {
            let set = stages::train(&cfg, out)?;
            println!("trained {} categories from {} folds", set.h(), set.training_folds.len());
        }
        Command::Test => {
            let cv = stages::test(&cfg, out)?;
            for r in &cv.reports {
                println!("fold {}: best P = {:.6} at c = {}", r.fold, r.best_p_value, r.best_c);
            }
        }
        Command::Risk => {
            let r = stages::risk(&cfg, out)?;
            println!(
                "R_eps = {:.6e}, R_ref = {:.6e}: {}",
                r.r_eps,
                r.r_ref,
                if r.trusted { "trusted" } else { "not trusted" }
            );
        }
        Command::Report { compare } => print!("{}", stages::report(out, compare.as_deref())?),
        Command::All => {
            stages::run_all(&cfg, out)?;
            print!(
                "{}",
                std::fs::read_to_string(out.join(stages::SUMMARY_TXT)).map_err(|e| CliError::Data(e.to_string()))?
            );
        }
        Command::Config => print!("{}", cfg.to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qber-risk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
