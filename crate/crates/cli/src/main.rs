use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reqadapt::corpus::Task;
use reqadapt_cli::runner;
use reqadapt_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "reqadapt", version, about = "Domain-adapted encoders for requirement classification")]
struct Cli {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding REQADAPT_OUT and the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Adapt on every in-domain text, test split included.
    #[arg(long, global = true)]
    paper_faithful_adaptation_pool: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpora, vocabulary and split.
    Generate,
    /// Stage 1: masked-language-model pre-training on the generic corpus.
    Pretrain,
    /// Stage 2: continued MLM training on in-domain text.
    Adapt {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Stage 3: fine-tune a classifier for one task.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        task: Task,
    },
    /// Score a fine-tuned checkpoint or a prediction file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: Task,
    },
    /// Fine-tune all variants, run the baselines and write the comparison.
    Compare,
    /// generate, pretrain, adapt and compare in one go.
    Full,
    /// Fine-tuning learning-rate sweep from the pretrained checkpoint.
    Sweep {
        #[arg(long)]
        task: Option<Task>,
    },
}

fn configure(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    } else if let Some(out) = std::env::var_os("REQADAPT_OUT") {
        cfg.out_dir = out.into();
    }
    if cli.paper_faithful_adaptation_pool {
        cfg.paper_faithful_adaptation_pool = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = std::env::var("REQADAPT_THREADS").ok().and_then(|v| v.parse().ok()) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Other(e.to_string()))?;
    }
    let cfg = configure(&cli)?;
    match cli.command {
        Command::Generate => {
            let ds = runner::cmd_generate(&cfg)?;
            println!(
                "{} labeled, {} unlabeled, {} generic documents; vocabulary {} -> {}",
                ds.labeled.len(),
                ds.unlabeled.len(),
                ds.generic.len(),
                ds.vocab.len(),
                cfg.out_dir.join("data").display()
            );
        }
        Command::Pretrain => {
            let r = runner::cmd_pretrain(&cfg)?;
            println!(
                "pretrained: validation MLM loss {:.4} -> {:.4}",
                r.initial_val_loss,
                r.best_val_loss.unwrap_or(f64::NAN)
            );
        }
        Command::Adapt { checkpoint } => {
            let s = runner::cmd_adapt(&cfg, checkpoint.as_deref())?;
            println!(
                "adapted: in-domain MLM loss {:.4} -> {:.4}, generic {:.4} -> {:.4}",
                s.in_domain_before, s.in_domain_after, s.generic_before, s.generic_after
            );
        }
        Command::Finetune { checkpoint, task } => {
            let m = runner::cmd_finetune(&cfg, checkpoint.as_deref(), task)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Evaluate { checkpoint, task } => {
            let m = runner::cmd_evaluate(&cfg, &checkpoint, task)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
        Command::Compare => print!("{}", runner::cmd_compare(&cfg)?.table.render()),
        Command::Full => print!("{}", runner::cmd_full(&cfg)?.metrics.table.render()),
        Command::Sweep { task } => print!("{}", runner::cmd_sweep(&cfg, task)?.render()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
