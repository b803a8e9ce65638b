use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nasopath::config::PipelineConfig;
use nasopath::dataset::Split;
use nasopath::evaluator::summary_lines;
use nasopath::{par, pipeline, synth, Error};

/// Nasopharyngeal biopsy patch pipeline.
#[derive(Parser, Debug)]
#[command(name = "nasopath", version)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Prints the effective configuration and exits without touching files.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Resolve annotations, partition regions and write filtered patches.
    Tile,
    /// Sample train/val/test manifests from the patch pool.
    Split,
    /// Train the classifier on the manifest's train split.
    Train,
    /// Evaluate the best checkpoint on the test splits.
    Eval,
    /// Rebuild report files from evaluation results.
    Report,
    /// Write a small synthetic fixture (slides, annotations, config).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Error> {
    if let Command::Synth { out } = &cli.command {
        if cli.dry_run {
            println!("would write fixture to {}", out.display());
            return Ok(());
        }
        synth::write_fixture(out, cli.seed.unwrap_or(0))?;
        println!("fixture written to {}", out.display());
        return Ok(());
    }
    let cfg = load_config(cli)?;
    if cli.dry_run {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if let Some(n) = cli.threads {
        par::init_threads(n)?;
    }
    match cli.command {
        Command::Tile => pipeline::cmd_tile(&cfg)?.lines().iter().for_each(|l| println!("{l}")),
        Command::Split => pipeline::split_summary(&pipeline::cmd_split(&cfg)?).iter().for_each(|l| println!("{l}")),
        Command::Train => {
            let s = pipeline::cmd_train(&cfg)?;
            let best = &s.records[s.best_epoch - 1];
            println!(
                "trained {} epochs ({} steps); best epoch {} with val accuracy {:.4}",
                s.records.len(),
                s.optimizer_steps,
                best.epoch,
                best.val_acc
            );
        }
        Command::Eval => {
            for (split, cm) in pipeline::cmd_eval(&cfg)? {
                println!("[{}]", Split::as_str(split));
                summary_lines(&cm).iter().for_each(|l| println!("{l}"));
            }
        }
        Command::Report => print!("{}", pipeline::cmd_report(&cfg)?),
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
