use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use edpgnn_cli::commands::{self, task_names};
use edpgnn_cli::config::VERSION;
use edpgnn_cli::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "edpgnn", version, about = "Train, sample and evaluate score-based graph generators")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override one key, e.g. `--set train.steps=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the dataset and train a model.
    Train,
    /// Draw graphs from a trained checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// MMD between a sample directory and a reference directory.
    Eval {
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train the four adjacency/channel variants and compare losses.
    Ablate,
    /// Run an edge-labeling experiment.
    Task {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        variant: Option<String>,
        /// Print the task names and exit.
        #[arg(long)]
        list: bool,
    },
    /// Print the default configuration with a note on every key.
    PrintDefaults,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for s in &cli.sets {
        config.set(s)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    let path_str = |p: &PathBuf| p.to_string_lossy().into_owned();
    match &cli.command {
        Command::Sample { checkpoint, count } => {
            if let Some(c) = checkpoint {
                config.sampler.checkpoint = path_str(c);
            }
            if let Some(n) = count {
                config.sampler.count = *n;
            }
        }
        Command::Eval { samples, reference } => {
            if let Some(s) = samples {
                config.eval.samples = path_str(s);
            }
            if let Some(r) = reference {
                config.eval.reference = path_str(r);
            }
        }
        Command::Task { task, variant, .. } => {
            if let Some(t) = task {
                config.task.name = t.clone();
            }
            if let Some(v) = variant {
                config.task.variant = v.clone();
            }
        }
        _ => {}
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::PrintDefaults => {
            print!("# {VERSION}\n{}", RunConfig::default().render_documented());
            return Ok(());
        }
        Command::Task { list: true, .. } => {
            for name in task_names() {
                println!("{name}");
            }
            return Ok(());
        }
        _ => {}
    }
    let config = resolve(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build_global()
        .context("starting worker threads")?;
    match cli.command {
        Command::Train => {
            let s = commands::cmd_train(&config)?;
            println!("checkpoint = {}", s.checkpoint.display());
            println!("best_step = {}", s.best_step);
            println!("best_validation = {:.6e}", s.best_validation);
            println!("test_loss = {:.6e}", s.test_loss);
        }
        Command::Sample { .. } => {
            let files = commands::cmd_sample(&config)?;
            println!("wrote {} files under {}", files.len(), config.out.join(commands::SAMPLES_DIR).display());
        }
        Command::Eval { .. } => {
            print!("{}", commands::cmd_eval(&config)?.to_key_value());
        }
        Command::Ablate => {
            println!("{}", commands::ABLATION_CSV_HEADER);
            for r in commands::cmd_ablate(&config)? {
                println!(
                    "{},{},{},{},{:.6e},{:.6e}",
                    r.learnable_adj, r.multi_channel, r.params, r.best_step, r.train_loss, r.test_loss
                );
            }
        }
        Command::Task { .. } => {
            print!("{}", commands::cmd_task(&config, |_, _| {})?.to_key_value());
        }
        Command::PrintDefaults => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // one line, so callers can parse it
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
