//! The command implementations; each writes its outputs under the run's
//! output directory and returns what it wrote or measured.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use edpgnn::dsm::{format_curve_csv, train, validate, TrainOutcome};
use edpgnn::graph::io::{read_graph_dir, read_manifest, write_graph_dir, MANIFEST};
use edpgnn::graph::{generate_dataset, GraphInstance, NodeCountSampler, NoiseSchedule};
use edpgnn::metrics::MmdReport;
use edpgnn::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelConfig};
use edpgnn::sampler::{sample_set, write_samples, CONTINUOUS_SPLIT, SAMPLE_SPLIT};
use edpgnn::tasks::{run_task_experiment, TaskKind, TaskReport};
use edpgnn::EdpGnn;

use crate::config::{RunConfig, VERSION};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const DATA_DIR: &str = "data";
pub const SAMPLES_DIR: &str = "samples";

/// Seeds of the fixed perturbations used to score trained models.
const TEST_NOISE_SEED: u64 = 0x7e57;
const TRAIN_NOISE_SEED: u64 = 0x7a1d;

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<GraphInstance>,
    pub validation: Vec<GraphInstance>,
    pub test: Vec<GraphInstance>,
}

/// Generates the dataset and splits it: test first, then validation, the
/// rest for training.
pub fn build_splits(config: &RunConfig) -> Result<Splits> {
    let graphs = generate_dataset(&config.dataset_spec()?)?;
    let (test_n, val_n) = (config.dataset.test_count, config.train.validation_size);
    if graphs.len() <= test_n + val_n {
        bail!(
            "dataset has {} graphs, need more than dataset.test_count + train.validation_size = {}",
            graphs.len(),
            test_n + val_n
        );
    }
    let mut rest = graphs;
    let train = rest.split_off(test_n + val_n);
    let validation = rest.split_off(test_n);
    Ok(Splits {
        train,
        validation,
        test: rest,
    })
}

fn prepare_out(config: &RunConfig) -> Result<PathBuf> {
    let out = config.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let text = format!("# {VERSION}\n{}", config.render());
    let path = out.join("config.toml");
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn init_model(config: ModelConfig, seed: u64) -> Result<EdpGnn> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    Ok(EdpGnn::new(config, &mut rng)?)
}

fn fit(config: &RunConfig, model_config: ModelConfig, splits: &Splits, dir: &Path) -> Result<TrainOutcome<f64>> {
    let schedule = config.schedule()?;
    let model = init_model(model_config, config.seed)?;
    let levels = schedule.len();
    let outcome = train(model, &splits.train, &splits.validation, &schedule, &config.train_config()?, |_| {})?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let sizes = splits.train.iter().map(GraphInstance::n).collect();
    write_checkpoint(&Checkpoint::from_model(&outcome.model, &schedule, sizes), dir.join(CHECKPOINT_FILE))?;
    write_text(&dir.join("loss.csv"), &format_curve_csv(&outcome.curve, levels))?;
    Ok(outcome)
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub best_step: usize,
    pub best_validation: f64,
    pub test_loss: f64,
}

/// Builds the dataset, trains, and writes the data splits, the best
/// checkpoint and the loss curves.
pub fn cmd_train(config: &RunConfig) -> Result<TrainSummary> {
    let out = prepare_out(config)?;
    let splits = build_splits(config)?;
    write_graph_dir(
        out.join(DATA_DIR),
        &[("train", &splits.train), ("val", &splits.validation), ("test", &splits.test)],
    )?;
    let outcome = fit(config, config.model_config()?, &splits, &out)?;
    let schedule = config.schedule()?;
    let test_loss = if splits.test.is_empty() {
        f64::NAN
    } else {
        validate(&outcome.model, &splits.test, &schedule, TEST_NOISE_SEED)?.total
    };
    let summary = TrainSummary {
        checkpoint: out.join(CHECKPOINT_FILE),
        best_step: outcome.best_step,
        best_validation: outcome.best_validation.as_ref().map_or(f64::NAN, |l| l.total),
        test_loss,
    };
    let mut text = String::new();
    let _ = writeln!(text, "best_step = {}", summary.best_step);
    let _ = writeln!(text, "best_validation = {:.6e}", summary.best_validation);
    let _ = writeln!(text, "test_loss = {:.6e}", summary.test_loss);
    write_text(&out.join("train_summary.txt"), &text)?;
    Ok(summary)
}

fn checkpoint_path(config: &RunConfig) -> PathBuf {
    if config.sampler.checkpoint.is_empty() {
        config.out.join(CHECKPOINT_FILE)
    } else {
        PathBuf::from(&config.sampler.checkpoint)
    }
}

/// Samples `sampler.count` graphs from a checkpoint into `<out>/samples`.
pub fn cmd_sample(config: &RunConfig) -> Result<Vec<PathBuf>> {
    let path = checkpoint_path(config);
    let ckpt = read_checkpoint(&path)?;
    ckpt.check_architecture(&config.model_config()?)?;
    let model: EdpGnn = ckpt.to_model()?;
    let sizes = NodeCountSampler::from_sizes(ckpt.node_sizes.clone())?;
    let samples = sample_set(
        &model,
        config.sampler.count,
        &sizes,
        &ckpt.schedule,
        &config.sampler_config()?,
    )?;
    let out = prepare_out(config)?;
    let dir = out.join(SAMPLES_DIR);
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    Ok(write_samples(&dir, &samples, config.sampler.dump_continuous)?)
}

/// Reads the graphs of `split` when the directory's manifest has that split,
/// otherwise every graph in it apart from continuous dumps.
pub fn read_graphs(dir: &Path, split: &str) -> Result<Vec<GraphInstance>> {
    let graphs = if dir.join(MANIFEST).exists() {
        let entries = read_manifest(dir)?;
        let mut splits: Vec<&str> = Vec::new();
        for e in &entries {
            if e.split != CONTINUOUS_SPLIT && !splits.contains(&e.split.as_str()) {
                splits.push(&e.split);
            }
        }
        if splits.contains(&split) {
            splits = vec![split];
        }
        let mut graphs = Vec::new();
        for s in splits {
            graphs.extend(read_graph_dir(dir, Some(s))?);
        }
        graphs
    } else {
        read_graph_dir(dir, None)?
    };
    if graphs.is_empty() {
        bail!("no graphs in {}", dir.display());
    }
    Ok(graphs)
}

/// MMD between the samples and the reference set, written to `<out>/mmd.txt`.
pub fn cmd_eval(config: &RunConfig) -> Result<MmdReport> {
    let samples_dir = if config.eval.samples.is_empty() {
        config.out.join(SAMPLES_DIR)
    } else {
        PathBuf::from(&config.eval.samples)
    };
    let reference_dir = if config.eval.reference.is_empty() {
        config.out.join(DATA_DIR)
    } else {
        PathBuf::from(&config.eval.reference)
    };
    let samples = read_graphs(&samples_dir, SAMPLE_SPLIT)?;
    let reference = read_graphs(&reference_dir, "test")?;
    let report = MmdReport::compute(&samples, &reference, config.eval.bandwidth)?;
    let out = prepare_out(config)?;
    write_text(&out.join("mmd.txt"), &report.to_key_value())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub learnable_adj: bool,
    pub multi_channel: bool,
    pub params: usize,
    pub best_step: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

impl AblationRow {
    /// `Y/Y`-style label: learnable adjacency, then multi-channel.
    pub fn label(&self) -> String {
        let yn = |b: bool| if b { "Y" } else { "N" };
        format!("{}/{}", yn(self.learnable_adj), yn(self.multi_channel))
    }
}

pub const ABLATION_CSV_HEADER: &str = "learnable_adj,multi_channel,params,best_step,train_loss,test_loss";

pub fn ablation_dir(out: &Path, learnable_adj: bool, multi_channel: bool) -> PathBuf {
    let yn = |b: bool| if b { "y" } else { "n" };
    out.join("ablation").join(format!("{}{}", yn(learnable_adj), yn(multi_channel)))
}

/// Trains the four variants on the same data with the same seed and budget.
pub fn cmd_ablate(config: &RunConfig) -> Result<Vec<AblationRow>> {
    let out = prepare_out(config)?;
    let splits = build_splits(config)?;
    if splits.test.is_empty() {
        bail!("ablation needs a test split, dataset.test_count is 0");
    }
    write_graph_dir(
        out.join(DATA_DIR),
        &[("train", &splits.train), ("val", &splits.validation), ("test", &splits.test)],
    )?;
    let schedule: NoiseSchedule = config.schedule()?;
    let base = config.model_config()?;
    let mut rows = Vec::with_capacity(4);
    for (learnable_adj, multi_channel) in [(true, true), (true, false), (false, true), (false, false)] {
        let model_config = ModelConfig {
            learnable_adj,
            multi_channel,
            ..base.clone()
        };
        let dir = ablation_dir(&out, learnable_adj, multi_channel);
        let outcome = fit(config, model_config, &splits, &dir)?;
        rows.push(AblationRow {
            learnable_adj,
            multi_channel,
            params: outcome.model.params().num_scalars(),
            best_step: outcome.best_step,
            train_loss: validate(&outcome.model, &splits.train, &schedule, TRAIN_NOISE_SEED)?.total,
            test_loss: validate(&outcome.model, &splits.test, &schedule, TEST_NOISE_SEED)?.total,
        });
    }
    let mut csv = format!("{ABLATION_CSV_HEADER}\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6e},{:.6e}",
            r.learnable_adj, r.multi_channel, r.params, r.best_step, r.train_loss, r.test_loss
        );
    }
    write_text(&out.join("ablation.csv"), &csv)?;
    Ok(rows)
}

/// Runs one edge-labeling experiment; `on_step` sees every step's loss.
pub fn cmd_task(config: &RunConfig, on_step: impl FnMut(usize, f64)) -> Result<TaskReport> {
    let task = config.task_config()?;
    let out = prepare_out(config)?;
    let (report, _) = run_task_experiment(&task, on_step)?;
    let path = out.join(format!("task_{}_{}.txt", task.task, task.variant));
    write_text(&path, &report.to_key_value())?;
    Ok(report)
}

pub fn task_names() -> Vec<&'static str> {
    TaskKind::ALL.iter().map(|t| t.name()).collect()
}
