//! Run configuration: TOML file, `--set` overrides and conversion into the
//! library's configuration types.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use edpgnn::dsm::TrainConfig;
use edpgnn::graph::{DatasetKind, DatasetSpec, EgoHost, NoiseSchedule};
use edpgnn::model::ModelConfig;
use edpgnn::sampler::SamplerConfig;
use edpgnn::tasks::{TaskConfig, TaskKind, Variant};

pub const VERSION: &str = concat!("edpgnn ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub noise: NoiseSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
    pub task: TaskSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            workers: 0,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            noise: NoiseSection::default(),
            train: TrainSection::default(),
            sampler: SamplerSection::default(),
            eval: EvalSection::default(),
            task: TaskSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// community_small, ego_small, lobster, erdos_renyi or edge_list_dir.
    pub kind: String,
    /// Graphs generated in total, split into test, validation and training.
    pub count: usize,
    pub test_count: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub p: f64,
    pub weighted: bool,
    pub p_intra: f64,
    pub inter_fraction: f64,
    pub p_leaf: f64,
    pub host_nodes: usize,
    pub host_attach: usize,
    /// Edge-list host for ego graphs, or the directory for edge_list_dir.
    pub path: String,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            kind: "community_small".into(),
            count: 196,
            test_count: 64,
            n_min: 12,
            n_max: 20,
            p: 0.3,
            weighted: false,
            p_intra: 0.7,
            inter_fraction: 0.05,
            p_leaf: 0.5,
            host_nodes: 2000,
            host_attach: 2,
            path: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub mp_steps: usize,
    pub channels: usize,
    pub hidden: usize,
    pub learnable_adj: bool,
    pub multi_channel: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            layers: m.layers,
            mp_steps: m.mp_steps,
            channels: m.channels,
            hidden: m.hidden,
            learnable_adj: m.learnable_adj,
            multi_channel: m.multi_channel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigmas: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigmas: NoiseSchedule::default().sigmas().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub validation_size: usize,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            steps: t.steps,
            validation_size: t.validation_size,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub step_size: f64,
    pub noise_scale: f64,
    pub steps_per_level: usize,
    pub count: usize,
    pub dump_continuous: bool,
    /// Empty means `<out>/checkpoint.txt`.
    pub checkpoint: String,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = SamplerConfig::default();
        Self {
            step_size: s.step_size,
            noise_scale: s.noise_scale,
            steps_per_level: s.steps_per_level,
            count: 64,
            dump_continuous: false,
            checkpoint: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Empty means `<out>/samples`.
    pub samples: String,
    /// Empty means the test split written by `train`, `<out>/data` split `test`.
    pub reference: String,
    pub bandwidth: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples: String::new(),
            reference: String::new(),
            bandwidth: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    pub variant: String,
    pub budget: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_size: usize,
    pub nodes: usize,
    pub edge_prob: f64,
}

impl Default for TaskSection {
    fn default() -> Self {
        let t = TaskConfig::default();
        Self {
            name: t.task.name().into(),
            variant: t.variant.name().into(),
            budget: t.budget,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            test_size: t.test_size,
            nodes: t.nodes,
            edge_prob: t.edge_prob,
        }
    }
}

/// One-line descriptions shown by `print-defaults`.
const KEY_DOCS: &[(&str, &str)] = &[
    ("seed", "master seed for data, initialization, batching and sampling"),
    ("out", "output directory"),
    ("workers", "worker threads, 0 = all cores"),
    ("dataset.kind", "community_small | ego_small | lobster | erdos_renyi | edge_list_dir"),
    ("dataset.count", "graphs in total, before the test/validation/train split"),
    ("dataset.test_count", "held-out graphs used as the evaluation reference"),
    ("dataset.n_min", "smallest node count"),
    ("dataset.n_max", "largest node count"),
    ("dataset.p", "edge probability (erdos_renyi)"),
    ("dataset.weighted", "U[0,1] edge weights (erdos_renyi)"),
    ("dataset.p_intra", "edge probability inside a community"),
    ("dataset.inter_fraction", "cross edges per node count, rounded up"),
    ("dataset.p_leaf", "leaf attachment probability (lobster)"),
    ("dataset.host_nodes", "synthetic host size for ego graphs"),
    ("dataset.host_attach", "edges per new host node"),
    ("dataset.path", "edge-list host (ego_small) or graph directory (edge_list_dir)"),
    ("model.layers", "stacked EDP-GNN layers"),
    ("model.mp_steps", "message-passing steps per layer"),
    ("model.channels", "channels of every learned adjacency"),
    ("model.hidden", "node feature and MLP hidden width"),
    ("model.learnable_adj", "edge MLPs produce new adjacencies"),
    ("model.multi_channel", "more than one adjacency channel"),
    ("noise.sigmas", "noise levels, largest first"),
    ("train.learning_rate", "Adam step size"),
    ("train.batch_size", "graphs per step, all of one node count"),
    ("train.steps", "optimizer steps"),
    ("train.validation_size", "graphs held out for checkpoint selection"),
    ("train.eval_every", "steps between validation passes"),
    ("sampler.step_size", "step size at the smallest noise level"),
    ("sampler.noise_scale", "multiplier on the injected noise"),
    ("sampler.steps_per_level", "Langevin steps per noise level"),
    ("sampler.count", "graphs to sample"),
    ("sampler.dump_continuous", "also write pre-quantization matrices"),
    ("sampler.checkpoint", "checkpoint to sample from, empty = <out>/checkpoint.txt"),
    ("eval.samples", "sample directory, empty = <out>/samples"),
    ("eval.reference", "reference directory, empty = test split of <out>/data"),
    ("eval.bandwidth", "Gaussian kernel bandwidth"),
    ("task.name", "sp_unweighted | sp_weighted | mst_weighted"),
    ("task.variant", "edpgnn | gin_baseline"),
    ("task.budget", "optimizer steps"),
    ("task.batch_size", "instances per step"),
    ("task.learning_rate", "Adam step size"),
    ("task.test_size", "held-out instances"),
    ("task.nodes", "nodes per E-R instance"),
    ("task.edge_prob", "E-R edge probability"),
];

fn doc(key: &str) -> Option<&'static str> {
    KEY_DOCS.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| anyhow!("{}", e.message()))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn render(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The rendered config with a comment after every key.
    pub fn render_documented(&self) -> String {
        let mut section = String::new();
        let mut out = String::new();
        for line in self.render().lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = format!("{name}.");
            }
            let key = line.split(" = ").next().unwrap_or("");
            match doc(&format!("{section}{key}")).filter(|_| line.contains(" = ")) {
                Some(d) => out.push_str(&format!("{line}  # {d}\n")),
                None => out.push_str(&format!("{line}\n")),
            }
        }
        out
    }

    /// Applies `section.key=value`; the value is read as TOML, falling back
    /// to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects section.key=value, got {assignment:?}"))?;
        let path = path.trim();
        let value = parse_value(raw.trim());
        let mut table = toml::Table::try_from(&*self)?;
        let keys: Vec<&str> = path.split('.').collect();
        let (last, parents) = keys.split_last().expect("split yields one element");
        let mut cursor = &mut table;
        for k in parents {
            cursor = cursor
                .get_mut(*k)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| anyhow!("unknown config section {k:?}, expected one of {}", sections()))?;
        }
        cursor.insert(last.to_string(), value);
        *self = Self::deserialize(table).map_err(|e| anyhow!("--set {path}: {}", e.message()))?;
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let config = ModelConfig {
            layers: m.layers,
            mp_steps: m.mp_steps,
            channels: m.channels,
            hidden: m.hidden,
            node_features: 0,
            levels: self.noise.sigmas.len(),
            learnable_adj: m.learnable_adj,
            multi_channel: m.multi_channel,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.noise.sigmas.clone())?)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let config = TrainConfig {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            steps: t.steps,
            seed: self.seed,
            validation_size: t.validation_size,
            eval_every: t.eval_every,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let config = SamplerConfig {
            step_size: s.step_size,
            noise_scale: s.noise_scale,
            steps_per_level: s.steps_per_level,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let d = &self.dataset;
        let kind = match d.kind.as_str() {
            "community_small" => DatasetKind::CommunitySmall {
                n_min: d.n_min,
                n_max: d.n_max,
                p_intra: d.p_intra,
                inter_fraction: d.inter_fraction,
            },
            "erdos_renyi" => DatasetKind::ErdosRenyi {
                n_min: d.n_min,
                n_max: d.n_max,
                p: d.p,
                weighted: d.weighted,
            },
            "ego_small" => DatasetKind::EgoSmall {
                host: if d.path.is_empty() {
                    EgoHost::PreferentialAttachment {
                        nodes: d.host_nodes,
                        attach: d.host_attach,
                    }
                } else {
                    EgoHost::EdgeList(PathBuf::from(&d.path))
                },
                n_min: d.n_min,
                n_max: d.n_max,
            },
            "lobster" => DatasetKind::Lobster {
                n_min: d.n_min,
                n_max: d.n_max,
                p_leaf: d.p_leaf,
            },
            "edge_list_dir" => {
                if d.path.is_empty() {
                    bail!("dataset.path is required for edge_list_dir");
                }
                DatasetKind::EdgeListDir {
                    path: PathBuf::from(&d.path),
                }
            }
            other => bail!(
                "unknown dataset.kind {other:?}, expected one of community_small, ego_small, lobster, erdos_renyi, edge_list_dir"
            ),
        };
        let spec = DatasetSpec {
            kind,
            count: d.count,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn task_config(&self) -> Result<TaskConfig> {
        let t = &self.task;
        Ok(TaskConfig {
            task: t.name.parse::<TaskKind>()?,
            variant: t.variant.parse::<Variant>()?,
            budget: t.budget,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            test_size: t.test_size,
            nodes: t.nodes,
            edge_prob: t.edge_prob,
            seed: self.seed,
        })
    }
}

fn sections() -> String {
    let table = toml::Table::try_from(RunConfig::default()).expect("config serializes");
    let names: Vec<_> = table.iter().filter(|(_, v)| v.is_table()).map(|(k, _)| k.as_str()).collect();
    names.join(", ")
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.seed = 17;
        c.model.learnable_adj = false;
        c.noise.sigmas = vec![0.5, 0.25];
        assert_eq!(RunConfig::parse(&c.render()).unwrap(), c);
        assert_eq!(RunConfig::parse(&c.render_documented()).unwrap(), c);
    }

    #[test]
    fn unknown_key_lists_valid_ones() {
        let err = RunConfig::parse("[train]\nlr = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("lr") && err.contains("learning_rate"), "{err}");
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.set("train.steps=12").unwrap();
        c.set("model.multi_channel = false").unwrap();
        c.set("noise.sigmas=[1.0, 0.1]").unwrap();
        c.set("task.name=mst_weighted").unwrap();
        c.set("seed=9").unwrap();
        assert_eq!(c.train.steps, 12);
        assert!(!c.model.multi_channel);
        assert_eq!(c.noise.sigmas, vec![1.0, 0.1]);
        assert_eq!(c.task.name, "mst_weighted");
        assert_eq!(c.seed, 9);
        assert!(c.set("train.nope=1").unwrap_err().to_string().contains("batch_size"));
        assert!(c.set("bogus.steps=1").is_err());
        assert!(c.set("train.steps=many").is_err());
    }

    #[test]
    fn defaults_follow_the_library() {
        let c = RunConfig::default();
        assert_eq!(c.model_config().unwrap().levels, 6);
        assert_eq!(c.schedule().unwrap(), NoiseSchedule::default());
        assert!(c.dataset_spec().is_ok());
        assert!(c.task_config().is_ok());
        assert!(c.render_documented().contains("# Adam step size"));
    }
}
