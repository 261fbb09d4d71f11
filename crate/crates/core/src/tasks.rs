//! Supervised edge labeling: shortest paths and maximum spanning trees.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{Adam, AdamConfig, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{erdos_renyi, GraphInstance};
use crate::model::{EdpGnn, ModelConfig};
use crate::scalar::Real;

const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    ShortestPathUnweighted,
    ShortestPathWeighted,
    MaxSpanningTree,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::ShortestPathUnweighted,
        TaskKind::ShortestPathWeighted,
        TaskKind::MaxSpanningTree,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ShortestPathUnweighted => "sp_unweighted",
            TaskKind::ShortestPathWeighted => "sp_weighted",
            TaskKind::MaxSpanningTree => "mst_weighted",
        }
    }

    pub fn weighted(self) -> bool {
        !matches!(self, TaskKind::ShortestPathUnweighted)
    }

    /// Width of the extra node features the task supplies.
    pub fn node_features(self) -> usize {
        match self {
            TaskKind::MaxSpanningTree => 0,
            _ => 1,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|t| t.name()).collect();
            Error::invalid(format!("unknown task {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    EdpGnn,
    /// Fixed single-channel adjacency: a plain GIN with an edge readout.
    GinBaseline,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::EdpGnn, Variant::GinBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EdpGnn => "edpgnn",
            Variant::GinBaseline => "gin_baseline",
        }
    }

    pub fn model_config(self, task: TaskKind) -> ModelConfig {
        let base = ModelConfig {
            levels: 1,
            node_features: task.node_features(),
            ..ModelConfig::default()
        };
        match self {
            Variant::EdpGnn => base,
            Variant::GinBaseline => ModelConfig {
                learnable_adj: false,
                multi_channel: false,
                ..base
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
            Error::invalid(format!("unknown variant {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

/// A graph with binary labels on a subset of its edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeLabeling {
    /// Carries the endpoint indicator as node features for path tasks.
    pub graph: GraphInstance,
    /// Symmetric 0/1 matrix, nonzero only on edges.
    pub labels: Tensor<f64>,
    pub endpoints: Option<(usize, usize)>,
}

impl EdgeLabeling {
    pub fn labeled_edges(&self) -> Vec<(usize, usize)> {
        self.graph
            .edges()
            .filter(|&(i, j, _)| self.labels.at(i, j) == 1.0)
            .map(|(i, j, _)| (i, j))
            .collect()
    }

    pub fn labeled_weight(&self) -> f64 {
        self.graph
            .edges()
            .filter(|&(i, j, _)| self.labels.at(i, j) == 1.0)
            .map(|(_, _, w)| w)
            .sum()
    }

    /// Indicator of the upper-triangle edges, the entries the loss sees.
    pub fn edge_mask(&self) -> Tensor<f64> {
        let n = self.graph.n();
        Tensor::matrix(n, n, |i, j| if i < j && self.graph.has_edge(i, j) { 1.0 } else { 0.0 })
    }
}

fn labels_from(n: usize, edges: &[(usize, usize)]) -> Tensor<f64> {
    let mut labels = Tensor::zeros(&[n, n]);
    for &(u, v) in edges {
        labels.set(u, v, 1.0);
        labels.set(v, u, 1.0);
    }
    labels
}

/// Single-source distances, `O(n²)` Dijkstra.
pub fn dijkstra(g: &GraphInstance, source: usize) -> Vec<f64> {
    let n = g.n();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    for _ in 0..n {
        let Some(u) = (0..n)
            .filter(|&v| !done[v] && dist[v].is_finite())
            .min_by(|&a, &b| dist[a].total_cmp(&dist[b]))
        else {
            break;
        };
        done[u] = true;
        for v in g.neighbors(u) {
            let alt = dist[u] + g.weight(u, v);
            if alt < dist[v] {
                dist[v] = alt;
            }
        }
    }
    dist
}

/// Labels one shortest `s`–`t` path, chosen uniformly among all shortest paths.
pub fn label_shortest_path<G: Rng + ?Sized>(g: &GraphInstance, s: usize, t: usize, rng: &mut G) -> Result<EdgeLabeling> {
    let n = g.n();
    if s >= n || t >= n || s == t {
        return Err(Error::invalid(format!("endpoints ({s}, {t}) invalid for {n} nodes")));
    }
    if g.edges().any(|(_, _, w)| w < 0.0) {
        return Err(Error::invalid("shortest paths need nonnegative weights"));
    }
    let dist = dijkstra(g, s);
    if !dist[t].is_finite() {
        return Err(Error::Unreachable(format!("node {t} unreachable from {s}")));
    }
    let tight = |u: usize, v: usize| {
        let d = dist[u] + g.weight(u, v);
        (d - dist[v]).abs() <= TIE_TOLERANCE * dist[v].max(1.0)
    };
    let mut order: Vec<usize> = (0..n).filter(|&v| dist[v].is_finite()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
    let mut paths = vec![0.0; n];
    paths[s] = 1.0;
    for &v in &order {
        if v != s {
            paths[v] = g.neighbors(v).filter(|&u| tight(u, v)).map(|u| paths[u]).sum();
        }
    }
    let mut edges = Vec::new();
    let mut v = t;
    while v != s {
        let preds: Vec<usize> = g.neighbors(v).filter(|&u| tight(u, v) && paths[u] > 0.0).collect();
        let mut pick = rng.random::<f64>() * paths[v];
        let mut chosen = *preds.last().expect("reachable node has a tight predecessor");
        for &u in &preds {
            if pick < paths[u] {
                chosen = u;
                break;
            }
            pick -= paths[u];
        }
        edges.push((chosen, v));
        v = chosen;
    }
    let mut features = Tensor::zeros(&[n, 1]);
    features.set(s, 0, 1.0);
    features.set(t, 0, 1.0);
    Ok(EdgeLabeling {
        graph: g.clone().with_features(features)?,
        labels: labels_from(n, &edges),
        endpoints: Some((s, t)),
    })
}

/// Labels a maximum spanning tree (Kruskal on descending weights).
pub fn label_mst(g: &GraphInstance) -> Result<EdgeLabeling> {
    let n = g.n();
    let mut edges: Vec<(usize, usize, f64)> = g.edges().collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    for (u, v, _) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru != rv {
            parent[ru] = rv;
            tree.push((u, v));
        }
    }
    if tree.len() + 1 != n {
        return Err(Error::Unreachable("graph is disconnected".into()));
    }
    Ok(EdgeLabeling {
        graph: g.clone(),
        labels: labels_from(n, &tree),
        endpoints: None,
    })
}

/// Draws E-R graphs until the task's labeling exists.
pub fn generate_instance<G: Rng + ?Sized>(task: TaskKind, n: usize, p: f64, rng: &mut G) -> Result<EdgeLabeling> {
    for _ in 0..10_000 {
        let g = erdos_renyi(n, p, task.weighted(), rng);
        let labeled = match task {
            TaskKind::MaxSpanningTree => label_mst(&g),
            _ => {
                let s = rng.random_range(0..n);
                let t = (s + rng.random_range(1..n)) % n;
                label_shortest_path(&g, s, t, rng)
            }
        };
        match labeled {
            Ok(l) => return Ok(l),
            Err(Error::Unreachable(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Unreachable(format!("no labelable E-R({n}, {p}) graph in 10000 draws")))
}

/// Edge logits of the model for one instance.
pub fn edge_logits<R: Real>(model: &EdpGnn<R>, labeled: &EdgeLabeling) -> Result<Tensor<f64>> {
    model.score_matrix(labeled.graph.adj(), labeled.graph.node_features(), 0)
}

/// Mean binary cross-entropy of the edge logits over existing edges.
pub fn edge_ce_loss<R: Real>(model: &EdpGnn<R>, labeled: &EdgeLabeling) -> Result<f64> {
    let mut tape = Tape::no_grad();
    let logits = model.forward(&mut tape, labeled.graph.adj(), labeled.graph.node_features(), 0)?;
    let loss = tape.bce_with_logits(logits, &labeled.labels.cast(), &labeled.edge_mask().cast())?;
    Ok(tape.value(loss).data()[0].as_f64())
}

/// Whether thresholded logits reproduce every edge label.
pub fn exact_match(logits: &Tensor<f64>, labeled: &EdgeLabeling) -> bool {
    labeled
        .graph
        .edges()
        .all(|(i, j, _)| (logits.at(i, j) > 0.0) == (labeled.labels.at(i, j) == 1.0))
}

/// Fraction of instances whose predicted edge labels are all correct.
pub fn exact_match_accuracy<F>(predict: F, test_set: &[EdgeLabeling]) -> Result<f64>
where
    F: Fn(&EdgeLabeling) -> Result<Tensor<f64>> + Sync,
{
    if test_set.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let hits = test_set
        .par_iter()
        .map(|l| Ok(exact_match(&predict(l)?, l) as usize))
        .collect::<Result<Vec<usize>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / test_set.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskConfig {
    pub task: TaskKind,
    pub variant: Variant,
    /// Optimizer steps.
    pub budget: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_size: usize,
    pub nodes: usize,
    pub edge_prob: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::ShortestPathWeighted,
            variant: Variant::EdpGnn,
            budget: 5000,
            batch_size: 32,
            learning_rate: 1e-3,
            test_size: 256,
            nodes: 12,
            edge_prob: 0.3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskReport {
    pub task: TaskKind,
    pub variant: Variant,
    pub budget: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub final_loss: f64,
    pub wall_time_s: f64,
}

impl TaskReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task = {}", self.task);
        let _ = writeln!(out, "variant = {}", self.variant);
        let _ = writeln!(out, "budget = {}", self.budget);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "accuracy = {:.6}", self.accuracy);
        let _ = writeln!(out, "final_loss = {:.6e}", self.final_loss);
        let _ = writeln!(out, "wall_time_s = {:.3}", self.wall_time_s);
        out
    }
}

/// The fixed held-out set for a seed.
pub fn test_set(config: &TaskConfig) -> Result<Vec<EdgeLabeling>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    (0..config.test_size)
        .map(|_| generate_instance(config.task, config.nodes, config.edge_prob, &mut rng))
        .collect()
}

/// Trains on freshly generated instances and reports held-out accuracy.
///
/// `on_step` receives the step index and the mean batch loss.
pub fn run_task_experiment(config: &TaskConfig, mut on_step: impl FnMut(usize, f64)) -> Result<(TaskReport, EdpGnn<f64>)> {
    if config.batch_size == 0 || config.test_size == 0 || config.nodes < 2 {
        return Err(Error::invalid("task batch_size, test_size must be positive and nodes >= 2"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = EdpGnn::<f64>::new(config.variant.model_config(config.task), &mut rng)?;
    let held_out = test_set(config)?;
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut final_loss = f64::NAN;
    for step in 1..=config.budget {
        let batch = (0..config.batch_size)
            .map(|_| generate_instance(config.task, config.nodes, config.edge_prob, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let weight = 1.0 / batch.len() as f64;
        let results = batch
            .par_iter()
            .map(|l| {
                let mut tape = Tape::new();
                let logits = model.forward(&mut tape, l.graph.adj(), l.graph.node_features(), 0)?;
                let loss = tape.bce_with_logits(logits, &l.labels, &l.edge_mask())?;
                tape.backward_seeded(loss, weight)?;
                Ok((tape.value(loss).data()[0], tape.param_grads()))
            })
            .collect::<Result<Vec<_>>>()?;
        let store = model.params_mut();
        store.zero_grad();
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l * weight;
            store.accumulate(g);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("task loss at step {step}")));
        }
        adam.step(store)?;
        store.zero_grad();
        final_loss = loss;
        on_step(step, loss);
    }
    let accuracy = exact_match_accuracy(|l| edge_logits(&model, l), &held_out)?;
    let report = TaskReport {
        task: config.task,
        variant: config.variant,
        budget: config.budget,
        seed: config.seed,
        accuracy,
        final_loss,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, model))
}
