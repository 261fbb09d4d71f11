//! The edgewise dense prediction GNN used as a noise-conditional score network.
//!
//! Adjacencies are kept channels-last on the tape: a `C×n×n` stack is stored
//! as an `[n*n, C]` matrix so that per-edge MLPs are plain matrix products.
//! The public helpers that return adjacency stacks use the channel-first
//! `[C, n, n]` layout.

mod checkpoint;
mod config;
mod probe;

pub use checkpoint::{format_checkpoint, parse_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_HEADER};
pub use config::ModelConfig;
pub use probe::{line_integral, path_integrand, trapezoid, invariance_probe, LineIntegralProbe};

use rand::Rng;

use crate::autograd::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::GraphInstance;
use crate::scalar::Real;

/// A function from a (noisy) adjacency matrix and noise level to a score matrix.
pub trait ScoreModel: Sync {
    fn levels(&self) -> usize;

    fn score(&self, adj: &Tensor<f64>, level: usize) -> Result<Tensor<f64>>;
}

#[derive(Clone, Debug)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
    gain: ParamId,
    shift: ParamId,
}

#[derive(Clone, Debug)]
struct Mlp {
    linears: Vec<Linear>,
    activate_last: bool,
}

#[derive(Clone, Debug)]
struct MpStep {
    mlp: Mlp,
    eps: ParamId,
}

#[derive(Clone, Debug)]
struct Layer {
    steps: Vec<MpStep>,
    /// Edge MLP producing the next adjacency; absent when adjacencies are fixed.
    edge: Option<Mlp>,
}

/// Score network with all of its parameters.
#[derive(Clone, Debug)]
pub struct EdpGnn<R> {
    config: ModelConfig,
    params: ParamStore<R>,
    layers: Vec<Layer>,
    /// Edge readout used when adjacencies are not learnable.
    readout: Option<Mlp>,
    output: Mlp,
}

struct Builder<'a, R, G: ?Sized> {
    store: &'a mut ParamStore<R>,
    rng: &'a mut G,
    levels: usize,
}

impl<R: Real, G: Rng + ?Sized> Builder<'_, R, G> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = Tensor::from_fn(&[fan_in, fan_out], |_| R::of(self.rng.random_range(-bound..bound)));
        Linear {
            weight: self.store.add(format!("{name}.weight"), weight),
            bias: self.store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
            gain: self
                .store
                .add(format!("{name}.gain"), Tensor::full(&[self.levels, fan_out], R::one())),
            shift: self
                .store
                .add(format!("{name}.shift"), Tensor::zeros(&[self.levels, fan_out])),
        }
    }

    fn mlp(&mut self, name: &str, widths: &[usize], activate_last: bool) -> Mlp {
        let linears = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| self.linear(&format!("{name}.lin{l}"), w[0], w[1]))
            .collect();
        Mlp {
            linears,
            activate_last,
        }
    }
}

impl<R: Real> EdpGnn<R> {
    /// Builds the network with Glorot-uniform weights, zero biases, unit
    /// gains, zero shifts and zero GIN ε.
    pub fn new<G: Rng + ?Sized>(config: ModelConfig, rng: &mut G) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng,
            levels: config.levels,
        };
        let h = config.hidden;
        let mut layers = Vec::with_capacity(config.layers);
        let mut channels = config.input_channels();
        let mut features = config.input_features();
        for k in 0..config.layers {
            let mut steps = Vec::with_capacity(config.mp_steps);
            let mut width = features;
            for m in 0..config.mp_steps {
                let mlp = b.mlp(&format!("layer{k}.mp{m}"), &[channels * width, h, h], true);
                let eps = b.store.add(format!("layer{k}.mp{m}.eps"), Tensor::zeros(&[1]));
                steps.push(MpStep { mlp, eps });
                width = h;
            }
            features = config.output_features();
            let edge = config.learnable_adj.then(|| {
                let out = config.learned_channels();
                let mlp = b.mlp(&format!("layer{k}.edge"), &[channels + 2 * features, h, out], false);
                channels = out;
                mlp
            });
            layers.push(Layer { steps, edge });
        }
        let (readout, total_channels) = if config.learnable_adj {
            let total = config.input_channels() + config.layers * config.learned_channels();
            (None, total)
        } else {
            let out = config.learned_channels();
            let mlp = b.mlp("readout.edge", &[channels + 2 * features, h, out], false);
            (Some(mlp), config.input_channels() + out)
        };
        let output = b.mlp("final", &[total_channels, h, 1], false);
        Ok(Self {
            config,
            params: store,
            layers,
            readout,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    /// Scalars shared across all noise levels.
    pub fn shared_param_count(&self) -> usize {
        self.params.num_scalars() - self.config.levels * self.conditioning_params_per_level()
    }

    /// Gain and shift scalars owned by one noise level.
    pub fn conditioning_params_per_level(&self) -> usize {
        self.params
            .ids()
            .filter(|&id| {
                let name = self.params.name(id);
                name.ends_with(".gain") || name.ends_with(".shift")
            })
            .map(|id| self.params.value(id).shape()[1])
            .sum()
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.config.levels {
            return Err(Error::invalid(format!(
                "noise level {level} out of range for {} levels",
                self.config.levels
            )));
        }
        Ok(())
    }

    fn linear(&self, tape: &mut Tape<R>, lin: &Linear, x: Var, level: usize) -> Result<Var> {
        let w = tape.param(&self.params, lin.weight);
        let h = tape.matmul(x, w)?;
        self.condition(tape, lin, h, level)
    }

    /// `(h + b) ∘ gain[level] + shift[level]`, applied as `h ∘ gain + (b ∘ gain + shift)`.
    fn condition(&self, tape: &mut Tape<R>, lin: &Linear, h: Var, level: usize) -> Result<Var> {
        let b = tape.param(&self.params, lin.bias);
        let gains = tape.param(&self.params, lin.gain);
        let gain = tape.select_row(gains, level)?;
        let shifts = tape.param(&self.params, lin.shift);
        let shift = tape.select_row(shifts, level)?;
        let scaled_bias = tape.mul(b, gain)?;
        let offset = tape.add(scaled_bias, shift)?;
        tape.scale_shift_rows(h, gain, offset)
    }

    fn mlp_from(&self, tape: &mut Tape<R>, mlp: &Mlp, mut h: Var, start: usize, level: usize) -> Result<Var> {
        let last = mlp.linears.len() - 1;
        for (l, lin) in mlp.linears.iter().enumerate().skip(start) {
            if l > start {
                h = self.linear(tape, lin, h, level)?;
            }
            if l < last || mlp.activate_last {
                h = tape.elu(h);
            }
        }
        Ok(h)
    }

    fn mlp(&self, tape: &mut Tape<R>, mlp: &Mlp, x: Var, level: usize) -> Result<Var> {
        let h = self.linear(tape, &mlp.linears[0], x, level)?;
        self.mlp_from(tape, mlp, h, 0, level)
    }

    /// Per-pair MLP over `CONCAT(adj[·,i,j], z_i, z_j)` squashed by a sigmoid and
    /// symmetrized as `X + Xᵀ`, so every learned entry lies in `(0, 2)`.
    ///
    /// The first linear map is split by input block so the `n²` pair inputs
    /// are never materialized.
    fn edge_mlp(&self, tape: &mut Tape<R>, mlp: &Mlp, adj: Var, z: Var, level: usize) -> Result<Var> {
        let c = tape.shape(adj)[1];
        let f = tape.shape(z)[1];
        let first = &mlp.linears[0];
        let w = tape.param(&self.params, first.weight);
        if tape.shape(w)[0] != c + 2 * f {
            return Err(Error::shape("edge_mlp", tape.shape(w), &[c, f]));
        }
        let w_adj = tape.slice_rows(w, 0, c)?;
        let w_src = tape.slice_rows(w, c, c + f)?;
        let w_dst = tape.slice_rows(w, c + f, c + 2 * f)?;
        let from_adj = tape.matmul(adj, w_adj)?;
        let src = tape.matmul(z, w_src)?;
        let dst = tape.matmul(z, w_dst)?;
        let from_nodes = tape.pair_sum(src, dst)?;
        let h = tape.add(from_adj, from_nodes)?;
        let h = self.condition(tape, first, h, level)?;
        let h = self.mlp_from(tape, mlp, h, 0, level)?;
        let h = tape.sigmoid(h);
        tape.sym_pairs(h)
    }

    /// Multi-channel GNN of layer `layer`: `M` GIN steps over every channel,
    /// returning the concatenation of all step outputs, `[n, M·hidden]`.
    pub fn multi_channel_gnn(&self, tape: &mut Tape<R>, layer: usize, adj: Var, z: Var, level: usize) -> Result<Var> {
        self.check_level(level)?;
        let spec = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::invalid(format!("layer {layer} out of range")))?;
        // neighbor sums are averaged over the node count so feature scale
        // does not compound with graph size and depth
        let n = tape.shape(z)[0];
        let adj = tape.scale(adj, R::of(1.0 / n as f64));
        let mut z = z;
        let mut outputs = Vec::with_capacity(spec.steps.len());
        for step in &spec.steps {
            let eps = tape.param(&self.params, step.eps);
            let message = tape.channel_message(adj, z, eps)?;
            z = self.mlp(tape, &step.mlp, message, level)?;
            outputs.push(z);
        }
        tape.concat(&outputs, 1)
    }

    /// One EDP-GNN layer: node inference followed by edge inference.
    ///
    /// Returns the next channels-last adjacency and the new node features.
    /// With fixed adjacencies the input adjacency is passed through.
    pub fn edp_layer(&self, tape: &mut Tape<R>, layer: usize, adj: Var, z: Var, level: usize) -> Result<(Var, Var)> {
        let z = self.multi_channel_gnn(tape, layer, adj, z, level)?;
        let adj = match &self.layers[layer].edge {
            Some(edge) => self.edge_mlp(tape, edge, adj, z, level)?,
            None => adj,
        };
        Ok((adj, z))
    }

    /// Places the preprocessed input on the tape as constants.
    pub fn input(&self, tape: &mut Tape<R>, adj: &Tensor<f64>, features: Option<&Tensor<f64>>) -> Result<(Var, Var)> {
        let (channels, z0) = preprocess(adj, features, self.config.multi_channel)?;
        if z0.cols() != self.config.input_features() {
            return Err(Error::shape("node_features", &[self.config.input_features()], z0.shape()));
        }
        let a = tape.constant(channels_last(&channels).cast());
        let z = tape.constant(z0.cast());
        Ok((a, z))
    }

    /// Full forward pass; returns the `[n, n]` score (or edge logit) matrix.
    pub fn forward(&self, tape: &mut Tape<R>, adj: &Tensor<f64>, features: Option<&Tensor<f64>>, level: usize) -> Result<Var> {
        Ok(self.forward_all(tape, adj, features, level)?.0)
    }

    /// Forward pass that also returns every channels-last adjacency, input first.
    fn forward_all(
        &self,
        tape: &mut Tape<R>,
        adj: &Tensor<f64>,
        features: Option<&Tensor<f64>>,
        level: usize,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_level(level)?;
        let n = adj.rows();
        let (a0, z0) = self.input(tape, adj, features)?;
        let mut adjs = vec![a0];
        let (mut a, mut z) = (a0, z0);
        for k in 0..self.layers.len() {
            (a, z) = self.edp_layer(tape, k, a, z, level)?;
            if self.config.learnable_adj {
                adjs.push(a);
            }
        }
        if let Some(readout) = &self.readout {
            let edges = self.edge_mlp(tape, readout, a0, z, level)?;
            adjs.push(edges);
        }
        let stacked = tape.concat(&adjs, 1)?;
        let out = self.mlp(tape, &self.output, stacked, level)?;
        let mask = tape.constant(Tensor::matrix(n * n, 1, |p, _| if p / n == p % n { R::zero() } else { R::one() }));
        let out = tape.mul(out, mask)?;
        let out = tape.reshape(out, &[n, n])?;
        Ok((out, adjs))
    }

    /// Score without gradient tracking, in double precision.
    pub fn score_matrix(&self, adj: &Tensor<f64>, features: Option<&Tensor<f64>>, level: usize) -> Result<Tensor<f64>> {
        let mut tape = Tape::no_grad();
        let out = self.forward(&mut tape, adj, features, level)?;
        Ok(tape.value(out).cast())
    }

    /// Every intermediate adjacency as a channel-first `[C, n, n]` tensor,
    /// input channels first.
    pub fn channel_stack(&self, adj: &Tensor<f64>, level: usize) -> Result<Vec<Tensor<f64>>> {
        let mut tape = Tape::no_grad();
        let (_, adjs) = self.forward_all(&mut tape, adj, None, level)?;
        let n = adj.rows();
        Ok(adjs
            .into_iter()
            .map(|a| {
                let t = tape.value(a);
                let c = t.cols();
                Tensor::from_fn(&[c, n, n], |k| t.data()[(k % (n * n)) * c + k / (n * n)].as_f64())
            })
            .collect())
    }
}

impl<R: Real> ScoreModel for EdpGnn<R> {
    fn levels(&self) -> usize {
        self.config.levels
    }

    fn score(&self, adj: &Tensor<f64>, level: usize) -> Result<Tensor<f64>> {
        self.score_matrix(adj, None, level)
    }
}

/// Exact score of a point mass at `clean` smoothed by each noise level:
/// `s(X, σ_i) = −(X − clean)/σ_i²`, zero on the diagonal.
#[derive(Clone, Debug)]
pub struct PointMassScore {
    clean: Tensor<f64>,
    sigmas: Vec<f64>,
}

impl PointMassScore {
    pub fn new(clean: Tensor<f64>, sigmas: Vec<f64>) -> Self {
        Self { clean, sigmas }
    }
}

impl ScoreModel for PointMassScore {
    fn levels(&self) -> usize {
        self.sigmas.len()
    }

    fn score(&self, adj: &Tensor<f64>, level: usize) -> Result<Tensor<f64>> {
        let sigma = *self
            .sigmas
            .get(level)
            .ok_or_else(|| Error::invalid(format!("noise level {level} out of range")))?;
        crate::graph::oracle_score_matrix(&self.clean, adj, sigma)
    }
}

/// Input layer: channel-first adjacency stack `[C, n, n]` (the adjacency and,
/// for multi-channel models, its complement `1 − adj` with zero diagonal)
/// and initial node features `CONCAT(features, weighted degree)`.
pub fn preprocess(adj: &Tensor<f64>, features: Option<&Tensor<f64>>, multi_channel: bool) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let shape = adj.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::invalid(format!("adjacency must be square, got {shape:?}")));
    }
    let n = shape[0];
    let c = if multi_channel { 2 } else { 1 };
    let channels = Tensor::from_fn(&[c, n, n], |k| {
        let (ch, i, j) = (k / (n * n), (k / n) % n, k % n);
        match (ch, i == j) {
            (_, true) => 0.0,
            (0, false) => adj.at(i, j),
            _ => 1.0 - adj.at(i, j),
        }
    });
    let f0 = features.map_or(0, |x| x.cols());
    if let Some(x) = features {
        if x.rows() != n {
            return Err(Error::shape("node_features", &[n, f0], x.shape()));
        }
    }
    let z0 = Tensor::matrix(n, f0 + 1, |i, f| {
        if f < f0 {
            features.expect("f0 > 0 implies features").at(i, f)
        } else {
            (0..n).map(|j| adj.at(i, j)).sum()
        }
    });
    Ok((channels, z0))
}

/// Input preprocessing for a graph, using its stored node features.
pub fn preprocess_input(g: &GraphInstance, multi_channel: bool) -> Result<(Tensor<f64>, Tensor<f64>)> {
    preprocess(g.adj(), g.node_features(), multi_channel)
}

/// `[C, n, n]` to `[n*n, C]`.
pub fn channels_last(stack: &Tensor<f64>) -> Tensor<f64> {
    let (c, n) = (stack.shape()[0], stack.shape()[1]);
    Tensor::matrix(n * n, c, |p, ch| stack.data()[ch * n * n + p])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            layers: 2,
            mp_steps: 2,
            channels: 3,
            hidden: 5,
            levels: 3,
            ..ModelConfig::default()
        }
    }

    fn path3() -> GraphInstance {
        GraphInstance::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    #[test]
    fn preprocess_path() {
        let (a, z) = preprocess_input(&path3(), true).unwrap();
        assert_eq!(z.data(), &[1.0, 2.0, 1.0]);
        assert_eq!(a.shape(), &[2, 3, 3]);
        for i in 0..3 {
            for j in 0..3 {
                let sum = a.data()[i * 3 + j] + a.data()[9 + i * 3 + j];
                assert_eq!(sum, if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn preprocess_edgeless_complement() {
        let (a, _) = preprocess_input(&GraphInstance::empty(3), true).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.data()[9 + i * 3 + j], if i == j { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn preprocess_concats_features_first() {
        let g = path3().with_features(Tensor::full(&[3, 2], 7.0)).unwrap();
        let (_, z) = preprocess_input(&g, false).unwrap();
        assert_eq!(z.shape(), &[3, 3]);
        assert_eq!(&z.data()[..3], &[7.0, 7.0, 1.0]);
    }

    #[test]
    fn output_width_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = EdpGnn::<f64>::new(small_config(), &mut rng).unwrap();
        let g = crate::graph::erdos_renyi(6, 0.5, false, &mut rng);
        let mut tape = Tape::no_grad();
        let (a, z) = model.input(&mut tape, g.adj(), None).unwrap();
        let zout = model.multi_channel_gnn(&mut tape, 0, a, z, 1).unwrap();
        assert_eq!(tape.shape(zout), &[6, 2 * 5]);
        let (a1, _) = model.edp_layer(&mut tape, 0, a, z, 1).unwrap();
        assert_eq!(tape.shape(a1), &[36, 3]);
        let s = model.score(g.adj(), 2).unwrap();
        for i in 0..6 {
            assert_eq!(s.at(i, i), 0.0);
            for j in 0..6 {
                assert_eq!(s.at(i, j), s.at(j, i));
            }
        }
        assert!(model.score(g.adj(), 3).is_err());
    }

    #[test]
    fn edgeless_single_channel_message_is_self_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = ModelConfig {
            multi_channel: false,
            ..small_config()
        };
        let model = EdpGnn::<f64>::new(cfg, &mut rng).unwrap();
        let mut tape = Tape::no_grad();
        let adj = tape.constant(Tensor::zeros(&[16, 1]));
        let z = tape.constant(Tensor::from_fn(&[4, 1], |k| k as f64));
        let eps = tape.constant(Tensor::scalar(0.0));
        let m = tape.channel_message(adj, z, eps).unwrap();
        assert_eq!(tape.value(m).data(), &[0.0, 1.0, 2.0, 3.0]);
        let _ = model;
    }

    #[test]
    fn parameter_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = small_config();
        let model = EdpGnn::<f64>::new(cfg.clone(), &mut rng).unwrap();
        // enumerate by hand: every linear is (in, out) with weight, bias and L-level gain/shift
        let h = cfg.hidden;
        let mut linears = Vec::new();
        let mut channels = 2;
        let mut features = 1;
        for _ in 0..cfg.layers {
            let mut width = features;
            for _ in 0..cfg.mp_steps {
                linears.push((channels * width, h));
                linears.push((h, h));
                width = h;
            }
            features = cfg.mp_steps * h;
            linears.push((channels + 2 * features, h));
            linears.push((h, cfg.channels));
            channels = cfg.channels;
        }
        linears.push((2 + cfg.layers * cfg.channels, h));
        linears.push((h, 1));
        let shared: usize = linears.iter().map(|(i, o)| i * o + o).sum::<usize>() + cfg.layers * cfg.mp_steps;
        let per_level: usize = linears.iter().map(|(_, o)| 2 * o).sum();
        assert_eq!(model.shared_param_count(), shared);
        assert_eq!(model.conditioning_params_per_level(), per_level);
        assert_eq!(model.params().num_scalars(), shared + cfg.levels * per_level);
    }

    #[test]
    fn channel_stack_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = EdpGnn::<f64>::new(small_config(), &mut rng).unwrap();
        let g = crate::graph::erdos_renyi(5, 0.5, false, &mut rng);
        let stack = model.channel_stack(g.adj(), 0).unwrap();
        assert_eq!(stack.len(), 3);
        assert_eq!(stack[0].shape(), &[2, 5, 5]);
        assert_eq!(&stack[0].data()[..25], g.adj().data());
        assert_eq!(stack[1].shape(), &[3, 5, 5]);
    }
}
