//! Annealed Langevin dynamics over symmetric adjacency matrices.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::graph::io::{read_manifest, write_graph_dir, write_manifest, ManifestEntry};
use crate::graph::{quantize_matrix, symmetric_normal, GraphInstance, NodeCountSampler, NoiseSchedule};
use crate::model::ScoreModel;

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Base step size; the smallest noise level uses exactly this value.
    pub step_size: f64,
    /// Multiplier on the injected noise.
    pub noise_scale: f64,
    pub steps_per_level: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            noise_scale: 0.7,
            steps_per_level: 1000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::invalid("sampler.step_size must be positive"));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::invalid("sampler.noise_scale must be nonnegative"));
        }
        if self.steps_per_level == 0 {
            return Err(Error::invalid("sampler.steps_per_level must be positive"));
        }
        Ok(())
    }
}

/// `α_i = ε·σ_i²/σ_L²` for every level.
pub fn step_sizes(step_size: f64, schedule: &NoiseSchedule) -> Vec<f64> {
    let last = schedule.smallest();
    schedule
        .sigmas()
        .iter()
        .map(|s| {
            let r = s / last;
            step_size * r * r
        })
        .collect()
}

/// Symmetric matrix with `|N(0, 1)|` upper triangle and zero diagonal.
pub fn folded_normal_init<G: Rng + ?Sized>(n: usize, rng: &mut G) -> Tensor<f64> {
    let mut x = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.sample::<f64, _>(StandardNormal).abs();
            x.set(i, j, v);
            x.set(j, i, v);
        }
    }
    x
}

fn is_symmetric_zero_diag(x: &Tensor<f64>) -> bool {
    let n = x.rows();
    (0..n).all(|i| x.at(i, i) == 0.0 && (i + 1..n).all(|j| x.at(i, j) == x.at(j, i)))
}

/// `T` Langevin updates `x ← x + α/2·s(x, σ_i) + ε_s·√α·z̃` at one level.
pub fn langevin_level<S: ScoreModel + ?Sized, G: Rng + ?Sized>(
    model: &S,
    mut state: Tensor<f64>,
    level: usize,
    alpha: f64,
    config: &SamplerConfig,
    rng: &mut G,
) -> Result<Tensor<f64>> {
    let n = state.rows();
    let noise = config.noise_scale * alpha.sqrt();
    for step in 0..config.steps_per_level {
        let score = model.score(&state, level)?;
        let z = symmetric_normal(n, rng);
        for ((x, &s), &zv) in state.data_mut().iter_mut().zip(score.data()).zip(z.data()) {
            *x += 0.5 * alpha * s + noise * zv;
        }
        if !state.all_finite() {
            return Err(Error::NonFinite(format!("sampler state at level {level}, step {step}")));
        }
        debug_assert!(is_symmetric_zero_diag(&state));
    }
    Ok(state)
}

/// Runs every level from the largest noise down and returns the continuous state.
pub fn sample_continuous<S: ScoreModel + ?Sized, G: Rng + ?Sized>(
    model: &S,
    n: usize,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    rng: &mut G,
) -> Result<Tensor<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!("sampling needs at least 2 nodes, got {n}")));
    }
    if model.levels() != schedule.len() {
        return Err(Error::invalid(format!(
            "model has {} levels, schedule has {}",
            model.levels(),
            schedule.len()
        )));
    }
    config.validate()?;
    let mut state = folded_normal_init(n, rng);
    for (level, &alpha) in step_sizes(config.step_size, schedule).iter().enumerate() {
        state = langevin_level(model, state, level, alpha, config, rng)?;
    }
    Ok(state)
}

pub fn sample_graph<S: ScoreModel + ?Sized, G: Rng + ?Sized>(
    model: &S,
    n: usize,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    rng: &mut G,
) -> Result<GraphInstance> {
    Ok(quantize_matrix(&sample_continuous(model, n, schedule, config, rng)?))
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub graph: GraphInstance,
    /// State before quantization.
    pub continuous: Tensor<f64>,
}

/// `count` samples with node counts drawn from `sizes`.
///
/// Sample `k` uses its own stream of the seeded generator, so results do not
/// depend on how the work is scheduled.
pub fn sample_set<S: ScoreModel + ?Sized>(
    model: &S,
    count: usize,
    sizes: &NodeCountSampler,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(k as u64);
            let n = sizes.sample(&mut rng);
            let continuous = sample_continuous(model, n, schedule, config, &mut rng)?;
            Ok(Sample {
                graph: quantize_matrix(&continuous),
                continuous,
            })
        })
        .collect()
}

fn format_dense(m: &Tensor<f64>) -> String {
    let n = m.rows();
    let mut out = format!("{n}\n");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", m.at(i, j))).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Manifest split of the sampled graphs.
pub const SAMPLE_SPLIT: &str = "sample";
/// Manifest split of the pre-quantization dumps.
pub const CONTINUOUS_SPLIT: &str = "continuous";

/// Writes samples as an edge-list directory; with `dump_continuous` the
/// pre-quantization matrices go alongside as `sample_<k>.dense`.
pub fn write_samples(dir: impl AsRef<Path>, samples: &[Sample], dump_continuous: bool) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let graphs: Vec<GraphInstance> = samples.iter().map(|s| s.graph.clone()).collect();
    let mut written = write_graph_dir(dir, &[(SAMPLE_SPLIT, &graphs)])?;
    if dump_continuous {
        let mut entries = read_manifest(dir)?;
        for (k, s) in samples.iter().enumerate() {
            let file = format!("{SAMPLE_SPLIT}_{k:05}.dense");
            let path = dir.join(&file);
            fs::write(&path, format_dense(&s.continuous)).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            entries.push(ManifestEntry {
                split: CONTINUOUS_SPLIT.to_string(),
                file,
            });
        }
        write_manifest(dir, &entries)?;
    }
    Ok(written)
}
