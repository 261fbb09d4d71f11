//! Denoising score matching objective and training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::check::{central_difference, GradReport, FD_STEP};
use crate::autograd::{Adam, AdamConfig, ParamGrads, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::{perturb, GraphInstance, NoiseSchedule};
use crate::model::{EdpGnn, ScoreModel};
use crate::scalar::Real;

/// Weighted total and the unweighted per-level terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub terms: Vec<f64>,
}

impl LossBreakdown {
    /// `total = Σ_i σ_i²·term_i / (2L)`.
    pub fn from_terms(terms: Vec<f64>, schedule: &NoiseSchedule) -> Self {
        let l = schedule.len() as f64;
        let total = terms
            .iter()
            .zip(schedule.sigmas())
            .map(|(t, s)| s * s * t)
            .sum::<f64>()
            / (2.0 * l);
        Self { total, terms }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.iter().all(|t| t.is_finite())
    }
}

/// One noisy copy of each batch graph at each level, indexed `[graph][level]`.
///
/// Draws are made graph by graph, levels in schedule order.
pub fn draw_perturbations<G: Rng + ?Sized>(
    batch: &[GraphInstance],
    schedule: &NoiseSchedule,
    rng: &mut G,
) -> Result<Vec<Vec<GraphInstance>>> {
    batch
        .iter()
        .map(|g| schedule.sigmas().iter().map(|&s| perturb(g, s, rng)).collect())
        .collect()
}

/// `Σ_{i<j} (s[i,j] − target[i,j])²` with `target = −(Ã − A)/σ²`.
pub fn upper_sq_error(score: &Tensor<f64>, clean: &Tensor<f64>, noisy: &Tensor<f64>, sigma: f64) -> f64 {
    let n = clean.rows();
    let inv = 1.0 / (sigma * sigma);
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let target = -(noisy.at(i, j) - clean.at(i, j)) * inv;
            let d = score.at(i, j) - target;
            total += d * d;
        }
    }
    total
}

fn check_batch(batch: &[GraphInstance], noisy: &[Vec<GraphInstance>], schedule: &NoiseSchedule) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if noisy.len() != batch.len() || noisy.iter().any(|v| v.len() != schedule.len()) {
        return Err(Error::invalid("perturbations do not match batch and schedule"));
    }
    Ok(())
}

/// Loss for given perturbations, evaluating any score model.
pub fn dsm_loss_for<S: ScoreModel + ?Sized>(
    model: &S,
    batch: &[GraphInstance],
    noisy: &[Vec<GraphInstance>],
    schedule: &NoiseSchedule,
) -> Result<LossBreakdown> {
    check_batch(batch, noisy, schedule)?;
    let jobs: Vec<(usize, usize)> = (0..batch.len())
        .flat_map(|g| (0..schedule.len()).map(move |l| (g, l)))
        .collect();
    let values = jobs
        .par_iter()
        .map(|&(g, l)| {
            let x = noisy[g][l].adj();
            let s = model.score(x, l)?;
            Ok(upper_sq_error(&s, batch[g].adj(), x, schedule.sigma(l)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut terms = vec![0.0; schedule.len()];
    for (&(_, l), v) in jobs.iter().zip(&values) {
        terms[l] += v / batch.len() as f64;
    }
    Ok(LossBreakdown::from_terms(terms, schedule))
}

/// Draws fresh perturbations and evaluates the loss.
pub fn dsm_loss<S: ScoreModel + ?Sized, G: Rng + ?Sized>(
    model: &S,
    batch: &[GraphInstance],
    schedule: &NoiseSchedule,
    rng: &mut G,
) -> Result<LossBreakdown> {
    let noisy = draw_perturbations(batch, schedule, rng)?;
    dsm_loss_for(model, batch, &noisy, schedule)
}

/// Loss and its parameter gradients for given perturbations.
///
/// Each (graph, level) pair is differentiated on its own tape; the per-tape
/// gradients are summed in a fixed order, so the result does not depend on
/// thread scheduling.
pub fn dsm_loss_and_grads<R: Real>(
    model: &EdpGnn<R>,
    batch: &[GraphInstance],
    noisy: &[Vec<GraphInstance>],
    schedule: &NoiseSchedule,
) -> Result<(LossBreakdown, Vec<ParamGrads<R>>)> {
    check_batch(batch, noisy, schedule)?;
    let levels = schedule.len();
    let jobs: Vec<(usize, usize)> = (0..batch.len())
        .flat_map(|g| (0..levels).map(move |l| (g, l)))
        .collect();
    let weight_scale = 1.0 / (2.0 * levels as f64 * batch.len() as f64);
    let results = jobs
        .par_iter()
        .map(|&(g, l)| {
            let sigma = schedule.sigma(l);
            let clean = &batch[g];
            let x = noisy[g][l].adj();
            let mut tape = Tape::new();
            let s = model.forward(&mut tape, x, clean.node_features(), l)?;
            let inv = 1.0 / (sigma * sigma);
            let target = Tensor::matrix(x.rows(), x.cols(), |i, j| R::of(-(x.at(i, j) - clean.adj().at(i, j)) * inv));
            let target = tape.constant(target);
            let diff = tape.sub(s, target)?;
            // full symmetric norm counts every pair twice; the diagonal is zero
            let sq = tape.sq_frobenius(diff);
            let term = tape.scale(sq, R::of(0.5));
            tape.backward_seeded(term, R::of(sigma * sigma * weight_scale))?;
            Ok((tape.value(term).data()[0].as_f64(), tape.param_grads()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut terms = vec![0.0; levels];
    let mut grads = Vec::with_capacity(results.len());
    for (&(_, l), (v, g)) in jobs.iter().zip(results) {
        terms[l] += v / batch.len() as f64;
        grads.push(g);
    }
    Ok((LossBreakdown::from_terms(terms, schedule), grads))
}

/// Compares [`dsm_loss_and_grads`] against central differences of the loss
/// over every parameter scalar.
pub fn gradient_check(
    model: &EdpGnn<f64>,
    batch: &[GraphInstance],
    noisy: &[Vec<GraphInstance>],
    schedule: &NoiseSchedule,
    rel: f64,
    abs: f64,
) -> Result<GradReport> {
    let (_, grads) = dsm_loss_and_grads(model, batch, noisy, schedule)?;
    let mut probe = model.clone();
    let store = probe.params_mut();
    store.zero_grad();
    for g in &grads {
        store.accumulate(g);
    }
    let analytic = store.flatten_grads();
    store.zero_grad();
    let flat = store.flatten();
    let mut failed = None;
    let numeric = central_difference(
        |x| {
            let loss = probe
                .params_mut()
                .assign_flat(x)
                .and_then(|_| dsm_loss_for(&probe, batch, noisy, schedule));
            match loss {
                Ok(l) => l.total,
                Err(e) => {
                    failed = Some(e);
                    f64::NAN
                }
            }
        },
        &flat,
        FD_STEP,
    );
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(GradReport::compare(&analytic, &numeric, rel, abs))
}

/// Loss on `val_set` with perturbations drawn from a stream seeded by `seed`,
/// so repeated calls see the same noise.
pub fn validate<S: ScoreModel + ?Sized>(
    model: &S,
    val_set: &[GraphInstance],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LossBreakdown> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dsm_loss(model, val_set, schedule, &mut rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub validation_size: usize,
    /// Validation is run every this many steps and after the last step.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            steps: 5000,
            seed: 0,
            validation_size: 32,
            eval_every: 250,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("train.learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.validation_size == 0 {
            return Err(Error::invalid(
                "train.batch_size, train.eval_every and train.validation_size must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub split: Split,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<R> {
    /// Parameters with the lowest validation loss seen.
    pub model: EdpGnn<R>,
    pub curve: Vec<CurvePoint>,
    pub best_step: usize,
    pub best_validation: Option<LossBreakdown>,
}

/// Minibatches of equal node count, in a seeded random order.
struct Batches {
    groups: Vec<Vec<usize>>,
    batch_size: usize,
    queue: Vec<Vec<usize>>,
}

impl Batches {
    fn new(graphs: &[GraphInstance], batch_size: usize) -> Self {
        let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, g) in graphs.iter().enumerate() {
            by_size.entry(g.n()).or_default().push(i);
        }
        Self {
            groups: by_size.into_values().collect(),
            batch_size,
            queue: Vec::new(),
        }
    }

    fn next<G: Rng + ?Sized>(&mut self, rng: &mut G) -> Vec<usize> {
        if self.queue.is_empty() {
            for group in &self.groups {
                let mut g = group.clone();
                g.shuffle(rng);
                self.queue.extend(g.chunks(self.batch_size).map(<[usize]>::to_vec));
            }
            self.queue.shuffle(rng);
        }
        self.queue.pop().expect("groups are nonempty")
    }
}

/// Adam on the DSM loss; returns the best-validation parameters.
///
/// `on_point` is called for every recorded curve point.
pub fn train<R: Real>(
    model: EdpGnn<R>,
    train_set: &[GraphInstance],
    val_set: &[GraphInstance],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut on_point: impl FnMut(&CurvePoint),
) -> Result<TrainOutcome<R>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if schedule.len() != model.config().levels {
        return Err(Error::invalid(format!(
            "schedule has {} levels, model has {}",
            schedule.len(),
            model.config().levels
        )));
    }
    let mut model = model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let val_seed = config.seed ^ 0x5eed_0f_7a11;
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut batches = Batches::new(train_set, config.batch_size);
    let mut curve = Vec::new();
    let mut best: Option<(LossBreakdown, Vec<R>, usize)> = None;
    let mut record = |curve: &mut Vec<CurvePoint>, point: CurvePoint| {
        on_point(&point);
        curve.push(point);
    };
    for step in 1..=config.steps {
        let idx = batches.next(&mut rng);
        let batch: Vec<GraphInstance> = idx.iter().map(|&i| train_set[i].clone()).collect();
        let noisy = draw_perturbations(&batch, schedule, &mut rng)?;
        let (loss, grads) = dsm_loss_and_grads(&model, &batch, &noisy, schedule)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at step {step}: total {} terms {:?}",
                loss.total, loss.terms
            )));
        }
        let store = model.params_mut();
        store.zero_grad();
        for g in &grads {
            store.accumulate(g);
        }
        adam.step(store)?;
        store.zero_grad();
        record(
            &mut curve,
            CurvePoint {
                step,
                split: Split::Train,
                loss,
            },
        );
        if !val_set.is_empty() && (step % config.eval_every == 0 || step == config.steps) {
            let val = validate(&model, val_set, schedule, val_seed)?;
            if best.as_ref().is_none_or(|(b, _, _)| val.total < b.total) {
                best = Some((val.clone(), model.params().flatten(), step));
            }
            record(
                &mut curve,
                CurvePoint {
                    step,
                    split: Split::Validation,
                    loss: val,
                },
            );
        }
    }
    let (best_validation, best_step) = match best {
        Some((val, flat, step)) => {
            model.params_mut().assign_flat(&flat)?;
            (Some(val), step)
        }
        None => (None, config.steps),
    };
    Ok(TrainOutcome {
        model,
        curve,
        best_step,
        best_validation,
    })
}

pub fn curve_csv_header(levels: usize) -> String {
    let mut out = String::from("step,split,total");
    for l in 1..=levels {
        let _ = write!(out, ",term_{l}");
    }
    out
}

pub fn curve_csv_row(point: &CurvePoint) -> String {
    let mut out = format!("{},{},{:.10e}", point.step, point.split.as_str(), point.loss.total);
    for t in &point.loss.terms {
        let _ = write!(out, ",{t:.10e}");
    }
    out
}

pub fn format_curve_csv(curve: &[CurvePoint], levels: usize) -> String {
    let mut out = curve_csv_header(levels);
    out.push('\n');
    for p in curve {
        out.push_str(&curve_csv_row(p));
        out.push('\n');
    }
    out
}
