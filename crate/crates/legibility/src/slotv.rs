//! SLOT-V: per-goal trajectory scoring through the value network, dummy-goal
//! padding and masking, softmax cross-entropy training against oracle target
//! distributions, evaluation, and learning-curve tracing.
//!
//! The per-goal logit is the mean of the value function over the trajectory's
//! control points. Training runs the whole mini-batch as one stacked GEMM:
//! one row per (control point, real goal) pair.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{azip, Array1, Array2};
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{substream, EnvironmentsFile, G_MAX, N_POINTS};
use crate::geom::{Point3, Trajectory};
use crate::nn::{LayerSpec, Mlp, MlpJson, RmsProp, Scalar};
use crate::oracles::{argmax, scores_to_distribution, GoalScores, MetricKind};
use crate::{Error, Result};

const TAG_SHUFFLE: u64 = 0x51;

/// The SLOT-V observer model: a value network plus trajectory/goal geometry.
#[derive(Debug, Clone)]
pub struct ObserverModel<T: Scalar> {
    pub mlp: Mlp<T>,
    pub spec: LayerSpec,
    pub n_points: usize,
    pub g_max: usize,
}

impl<T: Scalar> ObserverModel<T> {
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Self {
        let mlp = Mlp::init(&spec, rng);
        ObserverModel { mlp, spec, n_points: N_POINTS, g_max: G_MAX }
    }
}

/// Goals padded to `g_max` slots. Real goals occupy the leading slots in
/// environment order; dummy slots hold the zero point and are masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedGoalSet {
    pub positions: Vec<Point3>,
    pub mask: Vec<bool>,
}

pub fn pad_goals(goals: &[Point3], g_max: usize) -> Result<PaddedGoalSet> {
    if goals.is_empty() {
        return Err(Error::EmptyGoalSet);
    }
    if goals.len() > g_max {
        return Err(Error::TooManyGoals(goals.len(), g_max));
    }
    let mut positions = goals.to_vec();
    let mut mask = vec![true; goals.len()];
    positions.resize(g_max, Point3::new(0.0, 0.0, 0.0));
    mask.resize(g_max, false);
    Ok(PaddedGoalSet { positions, mask })
}

/// Goal-relative input rows for one trajectory against a list of goals:
/// row `i * n_points + k` holds `q_k - g_i`.
fn relative_rows<T: Scalar>(points: &[Point3], goals: &[Point3]) -> Array2<T> {
    let n = points.len();
    let mut rows = Array2::zeros((n * goals.len(), 3));
    for (i, g) in goals.iter().enumerate() {
        for (k, q) in points.iter().enumerate() {
            let d = q.sub(g);
            let mut row = rows.row_mut(i * n + k);
            row[0] = T::from_f64(d[0]).unwrap();
            row[1] = T::from_f64(d[1]).unwrap();
            row[2] = T::from_f64(d[2]).unwrap();
        }
    }
    rows
}

/// Mean of per-row values over each consecutive segment of `n` rows.
fn segment_means<T: Scalar>(values: &Array1<T>, n: usize) -> Vec<f64> {
    values
        .as_slice()
        .expect("forward output is contiguous")
        .chunks(n)
        .map(|chunk| {
            let mut acc = T::zero();
            for v in chunk {
                acc = acc + *v;
            }
            acc.to_f64().unwrap() / n as f64
        })
        .collect()
}

/// Per-goal logits for every slot (dummies included), plus the mask.
pub fn score_goals<T: Scalar>(
    model: &ObserverModel<T>,
    traj: &Trajectory,
    padded: &PaddedGoalSet,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if traj.len() != model.n_points {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} points, model expects {}",
            traj.len(),
            model.n_points
        )));
    }
    let rows = relative_rows::<T>(traj.points(), &padded.positions);
    let (values, _) = model.mlp.forward_batch(rows.view());
    Ok((segment_means(&values, model.n_points), padded.mask.clone()))
}

/// Numerically stabilized softmax over the unmasked entries; masked slots get
/// probability exactly 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Predicted goal distribution for a trajectory: masked softmax over the
/// per-goal logits. Dummy slots receive probability exactly 0.
pub fn predict_distribution<T: Scalar>(
    model: &ObserverModel<T>,
    traj: &Trajectory,
    padded: &PaddedGoalSet,
) -> Result<Vec<f64>> {
    let (logits, mask) = score_goals(model, traj, padded)?;
    Ok(masked_softmax(&logits, &mask))
}

// --- labeled data -----------------------------------------------------------

/// One record of a labeled dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub env_id: String,
    pub target_index: usize,
    pub points: Vec<Point3>,
    pub labels: HashMap<String, Vec<f64>>,
}

pub fn load_labeled_dataset(path: &Path) -> Result<Vec<LabeledRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// A training/evaluation example with precomputed network inputs:
/// `rows` holds `n_points` goal-relative rows per real goal.
pub struct TrainExample<T: Scalar> {
    pub rows: Array2<T>,
    pub n_goals: usize,
    /// Raw oracle scores for the selected metric, one per real goal.
    pub scores: Vec<f64>,
    /// Target distribution derived from the scores.
    pub target: Vec<f64>,
    pub oracle_argmax: usize,
}

/// Resolve labeled records against their environments and precompute the
/// network input rows for one metric.
pub fn prepare_examples<T: Scalar>(
    records: &[LabeledRecord],
    environments: &EnvironmentsFile,
    metric: MetricKind,
) -> Result<Vec<TrainExample<T>>> {
    records
        .iter()
        .map(|rec| {
            let env = environments.get(&rec.env_id)?;
            let scores = rec
                .labels
                .get(metric.name())
                .ok_or_else(|| Error::MissingLabels(metric.name().to_string()))?
                .clone();
            if scores.len() != env.goals.len() {
                return Err(Error::ShapeMismatch(format!(
                    "label length {} vs {} goals",
                    scores.len(),
                    env.goals.len()
                )));
            }
            let target = scores_to_distribution(&GoalScores { metric, scores: scores.clone() })
                .probabilities;
            Ok(TrainExample {
                rows: relative_rows(&rec.points, &env.goals),
                n_goals: env.goals.len(),
                oracle_argmax: argmax(&scores),
                scores,
                target,
            })
        })
        .collect()
}

// --- training ----------------------------------------------------------------

/// SLOT-V training configuration. Defaults follow the tuned values: RMSprop
/// at lr 0.005, rho 0.9, momentum 0, batch size 32, 15 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotVTrainConfig {
    pub lr: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub metric: MetricKind,
    pub seed: u64,
}

impl SlotVTrainConfig {
    pub fn new(metric: MetricKind, seed: u64) -> Self {
        SlotVTrainConfig {
            lr: 0.005,
            rho: 0.9,
            momentum: 0.0,
            eps: 1e-7,
            batch_size: 32,
            epochs: 15,
            metric,
            seed,
        }
    }
}

/// Run one optimizer step over a batch of example indices. Returns the mean
/// cross-entropy loss of the batch.
fn train_batch<T: Scalar>(
    model: &mut ObserverModel<T>,
    examples: &[TrainExample<T>],
    batch: &[usize],
    optimizer: &mut RmsProp<T>,
) -> Result<f64> {
    let n = model.n_points;
    let total_rows: usize = batch.iter().map(|&i| examples[i].rows.nrows()).sum();
    let mut rows = Array2::<T>::zeros((total_rows, 3));
    let mut offset = 0;
    for &i in batch {
        let ex = &examples[i];
        rows.slice_mut(ndarray::s![offset..offset + ex.rows.nrows(), ..])
            .assign(&ex.rows);
        offset += ex.rows.nrows();
    }

    let (values, cache) = model.mlp.forward_batch(rows.view());
    let values = values.as_slice().expect("contiguous");

    let mut upstream = Array1::<T>::zeros(total_rows);
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0f64;
    let mut offset = 0;
    for &i in batch {
        let ex = &examples[i];
        let logits: Vec<f64> = (0..ex.n_goals)
            .map(|gi| {
                let mut acc = T::zero();
                for v in &values[offset + gi * n..offset + (gi + 1) * n] {
                    acc = acc + *v;
                }
                acc.to_f64().unwrap() / n as f64
            })
            .collect();
        let probs = masked_softmax(&logits, &vec![true; ex.n_goals]);
        for (p, t) in probs.iter().zip(&ex.target) {
            if *t > 0.0 {
                loss -= t * p.max(1e-300).ln();
            }
        }
        for gi in 0..ex.n_goals {
            let g = (probs[gi] - ex.target[gi]) / n as f64 * inv_batch;
            let g = T::from_f64(g).unwrap();
            for r in offset + gi * n..offset + (gi + 1) * n {
                upstream[r] = g;
            }
        }
        offset += ex.rows.nrows();
    }
    loss *= inv_batch;

    let grads = model.mlp.backward_batch(&cache, &upstream)?;
    optimizer.step(&mut model.mlp, &grads)?;
    Ok(loss)
}

/// Train the observer model with mini-batch RMSprop on the cross-entropy
/// between predicted and target goal distributions. Returns per-epoch mean
/// losses. Fully deterministic given the config seed.
pub fn train<T: Scalar>(
    model: &mut ObserverModel<T>,
    examples: &[TrainExample<T>],
    config: &SlotVTrainConfig,
) -> Result<Vec<f64>> {
    let mut optimizer = RmsProp::new(
        &model.mlp,
        config.lr,
        config.rho,
        config.momentum,
        config.eps,
    );
    let mut history = Vec::with_capacity(config.epochs);
    // Tail iterate averaging: with a constant learning rate the optimizer
    // settles into a stationary distribution around the optimum instead of
    // converging to it, so the final iterate carries mini-batch sampling
    // noise. Returning the uniform average of the iterates visited during
    // the last ~60% of epochs removes most of that noise without touching
    // the update rule itself.
    let tail_start = config.epochs.saturating_sub((3 * config.epochs).div_ceil(5));
    let mut avg = model.mlp.clone();
    for w in avg.weights.iter_mut() {
        w.fill(T::zero());
    }
    for b in avg.biases.iter_mut() {
        b.fill(T::zero());
    }
    let mut n_averaged = 0usize;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut substream(config.seed, TAG_SHUFFLE, epoch as u64));
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            let loss = train_batch(model, examples, batch, &mut optimizer)?;
            if !loss.is_finite() {
                return Err(Error::DivergedTraining { epoch, update: n_batches });
            }
            epoch_loss += loss;
            n_batches += 1;
            if epoch >= tail_start {
                for (a, w) in avg.weights.iter_mut().zip(&model.mlp.weights) {
                    azip!((a in a, &w in w) *a = *a + w);
                }
                for (a, b) in avg.biases.iter_mut().zip(&model.mlp.biases) {
                    azip!((a in a, &b in b) *a = *a + b);
                }
                n_averaged += 1;
            }
        }
        history.push(epoch_loss / n_batches.max(1) as f64);
    }
    if n_averaged > 0 {
        let inv = T::one() / T::from_f64(n_averaged as f64).unwrap();
        for (a, w) in avg.weights.iter_mut().zip(model.mlp.weights.iter_mut()) {
            a.mapv_inplace(|v| v * inv);
            w.assign(a);
        }
        for (a, b) in avg.biases.iter_mut().zip(model.mlp.biases.iter_mut()) {
            a.mapv_inplace(|v| v * inv);
            b.assign(a);
        }
    }
    Ok(history)
}

// --- evaluation ---------------------------------------------------------------

/// Accuracy report for one dataset split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub accuracy: f64,
    pub n: usize,
    /// goal count -> (correct, total)
    pub per_goal_count: BTreeMap<usize, (usize, usize)>,
}

impl EvalReport {
    pub fn csv_row(&self, metric: &str) -> String {
        format!("{},{},{},{}", self.dataset, metric, self.accuracy, self.n)
    }
}

/// Argmax-agreement accuracy over prepared examples, evaluated in chunks so
/// the forward pass stays a handful of large GEMMs.
fn eval_examples<T: Scalar>(
    mlp: &Mlp<T>,
    examples: &[TrainExample<T>],
    n_points: usize,
    dataset: &str,
) -> EvalReport {
    let mut correct = 0usize;
    let mut per_goal_count: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for chunk in examples.chunks(128) {
        let total_rows: usize = chunk.iter().map(|ex| ex.rows.nrows()).sum();
        let mut rows = Array2::<T>::zeros((total_rows, 3));
        let mut offset = 0;
        for ex in chunk {
            rows.slice_mut(ndarray::s![offset..offset + ex.rows.nrows(), ..])
                .assign(&ex.rows);
            offset += ex.rows.nrows();
        }
        let (values, _) = mlp.forward_batch(rows.view());
        let values = values.as_slice().expect("contiguous");
        let mut offset = 0;
        for ex in chunk {
            let logits: Vec<f64> = (0..ex.n_goals)
                .map(|gi| {
                    let mut acc = T::zero();
                    for v in &values[offset + gi * n_points..offset + (gi + 1) * n_points] {
                        acc = acc + *v;
                    }
                    acc.to_f64().unwrap() / n_points as f64
                })
                .collect();
            let hit = argmax(&logits) == ex.oracle_argmax;
            if hit {
                correct += 1;
            }
            let entry = per_goal_count.entry(ex.n_goals).or_insert((0, 0));
            entry.0 += hit as usize;
            entry.1 += 1;
            offset += ex.rows.nrows();
        }
    }
    EvalReport {
        dataset: dataset.to_string(),
        accuracy: correct as f64 / examples.len().max(1) as f64,
        n: examples.len(),
        per_goal_count,
    }
}

/// Accuracy of the observer model: fraction of examples where the argmax of
/// the predicted distribution equals the oracle's argmax.
pub fn evaluate<T: Scalar>(
    model: &ObserverModel<T>,
    examples: &[TrainExample<T>],
    dataset: &str,
) -> EvalReport {
    eval_examples(&model.mlp, examples, model.n_points, dataset)
}

/// One checkpoint of a sample-efficiency trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub updates: usize,
    pub examples_seen: usize,
    pub val_accuracy: f64,
}

/// Train exactly one epoch, recording validation accuracy every
/// `eval_every` optimizer updates.
pub fn learning_curve<T: Scalar>(
    model: &mut ObserverModel<T>,
    train_examples: &[TrainExample<T>],
    val_examples: &[TrainExample<T>],
    config: &SlotVTrainConfig,
    eval_every: usize,
) -> Result<Vec<CurvePoint>> {
    let mut optimizer = RmsProp::new(
        &model.mlp,
        config.lr,
        config.rho,
        config.momentum,
        config.eps,
    );
    let mut order: Vec<usize> = (0..train_examples.len()).collect();
    order.shuffle(&mut substream(config.seed, TAG_SHUFFLE, 0));
    let mut curve = Vec::new();
    let mut updates = 0usize;
    for batch in order.chunks(config.batch_size) {
        let loss = train_batch(model, train_examples, batch, &mut optimizer)?;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { epoch: 0, update: updates });
        }
        updates += 1;
        if updates % eval_every == 0 {
            let report = evaluate(model, val_examples, "validation");
            curve.push(CurvePoint {
                updates,
                examples_seen: updates * config.batch_size,
                val_accuracy: report.accuracy,
            });
        }
    }
    Ok(curve)
}

// --- model files ----------------------------------------------------------------

/// On-disk trained model: the network plus framework/metric metadata. The
/// format is shared by SLOT-V and T-REX; `framework` tells them apart.
#[derive(Serialize, Deserialize)]
pub struct ModelFile {
    pub framework: String,
    pub metric: String,
    pub g_max: usize,
    pub n_points: usize,
    pub train_seed: u64,
    pub network: MlpJson,
}

impl ModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelFile> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

pub fn save_observer<T: Scalar>(
    model: &ObserverModel<T>,
    metric: MetricKind,
    train_seed: u64,
    path: &Path,
) -> Result<()> {
    ModelFile {
        framework: "slotv".into(),
        metric: metric.name().into(),
        g_max: model.g_max,
        n_points: model.n_points,
        train_seed,
        network: model.mlp.to_json(),
    }
    .save(path)
}

pub fn load_observer<T: Scalar>(path: &Path) -> Result<(ObserverModel<T>, ModelFile)> {
    let file = ModelFile::load(path)?;
    let mlp = Mlp::from_json(&file.network)?;
    let spec = LayerSpec::new(file.network.widths.clone());
    Ok((
        ObserverModel { mlp, spec, n_points: file.n_points, g_max: file.g_max },
        file,
    ))
}
