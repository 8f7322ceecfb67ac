//! Preference-ranking baseline adapted from trajectory-ranked reward
//! extrapolation (T-REX): a reward network trained on pairwise preferences
//! between labeled trajectories.
//!
//! The accumulated reward of a trajectory toward a goal is the *sum* of the
//! per-point reward (not the mean, unlike the observer model's logit). A pair
//! is preferred according to the oracle score at each trajectory's drawn
//! goal; the ranking likelihood is a sigmoid of the reward difference.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{substream, G_MAX, N_POINTS};
use crate::geom::{Point3, Trajectory};
use crate::nn::{Adam, LayerSpec, Mlp, Scalar};
use crate::oracles::{argmax, MetricKind};
use crate::slotv::{CurvePoint, EvalReport, ModelFile, TrainExample};
use crate::{Error, Result};

const TAG_PAIRS: u64 = 0x52;

/// The reward network plus trajectory/goal geometry.
#[derive(Debug, Clone)]
pub struct RewardModel<T: Scalar> {
    pub mlp: Mlp<T>,
    pub spec: LayerSpec,
    pub n_points: usize,
    pub g_max: usize,
}

impl<T: Scalar> RewardModel<T> {
    pub fn init<R: Rng>(spec: LayerSpec, rng: &mut R) -> Self {
        let mlp = Mlp::init(&spec, rng);
        RewardModel { mlp, spec, n_points: N_POINTS, g_max: G_MAX }
    }
}

/// Accumulated reward of a trajectory toward one goal: the sum of the reward
/// network over all control points, goal-relative.
pub fn accumulated_reward<T: Scalar>(
    model: &RewardModel<T>,
    traj: &Trajectory,
    goal: &Point3,
) -> Result<f64> {
    if traj.len() != model.n_points {
        return Err(Error::ShapeMismatch(format!(
            "trajectory has {} points, model expects {}",
            traj.len(),
            model.n_points
        )));
    }
    let mut rows = Array2::<T>::zeros((traj.len(), 3));
    for (k, q) in traj.points().iter().enumerate() {
        let d = q.sub(goal);
        for j in 0..3 {
            rows[[k, j]] = T::from_f64(d[j]).unwrap();
        }
    }
    let (values, _) = model.mlp.forward_batch(rows.view());
    let mut acc = T::zero();
    for v in values.iter() {
        acc = acc + *v;
    }
    Ok(acc.to_f64().unwrap())
}

/// One preference pair: indices of two distinct trajectories, the goal drawn
/// for each, and whether the second is preferred under the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferencePair {
    pub first: usize,
    pub second: usize,
    pub goal_first: usize,
    pub goal_second: usize,
    /// true if the second trajectory has the higher oracle score.
    pub second_preferred: bool,
}

/// Draw preference pairs without replacement: trajectories are shuffled and
/// consumed two at a time, each paired with a uniformly drawn goal from its
/// own environment. Exact score ties are skipped (both trajectories
/// discarded). At most `n_pairs` pairs are returned if given.
pub fn build_pairs<T: Scalar, R: Rng>(
    examples: &[TrainExample<T>],
    n_pairs: Option<usize>,
    rng: &mut R,
) -> Result<Vec<PreferencePair>> {
    if examples.len() < 2 {
        return Err(Error::InsufficientData);
    }
    let limit = n_pairs.unwrap_or(usize::MAX);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    let mut it = order.into_iter();
    while pairs.len() < limit {
        let (Some(first), Some(second)) = (it.next(), it.next()) else {
            break;
        };
        let goal_first = rng.random_range(0..examples[first].n_goals);
        let goal_second = rng.random_range(0..examples[second].n_goals);
        let s1 = examples[first].scores[goal_first];
        let s2 = examples[second].scores[goal_second];
        if s1 == s2 {
            continue; // tie: discard both trajectories
        }
        pairs.push(PreferencePair {
            first,
            second,
            goal_first,
            goal_second,
            second_preferred: s2 > s1,
        });
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData);
    }
    Ok(pairs)
}

/// Probability that the second trajectory of a pair is preferred:
/// `sigmoid(R2 - R1)`, computed without overflow.
pub fn pair_likelihood(r1: f64, r2: f64) -> f64 {
    let d = r2 - r1;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Stable binary cross-entropy of `sigmoid(d)` against label `y`:
/// `max(d, 0) - y*d + ln(1 + exp(-|d|))`.
fn bce_with_logit(d: f64, y: f64) -> f64 {
    d.max(0.0) - y * d + (-d.abs()).exp().ln_1p()
}

/// T-REX training configuration. Defaults follow the tuned values:
/// Adam at lr 0.005, betas (0.9, 0.999), batch size 128 pairs, 25 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrexTrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub metric: MetricKind,
    pub seed: u64,
}

impl TrexTrainConfig {
    pub fn new(metric: MetricKind, seed: u64) -> Self {
        TrexTrainConfig {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            epochs: 25,
            metric,
            seed,
        }
    }
}

/// Goal-relative rows of one pair side, taken from the precomputed
/// per-goal row block of the example.
fn side_rows<'a, T: Scalar>(
    ex: &'a TrainExample<T>,
    goal: usize,
    n: usize,
) -> ndarray::ArrayView2<'a, T> {
    ex.rows.slice(ndarray::s![goal * n..(goal + 1) * n, ..])
}

/// One Adam step over a batch of pairs. Returns the mean ranking loss.
fn train_pair_batch<T: Scalar>(
    model: &mut RewardModel<T>,
    examples: &[TrainExample<T>],
    batch: &[PreferencePair],
    optimizer: &mut Adam<T>,
) -> Result<f64> {
    let n = model.n_points;
    let mut rows = Array2::<T>::zeros((batch.len() * 2 * n, 3));
    for (pi, pair) in batch.iter().enumerate() {
        let offset = pi * 2 * n;
        rows.slice_mut(ndarray::s![offset..offset + n, ..])
            .assign(&side_rows(&examples[pair.first], pair.goal_first, n));
        rows.slice_mut(ndarray::s![offset + n..offset + 2 * n, ..])
            .assign(&side_rows(&examples[pair.second], pair.goal_second, n));
    }

    let (values, cache) = model.mlp.forward_batch(rows.view());
    let values = values.as_slice().expect("contiguous");

    let mut upstream = Array1::<T>::zeros(rows.nrows());
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0f64;
    for (pi, pair) in batch.iter().enumerate() {
        let offset = pi * 2 * n;
        let sum = |range: std::ops::Range<usize>| -> f64 {
            let mut acc = T::zero();
            for v in &values[range] {
                acc = acc + *v;
            }
            acc.to_f64().unwrap()
        };
        let r1 = sum(offset..offset + n);
        let r2 = sum(offset + n..offset + 2 * n);
        let y = pair.second_preferred as u8 as f64;
        let d = r2 - r1;
        loss += bce_with_logit(d, y);
        // dL/dR2 = sigmoid(d) - y; dL/dR1 is its negation. Each control
        // point of a side contributes equally because R is a plain sum.
        let g = (pair_likelihood(r1, r2) - y) * inv_batch;
        let g2 = T::from_f64(g).unwrap();
        let g1 = T::from_f64(-g).unwrap();
        for r in offset..offset + n {
            upstream[r] = g1;
        }
        for r in offset + n..offset + 2 * n {
            upstream[r] = g2;
        }
    }
    loss *= inv_batch;

    let grads = model.mlp.backward_batch(&cache, &upstream)?;
    optimizer.step(&mut model.mlp, &grads)?;
    Ok(loss)
}

/// Train the reward model with mini-batch Adam on the pairwise ranking loss.
/// Pairs are rebuilt from a fresh rng sub-stream every epoch. Returns
/// per-epoch mean losses.
/// The preference pairs drawn for one training epoch. Training regenerates
/// pairs per epoch from a per-epoch substream; exposing the draw lets
/// callers evaluate a model on exactly the pairs it was trained on.
pub fn epoch_pairs<T: Scalar>(
    examples: &[TrainExample<T>],
    config: &TrexTrainConfig,
    epoch: usize,
) -> Result<Vec<PreferencePair>> {
    build_pairs(examples, None, &mut substream(config.seed, TAG_PAIRS, epoch as u64))
}

pub fn train_trex<T: Scalar>(
    model: &mut RewardModel<T>,
    examples: &[TrainExample<T>],
    config: &TrexTrainConfig,
) -> Result<Vec<f64>> {
    let mut optimizer = Adam::new(
        &model.mlp,
        config.lr,
        config.beta1,
        config.beta2,
        config.eps,
    );
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let pairs = epoch_pairs(examples, config, epoch)?;
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch in pairs.chunks(config.batch_size) {
            let loss = train_pair_batch(model, examples, batch, &mut optimizer)?;
            if !loss.is_finite() {
                return Err(Error::DivergedTraining { epoch, update: n_batches });
            }
            epoch_loss += loss;
            n_batches += 1;
        }
        history.push(epoch_loss / n_batches.max(1) as f64);
    }
    Ok(history)
}

/// Argmax-agreement accuracy of the reward model: the predicted goal of a
/// trajectory is the real goal with the highest accumulated reward (dummy
/// slots never participate), compared against the oracle's argmax.
pub fn evaluate_trex<T: Scalar>(
    model: &RewardModel<T>,
    examples: &[TrainExample<T>],
    dataset: &str,
) -> EvalReport {
    let n = model.n_points;
    let mut correct = 0usize;
    let mut per_goal_count = std::collections::BTreeMap::new();
    for chunk in examples.chunks(128) {
        let total_rows: usize = chunk.iter().map(|ex| ex.rows.nrows()).sum();
        let mut rows = Array2::<T>::zeros((total_rows, 3));
        let mut offset = 0;
        for ex in chunk {
            rows.slice_mut(ndarray::s![offset..offset + ex.rows.nrows(), ..])
                .assign(&ex.rows);
            offset += ex.rows.nrows();
        }
        let (values, _) = model.mlp.forward_batch(rows.view());
        let values = values.as_slice().expect("contiguous");
        let mut offset = 0;
        for ex in chunk {
            let rewards: Vec<f64> = (0..ex.n_goals)
                .map(|gi| {
                    let mut acc = T::zero();
                    for v in &values[offset + gi * n..offset + (gi + 1) * n] {
                        acc = acc + *v;
                    }
                    acc.to_f64().unwrap()
                })
                .collect();
            let hit = argmax(&rewards) == ex.oracle_argmax;
            if hit {
                correct += 1;
            }
            let entry: &mut (usize, usize) =
                per_goal_count.entry(ex.n_goals).or_insert((0, 0));
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

/// Train exactly one epoch, recording validation accuracy every `eval_every`
/// optimizer updates. One pair presents two examples, so
/// `examples_seen = updates * batch_size * 2`.
pub fn learning_curve_trex<T: Scalar>(
    model: &mut RewardModel<T>,
    train_examples: &[TrainExample<T>],
    val_examples: &[TrainExample<T>],
    config: &TrexTrainConfig,
    eval_every: usize,
) -> Result<Vec<CurvePoint>> {
    let mut optimizer = Adam::new(
        &model.mlp,
        config.lr,
        config.beta1,
        config.beta2,
        config.eps,
    );
    let pairs = build_pairs(
        train_examples,
        None,
        &mut substream(config.seed, TAG_PAIRS, 0),
    )?;
    let mut curve = Vec::new();
    let mut updates = 0usize;
    for batch in pairs.chunks(config.batch_size) {
        let loss = train_pair_batch(model, train_examples, batch, &mut optimizer)?;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { epoch: 0, update: updates });
        }
        updates += 1;
        if updates % eval_every == 0 {
            let report = evaluate_trex(model, val_examples, "validation");
            curve.push(CurvePoint {
                updates,
                examples_seen: updates * config.batch_size * 2,
                val_accuracy: report.accuracy,
            });
        }
    }
    Ok(curve)
}

pub fn save_reward_model<T: Scalar>(
    model: &RewardModel<T>,
    metric: MetricKind,
    train_seed: u64,
    path: &Path,
) -> Result<()> {
    ModelFile {
        framework: "trex".into(),
        metric: metric.name().into(),
        g_max: model.g_max,
        n_points: model.n_points,
        train_seed,
        network: model.mlp.to_json(),
    }
    .save(path)
}

pub fn load_reward_model<T: Scalar>(path: &Path) -> Result<(RewardModel<T>, ModelFile)> {
    let file = ModelFile::load(path)?;
    if file.framework != "trex" {
        return Err(Error::ModelMismatch(format!(
            "expected a trex model file, found framework {:?}",
            file.framework
        )));
    }
    let mlp = Mlp::from_json(&file.network)?;
    let spec = LayerSpec::new(file.network.widths.clone());
    Ok((
        RewardModel { mlp, spec, n_points: file.n_points, g_max: file.g_max },
        file,
    ))
}
