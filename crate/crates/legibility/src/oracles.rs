//! The four hand-crafted legibility metrics used as label sources, score to
//! target-distribution conversion, and the dataset labeling pass.
//!
//! All metric math runs in f64. Per-goal score vectors follow environment
//! goal order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envgen::{DatasetRecord, Environment, EnvironmentsFile};
use crate::geom::{project_viewpoint, Point3, Trajectory, Viewpoint};
use crate::{Error, Result};

/// The hand-crafted legibility metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Dragan,
    Nikolaidis,
    EffDist,
    FastApp,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Dragan,
        MetricKind::Nikolaidis,
        MetricKind::EffDist,
        MetricKind::FastApp,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Dragan => "dragan",
            MetricKind::Nikolaidis => "nikolaidis",
            MetricKind::EffDist => "effdist",
            MetricKind::FastApp => "fastapp",
        }
    }

    pub fn parse(s: &str) -> Option<MetricKind> {
        match s {
            "dragan" => Some(MetricKind::Dragan),
            "nikolaidis" => Some(MetricKind::Nikolaidis),
            "effdist" => Some(MetricKind::EffDist),
            "fastapp" => Some(MetricKind::FastApp),
            _ => None,
        }
    }
}

/// Per-goal scores for one metric, in environment goal order.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalScores {
    pub metric: MetricKind,
    pub scores: Vec<f64>,
}

/// A probability vector over the goals of one environment.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    pub probabilities: Vec<f64>,
}

fn check_inputs(traj_len: usize, n_goals: usize) -> Result<()> {
    if n_goals == 0 {
        return Err(Error::EmptyGoalSet);
    }
    if traj_len < 2 {
        return Err(Error::TooFewWaypoints(traj_len));
    }
    Ok(())
}

/// Time-decaying prefix weights `w_k = n - 1 - k`: early prefixes count most,
/// the final point (which reaches the goal and disambiguates nothing) counts
/// zero.
fn prefix_weights(n: usize) -> Vec<f64> {
    (0..n).map(|k| (n - 1 - k) as f64).collect()
}

/// Dragan legibility per goal, computed on arbitrary-dimension points given
/// as a distance-function-compatible flat representation.
fn dragan_core(points: &[Point3], goals: &[Point3]) -> Vec<f64> {
    let n = points.len();
    let start = points[0];
    let weights = prefix_weights(n);
    let weight_sum: f64 = weights.iter().sum();

    // straight-line optimal cost from the start to each goal
    let direct: Vec<f64> = goals.iter().map(|g| start.dist(g)).collect();

    let mut scores = vec![0.0; goals.len()];
    let mut cumlen = 0.0;
    let mut prev = start;
    for (k, q) in points.iter().enumerate() {
        cumlen += prev.dist(q);
        prev = *q;
        // unnormalized belief per goal over this prefix
        let beliefs: Vec<f64> = goals
            .iter()
            .enumerate()
            .map(|(i, g)| (direct[i] - cumlen - q.dist(g)).exp())
            .collect();
        let total: f64 = beliefs.iter().sum();
        for (s, u) in scores.iter_mut().zip(&beliefs) {
            *s += weights[k] * u / total;
        }
    }
    scores.iter().map(|s| s / weight_sum).collect()
}

/// Dragan legibility: time-weighted mean of the per-prefix goal posterior
/// under an efficiency-cost observer (arc length cost, straight-line optimum,
/// uniform prior).
pub fn dragan_scores(traj: &Trajectory, goals: &[Point3]) -> Result<GoalScores> {
    check_inputs(traj.len(), goals.len())?;
    Ok(GoalScores {
        metric: MetricKind::Dragan,
        scores: dragan_core(traj.points(), goals),
    })
}

/// Viewpoint-based legibility: Dragan legibility computed after orthographic
/// projection of trajectory and goals into the observer's image plane.
pub fn nikolaidis_scores(
    traj: &Trajectory,
    goals: &[Point3],
    vp: &Viewpoint,
) -> Result<GoalScores> {
    check_inputs(traj.len(), goals.len())?;
    let proj_points: Vec<Point3> = project_viewpoint(traj.points(), vp)?
        .into_iter()
        .map(|uv| Point3::new(uv[0], uv[1], 0.0))
        .collect();
    let proj_goals: Vec<Point3> = project_viewpoint(goals, vp)?
        .into_iter()
        .map(|uv| Point3::new(uv[0], uv[1], 0.0))
        .collect();
    Ok(GoalScores {
        metric: MetricKind::Nikolaidis,
        scores: dragan_core(&proj_points, &proj_goals),
    })
}

/// EffDist: negative mean distance to the goal along the trajectory.
pub fn effdist_scores(traj: &Trajectory, goals: &[Point3]) -> Result<GoalScores> {
    check_inputs(traj.len(), goals.len())?;
    let n = traj.len() as f64;
    let scores = goals
        .iter()
        .map(|g| -traj.points().iter().map(|q| q.dist(g)).sum::<f64>() / n)
        .collect();
    Ok(GoalScores { metric: MetricKind::EffDist, scores })
}

/// FastApp: negative early-weighted mean distance to the goal; approaching
/// the goal fast (early proximity) scores higher.
pub fn fastapp_scores(traj: &Trajectory, goals: &[Point3]) -> Result<GoalScores> {
    check_inputs(traj.len(), goals.len())?;
    let weights = prefix_weights(traj.len());
    let weight_sum: f64 = weights.iter().sum();
    let scores = goals
        .iter()
        .map(|g| {
            -traj
                .points()
                .iter()
                .zip(&weights)
                .map(|(q, w)| w * q.dist(g))
                .sum::<f64>()
                / weight_sum
        })
        .collect();
    Ok(GoalScores { metric: MetricKind::FastApp, scores })
}

/// Dispatch on the metric kind. Nikolaidis needs the observer viewpoint.
pub fn metric_scores(
    metric: MetricKind,
    traj: &Trajectory,
    goals: &[Point3],
    vp: &Viewpoint,
) -> Result<GoalScores> {
    match metric {
        MetricKind::Dragan => dragan_scores(traj, goals),
        MetricKind::Nikolaidis => nikolaidis_scores(traj, goals, vp),
        MetricKind::EffDist => effdist_scores(traj, goals),
        MetricKind::FastApp => fastapp_scores(traj, goals),
    }
}

/// Convert a raw score vector into a training target distribution: z-score
/// across goals (uniform output when the scores are constant), then softmax
/// at temperature 1. Z-scoring makes the construction invariant to the
/// metric's scale and offset.
pub fn scores_to_distribution(scores: &GoalScores) -> TargetDistribution {
    let s = &scores.scores;
    let n = s.len() as f64;
    if s.len() == 1 {
        return TargetDistribution { probabilities: vec![1.0] };
    }
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        return TargetDistribution { probabilities: vec![1.0 / n; s.len()] };
    }
    let z: Vec<f64> = s.iter().map(|v| (v - mean) / std).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    TargetDistribution { probabilities: exps.iter().map(|e| e / total).collect() }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Label every record of a dataset file with the requested metrics.
///
/// Appends a `"labels"` object to each JSONL record by splicing text after
/// the original fields, so input bytes are preserved verbatim.
pub fn label_dataset(
    dataset_path: &Path,
    environments_path: &Path,
    metrics: &[MetricKind],
    vp: &Viewpoint,
    out_path: &Path,
) -> Result<usize> {
    let envs = EnvironmentsFile::load(environments_path)?;
    let reader = BufReader::new(File::open(dataset_path)?);
    let mut writer = BufWriter::new(File::create(out_path)?);
    let mut count = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)?;
        let env = envs.get(&record.env_id)?;
        let labeled = label_line(&line, &record, env, metrics, vp)?;
        writer.write_all(labeled.as_bytes())?;
        writer.write_all(b"\n")?;
        count += 1;
    }
    writer.flush()?;
    Ok(count)
}

fn label_line(
    line: &str,
    record: &DatasetRecord,
    env: &Environment,
    metrics: &[MetricKind],
    vp: &Viewpoint,
) -> Result<String> {
    let traj = Trajectory::from_points(record.points.clone())?;
    let mut labels = serde_json::Map::new();
    for metric in metrics {
        let scores = metric_scores(*metric, &traj, &env.goals, vp)?;
        labels.insert(
            metric.name().to_string(),
            serde_json::to_value(&scores.scores)?,
        );
    }
    let labels_json = serde_json::to_string(&serde_json::Value::Object(labels))?;
    let trimmed = line.trim_end();
    debug_assert!(trimmed.ends_with('}'));
    Ok(format!(
        "{},\"labels\":{}}}",
        &trimmed[..trimmed.len() - 1],
        labels_json
    ))
}
