//! Randomized environment and trajectory dataset generation with seeded
//! determinism, plus the JSONL/JSON file formats the rest of the pipeline
//! consumes.
//!
//! Randomness: ChaCha8 with per-entity sub-streams. Every environment and
//! every trajectory derives its own generator from (seed, tag, index) via a
//! splitmix64 mix, so records are independent of generation order and the
//! whole dataset is a pure function of (spec, workspace, seed).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geom::{resample_uniform, Point3, RawPath, Trajectory};
use crate::{Error, Result};

/// Maximum number of goals across environments.
pub const G_MAX: usize = 8;
/// Minimum pairwise goal separation in meters (cubes must not overlap).
pub const D_MIN: f64 = 0.10;
/// Control points per resampled trajectory.
pub const N_POINTS: usize = 100;
/// Rejection budget for goal placement.
const MAX_REJECTIONS: usize = 10_000;

const TAG_ENV: u64 = 0x1;
const TAG_TRAJ: u64 = 0x2;

/// Name of the project-wide PRNG scheme, recorded in manifests.
pub const RNG_SCHEME: &str = "chacha8-splitmix64-substreams";

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive an independent seed for entity `index` of stream `tag`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag ^ splitmix64(index)))
}

/// Derive an independent generator for entity `index` of stream `tag`.
pub fn substream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}

/// Default observer viewpoint for viewpoint-based legibility: in front of
/// the table, slightly above it, looking at the table center.
pub fn default_viewpoint() -> crate::geom::Viewpoint {
    crate::geom::Viewpoint::new(
        Point3::new(1.5, 0.0, 0.5),
        Point3::new(0.5, 0.0, 0.025),
        Point3::new(0.0, 0.0, 1.0),
    )
    .expect("default viewpoint is nondegenerate")
}

/// Workspace geometry: the box waypoints are sampled in (the area above the
/// goal table), the goal height, and the end-effector start pose.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub table_z: f64,
    pub start: Point3,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace {
            min: [0.2, -0.35, 0.0],
            max: [0.8, 0.35, 0.6],
            table_z: 0.025,
            start: Point3::new(0.0, 0.0, 0.4),
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.min[a] < self.max[a]) {
                return Err(Error::MalformedFile {
                    path: "<workspace>".into(),
                    reason: format!("min >= max on axis {a}"),
                });
            }
        }
        if !self.start.is_finite() {
            return Err(Error::NonFinitePoint);
        }
        Ok(())
    }
}

/// One environment: an id plus an ordered set of goal (cube) positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Environment {
    pub env_id: String,
    pub goals: Vec<Point3>,
}

/// One dataset record: a trajectory, the environment it lives in, and the
/// goal it actually reaches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub env_id: String,
    pub target_index: usize,
    pub points: Vec<Point3>,
}

/// An unlabeled sample as produced by the trajectory sampler.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub env_id: String,
    pub target_index: usize,
    pub trajectory: Trajectory,
}

/// Specification of one dataset split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub n_trajectories: usize,
    pub n_environments: usize,
    pub goal_counts: Vec<usize>,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.goal_counts.is_empty() {
            return Err(Error::EmptyGoalSet);
        }
        for &c in &self.goal_counts {
            if c < 2 || c > G_MAX {
                return Err(Error::InvalidGoalCount(c, G_MAX));
            }
        }
        Ok(())
    }
}

/// Manifest written next to each dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub count: usize,
    pub rng: String,
    pub config_hash: String,
    pub dataset_sha256: String,
    pub env_ids: Vec<String>,
}

/// Sample one environment: `goal_count` goals uniform on the table region at
/// height `table_z`, rejection-sampled to pairwise separation >= `D_MIN`.
pub fn sample_environment<R: Rng>(
    rng: &mut R,
    workspace: &Workspace,
    goal_count: usize,
    env_id: String,
) -> Result<Environment> {
    if goal_count < 2 || goal_count > G_MAX {
        return Err(Error::InvalidGoalCount(goal_count, G_MAX));
    }
    let mut goals: Vec<Point3> = Vec::with_capacity(goal_count);
    let mut rejections = 0usize;
    while goals.len() < goal_count {
        let candidate = Point3::new(
            rng.random_range(workspace.min[0]..workspace.max[0]),
            rng.random_range(workspace.min[1]..workspace.max[1]),
            workspace.table_z,
        );
        if goals.iter().all(|g| g.dist(&candidate) >= D_MIN) {
            goals.push(candidate);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(Error::PlacementFailure { goal_count, attempts: rejections });
            }
        }
    }
    Ok(Environment { env_id, goals })
}

fn sample_raw_path<R: Rng>(rng: &mut R, env: &Environment, ws: &Workspace) -> (usize, RawPath) {
    let target_index = rng.random_range(0..env.goals.len());
    let n_control = rng.random_range(3..=5usize);
    let mut wps = Vec::with_capacity(n_control + 2);
    wps.push(ws.start);
    for _ in 0..n_control {
        wps.push(Point3::new(
            rng.random_range(ws.min[0]..ws.max[0]),
            rng.random_range(ws.min[1]..ws.max[1]),
            rng.random_range(ws.min[2]..ws.max[2]),
        ));
    }
    wps.push(env.goals[target_index]);
    (target_index, RawPath::new(wps).expect("waypoints are finite and >= 2"))
}

/// Sample one trajectory: uniform target goal, 3-5 uniform waypoints between
/// start and goal, resampled to `n_points`. A degenerate draw is retried
/// once.
pub fn sample_trajectory<R: Rng>(
    rng: &mut R,
    env: &Environment,
    workspace: &Workspace,
    n_points: usize,
) -> Result<RawSample> {
    let (target_index, path) = sample_raw_path(rng, env, workspace);
    let trajectory = match resample_uniform(&path, n_points) {
        Ok(t) => t,
        Err(Error::DegeneratePath) => {
            let (ti, path) = sample_raw_path(rng, env, workspace);
            let t = resample_uniform(&path, n_points)?;
            return Ok(RawSample { env_id: env.env_id.clone(), target_index: ti, trajectory: t });
        }
        Err(e) => return Err(e),
    };
    Ok(RawSample { env_id: env.env_id.clone(), target_index, trajectory })
}

/// Generate the environments of a split. Goal counts are drawn uniformly from
/// the allowed set; each environment has its own rng sub-stream.
pub fn generate_environments(spec: &DatasetSpec, workspace: &Workspace) -> Result<Vec<Environment>> {
    spec.validate()?;
    workspace.validate()?;
    (0..spec.n_environments)
        .map(|i| {
            let mut rng = substream(spec.seed, TAG_ENV, i as u64);
            let count = spec.goal_counts[rng.random_range(0..spec.goal_counts.len())];
            sample_environment(
                &mut rng,
                workspace,
                count,
                format!("{}-{:04}", spec.name, i),
            )
        })
        .collect()
}

/// Generate the trajectory records of a split into a JSONL file and return
/// its manifest. `environments` may come from this split or be shared with
/// another one (the Trajectory splits reuse the training environments).
pub fn generate_dataset(
    spec: &DatasetSpec,
    workspace: &Workspace,
    environments: &[Environment],
    dataset_path: &Path,
    config_hash: &str,
) -> Result<DatasetManifest> {
    spec.validate()?;
    workspace.validate()?;
    if spec.n_trajectories > 0 && environments.is_empty() {
        return Err(Error::EmptyGoalSet);
    }
    let mut writer = BufWriter::new(File::create(dataset_path)?);
    for i in 0..spec.n_trajectories {
        let mut rng = substream(spec.seed, TAG_TRAJ, i as u64);
        let env = &environments[rng.random_range(0..environments.len())];
        let sample = sample_trajectory(&mut rng, env, workspace, N_POINTS)?;
        let record = DatasetRecord {
            env_id: sample.env_id,
            target_index: sample.target_index,
            points: sample.trajectory.points().to_vec(),
        };
        serde_json::to_writer(&mut writer, &record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    drop(writer);

    Ok(DatasetManifest {
        spec: spec.clone(),
        seed: spec.seed,
        count: spec.n_trajectories,
        rng: RNG_SCHEME.to_string(),
        config_hash: config_hash.to_string(),
        dataset_sha256: sha256_file(dataset_path)?,
        env_ids: environments.iter().map(|e| e.env_id.clone()).collect(),
    })
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex_digest(&bytes))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// The environments file: `{"environments": [...]}` plus an id index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentsFile {
    pub environments: Vec<Environment>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EnvironmentsFile {
    pub fn new(environments: Vec<Environment>) -> Self {
        let mut file = EnvironmentsFile { environments, index: HashMap::new() };
        file.rebuild_index();
        file
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .environments
            .iter()
            .enumerate()
            .map(|(i, e)| (e.env_id.clone(), i))
            .collect();
    }

    pub fn get(&self, env_id: &str) -> Result<&Environment> {
        self.index
            .get(env_id)
            .map(|&i| &self.environments[i])
            .ok_or_else(|| Error::UnknownEnvironment(env_id.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut writer, self)?;
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file: EnvironmentsFile = serde_json::from_reader(File::open(path)?)?;
        file.rebuild_index();
        Ok(file)
    }
}

/// Read every record of a dataset JSONL file.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(File::open(path)?);
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

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn spec(name: &str, n_traj: usize, n_env: usize, counts: &[usize], seed: u64) -> DatasetSpec {
        DatasetSpec {
            name: name.into(),
            n_trajectories: n_traj,
            n_environments: n_env,
            goal_counts: counts.to_vec(),
            seed,
        }
    }

    #[test]
    fn environment_respects_separation() {
        let ws = Workspace::default();
        let mut rng = substream(1, TAG_ENV, 0);
        let env = sample_environment(&mut rng, &ws, 2, "t-0".into()).unwrap();
        assert_eq!(env.goals.len(), 2);
        assert!(env.goals[0].dist(&env.goals[1]) >= D_MIN);
        assert!(env.goals.iter().all(|g| g.z == ws.table_z));
    }

    #[test]
    fn eight_goals_fit_default_workspace() {
        let ws = Workspace::default();
        let mut rng = substream(2, TAG_ENV, 0);
        let env = sample_environment(&mut rng, &ws, 8, "t-0".into()).unwrap();
        assert_eq!(env.goals.len(), 8);
    }

    #[test]
    fn nine_goals_rejected() {
        let ws = Workspace::default();
        let mut rng = substream(3, TAG_ENV, 0);
        let err = sample_environment(&mut rng, &ws, 9, "t-0".into());
        assert!(matches!(err, Err(Error::InvalidGoalCount(9, 8))));
    }

    #[test]
    fn placement_failure_on_tiny_workspace() {
        let mut ws = Workspace::default();
        ws.min = [0.0, 0.0, 0.0];
        ws.max = [0.05, 0.05, 0.6];
        let mut rng = substream(4, TAG_ENV, 0);
        let err = sample_environment(&mut rng, &ws, 4, "t-0".into());
        assert!(matches!(err, Err(Error::PlacementFailure { .. })));
    }

    #[test]
    fn trajectory_endpoints_are_exact() {
        let ws = Workspace::default();
        let mut rng = substream(5, TAG_ENV, 0);
        let env = sample_environment(&mut rng, &ws, 3, "t-0".into()).unwrap();
        let mut rng = substream(5, TAG_TRAJ, 0);
        let sample = sample_trajectory(&mut rng, &env, &ws, N_POINTS).unwrap();
        let pts = sample.trajectory.points();
        assert_eq!(pts.len(), N_POINTS);
        assert_eq!(pts[0], ws.start);
        assert_eq!(pts[N_POINTS - 1], env.goals[sample.target_index]);
    }

    #[test]
    fn trajectory_sampler_is_deterministic() {
        let ws = Workspace::default();
        let env = sample_environment(&mut substream(6, TAG_ENV, 0), &ws, 4, "t-0".into()).unwrap();
        let a = sample_trajectory(&mut substream(6, TAG_TRAJ, 7), &env, &ws, 100).unwrap();
        let b = sample_trajectory(&mut substream(6, TAG_TRAJ, 7), &env, &ws, 100).unwrap();
        assert_eq!(a.target_index, b.target_index);
        assert_eq!(a.trajectory.points(), b.trajectory.points());
    }

    #[test]
    fn target_goal_choice_is_uniform() {
        // chi-square-style check: each goal's count within 3 sigma of the
        // multinomial expectation over 1000 samples.
        let ws = Workspace::default();
        let env = sample_environment(&mut substream(7, TAG_ENV, 0), &ws, 4, "t-0".into()).unwrap();
        let n = 1000usize;
        let mut counts = [0usize; 4];
        for i in 0..n {
            let s = sample_trajectory(&mut substream(8, TAG_TRAJ, i as u64), &env, &ws, 10)
                .unwrap();
            counts[s.target_index] += 1;
        }
        let p = 0.25;
        let sigma = ((n as f64) * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                ((c as f64) - (n as f64) * p).abs() <= 3.0 * sigma,
                "count {c} outside 3 sigma"
            );
        }
    }

    #[test]
    fn goal_count_distribution_is_uniform() {
        let ws = Workspace::default();
        let s = spec("train", 0, 1000, &[2, 3, 5, 6], 9);
        let envs = generate_environments(&s, &ws).unwrap();
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for e in &envs {
            *counts.entry(e.goals.len()).or_default() += 1;
        }
        let p = 0.25;
        let sigma = (1000.0_f64 * p * (1.0 - p)).sqrt();
        for &gc in &[2usize, 3, 5, 6] {
            let c = *counts.get(&gc).unwrap_or(&0) as f64;
            assert!((c - 250.0).abs() <= 3.0 * sigma, "goal count {gc}: {c}");
        }
    }

    #[test]
    fn dataset_generation_is_byte_deterministic() {
        let ws = Workspace::default();
        let s = spec("train", 50, 5, &[2, 3], 10);
        let dir = tempdir().unwrap();
        let envs = generate_environments(&s, &ws).unwrap();
        let path_a = dir.path().join("a.jsonl");
        let path_b = dir.path().join("b.jsonl");
        let ma = generate_dataset(&s, &ws, &envs, &path_a, "h").unwrap();
        let mb = generate_dataset(&s, &ws, &envs, &path_b, "h").unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());
        assert_eq!(ma.dataset_sha256, mb.dataset_sha256);
        assert_eq!(ma.count, 50);
    }

    #[test]
    fn records_roundtrip_bit_exact() {
        let ws = Workspace::default();
        let s = spec("train", 20, 3, &[2, 3], 11);
        let dir = tempdir().unwrap();
        let envs = generate_environments(&s, &ws).unwrap();
        let path = dir.path().join("d.jsonl");
        generate_dataset(&s, &ws, &envs, &path, "h").unwrap();
        let records = load_dataset(&path).unwrap();
        assert_eq!(records.len(), 20);
        // re-serialize and compare bytes line by line
        let original = std::fs::read_to_string(&path).unwrap();
        for (line, rec) in original.lines().zip(&records) {
            assert_eq!(line, serde_json::to_string(rec).unwrap());
        }
        // endpoints exact
        let env_file = EnvironmentsFile::new(envs);
        for rec in &records {
            let env = env_file.get(&rec.env_id).unwrap();
            assert_eq!(rec.points[0], ws.start);
            assert_eq!(rec.points[N_POINTS - 1], env.goals[rec.target_index]);
        }
    }

    #[test]
    fn empty_spec_gives_empty_file_and_valid_manifest() {
        let ws = Workspace::default();
        let s = spec("empty", 0, 2, &[2], 12);
        let dir = tempdir().unwrap();
        let envs = generate_environments(&s, &ws).unwrap();
        let path = dir.path().join("d.jsonl");
        let manifest = generate_dataset(&s, &ws, &envs, &path, "h").unwrap();
        assert_eq!(manifest.count, 0);
        assert_eq!(std::fs::read(&path).unwrap().len(), 0);
    }

    #[test]
    fn environments_file_roundtrip_and_lookup() {
        let ws = Workspace::default();
        let s = spec("train", 0, 3, &[2], 13);
        let envs = generate_environments(&s, &ws).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("envs.json");
        EnvironmentsFile::new(envs.clone()).save(&path).unwrap();
        let loaded = EnvironmentsFile::load(&path).unwrap();
        assert_eq!(loaded.environments.len(), 3);
        assert!(loaded.get("train-0001").is_ok());
        assert!(matches!(
            loaded.get("nope"),
            Err(Error::UnknownEnvironment(_))
        ));
    }
}
