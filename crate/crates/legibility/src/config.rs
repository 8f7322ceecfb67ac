//! Experiment configuration: the seven dataset splits, model and optimizer
//! settings, scale presets, and config hashing.
//!
//! A configuration is a single JSON document. Split seeds are derived from
//! the master seed with disjoint sub-streams, so regenerating any part of an
//! experiment is a pure function of (config, master seed).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envgen::{default_viewpoint, derive_seed, hex_digest, DatasetSpec, Workspace, G_MAX};
use crate::geom::Viewpoint;
use crate::oracles::MetricKind;
use crate::slotv::SlotVTrainConfig;
use crate::trex::TrexTrainConfig;
use crate::{Error, Result};

const TAG_SPLIT: u64 = 0x31;
const TAG_REPEAT_INIT: u64 = 0x32;
const TAG_REPEAT_TRAIN: u64 = 0x33;

/// Scale preset: the paper's full experiment or a desk-size analog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    Desk,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Scale> {
        match s {
            "paper" => Ok(Scale::Paper),
            "desk" => Ok(Scale::Desk),
            other => Err(Error::MalformedFile {
                path: "<cli>".into(),
                reason: format!("unknown scale {other:?}; expected paper or desk"),
            }),
        }
    }
}

/// Size and goal-count mix of one dataset split (the seed is derived from
/// the master seed at plan time).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitConfig {
    pub n_trajectories: usize,
    pub n_environments: usize,
    pub goal_counts: Vec<usize>,
}

impl SplitConfig {
    fn new(n_trajectories: usize, n_environments: usize, goal_counts: &[usize]) -> Self {
        SplitConfig {
            n_trajectories,
            n_environments,
            goal_counts: goal_counts.to_vec(),
        }
    }
}

/// The seven splits of the experiment. The Trajectory splits reuse the
/// Training environments (novel trajectories, known scenes); the Position
/// and Goal Count splits use fresh environments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitsConfig {
    pub training: SplitConfig,
    pub trajectory_val: SplitConfig,
    pub trajectory_test: SplitConfig,
    pub position_val: SplitConfig,
    pub position_test: SplitConfig,
    pub goal_count_val: SplitConfig,
    pub goal_count_test: SplitConfig,
}

/// SLOT-V model and training settings (RMSprop).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotVSettings {
    pub hidden_widths: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub rho: f64,
    pub momentum: f64,
    pub eps: f64,
    pub batch_size: usize,
}

/// T-REX model and training settings (Adam).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrexSettings {
    pub hidden_widths: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

/// Top-level experiment configuration. Mirrors the JSON config file; every
/// field has a default supplied by the scale presets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub workspace: Workspace,
    pub viewpoint: Viewpoint,
    pub splits: SplitsConfig,
    pub slotv: SlotVSettings,
    pub trex: TrexSettings,
    pub n_repeats: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// The full experiment: 100k training trajectories over 250 environments
    /// with goal counts {2,3,5,6}, 1k-trajectory validation/test splits,
    /// wide networks, 10 repeats.
    pub fn paper(master_seed: u64, out_dir: PathBuf) -> Self {
        ExperimentConfig {
            scale: Scale::Paper,
            workspace: Workspace::default(),
            viewpoint: default_viewpoint(),
            splits: SplitsConfig {
                training: SplitConfig::new(100_000, 250, &[2, 3, 5, 6]),
                trajectory_val: SplitConfig::new(10_000, 0, &[2, 3, 5, 6]),
                trajectory_test: SplitConfig::new(10_000, 0, &[2, 3, 5, 6]),
                position_val: SplitConfig::new(10_000, 10, &[2, 3, 5, 6]),
                position_test: SplitConfig::new(10_000, 10, &[2, 3, 5, 6]),
                goal_count_val: SplitConfig::new(10_000, 10, &[7]),
                goal_count_test: SplitConfig::new(10_000, 10, &[4, 8]),
            },
            slotv: SlotVSettings {
                hidden_widths: vec![1536, 768],
                epochs: 15,
                lr: 0.005,
                rho: 0.9,
                momentum: 0.0,
                eps: 1e-7,
                batch_size: 32,
            },
            trex: TrexSettings {
                hidden_widths: vec![1792, 768],
                epochs: 25,
                lr: 0.005,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                batch_size: 128,
            },
            n_repeats: 10,
            master_seed,
            out_dir,
        }
    }

    /// Desk-size analog: 10k training trajectories over 25 environments with
    /// goal counts {2,3}, narrower networks, fewer epochs, 3 repeats. The
    /// formulas are untouched; only the counts shrink.
    pub fn desk(master_seed: u64, out_dir: PathBuf) -> Self {
        let mut config = Self::paper(master_seed, out_dir);
        config.scale = Scale::Desk;
        config.splits.training = SplitConfig::new(10_000, 25, &[2, 3]);
        for split in [
            &mut config.splits.trajectory_val,
            &mut config.splits.trajectory_test,
            &mut config.splits.position_val,
            &mut config.splits.position_test,
            &mut config.splits.goal_count_val,
            &mut config.splits.goal_count_test,
        ] {
            split.n_trajectories = 1_000;
        }
        config.splits.trajectory_val.goal_counts = vec![2, 3];
        config.splits.trajectory_test.goal_counts = vec![2, 3];
        config.splits.position_val.goal_counts = vec![2, 3];
        config.splits.position_test.goal_counts = vec![2, 3];
        // unseen goal counts shrink with the training range so they stay a
        // mild extrapolation: one (val) and two (test) beyond the largest
        // trained count, mirroring the full-scale setup's 7 and 8 over {2,3,5,6}
        config.splits.goal_count_val.goal_counts = vec![4];
        config.splits.goal_count_test.goal_counts = vec![5];
        config.slotv.hidden_widths = vec![256, 128];
        config.slotv.epochs = 5;
        config.trex.hidden_widths = vec![256, 128];
        config.trex.epochs = 15;
        config.n_repeats = 3;
        config
    }

    pub fn preset(scale: Scale, master_seed: u64, out_dir: PathBuf) -> Self {
        match scale {
            Scale::Paper => Self::paper(master_seed, out_dir),
            Scale::Desk => Self::desk(master_seed, out_dir),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_reader(std::fs::File::open(path)?)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        self.viewpoint.basis()?;
        for plan in self.split_plans() {
            plan.spec.validate()?;
        }
        if self.n_repeats == 0 {
            return Err(Error::MalformedFile {
                path: "<config>".into(),
                reason: "n_repeats must be >= 1".into(),
            });
        }
        for counts in [&self.splits.goal_count_val, &self.splits.goal_count_test] {
            for &c in &counts.goal_counts {
                if c > G_MAX {
                    return Err(Error::InvalidGoalCount(c, G_MAX));
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form; embedded in every output.
    /// The output directory is excluded: where results are written must not
    /// change the identity of the experiment, or reruns into a fresh
    /// directory could never be byte-compared against the original.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex_digest(json.as_bytes())
    }

    /// Concrete generation plans for the seven splits, in a fixed order,
    /// with disjoint derived seeds.
    pub fn split_plans(&self) -> Vec<SplitPlan> {
        let s = &self.splits;
        let entries: [(&str, &SplitConfig, EnvSource); 7] = [
            ("training", &s.training, EnvSource::Own),
            ("trajectory-val", &s.trajectory_val, EnvSource::Training),
            ("trajectory-test", &s.trajectory_test, EnvSource::Training),
            ("position-val", &s.position_val, EnvSource::Own),
            ("position-test", &s.position_test, EnvSource::Own),
            ("goalcount-val", &s.goal_count_val, EnvSource::Own),
            ("goalcount-test", &s.goal_count_test, EnvSource::Own),
        ];
        entries
            .iter()
            .enumerate()
            .map(|(i, (name, split, env_source))| SplitPlan {
                spec: DatasetSpec {
                    name: name.to_string(),
                    n_trajectories: split.n_trajectories,
                    n_environments: split.n_environments,
                    goal_counts: split.goal_counts.clone(),
                    seed: derive_seed(self.master_seed, TAG_SPLIT, i as u64),
                },
                env_source: *env_source,
            })
            .collect()
    }

    /// Seed for the network initialization of one repeat of one cell.
    pub fn init_seed(&self, framework: &str, metric: MetricKind, repeat: usize) -> u64 {
        derive_seed(
            self.master_seed,
            TAG_REPEAT_INIT,
            cell_index(framework, metric, repeat),
        )
    }

    /// Seed for the training stream (shuffling / pair draws) of one repeat.
    pub fn train_seed(&self, framework: &str, metric: MetricKind, repeat: usize) -> u64 {
        derive_seed(
            self.master_seed,
            TAG_REPEAT_TRAIN,
            cell_index(framework, metric, repeat),
        )
    }

    pub fn slotv_train_config(&self, metric: MetricKind, seed: u64) -> SlotVTrainConfig {
        SlotVTrainConfig {
            lr: self.slotv.lr,
            rho: self.slotv.rho,
            momentum: self.slotv.momentum,
            eps: self.slotv.eps,
            batch_size: self.slotv.batch_size,
            epochs: self.slotv.epochs,
            metric,
            seed,
        }
    }

    pub fn trex_train_config(&self, metric: MetricKind, seed: u64) -> TrexTrainConfig {
        TrexTrainConfig {
            lr: self.trex.lr,
            beta1: self.trex.beta1,
            beta2: self.trex.beta2,
            eps: self.trex.eps,
            batch_size: self.trex.batch_size,
            epochs: self.trex.epochs,
            metric,
            seed,
        }
    }
}

fn cell_index(framework: &str, metric: MetricKind, repeat: usize) -> u64 {
    let f = match framework {
        "slotv" => 0u64,
        _ => 1u64,
    };
    let m = MetricKind::ALL
        .iter()
        .position(|k| *k == metric)
        .expect("metric in ALL") as u64;
    f * 1_000_000 + m * 10_000 + repeat as u64
}

/// Where a split's environments come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvSource {
    /// Generate fresh environments from this split's own seed.
    Own,
    /// Reuse the training environments (novel trajectories, known scenes).
    Training,
}

/// One split ready for generation.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub spec: DatasetSpec,
    pub env_source: EnvSource,
}

/// One (framework, metric, split, repeat) result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub framework: String,
    pub metric: String,
    pub split: String,
    pub repeat: usize,
    pub accuracy: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn paper_preset_matches_published_experiment() {
        let config = ExperimentConfig::paper(1, PathBuf::from("/tmp/out"));
        assert_eq!(config.splits.training.n_trajectories, 100_000);
        assert_eq!(config.splits.training.n_environments, 250);
        assert_eq!(config.splits.training.goal_counts, vec![2, 3, 5, 6]);
        assert_eq!(config.splits.goal_count_val.goal_counts, vec![7]);
        assert_eq!(config.splits.goal_count_test.goal_counts, vec![4, 8]);
        assert_eq!(config.slotv.hidden_widths, vec![1536, 768]);
        assert_eq!(config.trex.hidden_widths, vec![1792, 768]);
        assert_eq!(config.slotv.epochs, 15);
        assert_eq!(config.trex.epochs, 25);
        assert_eq!(config.slotv.batch_size, 32);
        assert_eq!(config.trex.batch_size, 128);
        assert_eq!(config.n_repeats, 10);
        assert_eq!(config.split_plans().len(), 7);
        config.validate().unwrap();
    }

    #[test]
    fn desk_preset_shrinks_counts_only() {
        let config = ExperimentConfig::desk(1, PathBuf::from("/tmp/out"));
        assert_eq!(config.splits.training.n_trajectories, 10_000);
        assert_eq!(config.splits.training.n_environments, 25);
        assert_eq!(config.splits.training.goal_counts, vec![2, 3]);
        assert_eq!(config.slotv.hidden_widths, vec![256, 128]);
        assert_eq!(config.slotv.epochs, 5);
        assert_eq!(config.trex.epochs, 15);
        assert_eq!(config.n_repeats, 3);
        assert_eq!(config.splits.goal_count_val.goal_counts, vec![4]);
        assert_eq!(config.splits.goal_count_test.goal_counts, vec![5]);
        // untouched by the preset
        assert_eq!(config.slotv.lr, 0.005);
        config.validate().unwrap();
    }

    #[test]
    fn split_seeds_are_disjoint() {
        let config = ExperimentConfig::desk(7, PathBuf::from("/tmp/out"));
        let seeds: HashSet<u64> =
            config.split_plans().iter().map(|p| p.spec.seed).collect();
        assert_eq!(seeds.len(), 7);
        // and differ from another master seed's streams
        let other = ExperimentConfig::desk(8, PathBuf::from("/tmp/out"));
        for (a, b) in config.split_plans().iter().zip(other.split_plans().iter()) {
            assert_ne!(a.spec.seed, b.spec.seed);
        }
    }

    #[test]
    fn repeat_seeds_distinguish_everything() {
        let config = ExperimentConfig::desk(7, PathBuf::from("/tmp/out"));
        let mut seen = HashSet::new();
        for framework in ["slotv", "trex"] {
            for metric in MetricKind::ALL {
                for repeat in 0..3 {
                    assert!(seen.insert(config.init_seed(framework, metric, repeat)));
                    assert!(seen.insert(config.train_seed(framework, metric, repeat)));
                }
            }
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::desk(7, PathBuf::from("/tmp/out"));
        let b = ExperimentConfig::desk(7, PathBuf::from("/tmp/out"));
        assert_eq!(a.hash(), b.hash());
        let mut c = ExperimentConfig::desk(7, PathBuf::from("/tmp/out"));
        c.slotv.lr = 0.001;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn config_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let config = ExperimentConfig::desk(42, dir.path().to_path_buf());
        config.save(&path).unwrap();
        let loaded = ExperimentConfig::load(&path).unwrap();
        assert_eq!(config.hash(), loaded.hash());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = ExperimentConfig::desk(1, PathBuf::from("/tmp/out"));
        config.n_repeats = 0;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::desk(1, PathBuf::from("/tmp/out"));
        config.splits.training.goal_counts = vec![1];
        assert!(config.validate().is_err());
    }
}
