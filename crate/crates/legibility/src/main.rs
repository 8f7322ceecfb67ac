//! Command-line orchestration: dataset generation, oracle labeling, model
//! training, evaluation, and the accuracy-matrix / sample-efficiency
//! experiments, all emitting machine-readable results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use legibility::config::{EnvSource, ExperimentConfig, RunRecord, Scale};
use legibility::envgen::{
    self, generate_dataset, generate_environments, Environment, EnvironmentsFile, N_POINTS,
};
use legibility::nn::{LayerSpec, Scalar};
use legibility::oracles::{label_dataset, MetricKind};
use legibility::slotv::{
    self, load_labeled_dataset, prepare_examples, CurvePoint, EvalReport, ModelFile,
    ObserverModel, TrainExample,
};
use legibility::trex::{self, RewardModel};

#[derive(Parser)]
#[command(
    name = "legibility",
    about = "Trajectory legibility observer models: data generation, oracle labeling, training, and experiments"
)]
struct Cli {
    /// Path to a JSON experiment config; defaults to the preset for --scale.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scale preset: "paper" (full experiment) or "desk" (small analog).
    #[arg(long, global = true, default_value = "desk")]
    scale: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seven dataset splits with manifests.
    Gen,
    /// Label every split with all four oracle metrics.
    Label,
    /// Train one SLOT-V observer model on the training split.
    TrainSlotv {
        #[arg(long)]
        metric: String,
    },
    /// Train one T-REX reward model on the training split.
    TrainTrex {
        #[arg(long)]
        metric: String,
    },
    /// Evaluate a trained model file on a labeled dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        environments: PathBuf,
        #[arg(long)]
        metric: String,
        /// Optional path for the JSON report (also printed to stdout).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Accuracy matrix: train n_repeats models per (framework, metric) and
    /// evaluate on the four splits. Emits CSV + JSON.
    Table,
    /// Sample-efficiency curves: one epoch per framework, validation
    /// accuracy every 10 updates, averaged over n_repeats.
    Curve {
        #[arg(long, default_value = "dragan")]
        metric: String,
    },
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn parse_metric(s: &str) -> anyhow::Result<MetricKind> {
    MetricKind::parse(s).ok_or_else(|| {
        anyhow::anyhow!("unknown metric {s:?}; expected dragan, nikolaidis, effdist, or fastapp")
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = resolve_config(&cli)?;
    match cli.command {
        Command::Gen => cmd_gen(&config),
        Command::Label => cmd_label(&config),
        Command::TrainSlotv { metric } => cmd_train_slotv(&config, parse_metric(&metric)?),
        Command::TrainTrex { metric } => cmd_train_trex(&config, parse_metric(&metric)?),
        Command::Eval { model, dataset, environments, metric, report } => cmd_eval(
            &model,
            &dataset,
            &environments,
            parse_metric(&metric)?,
            report.as_deref(),
        ),
        Command::Table => cmd_table(&config),
        Command::Curve { metric } => cmd_curve(&config, parse_metric(&metric)?),
    }
}

fn resolve_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::preset(
            Scale::parse(&cli.scale)?,
            cli.seed.unwrap_or(0),
            cli.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        ),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

// --- file layout -------------------------------------------------------------

fn data_dir(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("data")
}

fn models_dir(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("models")
}

fn results_dir(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("results")
}

fn dataset_path(config: &ExperimentConfig, split: &str) -> PathBuf {
    data_dir(config).join(format!("{split}.jsonl"))
}

fn labeled_path(config: &ExperimentConfig, split: &str) -> PathBuf {
    data_dir(config).join(format!("{split}.labeled.jsonl"))
}

fn environments_path(config: &ExperimentConfig, split: &str) -> PathBuf {
    data_dir(config).join(format!("{split}.environments.json"))
}

fn manifest_path(config: &ExperimentConfig, split: &str) -> PathBuf {
    data_dir(config).join(format!("{split}.manifest.json"))
}

// --- gen / label ----------------------------------------------------------------

fn cmd_gen(config: &ExperimentConfig) -> anyhow::Result<()> {
    let data = data_dir(config);
    std::fs::create_dir_all(&data)?;
    config.save(&config.out_dir.join("config.json"))?;
    let hash = config.hash();

    let plans = config.split_plans();
    let mut training_envs: Vec<Environment> = Vec::new();
    for plan in &plans {
        let envs = match plan.env_source {
            EnvSource::Own => generate_environments(&plan.spec, &config.workspace)?,
            EnvSource::Training => training_envs.clone(),
        };
        if plan.spec.name == "training" {
            training_envs = envs.clone();
        } else if plan.env_source == EnvSource::Own {
            // fresh-environment splits must not overlap the training scenes
            for env in &envs {
                if training_envs.iter().any(|t| t.env_id == env.env_id) {
                    bail!("environment id {} collides with training", env.env_id);
                }
            }
        }
        EnvironmentsFile::new(envs.clone()).save(&environments_path(config, &plan.spec.name))?;
        let manifest = generate_dataset(
            &plan.spec,
            &config.workspace,
            &envs,
            &dataset_path(config, &plan.spec.name),
            &hash,
        )?;
        std::fs::write(
            manifest_path(config, &plan.spec.name),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        println!(
            "gen {}: {} trajectories, {} environments",
            plan.spec.name,
            manifest.count,
            envs.len()
        );
    }
    Ok(())
}

fn cmd_label(config: &ExperimentConfig) -> anyhow::Result<()> {
    for plan in config.split_plans() {
        let name = &plan.spec.name;
        let count = label_dataset(
            &dataset_path(config, name),
            &environments_path(config, name),
            &MetricKind::ALL,
            &config.viewpoint,
            &labeled_path(config, name),
        )
        .with_context(|| format!("labeling {name}"))?;
        println!("label {name}: {count} records x 4 metrics");
    }
    Ok(())
}

// --- training ------------------------------------------------------------------

fn load_examples<T: Scalar>(
    config: &ExperimentConfig,
    split: &str,
    metric: MetricKind,
) -> anyhow::Result<Vec<TrainExample<T>>> {
    let records = load_labeled_dataset(&labeled_path(config, split))
        .with_context(|| format!("loading labeled split {split} (run gen + label first)"))?;
    let envs = EnvironmentsFile::load(&environments_path(config, split))?;
    Ok(prepare_examples(&records, &envs, metric)?)
}

fn train_slotv_once(
    config: &ExperimentConfig,
    examples: &[TrainExample<f32>],
    metric: MetricKind,
    repeat: usize,
) -> anyhow::Result<(ObserverModel<f32>, Vec<f64>, u64)> {
    let init_seed = config.init_seed("slotv", metric, repeat);
    let train_seed = config.train_seed("slotv", metric, repeat);
    let mut model = ObserverModel::init(
        LayerSpec::new(config.slotv.hidden_widths.clone()),
        &mut envgen::substream(init_seed, 0, 0),
    );
    let train_config = config.slotv_train_config(metric, train_seed);
    let history = slotv::train(&mut model, examples, &train_config)?;
    Ok((model, history, train_seed))
}

fn train_trex_once(
    config: &ExperimentConfig,
    examples: &[TrainExample<f32>],
    metric: MetricKind,
    repeat: usize,
) -> anyhow::Result<(RewardModel<f32>, Vec<f64>, u64)> {
    let init_seed = config.init_seed("trex", metric, repeat);
    let train_seed = config.train_seed("trex", metric, repeat);
    let mut model = RewardModel::init(
        LayerSpec::new(config.trex.hidden_widths.clone()),
        &mut envgen::substream(init_seed, 0, 0),
    );
    let train_config = config.trex_train_config(metric, train_seed);
    let history = trex::train_trex(&mut model, examples, &train_config)?;
    Ok((model, history, train_seed))
}

fn cmd_train_slotv(config: &ExperimentConfig, metric: MetricKind) -> anyhow::Result<()> {
    let examples = load_examples::<f32>(config, "training", metric)?;
    let t0 = Instant::now();
    let (model, history, train_seed) = train_slotv_once(config, &examples, metric, 0)?;
    std::fs::create_dir_all(models_dir(config))?;
    let path = models_dir(config).join(format!("slotv-{}.json", metric.name()));
    slotv::save_observer(&model, metric, train_seed, &path)?;
    println!(
        "trained slotv/{} in {:.1}s; epoch losses: {:?}",
        metric.name(),
        t0.elapsed().as_secs_f64(),
        history
    );
    println!("model written to {}", path.display());
    Ok(())
}

fn cmd_train_trex(config: &ExperimentConfig, metric: MetricKind) -> anyhow::Result<()> {
    let examples = load_examples::<f32>(config, "training", metric)?;
    let t0 = Instant::now();
    let (model, history, train_seed) = train_trex_once(config, &examples, metric, 0)?;
    std::fs::create_dir_all(models_dir(config))?;
    let path = models_dir(config).join(format!("trex-{}.json", metric.name()));
    trex::save_reward_model(&model, metric, train_seed, &path)?;
    println!(
        "trained trex/{} in {:.1}s; epoch losses: {:?}",
        metric.name(),
        t0.elapsed().as_secs_f64(),
        history
    );
    println!("model written to {}", path.display());
    Ok(())
}

// --- eval -------------------------------------------------------------------------

fn eval_model_file<T: Scalar>(
    file: &ModelFile,
    examples: &[TrainExample<T>],
    dataset: &str,
) -> anyhow::Result<EvalReport> {
    let mlp = legibility::nn::Mlp::<T>::from_json(&file.network)?;
    let spec = LayerSpec::new(file.network.widths.clone());
    let report = match file.framework.as_str() {
        "slotv" => slotv::evaluate(
            &ObserverModel { mlp, spec, n_points: file.n_points, g_max: file.g_max },
            examples,
            dataset,
        ),
        "trex" => trex::evaluate_trex(
            &RewardModel { mlp, spec, n_points: file.n_points, g_max: file.g_max },
            examples,
            dataset,
        ),
        other => bail!("unknown framework {other:?} in model file"),
    };
    Ok(report)
}

fn cmd_eval(
    model_path: &Path,
    dataset: &Path,
    environments: &Path,
    metric: MetricKind,
    report_path: Option<&Path>,
) -> anyhow::Result<()> {
    let file = ModelFile::load(model_path)
        .with_context(|| format!("loading model {}", model_path.display()))?;
    if file.n_points != N_POINTS {
        bail!(
            "model expects {} points per trajectory, this build uses {}",
            file.n_points,
            N_POINTS
        );
    }
    let records = load_labeled_dataset(dataset)?;
    let envs = EnvironmentsFile::load(environments)?;
    if let Some(env) = envs.environments.iter().find(|e| e.goals.len() > file.g_max) {
        bail!(
            "environment {} has {} goals but the model was trained with G_max {}",
            env.env_id,
            env.goals.len(),
            file.g_max
        );
    }
    let name = dataset.file_name().map(|s| s.to_string_lossy().into_owned());
    let name = name.as_deref().unwrap_or("dataset");
    let report = if file.network.precision == "f32" {
        let examples = prepare_examples::<f32>(&records, &envs, metric)?;
        eval_model_file(&file, &examples, name)?
    } else {
        let examples = prepare_examples::<f64>(&records, &envs, metric)?;
        eval_model_file(&file, &examples, name)?
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = report_path {
        std::fs::write(path, &json)?;
    }
    Ok(())
}

// --- table -------------------------------------------------------------------------

const EVAL_SPLITS: [&str; 4] = ["training", "trajectory-test", "position-test", "goalcount-test"];
const FRAMEWORKS: [&str; 2] = ["slotv", "trex"];

#[derive(serde::Serialize)]
struct TableOutput {
    config_hash: String,
    master_seed: u64,
    /// "framework/metric/split" -> aggregate
    cells: BTreeMap<String, CellStats>,
    failures: Vec<String>,
}

#[derive(serde::Serialize)]
struct CellStats {
    mean: f64,
    sd: f64,
    n: usize,
}

/// Mean and sample standard deviation.
fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn cmd_table(config: &ExperimentConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(models_dir(config))?;
    std::fs::create_dir_all(results_dir(config))?;
    let t_start = Instant::now();
    let mut runs: Vec<RunRecord> = Vec::new();
    let mut failures: Vec<String> = Vec::new();

    for metric in MetricKind::ALL {
        // example tensors are framework-independent; build them once per metric
        let mut splits: Vec<(&str, Vec<TrainExample<f32>>)> = Vec::new();
        for split in EVAL_SPLITS {
            splits.push((split, load_examples(config, split, metric)?));
        }
        let train_examples = &splits[0].1;

        for framework in FRAMEWORKS {
            for repeat in 0..config.n_repeats {
                let t0 = Instant::now();
                let cell = format!("{framework}/{}/r{repeat}", metric.name());
                let trained: anyhow::Result<(ModelFile, u64)> = (|| {
                    let model_path = models_dir(config)
                        .join(format!("{framework}-{}-r{repeat}.json", metric.name()));
                    let seed = match framework {
                        "slotv" => {
                            let (model, _, seed) =
                                train_slotv_once(config, train_examples, metric, repeat)?;
                            slotv::save_observer(&model, metric, seed, &model_path)?;
                            seed
                        }
                        _ => {
                            let (model, _, seed) =
                                train_trex_once(config, train_examples, metric, repeat)?;
                            trex::save_reward_model(&model, metric, seed, &model_path)?;
                            seed
                        }
                    };
                    Ok((ModelFile::load(&model_path)?, seed))
                })();
                let (file, seed) = match trained {
                    Ok(v) => v,
                    Err(e) => {
                        eprintln!("cell {cell} failed: {e:#}");
                        failures.push(format!("{cell}: {e:#}"));
                        continue;
                    }
                };
                let wall = t0.elapsed().as_secs_f64();
                for (split, examples) in &splits {
                    let report = eval_model_file(&file, examples, split)?;
                    runs.push(RunRecord {
                        framework: framework.to_string(),
                        metric: metric.name().to_string(),
                        split: split.to_string(),
                        repeat,
                        accuracy: report.accuracy,
                        wall_time_s: wall,
                        seed,
                    });
                }
                println!(
                    "table {cell}: trained in {wall:.1}s (total {:.1} min)",
                    t_start.elapsed().as_secs_f64() / 60.0
                );
            }
        }
    }

    // aggregate mean ± sd over repeats
    let mut cells: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for run in &runs {
        cells
            .entry(format!("{}/{}/{}", run.framework, run.metric, run.split))
            .or_default()
            .push(run.accuracy);
    }
    let mut csv = String::from("framework,metric,split,mean,sd,n\n");
    let mut stats = BTreeMap::new();
    for (key, values) in &cells {
        let (mean, sd) = mean_sd(values);
        let mut parts = key.splitn(3, '/');
        let (f, m, s) = (
            parts.next().unwrap(),
            parts.next().unwrap(),
            parts.next().unwrap(),
        );
        csv.push_str(&format!("{f},{m},{s},{mean},{sd},{}\n", values.len()));
        stats.insert(key.clone(), CellStats { mean, sd, n: values.len() });
    }
    std::fs::write(results_dir(config).join("table.csv"), &csv)?;
    let output = TableOutput {
        config_hash: config.hash(),
        master_seed: config.master_seed,
        cells: stats,
        failures,
    };
    std::fs::write(
        results_dir(config).join("table.json"),
        serde_json::to_string_pretty(&output)?,
    )?;
    std::fs::write(
        results_dir(config).join("runs.json"),
        serde_json::to_string_pretty(&runs)?,
    )?;
    println!(
        "table complete in {:.1} min -> {}",
        t_start.elapsed().as_secs_f64() / 60.0,
        results_dir(config).join("table.csv").display()
    );
    Ok(())
}

// --- curve -------------------------------------------------------------------------

fn average_curves(curves: &[Vec<CurvePoint>]) -> Vec<(usize, f64)> {
    // repeats can differ in length (tie-skipping changes the pair count);
    // average over the checkpoints shared by all repeats
    let min_len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..min_len)
        .map(|i| {
            let examples_seen = curves[0][i].examples_seen;
            let mean = curves.iter().map(|c| c[i].val_accuracy).sum::<f64>()
                / curves.len() as f64;
            (examples_seen, mean)
        })
        .collect()
}

fn cmd_curve(config: &ExperimentConfig, metric: MetricKind) -> anyhow::Result<()> {
    std::fs::create_dir_all(results_dir(config))?;
    let train_examples = load_examples::<f32>(config, "training", metric)?;
    let val_examples = load_examples::<f32>(config, "trajectory-val", metric)?;
    let t0 = Instant::now();

    let mut slotv_curves = Vec::new();
    let mut trex_curves = Vec::new();
    for repeat in 0..config.n_repeats {
        let mut model = ObserverModel::init(
            LayerSpec::new(config.slotv.hidden_widths.clone()),
            &mut envgen::substream(config.init_seed("slotv", metric, repeat), 0, 0),
        );
        let train_config = config
            .slotv_train_config(metric, config.train_seed("slotv", metric, repeat));
        slotv_curves.push(slotv::learning_curve(
            &mut model,
            &train_examples,
            &val_examples,
            &train_config,
            10,
        )?);

        let mut model = RewardModel::init(
            LayerSpec::new(config.trex.hidden_widths.clone()),
            &mut envgen::substream(config.init_seed("trex", metric, repeat), 0, 0),
        );
        let train_config =
            config.trex_train_config(metric, config.train_seed("trex", metric, repeat));
        trex_curves.push(trex::learning_curve_trex(
            &mut model,
            &train_examples,
            &val_examples,
            &train_config,
            10,
        )?);
        println!(
            "curve repeat {repeat} done ({:.1} min)",
            t0.elapsed().as_secs_f64() / 60.0
        );
    }

    let mut csv = String::from("framework,examples_seen,val_accuracy\n");
    for (framework, curves) in
        [("slotv", &slotv_curves), ("trex", &trex_curves)]
    {
        for (examples_seen, accuracy) in average_curves(curves) {
            csv.push_str(&format!("{framework},{examples_seen},{accuracy}\n"));
        }
    }
    let path = results_dir(config).join(format!("curve-{}.csv", metric.name()));
    std::fs::write(&path, &csv)?;
    println!("curve complete -> {}", path.display());
    Ok(())
}
