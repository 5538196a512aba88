//! The six subcommands, callable as library functions.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pano_nav_core::eval::{action_f1, build_report, EpisodeResult, MetricsReport, ReportRow, SplitManifest};
use pano_nav_core::localizer::{angular_error, grad_check, predict, train, LocalizerSample, TokenSequence};
use pano_nav_core::panocam::panoramic_sweep_state;
use pano_nav_core::policy::{
    localizer_samples, run_all_subgoals, run_episode, teacher_forced_actions, AngleFollower, ExpertPolicy, Guidance,
    Policy, RandomPolicy, Sensing, StepLog, StopReason,
};
use pano_nav_core::rng::combine;
use pano_nav_core::scenegen::replay_states;
use pano_nav_core::{
    generate_scene, generate_task, plan_expert, BoundingBox2D, ClassVocab, GenParams, LocalizerModel, ModelDims,
    Scene, Task, Trajectory, Vocabulary,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::RunConfig;
use crate::error::CliError;

pub const EVAL_SPLITS: [&str; 2] = ["valid_seen", "valid_unseen"];
pub const REPORT_CSV_HEADER: [&str; 6] = ["policy", "split", "action_f1", "nav_success", "goal_success", "goal_condition"];

/// Scene and task draws allowed per requested item before giving up.
const ATTEMPTS_PER_ITEM: u64 = 8;

/// Configuration plus the derived vocabularies and output directory.
pub struct Context {
    pub cfg: RunConfig,
    pub ws: Workspace,
    pub classes: ClassVocab,
    pub vocab: Vocabulary,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Self {
        let ws = Workspace::new(cfg.output_dir.clone(), cfg.digest());
        let classes = ClassVocab::standard(cfg.gen_params.class_vocab_size);
        let vocab = Vocabulary::new(&classes);
        Self { cfg, ws, classes, vocab }
    }

    pub fn sensing<'a>(&'a self, guidance: Guidance<'a>) -> Sensing<'a> {
        Sensing {
            camera: self.cfg.camera,
            mode: self.cfg.projection_mode,
            noise: self.cfg.noise_model,
            class_count: self.classes.len() as u32,
            vocab: &self.vocab,
            guidance,
        }
    }

    pub fn model_dims(&self) -> ModelDims {
        ModelDims::new(self.classes.len(), self.vocab.len(), self.cfg.model_dim)
    }

    /// Seed of one episode's detector draws and random policy.
    pub fn episode_seed(&self, split: &str, episode: u64) -> u64 {
        combine(self.cfg.split_seed(split), episode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeRecord {
    pub split: String,
    pub episode: u64,
    pub scene: Scene,
    pub task: Task,
    pub expert: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestSplit {
    pub name: String,
    pub scenes: usize,
    pub episodes: Vec<u64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Manifest {
    pub seed: u64,
    pub splits: Vec<ManifestSplit>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Option<&ManifestSplit> {
        self.splits.iter().find(|s| s.name == name)
    }
}

fn episodes_file(split: &str) -> String {
    format!("episodes/{split}.jsonl")
}

/// Scenes of a split, in order. `valid_seen` draws from the train
/// sequence so its scenes are the first train scenes.
fn scene_list(ctx: &Context, split: &str, count: usize) -> Result<Vec<Scene>, CliError> {
    let source = if split == "valid_seen" { "train" } else { split };
    let base = ctx.cfg.split_seed(source);
    let mut out = Vec::with_capacity(count);
    let limit = count as u64 * ATTEMPTS_PER_ITEM + 32;
    for attempt in 0..limit {
        if out.len() == count {
            break;
        }
        let seed = combine(base, attempt);
        let params = GenParams { seed, ..ctx.cfg.gen_params.clone() };
        match generate_scene(&params) {
            Ok(scene) => out.push(scene),
            Err(pano_nav_core::scenegen::GenError::InvalidParams(m)) => return Err(CliError::Config(m)),
            Err(_) => continue,
        }
    }
    if out.len() < count {
        return Err(CliError::Validation(format!("could only generate {} of {count} scenes for {split}", out.len())));
    }
    Ok(out)
}

/// Generates every episode of a split.
pub fn generate_split(ctx: &Context, split: &str) -> Result<Vec<EpisodeRecord>, CliError> {
    let spec = ctx.cfg.split_spec(split).ok_or_else(|| CliError::Validation(format!("unknown split {split:?}")))?;
    let scenes = scene_list(ctx, split, spec.scenes)?;
    let per_scene = spec.tasks_per_scene;
    let task_base = ctx.cfg.split_seed(split);
    let chunks: Vec<Result<Vec<EpisodeRecord>, CliError>> = scenes
        .par_iter()
        .enumerate()
        .map(|(si, scene)| {
            let mut out = Vec::with_capacity(per_scene);
            let scene_base = combine(task_base, si as u64);
            for attempt in 0..per_scene as u64 * ATTEMPTS_PER_ITEM + 16 {
                if out.len() == per_scene {
                    break;
                }
                let Ok(task) = generate_task(scene, &ctx.classes, combine(scene_base, attempt)) else { continue };
                let Ok(expert) = plan_expert(scene, &task) else { continue };
                out.push(EpisodeRecord {
                    split: split.to_string(),
                    episode: (si * per_scene + out.len()) as u64,
                    scene: scene.clone(),
                    task,
                    expert,
                });
            }
            if out.len() < per_scene {
                return Err(CliError::Validation(format!("scene {si} of {split} yields only {} feasible tasks", out.len())));
            }
            Ok(out)
        })
        .collect();
    let mut records = Vec::new();
    for c in chunks {
        records.extend(c?);
    }
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GenSummary {
    pub episodes: BTreeMap<String, usize>,
}

pub fn cmd_gen(ctx: &Context) -> Result<GenSummary, CliError> {
    let mut splits = Vec::new();
    let mut episodes = BTreeMap::new();
    for split in crate::config::SPLITS {
        let records = generate_split(ctx, split)?;
        ctx.ws.write_jsonl(&episodes_file(split), EPISODES_SCHEMA, &records)?;
        episodes.insert(split.to_string(), records.len());
        splits.push(ManifestSplit {
            name: split.to_string(),
            scenes: ctx.cfg.split_spec(split).map_or(0, |s| s.scenes),
            episodes: records.iter().map(|r| r.episode).collect(),
            file: episodes_file(split),
        });
    }
    ctx.ws.write_json("manifest.json", MANIFEST_SCHEMA, &Manifest { seed: ctx.cfg.seed, splits })?;
    Ok(GenSummary { episodes })
}

pub fn load_manifest(ctx: &Context) -> Result<Manifest, CliError> {
    ctx.ws.read_json("manifest.json", MANIFEST_SCHEMA)
}

pub fn load_split(ctx: &Context, manifest: &Manifest, split: &str) -> Result<Vec<EpisodeRecord>, CliError> {
    let entry = manifest
        .split(split)
        .ok_or_else(|| CliError::Validation(format!("manifest has no split {split:?}")))?;
    let records: Vec<EpisodeRecord> = ctx.ws.read_jsonl(&entry.file, EPISODES_SCHEMA)?;
    let ids: Vec<u64> = records.iter().map(|r| r.episode).collect();
    if ids != entry.episodes {
        return Err(CliError::Validation(format!("{} does not match the manifest", entry.file)));
    }
    Ok(records)
}

/// One navigation timestep: ground-truth sweep, its noisy detections and ψ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DataRecord {
    pub split: String,
    pub episode: u64,
    pub timestep: usize,
    pub sweep: Vec<BoundingBox2D>,
    pub sample: LocalizerSample,
}

pub fn data_records(ctx: &Context, records: &[EpisodeRecord]) -> Result<Vec<DataRecord>, CliError> {
    let sensing = ctx.sensing(Guidance::Zero);
    let per_episode: Vec<Result<Vec<DataRecord>, CliError>> = records
        .par_iter()
        .map(|r| {
            let seed = ctx.episode_seed(&r.split, r.episode);
            let samples = localizer_samples(&r.scene, &r.task, &r.expert, &sensing, seed);
            let states = replay_states(&r.scene, &r.task, &r.expert.actions)
                .map_err(|e| CliError::Validation(format!("episode {} replay: {e}", r.episode)))?;
            let nav_steps: Vec<usize> = (0..r.expert.actions.len())
                .filter(|&t| r.expert.subgoal_at(t).is_some_and(|k| r.task.subgoals[k].is_nav()))
                .collect();
            if nav_steps.len() != samples.len() {
                return Err(CliError::Validation(format!("episode {}: navigation steps and samples disagree", r.episode)));
            }
            Ok(nav_steps
                .into_iter()
                .zip(samples)
                .map(|(t, sample)| DataRecord {
                    split: r.split.clone(),
                    episode: r.episode,
                    timestep: t,
                    sweep: panoramic_sweep_state(&r.scene, &states[t], &ctx.cfg.camera, ctx.cfg.projection_mode),
                    sample,
                })
                .collect())
        })
        .collect();
    let mut out = Vec::new();
    for e in per_episode {
        out.extend(e?);
    }
    Ok(out)
}

pub const DATA_FILE: &str = "localizer_data.jsonl";
pub const VALID_DATA_FILE: &str = "localizer_valid.jsonl";

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DataSummary {
    pub train_samples: usize,
    pub valid_samples: usize,
}

/// Training samples from the train split; held-out samples from
/// `valid_unseen`.
pub fn cmd_build_data(ctx: &Context) -> Result<DataSummary, CliError> {
    let manifest = load_manifest(ctx)?;
    let train_records = data_records(ctx, &load_split(ctx, &manifest, "train")?)?;
    let valid_records = data_records(ctx, &load_split(ctx, &manifest, "valid_unseen")?)?;
    ctx.ws.write_jsonl(DATA_FILE, DATA_SCHEMA, &train_records)?;
    ctx.ws.write_jsonl(VALID_DATA_FILE, DATA_SCHEMA, &valid_records)?;
    Ok(DataSummary { train_samples: train_records.len(), valid_samples: valid_records.len() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Checkpoint {
    pub model: LocalizerModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainSummary {
    pub train_samples: usize,
    pub valid_samples: usize,
    pub epochs: usize,
    pub final_loss: f64,
    /// Mean absolute angular error in degrees.
    pub train_mae: f64,
    pub valid_mae: f64,
}

pub const CHECKPOINT_FILE: &str = "localizer.json";

fn inputs(ctx: &Context, records: &[DataRecord]) -> Vec<(TokenSequence, f64)> {
    records.iter().map(|r| (r.sample.to_input(&ctx.cfg.camera), r.sample.psi_true)).collect()
}

/// Mean absolute angular error of the model's predictions, in degrees.
pub fn mean_angular_error(model: &LocalizerModel, data: &[(TokenSequence, f64)]) -> Result<f64, CliError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let errs: Vec<Result<f64, CliError>> = data
        .par_iter()
        .map(|(seq, psi)| {
            let d = predict(model, seq)?;
            Ok(angular_error(d.angle().unwrap_or(0.0), *psi))
        })
        .collect();
    let mut total = 0.0;
    for e in errs {
        total += e?;
    }
    Ok(total / data.len() as f64)
}

pub fn train_on(ctx: &Context, train_data: &[(TokenSequence, f64)]) -> Result<(LocalizerModel, Vec<f64>), CliError> {
    let init = LocalizerModel::init(ctx.model_dims(), ctx.cfg.train.seed, ctx.cfg.train.init_scale);
    Ok(train(init, train_data, &ctx.cfg.train)?)
}

pub fn cmd_train(ctx: &Context) -> Result<TrainSummary, CliError> {
    let train_records: Vec<DataRecord> = ctx.ws.read_jsonl(DATA_FILE, DATA_SCHEMA)?;
    let valid_records: Vec<DataRecord> = ctx.ws.read_jsonl(VALID_DATA_FILE, DATA_SCHEMA)?;
    let train_data = inputs(ctx, &train_records);
    let valid_data = inputs(ctx, &valid_records);
    let (model, curve) = train_on(ctx, &train_data)?;
    let summary = TrainSummary {
        train_samples: train_data.len(),
        valid_samples: valid_data.len(),
        epochs: curve.len(),
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
        train_mae: mean_angular_error(&model, &train_data)?,
        valid_mae: mean_angular_error(&model, &valid_data)?,
    };
    #[derive(Serialize)]
    #[serde(rename_all = "camelCase")]
    struct Curve<'a> {
        loss_curve: &'a [f64],
    }
    ctx.ws.write_json(CHECKPOINT_FILE, CHECKPOINT_SCHEMA, &Checkpoint { model })?;
    ctx.ws.write_json("loss_curve.json", LOSS_CURVE_SCHEMA, &Curve { loss_curve: &curve })?;
    ctx.ws.write_json("train_summary.json", TRAIN_SUMMARY_SCHEMA, &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GradcheckPair {
    pub model_seed: u64,
    pub episode: u64,
    pub timestep: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GradcheckSummary {
    pub eps: f64,
    pub threshold: f64,
    pub max_relative_error: f64,
    pub passed: bool,
    pub pairs: Vec<GradcheckPair>,
}

/// Checks analytic gradients on `gradcheck.pairs` freshly initialized models,
/// each against a different sample drawn from the train split.
///
/// Returns the summary; the caller decides how to treat failure.
pub fn gradcheck(ctx: &Context) -> Result<GradcheckSummary, CliError> {
    let gc = &ctx.cfg.gradcheck;
    let episodes = generate_split(ctx, "train")?;
    let records = data_records(ctx, &episodes)?;
    if records.is_empty() {
        return Err(CliError::Validation("train split has no navigation samples".into()));
    }
    let dims = ctx.model_dims();
    let stride = (records.len() / gc.pairs.max(1)).max(1);
    let pairs: Vec<GradcheckPair> = (0..gc.pairs)
        .into_par_iter()
        .map(|i| {
            let r = &records[(i * stride) % records.len()];
            let model_seed = combine(ctx.cfg.seed, 0x6C00 + i as u64);
            let model = LocalizerModel::init(dims, model_seed, ctx.cfg.train.init_scale);
            let input = r.sample.to_input(&ctx.cfg.camera);
            GradcheckPair {
                model_seed,
                episode: r.episode,
                timestep: r.timestep,
                max_relative_error: grad_check(&model, &input, r.sample.psi_true, gc.eps),
            }
        })
        .collect();
    let max = pairs.iter().map(|p| p.max_relative_error).fold(0.0, f64::max);
    let passed = pairs.iter().all(|p| p.max_relative_error < gc.threshold);
    Ok(GradcheckSummary { eps: gc.eps, threshold: gc.threshold, max_relative_error: max, passed, pairs })
}

pub fn cmd_gradcheck(ctx: &Context) -> Result<GradcheckSummary, CliError> {
    let summary = gradcheck(ctx)?;
    ctx.ws.write_json("gradcheck.json", GRADCHECK_SCHEMA, &summary)?;
    if !summary.passed {
        return Err(CliError::Validation(format!(
            "gradient check failed: max relative error {:e} ≥ {:e}",
            summary.max_relative_error, summary.threshold
        )));
    }
    Ok(summary)
}

/// The navigation and interaction policy behind a roster name, with the
/// goal-direction source it consumes.
pub fn make_policy<'a>(
    name: &str,
    seed: u64,
    model: Option<&'a LocalizerModel>,
) -> Result<(Box<dyn Policy + 'a>, Guidance<'a>), CliError> {
    Ok(match name {
        "expert" => (Box::new(ExpertPolicy), Guidance::Zero),
        "random" => (Box::new(RandomPolicy::new(seed)), Guidance::Zero),
        "unguided" => (Box::new(AngleFollower::new("unguided")), Guidance::Zero),
        "heuristic" => (Box::new(AngleFollower::new("heuristic")), Guidance::Heuristic),
        "oracle" => (Box::new(AngleFollower::new("oracle")), Guidance::Oracle),
        "localizer" => {
            let m = model.ok_or_else(|| CliError::Validation("the localizer policy needs a trained checkpoint".into()))?;
            (Box::new(AngleFollower::new("localizer")), Guidance::Localizer(m))
        }
        other => return Err(CliError::Config(format!("unknown policy {other:?}"))),
    })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TrajectoryRecord {
    pub split: String,
    pub episode: u64,
    pub stop_reason: StopReason,
    pub goal_conditions: (usize, usize),
    pub steps: Vec<StepLog>,
}

/// Runs one policy through the three evaluation modes on one episode.
pub fn evaluate_episode(
    ctx: &Context,
    policy_name: &str,
    record: &EpisodeRecord,
    model: Option<&LocalizerModel>,
) -> Result<(EpisodeResult, TrajectoryRecord), CliError> {
    let seed = ctx.episode_seed(&record.split, record.episode);
    let (mut policy, guidance) = make_policy(policy_name, ctx.cfg.seed, model)?;
    let sensing = ctx.sensing(guidance);
    let opts = ctx.cfg.run_options();
    let (scene, task, expert) = (&record.scene, &record.task, &record.expert);
    let predicted = teacher_forced_actions(scene, task, expert, policy.as_mut(), &sensing, seed);
    let subgoals = run_all_subgoals(scene, task, expert, policy.as_mut(), &sensing, &opts, seed);
    let outcome = run_episode(scene, task, policy.as_mut(), &sensing, &opts, seed);
    let result = EpisodeResult {
        policy: policy_name.to_string(),
        split: record.split.clone(),
        episode: record.episode,
        action_f1: action_f1(&expert.actions, &predicted),
        subgoals,
        goal_conditions: outcome.goal_conditions_satisfied,
    };
    let traj = TrajectoryRecord {
        split: record.split.clone(),
        episode: record.episode,
        stop_reason: outcome.stop_reason,
        goal_conditions: outcome.goal_conditions_satisfied,
        steps: outcome.log,
    };
    Ok((result, traj))
}

/// Report, per-episode results, and trajectories keyed by policy.
pub type Evaluation = (MetricsReport, Vec<EpisodeResult>, BTreeMap<String, Vec<TrajectoryRecord>>);

/// Evaluates every roster policy on every episode of the given splits.
pub fn evaluate(
    ctx: &Context,
    splits: &[(String, Vec<EpisodeRecord>)],
    model: Option<&LocalizerModel>,
) -> Result<Evaluation, CliError> {
    let jobs: Vec<(&str, &EpisodeRecord)> = ctx
        .cfg
        .policies
        .iter()
        .flat_map(|p| splits.iter().flat_map(move |(_, recs)| recs.iter().map(move |r| (p.as_str(), r))))
        .collect();
    let outputs: Vec<Result<(EpisodeResult, TrajectoryRecord), CliError>> =
        jobs.par_iter().map(|(p, r)| evaluate_episode(ctx, p, r, model)).collect();
    let mut results = Vec::with_capacity(outputs.len());
    let mut trajectories: BTreeMap<String, Vec<TrajectoryRecord>> = BTreeMap::new();
    for o in outputs {
        let (res, traj) = o?;
        trajectories.entry(res.policy.clone()).or_default().push(traj);
        results.push(res);
    }
    let manifests: Vec<SplitManifest> = splits
        .iter()
        .map(|(name, recs)| SplitManifest { name: name.clone(), episodes: recs.iter().map(|r| r.episode).collect() })
        .collect();
    let report = build_report(&manifests, &ctx.cfg.policies, &results, &ctx.ws.digest, &[ctx.cfg.seed])?;
    Ok((report, results, trajectories))
}

pub fn load_checkpoint(ctx: &Context) -> Result<LocalizerModel, CliError> {
    let c: Checkpoint = ctx.ws.read_json(CHECKPOINT_FILE, CHECKPOINT_SCHEMA)?;
    if c.model.dims != ctx.model_dims() || c.model.params.len() != c.model.dims.param_count() {
        return Err(CliError::Validation("checkpoint dimensions do not match the configuration".into()));
    }
    Ok(c.model)
}

pub fn cmd_eval(ctx: &Context) -> Result<MetricsReport, CliError> {
    let manifest = load_manifest(ctx)?;
    let model = if ctx.cfg.policies.iter().any(|p| p == "localizer") { Some(load_checkpoint(ctx)?) } else { None };
    let mut splits = Vec::new();
    for s in EVAL_SPLITS {
        splits.push((s.to_string(), load_split(ctx, &manifest, s)?));
    }
    let (report, results, trajectories) = evaluate(ctx, &splits, model.as_ref())?;
    ctx.ws.write_jsonl("results.jsonl", RESULTS_SCHEMA, &results)?;
    for (policy, trajs) in &trajectories {
        ctx.ws.write_jsonl(&format!("trajectories/{policy}.jsonl"), TRAJECTORY_SCHEMA, trajs)?;
    }
    ctx.ws.write_json("report.json", REPORT_SCHEMA, &report)?;
    ctx.ws.write_text("report.csv", &report_csv(&report.rows)?)?;
    Ok(report)
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// CSV rendition of report rows. Absent navigation rates are empty cells.
pub fn report_csv(rows: &[ReportRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Validation(format!("csv: {e}"));
    w.write_record(REPORT_CSV_HEADER).map_err(err)?;
    for r in rows {
        w.write_record([
            r.policy.clone(),
            r.split.clone(),
            fmt_f64(r.action_f1),
            r.nav_success.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.goal_success),
            fmt_f64(r.goal_condition),
        ])
        .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Validation(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| CliError::Validation(format!("csv: {e}")))
}

/// The CSV columns of one row, parsed back.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub policy: String,
    pub split: String,
    pub action_f1: f64,
    pub nav_success: Option<f64>,
    pub goal_success: f64,
    pub goal_condition: f64,
}

impl From<&ReportRow> for CsvRow {
    fn from(r: &ReportRow) -> Self {
        Self {
            policy: r.policy.clone(),
            split: r.split.clone(),
            action_f1: r.action_f1,
            nav_success: r.nav_success,
            goal_success: r.goal_success,
            goal_condition: r.goal_condition,
        }
    }
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>, CliError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> =
        r.headers().map_err(|e| CliError::Validation(format!("csv: {e}")))?.iter().map(str::to_string).collect();
    if header != REPORT_CSV_HEADER {
        return Err(CliError::Validation(format!("unexpected csv header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| CliError::Validation(format!("csv: {e}")))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub sources: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

/// Merges report.json files that share one config digest. Identical rows
/// from several inputs collapse; conflicting rows are an error.
pub fn cmd_report(out: &std::path::Path, inputs: &[PathBuf]) -> Result<Comparison, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Validation("report needs at least one report.json".into()));
    }
    let mut digest: Option<String> = None;
    let mut rows: BTreeMap<(String, String), ReportRow> = BTreeMap::new();
    let mut seeds = Vec::new();
    for path in inputs {
        let (d, report): (String, MetricsReport) = read_json_any(path, REPORT_SCHEMA)?;
        match &digest {
            Some(first) if *first != d => {
                return Err(CliError::DigestMismatch { path: path.clone(), expected: first.clone(), found: d });
            }
            _ => digest = Some(d),
        }
        seeds.extend(report.seeds);
        for row in report.rows {
            let key = (row.policy.clone(), row.split.clone());
            match rows.get(&key) {
                Some(existing) if *existing != row => {
                    return Err(CliError::Validation(format!(
                        "{}: conflicting results for policy {:?} on {:?}",
                        path.display(),
                        key.0,
                        key.1
                    )));
                }
                _ => {
                    rows.insert(key, row);
                }
            }
        }
    }
    seeds.sort_unstable();
    seeds.dedup();
    let comparison = Comparison {
        sources: inputs.iter().map(|p| p.display().to_string()).collect(),
        seeds,
        rows: rows.into_values().collect(),
    };
    let ws = Workspace::new(out, digest.unwrap_or_default());
    ws.write_json("comparison.json", COMPARISON_SCHEMA, &comparison)?;
    ws.write_text("comparison.csv", &report_csv(&comparison.rows)?)?;
    Ok(comparison)
}
