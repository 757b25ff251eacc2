//! Experiment orchestration: seeding, task sequencing, single-task
//! references, ablations, runtime tables and on-disk artifacts.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, ExperimentSection};

use crate::augment::{AugmentationConfig, AugmentationKind, Augmenter, EpisodicMemory};
use crate::continual::MethodState;
use crate::env::{self, TaskSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, CurveRecord, SuccessCurve};
use crate::sac::{
    evaluate, stream_seed, train_task, NoHook, ReplayBuffer, SacAgent, Streams, TrainOptions, UpdatePath,
};

/// Confidence level used for every reported interval.
pub const CI_LEVEL: f64 = 0.90;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub path: UpdatePath,
    pub jobs: usize,
    /// Write curves, result, runtime and checkpoints under the output dir.
    pub write_outputs: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            path: UpdatePath::Augmented,
            jobs: 1,
            write_outputs: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Student-t interval at [`CI_LEVEL`]; absent with fewer than two values.
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("cannot summarize an empty list".into()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (ci_low, ci_high) = if values.len() >= 2 {
            let (lo, hi) = metrics::confidence_interval(values, CI_LEVEL)?;
            (Some(lo), Some(hi))
        } else {
            (None, None)
        };
        Ok(Self {
            mean,
            ci_low,
            ci_high,
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub final_performance: f64,
    pub forgetting: f64,
    pub forward_transfer: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub label: String,
    pub config_hash: String,
    pub sequence: String,
    pub steps_per_task: usize,
    pub num_tasks: usize,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<FailedSeed>,
    pub per_seed: Vec<SeedMetrics>,
    pub final_performance: MetricSummary,
    pub forgetting: MetricSummary,
    pub forward_transfer: Option<MetricSummary>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub runtime_seconds: f64,
    #[serde(skip)]
    pub curves: Vec<CurveRecord>,
}

impl RunResult {
    /// The JSON form with wall-clock fields removed.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("runtime_seconds");
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// Curves of one seed plus its wall-clock time.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<CurveRecord>,
    pub runtime_seconds: f64,
}

fn augmenter_for(aug: &AugmentationConfig, seed: u64) -> Result<Augmenter> {
    let mut cfg = aug.clone();
    cfg.rng_seed = stream_seed(&format!("augment:{}", aug.rng_seed), seed);
    Augmenter::new(cfg, env::state_bounds(), env::switchable_pairs())
}

fn new_agent(cfg: &ExperimentConfig, label: &str, seed: u64) -> Result<SacAgent> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(label, seed));
    SacAgent::new(cfg.sac.clone(), env::STATE_DIM, env::ACTION_DIM, &mut rng)
}

/// Trains one seed through the whole sequence and returns its curves.
///
/// Task `k` is evaluated when it starts; every task seen so far is evaluated
/// each `eval_interval` steps and once more after the task-boundary
/// bookkeeping (EWC consolidation, PackNet pruning, memory append).
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, path: UpdatePath, checkpoints: Option<&Path>) -> Result<SeedRun> {
    let start = Instant::now();
    let e = &cfg.experiment;
    let tasks = env::make_sequence(e.sequence, e.sequence_seed);
    let mut streams = Streams::from_seed(seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(stream_seed("eval", seed));
    let mut agent = new_agent(cfg, "init", seed)?;
    let mut augmenter = augmenter_for(&cfg.augmentation, seed)?;
    let mut method = MethodState::new(&cfg.continual, &agent, tasks.len(), e.steps_per_task)?;
    let mut memory = EpisodicMemory::new(e.memory_budget);
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity);
    let mut records = Vec::new();
    let delta = e.steps_per_task;

    for (k, task) in tasks.iter().enumerate() {
        let offset = (k * delta) as u64;
        if e.reset_buffer_per_task {
            buffer.clear();
        }
        let p = evaluate(&method.eval_policy(&agent, task.task_id), task, e.eval_episodes, &mut eval_rng)?;
        records.push(CurveRecord {
            task_id: task.task_id,
            step: offset,
            success_rate: p,
            seed: Some(seed),
        });
        let seen = &tasks[..=k];
        // evaluation masks only change at task boundaries
        let snapshot = method.clone();
        let rng = &mut eval_rng;
        let rec = &mut records;
        let mut on_eval = |local: usize, ag: &SacAgent| -> Result<bool> {
            if local < delta {
                evaluate_seen(&snapshot, ag, seen, offset + local as u64, e.eval_episodes, seed, rng, rec)?;
            }
            Ok(true)
        };
        let opts = TrainOptions {
            steps: delta,
            eval_interval: e.eval_interval,
            path,
        };
        train_task(
            &mut agent,
            task,
            opts,
            &mut buffer,
            &mut augmenter,
            &memory,
            &mut method,
            &mut streams,
            &mut on_eval,
        )?;
        method.end_task(&mut agent, task.task_id, &buffer, &mut streams)?;
        memory.append(task.task_id, buffer.transitions(), &mut streams.memory)?;
        if let Some(dir) = checkpoints {
            agent.save(&dir.join(format!("seed_{seed}")).join(format!("task_{}", task.task_id)))?;
        }
        evaluate_seen(&method, &agent, seen, offset + delta as u64, e.eval_episodes, seed, &mut eval_rng, &mut records)?;
        log::info!("seed {seed}: finished task {} of {}", task.task_id, tasks.len());
    }
    Ok(SeedRun {
        seed,
        records,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_seen(
    method: &MethodState,
    agent: &SacAgent,
    seen: &[TaskSpec],
    step: u64,
    episodes: usize,
    seed: u64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<CurveRecord>,
) -> Result<()> {
    for t in seen {
        let p = evaluate(&method.eval_policy(agent, t.task_id), t, episodes, rng)?;
        out.push(CurveRecord {
            task_id: t.task_id,
            step,
            success_rate: p,
            seed: Some(seed),
        });
    }
    Ok(())
}

/// Runs `work` for every seed on up to `jobs` threads; results keep seed order.
fn for_each_seed<T: Send>(seeds: &[u64], jobs: usize, work: impl Fn(u64) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, seeds.len().max(1));
    if jobs == 1 {
        return seeds.iter().map(|&s| work(s)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = work(seeds[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Loads reference curves keyed by seed.
pub fn load_references(path: &Path, steps_per_task: usize, num_tasks: usize) -> Result<BTreeMap<u64, Vec<SuccessCurve>>> {
    let records = metrics::read_curves(File::open(path)?)?;
    metrics::curves_from_records(&records, steps_per_task as u64, num_tasks)
}

fn seed_metrics(
    seed: u64,
    curves: &[SuccessCurve],
    references: Option<&BTreeMap<u64, Vec<SuccessCurve>>>,
) -> Result<SeedMetrics> {
    let horizon = curves[0].horizon();
    let forward_transfer = match references {
        None => None,
        Some(refs) => match refs.get(&seed) {
            Some(r) => Some(metrics::mean_forward_transfer(curves, r)?).filter(|v| v.is_finite()),
            None => {
                log::warn!("no reference curves for seed {seed}; forward transfer skipped");
                None
            }
        },
    };
    Ok(SeedMetrics {
        seed,
        final_performance: metrics::average_performance(curves, horizon)?,
        forgetting: metrics::catastrophic_forgetting(curves)?,
        forward_transfer,
    })
}

/// Trains every configured seed through the sequence, aggregates the metrics
/// and (optionally) persists artifacts under `experiment.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let start = Instant::now();
    let e = &cfg.experiment;
    let num_tasks = e.sequence.len();
    let out = &e.output_dir;
    let checkpoints = opts.write_outputs.then(|| out.join("checkpoints"));
    if opts.write_outputs {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("config.toml"), cfg.canonical_string()?)?;
    }
    let references = match &e.reference_curves {
        Some(p) => Some(load_references(p, e.steps_per_task, num_tasks)?),
        None => {
            log::warn!("no reference curves configured; forward transfer skipped");
            None
        }
    };

    let outcomes = for_each_seed(&e.seeds, opts.jobs, |seed| {
        (seed, run_seed(cfg, seed, opts.path, checkpoints.as_deref()))
    });

    let mut failed = Vec::new();
    let mut per_seed = Vec::new();
    let mut curves = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(run) => {
                let grouped = metrics::curves_from_records(&run.records, e.steps_per_task as u64, num_tasks)?;
                let seed_curves = grouped
                    .get(&seed)
                    .ok_or_else(|| Error::Run(format!("seed {seed} produced no curves")))?;
                per_seed.push(seed_metrics(seed, seed_curves, references.as_ref())?);
                curves.extend(run.records);
            }
            Err(err) => {
                log::error!("seed {seed} failed: {err}");
                failed.push(FailedSeed {
                    seed,
                    error: err.to_string(),
                });
            }
        }
    }
    if per_seed.is_empty() {
        return Err(Error::Run(format!("all {} seeds failed", failed.len())));
    }
    let col = |f: fn(&SeedMetrics) -> f64| per_seed.iter().map(f).collect::<Vec<_>>();
    let fts: Vec<f64> = per_seed.iter().filter_map(|m| m.forward_transfer).collect();
    let result = RunResult {
        label: cfg.label(),
        config_hash: cfg.hash()?,
        sequence: e.sequence.to_string(),
        steps_per_task: e.steps_per_task,
        num_tasks,
        seeds: e.seeds.clone(),
        failed_seeds: failed,
        final_performance: MetricSummary::from_values(&col(|m| m.final_performance))?,
        forgetting: MetricSummary::from_values(&col(|m| m.forgetting))?,
        forward_transfer: if fts.is_empty() {
            None
        } else {
            Some(MetricSummary::from_values(&fts)?)
        },
        per_seed,
        runtime_seconds: start.elapsed().as_secs_f64(),
        curves,
    };
    if opts.write_outputs {
        metrics::write_curves(BufWriter::new(File::create(out.join("curves.csv"))?), &result.curves)?;
        std::fs::write(out.join("result.json"), serde_json::to_string_pretty(&result)?)?;
        let rows = report_runtime(&[(result.label.clone(), result.runtime_seconds)], &result.label)?;
        write_csv(&out.join("runtime.csv"), &rows)?;
    }
    Ok(result)
}

/// Trains each task alone from fresh parameters with plain SAC and returns
/// curves on the global step axis (task `i` occupies `[(i-1) delta, i delta]`).
/// With `reference_stop_at`, a run stops once it reaches that success rate
/// and its last value is carried forward.
pub fn run_reference(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<CurveRecord>> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let tasks = env::make_sequence(e.sequence, e.sequence_seed);
    let outcomes = for_each_seed(&e.seeds, opts.jobs, |seed| -> Result<Vec<CurveRecord>> {
        let mut out = Vec::new();
        for task in &tasks {
            out.extend(reference_curve(cfg, task, seed)?);
        }
        Ok(out)
    });
    let mut records = Vec::new();
    for o in outcomes {
        records.extend(o?);
    }
    if opts.write_outputs {
        std::fs::create_dir_all(&e.output_dir)?;
        metrics::write_curves(
            BufWriter::new(File::create(e.output_dir.join("reference.csv"))?),
            &records,
        )?;
    }
    Ok(records)
}

/// Single-task plain-SAC curve for one task and seed.
pub fn reference_curve(cfg: &ExperimentConfig, task: &TaskSpec, seed: u64) -> Result<Vec<CurveRecord>> {
    let e = &cfg.experiment;
    let label = format!("reference:{}", task.task_id);
    let run_seed = stream_seed(&label, seed);
    let mut streams = Streams::from_seed(run_seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(stream_seed("eval", run_seed));
    let mut agent = new_agent(cfg, &label, seed)?;
    let mut augmenter = Augmenter::identity(env::state_bounds());
    let mut buffer = ReplayBuffer::new(cfg.sac.buffer_capacity);
    let offset = ((task.task_id - 1) * e.steps_per_task) as u64;
    let mut records = vec![CurveRecord {
        task_id: task.task_id,
        step: offset,
        success_rate: evaluate(agent.policy(), task, e.eval_episodes, &mut eval_rng)?,
        seed: Some(seed),
    }];
    let stop = e.reference_stop_at;
    let mut last = records[0].success_rate;
    let stats = train_task(
        &mut agent,
        task,
        TrainOptions {
            steps: e.steps_per_task,
            eval_interval: e.eval_interval,
            path: UpdatePath::Plain,
        },
        &mut buffer,
        &mut augmenter,
        &EpisodicMemory::new(0),
        &mut NoHook,
        &mut streams,
        &mut |local, ag| {
            last = evaluate(ag.policy(), task, e.eval_episodes, &mut eval_rng)?;
            records.push(CurveRecord {
                task_id: task.task_id,
                step: offset + local as u64,
                success_rate: last,
                seed: Some(seed),
            });
            Ok(stop.is_none_or(|s| last < s))
        },
    )?;
    let end = offset + e.steps_per_task as u64;
    if records.last().map(|r| r.step) != Some(end) {
        let p = if stats.steps < e.steps_per_task {
            last
        } else {
            evaluate(agent.policy(), task, e.eval_episodes, &mut eval_rng)?
        };
        records.push(CurveRecord {
            task_id: task.task_id,
            step: end,
            success_rate: p,
            seed: Some(seed),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Memory,
    Epsilon,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" | "memory_size" => Ok(AblationAxis::Memory),
            "epsilon" => Ok(AblationAxis::Epsilon),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

/// Memory budgets compared in the ablation.
pub const MEMORY_GRID: [usize; 3] = [0, 5_000, 10_000];
/// Perturbation radii compared in the ablation.
pub const EPSILON_GRID: [f64; 2] = [0.01, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: String,
    pub value: String,
    pub label: String,
    pub final_performance: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub forgetting: f64,
    pub forward_transfer: Option<f64>,
    pub runtime_seconds: f64,
}

/// One experiment per grid point, each in its own subdirectory, plus
/// `ablation_<axis>.csv` comparing them.
pub fn run_ablation(base: &ExperimentConfig, axis: AblationAxis, opts: RunOptions) -> Result<(Vec<AblationRow>, Vec<RunResult>)> {
    let points: Vec<(String, ExperimentConfig)> = match axis {
        AblationAxis::Memory => MEMORY_GRID
            .iter()
            .map(|&m| {
                let mut c = base.clone();
                c.experiment.memory_budget = m;
                (m.to_string(), c)
            })
            .collect(),
        AblationAxis::Epsilon => EPSILON_GRID
            .iter()
            .map(|&eps| {
                let mut c = base.clone();
                c.augmentation.epsilon = eps;
                (eps.to_string(), c)
            })
            .collect(),
    };
    let axis_name = match axis {
        AblationAxis::Memory => "memory",
        AblationAxis::Epsilon => "epsilon",
    };
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (value, mut cfg) in points {
        cfg.experiment.output_dir = base.experiment.output_dir.join(format!("{axis_name}_{value}"));
        let r = run_experiment(&cfg, opts)?;
        rows.push(AblationRow {
            axis: axis_name.to_string(),
            value,
            label: r.label.clone(),
            final_performance: r.final_performance.mean,
            ci_low: r.final_performance.ci_low,
            ci_high: r.final_performance.ci_high,
            forgetting: r.forgetting.mean,
            forward_transfer: r.forward_transfer.as_ref().map(|f| f.mean),
            runtime_seconds: r.runtime_seconds,
        });
        results.push(r);
    }
    if opts.write_outputs {
        std::fs::create_dir_all(&base.experiment.output_dir)?;
        write_csv(&base.experiment.output_dir.join(format!("ablation_{axis_name}.csv")), &rows)?;
    }
    Ok((rows, results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub label: String,
    pub runtime_seconds: f64,
    pub relative: f64,
}

/// Rounds to two significant figures.
pub fn two_significant(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    // divide by an exact power of ten rather than multiplying by its
    // inexact reciprocal
    let e = 1 - x.abs().log10().floor() as i32;
    if e >= 0 {
        let scale = 10f64.powi(e);
        (x * scale).round() / scale
    } else {
        let scale = 10f64.powi(-e);
        (x / scale).round() * scale
    }
}

/// Each runtime divided by the baseline's, to two significant figures.
pub fn report_runtime(runs: &[(String, f64)], baseline: &str) -> Result<Vec<RuntimeRow>> {
    let base = runs
        .iter()
        .find(|(l, _)| l == baseline)
        .map(|(_, t)| *t)
        .ok_or_else(|| Error::Input(format!("baseline {baseline:?} missing from runtime table")))?;
    if !(base > 0.0) {
        return Err(Error::Input("baseline runtime must be positive".into()));
    }
    Ok(runs
        .iter()
        .map(|(label, t)| RuntimeRow {
            label: label.clone(),
            runtime_seconds: *t,
            relative: if label == baseline { 1.0 } else { two_significant(t / base) },
        })
        .collect())
}

/// Times one experiment per augmentation kind against the same method with
/// no augmentation and writes `runtime.csv`.
pub fn bench(base: &ExperimentConfig, kinds: &[AugmentationKind], opts: RunOptions) -> Result<Vec<RuntimeRow>> {
    let mut runs = Vec::new();
    let mut baseline = String::new();
    let mut all = vec![AugmentationKind::None];
    all.extend(kinds.iter().copied().filter(|k| *k != AugmentationKind::None));
    for kind in all {
        let mut cfg = base.clone();
        cfg.augmentation.kind = kind;
        cfg.experiment.output_dir = base.experiment.output_dir.join(kind.as_str());
        let r = run_experiment(&cfg, RunOptions { write_outputs: false, ..opts })?;
        if kind == AugmentationKind::None {
            baseline = r.label.clone();
        }
        log::info!("bench {}: {:.2}s", r.label, r.runtime_seconds);
        runs.push((r.label, r.runtime_seconds));
    }
    let rows = report_runtime(&runs, &baseline)?;
    if opts.write_outputs {
        std::fs::create_dir_all(&base.experiment.output_dir)?;
        write_csv(&base.experiment.output_dir.join("runtime.csv"), &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub label: String,
    pub seeds: usize,
    pub failed: usize,
    pub final_performance: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub forgetting: f64,
    pub forward_transfer: Option<f64>,
    pub runtime_seconds: f64,
}

/// Collects `result.json` from each run directory into one table.
pub fn report(dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    dirs.iter()
        .map(|d| {
            let r: RunResult = serde_json::from_str(&std::fs::read_to_string(d.join("result.json"))?)?;
            Ok(ReportRow {
                run: d.display().to_string(),
                label: r.label,
                seeds: r.per_seed.len(),
                failed: r.failed_seeds.len(),
                final_performance: r.final_performance.mean,
                ci_low: r.final_performance.ci_low,
                ci_high: r.final_performance.ci_high,
                forgetting: r.forgetting.mean,
                forward_transfer: r.forward_transfer.map(|f| f.mean),
                runtime_seconds: r.runtime_seconds,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
