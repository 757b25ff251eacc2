//! Continual-learning metrics over evaluation-time success curves:
//! average performance, forward transfer and forgetting, plus Student-t
//! confidence intervals and the curve CSV format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Success rate of one task sampled at global steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessCurve {
    pub task_id: usize,
    pub steps_per_task: u64,
    pub num_tasks: usize,
    samples: Vec<(u64, f64)>,
}

impl SuccessCurve {
    /// `samples` must be sorted by step with rates in `[0, 1]`.
    pub fn new(task_id: usize, steps_per_task: u64, num_tasks: usize, samples: Vec<(u64, f64)>) -> Result<Self> {
        if task_id == 0 || task_id > num_tasks {
            return Err(Error::Input(format!("task {task_id} outside 1..={num_tasks}")));
        }
        if steps_per_task == 0 {
            return Err(Error::Input("steps per task must be positive".into()));
        }
        if samples.windows(2).any(|w| w[0].0 > w[1].0) {
            return Err(Error::Input(format!("curve for task {task_id} is not sorted by step")));
        }
        if let Some((t, p)) = samples.iter().find(|(_, p)| !(0.0..=1.0).contains(p)) {
            return Err(Error::Input(format!("success rate {p} at step {t} outside [0, 1]")));
        }
        Ok(Self {
            task_id,
            steps_per_task,
            num_tasks,
            samples,
        })
    }

    pub fn samples(&self) -> &[(u64, f64)] {
        &self.samples
    }

    /// Total steps `T = steps_per_task * num_tasks`.
    pub fn horizon(&self) -> u64 {
        self.steps_per_task * self.num_tasks as u64
    }

    /// The task's own training window `[(i-1) delta, i delta]`.
    pub fn window(&self) -> (u64, u64) {
        let d = self.steps_per_task;
        ((self.task_id as u64 - 1) * d, self.task_id as u64 * d)
    }

    /// Last recorded value at or before `t`; zero before the first sample.
    pub fn value_at(&self, t: u64) -> f64 {
        match self.samples.partition_point(|(s, _)| *s <= t) {
            0 => 0.0,
            k => self.samples[k - 1].1,
        }
    }

    /// Trapezoidal area over `[start, end]` divided by its length. Interior
    /// samples are used as recorded; the endpoints take carried-forward
    /// values when no sample falls exactly on them.
    pub fn normalized_auc(&self, start: u64, end: u64) -> Result<f64> {
        if end <= start {
            return Err(Error::Input(format!("empty window [{start}, {end}]")));
        }
        let mut pts = vec![(start, self.value_at(start))];
        pts.extend(self.samples.iter().copied().filter(|(t, _)| *t > start && *t < end));
        pts.push((end, self.value_at(end)));
        // accumulate deviations from the first value so a constant curve is exact
        let base = pts[0].1;
        let width = (end - start) as f64;
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) as f64 * (0.5 * (w[0].1 - base) + 0.5 * (w[1].1 - base)))
            .sum();
        Ok(base + area / width)
    }
}

fn check_family(curves: &[SuccessCurve]) -> Result<(u64, usize)> {
    let first = curves.first().ok_or_else(|| Error::Input("no curves given".into()))?;
    let (d, n) = (first.steps_per_task, first.num_tasks);
    if curves.iter().any(|c| c.steps_per_task != d || c.num_tasks != n) {
        return Err(Error::Input("curves disagree on steps per task or task count".into()));
    }
    Ok((d, n))
}

/// `P(t)`: mean success over the given curves at step `t`.
pub fn average_performance(curves: &[SuccessCurve], t: u64) -> Result<f64> {
    check_family(curves)?;
    Ok(curves.iter().map(|c| c.value_at(t)).sum::<f64>() / curves.len() as f64)
}

/// `FT_i = (AUC_i - AUC_i^b) / (1 - AUC_i^b)` over the task's own window.
/// Returns NaN (with a warning) when the reference area is 1.
pub fn forward_transfer(curve: &SuccessCurve, reference: &SuccessCurve) -> Result<f64> {
    if curve.task_id != reference.task_id || curve.steps_per_task != reference.steps_per_task {
        return Err(Error::Input("reference curve belongs to another task or window".into()));
    }
    let (start, end) = curve.window();
    let auc = curve.normalized_auc(start, end)?;
    let auc_ref = reference.normalized_auc(start, end)?;
    if auc_ref == 1.0 {
        log::warn!(
            "forward transfer undefined for task {}: reference area is 1",
            curve.task_id
        );
        return Ok(f64::NAN);
    }
    Ok((auc - auc_ref) / (1.0 - auc_ref))
}

/// Mean of the defined per-task forward transfers; NaN if none is defined.
pub fn mean_forward_transfer(curves: &[SuccessCurve], references: &[SuccessCurve]) -> Result<f64> {
    check_family(curves)?;
    let mut vals = Vec::new();
    for c in curves {
        let r = references
            .iter()
            .find(|r| r.task_id == c.task_id)
            .ok_or_else(|| Error::Input(format!("no reference curve for task {}", c.task_id)))?;
        let ft = forward_transfer(c, r)?;
        if ft.is_finite() {
            vals.push(ft);
        }
    }
    if vals.is_empty() {
        return Ok(f64::NAN);
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `CF = (1/N) sum_i (p_i(i delta) - p_i(T))`.
pub fn catastrophic_forgetting(curves: &[SuccessCurve]) -> Result<f64> {
    check_family(curves)?;
    let total: f64 = curves
        .iter()
        .map(|c| c.value_at(c.window().1) - c.value_at(c.horizon()))
        .sum();
    Ok(total / curves.len() as f64)
}

/// `mean -/+ t_{(1+level)/2, n-1} * sd / sqrt(n)`.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Input("a confidence interval needs at least two values".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Input(format!("confidence level {level} outside (0, 1)")));
    }
    if values.iter().all(|v| *v == values[0]) {
        return Ok((values[0], values[0]));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numeric(format!("student t: {e}")))?
        .inverse_cdf(0.5 + level / 2.0);
    let half = t * var.sqrt() / (n as f64).sqrt();
    Ok((mean - half, mean + half))
}

/// One row of a curves CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub task_id: usize,
    pub step: u64,
    pub success_rate: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn write_curves<W: Write>(out: W, records: &[CurveRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves<R: Read>(input: R) -> Result<Vec<CurveRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rd.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

/// Groups records by seed (records without a seed fall under 0) into one
/// curve per task, ordered by task id.
pub fn curves_from_records(
    records: &[CurveRecord],
    steps_per_task: u64,
    num_tasks: usize,
) -> Result<BTreeMap<u64, Vec<SuccessCurve>>> {
    let mut grouped: BTreeMap<u64, BTreeMap<usize, Vec<(u64, f64)>>> = BTreeMap::new();
    for r in records {
        grouped
            .entry(r.seed.unwrap_or(0))
            .or_default()
            .entry(r.task_id)
            .or_default()
            .push((r.step, r.success_rate));
    }
    grouped
        .into_iter()
        .map(|(seed, tasks)| {
            let curves = tasks
                .into_iter()
                .map(|(task, mut s)| {
                    s.sort_by_key(|x| x.0);
                    SuccessCurve::new(task, steps_per_task, num_tasks, s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((seed, curves))
        })
        .collect()
}
