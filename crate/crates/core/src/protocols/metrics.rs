use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Protocol, ProtocolPlan, TaskSplit};
use crate::data::DatasetContainer;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numerics::Dense2D;

pub const METRICS_SCHEMA: &str = "mczsl.metrics/v1";

const CSV_HEADER: &str = "task,seen_acc,unseen_acc,harmonic,gzsl_seen_acc,gzsl_unseen_acc";

/// Anything that assigns each feature row one of the candidate classes.
pub trait Classifier {
    /// Returns a class index from `candidates` per row of `features`.
    fn predict(&self, features: &Dense2D<f32>, candidates: &[usize]) -> Result<Vec<usize>>;
}

impl<F> Classifier for F
where
    F: Fn(&Dense2D<f32>, &[usize]) -> Result<Vec<usize>>,
{
    fn predict(&self, features: &Dense2D<f32>, candidates: &[usize]) -> Result<Vec<usize>> {
        self(features, candidates)
    }
}

/// Scores samples against the embedded attribute rows of the candidates.
pub struct AttributeClassifier<'a> {
    pub params: &'a ModelParams<f32>,
    pub attributes: &'a Dense2D<f32>,
}

impl Classifier for AttributeClassifier<'_> {
    fn predict(&self, features: &Dense2D<f32>, candidates: &[usize]) -> Result<Vec<usize>> {
        const CHUNK: usize = 4096;
        let attrs = self.attributes.select_rows(candidates)?;
        let mut out = Vec::with_capacity(features.rows());
        let rows: Vec<usize> = (0..features.rows()).collect();
        for block in rows.chunks(CHUNK) {
            let x = features.select_rows(block)?;
            out.extend(self.params.predict(&x, &attrs)?.into_iter().map(|j| candidates[j]));
        }
        Ok(out)
    }
}

/// Mean over `class_set` of each class's hit rate, as a percentage. Samples
/// whose label is outside `class_set` are ignored, as are classes without
/// samples.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], class_set: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::Length {
            op: "per_class_accuracy",
            expected: labels.len(),
            got: preds.len(),
        });
    }
    if class_set.is_empty() {
        return Err(Error::invalid("per_class_accuracy: empty class set"));
    }
    let mut tally: BTreeMap<usize, (usize, usize)> = class_set.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &l) in preds.iter().zip(labels) {
        if let Some((hit, total)) = tally.get_mut(&l) {
            *total += 1;
            *hit += usize::from(p == l);
        }
    }
    let rates: Vec<f64> = tally
        .values()
        .filter(|(_, total)| *total > 0)
        .map(|&(hit, total)| hit as f64 / total as f64)
        .collect();
    if rates.is_empty() {
        return Err(Error::invalid("per_class_accuracy: no samples from the class set"));
    }
    Ok(100.0 * rates.iter().sum::<f64>() / rates.len() as f64)
}

/// `2su/(s+u)`, or 0 when both are 0.
pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u == 0.0 {
        0.0
    } else {
        2.0 * s * u / (s + u)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    /// Seen accuracy with only the seen classes as candidates (GZSL: all classes).
    pub seen_acc: f64,
    /// Unseen accuracy with only the unseen classes as candidates (GZSL: all classes).
    pub unseen_acc: f64,
    /// Harmonic mean of the two accuracies below.
    pub harmonic: f64,
    /// Seen accuracy with the full candidate set.
    pub gzsl_seen_acc: f64,
    /// Unseen accuracy with the full candidate set.
    pub gzsl_unseen_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema: String,
    pub protocol: Protocol,
    pub tasks: Vec<TaskMetrics>,
    pub msa: f64,
    pub mua: f64,
    pub mh: f64,
}

impl MetricsRecord {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("metrics serialization: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: MetricsRecord = serde_json::from_str(s).map_err(|e| Error::invalid(format!("metrics JSON: {e}")))?;
        if rec.schema != METRICS_SCHEMA {
            return Err(Error::invalid(format!(
                "metrics schema `{}` (expected `{METRICS_SCHEMA}`)",
                rec.schema
            )));
        }
        Ok(rec)
    }

    /// One row per scored task. Values use Rust's shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.tasks {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.task, r.seen_acc, r.unseen_acc, r.harmonic, r.gzsl_seen_acc, r.gzsl_unseen_acc
            ));
        }
        s
    }

    pub fn rows_from_csv(s: &str) -> Result<Vec<TaskMetrics>> {
        let mut lines = s.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            other => return Err(Error::invalid(format!("metrics CSV header {other:?}"))),
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != 6 {
                    return Err(Error::invalid(format!("metrics CSV row `{line}`")));
                }
                let num = |i: usize| -> Result<f64> {
                    cells[i]
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("metrics CSV value `{}`", cells[i])))
                };
                Ok(TaskMetrics {
                    task: cells[0]
                        .trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("metrics CSV task `{}`", cells[0])))?,
                    seen_acc: num(1)?,
                    unseen_acc: num(2)?,
                    harmonic: num(3)?,
                    gzsl_seen_acc: num(4)?,
                    gzsl_unseen_acc: num(5)?,
                })
            })
            .collect()
    }
}

/// Means of the per-task rows.
pub fn aggregate(protocol: Protocol, rows: Vec<TaskMetrics>) -> MetricsRecord {
    let mean = |f: fn(&TaskMetrics) -> f64| {
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(f).sum::<f64>() / rows.len() as f64
        }
    };
    MetricsRecord {
        schema: METRICS_SCHEMA.to_string(),
        protocol,
        msa: mean(|r| r.seen_acc),
        mua: mean(|r| r.unseen_acc),
        mh: mean(|r| r.harmonic),
        tasks: rows,
    }
}

fn accuracy_on(clf: &dyn Classifier, data: &DatasetContainer, idx: &[usize], candidates: &[usize], classes: &[usize]) -> Result<f64> {
    let x = data.features.select_rows(idx)?;
    let preds = clf.predict(&x, candidates)?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    per_class_accuracy(&preds, &labels, classes)
}

/// Scores one task with the model trained through it.
pub fn evaluate_task(clf: &dyn Classifier, split: &TaskSplit, data: &DatasetContainer, protocol: Protocol) -> Result<TaskMetrics> {
    if split.unseen.is_empty() {
        return Err(Error::PlanMismatch(format!("task {} has no unseen classes to score", split.task)));
    }
    let gzsl_seen_acc = accuracy_on(clf, data, &split.test_seen, &split.candidates, &split.seen)?;
    let gzsl_unseen_acc = accuracy_on(clf, data, &split.test_unseen, &split.candidates, &split.unseen)?;
    let (seen_acc, unseen_acc) = match protocol {
        Protocol::Gzsl => (gzsl_seen_acc, gzsl_unseen_acc),
        _ => (
            accuracy_on(clf, data, &split.test_seen, &split.seen, &split.seen)?,
            accuracy_on(clf, data, &split.test_unseen, &split.unseen, &split.unseen)?,
        ),
    };
    Ok(TaskMetrics {
        task: split.task,
        seen_acc,
        unseen_acc,
        harmonic: harmonic_mean(gzsl_seen_acc, gzsl_unseen_acc),
        gzsl_seen_acc,
        gzsl_unseen_acc,
    })
}

/// `models[k]` is the classifier after task `k + 1`. Tasks not marked
/// `evaluated` are skipped.
pub fn evaluate_plan(models: &[&dyn Classifier], plan: &ProtocolPlan, data: &DatasetContainer) -> Result<MetricsRecord> {
    if models.len() != plan.num_tasks() {
        return Err(Error::PlanMismatch(format!(
            "{} models for a {}-task plan",
            models.len(),
            plan.num_tasks()
        )));
    }
    let rows = plan
        .tasks
        .iter()
        .zip(models)
        .filter(|(t, _)| t.evaluated)
        .map(|(t, m)| evaluate_task(*m, t, data, plan.protocol))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(plan.protocol, rows))
}

fn expect(plan: &ProtocolPlan, want: Protocol) -> Result<()> {
    if plan.protocol != want {
        return Err(Error::PlanMismatch(format!(
            "expected a {} plan, got {}",
            want.as_str(),
            plan.protocol.as_str()
        )));
    }
    Ok(())
}

pub fn evaluate_fixed(models: &[&dyn Classifier], plan: &ProtocolPlan, data: &DatasetContainer) -> Result<MetricsRecord> {
    expect(plan, Protocol::FixedContinual)?;
    evaluate_plan(models, plan, data)
}

pub fn evaluate_dynamic(models: &[&dyn Classifier], plan: &ProtocolPlan, data: &DatasetContainer) -> Result<MetricsRecord> {
    expect(plan, Protocol::DynamicContinual)?;
    evaluate_plan(models, plan, data)
}

pub fn evaluate_gzsl(model: &dyn Classifier, plan: &ProtocolPlan, data: &DatasetContainer) -> Result<MetricsRecord> {
    expect(plan, Protocol::Gzsl)?;
    evaluate_plan(&[model], plan, data)
}
