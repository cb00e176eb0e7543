use serde::{Deserialize, Serialize};

use super::model::{ModelParams, ModelSpec};
use super::net::{forward, Mode};
use super::train::CurvePoint;
use super::{batch_from_samples, LearnerError};
use crate::pipeline::SampleTensor;

const EVAL_BATCH: usize = 64;

/// Arg-max class per sample in eval mode; ties go to the lower index.
pub fn predict(spec: &ModelSpec, params: &ModelParams, data: &[&SampleTensor]) -> Result<Vec<usize>, LearnerError> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(EVAL_BATCH) {
        let (x, _) = batch_from_samples(chunk)?;
        let probs = forward(spec, params, &x, Mode::Eval)?.probs;
        for i in 0..chunk.len() {
            let row = probs.row(i);
            let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            out.push(best);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Evaluation {
    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    /// Per-class precision; `0` for a class never predicted.
    pub fn precision(&self) -> Vec<f64> {
        let c = self.confusion.len();
        (0..c)
            .map(|j| {
                let col: usize = (0..c).map(|i| self.confusion[i][j]).sum();
                if col == 0 { 0.0 } else { self.confusion[j][j] as f64 / col as f64 }
            })
            .collect()
    }

    /// Per-class recall; `0` for a class absent from the set.
    pub fn recall(&self) -> Vec<f64> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 { 0.0 } else { row[i] as f64 / n as f64 }
            })
            .collect()
    }
}

pub fn confusion_from_predictions(labels: &[usize], preds: &[usize], classes: usize) -> Result<Evaluation, LearnerError> {
    if labels.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    if labels.len() != preds.len() {
        return Err(LearnerError::Shape(format!("{} labels vs {} predictions", labels.len(), preds.len())));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&y, &p) in labels.iter().zip(preds) {
        if y >= classes {
            return Err(LearnerError::Label { label: y, classes });
        }
        if p >= classes {
            return Err(LearnerError::Label { label: p, classes });
        }
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|i| confusion[i][i]).sum();
    Ok(Evaluation { accuracy: correct as f64 / labels.len() as f64, confusion })
}

pub fn evaluate(spec: &ModelSpec, params: &ModelParams, data: &[&SampleTensor]) -> Result<Evaluation, LearnerError> {
    if data.is_empty() {
        return Err(LearnerError::EmptyDataset);
    }
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    if let Some(&label) = labels.iter().find(|&&l| l >= spec.classes) {
        return Err(LearnerError::Label { label, classes: spec.classes });
    }
    let preds = predict(spec, params, data)?;
    confusion_from_predictions(&labels, &preds, spec.classes)
}

/// JSON metrics report with the resolved configuration embedded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub samples: usize,
    pub curve: Vec<CurvePoint>,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(eval: &Evaluation, curve: Vec<CurvePoint>, config: serde_json::Value) -> Self {
        Self {
            accuracy: eval.accuracy,
            precision: eval.precision(),
            recall: eval.recall(),
            confusion: eval.confusion.clone(),
            samples: eval.total(),
            curve,
            config,
        }
    }

    /// Confusion matrix as CSV: header `true\pred,0,1,…`, one row per class.
    pub fn confusion_csv(&self) -> String {
        let c = self.confusion.len();
        let mut s = String::from("true\\pred");
        for j in 0..c {
            s.push_str(&format!(",{j}"));
        }
        s.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}
