//! Detection metrics and per-scenario reports.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::labels::{Condition, ConditionLabels, GlassesIllum};
use crate::network::{Network, NetworkError, Prediction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} predictions vs {1} truths")]
    Length(usize, usize),
    #[error("class {0} is not binary (expected 0 or 1)")]
    NotBinary(usize),
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error("ROC/AUC undefined: all items belong to one class")]
    SingleClass,
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// Binary confusion counts with drowsiness (class 1) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }
}

pub fn confusion(predictions: &[usize], truths: &[usize]) -> Result<Confusion, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::Length(predictions.len(), truths.len()));
    }
    let mut c = Confusion::default();
    for (&p, &t) in predictions.iter().zip(truths) {
        for v in [p, t] {
            if v > 1 {
                return Err(EvalError::NotBinary(v));
            }
        }
        c.add(p == 1, t == 1);
    }
    Ok(c)
}

/// Which metrics had a zero denominator (and were reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub detection_rate: bool,
    pub f_measure: bool,
    pub accuracy: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.detection_rate || self.f_measure || self.accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    /// TP / (TP + FN), i.e. recall.
    pub detection_rate: f64,
    pub f_measure: f64,
    pub accuracy: f64,
    pub degenerate: Degenerate,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den == 0.0 {
        (0.0, true)
    } else {
        (num / den, false)
    }
}

pub fn metrics(c: &Confusion) -> Metrics {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let (precision, dp) = ratio(tp, tp + fp);
    let (detection_rate, dd) = ratio(tp, tp + fn_);
    let (f_measure, df) = ratio(2.0 * precision * detection_rate, precision + detection_rate);
    let (accuracy, da) = ratio(tp + tn, tp + fp + fn_ + tn);
    Metrics {
        precision,
        detection_rate,
        f_measure,
        accuracy,
        degenerate: Degenerate {
            precision: dp,
            detection_rate: dd,
            f_measure: df || dp || dd,
            accuracy: da,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Positive when `score >= threshold`; `None` for the origin point.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over the distinct scores (descending) with trapezoidal
/// area. Tied scores enter the curve together.
pub fn roc_auc(scores: &[f64], truths: &[usize]) -> Result<RocCurve, EvalError> {
    if scores.len() != truths.len() {
        return Err(EvalError::Length(scores.len(), truths.len()));
    }
    if let Some(&s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(EvalError::Score(s));
    }
    if let Some(&t) = truths.iter().find(|&&t| t > 1) {
        return Err(EvalError::NotBinary(t));
    }
    let positives = truths.iter().filter(|&&t| t == 1).count();
    let negatives = truths.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::with_capacity(scores.len() + 1);
    points.push(RocPoint {
        threshold: None,
        fpr: 0.0,
        tpr: 0.0,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truths[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("origin pushed");
        let point = RocPoint {
            threshold: Some(threshold),
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        };
        auc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        points.push(point);
    }
    Ok(RocCurve { points, auc })
}

/// Ground truth and prediction of one evaluated clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scenario: GlassesIllum,
    pub truth: ConditionLabels,
    pub prediction: Prediction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: GlassesIllum,
    pub name: String,
    pub clips: usize,
    pub confusion: Confusion,
    pub metrics: Metrics,
    /// Validation accuracy of the four scene heads (gl, h, m, e).
    pub head_accuracy: [f64; 4],
}

/// Unweighted arithmetic mean over the non-empty scenarios.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub detection_rate: f64,
    pub f_measure: f64,
    pub accuracy: f64,
    pub head_accuracy: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub clips: usize,
    pub scenarios: Vec<ScenarioReport>,
    /// Scenarios without clips, left out of the average.
    pub skipped: Vec<String>,
    pub average: AverageMetrics,
    /// Pooled over all clips.
    pub overall_confusion: Confusion,
    pub overall: Metrics,
    pub roc: Vec<RocPoint>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

impl MetricsReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<MetricsReport, EvalError> {
        if records.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut scenarios = Vec::new();
        let mut skipped = Vec::new();
        for &scenario in GlassesIllum::ALL {
            let group: Vec<&EvalRecord> = records.iter().filter(|r| r.scenario == scenario).collect();
            if group.is_empty() {
                skipped.push(String::from(scenario.name()));
                continue;
            }
            let mut c = Confusion::default();
            let mut head_hits = [0usize; 4];
            for r in &group {
                c.add(r.prediction.drowsy_class == 1, r.truth.drowsy.index() == 1);
                for (k, &truth) in r.truth.scene_indices().iter().enumerate() {
                    if r.prediction.scene[k] == truth {
                        head_hits[k] += 1;
                    }
                }
            }
            scenarios.push(ScenarioReport {
                scenario,
                name: scenario.name().into(),
                clips: group.len(),
                confusion: c,
                metrics: metrics(&c),
                head_accuracy: head_hits.map(|h| h as f64 / group.len() as f64),
            });
        }

        let n = scenarios.len() as f64;
        let mean = |f: &dyn Fn(&ScenarioReport) -> f64| scenarios.iter().map(f).sum::<f64>() / n;
        let mut head_accuracy = [0.0; 4];
        for (k, slot) in head_accuracy.iter_mut().enumerate() {
            *slot = mean(&|s| s.head_accuracy[k]);
        }
        let average = AverageMetrics {
            precision: mean(&|s| s.metrics.precision),
            detection_rate: mean(&|s| s.metrics.detection_rate),
            f_measure: mean(&|s| s.metrics.f_measure),
            accuracy: mean(&|s| s.metrics.accuracy),
            head_accuracy,
        };

        let mut overall_confusion = Confusion::default();
        for r in records {
            overall_confusion.add(r.prediction.drowsy_class == 1, r.truth.drowsy.index() == 1);
        }
        let scores: Vec<f64> = records.iter().map(|r| r.prediction.drowsy_probability()).collect();
        let truths: Vec<usize> = records.iter().map(|r| r.truth.drowsy.index()).collect();
        let (roc, auc) = match roc_auc(&scores, &truths) {
            Ok(curve) => (curve.points, Some(curve.auc)),
            Err(EvalError::SingleClass) => (Vec::new(), None),
            Err(e) => return Err(e),
        };

        Ok(MetricsReport {
            clips: records.len(),
            scenarios,
            skipped,
            average,
            overall_confusion,
            overall: metrics(&overall_confusion),
            roc,
            auc,
        })
    }
}

/// Predictions for every clip of `dataset`, in order.
pub fn evaluate(dataset: &Dataset, net: &Network) -> Result<Vec<EvalRecord>, EvalError> {
    dataset
        .clips
        .iter()
        .map(|c| {
            Ok(EvalRecord {
                scenario: c.scenario,
                truth: c.labels,
                prediction: net.predict_clip(&c.clip)?,
            })
        })
        .collect()
}

pub fn per_scenario_report(dataset: &Dataset, net: &Network) -> Result<MetricsReport, EvalError> {
    MetricsReport::from_records(&evaluate(dataset, net)?)
}
