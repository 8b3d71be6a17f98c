use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::DiscourseLabel;
use crate::error::{Error, Result};

const K: usize = DiscourseLabel::COUNT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub baseline: String,
    pub p_value: f64,
}

/// Per-class and support-weighted F1 on a 0-100 scale. `confusion[t][p]`
/// counts posts with true code `t` predicted as code `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_f1: BTreeMap<DiscourseLabel, f64>,
    pub weighted_f1: f64,
    pub confusion: [[usize; K]; K],
    pub n: usize,
    pub significance: Option<Significance>,
}

/// The report file layout: class columns in label order, then weighted F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub insertion: f64,
    pub concretization: f64,
    pub projection: f64,
    pub restatement: f64,
    pub extension: f64,
    pub weighted_f1: f64,
    pub n: usize,
    pub confusion: [[usize; K]; K],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
}

impl EvalReport {
    pub fn per_class_array(&self) -> [f64; K] {
        DiscourseLabel::ALL.map(|l| self.per_class_f1[&l])
    }

    /// `[Ins, Con, Pro, Res, Ext, weighted F1]`.
    pub fn table_row(&self) -> [f64; K + 1] {
        let c = self.per_class_array();
        [c[0], c[1], c[2], c[3], c[4], self.weighted_f1]
    }

    pub fn record(&self) -> ReportRecord {
        let c = self.per_class_array();
        ReportRecord {
            insertion: c[0],
            concretization: c[1],
            projection: c[2],
            restatement: c[3],
            extension: c[4],
            weighted_f1: self.weighted_f1,
            n: self.n,
            confusion: self.confusion,
            significance: self.significance.clone(),
        }
    }

    pub fn support(&self, label: DiscourseLabel) -> usize {
        self.confusion[label.code()].iter().sum()
    }
}

/// `2PR / (P + R)` scaled to 0-100, with 0 wherever a denominator vanishes.
pub(crate) fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * precision * recall / (precision + recall)
    }
}

pub fn f1_report(predictions: &[DiscourseLabel], truths: &[DiscourseLabel]) -> Result<EvalReport> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput("no predictions to score"));
    }
    let mut confusion = [[0usize; K]; K];
    for (p, t) in predictions.iter().zip(truths) {
        confusion[t.code()][p.code()] += 1;
    }
    let n = truths.len();
    let mut per_class_f1 = BTreeMap::new();
    let mut weighted = 0.0;
    for label in DiscourseLabel::ALL {
        let c = label.code();
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..K).map(|t| confusion[t][c]).sum();
        let f1 = f1_from_counts(tp, predicted - tp, support - tp);
        weighted += support as f64 / n as f64 * f1;
        per_class_f1.insert(label, f1);
    }
    Ok(EvalReport {
        per_class_f1,
        weighted_f1: weighted,
        confusion,
        n,
        significance: None,
    })
}
