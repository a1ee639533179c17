//! Threshold metrics, ROC and precision-recall curves, and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scalars {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// `(false positive rate, true positive rate)`
    pub roc: Vec<(f64, f64)>,
    /// `(recall, precision)`
    pub pr: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: Confusion,
    pub metrics: Metrics,
    pub curves: Curves,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Contract("no scores to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!("label {l} is not binary")));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Contract(format!("score {s} is not a number")));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Counts at `score >= threshold` and the derived accuracy, precision,
/// recall and F1. Empty denominators give 0.
pub fn confusion_and_scalars(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(Confusion, Scalars)> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok((c, scalars(&c)))
}

pub fn scalars(c: &Confusion) -> Scalars {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scalars {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
    }
}

/// Cumulative `(tp, fp)` after each group of equal scores, scores descending.
fn sweep(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &j) in order.iter().enumerate() {
        if labels[j] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = i + 1 == order.len() || scores[order[i + 1]] != scores[j];
        if last_of_group {
            out.push((tp, fp));
        }
    }
    out
}

fn class_totals(labels: &[u8]) -> (usize, usize) {
    let p = labels.iter().filter(|&&l| l == 1).count();
    (p, labels.len() - p)
}

/// Area under the ROC curve by a threshold sweep with trapezoids. Twice the
/// area is accumulated in integers, so ties count one half and the result
/// equals the Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (p, n) = class_totals(labels);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs both classes, got {p} positive and {n} negative"
        )));
    }
    let mut area2: u128 = 0;
    let (mut tp0, mut fp0) = (0u128, 0u128);
    for (tp, fp) in sweep(scores, labels) {
        let (tp, fp) = (tp as u128, fp as u128);
        area2 += (fp - fp0) * (tp + tp0);
        tp0 = tp;
        fp0 = fp;
    }
    Ok(area2 as f64 / (2 * p as u128 * n as u128) as f64)
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check_inputs(scores, labels)?;
    let (p, n) = class_totals(labels);
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(sweep(scores, labels).into_iter().map(|(tp, fp)| (ratio(fp, n), ratio(tp, p))));
    Ok(pts)
}

/// Step-wise area under the precision-recall curve,
/// `Σ (R_i − R_{i−1})·P_i` over descending thresholds.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (p, _) = class_totals(labels);
    if p == 0 {
        return Err(Error::UndefinedMetric("PR-AUC needs at least one positive".into()));
    }
    let mut area = 0.0;
    let mut r0 = 0.0;
    for (tp, fp) in sweep(scores, labels) {
        let r = tp as f64 / p as f64;
        area += (r - r0) * (tp as f64 / (tp + fp) as f64);
        r0 = r;
    }
    Ok(area)
}

/// `(recall, precision)` points, starting from `(0, 1)`.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check_inputs(scores, labels)?;
    let (p, _) = class_totals(labels);
    if p == 0 {
        return Err(Error::UndefinedMetric("PR curve needs at least one positive".into()));
    }
    let mut pts = vec![(0.0, 1.0)];
    pts.extend(
        sweep(scores, labels)
            .into_iter()
            .map(|(tp, fp)| (tp as f64 / p as f64, tp as f64 / (tp + fp) as f64)),
    );
    Ok(pts)
}

/// Full report for positive-class scores.
pub fn report(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let (counts, s) = confusion_and_scalars(scores, labels, threshold)?;
    Ok(MetricsReport {
        counts,
        metrics: Metrics {
            accuracy: s.accuracy,
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            roc_auc: roc_auc(scores, labels)?,
            pr_auc: pr_auc(scores, labels)?,
        },
        curves: Curves {
            roc: roc_curve(scores, labels)?,
            pr: pr_curve(scores, labels)?,
        },
    })
}

/// Scores a dataset with `model` in inference mode.
pub fn evaluate(model: &Model<f32>, data: &Dataset, batch_size: usize) -> Result<(MetricsReport, Vec<[f64; 2]>)> {
    if data.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let probs = model.predict(&data.samples, batch_size)?;
    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
    Ok((report(&scores, &data.labels(), DEFAULT_THRESHOLD)?, probs))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn points_csv(header: &str, pts: &[(f64, f64)]) -> String {
    let mut s = format!("{header}\n");
    for (x, y) in pts {
        let _ = writeln!(s, "{x},{y}");
    }
    s
}

impl MetricsReport {
    /// Writes `report.json`, `roc.csv`, `pr.csv` and `confusion.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        write(&dir.join("report.json"), &json)?;
        write(&dir.join("roc.csv"), &points_csv("fpr,tpr", &self.curves.roc))?;
        write(&dir.join("pr.csv"), &points_csv("recall,precision", &self.curves.pr))?;
        let c = &self.counts;
        let confusion = format!(
            "actual,predicted_0,predicted_1\n0,{},{}\n1,{},{}\n",
            c.tn, c.fp, c.fn_, c.tp
        );
        write(&dir.join("confusion.csv"), &confusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_split() {
        let (c, s) = confusion_and_scalars(&[0.9, 0.8, 0.4, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (2, 2, 0, 0));
        assert_eq!((s.accuracy, s.f1), (1.0, 1.0));
    }

    #[test]
    fn direct_count_arithmetic() {
        let s = scalars(&Confusion { tp: 2, tn: 2, fp: 1, fn_: 0 });
        assert_eq!(s.accuracy, 0.8);
        assert_eq!(s.precision, 2.0 / 3.0);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn degenerate_negative_class() {
        let (_, s) = confusion_and_scalars(&[0.1, 0.2, 0.3], &[0, 0, 0], 0.5).unwrap();
        assert_eq!((s.accuracy, s.precision, s.recall, s.f1), (1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn threshold_is_inclusive() {
        let (c, _) = confusion_and_scalars(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn small_auc_cases() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(pr_auc(&[0.9, 0.8, 0.3], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(pr_auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
    }

    #[test]
    fn undefined_cases() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(pr_auc(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedMetric(_))));
        assert!(confusion_and_scalars(&[], &[], 0.5).is_err());
        assert!(confusion_and_scalars(&[0.1], &[1, 0], 0.5).is_err());
    }

    #[test]
    fn roc_curve_spans_the_unit_square() {
        let pts = roc_curve(&[0.2, 0.9, 0.4, 0.4], &[0, 1, 1, 0]).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn report_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(&[0.9, 0.2, 0.6, 0.4], &[1, 0, 0, 1], 0.5).unwrap();
        r.write(dir.path()).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        let keys: Vec<&String> = json["metrics"].as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 6);
        assert_eq!(json["counts"]["fn"], 1);
        let roc = std::fs::read_to_string(dir.path().join("roc.csv")).unwrap();
        assert!(roc.starts_with("fpr,tpr\n0,0\n"));
    }
}
