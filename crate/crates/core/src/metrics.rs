//! Confusion matrices and precision / recall / F1 with macro and
//! support-weighted aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][pred]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.classes..(truth + 1) * self.classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for v in [truth, pred] {
            if v >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: v,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + pred] += 1;
        Ok(())
    }

    /// Element-wise sum with another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Dimension {
                context: "confusion matrix classes",
                expected: self.classes,
                got: other.classes,
            });
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension {
            context: "predictions vs labels",
            expected: labels.len(),
            got: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::zeros(classes);
    for (&p, &y) in preds.iter().zip(labels) {
        cm.add(y, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// True-class counts.
    pub support: Vec<u64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    /// Some class hit a 0/0 ratio and was scored 0.
    pub degenerate: bool,
}

impl ClassificationMetrics {
    pub fn accuracy_from(cm: &ConfusionMatrix) -> f64 {
        let total = cm.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..cm.classes()).map(|c| cm.get(c, c)).sum();
        diag as f64 / total as f64
    }
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> ClassificationMetrics {
    let c = cm.classes();
    let mut degenerate = false;
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    let mut support = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.get(k, k);
        let actual: u64 = cm.row(k).iter().sum();
        let predicted: u64 = (0..c).map(|t| cm.get(t, k)).sum();
        let p = ratio(tp, predicted, &mut degenerate);
        let r = ratio(tp, actual, &mut degenerate);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision.push(p);
        recall.push(r);
        f1.push(f);
        support.push(actual);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let total: u64 = support.iter().sum();
    let weighted = |v: &[f64]| {
        if total == 0 {
            0.0
        } else {
            v.iter().zip(&support).map(|(x, &s)| x * s as f64).sum::<f64>() / total as f64
        }
    };
    ClassificationMetrics {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        weighted_precision: weighted(&precision),
        weighted_recall: weighted(&recall),
        weighted_f1: weighted(&f1),
        precision,
        recall,
        f1,
        support,
        degenerate,
    }
}

/// Convenience: confusion matrix and scores in one call.
pub fn score(preds: &[usize], labels: &[usize], classes: usize) -> Result<ClassificationMetrics> {
    Ok(precision_recall_f1(&confusion(preds, labels, classes)?))
}

/// One row of the per-run metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_w: f64,
    pub recall_w: f64,
    pub f1_w: f64,
}

impl MetricsRecord {
    pub fn new(dataset: &str, model: &str, seed: u64, m: &ClassificationMetrics) -> Self {
        MetricsRecord {
            dataset: dataset.to_string(),
            model: model.to_string(),
            seed,
            precision: m.macro_precision,
            recall: m.macro_recall,
            f1: m.macro_f1,
            precision_w: m.weighted_precision,
            recall_w: m.weighted_recall,
            f1_w: m.weighted_f1,
        }
    }
}

pub fn write_metrics_csv<W: std::io::Write>(writer: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("metrics csv", e))?;
    Ok(())
}
