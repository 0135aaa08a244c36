//! Confusion accounting and segmentation scores.
//!
//! Class means run over the classes present in prediction or truth; a class
//! whose denominator is zero is left out of that particular mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LabelMask, NUM_CLASSES};

/// Full `truth x pred` pixel counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// `matrix[t][p]`: pixels of true class `t` predicted as `p`.
    pub matrix: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Default for ConfusionCounts {
    fn default() -> Self {
        ConfusionCounts {
            matrix: [[0; NUM_CLASSES]; NUM_CLASSES],
        }
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.matrix[k][k]).sum()
    }

    pub fn tp(&self, k: usize) -> u64 {
        self.matrix[k][k]
    }

    pub fn fp(&self, k: usize) -> u64 {
        (0..NUM_CLASSES).map(|t| self.matrix[t][k]).sum::<u64>() - self.tp(k)
    }

    pub fn fn_(&self, k: usize) -> u64 {
        self.matrix[k].iter().sum::<u64>() - self.tp(k)
    }

    pub fn tn(&self, k: usize) -> u64 {
        self.total() - self.tp(k) - self.fp(k) - self.fn_(k)
    }

    /// Classes occurring in the prediction or the truth.
    pub fn present(&self) -> Vec<usize> {
        (0..NUM_CLASSES)
            .filter(|&k| self.tp(k) + self.fp(k) + self.fn_(k) > 0)
            .collect()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in self.matrix.iter_mut().flatten().zip(other.matrix.iter().flatten()) {
            *a += b;
        }
    }
}

pub fn confusion(pred: &LabelMask, truth: &LabelMask) -> Result<ConfusionCounts> {
    if (pred.width(), pred.height()) != (truth.width(), truth.height()) {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, truth is {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.as_raw().iter().zip(truth.as_raw()) {
        c.matrix[t as usize][p as usize] += 1;
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Correct pixels over all pixels.
    pub pixel_accuracy: f64,
    /// Mean over classes of one-vs-rest `(TP + TN) / total`.
    pub mean_accuracy: f64,
    pub miou: f64,
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of `precision` and `recall`.
    pub f1: f64,
    /// `sum_k (TP_k + TN_k) / sum_k total`, the per-class one-vs-rest tally.
    pub pixel_accuracy_one_vs_rest: f64,
    /// `2 P / (P + R)`, kept alongside the harmonic mean for comparison.
    pub f1_ratio_form: f64,
    /// Per class; `None` where the class is absent or the ratio undefined.
    pub class_iou: Vec<Option<f64>>,
    pub class_accuracy: Vec<Option<f64>>,
    pub class_precision: Vec<Option<f64>>,
    pub class_recall: Vec<Option<f64>>,
    pub present_classes: Vec<usize>,
    /// Set when no class is present; every aggregate is then NaN.
    pub undefined: bool,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: &[Option<f64>], present: &[usize]) -> f64 {
    let picked: Vec<f64> = present.iter().filter_map(|&k| values[k]).collect();
    if picked.is_empty() {
        f64::NAN
    } else {
        picked.iter().sum::<f64>() / picked.len() as f64
    }
}

pub fn evaluate(c: &ConfusionCounts) -> MetricReport {
    let present = c.present();
    let total = c.total();
    let gate = |k: usize, v: Option<f64>| if present.contains(&k) { v } else { None };
    let class_iou: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|k| gate(k, ratio(c.tp(k), c.tp(k) + c.fp(k) + c.fn_(k))))
        .collect();
    let class_accuracy: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|k| gate(k, ratio(c.tp(k) + c.tn(k), total)))
        .collect();
    let class_precision: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|k| gate(k, ratio(c.tp(k), c.tp(k) + c.fp(k))))
        .collect();
    let class_recall: Vec<Option<f64>> = (0..NUM_CLASSES)
        .map(|k| gate(k, ratio(c.tp(k), c.tp(k) + c.fn_(k))))
        .collect();

    let undefined = present.is_empty();
    let (pixel_accuracy, pixel_accuracy_one_vs_rest) = if undefined {
        (f64::NAN, f64::NAN)
    } else {
        let ovr: u64 = present.iter().map(|&k| c.tp(k) + c.tn(k)).sum();
        (
            c.correct() as f64 / total as f64,
            ovr as f64 / (total * present.len() as u64) as f64,
        )
    };
    let precision = mean_defined(&class_precision, &present);
    let recall = mean_defined(&class_recall, &present);
    let (f1, f1_ratio_form) = if precision + recall > 0.0 {
        (
            2.0 * precision * recall / (precision + recall),
            2.0 * precision / (precision + recall),
        )
    } else if precision.is_nan() || recall.is_nan() {
        (f64::NAN, f64::NAN)
    } else {
        (0.0, 0.0)
    };
    MetricReport {
        pixel_accuracy,
        mean_accuracy: mean_defined(&class_accuracy, &present),
        miou: mean_defined(&class_iou, &present),
        precision,
        recall,
        f1,
        pixel_accuracy_one_vs_rest,
        f1_ratio_form,
        class_iou,
        class_accuracy,
        class_precision,
        class_recall,
        present_classes: present,
        undefined,
    }
}

impl MetricReport {
    /// Fixed-width per-class table.
    pub fn table(&self) -> String {
        use crate::imagecore::CLASS_NAMES;
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>10}", "-"), |x| format!("{x:>10.4}"));
        let mut s = format!(
            "{:<6}{:<12}{:>10}{:>10}{:>10}{:>10}\n",
            "class", "name", "iou", "accuracy", "precision", "recall"
        );
        for (k, name) in CLASS_NAMES.iter().enumerate() {
            s.push_str(&format!(
                "{:<6}{:<12}{}{}{}{}\n",
                k,
                name,
                cell(self.class_iou[k]),
                cell(self.class_accuracy[k]),
                cell(self.class_precision[k]),
                cell(self.class_recall[k])
            ));
        }
        s
    }
}
