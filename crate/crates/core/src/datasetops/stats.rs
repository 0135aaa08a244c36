use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{LabelMask, NUM_CLASSES};

/// Fraction of pixels per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Classes with a non-zero share.
    pub fn present(&self) -> impl Iterator<Item = usize> + '_ {
        (0..NUM_CLASSES).filter(|&k| self.0[k] > 0.0)
    }

    /// Element-wise mean of several weight vectors.
    pub fn mean_of(all: &[ClassWeights]) -> Result<ClassWeights> {
        if all.is_empty() {
            return Err(Error::EmptyInput("no class weights to average".into()));
        }
        let mut acc = [0.0; NUM_CLASSES];
        for w in all {
            for (a, v) in acc.iter_mut().zip(w.0) {
                *a += v;
            }
        }
        Ok(ClassWeights(acc.map(|a| a / all.len() as f64)))
    }
}

pub fn class_counts(mask: &LabelMask) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for &v in mask.as_raw() {
        counts[v as usize] += 1;
    }
    counts
}

pub fn class_weights(mask: &LabelMask) -> ClassWeights {
    let n = mask.as_raw().len() as f64;
    ClassWeights(class_counts(mask).map(|c| c as f64 / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    /// Fraction of images in which the class is absent.
    pub zero_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub classes: Vec<ClassStats>,
}

impl DatasetStats {
    pub fn mean_weights(&self) -> ClassWeights {
        let mut w = [0.0; NUM_CLASSES];
        for (o, c) in w.iter_mut().zip(&self.classes) {
            *o = c.mean;
        }
        ClassWeights(w)
    }

    /// Fixed-width text table, one row per class.
    pub fn table(&self) -> String {
        use crate::imagecore::CLASS_NAMES;
        let mut s = format!(
            "{:<6}{:<12}{:>10}{:>10}{:>10}{:>10}\n",
            "class", "name", "mean", "median", "max", "zero"
        );
        for (k, c) in self.classes.iter().enumerate() {
            s.push_str(&format!(
                "{:<6}{:<12}{:>9.2}%{:>9.2}%{:>9.2}%{:>9.2}%\n",
                k,
                CLASS_NAMES[k],
                100.0 * c.mean,
                100.0 * c.median,
                100.0 * c.max,
                100.0 * c.zero_fraction
            ));
        }
        s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-class mean, median, maximum and zero fraction over images.
pub fn dataset_stats(per_image: &[ClassWeights]) -> Result<DatasetStats> {
    if per_image.is_empty() {
        return Err(Error::EmptyInput("dataset has no masks".into()));
    }
    let n = per_image.len() as f64;
    let classes = (0..NUM_CLASSES)
        .map(|k| {
            let col: Vec<f64> = per_image.iter().map(|w| w.0[k]).collect();
            ClassStats {
                mean: col.iter().sum::<f64>() / n,
                max: col.iter().copied().fold(0.0, f64::max),
                zero_fraction: col.iter().filter(|&&v| v == 0.0).count() as f64 / n,
                median: median(col),
            }
        })
        .collect();
    Ok(DatasetStats {
        images: per_image.len(),
        classes,
    })
}
