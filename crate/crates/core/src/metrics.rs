//! Confusion-matrix bookkeeping and the IoU / precision / recall family.
//!
//! Rows are ground truth, columns are predictions. Background (label 0) is
//! a scored class. Classes whose denominator is zero are reported as
//! undefined (`None`) and left out of the means.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::{PseudoMask, IGNORE_LABEL};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("mask shapes differ: prediction {pred:?}, ground truth {gt:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("label {label} out of range for {num_classes} classes (background included)")]
    LabelOutOfRange { label: u8, num_classes: usize },
    #[error("confusion matrices have different sizes ({0} vs {1})")]
    SizeMismatch(usize, usize),
    #[error("no pixels have been accumulated")]
    EmptyMatrix,
    #[error("class count {0} must be between 1 and 255 (background included)")]
    InvalidClassCount(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    /// `num_classes` counts background, so VOC would use 21.
    pub fn new(num_classes: usize) -> Result<Self, MetricsError> {
        if num_classes == 0 || num_classes > IGNORE_LABEL as usize {
            return Err(MetricsError::InvalidClassCount(num_classes));
        }
        Ok(Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Pixels whose ground truth is 255 are skipped; a
    /// prediction of 255 on a scored pixel is out of range.
    pub fn accumulate(&mut self, pred: &PseudoMask, gt: &PseudoMask) -> Result<(), MetricsError> {
        if pred.shape() != gt.shape() {
            return Err(MetricsError::DimensionMismatch {
                pred: pred.shape(),
                gt: gt.shape(),
            });
        }
        let n = self.num_classes;
        // Validate first so a failed call leaves the matrix untouched.
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == IGNORE_LABEL {
                continue;
            }
            for label in [g, p] {
                if label as usize >= n {
                    return Err(MetricsError::LabelOutOfRange {
                        label,
                        num_classes: n,
                    });
                }
            }
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g != IGNORE_LABEL {
                self.counts[g as usize * n + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Element-wise sum; associative and commutative, so per-image
    /// matrices can be reduced in any grouping.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.num_classes != self.num_classes {
            return Err(MetricsError::SizeMismatch(self.num_classes, other.num_classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.get(class, class)
    }

    /// Predicted as `class` but labelled otherwise.
    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&g| g != class)
            .map(|g| self.get(g, class))
            .sum()
    }

    /// Labelled `class` but predicted otherwise.
    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.num_classes)
            .filter(|&p| p != class)
            .map(|p| self.get(class, p))
            .sum()
    }
}

/// Convenience wrapper: builds a fresh matrix and accumulates one pair.
pub fn accumulate(
    mut cm: ConfusionMatrix,
    pred: &PseudoMask,
    gt: &PseudoMask,
) -> Result<ConfusionMatrix, MetricsError> {
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

fn ratio_percent(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

fn mean_defined<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Option<f64> {
    let (sum, count) = values
        .flatten()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// `TP / (TP + FP + FN)` per class, as a percentage.
pub fn per_class_iou(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes)
        .map(|k| {
            let tp = cm.true_positives(k);
            ratio_percent(tp, tp + cm.false_positives(k) + cm.false_negatives(k))
        })
        .collect()
}

pub fn per_class_precision(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes)
        .map(|k| {
            let tp = cm.true_positives(k);
            ratio_percent(tp, tp + cm.false_positives(k))
        })
        .collect()
}

pub fn per_class_recall(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.num_classes)
        .map(|k| {
            let tp = cm.true_positives(k);
            ratio_percent(tp, tp + cm.false_negatives(k))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    /// Whether background enters the precision/recall means. mIoU always
    /// includes it.
    pub background_in_precision_recall: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            background_in_precision_recall: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_precision: Vec<Option<f64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub miou: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub pixel_count: u64,
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    summarize_with(cm, MetricOptions::default())
}

pub fn summarize_with(cm: &ConfusionMatrix, opts: MetricOptions) -> Result<MetricReport, MetricsError> {
    let pixel_count = cm.total();
    if pixel_count == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let iou = per_class_iou(cm);
    let precision = per_class_precision(cm);
    let recall = per_class_recall(cm);
    let skip = usize::from(!opts.background_in_precision_recall);
    // With at least one pixel, some row is non-empty, so some IoU is defined.
    let miou = mean_defined(iou.iter()).unwrap_or(0.0);
    let mean_precision = mean_defined(precision.iter().skip(skip)).unwrap_or(0.0);
    let mean_recall = mean_defined(recall.iter().skip(skip)).unwrap_or(0.0);
    Ok(MetricReport {
        per_class_iou: iou,
        per_class_precision: precision,
        per_class_recall: recall,
        miou,
        mean_precision,
        mean_recall,
        pixel_count,
    })
}
