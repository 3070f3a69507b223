//! Classification and segmentation scores.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::thermio::{SegMask, NUM_CLASSES};
use crate::unet_decoder::Task;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("no samples to score")]
    EmptyInput,
    #[error("class index {0} is out of range")]
    InvalidClass(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub task: Task,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    /// `None` entries mark classes absent from both prediction and ground truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_iou: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Binary scores with malignant (1) as the positive class.
pub fn classification_metrics(predictions: &[usize], labels: &[usize]) -> Result<MetricsReport, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            (0, 0) => tn += 1,
            (p, l) => return Err(MetricsError::InvalidClass(p.max(l))),
        }
    }
    let mut warnings = Vec::new();
    let precision = ratio(tp as f64, (tp + fp) as f64).unwrap_or_else(|| {
        warnings.push("precision undefined: no positive predictions".to_string());
        0.0
    });
    let recall = ratio(tp as f64, (tp + fn_) as f64).unwrap_or_else(|| {
        warnings.push("recall undefined: no positive labels".to_string());
        0.0
    });
    Ok(MetricsReport {
        task: Task::Classification,
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        precision,
        recall,
        f1: harmonic(precision, recall),
        miou: None,
        per_class_iou: None,
        warnings,
    })
}

/// `confusion[gt][pred]` pixel counts over all pairs.
pub fn confusion_matrix(predictions: &[SegMask], truths: &[SegMask]) -> Result<[[u64; NUM_CLASSES]; NUM_CLASSES], MetricsError> {
    if predictions.len() != truths.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: truths.len(),
        });
    }
    if truths.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut m = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (i, (p, g)) in predictions.iter().zip(truths).enumerate() {
        if (p.height(), p.width()) != (g.height(), g.width()) {
            return Err(MetricsError::ShapeMismatch(format!(
                "pair {i}: prediction {}x{}, ground truth {}x{}",
                p.height(),
                p.width(),
                g.height(),
                g.width()
            )));
        }
        for (&a, &b) in p.labels().iter().zip(g.labels()) {
            m[b as usize][a as usize] += 1;
        }
    }
    Ok(m)
}

/// Pixel accuracy, per-class IoU and macro scores over the classes present
/// in prediction or ground truth anywhere in the batch.
pub fn segmentation_metrics(predictions: &[SegMask], truths: &[SegMask]) -> Result<MetricsReport, MetricsError> {
    let m = confusion_matrix(predictions, truths)?;
    let total: u64 = m.iter().flatten().sum();
    let trace: u64 = (0..NUM_CLASSES).map(|k| m[k][k]).sum();
    let mut ious = Vec::with_capacity(NUM_CLASSES);
    let (mut p_sum, mut r_sum, mut iou_sum, mut included) = (0.0, 0.0, 0.0, 0usize);
    for k in 0..NUM_CLASSES {
        let tp = m[k][k] as f64;
        let predicted: u64 = (0..NUM_CLASSES).map(|g| m[g][k]).sum();
        let actual: u64 = m[k].iter().sum();
        if predicted == 0 && actual == 0 {
            ious.push(None);
            continue;
        }
        let iou = tp / (predicted as f64 + actual as f64 - tp);
        ious.push(Some(iou));
        p_sum += ratio(tp, predicted as f64).unwrap_or(0.0);
        r_sum += ratio(tp, actual as f64).unwrap_or(0.0);
        iou_sum += iou;
        included += 1;
    }
    let n = included as f64;
    let (precision, recall) = (p_sum / n, r_sum / n);
    Ok(MetricsReport {
        task: Task::Segmentation,
        accuracy: trace as f64 / total as f64,
        precision,
        recall,
        f1: harmonic(precision, recall),
        miou: Some(iou_sum / n),
        per_class_iou: Some(ious),
        warnings: Vec::new(),
    })
}
