//! Per-class IoU and Dice from confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// K x K confusion counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulate another matrix; addition makes streaming evaluation
    /// order-independent.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.k != other.k {
            return Err(CoreError::ShapeMismatch(format!(
                "confusion merge: {} vs {} classes",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Count label pairs over two integer maps of identical shape.
    pub fn accumulate(&mut self, pred: &Tensor, gt: &Tensor) -> Result<()> {
        if pred.shape() != gt.shape() {
            return Err(CoreError::ShapeMismatch(format!(
                "confusion: pred {:?} vs gt {:?}",
                pred.shape(),
                gt.shape()
            )));
        }
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p as i64, g as i64);
            if p < 0 || p >= self.k as i64 || g < 0 || g >= self.k as i64 {
                return Err(CoreError::InvalidArgument(format!(
                    "confusion: label out of range (gt {g}, pred {p}, K {})",
                    self.k
                )));
            }
            self.counts[g as usize * self.k + p as usize] += 1;
        }
        Ok(())
    }
}

pub fn confusion(pred: &Tensor, gt: &Tensor, k: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(k);
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

/// What to score when a class appears in neither ground truth nor prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AbsentClass {
    /// Score the class 1.0 (nothing to find, nothing found).
    #[default]
    ScoreOne,
    /// Leave the class out of the means.
    Exclude,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou: Vec<f64>,
    pub dice: Vec<f64>,
    pub miou: f64,
    pub mdice: f64,
}

impl MetricReport {
    /// CSV row of per-class IoU followed by the mean, as percentages.
    pub fn iou_csv_row(&self) -> String {
        let mut cells: Vec<String> = self.iou.iter().map(|v| format!("{:.2}", v * 100.0)).collect();
        cells.push(format!("{:.2}", self.miou * 100.0));
        cells.join(",")
    }

    pub fn dice_csv_row(&self) -> String {
        let mut cells: Vec<String> = self.dice.iter().map(|v| format!("{:.2}", v * 100.0)).collect();
        cells.push(format!("{:.2}", self.mdice * 100.0));
        cells.join(",")
    }
}

/// Per-class IoU/Dice and unweighted means.
pub fn iou_dice(cm: &ConfusionMatrix, absent: AbsentClass) -> MetricReport {
    let k = cm.classes();
    let mut iou = vec![0.0; k];
    let mut dice = vec![0.0; k];
    let mut included = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.count(c, c);
        let mut fp = 0u64;
        let mut fng = 0u64;
        for o in 0..k {
            if o != c {
                fp += cm.count(o, c);
                fng += cm.count(c, o);
            }
        }
        if tp + fp + fng == 0 {
            match absent {
                AbsentClass::ScoreOne => {
                    iou[c] = 1.0;
                    dice[c] = 1.0;
                    included.push(c);
                }
                AbsentClass::Exclude => {
                    iou[c] = f64::NAN;
                    dice[c] = f64::NAN;
                }
            }
        } else {
            iou[c] = tp as f64 / (tp + fp + fng) as f64;
            dice[c] = 2.0 * tp as f64 / (2 * tp + fp + fng) as f64;
            included.push(c);
        }
    }
    let n = included.len().max(1) as f64;
    let miou = included.iter().map(|&c| iou[c]).sum::<f64>() / n;
    let mdice = included.iter().map(|&c| dice[c]).sum::<f64>() / n;
    MetricReport {
        iou,
        dice,
        miou,
        mdice,
    }
}

/// Per-pixel argmax over the class axis of `probs: [K, H, W]`, ties broken to
/// the lowest class index. Returns an `[H, W]` integer label map.
pub fn argmax_classes(probs: &Tensor) -> Result<Tensor> {
    let s = probs.shape();
    if s.len() != 3 {
        return Err(CoreError::ShapeMismatch(format!(
            "argmax_classes: expected [K, H, W], got {s:?}"
        )));
    }
    let (k, h, w) = (s[0], s[1], s[2]);
    let plane = h * w;
    let mut out = vec![0.0; plane];
    for p in 0..plane {
        let mut best = 0usize;
        let mut best_v = probs.data()[p];
        for c in 1..k {
            let v = probs.data()[c * plane + p];
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        out[p] = best as f64;
    }
    Tensor::new(vec![h, w], out)
}
