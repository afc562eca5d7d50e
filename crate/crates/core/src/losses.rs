//! Segmentation losses: pixel-wise cross-entropy and the Lovász hinge, a
//! convex surrogate of the Jaccard (intersection-over-union) loss.
//!
//! The network emits two logits `(s0, s1)` per pixel. Cross-entropy uses
//! their softmax. The Lovász hinge works on a single signed score per pixel,
//! taken as `F = s1 - s0`, so that `F > 0` exactly when the argmax picks the
//! signal class. Gradients are returned for both logits.

use std::str::FromStr;

use ndarray::{Array3, Array4, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;
use crate::types::SegmentationMask;

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

// `f64::max` would swallow a NaN; these let it reach the caller.
fn floored(p: f64) -> f64 {
    if p < PROB_FLOOR {
        PROB_FLOOR
    } else {
        p
    }
}

fn relu(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

/// Mean negative log-likelihood of the true class over all pixels.
/// `probs[i]` is `(p(non-signal), p(signal))` for pixel `i`.
pub fn cross_entropy(probs: &[[f64; 2]], labels01: &[u8]) -> Result<f64> {
    if probs.len() != labels01.len() {
        return Err(Error::Shape(format!(
            "{} probability pairs vs {} labels",
            probs.len(),
            labels01.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Empty("cross-entropy over zero pixels".into()));
    }
    let total: f64 = probs
        .iter()
        .zip(labels01)
        .map(|(p, &y)| -floored(p[y as usize]).ln())
        .sum();
    Ok(total / probs.len() as f64)
}

/// Jaccard index of class `class`: `|pred ∩ gt| / |pred ∪ gt|`, with
/// `J(∅, ∅) = 1`.
pub fn jaccard(pred: &SegmentationMask, gt: &SegmentationMask, class: u8) -> Result<f64> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "masks {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.classes.iter().zip(gt.classes.iter()) {
        let (a, b) = (p == class, g == class);
        inter += usize::from(a && b);
        union += usize::from(a || b);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// `1 - jaccard`.
pub fn jaccard_loss(pred: &SegmentationMask, gt: &SegmentationMask, class: u8) -> Result<f64> {
    Ok(1.0 - jaccard(pred, gt, class)?)
}

/// Marginal contributions of each position to the Jaccard loss when pixels
/// are mispredicted in the given order.
///
/// `gt_sorted[i]` is the ground-truth class (1 = foreground) of the pixel
/// with the `i`-th largest error. Entry `i` of the result is
/// `Δ(prefix i+1) - Δ(prefix i)`, where `Δ(prefix)` is the Jaccard loss when
/// exactly the prefix pixels are wrong. Runs in O(p).
pub fn lovasz_grad(gt_sorted: &[u8]) -> Result<Vec<f64>> {
    if gt_sorted.is_empty() {
        return Err(Error::Empty("lovasz_grad needs at least one pixel".into()));
    }
    let fg_total = gt_sorted.iter().filter(|&&g| g == 1).count() as f64;
    let mut g = Vec::with_capacity(gt_sorted.len());
    let (mut fg_seen, mut bg_seen) = (0.0, 0.0);
    let mut prev = 0.0;
    for &y in gt_sorted {
        if y == 1 {
            fg_seen += 1.0;
        } else {
            bg_seen += 1.0;
        }
        // Union is never empty here: either fg_total > 0 or bg_seen >= 1.
        let loss = 1.0 - (fg_total - fg_seen) / (fg_total + bg_seen);
        g.push(loss - prev);
        prev = loss;
    }
    Ok(g)
}

/// Sorted hinge errors and their ordering.
#[derive(Debug, Clone)]
pub struct ErrorVector {
    /// `max(1 - F·y, 0)` per pixel, in pixel order.
    pub m: Vec<f64>,
    /// Pixel indices ordered by decreasing `m`; ties keep pixel order.
    pub pi: Vec<usize>,
}

impl ErrorVector {
    pub fn new(logits_fg: &[f64], labels_pm: &[i8]) -> Result<Self> {
        if logits_fg.len() != labels_pm.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                logits_fg.len(),
                labels_pm.len()
            )));
        }
        if logits_fg.is_empty() {
            return Err(Error::Empty("Lovász hinge over zero pixels".into()));
        }
        if labels_pm.iter().any(|&y| y != 1 && y != -1) {
            return Err(Error::Shape("hinge labels must be -1 or +1".into()));
        }
        let m: Vec<f64> = logits_fg
            .iter()
            .zip(labels_pm)
            .map(|(&f, &y)| relu(1.0 - f * y as f64))
            .collect();
        let mut pi: Vec<usize> = (0..m.len()).collect();
        pi.sort_by(|&a, &b| m[b].total_cmp(&m[a]));
        Ok(Self { m, pi })
    }
}

/// Lovász hinge loss and its gradient with respect to the foreground
/// scores. The permutation is held fixed when differentiating; at a hinge
/// kink the right derivative is used.
pub fn lovasz_hinge_with_grad(logits_fg: &[f64], labels_pm: &[i8]) -> Result<(f64, Vec<f64>)> {
    let ev = ErrorVector::new(logits_fg, labels_pm)?;
    let gt_sorted: Vec<u8> = ev.pi.iter().map(|&i| u8::from(labels_pm[i] == 1)).collect();
    let g = lovasz_grad(&gt_sorted)?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits_fg.len()];
    for (&i, &gi) in ev.pi.iter().zip(&g) {
        loss += ev.m[i] * gi;
        if 1.0 - logits_fg[i] * labels_pm[i] as f64 >= 0.0 {
            grad[i] = -(labels_pm[i] as f64) * gi;
        }
    }
    Ok((loss, grad))
}

pub fn lovasz_hinge(logits_fg: &[f64], labels_pm: &[i8]) -> Result<f64> {
    Ok(lovasz_hinge_with_grad(logits_fg, labels_pm)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Lovasz,
}

impl LossKind {
    pub fn label(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "CE",
            LossKind::Lovasz => "Lovasz",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cross_entropy" | "ce" | "cross-entropy" => Ok(LossKind::CrossEntropy),
            "lovasz" | "lovasz_hinge" => Ok(LossKind::Lovasz),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Network logits `(batch, 2, H, W)` with ground truth `(batch, H, W)` in
/// {0, 1}.
#[derive(Debug, Clone)]
pub struct LabeledBatch<S> {
    pub logits: Array4<S>,
    pub labels01: Array3<u8>,
}

impl<S: Scalar> LabeledBatch<S> {
    pub fn new(logits: Array4<S>, labels01: Array3<u8>) -> Result<Self> {
        let (n, k, h, w) = logits.dim();
        if k != 2 || labels01.dim() != (n, h, w) {
            return Err(Error::Shape(format!(
                "logits {:?} do not match labels {:?}",
                logits.dim(),
                labels01.dim()
            )));
        }
        if labels01.iter().any(|&v| v > 1) {
            return Err(Error::Shape("labels must be 0 or 1".into()));
        }
        Ok(Self { logits, labels01 })
    }

    /// `2·y - 1`.
    pub fn labels_pm(&self) -> Array3<i8> {
        self.labels01.mapv(|v| 2 * v as i8 - 1)
    }

    /// Loss value and `d loss / d logits`. Cross-entropy averages over all
    /// pixels of the batch; the Lovász hinge is computed per image and
    /// averaged over images.
    pub fn loss_and_gradient(&self, kind: LossKind) -> (f64, Array4<S>) {
        let (n, _, h, w) = self.logits.dim();
        let mut grad = Array4::<S>::zeros((n, 2, h, w));
        match kind {
            LossKind::CrossEntropy => {
                let total = (n * h * w) as f64;
                let mut loss = 0.0;
                for b in 0..n {
                    for i in 0..h {
                        for j in 0..w {
                            let s0 = self.logits[[b, 0, i, j]].to_f64().unwrap();
                            let s1 = self.logits[[b, 1, i, j]].to_f64().unwrap();
                            let p1 = 1.0 / (1.0 + (s0 - s1).exp());
                            let p = [1.0 - p1, p1];
                            let y = self.labels01[[b, i, j]] as usize;
                            loss -= floored(p[y]).ln();
                            if p[y] >= PROB_FLOOR {
                                for c in 0..2 {
                                    let onehot = if c == y { 1.0 } else { 0.0 };
                                    grad[[b, c, i, j]] = S::from_f64c((p[c] - onehot) / total);
                                }
                            }
                        }
                    }
                }
                (loss / total, grad)
            }
            LossKind::Lovasz => {
                let mut loss = 0.0;
                for b in 0..n {
                    let (scores, labels) = self.image_scores(b);
                    let (l, g) = lovasz_hinge_with_grad(&scores, &labels).expect("shapes checked");
                    loss += l;
                    for (k, gk) in g.iter().enumerate() {
                        let (i, j) = (k / w, k % w);
                        let v = S::from_f64c(gk / n as f64);
                        grad[[b, 1, i, j]] = v;
                        grad[[b, 0, i, j]] = -v;
                    }
                }
                (loss / n as f64, grad)
            }
        }
    }

    pub fn loss(&self, kind: LossKind) -> f64 {
        match kind {
            LossKind::CrossEntropy => {
                let probs = softmax_pairs(self.logits.view());
                cross_entropy(&probs, self.labels01.as_slice().expect("standard layout"))
                    .expect("shapes checked")
            }
            LossKind::Lovasz => {
                let n = self.logits.dim().0;
                (0..n)
                    .map(|b| {
                        let (s, y) = self.image_scores(b);
                        lovasz_hinge(&s, &y).expect("shapes checked")
                    })
                    .sum::<f64>()
                    / n as f64
            }
        }
    }

    /// Flattened foreground scores `s1 - s0` and ±1 labels of image `b`.
    fn image_scores(&self, b: usize) -> (Vec<f64>, Vec<i8>) {
        let l = self.logits.index_axis(Axis(0), b);
        let scores = l
            .index_axis(Axis(0), 1)
            .iter()
            .zip(l.index_axis(Axis(0), 0).iter())
            .map(|(s1, s0)| (*s1 - *s0).to_f64().unwrap())
            .collect();
        let labels = self
            .labels01
            .index_axis(Axis(0), b)
            .iter()
            .map(|&v| 2 * v as i8 - 1)
            .collect();
        (scores, labels)
    }
}

/// `(p0, p1)` for every pixel of `(batch, 2, H, W)` logits, in
/// batch/row/column order.
pub fn softmax_pairs<S: Scalar>(logits: ndarray::ArrayView4<S>) -> Vec<[f64; 2]> {
    let (n, _, h, w) = logits.dim();
    let mut out = Vec::with_capacity(n * h * w);
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let d = (logits[[b, 0, i, j]] - logits[[b, 1, i, j]])
                    .to_f64()
                    .unwrap();
                let p1 = 1.0 / (1.0 + d.exp());
                out.push([1.0 - p1, p1]);
            }
        }
    }
    out
}

/// Analytic gradient of the selected loss with respect to the logits.
pub fn loss_gradient<S: Scalar>(
    kind: LossKind,
    logits: &Array4<S>,
    labels01: ArrayView3<u8>,
) -> Result<Array4<S>> {
    let batch = LabeledBatch::new(logits.clone(), labels01.to_owned())?;
    Ok(batch.loss_and_gradient(kind).1)
}
