//! Pixel accuracy, signal IoU and pick MAE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PickLine, SegmentationMask};

/// How images of different sizes are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// One sum over every pixel (or receiver) of every image.
    #[default]
    Pixel,
    /// Mean of per-image scores.
    Image,
}

fn check_pairs(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{a} predictions vs {b} ground truths"
        )));
    }
    if a == 0 {
        return Err(Error::Empty("no images to score".into()));
    }
    Ok(())
}

fn mask_counts(
    pred: &SegmentationMask,
    gt: &SegmentationMask,
) -> Result<(usize, usize, usize, usize)> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!(
            "masks {:?} vs {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let (mut correct, mut inter, mut union) = (0, 0, 0);
    for (&p, &g) in pred.classes.iter().zip(gt.classes.iter()) {
        correct += usize::from(p == g);
        inter += usize::from(p == 1 && g == 1);
        union += usize::from(p == 1 || g == 1);
    }
    Ok((correct, pred.classes.len(), inter, union))
}

pub fn pixel_accuracy(
    pred: &[SegmentationMask],
    gt: &[SegmentationMask],
    weighting: Weighting,
) -> Result<f64> {
    check_pairs(pred.len(), gt.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (correct, total, _, _) = mask_counts(p, g)?;
        match weighting {
            Weighting::Pixel => {
                num += correct as f64;
                den += total as f64;
            }
            Weighting::Image => {
                num += correct as f64 / total as f64;
                den += 1.0;
            }
        }
    }
    Ok(num / den)
}

/// Signal-class IoU pooled over all pixels. 1 when neither side has any
/// signal pixel.
pub fn iou_signal(pred: &[SegmentationMask], gt: &[SegmentationMask]) -> Result<f64> {
    check_pairs(pred.len(), gt.len())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let (_, _, i, u) = mask_counts(p, g)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

fn pick_errors(pred: &PickLine, gt: &PickLine, include_invalid: bool) -> Result<(f64, usize)> {
    if pred.receivers() != gt.receivers() {
        return Err(Error::Shape(format!(
            "{} predicted picks vs {} ground-truth picks",
            pred.receivers(),
            gt.receivers()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for r in 0..pred.receivers() {
        if include_invalid || (pred.valid[r] && gt.valid[r]) {
            sum += pred.times[r].abs_diff(gt.times[r]) as f64;
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Mean absolute pick error in time steps over all counted receivers.
/// With `include_invalid = false`, receivers invalid in either line are
/// skipped.
pub fn mae(pred: &[PickLine], gt: &[PickLine], include_invalid: bool) -> Result<f64> {
    mae_weighted(pred, gt, include_invalid, Weighting::Pixel)
}

pub fn mae_weighted(
    pred: &[PickLine],
    gt: &[PickLine],
    include_invalid: bool,
    weighting: Weighting,
) -> Result<f64> {
    check_pairs(pred.len(), gt.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (sum, n) = pick_errors(p, g, include_invalid)?;
        if n == 0 {
            continue;
        }
        match weighting {
            Weighting::Pixel => {
                num += sum;
                den += n as f64;
            }
            Weighting::Image => {
                num += sum / n as f64;
                den += 1.0;
            }
        }
    }
    if den == 0.0 {
        return Err(Error::Empty("no receivers left to score".into()));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub index: usize,
    pub pixel_accuracy: f64,
    pub iou_signal: f64,
    pub mae_ts: f64,
    pub invalid_receivers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub sample_rate_ms: f64,
    pub pixel_accuracy: f64,
    pub iou_signal: f64,
    /// All receivers, invalid ones included.
    pub mae_ts: f64,
    pub mae_ms: f64,
    /// Receivers valid in both lines only; `None` if there are none.
    pub mae_ts_valid_only: Option<f64>,
    pub mae_ms_valid_only: Option<f64>,
    pub receivers: usize,
    pub invalid_receivers: usize,
    pub per_image: Vec<ImageScore>,
}

/// Scores a set of predictions against ground truth. `gt_picks` validity
/// marks dead traces; a receiver is invalid if either line flags it.
pub fn build_report(
    pred_masks: &[SegmentationMask],
    pred_picks: &[PickLine],
    gt_masks: &[SegmentationMask],
    gt_picks: &[PickLine],
    sample_rate_ms: f64,
) -> Result<EvalReport> {
    check_pairs(pred_masks.len(), gt_masks.len())?;
    check_pairs(pred_picks.len(), gt_picks.len())?;
    check_pairs(pred_masks.len(), pred_picks.len())?;

    let mut per_image = Vec::with_capacity(pred_masks.len());
    let mut receivers = 0;
    let mut invalid = 0;
    for i in 0..pred_masks.len() {
        let one_mask = std::slice::from_ref(&pred_masks[i]);
        let one_gt = std::slice::from_ref(&gt_masks[i]);
        let (_, n) = pick_errors(&pred_picks[i], &gt_picks[i], false)?;
        let r = gt_picks[i].receivers();
        receivers += r;
        invalid += r - n;
        per_image.push(ImageScore {
            index: i,
            pixel_accuracy: pixel_accuracy(one_mask, one_gt, Weighting::Pixel)?,
            iou_signal: iou_signal(one_mask, one_gt)?,
            mae_ts: mae(
                std::slice::from_ref(&pred_picks[i]),
                std::slice::from_ref(&gt_picks[i]),
                true,
            )?,
            invalid_receivers: r - n,
        });
    }
    let mae_ts = mae(pred_picks, gt_picks, true)?;
    let mae_ts_valid_only = match mae(pred_picks, gt_picks, false) {
        Ok(v) => Some(v),
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        images: pred_masks.len(),
        sample_rate_ms,
        pixel_accuracy: pixel_accuracy(pred_masks, gt_masks, Weighting::Pixel)?,
        iou_signal: iou_signal(pred_masks, gt_masks)?,
        mae_ts,
        mae_ms: mae_ts * sample_rate_ms,
        mae_ts_valid_only,
        mae_ms_valid_only: mae_ts_valid_only.map(|v| v * sample_rate_ms),
        receivers,
        invalid_receivers: invalid,
        per_image,
    })
}

/// Left-aligned plain-text table. Missing cells print as `-`.
pub fn render_table(
    corner: &str,
    columns: &[String],
    rows: &[(String, Vec<Option<String>>)],
) -> String {
    let mut widths = vec![corner.len()];
    widths.extend(columns.iter().map(String::len));
    for (label, cells) in rows {
        widths[0] = widths[0].max(label.len());
        for (k, c) in cells.iter().enumerate() {
            widths[k + 1] = widths[k + 1].max(c.as_deref().unwrap_or("-").len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        parts.join(" | ").trim_end().to_string() + "\n"
    };
    let mut out = line(
        std::iter::once(corner)
            .chain(columns.iter().map(String::as_str))
            .collect(),
    );
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out += &(rule.join("-+-") + "\n");
    for (label, cells) in rows {
        out += &line(
            std::iter::once(label.as_str())
                .chain(cells.iter().map(|c| c.as_deref().unwrap_or("-")))
                .collect(),
        );
    }
    out
}

pub fn format_percent(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

pub fn format_ts(v: f64) -> String {
    format!("{v:.2}")
}

impl EvalReport {
    /// Table with the result rows for one trained model and one picker.
    pub fn text_table(&self, loss_label: &str, picker_label: &str, column: &str) -> String {
        let rows = vec![
            (
                format!("Acc with {loss_label} loss"),
                vec![Some(format_percent(self.pixel_accuracy))],
            ),
            (
                format!("IoU with {loss_label} loss"),
                vec![Some(format!("{:.4}", self.iou_signal))],
            ),
            (
                format!("MAE with {picker_label} (ts)"),
                vec![Some(format_ts(self.mae_ts))],
            ),
            (
                format!("MAE with {picker_label} (ms)"),
                vec![Some(format!("{:.2}", self.mae_ms))],
            ),
            (
                format!("MAE with {picker_label}, valid only (ts)"),
                vec![self.mae_ts_valid_only.map(format_ts)],
            ),
        ];
        render_table("Datasets", &[column.to_string()], &rows)
    }
}
