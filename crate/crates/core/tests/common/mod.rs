//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use fbpick::{PickLine, SegmentationMask};
use rand::Rng;

/// Jaccard loss of the signal class when exactly the pixels in `wrong` are
/// mispredicted, as an exact `(numerator, denominator)` of `1 - J`.
pub fn delta_j_ratio(gt: &[u8], wrong: &[bool]) -> (usize, usize) {
    let mut inter = 0;
    let mut union = 0;
    for (&g, &w) in gt.iter().zip(wrong) {
        let pred = if w { 1 - g } else { g };
        inter += usize::from(pred == 1 && g == 1);
        union += usize::from(pred == 1 || g == 1);
    }
    if union == 0 {
        (0, 1)
    } else {
        (union - inter, union)
    }
}

pub fn delta_j(gt: &[u8], wrong: &[bool]) -> f64 {
    let (n, d) = delta_j_ratio(gt, wrong);
    n as f64 / d as f64
}

/// Cross-entropy by a plain loop over `(p0, p1)` pairs.
pub fn naive_cross_entropy(probs: &[[f64; 2]], labels: &[u8]) -> f64 {
    let mut s = 0.0;
    for i in 0..probs.len() {
        let p = probs[i][labels[i] as usize];
        s += -(if p < 1e-12 { 1e-12 } else { p }).ln();
    }
    s / probs.len() as f64
}

/// Picks drawn uniformly in `[0, time_steps)`.
pub fn random_picks(rng: &mut impl Rng, receivers: usize, time_steps: usize) -> PickLine {
    PickLine::all_valid(
        (0..receivers)
            .map(|_| rng.gen_range(0..time_steps))
            .collect(),
    )
}

/// Step mask with column `r` switching to 1 at `times[r]`, built directly.
pub fn step_mask(times: &[usize], time_steps: usize) -> SegmentationMask {
    let classes =
        ndarray::Array2::from_shape_fn((time_steps, times.len()), |(t, r)| u8::from(t >= times[r]));
    SegmentationMask::new(classes).unwrap()
}

pub fn mean_abs_diff(a: &[usize], b: &[usize]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.abs_diff(*y) as f64)
        .sum::<f64>()
        / a.len() as f64
}

/// A smooth first-arrival line with a detached early blob above it on
/// columns `[blob_start, blob_end)`.
pub struct BlobCase {
    pub truth: Vec<usize>,
    pub mask: SegmentationMask,
    pub blob: (usize, usize),
}

pub fn blob_case(rng: &mut impl Rng) -> BlobCase {
    let t_len = rng.gen_range(64..=128usize);
    let r_len = rng.gen_range(64..=128usize);
    let base = rng.gen_range(t_len / 2..t_len * 3 / 4) as f64;
    let slope = rng.gen_range(-0.15..0.15);
    let truth: Vec<usize> = (0..r_len)
        .map(|r| (base + slope * (r as f64 - r_len as f64 / 2.0)).round() as usize)
        .collect();
    let blob_start = rng.gen_range(5..r_len / 2);
    let blob_end = rng.gen_range(blob_start + 2..(blob_start + 30).min(r_len - 5));
    let mut classes = step_mask(&truth, t_len).classes;
    for r in blob_start..blob_end {
        let top = rng.gen_range(2..truth[r] / 2);
        let bottom = rng.gen_range(top + 1..truth[r] - 8);
        for t in top..bottom {
            classes[[t, r]] = 1;
        }
    }
    BlobCase {
        truth,
        mask: SegmentationMask::new(classes).unwrap(),
        blob: (blob_start, blob_end),
    }
}
