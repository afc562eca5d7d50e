//! PNG overlays of a gather with its pick lines.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::types::{GatherImage, PickLine};

pub const TRUTH_COLOR: Rgb<u8> = Rgb([220, 30, 30]);
pub const PREDICTION_COLOR: Rgb<u8> = Rgb([30, 90, 230]);

/// Renders the gather in grey (amplitude clipped to ±max|a|) with the
/// ground-truth line in red and the predicted line in blue. Invalid picks
/// are drawn as single pixels instead of 3-pixel markers.
pub fn render_overlay(
    gather: &GatherImage,
    truth: Option<&PickLine>,
    prediction: Option<&PickLine>,
) -> RgbImage {
    let (t, r) = gather.amplitudes.dim();
    let scale = gather.max_abs().max(f32::MIN_POSITIVE);
    let mut img = RgbImage::from_fn(r as u32, t as u32, |x, y| {
        let v = gather.amplitudes[[y as usize, x as usize]] / scale;
        let g = (127.5 * (1.0 - v.clamp(-1.0, 1.0))).round() as u8;
        Rgb([g, g, g])
    });
    for (line, color) in [(truth, TRUTH_COLOR), (prediction, PREDICTION_COLOR)] {
        let Some(line) = line else { continue };
        for (x, (&time, &ok)) in line.times.iter().zip(&line.valid).enumerate().take(r) {
            let lo = if ok { time.saturating_sub(1) } else { time };
            let hi = if ok { time + 1 } else { time };
            for y in lo..=hi.min(t.saturating_sub(1)) {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
    img
}

pub fn overlay_png(
    path: &Path,
    gather: &GatherImage,
    truth: Option<&PickLine>,
    prediction: Option<&PickLine>,
) -> Result<()> {
    render_overlay(gather, truth, prediction).save(path)?;
    Ok(())
}
