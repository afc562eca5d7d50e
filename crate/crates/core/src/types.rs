//! Data shared by every stage: gathers, pick lines and segmentation masks.
//!
//! All 2-D arrays are `(time, receiver)`: row `t` is a time step, column `r`
//! is a trace.

use ndarray::{s, Array2};

use crate::error::{Error, Result};

/// A shot gather image: seismic amplitudes over time steps × receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct GatherImage {
    pub amplitudes: Array2<f32>,
    /// Sample interval in milliseconds.
    pub sample_rate_ms: f64,
}

impl GatherImage {
    pub fn new(amplitudes: Array2<f32>, sample_rate_ms: f64) -> Self {
        Self {
            amplitudes,
            sample_rate_ms,
        }
    }

    pub fn zeros(time_steps: usize, receivers: usize, sample_rate_ms: f64) -> Self {
        Self::new(Array2::zeros((time_steps, receivers)), sample_rate_ms)
    }

    pub fn time_steps(&self) -> usize {
        self.amplitudes.nrows()
    }

    pub fn receivers(&self) -> usize {
        self.amplitudes.ncols()
    }

    pub fn max_abs(&self) -> f32 {
        self.amplitudes.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Copies columns `[start, start + width)`.
    pub fn crop_columns(&self, start: usize, width: usize) -> GatherImage {
        GatherImage::new(
            self.amplitudes
                .slice(s![.., start..start + width])
                .to_owned(),
            self.sample_rate_ms,
        )
    }
}

/// Per-receiver first-arrival time indices.
///
/// `valid[r]` is false for dead traces or for columns where a picker had no
/// candidate and carried a neighbouring pick forward.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PickLine {
    pub times: Vec<usize>,
    pub valid: Vec<bool>,
}

impl PickLine {
    pub fn new(times: Vec<usize>, valid: Vec<bool>) -> Result<Self> {
        if times.len() != valid.len() {
            return Err(Error::Shape(format!(
                "pick line has {} times but {} validity flags",
                times.len(),
                valid.len()
            )));
        }
        Ok(Self { times, valid })
    }

    pub fn all_valid(times: Vec<usize>) -> Self {
        let valid = vec![true; times.len()];
        Self { times, valid }
    }

    pub fn receivers(&self) -> usize {
        self.times.len()
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Checks `times[r] < time_steps` for every valid receiver.
    pub fn check_range(&self, time_steps: usize) -> Result<()> {
        for (r, (&t, &ok)) in self.times.iter().zip(&self.valid).enumerate() {
            if ok && t >= time_steps {
                return Err(Error::Shape(format!(
                    "pick {t} at receiver {r} outside [0, {time_steps})"
                )));
            }
        }
        Ok(())
    }

    pub fn reversed(&self) -> PickLine {
        PickLine {
            times: self.times.iter().rev().copied().collect(),
            valid: self.valid.iter().rev().copied().collect(),
        }
    }
}

/// Binary per-pixel class map: 0 = non-signal (above the first arrival),
/// 1 = signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    pub classes: Array2<u8>,
}

impl SegmentationMask {
    pub fn new(classes: Array2<u8>) -> Result<Self> {
        if classes.iter().any(|&c| c > 1) {
            return Err(Error::Shape("mask entries must be 0 or 1".into()));
        }
        Ok(Self { classes })
    }

    pub fn time_steps(&self) -> usize {
        self.classes.nrows()
    }

    pub fn receivers(&self) -> usize {
        self.classes.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.classes.dim()
    }

    /// Builds the step mask whose column `r` switches from 0 to 1 at
    /// `picks.times[r]`. Invalid receivers still use their stored time.
    pub fn from_picks(picks: &PickLine, time_steps: usize) -> Result<Self> {
        if let Some(r) = picks.times.iter().position(|&t| t >= time_steps) {
            return Err(Error::Shape(format!(
                "pick {} at receiver {r} outside [0, {time_steps})",
                picks.times[r]
            )));
        }
        let classes = Array2::from_shape_fn((time_steps, picks.receivers()), |(t, r)| {
            u8::from(t >= picks.times[r])
        });
        Ok(Self { classes })
    }

    pub fn is_monotone_step(&self) -> bool {
        self.classes
            .columns()
            .into_iter()
            .all(|col| col.windows(2).into_iter().all(|w| w[0] <= w[1]))
    }

    pub fn flipped_columns(&self) -> SegmentationMask {
        SegmentationMask {
            classes: self.classes.slice(s![.., ..;-1]).to_owned(),
        }
    }
}
