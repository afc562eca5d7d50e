//! 1-D layered earth and refraction travel times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontally layered velocity model with a line of receivers at the
/// surface. The last layer is a half-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityModel {
    /// Thickness of each layer above the half-space, metres (length L-1).
    pub layer_thicknesses: Vec<f64>,
    /// Interval velocity of each layer, m/s (length L), strictly increasing.
    pub layer_velocities: Vec<f64>,
    /// Receiver spacing in metres.
    pub receiver_spacing: f64,
    /// Column index of the receiver nearest the source.
    pub source_receiver_index: usize,
    /// Sample interval in milliseconds.
    pub sample_rate_ms: f64,
}

impl VelocityModel {
    pub fn validate(&self) -> Result<()> {
        let v = &self.layer_velocities;
        if v.is_empty() {
            return Err(Error::VelocityModel("no layers".into()));
        }
        if self.layer_thicknesses.len() + 1 != v.len() {
            return Err(Error::VelocityModel(format!(
                "{} velocities need {} thicknesses, got {}",
                v.len(),
                v.len() - 1,
                self.layer_thicknesses.len()
            )));
        }
        if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::VelocityModel("velocities must be positive".into()));
        }
        if self
            .layer_thicknesses
            .iter()
            .any(|&h| !(h > 0.0 && h.is_finite()))
        {
            return Err(Error::VelocityModel("thicknesses must be positive".into()));
        }
        if v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::VelocityModel(
                "velocities must increase strictly with depth".into(),
            ));
        }
        if !(self.receiver_spacing > 0.0) || !(self.sample_rate_ms > 0.0) {
            return Err(Error::VelocityModel(
                "receiver spacing and sample rate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn offset(&self, receiver: usize) -> f64 {
        receiver.abs_diff(self.source_receiver_index) as f64 * self.receiver_spacing
    }

    /// Intercept time and critical distance of the head wave travelling
    /// along the top of layer `below` (1-based index into the velocities).
    fn head_wave(&self, below: usize) -> (f64, f64) {
        let v = &self.layer_velocities;
        let vr = v[below];
        let mut intercept = 0.0;
        let mut critical = 0.0;
        for (&h, &vi) in self.layer_thicknesses.iter().zip(&v[..below]) {
            let slowness = (1.0 / (vi * vi) - 1.0 / (vr * vr)).sqrt();
            intercept += 2.0 * h * slowness;
            let sin = vi / vr;
            critical += 2.0 * h * sin / (1.0 - sin * sin).sqrt();
        }
        (intercept, critical)
    }

    /// First-arrival time in seconds at horizontal offset `x` metres.
    pub fn travel_time(&self, x: f64) -> f64 {
        let v = &self.layer_velocities;
        let mut best = x / v[0];
        for (below, &vb) in v.iter().enumerate().skip(1) {
            let (intercept, critical) = self.head_wave(below);
            if x >= critical {
                best = best.min(x / vb + intercept);
            }
        }
        best
    }
}

/// First-arrival times in seconds for receivers `0..num_receivers`: the
/// fastest of the direct wave and every post-critical head wave.
pub fn first_arrival_times(model: &VelocityModel, num_receivers: usize) -> Result<Vec<f64>> {
    model.validate()?;
    if num_receivers == 0 {
        return Err(Error::Config("need at least one receiver".into()));
    }
    Ok((0..num_receivers)
        .map(|r| model.travel_time(model.offset(r)))
        .collect())
}
