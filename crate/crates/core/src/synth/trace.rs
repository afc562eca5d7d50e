//! Trace synthesis: a causal Ricker onset at the first arrival followed by
//! a decaying coda of weaker arrivals.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{first_arrival_times, VelocityModel};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::types::{GatherImage, PickLine};

/// Ricker wavelet `(1 - 2π²f²t²)·exp(-π²f²t²)` at time `t` seconds.
pub fn ricker(peak_freq_hz: f64, t: f64) -> f64 {
    let a = (PI * peak_freq_hz * t).powi(2);
    (1.0 - 2.0 * a) * (-a).exp()
}

/// Samples of a Ricker wavelet truncated to `±0.6/f` and shifted so that
/// index 0 is its first sample. The central peak sits at index `len / 2`.
pub fn causal_ricker(peak_freq_hz: f64, sample_rate_ms: f64) -> Vec<f64> {
    let dt = sample_rate_ms * 1e-3;
    let half = ((0.6 / (peak_freq_hz * dt)).ceil() as usize).max(1);
    (0..=2 * half)
        .map(|k| ricker(peak_freq_hz, (k as f64 - half as f64) * dt))
        .collect()
}

/// Texture of the signal region below the first arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodaConfig {
    /// RMS amplitude of coda events relative to the first-arrival peak.
    pub amplitude: f64,
    /// e-folding time of the coda envelope, milliseconds.
    pub decay_ms: f64,
    /// Expected number of coda events per second of trace.
    pub events_per_second: f64,
    /// Offset in metres over which the first-arrival amplitude halves
    /// (`1/(1 + x/d)` spreading). Zero disables spreading.
    pub spreading_m: f64,
}

impl Default for CodaConfig {
    fn default() -> Self {
        Self {
            amplitude: 0.35,
            decay_ms: 250.0,
            events_per_second: 40.0,
            spreading_m: 1500.0,
        }
    }
}

/// Synthesizes a clean gather and its ground-truth pick line.
///
/// Samples strictly above each trace's pick are exactly zero.
pub fn synthesize_gather(
    model: &VelocityModel,
    time_steps: usize,
    receivers: usize,
    wavelet_peak_freq_hz: f64,
    coda: &CodaConfig,
    seed: u64,
) -> Result<(GatherImage, PickLine)> {
    if time_steps < 8 || receivers < 8 {
        return Err(Error::Config(format!(
            "gather must be at least 8x8, got {time_steps}x{receivers}"
        )));
    }
    if !(wavelet_peak_freq_hz > 0.0) {
        return Err(Error::Config(
            "wavelet peak frequency must be positive".into(),
        ));
    }
    let arrivals = first_arrival_times(model, receivers)?;
    let dt = model.sample_rate_ms * 1e-3;
    let mut times = Vec::with_capacity(receivers);
    for (r, &t) in arrivals.iter().enumerate() {
        let sample = (t / dt).round() as usize;
        if sample >= time_steps {
            return Err(Error::ArrivalOutOfRange {
                receiver: r,
                sample,
                last: time_steps - 1,
            });
        }
        times.push(sample);
    }

    let wavelet = causal_ricker(wavelet_peak_freq_hz, model.sample_rate_ms);
    let mut rng = rng_from_seed(seed);
    let mut amps = Array2::<f64>::zeros((time_steps, receivers));
    let event_prob = (coda.events_per_second * dt).clamp(0.0, 1.0);
    let decay = (coda.decay_ms * 1e-3).max(dt);

    for (r, &onset) in times.iter().enumerate() {
        let gain = if coda.spreading_m > 0.0 {
            1.0 / (1.0 + model.offset(r) / coda.spreading_m)
        } else {
            1.0
        };
        let polarity_jitter: f64 = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
        stamp(&mut amps, r, onset, &wavelet, gain * polarity_jitter);
        // Coda events start after the onset wavelet so the first non-zero
        // sample stays at `onset`.
        for start in onset + wavelet.len()..time_steps {
            if rng.gen::<f64>() < event_prob {
                let lag = (start - onset) as f64 * dt;
                let z: f64 = StandardNormal.sample(&mut rng);
                let a = gain * coda.amplitude * z * (-lag / decay).exp();
                stamp(&mut amps, r, start, &wavelet, a);
            }
        }
    }

    let gather = GatherImage::new(amps.mapv(|v| v as f32), model.sample_rate_ms);
    Ok((gather, PickLine::all_valid(times)))
}

fn stamp(amps: &mut Array2<f64>, col: usize, start: usize, wavelet: &[f64], scale: f64) {
    let rows = amps.nrows();
    for (k, w) in wavelet.iter().enumerate() {
        let t = start + k;
        if t >= rows {
            break;
        }
        amps[[t, col]] += scale * w;
    }
}
