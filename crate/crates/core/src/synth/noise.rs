//! Multi-harmonic power-line noise whose per-trace amplitude follows a
//! Gaussian process across receivers.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::types::GatherImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Fundamental frequency in Hz.
    pub base_frequency: f64,
    /// Number of harmonics `k·base` considered; those at or above Nyquist
    /// are dropped.
    pub num_harmonics: usize,
    /// Squared-exponential length scale of the amplitude process, traces.
    pub gp_length_scale: f64,
    /// Target `max|noise| / max|clean signal|`.
    pub amplitude_ratio: f64,
    /// Standard deviation of the per-trace phase jitter, radians.
    pub phase_jitter_std: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            base_frequency: 50.0,
            num_harmonics: 3,
            gp_length_scale: 20.0,
            amplitude_ratio: 0.5,
            phase_jitter_std: 0.1,
            seed: 0,
        }
    }
}

const GP_JITTER: f64 = 1e-8;

/// Unscaled noise field plus the pieces it was built from.
#[derive(Debug, Clone)]
pub struct HarmonicNoise {
    /// `(time, receiver)` noise before rescaling.
    pub field: Array2<f64>,
    /// Frequencies that survived the Nyquist cut, Hz.
    pub frequencies: Vec<f64>,
    /// Per-harmonic amplitude `|GP draw|` for every receiver.
    pub amplitudes: Vec<Vec<f64>>,
}

/// Harmonics `k·base` (k = 1, 2, ...) strictly below Nyquist.
pub fn harmonic_frequencies(cfg: &NoiseConfig, sample_rate_ms: f64) -> Result<Vec<f64>> {
    let nyquist = 1000.0 / (2.0 * sample_rate_ms);
    let freqs: Vec<f64> = (1..=cfg.num_harmonics)
        .map(|k| k as f64 * cfg.base_frequency)
        .filter(|&f| f < nyquist)
        .collect();
    if freqs.is_empty() {
        return Err(Error::NoHarmonics {
            base_frequency: cfg.base_frequency,
            nyquist,
        });
    }
    Ok(freqs)
}

/// Lower Cholesky factor of the squared-exponential covariance over
/// `n` equally spaced traces.
fn gp_factor(n: usize, length_scale: f64) -> Result<DMatrix<f64>> {
    let mut jitter = GP_JITTER;
    for _ in 0..8 {
        let k = DMatrix::from_fn(n, n, |i, j| {
            let d = i as f64 - j as f64;
            (-(d * d) / (2.0 * length_scale * length_scale)).exp()
                + if i == j { jitter } else { 0.0 }
        });
        if let Some(chol) = k.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 10.0;
    }
    Err(Error::Config(format!(
        "GP covariance not positive definite (n={n}, length scale {length_scale})"
    )))
}

pub fn harmonic_noise_field(
    time_steps: usize,
    receivers: usize,
    sample_rate_ms: f64,
    cfg: &NoiseConfig,
) -> Result<HarmonicNoise> {
    if !(cfg.gp_length_scale > 0.0) || cfg.phase_jitter_std < 0.0 {
        return Err(Error::Config(
            "noise length scale must be positive and jitter non-negative".into(),
        ));
    }
    let frequencies = harmonic_frequencies(cfg, sample_rate_ms)?;
    let chol = gp_factor(receivers, cfg.gp_length_scale)?;
    let dt = sample_rate_ms * 1e-3;
    let jitter = Normal::new(0.0, cfg.phase_jitter_std).expect("non-negative std");
    let mut field = Array2::<f64>::zeros((time_steps, receivers));
    let mut amplitudes = Vec::with_capacity(frequencies.len());
    for (k, &f) in frequencies.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, k as u64));
        let z = DVector::from_fn(receivers, |_, _| StandardNormal.sample(&mut rng));
        let amp: Vec<f64> = (&chol * z).iter().map(|v| v.abs()).collect();
        let phase = rng.gen_range(0.0..2.0 * PI);
        for (r, a) in amp.iter().enumerate() {
            let eps = jitter.sample(&mut rng);
            for t in 0..time_steps {
                field[[t, r]] += a * (2.0 * PI * f * t as f64 * dt + phase + eps).sin();
            }
        }
        amplitudes.push(amp);
    }
    Ok(HarmonicNoise {
        field,
        frequencies,
        amplitudes,
    })
}

/// Adds harmonic noise scaled so that `max|noise|` is exactly
/// `amplitude_ratio · max|gather|`. The noise covers the whole trace,
/// including the silent region above the first arrival.
pub fn add_harmonic_noise(gather: &GatherImage, cfg: &NoiseConfig) -> Result<GatherImage> {
    if !(cfg.amplitude_ratio >= 0.0) {
        return Err(Error::Config("amplitude ratio must be non-negative".into()));
    }
    harmonic_frequencies(cfg, gather.sample_rate_ms)?;
    let signal_max = gather.max_abs() as f64;
    if !(signal_max > 0.0) {
        return Err(Error::Config(
            "cannot scale noise against a silent gather".into(),
        ));
    }
    let (t, r) = gather.amplitudes.dim();
    let noise = harmonic_noise_field(t, r, gather.sample_rate_ms, cfg)?;
    if cfg.amplitude_ratio == 0.0 {
        return Ok(gather.clone());
    }
    let noise_max = noise.field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(noise_max > 0.0) {
        return Err(Error::Config("degenerate noise field".into()));
    }
    let scale = cfg.amplitude_ratio * signal_max / noise_max;
    let mut out = gather.clone();
    ndarray::Zip::from(&mut out.amplitudes)
        .and(&noise.field)
        .for_each(|a, &n| *a = (*a as f64 + scale * n) as f32);
    Ok(out)
}
