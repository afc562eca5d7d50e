//! Synthetic shot gathers with ground-truth first arrivals.

mod dataset;
mod disconnect;
mod model;
mod noise;
mod trace;

pub use dataset::{generate_dataset, generate_sample, random_model, DatasetConfig, VariantMix};
pub use disconnect::{apply_disconnections, DeadTraces};
pub use model::{first_arrival_times, VelocityModel};
pub use noise::{
    add_harmonic_noise, harmonic_frequencies, harmonic_noise_field, HarmonicNoise, NoiseConfig,
};
pub use trace::{causal_ricker, ricker, synthesize_gather, CodaConfig};

use crate::error::Result;
use crate::types::{PickLine, SegmentationMask};

/// Ground-truth mask: 1 at and below each receiver's pick, 0 above.
/// Dead receivers keep their model-truth boundary.
pub fn make_mask(picks: &PickLine, time_steps: usize) -> Result<SegmentationMask> {
    SegmentationMask::from_picks(picks, time_steps)
}
