//! Random layered models and whole-dataset generation.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::disconnect::{apply_disconnections, DeadTraces};
use super::model::{first_arrival_times, VelocityModel};
use super::noise::{add_harmonic_noise, NoiseConfig};
use super::trace::{causal_ricker, synthesize_gather, CodaConfig};
use crate::error::{Error, Result};
use crate::io::{
    ensure_dir, write_gather, write_json, write_mask, write_picks, DatasetManifest, Record, Split,
    SplitSizes, Variant, MANIFEST_FILE, MANIFEST_VERSION,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::types::{GatherImage, PickLine, SegmentationMask};

/// Relative frequency of each variant in the train and validation splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMix {
    pub clean: f64,
    pub disconnected: f64,
    pub noisy: f64,
}

impl Default for VariantMix {
    fn default() -> Self {
        Self {
            clean: 1.0,
            disconnected: 1.0,
            noisy: 1.0,
        }
    }
}

impl VariantMix {
    fn draw(&self, rng: &mut Rng) -> Result<Variant> {
        let total = self.clean + self.disconnected + self.noisy;
        if !(total > 0.0) || self.clean < 0.0 || self.disconnected < 0.0 || self.noisy < 0.0 {
            return Err(Error::Config(
                "variant mix weights must be non-negative with a positive sum".into(),
            ));
        }
        let u = rng.gen::<f64>() * total;
        Ok(if u < self.clean {
            Variant::Clean
        } else if u < self.clean + self.disconnected {
            Variant::Disconnected
        } else {
            Variant::Noisy
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub val: usize,
    /// Test records generated for each of the three variants.
    pub test_per_variant: usize,
    pub time_steps: usize,
    pub receivers: usize,
    pub sample_rate_ms: f64,
    pub wavelet_peak_freq_hz: f64,
    /// Latest first arrival as a fraction of the trace length.
    pub max_arrival_fraction: f64,
    pub coda: CodaConfig,
    /// The per-gather seed overrides `noise.seed`.
    pub noise: NoiseConfig,
    pub train_mix: VariantMix,
    /// Disconnected gathers are between this fraction and the full width.
    pub min_disconnected_width_fraction: f64,
    pub max_dead_spans: usize,
    pub dead_span_width: (usize, usize),
}

impl DatasetConfig {
    /// CPU-sized defaults.
    pub fn desk_scale() -> Self {
        Self {
            train: 300,
            val: 60,
            test_per_variant: 30,
            time_steps: 128,
            receivers: 256,
            sample_rate_ms: 8.0,
            wavelet_peak_freq_hz: 25.0,
            max_arrival_fraction: 0.8,
            coda: CodaConfig::default(),
            noise: NoiseConfig::default(),
            train_mix: VariantMix::default(),
            min_disconnected_width_fraction: 0.7,
            max_dead_spans: 2,
            dead_span_width: (2, 12),
        }
    }

    /// 1000 train / 200 validation gathers of 1250 x 2000 at 8 ms.
    pub fn full_scale() -> Self {
        Self {
            train: 1000,
            val: 200,
            test_per_variant: 200,
            time_steps: 1250,
            receivers: 2000,
            dead_span_width: (5, 80),
            ..Self::desk_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_steps < 8 || self.receivers < 8 {
            return Err(Error::Config("gathers must be at least 8x8".into()));
        }
        if !(self.max_arrival_fraction > 0.0 && self.max_arrival_fraction <= 1.0) {
            return Err(Error::Config(
                "max_arrival_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.min_disconnected_width_fraction > 0.0
            && self.min_disconnected_width_fraction <= 1.0)
        {
            return Err(Error::Config(
                "min_disconnected_width_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.dead_span_width.0 == 0 || self.dead_span_width.0 > self.dead_span_width.1 {
            return Err(Error::Config(
                "dead_span_width must be a non-empty range of positive widths".into(),
            ));
        }
        Ok(())
    }

    /// Narrowest gather the configuration can produce.
    pub fn min_width(&self) -> usize {
        ((self.receivers as f64 * self.min_disconnected_width_fraction).round() as usize).max(8)
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Draws a 2- or 3-layer model whose first arrivals all land before
/// `max_arrival_fraction` of the trace.
pub fn random_model(
    rng: &mut Rng,
    receivers: usize,
    time_steps: usize,
    sample_rate_ms: f64,
    max_arrival_fraction: f64,
    wavelet_len: usize,
) -> Result<VelocityModel> {
    let layers = rng.gen_range(2..=3usize);
    let mut velocities = vec![rng.gen_range(1200.0..2200.0)];
    for _ in 1..layers {
        let prev = *velocities.last().unwrap();
        velocities.push(prev * rng.gen_range(1.3..2.0));
    }
    let thicknesses = (1..layers).map(|_| rng.gen_range(15.0..80.0)).collect();
    let mut model = VelocityModel {
        layer_thicknesses: thicknesses,
        layer_velocities: velocities,
        receiver_spacing: rng.gen_range(4.0..12.0),
        source_receiver_index: rng.gen_range(0..receivers),
        sample_rate_ms,
    };
    let last_sample = (time_steps as f64 * max_arrival_fraction).min((time_steps - 1) as f64);
    let limit = ((last_sample - wavelet_len as f64).max(1.0)) * sample_rate_ms * 1e-3;
    for _ in 0..200 {
        let latest = first_arrival_times(&model, receivers)?
            .into_iter()
            .fold(0.0f64, f64::max);
        if latest <= limit {
            return Ok(model);
        }
        model.receiver_spacing *= 0.9 * (limit / latest).max(0.1);
    }
    Err(Error::Config(format!(
        "cannot fit first arrivals of {receivers} receivers into {time_steps} samples"
    )))
}

fn clean_gather(
    cfg: &DatasetConfig,
    width: usize,
    rng: &mut Rng,
) -> Result<(GatherImage, PickLine)> {
    let wavelet_len = causal_ricker(cfg.wavelet_peak_freq_hz, cfg.sample_rate_ms).len();
    let model = random_model(
        rng,
        width,
        cfg.time_steps,
        cfg.sample_rate_ms,
        cfg.max_arrival_fraction,
        wavelet_len,
    )?;
    synthesize_gather(
        &model,
        cfg.time_steps,
        width,
        cfg.wavelet_peak_freq_hz,
        &cfg.coda,
        rng.gen(),
    )
}

/// Generates one gather of the requested variant from a single seed.
pub fn generate_sample(
    cfg: &DatasetConfig,
    variant: Variant,
    seed: u64,
) -> Result<(GatherImage, PickLine)> {
    let mut rng = rng_from_seed(seed);
    match variant {
        Variant::Clean => clean_gather(cfg, cfg.receivers, &mut rng),
        Variant::Noisy => {
            let (g, p) = clean_gather(cfg, cfg.receivers, &mut rng)?;
            let noise = NoiseConfig {
                seed: rng.gen(),
                ..cfg.noise.clone()
            };
            Ok((add_harmonic_noise(&g, &noise)?, p))
        }
        Variant::Disconnected => {
            let width = rng.gen_range(cfg.min_width()..=cfg.receivers.max(cfg.min_width()));
            let left = rng.gen_range(width / 4..=3 * width / 4).max(8);
            let right = width.saturating_sub(left).max(8);
            let parts = [
                clean_gather(cfg, left, &mut rng)?,
                clean_gather(cfg, right, &mut rng)?,
            ];
            let dead = DeadTraces::Random {
                count: rng.gen_range(0..=cfg.max_dead_spans),
                min_width: cfg.dead_span_width.0,
                max_width: cfg.dead_span_width.1.min(left + right),
            };
            apply_disconnections(&parts, &dead, true, rng.gen())
        }
    }
}

/// Writes a dataset directory (`manifest.json` plus one gather, mask and
/// pick file per record). Output is a pure function of `(cfg, seed)`.
pub fn generate_dataset(cfg: &DatasetConfig, output: &Path, seed: u64) -> Result<DatasetManifest> {
    cfg.validate()?;
    ensure_dir(output)?;
    let mut plan: Vec<(Split, Option<Variant>)> = Vec::new();
    plan.extend(std::iter::repeat_n((Split::Train, None), cfg.train));
    plan.extend(std::iter::repeat_n((Split::Val, None), cfg.val));
    for v in Variant::ALL {
        plan.extend(std::iter::repeat_n(
            (Split::Test, Some(v)),
            cfg.test_per_variant,
        ));
    }

    let mut records = Vec::with_capacity(plan.len());
    for (index, (split, fixed)) in plan.into_iter().enumerate() {
        let record_seed = derive_seed(seed, index as u64);
        let variant = match fixed {
            Some(v) => v,
            None => cfg
                .train_mix
                .draw(&mut rng_from_seed(derive_seed(record_seed, u64::MAX)))?,
        };
        let (gather, picks) = generate_sample(cfg, variant, record_seed)?;
        let mask = SegmentationMask::from_picks(&picks, gather.time_steps())?;
        let record = Record::new(
            index,
            split,
            variant,
            gather.time_steps(),
            gather.receivers(),
        );
        write_gather(&output.join(&record.gather), &gather)?;
        write_mask(&output.join(&record.mask), &mask)?;
        write_picks(&output.join(&record.picks), &picks)?;
        records.push(record);
    }

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        sample_rate_ms: cfg.sample_rate_ms,
        seed,
        config_hash: cfg.hash(),
        splits: SplitSizes {
            train: cfg.train,
            val: cfg.val,
            test: 3 * cfg.test_per_variant,
        },
        config: serde_json::to_value(cfg).expect("config serializes"),
        records,
    };
    write_json(&output.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DatasetConfig {
        DatasetConfig {
            train: 10,
            val: 2,
            test_per_variant: 0,
            time_steps: 32,
            receivers: 24,
            ..DatasetConfig::desk_scale()
        }
    }

    #[test]
    fn manifest_lists_every_record() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_dataset(&tiny(), dir.path(), 5).unwrap();
        assert_eq!(m.records.len(), 12);
        assert_eq!(m.records_in(Split::Train).count(), 10);
        assert_eq!(m.records_in(Split::Val).count(), 2);
        assert_eq!(m.splits.train, 10);
        for r in &m.records {
            assert!(dir.path().join(&r.gather).exists());
        }
    }

    #[test]
    fn every_variant_produces_valid_picks() {
        let cfg = tiny();
        for v in Variant::ALL {
            for s in 0..5 {
                let (g, p) = generate_sample(&cfg, v, s).unwrap();
                assert_eq!(g.receivers(), p.receivers());
                p.check_range(g.time_steps()).unwrap();
                assert!(g.receivers() >= cfg.min_width().min(cfg.receivers));
            }
        }
    }
}
