//! Input fixtures for the criterion benchmarks in `benches/`.

use fbpick::io::Variant;
use fbpick::synth::{generate_sample, make_mask, DatasetConfig};
use fbpick::{GatherImage, SegmentationMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A clean synthetic gather of the given size.
pub fn gather(time_steps: usize, receivers: usize, seed: u64) -> GatherImage {
    let cfg = DatasetConfig {
        time_steps,
        receivers,
        ..DatasetConfig::desk_scale()
    };
    generate_sample(&cfg, Variant::Clean, seed)
        .expect("fixture config is valid")
        .0
}

/// The true mask of a synthetic gather with `specks` single-pixel false
/// positives sprinkled above the first arrivals, so the pickers see
/// several candidates per column.
pub fn noisy_mask(
    time_steps: usize,
    receivers: usize,
    specks: usize,
    seed: u64,
) -> SegmentationMask {
    let cfg = DatasetConfig {
        time_steps,
        receivers,
        ..DatasetConfig::desk_scale()
    };
    let (_, picks) = generate_sample(&cfg, Variant::Clean, seed).expect("fixture config is valid");
    let mut mask = make_mask(&picks, time_steps).expect("picks fit the gather");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..specks {
        let r = rng.gen_range(0..receivers);
        if picks.times[r] > 0 {
            mask.classes[[rng.gen_range(0..picks.times[r]), r]] = 1;
        }
    }
    mask
}

/// Foreground scores and `±1` labels for `n` pixels.
pub fn margins(n: usize, seed: u64) -> (Vec<f64>, Vec<i8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<i8> = (0..n)
        .map(|_| if rng.gen_bool(0.5) { 1 } else { -1 })
        .collect();
    let scores = labels
        .iter()
        .map(|&y| y as f64 * rng.gen_range(-1.0..3.0))
        .collect();
    (scores, labels)
}
