use fbpick::io::Variant;
use fbpick::synth::{
    first_arrival_times, generate_sample, harmonic_noise_field, make_mask, DatasetConfig,
    NoiseConfig, VelocityModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes a convex function on `[lo, hi]` by ternary search.
fn ternary_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let a = lo + (hi - lo) / 3.0;
        let b = hi - (hi - lo) / 3.0;
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (lo + hi) / 2.0
}

/// Travel time from explicit ray geometry: for a wave refracted along the
/// top of layer `k`, each overlying layer contributes a down and an up leg
/// whose horizontal extent `d_j` is chosen numerically to minimize time.
fn oracle_time(h: &[f64], v: &[f64], x: f64) -> f64 {
    let mut best = x / v[0];
    for k in 1..v.len() {
        let mut legs = 0.0;
        let mut spent = 0.0;
        for j in 0..k {
            let leg = |d: f64| 2.0 * (h[j] * h[j] + d * d).sqrt() / v[j] - 2.0 * d / v[k];
            let d = ternary_min(leg, 0.0, 1e5);
            legs += 2.0 * (h[j] * h[j] + d * d).sqrt() / v[j];
            spent += 2.0 * d;
        }
        if spent <= x {
            best = best.min(legs + (x - spent) / v[k]);
        }
    }
    best
}

#[test]
fn travel_times_match_ray_geometry_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let layers = rng.gen_range(2..=3);
        let mut v = vec![rng.gen_range(800.0..2500.0)];
        for _ in 1..layers {
            let last = *v.last().unwrap();
            v.push(last * rng.gen_range(1.1..2.5));
        }
        let h: Vec<f64> = (1..layers).map(|_| rng.gen_range(5.0..120.0)).collect();
        let model = VelocityModel {
            layer_thicknesses: h.clone(),
            layer_velocities: v.clone(),
            receiver_spacing: rng.gen_range(2.0..25.0),
            source_receiver_index: rng.gen_range(0..60),
            sample_rate_ms: 4.0,
        };
        let times = first_arrival_times(&model, 60).unwrap();
        for (r, t) in times.iter().enumerate() {
            let x = model.offset(r);
            let want = oracle_time(&h, &v, x);
            assert!(
                (t - want).abs() < 1e-9 * want.max(1e-3),
                "receiver {r}: {t} vs {want}"
            );
        }
    }
}

#[test]
fn harmonic_amplitudes_vary_smoothly_across_traces() {
    // Lag-1 correlation of the GP amplitudes is high and decays with lag.
    let corr = |lag: usize| {
        let (mut sxy, mut sxx, mut syy, mut sx, mut sy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for seed in 0..40 {
            let cfg = NoiseConfig {
                seed,
                gp_length_scale: 10.0,
                ..Default::default()
            };
            let field = harmonic_noise_field(4, 120, 2.0, &cfg).unwrap();
            for a in &field.amplitudes {
                for r in 0..a.len() - lag {
                    let (x, y) = (a[r], a[r + lag]);
                    sxy += x * y;
                    sxx += x * x;
                    syy += y * y;
                    sx += x;
                    sy += y;
                    n += 1.0;
                }
            }
        }
        let cov = sxy / n - sx / n * sy / n;
        cov / ((sxx / n - (sx / n).powi(2)).sqrt() * (syy / n - (sy / n).powi(2)).sqrt())
    };
    let (c1, c60) = (corr(1), corr(60));
    assert!(c1 > 0.9, "lag-1 correlation {c1}");
    assert!(c60 < 0.3, "lag-60 correlation {c60}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_samples_have_step_masks(seed in any::<u64>(), v in 0usize..3) {
        let cfg = DatasetConfig { time_steps: 64, receivers: 48, ..DatasetConfig::desk_scale() };
        let variant = Variant::ALL[v];
        let (g, p) = generate_sample(&cfg, variant, seed).unwrap();
        prop_assert!(p.check_range(g.time_steps()).is_ok());
        let mask = make_mask(&p, g.time_steps()).unwrap();
        prop_assert!(mask.is_monotone_step());
        for r in 0..p.receivers() {
            prop_assert_eq!(mask.classes.column(r).iter().filter(|&&c| c == 0).count(), p.times[r]);
            if !p.valid[r] {
                prop_assert!(g.amplitudes.column(r).iter().all(|&a| a == 0.0));
            }
        }
        if variant == Variant::Clean {
            for r in 0..p.receivers() {
                prop_assert!((0..p.times[r]).all(|t| g.amplitudes[[t, r]] == 0.0));
            }
        }
    }
}
