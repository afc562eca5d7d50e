mod common;

use fbpick::metrics::{build_report, iou_signal, mae, pixel_accuracy, Weighting};
use fbpick::{PickLine, SegmentationMask};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_picks;

fn random_mask(rng: &mut impl Rng, t: usize, r: usize) -> SegmentationMask {
    SegmentationMask::new(Array2::from_shape_fn((t, r), |_| rng.gen_range(0..2u8))).unwrap()
}

#[test]
fn report_fields_match_single_metric_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut pm, mut gm, mut pp, mut gp) = (vec![], vec![], vec![], vec![]);
    for _ in 0..5 {
        let (t, r) = (rng.gen_range(4..20), rng.gen_range(3..15));
        pm.push(random_mask(&mut rng, t, r));
        gm.push(random_mask(&mut rng, t, r));
        pp.push(random_picks(&mut rng, r, t));
        let mut g = random_picks(&mut rng, r, t);
        g.valid[0] = false;
        gp.push(g);
    }
    let rep = build_report(&pm, &pp, &gm, &gp, 4.0).unwrap();
    // Pooled counts by hand.
    let (mut correct, mut total, mut inter, mut union) = (0, 0, 0, 0);
    for (p, g) in pm.iter().zip(&gm) {
        for (&a, &b) in p.classes.iter().zip(g.classes.iter()) {
            correct += usize::from(a == b);
            total += 1;
            inter += usize::from(a == 1 && b == 1);
            union += usize::from(a == 1 || b == 1);
        }
    }
    let (mut err, mut n, mut err_valid, mut n_valid) = (0.0, 0, 0.0, 0);
    for (p, g) in pp.iter().zip(&gp) {
        for r in 0..p.receivers() {
            let e = p.times[r].abs_diff(g.times[r]) as f64;
            err += e;
            n += 1;
            if g.valid[r] {
                err_valid += e;
                n_valid += 1;
            }
        }
    }
    assert_eq!(rep.pixel_accuracy, correct as f64 / total as f64);
    assert_eq!(rep.iou_signal, inter as f64 / union as f64);
    assert!((rep.mae_ts - err / n as f64).abs() < 1e-12);
    assert!((rep.mae_ts_valid_only.unwrap() - err_valid / n_valid as f64).abs() < 1e-12);
    assert_eq!(rep.mae_ms, rep.mae_ts * 4.0);
    assert_eq!(rep.invalid_receivers, 5);
    assert_eq!(rep.per_image.len(), 5);
    for (i, s) in rep.per_image.iter().enumerate() {
        assert_eq!(
            s.pixel_accuracy,
            pixel_accuracy(&pm[i..=i], &gm[i..=i], Weighting::Pixel).unwrap()
        );
        assert_eq!(s.mae_ts, mae(&pp[i..=i], &gp[i..=i], true).unwrap());
    }
}

fn mask_pair() -> impl Strategy<Value = (SegmentationMask, SegmentationMask)> {
    (1usize..8, 1usize..8).prop_flat_map(|(t, r)| {
        let m = move || {
            prop::collection::vec(0u8..2, t * r).prop_map(move |v| {
                SegmentationMask::new(Array2::from_shape_vec((t, r), v).unwrap()).unwrap()
            })
        };
        (m(), m())
    })
}

proptest! {
    #[test]
    fn accuracy_and_mae_are_symmetric((a, b) in mask_pair(), seed in any::<u64>()) {
        prop_assert_eq!(
            pixel_accuracy(std::slice::from_ref(&a), std::slice::from_ref(&b), Weighting::Pixel).unwrap(),
            pixel_accuracy(std::slice::from_ref(&b), std::slice::from_ref(&a), Weighting::Pixel).unwrap()
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_picks(&mut rng, a.receivers(), 50);
        let q = random_picks(&mut rng, a.receivers(), 50);
        prop_assert_eq!(mae(std::slice::from_ref(&p), std::slice::from_ref(&q), true).unwrap(), mae(&[q], &[p], true).unwrap());
    }

    #[test]
    fn iou_one_iff_foregrounds_match((a, b) in mask_pair()) {
        let same = a.classes.iter().zip(b.classes.iter()).all(|(x, y)| (*x == 1) == (*y == 1));
        prop_assert_eq!(iou_signal(&[a], &[b]).unwrap() == 1.0, same);
    }

    #[test]
    fn image_order_does_not_matter(pairs in prop::collection::vec(mask_pair(), 1..5)) {
        let (p, g): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let (pr, gr): (Vec<_>, Vec<_>) = pairs.iter().rev().cloned().unzip();
        prop_assert!((pixel_accuracy(&p, &g, Weighting::Pixel).unwrap() - pixel_accuracy(&pr, &gr, Weighting::Pixel).unwrap()).abs() < 1e-12);
        prop_assert!((iou_signal(&p, &g).unwrap() - iou_signal(&pr, &gr).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_that_mae(times in prop::collection::vec(0usize..100, 1..40), k in 0usize..20) {
        let gt = PickLine::all_valid(times.clone());
        let shifted = PickLine::all_valid(times.iter().map(|t| t + k).collect());
        prop_assert_eq!(mae(&[shifted], &[gt], true).unwrap(), k as f64);
    }
}
