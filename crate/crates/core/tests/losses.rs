mod common;

use fbpick::losses::{
    cross_entropy, lovasz_grad, lovasz_hinge, lovasz_hinge_with_grad, softmax_pairs, LabeledBatch,
    LossKind,
};
use ndarray::{Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{delta_j, naive_cross_entropy};

#[test]
fn cross_entropy_matches_loop_on_random_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let logits = Array4::from_shape_fn((2, 2, 4, 4), |_| rng.gen_range(-3.0..3.0));
    let labels = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(0..2u8));
    let probs = softmax_pairs(logits.view());
    let flat: Vec<u8> = labels.iter().copied().collect();
    let direct = cross_entropy(&probs, &flat).unwrap();
    assert!((direct - naive_cross_entropy(&probs, &flat)).abs() < 1e-10);
    let batch = LabeledBatch::new(logits, labels).unwrap();
    assert!((batch.loss(LossKind::CrossEntropy) - direct).abs() < 1e-10);
    assert!((batch.loss_and_gradient(LossKind::CrossEntropy).0 - direct).abs() < 1e-10);
}

#[test]
fn empty_foreground_gradient_convention() {
    // With J(∅, ∅) = 1 the first mistaken background pixel turns the loss
    // from 0 to 1; every later one adds nothing.
    for p in 1..8 {
        let g = lovasz_grad(&vec![0; p]).unwrap();
        let mut expect = vec![0.0; p];
        expect[0] = 1.0;
        assert_eq!(g, expect);
        for k in 0..=p {
            let wrong: Vec<bool> = (0..p).map(|i| i < k).collect();
            assert_eq!(g[..k].iter().sum::<f64>(), delta_j(&vec![0; p], &wrong));
        }
    }
}

#[test]
fn lovasz_gradient_zero_when_margins_exceed_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let labels = Array3::from_shape_fn((2, 6, 6), |_| rng.gen_range(0..2u8));
        let logits = Array4::from_shape_fn((2, 2, 6, 6), |(b, c, i, j)| {
            let y = labels[[b, i, j]] as f64 * 2.0 - 1.0;
            let margin = rng.gen_range(1.01..4.0);
            // F = s1 - s0 = y * margin
            if c == 1 {
                y * margin / 2.0
            } else {
                -y * margin / 2.0
            }
        });
        let batch = LabeledBatch::new(logits, labels).unwrap();
        let (loss, grad) = batch.loss_and_gradient(LossKind::Lovasz);
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn per_image_lovasz_is_batch_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = Array4::from_shape_fn((3, 2, 5, 4), |_| rng.gen_range(-2.0..2.0));
    let labels = Array3::from_shape_fn((3, 5, 4), |_| rng.gen_range(0..2u8));
    let mut expect = 0.0;
    for b in 0..3 {
        let f: Vec<f64> = (0..20)
            .map(|k| logits[[b, 1, k / 4, k % 4]] - logits[[b, 0, k / 4, k % 4]])
            .collect();
        let y: Vec<i8> = (0..20)
            .map(|k| 2 * labels[[b, k / 4, k % 4]] as i8 - 1)
            .collect();
        expect += lovasz_hinge(&f, &y).unwrap() / 3.0;
    }
    let batch = LabeledBatch::new(logits, labels).unwrap();
    assert!((batch.loss(LossKind::Lovasz) - expect).abs() < 1e-12);
    assert!((batch.loss_and_gradient(LossKind::Lovasz).0 - expect).abs() < 1e-12);
}

#[test]
fn batch_rejects_bad_shapes() {
    let logits = Array4::<f64>::zeros((1, 2, 3, 3));
    assert!(LabeledBatch::new(logits.clone(), Array3::zeros((1, 3, 2))).is_err());
    assert!(LabeledBatch::new(logits, Array3::from_elem((1, 3, 3), 2u8)).is_err());
    assert!(
        LabeledBatch::new(Array4::<f64>::zeros((1, 3, 3, 3)), Array3::zeros((1, 3, 3))).is_err()
    );
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<i8>)> {
    (1usize..40).prop_flat_map(|p| {
        (
            prop::collection::vec(-3.0f64..3.0, p),
            prop::collection::vec(prop::bool::ANY.prop_map(|b| if b { 1i8 } else { -1 }), p),
        )
    })
}

proptest! {
    #[test]
    fn lovasz_is_non_negative((f, y) in instance()) {
        prop_assert!(lovasz_hinge(&f, &y).unwrap() >= 0.0);
    }

    #[test]
    fn losses_invariant_under_pixel_permutation((f, y) in instance(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..f.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let fp: Vec<f64> = idx.iter().map(|&i| f[i]).collect();
        let yp: Vec<i8> = idx.iter().map(|&i| y[i]).collect();
        prop_assert!((lovasz_hinge(&f, &y).unwrap() - lovasz_hinge(&fp, &yp).unwrap()).abs() < 1e-9);

        let probs: Vec<[f64; 2]> = f.iter().map(|v| { let p = 1.0 / (1.0 + (-v).exp()); [1.0 - p, p] }).collect();
        let labels: Vec<u8> = y.iter().map(|&v| u8::from(v == 1)).collect();
        let pp: Vec<[f64; 2]> = idx.iter().map(|&i| probs[i]).collect();
        let lp: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert!((cross_entropy(&probs, &labels).unwrap() - cross_entropy(&pp, &lp).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn raising_one_error_never_lowers_lovasz((f, y) in instance(), k in any::<prop::sample::Index>(), bump in 0.0f64..2.0) {
        let i = k.index(f.len());
        let mut g = f.clone();
        // Moving F against the label raises m_i.
        g[i] -= y[i] as f64 * bump;
        prop_assert!(lovasz_hinge(&g, &y).unwrap() >= lovasz_hinge(&f, &y).unwrap() - 1e-12);
    }

    #[test]
    fn cross_entropy_drops_when_mass_moves_to_truth(
        p1 in prop::collection::vec(0.01f64..0.99, 1..20),
        labels in prop::collection::vec(0u8..2, 20),
        k in any::<prop::sample::Index>(),
        shift in 0.001f64..0.5,
    ) {
        let labels = &labels[..p1.len()];
        let probs: Vec<[f64; 2]> = p1.iter().map(|&p| [1.0 - p, p]).collect();
        let i = k.index(probs.len());
        let mut moved = probs.clone();
        let y = labels[i] as usize;
        let delta = shift * moved[i][1 - y];
        moved[i][y] += delta;
        moved[i][1 - y] -= delta;
        prop_assert!(cross_entropy(&moved, labels).unwrap() < cross_entropy(&probs, labels).unwrap());
    }

    #[test]
    fn hinge_gradient_sums_like_finite_difference_on_random_direction((f, y) in instance(), seed in any::<u64>()) {
        // Directional derivative along a random unit direction, skipped near
        // kinks and sort ties.
        let (_, g) = lovasz_hinge_with_grad(&f, &y).unwrap();
        let m: Vec<f64> = f.iter().zip(&y).map(|(v, &l)| (1.0 - v * l as f64).max(0.0)).collect();
        let near_kink = f.iter().zip(&y).any(|(v, &l)| (1.0 - v * l as f64).abs() < 1e-4);
        let near_tie = (0..m.len()).any(|i| (0..i).any(|j| m[i] > 0.0 && (m[i] - m[j]).abs() < 1e-4));
        prop_assume!(!near_kink && !near_tie);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..f.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = 1e-7;
        let plus: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = f.iter().zip(&d).map(|(a, b)| a - h * b).collect();
        let fd = (lovasz_hinge(&plus, &y).unwrap() - lovasz_hinge(&minus, &y).unwrap()) / (2.0 * h);
        let an: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        prop_assert!((fd - an).abs() <= 1e-5 * (1.0 + an.abs()), "fd {} vs analytic {}", fd, an);
    }
}
