use fbpick::losses::{LabeledBatch, LossKind};
use fbpick::unet::{
    backward, forward, init_params, load_checkpoint, save_checkpoint, Mode, ModelParams,
    UnetConfig, UpsampleMode,
};
use ndarray::{s, Array3, Array4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(mode: UpsampleMode, depth: usize) -> UnetConfig {
    UnetConfig {
        base_channels: 2,
        depth,
        upsample_mode: mode,
        ..Default::default()
    }
}

fn loss_of(params: &ModelParams<f64>, x: &Array4<f64>, labels: &Array3<u8>, kind: LossKind) -> f64 {
    let (logits, _) = forward(params, x, Mode::Train).unwrap();
    LabeledBatch::new(logits, labels.clone())
        .unwrap()
        .loss(kind)
}

/// Central differences of the training-mode loss against backprop, on a
/// sample of coordinates of every tensor.
fn check_gradients(mode: UpsampleMode, depth: usize, kind: LossKind, seed: u64) {
    let cfg = tiny(mode, depth);
    let mut params = init_params::<f64>(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Non-trivial batch-norm affine parameters.
    for (name, t) in params.tensors.iter_mut() {
        if name.ends_with(".gamma") || name.ends_with(".beta") || name.ends_with(".bias") {
            t.mapv_inplace(|v| v + rng.gen_range(-0.3..0.3));
        }
    }
    let x = Array4::from_shape_fn((2, 1, 8, 12), |_| rng.gen_range(-1.0..1.0));
    let labels = Array3::from_shape_fn((2, 8, 12), |(_, i, j)| u8::from(i + j % 3 >= 4));
    let (logits, tape) = forward(&params, &x, Mode::Train).unwrap();
    let (_, dlogits) = LabeledBatch::new(logits, labels.clone())
        .unwrap()
        .loss_and_gradient(kind);
    let grads = backward(&params, &tape.unwrap(), &dlogits);
    assert_eq!(
        grads.keys().collect::<Vec<_>>(),
        params.tensors.keys().collect::<Vec<_>>()
    );

    let h = 1e-6;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for name in params.tensors.keys().cloned().collect::<Vec<_>>() {
        let len = params.tensors[&name].len();
        for _ in 0..3.min(len) {
            let k = rng.gen_range(0..len);
            let orig = params.tensors[&name].as_slice().unwrap()[k];
            params
                .tensors
                .get_mut(&name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[k] = orig + h;
            let up = loss_of(&params, &x, &labels, kind);
            params
                .tensors
                .get_mut(&name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[k] = orig - h;
            let down = loss_of(&params, &x, &labels, kind);
            params
                .tensors
                .get_mut(&name)
                .unwrap()
                .as_slice_mut()
                .unwrap()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[&name].as_slice().unwrap()[k];
            let err = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-6);
            worst = worst.max(err);
            assert!(
                err < 1e-3,
                "{name}[{k}]: finite difference {fd} vs backprop {an}"
            );
            checked += 1;
        }
    }
    assert!(
        checked > 20,
        "only {checked} coordinates checked (worst {worst})"
    );
}

#[test]
fn gradients_match_finite_differences_nearest() {
    check_gradients(UpsampleMode::NearestConv, 3, LossKind::CrossEntropy, 1);
}

#[test]
fn gradients_match_finite_differences_transposed() {
    check_gradients(UpsampleMode::TransposedConv, 3, LossKind::CrossEntropy, 2);
}

#[test]
fn gradients_match_finite_differences_shallow() {
    check_gradients(UpsampleMode::NearestConv, 2, LossKind::CrossEntropy, 3);
}

#[test]
fn eval_output_follows_horizontal_shifts() {
    let cfg = UnetConfig {
        base_channels: 4,
        ..Default::default()
    };
    let mut params = init_params::<f64>(&cfg, 5).unwrap();
    for (name, b) in params.buffers.iter_mut() {
        if name.ends_with("running_var") {
            b.fill(0.5);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let wide = Array4::from_shape_fn((1, 1, 32, 168), |_| rng.gen_range(-1.0..1.0));
    let a = forward(
        &params,
        &wide.slice(s![.., .., .., 0..160]).to_owned(),
        Mode::Eval,
    )
    .unwrap()
    .0;
    let b = forward(
        &params,
        &wide.slice(s![.., .., .., 8..168]).to_owned(),
        Mode::Eval,
    )
    .unwrap()
    .0;
    // Away from the borders the receptive field does not see the edges.
    for c in 48..112 {
        for t in 0..32 {
            for k in 0..2 {
                assert!((a[[0, k, t, c + 8]] - b[[0, k, t, c]]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let cfg = UnetConfig {
        base_channels: 4,
        ..Default::default()
    };
    let params = init_params::<f32>(&cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fbck");
    save_checkpoint(&path, &params, serde_json::json!({"note": "x"})).unwrap();
    let (back, meta) = load_checkpoint(&path, Some(&cfg)).unwrap();
    assert_eq!(meta["note"], "x");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array4::from_shape_fn((1, 1, 20, 30), |_| rng.gen_range(-2.0f32..2.0));
    let y0 = forward(&params, &x, Mode::Eval).unwrap().0;
    let y1 = forward(&back, &x, Mode::Eval).unwrap().0;
    assert_eq!(y0, y1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_shape_equals_input_shape(h in 4usize..40, w in 4usize..40, transposed in any::<bool>()) {
        let mode = if transposed { UpsampleMode::TransposedConv } else { UpsampleMode::NearestConv };
        let params = init_params::<f32>(&tiny(mode, 3), 0).unwrap();
        let x = Array4::<f32>::from_elem((1, 1, h, w), 0.5);
        let (y, _) = forward(&params, &x, Mode::Eval).unwrap();
        prop_assert_eq!(y.dim(), (1, 2, h, w));
    }
}
