//! Fully-convolutional U-net for two-class gather segmentation.
//!
//! With the default `depth = 3` the network has five blocks: two encoder
//! blocks (two 3x3 conv + BN + ReLU, then 2x2 max pooling), a bridge of two
//! conv layers, and two decoder blocks (upsampling, skip concatenation and
//! two conv layers). A final 1x1 convolution projects to two logits per
//! pixel. Any input size is accepted: sizes that are not multiples of the
//! downsampling factor are reflect-padded and the output is cropped back.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{
    concatenate, s, Array3, Array4, ArrayD, ArrayView1, ArrayView3, ArrayView4, Axis, Ix1, Ix4,
    IxDyn,
};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, BnCache, Scalar};
use crate::rng::rng_from_seed;
use crate::types::{GatherImage, SegmentationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpsampleMode {
    /// Nearest-neighbour 2x upsampling followed by a 3x3 convolution.
    #[default]
    NearestConv,
    /// 2x2 stride-2 transposed convolution.
    TransposedConv,
}

/// `(name, shape)` pairs in layout order.
pub type TensorShapes = Vec<(String, Vec<usize>)>;

/// Argmax indices of a max-pool and the input dims they refer to.
type PoolRecord = (Vec<u8>, (usize, usize, usize, usize));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub base_channels: usize,
    /// Number of encoder blocks including the bridge.
    pub depth: usize,
    pub kernel_size: usize,
    pub num_classes: usize,
    pub upsample_mode: UpsampleMode,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            depth: 3,
            kernel_size: 3,
            num_classes: 2,
            upsample_mode: UpsampleMode::NearestConv,
        }
    }
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel size {} must be odd",
                self.kernel_size
            )));
        }
        if self.num_classes != 2 {
            return Err(Error::Config(
                "the network is binary: num_classes must be 2".into(),
            ));
        }
        if self.depth == 0 || self.depth > 8 || self.base_channels == 0 {
            return Err(Error::Config(
                "depth must be in 1..=8 and base_channels positive".into(),
            ));
        }
        Ok(())
    }

    /// Output channels of every block, encoder first:
    /// `c, 2c, ..., 2^(d-1)c (bridge), ..., 2c, c`.
    pub fn channel_ladder(&self) -> Vec<usize> {
        let enc = (0..self.depth).map(|l| self.base_channels << l);
        let dec = (0..self.depth - 1).rev().map(|l| self.base_channels << l);
        enc.chain(dec).collect()
    }

    /// Input sizes must be multiples of this (after padding).
    pub fn downsample_factor(&self) -> usize {
        1 << (self.depth - 1)
    }

    fn layers(&self) -> Vec<Layer> {
        let k = self.kernel_size;
        let c = self.base_channels;
        let mut out = Vec::new();
        let mut cin = 1;
        for l in 0..self.depth {
            let cout = c << l;
            out.push(Layer::cbr(format!("enc{l}.0"), cin, cout, k));
            out.push(Layer::cbr(format!("enc{l}.1"), cout, cout, k));
            cin = cout;
        }
        for l in (0..self.depth - 1).rev() {
            let cout = c << l;
            let up = match self.upsample_mode {
                UpsampleMode::NearestConv => Layer::cbr(format!("dec{l}.up"), cin, cout, k),
                UpsampleMode::TransposedConv => Layer {
                    name: format!("dec{l}.up"),
                    weight_shape: vec![cin, cout, 2, 2],
                    out_channels: cout,
                    fan_in: cin,
                    norm: Some(cout),
                },
            };
            out.push(up);
            out.push(Layer::cbr(format!("dec{l}.0"), 2 * cout, cout, k));
            out.push(Layer::cbr(format!("dec{l}.1"), cout, cout, k));
            cin = cout;
        }
        out.push(Layer {
            name: "head".into(),
            weight_shape: vec![self.num_classes, c, 1, 1],
            out_channels: self.num_classes,
            fan_in: c,
            norm: None,
        });
        out
    }

    /// Names and shapes of every trainable tensor and buffer, in a fixed
    /// order.
    pub fn tensor_layout(&self) -> (TensorShapes, TensorShapes) {
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        for layer in self.layers() {
            let cout = layer.out_channels;
            params.push((format!("{}.weight", layer.name), layer.weight_shape.clone()));
            params.push((format!("{}.bias", layer.name), vec![cout]));
            if let Some(ch) = layer.norm {
                params.push((format!("{}.gamma", layer.name), vec![ch]));
                params.push((format!("{}.beta", layer.name), vec![ch]));
                buffers.push((format!("{}.running_mean", layer.name), vec![ch]));
                buffers.push((format!("{}.running_var", layer.name), vec![ch]));
            }
        }
        (params, buffers)
    }
}

struct Layer {
    name: String,
    weight_shape: Vec<usize>,
    out_channels: usize,
    fan_in: usize,
    norm: Option<usize>,
}

impl Layer {
    fn cbr(name: String, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            name,
            weight_shape: vec![cout, cin, k, k],
            out_channels: cout,
            fan_in: cin * k * k,
            norm: Some(cout),
        }
    }
}

/// Per-layer gradients, keyed like [`ModelParams::tensors`].
pub type Grads<S> = BTreeMap<String, ArrayD<S>>;

/// Network weights (`tensors`, trainable) and batch-norm running
/// statistics (`buffers`), keyed by `<layer>.<field>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub config: UnetConfig,
    pub tensors: BTreeMap<String, ArrayD<S>>,
    pub buffers: BTreeMap<String, ArrayD<S>>,
}

/// He-uniform kernels (`±sqrt(6 / fan_in)`), zero biases, identity batch
/// norm (`gamma = 1`, `beta = 0`, running mean 0, running variance 1).
pub fn init_params<S: Scalar>(config: &UnetConfig, seed: u64) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let mut tensors = BTreeMap::new();
    let mut buffers = BTreeMap::new();
    for layer in config.layers() {
        let bound = (6.0 / layer.fan_in as f64).sqrt();
        let weight = ArrayD::from_shape_simple_fn(IxDyn(&layer.weight_shape), || {
            S::from_f64c(rng.gen_range(-bound..bound))
        });
        let cout = layer.out_channels;
        tensors.insert(format!("{}.weight", layer.name), weight);
        tensors.insert(
            format!("{}.bias", layer.name),
            ArrayD::zeros(IxDyn(&[cout])),
        );
        if let Some(ch) = layer.norm {
            tensors.insert(format!("{}.gamma", layer.name), ArrayD::ones(IxDyn(&[ch])));
            tensors.insert(format!("{}.beta", layer.name), ArrayD::zeros(IxDyn(&[ch])));
            buffers.insert(
                format!("{}.running_mean", layer.name),
                ArrayD::zeros(IxDyn(&[ch])),
            );
            buffers.insert(
                format!("{}.running_var", layer.name),
                ArrayD::ones(IxDyn(&[ch])),
            );
        }
    }
    Ok(ModelParams {
        config: config.clone(),
        tensors,
        buffers,
    })
}

impl<S: Scalar> ModelParams<S> {
    fn vec(&self, name: &str) -> ArrayView1<'_, S> {
        self.tensors
            .get(name)
            .or_else(|| self.buffers.get(name))
            .unwrap_or_else(|| panic!("missing tensor {name}"))
            .view()
            .into_dimensionality::<Ix1>()
            .expect("1-D tensor")
    }

    fn kernel(&self, name: &str) -> ArrayView4<'_, S> {
        self.tensors[name]
            .view()
            .into_dimensionality::<Ix4>()
            .expect("4-D kernel")
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .chain(self.buffers.values())
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let conv = |m: &BTreeMap<String, ArrayD<S>>| {
            m.iter()
                .map(|(k, v)| (k.clone(), v.mapv(|x| T::from_f64c(x.to_f64().unwrap()))))
                .collect()
        };
        ModelParams {
            config: self.config.clone(),
            tensors: conv(&self.tensors),
            buffers: conv(&self.buffers),
        }
    }

    /// Folds a training step's batch statistics into the running
    /// estimates: `running = 0.9 * running + 0.1 * batch`.
    pub fn update_running_stats(&mut self, tape: &Tape<S>) {
        let momentum = S::from_f64c(0.9);
        for (name, bn) in tape.batch_stats() {
            for (field, batch) in [
                ("running_mean", &bn.mean),
                ("running_var", &bn.var_unbiased),
            ] {
                let buf = self
                    .buffers
                    .get_mut(&format!("{name}.{field}"))
                    .expect("bn buffer");
                for (r, b) in buf.iter_mut().zip(batch) {
                    *r = momentum * *r + (S::one() - momentum) * *b;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct CbrCache<S> {
    name: String,
    x: Array4<S>,
    bn: BnCache<S>,
}

enum UpCache<S> {
    Nearest(CbrCache<S>),
    Transposed {
        name: String,
        x: Array4<S>,
        bn: BnCache<S>,
    },
}

/// Activations saved by a training-mode forward pass.
pub struct Tape<S> {
    enc: Vec<[CbrCache<S>; 2]>,
    pools: Vec<PoolRecord>,
    ups: Vec<UpCache<S>>,
    dec: Vec<[CbrCache<S>; 2]>,
    skip_channels: Vec<usize>,
    head_in: Array4<S>,
    padded: (usize, usize),
    cropped: (usize, usize),
}

impl<S: Scalar> Tape<S> {
    fn batch_stats(&self) -> Vec<(&str, &BnCache<S>)> {
        let mut out = Vec::new();
        for c in self.enc.iter().chain(&self.dec).flatten() {
            out.push((c.name.as_str(), &c.bn));
        }
        for u in &self.ups {
            match u {
                UpCache::Nearest(c) => out.push((c.name.as_str(), &c.bn)),
                UpCache::Transposed { name, bn, .. } => out.push((name.as_str(), bn)),
            }
        }
        out
    }
}

fn bn_forward<S: Scalar>(
    params: &ModelParams<S>,
    name: &str,
    y: &Array4<S>,
    mode: Mode,
) -> (Array4<S>, Option<BnCache<S>>) {
    let gamma = params.vec(&format!("{name}.gamma"));
    let beta = params.vec(&format!("{name}.beta"));
    let running = match mode {
        Mode::Train => None,
        Mode::Eval => Some((
            params.vec(&format!("{name}.running_mean")),
            params.vec(&format!("{name}.running_var")),
        )),
    };
    let (mut out, cache) = nn::batch_norm(y, gamma, beta, running);
    nn::relu_inplace(&mut out);
    (out, cache)
}

fn cbr_forward<S: Scalar>(
    params: &ModelParams<S>,
    name: &str,
    x: Array4<S>,
    mode: Mode,
) -> (Array4<S>, Option<CbrCache<S>>) {
    let y = nn::conv2d(
        &x,
        params.kernel(&format!("{name}.weight")),
        params.vec(&format!("{name}.bias")),
    );
    let (out, bn) = bn_forward(params, name, &y, mode);
    (
        out,
        bn.map(|bn| CbrCache {
            name: name.to_string(),
            x,
            bn,
        }),
    )
}

/// ReLU then batch-norm backward. The ReLU mask is recomputed from the
/// normalized activations.
fn bn_relu_backward<S: Scalar>(
    params: &ModelParams<S>,
    name: &str,
    bn: &BnCache<S>,
    mut dout: Array4<S>,
    grads: &mut Grads<S>,
) -> Array4<S> {
    let gamma = params.vec(&format!("{name}.gamma"));
    let beta = params.vec(&format!("{name}.beta"));
    for ((_, ch, _, _), (g, xh)) in dout
        .indexed_iter_mut()
        .zip(bn.xhat.iter())
        .map(|((i, g), xh)| (i, (g, xh)))
    {
        if gamma[ch] * *xh + beta[ch] <= S::zero() {
            *g = S::zero();
        }
    }
    let (dy, dgamma, dbeta) = nn::batch_norm_backward(bn, gamma, &dout);
    grads.insert(format!("{name}.gamma"), dgamma.into_dyn());
    grads.insert(format!("{name}.beta"), dbeta.into_dyn());
    dy
}

fn cbr_backward<S: Scalar>(
    params: &ModelParams<S>,
    cache: &CbrCache<S>,
    dout: Array4<S>,
    need_dx: bool,
    grads: &mut Grads<S>,
) -> Option<Array4<S>> {
    let name = &cache.name;
    let dy = bn_relu_backward(params, name, &cache.bn, dout, grads);
    let g = nn::conv2d_backward(
        &cache.x,
        params.kernel(&format!("{name}.weight")),
        &dy,
        need_dx,
    );
    grads.insert(format!("{name}.weight"), g.dweight.into_dyn());
    grads.insert(format!("{name}.bias"), g.dbias.into_dyn());
    g.dx
}

fn check_input(config: &UnetConfig, h: usize, w: usize) -> Result<(usize, usize)> {
    let f = config.downsample_factor();
    if h < f || w < f {
        return Err(Error::Shape(format!(
            "input {h}x{w} smaller than the downsampling factor {f}"
        )));
    }
    Ok((h.div_ceil(f) * f - h, w.div_ceil(f) * f - w))
}

/// Runs the network on a `(batch, 1, H, W)` tensor of normalized images and
/// returns `(batch, 2, H, W)` logits. In training mode batch statistics are
/// used and a [`Tape`] for [`backward`] is returned.
pub fn forward<S: Scalar>(
    params: &ModelParams<S>,
    input: &Array4<S>,
    mode: Mode,
) -> Result<(Array4<S>, Option<Tape<S>>)> {
    let config = &params.config;
    let (_, c, h, w) = input.dim();
    if c != 1 {
        return Err(Error::Shape(format!("expected 1 input channel, got {c}")));
    }
    let (ph, pw) = check_input(config, h, w)?;
    let x = if ph + pw > 0 {
        nn::reflect_pad(input, ph, pw)
    } else {
        input.as_standard_layout().into_owned()
    };
    let train = mode == Mode::Train;

    let mut enc = Vec::new();
    let mut pools = Vec::new();
    let mut skips = Vec::new();
    let mut hcur = x;
    for l in 0..config.depth {
        let (a, ca) = cbr_forward(params, &format!("enc{l}.0"), hcur, mode);
        let (b, cb) = cbr_forward(params, &format!("enc{l}.1"), a, mode);
        if train {
            enc.push([ca.unwrap(), cb.unwrap()]);
        }
        if l + 1 < config.depth {
            let dims = b.dim();
            let (p, arg) = nn::max_pool2(&b);
            skips.push(b);
            if train {
                pools.push((arg, dims));
            }
            hcur = p;
        } else {
            hcur = b;
        }
    }

    let mut ups = Vec::new();
    let mut dec = Vec::new();
    let skip_channels: Vec<usize> = skips.iter().map(|s| s.dim().1).collect();
    for l in (0..config.depth - 1).rev() {
        let name = format!("dec{l}.up");
        let up = match config.upsample_mode {
            UpsampleMode::NearestConv => {
                let (u, cache) = cbr_forward(params, &name, nn::upsample_nearest2(&hcur), mode);
                if let Some(cache) = cache {
                    ups.push(UpCache::Nearest(cache));
                }
                u
            }
            UpsampleMode::TransposedConv => {
                let y = nn::conv_transpose2x2(
                    &hcur,
                    params.kernel(&format!("{name}.weight")),
                    params.vec(&format!("{name}.bias")),
                );
                let (u, bn) = bn_forward(params, &name, &y, mode);
                if let Some(bn) = bn {
                    ups.push(UpCache::Transposed { name, x: hcur, bn });
                }
                u
            }
        };
        let skip = skips.pop().expect("one skip per decoder block");
        let cat = concatenate(Axis(1), &[skip.view(), up.view()])
            .expect("matching spatial dims")
            .as_standard_layout()
            .into_owned();
        let (a, ca) = cbr_forward(params, &format!("dec{l}.0"), cat, mode);
        let (b, cb) = cbr_forward(params, &format!("dec{l}.1"), a, mode);
        if train {
            dec.push([ca.unwrap(), cb.unwrap()]);
        }
        hcur = b;
    }

    let logits = nn::conv2d(&hcur, params.kernel("head.weight"), params.vec("head.bias"));
    let logits = if ph + pw > 0 {
        logits.slice(s![.., .., ..h, ..w]).to_owned()
    } else {
        logits
    };
    let tape = train.then(|| Tape {
        enc,
        pools,
        ups,
        dec,
        skip_channels,
        padded: (h + ph, w + pw),
        cropped: (h, w),
        head_in: hcur,
    });
    Ok((logits, tape))
}

/// Gradients of every trainable tensor given `d loss / d logits`.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    tape: &Tape<S>,
    dlogits: &Array4<S>,
) -> Grads<S> {
    let config = &params.config;
    let mut grads = Grads::new();
    let (n, k, h, w) = dlogits.dim();
    let dl = if tape.padded != tape.cropped {
        let mut full = Array4::zeros((n, k, tape.padded.0, tape.padded.1));
        full.slice_mut(s![.., .., ..h, ..w]).assign(dlogits);
        full
    } else {
        dlogits.as_standard_layout().into_owned()
    };
    let g = nn::conv2d_backward(&tape.head_in, params.kernel("head.weight"), &dl, true);
    grads.insert("head.weight".into(), g.dweight.into_dyn());
    grads.insert("head.bias".into(), g.dbias.into_dyn());
    let mut dh = g.dx.unwrap();

    // Decoder blocks were recorded deepest first.
    let levels = config.depth - 1;
    let mut dskips: Vec<Option<Array4<S>>> = (0..levels).map(|_| None).collect();
    for i in (0..levels).rev() {
        let l = levels - 1 - i;
        let [c0, c1] = &tape.dec[i];
        dh = cbr_backward(params, c1, dh, true, &mut grads).unwrap();
        let dcat = cbr_backward(params, c0, dh, true, &mut grads).unwrap();
        let cs = tape.skip_channels[l];
        dskips[l] = Some(dcat.slice(s![.., ..cs, .., ..]).to_owned());
        let dup = dcat.slice(s![.., cs.., .., ..]).to_owned();
        dh = match &tape.ups[i] {
            UpCache::Nearest(c) => {
                let d = cbr_backward(params, c, dup, true, &mut grads).unwrap();
                nn::upsample_nearest2_backward(&d)
            }
            UpCache::Transposed { name, x, bn } => {
                let dy = bn_relu_backward(params, name, bn, dup, &mut grads);
                let g = nn::conv_transpose2x2_backward(
                    x,
                    params.kernel(&format!("{name}.weight")),
                    &dy,
                );
                grads.insert(format!("{name}.weight"), g.dweight.into_dyn());
                grads.insert(format!("{name}.bias"), g.dbias.into_dyn());
                g.dx.unwrap()
            }
        };
    }

    for l in (0..config.depth).rev() {
        if l + 1 < config.depth {
            let (arg, dims) = &tape.pools[l];
            dh = nn::max_pool2_backward(arg, &dh, *dims);
            dh += dskips[l].as_ref().expect("skip gradient");
        }
        let [c0, c1] = &tape.enc[l];
        dh = cbr_backward(params, c1, dh, true, &mut grads).unwrap();
        match cbr_backward(params, c0, dh, l > 0, &mut grads) {
            Some(d) => dh = d,
            None => break,
        }
    }
    grads
}

/// Per-image standardization: zero mean, unit (population) standard
/// deviation. Constant images map to all zeros.
pub fn normalize_image(gather: &GatherImage) -> GatherImage {
    let n = gather.amplitudes.len().max(1) as f64;
    let mean = gather.amplitudes.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = gather
        .amplitudes
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    let amplitudes = if std == 0.0 {
        gather.amplitudes.mapv(|_| 0.0)
    } else {
        let std = std.max(1e-8);
        gather.amplitudes.mapv(|v| ((v as f64 - mean) / std) as f32)
    };
    GatherImage::new(amplitudes, gather.sample_rate_ms)
}

/// Per-pixel logits and softmax probabilities, `(T, R, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub scores: Array3<f32>,
    pub probs: Array3<f32>,
}

impl PredictionMap {
    /// Builds the map from one image's `(2, T, R)` logits.
    pub fn from_logits<S: Scalar>(l: ArrayView3<S>) -> Self {
        let (k, t, r) = l.dim();
        assert_eq!(k, 2, "binary logits");
        let scores = Array3::from_shape_fn((t, r, 2), |(i, j, c)| l[[c, i, j]].to_f32().unwrap());
        let mut probs = Array3::<f32>::zeros((t, r, 2));
        for i in 0..t {
            for j in 0..r {
                let d = (l[[0, i, j]] - l[[1, i, j]]).to_f64().unwrap();
                let p1 = 1.0 / (1.0 + d.exp());
                probs[[i, j, 1]] = p1 as f32;
                probs[[i, j, 0]] = (1.0 - p1) as f32;
            }
        }
        Self { scores, probs }
    }

    pub fn dim(&self) -> (usize, usize) {
        let (t, r, _) = self.scores.dim();
        (t, r)
    }

    pub fn signal_probability(&self) -> ndarray::Array2<f32> {
        self.probs.slice(s![.., .., 1]).to_owned()
    }
}

/// Per-pixel argmax. Exact ties resolve to class 0 (non-signal).
pub fn predict_mask(prediction: &PredictionMap) -> SegmentationMask {
    let (t, r) = prediction.dim();
    let classes = ndarray::Array2::from_shape_fn((t, r), |(i, j)| {
        u8::from(prediction.probs[[i, j, 1]] > prediction.probs[[i, j, 0]])
    });
    SegmentationMask { classes }
}

/// Stacks same-sized images into a `(batch, 1, H, W)` tensor.
pub fn stack_images<S: Scalar>(images: &[&GatherImage]) -> Result<Array4<S>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("no images to stack".into()))?;
    let (h, w) = first.amplitudes.dim();
    let mut out = Array4::<S>::zeros((images.len(), 1, h, w));
    for (b, img) in images.iter().enumerate() {
        if img.amplitudes.dim() != (h, w) {
            return Err(Error::Shape("images in a batch must share a size".into()));
        }
        out.slice_mut(s![b, 0, .., ..])
            .assign(&img.amplitudes.mapv(|v| S::from_f32(v).unwrap()));
    }
    Ok(out)
}

/// Eval-mode forward over a batch of already-normalized images (each may
/// have its own size).
pub fn forward_images(
    params: &ModelParams<f32>,
    images: &[GatherImage],
) -> Result<Vec<PredictionMap>> {
    images
        .iter()
        .map(|img| {
            let x = stack_images::<f32>(&[img])?;
            let (logits, _) = forward(params, &x, Mode::Eval)?;
            Ok(PredictionMap::from_logits(logits.index_axis(Axis(0), 0)))
        })
        .collect()
}

/// Normalizes raw gathers and runs the network on each.
pub fn predict_gathers(
    params: &ModelParams<f32>,
    gathers: &[GatherImage],
) -> Result<Vec<PredictionMap>> {
    let normalized: Vec<GatherImage> = gathers.iter().map(normalize_image).collect();
    forward_images(params, &normalized)
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FBCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
    shape: Vec<usize>,
    /// Offset in `f32` elements from the start of the data section.
    offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TensorKind {
    Param,
    Buffer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: UnetConfig,
    channel_ladder: Vec<usize>,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Serializes parameters as
/// `"FBCK" | u32 version | u64 header_len | header JSON | f32 data`
/// (all little-endian). The header lists each tensor's name, kind, shape
/// and element offset into the data section.
pub fn encode_checkpoint(params: &ModelParams<f32>, metadata: serde_json::Value) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (kind, map) in [
        (TensorKind::Param, &params.tensors),
        (TensorKind::Buffer, &params.buffers),
    ] {
        for (name, t) in map {
            entries.push(TensorEntry {
                name: name.clone(),
                kind,
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
            for v in t.iter() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        channel_ladder: params.config.channel_ladder(),
        tensors: entries,
        metadata,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams<f32>,
    metadata: serde_json::Value,
) -> Result<()> {
    fs::write(path, encode_checkpoint(params, metadata)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and checks every tensor against the layout implied by
/// its stored configuration (and `expected`, when given).
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&UnetConfig>,
) -> Result<(ModelParams<f32>, serde_json::Value)> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.into()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..data_start]).map_err(|e| bad(e.to_string()))?;
    header.config.validate()?;
    if let Some(exp) = expected {
        if exp != &header.config {
            return Err(Error::Architecture(format!(
                "checkpoint has {:?}, configuration asks for {:?}",
                header.config, exp
            )));
        }
    }
    let data = &bytes[data_start..];
    let (want_params, want_buffers) = header.config.tensor_layout();
    let mut params = ModelParams {
        config: header.config.clone(),
        tensors: BTreeMap::new(),
        buffers: BTreeMap::new(),
    };
    for e in &header.tensors {
        let len: usize = e.shape.iter().product();
        let start = e.offset * 4;
        let end = start + len * 4;
        if end > data.len() {
            return Err(bad(format!(
                "tensor {} runs past the end of the file",
                e.name
            )));
        }
        let values: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = ArrayD::from_shape_vec(IxDyn(&e.shape), values).expect("length matches shape");
        match e.kind {
            TensorKind::Param => params.tensors.insert(e.name.clone(), t),
            TensorKind::Buffer => params.buffers.insert(e.name.clone(), t),
        };
    }
    let check =
        |want: &[(String, Vec<usize>)], have: &BTreeMap<String, ArrayD<f32>>| -> Result<()> {
            if want.len() != have.len() {
                return Err(Error::Architecture(format!(
                    "expected {} tensors, found {}",
                    want.len(),
                    have.len()
                )));
            }
            for (name, shape) in want {
                match have.get(name) {
                    Some(t) if t.shape() == shape.as_slice() => {}
                    Some(t) => {
                        return Err(Error::Architecture(format!(
                            "{name}: shape {:?}, expected {shape:?}",
                            t.shape()
                        )))
                    }
                    None => return Err(Error::Architecture(format!("missing tensor {name}"))),
                }
            }
            Ok(())
        };
    check(&want_params, &params.tensors)?;
    check(&want_buffers, &params.buffers)?;
    if !params.all_finite() {
        return Err(bad("non-finite parameter".into()));
    }
    Ok((params, header.metadata))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UnetConfig {
        UnetConfig {
            base_channels: 4,
            ..Default::default()
        }
    }

    #[test]
    fn ladder_for_default_config() {
        let cfg = UnetConfig::default();
        assert_eq!(cfg.channel_ladder(), vec![32, 64, 128, 64, 32]);
        let p = init_params::<f32>(&cfg, 0).unwrap();
        assert_eq!(p.tensors["head.weight"].shape(), &[2, 32, 1, 1]);
        assert_eq!(p.tensors["enc2.1.weight"].shape(), &[128, 128, 3, 3]);
        assert_eq!(p.tensors["dec1.up.weight"].shape(), &[64, 128, 3, 3]);
        assert_eq!(p.tensors["dec0.0.weight"].shape(), &[32, 64, 3, 3]);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        for mode in [UpsampleMode::NearestConv, UpsampleMode::TransposedConv] {
            let cfg = UnetConfig {
                upsample_mode: mode,
                ..small()
            };
            let a = init_params::<f32>(&cfg, 7).unwrap();
            assert_eq!(a, init_params::<f32>(&cfg, 7).unwrap());
            assert_ne!(a, init_params::<f32>(&cfg, 8).unwrap());
            for (name, t) in &a.tensors {
                if name.ends_with(".bias") || name.ends_with(".beta") {
                    assert!(t.iter().all(|&v| v == 0.0), "{name}");
                }
            }
            let (want, _) = cfg.tensor_layout();
            assert_eq!(want.len(), a.tensors.len());
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(UnetConfig {
            kernel_size: 4,
            ..small()
        }
        .validate()
        .is_err());
        assert!(UnetConfig {
            num_classes: 3,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn output_shape_and_softmax() {
        let p = init_params::<f32>(&small(), 1).unwrap();
        for (h, w) in [(64, 96), (63, 97), (4, 4)] {
            let img = GatherImage::new(
                ndarray::Array2::from_shape_fn((h, w), |(i, j)| ((i * 3 + j) as f32).sin()),
                8.0,
            );
            let pred = &predict_gathers(&p, &[img]).unwrap()[0];
            assert_eq!(pred.probs.dim(), (h, w, 2));
            for v in pred.probs.lanes(Axis(2)) {
                assert!((v[0] + v[1] - 1.0).abs() < 1e-6);
            }
        }
        let tiny = GatherImage::zeros(3, 40, 8.0);
        assert!(predict_gathers(&p, &[tiny]).is_err());
    }

    #[test]
    fn normalization_contract() {
        let g = GatherImage::new(
            ndarray::Array2::from_shape_fn((10, 7), |(i, j)| (i * j) as f32 + 0.5 * i as f32),
            8.0,
        );
        let n = normalize_image(&g);
        let mean = n.amplitudes.iter().map(|&v| v as f64).sum::<f64>() / 70.0;
        let std = (n
            .amplitudes
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / 70.0)
            .sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-4);
        let shifted = GatherImage::new(g.amplitudes.mapv(|v| 3.0 * v - 2.0), 8.0);
        let ns = normalize_image(&shifted);
        assert!((&ns.amplitudes - &n.amplitudes)
            .iter()
            .all(|d| d.abs() < 1e-6));
        let flat = normalize_image(&GatherImage::new(
            ndarray::Array2::from_elem((4, 4), 3.0),
            8.0,
        ));
        assert!(flat.amplitudes.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_with_tie_to_background() {
        let mut probs = Array3::<f32>::zeros((1, 3, 2));
        probs[[0, 0, 0]] = 0.9;
        probs[[0, 0, 1]] = 0.1;
        probs[[0, 1, 0]] = 0.5;
        probs[[0, 1, 1]] = 0.5;
        probs[[0, 2, 0]] = 0.2;
        probs[[0, 2, 1]] = 0.8;
        let m = predict_mask(&PredictionMap {
            scores: probs.clone(),
            probs,
        });
        assert_eq!(m.classes.row(0).to_vec(), vec![0, 0, 1]);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = init_params::<f32>(&small(), 3).unwrap();
        save_checkpoint(&path, &p, serde_json::json!({"epoch": 2})).unwrap();
        let (q, meta) = load_checkpoint(&path, Some(&small())).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta["epoch"], 2);
        let other = UnetConfig {
            base_channels: 8,
            ..small()
        };
        assert!(matches!(
            load_checkpoint(&path, Some(&other)),
            Err(Error::Architecture(_))
        ));
    }
}
