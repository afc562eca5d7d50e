//! Training, inference, picking and evaluation over dataset directories,
//! plus the end-to-end comparison run.
//!
//! Stages talk only through files:
//!
//! * `predict` writes `mask_<id>.bin` (FBM1), `prob_<id>.bin` (FBQ1) and
//!   `predictions.json`.
//! * `pick` reads those masks and writes `picks_<id>.bin` (FBP1),
//!   `picks_<id>.csv` and `picks.json`.
//! * `evaluate` joins predictions and picks with the dataset's ground truth
//!   and writes `report.json` and `report.txt`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{
    ensure_dir, load_sample, read_gather, read_json, read_manifest, read_mask, read_picks,
    write_json, write_mask, write_picks, write_picks_csv, write_probabilities, DatasetManifest,
    Record, Split, Variant,
};
use crate::losses::{LabeledBatch, LossKind};
use crate::metrics::{
    build_report, format_percent, format_ts, render_table, EvalReport, Weighting,
};
use crate::optim::Adam;
use crate::picking::{self, PickMethod};
use crate::plot;
use crate::rng::{derive_seed, rng_from_seed};
use crate::synth::{generate_dataset, DatasetConfig};
use crate::types::{GatherImage, PickLine, SegmentationMask};
use crate::unet::{
    self, forward, init_params, load_checkpoint, normalize_image, save_checkpoint, stack_images,
    Mode, ModelParams, PredictionMap, UnetConfig,
};

pub const PREDICTIONS_INDEX: &str = "predictions.json";
pub const PICKS_INDEX: &str = "picks.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

/// Input scaling applied before the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Zero mean, unit standard deviation per gather.
    #[default]
    PerImage,
    /// Raw amplitudes.
    None,
}

impl Normalization {
    pub fn apply(self, gather: &GatherImage) -> GatherImage {
        match self {
            Normalization::PerImage => normalize_image(gather),
            Normalization::None => gather.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Width of the random full-height training windows.
    pub crop_width: usize,
    pub seed: u64,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    /// Replaces epochs, crop width and base channel count with the small
    /// CPU preset when the config is resolved.
    pub desk_scale: bool,
    pub model: UnetConfig,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Lovasz,
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 4,
            crop_width: 600,
            seed: 0,
            dataset: PathBuf::from("data"),
            checkpoint: PathBuf::from("model.fbck"),
            desk_scale: false,
            model: UnetConfig::default(),
            normalization: Normalization::PerImage,
        }
    }
}

pub const DESK_EPOCHS: usize = 15;
pub const DESK_CROP_WIDTH: usize = 96;
pub const DESK_BASE_CHANNELS: usize = 16;

impl TrainConfig {
    /// Applies the desk-scale preset if the flag is set.
    pub fn resolve(mut self) -> Self {
        if self.desk_scale {
            self.epochs = DESK_EPOCHS;
            self.crop_width = DESK_CROP_WIDTH;
            self.model.base_channels = DESK_BASE_CHANNELS;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.crop_width == 0 {
            return Err(Error::Config("crop_width must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        self.model.validate()
    }

    /// Seed of the initial weights.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub checkpoint: PathBuf,
}

struct Prepared {
    image: GatherImage,
    mask: SegmentationMask,
}

fn load_split(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
    norm: Normalization,
) -> Result<Vec<Prepared>> {
    manifest
        .records_in(split)
        .map(|r| {
            let s = load_sample(dir, manifest, r)?;
            Ok(Prepared {
                image: norm.apply(&s.gather),
                mask: s.mask,
            })
        })
        .collect()
}

fn checkpoint_metadata(cfg: &TrainConfig, epoch: usize, val_accuracy: f64) -> serde_json::Value {
    serde_json::json!({
        "loss_kind": cfg.loss_kind,
        "normalization": cfg.normalization,
        "epoch": epoch,
        "val_accuracy": val_accuracy,
        "train_config": cfg,
    })
}

/// Trains a model and keeps the checkpoint with the best validation pixel
/// accuracy. `cfg` is used as given; call [`TrainConfig::resolve`] first to
/// honour `desk_scale`.
pub fn train(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let manifest = read_manifest(&cfg.dataset)?;
    let train_set = load_split(&cfg.dataset, &manifest, Split::Train, cfg.normalization)?;
    let val_set = load_split(&cfg.dataset, &manifest, Split::Val, cfg.normalization)?;
    if train_set.is_empty() {
        return Err(Error::Empty(format!(
            "no training records in {}",
            cfg.dataset.display()
        )));
    }
    let min_width = train_set
        .iter()
        .map(|p| p.image.receivers())
        .min()
        .unwrap_or(0);
    if cfg.crop_width > min_width {
        return Err(Error::Config(format!(
            "crop_width {} exceeds the narrowest training gather ({min_width} receivers)",
            cfg.crop_width
        )));
    }

    let mut params = init_params::<f32>(&cfg.model, cfg.init_seed())?;
    let mut opt = Adam::new(cfg.learning_rate);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best = (0, f64::NEG_INFINITY);
    if let Some(parent) = cfg
        .checkpoint
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        ensure_dir(parent)?;
    }

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(batch.len());
            let mut labels = Array3::<u8>::zeros((
                batch.len(),
                train_set[batch[0]].image.time_steps(),
                cfg.crop_width,
            ));
            for (b, &i) in batch.iter().enumerate() {
                let p = &train_set[i];
                let start = rng.gen_range(0..=p.image.receivers() - cfg.crop_width);
                images.push(p.image.crop_columns(start, cfg.crop_width));
                labels
                    .index_axis_mut(Axis(0), b)
                    .assign(&p.mask.classes.slice(s![.., start..start + cfg.crop_width]));
            }
            let refs: Vec<&GatherImage> = images.iter().collect();
            let x = stack_images::<f32>(&refs)?;
            let (logits, tape) = forward(&params, &x, Mode::Train)?;
            let tape = tape.expect("train mode records a tape");
            let lb = LabeledBatch::new(logits, labels)?;
            let (loss, dlogits) = lb.loss_and_gradient(cfg.loss_kind);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            let grads = unet::backward(&params, &tape, &dlogits);
            opt.step(&mut params, &grads);
            params.update_running_stats(&tape);
            loss_sum += loss;
            steps += 1;
        }
        let val_accuracy = if val_set.is_empty() {
            f64::NAN
        } else {
            validation_accuracy(&params, &val_set)?
        };
        let log = EpochLog {
            epoch,
            mean_loss: loss_sum / steps as f64,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        info!(
            "epoch {epoch}/{}: loss {:.5}, val accuracy {:.4} ({:.1}s)",
            cfg.epochs, log.mean_loss, log.val_accuracy, log.seconds
        );
        // Without a validation split the latest epoch is kept.
        if val_set.is_empty() || val_accuracy > best.1 {
            best = (epoch, val_accuracy);
            save_checkpoint(
                &cfg.checkpoint,
                &params,
                checkpoint_metadata(cfg, epoch, val_accuracy),
            )?;
        }
        logs.push(log);
    }
    Ok(TrainReport {
        epochs: logs,
        best_epoch: best.0,
        best_val_accuracy: best.1,
        checkpoint: cfg.checkpoint.clone(),
    })
}

fn validation_accuracy(params: &ModelParams<f32>, val: &[Prepared]) -> Result<f64> {
    let images: Vec<GatherImage> = val.iter().map(|p| p.image.clone()).collect();
    let preds: Vec<SegmentationMask> = unet::forward_images(params, &images)?
        .iter()
        .map(unet::predict_mask)
        .collect();
    let gt: Vec<SegmentationMask> = val.iter().map(|p| p.mask.clone()).collect();
    crate::metrics::pixel_accuracy(&preds, &gt, Weighting::Pixel)
}

/// A trained network together with the input scaling it was trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams<f32>,
    pub normalization: Normalization,
    pub metadata: serde_json::Value,
}

impl Model {
    pub fn load(checkpoint: &Path, expected: Option<&UnetConfig>) -> Result<Self> {
        let (params, metadata) = load_checkpoint(checkpoint, expected)?;
        let normalization = metadata
            .get("normalization")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or_default();
        Ok(Self {
            params,
            normalization,
            metadata,
        })
    }

    /// Eval-mode prediction on raw gathers of any size.
    pub fn predict(&self, gathers: &[GatherImage]) -> Result<Vec<PredictionMap>> {
        let inputs: Vec<GatherImage> = gathers
            .iter()
            .map(|g| self.normalization.apply(g))
            .collect();
        unet::forward_images(&self.params, &inputs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionIndex {
    pub sample_rate_ms: f64,
    pub ids: Vec<String>,
}

pub fn mask_file(id: &str) -> String {
    format!("mask_{id}.bin")
}

pub fn prob_file(id: &str) -> String {
    format!("prob_{id}.bin")
}

pub fn picks_file(id: &str) -> String {
    format!("picks_{id}.bin")
}

pub fn picks_csv_file(id: &str) -> String {
    format!("picks_{id}.csv")
}

/// Predicts each `(id, gather)` and writes masks, probability maps and the
/// index to `out`.
pub fn predict_to_dir(
    model: &Model,
    items: &[(String, GatherImage)],
    sample_rate_ms: f64,
    out: &Path,
) -> Result<PredictionIndex> {
    ensure_dir(out)?;
    let mut ids = Vec::with_capacity(items.len());
    for (id, gather) in items {
        let pred = model.predict(std::slice::from_ref(gather))?.remove(0);
        write_mask(&out.join(mask_file(id)), &unet::predict_mask(&pred))?;
        write_probabilities(&out.join(prob_file(id)), &pred.signal_probability())?;
        ids.push(id.clone());
    }
    let index = PredictionIndex {
        sample_rate_ms,
        ids,
    };
    write_json(&out.join(PREDICTIONS_INDEX), &index)?;
    Ok(index)
}

/// Which dataset records a stage works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFilter {
    pub split: Split,
    pub variant: Option<Variant>,
}

impl RecordFilter {
    pub fn select<'a>(&self, manifest: &'a DatasetManifest) -> Vec<&'a Record> {
        manifest
            .records_in(self.split)
            .filter(|r| self.variant.is_none_or(|v| r.variant == v))
            .collect()
    }
}

/// Runs the model over dataset records. Only the gathers are read.
pub fn predict_dataset(
    model: &Model,
    dataset: &Path,
    filter: RecordFilter,
    out: &Path,
) -> Result<PredictionIndex> {
    let manifest = read_manifest(dataset)?;
    let items = filter
        .select(&manifest)
        .into_iter()
        .map(|r| {
            Ok((
                r.id.clone(),
                read_gather(&dataset.join(&r.gather), manifest.sample_rate_ms)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    predict_to_dir(model, &items, manifest.sample_rate_ms, out)
}

/// Picks a single mask. A mask without any signal pixel yields an
/// all-invalid line and a warning.
pub fn pick_mask(mask: &SegmentationMask, method: PickMethod) -> Result<PickLine> {
    match picking::pick(mask, method) {
        Err(Error::NoCandidates) => {
            warn!("mask has no signal pixels; emitting an all-invalid pick line");
            Ok(picking::fpp(mask))
        }
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PickIndex {
    pub method: PickMethod,
    pub sample_rate_ms: f64,
    pub ids: Vec<String>,
    /// Ids whose mask had no signal pixel.
    pub empty_masks: Vec<String>,
}

/// Picks every mask listed in `predictions/predictions.json`.
pub fn pick_dir(predictions: &Path, method: PickMethod, out: &Path) -> Result<PickIndex> {
    let index: PredictionIndex = read_json(&predictions.join(PREDICTIONS_INDEX))?;
    ensure_dir(out)?;
    let mut empty_masks = Vec::new();
    for id in &index.ids {
        let mask = read_mask(&predictions.join(mask_file(id)))?;
        if mask.classes.iter().all(|&c| c == 0) {
            empty_masks.push(id.clone());
        }
        let picks = pick_mask(&mask, method)?;
        write_picks(&out.join(picks_file(id)), &picks)?;
        write_picks_csv(&out.join(picks_csv_file(id)), &picks, index.sample_rate_ms)?;
    }
    let result = PickIndex {
        method,
        sample_rate_ms: index.sample_rate_ms,
        ids: index.ids,
        empty_masks,
    };
    write_json(&out.join(PICKS_INDEX), &result)?;
    Ok(result)
}

/// Scores predicted masks and picks against the dataset's ground truth and
/// writes `report.json` and `report.txt` to `out`.
pub fn evaluate_dirs(
    dataset: &Path,
    predictions: &Path,
    picks: &Path,
    labels: (&str, &str, &str),
    out: &Path,
) -> Result<EvalReport> {
    let manifest = read_manifest(dataset)?;
    let by_id: BTreeMap<&str, &Record> = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let pick_index: PickIndex = read_json(&picks.join(PICKS_INDEX))?;
    if pick_index.ids.is_empty() {
        return Err(Error::Empty(format!(
            "no picks listed in {}",
            picks.display()
        )));
    }
    let (mut pm, mut pp, mut gm, mut gp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for id in &pick_index.ids {
        let record = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::MissingFile(dataset.join(format!("<record {id}>"))))?;
        pm.push(read_mask(&predictions.join(mask_file(id)))?);
        pp.push(read_picks(&picks.join(picks_file(id)))?);
        gm.push(read_mask(&dataset.join(&record.mask))?);
        gp.push(read_picks(&dataset.join(&record.picks))?);
    }
    let report = build_report(&pm, &pp, &gm, &gp, manifest.sample_rate_ms)?;
    ensure_dir(out)?;
    write_json(&out.join(REPORT_JSON), &report)?;
    let text = report.text_table(labels.0, labels.1, labels.2);
    std::fs::write(out.join(REPORT_TEXT), text).map_err(|e| Error::io(out.join(REPORT_TEXT), e))?;
    Ok(report)
}

/// Column heading used in result tables for each synthetic variant.
pub fn variant_column(v: Variant) -> &'static str {
    match v {
        Variant::Clean => "synthetic data",
        Variant::Disconnected => "synthetic Disc. data",
        Variant::Noisy => "synthetic noisy data",
    }
}

/// The comparison grid: every loss on every variant with every picker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub variants: Vec<Variant>,
    pub losses: Vec<LossKind>,
    pub pickers: Vec<PickMethod>,
    pub output: PathBuf,
    pub seed: u64,
    pub desk_scale: bool,
    pub dataset: DatasetConfig,
    /// Template for both training runs; loss, paths and seed are filled in.
    pub train: TrainConfig,
    /// Overrides the epoch count after the desk preset is applied.
    pub epochs: Option<usize>,
    /// Overlay plots per (loss, variant).
    pub plots_per_cell: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            losses: vec![LossKind::CrossEntropy, LossKind::Lovasz],
            pickers: vec![PickMethod::Fpp, PickMethod::Npp],
            output: PathBuf::from("reproduce"),
            seed: 0,
            desk_scale: true,
            dataset: DatasetConfig::desk_scale(),
            train: TrainConfig::default(),
            epochs: None,
            plots_per_cell: 2,
        }
    }
}

impl ExperimentSpec {
    pub fn desk_scale(output: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            output: output.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn full_scale(output: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            output: output.into(),
            seed,
            desk_scale: false,
            dataset: DatasetConfig::full_scale(),
            ..Self::default()
        }
    }

    pub fn train_config(&self, loss: LossKind) -> TrainConfig {
        let mut cfg = TrainConfig {
            loss_kind: loss,
            seed: derive_seed(self.seed, 100),
            dataset: self.output.join("data"),
            checkpoint: self
                .output
                .join("models")
                .join(format!("{}.fbck", loss_slug(loss))),
            desk_scale: self.desk_scale || self.train.desk_scale,
            ..self.train.clone()
        }
        .resolve();
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

fn loss_slug(loss: LossKind) -> &'static str {
    match loss {
        LossKind::CrossEntropy => "cross_entropy",
        LossKind::Lovasz => "lovasz",
    }
}

fn picker_slug(p: PickMethod) -> &'static str {
    match p {
        PickMethod::Fpp => "fpp",
        PickMethod::Npp => "npp",
    }
}

/// One entry of the comparison grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub variant: Variant,
    pub loss: LossKind,
    pub picker: PickMethod,
    pub pixel_accuracy: Option<f64>,
    pub mae_ts: Option<f64>,
    pub mae_ms: Option<f64>,
    pub mae_ts_valid_only: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproduceResult {
    pub seed: u64,
    pub cells: Vec<Cell>,
    pub training: BTreeMap<String, TrainReport>,
    pub table_path: PathBuf,
    pub plots: Vec<PathBuf>,
}

impl ReproduceResult {
    pub fn cell(&self, variant: Variant, loss: LossKind, picker: PickMethod) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.loss == loss && c.picker == picker)
    }

    /// Accuracy and MAE rows per loss, one column per variant.
    pub fn render_table(&self, spec: &ExperimentSpec) -> String {
        let columns: Vec<String> = spec
            .variants
            .iter()
            .map(|&v| variant_column(v).to_string())
            .collect();
        let mut rows = Vec::new();
        for &loss in &spec.losses {
            let acc = spec
                .variants
                .iter()
                .map(|&v| {
                    spec.pickers
                        .iter()
                        .find_map(|&p| self.cell(v, loss, p).and_then(|c| c.pixel_accuracy))
                        .map(format_percent)
                })
                .collect();
            rows.push((format!("Acc with {} loss", loss.label()), acc));
            for &p in &spec.pickers {
                let mae = spec
                    .variants
                    .iter()
                    .map(|&v| match self.cell(v, loss, p) {
                        Some(c) => c.mae_ts.map(format_ts).or(Some("FAILED".into())),
                        None => None,
                    })
                    .collect();
                rows.push((format!("MAE with {} (ts)", p.label()), mae));
            }
        }
        render_table("Datasets", &columns, &rows)
    }
}

/// Generates data, trains one model per loss, then predicts, picks and
/// scores every (variant, loss, picker) cell. A failure in one cell (or in
/// one training run) is recorded in the table and the rest still run.
pub fn reproduce(spec: &ExperimentSpec) -> Result<ReproduceResult> {
    if spec.variants.is_empty() || spec.losses.is_empty() || spec.pickers.is_empty() {
        return Err(Error::Config(
            "experiment needs at least one variant, loss and picker".into(),
        ));
    }
    let out = ensure_dir(&spec.output)?;
    write_json(&out.join("experiment.json"), spec)?;
    let data = out.join("data");
    info!("generating dataset in {}", data.display());
    let manifest = generate_dataset(&spec.dataset, &data, derive_seed(spec.seed, 0))?;

    let mut cells = Vec::new();
    let mut training = BTreeMap::new();
    let mut plots = Vec::new();
    for &loss in &spec.losses {
        let cfg = spec.train_config(loss);
        info!("training {} model", loss.label());
        let model = train(&cfg).and_then(|report| {
            training.insert(loss_slug(loss).to_string(), report);
            Model::load(&cfg.checkpoint, Some(&cfg.model))
        });
        for &variant in &spec.variants {
            let stage = out
                .join("runs")
                .join(loss_slug(loss))
                .join(variant.as_str());
            let filter = RecordFilter {
                split: Split::Test,
                variant: Some(variant),
            };
            let predicted = match &model {
                Ok(m) => predict_dataset(m, &data, filter, &stage.join("predictions")),
                Err(e) => Err(Error::Config(format!("training failed: {e}"))),
            };
            for &picker in &spec.pickers {
                let pick_dir_path = stage.join(format!("picks_{}", picker_slug(picker)));
                let scored = predicted.as_ref().map_err(|e| e.to_string()).and_then(|_| {
                    pick_dir(&stage.join("predictions"), picker, &pick_dir_path)
                        .and_then(|_| {
                            evaluate_dirs(
                                &data,
                                &stage.join("predictions"),
                                &pick_dir_path,
                                (loss.label(), picker.label(), variant_column(variant)),
                                &pick_dir_path,
                            )
                        })
                        .map_err(|e| e.to_string())
                });
                let cell = match scored {
                    Ok(r) => Cell {
                        variant,
                        loss,
                        picker,
                        pixel_accuracy: Some(r.pixel_accuracy),
                        mae_ts: Some(r.mae_ts),
                        mae_ms: Some(r.mae_ms),
                        mae_ts_valid_only: r.mae_ts_valid_only,
                        error: None,
                    },
                    Err(e) => {
                        warn!(
                            "cell {} / {} / {} failed: {e}",
                            variant.as_str(),
                            loss.label(),
                            picker.label()
                        );
                        Cell {
                            variant,
                            loss,
                            picker,
                            pixel_accuracy: None,
                            mae_ts: None,
                            mae_ms: None,
                            mae_ts_valid_only: None,
                            error: Some(e),
                        }
                    }
                };
                cells.push(cell);
            }
            if predicted.is_ok() {
                match overlay_plots(spec, &manifest, &data, &stage, loss, variant) {
                    Ok(mut p) => plots.append(&mut p),
                    Err(e) => warn!(
                        "plots for {} / {} failed: {e}",
                        loss.label(),
                        variant.as_str()
                    ),
                }
            }
        }
    }

    let table_path = out.join("table.txt");
    let result = ReproduceResult {
        seed: spec.seed,
        cells,
        training,
        table_path: table_path.clone(),
        plots,
    };
    let table = result.render_table(spec);
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;
    write_json(&out.join("results.json"), &result)?;
    info!("results table:\n{table}");
    Ok(result)
}

fn overlay_plots(
    spec: &ExperimentSpec,
    manifest: &DatasetManifest,
    data: &Path,
    stage: &Path,
    loss: LossKind,
    variant: Variant,
) -> Result<Vec<PathBuf>> {
    let dir = ensure_dir(&spec.output.join("plots"))?;
    let filter = RecordFilter {
        split: Split::Test,
        variant: Some(variant),
    };
    let picker = *spec.pickers.last().expect("validated non-empty");
    let mut written = Vec::new();
    for record in filter
        .select(manifest)
        .into_iter()
        .take(spec.plots_per_cell)
    {
        let sample = load_sample(data, manifest, record)?;
        let pred = read_picks(
            &stage
                .join(format!("picks_{}", picker_slug(picker)))
                .join(picks_file(&record.id)),
        )?;
        let path = dir.join(format!(
            "{}_{}_{}_{}.png",
            loss_slug(loss),
            variant.as_str(),
            picker_slug(picker),
            record.id
        ));
        plot::overlay_png(&path, &sample.gather, Some(&sample.picks), Some(&pred))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(
            (
                cfg.learning_rate,
                cfg.epochs,
                cfg.batch_size,
                cfg.crop_width
            ),
            (1e-3, 50, 4, 600)
        );
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: TrainConfig =
            serde_json::from_str(r#"{"loss_kind": "cross_entropy", "epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.batch_size, 4);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"loss_kind": "dice"}"#).is_err());
    }

    #[test]
    fn validation_rejects_zero_sizes() {
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn desk_preset() {
        let cfg = TrainConfig {
            desk_scale: true,
            ..Default::default()
        }
        .resolve();
        assert_eq!(
            (cfg.epochs, cfg.crop_width, cfg.model.base_channels),
            (15, 96, 16)
        );
        assert_eq!(cfg.clone().resolve(), cfg);
    }

    #[test]
    fn empty_mask_gives_invalid_line() {
        let mask = SegmentationMask::new(ndarray::Array2::zeros((4, 3))).unwrap();
        let p = pick_mask(&mask, PickMethod::Npp).unwrap();
        assert_eq!(p.invalid_count(), 3);
    }
}
