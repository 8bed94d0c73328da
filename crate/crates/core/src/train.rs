//! Training loop, metrics and the variant comparison.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::{fit_ple, CiError, CiModel};
use crate::features::{build_features, FeatureError, MinMaxStats, N_FEATURES};
use crate::imaging::{build_image, ChannelStats, EnvImage, ImageFormat, ImagingConfig, ImagingError};
use crate::model::{
    HybridNet, ModelConfig, ModelError, ModelVariant, PreparedInput, Predictor, Preprocessor, TrainedNet, MANIFEST_FILE,
};
use crate::nn::{AdamConfig, AdamState, GradSet, NnError, ParamStore, Real, Tape, Tensor};
use crate::raster::Scene;
use crate::synth::{LinkSample, Split};

pub const TRAIN_CONFIG_VERSION: u32 = 1;

/// RNG stream for the per-epoch shuffle.
const SHUFFLE_STREAM: u64 = 4;
/// Gradients are summed in this many fixed slices of a batch so the result
/// does not depend on the worker count.
const GRAD_SLICES: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("split {0} is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, batch: usize, loss: f64 },
    #[error("no checkpoint at {0}")]
    MissingCheckpoint(PathBuf),
    #[error("bad training config: {0}")]
    BadConfig(String),
    #[error("series is constant; correlation undefined")]
    ConstantSeries,
    #[error("target value is zero; MAPE undefined")]
    ZeroTarget,
    #[error("length mismatch: {0} predictions for {1} targets")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub version: u32,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub image_format: ImageFormat,
    pub variant: ModelVariant,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    pub imaging: ImagingConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            version: TRAIN_CONFIG_VERSION,
            lr: 1e-4,
            batch_size: 64,
            epochs: 30,
            seed: crate::REFERENCE_SEED,
            image_format: ImageFormat::Resize,
            variant: ModelVariant::Proposed,
            eval_every: 1,
            imaging: ImagingConfig { downscale: 4, ..ImagingConfig::default() },
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::BadConfig(m));
        if self.version != TRAIN_CONFIG_VERSION {
            return bad(format!("version: expected {TRAIN_CONFIG_VERSION}, got {}", self.version));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch_size, epochs and eval_every must be at least 1".into());
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr = {}", self.lr));
        }
        self.imaging.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)
            .map_err(|e| TrainError::BadConfig(format!("line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Population metrics of a prediction series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse_db: f64,
    pub mape_pct: f64,
    pub pcc: f64,
}

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(TrainError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let mse = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

pub fn mape(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    if target.contains(&0.0) {
        return Err(TrainError::ZeroTarget);
    }
    Ok(100.0 * pred.iter().zip(target).map(|(p, t)| ((p - t) / t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn pcc(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_lengths(pred, target)?;
    let n = pred.len() as f64;
    let (mp, mt) = (pred.iter().sum::<f64>() / n, target.iter().sum::<f64>() / n);
    let (mut spt, mut spp, mut stt) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (dp, dt) = (p - mp, t - mt);
        spt += dp * dt;
        spp += dp * dp;
        stt += dt * dt;
    }
    if spp == 0.0 || stt == 0.0 {
        return Err(TrainError::ConstantSeries);
    }
    Ok((spt / (spp.sqrt() * stt.sqrt())).clamp(-1.0, 1.0))
}

impl MetricReport {
    /// `pcc` is NaN when either series is constant, e.g. a collapsed network.
    pub fn compute(pred: &[f64], target: &[f64]) -> Result<Self> {
        let pcc = match pcc(pred, target) {
            Err(TrainError::ConstantSeries) => f64::NAN,
            r => r?,
        };
        Ok(MetricReport { rmse_db: rmse(pred, target)?, mape_pct: mape(pred, target)?, pcc })
    }
}

/// CI model fitted on the train split only.
pub fn fit_ci_on_train(samples: &[LinkSample], frequency_hz: f64) -> Result<CiModel> {
    let train: Vec<(f64, f64)> = samples.iter().filter(|s| s.split == Split::Train).map(|s| (s.d3d_m, s.path_loss_db)).collect();
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    Ok(fit_ple(train, frequency_hz, 1.0)?)
}

/// Network inputs of one split, ready for repeated epochs.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub split: Split,
    pub samples: Vec<LinkSample>,
    pub inputs: Vec<PreparedInput>,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.path_loss_db).collect()
    }
}

/// Preprocessing fitted on the train split and applied to all three splits.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub pre: Preprocessor,
    pub train: PreparedSplit,
    pub val: PreparedSplit,
    pub test: PreparedSplit,
}

impl PreparedData {
    pub fn split(&self, split: Split) -> &PreparedSplit {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

fn stats_for(
    train: &[&LinkSample],
    images: &[EnvImage],
    ci: &CiModel,
    format: ImageFormat,
    imaging: &ImagingConfig,
) -> Result<Preprocessor> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let feats = train.iter().map(|s| build_features(s, ci)).collect::<Result<Vec<_>, _>>()?;
    let minmax = MinMaxStats::compute(&feats)?;
    let image_stats = ChannelStats::compute(images)?;
    Ok(Preprocessor { format, imaging: imaging.clone(), ci: *ci, minmax, image_stats })
}

fn build_images(scene: &Scene, samples: &[&LinkSample], format: ImageFormat, imaging: &ImagingConfig) -> Result<Vec<EnvImage>> {
    Ok(samples.par_iter().map(|s| build_image(format, scene, s, imaging)).collect::<Result<Vec<_>, _>>()?)
}

/// Fits min-max and Z-score statistics on the train rows of `samples`.
pub fn fit_preprocessor(
    scene: &Scene,
    samples: &[LinkSample],
    ci: &CiModel,
    format: ImageFormat,
    imaging: &ImagingConfig,
) -> Result<Preprocessor> {
    let train: Vec<&LinkSample> = samples.iter().filter(|s| s.split == Split::Train).collect();
    let images = build_images(scene, &train, format, imaging)?;
    stats_for(&train, &images, ci, format, imaging)
}

fn prepare_rows(pre: &Preprocessor, rows: Vec<&LinkSample>, images: Vec<EnvImage>, split: Split) -> Result<PreparedSplit> {
    let samples: Vec<LinkSample> = rows.into_iter().copied().collect();
    let inputs = images
        .into_par_iter()
        .zip(samples.par_iter())
        .map(|(img, s)| pre.prepare_with_image(img, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PreparedSplit { split, samples, inputs })
}

pub fn prepare_split(pre: &Preprocessor, scene: &Scene, samples: &[LinkSample], split: Split) -> Result<PreparedSplit> {
    let rows: Vec<&LinkSample> = samples.iter().filter(|s| s.split == split).collect();
    let images = build_images(scene, &rows, pre.format, &pre.imaging)?;
    prepare_rows(pre, rows, images, split)
}

/// Builds every image once, fits the statistics on the train rows and
/// normalises all three splits with them.
pub fn prepare_data(
    scene: &Scene,
    samples: &[LinkSample],
    ci: &CiModel,
    format: ImageFormat,
    imaging: &ImagingConfig,
) -> Result<PreparedData> {
    let rows = |split: Split| samples.iter().filter(|s| s.split == split).collect::<Vec<_>>();
    let train_rows = rows(Split::Train);
    let train_images = build_images(scene, &train_rows, format, imaging)?;
    let pre = stats_for(&train_rows, &train_images, ci, format, imaging)?;
    let train = prepare_rows(&pre, train_rows, train_images, Split::Train)?;
    let val = prepare_split(&pre, scene, samples, Split::Val)?;
    let test = prepare_split(&pre, scene, samples, Split::Test)?;
    Ok(PreparedData { pre, train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation RMSE.
    pub best: TrainedNet,
    /// Parameters after the last epoch.
    pub last_store: ParamStore<f32>,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn best_val(&self) -> f64 {
        self.best.val_rmse
    }
}

fn input_vars<T: Real>(tape: &mut Tape<'_, T>, input: &PreparedInput) -> Result<(crate::nn::Var, crate::nn::Var)> {
    let image = tape.constant(Tensor::from_f32(&input.image_shape, &input.image)?);
    let sys = tape.constant(Tensor::from_f64(&[1, N_FEATURES], &input.system)?);
    Ok((image, sys))
}

/// Network predictions in dB for every input, in order.
pub fn predict_inputs(net: &HybridNet, store: &ParamStore<f32>, inputs: &[PreparedInput]) -> Result<Vec<f64>> {
    inputs.par_iter().map(|inp| Ok(net.output(store, inp)?.pl_hat)).collect()
}

/// Batch RMSE and its parameter gradient.
///
/// Each sample runs on its own tape; the backward pass of sample `i` is
/// seeded with `d rmse / d p_i = (p_i - t_i) / (N rmse)`. Gradients are
/// summed over a fixed number of slices so the result does not depend on
/// the thread count. Returns the predictions, the loss and, when the loss
/// is finite, the gradient.
pub fn batch_gradients<T: Real>(
    net: &HybridNet,
    store: &ParamStore<T>,
    inputs: &[&PreparedInput],
    targets: &[f64],
) -> Result<(Vec<f64>, f64, Option<GradSet<T>>)> {
    if inputs.len() != targets.len() {
        return Err(TrainError::LengthMismatch(inputs.len(), targets.len()));
    }
    let forwards = inputs
        .par_iter()
        .map(|inp| {
            let mut tape = Tape::new(store);
            let (image, sys) = input_vars(&mut tape, inp)?;
            let vars = net.forward(&mut tape, image, sys, inp.d3d_m)?;
            Ok((tape, vars.pl))
        })
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<f64> = forwards.iter().map(|(t, pl)| t.value(*pl).item().as_f64()).collect();
    let loss = rmse(&preds, targets)?;
    if !loss.is_finite() {
        return Ok((preds, loss, None));
    }
    let n = inputs.len() as f64;
    let slice_len = inputs.len().div_ceil(GRAD_SLICES).max(1);
    let partial = forwards
        .par_chunks(slice_len)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = GradSet::zeros_like(store);
            for (k, (tape, pl)) in chunk.iter().enumerate() {
                let j = c * slice_len + k;
                let seed = if loss > 0.0 { (preds[j] - targets[j]) / (n * loss) } else { 0.0 };
                tape.backward_seeded(*pl, Tensor::full(&[1, 1], T::of(seed)))?.accumulate_into(&mut acc);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = GradSet::zeros_like(store);
    for g in &partial {
        total.add(g);
    }
    Ok((preds, loss, Some(total)))
}

/// One optimisation step on `batch`; returns the pre-update predictions.
fn train_step(
    net: &HybridNet,
    store: &mut ParamStore<f32>,
    adam: &mut AdamState<f32>,
    split: &PreparedSplit,
    batch: &[usize],
) -> Result<Vec<f64>> {
    let inputs: Vec<&PreparedInput> = batch.iter().map(|&i| &split.inputs[i]).collect();
    let targets: Vec<f64> = batch.iter().map(|&i| split.samples[i].path_loss_db).collect();
    let (preds, _, grads) = batch_gradients(net, store, &inputs, &targets)?;
    if let Some(g) = grads {
        store.zero_grad();
        store.accumulate(&g)?;
        adam.step(store)?;
    }
    Ok(preds)
}

/// Trains one variant; `on_epoch` sees every log row as it is produced,
/// starting with the untrained model as epoch 0.
pub fn train(cfg: &TrainConfig, data: &PreparedData, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    if data.pre.format != cfg.image_format {
        return Err(TrainError::BadConfig(format!(
            "data prepared as {} but config asks for {}",
            data.pre.format.as_str(),
            cfg.image_format.as_str()
        )));
    }
    let targets = data.train.targets();
    let mean_pl = targets.iter().sum::<f64>() / targets.len() as f64;
    let mut store = ParamStore::<f32>::new();
    let net = HybridNet::new(&mut store, cfg.seed, cfg.variant, &cfg.model, cfg.image_format.channels(), &data.pre.ci, mean_pl)?;
    let mut adam = AdamState::new(&store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let val_targets = data.val.targets();
    let start = Instant::now();

    let init_train = rmse(&predict_inputs(&net, &store, &data.train.inputs)?, &targets)?;
    let init_val = rmse(&predict_inputs(&net, &store, &data.val.inputs)?, &val_targets)?;
    let row = EpochLog { epoch: 0, train_rmse: init_train, val_rmse: Some(init_val), wall_seconds: start.elapsed().as_secs_f64() };
    on_epoch(&row);
    let mut log = vec![row];
    let mut best = (0usize, init_val, store.clone());

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sq = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let preds = train_step(&net, &mut store, &mut adam, &data.train, batch)?;
            let batch_sq: f64 = preds.iter().zip(batch).map(|(p, &i)| (p - targets[i]).powi(2)).sum();
            if !batch_sq.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch, batch: b, loss: (batch_sq / batch.len() as f64).sqrt() });
            }
            sq += batch_sq;
        }
        let train_rmse = (sq / order.len() as f64).sqrt();
        let val_rmse = if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let v = rmse(&predict_inputs(&net, &store, &data.val.inputs)?, &val_targets)?;
            if !v.is_finite() {
                return Err(TrainError::DivergenceDetected { epoch, batch: 0, loss: v });
            }
            if v < best.1 {
                best = (epoch, v, store.clone());
            }
            Some(v)
        } else {
            None
        };
        let row = EpochLog { epoch, train_rmse, val_rmse, wall_seconds: start.elapsed().as_secs_f64() };
        on_epoch(&row);
        log.push(row);
    }
    let best_net = TrainedNet { net, store: best.2, pre: data.pre.clone(), init_seed: cfg.seed, epoch: best.0, val_rmse: best.1 };
    Ok(TrainOutcome { best: best_net, last_store: store, log })
}

pub fn write_train_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_rmse", "val_rmse", "wall_seconds"])?;
    for r in log {
        let val = r.val_rmse.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.train_rmse.to_string(), val, format!("{:.3}", r.wall_seconds)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_train_log(path: impl AsRef<Path>) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        let (epoch, train_rmse, val_rmse, wall_seconds): (usize, f64, Option<f64>, f64) = rec?;
        out.push(EpochLog { epoch, train_rmse, val_rmse, wall_seconds });
    }
    Ok(out)
}

/// Metrics of a predictor on one split of a dataset.
pub fn evaluate(predictor: &Predictor, scene: &Scene, samples: &[LinkSample], split: Split) -> Result<MetricReport> {
    let rows: Vec<LinkSample> = samples.iter().filter(|s| s.split == split).copied().collect();
    if rows.is_empty() {
        return Err(TrainError::EmptySplit(split.as_str()));
    }
    let preds: Vec<f64> = predictor.predict_many(scene, &rows)?.iter().map(|o| o.pl_hat).collect();
    let targets: Vec<f64> = rows.iter().map(|s| s.path_loss_db).collect();
    MetricReport::compute(&preds, &targets)
}

/// Metrics on an already prepared split.
pub fn evaluate_prepared(predictor: &Predictor, split: &PreparedSplit) -> Result<MetricReport> {
    if split.is_empty() {
        return Err(TrainError::EmptySplit(split.split.as_str()));
    }
    let preds = match &predictor.trained {
        Some(t) => predict_inputs(&t.net, &t.store, &split.inputs)?,
        None => split.samples.iter().map(|s| predictor.ci.predict(s.d3d_m)).collect::<Result<Vec<_>, _>>()?,
    };
    MetricReport::compute(&preds, &split.targets())
}

/// Checkpoint directory of one comparison cell under `root`.
pub fn checkpoint_dir(root: &Path, format: ImageFormat, variant: ModelVariant) -> PathBuf {
    root.join(format.as_str()).join(variant.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub format: ImageFormat,
    pub variant: ModelVariant,
    pub rmse_db: f64,
    pub mape_pct: f64,
    pub pcc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn get(&self, format: ImageFormat, variant: ModelVariant) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.format == format && r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("format,variant,rmse_db,mape_pct,pcc\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:.4},{:.4},{:.4}", r.format.as_str(), r.variant.as_str(), r.rmse_db, r.mape_pct, r.pcc);
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:<9} {:>9} {:>9} {:>7}\n", "format", "variant", "RMSE(dB)", "MAPE(%)", "PCC");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<9} {:>9.3} {:>9.3} {:>7.4}",
                r.format.as_str(),
                r.variant.as_str(),
                r.rmse_db,
                r.mape_pct,
                r.pcc
            );
        }
        s
    }
}

/// Test-split table over `formats x variants`, reading checkpoints from
/// `root/<format>/<variant>/`. The CI row needs no checkpoint.
pub fn compare(
    scene: &Scene,
    samples: &[LinkSample],
    ci: &CiModel,
    formats: &[ImageFormat],
    variants: &[ModelVariant],
    root: &Path,
) -> Result<ComparisonTable> {
    let mut rows = Vec::new();
    for &format in formats {
        for &variant in variants {
            let predictor = if variant.is_trainable() {
                let dir = checkpoint_dir(root, format, variant);
                if !dir.join(MANIFEST_FILE).is_file() {
                    return Err(TrainError::MissingCheckpoint(dir));
                }
                Predictor::from_trained(TrainedNet::load(&dir)?)
            } else {
                Predictor::ci_only(*ci)
            };
            let m = evaluate(&predictor, scene, samples, Split::Test)?;
            rows.push(ComparisonRow { format, variant, rmse_db: m.rmse_db, mape_pct: m.mape_pct, pcc: m.pcc });
        }
    }
    Ok(ComparisonTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_metrics() {
        let (y, p) = ([100.0, 200.0], [110.0, 190.0]);
        assert!((rmse(&p, &y).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&p, &y).unwrap() - 7.5).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction() {
        let y = [100.0, 120.0, 90.0];
        let m = MetricReport::compute(&y, &y).unwrap();
        assert_eq!((m.rmse_db, m.mape_pct), (0.0, 0.0));
        assert!((m.pcc - 1.0).abs() < 1e-12);
        assert!(matches!(pcc(&[5.0, 5.0], &[5.0, 5.0]), Err(TrainError::ConstantSeries)));
        let flat = MetricReport::compute(&[5.0, 5.0], &[4.0, 6.0]).unwrap();
        assert!(flat.pcc.is_nan() && (flat.rmse_db - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_target() {
        assert!(matches!(mape(&[1.0], &[0.0]), Err(TrainError::ZeroTarget)));
    }

    #[test]
    fn empty_and_mismatched() {
        assert!(matches!(rmse(&[], &[]), Err(TrainError::EmptySplit(_))));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(TrainError::LengthMismatch(1, 2))));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(matches!(TrainConfig::from_json(r#"{"epochs": 3, "lrr": 0.1}"#), Err(TrainError::BadConfig(_))));
        assert!(matches!(TrainConfig::from_json(r#"{"batch_size": 0}"#), Err(TrainError::BadConfig(_))));
        let cfg = TrainConfig::from_json(r#"{"epochs": 3, "variant": "assisted", "image_format": "fullsize"}"#).unwrap();
        assert_eq!((cfg.epochs, cfg.variant, cfg.image_format), (3, ModelVariant::ConventionalAssisted, ImageFormat::Fullsize));
    }

    #[test]
    fn table_rendering() {
        let t = ComparisonTable {
            rows: vec![ComparisonRow { format: ImageFormat::Resize, variant: ModelVariant::CiOnly, rmse_db: 5.5, mape_pct: 4.0, pcc: 0.8 }],
        };
        assert_eq!(t.to_csv(), "format,variant,rmse_db,mape_pct,pcc\nresize,ci,5.5000,4.0000,0.8000\n");
        assert!(t.render().lines().nth(1).unwrap().starts_with("resize     ci"));
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let log = vec![
            EpochLog { epoch: 0, train_rmse: 9.5, val_rmse: Some(9.75), wall_seconds: 0.5 },
            EpochLog { epoch: 1, train_rmse: 8.25, val_rmse: None, wall_seconds: 1.0 },
        ];
        write_train_log(&log, &p).unwrap();
        assert_eq!(read_train_log(&p).unwrap(), log);
    }
}
