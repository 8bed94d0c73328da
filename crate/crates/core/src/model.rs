//! The hybrid predictor: image and system branches fused by self-attention,
//! a path loss exponent head and a compensation head combined through the CI
//! formula, plus the comparison variants.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ci::{CiError, CiModel};
use crate::features::{build_features, minmax_normalize, FeatureError, MinMaxStats, N_FEATURES};
use crate::imaging::{build_image, standardize_in_place, ChannelStats, EnvImage, ImageFormat, ImagingConfig, ImagingError};
use crate::manifest::{sha256_file, sha256_hex};
use crate::nn::{read_param_blob, write_param_blob, ConvEncoder, ConvEncoderConfig, Mhsa, Mlp, NnError, ParamEntry, ParamStore, Real, Tape, Tensor, Var};
use crate::raster::Scene;
use crate::synth::{chainage, LinkSample};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.bin";
pub const MINMAX_FILE: &str = "minmax.json";
pub const IMAGE_STATS_FILE: &str = "image_stats.json";

/// RNG stream used for parameter initialisation.
const INIT_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("variant {0} has no trainable network")]
    NoNetwork(&'static str),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("bad prediction table: {0}")]
    BadTable(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum ModelVariant {
    #[serde(rename = "proposed")]
    #[value(name = "proposed")]
    Proposed,
    #[serde(rename = "assisted")]
    #[value(name = "assisted")]
    ConventionalAssisted,
    #[serde(rename = "baseline")]
    #[value(name = "baseline")]
    EndToEndBaseline,
    #[serde(rename = "ci")]
    #[value(name = "ci")]
    CiOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 4] =
        [ModelVariant::Proposed, ModelVariant::ConventionalAssisted, ModelVariant::EndToEndBaseline, ModelVariant::CiOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelVariant::Proposed => "proposed",
            ModelVariant::ConventionalAssisted => "assisted",
            ModelVariant::EndToEndBaseline => "baseline",
            ModelVariant::CiOnly => "ci",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != ModelVariant::CiOnly
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_channels: Vec<usize>,
    pub model_dim: usize,
    pub heads: usize,
    pub system_hidden: usize,
    pub fusion_hidden: usize,
    pub fused_dim: usize,
    pub head_hidden: usize,
    /// Multiplier on the Kaiming draw of each head's output layer.
    pub head_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            conv_channels: vec![16, 32, 64, 128],
            model_dim: 256,
            heads: 8,
            system_hidden: 128,
            fusion_hidden: 128,
            fused_dim: 64,
            head_hidden: 32,
            head_init_scale: 0.01,
        }
    }
}

/// Network weights layout for one trainable variant.
#[derive(Debug, Clone)]
pub struct HybridNet {
    pub variant: ModelVariant,
    pub config: ModelConfig,
    pub image_channels: usize,
    pub ci: CiModel,
    pub encoder: ConvEncoder,
    pub system: Mlp,
    pub attention: Mhsa,
    pub fusion: Mlp,
    pub ple_head: Option<Mlp>,
    pub comp_head: Option<Mlp>,
    pub pl_head: Option<Mlp>,
}

/// Tape handles produced by [`HybridNet::forward`], each `[1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub pl: Var,
    pub ple: Option<Var>,
    pub comp: Option<Var>,
}

impl HybridNet {
    /// Registers all parameters in `store`. The PLE head starts at the global
    /// exponent and the baseline head at `target_mean_db`, so every variant
    /// begins close to the CI prediction.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        seed: u64,
        variant: ModelVariant,
        config: &ModelConfig,
        image_channels: usize,
        ci: &CiModel,
        target_mean_db: f64,
    ) -> Result<Self> {
        if !variant.is_trainable() {
            return Err(ModelError::NoNetwork(variant.as_str()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let d = config.model_dim;
        let enc_cfg = ConvEncoderConfig { in_channels: image_channels, channels: config.conv_channels.clone(), out_dim: d };
        let encoder = ConvEncoder::new(store, &mut rng, "image", enc_cfg);
        let system = Mlp::new(store, &mut rng, "system", &[N_FEATURES, config.system_hidden, d]);
        let attention = Mhsa::new(store, &mut rng, "mhsa", d, config.heads)?;
        let fusion = Mlp::new(store, &mut rng, "fusion", &[d, config.fusion_hidden, config.fused_dim]);
        let head_sizes = [config.fused_dim, config.head_hidden, 1];
        let mut head = |name: &str, bias: f64| {
            let mlp = Mlp::new(store, &mut rng, name, &head_sizes);
            let last = mlp.last();
            store.value_mut(last.w).data.iter_mut().for_each(|w| *w *= T::of(config.head_init_scale));
            store.value_mut(last.b).data[0] = T::of(bias);
            mlp
        };
        let (ple_head, comp_head, pl_head) = match variant {
            ModelVariant::Proposed => (Some(head("head.ple", ci.ple)), Some(head("head.comp", 0.0)), None),
            ModelVariant::ConventionalAssisted => (None, Some(head("head.comp", 0.0)), None),
            _ => (None, None, Some(head("head.pl", target_mean_db))),
        };
        Ok(HybridNet {
            variant,
            config: config.clone(),
            image_channels,
            ci: *ci,
            encoder,
            system,
            attention,
            fusion,
            ple_head,
            comp_head,
            pl_head,
        })
    }

    /// Fused 64-d feature of one sample; `image: [C,H,W]`, `sys: [1,6]`.
    pub fn fused<T: Real>(&self, tape: &mut Tape<'_, T>, image: Var, sys: Var) -> Result<Var> {
        let img = self.encoder.forward(tape, image)?;
        let sys = self.system.forward(tape, sys)?;
        let tokens = tape.concat_rows(&[img, sys])?;
        let mixed = self.attention.forward(tape, tokens)?;
        let pooled = tape.mean_rows(mixed)?;
        Ok(self.fusion.forward(tape, pooled)?)
    }

    /// Records one sample's forward pass; geometry enters in raw units.
    pub fn forward<T: Real>(&self, tape: &mut Tape<'_, T>, image: Var, sys: Var, d3d_m: f64) -> Result<ForwardVars> {
        let fused = self.fused(tape, image, sys)?;
        match self.variant {
            ModelVariant::Proposed => {
                let raw = self.ple_head.as_ref().expect("proposed has a PLE head").forward(tape, fused)?;
                let ple = tape.relu(raw);
                let comp = self.comp_head.as_ref().expect("proposed has a compensation head").forward(tape, fused)?;
                let trend = tape.scale(ple, self.ci.log_distance(d3d_m)?);
                let trend = tape.add_scalar(trend, self.ci.intercept_db());
                let pl = tape.add(trend, comp)?;
                Ok(ForwardVars { pl, ple: Some(ple), comp: Some(comp) })
            }
            ModelVariant::ConventionalAssisted => {
                let comp = self.comp_head.as_ref().expect("assisted has a compensation head").forward(tape, fused)?;
                let pl = tape.add_scalar(comp, self.ci.predict(d3d_m)?);
                Ok(ForwardVars { pl, ple: None, comp: Some(comp) })
            }
            ModelVariant::EndToEndBaseline => {
                let pl = self.pl_head.as_ref().expect("baseline has a regression head").forward(tape, fused)?;
                Ok(ForwardVars { pl, ple: None, comp: None })
            }
            ModelVariant::CiOnly => Err(ModelError::NoNetwork(self.variant.as_str())),
        }
    }

    /// Evaluates one prepared sample and assembles the output in f64.
    pub fn output<T: Real>(&self, store: &ParamStore<T>, input: &PreparedInput) -> Result<HybridOutput> {
        let mut tape = Tape::new(store);
        let image = tape.constant(Tensor::from_f32(&input.image_shape, &input.image)?);
        let sys = tape.constant(Tensor::from_f64(&[1, N_FEATURES], &input.system)?);
        let vars = self.forward(&mut tape, image, sys, input.d3d_m)?;
        let get = |v: Option<Var>| v.map(|v| tape.value(v).item().as_f64());
        match self.variant {
            ModelVariant::Proposed => combine(&self.ci, input.d3d_m, get(vars.ple).unwrap_or(0.0), get(vars.comp).unwrap_or(0.0)),
            ModelVariant::ConventionalAssisted => {
                let comp = get(vars.comp).unwrap_or(0.0);
                Ok(HybridOutput { pl_hat: self.ci.predict(input.d3d_m)? + comp, ple_hat: Some(self.ci.ple), comp_hat: Some(comp) })
            }
            _ => Ok(HybridOutput { pl_hat: tape.value(vars.pl).item().as_f64(), ple_hat: None, comp_hat: None }),
        }
    }
}

/// Prediction of one link; `ple_hat` / `comp_hat` are absent for the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridOutput {
    pub pl_hat: f64,
    pub ple_hat: Option<f64>,
    pub comp_hat: Option<f64>,
}

/// `fspl(f, d0) + 10 ple log10(d / d0) + comp`.
pub fn combine(ci: &CiModel, d3d_m: f64, ple_hat: f64, comp_hat: f64) -> Result<HybridOutput> {
    let pl_hat = ci.intercept_db() + ple_hat * ci.log_distance(d3d_m)? + comp_hat;
    Ok(HybridOutput { pl_hat, ple_hat: Some(ple_hat), comp_hat: Some(comp_hat) })
}

/// Network-ready inputs of one link.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedInput {
    pub image_shape: [usize; 3],
    pub image: Vec<f32>,
    pub system: [f64; N_FEATURES],
    pub d3d_m: f64,
}

/// Image construction and input normalisation with frozen statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub format: ImageFormat,
    pub imaging: ImagingConfig,
    pub ci: CiModel,
    pub minmax: MinMaxStats,
    pub image_stats: ChannelStats,
}

impl Preprocessor {
    pub fn raw_image(&self, scene: &Scene, sample: &LinkSample) -> Result<EnvImage> {
        Ok(build_image(self.format, scene, sample, &self.imaging)?)
    }

    /// Normalises an already built raw image together with the system features.
    pub fn prepare_with_image(&self, mut image: EnvImage, sample: &LinkSample) -> Result<PreparedInput> {
        standardize_in_place(&mut image, &self.image_stats)?;
        let sys = build_features(sample, &self.ci)?;
        let norm = minmax_normalize(&sys.to_array(), &self.minmax)?;
        let mut system = [0.0; N_FEATURES];
        system.copy_from_slice(&norm);
        Ok(PreparedInput { image_shape: [image.channels, image.height, image.width], image: image.data, system, d3d_m: sample.d3d_m })
    }

    pub fn prepare(&self, scene: &Scene, sample: &LinkSample) -> Result<PreparedInput> {
        self.prepare_with_image(self.raw_image(scene, sample)?, sample)
    }
}

/// A CI-only predictor or a trained network with its preprocessing.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub variant: ModelVariant,
    pub ci: CiModel,
    pub trained: Option<TrainedNet>,
}

#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub net: HybridNet,
    pub store: ParamStore<f32>,
    pub pre: Preprocessor,
    pub init_seed: u64,
    pub epoch: usize,
    pub val_rmse: f64,
}

impl Predictor {
    pub fn ci_only(ci: CiModel) -> Self {
        Predictor { variant: ModelVariant::CiOnly, ci, trained: None }
    }

    pub fn from_trained(trained: TrainedNet) -> Self {
        Predictor { variant: trained.net.variant, ci: trained.net.ci, trained: Some(trained) }
    }

    pub fn predict(&self, scene: &Scene, sample: &LinkSample) -> Result<HybridOutput> {
        match &self.trained {
            None => Ok(HybridOutput { pl_hat: self.ci.predict(sample.d3d_m)?, ple_hat: Some(self.ci.ple), comp_hat: Some(0.0) }),
            Some(t) => t.net.output(&t.store, &t.pre.prepare(scene, sample)?),
        }
    }

    /// Parallel over samples; output order follows the input.
    pub fn predict_many(&self, scene: &Scene, samples: &[LinkSample]) -> Result<Vec<HybridOutput>> {
        samples.par_iter().map(|s| self.predict(scene, s)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRef {
    pub path: String,
    pub sha256: String,
}

impl FileRef {
    fn of(dir: &Path, name: &str) -> Result<Self> {
        Ok(FileRef { path: name.to_string(), sha256: sha256_file(dir.join(name))? })
    }

    fn verify(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(&self.path);
        let actual = sha256_file(&path)?;
        if actual != self.sha256 {
            return Err(ModelError::CheckpointMismatch(format!("{} hash {actual} differs from recorded {}", self.path, self.sha256)));
        }
        Ok(path)
    }
}

/// JSON side of a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub variant: ModelVariant,
    pub model: ModelConfig,
    pub image_channels: usize,
    pub init_seed: u64,
    pub image_format: ImageFormat,
    pub imaging: ImagingConfig,
    pub ci: CiModel,
    pub epoch: usize,
    pub val_rmse: f64,
    pub minmax: FileRef,
    pub image_stats: FileRef,
    pub params_file: FileRef,
    pub params: Vec<ParamEntry>,
}

impl TrainedNet {
    /// Writes `checkpoint.json`, `params.bin` and the two statistics files into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<CheckpointManifest> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.pre.minmax.save(dir.join(MINMAX_FILE))?;
        self.pre.image_stats.save(dir.join(IMAGE_STATS_FILE))?;
        let (blob, params) = write_param_blob(&self.store);
        std::fs::write(dir.join(PARAMS_FILE), &blob)?;
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            variant: self.net.variant,
            model: self.net.config.clone(),
            image_channels: self.net.image_channels,
            init_seed: self.init_seed,
            image_format: self.pre.format,
            imaging: self.pre.imaging.clone(),
            ci: self.net.ci,
            epoch: self.epoch,
            val_rmse: self.val_rmse,
            minmax: FileRef::of(dir, MINMAX_FILE)?,
            image_stats: FileRef::of(dir, IMAGE_STATS_FILE)?,
            params_file: FileRef { path: PARAMS_FILE.into(), sha256: sha256_hex(&blob) },
            params,
        };
        std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: CheckpointManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::CheckpointMismatch(format!("format version {}", manifest.format_version)));
        }
        if manifest.image_channels != manifest.image_format.channels() {
            return Err(ModelError::CheckpointMismatch(format!(
                "{} channels recorded for {} images",
                manifest.image_channels,
                manifest.image_format.as_str()
            )));
        }
        manifest.ci.validate()?;
        let minmax = MinMaxStats::load(manifest.minmax.verify(dir)?)?;
        let image_stats = ChannelStats::load(manifest.image_stats.verify(dir)?)?;
        if image_stats.mean.len() != manifest.image_channels || image_stats.std.len() != manifest.image_channels {
            return Err(ModelError::CheckpointMismatch("image statistics do not match the channel count".into()));
        }
        let payload = read_param_blob(&std::fs::read(manifest.params_file.verify(dir)?)?)?;
        let mut store = ParamStore::<f32>::new();
        let net = HybridNet::new(&mut store, manifest.init_seed, manifest.variant, &manifest.model, manifest.image_channels, &manifest.ci, 0.0)?;
        store
            .assign_from_blob(&manifest.params, &payload)
            .map_err(|e| ModelError::CheckpointMismatch(format!("architecture differs from parameter table: {e}")))?;
        let pre = Preprocessor { format: manifest.image_format, imaging: manifest.imaging, ci: manifest.ci, minmax, image_stats };
        Ok(TrainedNet { net, store, pre, init_seed: manifest.init_seed, epoch: manifest.epoch, val_rmse: manifest.val_rmse })
    }
}

/// One row of a route prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePrediction {
    pub route_id: u32,
    pub chainage_m: f64,
    pub pl_meas: f64,
    pub pl_hat: f64,
    pub ple_hat: Option<f64>,
    pub comp_hat: Option<f64>,
}

/// Predicts along one route; `samples` must already be in chainage order.
pub fn predict_route(predictor: &Predictor, scene: &Scene, samples: &[LinkSample]) -> Result<Vec<RoutePrediction>> {
    let outs = predictor.predict_many(scene, samples)?;
    Ok(samples
        .iter()
        .zip(chainage(samples))
        .zip(outs)
        .map(|((s, c), o)| RoutePrediction {
            route_id: s.route_id,
            chainage_m: c,
            pl_meas: s.path_loss_db,
            pl_hat: o.pl_hat,
            ple_hat: o.ple_hat,
            comp_hat: o.comp_hat,
        })
        .collect())
}

pub fn write_predictions(rows: &[RoutePrediction], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["route_id", "chainage_m", "pl_meas", "pl_hat", "ple_hat", "comp_hat"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<RoutePrediction>> {
    let mut r = csv::Reader::from_path(path)?;
    let expected = ["route_id", "chainage_m", "pl_meas", "pl_hat", "ple_hat", "comp_hat"];
    if r.headers()?.iter().ne(expected.iter().copied()) {
        return Err(ModelError::BadTable(format!("expected columns {}", expected.join(","))));
    }
    let rows = r.deserialize().collect::<Result<Vec<RoutePrediction>, _>>()?;
    if rows.iter().any(|r| !r.chainage_m.is_finite() || !r.pl_hat.is_finite() || !r.pl_meas.is_finite()) {
        return Err(ModelError::BadTable("non-finite value".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { conv_channels: vec![4, 4], model_dim: 16, heads: 4, system_hidden: 8, fusion_hidden: 8, fused_dim: 8, head_hidden: 4, head_init_scale: 1.0 }
    }

    fn input(d3d: f64) -> PreparedInput {
        let image = (0..4 * 8 * 8).map(|i| ((i as f32) * 0.37).sin()).collect();
        PreparedInput { image_shape: [4, 8, 8], image, system: [0.1, 0.5, -0.2, 0.9, 0.3, 0.7], d3d_m: d3d }
    }

    fn ci() -> CiModel {
        CiModel::new(1.21e9, 1.0, 3.0).unwrap()
    }

    #[test]
    fn ci_only_at_reference() {
        let p = Predictor::ci_only(ci());
        assert_eq!(p.ci.predict(1.0).unwrap(), p.ci.intercept_db());
    }

    #[test]
    fn zeroed_heads_give_intercept() {
        let mut store = ParamStore::<f32>::new();
        let net = HybridNet::new(&mut store, 1, ModelVariant::Proposed, &tiny(), 4, &ci(), 0.0).unwrap();
        for head in [net.ple_head.as_ref().unwrap(), net.comp_head.as_ref().unwrap()] {
            for l in &head.layers {
                store.value_mut(l.w).data.iter_mut().for_each(|v| *v = 0.0);
                store.value_mut(l.b).data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let out = net.output(&store, &input(500.0)).unwrap();
        assert_eq!(out.ple_hat, Some(0.0));
        assert_eq!(out.comp_hat, Some(0.0));
        assert!((out.pl_hat - ci().intercept_db()).abs() < 1e-12);
    }

    #[test]
    fn output_matches_tape_value() {
        let mut store = ParamStore::<f64>::new();
        let net = HybridNet::new(&mut store, 2, ModelVariant::Proposed, &tiny(), 4, &ci(), 0.0).unwrap();
        let inp = input(300.0);
        let mut tape = Tape::new(&store);
        let image = tape.constant(Tensor::from_f32(&inp.image_shape, &inp.image).unwrap());
        let sys = tape.constant(Tensor::from_f64(&[1, 6], &inp.system).unwrap());
        let vars = net.forward(&mut tape, image, sys, inp.d3d_m).unwrap();
        let out = net.output(&store, &inp).unwrap();
        assert!((tape.value(vars.pl).item() - out.pl_hat).abs() < 1e-9);
    }

    #[test]
    fn assisted_with_zero_comp_is_ci() {
        let mut store = ParamStore::<f32>::new();
        let net = HybridNet::new(&mut store, 3, ModelVariant::ConventionalAssisted, &tiny(), 4, &ci(), 0.0).unwrap();
        let last = net.comp_head.as_ref().unwrap().last().clone();
        store.value_mut(last.w).data.iter_mut().for_each(|v| *v = 0.0);
        store.value_mut(last.b).data.iter_mut().for_each(|v| *v = 0.0);
        let out = net.output(&store, &input(750.0)).unwrap();
        assert_eq!(out.pl_hat, ci().predict(750.0).unwrap());
    }

    #[test]
    fn ci_variant_has_no_network() {
        let mut store = ParamStore::<f32>::new();
        assert!(matches!(HybridNet::new(&mut store, 1, ModelVariant::CiOnly, &tiny(), 4, &ci(), 0.0), Err(ModelError::NoNetwork(_))));
    }

    #[test]
    fn distance_below_reference() {
        let mut store = ParamStore::<f32>::new();
        let net = HybridNet::new(&mut store, 1, ModelVariant::Proposed, &tiny(), 4, &ci(), 0.0).unwrap();
        assert!(matches!(net.output(&store, &input(0.5)), Err(ModelError::Ci(CiError::DistanceBelowReference { .. }))));
    }

    #[test]
    fn initial_prediction_near_ci() {
        let mut store = ParamStore::<f32>::new();
        let cfg = ModelConfig { head_init_scale: 0.0, ..tiny() };
        let net = HybridNet::new(&mut store, 4, ModelVariant::Proposed, &cfg, 4, &ci(), 0.0).unwrap();
        let out = net.output(&store, &input(400.0)).unwrap();
        assert!((out.pl_hat - ci().predict(400.0).unwrap()).abs() < 1e-4);
    }

    #[test]
    fn variant_names() {
        for v in ModelVariant::ALL {
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
    }

    #[test]
    fn prediction_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let rows = vec![
            RoutePrediction { route_id: 2, chainage_m: 0.0, pl_meas: 101.5, pl_hat: 99.25, ple_hat: Some(3.1), comp_hat: Some(-0.5) },
            RoutePrediction { route_id: 2, chainage_m: 8.0, pl_meas: 102.0, pl_hat: 100.0, ple_hat: None, comp_hat: None },
        ];
        write_predictions(&rows, &path).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), rows);
        let head = std::fs::read_to_string(&path).unwrap();
        assert!(head.starts_with("route_id,chainage_m,pl_meas,pl_hat,ple_hat,comp_hat\n"));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut store = ParamStore::<f32>::new();
        let ci = CiModel::new(1.21e9, 1.0, 3.248_682_018_113_7).unwrap();
        let net = HybridNet::new(&mut store, 9, ModelVariant::Proposed, &tiny(), 4, &ci, 0.0).unwrap();
        let awkward = |k: f64| (0..N_FEATURES).map(|i| (i as f64 + k) / 3.0 + 1e-17 * k).collect::<Vec<f64>>();
        let pre = Preprocessor {
            format: ImageFormat::Resize,
            imaging: ImagingConfig::default(),
            ci,
            minmax: MinMaxStats { min: awkward(0.1), max: awkward(7.7) },
            image_stats: ChannelStats { mean: vec![0.1 + 0.2, 1.0 / 7.0, 2f64.sqrt(), 123.456_789_012_345_67], std: vec![0.3; 4] },
        };
        let t = TrainedNet { net, store, pre, init_seed: 9, epoch: 3, val_rmse: 6.123_456_789 };
        let dir = tempfile::tempdir().unwrap();
        t.save(dir.path()).unwrap();
        let back = TrainedNet::load(dir.path()).unwrap();
        assert_eq!(back.pre, t.pre);
        assert_eq!(back.val_rmse.to_bits(), t.val_rmse.to_bits());
        let bits = |s: &ParamStore<f32>| s.iter().flat_map(|(_, p)| p.value.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        assert_eq!(bits(&back.store), bits(&t.store));
        let inp = input(640.0);
        assert_eq!(back.net.output(&back.store, &inp).unwrap(), t.net.output(&t.store, &inp).unwrap());
    }
}
