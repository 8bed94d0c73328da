use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pathloss_lab::ci::CiModel;
use pathloss_lab::imaging::ImageFormat;
use pathloss_lab::manifest::{OutputSet, RunManifest};
use pathloss_lab::model::{predict_route, read_predictions, write_predictions, ModelVariant, Predictor, TrainedNet};
use pathloss_lab::plot::plot_routes;
use pathloss_lab::raster::{read_raster, write_raster, Scene};
use pathloss_lab::synth::{generate_dataset, generate_scene, read_dataset, write_dataset, LinkSample, Split, SynthConfig};
use pathloss_lab::train::{
    checkpoint_dir, compare, evaluate, fit_ci_on_train, prepare_data, train, write_train_log, TrainConfig,
};

const SATELLITE_FILE: &str = "satellite.plrg";
const ELEVATION_FILE: &str = "elevation.plrg";
const LANDCOVER_FILE: &str = "landcover.plrg";
const THREADS_ENV: &str = "PATHLOSS_LAB_THREADS";

#[derive(Parser)]
#[command(name = "pathloss-lab", version, about = "Model-assisted path loss prediction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset table written by `synth`.
    #[arg(long)]
    dataset: PathBuf,
    /// Directory holding satellite.plrg and elevation.plrg.
    #[arg(long)]
    scene: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and measurement dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the CI path loss exponent on the train split.
    FitCi {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum)]
        format: Option<ImageFormat>,
        #[arg(long, value_enum)]
        variant: Option<ModelVariant>,
        /// CI model JSON; fitted on the train split when omitted.
        #[arg(long)]
        ci_model: Option<PathBuf>,
    },
    /// Report RMSE, MAPE and PCC of a checkpoint (or the CI model) on one split.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pred: PredictorArgs,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-sample predictions along routes.
    Predict {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        pred: PredictorArgs,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test-split table over formats and variants.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Directory with <format>/<variant>/ checkpoints.
        #[arg(long)]
        runs: PathBuf,
        #[arg(long = "format", value_enum, value_delimiter = ',', default_value = "resize")]
        formats: Vec<ImageFormat>,
        #[arg(long = "variant", value_enum, value_delimiter = ',', default_value = "proposed,assisted,baseline,ci")]
        variants: Vec<ModelVariant>,
        /// Train cells whose checkpoint is missing, using --config.
        #[arg(long)]
        train_missing: bool,
        #[arg(long)]
        ci_model: Option<PathBuf>,
    },
    /// Render one SVG per route from a prediction table.
    Plot {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        ci_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct PredictorArgs {
    /// Checkpoint directory; not needed for the CI variant.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<ModelVariant>,
    #[arg(long)]
    ci_model: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?;
        if n == 0 {
            bail!("{THREADS_ENV} must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_scene(dir: &Path) -> Result<Scene> {
    let sat = read_raster(dir.join(SATELLITE_FILE)).with_context(|| format!("reading {}", dir.join(SATELLITE_FILE).display()))?;
    let el = read_raster(dir.join(ELEVATION_FILE)).with_context(|| format!("reading {}", dir.join(ELEVATION_FILE).display()))?;
    Ok(Scene::new(sat, el)?)
}

fn load_dataset(path: &Path) -> Result<Vec<LinkSample>> {
    let samples = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if samples.is_empty() {
        bail!("dataset {} has no rows", path.display());
    }
    Ok(samples)
}

fn dataset_frequency(samples: &[LinkSample]) -> Result<f64> {
    let f = samples[0].frequency_hz;
    if samples.iter().any(|s| s.frequency_hz != f) {
        bail!("dataset mixes carrier frequencies");
    }
    Ok(f)
}

fn load_or_fit_ci(path: Option<&Path>, samples: &[LinkSample]) -> Result<CiModel> {
    match path {
        Some(p) => CiModel::load(p).with_context(|| format!("reading CI model {}", p.display())),
        None => Ok(fit_ci_on_train(samples, dataset_frequency(samples)?)?),
    }
}

fn load_predictor(args: &PredictorArgs, samples: &[LinkSample]) -> Result<Predictor> {
    match (&args.checkpoint, args.variant) {
        (Some(dir), v) => {
            let net = TrainedNet::load(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
            if let Some(v) = v {
                if v != net.net.variant {
                    bail!("checkpoint holds variant {}, not {v}", net.net.variant);
                }
            }
            Ok(Predictor::from_trained(net))
        }
        (None, Some(ModelVariant::CiOnly)) => Ok(Predictor::ci_only(load_or_fit_ci(args.ci_model.as_deref(), samples)?)),
        (None, _) => bail!("--checkpoint is required unless --variant ci"),
    }
}

fn finish(mut manifest: RunManifest, mut out: OutputSet, name: &str) -> Result<()> {
    let files: Vec<PathBuf> = out.files().to_vec();
    for f in &files {
        if f.is_file() {
            manifest.artifact(out.root(), f)?;
        }
    }
    let bad = manifest.verify(out.root())?;
    if !bad.is_empty() {
        bail!("outputs changed while being recorded: {}", bad.join(", "));
    }
    let path = out.path(format!("{name}.manifest.json"));
    manifest.write(&path)?;
    out.commit();
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common } => {
            let mut cfg = match &common.config {
                Some(p) => SynthConfig::from_json(&read_text(p)?).with_context(|| format!("config {}", p.display()))?,
                None => SynthConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let mut out = OutputSet::create(&common.out)?;
            let scene = generate_scene(&cfg)?;
            let samples = generate_dataset(&cfg, &scene)?;
            std::fs::create_dir_all(out.path("scene"))?;
            write_raster(&scene.scene.satellite, out.path(Path::new("scene").join(SATELLITE_FILE)))?;
            write_raster(&scene.scene.elevation, out.path(Path::new("scene").join(ELEVATION_FILE)))?;
            write_raster(&scene.landcover, out.path(Path::new("scene").join(LANDCOVER_FILE)))?;
            write_dataset(&samples, out.path("dataset.csv"))?;
            let mut m = RunManifest::new("synth", &cfg)?;
            m.seed("seed", cfg.seed);
            if let Some(p) = &common.config {
                m.input(p)?;
            }
            let counts: Vec<usize> = Split::ALL.iter().map(|s| samples.iter().filter(|x| x.split == *s).count()).collect();
            println!("wrote {} samples (train/val/test = {}/{}/{})", samples.len(), counts[0], counts[1], counts[2]);
            finish(m, out, "synth")
        }
        Command::FitCi { dataset, out } => {
            let samples = load_dataset(&dataset)?;
            let ci = fit_ci_on_train(&samples, dataset_frequency(&samples)?)?;
            let mut set = OutputSet::create(&out)?;
            ci.save(set.path("ci_model.json"))?;
            println!("fitted path loss exponent n = {:.6}", ci.ple);
            let mut m = RunManifest::new("fit-ci", &ci)?;
            m.input(&dataset)?;
            finish(m, set, "fit-ci")
        }
        Command::Train { common, data, format, variant, ci_model } => {
            let mut cfg = match &common.config {
                Some(p) => TrainConfig::from_json(&read_text(p)?).with_context(|| format!("config {}", p.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(f) = format {
                cfg.image_format = f;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            cfg.validate()?;
            if !cfg.variant.is_trainable() {
                bail!("the ci variant has nothing to train; use fit-ci");
            }
            let samples = load_dataset(&data.dataset)?;
            let scene = load_scene(&data.scene)?;
            let ci = load_or_fit_ci(ci_model.as_deref(), &samples)?;
            let mut out = OutputSet::create(&common.out)?;
            let prepared = prepare_data(&scene, &samples, &ci, cfg.image_format, &cfg.imaging)?;
            let outcome = train(&cfg, &prepared, |r| {
                let val = r.val_rmse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                eprintln!("epoch {:>4}  train {:.4}  val {val}  {:.1}s", r.epoch, r.train_rmse, r.wall_seconds);
            })?;
            let ckpt = out.path("checkpoint");
            outcome.best.save(&ckpt)?;
            for f in ["checkpoint.json", "params.bin", "minmax.json", "image_stats.json"] {
                out.path(Path::new("checkpoint").join(f));
            }
            write_train_log(&outcome.log, out.path("train_log.csv"))?;
            println!("best val RMSE {:.4} dB at epoch {}", outcome.best.val_rmse, outcome.best.epoch);
            let mut m = RunManifest::new("train", &cfg)?;
            m.seed("seed", cfg.seed).input(&data.dataset)?.input(&data.scene.join(SATELLITE_FILE))?.input(&data.scene.join(ELEVATION_FILE))?;
            finish(m, out, "train")
        }
        Command::Eval { data, pred, split, out } => {
            let samples = load_dataset(&data.dataset)?;
            let scene = load_scene(&data.scene)?;
            let predictor = load_predictor(&pred, &samples)?;
            let report = evaluate(&predictor, &scene, &samples, split)?;
            let mut set = OutputSet::create(&out)?;
            let json = serde_json::json!({
                "variant": predictor.variant.as_str(),
                "split": split.as_str(),
                "rmse_db": report.rmse_db,
                "mape_pct": report.mape_pct,
                "pcc": report.pcc,
            });
            std::fs::write(set.path("metrics.json"), serde_json::to_string_pretty(&json)?)?;
            println!(
                "{} on {}: RMSE {:.4} dB, MAPE {:.4} %, PCC {:.4}",
                predictor.variant,
                split.as_str(),
                report.rmse_db,
                report.mape_pct,
                report.pcc
            );
            let mut m = RunManifest::new("eval", &json)?;
            m.input(&data.dataset)?;
            finish(m, set, "eval")
        }
        Command::Predict { data, pred, split, out } => {
            let samples = load_dataset(&data.dataset)?;
            let scene = load_scene(&data.scene)?;
            let predictor = load_predictor(&pred, &samples)?;
            let rows: Vec<LinkSample> = samples.iter().filter(|s| s.split == split).copied().collect();
            if rows.is_empty() {
                bail!("split {} is empty", split.as_str());
            }
            let mut table = Vec::with_capacity(rows.len());
            let mut ids: Vec<u32> = rows.iter().map(|s| s.route_id).collect();
            ids.sort_unstable();
            ids.dedup();
            for id in ids {
                let route: Vec<LinkSample> = rows.iter().filter(|s| s.route_id == id).copied().collect();
                table.extend(predict_route(&predictor, &scene, &route)?);
            }
            let mut set = OutputSet::create(&out)?;
            write_predictions(&table, set.path("predictions.csv"))?;
            println!("wrote {} predictions", table.len());
            let mut m = RunManifest::new("predict", &serde_json::json!({"variant": predictor.variant, "split": split}))?;
            m.input(&data.dataset)?;
            finish(m, set, "predict")
        }
        Command::Compare { common, data, runs, formats, variants, train_missing, ci_model } => {
            let mut cfg = match &common.config {
                Some(p) => TrainConfig::from_json(&read_text(p)?).with_context(|| format!("config {}", p.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let samples = load_dataset(&data.dataset)?;
            let scene = load_scene(&data.scene)?;
            let ci = load_or_fit_ci(ci_model.as_deref(), &samples)?;
            if train_missing {
                for &format in &formats {
                    let todo: Vec<ModelVariant> = variants
                        .iter()
                        .copied()
                        .filter(|v| v.is_trainable() && !checkpoint_dir(&runs, format, *v).join("checkpoint.json").is_file())
                        .collect();
                    if todo.is_empty() {
                        continue;
                    }
                    let prepared = prepare_data(&scene, &samples, &ci, format, &cfg.imaging)?;
                    for v in todo {
                        eprintln!("training {} / {}", format.as_str(), v);
                        let cell = TrainConfig { image_format: format, variant: v, ..cfg.clone() };
                        let outcome = train(&cell, &prepared, |_| {})?;
                        let dir = checkpoint_dir(&runs, format, v);
                        outcome.best.save(&dir)?;
                        write_train_log(&outcome.log, dir.join("train_log.csv"))?;
                    }
                }
            }
            let table = compare(&scene, &samples, &ci, &formats, &variants, &runs)?;
            let mut out = OutputSet::create(&common.out)?;
            std::fs::write(out.path("comparison.csv"), table.to_csv())?;
            std::fs::write(out.path("comparison.txt"), table.render())?;
            print!("{}", table.render());
            let mut m = RunManifest::new("compare", &cfg)?;
            m.seed("seed", cfg.seed).input(&data.dataset)?;
            finish(m, out, "compare")
        }
        Command::Plot { predictions, dataset, ci_model, out } => {
            let rows = read_predictions(&predictions).with_context(|| format!("reading {}", predictions.display()))?;
            let samples = load_dataset(&dataset)?;
            let ci = load_or_fit_ci(ci_model.as_deref(), &samples)?;
            let mut by_route: HashMap<u32, std::slice::Iter<'_, LinkSample>> = HashMap::new();
            let mut ci_curve = Vec::with_capacity(rows.len());
            for r in &rows {
                let it = by_route.entry(r.route_id).or_insert_with(|| samples.iter());
                let s = it
                    .find(|s| s.route_id == r.route_id)
                    .with_context(|| format!("route {} has more predictions than dataset rows", r.route_id))?;
                ci_curve.push(ci.predict(s.d3d_m)?);
            }
            let mut set = OutputSet::create(&out)?;
            let files = plot_routes(&rows, &ci_curve, set.root())?;
            for f in &files {
                set.path(f.file_name().expect("file name"));
            }
            println!("wrote {} figures", files.len());
            let mut m = RunManifest::new("plot", &ci)?;
            m.input(&predictions)?;
            finish(m, set, "plot")
        }
    }
}
