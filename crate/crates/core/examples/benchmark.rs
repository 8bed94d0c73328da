//! Trains every network variant on the reference synthetic benchmark and
//! prints the test-split table.
//!
//! Usage: `benchmark [epochs] [format]`

use std::time::Instant;

use pathloss_lab::imaging::ImageFormat;
use pathloss_lab::model::{ModelVariant, Predictor};
use pathloss_lab::synth::{generate_dataset, generate_scene, SynthConfig};
use pathloss_lab::train::{evaluate_prepared, fit_ci_on_train, prepare_data, train, TrainConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let format: ImageFormat = match args.next() {
        Some(s) => serde_json::from_value(serde_json::Value::String(s))?,
        None => ImageFormat::Resize,
    };
    let t0 = Instant::now();
    let synth_cfg = SynthConfig::default();
    let scene = generate_scene(&synth_cfg)?;
    let samples = generate_dataset(&synth_cfg, &scene)?;
    let ci = fit_ci_on_train(&samples, synth_cfg.frequency_hz)?;
    println!("{} samples, fitted n = {:.4}", samples.len(), ci.ple);
    let cfg = TrainConfig { epochs, image_format: format, ..TrainConfig::default() };
    let data = prepare_data(&scene.scene, &samples, &ci, format, &cfg.imaging)?;
    println!("prepared {}/{}/{} in {:.1} s", data.train.len(), data.val.len(), data.test.len(), t0.elapsed().as_secs_f64());

    let mut rows = vec![("ci".to_string(), evaluate_prepared(&Predictor::ci_only(ci), &data.test)?)];
    for variant in [ModelVariant::Proposed, ModelVariant::ConventionalAssisted, ModelVariant::EndToEndBaseline] {
        let out = train(&TrainConfig { variant, ..cfg.clone() }, &data, |r| {
            let val = r.val_rmse.map_or("-".into(), |v| format!("{v:.3}"));
            println!("  {variant:<9} epoch {:>3}  train {:.3}  val {val}  {:.0} s", r.epoch, r.train_rmse, r.wall_seconds);
        })?;
        let report = evaluate_prepared(&Predictor::from_trained(out.best.clone()), &data.test)?;
        println!("  {variant} best epoch {} (val {:.3})", out.best.epoch, out.best.val_rmse);
        rows.push((variant.to_string(), report));
    }
    println!("\n{:<10} {:>9} {:>9} {:>8}", "variant", "RMSE(dB)", "MAPE(%)", "PCC");
    for (name, r) in rows {
        println!("{name:<10} {:>9.3} {:>9.3} {:>8.4}", r.rmse_db, r.mape_pct, r.pcc);
    }
    Ok(())
}
