//! Trains the desk-scale network on simulated patches and reports the loss curve.

use std::time::Instant;

use ulmcorr::cvcnn::{build_model, simulate_training_set, train_on_patches, ScalePreset, TrainConfig, TrainingSetConfig};
use ulmcorr::geometry::{ProbeGeometry, TransmitScheme};

fn main() -> ulmcorr::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let epochs: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let probe = ProbeGeometry::desk();
    let scheme = TransmitScheme::desk(probe.num_elements);
    let t = Instant::now();
    let set = simulate_training_set(&TrainingSetConfig { num_samples: n, ..Default::default() }, &probe, &scheme)?;
    println!("simulated {n} patches in {:.2?}", t.elapsed());
    let mut model = build_model(ScalePreset::Desk, 1)?;
    println!("{} complex parameters", model.num_parameters());
    let cfg = TrainConfig {
        epochs,
        batch_size: 10,
        lr0: lr,
        dropout_p: 0.0,
        validation_fraction: 0.0,
        ..Default::default()
    };
    let t = Instant::now();
    let hist = train_on_patches(&mut model, &set, &cfg)?;
    let steps = hist.steps.len();
    println!("{steps} steps in {:.2?} ({:.3?} per step)", t.elapsed(), t.elapsed() / steps as u32);
    for r in hist.epochs.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:4}  loss {:.4e}", r.epoch, r.train_loss);
    }
    println!("final {:.4e} / initial {:.4e}", hist.steps.last().unwrap(), hist.steps[0]);
    Ok(())
}
