//! Trains the desk network and compares it with its untrained initialization on held-out patches:
//! `cvcnn_efficacy [train] [test] [epochs] [lr]`.

use std::time::Instant;

use ulmcorr::cvcnn::{build_model, infer, simulate_training_set, train_on_patches, ScalePreset, TrainConfig, TrainingSetConfig};
use ulmcorr::geometry::{ProbeGeometry, TransmitScheme};
use ulmcorr::metrics::{phase_rmse, spatial_coherence};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ulmcorr::Result<()> {
    let (n_train, n_test, epochs, lr) = (arg(1, 2000usize), arg(2, 60usize), arg(3, 5usize), arg(4, 2e-3f64));
    let probe = ProbeGeometry::desk();
    let scheme = TransmitScheme::desk(probe.num_elements);
    let fc = probe.center_frequency;
    let t = Instant::now();
    let train_set = simulate_training_set(&TrainingSetConfig { num_samples: n_train, rng_seed: 1, ..Default::default() }, &probe, &scheme)?;
    let test_set = simulate_training_set(&TrainingSetConfig { num_samples: n_test, rng_seed: 2, ..Default::default() }, &probe, &scheme)?;
    println!("simulated {n_train} + {n_test} patches in {:.1?}", t.elapsed());

    let untrained = build_model(ScalePreset::Desk, 5)?;
    let mut model = untrained.clone();
    let cfg = TrainConfig { epochs, lr0: lr, validation_fraction: 0.0, ..Default::default() };
    let t = Instant::now();
    let hist = train_on_patches(&mut model, &train_set, &cfg)?;
    for r in &hist.epochs {
        println!("epoch {}  train loss {:.4e}", r.epoch, r.train_loss);
    }
    println!("trained in {:.1?}", t.elapsed());

    let mut gains = Vec::with_capacity(n_test);
    let (mut auc0, mut auc1) = (0.0, 0.0);
    for (patch, truth) in &test_set {
        let before = phase_rmse(&infer(&untrained, patch, fc)?, truth)?;
        let est = infer(&model, patch, fc)?;
        gains.push(before - phase_rmse(&est, truth)?);
        let w = patch.num_times();
        auc0 += spatial_coherence(patch, w)?.auc;
        auc1 += spatial_coherence(&patch.phase_corrected(&est)?, w)?.auc;
    }
    gains.sort_by(f64::total_cmp);
    let n = n_test as f64;
    println!("median phase RMSE improvement over untrained {:.4} rad", gains[gains.len() / 2]);
    println!("mean AUC aberrated {:.4}  corrected {:.4}", auc0 / n, auc1 / n);
    Ok(())
}
