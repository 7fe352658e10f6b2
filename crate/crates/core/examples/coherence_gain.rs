//! Spatial-coherence AUC of simulated patches before and after ground-truth phase correction.

use ulmcorr::cvcnn::{simulate_training_set, TrainingSetConfig};
use ulmcorr::geometry::{ProbeGeometry, TransmitScheme};
use ulmcorr::metrics::spatial_coherence;

fn main() -> ulmcorr::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let probe = ProbeGeometry::desk();
    let scheme = TransmitScheme::desk(probe.num_elements);
    let cfg = TrainingSetConfig {
        num_samples: n,
        rng_seed: 7,
        ..Default::default()
    };
    let set = simulate_training_set(&cfg, &probe, &scheme)?;
    let (mut before, mut after) = (0.0, 0.0);
    for (patch, truth) in &set {
        let window = patch.num_times();
        before += spatial_coherence(patch, window)?.auc;
        after += spatial_coherence(&patch.phase_corrected(truth)?, window)?.auc;
    }
    println!("mean AUC aberrated {:.4}  corrected {:.4}", before / n as f64, after / n as f64);
    Ok(())
}
