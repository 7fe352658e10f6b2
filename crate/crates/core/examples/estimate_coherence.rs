//! Coherence-based estimate from an isolated bubble against the true aberration: `estimate_coherence [trials]`.

use ulmcorr::aberration::{generate_aberration, AberrationConfig};
use ulmcorr::beamform::realign_points;
use ulmcorr::estimator::{estimate_coherence_based, CoherenceEstimatorConfig};
use ulmcorr::geometry::{ProbeGeometry, TransmitScheme};
use ulmcorr::metrics::{delay_rmse, spatial_coherence};
use ulmcorr::simulator::{FrameSimulator, RecordWindow, Scatterer, SimMode};

fn main() -> ulmcorr::Result<()> {
    let trials: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let probe = ProbeGeometry::desk();
    let scheme = TransmitScheme::desk(probe.num_elements);
    let lam = probe.wavelength();
    let (x, z) = (0.0, 30.0 * lam);
    let window = RecordWindow::covering(&probe, &scheme, (-4.0 * lam, 4.0 * lam), (26.0 * lam, 34.0 * lam), 1e-6);
    let cfg = CoherenceEstimatorConfig::default();
    let limit = 1.0 / (8.0 * probe.center_frequency);
    for seed in 0..trials {
        let ab = generate_aberration(&AberrationConfig { phase_bound: 0.25, rng_seed: seed, ..AberrationConfig::desk() }, &probe)?;
        let sim = FrameSimulator::new(probe.clone(), scheme.clone(), Some(ab.clone()), SimMode::Exact, window)?;
        let iq = sim.simulate_clean(&[Scatterer::unit(x, z)])?;
        let patch = realign_points(&[iq], &[(0, x, z)], 9, &probe, &scheme)?;
        let est = estimate_coherence_based(&patch, &probe, &cfg)?;
        let err = delay_rmse(&est.delays(), &ab.piston_removed().delays())?;
        println!(
            "seed {seed:2}  delay rms error {:.2} ns ({})  auc {:.3} -> {:.3}",
            err * 1e9,
            if err <= limit { "within 1/(8 fc)" } else { "above 1/(8 fc)" },
            spatial_coherence(&patch, 9)?.auc,
            spatial_coherence(&patch.phase_corrected(&est)?, 9)?.auc
        );
    }
    Ok(())
}
