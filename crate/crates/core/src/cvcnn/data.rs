//! Simulated realigned patches paired with their true aberration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::{generate_aberration, AberrationConfig, AberrationFunction};
use crate::beamform::{realign_points, RealignedPatch};
use crate::error::{Error, Result};
use crate::geometry::{ProbeGeometry, TransmitScheme};
use crate::simulator::{frame_seed, FrameSimulator, RecordWindow, Scatterer, SimMode};
use crate::tensor::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetConfig {
    pub num_samples: usize,
    pub frames: usize,
    pub times: usize,
    /// Bubbles per patch; the first one is the realignment target.
    pub bubbles: usize,
    pub x_range: (f64, f64),
    pub z_range: (f64, f64),
    pub max_speed: f64,
    pub frame_rate: f64,
    pub noise_fraction: f64,
    pub aberration: AberrationConfig,
    pub mode: SimMode,
    pub rng_seed: u64,
}

impl Default for TrainingSetConfig {
    fn default() -> Self {
        Self {
            num_samples: 2000,
            frames: 8,
            times: 9,
            bubbles: 1,
            x_range: (-0.4e-3, 0.4e-3),
            z_range: (3e-3, 6e-3),
            max_speed: 20e-3,
            frame_rate: 1000.0,
            noise_fraction: 0.05,
            aberration: AberrationConfig {
                phase_bound: 0.25,
                ..AberrationConfig::desk()
            },
            mode: SimMode::Exact,
            rng_seed: 0,
        }
    }
}

fn sample_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (i as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One simulated patch with its aberration (piston removed).
pub fn simulate_patch(
    cfg: &TrainingSetConfig,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
    index: usize,
) -> Result<(RealignedPatch, AberrationFunction)> {
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.rng_seed, index));
    let ab = generate_aberration(
        &AberrationConfig {
            rng_seed: rng.random(),
            ..cfg.aberration.clone()
        },
        probe,
    )?;
    let mut tracks = Vec::with_capacity(cfg.bubbles);
    for _ in 0..cfg.bubbles.max(1) {
        let x0 = rng.random_range(cfg.x_range.0..=cfg.x_range.1);
        let z0 = rng.random_range(cfg.z_range.0..=cfg.z_range.1);
        let speed = rng.random_range(0.0..=cfg.max_speed);
        let dir = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let amp = rng.random_range(0.5..=1.0);
        let phase = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let pts: Vec<(f64, f64)> = (0..cfg.frames)
            .map(|f| {
                let t = f as f64 / cfg.frame_rate;
                (x0 + speed * dir.cos() * t, z0 + speed * dir.sin() * t)
            })
            .collect();
        tracks.push((pts, C64::from_polar(amp, phase)));
    }
    let xs = tracks.iter().flat_map(|(p, _)| p.iter().map(|q| q.0));
    let zs = tracks.iter().flat_map(|(p, _)| p.iter().map(|q| q.1));
    let (xmin, xmax) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    let (zmin, zmax) = zs.fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(v), a.1.max(v)));
    let margin = 4.0 / probe.center_frequency;
    let window = RecordWindow::covering(probe, scheme, (xmin, xmax), (zmin, zmax), margin);
    let sim = FrameSimulator::new(probe.clone(), scheme.clone(), Some(ab.clone()), cfg.mode, window)?;
    let noise_seed: u64 = rng.random();
    let mut frames = Vec::with_capacity(cfg.frames);
    for f in 0..cfg.frames {
        let sc: Vec<Scatterer> = tracks.iter().map(|(p, r)| Scatterer::new(p[f].0, p[f].1, *r)).collect();
        frames.push(sim.simulate(&sc, cfg.noise_fraction, frame_seed(noise_seed, f))?);
    }
    let centre: Vec<(usize, f64, f64)> = tracks[0].0.iter().enumerate().map(|(f, p)| (f, p.0, p.1)).collect();
    let patch = realign_points(&frames, &centre, cfg.times, probe, scheme)?;
    Ok((patch, ab.piston_removed()))
}

/// `num_samples` independent patches; sample `i` depends only on the seed and `i`.
pub fn simulate_training_set(
    cfg: &TrainingSetConfig,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
) -> Result<Vec<(RealignedPatch, AberrationFunction)>> {
    if cfg.frames == 0 || cfg.times % 2 == 0 || cfg.frame_rate <= 0.0 {
        return Err(Error::Config("training set needs frames > 0, odd times and a positive frame rate".into()));
    }
    (0..cfg.num_samples)
        .into_par_iter()
        .map(|i| simulate_patch(cfg, probe, scheme, i))
        .collect()
}
