//! Parametric microbubble flow phantom with static speckle.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::Scatterer;
use crate::error::{Error, Result};
use crate::tensor::C64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    /// Centre-line vertices (x, z) in meters.
    pub path: Vec<(f64, f64)>,
    pub radius: f64,
    /// Centre-line speed in m/s.
    pub peak_speed: f64,
}

impl Vessel {
    pub fn straight(from: (f64, f64), to: (f64, f64), radius: f64, peak_speed: f64) -> Self {
        Self {
            path: vec![from, to],
            radius,
            peak_speed,
        }
    }

    pub fn length(&self) -> f64 {
        self.path
            .windows(2)
            .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
            .sum()
    }

    /// Poiseuille speed at radial offset `r`.
    pub fn speed_at(&self, r: f64) -> f64 {
        let q = (r / self.radius).clamp(-1.0, 1.0);
        self.peak_speed * (1.0 - q * q)
    }

    /// Point at arc length `s`, displaced by `offset` along the left normal,
    /// plus the unit tangent there.
    pub fn point_at(&self, s: f64, offset: f64) -> ((f64, f64), (f64, f64)) {
        let mut rest = s.max(0.0);
        let last = self.path.len() - 2;
        for (i, w) in self.path.windows(2).enumerate() {
            let (dx, dz) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            let len = (dx * dx + dz * dz).sqrt();
            if rest <= len || i == last {
                let (tx, tz) = (dx / len, dz / len);
                let p = (w[0].0 + tx * rest - tz * offset, w[0].1 + tz * rest + tx * offset);
                return (p, (tx, tz));
            }
            rest -= len;
        }
        unreachable!("vessel paths have at least two vertices")
    }

    fn validate(&self, i: usize) -> Result<()> {
        if self.path.len() < 2 {
            return Err(Error::Config(format!("vessel {i} needs at least two vertices")));
        }
        if self
            .path
            .windows(2)
            .any(|w| w[0] == w[1] || !(w[0].0.is_finite() && w[0].1.is_finite() && w[1].0.is_finite() && w[1].1.is_finite()))
        {
            return Err(Error::Config(format!("vessel {i} has a degenerate segment")));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("vessel {i} radius must be positive")));
        }
        if !(self.peak_speed >= 0.0) {
            return Err(Error::Config(format!("vessel {i} speed must be non-negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPhantomConfig {
    pub vessels: Vec<Vessel>,
    /// Bubbles per mm³ of vessel lumen.
    pub bubble_concentration: f64,
    /// Field of view `((x_min, x_max), (z_min, z_max))` in meters.
    pub fov: ((f64, f64), (f64, f64)),
    pub frame_rate: f64,
    pub num_frames: usize,
    /// Speckle point sources per λ².
    pub speckle_density: f64,
    /// Standard deviation of the circular-Gaussian speckle reflectivity.
    pub speckle_scale: f64,
    pub wavelength: f64,
    pub noise_fraction: f64,
    pub rng_seed: u64,
}

impl FlowPhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vessels.is_empty() {
            return Err(Error::Config("phantom has no vessels".into()));
        }
        for (i, v) in self.vessels.iter().enumerate() {
            v.validate(i)?;
        }
        if !(self.bubble_concentration > 0.0) {
            return Err(Error::Config("bubble concentration must be positive".into()));
        }
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config("frame rate must be positive".into()));
        }
        if self.num_frames == 0 {
            return Err(Error::Config("phantom needs at least one frame".into()));
        }
        let ((x0, x1), (z0, z1)) = self.fov;
        if !(x1 > x0 && z1 > z0 && z0 > 0.0) {
            return Err(Error::Config("field of view must be non-empty and below the probe".into()));
        }
        if !(self.speckle_density >= 0.0 && self.speckle_scale >= 0.0 && self.wavelength > 0.0) {
            return Err(Error::Config("invalid speckle parameters".into()));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::Config("noise fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Ground-truth position of one bubble in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BubbleState {
    pub id: usize,
    pub x: f64,
    pub z: f64,
    /// Speed along the vessel in m/s.
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScattererTimeline {
    pub bubbles: Vec<Vec<Scatterer>>,
    pub speckle: Vec<Scatterer>,
    pub truth: Vec<Vec<BubbleState>>,
    pub frame_rate: f64,
}

impl ScattererTimeline {
    pub fn num_frames(&self) -> usize {
        self.bubbles.len()
    }

    /// Timeline of a fixed scene repeated over `frames` frames.
    pub fn stationary(scatterers: Vec<Scatterer>, frames: usize, frame_rate: f64) -> Self {
        let truth: Vec<BubbleState> = scatterers
            .iter()
            .enumerate()
            .map(|(id, s)| BubbleState { id, x: s.x, z: s.z, speed: 0.0 })
            .collect();
        Self {
            bubbles: vec![scatterers; frames],
            speckle: Vec::new(),
            truth: vec![truth; frames],
            frame_rate,
        }
    }

    /// CSV with header `frame,bubble_id,x,z`.
    pub fn write_ground_truth(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("frame,bubble_id,x,z\n");
        for (f, states) in self.truth.iter().enumerate() {
            for b in states {
                out.push_str(&format!("{f},{},{:e},{:e}\n", b.id, b.x, b.z));
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Bubble {
    id: usize,
    vessel: usize,
    s: f64,
    offset: f64,
    speed: f64,
}

fn spawn(rng: &mut ChaCha8Rng, v: &Vessel, vessel: usize, id: usize, s: f64) -> Bubble {
    // Uniform over the circular cross-section, projected onto the image plane.
    let r = v.radius * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    Bubble {
        id,
        vessel,
        s,
        offset: r * phi.cos(),
        speed: v.speed_at(r),
    }
}

pub fn make_flow_phantom(config: &FlowPhantomConfig) -> Result<ScattererTimeline> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut next_id = 0usize;
    let mut live = Vec::new();
    for (vi, v) in config.vessels.iter().enumerate() {
        let len = v.length();
        let volume_mm3 = PI * v.radius * v.radius * len * 1e9;
        let mean = config.bubble_concentration * volume_mm3;
        let count = Poisson::new(mean)
            .map_err(|e| Error::Config(format!("bubble count: {e}")))?
            .sample(&mut rng) as usize;
        for _ in 0..count {
            let s = len * rng.random::<f64>();
            live.push(spawn(&mut rng, v, vi, next_id, s));
            next_id += 1;
        }
    }

    let ((x0, x1), (z0, z1)) = config.fov;
    let area = (x1 - x0) * (z1 - z0) / (config.wavelength * config.wavelength);
    let n_speckle = (config.speckle_density * area).round() as usize;
    let normal = Normal::new(0.0, config.speckle_scale / 2f64.sqrt()).unwrap();
    let speckle = (0..n_speckle)
        .map(|_| {
            let x = rng.random_range(x0..x1);
            let z = rng.random_range(z0..z1);
            Scatterer::new(x, z, C64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        })
        .collect();

    let dt = 1.0 / config.frame_rate;
    let mut bubbles = Vec::with_capacity(config.num_frames);
    let mut truth = Vec::with_capacity(config.num_frames);
    for _ in 0..config.num_frames {
        let mut sc = Vec::with_capacity(live.len());
        let mut st = Vec::with_capacity(live.len());
        for b in &live {
            let ((x, z), _) = config.vessels[b.vessel].point_at(b.s, b.offset);
            if z > 0.0 {
                sc.push(Scatterer::unit(x, z));
                st.push(BubbleState { id: b.id, x, z, speed: b.speed });
            }
        }
        bubbles.push(sc);
        truth.push(st);
        for b in live.iter_mut() {
            b.s += b.speed * dt;
            let v = &config.vessels[b.vessel];
            let len = v.length();
            if b.s > len {
                let s = b.s - len;
                *b = spawn(&mut rng, v, b.vessel, next_id, s);
                next_id += 1;
            }
        }
    }
    Ok(ScattererTimeline {
        bubbles,
        speckle,
        truth,
        frame_rate: config.frame_rate,
    })
}
