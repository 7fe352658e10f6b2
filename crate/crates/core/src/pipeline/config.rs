//! Run configuration: one TOML document covering every stage.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aberration::AberrationConfig;
use crate::beamform::ImageGrid;
use crate::cvcnn::{ScalePreset, TrainConfig, TrainingSetConfig};
use crate::error::{Error, Result};
use crate::estimator::CoherenceEstimatorConfig;
use crate::geometry::{ProbeGeometry, TransmitScheme};
use crate::metrics::HALF_BIT_SNR;
use crate::simulator::{FlowPhantomConfig, SimMode, Vessel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Coherence,
    Cvcnn,
    GroundTruth,
    None,
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coherence" => Ok(Self::Coherence),
            "cvcnn" => Ok(Self::Cvcnn),
            "ground-truth" => Ok(Self::GroundTruth),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown estimator `{other}` (expected coherence, cvcnn, ground-truth or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub num_elements: usize,
    pub center_frequency: f64,
    pub sound_speed: f64,
    /// Element pitch in wavelengths.
    pub pitch: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            num_elements: 16,
            center_frequency: 15.625e6,
            sound_speed: 1540.0,
            pitch: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeConfig {
    pub num_angles: usize,
    pub max_angle_deg: f64,
    pub pulse_cycles: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            num_angles: 3,
            max_angle_deg: 5.0,
            pulse_cycles: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub vessels: Vec<Vessel>,
    pub bubble_concentration: f64,
    /// `[x_min, x_max, z_min, z_max]` in wavelengths.
    pub fov: [f64; 4],
    pub frame_rate: f64,
    pub num_frames: usize,
    pub speckle_density: f64,
    pub speckle_scale: f64,
    pub noise_fraction: f64,
    pub mode: SimMode,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        let lam = 1540.0 / 15.625e6;
        let v = |a: (f64, f64), b: (f64, f64), r: f64, s: f64| {
            Vessel::straight((a.0 * lam, a.1 * lam), (b.0 * lam, b.1 * lam), r * lam, s)
        };
        Self {
            vessels: vec![
                v((-14.0, 8.0), (14.0, 12.0), 0.6, 15e-3),
                v((-14.0, 18.0), (14.0, 15.0), 0.6, 12e-3),
                v((-12.0, 28.0), (12.0, 24.0), 0.6, 12e-3),
                v((-14.0, 33.0), (10.0, 34.0), 0.5, 15e-3),
                v((-8.0, 35.0), (-2.0, 6.0), 0.5, 10e-3),
                v((4.0, 34.0), (12.0, 6.0), 0.5, 10e-3),
            ],
            bubble_concentration: 40.0,
            fov: [-16.0, 16.0, 4.0, 36.0],
            frame_rate: 1000.0,
            num_frames: 1000,
            speckle_density: 2.0,
            speckle_scale: 0.06,
            noise_fraction: 0.02,
            mode: SimMode::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UlmConfig {
    /// Beamforming pixel in wavelengths.
    pub pixel: f64,
    pub svd_cutoff: usize,
    /// PSF template extent `[nz, nx]` in pixels (odd).
    pub psf_size: [usize; 2],
    pub corr_threshold: f64,
    /// Detections dimmer than this, relative to the brightest filtered pixel
    /// of the whole stack, are discarded.
    pub intensity_floor_db: f64,
    /// A detection within this many wavelengths of one at least
    /// `sidelobe_db` brighter is treated as its sidelobe and dropped.
    pub sidelobe_radius: f64,
    pub sidelobe_db: f64,
    /// Linking radius in pixels.
    pub max_link_dist: f64,
    pub min_track_len: usize,
    pub density_factor: usize,
    pub density_min_len: usize,
    /// Aberration-map pixel in wavelengths.
    pub map_pixel: f64,
    /// Fixed smoothing parameter; cross-validation picks one when absent.
    pub smoothness: Option<f64>,
    pub patch_frames: usize,
    pub patch_times: usize,
    /// Share of tracks, latest first, used to fit the aberration map.
    pub fit_fraction: f64,
}

impl Default for UlmConfig {
    fn default() -> Self {
        Self {
            pixel: 0.5,
            svd_cutoff: 1,
            psf_size: [7, 7],
            corr_threshold: 0.55,
            intensity_floor_db: -22.0,
            sidelobe_radius: 4.0,
            sidelobe_db: 6.0,
            max_link_dist: 2.0,
            min_track_len: 16,
            density_factor: 4,
            density_min_len: 16,
            map_pixel: 4.0,
            smoothness: None,
            patch_frames: 8,
            patch_times: 9,
            fit_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub frc_snr: f64,
    pub split_seed: u64,
    /// Random track splits whose FRC curves are averaged; consecutive seeds from `split_seed`.
    pub frc_splits: usize,
    /// Coherence window in realignment samples; the full patch when absent.
    pub coherence_window: Option<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            frc_snr: HALF_BIT_SNR,
            split_seed: 0,
            frc_splits: 10,
            coherence_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvcnnConfig {
    pub scale: ScalePreset,
    /// Checkpoint directory; `<out>/model` when absent.
    pub checkpoint: Option<PathBuf>,
    pub init_seed: u64,
}

impl Default for CvcnnConfig {
    fn default() -> Self {
        Self {
            scale: ScalePreset::Desk,
            checkpoint: None,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Thread count; 0 lets the runtime decide.
    pub workers: usize,
    pub out: PathBuf,
    pub estimator: EstimatorKind,
    pub probe: ProbeConfig,
    pub scheme: SchemeConfig,
    pub phantom: PhantomConfig,
    pub aberration: AberrationConfig,
    pub ulm: UlmConfig,
    pub coherence: CoherenceEstimatorConfig,
    pub cvcnn: CvcnnConfig,
    pub training_set: TrainingSetConfig,
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            out: PathBuf::from("run"),
            estimator: EstimatorKind::Coherence,
            probe: ProbeConfig::default(),
            scheme: SchemeConfig::default(),
            phantom: PhantomConfig::default(),
            aberration: AberrationConfig {
                phase_bound: 0.4,
                ..AberrationConfig::desk()
            },
            ulm: UlmConfig::default(),
            coherence: CoherenceEstimatorConfig::default(),
            cvcnn: CvcnnConfig::default(),
            training_set: TrainingSetConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

/// Independent sub-seeds derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedUse {
    Phantom,
    Aberration,
    Noise,
    TrainingSet,
    Training,
    ModelInit,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical serialization; equal configurations give equal text.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        Ok(crate::metrics::config_hash(&self.canonical()?))
    }

    /// Writes `config.snapshot` into the output directory.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join("config.snapshot");
        std::fs::write(&path, self.canonical()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Switches probe, scheme, network and training-set dimensions to the full-size system.
    pub fn paper_scale(mut self) -> Self {
        self.probe.num_elements = 128;
        self.scheme.num_angles = 11;
        self.cvcnn.scale = ScalePreset::Paper;
        self.aberration = AberrationConfig::default();
        self.training_set.num_samples = 20_000;
        self.training_set.frames = 16;
        self.training_set.times = 17;
        self.training_set.aberration = AberrationConfig {
            phase_bound: self.training_set.aberration.phase_bound,
            ..AberrationConfig::default()
        };
        self.ulm.patch_frames = 16;
        self.ulm.patch_times = 17;
        let lam = 1540.0 / 15.625e6;
        self.phantom.fov = [-64.0, 64.0, 8.0, 136.0];
        self.phantom.vessels = self
            .phantom
            .vessels
            .iter()
            .map(|v| Vessel {
                path: v.path.iter().map(|p| (p.0 * 4.0, (p.1 - 4.0 * lam) * 4.0 + 8.0 * lam)).collect(),
                ..v.clone()
            })
            .collect();
        self
    }

    pub fn seed_for(&self, what: SeedUse) -> u64 {
        let k = match what {
            SeedUse::Phantom => 1u64,
            SeedUse::Aberration => 2,
            SeedUse::Noise => 3,
            SeedUse::TrainingSet => 4,
            SeedUse::Training => 5,
            SeedUse::ModelInit => 6,
        };
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k.wrapping_mul(0xBF58_476D_1CE4_E5B9))
    }

    pub fn validate(&self) -> Result<()> {
        self.probe_geometry()?.validate()?;
        self.transmit_scheme()?.validate()?;
        self.flow_phantom()?.validate()?;
        self.aberration.validate()?;
        self.coherence.validate()?;
        self.train.validate()?;
        let u = &self.ulm;
        if !(u.pixel > 0.0 && u.map_pixel > 0.0) {
            return Err(Error::Config("ulm pixel sizes must be positive".into()));
        }
        if u.psf_size.iter().any(|n| n % 2 == 0) {
            return Err(Error::Config("psf_size entries must be odd".into()));
        }
        if u.patch_times % 2 == 0 || u.patch_frames == 0 || u.density_factor == 0 {
            return Err(Error::Config("patch_times must be odd, patch_frames and density_factor positive".into()));
        }
        if u.patch_frames > u.min_track_len {
            return Err(Error::Config("patch_frames cannot exceed min_track_len".into()));
        }
        if !(u.fit_fraction > 0.0 && u.fit_fraction <= 1.0) {
            return Err(Error::Config("fit_fraction must lie in (0, 1]".into()));
        }
        if !(self.metrics.frc_snr > 0.0) {
            return Err(Error::Config("frc_snr must be positive".into()));
        }
        if self.metrics.frc_splits == 0 {
            return Err(Error::Config("frc_splits must be at least 1".into()));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.probe.sound_speed / self.probe.center_frequency
    }

    pub fn probe_geometry(&self) -> Result<ProbeGeometry> {
        let p = &self.probe;
        ProbeGeometry::new(p.num_elements, p.pitch * self.wavelength(), p.center_frequency, p.sound_speed)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn transmit_scheme(&self) -> Result<TransmitScheme> {
        let s = &self.scheme;
        TransmitScheme::symmetric(s.num_angles, s.max_angle_deg, s.pulse_cycles, self.probe.num_elements)
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// FOV in meters.
    pub fn fov(&self) -> ((f64, f64), (f64, f64)) {
        let lam = self.wavelength();
        let f = self.phantom.fov;
        ((f[0] * lam, f[1] * lam), (f[2] * lam, f[3] * lam))
    }

    pub fn flow_phantom(&self) -> Result<FlowPhantomConfig> {
        let p = &self.phantom;
        Ok(FlowPhantomConfig {
            vessels: p.vessels.clone(),
            bubble_concentration: p.bubble_concentration,
            fov: self.fov(),
            frame_rate: p.frame_rate,
            num_frames: p.num_frames,
            speckle_density: p.speckle_density,
            speckle_scale: p.speckle_scale,
            wavelength: self.wavelength(),
            noise_fraction: p.noise_fraction,
            rng_seed: self.seed_for(SeedUse::Phantom),
        })
    }

    pub fn image_grid(&self) -> Result<ImageGrid> {
        let (x, z) = self.fov();
        ImageGrid::spanning(x, z, self.ulm.pixel * self.wavelength()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn map_grid(&self) -> Result<ImageGrid> {
        let (x, z) = self.fov();
        ImageGrid::spanning(x, z, self.ulm.map_pixel * self.wavelength()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn training_set_config(&self) -> TrainingSetConfig {
        TrainingSetConfig {
            rng_seed: self.seed_for(SeedUse::TrainingSet),
            ..self.training_set.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.seed_for(SeedUse::Training),
            ..self.train.clone()
        }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.cvcnn.checkpoint.clone().unwrap_or_else(|| self.out.join("model"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.canonical().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.canonical().unwrap(), text);
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\nestimator = \"ground-truth\"\n[ulm]\nfit_fraction = 0.5\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.estimator, EstimatorKind::GroundTruth);
        assert_eq!(cfg.ulm.fit_fraction, 0.5);
        assert_eq!(cfg.ulm.pixel, 0.5);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(RunConfig::from_toml("sed = 1"), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        cfg.ulm.fit_fraction = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!("nope".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn desk_defaults_match_the_small_system() {
        let cfg = RunConfig::default();
        let (x, z) = cfg.fov();
        let lam = cfg.wavelength();
        assert!(((x.1 - x.0) / lam - 32.0).abs() < 1e-9);
        assert!(((z.1 - z.0) / lam - 32.0).abs() < 1e-9);
        assert_eq!(cfg.probe_geometry().unwrap().num_elements, 16);
        assert_eq!(cfg.transmit_scheme().unwrap().num_angles(), 3);
        let paper = cfg.paper_scale();
        paper.validate().unwrap();
        assert_eq!(paper.probe_geometry().unwrap().num_elements, 128);
        assert_eq!(paper.transmit_scheme().unwrap().num_angles(), 11);
    }

    #[test]
    fn sub_seeds_differ() {
        let cfg = RunConfig::default();
        let all = [
            SeedUse::Phantom,
            SeedUse::Aberration,
            SeedUse::Noise,
            SeedUse::TrainingSet,
            SeedUse::Training,
            SeedUse::ModelInit,
        ];
        let seeds: std::collections::BTreeSet<u64> = all.iter().map(|&w| cfg.seed_for(w)).collect();
        assert_eq!(seeds.len(), all.len());
    }
}
