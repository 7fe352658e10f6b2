//! File-backed pipeline stages shared by the command-line tool.
//!
//! Every stage reads its inputs from and writes its outputs to the run
//! directory, so any stage can be repeated in isolation.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::{generate_aberration, AberrationConfig, AberrationFunction};
use crate::beamform::{
    das_beamform, das_beamform_with, make_correction_profile, realign_hyperbola, BeamformedImage, CorrectionProfile,
    ImageGrid, RealignedPatch,
};
use crate::cvcnn::{self, build_model, simulate_training_set, CvCnnModel, Sample, TrainHistory, TrainState};
use crate::error::{Error, Result};
use crate::estimator::estimate_coherence_based;
use crate::iq::ChannelIQ;
use crate::metrics::{self, FrcResult, MetricRow, HALF_BIT_SNR, HALF_BIT_SNR_TOTAL};
use crate::simulator::{
    make_flow_phantom, read_frames, simulate_sequence, write_sequence, FrameSimulator, RecordWindow, Scatterer, SimMode,
};
use crate::tensor::{ComplexTensor, C64};
use crate::ulm::{
    accumulate_density, detect_microbubbles, interpolate_aberration_map, link_tracks, saturation_curve,
    svd_clutter_filter, svd_filter_channels, write_tracks_csv, AberrationMap, DensityMap, Detection, LinkConfig,
    PsfTemplate,
    Track, TrackPoint,
};
use crate::ulmt;

pub use config::{
    CvcnnConfig, EstimatorKind, MetricsConfig, PhantomConfig, ProbeConfig, RunConfig, SchemeConfig, SeedUse, UlmConfig,
};

/// Directory layout of one run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn sim(&self) -> PathBuf {
        self.root.join("sim")
    }

    pub fn beamform(&self, corrected: bool) -> PathBuf {
        self.root.join(if corrected { "beamform_corrected" } else { "beamform" })
    }

    pub fn ulm(&self, corrected: bool) -> PathBuf {
        self.root.join(if corrected { "ulm_after" } else { "ulm_before" })
    }

    pub fn estimate(&self) -> PathBuf {
        self.root.join("estimate")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn train_set(&self) -> PathBuf {
        self.root.join("dataset").join("train")
    }

    pub fn val_set(&self) -> PathBuf {
        self.root.join("dataset").join("val")
    }

    pub fn infer(&self) -> PathBuf {
        self.root.join("infer")
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- simulate

/// Phantom sequence written to `sim/`.
#[derive(Debug, Clone)]
pub struct SimulatedSequence {
    pub frames: Vec<ChannelIQ>,
    pub aberration: AberrationFunction,
}

pub fn true_aberration(cfg: &RunConfig) -> Result<AberrationFunction> {
    let ab = AberrationConfig {
        rng_seed: cfg.seed_for(SeedUse::Aberration),
        ..cfg.aberration.clone()
    };
    generate_aberration(&ab, &cfg.probe_geometry()?)
}

fn record_window(cfg: &RunConfig) -> Result<RecordWindow> {
    let (x, z) = cfg.fov();
    let probe = cfg.probe_geometry()?;
    let margin = 4.0 / probe.center_frequency;
    Ok(RecordWindow::covering(&probe, &cfg.transmit_scheme()?, x, z, margin))
}

pub fn simulate_stage(cfg: &RunConfig) -> Result<SimulatedSequence> {
    let probe = cfg.probe_geometry()?;
    let scheme = cfg.transmit_scheme()?;
    let timeline = make_flow_phantom(&cfg.flow_phantom()?)?;
    let aberration = true_aberration(cfg)?;
    let sim = FrameSimulator::new(probe, scheme, Some(aberration.clone()), cfg.phantom.mode, record_window(cfg)?)?;
    let frames = simulate_sequence(&timeline, &sim, cfg.phantom.noise_fraction, cfg.seed_for(SeedUse::Noise))?;
    write_sequence(Layout::new(&cfg.out).sim(), &frames, &timeline, Some(&aberration))?;
    log::info!("simulated {} frames", frames.len());
    Ok(SimulatedSequence { frames, aberration })
}

pub fn read_simulation(cfg: &RunConfig) -> Result<SimulatedSequence> {
    let dir = Layout::new(&cfg.out).sim();
    let frames = read_frames(&dir)?;
    if frames.is_empty() {
        return Err(Error::Domain(format!("no frames in {}", dir.display())));
    }
    let aberration = AberrationFunction::read_ulmt(dir.join("aberration.ulmt"), cfg.probe.center_frequency)?;
    Ok(SimulatedSequence { frames, aberration })
}

/// Training patches and targets, split 4:1 into `dataset/train` and `dataset/val`.
pub fn simulate_training_stage(cfg: &RunConfig) -> Result<(usize, usize)> {
    let probe = cfg.probe_geometry()?;
    let scheme = cfg.transmit_scheme()?;
    let set = simulate_training_set(&cfg.training_set_config(), &probe, &scheme)?;
    let n_val = set.len() / 5;
    let n_train = set.len() - n_val;
    let layout = Layout::new(&cfg.out);
    for (dir, range) in [(layout.train_set(), 0..n_train), (layout.val_set(), n_train..set.len())] {
        mkdir(&dir)?;
        for (k, i) in range.enumerate() {
            set[i].0.write_ulmt(dir.join(format!("patch_{k:05}.ulmt")))?;
            set[i].1.write_ulmt(dir.join(format!("target_{k:05}.ulmt")))?;
        }
    }
    log::info!("wrote {n_train} training and {n_val} validation patches");
    Ok((n_train, n_val))
}

fn numbered(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    (0..)
        .map(|k| dir.join(format!("{prefix}_{k:05}.ulmt")))
        .take_while(|p| p.exists())
        .collect()
}

/// Patches (and targets when present) stored by [`simulate_training_stage`].
pub fn read_patch_dir(dir: &Path, center_frequency: f64) -> Result<Vec<(RealignedPatch, Option<AberrationFunction>)>> {
    numbered(dir, "patch")
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let patch = RealignedPatch::read_ulmt(&p)?;
            let t = dir.join(format!("target_{k:05}.ulmt"));
            let target = if t.exists() { Some(AberrationFunction::read_ulmt(&t, center_frequency)?) } else { None };
            Ok((patch, target))
        })
        .collect()
}

// ---------------------------------------------------------------- beamform

#[derive(Debug, Serialize, Deserialize)]
struct StackMeta {
    grid: ImageGrid,
    frames: usize,
}

pub fn write_image_stack(dir: &Path, images: &[BeamformedImage]) -> Result<()> {
    let first = images.first().ok_or_else(|| Error::Domain("no images to write".into()))?;
    mkdir(dir)?;
    let g = first.grid;
    let values: Vec<C64> = images.iter().flat_map(|im| im.pixels.values().iter().copied()).collect();
    ulmt::write_complex(dir.join("images.ulmt"), &ComplexTensor::from_vec(&[images.len(), g.nz, g.nx], values)?, false)?;
    write_json(&dir.join("grid.json"), &StackMeta { grid: g, frames: images.len() })
}

pub fn read_image_stack(dir: &Path) -> Result<Vec<BeamformedImage>> {
    let meta: StackMeta = read_json(&dir.join("grid.json"))?;
    let t = ulmt::read(dir.join("images.ulmt"))?.into_complex()?;
    let g = meta.grid;
    if t.dims() != [meta.frames, g.nz, g.nx] {
        return Err(Error::Format(format!("image stack in {} does not match its grid", dir.display())));
    }
    t.values()
        .chunks(g.len())
        .map(|c| BeamformedImage::new(g, ComplexTensor::from_vec(&[g.nz, g.nx], c.to_vec())?))
        .collect()
}

/// Per-pixel correction profiles sampled from an aberration map.
pub fn correction_profiles(map: &AberrationMap, grid: &ImageGrid) -> Vec<CorrectionProfile> {
    (0..grid.nz)
        .flat_map(|iz| (0..grid.nx).map(move |ix| (iz, ix)))
        .map(|(iz, ix)| make_correction_profile(&map.at(grid.x(ix), grid.z(iz)), false))
        .collect()
}

/// Beamforms every frame, with the estimated map applied when present.
pub fn beamform_frames(cfg: &RunConfig, frames: &[ChannelIQ], map: Option<&AberrationMap>) -> Result<Vec<BeamformedImage>> {
    let probe = cfg.probe_geometry()?;
    let scheme = cfg.transmit_scheme()?;
    let grid = cfg.image_grid()?;
    match map {
        None => frames.iter().map(|iq| das_beamform(iq, &grid, &probe, &scheme, None)).collect(),
        Some(map) => {
            if map.num_elements() != probe.num_elements {
                return Err(Error::Shape("aberration map and probe element counts differ".into()));
            }
            let profiles = correction_profiles(map, &grid);
            let lookup = |x: f64, z: f64| {
                let (u, v) = grid.to_pixel(x, z);
                let k = v.round() as usize * grid.nx + u.round() as usize;
                profiles.get(k).cloned()
            };
            frames.iter().map(|iq| das_beamform_with(iq, &grid, &probe, &scheme, lookup)).collect()
        }
    }
}

pub fn beamform_stage(cfg: &RunConfig, corrected: bool) -> Result<Vec<BeamformedImage>> {
    let layout = Layout::new(&cfg.out);
    let sim = read_simulation(cfg)?;
    let map = if corrected { read_estimate_map(cfg)? } else { None };
    let images = beamform_frames(cfg, &sim.frames, map.as_ref())?;
    write_image_stack(&layout.beamform(corrected), &images)?;
    Ok(images)
}

// ---------------------------------------------------------------- ULM

/// Template from one isolated scatterer at the FOV centre, imaged by the
/// aberration-free system on the pipeline grid.
pub fn psf_template(cfg: &RunConfig) -> Result<PsfTemplate> {
    let probe = cfg.probe_geometry()?;
    let scheme = cfg.transmit_scheme()?;
    let grid = cfg.image_grid()?;
    let (x, z) = cfg.fov();
    let (cx, cz) = ((x.0 + x.1) / 2.0, (z.0 + z.1) / 2.0);
    let sim = FrameSimulator::new(probe.clone(), scheme.clone(), None, SimMode::Exact, record_window(cfg)?)?;
    let iq = sim.simulate_clean(&[Scatterer::unit(cx, cz)])?;
    let [nz, nx] = cfg.ulm.psf_size;
    // A pixel sits exactly on the scatterer so the template carries no offset.
    let (hz, hx) = (nz / 2, nx / 2);
    let local = ImageGrid::new(cx - hx as f64 * grid.dx, cz - hz as f64 * grid.dz, grid.dx, grid.dz, nx, nz)?;
    let img = das_beamform(&iq, &local, &probe, &scheme, None)?;
    PsfTemplate::new(nz, nx, img.pixels.into_values())
}

#[derive(Debug, Clone)]
pub struct UlmOutput {
    pub tracks: Vec<Track>,
    pub density: DensityMap,
    pub detections: usize,
}

pub fn link_config(cfg: &RunConfig) -> Result<LinkConfig> {
    Ok(LinkConfig {
        max_link_dist: cfg.ulm.max_link_dist,
        pixel_size: cfg.image_grid()?.dx,
        min_track_len: cfg.ulm.min_track_len,
        frame_rate: cfg.phantom.frame_rate,
    })
}

/// Clutter filter, detection, tracking and density rendering.
pub fn localize(cfg: &RunConfig, images: &[BeamformedImage]) -> Result<UlmOutput> {
    let filtered = svd_clutter_filter(images, cfg.ulm.svd_cutoff)?;
    let psf = psf_template(cfg)?;
    let peak = filtered
        .iter()
        .flat_map(|im| im.pixels.values().iter().map(|v| v.norm()))
        .fold(0.0, f64::max);
    let floor = peak * 10f64.powf(cfg.ulm.intensity_floor_db / 20.0);
    let radius = cfg.ulm.sidelobe_radius * cfg.wavelength();
    let ratio = 10f64.powf(cfg.ulm.sidelobe_db / 20.0);
    let detections: Vec<_> = filtered
        .par_iter()
        .map(|im| {
            let g = im.grid;
            let found = detect_microbubbles(im, &psf, cfg.ulm.corr_threshold)?;
            let mut bright: Vec<(Detection, f64)> = found
                .into_iter()
                .filter_map(|d| {
                    let (u, v) = g.to_pixel(d.x, d.z);
                    let (iz, ix) = (v.round() as usize, u.round() as usize);
                    let a = if iz < g.nz && ix < g.nx { im.at(iz, ix).norm() } else { 0.0 };
                    (a >= floor).then_some((d, a))
                })
                .collect();
            bright.sort_by(|a, b| b.1.total_cmp(&a.1));
            let mut kept: Vec<(Detection, f64)> = Vec::with_capacity(bright.len());
            for (d, a) in bright {
                let shadowed = kept
                    .iter()
                    .any(|(k, ka)| (k.x - d.x).hypot(k.z - d.z) < radius && *ka >= a * ratio);
                if !shadowed {
                    kept.push((d, a));
                }
            }
            // Restore raster order so results do not depend on intensity ties.
            kept.sort_by(|a, b| a.0.z.total_cmp(&b.0.z).then(a.0.x.total_cmp(&b.0.x)));
            Ok(kept.into_iter().map(|(d, _)| d).collect::<Vec<_>>())
        })
        .collect::<Result<_>>()?;
    let count = detections.iter().map(Vec::len).sum();
    let tracks = link_tracks(&detections, &link_config(cfg)?)?;
    let density = accumulate_density(&tracks, &cfg.image_grid()?, cfg.ulm.density_factor, cfg.ulm.density_min_len)?;
    Ok(UlmOutput {
        tracks,
        density,
        detections: count,
    })
}

pub fn write_ulm(dir: &Path, cfg: &RunConfig, out: &UlmOutput) -> Result<()> {
    mkdir(dir)?;
    write_tracks_csv(dir.join("tracks.csv"), &out.tracks)?;
    out.density.write_ulmt(dir.join("density.ulmt"))?;
    let curve = saturation_curve(&out.tracks, &cfg.image_grid()?, cfg.ulm.density_factor)?;
    let pts: Vec<(f64, f64)> = curve.iter().map(|&(a, b)| (a as f64, b as f64)).collect();
    metrics::write_curve_csv(dir.join("saturation.csv"), ("tracks", "illuminated_pixels"), &pts)
}

pub fn ulm_stage(cfg: &RunConfig, corrected: bool) -> Result<UlmOutput> {
    let layout = Layout::new(&cfg.out);
    let images = read_image_stack(&layout.beamform(corrected))?;
    let out = localize(cfg, &images)?;
    write_ulm(&layout.ulm(corrected), cfg, &out)?;
    log::info!("{} detections, {} tracks", out.detections, out.tracks.len());
    Ok(out)
}

/// Tracks written by [`write_tracks_csv`].
pub fn read_tracks_csv(path: &Path, frame_rate: f64) -> Result<Vec<Track>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut groups: BTreeMap<usize, Vec<TrackPoint>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let bad = || Error::Format(format!("{}:{}: malformed track row", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let id: usize = f[0].parse().map_err(|_| bad())?;
        let point = TrackPoint {
            frame: f[1].parse().map_err(|_| bad())?,
            x: f[2].parse().map_err(|_| bad())?,
            z: f[3].parse().map_err(|_| bad())?,
        };
        groups.entry(id).or_default().push(point);
    }
    Ok(groups.into_iter().map(|(id, pts)| Track::new(id, pts, frame_rate)).collect())
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEstimate {
    pub track_id: usize,
    pub position: (f64, f64),
    pub function: AberrationFunction,
    pub auc_before: f64,
    pub auc_after: f64,
    pub phase_rmse: f64,
}

/// Tracks long enough to realign, latest `fit_fraction` of them by start frame.
pub fn fit_tracks<'a>(cfg: &RunConfig, tracks: &'a [Track]) -> Vec<&'a Track> {
    let mut eligible: Vec<&Track> = tracks.iter().filter(|t| t.len() >= cfg.ulm.patch_frames).collect();
    eligible.sort_by_key(|t| (t.points[0].frame, t.id));
    let keep = ((eligible.len() as f64) * cfg.ulm.fit_fraction).ceil() as usize;
    eligible.split_off(eligible.len() - keep.min(eligible.len()))
}

enum Estimator<'a> {
    Coherence,
    Network(CvCnnModel),
    Truth(&'a AberrationFunction),
    Identity,
}

impl Estimator<'_> {
    fn estimate(&self, cfg: &RunConfig, patch: &RealignedPatch) -> Result<AberrationFunction> {
        let probe = cfg.probe_geometry()?;
        match self {
            Self::Coherence => estimate_coherence_based(patch, &probe, &cfg.coherence),
            Self::Network(m) => cvcnn::infer(m, patch, probe.center_frequency),
            Self::Truth(t) => Ok(t.piston_removed()),
            Self::Identity => Ok(AberrationFunction::identity(probe.num_elements, probe.center_frequency)),
        }
    }
}

pub fn load_network(cfg: &RunConfig) -> Result<CvCnnModel> {
    let dir = cfg.checkpoint_dir();
    let model = CvCnnModel::load(&dir)?;
    let a = &model.arch;
    let probe = cfg.probe_geometry()?;
    if a.elements != probe.num_elements || a.angles != cfg.scheme.num_angles {
        return Err(Error::Shape(format!(
            "checkpoint {} expects {} angles and {} elements",
            dir.display(),
            a.angles,
            a.elements
        )));
    }
    Ok(model)
}

/// Per-track estimates and the interpolated map; the map is absent for the
/// identity estimator.
pub fn estimate_tracks(
    cfg: &RunConfig,
    frames: &[ChannelIQ],
    tracks: &[Track],
    truth: &AberrationFunction,
) -> Result<(Vec<TrackEstimate>, Option<AberrationMap>)> {
    let probe = cfg.probe_geometry()?;
    let scheme = cfg.transmit_scheme()?;
    let (mut nf, mut nt) = (cfg.ulm.patch_frames, cfg.ulm.patch_times);
    let est = match cfg.estimator {
        EstimatorKind::Coherence => Estimator::Coherence,
        EstimatorKind::Cvcnn => {
            let m = load_network(cfg)?;
            (nf, nt) = (m.arch.frames, m.arch.times);
            Estimator::Network(m)
        }
        EstimatorKind::GroundTruth => Estimator::Truth(truth),
        EstimatorKind::None => Estimator::Identity,
    };
    let chosen: Vec<&Track> = fit_tracks(cfg, tracks).into_iter().filter(|t| t.len() >= nf).collect();
    if chosen.is_empty() {
        return Err(Error::Domain(format!("no track spans the {nf} frames needed for realignment")));
    }
    let filtered = svd_filter_channels(frames, cfg.ulm.svd_cutoff)?;
    let truth = truth.piston_removed();
    let estimates: Vec<TrackEstimate> = chosen
        .par_iter()
        .map(|t| {
            let patch = realign_hyperbola(&filtered, t, nf, nt, &probe, &scheme)?;
            let window = cfg.metrics.coherence_window.unwrap_or(nt).min(nt);
            let function = est.estimate(cfg, &patch)?;
            Ok(TrackEstimate {
                track_id: t.id,
                position: t.mean_position,
                auc_before: metrics::spatial_coherence(&patch, window)?.auc,
                auc_after: metrics::spatial_coherence(&patch.phase_corrected(&function)?, window)?.auc,
                phase_rmse: metrics::phase_rmse(&function, &truth)?,
                function,
            })
        })
        .collect::<Result<_>>()?;
    let map = if cfg.estimator == EstimatorKind::None {
        None
    } else {
        let samples: Vec<((f64, f64), AberrationFunction)> =
            estimates.iter().map(|e| (e.position, e.function.clone())).collect();
        Some(interpolate_aberration_map(&samples, &cfg.map_grid()?, cfg.ulm.smoothness)?.0)
    };
    Ok((estimates, map))
}

pub fn write_estimates(dir: &Path, estimates: &[TrackEstimate], map: Option<&AberrationMap>) -> Result<()> {
    mkdir(dir)?;
    let mut csv = String::from("track_id,x,z,auc_before,auc_after,phase_rmse\n");
    for e in estimates {
        csv.push_str(&format!(
            "{},{:e},{:e},{},{},{}\n",
            e.track_id, e.position.0, e.position.1, e.auc_before, e.auc_after, e.phase_rmse
        ));
    }
    let p = dir.join("estimates.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    if let Some(first) = estimates.first() {
        let ne = first.function.len();
        let vals: Vec<C64> = estimates.iter().flat_map(|e| e.function.values().iter().copied()).collect();
        ulmt::write_complex(dir.join("functions.ulmt"), &ComplexTensor::from_vec(&[estimates.len(), ne], vals)?, false)?;
    }
    let map_path = dir.join("aberration_map.ulmt");
    match map {
        Some(m) => {
            m.write_ulmt(&map_path)?;
            write_json(&dir.join("map_grid.json"), &m.grid)?;
        }
        None if map_path.exists() => {
            std::fs::remove_file(&map_path).map_err(|e| Error::io(&map_path, e))?;
        }
        None => {}
    }
    Ok(())
}

pub fn read_estimate_map(cfg: &RunConfig) -> Result<Option<AberrationMap>> {
    let dir = Layout::new(&cfg.out).estimate();
    let path = dir.join("aberration_map.ulmt");
    if !path.exists() {
        return Ok(None);
    }
    let grid: ImageGrid = read_json(&dir.join("map_grid.json"))?;
    let values = ulmt::read(&path)?.into_complex()?;
    if values.ndim() != 3 || values.dims()[..2] != [grid.nz, grid.nx] {
        return Err(Error::Format("aberration map does not match its grid".into()));
    }
    Ok(Some(AberrationMap {
        grid,
        values,
        center_frequency: cfg.probe.center_frequency,
    }))
}

/// Realigns, estimates and maps from the uncorrected ULM tracks.
pub fn estimate_stage(cfg: &RunConfig) -> Result<(Vec<TrackEstimate>, Option<AberrationMap>)> {
    let layout = Layout::new(&cfg.out);
    let sim = read_simulation(cfg)?;
    let tracks = read_tracks_csv(&layout.ulm(false).join("tracks.csv"), cfg.phantom.frame_rate)?;
    let (estimates, map) = estimate_tracks(cfg, &sim.frames, &tracks, &sim.aberration)?;
    write_estimates(&layout.estimate(), &estimates, map.as_ref())?;
    Ok((estimates, map))
}

fn read_estimate_rows(path: &Path) -> Result<Vec<[f64; 3]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<f64> = l.split(',').skip(3).map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            if f.len() != 3 {
                return Err(Error::Format(format!("{}: malformed row", path.display())));
            }
            Ok([f[0], f[1], f[2]])
        })
        .collect()
}

// ---------------------------------------------------------------- train / infer

fn load_samples(dir: &Path, fc: f64) -> Result<Vec<Sample>> {
    read_patch_dir(dir, fc)?
        .into_iter()
        .enumerate()
        .map(|(k, (p, t))| {
            let t = t.ok_or_else(|| Error::Format(format!("patch {k} in {} has no target", dir.display())))?;
            Sample::new(&p, &t)
        })
        .collect()
}

fn replace_dir(tmp: &Path, dst: &Path) -> Result<()> {
    if dst.exists() {
        std::fs::remove_dir_all(dst).map_err(|e| Error::io(dst, e))?;
    }
    std::fs::rename(tmp, dst).map_err(|e| Error::io(dst, e))
}

/// Trains on `dataset/`, checkpointing after every epoch and resuming from
/// an existing checkpoint.
pub fn train_stage(cfg: &RunConfig) -> Result<TrainHistory> {
    let layout = Layout::new(&cfg.out);
    let fc = cfg.probe.center_frequency;
    let train = load_samples(&layout.train_set(), fc)?;
    let val = if layout.val_set().exists() { load_samples(&layout.val_set(), fc)? } else { Vec::new() };
    if train.is_empty() {
        return Err(Error::Domain(format!("no training patches in {}", layout.train_set().display())));
    }
    let ckpt = cfg.checkpoint_dir();
    let (mut model, state) = if ckpt.join("train_state.json").exists() {
        let m = CvCnnModel::load(&ckpt)?;
        let s = TrainState::load(&ckpt, &m)?;
        log::info!("resuming at epoch {}", s.next_epoch);
        (m, s)
    } else {
        let m = build_model(cfg.cvcnn.scale, cfg.seed_for(SeedUse::ModelInit))?;
        let s = TrainState::new(&m);
        (m, s)
    };
    let tcfg = cfg.train_config();
    let tmp = ckpt.with_extension("tmp");
    let history_path = cfg.out.join("history.csv");
    let state = cvcnn::train_resumable(&mut model, &train, &val, &tcfg, state, |m, s| {
        m.save(&tmp)?;
        s.save(&tmp)?;
        replace_dir(&tmp, &ckpt)?;
        s.history.write_csv(&history_path)
    })?;
    state.history.write_csv(&history_path)?;
    Ok(state.history)
}

/// One aberration function per patch in `input` (default `dataset/val`).
pub fn infer_stage(cfg: &RunConfig, input: Option<&Path>) -> Result<Vec<AberrationFunction>> {
    let layout = Layout::new(&cfg.out);
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| layout.val_set());
    let fc = cfg.probe.center_frequency;
    let patches = read_patch_dir(&input, fc)?;
    if patches.is_empty() {
        return Err(Error::Domain(format!("no patches in {}", input.display())));
    }
    let model = load_network(cfg)?;
    let out = layout.infer();
    mkdir(&out)?;
    let mut csv = String::from("patch,element,amplitude,phase,phase_rmse\n");
    let mut all = Vec::with_capacity(patches.len());
    for (k, (p, t)) in patches.iter().enumerate() {
        let ab = cvcnn::infer(&model, p, fc)?;
        ab.write_ulmt(out.join(format!("aberration_{k:05}.ulmt")))?;
        let rmse = match t {
            Some(t) => metrics::phase_rmse(&ab, t)?.to_string(),
            None => String::new(),
        };
        for n in 0..ab.len() {
            csv.push_str(&format!("{k},{n},{},{},{rmse}\n", ab.amplitude(n), ab.phase(n)));
        }
        all.push(ab);
    }
    let p = out.join("aberrations.csv");
    std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    Ok(all)
}

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub frc_before: Option<FrcResult>,
    pub frc_after: Option<FrcResult>,
}

impl MetricsReport {
    pub fn value(&self, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric).map(|r| r.value)
    }
}

/// Mean FRC over `frc_splits` random halvings of the tracks; `None` when a half has no density.
pub fn split_frc(cfg: &RunConfig, tracks: &[Track]) -> Result<Option<FrcResult>> {
    let grid = cfg.image_grid()?;
    let mut curves = Vec::with_capacity(cfg.metrics.frc_splits);
    for k in 0..cfg.metrics.frc_splits as u64 {
        let (a, b) = metrics::split_tracks(tracks, cfg.metrics.split_seed.wrapping_add(k));
        let da = accumulate_density(&a, &grid, cfg.ulm.density_factor, cfg.ulm.density_min_len)?;
        let db = accumulate_density(&b, &grid, cfg.ulm.density_factor, cfg.ulm.density_min_len)?;
        if da.total() == 0.0 || db.total() == 0.0 {
            return Ok(None);
        }
        curves.push(metrics::frc(&da, &db, cfg.metrics.frc_snr)?);
    }
    Ok(Some(metrics::mean_frc(&curves)?))
}

#[derive(Debug, Serialize)]
struct FrcReport<'a> {
    label: &'a str,
    resolution: Option<f64>,
    snr: f64,
    half_bit_snr: f64,
    half_bit_snr_total: f64,
    frequency: &'a [f64],
    frc: &'a [f64],
    threshold: &'a [f64],
}

/// Reads both ULM outputs and the estimates, writes `metrics/`.
pub fn metrics_stage(cfg: &RunConfig) -> Result<MetricsReport> {
    let layout = Layout::new(&cfg.out);
    let fr = cfg.phantom.frame_rate;
    let mut rows = vec![
        MetricRow::new("half_bit_snr", HALF_BIT_SNR, "ratio"),
        MetricRow::new("half_bit_snr_total", HALF_BIT_SNR_TOTAL, "ratio"),
        MetricRow::new("frc_snr", cfg.metrics.frc_snr, "ratio"),
    ];
    let out = layout.metrics();
    mkdir(&out)?;
    let mut results = [None, None];
    for (slot, corrected) in [false, true].into_iter().enumerate() {
        let dir = layout.ulm(corrected);
        let path = dir.join("tracks.csv");
        if !path.exists() {
            continue;
        }
        let label = if corrected { "after" } else { "before" };
        let tracks = read_tracks_csv(&path, fr)?;
        rows.push(MetricRow::new(format!("tracks_{label}"), tracks.len() as f64, "count"));
        let density = accumulate_density(&tracks, &cfg.image_grid()?, cfg.ulm.density_factor, cfg.ulm.density_min_len)?;
        rows.push(MetricRow::new(format!("density_total_{label}"), density.total(), "count"));
        let lit = density.counts.iter().filter(|c| **c > 0.0).count();
        rows.push(MetricRow::new(format!("illuminated_pixels_{label}"), lit as f64, "count"));
        let result = split_frc(cfg, &tracks)?;
        let res = result.as_ref().and_then(|r| r.resolution).unwrap_or(f64::NAN);
        rows.push(MetricRow::new(format!("frc_resolution_{label}"), res, "m"));
        if let Some(r) = &result {
            let pts: Vec<(f64, f64)> = r.frequency.iter().copied().zip(r.frc.iter().copied()).collect();
            metrics::write_curve_csv(out.join(format!("frc_{label}.csv")), ("frequency_per_m", "frc"), &pts)?;
            write_json(
                &out.join(format!("frc_{label}.json")),
                &FrcReport {
                    label,
                    resolution: r.resolution,
                    snr: r.snr,
                    half_bit_snr: HALF_BIT_SNR,
                    half_bit_snr_total: HALF_BIT_SNR_TOTAL,
                    frequency: &r.frequency,
                    frc: &r.frc,
                    threshold: &r.threshold,
                },
            )?;
        }
        results[slot] = result;
    }
    let est = layout.estimate().join("estimates.csv");
    if est.exists() {
        let vals = read_estimate_rows(&est)?;
        let n = vals.len().max(1) as f64;
        let mean = |k: usize| vals.iter().map(|v| v[k]).sum::<f64>() / n;
        rows.push(MetricRow::new("estimated_tracks", vals.len() as f64, "count"));
        rows.push(MetricRow::new("coherence_auc_before", mean(0), "ratio"));
        rows.push(MetricRow::new("coherence_auc_after", mean(1), "ratio"));
        rows.push(MetricRow::new("phase_rmse_mean", mean(2), "rad"));
    }
    metrics::write_metrics_csv(out.join("metrics.csv"), &rows, &cfg.hash()?)?;
    let [frc_before, frc_after] = results;
    Ok(MetricsReport {
        rows,
        frc_before,
        frc_after,
    })
}

// ---------------------------------------------------------------- pipeline

/// Full before/after chain; outputs of finished stages remain on failure.
pub fn run_pipeline(cfg: &RunConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    cfg.write_snapshot()?;
    let layout = Layout::new(&cfg.out);
    let sim = simulate_stage(cfg)?;
    let images = beamform_frames(cfg, &sim.frames, None)?;
    write_image_stack(&layout.beamform(false), &images)?;
    let before = localize(cfg, &images)?;
    write_ulm(&layout.ulm(false), cfg, &before)?;
    log::info!("uncorrected: {} detections, {} tracks", before.detections, before.tracks.len());
    let (estimates, map) = estimate_tracks(cfg, &sim.frames, &before.tracks, &sim.aberration)?;
    write_estimates(&layout.estimate(), &estimates, map.as_ref())?;
    let corrected = match &map {
        Some(m) => beamform_frames(cfg, &sim.frames, Some(m))?,
        None => images,
    };
    write_image_stack(&layout.beamform(true), &corrected)?;
    let after = localize(cfg, &corrected)?;
    write_ulm(&layout.ulm(true), cfg, &after)?;
    log::info!("corrected: {} detections, {} tracks", after.detections, after.tracks.len());
    metrics_stage(cfg)
}
