//! Delay-and-sum imaging and hyperbola realignment.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aberration::AberrationFunction;
use crate::error::{Error, Result};
use crate::geometry::{das_delay_unchecked, ProbeGeometry, TransmitScheme};
use crate::iq::ChannelIQ;
use crate::tensor::{ComplexTensor, C64};
use crate::ulm::Track;
use crate::ulmt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub x0: f64,
    pub z0: f64,
    pub dx: f64,
    pub dz: f64,
    pub nx: usize,
    pub nz: usize,
}

impl ImageGrid {
    pub fn new(x0: f64, z0: f64, dx: f64, dz: f64, nx: usize, nz: usize) -> Result<Self> {
        let g = Self { x0, z0, dx, dz, nx, nz };
        g.validate()?;
        Ok(g)
    }

    /// Square pixels of side `pixel` covering `[x_min, x_max] × [z_min, z_max]`.
    pub fn spanning(x_range: (f64, f64), z_range: (f64, f64), pixel: f64) -> Result<Self> {
        if !(pixel > 0.0) {
            return Err(Error::Domain("pixel size must be positive".into()));
        }
        let nx = ((x_range.1 - x_range.0) / pixel).round().max(0.0) as usize + 1;
        let nz = ((z_range.1 - z_range.0) / pixel).round().max(0.0) as usize + 1;
        Self::new(x_range.0, z_range.0, pixel, pixel, nx, nz)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx > 0.0 && self.dz > 0.0) {
            return Err(Error::Domain("grid spacing must be positive".into()));
        }
        if !(self.z0 > 0.0) || !self.x0.is_finite() {
            return Err(Error::Domain("grid must start below the probe (z0 > 0)".into()));
        }
        if self.nx == 0 || self.nz == 0 {
            return Err(Error::Domain("grid has no pixels".into()));
        }
        Ok(())
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x0 + ix as f64 * self.dx
    }

    pub fn z(&self, iz: usize) -> f64 {
        self.z0 + iz as f64 * self.dz
    }

    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fractional pixel coordinates `(ix, iz)` of a position.
    pub fn to_pixel(&self, x: f64, z: f64) -> (f64, f64) {
        ((x - self.x0) / self.dx, (z - self.z0) / self.dz)
    }

    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (u, v) = self.to_pixel(x, z);
        u >= 0.0 && v >= 0.0 && u <= (self.nx - 1) as f64 && v <= (self.nz - 1) as f64
    }

    /// Grid with `factor`² sub-pixels per pixel, tiling the same area.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Domain("refinement factor must be at least 1".into()));
        }
        let f = factor as f64;
        let (dx, dz) = (self.dx / f, self.dz / f);
        Self::new(
            self.x0 - 0.5 * self.dx + 0.5 * dx,
            (self.z0 - 0.5 * self.dz + 0.5 * dz).max(f64::MIN_POSITIVE),
            dx,
            dz,
            self.nx * factor,
            self.nz * factor,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformedImage {
    pub grid: ImageGrid,
    /// Row-major `[nz × nx]`.
    pub pixels: ComplexTensor,
    /// Some pixel needed samples outside the recorded time range.
    pub truncated: bool,
}

impl BeamformedImage {
    pub fn new(grid: ImageGrid, pixels: ComplexTensor) -> Result<Self> {
        if pixels.dims() != [grid.nz, grid.nx] {
            return Err(Error::Shape(format!(
                "pixels {:?} do not match a {}×{} grid",
                pixels.dims(),
                grid.nz,
                grid.nx
            )));
        }
        Ok(Self { grid, pixels, truncated: false })
    }

    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            pixels: ComplexTensor::zeros(&[grid.nz, grid.nx]),
            truncated: false,
        }
    }

    #[inline]
    pub fn at(&self, iz: usize, ix: usize) -> C64 {
        self.pixels.values()[iz * self.grid.nx + ix]
    }

    pub fn envelope(&self) -> Vec<f64> {
        self.pixels.values().iter().map(|v| v.norm()).collect()
    }

    /// Position and magnitude of the brightest pixel.
    pub fn peak(&self) -> (f64, f64, f64) {
        let env = self.envelope();
        let (k, v) = env
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
        let (iz, ix) = (k / self.grid.nx, k % self.grid.nx);
        (self.grid.x(ix), self.grid.z(iz), v)
    }

    pub fn write_ulmt(&self, path: impl AsRef<Path>) -> Result<()> {
        ulmt::write_complex(path, &self.pixels, true)
    }
}

/// Receive-side delay and weight corrections plus a scalar transmit delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionProfile {
    pub rx_delays: Vec<f64>,
    pub rx_weights: Vec<f64>,
    pub tx_delay: f64,
}

impl CorrectionProfile {
    pub fn identity(num_elements: usize) -> Self {
        Self {
            rx_delays: vec![0.0; num_elements],
            rx_weights: vec![1.0; num_elements],
            tx_delay: 0.0,
        }
    }

    pub fn new(rx_delays: Vec<f64>, rx_weights: Vec<f64>, tx_delay: f64) -> Result<Self> {
        let p = Self { rx_delays, rx_weights, tx_delay };
        p.validate(p.rx_delays.len())?;
        Ok(p)
    }

    pub fn validate(&self, num_elements: usize) -> Result<()> {
        if self.rx_delays.len() != num_elements || self.rx_weights.len() != num_elements {
            return Err(Error::Shape(format!(
                "correction has {} delays and {} weights for {num_elements} elements",
                self.rx_delays.len(),
                self.rx_weights.len()
            )));
        }
        if !self.tx_delay.is_finite()
            || self.rx_delays.iter().chain(&self.rx_weights).any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("correction profile".into()));
        }
        Ok(())
    }
}

/// Receive delays `τ̂(n)`, transmit delay `mean τ̂`, and weights `1/â` clamped
/// to `[1, 2]` when `use_amplitude` is set.
pub fn make_correction_profile(estimate: &AberrationFunction, use_amplitude: bool) -> CorrectionProfile {
    let rx_delays = estimate.delays();
    let tx_delay = rx_delays.iter().sum::<f64>() / rx_delays.len().max(1) as f64;
    let rx_weights = if use_amplitude {
        estimate.amplitudes().iter().map(|a| (1.0 / a).clamp(1.0, 2.0)).collect()
    } else {
        vec![1.0; rx_delays.len()]
    };
    CorrectionProfile { rx_delays, rx_weights, tx_delay }
}

fn check_inputs(iq: &ChannelIQ, grid: &ImageGrid, probe: &ProbeGeometry, scheme: &TransmitScheme) -> Result<()> {
    grid.validate()?;
    iq.check_probe(probe)?;
    if iq.num_angles() != scheme.num_angles() || scheme.num_elements() != probe.num_elements {
        return Err(Error::Shape(format!(
            "channel data has {} angles, scheme has {}",
            iq.num_angles(),
            scheme.num_angles()
        )));
    }
    Ok(())
}

/// One pixel: coherent sum over angles and elements.
#[inline]
fn beamform_pixel(
    iq: &ChannelIQ,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
    xs: &[f64],
    x: f64,
    z: f64,
    corr: Option<&CorrectionProfile>,
    truncated: &mut bool,
) -> C64 {
    let c = probe.sound_speed;
    let omega = probe.omega();
    let (t_lo, t_hi) = (iq.t0, iq.end_time());
    let mut acc = C64::new(0.0, 0.0);
    for (a, &theta) in scheme.angles.iter().enumerate() {
        for (n, &xn) in xs.iter().enumerate() {
            let (shift, w) = match corr {
                Some(p) => (p.rx_delays[n] + p.tx_delay, p.rx_weights[n]),
                None => (0.0, 1.0),
            };
            let t = das_delay_unchecked(x, z, theta, xn, c) + shift;
            if t < t_lo || t > t_hi {
                *truncated = true;
                continue;
            }
            let (s, co) = (omega * t).sin_cos();
            acc += iq.sample(a, n, t) * C64::new(co, s) * w;
        }
    }
    acc
}

/// Delay-and-sum image with optional correction delays injected on receive.
pub fn das_beamform(
    iq: &ChannelIQ,
    grid: &ImageGrid,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
    correction: Option<&CorrectionProfile>,
) -> Result<BeamformedImage> {
    if let Some(p) = correction {
        p.validate(probe.num_elements)?;
    }
    das_beamform_with(iq, grid, probe, scheme, |_, _| correction.cloned())
}

/// Delay-and-sum image with a per-pixel correction lookup.
pub fn das_beamform_with<F>(
    iq: &ChannelIQ,
    grid: &ImageGrid,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
    correction: F,
) -> Result<BeamformedImage>
where
    F: Fn(f64, f64) -> Option<CorrectionProfile> + Sync,
{
    check_inputs(iq, grid, probe, scheme)?;
    let xs = probe.element_positions();
    let rows: Vec<(Vec<C64>, bool)> = (0..grid.nz)
        .into_par_iter()
        .map(|iz| {
            let z = grid.z(iz);
            let mut trunc = false;
            let row = (0..grid.nx)
                .map(|ix| {
                    let x = grid.x(ix);
                    let p = correction(x, z);
                    beamform_pixel(iq, probe, scheme, &xs, x, z, p.as_ref(), &mut trunc)
                })
                .collect();
            (row, trunc)
        })
        .collect();
    let truncated = rows.iter().any(|r| r.1);
    let values = rows.into_iter().flat_map(|r| r.0).collect();
    let mut img = BeamformedImage::new(*grid, ComplexTensor::from_vec(&[grid.nz, grid.nx], values)?)?;
    img.truncated = truncated;
    if truncated {
        log::warn!("beamforming grid reaches outside the recorded time range; pixels zero-filled");
    }
    Ok(img)
}

/// Channel data rephased along one microbubble's round-trip delay curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RealignedPatch {
    /// `[angles × frames × time × elements]`.
    pub data: ComplexTensor,
    pub track_ref: usize,
    pub center_positions: Vec<(f64, f64)>,
    /// Some window reached outside the record and was zero-padded.
    pub padded: bool,
}

impl RealignedPatch {
    pub fn new(data: ComplexTensor, track_ref: usize, center_positions: Vec<(f64, f64)>) -> Result<Self> {
        let d = data.dims();
        if d.len() != 4 {
            return Err(Error::Shape(format!("patch must be 4-D, got {d:?}")));
        }
        if d[2] % 2 == 0 {
            return Err(Error::Shape(format!("patch time window must be odd, got {}", d[2])));
        }
        if center_positions.len() != d[1] {
            return Err(Error::Shape("one centre position per frame required".into()));
        }
        Ok(Self { data, track_ref, center_positions, padded: false })
    }

    pub fn num_angles(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn num_times(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn num_elements(&self) -> usize {
        self.data.dims()[3]
    }

    #[inline]
    pub fn at(&self, angle: usize, frame: usize, time: usize, element: usize) -> C64 {
        let d = self.data.dims();
        self.data.values()[((angle * d[1] + frame) * d[2] + time) * d[3] + element]
    }

    /// Time row `time` of one (angle, frame) pair across elements.
    pub fn row(&self, angle: usize, frame: usize, time: usize) -> &[C64] {
        let d = self.data.dims();
        let start = ((angle * d[1] + frame) * d[2] + time) * d[3];
        &self.data.values()[start..start + d[3]]
    }

    /// Undoes the per-element phase of `ab` (a realigned row carries `e^{-iφ_n}`).
    pub fn phase_corrected(&self, ab: &AberrationFunction) -> Result<Self> {
        let ne = self.num_elements();
        if ab.len() != ne {
            return Err(Error::Shape(format!("aberration has {} elements, patch {ne}", ab.len())));
        }
        let rot: Vec<C64> = ab.phases().iter().map(|&p| C64::from_polar(1.0, p)).collect();
        let mut out = self.clone();
        for (i, v) in out.data.values_mut().iter_mut().enumerate() {
            *v *= rot[i % ne];
        }
        Ok(out)
    }

    pub fn write_ulmt(&self, path: impl AsRef<Path>) -> Result<()> {
        ulmt::write_complex(path, &self.data, false)
    }

    pub fn read_ulmt(path: impl AsRef<Path>) -> Result<Self> {
        let data = ulmt::read(path)?.into_complex()?;
        let nf = data.dims().get(1).copied().unwrap_or(0);
        Self::new(data, 0, vec![(0.0, 0.0); nf])
    }
}

/// Sampling interval of the realignment grid, `1/(4 fc)`.
pub fn realign_step(probe: &ProbeGeometry) -> f64 {
    0.25 / probe.center_frequency
}

/// Realigns the first `nf` frames of a track into an `nt`-sample window per
/// element, centred on the plane-wave round-trip time of the bubble.
pub fn realign_hyperbola(
    frames: &[ChannelIQ],
    track: &Track,
    nf: usize,
    nt: usize,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
) -> Result<RealignedPatch> {
    if track.points.len() < nf {
        return Err(Error::Domain(format!(
            "track {} has {} frames, {nf} required",
            track.id,
            track.points.len()
        )));
    }
    let pts: Vec<(usize, f64, f64)> = track.points[..nf].iter().map(|p| (p.frame, p.x, p.z)).collect();
    let mut patch = realign_points(frames, &pts, nt, probe, scheme)?;
    patch.track_ref = track.id;
    Ok(patch)
}

/// Realignment around explicit `(frame, x, z)` positions.
pub fn realign_points(
    frames: &[ChannelIQ],
    points: &[(usize, f64, f64)],
    nt: usize,
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
) -> Result<RealignedPatch> {
    if nt % 2 == 0 || nt == 0 {
        return Err(Error::Domain(format!("window length must be odd, got {nt}")));
    }
    if points.is_empty() {
        return Err(Error::Domain("no positions to realign".into()));
    }
    let ne = probe.num_elements;
    let na = scheme.num_angles();
    let nf = points.len();
    let c = probe.sound_speed;
    let omega = probe.omega();
    let dt = realign_step(probe);
    let half = (nt / 2) as f64;
    let xs = probe.element_positions();
    let mut values = vec![C64::new(0.0, 0.0); na * nf * nt * ne];
    let mut padded = false;
    for (f, &(frame, x, z)) in points.iter().enumerate() {
        let iq = frames
            .get(frame)
            .ok_or_else(|| Error::Domain(format!("track references missing frame {frame}")))?;
        iq.check_probe(probe)?;
        if iq.num_angles() != na {
            return Err(Error::Shape("channel data and scheme angle counts differ".into()));
        }
        if !(z > 0.0) {
            return Err(Error::Domain(format!("track position z = {z} is above the probe")));
        }
        let (t_lo, t_hi) = (iq.t0, iq.end_time());
        for (a, &theta) in scheme.angles.iter().enumerate() {
            for (n, &xn) in xs.iter().enumerate() {
                let tc = das_delay_unchecked(x, z, theta, xn, c);
                for k in 0..nt {
                    let t = tc + (k as f64 - half) * dt;
                    if t < t_lo || t > t_hi {
                        padded = true;
                        continue;
                    }
                    let (s, co) = (omega * t).sin_cos();
                    values[((a * nf + f) * nt + k) * ne + n] = iq.sample(a, n, t) * C64::new(co, s);
                }
            }
        }
    }
    let data = ComplexTensor::from_vec(&[na, nf, nt, ne], values)?;
    let mut patch = RealignedPatch::new(data, 0, points.iter().map(|p| (p.1, p.2)).collect())?;
    patch.padded = padded;
    Ok(patch)
}
