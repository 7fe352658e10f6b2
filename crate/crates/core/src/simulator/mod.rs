//! Pulse-summation channel-data simulator for point scatterers.
//!
//! Each scatterer contributes a Hann-windowed `pulse_cycles`-cycle sinusoid at
//! its round-trip arrival time on every receive channel. RF is synthesized at
//! `rf_oversampling · fc` and demodulated to 100 %-bandwidth IQ.

mod phantom;

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use phantom::{make_flow_phantom, FlowPhantomConfig, ScattererTimeline, Vessel};

use crate::aberration::{aberrate_transmit, AberrationFunction};
use crate::error::{Error, Result};
use crate::geometry::{das_delay_unchecked, ProbeGeometry, TransmitScheme};
use crate::iq::{demodulate_iq, ChannelIQ, RfData};
use crate::tensor::{RealTensor, C64};
use crate::ulmt;

/// Cosine of the widest accepted angle off the element normal (60°).
const DIRECTIVITY_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scatterer {
    pub x: f64,
    pub z: f64,
    pub reflectivity: C64,
}

impl Scatterer {
    pub fn new(x: f64, z: f64, reflectivity: C64) -> Self {
        Self { x, z, reflectivity }
    }

    pub fn unit(x: f64, z: f64) -> Self {
        Self::new(x, z, C64::new(1.0, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    /// Every transmit element, scatterer and receive element triple.
    Exact,
    /// Ideal plane wave on transmit, element-wise receive.
    Fast,
}

impl std::str::FromStr for SimMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SimMode::Exact),
            "fast" => Ok(SimMode::Fast),
            other => Err(Error::Config(format!("unknown simulation mode `{other}`"))),
        }
    }
}

/// Time span `[start, end]` of the synthesized record, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordWindow {
    pub start: f64,
    pub end: f64,
}

impl RecordWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::Domain(format!("empty record window [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    /// A window covering every echo from the box `x_range × z_range`, with an
    /// extra `margin` seconds on both sides.
    pub fn covering(
        probe: &ProbeGeometry,
        scheme: &TransmitScheme,
        x_range: (f64, f64),
        z_range: (f64, f64),
        margin: f64,
    ) -> Self {
        let c = probe.sound_speed;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let steps = 16;
        for &theta in &scheme.angles {
            for ix in 0..=steps {
                let x = x_range.0 + (x_range.1 - x_range.0) * ix as f64 / steps as f64;
                for iz in 0..=steps {
                    let z = z_range.0 + (z_range.1 - z_range.0) * iz as f64 / steps as f64;
                    for n in [0, probe.num_elements - 1] {
                        let t = das_delay_unchecked(x, z.max(1e-9), theta, probe.element_x(n), c);
                        lo = lo.min(t);
                        hi = hi.max(t);
                    }
                    let t = das_delay_unchecked(x, z.max(1e-9), theta, x.clamp(probe.element_x(0), probe.element_x(probe.num_elements - 1)), c);
                    lo = lo.min(t);
                }
            }
        }
        let pulse = scheme.pulse_duration(probe.center_frequency);
        Self {
            start: lo - pulse - margin,
            end: hi + pulse + margin,
        }
    }
}

/// A configured simulator for one probe, scheme and aberrator.
#[derive(Debug, Clone)]
pub struct FrameSimulator {
    pub probe: ProbeGeometry,
    pub scheme: TransmitScheme,
    pub aberration: Option<AberrationFunction>,
    pub mode: SimMode,
    pub window: RecordWindow,
    /// RF sample rate as a multiple of fc.
    pub rf_oversampling: usize,
}

impl FrameSimulator {
    pub fn new(
        probe: ProbeGeometry,
        scheme: TransmitScheme,
        aberration: Option<AberrationFunction>,
        mode: SimMode,
        window: RecordWindow,
    ) -> Result<Self> {
        probe.validate()?;
        scheme.validate()?;
        if scheme.num_elements() != probe.num_elements {
            return Err(Error::Shape("transmit scheme and probe element counts differ".into()));
        }
        if let Some(ab) = &aberration {
            if ab.len() != probe.num_elements {
                return Err(Error::Shape(format!(
                    "aberration has {} elements, probe has {}",
                    ab.len(),
                    probe.num_elements
                )));
            }
        }
        Ok(Self {
            probe,
            scheme,
            aberration,
            mode,
            window,
            rf_oversampling: 8,
        })
    }

    fn rf_rate(&self) -> f64 {
        self.rf_oversampling as f64 * self.probe.center_frequency
    }

    fn rf_len(&self) -> usize {
        ((self.window.end - self.window.start) * self.rf_rate()).ceil() as usize + 1
    }

    /// Noiseless RF record `[angles × time × elements]`.
    pub fn simulate_rf(&self, scatterers: &[Scatterer]) -> Result<RfData> {
        for (i, s) in scatterers.iter().enumerate() {
            if !(s.z > 0.0) || !s.x.is_finite() {
                return Err(Error::Domain(format!("scatterer {i} must lie at z > 0")));
            }
            if !(s.reflectivity.re.is_finite() && s.reflectivity.im.is_finite()) {
                return Err(Error::NonFinite(format!("reflectivity of scatterer {i}")));
            }
        }
        let ne = self.probe.num_elements;
        let nt = self.rf_len();
        let na = self.scheme.num_angles();
        let tx_scheme = match (&self.aberration, self.mode) {
            (Some(ab), SimMode::Exact) => aberrate_transmit(&self.scheme, ab)?,
            _ => self.scheme.clone(),
        };
        let (rx_amp, rx_delay) = match &self.aberration {
            Some(ab) => (ab.amplitudes(), ab.delays()),
            None => (vec![1.0; ne], vec![0.0; ne]),
        };
        let per_angle: Vec<Vec<f64>> = (0..na)
            .into_par_iter()
            .map(|a| {
                let mut buf = vec![0.0; nt * ne];
                let theta = self.scheme.angles[a];
                match self.mode {
                    SimMode::Fast => self.fast_angle(&mut buf, scatterers, theta, &rx_amp, &rx_delay),
                    SimMode::Exact => {
                        self.exact_angle(&mut buf, scatterers, theta, &tx_scheme, &rx_amp, &rx_delay)
                    }
                }
                buf
            })
            .collect();
        let mut values = Vec::with_capacity(na * nt * ne);
        for buf in per_angle {
            values.extend(buf);
        }
        Ok(RfData {
            data: RealTensor::from_vec(&[na, nt, ne], values)?,
            sample_rate: self.rf_rate(),
            t0: self.window.start,
        })
    }

    fn element_geometry(&self, s: &Scatterer) -> (Vec<f64>, Vec<f64>) {
        let ne = self.probe.num_elements;
        let mut dist = Vec::with_capacity(ne);
        let mut dir = Vec::with_capacity(ne);
        for n in 0..ne {
            let dx = s.x - self.probe.element_x(n);
            let r = (dx * dx + s.z * s.z).sqrt();
            let cos = s.z / r;
            dist.push(r);
            dir.push(if cos >= DIRECTIVITY_CUTOFF { cos } else { 0.0 });
        }
        (dist, dir)
    }

    fn fast_angle(&self, buf: &mut [f64], scatterers: &[Scatterer], theta: f64, amp: &[f64], delay: &[f64]) {
        let c = self.probe.sound_speed;
        let (st, ct) = theta.sin_cos();
        for s in scatterers {
            let (dist, dir) = self.element_geometry(s);
            let tx = (s.z * ct + s.x * st) / c;
            for n in 0..self.probe.num_elements {
                let w = amp[n] * dir[n];
                if w == 0.0 {
                    continue;
                }
                let t = tx + dist[n] / c + delay[n];
                self.add_pulse(buf, n, t, s.reflectivity * w);
            }
        }
    }

    fn exact_angle(
        &self,
        buf: &mut [f64],
        scatterers: &[Scatterer],
        theta: f64,
        tx: &TransmitScheme,
        amp: &[f64],
        delay: &[f64],
    ) {
        let c = self.probe.sound_speed;
        let ne = self.probe.num_elements;
        let st = theta.sin();
        let fire: Vec<f64> = (0..ne)
            .map(|e| self.probe.element_x(e) * st / c + tx.delay_offsets[e])
            .collect();
        let half = 0.5 * self.scheme.pulse_duration(self.probe.center_frequency);
        for s in scatterers {
            let (dist, dir) = self.element_geometry(s);
            for et in 0..ne {
                let wt = tx.apodization[et] * dir[et];
                if wt == 0.0 {
                    continue;
                }
                let t_tx = fire[et] + dist[et] / c;
                for er in 0..ne {
                    let w = wt * dir[er] * amp[er];
                    if w == 0.0 {
                        continue;
                    }
                    let t = t_tx + dist[er] / c + delay[er];
                    if t + half < self.window.start || t - half > self.window.end {
                        continue;
                    }
                    self.add_pulse(buf, er, t, s.reflectivity * w);
                }
            }
        }
    }

    /// Adds `Re{g · exp(iω u)} · cos²(π u / T)` centered at `t` to channel `n`.
    #[inline]
    fn add_pulse(&self, buf: &mut [f64], n: usize, t: f64, g: C64) {
        let fs = self.rf_rate();
        let ne = self.probe.num_elements;
        let nt = buf.len() / ne;
        let dur = self.scheme.pulse_duration(self.probe.center_frequency);
        let half = 0.5 * dur;
        let omega = self.probe.omega();
        let j0 = (((t - half) - self.window.start) * fs).ceil().max(0.0) as usize;
        let j1 = ((((t + half) - self.window.start) * fs).floor()).min(nt as f64 - 1.0);
        if j1 < 0.0 {
            return;
        }
        for j in j0..=(j1 as usize) {
            let u = self.window.start + j as f64 / fs - t;
            let env = (PI * u / dur).cos();
            let (sn, cs) = (omega * u).sin_cos();
            buf[j * ne + n] += env * env * (g.re * cs - g.im * sn);
        }
    }

    /// Noiseless IQ for a scatterer set.
    pub fn simulate_clean(&self, scatterers: &[Scatterer]) -> Result<ChannelIQ> {
        demodulate_iq(&self.simulate_rf(scatterers)?, &self.probe)
    }

    pub fn simulate(&self, scatterers: &[Scatterer], noise_fraction: f64, rng_seed: u64) -> Result<ChannelIQ> {
        let mut iq = self.simulate_clean(scatterers)?;
        add_noise(&mut iq, noise_fraction, rng_seed);
        Ok(iq)
    }
}

/// Adds circular complex Gaussian noise with standard deviation
/// `fraction × RMS(iq)`.
pub fn add_noise(iq: &mut ChannelIQ, fraction: f64, rng_seed: u64) {
    if fraction <= 0.0 || iq.data.is_empty() {
        return;
    }
    let rms = (iq.data.norm_sqr() / iq.data.len() as f64).sqrt();
    if rms == 0.0 {
        return;
    }
    let sigma = fraction * rms / 2f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for v in iq.data.values_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += C64::new(re * sigma, im * sigma);
    }
}

/// One frame of channel data under the given aberrator.
#[allow(clippy::too_many_arguments)]
pub fn simulate_frame(
    scatterers: &[Scatterer],
    probe: &ProbeGeometry,
    scheme: &TransmitScheme,
    ab: Option<&AberrationFunction>,
    mode: SimMode,
    window: RecordWindow,
    noise_fraction: f64,
    rng_seed: u64,
) -> Result<ChannelIQ> {
    FrameSimulator::new(probe.clone(), scheme.clone(), ab.cloned(), mode, window)?
        .simulate(scatterers, noise_fraction, rng_seed)
}

/// Per-frame noise seed derived from a sequence seed.
pub fn frame_seed(seed: u64, frame: usize) -> u64 {
    seed ^ (frame as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Channel data for every frame of a timeline.
///
/// Static speckle is simulated once and shared; noise is drawn per frame.
pub fn simulate_sequence(
    timeline: &ScattererTimeline,
    sim: &FrameSimulator,
    noise_fraction: f64,
    rng_seed: u64,
) -> Result<Vec<ChannelIQ>> {
    let speckle = sim.simulate_clean(&timeline.speckle)?;
    timeline
        .bubbles
        .par_iter()
        .enumerate()
        .map(|(f, bubbles)| {
            let mut iq = sim.simulate_clean(bubbles)?;
            iq.add_assign(&speckle)?;
            add_noise(&mut iq, noise_fraction, frame_seed(rng_seed, f));
            Ok(iq)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct RecordMeta {
    sample_rate: f64,
    t0: f64,
}

/// Writes `frame_%05d.ulmt`, `record.json`, `ground_truth.csv` and `aberration.ulmt`.
pub fn write_sequence(
    dir: impl AsRef<Path>,
    frames: &[ChannelIQ],
    timeline: &ScattererTimeline,
    ab: Option<&AberrationFunction>,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (f, iq) in frames.iter().enumerate() {
        ulmt::write_complex(dir.join(format!("frame_{f:05}.ulmt")), &iq.data, false)?;
    }
    if let Some(first) = frames.first() {
        let meta = RecordMeta {
            sample_rate: first.sample_rate,
            t0: first.t0,
        };
        let p = dir.join("record.json");
        std::fs::write(&p, serde_json::to_string_pretty(&meta).unwrap()).map_err(|e| Error::io(&p, e))?;
    }
    timeline.write_ground_truth(dir.join("ground_truth.csv"))?;
    if let Some(ab) = ab {
        ab.write_ulmt(dir.join("aberration.ulmt"))?;
    }
    Ok(())
}

/// Reads the frames written by [`write_sequence`].
pub fn read_frames(dir: impl AsRef<Path>) -> Result<Vec<ChannelIQ>> {
    let dir = dir.as_ref();
    let p = dir.join("record.json");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let meta: RecordMeta = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let mut frames = Vec::new();
    for f in 0.. {
        let path = dir.join(format!("frame_{f:05}.ulmt"));
        if !path.exists() {
            break;
        }
        let data = ulmt::read(&path)?.into_complex()?;
        frames.push(ChannelIQ::new(data, meta.sample_rate, meta.t0)?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim(mode: SimMode, ab: Option<AberrationFunction>) -> FrameSimulator {
        let probe = ProbeGeometry::desk();
        let scheme = TransmitScheme::desk(16);
        let window = RecordWindow::new(0.0, 10e-6).unwrap();
        FrameSimulator::new(probe, scheme, ab, mode, window).unwrap()
    }

    #[test]
    fn empty_scene_is_zero() {
        let iq = sim(SimMode::Exact, None).simulate(&[], 0.0, 1).unwrap();
        assert!(iq.data.values().iter().all(|v| *v == C64::new(0.0, 0.0)));
    }

    #[test]
    fn superposition_holds() {
        let s = sim(SimMode::Exact, None);
        let a = [Scatterer::unit(0.0, 3e-3)];
        let b = [Scatterer::new(4e-4, 2.5e-3, C64::new(0.3, -0.7))];
        let mut sum = s.simulate_clean(&a).unwrap();
        sum.add_assign(&s.simulate_clean(&b).unwrap()).unwrap();
        let both = s.simulate_clean(&[a[0], b[0]]).unwrap();
        assert!(both.data.rel_error(&sum.data) < 1e-12);
    }

    #[test]
    fn envelope_peak_matches_arrival_time() {
        let probe = ProbeGeometry::desk();
        let s = FrameSimulator::new(
            probe.clone(),
            TransmitScheme::new(vec![0.0], 3, 16).unwrap(),
            None,
            SimMode::Fast,
            RecordWindow::new(0.0, 10e-6).unwrap(),
        )
        .unwrap();
        let z = 5e-3;
        let iq = s.simulate_clean(&[Scatterer::unit(0.0, z)]).unwrap();
        let dt = 1.0 / iq.sample_rate;
        for n in 0..16 {
            let xn = probe.element_x(n);
            let expect = (z + (z * z + xn * xn).sqrt()) / probe.sound_speed;
            let ch = iq.channel(0, n);
            let k = (0..ch.len())
                .max_by(|&a, &b| ch[a].norm().total_cmp(&ch[b].norm()))
                .unwrap();
            assert!((iq.time_of(k as f64) - expect).abs() <= dt, "element {n}");
        }
    }

    #[test]
    fn exact_mode_matches_fast_mode_at_broadside() {
        let mk = |mode| {
            FrameSimulator::new(
                ProbeGeometry::desk(),
                TransmitScheme::new(vec![0.0], 3, 16).unwrap(),
                None,
                mode,
                RecordWindow::new(8e-6, 16e-6).unwrap(),
            )
            .unwrap()
        };
        let sc = [Scatterer::unit(0.0, 9e-3)];
        let a = mk(SimMode::Exact).simulate_clean(&sc).unwrap();
        let b = mk(SimMode::Fast).simulate_clean(&sc).unwrap();
        let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
        for (x, y) in a.data.values().iter().zip(b.data.values()) {
            ab += x.norm() * y.norm();
            aa += x.norm_sqr();
            bb += y.norm_sqr();
        }
        assert!(ab / (aa * bb).sqrt() >= 0.99);
    }

    #[test]
    fn energy_scales_with_reflectivity_squared() {
        let s = sim(SimMode::Fast, None);
        let energy = |r: C64| s.simulate_clean(&[Scatterer::new(1e-4, 3e-3, r)]).unwrap().data.norm_sqr();
        let e1 = energy(C64::new(1.0, 0.0));
        for k in [3.0, -2.0, 0.25] {
            let ek = energy(C64::new(k, 0.0));
            assert!((ek / e1 - k * k).abs() / (k * k) < 1e-6);
        }
        // A phase rotation only moves the residual mixing image.
        let ei = energy(C64::new(0.0, 3.0));
        assert!((ei / e1 - 9.0).abs() / 9.0 < 1e-2);
    }

    #[test]
    fn rejects_scatterers_above_the_probe() {
        assert!(sim(SimMode::Fast, None).simulate(&[Scatterer::unit(0.0, -1e-3)], 0.0, 0).is_err());
        assert!("bogus".parse::<SimMode>().is_err());
    }

    #[test]
    fn noise_is_seeded() {
        let s = sim(SimMode::Fast, None);
        let sc = [Scatterer::unit(0.0, 3e-3)];
        let a = s.simulate(&sc, 0.05, 7).unwrap();
        let b = s.simulate(&sc, 0.05, 7).unwrap();
        let c = s.simulate(&sc, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
