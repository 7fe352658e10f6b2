//! RF-to-IQ demodulation and baseband delays.
//!
//! Convention: baseband is obtained by mixing with `exp(-i 2π fc t)` on the
//! absolute time axis, so `cos(2π fc (t - T)) · env(t - T)` demodulates to
//! `0.5 · env(t - T) · exp(-i 2π fc T)`. A true delay `τ` therefore maps to an
//! envelope shift together with a phase factor `exp(-i 2π fc τ)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::ProbeGeometry;
use crate::interp::cubic_sample;
use crate::tensor::{ComplexTensor, RealTensor, C64};

pub const DEMOD_TAPS: usize = 64;

/// Complex baseband channel data `[angles × time × elements]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelIQ {
    pub data: ComplexTensor,
    pub sample_rate: f64,
    /// Time of the first sample in seconds.
    pub t0: f64,
}

/// Real RF channel data `[angles × time × elements]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RfData {
    pub data: RealTensor,
    pub sample_rate: f64,
    pub t0: f64,
}

impl ChannelIQ {
    pub fn new(data: ComplexTensor, sample_rate: f64, t0: f64) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::Shape(format!(
                "channel IQ must be [angles × time × elements], got {:?}",
                data.dims()
            )));
        }
        if !(sample_rate > 0.0) || !t0.is_finite() {
            return Err(Error::Domain("sample rate must be positive and t0 finite".into()));
        }
        Ok(Self {
            data,
            sample_rate,
            t0,
        })
    }

    pub fn zeros(angles: usize, samples: usize, elements: usize, sample_rate: f64, t0: f64) -> Self {
        Self {
            data: ComplexTensor::zeros(&[angles, samples, elements]),
            sample_rate,
            t0,
        }
    }

    pub fn num_angles(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn num_samples(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn num_elements(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn check_probe(&self, probe: &ProbeGeometry) -> Result<()> {
        if self.num_elements() != probe.num_elements {
            return Err(Error::Shape(format!(
                "channel data has {} elements, probe has {}",
                self.num_elements(),
                probe.num_elements
            )));
        }
        Ok(())
    }

    /// Time of the sample at fractional index `u`.
    pub fn time_of(&self, u: f64) -> f64 {
        self.t0 + u / self.sample_rate
    }

    pub fn end_time(&self) -> f64 {
        self.time_of(self.num_samples().saturating_sub(1) as f64)
    }

    /// Baseband value of one channel at absolute time `t` (zero outside the record).
    #[inline]
    pub fn sample(&self, angle: usize, element: usize, t: f64) -> C64 {
        let ns = self.num_samples();
        let ne = self.num_elements();
        let base = angle * ns * ne + element;
        let u = (t - self.t0) * self.sample_rate;
        cubic_sample(&self.data.values()[base..], ne, ns, u)
    }

    /// Copies one channel out as a contiguous vector.
    pub fn channel(&self, angle: usize, element: usize) -> Vec<C64> {
        let ns = self.num_samples();
        let ne = self.num_elements();
        let v = self.data.values();
        (0..ns).map(|k| v[(angle * ns + k) * ne + element]).collect()
    }

    pub fn set_channel(&mut self, angle: usize, element: usize, samples: &[C64]) {
        let ns = self.num_samples();
        let ne = self.num_elements();
        let v = self.data.values_mut();
        for (k, s) in samples.iter().enumerate().take(ns) {
            v[(angle * ns + k) * ne + element] = *s;
        }
    }

    /// Element-wise sum; both operands must share the time axis.
    pub fn add_assign(&mut self, other: &ChannelIQ) -> Result<()> {
        if self.data.dims() != other.data.dims()
            || (self.t0 - other.t0).abs() > 1e-15
            || (self.sample_rate - other.sample_rate).abs() > 1e-6
        {
            return Err(Error::Shape("channel data records differ".into()));
        }
        for (a, b) in self.data.values_mut().iter_mut().zip(other.data.values()) {
            *a += *b;
        }
        Ok(())
    }
}

/// Windowed-sinc (Hamming) low-pass with cutoff at `cutoff` cycles/sample.
///
/// The taps are centered on half-integer offsets since the length is even.
pub fn lowpass_taps(cutoff: f64, taps: usize) -> Vec<f64> {
    let center = (taps as f64 - 1.0) / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|m| {
            let d = m as f64 - center;
            let x = 2.0 * cutoff * d;
            let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
            let w = 0.54 - 0.46 * (2.0 * PI * m as f64 / (taps as f64 - 1.0)).cos();
            2.0 * cutoff * sinc * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Demodulates RF channel data to 100 %-bandwidth IQ sampled at the center frequency.
pub fn demodulate_iq(rf: &RfData, probe: &ProbeGeometry) -> Result<ChannelIQ> {
    let fc = probe.center_frequency;
    let fs = rf.sample_rate;
    if rf.data.ndim() != 3 {
        return Err(Error::Shape(format!(
            "RF data must be [angles × time × elements], got {:?}",
            rf.data.dims()
        )));
    }
    if fs < 4.0 * fc * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "RF sample rate {fs} Hz is below 4·fc = {} Hz",
            4.0 * fc
        )));
    }
    let ratio = fs / fc;
    let decim = ratio.round() as usize;
    if (ratio - decim as f64).abs() > 1e-9 * ratio {
        return Err(Error::Domain(format!(
            "RF sample rate must be an integer multiple of fc, got ratio {ratio}"
        )));
    }
    if !rf.data.all_finite() || !rf.t0.is_finite() {
        return Err(Error::NonFinite("RF input".into()));
    }
    let [na, nt, ne] = [rf.data.dims()[0], rf.data.dims()[1], rf.data.dims()[2]];
    if ne != probe.num_elements {
        return Err(Error::Shape(format!(
            "RF data has {ne} elements, probe has {}",
            probe.num_elements
        )));
    }
    let taps = lowpass_taps(0.5 * fc / fs, DEMOD_TAPS);
    let half = (DEMOD_TAPS / 2) as isize;
    let n_out = nt.div_ceil(decim);
    let omega = 2.0 * PI * fc;
    // Downmix phasors depend only on the sample index.
    let mix: Vec<C64> = (0..nt)
        .map(|j| C64::from_polar(1.0, -omega * (rf.t0 + j as f64 / fs)))
        .collect();
    let mut out = ComplexTensor::zeros(&[na, n_out, ne]);
    let src = rf.data.values();
    let dst = out.values_mut();
    for a in 0..na {
        for e in 0..ne {
            for k in 0..n_out {
                let start = (k * decim) as isize - half;
                let mut acc = C64::new(0.0, 0.0);
                for (m, h) in taps.iter().enumerate() {
                    let j = start + m as isize;
                    if j < 0 || j as usize >= nt {
                        continue;
                    }
                    let j = j as usize;
                    acc += mix[j] * (h * src[(a * nt + j) * ne + e]);
                }
                dst[(a * n_out + k) * ne + e] = acc;
            }
        }
    }
    // The even-length filter centers output k at RF index k·D - 1/2.
    ChannelIQ::new(out, fc, rf.t0 - 0.5 / fs)
}

/// Applies a true delay `tau` to a baseband channel sampled at `fs`.
///
/// The envelope is resampled at `t - tau` and multiplied by `exp(-i 2π fc tau)`;
/// samples whose source falls outside the record are zero.
pub fn delay_iq(signal: &[C64], fs: f64, tau: f64, fc: f64) -> Result<Vec<C64>> {
    if !(fs > 0.0) {
        return Err(Error::Domain("sample rate must be positive".into()));
    }
    if !tau.is_finite() || !fc.is_finite() {
        return Err(Error::NonFinite("delay or center frequency".into()));
    }
    if signal.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite("IQ signal".into()));
    }
    if tau == 0.0 {
        return Ok(signal.to_vec());
    }
    let rot = C64::from_polar(1.0, -2.0 * PI * fc * tau);
    let shift = tau * fs;
    let n = signal.len();
    Ok((0..n)
        .map(|k| cubic_sample(signal, 1, n, k as f64 - shift) * rot)
        .collect())
}
