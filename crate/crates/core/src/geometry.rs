//! Linear-array geometry, plane-wave transmit schemes and the delay-and-sum delay law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SOUND_SPEED: f64 = 1540.0;
pub const DEFAULT_CENTER_FREQUENCY: f64 = 15.625e6;

/// A linear array with uniformly spaced elements centered on x = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeGeometry {
    pub num_elements: usize,
    /// Element spacing in meters.
    pub pitch: f64,
    /// Center frequency in Hz.
    pub center_frequency: f64,
    /// Sound speed in m/s.
    pub sound_speed: f64,
}

impl ProbeGeometry {
    pub fn new(num_elements: usize, pitch: f64, center_frequency: f64, sound_speed: f64) -> Result<Self> {
        let p = Self {
            num_elements,
            pitch,
            center_frequency,
            sound_speed,
        };
        p.validate()?;
        Ok(p)
    }

    /// Probe with pitch equal to one wavelength.
    pub fn with_wavelength_pitch(num_elements: usize, center_frequency: f64, sound_speed: f64) -> Result<Self> {
        Self::new(num_elements, sound_speed / center_frequency, center_frequency, sound_speed)
    }

    /// 16 elements at 15.625 MHz.
    pub fn desk() -> Self {
        Self::with_wavelength_pitch(16, DEFAULT_CENTER_FREQUENCY, DEFAULT_SOUND_SPEED).unwrap()
    }

    /// 128 elements at 15.625 MHz.
    pub fn paper() -> Self {
        Self::with_wavelength_pitch(128, DEFAULT_CENTER_FREQUENCY, DEFAULT_SOUND_SPEED).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::Config("probe needs at least 2 elements".into()));
        }
        if !(self.pitch > 0.0 && self.center_frequency > 0.0 && self.sound_speed > 0.0) {
            return Err(Error::Config(
                "pitch, center frequency and sound speed must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        self.sound_speed / self.center_frequency
    }

    pub fn omega(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.center_frequency
    }

    pub fn element_x(&self, n: usize) -> f64 {
        (n as f64 - (self.num_elements as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn element_positions(&self) -> Vec<f64> {
        (0..self.num_elements).map(|n| self.element_x(n)).collect()
    }

    pub fn aperture(&self) -> f64 {
        self.pitch * (self.num_elements as f64 - 1.0)
    }
}

/// Plane-wave transmit sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitScheme {
    /// Steering angles in radians.
    pub angles: Vec<f64>,
    pub pulse_cycles: usize,
    /// Per-element transmit weights.
    pub apodization: Vec<f64>,
    /// Extra per-element firing delays (s) on top of the plane-wave law.
    pub delay_offsets: Vec<f64>,
}

impl TransmitScheme {
    pub fn new(angles: Vec<f64>, pulse_cycles: usize, num_elements: usize) -> Result<Self> {
        let s = Self {
            angles,
            pulse_cycles,
            apodization: vec![1.0; num_elements],
            delay_offsets: vec![0.0; num_elements],
        };
        s.validate()?;
        Ok(s)
    }

    /// Evenly spaced angles from `-max_deg` to `max_deg`.
    pub fn symmetric(count: usize, max_deg: f64, pulse_cycles: usize, num_elements: usize) -> Result<Self> {
        let angles = if count == 1 {
            vec![0.0]
        } else {
            (0..count)
                .map(|k| (-max_deg + 2.0 * max_deg * k as f64 / (count as f64 - 1.0)).to_radians())
                .collect()
        };
        Self::new(angles, pulse_cycles, num_elements)
    }

    /// Angles -5°, 0°, 5° and three-cycle pulses.
    pub fn desk(num_elements: usize) -> Self {
        Self::symmetric(3, 5.0, 3, num_elements).unwrap()
    }

    /// 11 angles from -5° to 5° in 1° steps.
    pub fn paper(num_elements: usize) -> Self {
        Self::symmetric(11, 5.0, 3, num_elements).unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Config("transmit scheme needs at least one angle".into()));
        }
        if self
            .angles
            .iter()
            .any(|a| !a.is_finite() || a.abs() >= std::f64::consts::FRAC_PI_2)
        {
            return Err(Error::Config("steering angles must satisfy |θ| < π/2".into()));
        }
        if self.pulse_cycles == 0 {
            return Err(Error::Config("pulse needs at least one cycle".into()));
        }
        if self.apodization.len() != self.delay_offsets.len() {
            return Err(Error::Shape("apodization and delay offsets differ in length".into()));
        }
        Ok(())
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn num_elements(&self) -> usize {
        self.apodization.len()
    }

    /// Pulse duration in seconds.
    pub fn pulse_duration(&self, center_frequency: f64) -> f64 {
        self.pulse_cycles as f64 / center_frequency
    }
}

/// Round-trip time from a steered plane wave to `(x, z)` and back to the element at `xn`.
pub fn das_delay(x: f64, z: f64, theta: f64, xn: f64, c: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("depth must be positive, got {z}")));
    }
    if !(c > 0.0) {
        return Err(Error::Domain(format!("sound speed must be positive, got {c}")));
    }
    Ok(das_delay_unchecked(x, z, theta, xn, c))
}

#[inline]
pub(crate) fn das_delay_unchecked(x: f64, z: f64, theta: f64, xn: f64, c: f64) -> f64 {
    let dx = x - xn;
    (z * theta.cos() + x * theta.sin() + (z * z + dx * dx).sqrt()) / c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_positions_are_centered_and_increasing() {
        let p = ProbeGeometry::desk();
        let xs = p.element_positions();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        assert!(xs.iter().sum::<f64>().abs() < 1e-15);
        for n in 0..p.num_elements {
            assert!((xs[n] + xs[p.num_elements - 1 - n]).abs() < 1e-18);
        }
    }

    #[test]
    fn rejects_invalid_geometry() {
        assert!(ProbeGeometry::new(1, 1e-4, 1e6, 1540.0).is_err());
        assert!(ProbeGeometry::new(8, 0.0, 1e6, 1540.0).is_err());
        assert!(TransmitScheme::new(vec![], 3, 8).is_err());
        assert!(TransmitScheme::new(vec![1.6], 3, 8).is_err());
        assert!(TransmitScheme::new(vec![0.0], 0, 8).is_err());
    }

    #[test]
    fn das_delay_domain_errors() {
        assert!(das_delay(0.0, 0.0, 0.0, 0.0, 1540.0).is_err());
        assert!(das_delay(0.0, 0.01, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn paper_scheme_has_eleven_one_degree_steps() {
        let s = TransmitScheme::paper(128);
        assert_eq!(s.num_angles(), 11);
        assert!((s.angles[1] - s.angles[0] - 1f64.to_radians()).abs() < 1e-12);
    }
}
