//! Near-field phase-screen aberrators: one complex gain `a(n)·exp(iωτ(n))` per element.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ProbeGeometry, TransmitScheme};
use crate::iq::{delay_iq, ChannelIQ};
use crate::tensor::{ComplexTensor, C64};
use crate::ulmt;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_phase(p: f64) -> f64 {
    let mut w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct AberrationFunction {
    values: Vec<C64>,
    center_frequency: f64,
}

impl AberrationFunction {
    /// Validates `0 < a(n) <= 1` and finiteness.
    pub fn from_values(values: Vec<C64>, center_frequency: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("aberration function needs at least one element".into()));
        }
        for (n, v) in values.iter().enumerate() {
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(Error::NonFinite(format!("aberration element {n}")));
            }
            let a = v.norm();
            if !(a > 0.0 && a <= 1.0 + 1e-12) {
                return Err(Error::Domain(format!("aberration amplitude {a} at element {n} outside (0, 1]")));
            }
        }
        if !(center_frequency > 0.0) {
            return Err(Error::Domain("center frequency must be positive".into()));
        }
        Ok(Self {
            values,
            center_frequency,
        })
    }

    pub fn from_amp_phase(amps: &[f64], phases: &[f64], center_frequency: f64) -> Result<Self> {
        if amps.len() != phases.len() {
            return Err(Error::Shape("amplitude and phase lengths differ".into()));
        }
        let values = amps
            .iter()
            .zip(phases)
            .map(|(&a, &p)| C64::from_polar(a, wrap_phase(p)))
            .collect();
        Self::from_values(values, center_frequency)
    }

    /// Clamps amplitudes into `[floor, 1]` and replaces non-finite entries by `1`.
    pub fn from_unconstrained(values: &[C64], center_frequency: f64, floor: f64) -> Result<Self> {
        let v = values
            .iter()
            .map(|z| {
                if !(z.re.is_finite() && z.im.is_finite()) || z.norm() == 0.0 {
                    C64::new(floor.max(1e-6), 0.0)
                } else {
                    C64::from_polar(z.norm().clamp(floor.max(1e-6), 1.0), z.arg())
                }
            })
            .collect();
        Self::from_values(v, center_frequency)
    }

    pub fn identity(num_elements: usize, center_frequency: f64) -> Self {
        Self {
            values: vec![C64::new(1.0, 0.0); num_elements],
            center_frequency,
        }
    }

    /// Unit-amplitude function realizing the given delays.
    pub fn from_delays(delays: &[f64], center_frequency: f64) -> Result<Self> {
        let w = 2.0 * PI * center_frequency;
        let phases: Vec<f64> = delays.iter().map(|d| w * d).collect();
        Self::from_amp_phase(&vec![1.0; delays.len()], &phases, center_frequency)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn center_frequency(&self) -> f64 {
        self.center_frequency
    }

    pub fn amplitude(&self, n: usize) -> f64 {
        self.values[n].norm()
    }

    pub fn phase(&self, n: usize) -> f64 {
        wrap_phase(self.values[n].arg())
    }

    pub fn delay(&self, n: usize) -> f64 {
        self.phase(n) / (2.0 * PI * self.center_frequency)
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.amplitude(n)).collect()
    }

    pub fn phases(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.phase(n)).collect()
    }

    pub fn delays(&self) -> Vec<f64> {
        (0..self.len()).map(|n| self.delay(n)).collect()
    }

    pub fn conj(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.conj()).collect(),
            center_frequency: self.center_frequency,
        }
    }

    /// Removes the constant phase so that the wrapped phases average to zero.
    pub fn piston_removed(&self) -> Self {
        let phases = remove_piston(&self.phases());
        Self {
            values: self
                .values
                .iter()
                .zip(&phases)
                .map(|(v, &p)| C64::from_polar(v.norm(), p))
                .collect(),
            center_frequency: self.center_frequency,
        }
    }

    pub fn to_tensor(&self) -> ComplexTensor {
        ComplexTensor::from_vec(&[self.len()], self.values.clone()).expect("finite by construction")
    }

    pub fn write_ulmt(&self, path: impl AsRef<Path>) -> Result<()> {
        ulmt::write_complex(path, &self.to_tensor(), false)
    }

    pub fn read_ulmt(path: impl AsRef<Path>, center_frequency: f64) -> Result<Self> {
        let t = ulmt::read(path)?.into_complex()?;
        if t.ndim() != 1 {
            return Err(Error::Shape(format!("aberration tensor must be 1-D, got {:?}", t.dims())));
        }
        Self::from_values(t.into_values(), center_frequency)
    }

    /// CSV rows `element,amplitude,phase_rad`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut s = String::from("element,amplitude,phase_rad\n");
        for n in 0..self.len() {
            s.push_str(&format!("{},{},{}\n", n, self.amplitude(n), self.phase(n)));
        }
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Subtracts the (circular, then arithmetic) mean so wrapped phases average to zero.
pub fn remove_piston(phases: &[f64]) -> Vec<f64> {
    if phases.is_empty() {
        return Vec::new();
    }
    let circ: C64 = phases.iter().map(|&p| C64::from_polar(1.0, p)).sum();
    let c = if circ.norm() > 0.0 { circ.arg() } else { 0.0 };
    let mut out: Vec<f64> = phases.iter().map(|&p| wrap_phase(p - c)).collect();
    for _ in 0..8 {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        if mean.abs() < 1e-15 {
            break;
        }
        let shifted: Vec<f64> = out.iter().map(|&p| p - mean).collect();
        if shifted.iter().all(|p| *p > -PI && *p <= PI) {
            out = shifted;
            break;
        }
        out = shifted.into_iter().map(wrap_phase).collect();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AberrationConfig {
    /// Peak phase excursion as a fraction of the wavelength.
    pub phase_bound: f64,
    pub amp_min: f64,
    /// Number of spline knots spread across the aperture.
    pub smoothing_points: usize,
    pub rng_seed: u64,
}

impl Default for AberrationConfig {
    fn default() -> Self {
        Self {
            phase_bound: 0.5,
            amp_min: 0.5,
            smoothing_points: 16,
            rng_seed: 0,
        }
    }
}

impl AberrationConfig {
    /// Knot density used with the 16-element desk probe.
    pub fn desk() -> Self {
        Self {
            smoothing_points: 6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.smoothing_points < 2 {
            return Err(Error::Config("smoothing_points must be at least 2".into()));
        }
        if !(self.phase_bound > 0.0 && self.phase_bound.is_finite()) {
            return Err(Error::Config("phase_bound must be positive".into()));
        }
        if !(self.amp_min > 0.0 && self.amp_min <= 1.0) {
            return Err(Error::Config("amp_min must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Natural cubic spline through `(xs[k], ys[k])`, evaluated at `at`.
pub fn natural_cubic_spline(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2 && ys.len() == n);
    // Second derivatives via the tridiagonal system with natural end conditions.
    let mut m = vec![0.0; n];
    if n > 2 {
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut upper = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            upper[i] = h[i + 1];
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
        }
    }
    at.iter()
        .map(|&x| {
            let seg = xs.windows(2).position(|w| x <= w[1]).unwrap_or(n - 2);
            let (x0, x1) = (xs[seg], xs[seg + 1]);
            let h = x1 - x0;
            let a = (x1 - x) / h;
            let b = (x - x0) / h;
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * h * h / 6.0
        })
        .collect()
}

/// Draws a random smooth aberration function.
///
/// Amplitude and phase are drawn uniformly at evenly spaced knots, joined by a
/// natural cubic spline across the element index, then clamped and wrapped.
pub fn generate_aberration(config: &AberrationConfig, probe: &ProbeGeometry) -> Result<AberrationFunction> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let k = config.smoothing_points;
    let ne = probe.num_elements;
    let last = (ne - 1) as f64;
    let knots: Vec<f64> = (0..k).map(|i| last * i as f64 / (k as f64 - 1.0)).collect();
    let amps: Vec<f64> = (0..k).map(|_| rng.random_range(config.amp_min..=1.0)).collect();
    let phases: Vec<f64> = (0..k)
        .map(|_| 2.0 * PI * rng.random_range(-config.phase_bound..=config.phase_bound))
        .collect();
    let xs: Vec<f64> = (0..ne).map(|n| n as f64).collect();
    let a = natural_cubic_spline(&knots, &amps, &xs);
    let p = natural_cubic_spline(&knots, &phases, &xs);
    let amps: Vec<f64> = a.iter().map(|v| v.clamp(config.amp_min, 1.0)).collect();
    AberrationFunction::from_amp_phase(&amps, &p, probe.center_frequency)
}

/// Scales each receive channel by `amps[n]` and delays it by `delays[n]`.
pub fn apply_element_gains(iq: &ChannelIQ, amps: &[f64], delays: &[f64], center_frequency: f64) -> Result<ChannelIQ> {
    let ne = iq.num_elements();
    if amps.len() != ne || delays.len() != ne {
        return Err(Error::Shape(format!(
            "gains for {} / {} elements applied to {ne}-element data",
            amps.len(),
            delays.len()
        )));
    }
    let mut out = iq.clone();
    for a in 0..iq.num_angles() {
        for n in 0..ne {
            let ch = iq.channel(a, n);
            let mut d = delay_iq(&ch, iq.sample_rate, delays[n], center_frequency)?;
            d.iter_mut().for_each(|v| *v *= amps[n]);
            out.set_channel(a, n, &d);
        }
    }
    Ok(out)
}

/// Applies the receive side of an aberrator to already-simulated channel data.
pub fn apply_aberration_rx(iq: &ChannelIQ, ab: &AberrationFunction, probe: &ProbeGeometry) -> Result<ChannelIQ> {
    iq.check_probe(probe)?;
    if ab.len() != probe.num_elements {
        return Err(Error::Shape(format!(
            "aberration has {} elements, probe has {}",
            ab.len(),
            probe.num_elements
        )));
    }
    apply_element_gains(iq, &ab.amplitudes(), &ab.delays(), probe.center_frequency)
}

/// Transmit-side aberration: per-element firing delays grow by `τ(n)` and weights scale by `a(n)`.
pub fn aberrate_transmit(scheme: &TransmitScheme, ab: &AberrationFunction) -> Result<TransmitScheme> {
    if ab.len() != scheme.num_elements() {
        return Err(Error::Shape(format!(
            "aberration has {} elements, transmit scheme has {}",
            ab.len(),
            scheme.num_elements()
        )));
    }
    let mut s = scheme.clone();
    for n in 0..ab.len() {
        s.delay_offsets[n] += ab.delay(n);
        s.apodization[n] *= ab.amplitude(n);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn generated_functions_respect_bounds_and_seed() {
        let probe = ProbeGeometry::paper();
        for seed in 0..20 {
            let cfg = AberrationConfig {
                rng_seed: seed,
                ..AberrationConfig::default()
            };
            let ab = generate_aberration(&cfg, &probe).unwrap();
            assert_eq!(ab.len(), 128);
            assert!(ab.amplitudes().iter().all(|a| (0.5 - 1e-12..=1.0 + 1e-12).contains(a)));
            assert!(ab.phases().iter().all(|p| p.abs() <= PI));
            let again = generate_aberration(&cfg, &probe).unwrap();
            assert_eq!(ab, again);
        }
        let bad = AberrationConfig {
            smoothing_points: 1,
            ..AberrationConfig::default()
        };
        assert!(generate_aberration(&bad, &probe).is_err());
    }

    #[test]
    fn spline_through_two_equal_knots_is_constant() {
        let xs: Vec<f64> = (0..16).map(|n| n as f64).collect();
        let v = natural_cubic_spline(&[0.0, 15.0], &[0.3, 0.3], &xs);
        assert!(v.iter().all(|y| (y - 0.3).abs() < 1e-15));
    }

    #[test]
    fn spline_interpolates_knots() {
        let xs = [0.0, 1.0, 2.5, 4.0];
        let ys = [1.0, -1.0, 0.5, 2.0];
        let v = natural_cubic_spline(&xs, &ys, &xs);
        for (a, b) in v.iter().zip(&ys) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn piston_removal_zeroes_the_mean() {
        let p = remove_piston(&[3.0, -3.0, 2.9, 3.1]);
        assert!(p.iter().sum::<f64>().abs() < 1e-12);
        let ab = AberrationFunction::from_amp_phase(&[1.0; 4], &[0.1, 0.2, 0.3, 0.4], 1e6).unwrap();
        let r = ab.piston_removed();
        assert!(r.phases().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn transmit_aberration_identity_and_shape() {
        let scheme = TransmitScheme::desk(16);
        let id = AberrationFunction::identity(16, 15.625e6);
        assert_eq!(aberrate_transmit(&scheme, &id).unwrap(), scheme);
        assert!(aberrate_transmit(&scheme, &AberrationFunction::identity(8, 1e6)).is_err());
    }
}
