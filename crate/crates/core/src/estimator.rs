//! Cross-correlation delay estimation across elements of a realigned patch.

use serde::{Deserialize, Serialize};

use crate::aberration::{remove_piston, AberrationFunction};
use crate::beamform::{realign_step, RealignedPatch};
use crate::error::{Error, Result};
use crate::geometry::ProbeGeometry;
use crate::interp::cubic_sample;
use crate::tensor::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceEstimatorConfig {
    /// Lag-grid refinement of the correlation peak.
    pub upsample_factor: usize,
    /// Local-regression window as a fraction of the aperture.
    pub smoothing_span: f64,
    /// Largest lag searched, in realignment samples.
    pub max_lag: usize,
    /// Robust reweighting passes of the local regression.
    pub robust_iterations: usize,
}

impl Default for CoherenceEstimatorConfig {
    fn default() -> Self {
        Self {
            upsample_factor: 16,
            smoothing_span: 0.15,
            max_lag: 3,
            robust_iterations: 5,
        }
    }
}

impl CoherenceEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.upsample_factor == 0 {
            return Err(Error::Config("upsample factor must be at least 1".into()));
        }
        if !(self.smoothing_span > 0.0 && self.smoothing_span <= 1.0) {
            return Err(Error::Config("smoothing span must lie in (0, 1]".into()));
        }
        if self.max_lag == 0 {
            return Err(Error::Config("max lag must be at least 1".into()));
        }
        Ok(())
    }
}

/// Full estimator output.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceEstimate {
    pub function: AberrationFunction,
    /// Piston-free per-element delays in seconds.
    pub delays: Vec<f64>,
    /// Elements whose channel carried no energy; their delay is interpolated.
    pub flagged: Vec<usize>,
}

/// Carrier phase advance per realignment sample (`ω / 4fc`).
pub const CARRIER_PER_SAMPLE: f64 = std::f64::consts::FRAC_PI_2;

/// Lag (in samples) maximizing the overlap-normalized correlation
/// `Re Σ_k b(k + l) · conj(a(k))` over `|l| ≤ max_lag`.
///
/// The correlation sequence is brought to baseband by removing the
/// `carrier` phase per lag, refined `upsample` times by cubic interpolation,
/// and remodulated before taking the real part.
pub fn xcorr_peak_lag(a: &[C64], b: &[C64], max_lag: usize, upsample: usize, carrier: f64) -> f64 {
    let n = a.len() as isize;
    let ml = max_lag as isize;
    // One guard lag on each side keeps the interpolation kernel off the ends.
    let r: Vec<C64> = (-ml - 1..=ml + 1)
        .map(|l| {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                let j = k + l;
                if j >= 0 && j < n {
                    acc += b[j as usize] * a[k as usize].conj();
                }
            }
            acc / (n - l.abs()).max(1) as f64 * C64::from_polar(1.0, -carrier * l as f64)
        })
        .collect();
    let steps = 2 * max_lag * upsample;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for s in 0..=steps {
        let u = s as f64 / upsample as f64;
        let lag = u - ml as f64;
        let v = (cubic_sample(&r, 1, r.len(), u + 1.0) * C64::from_polar(1.0, carrier * lag)).re;
        let tol = if best.0.is_finite() { 1e-12 * best.0.abs() } else { 0.0 };
        // Prefer the smallest |lag| among equal maxima.
        if v > best.0 + tol || (v >= best.0 - tol && lag.abs() < f64::abs(best.1)) {
            best = (v, lag);
        }
    }
    best.1
}

/// Robust locally linear regression (tricube distance weights, bisquare
/// residual weights) of `y` over `x`, with prior weights `w`.
pub fn lowess(x: &[f64], y: &[f64], w: &[f64], span: f64, iterations: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let valid = w.iter().filter(|v| **v > 0.0).count();
    let q = ((span * n as f64).ceil() as usize).max(3).min(valid.max(1));
    let mut robust = vec![1.0; n];
    let mut fit = vec![0.0; n];
    for it in 0..=iterations {
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| w[j] > 0.0).map(|j| ((x[j] - x[i]).abs(), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let h = d[q - 1].0.max(1e-12) * 1.000001;
            let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(dist, j) in d.iter().take_while(|(dist, _)| *dist < h) {
                let t = dist / h;
                let wt = w[j] * robust[j] * (1.0 - t * t * t).powi(3);
                sw += wt;
                sx += wt * x[j];
                sy += wt * y[j];
                sxx += wt * x[j] * x[j];
                sxy += wt * x[j] * y[j];
            }
            fit[i] = if sw <= 0.0 {
                // Every neighbour was rejected as an outlier: fall back to the
                // nearest observed value.
                y[d[0].1]
            } else {
                let mx = sx / sw;
                let my = sy / sw;
                let vxx = sxx / sw - mx * mx;
                if vxx.abs() < 1e-12 * (1.0 + mx * mx) {
                    my
                } else {
                    my + (sxy / sw - mx * my) / vxx * (x[i] - mx)
                }
            };
        }
        if it == iterations {
            break;
        }
        let mut res: Vec<f64> = (0..n).filter(|&j| w[j] > 0.0).map(|j| (y[j] - fit[j]).abs()).collect();
        res.sort_by(f64::total_cmp);
        let mut scale = res[res.len() / 2];
        if scale <= 1e-15 {
            // Most points fit exactly; scale by the mean residual instead.
            scale = res.iter().sum::<f64>() / res.len() as f64;
            if scale <= 1e-15 {
                break;
            }
        }
        let s = 6.0 * scale;
        for j in 0..n {
            let u = (y[j] - fit[j]) / s;
            robust[j] = if u.abs() < 1.0 { (1.0 - u * u).powi(2) } else { 0.0 };
        }
    }
    fit
}

/// Per-element delay profile in samples from one time×element slice, before
/// smoothing. Element 0 (or the first live element) is the reference.
pub fn accumulated_delays(rows: &[Vec<C64>], live: &[bool], max_lag: usize, upsample: usize) -> Vec<f64> {
    let ne = live.len();
    let column = |n: usize| -> Vec<C64> { rows.iter().map(|r| r[n]).collect() };
    let mut out = vec![0.0; ne];
    let mut prev: Option<usize> = None;
    let mut acc = 0.0;
    for n in 0..ne {
        if !live[n] {
            continue;
        }
        if let Some(p) = prev {
            acc += xcorr_peak_lag(&column(p), &column(n), max_lag * (n - p), upsample, CARRIER_PER_SAMPLE);
        }
        out[n] = acc;
        prev = Some(n);
    }
    out
}

/// Coherence-based aberration estimate with diagnostics.
pub fn estimate_coherence_detailed(
    patch: &RealignedPatch,
    probe: &ProbeGeometry,
    cfg: &CoherenceEstimatorConfig,
) -> Result<CoherenceEstimate> {
    cfg.validate()?;
    let ne = patch.num_elements();
    if ne != probe.num_elements {
        return Err(Error::Shape(format!("patch has {ne} elements, probe has {}", probe.num_elements)));
    }
    let (na, nf, nt) = (patch.num_angles(), patch.num_frames(), patch.num_times());
    let energy: Vec<f64> = (0..ne)
        .map(|n| {
            let mut e = 0.0;
            for a in 0..na {
                for f in 0..nf {
                    for k in 0..nt {
                        e += patch.at(a, f, k, n).norm_sqr();
                    }
                }
            }
            e
        })
        .collect();
    let emax = energy.iter().cloned().fold(0.0, f64::max);
    if emax == 0.0 {
        return Err(Error::Domain("patch carries no energy".into()));
    }
    let live: Vec<bool> = energy.iter().map(|e| *e > emax * 1e-20).collect();
    if live.iter().filter(|l| **l).count() < 2 {
        return Err(Error::Domain("need at least two live elements".into()));
    }
    let flagged: Vec<usize> = (0..ne).filter(|&n| !live[n]).collect();
    let weights: Vec<f64> = live.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let xs: Vec<f64> = (0..ne).map(|n| n as f64).collect();
    let mut mean = vec![0.0; ne];
    for a in 0..na {
        for f in 0..nf {
            let rows: Vec<Vec<C64>> = (0..nt).map(|k| patch.row(a, f, k).to_vec()).collect();
            let raw = accumulated_delays(&rows, &live, cfg.max_lag, cfg.upsample_factor);
            let smooth = lowess(&xs, &raw, &weights, cfg.smoothing_span, cfg.robust_iterations);
            for (m, s) in mean.iter_mut().zip(smooth) {
                *m += s;
            }
        }
    }
    let step = realign_step(probe);
    let count = (na * nf) as f64;
    let mut delays: Vec<f64> = mean.iter().map(|m| m / count * step).collect();
    let piston = delays.iter().sum::<f64>() / ne as f64;
    delays.iter_mut().for_each(|d| *d -= piston);
    let function = AberrationFunction::from_delays(&delays, probe.center_frequency)?;
    let phases = remove_piston(&function.phases());
    let function = AberrationFunction::from_amp_phase(&vec![1.0; ne], &phases, probe.center_frequency)?;
    Ok(CoherenceEstimate { function, delays, flagged })
}

pub fn estimate_coherence_based(
    patch: &RealignedPatch,
    probe: &ProbeGeometry,
    cfg: &CoherenceEstimatorConfig,
) -> Result<AberrationFunction> {
    Ok(estimate_coherence_detailed(patch, probe, cfg)?.function)
}

/// Complex mean per element, renormalized to unit amplitude, piston removed.
pub fn average_track_estimates(estimates: &[AberrationFunction]) -> Result<AberrationFunction> {
    let first = estimates.first().ok_or_else(|| Error::Domain("no estimates to average".into()))?;
    let ne = first.len();
    if estimates.iter().any(|e| e.len() != ne) {
        return Err(Error::Shape("estimates differ in element count".into()));
    }
    let phases: Vec<f64> = (0..ne)
        .map(|n| {
            let s: C64 = estimates.iter().map(|e| e.values()[n]).sum();
            if s.norm() > 0.0 {
                s.arg()
            } else {
                0.0
            }
        })
        .collect();
    AberrationFunction::from_amp_phase(&vec![1.0; ne], &remove_piston(&phases), first.center_frequency())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ComplexTensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FC: f64 = 15.625e6;

    /// Hann-enveloped tone at a quarter of the sample rate, delayed by `d` samples.
    fn pulse(k: f64, d: f64) -> C64 {
        let u = k - 8.0 - d;
        let env = if u.abs() < 6.0 { (PI * u / 12.0).cos().powi(2) } else { 0.0 };
        C64::from_polar(env, PI / 2.0 * u)
    }

    fn ramp_patch(per_element: f64, ne: usize) -> RealignedPatch {
        let nt = 17;
        let mut v = Vec::with_capacity(nt * ne);
        for k in 0..nt {
            for n in 0..ne {
                let d = per_element * n as f64;
                v.push(C64::from_polar(1.0, PI / 2.0 * (k as f64 - d)));
            }
        }
        RealignedPatch::new(ComplexTensor::from_vec(&[1, 1, nt, ne], v).unwrap(), 0, vec![(0.0, 1e-3)]).unwrap()
    }

    #[test]
    fn accumulation_reproduces_a_ramp() {
        for per in [0.5, 1.0, -0.5, -1.0, 1.5, 0.25] {
            let p = ramp_patch(per, 16);
            let rows: Vec<Vec<C64>> = (0..17).map(|k| p.row(0, 0, k).to_vec()).collect();
            let raw = accumulated_delays(&rows, &[true; 16], 3, 16);
            for (n, d) in raw.iter().enumerate() {
                assert!((d - per * n as f64).abs() < 1e-12, "{per}: {d} at {n}");
            }
        }
    }

    #[test]
    fn xcorr_finds_pulse_delay() {
        let a: Vec<C64> = (0..17).map(|k| pulse(k as f64, 0.0)).collect();
        let b: Vec<C64> = (0..17).map(|k| pulse(k as f64, 1.25)).collect();
        let l = xcorr_peak_lag(&a, &b, 3, 16, CARRIER_PER_SAMPLE);
        assert!((l - 1.25).abs() <= 1.0 / 16.0 + 1e-12, "lag {l}");
    }

    #[test]
    fn lowess_reproduces_lines_and_rejects_outliers() {
        let x: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let mut y: Vec<f64> = x.iter().map(|v| 0.3 * v - 1.0).collect();
        let w = vec![1.0; 20];
        let fit = lowess(&x, &y, &w, 0.3, 5);
        for (a, b) in fit.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
        y[7] += 10.0;
        let fit = lowess(&x, &y, &w, 0.3, 5);
        assert!((fit[7] - (0.3 * 7.0 - 1.0)).abs() < 1e-6);
    }

    fn delayed_patch(delays: &[f64], k_scale: C64) -> RealignedPatch {
        let (nt, ne) = (17, delays.len());
        let mut v = Vec::with_capacity(2 * nt * ne);
        for _f in 0..2 {
            for k in 0..nt {
                for d in delays {
                    v.push(pulse(k as f64, *d) * k_scale);
                }
            }
        }
        RealignedPatch::new(ComplexTensor::from_vec(&[1, 2, nt, ne], v).unwrap(), 0, vec![(0.0, 1e-3); 2]).unwrap()
    }

    #[test]
    fn smooth_delays_are_recovered_and_piston_free() {
        let probe = ProbeGeometry::desk();
        let samples: Vec<f64> = (0..16).map(|n| 0.8 * (n as f64 / 5.0).sin()).collect();
        let est = estimate_coherence_detailed(&delayed_patch(&samples, C64::new(1.0, 0.0)), &probe, &Default::default()).unwrap();
        let step = realign_step(&probe);
        let mean = samples.iter().sum::<f64>() / 16.0;
        for (d, s) in est.delays.iter().zip(&samples) {
            assert!((d / step - (s - mean)).abs() < 0.1);
        }
        let mphase = est.function.phases().iter().sum::<f64>() / 16.0;
        assert!(mphase.abs() < 1e-9);
        assert!(est.flagged.is_empty());
    }

    #[test]
    fn global_complex_scaling_is_ignored() {
        let probe = ProbeGeometry::desk();
        let d: Vec<f64> = (0..16).map(|n| 0.3 * ((n * 7) % 5) as f64 - 0.6).collect();
        let a = estimate_coherence_based(&delayed_patch(&d, C64::new(1.0, 0.0)), &probe, &Default::default()).unwrap();
        let b = estimate_coherence_based(&delayed_patch(&d, C64::new(-2.0, 3.5)), &probe, &Default::default()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn dead_channel_is_flagged_and_interpolated() {
        let probe = ProbeGeometry::desk();
        let d: Vec<f64> = (0..16).map(|n| 0.05 * n as f64).collect();
        let mut p = delayed_patch(&d, C64::new(1.0, 0.0));
        let dims = p.data.dims().to_vec();
        for (i, v) in p.data.values_mut().iter_mut().enumerate() {
            if i % dims[3] == 6 {
                *v = C64::new(0.0, 0.0);
            }
        }
        let est = estimate_coherence_detailed(&p, &probe, &Default::default()).unwrap();
        assert_eq!(est.flagged, vec![6]);
        let step = realign_step(&probe);
        let mean = d.iter().sum::<f64>() / 16.0;
        assert!((est.delays[6] / step - (d[6] - mean)).abs() < 0.1);
    }

    #[test]
    fn averaging_properties() {
        let a = AberrationFunction::from_amp_phase(&[1.0; 4], &[0.4, -0.2, 0.9, -0.6], FC).unwrap();
        let single = average_track_estimates(std::slice::from_ref(&a)).unwrap();
        for (u, v) in single.phases().iter().zip(remove_piston(&a.phases())) {
            assert!((u - v).abs() < 1e-12);
        }
        let sym = average_track_estimates(&[a.clone(), a.conj()]).unwrap();
        assert!(sym.phases().iter().all(|p| p.abs() < 1e-12));
        assert!(average_track_estimates(&[]).is_err());
    }

    #[test]
    fn averaging_more_estimates_reduces_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth: Vec<f64> = remove_piston(&(0..8).map(|n| 0.5 * (n as f64 * 0.7).sin()).collect::<Vec<_>>());
        let mut err = [0.0; 3];
        for _ in 0..100 {
            for (slot, count) in [1usize, 4, 16].iter().enumerate() {
                let ests: Vec<AberrationFunction> = (0..*count)
                    .map(|_| {
                        let p: Vec<f64> = truth.iter().map(|t| t + 0.4 * (rng.random::<f64>() - 0.5) * 2.0).collect();
                        AberrationFunction::from_amp_phase(&[1.0; 8], &p, FC).unwrap()
                    })
                    .collect();
                let avg = average_track_estimates(&ests).unwrap();
                err[slot] += avg
                    .phases()
                    .iter()
                    .zip(&truth)
                    .map(|(a, t)| crate::aberration::wrap_phase(a - t).powi(2))
                    .sum::<f64>();
            }
        }
        assert!(err[0] > err[1] && err[1] > err[2]);
    }
}
