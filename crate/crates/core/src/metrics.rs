//! Image-quality, coherence, resolution and estimation-error metrics.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use sha2::{Digest, Sha256};

use crate::aberration::{remove_piston, wrap_phase, AberrationFunction};
use crate::beamform::{BeamformedImage, RealignedPatch};
use crate::error::{Error, Result};
use crate::tensor::C64;
use crate::ulm::{DensityMap, Track};

pub use crate::ulm::saturation_curve;

/// Default half-bit SNR per half dataset.
pub const HALF_BIT_SNR: f64 = 0.2071;
/// Total-information SNR equivalent of the half-bit criterion.
pub const HALF_BIT_SNR_TOTAL: f64 = 0.4142;

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceCurve {
    /// `R(m)` for `m = 0..Ne`.
    pub r: Vec<f64>,
    pub auc: f64,
}

/// Trapezoidal area under `r` with lag normalized to `[0, 1]`.
pub fn coherence_auc(r: &[f64]) -> f64 {
    if r.len() < 2 {
        return r.first().copied().unwrap_or(0.0);
    }
    let h = 1.0 / (r.len() - 1) as f64;
    r.windows(2).map(|w| 0.5 * (w[0] + w[1]) * h).sum()
}

/// Spatial coherence across elements over a centred `window` of time samples,
/// averaged over frames and angles.
pub fn spatial_coherence(patch: &RealignedPatch, window: usize) -> Result<CoherenceCurve> {
    let (na, nf, nt, ne) = (patch.num_angles(), patch.num_frames(), patch.num_times(), patch.num_elements());
    if window == 0 || window > nt {
        return Err(Error::Domain(format!("coherence window {window} must lie in 1..={nt}")));
    }
    let k0 = (nt - window) / 2;
    let mut acc = vec![0.0; ne];
    let mut used = 0usize;
    for a in 0..na {
        for f in 0..nf {
            let s = |n: usize, k: usize| patch.at(a, f, k0 + k, n);
            let den: f64 = (0..ne).map(|n| (0..window).map(|k| s(n, k).norm_sqr()).sum::<f64>()).sum();
            if den == 0.0 {
                continue;
            }
            used += 1;
            for (m, slot) in acc.iter_mut().enumerate() {
                let mut num = C64::new(0.0, 0.0);
                for n in 0..ne - m {
                    for k in 0..window {
                        num += s(n, k).conj() * s(n + m, k);
                    }
                }
                *slot += ne as f64 / (ne - m) as f64 * num.re / den;
            }
        }
    }
    if used == 0 {
        return Err(Error::Domain("patch carries no energy".into()));
    }
    let r: Vec<f64> = acc.iter().map(|v| v / used as f64).collect();
    let auc = coherence_auc(&r);
    Ok(CoherenceCurve { r, auc })
}

/// Rectangular region in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x: (f64, f64),
    pub z: (f64, f64),
}

impl Roi {
    pub fn new(x: (f64, f64), z: (f64, f64)) -> Self {
        Self { x, z }
    }

    fn contains(&self, x: f64, z: f64) -> bool {
        x >= self.x.0 && x <= self.x.1 && z >= self.z.0 && z <= self.z.1
    }

    fn overlaps(&self, o: &Roi) -> bool {
        self.x.0 <= o.x.1 && o.x.0 <= self.x.1 && self.z.0 <= o.z.1 && o.z.0 <= self.z.1
    }
}

fn roi_values(image: &BeamformedImage, roi: &Roi) -> Vec<f64> {
    let g = image.grid;
    let mut out = Vec::new();
    for iz in 0..g.nz {
        for ix in 0..g.nx {
            if roi.contains(g.x(ix), g.z(iz)) {
                out.push(image.at(iz, ix).norm());
            }
        }
    }
    out
}

/// `20 log10(max |signal| / RMS |background|)` in dB.
pub fn contrast_ratio(image: &BeamformedImage, signal: &Roi, background: &Roi) -> Result<f64> {
    if signal.overlaps(background) {
        return Err(Error::Domain("signal and background regions overlap".into()));
    }
    let s = roi_values(image, signal);
    let b = roi_values(image, background);
    if s.is_empty() || b.is_empty() {
        return Err(Error::Domain("region contains no pixels".into()));
    }
    let peak = s.iter().cloned().fold(0.0, f64::max);
    let rms = (b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::Domain("background region is zero".into()));
    }
    Ok(20.0 * (peak / rms).log10())
}

/// Full width at half maximum around the global peak, by linear interpolation.
pub fn fwhm(profile: &[f64], spacing: f64) -> Result<f64> {
    let (imax, vmax) = profile
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if profile.len() < 3 || !vmax.is_finite() {
        return Err(Error::Domain("profile too short".into()));
    }
    let half = 0.5 * vmax;
    let left = (0..imax).rev().find(|&i| profile[i] < half);
    let right = (imax + 1..profile.len()).find(|&i| profile[i] < half);
    let (l, r) = match (left, right) {
        (Some(l), Some(r)) => (l, r),
        _ => return Err(Error::Domain("profile does not fall below half maximum on both sides".into())),
    };
    let cross = |a: usize, b: usize| -> f64 {
        let (ya, yb) = (profile[a], profile[b]);
        a as f64 + (half - ya) / (yb - ya) * (b as f64 - a as f64)
    };
    Ok((cross(r - 1, r) - cross(l + 1, l)) * spacing)
}

/// Lateral or axial profile of `|image|` through its brightest pixel.
pub fn peak_profile(image: &BeamformedImage, lateral: bool) -> Vec<f64> {
    let g = image.grid;
    let env = image.envelope();
    let k = (0..env.len()).max_by(|&a, &b| env[a].total_cmp(&env[b])).unwrap_or(0);
    let (iz, ix) = (k / g.nx, k % g.nx);
    if lateral {
        (0..g.nx).map(|j| env[iz * g.nx + j]).collect()
    } else {
        (0..g.nz).map(|i| env[i * g.nx + ix]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrcResult {
    pub frc: Vec<f64>,
    pub threshold: Vec<f64>,
    /// Spatial frequency of each ring in cycles per meter.
    pub frequency: Vec<f64>,
    pub ring_counts: Vec<usize>,
    /// Independent coefficients per ring; a real map's spectrum is Hermitian,
    /// so mirrored pixel pairs carry one degree of freedom.
    pub independent_counts: Vec<usize>,
    /// Resolution in meters at the first crossing, if any.
    pub resolution: Option<f64>,
    pub snr: f64,
}

/// Half-bit threshold for a ring with `n` pixels at SNR `s`.
pub fn half_bit_threshold(n: usize, s: f64) -> f64 {
    let rn = (n.max(1) as f64).sqrt();
    let rs = s.sqrt();
    (s + 2.0 * rs / rn + 1.0 / rn) / (s + 2.0 * rs / rn + 1.0)
}

fn fft2(values: &[f64], nz: usize, nx: usize) -> Vec<C64> {
    let mut planner = FftPlanner::<f64>::new();
    let mut data: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
    let row = planner.plan_fft_forward(nx);
    for r in data.chunks_mut(nx) {
        row.process(r);
    }
    let col = planner.plan_fft_forward(nz);
    let mut buf = vec![C64::new(0.0, 0.0); nz];
    for ix in 0..nx {
        for iz in 0..nz {
            buf[iz] = data[iz * nx + ix];
        }
        col.process(&mut buf);
        for iz in 0..nz {
            data[iz * nx + ix] = buf[iz];
        }
    }
    data
}

/// Fourier ring correlation between two maps on the same grid.
pub fn frc(a: &DensityMap, b: &DensityMap, snr: f64) -> Result<FrcResult> {
    if a.grid != b.grid {
        return Err(Error::Shape("FRC maps must share a grid".into()));
    }
    if a.counts.iter().all(|v| *v == 0.0) || b.counts.iter().all(|v| *v == 0.0) {
        return Err(Error::Domain("FRC of an all-zero map".into()));
    }
    let g = a.grid;
    let (nz, nx) = (g.nz, g.nx);
    let fa = fft2(&a.counts, nz, nx);
    let fb = fft2(&b.counts, nz, nx);
    let n = nz.min(nx);
    let rings = n / 2 + 1;
    let mut num = vec![0.0; rings];
    let mut ea = vec![0.0; rings];
    let mut eb = vec![0.0; rings];
    let mut counts = vec![0usize; rings];
    let mut unique = vec![0usize; rings];
    let signed = |k: usize, len: usize| if k <= len / 2 { k as f64 } else { k as f64 - len as f64 };
    for iz in 0..nz {
        for ix in 0..nx {
            let rz = signed(iz, nz) / nz as f64;
            let rx = signed(ix, nx) / nx as f64;
            let r = ((rz * rz + rx * rx).sqrt() * n as f64).round() as usize;
            if r >= rings {
                continue;
            }
            let (u, v) = (fa[iz * nx + ix], fb[iz * nx + ix]);
            num[r] += (u * v.conj()).re;
            ea[r] += u.norm_sqr();
            eb[r] += v.norm_sqr();
            counts[r] += 1;
            let mirror = ((nz - iz) % nz) * nx + (nx - ix) % nx;
            if iz * nx + ix <= mirror {
                unique[r] += 1;
            }
        }
    }
    let frc: Vec<f64> = (0..rings)
        .map(|r| {
            let den = (ea[r] * eb[r]).sqrt();
            if den > 0.0 {
                num[r] / den
            } else {
                0.0
            }
        })
        .collect();
    let threshold: Vec<f64> = unique.iter().map(|&c| half_bit_threshold(c, snr)).collect();
    let pixel = g.dx.max(g.dz);
    let frequency: Vec<f64> = (0..rings).map(|r| r as f64 / (n as f64 * pixel)).collect();
    let resolution = first_crossing(&frequency, &frc, &threshold);
    Ok(FrcResult {
        frc,
        threshold,
        frequency,
        ring_counts: counts,
        independent_counts: unique,
        resolution,
        snr,
    })
}

/// Resolution at the first downward crossing of `threshold`, ignoring ring 0.
pub fn first_crossing(frequency: &[f64], frc: &[f64], threshold: &[f64]) -> Option<f64> {
    for r in 2..frc.len() {
        if frc[r - 1] >= threshold[r - 1] && frc[r] < threshold[r] {
            let d0 = frc[r - 1] - threshold[r - 1];
            let d1 = frc[r] - threshold[r];
            let t = if d0 > d1 { d0 / (d0 - d1) } else { 0.0 };
            let f = frequency[r - 1] + t.clamp(0.0, 1.0) * (frequency[r] - frequency[r - 1]);
            return Some(1.0 / f);
        }
    }
    None
}

/// Ring-wise mean of several FRC curves computed on the same grid.
pub fn mean_frc(results: &[FrcResult]) -> Result<FrcResult> {
    let first = results.first().ok_or_else(|| Error::Domain("mean of no FRC curves".into()))?;
    if results.iter().any(|r| r.frc.len() != first.frc.len()) {
        return Err(Error::Shape("FRC curves differ in ring count".into()));
    }
    let k = results.len() as f64;
    let frc: Vec<f64> = (0..first.frc.len()).map(|i| results.iter().map(|r| r.frc[i]).sum::<f64>() / k).collect();
    Ok(FrcResult {
        resolution: first_crossing(&first.frequency, &frc, &first.threshold),
        frc,
        ..first.clone()
    })
}

/// Random halves: shuffle with `seed`, then alternate even/odd positions.
pub fn split_tracks(tracks: &[Track], seed: u64) -> (Vec<Track>, Vec<Track>) {
    let mut idx: Vec<usize> = (0..tracks.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (i, k) in idx.into_iter().enumerate() {
        if i % 2 == 0 {
            a.push(tracks[k].clone());
        } else {
            b.push(tracks[k].clone());
        }
    }
    (a, b)
}

/// RMS of the wrapped difference of piston-removed phases.
pub fn phase_rmse(est: &AberrationFunction, truth: &AberrationFunction) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::Shape(format!("phase RMSE of lengths {} and {}", est.len(), truth.len())));
    }
    let a = remove_piston(&est.phases());
    let b = remove_piston(&truth.phases());
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| wrap_phase(x - y)).collect();
    // The difference itself may carry a residual piston after wrapping.
    let d = remove_piston(&d);
    Ok((d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt())
}

/// RMS of the piston-removed delay difference in seconds.
pub fn delay_rmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::Shape("delay vectors differ in length".into()));
    }
    let d: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    Ok((d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt())
}

/// Hex SHA-256 of a configuration text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub units: String,
}

impl MetricRow {
    pub fn new(metric: impl Into<String>, value: f64, units: impl Into<String>) -> Self {
        Self {
            metric: metric.into(),
            value,
            units: units.into(),
        }
    }
}

/// CSV with header `metric,value,units,config_hash`.
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow], config_hash: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("metric,value,units,config_hash\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.metric, r.value, r.units, config_hash));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Two-column CSV.
pub fn write_curve_csv(path: impl AsRef<Path>, header: (&str, &str), points: &[(f64, f64)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{},{}\n", header.0, header.1);
    for (a, b) in points {
        out.push_str(&format!("{a},{b}\n"));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::ImageGrid;
    use crate::tensor::ComplexTensor;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    const FC: f64 = 15.625e6;

    fn patch_from(mut f: impl FnMut(usize, usize) -> C64, nt: usize, ne: usize) -> RealignedPatch {
        let mut v = Vec::new();
        for k in 0..nt {
            for n in 0..ne {
                v.push(f(k, n));
            }
        }
        RealignedPatch::new(ComplexTensor::from_vec(&[1, 1, nt, ne], v).unwrap(), 0, vec![(0.0, 1e-3)]).unwrap()
    }

    #[test]
    fn identical_channels_are_fully_coherent() {
        let p = patch_from(|k, _| C64::from_polar(1.0 + k as f64, 0.3 * k as f64), 9, 12);
        let c = spatial_coherence(&p, 9).unwrap();
        assert!(c.r.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!((c.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_is_incoherent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nrm = Normal::new(0.0, 1.0).unwrap();
        let (window, ne) = (9, 32);
        let mut mean_abs = vec![0.0; ne];
        for _ in 0..100 {
            let p = patch_from(|_, _| C64::new(nrm.sample(&mut rng), nrm.sample(&mut rng)), window, ne);
            let c = spatial_coherence(&p, window).unwrap();
            for (m, r) in c.r.iter().enumerate() {
                mean_abs[m] += r.abs() / 100.0;
            }
        }
        // Lags near the aperture end average over few pairs; check the bulk.
        let bound = 3.0 / ((window * ne) as f64).sqrt();
        for m in 1..ne / 2 {
            assert!(mean_abs[m] <= bound, "lag {m}: {}", mean_abs[m]);
        }
    }

    #[test]
    fn energy_free_patch_is_an_error() {
        let p = patch_from(|_, _| C64::new(0.0, 0.0), 5, 4);
        assert!(spatial_coherence(&p, 5).is_err());
        assert!(spatial_coherence(&p, 6).is_err());
    }

    proptest! {
        #[test]
        fn coherence_ignores_global_scaling(re in -3.0f64..3.0, im in -3.0f64..3.0, seed in any::<u64>()) {
            prop_assume!(re.abs() + im.abs() > 1e-3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<C64> = (0..7 * 8).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
            let a = patch_from(|k, n| vals[k * 8 + n], 7, 8);
            let b = patch_from(|k, n| vals[k * 8 + n] * C64::new(re, im), 7, 8);
            let ca = spatial_coherence(&a, 5).unwrap();
            let cb = spatial_coherence(&b, 5).unwrap();
            for (x, y) in ca.r.iter().zip(&cb.r) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    fn image(nx: usize, nz: usize, f: impl Fn(usize, usize) -> f64) -> BeamformedImage {
        let g = ImageGrid::new(0.0, 1.0, 1.0, 1.0, nx, nz).unwrap();
        let v = (0..nz).flat_map(|iz| (0..nx).map(move |ix| (iz, ix))).map(|(iz, ix)| C64::new(f(iz, ix), 0.0)).collect();
        BeamformedImage::new(g, ComplexTensor::from_vec(&[nz, nx], v).unwrap()).unwrap()
    }

    #[test]
    fn contrast_definitions() {
        let flat = image(10, 10, |_, _| 2.0);
        let sig = Roi::new((0.0, 3.0), (1.0, 4.0));
        let bg = Roi::new((5.0, 9.0), (5.0, 10.0));
        assert!(contrast_ratio(&flat, &sig, &bg).unwrap().abs() < 1e-12);
        let spike = image(10, 10, |iz, ix| if (iz, ix) == (1, 1) { 20.0 } else { 2.0 });
        assert!((contrast_ratio(&spike, &sig, &bg).unwrap() - 20.0).abs() < 1e-12);
        let zero_bg = image(10, 10, |iz, _| if iz < 5 { 1.0 } else { 0.0 });
        assert!(contrast_ratio(&zero_bg, &sig, &Roi::new((5.0, 9.0), (7.0, 10.0))).is_err());
        assert!(contrast_ratio(&flat, &sig, &sig).is_err());
    }

    #[test]
    fn fwhm_of_triangle_and_gaussian() {
        let w = 7.0;
        let tri: Vec<f64> = (0..41).map(|i| (1.0 - ((i as f64 - 20.0).abs() / w)).max(0.0)).collect();
        assert!((fwhm(&tri, 1.0).unwrap() - w).abs() < 1e-12);
        let sigma = 3.0;
        let dx = 0.01;
        let g: Vec<f64> = (0..4001).map(|i| (-((i as f64 - 2000.0) * dx).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
        assert!((fwhm(&g, dx).unwrap() / (2.3548 * sigma) - 1.0).abs() < 0.01);
        assert!(fwhm(&[1.0, 0.9, 0.8], 1.0).is_err());
    }

    fn map(n: usize, f: impl FnMut(usize) -> f64) -> DensityMap {
        let g = ImageGrid::new(0.0, 1e-3, 1e-5, 1e-5, n, n).unwrap();
        DensityMap {
            grid: g,
            counts: (0..n * n).map(f).collect(),
        }
    }

    #[test]
    fn frc_self_correlation_is_one() {
        let m = map(32, |k| ((k * 7919) % 13) as f64);
        let r = frc(&m, &m, HALF_BIT_SNR).unwrap();
        assert!(r.frc.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(r.resolution.is_none());
    }

    #[test]
    fn threshold_asymptote() {
        let s = HALF_BIT_SNR_TOTAL;
        assert!((half_bit_threshold(1 << 40, s) - s / (s + 1.0)).abs() <= 1e-3);
        assert!((s / (s + 1.0) - 0.2929).abs() < 1e-4);
    }

    #[test]
    fn independent_noise_has_no_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut none = 0;
        for _ in 0..40 {
            let a = map(64, |_| rng.random::<f64>());
            let b = map(64, |_| rng.random::<f64>());
            let r = frc(&a, &b, HALF_BIT_SNR).unwrap();
            let beyond = r.frc.iter().zip(&r.threshold).skip(2).all(|(f, t)| f < t);
            if beyond && r.resolution.is_none() {
                none += 1;
            }
        }
        assert!(none as f64 >= 0.95 * 40.0, "{none}");
    }

    #[test]
    fn frc_is_symmetric_and_bounded_by_nyquist() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..1024).map(|_| rng.random::<f64>()).collect();
        let a = map(32, |k| base[k] + 0.3 * rng.random::<f64>());
        let b = map(32, |k| base[k] + 0.3 * ((k * 31) % 7) as f64 / 7.0);
        let ab = frc(&a, &b, HALF_BIT_SNR).unwrap();
        let ba = frc(&b, &a, HALF_BIT_SNR).unwrap();
        for (x, y) in ab.frc.iter().zip(&ba.frc) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(ab.frc.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        if let Some(res) = ab.resolution {
            assert!(res >= 2.0 * a.grid.dx - 1e-15);
        }
        assert!(frc(&map(8, |_| 0.0), &map(8, |_| 1.0), HALF_BIT_SNR).is_err());
    }

    #[test]
    fn mean_of_curves() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = map(32, |_| rng.random::<f64>());
        let b = map(32, |_| rng.random::<f64>());
        let c = map(32, |k| ((k * 13) % 5) as f64);
        let ab = frc(&a, &b, HALF_BIT_SNR).unwrap();
        let cc = frc(&c, &c, HALF_BIT_SNR).unwrap();
        assert_eq!(mean_frc(std::slice::from_ref(&ab)).unwrap(), ab);
        let m = mean_frc(&[ab.clone(), cc]).unwrap();
        for (x, y) in m.frc.iter().zip(&ab.frc) {
            assert!((x - 0.5 * (y + 1.0)).abs() < 1e-12);
        }
        assert_eq!(m.resolution, first_crossing(&m.frequency, &m.frc, &m.threshold));
        assert!(mean_frc(&[]).is_err());
    }

    #[test]
    fn phase_rmse_properties() {
        let truth = AberrationFunction::from_amp_phase(&[1.0; 5], &[0.1, -0.4, 0.9, 1.7, -2.5], FC).unwrap();
        assert!(phase_rmse(&truth, &truth).unwrap() < 1e-12);
        let rotated = AberrationFunction::from_values(truth.values().iter().map(|v| v * C64::from_polar(1.0, 2.2)).collect(), FC).unwrap();
        assert!(phase_rmse(&rotated, &truth).unwrap() < 1e-9);
        let short = AberrationFunction::identity(4, FC);
        assert!(phase_rmse(&short, &truth).is_err());
    }

    #[test]
    fn phase_rmse_of_gaussian_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let nrm = Normal::new(0.0, 0.1).unwrap();
        let truth: Vec<f64> = (0..1000).map(|_| rng.random_range(-3.0..3.0)).collect();
        let est: Vec<f64> = truth.iter().map(|t| wrap_phase(t + nrm.sample(&mut rng))).collect();
        let a = AberrationFunction::from_amp_phase(&vec![1.0; 1000], &est, FC).unwrap();
        let b = AberrationFunction::from_amp_phase(&vec![1.0; 1000], &truth, FC).unwrap();
        let e = phase_rmse(&a, &b).unwrap();
        assert!((e - 0.1).abs() <= 0.015, "{e}");
    }

    #[test]
    fn track_split_is_seeded_and_balanced() {
        let tracks: Vec<Track> = (0..9).map(|i| Track::new(i, vec![], 1.0)).collect();
        let (a, b) = split_tracks(&tracks, 4);
        assert_eq!((a.len(), b.len()), (5, 4));
        assert_eq!(split_tracks(&tracks, 4), (a, b));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
