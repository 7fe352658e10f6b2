//! Point-spread-function correlation detection with sub-pixel refinement.

use crate::beamform::BeamformedImage;
use crate::error::{Error, Result};
use crate::tensor::C64;

use super::track::Detection;

/// A complex PSF patch; both extents odd so it has a centre pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfTemplate {
    pub nz: usize,
    pub nx: usize,
    pub values: Vec<C64>,
}

impl PsfTemplate {
    pub fn new(nz: usize, nx: usize, values: Vec<C64>) -> Result<Self> {
        if nz % 2 == 0 || nx % 2 == 0 || values.len() != nz * nx {
            return Err(Error::Shape(format!("template must be odd-sized, got {nz}×{nx}")));
        }
        Ok(Self { nz, nx, values })
    }

    /// Cuts an `nz × nx` template centred on the brightest pixel of `image`.
    pub fn from_image(image: &BeamformedImage, nz: usize, nx: usize) -> Result<Self> {
        let g = image.grid;
        let env = image.envelope();
        let k = (0..env.len()).max_by(|&a, &b| env[a].total_cmp(&env[b])).unwrap_or(0);
        let (cz, cx) = ((k / g.nx) as isize, (k % g.nx) as isize);
        let (hz, hx) = ((nz / 2) as isize, (nx / 2) as isize);
        let mut values = Vec::with_capacity(nz * nx);
        for dz in -hz..=hz {
            for dx in -hx..=hx {
                let (iz, ix) = (cz + dz, cx + dx);
                let v = if iz >= 0 && ix >= 0 && (iz as usize) < g.nz && (ix as usize) < g.nx {
                    image.at(iz as usize, ix as usize)
                } else {
                    C64::new(0.0, 0.0)
                };
                values.push(v);
            }
        }
        Self::new(nz, nx, values)
    }
}

/// Zero-mean normalized correlation between the envelope and the template
/// envelope, for every pixel where the template fits entirely.
pub fn correlation_map(image: &BeamformedImage, psf: &PsfTemplate) -> Result<Vec<f64>> {
    let g = image.grid;
    if psf.nz > g.nz || psf.nx > g.nx {
        return Err(Error::Shape("template larger than image".into()));
    }
    let env = image.envelope();
    let t: Vec<f64> = psf.values.iter().map(|v| v.norm()).collect();
    let tn = t.len() as f64;
    let tm = t.iter().sum::<f64>() / tn;
    let tc: Vec<f64> = t.iter().map(|v| v - tm).collect();
    let tnorm = tc.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (hz, hx) = (psf.nz / 2, psf.nx / 2);
    let mut map = vec![0.0; g.len()];
    if tnorm == 0.0 {
        return Ok(map);
    }
    for iz in hz..g.nz - hz {
        for ix in hx..g.nx - hx {
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            let mut cross = 0.0;
            for a in 0..psf.nz {
                let row = (iz + a - hz) * g.nx + ix - hx;
                for b in 0..psf.nx {
                    let w = env[row + b];
                    sum += w;
                    sum2 += w * w;
                    cross += w * tc[a * psf.nx + b];
                }
            }
            let var = sum2 - sum * sum / tn;
            if var > 0.0 {
                map[iz * g.nx + ix] = cross / (var.sqrt() * tnorm);
            }
        }
    }
    Ok(map)
}

/// Stationary point of the least-squares quadric through a 3×3 neighbourhood,
/// as an offset in pixels (clamped to ±0.5).
pub fn paraboloid_offset(n: &[[f64; 3]; 3]) -> (f64, f64) {
    // Central-difference coefficients are the exact LS fit of
    // a + b x + c z + d x² + e z² + f x z on the 3×3 stencil.
    let mut b = 0.0;
    let mut c = 0.0;
    let mut d = 0.0;
    let mut e = 0.0;
    let mut f = 0.0;
    let mut mean_row = [0.0; 3];
    let mut mean_col = [0.0; 3];
    for (i, row) in n.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (z, x) = (i as f64 - 1.0, j as f64 - 1.0);
            b += x * v / 6.0;
            c += z * v / 6.0;
            f += x * z * v / 4.0;
            mean_row[i] += v / 3.0;
            mean_col[j] += v / 3.0;
        }
    }
    d += (mean_col[0] + mean_col[2] - 2.0 * mean_col[1]) / 2.0;
    e += (mean_row[0] + mean_row[2] - 2.0 * mean_row[1]) / 2.0;
    // Gradient zero: [2d f; f 2e] [x z]^T = -[b c]^T.
    let det = 4.0 * d * e - f * f;
    if det.abs() < 1e-300 || !(d < 0.0 && e < 0.0) {
        return (0.0, 0.0);
    }
    let x = (-b * 2.0 * e + c * f) / det;
    let z = (-c * 2.0 * d + b * f) / det;
    (x.clamp(-0.5, 0.5), z.clamp(-0.5, 0.5))
}

/// Local maxima of the correlation map above `corr_threshold`.
pub fn detect_microbubbles(image: &BeamformedImage, psf: &PsfTemplate, corr_threshold: f64) -> Result<Vec<Detection>> {
    let g = image.grid;
    let map = correlation_map(image, psf)?;
    let (hz, hx) = (psf.nz / 2, psf.nx / 2);
    let mut out = Vec::new();
    let z_lo = hz.max(1);
    let x_lo = hx.max(1);
    let z_hi = (g.nz - hz).min(g.nz - 1);
    let x_hi = (g.nx - hx).min(g.nx - 1);
    for iz in z_lo..z_hi {
        for ix in x_lo..x_hi {
            let v = map[iz * g.nx + ix];
            if v < corr_threshold {
                continue;
            }
            let mut nb = [[0.0; 3]; 3];
            let mut is_max = true;
            for (a, row) in nb.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    let w = map[(iz + a - 1) * g.nx + ix + b - 1];
                    *cell = w;
                    if (a, b) != (1, 1) {
                        // Ties are broken towards the earlier pixel.
                        let earlier = a < 1 || (a == 1 && b < 1);
                        if w > v || (earlier && w == v) {
                            is_max = false;
                        }
                    }
                }
            }
            if !is_max {
                continue;
            }
            let (ox, oz) = paraboloid_offset(&nb);
            out.push(Detection {
                x: g.x0 + (ix as f64 + ox) * g.dx,
                z: g.z0 + (iz as f64 + oz) * g.dz,
                correlation: v,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::ImageGrid;
    use crate::tensor::ComplexTensor;

    fn blob(g: &ImageGrid, x: f64, z: f64, w: f64) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); g.len()];
        for iz in 0..g.nz {
            for ix in 0..g.nx {
                let r2 = (g.x(ix) - x).powi(2) + (g.z(iz) - z).powi(2);
                v[iz * g.nx + ix] = C64::from_polar((-r2 / (w * w)).exp(), 2.0 * g.z(iz));
            }
        }
        v
    }

    fn image(g: ImageGrid, v: Vec<C64>) -> BeamformedImage {
        BeamformedImage::new(g, ComplexTensor::from_vec(&[g.nz, g.nx], v).unwrap()).unwrap()
    }

    #[test]
    fn matched_template_at_node() {
        let g = ImageGrid::new(-10.0, 1.0, 1.0, 1.0, 21, 21).unwrap();
        let img = image(g, blob(&g, 0.0, 11.0, 2.0));
        let psf = PsfTemplate::from_image(&img, 9, 9).unwrap();
        let d = detect_microbubbles(&img, &psf, 0.6).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].correlation - 1.0).abs() < 1e-12);
        assert!(d[0].x.abs() <= 1e-6 && (d[0].z - 11.0).abs() <= 1e-6);
    }

    #[test]
    fn two_separated_psfs() {
        let g = ImageGrid::new(-20.0, 1.0, 1.0, 1.0, 41, 25).unwrap();
        let tmpl_img = image(g, blob(&g, 0.0, 13.0, 1.5));
        let psf = PsfTemplate::from_image(&tmpl_img, 7, 7).unwrap();
        let mut v = blob(&g, -4.3, 12.2, 1.5);
        for (a, b) in v.iter_mut().zip(blob(&g, 4.1, 13.6, 1.5)) {
            *a += b;
        }
        let d = detect_microbubbles(&image(g, v), &psf, 0.6).unwrap();
        assert_eq!(d.len(), 2);
        let mut xs: Vec<(f64, f64)> = d.iter().map(|p| (p.x, p.z)).collect();
        xs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((xs[0].0 + 4.3).abs() < 0.3 && (xs[0].1 - 12.2).abs() < 0.3);
        assert!((xs[1].0 - 4.1).abs() < 0.3 && (xs[1].1 - 13.6).abs() < 0.3);
    }

    #[test]
    fn sub_threshold_correlate_is_rejected() {
        let g = ImageGrid::new(-10.0, 1.0, 1.0, 1.0, 21, 21).unwrap();
        let psf = PsfTemplate::from_image(&image(g, blob(&g, 0.0, 11.0, 1.5)), 9, 9).unwrap();
        // Weak blob buried in deterministic clutter.
        let mut v = blob(&g, 0.0, 11.0, 1.5);
        for (k, a) in v.iter_mut().enumerate() {
            let h = ((k as u64).wrapping_mul(2654435761) % 1000) as f64 / 1000.0;
            *a = *a * 0.15 + C64::new(h, 0.0);
        }
        let img = image(g, v);
        let peak = correlation_map(&img, &psf).unwrap().into_iter().fold(f64::MIN, f64::max);
        assert!(peak < 0.6, "peak {peak}");
        assert!(detect_microbubbles(&img, &psf, 0.6).unwrap().is_empty());
    }

    #[test]
    fn paraboloid_recovers_quadric_vertex() {
        let (x0, z0) = (0.23, -0.31);
        let mut n = [[0.0; 3]; 3];
        for (i, row) in n.iter_mut().enumerate() {
            for (j, c) in row.iter_mut().enumerate() {
                let (z, x) = (i as f64 - 1.0, j as f64 - 1.0);
                *c = 1.0 - 0.3 * (x - x0).powi(2) - 0.2 * (z - z0).powi(2) + 0.05 * (x - x0) * (z - z0);
            }
        }
        let (x, z) = paraboloid_offset(&n);
        assert!((x - x0).abs() < 1e-12 && (z - z0).abs() < 1e-12);
    }
}
