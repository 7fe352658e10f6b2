//! Penalized least-squares smoothing of gridded data in the DCT basis, and
//! assembly of spatially varying aberration maps.
//!
//! Minimizes `‖W^{1/2}(ŷ − y)‖² + s‖Δŷ‖²` with the Neumann discrete Laplacian,
//! diagonal in the DCT-II basis. Missing samples carry zero weight. The
//! weighted system is solved directly in that basis, which is the fixed point
//! of the usual weight-iteration scheme.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::aberration::AberrationFunction;
use crate::beamform::ImageGrid;
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, C64};
use crate::ulmt;

/// Orthonormal DCT-II matrix, `C[k][i] = α_k cos(π (i + ½) k / n)`.
pub fn dct_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|k| {
            let a = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            (0..n).map(|i| a * (PI * (i as f64 + 0.5) * k as f64 / n as f64).cos()).collect()
        })
        .collect()
}

/// Gridded smoother for one weight pattern, reusable across data fields.
pub struct DctSmoother {
    nz: usize,
    nx: usize,
    weights: Vec<f64>,
    /// Basis vectors as columns, `[pixels × modes]`.
    basis: DMatrix<f64>,
    /// Squared Laplacian eigenvalue per mode.
    lambda2: Vec<f64>,
    full: bool,
}

impl DctSmoother {
    pub fn new(nz: usize, nx: usize, weights: Vec<f64>) -> Result<Self> {
        let n = nz * nx;
        if n == 0 || weights.len() != n {
            return Err(Error::Shape(format!("{} weights for a {nz}×{nx} grid", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain("weights must be finite and non-negative".into()));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Domain("no observed samples to smooth".into()));
        }
        let cz = dct_matrix(nz);
        let cx = dct_matrix(nx);
        let basis = DMatrix::from_fn(n, n, |p, m| {
            let (iz, ix) = (p / nx, p % nx);
            let (kz, kx) = (m / nx, m % nx);
            cz[kz][iz] * cx[kx][ix]
        });
        let lambda2 = (0..n)
            .map(|m| {
                let (kz, kx) = (m / nx, m % nx);
                let l = (2.0 - 2.0 * (PI * kz as f64 / nz as f64).cos()) + (2.0 - 2.0 * (PI * kx as f64 / nx as f64).cos());
                l * l
            })
            .collect();
        let full = weights.iter().all(|w| *w == 1.0);
        Ok(Self { nz, nx, weights, basis, lambda2, full })
    }

    fn observed(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    fn system(&self, s: f64) -> Result<Cholesky<f64, Dyn>> {
        let n = self.weights.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (p, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let row = self.basis.row(p);
            for i in 0..n {
                let ri = w * row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(i, j)] += ri * row[j];
                }
            }
        }
        for m in 0..n {
            a[(m, m)] += s * self.lambda2[m];
        }
        Cholesky::new(a).ok_or_else(|| Error::Numerical("smoothing system is not positive definite".into()))
    }

    fn effective_s(&self, s: f64) -> f64 {
        if self.full {
            s
        } else {
            s.max(1e-10)
        }
    }

    /// Smoothed fields for a fixed `s`.
    pub fn smooth(&self, fields: &[Vec<f64>], s: f64) -> Result<Vec<Vec<f64>>> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("smoothness must be finite and non-negative, got {s}")));
        }
        let n = self.weights.len();
        for f in fields {
            if f.len() != n {
                return Err(Error::Shape("field does not match the grid".into()));
            }
        }
        if self.full {
            return Ok(fields
                .iter()
                .map(|y| {
                    let c = self.basis.tr_mul(&DVector::from_column_slice(y));
                    let g = DVector::from_fn(n, |m, _| c[m] / (1.0 + s * self.lambda2[m]));
                    (&self.basis * g).iter().copied().collect()
                })
                .collect());
        }
        let chol = self.system(self.effective_s(s))?;
        Ok(fields
            .iter()
            .map(|y| {
                let wy = DVector::from_fn(n, |p, _| self.weights[p] * y[p]);
                let c = chol.solve(&self.basis.tr_mul(&wy));
                (&self.basis * c).iter().copied().collect()
            })
            .collect())
    }

    /// Generalized cross-validation score summed over fields.
    pub fn gcv(&self, fields: &[Vec<f64>], s: f64) -> Result<f64> {
        let n_obs = self.observed() as f64;
        let trace = if self.full {
            self.lambda2.iter().map(|l| 1.0 / (1.0 + s * l)).sum::<f64>()
        } else {
            let chol = self.system(self.effective_s(s))?;
            let mut t = 0.0;
            for (p, &w) in self.weights.iter().enumerate() {
                if w > 0.0 {
                    let u = self.basis.row(p).transpose();
                    t += w * u.dot(&chol.solve(&u));
                }
            }
            t
        };
        let fit = self.smooth(fields, s)?;
        let mut rss = 0.0;
        for (y, f) in fields.iter().zip(&fit) {
            for p in 0..y.len() {
                rss += self.weights[p] * (f[p] - y[p]).powi(2);
            }
        }
        let denom = (1.0 - trace / n_obs).powi(2);
        Ok((rss / n_obs) / denom)
    }

    /// Smoothness minimizing GCV over a logarithmic grid.
    pub fn choose_s(&self, fields: &[Vec<f64>]) -> Result<f64> {
        let mut best = (f64::INFINITY, 1.0);
        if self.observed() <= 1 {
            return Ok(best.1);
        }
        for k in 0..=40 {
            let s = 10f64.powf(-6.0 + 0.3 * k as f64);
            let g = self.gcv(fields, s)?;
            if g.is_finite() && g < best.0 {
                best = (g, s);
            }
        }
        Ok(best.1)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nz, self.nx)
    }
}

/// Per-pixel aberration functions over a coarse grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AberrationMap {
    pub grid: ImageGrid,
    /// `[nz × nx × Ne]`.
    pub values: ComplexTensor,
    pub center_frequency: f64,
}

impl AberrationMap {
    pub fn num_elements(&self) -> usize {
        self.values.dims()[2]
    }

    pub fn at_pixel(&self, iz: usize, ix: usize) -> AberrationFunction {
        let ne = self.num_elements();
        let start = (iz * self.grid.nx + ix) * ne;
        AberrationFunction::from_unconstrained(&self.values.values()[start..start + ne], self.center_frequency, 1e-6)
            .expect("map entries are clamped on construction")
    }

    /// Bilinear interpolation, clamped at the grid border.
    pub fn at(&self, x: f64, z: f64) -> AberrationFunction {
        let g = self.grid;
        let (u, v) = g.to_pixel(x, z);
        let u = u.clamp(0.0, (g.nx - 1) as f64);
        let v = v.clamp(0.0, (g.nz - 1) as f64);
        let (i0, j0) = (v.floor() as usize, u.floor() as usize);
        let (i1, j1) = ((i0 + 1).min(g.nz - 1), (j0 + 1).min(g.nx - 1));
        let (fv, fu) = (v - i0 as f64, u - j0 as f64);
        let ne = self.num_elements();
        let vals = self.values.values();
        let at = |i: usize, j: usize, n: usize| vals[(i * g.nx + j) * ne + n];
        let mixed: Vec<C64> = (0..ne)
            .map(|n| {
                at(i0, j0, n) * ((1.0 - fv) * (1.0 - fu))
                    + at(i0, j1, n) * ((1.0 - fv) * fu)
                    + at(i1, j0, n) * (fv * (1.0 - fu))
                    + at(i1, j1, n) * (fv * fu)
            })
            .collect();
        AberrationFunction::from_unconstrained(&mixed, self.center_frequency, 1e-6).expect("finite interpolation")
    }

    pub fn write_ulmt(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        ulmt::write_complex(path, &self.values, false)
    }
}

/// Scatters `(position, function)` samples onto `grid`, smooths each element's
/// real and imaginary field, and clamps amplitudes into `(0, 1]`.
///
/// `smoothness` of `None` selects `s` by generalized cross-validation.
pub fn interpolate_aberration_map(
    samples: &[((f64, f64), AberrationFunction)],
    grid: &ImageGrid,
    smoothness: Option<f64>,
) -> Result<(AberrationMap, f64)> {
    let first = samples.first().ok_or_else(|| Error::Domain("no aberration samples to interpolate".into()))?;
    let ne = first.1.len();
    let fc = first.1.center_frequency();
    if samples.iter().any(|s| s.1.len() != ne) {
        return Err(Error::Shape("aberration samples differ in element count".into()));
    }
    let npx = grid.len();
    let mut weights = vec![0.0; npx];
    let mut sums = vec![C64::new(0.0, 0.0); npx * ne];
    for ((x, z), ab) in samples {
        let (u, v) = grid.to_pixel(*x, *z);
        let ix = u.round().clamp(0.0, (grid.nx - 1) as f64) as usize;
        let iz = v.round().clamp(0.0, (grid.nz - 1) as f64) as usize;
        let p = iz * grid.nx + ix;
        weights[p] += 1.0;
        for (n, val) in ab.values().iter().enumerate() {
            sums[p * ne + n] += *val;
        }
    }
    let mut fields = Vec::with_capacity(2 * ne);
    for n in 0..ne {
        let mean = |p: usize| if weights[p] > 0.0 { sums[p * ne + n] / weights[p] } else { C64::new(0.0, 0.0) };
        fields.push((0..npx).map(|p| mean(p).re).collect::<Vec<_>>());
        fields.push((0..npx).map(|p| mean(p).im).collect::<Vec<_>>());
    }
    let sm = DctSmoother::new(grid.nz, grid.nx, weights)?;
    let s = match smoothness {
        Some(s) => s,
        None => sm.choose_s(&fields)?,
    };
    let out = sm.smooth(&fields, s)?;
    let mut values = Vec::with_capacity(npx * ne);
    for p in 0..npx {
        let raw: Vec<C64> = (0..ne).map(|n| C64::new(out[2 * n][p], out[2 * n + 1][p])).collect();
        values.extend_from_slice(AberrationFunction::from_unconstrained(&raw, fc, 1e-6)?.values());
    }
    let map = AberrationMap {
        grid: *grid,
        values: ComplexTensor::from_vec(&[grid.nz, grid.nx, ne], values)?,
        center_frequency: fc,
    };
    Ok((map, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FC: f64 = 15.625e6;

    #[test]
    fn dct_matrix_is_orthonormal() {
        let c = dct_matrix(7);
        for a in 0..7 {
            for b in 0..7 {
                let d: f64 = (0..7).map(|i| c[a][i] * c[b][i]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_smoothness_full_weights_is_identity() {
        let y: Vec<f64> = (0..30).map(|k| ((k * 7919) % 31) as f64 / 3.0).collect();
        let sm = DctSmoother::new(5, 6, vec![1.0; 30]).unwrap();
        let out = sm.smooth(std::slice::from_ref(&y), 0.0).unwrap();
        for (a, b) in out[0].iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_solution_is_the_penalized_minimizer() {
        // Direct oracle: normal equations in pixel space with an explicit Laplacian.
        let (nz, nx) = (4, 5);
        let n = nz * nx;
        let w: Vec<f64> = (0..n).map(|p| if p % 3 == 0 { 0.0 } else { 1.0 + (p % 2) as f64 }).collect();
        let y: Vec<f64> = (0..n).map(|p| (p as f64 * 0.7).sin()).collect();
        let s = 0.3;
        let lap1 = |m: usize| {
            let mut l = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                if i > 0 {
                    l[(i, i - 1)] = 1.0;
                    l[(i, i)] -= 1.0;
                }
                if i + 1 < m {
                    l[(i, i + 1)] = 1.0;
                    l[(i, i)] -= 1.0;
                }
            }
            l
        };
        let lz = lap1(nz);
        let lx = lap1(nx);
        let mut lap = DMatrix::<f64>::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let (iz, ix) = (a / nx, a % nx);
                let (jz, jx) = (b / nx, b % nx);
                let mut v = 0.0;
                if ix == jx {
                    v += lz[(iz, jz)];
                }
                if iz == jz {
                    v += lx[(ix, jx)];
                }
                lap[(a, b)] = v;
            }
        }
        let wm = DMatrix::from_diagonal(&DVector::from_vec(w.clone()));
        let a = &wm + (lap.transpose() * &lap) * s;
        let rhs = &wm * DVector::from_vec(y.clone());
        let oracle = a.lu().solve(&rhs).unwrap();
        let got = DctSmoother::new(nz, nx, w).unwrap().smooth(&[y], s).unwrap();
        for p in 0..n {
            assert!((got[0][p] - oracle[p]).abs() < 1e-9);
        }
    }

    fn grid() -> ImageGrid {
        ImageGrid::new(-4e-3, 1e-3, 1e-3, 1e-3, 9, 7).unwrap()
    }

    #[test]
    fn constant_samples_give_constant_map() {
        let a = AberrationFunction::from_amp_phase(&[0.8, 0.6, 1.0], &[0.3, -1.0, 2.0], FC).unwrap();
        let samples: Vec<_> = [(-3e-3, 2e-3), (1e-3, 5e-3), (2.2e-3, 3.1e-3)]
            .iter()
            .map(|&p| (p, a.clone()))
            .collect();
        let (map, _) = interpolate_aberration_map(&samples, &grid(), None).unwrap();
        for iz in 0..7 {
            for ix in 0..9 {
                for (u, v) in map.at_pixel(iz, ix).values().iter().zip(a.values()) {
                    assert!((u - v).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_sample_fills_the_grid() {
        let a = AberrationFunction::from_amp_phase(&[0.9, 0.7], &[1.0, -0.5], FC).unwrap();
        let (map, _) = interpolate_aberration_map(&[((0.0, 4e-3), a.clone())], &grid(), Some(2.0)).unwrap();
        for (u, v) in map.at(3e-3, 1.5e-3).values().iter().zip(a.values()) {
            assert!((u - v).norm() < 1e-6);
        }
    }

    #[test]
    fn linear_phase_field_is_reconstructed() {
        let g = ImageGrid::new(-4e-3, 1e-3, 0.5e-3, 0.5e-3, 17, 9).unwrap();
        let phase = |x: f64| 300.0 * x;
        let mut samples = Vec::new();
        for iz in 0..9 {
            for ix in 0..17 {
                if (iz + ix) % 2 == 0 {
                    let (x, z) = (g.x(ix), g.z(iz));
                    samples.push(((x, z), AberrationFunction::from_amp_phase(&[1.0], &[phase(x)], FC).unwrap()));
                }
            }
        }
        let (map, _) = interpolate_aberration_map(&samples, &g, Some(1e-3)).unwrap();
        for iz in 0..9 {
            for ix in 0..17 {
                let got = map.at_pixel(iz, ix).phase(0);
                let err = crate::aberration::wrap_phase(got - phase(g.x(ix)));
                assert!(err.abs() <= 0.05, "error {err} at ({iz}, {ix})");
            }
        }
    }

    #[test]
    fn empty_samples_error() {
        assert!(interpolate_aberration_map(&[], &grid(), None).is_err());
    }
}
