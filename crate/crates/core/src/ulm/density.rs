//! Track rasterization onto a refined grid.

use std::collections::BTreeSet;

use crate::beamform::ImageGrid;
use crate::error::Result;
use crate::tensor::RealTensor;
use crate::ulmt;

use super::track::Track;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub grid: ImageGrid,
    /// Row-major `[nz × nx]` counts.
    pub counts: Vec<f64>,
}

impl DensityMap {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            counts: vec![0.0; grid.len()],
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn to_tensor(&self) -> Result<RealTensor> {
        RealTensor::from_vec(&[self.grid.nz, self.grid.nx], self.counts.clone())
    }

    pub fn write_ulmt(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        ulmt::write_real(path, &self.to_tensor()?)
    }

    pub fn add(&mut self, other: &DensityMap) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Distinct fine-grid pixels visited by a track's polyline.
pub fn rasterize_track(track: &Track, fine: &ImageGrid) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut visit = |x: f64, z: f64| {
        let (u, v) = fine.to_pixel(x, z);
        let (ix, iz) = (u.round(), v.round());
        if ix >= 0.0 && iz >= 0.0 && (ix as usize) < fine.nx && (iz as usize) < fine.nz {
            out.insert(iz as usize * fine.nx + ix as usize);
        }
    };
    let pts = &track.points;
    if let Some(p) = pts.first() {
        visit(p.x, p.z);
    }
    for w in pts.windows(2) {
        let (u0, v0) = fine.to_pixel(w[0].x, w[0].z);
        let (u1, v1) = fine.to_pixel(w[1].x, w[1].z);
        let steps = ((u1 - u0).abs().max((v1 - v0).abs()) * 4.0).ceil().max(1.0) as usize;
        for s in 1..=steps {
            let t = s as f64 / steps as f64;
            visit(w[0].x + t * (w[1].x - w[0].x), w[0].z + t * (w[1].z - w[0].z));
        }
    }
    out
}

/// Sum of per-track rasterizations on the `factor`-refined grid over tracks
/// longer than `min_len` frames.
pub fn accumulate_density(tracks: &[Track], base: &ImageGrid, factor: usize, min_len: usize) -> Result<DensityMap> {
    let fine = base.refined(factor)?;
    let mut map = DensityMap::zeros(fine);
    for t in tracks.iter().filter(|t| t.len() > min_len) {
        for k in rasterize_track(t, &fine) {
            map.counts[k] += 1.0;
        }
    }
    Ok(map)
}

/// Cumulative number of distinct illuminated fine pixels after each track.
pub fn saturation_curve(tracks: &[Track], base: &ImageGrid, factor: usize) -> Result<Vec<(usize, usize)>> {
    let fine = base.refined(factor)?;
    let mut lit = BTreeSet::new();
    Ok(tracks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            lit.extend(rasterize_track(t, &fine));
            (i + 1, lit.len())
        })
        .collect())
}
