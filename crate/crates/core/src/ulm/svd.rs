//! Casorati-matrix SVD clutter filtering.

use nalgebra::DMatrix;

use crate::beamform::BeamformedImage;
use crate::error::{Error, Result};
use crate::iq::ChannelIQ;
use crate::tensor::{ComplexTensor, C64};

/// Splits a `space × time` matrix into (kept, removed) parts, removing the
/// `cutoff_rank` strongest singular components.
pub fn svd_split(casorati: &DMatrix<C64>, cutoff_rank: usize) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let (m, n) = casorati.shape();
    if n < 2 {
        return Err(Error::Domain("clutter filtering needs at least two frames".into()));
    }
    if cutoff_rank >= m.min(n) {
        return Err(Error::Domain(format!(
            "cutoff rank {cutoff_rank} must be below min(pixels, frames) = {}",
            m.min(n)
        )));
    }
    if cutoff_rank == 0 {
        return Ok((casorati.clone(), DMatrix::zeros(m, n)));
    }
    let svd = casorati.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::Numerical("SVD did not return V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut removed = DMatrix::<C64>::zeros(m, n);
    for &k in order.iter().take(cutoff_rank) {
        let s = C64::new(svd.singular_values[k], 0.0);
        removed += u.column(k) * vt.row(k) * s;
    }
    Ok((casorati - &removed, removed))
}

fn casorati_of(columns: &[&[C64]]) -> DMatrix<C64> {
    let m = columns[0].len();
    DMatrix::from_fn(m, columns.len(), |i, j| columns[j][i])
}

/// Removes the first `cutoff_rank` singular components from an image stack.
pub fn svd_clutter_filter(stack: &[BeamformedImage], cutoff_rank: usize) -> Result<Vec<BeamformedImage>> {
    if stack.len() < 2 {
        return Err(Error::Domain("clutter filtering needs at least two frames".into()));
    }
    let grid = stack[0].grid;
    if stack.iter().any(|im| im.grid != grid) {
        return Err(Error::Shape("image stack mixes grids".into()));
    }
    let cols: Vec<&[C64]> = stack.iter().map(|im| im.pixels.values()).collect();
    let (kept, _) = svd_split(&casorati_of(&cols), cutoff_rank)?;
    stack
        .iter()
        .enumerate()
        .map(|(f, im)| {
            let vals: Vec<C64> = kept.column(f).iter().copied().collect();
            let mut out = BeamformedImage::new(grid, ComplexTensor::from_vec(&[grid.nz, grid.nx], vals)?)?;
            out.truncated = im.truncated;
            Ok(out)
        })
        .collect()
}

/// Same filter on raw channel data, one column per frame.
pub fn svd_filter_channels(frames: &[ChannelIQ], cutoff_rank: usize) -> Result<Vec<ChannelIQ>> {
    if frames.len() < 2 {
        return Err(Error::Domain("clutter filtering needs at least two frames".into()));
    }
    let dims = frames[0].data.dims().to_vec();
    if frames.iter().any(|f| f.data.dims() != dims.as_slice()) {
        return Err(Error::Shape("channel frames differ in shape".into()));
    }
    let cols: Vec<&[C64]> = frames.iter().map(|f| f.data.values()).collect();
    let (kept, _) = svd_split(&casorati_of(&cols), cutoff_rank)?;
    frames
        .iter()
        .enumerate()
        .map(|(f, iq)| {
            let vals: Vec<C64> = kept.column(f).iter().copied().collect();
            ChannelIQ::new(ComplexTensor::from_vec(&dims, vals)?, iq.sample_rate, iq.t0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::ImageGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> ImageGrid {
        ImageGrid::new(0.0, 1.0, 1.0, 1.0, 12, 10).unwrap()
    }

    fn image(vals: Vec<C64>) -> BeamformedImage {
        BeamformedImage::new(grid(), ComplexTensor::from_vec(&[10, 12], vals).unwrap()).unwrap()
    }

    fn noise_stack(seed: u64, frames: usize) -> Vec<BeamformedImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames)
            .map(|_| image((0..120).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()))
            .collect()
    }

    #[test]
    fn rank_zero_is_identity() {
        let s = noise_stack(1, 6);
        let out = svd_clutter_filter(&s, 0).unwrap();
        for (a, b) in out.iter().zip(&s) {
            assert!(a.pixels.rel_error(&b.pixels) <= 1e-9);
        }
    }

    #[test]
    fn kept_plus_removed_is_input() {
        let s = noise_stack(2, 8);
        let cols: Vec<&[C64]> = s.iter().map(|im| im.pixels.values()).collect();
        let x = casorati_of(&cols);
        let (k, r) = svd_split(&x, 3).unwrap();
        assert!((&k + &r - &x).norm() <= 1e-9 * x.norm());
    }

    #[test]
    fn noise_loses_energy() {
        let s = noise_stack(3, 8);
        let out = svd_clutter_filter(&s, 1).unwrap();
        let e_in: f64 = s.iter().map(|i| i.pixels.norm_sqr()).sum();
        let e_out: f64 = out.iter().map(|i| i.pixels.norm_sqr()).sum();
        assert!(e_out < e_in);
    }

    #[test]
    fn static_background_is_removed_and_moving_point_kept() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let background: Vec<C64> = (0..120).map(|_| C64::new(rng.random::<f64>(), rng.random::<f64>())).collect();
        let frames = 10;
        let stack: Vec<BeamformedImage> = (0..frames)
            .map(|f| {
                let mut v = background.clone();
                v[5 * 12 + f] += C64::new(3.0, 0.0);
                image(v)
            })
            .collect();
        let out = svd_clutter_filter(&stack, 1).unwrap();
        // Static energy: pixels the point never visits.
        let static_in: f64 = (0..frames)
            .map(|f| (0..120).filter(|&p| p / 12 != 5).map(|p| stack[f].pixels.values()[p].norm_sqr()).sum::<f64>())
            .sum();
        let static_out: f64 = (0..frames)
            .map(|f| (0..120).filter(|&p| p / 12 != 5).map(|p| out[f].pixels.values()[p].norm_sqr()).sum::<f64>())
            .sum();
        assert!(static_out <= 0.1 * static_in);
        let max_out = out.iter().flat_map(|i| i.envelope()).fold(0.0, f64::max);
        for (f, im) in out.iter().enumerate() {
            assert!(im.pixels.values()[5 * 12 + f].norm() >= 0.5 * max_out);
        }
    }

    #[test]
    fn rejects_bad_rank() {
        let s = noise_stack(5, 4);
        assert!(svd_clutter_filter(&s, 4).is_err());
        assert!(svd_clutter_filter(&s[..1], 0).is_err());
    }
}
