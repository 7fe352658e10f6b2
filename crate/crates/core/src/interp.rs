//! Catmull-Rom cubic interpolation on uniformly sampled complex sequences.
//!
//! Every sub-sample access in the crate (IQ delays, beamforming, hyperbola
//! realignment, correlation peak refinement) goes through this kernel.

use crate::tensor::C64;

/// Evaluates the sequence `data[k * stride]`, `k < len`, at fractional index `u`.
///
/// Positions outside `[0, len - 1]` return zero; neighbors beyond the ends are
/// treated as zero samples.
#[inline]
pub fn cubic_sample(data: &[C64], stride: usize, len: usize, u: f64) -> C64 {
    if !(u >= 0.0) || u > (len as f64 - 1.0) {
        return C64::new(0.0, 0.0);
    }
    let i = u.floor() as isize;
    let f = u - i as f64;
    let at = |k: isize| -> C64 {
        if k < 0 || k as usize >= len {
            C64::new(0.0, 0.0)
        } else {
            data[k as usize * stride]
        }
    };
    let p0 = at(i - 1);
    let p1 = at(i);
    if f == 0.0 {
        return p1;
    }
    let p2 = at(i + 1);
    let p3 = at(i + 2);
    let (w0, w1, w2, w3) = weights(f);
    p0 * w0 + p1 * w1 + p2 * w2 + p3 * w3
}

/// Real-valued counterpart of [`cubic_sample`] on a contiguous slice.
pub fn cubic_sample_real(data: &[f64], u: f64) -> f64 {
    let len = data.len();
    if !(u >= 0.0) || u > (len as f64 - 1.0) {
        return 0.0;
    }
    let i = u.floor() as isize;
    let f = u - i as f64;
    let at = |k: isize| if k < 0 || k as usize >= len { 0.0 } else { data[k as usize] };
    let (w0, w1, w2, w3) = weights(f);
    at(i - 1) * w0 + at(i) * w1 + at(i + 1) * w2 + at(i + 2) * w3
}

#[inline]
fn weights(f: f64) -> (f64, f64, f64, f64) {
    let f2 = f * f;
    let f3 = f2 * f;
    (
        0.5 * (-f3 + 2.0 * f2 - f),
        0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
        0.5 * (-3.0 * f3 + 4.0 * f2 + f),
        0.5 * (f3 - f2),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_and_cubics_in_the_interior() {
        let data: Vec<C64> = (0..10)
            .map(|k| {
                let x = k as f64;
                C64::new(0.5 * x * x - x, 2.0 * x)
            })
            .collect();
        assert_eq!(cubic_sample(&data, 1, 10, 4.0), data[4]);
        // Catmull-Rom is exact for quadratics away from the zero-padded ends.
        let u = 4.3;
        let v = cubic_sample(&data, 1, 10, u);
        assert!((v.re - (0.5 * u * u - u)).abs() < 1e-12);
        assert!((v.im - 2.0 * u).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_is_zero() {
        let data = vec![C64::new(1.0, 0.0); 4];
        assert_eq!(cubic_sample(&data, 1, 4, -0.1), C64::new(0.0, 0.0));
        assert_eq!(cubic_sample(&data, 1, 4, 3.5), C64::new(0.0, 0.0));
    }

    #[test]
    fn honors_stride() {
        let data: Vec<C64> = (0..12).map(|k| C64::new(k as f64, 0.0)).collect();
        // every third sample: 0, 3, 6, 9
        assert!((cubic_sample(&data, 3, 4, 1.5).re - 4.5).abs() < 1e-12);
    }
}
