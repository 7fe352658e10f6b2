//! Dense kernels on `[batch, channel, d, h, w]` complex arrays.
//!
//! Gradients follow the convention `G = ∂L/∂Re + i ∂L/∂Im` for a real loss,
//! so a product `y = w·x` back-propagates as `conj(w)·G` and `conj(x)·G`.

use rayon::prelude::*;

use crate::tensor::C64;

pub type Dims5 = [usize; 5];

pub(crate) fn plane(d: &Dims5) -> usize {
    d[2] * d[3] * d[4]
}

pub(crate) fn count(d: &Dims5) -> usize {
    d.iter().product()
}

/// Range of `q` with `0 <= q*s + k - p < npos`, clipped to `0..nq`.
fn span(nq: usize, npos: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let off = k as isize - p as isize;
    let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
    let top = npos as isize - 1 - off;
    let hi = if top < 0 { 0 } else { (top as usize / s + 1).min(nq) };
    (lo, hi.max(lo))
}

/// Output extent of a strided, padded correlation; `None` when the kernel does not fit.
pub fn conv_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if n + 2 * p < k || s == 0 {
        None
    } else {
        Some((n + 2 * p - k) / s + 1)
    }
}

pub fn conv_transpose_extent(n: usize, k: usize, s: usize, p: usize, out_pad: usize) -> Option<usize> {
    let full = (n - 1) * s + k + out_pad;
    if n == 0 || full <= 2 * p {
        None
    } else {
        Some(full - 2 * p)
    }
}

/// `y[b,o,q] = Σ_c Σ_k w[o,c,k] · x[b,c,q·s + k − p]`.
pub fn gather(x: &[C64], xd: Dims5, w: &[C64], k: [usize; 3], s: [usize; 3], p: [usize; 3], yd: Dims5) -> Vec<C64> {
    let (oc, ic) = (yd[1], xd[1]);
    let (xp, yp) = (plane(&xd), plane(&yd));
    let mut y = vec![C64::new(0.0, 0.0); count(&yd)];
    y.par_chunks_mut(yp).enumerate().for_each(|(bo, yc)| {
        let (b, o) = (bo / oc, bo % oc);
        for c in 0..ic {
            let xc = &x[(b * ic + c) * xp..][..xp];
            for a in 0..k[0] {
                let (d0, d1) = span(yd[2], xd[2], a, s[0], p[0]);
                for bb in 0..k[1] {
                    let (h0, h1) = span(yd[3], xd[3], bb, s[1], p[1]);
                    for cc in 0..k[2] {
                        let (w0, w1) = span(yd[4], xd[4], cc, s[2], p[2]);
                        let wv = w[(((o * ic + c) * k[0] + a) * k[1] + bb) * k[2] + cc];
                        for qd in d0..d1 {
                            let pd = qd * s[0] + a - p[0];
                            for qh in h0..h1 {
                                let ph = qh * s[1] + bb - p[1];
                                let yrow = &mut yc[(qd * yd[3] + qh) * yd[4]..][..yd[4]];
                                let xrow = &xc[(pd * xd[3] + ph) * xd[4]..][..xd[4]];
                                if s[2] == 1 {
                                    let off = cc as isize - p[2] as isize;
                                    let src = &xrow[(w0 as isize + off) as usize..(w1 as isize + off) as usize];
                                    for (yv, xv) in yrow[w0..w1].iter_mut().zip(src) {
                                        *yv += wv * xv;
                                    }
                                } else {
                                    for qw in w0..w1 {
                                        yrow[qw] += wv * xrow[qw * s[2] + cc - p[2]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// `y[b,o,q·s + k − p] += w[o,c,k] · x[b,c,q]`, the adjoint pattern of [`gather`].
pub fn scatter(x: &[C64], xd: Dims5, w: &[C64], k: [usize; 3], s: [usize; 3], p: [usize; 3], yd: Dims5) -> Vec<C64> {
    let (oc, ic) = (yd[1], xd[1]);
    let (xp, yp) = (plane(&xd), plane(&yd));
    let mut y = vec![C64::new(0.0, 0.0); count(&yd)];
    y.par_chunks_mut(yp).enumerate().for_each(|(bo, yc)| {
        let (b, o) = (bo / oc, bo % oc);
        for c in 0..ic {
            let xc = &x[(b * ic + c) * xp..][..xp];
            for a in 0..k[0] {
                let (d0, d1) = span(xd[2], yd[2], a, s[0], p[0]);
                for bb in 0..k[1] {
                    let (h0, h1) = span(xd[3], yd[3], bb, s[1], p[1]);
                    for cc in 0..k[2] {
                        let (w0, w1) = span(xd[4], yd[4], cc, s[2], p[2]);
                        let wv = w[(((o * ic + c) * k[0] + a) * k[1] + bb) * k[2] + cc];
                        for qd in d0..d1 {
                            let pd = qd * s[0] + a - p[0];
                            for qh in h0..h1 {
                                let ph = qh * s[1] + bb - p[1];
                                let xrow = &xc[(qd * xd[3] + qh) * xd[4]..][..xd[4]];
                                let yrow = &mut yc[(pd * yd[3] + ph) * yd[4]..][..yd[4]];
                                for qw in w0..w1 {
                                    yrow[qw * s[2] + cc - p[2]] += wv * xrow[qw];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    y
}

/// Weight gradient `r[o,c,k] = Σ_b Σ_q A[b,·,q] · B[b,·,q·s + k − p]`.
///
/// `a_is_out` says whether `A` carries the output-channel index `o`; the other
/// operand then carries `c`. Either operand may be conjugated.
#[allow(clippy::too_many_arguments)]
pub fn correlate(
    a: &[C64],
    ad: Dims5,
    conj_a: bool,
    bv: &[C64],
    bd: Dims5,
    conj_b: bool,
    a_is_out: bool,
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
) -> Vec<C64> {
    let (oc, ic) = if a_is_out { (ad[1], bd[1]) } else { (bd[1], ad[1]) };
    let kk = k[0] * k[1] * k[2];
    let (ap, bp) = (plane(&ad), plane(&bd));
    let mut r = vec![C64::new(0.0, 0.0); oc * ic * kk];
    r.par_chunks_mut(kk).enumerate().for_each(|(oi, rc)| {
        let (o, c) = (oi / ic, oi % ic);
        let (cha, chb) = if a_is_out { (o, c) } else { (c, o) };
        for b in 0..ad[0] {
            let ac = &a[(b * ad[1] + cha) * ap..][..ap];
            let bc = &bv[(b * bd[1] + chb) * bp..][..bp];
            for x in 0..k[0] {
                let (d0, d1) = span(ad[2], bd[2], x, s[0], p[0]);
                for y in 0..k[1] {
                    let (h0, h1) = span(ad[3], bd[3], y, s[1], p[1]);
                    for z in 0..k[2] {
                        let (w0, w1) = span(ad[4], bd[4], z, s[2], p[2]);
                        let mut acc = C64::new(0.0, 0.0);
                        for qd in d0..d1 {
                            let pd = qd * s[0] + x - p[0];
                            for qh in h0..h1 {
                                let ph = qh * s[1] + y - p[1];
                                let arow = &ac[(qd * ad[3] + qh) * ad[4]..][..ad[4]];
                                let brow = &bc[(pd * bd[3] + ph) * bd[4]..][..bd[4]];
                                for qw in w0..w1 {
                                    let mut u = arow[qw];
                                    let mut v = brow[qw * s[2] + z - p[2]];
                                    if conj_a {
                                        u = u.conj();
                                    }
                                    if conj_b {
                                        v = v.conj();
                                    }
                                    acc += u * v;
                                }
                            }
                        }
                        rc[(x * k[1] + y) * k[2] + z] += acc;
                    }
                }
            }
        }
    });
    r
}

/// Swaps the two channel axes of `[o, c, k…]` weights and conjugates.
pub fn adjoint_weights(w: &[C64], oc: usize, ic: usize, kk: usize) -> Vec<C64> {
    let mut t = vec![C64::new(0.0, 0.0); w.len()];
    for o in 0..oc {
        for c in 0..ic {
            for j in 0..kk {
                t[(c * oc + o) * kk + j] = w[(o * ic + c) * kk + j].conj();
            }
        }
    }
    t
}

/// Per-channel sum over batch and space.
pub fn channel_sums(g: &[C64], d: Dims5) -> Vec<C64> {
    let p = plane(&d);
    let mut out = vec![C64::new(0.0, 0.0); d[1]];
    for (i, chunk) in g.chunks(p).enumerate() {
        out[i % d[1]] += chunk.iter().sum::<C64>();
    }
    out
}

pub fn add_bias(y: &mut [C64], d: Dims5, bias: &[C64]) {
    let p = plane(&d);
    for (i, chunk) in y.chunks_mut(p).enumerate() {
        let b = bias[i % d[1]];
        for v in chunk {
            *v += b;
        }
    }
}

/// Average over a `3×3×3` neighbourhood, stride 1, counting only in-range taps.
pub fn avg_pool3(x: &[C64], d: Dims5) -> Vec<C64> {
    let mut y = vec![C64::new(0.0, 0.0); x.len()];
    pool3_apply(d, |src, dst, inv| y[dst] += x[src] * inv);
    y
}

pub fn avg_pool3_backward(g: &[C64], d: Dims5) -> Vec<C64> {
    let mut dx = vec![C64::new(0.0, 0.0); g.len()];
    pool3_apply(d, |src, dst, inv| dx[src] += g[dst] * inv);
    dx
}

fn pool3_apply(d: Dims5, mut f: impl FnMut(usize, usize, f64)) {
    let p = plane(&d);
    let axis = |q: usize, n: usize| (q.saturating_sub(1), (q + 2).min(n));
    for bc in 0..d[0] * d[1] {
        let base = bc * p;
        for qd in 0..d[2] {
            let (d0, d1) = axis(qd, d[2]);
            for qh in 0..d[3] {
                let (h0, h1) = axis(qh, d[3]);
                for qw in 0..d[4] {
                    let (w0, w1) = axis(qw, d[4]);
                    let inv = 1.0 / ((d1 - d0) * (h1 - h0) * (w1 - w0)) as f64;
                    let dst = base + (qd * d[3] + qh) * d[4] + qw;
                    for a in d0..d1 {
                        for b in h0..h1 {
                            for c in w0..w1 {
                                f(base + (a * d[3] + b) * d[4] + c, dst, inv);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Mean over the `d` and `h` axes, keeping `w`.
pub fn global_avg_dh(x: &[C64], d: Dims5) -> Vec<C64> {
    let p = plane(&d);
    let n = (d[2] * d[3]) as f64;
    let mut y = vec![C64::new(0.0, 0.0); d[0] * d[1] * d[4]];
    for (bc, chunk) in x.chunks(p).enumerate() {
        for (j, v) in chunk.iter().enumerate() {
            y[bc * d[4] + j % d[4]] += v / n;
        }
    }
    y
}

pub fn global_avg_dh_backward(g: &[C64], d: Dims5) -> Vec<C64> {
    let p = plane(&d);
    let n = (d[2] * d[3]) as f64;
    let mut dx = vec![C64::new(0.0, 0.0); count(&d)];
    for (bc, chunk) in dx.chunks_mut(p).enumerate() {
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = g[bc * d[4] + j % d[4]] / n;
        }
    }
    dx
}

pub fn crelu(x: &[C64]) -> Vec<C64> {
    x.iter().map(|v| C64::new(v.re.max(0.0), v.im.max(0.0))).collect()
}

pub fn crelu_backward(x: &[C64], g: &[C64]) -> Vec<C64> {
    x.iter()
        .zip(g)
        .map(|(v, g)| C64::new(if v.re > 0.0 { g.re } else { 0.0 }, if v.im > 0.0 { g.im } else { 0.0 }))
        .collect()
}
