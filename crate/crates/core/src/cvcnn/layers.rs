//! Complex layers: convolution, batch normalization and dense projection.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, C64};

use super::ops::{self, Dims5};

/// Symmetric 2×2 matrix stored as `[m00, m01, m11]`.
pub type Sym2 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexConvLayer {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    /// Extra trailing extent for transposed layers.
    pub output_padding: [usize; 3],
    pub transposed: bool,
    /// `W_r + i W_i`, laid out `[out_ch, in_ch, k0, k1, k2]`.
    pub weight: Vec<C64>,
    pub bias: Vec<C64>,
}

impl ComplexConvLayer {
    pub fn new(name: &str, in_ch: usize, out_ch: usize, kernel: [usize; 3]) -> Result<Self> {
        if in_ch == 0 || out_ch == 0 || kernel.contains(&0) {
            return Err(Error::Config(format!("layer {name}: channels and kernel extents must be at least 1")));
        }
        let n = out_ch * in_ch * kernel.iter().product::<usize>();
        Ok(Self {
            name: name.to_string(),
            in_ch,
            out_ch,
            kernel,
            stride: [1; 3],
            padding: [0; 3],
            output_padding: [0; 3],
            transposed: false,
            weight: vec![C64::new(0.0, 0.0); n],
            bias: vec![C64::new(0.0, 0.0); out_ch],
        })
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    /// Padding `k/2` on every axis, which keeps extents for odd kernels at stride 1.
    pub fn same(self) -> Self {
        let p = [self.kernel[0] / 2, self.kernel[1] / 2, self.kernel[2] / 2];
        self.with_padding(p)
    }

    pub fn transposed(mut self, output_padding: [usize; 3]) -> Self {
        self.transposed = true;
        self.output_padding = output_padding;
        self
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel_volume()
    }

    pub fn fan_out(&self) -> usize {
        self.out_ch * self.kernel_volume()
    }

    pub fn real_weights(&self) -> Vec<f64> {
        self.weight.iter().map(|w| w.re).collect()
    }

    pub fn imag_weights(&self) -> Vec<f64> {
        self.weight.iter().map(|w| w.im).collect()
    }

    /// Output dims for an input batch, naming this layer on mismatch.
    pub fn output_dims(&self, d: Dims5) -> Result<Dims5> {
        if d[1] != self.in_ch {
            return Err(Error::Shape(format!("layer {}: expects {} channels, got {}", self.name, self.in_ch, d[1])));
        }
        let mut out = [d[0], self.out_ch, 0, 0, 0];
        for a in 0..3 {
            let e = if self.transposed {
                ops::conv_transpose_extent(d[a + 2], self.kernel[a], self.stride[a], self.padding[a], self.output_padding[a])
            } else {
                ops::conv_extent(d[a + 2], self.kernel[a], self.stride[a], self.padding[a])
            };
            out[a + 2] = e.ok_or_else(|| {
                Error::Shape(format!(
                    "layer {}: kernel {:?} does not fit input extent {:?}",
                    self.name,
                    self.kernel,
                    &d[2..]
                ))
            })?;
        }
        Ok(out)
    }

    pub(crate) fn forward_raw(&self, x: &[C64], d: Dims5) -> Result<(Vec<C64>, Dims5)> {
        let yd = self.output_dims(d)?;
        let mut y = if self.transposed {
            ops::scatter(x, d, &self.weight, self.kernel, self.stride, self.padding, yd)
        } else {
            ops::gather(x, d, &self.weight, self.kernel, self.stride, self.padding, yd)
        };
        ops::add_bias(&mut y, yd, &self.bias);
        Ok((y, yd))
    }

    /// Returns `(dx, dW, db)`.
    pub(crate) fn backward_raw(&self, x: &[C64], d: Dims5, g: &[C64], yd: Dims5) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let kk = self.kernel_volume();
        let wt = ops::adjoint_weights(&self.weight, self.out_ch, self.in_ch, kk);
        let (dx, dw) = if self.transposed {
            let dx = ops::gather(g, yd, &wt, self.kernel, self.stride, self.padding, d);
            let dw = ops::correlate(x, d, true, g, yd, false, false, self.kernel, self.stride, self.padding);
            (dx, dw)
        } else {
            let dx = ops::scatter(g, yd, &wt, self.kernel, self.stride, self.padding, d);
            let dw = ops::correlate(g, yd, false, x, d, true, true, self.kernel, self.stride, self.padding);
            (dx, dw)
        };
        (dx, dw, ops::channel_sums(g, yd))
    }
}

pub(crate) fn dims5(t: &ComplexTensor) -> Result<Dims5> {
    let d = t.dims();
    if d.len() != 5 {
        return Err(Error::Shape(format!("expected a [batch, channel, d, h, w] tensor, got {d:?}")));
    }
    Ok([d[0], d[1], d[2], d[3], d[4]])
}

pub fn complex_conv_forward(x: &ComplexTensor, layer: &ComplexConvLayer) -> Result<ComplexTensor> {
    let (y, yd) = layer.forward_raw(x.values(), dims5(x)?)?;
    ComplexTensor::from_vec(&yd, y)
}

/// Draws `|W|` from a Rayleigh law with scale `1/sqrt(fan_in + fan_out)` and
/// the phase uniformly on `[-π, π)`; biases are zeroed.
pub fn rayleigh_init(weights: &mut [C64], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let sigma = 1.0 / ((fan_in + fan_out) as f64).sqrt();
    for w in weights {
        let u: f64 = 1.0 - rng.random::<f64>();
        let r = sigma * (-2.0 * u.ln()).sqrt();
        let phi = rng.random_range(-PI..PI);
        *w = C64::from_polar(r, phi);
    }
}

pub fn init_conv(layer: &mut ComplexConvLayer, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fi, fo) = (layer.fan_in(), layer.fan_out());
    rayleigh_init(&mut layer.weight, fi, fo, &mut rng);
    layer.bias.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
}

pub fn sym_det(m: Sym2) -> f64 {
    m[0] * m[2] - m[1] * m[1]
}

/// Inverse principal square root of a symmetric positive-definite 2×2 matrix.
pub fn inv_sqrt_2x2(m: Sym2) -> Result<Sym2> {
    let det = sym_det(m);
    if !(det > 0.0 && m[0] > 0.0) {
        return Err(Error::Numerical(format!("matrix {m:?} is not positive definite")));
    }
    let s = det.sqrt();
    let t = (m[0] + m[2] + 2.0 * s).sqrt();
    // sqrt(M) = (M + sI) / t, so its inverse is t · (M + sI)^{-1}.
    let (a, b, c) = (m[0] + s, m[1], m[2] + s);
    let d = a * c - b * b;
    Ok([t * c / d, -t * b / d, t * a / d])
}

pub fn sym_mul_vec(m: Sym2, v: [f64; 2]) -> [f64; 2] {
    [m[0] * v[0] + m[1] * v[1], m[1] * v[0] + m[2] * v[1]]
}

/// Symmetric `X` with `S X + X S = G` for symmetric positive-definite `S`.
pub fn sylvester_sym(s: Sym2, g: Sym2) -> Sym2 {
    // Unknowns (x00, x01, x11):
    //   2 s00 x00 + 2 s01 x01            = g00
    //   s01 x00 + (s00 + s11) x01 + s01 x11 = g01
    //   2 s01 x01 + 2 s11 x11            = g11
    let a = [
        [2.0 * s[0], 2.0 * s[1], 0.0],
        [s[1], s[0] + s[2], s[1]],
        [0.0, 2.0 * s[1], 2.0 * s[2]],
    ];
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(&a);
    let mut x = [0.0; 3];
    for (j, xj) in x.iter_mut().enumerate() {
        let mut m = a;
        for (i, row) in m.iter_mut().enumerate() {
            row[j] = g[i];
        }
        *xj = det3(&m) / d;
    }
    x
}

/// Complex batch normalization with a 2×2 whitening per channel and an
/// optional symmetric affine `Γ` plus complex shift `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBatchNorm {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub affine: bool,
    /// `Γ` per channel; only real parts are used, as `[γ_rr, γ_ri, γ_ii]`.
    pub gamma: Vec<C64>,
    pub beta: Vec<C64>,
    pub running_mean: Vec<C64>,
    pub running_cov: Vec<Sym2>,
}

/// Per-channel batch statistics of a training pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<C64>,
    pub cov: Vec<Sym2>,
}

impl ComplexBatchNorm {
    pub fn new(name: &str, channels: usize, affine: bool) -> Self {
        let g = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            name: name.to_string(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
            affine,
            gamma: (0..channels)
                .flat_map(|_| [C64::new(g, 0.0), C64::new(0.0, 0.0), C64::new(g, 0.0)])
                .collect(),
            beta: vec![C64::new(0.0, 0.0); channels],
            running_mean: vec![C64::new(0.0, 0.0); channels],
            running_cov: vec![[1.0, 0.0, 1.0]; channels],
        }
    }

    pub fn gamma_of(&self, c: usize) -> Sym2 {
        [self.gamma[3 * c].re, self.gamma[3 * c + 1].re, self.gamma[3 * c + 2].re]
    }

    pub fn regularized(&self, v: Sym2) -> Sym2 {
        [v[0] + self.eps, v[1], v[2] + self.eps]
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for c in 0..self.channels {
            self.running_mean[c] = self.running_mean[c] * (1.0 - m) + stats.mean[c] * m;
            for j in 0..3 {
                self.running_cov[c][j] = self.running_cov[c][j] * (1.0 - m) + stats.cov[c][j] * m;
            }
        }
    }

    fn affine_apply(&self, c: usize, x: [f64; 2]) -> C64 {
        if self.affine {
            let y = sym_mul_vec(self.gamma_of(c), x);
            C64::new(y[0], y[1]) + self.beta[c]
        } else {
            C64::new(x[0], x[1])
        }
    }
}

pub(crate) fn batch_stats(x: &[C64], d: Dims5) -> BatchStats {
    let p = ops::plane(&d);
    let ch = d[1];
    let m = (d[0] * p) as f64;
    let mut mean = vec![C64::new(0.0, 0.0); ch];
    for (i, chunk) in x.chunks(p).enumerate() {
        mean[i % ch] += chunk.iter().sum::<C64>();
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut cov = vec![[0.0; 3]; ch];
    for (i, chunk) in x.chunks(p).enumerate() {
        let c = i % ch;
        for v in chunk {
            let z = v - mean[c];
            cov[c][0] += z.re * z.re / m;
            cov[c][1] += z.re * z.im / m;
            cov[c][2] += z.im * z.im / m;
        }
    }
    BatchStats { mean, cov }
}

/// Normalizes with the given statistics; returns the output and the whitened values.
pub(crate) fn bn_apply(bn: &ComplexBatchNorm, x: &[C64], d: Dims5, mean: &[C64], whiten: &[Sym2]) -> (Vec<C64>, Vec<C64>) {
    let p = ops::plane(&d);
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    for (i, chunk) in x.chunks(p).enumerate() {
        let c = i % d[1];
        for v in chunk {
            let z = v - mean[c];
            let w = sym_mul_vec(whiten[c], [z.re, z.im]);
            xhat.push(C64::new(w[0], w[1]));
            y.push(bn.affine_apply(c, w));
        }
    }
    (y, xhat)
}

pub fn complex_batchnorm_forward(x: &ComplexTensor, bn: &mut ComplexBatchNorm, training: bool) -> Result<ComplexTensor> {
    let d = dims5(x)?;
    if d[1] != bn.channels {
        return Err(Error::Shape(format!("layer {}: expects {} channels, got {}", bn.name, bn.channels, d[1])));
    }
    let (mean, cov) = if training {
        if d[0] * ops::plane(&d) < 2 {
            return Err(Error::Shape(format!("layer {}: batch statistics need at least 2 values per channel", bn.name)));
        }
        let s = batch_stats(x.values(), d);
        bn.update_running(&s);
        (s.mean, s.cov)
    } else {
        (bn.running_mean.clone(), bn.running_cov.clone())
    };
    let whiten = cov.iter().map(|v| inv_sqrt_2x2(bn.regularized(*v))).collect::<Result<Vec<_>>>()?;
    let (y, _) = bn_apply(bn, x.values(), d, &mean, &whiten);
    ComplexTensor::from_vec(&d, y)
}

/// Dense complex projection of the flattened per-sample features.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexLinear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`.
    pub weight: Vec<C64>,
    pub bias: Vec<C64>,
}

impl ComplexLinear {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.to_string(),
            in_features,
            out_features,
            weight: vec![C64::new(0.0, 0.0); in_features * out_features],
            bias: vec![C64::new(0.0, 0.0); out_features],
        }
    }

    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rayleigh_init(&mut self.weight, self.in_features, self.out_features, &mut rng);
        self.bias.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
    }

    pub(crate) fn forward_raw(&self, x: &[C64], batch: usize) -> Result<Vec<C64>> {
        if x.len() != batch * self.in_features {
            return Err(Error::Shape(format!(
                "layer {}: expects {} features, got {}",
                self.name,
                self.in_features,
                x.len() / batch.max(1)
            )));
        }
        let mut y = Vec::with_capacity(batch * self.out_features);
        for b in 0..batch {
            let xb = &x[b * self.in_features..][..self.in_features];
            for o in 0..self.out_features {
                let row = &self.weight[o * self.in_features..][..self.in_features];
                y.push(row.iter().zip(xb).map(|(w, v)| w * v).sum::<C64>() + self.bias[o]);
            }
        }
        Ok(y)
    }

    pub(crate) fn backward_raw(&self, x: &[C64], g: &[C64], batch: usize) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
        let (fi, fo) = (self.in_features, self.out_features);
        let mut dx = vec![C64::new(0.0, 0.0); batch * fi];
        let mut dw = vec![C64::new(0.0, 0.0); fi * fo];
        let mut db = vec![C64::new(0.0, 0.0); fo];
        for b in 0..batch {
            let xb = &x[b * fi..][..fi];
            let dxb = &mut dx[b * fi..][..fi];
            for o in 0..fo {
                let go = g[b * fo + o];
                db[o] += go;
                let row = &self.weight[o * fi..][..fi];
                let drow = &mut dw[o * fi..][..fi];
                for j in 0..fi {
                    dxb[j] += row[j].conj() * go;
                    drow[j] += go * xb[j].conj();
                }
            }
        }
        (dx, dw, db)
    }
}

/// `(1/N) Σ |pred − target|²` averaged over the batch.
pub fn complex_l2(pred: &[C64], target: &[C64], batch: usize) -> Result<(f64, Vec<C64>)> {
    if pred.len() != target.len() || batch == 0 || pred.len() % batch != 0 {
        return Err(Error::Shape(format!("loss of {} predictions against {} targets", pred.len(), target.len())));
    }
    let scale = 1.0 / pred.len() as f64;
    let loss = pred.iter().zip(target).map(|(p, t)| (p - t).norm_sqr()).sum::<f64>() * scale;
    let grad = pred.iter().zip(target).map(|(p, t)| (p - t) * (2.0 * scale)).collect();
    Ok((loss, grad))
}

pub fn complex_l2_loss(pred: &crate::aberration::AberrationFunction, target: &crate::aberration::AberrationFunction) -> Result<f64> {
    Ok(complex_l2(pred.values(), target.values(), 1)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, SymmetricEigen};

    fn cplx(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect()
    }

    #[test]
    fn unit_kernel_examples() {
        let mut l = ComplexConvLayer::new("t", 1, 1, [1, 1, 1]).unwrap();
        l.weight[0] = C64::new(0.0, 1.0);
        let x = ComplexTensor::from_vec(&[1, 1, 1, 1, 1], vec![C64::new(1.0, 0.0)]).unwrap();
        assert_eq!(complex_conv_forward(&x, &l).unwrap().values()[0], C64::new(0.0, 1.0));
        l.weight[0] = C64::new(1.0, 1.0);
        let x = ComplexTensor::from_vec(&[1, 1, 1, 1, 1], vec![C64::new(1.0, -1.0)]).unwrap();
        assert_eq!(complex_conv_forward(&x, &l).unwrap().values()[0], C64::new(2.0, 0.0));
    }

    #[test]
    fn inverse_sqrt_matches_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = rng.random::<f64>() * 3.0 + 0.01;
            let c = rng.random::<f64>() * 3.0 + 0.01;
            let b = (rng.random::<f64>() - 0.5) * 1.9 * (a * c).sqrt();
            let m = Matrix2::new(a, b, b, c);
            let e = SymmetricEigen::new(m);
            let d = Matrix2::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()));
            let oracle = e.eigenvectors * d * e.eigenvectors.transpose();
            let w = inv_sqrt_2x2([a, b, c]).unwrap();
            assert!((w[0] - oracle[(0, 0)]).abs() <= 1e-10 * oracle.norm());
            assert!((w[1] - oracle[(0, 1)]).abs() <= 1e-10 * oracle.norm());
            assert!((w[2] - oracle[(1, 1)]).abs() <= 1e-10 * oracle.norm());
        }
        assert!(inv_sqrt_2x2([1.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn sylvester_solution() {
        let s = [2.0, 0.3, 1.1];
        let g = [0.7, -0.2, 0.4];
        let x = sylvester_sym(s, g);
        let sm = Matrix2::new(s[0], s[1], s[1], s[2]);
        let xm = Matrix2::new(x[0], x[1], x[1], x[2]);
        let r = sm * xm + xm * sm;
        assert!((r - Matrix2::new(g[0], g[1], g[1], g[2])).norm() < 1e-12);
    }

    #[test]
    fn batchnorm_whitens_random_batches() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = [4, 3, 2, 3, 5];
            let v: Vec<C64> = cplx(&mut rng, ops::count(&d))
                .into_iter()
                .map(|z| C64::new(3.0 * z.re + 1.0, 2.0 * z.re + 0.5 * z.im - 2.0))
                .collect();
            let x = ComplexTensor::from_vec(&d, v).unwrap();
            let mut bn = ComplexBatchNorm::new("bn", 3, false);
            bn.eps = 0.0;
            let y = complex_batchnorm_forward(&x, &mut bn, true).unwrap();
            let s = batch_stats(y.values(), d);
            for c in 0..3 {
                assert!(s.mean[c].norm() <= 1e-9);
                assert!((s.cov[c][0] - 1.0).abs() <= 1e-6 && s.cov[c][1].abs() <= 1e-6 && (s.cov[c][2] - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn batchnorm_trivial_cases() {
        let d = [2, 1, 1, 1, 4];
        let v = vec![C64::new(2.0, -1.0); 8];
        let mut bn = ComplexBatchNorm::new("bn", 1, false);
        let y = complex_batchnorm_forward(&ComplexTensor::from_vec(&d, v).unwrap(), &mut bn, true).unwrap();
        assert!(y.values().iter().all(|z| z.norm() == 0.0));
        // Zero mean and identity covariance pass through up to ε.
        let s = std::f64::consts::SQRT_2;
        let v = vec![
            C64::new(s, 0.0),
            C64::new(-s, 0.0),
            C64::new(0.0, s),
            C64::new(0.0, -s),
        ];
        let x = ComplexTensor::from_vec(&[1, 1, 1, 1, 4], v).unwrap();
        let y = complex_batchnorm_forward(&x, &mut ComplexBatchNorm::new("bn", 1, false), true).unwrap();
        assert!(y.rel_error(&x) < 1e-4);
    }

    #[test]
    fn eval_batchnorm_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = [2, 2, 1, 2, 3];
        let mut bn = ComplexBatchNorm::new("bn", 2, true);
        bn.running_mean = vec![C64::new(0.3, -0.1), C64::new(-1.0, 2.0)];
        bn.running_cov = vec![[2.0, 0.4, 0.7], [0.5, -0.1, 1.5]];
        bn.beta = vec![C64::new(0.2, 0.1), C64::new(-0.3, 0.0)];
        let a = ComplexTensor::from_vec(&d, cplx(&mut rng, 24)).unwrap();
        let b = ComplexTensor::from_vec(&d, cplx(&mut rng, 24)).unwrap();
        let t = 0.37;
        let mix = ComplexTensor::from_vec(&d, a.values().iter().zip(b.values()).map(|(x, y)| x * t + y * (1.0 - t)).collect()).unwrap();
        let fa = complex_batchnorm_forward(&a, &mut bn, false).unwrap();
        let fb = complex_batchnorm_forward(&b, &mut bn, false).unwrap();
        let fm = complex_batchnorm_forward(&mix, &mut bn, false).unwrap();
        for ((m, x), y) in fm.values().iter().zip(fa.values()).zip(fb.values()) {
            assert!((m - (x * t + y * (1.0 - t))).norm() < 1e-12);
        }
    }

    #[test]
    fn rayleigh_moments_and_phase() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200_000;
        let mut w = vec![C64::new(0.0, 0.0); n];
        let (fi, fo) = (27, 54);
        rayleigh_init(&mut w, fi, fo, &mut rng);
        let sigma2 = 1.0 / (fi + fo) as f64;
        let m2 = w.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        assert!((m2 / (2.0 * sigma2) - 1.0).abs() <= 0.05);
        let bins = 20;
        let mut hist = vec![0usize; bins];
        for v in &w {
            let k = (((v.arg() + PI) / (2.0 * PI)) * bins as f64) as usize;
            hist[k.min(bins - 1)] += 1;
        }
        let e = n as f64 / bins as f64;
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - e).powi(2) / e).sum();
        // Upper 1% point of chi-square with 19 degrees of freedom.
        assert!(chi2 < 36.19, "{chi2}");
    }

    #[test]
    fn init_is_seeded() {
        let mut a = ComplexConvLayer::new("a", 2, 3, [3, 3, 3]).unwrap();
        let mut b = a.clone();
        init_conv(&mut a, 5);
        init_conv(&mut b, 5);
        assert_eq!(a.weight.iter().map(|w| (w.re.to_bits(), w.im.to_bits())).collect::<Vec<_>>(),
                   b.weight.iter().map(|w| (w.re.to_bits(), w.im.to_bits())).collect::<Vec<_>>());
    }

    #[test]
    fn loss_examples() {
        let t = vec![C64::new(0.5, -0.2), C64::new(1.0, 0.3)];
        assert_eq!(complex_l2(&t, &t, 1).unwrap().0, 0.0);
        let p: Vec<C64> = t.iter().map(|v| v + C64::new(1.0, 1.0)).collect();
        assert!((complex_l2(&p, &t, 1).unwrap().0 - 2.0).abs() < 1e-15);
        assert!(complex_l2(&p[..1], &t, 1).is_err());
    }
}
