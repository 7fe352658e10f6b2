//! Reverse-mode tape over the complex layers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, C64};

use super::layers::{
    batch_stats, bn_apply, inv_sqrt_2x2, sylvester_sym, sym_mul_vec, BatchStats, ComplexBatchNorm, ComplexConvLayer,
    ComplexLinear, Sym2,
};
use super::ops::{self, Dims5};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

enum Op<'a> {
    Input,
    Conv {
        x: usize,
        layer: &'a ComplexConvLayer,
        slot: usize,
    },
    BatchNorm {
        x: usize,
        layer: &'a ComplexBatchNorm,
        slot: usize,
        mean: Vec<C64>,
        whiten: Vec<Sym2>,
        xhat: Vec<C64>,
        batch: bool,
    },
    CRelu {
        x: usize,
    },
    Dropout {
        x: usize,
        mask: Vec<f64>,
    },
    AvgPool {
        x: usize,
    },
    GlobalAvg {
        x: usize,
    },
    Concat {
        xs: Vec<usize>,
    },
    Linear {
        x: usize,
        layer: &'a ComplexLinear,
        slot: usize,
    },
}

struct Node<'a> {
    value: Vec<C64>,
    dims: Dims5,
    op: Op<'a>,
}

/// Gradients for every parameter slot and every node.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Vec<C64>>,
    nodes: Vec<Option<Vec<C64>>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[C64]> {
        self.nodes[v.0].as_deref()
    }
}

pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    pub training: bool,
    /// Batch statistics of each normalization node, keyed by the caller's index.
    pub bn_stats: Vec<(usize, BatchStats)>,
}

fn add(grads: &mut [Option<Vec<C64>>], i: usize, g: Vec<C64>) {
    match &mut grads[i] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

fn accumulate(slot: &mut Vec<C64>, g: &[C64]) {
    if slot.is_empty() {
        slot.extend_from_slice(g);
    } else {
        for (a, b) in slot.iter_mut().zip(g) {
            *a += b;
        }
    }
}

impl<'a> Graph<'a> {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            bn_stats: Vec::new(),
        }
    }

    fn push(&mut self, value: Vec<C64>, dims: Dims5, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, dims, op });
        Var(self.nodes.len() - 1)
    }

    pub fn dims(&self, v: Var) -> Dims5 {
        self.nodes[v.0].dims
    }

    pub fn value(&self, v: Var) -> &[C64] {
        &self.nodes[v.0].value
    }

    pub fn tensor(&self, v: Var) -> Result<ComplexTensor> {
        ComplexTensor::from_vec(&self.nodes[v.0].dims, self.nodes[v.0].value.clone())
    }

    pub fn input(&mut self, t: &ComplexTensor) -> Result<Var> {
        let d = super::layers::dims5(t)?;
        Ok(self.push(t.values().to_vec(), d, Op::Input))
    }

    /// Convolution whose weight and bias occupy slots `slot` and `slot + 1`.
    pub fn conv(&mut self, x: Var, layer: &'a ComplexConvLayer, slot: usize) -> Result<Var> {
        let (y, yd) = layer.forward_raw(&self.nodes[x.0].value, self.nodes[x.0].dims)?;
        Ok(self.push(y, yd, Op::Conv { x: x.0, layer, slot }))
    }

    /// Batch normalization with `Γ` in `slot` and `β` in `slot + 1`.
    pub fn batchnorm(&mut self, x: Var, layer: &'a ComplexBatchNorm, slot: usize, index: usize) -> Result<Var> {
        let d = self.nodes[x.0].dims;
        if d[1] != layer.channels {
            return Err(Error::Shape(format!("layer {}: expects {} channels, got {}", layer.name, layer.channels, d[1])));
        }
        let (mean, cov) = if self.training {
            if d[0] * ops::plane(&d) < 2 {
                return Err(Error::Shape(format!("layer {}: batch statistics need at least 2 values per channel", layer.name)));
            }
            let s = batch_stats(&self.nodes[x.0].value, d);
            let out = (s.mean.clone(), s.cov.clone());
            self.bn_stats.push((index, s));
            out
        } else {
            (layer.running_mean.clone(), layer.running_cov.clone())
        };
        let whiten = cov.iter().map(|v| inv_sqrt_2x2(layer.regularized(*v))).collect::<Result<Vec<_>>>()?;
        let (y, xhat) = bn_apply(layer, &self.nodes[x.0].value, d, &mean, &whiten);
        let batch = self.training;
        Ok(self.push(
            y,
            d,
            Op::BatchNorm {
                x: x.0,
                layer,
                slot,
                mean,
                whiten,
                xhat,
                batch,
            },
        ))
    }

    pub fn crelu(&mut self, x: Var) -> Var {
        let y = ops::crelu(&self.nodes[x.0].value);
        let d = self.nodes[x.0].dims;
        self.push(y, d, Op::CRelu { x: x.0 })
    }

    /// Drops whole complex units with probability `p` and rescales survivors;
    /// the identity outside training.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let y = self.nodes[x.0].value.iter().zip(&mask).map(|(v, m)| v * *m).collect();
        let d = self.nodes[x.0].dims;
        self.push(y, d, Op::Dropout { x: x.0, mask })
    }

    pub fn avg_pool3(&mut self, x: Var) -> Var {
        let d = self.nodes[x.0].dims;
        let y = ops::avg_pool3(&self.nodes[x.0].value, d);
        self.push(y, d, Op::AvgPool { x: x.0 })
    }

    /// Mean over the frame and time axes.
    pub fn global_avg(&mut self, x: Var) -> Var {
        let d = self.nodes[x.0].dims;
        let y = ops::global_avg_dh(&self.nodes[x.0].value, d);
        self.push(y, [d[0], d[1], 1, 1, d[4]], Op::GlobalAvg { x: x.0 })
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let d0 = self.nodes[xs[0].0].dims;
        for v in xs {
            let d = self.nodes[v.0].dims;
            if d[0] != d0[0] || d[2..] != d0[2..] {
                return Err(Error::Shape(format!("concat of {d0:?} and {d:?}")));
            }
        }
        let ch: usize = xs.iter().map(|v| self.nodes[v.0].dims[1]).sum();
        let p = ops::plane(&d0);
        let mut y = Vec::with_capacity(d0[0] * ch * p);
        for b in 0..d0[0] {
            for v in xs {
                let n = &self.nodes[v.0];
                y.extend_from_slice(&n.value[b * n.dims[1] * p..][..n.dims[1] * p]);
            }
        }
        Ok(self.push(y, [d0[0], ch, d0[2], d0[3], d0[4]], Op::Concat { xs: xs.iter().map(|v| v.0).collect() }))
    }

    pub fn linear(&mut self, x: Var, layer: &'a ComplexLinear, slot: usize) -> Result<Var> {
        let d = self.nodes[x.0].dims;
        let y = layer.forward_raw(&self.nodes[x.0].value, d[0])?;
        Ok(self.push(y, [d[0], layer.out_features, 1, 1, 1], Op::Linear { x: x.0, layer, slot }))
    }

    /// Back-propagates `seed = ∂L/∂Re + i ∂L/∂Im` from `out`.
    pub fn backward(&self, out: Var, seed: &[C64], num_slots: usize) -> Result<Gradients> {
        if seed.len() != self.nodes[out.0].value.len() {
            return Err(Error::Shape("seed gradient does not match the output".into()));
        }
        let mut grads: Vec<Option<Vec<C64>>> = vec![None; self.nodes.len()];
        let mut params = vec![Vec::new(); num_slots];
        grads[out.0] = Some(seed.to_vec());
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Conv { x, layer, slot } => {
                    let xn = &self.nodes[*x];
                    let (dx, dw, db) = layer.backward_raw(&xn.value, xn.dims, &g, node.dims);
                    accumulate(&mut params[*slot], &dw);
                    accumulate(&mut params[*slot + 1], &db);
                    add(&mut grads, *x, dx);
                }
                Op::BatchNorm {
                    x,
                    layer,
                    slot,
                    mean,
                    whiten,
                    xhat,
                    batch,
                } => {
                    let xn = &self.nodes[*x];
                    let (dx, dgamma, dbeta) = bn_backward(layer, &xn.value, xn.dims, &g, mean, whiten, xhat, *batch);
                    if layer.affine {
                        accumulate(&mut params[*slot], &dgamma);
                        accumulate(&mut params[*slot + 1], &dbeta);
                    }
                    add(&mut grads, *x, dx);
                }
                Op::CRelu { x } => {
                    let dx = ops::crelu_backward(&self.nodes[*x].value, &g);
                    add(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(v, m)| v * *m).collect();
                    add(&mut grads, *x, dx);
                }
                Op::AvgPool { x } => {
                    let dx = ops::avg_pool3_backward(&g, node.dims);
                    add(&mut grads, *x, dx);
                }
                Op::GlobalAvg { x } => {
                    let dx = ops::global_avg_dh_backward(&g, self.nodes[*x].dims);
                    add(&mut grads, *x, dx);
                }
                Op::Concat { xs } => {
                    let p = ops::plane(&node.dims);
                    let mut off = 0;
                    let mut parts: Vec<Vec<C64>> = xs.iter().map(|_| Vec::new()).collect();
                    for _ in 0..node.dims[0] {
                        for (k, x) in xs.iter().enumerate() {
                            let n = self.nodes[*x].dims[1] * p;
                            parts[k].extend_from_slice(&g[off..off + n]);
                            off += n;
                        }
                    }
                    for (x, part) in xs.iter().zip(parts) {
                        add(&mut grads, *x, part);
                    }
                }
                Op::Linear { x, layer, slot } => {
                    let xn = &self.nodes[*x];
                    let (dx, dw, db) = layer.backward_raw(&xn.value, &g, xn.dims[0]);
                    accumulate(&mut params[*slot], &dw);
                    accumulate(&mut params[*slot + 1], &db);
                    add(&mut grads, *x, dx);
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { params, nodes: grads })
    }
}

#[allow(clippy::too_many_arguments)]
fn bn_backward(
    bn: &ComplexBatchNorm,
    x: &[C64],
    d: Dims5,
    g: &[C64],
    mean: &[C64],
    whiten: &[Sym2],
    xhat: &[C64],
    batch: bool,
) -> (Vec<C64>, Vec<C64>, Vec<C64>) {
    let p = ops::plane(&d);
    let ch = d[1];
    let m = (d[0] * p) as f64;
    let mut dgamma = vec![C64::new(0.0, 0.0); 3 * ch];
    let mut dbeta = vec![C64::new(0.0, 0.0); ch];
    // Gradient with respect to the whitened values.
    let mut gx = vec![C64::new(0.0, 0.0); x.len()];
    for (i, chunk) in g.chunks(p).enumerate() {
        let c = i % ch;
        let gam = bn.gamma_of(c);
        for (j, gv) in chunk.iter().enumerate() {
            let k = i * p + j;
            if bn.affine {
                let h = xhat[k];
                dgamma[3 * c].re += gv.re * h.re;
                dgamma[3 * c + 1].re += gv.re * h.im + gv.im * h.re;
                dgamma[3 * c + 2].re += gv.im * h.im;
                dbeta[c] += gv;
                let t = sym_mul_vec(gam, [gv.re, gv.im]);
                gx[k] = C64::new(t[0], t[1]);
            } else {
                gx[k] = *gv;
            }
        }
    }
    let mut dx = vec![C64::new(0.0, 0.0); x.len()];
    for c in 0..ch {
        let w = whiten[c];
        let idx = |b: usize| (b * ch + c) * p;
        let mut gw = [[0.0; 2]; 2];
        for b in 0..d[0] {
            for j in 0..p {
                let k = idx(b) + j;
                let z = x[k] - mean[c];
                let t = sym_mul_vec(w, [gx[k].re, gx[k].im]);
                dx[k] = C64::new(t[0], t[1]);
                gw[0][0] += gx[k].re * z.re;
                gw[0][1] += gx[k].re * z.im;
                gw[1][0] += gx[k].im * z.re;
                gw[1][1] += gx[k].im * z.im;
            }
        }
        if !batch {
            continue;
        }
        // GS = −W GW W, then GV solves S GV + GV S = sym(GS) with S = W⁻¹.
        let wm = [[w[0], w[1]], [w[1], w[2]]];
        let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
            let mut r = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                }
            }
            r
        };
        let gs = mul(mul(wm, gw), wm);
        let gs_sym = [-gs[0][0], -0.5 * (gs[0][1] + gs[1][0]), -gs[1][1]];
        let det = w[0] * w[2] - w[1] * w[1];
        let s = [w[2] / det, -w[1] / det, w[0] / det];
        let gv = sylvester_sym(s, gs_sym);
        let mut acc = C64::new(0.0, 0.0);
        for b in 0..d[0] {
            for j in 0..p {
                let k = idx(b) + j;
                let z = x[k] - mean[c];
                let t = sym_mul_vec(gv, [z.re, z.im]);
                dx[k] += C64::new(2.0 * t[0] / m, 2.0 * t[1] / m);
                acc += dx[k];
            }
        }
        let mu = acc / m;
        for b in 0..d[0] {
            for j in 0..p {
                dx[idx(b) + j] -= mu;
            }
        }
    }
    (dx, dgamma, dbeta)
}
