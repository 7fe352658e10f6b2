//! The aberration-regression network and its shape chain.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aberration::AberrationFunction;
use crate::beamform::RealignedPatch;
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor, C64};
use crate::ulmt;

use super::graph::{Graph, Var};
use super::layers::{init_conv, ComplexBatchNorm, ComplexConvLayer, ComplexLinear};
use super::ops::Dims5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalePreset {
    Paper,
    Desk,
}

impl std::str::FromStr for ScalePreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            _ => Err(Error::Config(format!("unknown scale preset {s:?}"))),
        }
    }
}

/// Input extents and channel scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub angles: usize,
    pub frames: usize,
    pub times: usize,
    pub elements: usize,
    /// Every full-scale channel count is divided by this.
    pub channel_divisor: usize,
    pub dropout: f64,
}

impl Architecture {
    pub fn paper() -> Self {
        Self {
            angles: 11,
            frames: 16,
            times: 17,
            elements: 128,
            channel_divisor: 1,
            dropout: 0.2,
        }
    }

    pub fn desk() -> Self {
        Self {
            angles: 3,
            frames: 8,
            times: 9,
            elements: 16,
            channel_divisor: 8,
            dropout: 0.2,
        }
    }

    pub fn preset(scale: ScalePreset) -> Self {
        match scale {
            ScalePreset::Paper => Self::paper(),
            ScalePreset::Desk => Self::desk(),
        }
    }

    fn ch(&self, full: usize) -> Result<usize> {
        if self.channel_divisor == 0 || full % self.channel_divisor != 0 {
            return Err(Error::Config(format!(
                "channel divisor {} does not divide channel count {full}",
                self.channel_divisor
            )));
        }
        Ok(full / self.channel_divisor)
    }
}

// Indices into `CvCnnModel::convs`; each convolution has a matching normalization.
const C1A: usize = 0;
const C1B: usize = 1;
const C1C: usize = 2;
const I1R: usize = 3;
const I1C: usize = 4;
const I2R: usize = 5;
const I2A: usize = 6;
const I2B: usize = 7;
const I3: usize = 8;
const C2A: usize = 9;
const C2B: usize = 10;
const C2C: usize = 11;
const C2D: usize = 12;
const VD1: usize = 13;
const VD2: usize = 14;
const VU1: usize = 15;
const VU2: usize = 16;
const DCA: usize = 17;
const DCB: usize = 18;
const NUM_CONVS: usize = 19;

#[derive(Debug, Clone, PartialEq)]
pub struct CvCnnModel {
    pub arch: Architecture,
    pub preset: Option<ScalePreset>,
    pub seed: u64,
    pub convs: Vec<ComplexConvLayer>,
    pub norms: Vec<ComplexBatchNorm>,
    pub fc: ComplexLinear,
}

pub fn build_model(scale: ScalePreset, seed: u64) -> Result<CvCnnModel> {
    let mut m = CvCnnModel::new(Architecture::preset(scale), seed)?;
    m.preset = Some(scale);
    Ok(m)
}

impl CvCnnModel {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&arch.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        let a = &arch;
        let k1 = [1, 1, 1];
        let k3 = [3, 3, 3];
        let line = [1, 1, 3];
        let half = [1, 1, 2];
        let conv = |name: &str, i: usize, o: usize, k: [usize; 3]| ComplexConvLayer::new(name, i, o, k);
        let c32 = a.ch(32)?;
        let convs = vec![
            conv("conv1.a", a.angles, a.ch(256)?, [3, 3, 7])?.with_padding([1, 1, 3]),
            conv("conv1.b", a.ch(256)?, a.ch(128)?, [2, 3, 4])?.with_stride([2, 2, 2]).with_padding([0, 1, 1]),
            conv("conv1.c", a.ch(128)?, c32, k1)?,
            conv("inception.b1.reduce", c32, a.ch(48)?, k1)?,
            conv("inception.b1.conv5", a.ch(48)?, a.ch(64)?, [5, 5, 5])?.same(),
            conv("inception.b2.reduce", c32, a.ch(64)?, k1)?,
            conv("inception.b2.conv3a", a.ch(64)?, a.ch(96)?, k3)?.same(),
            conv("inception.b2.conv3b", a.ch(96)?, a.ch(96)?, k3)?.same(),
            conv("inception.b3.conv1", c32, a.ch(64)?, k1)?,
            conv("conv2.a", a.ch(256)?, a.ch(64)?, k3)?.same(),
            conv("conv2.b", a.ch(64)?, c32, [4, 4, 4])?.with_stride([2, 2, 2]).with_padding([1, 1, 1]),
            conv("conv2.c", c32, c32, k1)?,
            conv("conv2.d", c32, a.ch(16)?, k3)?.same(),
            conv("vnet.down1", a.ch(16)?, c32, line)?.with_stride(half).with_padding([0, 0, 1]),
            conv("vnet.down2", c32, a.ch(64)?, line)?.with_stride(half).with_padding([0, 0, 1]),
            conv("vnet.up1", a.ch(64)?, a.ch(16)?, line)?.with_stride(half).with_padding([0, 0, 1]).transposed([0, 0, 1]),
            conv("vnet.up2", a.ch(16)? + c32, a.ch(8)?, line)?.with_stride(half).with_padding([0, 0, 1]).transposed([0, 0, 1]),
            conv("deconv.a", a.ch(8)?, a.ch(64)?, line)?.with_stride(half).with_padding([0, 0, 1]).transposed([0, 0, 1]),
            conv("deconv.b", a.ch(64)?, a.ch(128)?, line)?.with_stride(half).with_padding([0, 0, 1]).transposed([0, 0, 1]),
        ];
        debug_assert_eq!(convs.len(), NUM_CONVS);
        let norms = convs.iter().map(|c| ComplexBatchNorm::new(&format!("{}.bn", c.name), c.out_ch, true)).collect();
        let fc = ComplexLinear::new("fc", a.ch(128)? * a.elements, a.elements);
        let mut m = Self {
            arch,
            preset: None,
            seed,
            convs,
            norms,
            fc,
        };
        m.shape_chain()?;
        m.init(seed);
        Ok(m)
    }

    fn init(&mut self, seed: u64) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            init_conv(c, seed.wrapping_mul(1_000_003).wrapping_add(i as u64));
        }
        self.fc.init(seed.wrapping_mul(1_000_003).wrapping_add(NUM_CONVS as u64));
    }

    pub fn input_dims(&self, batch: usize) -> Dims5 {
        let a = &self.arch;
        [batch, a.angles, a.frames, a.times, a.elements]
    }

    /// Output extents of every layer for a single-sample batch.
    pub fn shape_chain(&self) -> Result<Vec<(String, Dims5)>> {
        let mut out = Vec::new();
        let step = |i: usize, d: Dims5, out: &mut Vec<(String, Dims5)>| -> Result<Dims5> {
            let y = self.convs[i].output_dims(d)?;
            out.push((self.convs[i].name.clone(), y));
            Ok(y)
        };
        let x = self.input_dims(1);
        let h = step(C1A, x, &mut out)?;
        let h = step(C1B, h, &mut out)?;
        let h = step(C1C, h, &mut out)?;
        let b1 = step(I1C, step(I1R, h, &mut out)?, &mut out)?;
        let b2 = step(I2B, step(I2A, step(I2R, h, &mut out)?, &mut out)?, &mut out)?;
        let b3 = step(I3, h, &mut out)?;
        let cat = [1, b1[1] + b2[1] + b3[1] + h[1], h[2], h[3], h[4]];
        out.push(("inception.concat".into(), cat));
        let h = step(C2A, cat, &mut out)?;
        let h = step(C2B, h, &mut out)?;
        let h = step(C2C, h, &mut out)?;
        let h = step(C2D, h, &mut out)?;
        let g = [1, h[1], 1, 1, h[4]];
        out.push(("global_pool".into(), g));
        let d1 = step(VD1, g, &mut out)?;
        let d2 = step(VD2, d1, &mut out)?;
        let u1 = step(VU1, d2, &mut out)?;
        if u1[4] != d1[4] {
            return Err(Error::Shape(format!(
                "layer vnet.up1: upsampled length {} does not match skip length {}",
                u1[4], d1[4]
            )));
        }
        let skip = [1, u1[1] + d1[1], 1, 1, u1[4]];
        let u2 = step(VU2, skip, &mut out)?;
        let t = step(DCB, step(DCA, u2, &mut out)?, &mut out)?;
        let feats = t[1] * t[2] * t[3] * t[4];
        if feats != self.fc.in_features {
            return Err(Error::Shape(format!(
                "layer fc: expects {} features, chain delivers {feats} (elements must be a multiple of 16)",
                self.fc.in_features
            )));
        }
        out.push(("fc".into(), [1, self.fc.out_features, 1, 1, 1]));
        Ok(out)
    }

    pub fn num_slots(&self) -> usize {
        2 * NUM_CONVS + 2 * NUM_CONVS + 2
    }

    fn bn_slot(i: usize) -> usize {
        2 * NUM_CONVS + 2 * i
    }

    /// Parameters in slot order.
    pub fn params(&self) -> Vec<&Vec<C64>> {
        let mut v = Vec::with_capacity(self.num_slots());
        for c in &self.convs {
            v.push(&c.weight);
            v.push(&c.bias);
        }
        for n in &self.norms {
            v.push(&n.gamma);
            v.push(&n.beta);
        }
        v.push(&self.fc.weight);
        v.push(&self.fc.bias);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<C64>> {
        let mut v = Vec::with_capacity(2 * NUM_CONVS * 2 + 2);
        for c in &mut self.convs {
            v.push(&mut c.weight);
            v.push(&mut c.bias);
        }
        for n in &mut self.norms {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
        }
        v.push(&mut self.fc.weight);
        v.push(&mut self.fc.bias);
        v
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn weight_norm_sqr(&self) -> f64 {
        self.params().iter().flat_map(|p| p.iter()).map(|v| v.norm_sqr()).sum()
    }

    fn block<'a>(&'a self, g: &mut Graph<'a>, x: Var, i: usize) -> Result<Var> {
        let y = g.conv(x, &self.convs[i], 2 * i)?;
        let y = g.batchnorm(y, &self.norms[i], Self::bn_slot(i), i)?;
        Ok(g.crelu(y))
    }

    /// Records the forward pass of a `[batch, angles, frames, times, elements]` input.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        let d = g.dims(x);
        if d[1..] != self.input_dims(1)[1..] {
            return Err(Error::Shape(format!("model expects input {:?}, got {:?}", &self.input_dims(1)[1..], &d[1..])));
        }
        let p = self.arch.dropout;
        let h = self.block(g, x, C1A)?;
        let h = self.block(g, h, C1B)?;
        let h = self.block(g, h, C1C)?;
        let h = g.dropout(h, p, rng);
        let b1 = self.block(g, h, I1R)?;
        let b1 = self.block(g, b1, I1C)?;
        let b2 = self.block(g, h, I2R)?;
        let b2 = self.block(g, b2, I2A)?;
        let b2 = self.block(g, b2, I2B)?;
        let b3 = self.block(g, h, I3)?;
        let b4 = g.avg_pool3(h);
        let h = g.concat(&[b1, b2, b3, b4])?;
        let h = g.dropout(h, p, rng);
        let h = self.block(g, h, C2A)?;
        let h = self.block(g, h, C2B)?;
        let h = self.block(g, h, C2C)?;
        let h = g.dropout(h, p, rng);
        let h = self.block(g, h, C2D)?;
        let h = g.global_avg(h);
        let d1 = self.block(g, h, VD1)?;
        let d2 = self.block(g, d1, VD2)?;
        let u1 = self.block(g, d2, VU1)?;
        let u1 = g.concat(&[u1, d1])?;
        let u2 = self.block(g, u1, VU2)?;
        let t = self.block(g, u2, DCA)?;
        let t = self.block(g, t, DCB)?;
        g.linear(t, &self.fc, 2 * NUM_CONVS + 2 * NUM_CONVS)
    }

    /// Evaluation-mode output for a prepared batch, as raw complex values `[batch × Ne]`.
    pub fn predict(&self, input: &ComplexTensor) -> Result<Vec<C64>> {
        let mut g = Graph::new(false);
        let x = g.input(input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward(&mut g, x, &mut rng)?;
        Ok(g.value(y).to_vec())
    }

    /// Writes a manifest plus one ULMT tensor per parameter and normalization statistic.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let layers: Vec<LayerEntry> = self
            .shape_chain()?
            .into_iter()
            .map(|(name, d)| LayerEntry { name, output: d[1..].to_vec() })
            .collect();
        let params: Vec<usize> = self.params().iter().map(|p| p.len()).collect();
        let manifest = Manifest {
            preset: self.preset,
            arch: self.arch.clone(),
            seed: self.seed,
            layers,
            params,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        let mpath = dir.join("manifest.json");
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        for (i, p) in self.params().iter().enumerate() {
            let t = ComplexTensor::from_vec(&[p.len()], p.to_vec())?;
            ulmt::write_complex(dir.join(format!("param_{i:03}.ulmt")), &t, false)?;
        }
        for (i, n) in self.norms.iter().enumerate() {
            let t = ComplexTensor::from_vec(&[n.channels], n.running_mean.clone())?;
            ulmt::write_complex(dir.join(format!("bn_mean_{i:03}.ulmt")), &t, false)?;
            let cov: Vec<f64> = n.running_cov.iter().flat_map(|c| c.iter().copied()).collect();
            ulmt::write_real(dir.join(format!("bn_cov_{i:03}.ulmt")), &RealTensor::from_vec(&[n.channels, 3], cov)?)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join("manifest.json");
        let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", mpath.display())))?;
        let mut m = Self::new(manifest.arch, manifest.seed)?;
        m.preset = manifest.preset;
        let expected: Vec<usize> = m.params().iter().map(|p| p.len()).collect();
        if expected != manifest.params {
            return Err(Error::Format("checkpoint parameter sizes do not match the architecture".into()));
        }
        for (i, p) in m.params_mut().into_iter().enumerate() {
            let t = ulmt::read(dir.join(format!("param_{i:03}.ulmt")))?.into_complex()?;
            if t.len() != p.len() {
                return Err(Error::Format(format!("parameter {i} has {} values, expected {}", t.len(), p.len())));
            }
            *p = t.into_values();
        }
        for (i, n) in m.norms.iter_mut().enumerate() {
            n.running_mean = ulmt::read(dir.join(format!("bn_mean_{i:03}.ulmt")))?.into_complex()?.into_values();
            let cov = ulmt::read(dir.join(format!("bn_cov_{i:03}.ulmt")))?.into_real()?.into_values();
            if n.running_mean.len() != n.channels || cov.len() != 3 * n.channels {
                return Err(Error::Format(format!("normalization statistics {i} have the wrong size")));
            }
            n.running_cov = cov.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        }
        Ok(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    output: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    preset: Option<ScalePreset>,
    arch: Architecture,
    seed: u64,
    layers: Vec<LayerEntry>,
    params: Vec<usize>,
}

/// Copies a patch into a single-sample network input scaled to unit RMS.
pub fn patch_to_input(patch: &RealignedPatch) -> Result<ComplexTensor> {
    let d = patch.data.dims();
    let rms = (patch.data.norm_sqr() / patch.data.len().max(1) as f64).sqrt();
    let s = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let v = patch.data.values().iter().map(|z| z * s).collect();
    ComplexTensor::from_vec(&[1, d[0], d[1], d[2], d[3]], v)
}

/// Stacks prepared single-sample inputs along the batch axis.
pub fn stack_inputs(inputs: &[&ComplexTensor]) -> Result<ComplexTensor> {
    let d = inputs.first().ok_or_else(|| Error::Shape("empty batch".into()))?.dims().to_vec();
    let mut v = Vec::with_capacity(inputs.len() * inputs[0].len());
    for t in inputs {
        if t.dims() != d.as_slice() {
            return Err(Error::Shape("batch members differ in shape".into()));
        }
        v.extend_from_slice(t.values());
    }
    ComplexTensor::from_vec(&[inputs.len(), d[1], d[2], d[3], d[4]], v)
}

/// Evaluation-mode estimate for one realigned patch.
pub fn infer(model: &CvCnnModel, patch: &RealignedPatch, center_frequency: f64) -> Result<AberrationFunction> {
    let x = patch_to_input(patch)?;
    let y = model.predict(&x)?;
    AberrationFunction::from_unconstrained(&y, center_frequency, 1e-3)
}
