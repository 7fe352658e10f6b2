//! Minibatch Adam training on the complex L2 loss.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aberration::AberrationFunction;
use crate::beamform::RealignedPatch;
use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, C64};

use super::graph::Graph;
use super::layers::{complex_l2, BatchStats};
use super::model::{patch_to_input, stack_inputs, CvCnnModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Per-epoch exponential decay of the learning rate.
    pub lr_decay: f64,
    pub l2_alpha: f64,
    pub dropout_p: f64,
    /// Trailing share of the shuffled dataset held out for validation.
    pub validation_fraction: f64,
    pub rng_seed: u64,
    /// Stop once a minibatch loss reaches this value.
    pub target_loss: Option<f64>,
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 25,
            lr0: 1e-4,
            lr_decay: 0.99,
            l2_alpha: 1e-4,
            dropout_p: 0.2,
            validation_fraction: 0.1,
            rng_seed: 0,
            target_loss: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 {
            return Err(Error::Config("epochs must be positive and batch_size at least 2".into()));
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) || !(self.l2_alpha >= 0.0) {
            return Err(Error::Config("lr0 and l2_alpha must be non-negative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) || !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("dropout_p and validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss of every minibatch step.
    pub steps: Vec<f64>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, r.lr));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A prepared network input and its complex target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: ComplexTensor,
    pub target: Vec<C64>,
}

impl Sample {
    pub fn new(patch: &RealignedPatch, target: &AberrationFunction) -> Result<Self> {
        if patch.num_elements() != target.len() {
            return Err(Error::Shape(format!(
                "patch has {} elements, target {}",
                patch.num_elements(),
                target.len()
            )));
        }
        Ok(Self {
            input: patch_to_input(patch)?,
            target: target.values().to_vec(),
        })
    }
}

/// Adam with independent real and imaginary moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<C64>>,
    v: Vec<Vec<C64>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &CvCnnModel) -> Self {
        let zeros: Vec<Vec<C64>> = model.params().iter().map(|p| vec![C64::new(0.0, 0.0); p.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut CvCnnModel, grads: &[Vec<C64>], lr: f64, alpha: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (k, p) in model.params_mut().into_iter().enumerate() {
            let g = &grads[k];
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                let gj = g.get(j).copied().unwrap_or_default() + p[j] * (2.0 * alpha);
                m[j] = m[j] * b1 + gj * (1.0 - b1);
                v[j] = C64::new(v[j].re * b2 + (1.0 - b2) * gj.re * gj.re, v[j].im * b2 + (1.0 - b2) * gj.im * gj.im);
                let upd = |mm: f64, vv: f64| lr * (mm / c1) / ((vv / c2).sqrt() + self.eps);
                p[j].re -= upd(m[j].re, v[j].re);
                p[j].im -= upd(m[j].im, v[j].im);
            }
        }
    }
}

/// Training-mode loss and parameter gradients of one minibatch.
pub fn batch_gradients(model: &CvCnnModel, batch: &[&Sample], rng: &mut ChaCha8Rng) -> Result<(f64, Vec<Vec<C64>>, Vec<(usize, BatchStats)>)> {
    let inputs: Vec<&ComplexTensor> = batch.iter().map(|s| &s.input).collect();
    let x = stack_inputs(&inputs)?;
    let target: Vec<C64> = batch.iter().flat_map(|s| s.target.iter().copied()).collect();
    let mut g = Graph::new(true);
    let xv = g.input(&x)?;
    let y = model.forward(&mut g, xv, rng)?;
    let (loss, seed) = complex_l2(g.value(y), &target, batch.len())?;
    let grads = g.backward(y, &seed, model.num_slots())?;
    Ok((loss, grads.params, std::mem::take(&mut g.bn_stats)))
}

/// Evaluation-mode mean loss.
pub fn evaluate(model: &CvCnnModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for s in samples {
        let y = model.predict(&s.input)?;
        total += complex_l2(&y, &s.target, 1)?.0;
    }
    Ok(total / samples.len() as f64)
}

fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    // Batch statistics need two samples; fold a lone remainder into its neighbour.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() < 2) {
        let last = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(last);
        }
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Everything besides the weights needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub next_epoch: usize,
    pub steps: usize,
    pub adam: Adam,
    pub history: TrainHistory,
    pub finished: bool,
}

impl TrainState {
    pub fn new(model: &CvCnnModel) -> Self {
        Self {
            next_epoch: 0,
            steps: 0,
            adam: Adam::new(model),
            history: TrainHistory::default(),
            finished: false,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = StateMeta {
            next_epoch: self.next_epoch,
            steps: self.steps,
            adam_t: self.adam.t,
            finished: self.finished,
            epochs: self.history.epochs.clone(),
            step_losses: self.history.steps.clone(),
        };
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let path = dir.join("train_state.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            crate::ulmt::write_complex(dir.join(format!("adam_m_{i:03}.ulmt")), &ComplexTensor::from_vec(&[m.len()], m.clone())?, false)?;
            crate::ulmt::write_complex(dir.join(format!("adam_v_{i:03}.ulmt")), &ComplexTensor::from_vec(&[v.len()], v.clone())?, false)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, model: &CvCnnModel) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("train_state.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: StateMeta = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut adam = Adam::new(model);
        adam.t = meta.adam_t;
        for i in 0..adam.m.len() {
            let m = crate::ulmt::read(dir.join(format!("adam_m_{i:03}.ulmt")))?.into_complex()?.into_values();
            let v = crate::ulmt::read(dir.join(format!("adam_v_{i:03}.ulmt")))?.into_complex()?.into_values();
            if m.len() != adam.m[i].len() || v.len() != adam.v[i].len() {
                return Err(Error::Format(format!("optimizer moment {i} has the wrong size")));
            }
            adam.m[i] = m;
            adam.v[i] = v;
        }
        Ok(Self {
            next_epoch: meta.next_epoch,
            steps: meta.steps,
            adam,
            history: TrainHistory {
                epochs: meta.epochs,
                steps: meta.step_losses,
            },
            finished: meta.finished,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StateMeta {
    next_epoch: usize,
    steps: usize,
    adam_t: i32,
    finished: bool,
    epochs: Vec<EpochRecord>,
    step_losses: Vec<f64>,
}

/// Train/validation split of `n` samples, fixed by the seed alone.
pub fn split_indices(n: usize, cfg: &TrainConfig) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(n.saturating_sub(2));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn train(model: &mut CvCnnModel, dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainHistory> {
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i].clone()).collect::<Vec<_>>();
    let state = TrainState::new(model);
    Ok(train_resumable(model, &pick(&train_idx), &pick(&val_idx), cfg, state, |_, _| Ok(()))?.history)
}

/// Runs epochs `state.next_epoch..cfg.epochs` over all of `train_set`,
/// calling `on_epoch` after each; `validation_fraction` is not consulted.
/// Each epoch draws its shuffle and dropout masks from its own stream, so a
/// run resumed from a saved state matches the uninterrupted one exactly.
pub fn train_resumable(
    model: &mut CvCnnModel,
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut state: TrainState,
    mut on_epoch: impl FnMut(&CvCnnModel, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::Domain("training needs at least two samples".into()));
    }
    let want = model.input_dims(1);
    if let Some(bad) = train_set
        .iter()
        .chain(val)
        .position(|s| s.input.dims() != want.as_slice() || s.target.len() != model.arch.elements)
    {
        return Err(Error::Shape(format!("sample {bad} does not match the model input {want:?}")));
    }
    if state.adam.m.len() != model.params().len() || state.adam.m.iter().zip(model.params()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::Shape("optimizer state does not match the model".into()));
    }
    model.arch.dropout = cfg.dropout_p;
    let all: Vec<usize> = (0..train_set.len()).collect();
    while !state.finished && state.next_epoch < cfg.epochs {
        let epoch = state.next_epoch;
        let lr = cfg.lr0 * cfg.lr_decay.powi(epoch as i32);
        let mut rng = epoch_rng(cfg.rng_seed, epoch);
        let mut order = all.clone();
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (bi, b) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let members: Vec<&Sample> = b.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads, stats) = batch_gradients(model, &members, &mut rng)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi}, step {} (lr {lr:e})",
                    state.steps
                )));
            }
            for (i, s) in stats {
                model.norms[i].update_running(&s);
            }
            state.adam.step(model, &grads, lr, cfg.l2_alpha);
            state.history.steps.push(loss);
            sum += loss * b.len() as f64;
            count += b.len();
            state.steps += 1;
            if cfg.target_loss.is_some_and(|t| loss <= t) || cfg.max_steps.is_some_and(|m| state.steps >= m) {
                state.finished = true;
                break;
            }
        }
        let val_loss = if val.is_empty() { None } else { Some(evaluate(model, val)?) };
        let rec = EpochRecord {
            epoch,
            train_loss: sum / count as f64,
            val_loss,
            lr,
        };
        log::info!("epoch {epoch}: train {:.5e} val {:?} lr {lr:.3e}", rec.train_loss, rec.val_loss);
        state.history.epochs.push(rec);
        state.next_epoch += 1;
        on_epoch(model, &state)?;
    }
    Ok(state)
}

/// Convenience wrapper building samples from patches and aberration targets.
pub fn train_on_patches(
    model: &mut CvCnnModel,
    dataset: &[(RealignedPatch, AberrationFunction)],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    let samples = dataset.iter().map(|(p, a)| Sample::new(p, a)).collect::<Result<Vec<_>>>()?;
    train(model, &samples, cfg)
}
