use rand::seq::SliceRandom;

use super::kl::{kl_dro_dual, KlDroConfig};
use crate::dro::LossFn;
use crate::error::{Error, Result};
use crate::genmodels::DiffusionModel;
use crate::numcore::{AdamState, Graph, ParamVector, Tensor};
use crate::rng::Rng;

/// Epoch count, Adam learning rate and minibatch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::config("training needs lr > 0 and batch >= 1"));
        }
        Ok(())
    }
}

/// Shuffled minibatches covering `data` once.
fn epoch_batches(data: &[Vec<f64>], batch: usize, rng: &mut Rng) -> Vec<Vec<Vec<f64>>> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    idx.chunks(batch)
        .map(|c| c.iter().map(|&i| data[i].clone()).collect())
        .collect()
}

/// Generic epoch loop: `step` adds a batch gradient into `w.grad` and returns
/// the batch objective. Returns the mean objective per epoch.
fn train_loop(
    w: &mut ParamVector,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut step: impl FnMut(&mut ParamVector, &[Vec<f64>]) -> Result<f64>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut opt = AdamState::new(cfg.lr, w.len());
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let batches = epoch_batches(data, cfg.batch, rng);
        let mut total = 0.0;
        for b in &batches {
            total += step(w, b)?;
            opt.step(w)?;
        }
        history.push(total / batches.len() as f64);
    }
    Ok(history)
}

/// Empirical risk minimization.
pub fn train_erm(loss: &dyn LossFn, w: &mut ParamVector, data: &[Vec<f64>], cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<f64>> {
    train_loop(w, data, cfg, rng, |w, b| loss.mean_with_grad(w, b))
}

/// ERM on `data` plus `augment_n` samples from a pretrained diffusion model.
pub fn train_dml(
    loss: &dyn LossFn,
    w: &mut ParamVector,
    data: &[Vec<f64>],
    gen: &DiffusionModel,
    augment_n: usize,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut all = data.to_vec();
    if augment_n > 0 {
        all.extend(gen.sample(&gen.params, augment_n, rng)?);
    }
    train_erm(loss, w, &all, cfg, rng)
}

/// KL-DRO dual value on `batch`; with `grad`, adds the envelope gradient
/// `Σ q_i ∇f_i` (weights at the optimal temperature held fixed) into `w.grad`.
pub fn kl_dro_loss(loss: &dyn LossFn, w: &mut ParamVector, batch: &[Vec<f64>], cfg: &KlDroConfig, grad: bool) -> Result<f64> {
    let mut g = Graph::new();
    let b = g.bind(w)?;
    let x = g.constant(loss.batch(batch)?)?;
    let f = loss.per_sample_graph(&mut g, &b, x)?;
    let dual = kl_dro_dual(g.value(f).values(), cfg)?;
    if grad {
        let q = g.constant(Tensor::new(vec![batch.len(), 1], dual.weights.clone())?)?;
        let wf = g.mul(f, q)?;
        let s = g.sum(wf)?;
        g.backward(s)?.accumulate(&b, w)?;
    }
    Ok(dual.value)
}

pub fn train_kldro(
    loss: &dyn LossFn,
    w: &mut ParamVector,
    data: &[Vec<f64>],
    kl: &KlDroConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    train_loop(w, data, cfg, rng, |w, b| kl_dro_loss(loss, w, b, kl, true))
}

/// Per-sample ℓ2 ball and projected-ascent settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WDroConfig {
    pub eps_w: f64,
    pub pgd_steps: usize,
    pub pgd_lr: f64,
}

impl WDroConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_w >= 0.0 && self.eps_w.is_finite()) || self.pgd_steps == 0 || !(self.pgd_lr > 0.0) {
            return Err(Error::config("W-DRO needs eps_w >= 0, pgd_steps >= 1, pgd_lr > 0"));
        }
        Ok(())
    }
}

/// Per-sample `f(w, x)` and its gradient in `x`.
fn loss_and_input_grad(loss: &dyn LossFn, w: &ParamVector, xs: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let b = g.bind(w)?;
    let x = g.constant(loss.batch(xs)?)?;
    let f = loss.per_sample_graph(&mut g, &b, x)?;
    let vals = g.value(f).values().to_vec();
    let s = g.sum(f)?;
    let grads = g.backward(s)?;
    let dim = loss.sample_dim();
    let gx = grads
        .of(x)
        .map(|v| v.chunks(dim).map(<[f64]>::to_vec).collect())
        .unwrap_or_else(|| vec![vec![0.0; dim]; xs.len()]);
    Ok((vals, gx))
}

/// Normalized-gradient ascent on `f(w, x + δ)` with projection onto
/// `‖δ‖ ≤ eps_w`; keeps the best iterate per sample.
pub fn wdro_adversary(loss: &dyn LossFn, w: &ParamVector, batch: &[Vec<f64>], cfg: &WDroConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if cfg.eps_w == 0.0 {
        return Ok(batch.to_vec());
    }
    let (mut best_f, _) = loss_and_input_grad(loss, w, batch)?;
    let mut best = batch.to_vec();
    let mut cur = batch.to_vec();
    for _ in 0..cfg.pgd_steps {
        let (f, gx) = loss_and_input_grad(loss, w, &cur)?;
        for i in 0..cur.len() {
            if f[i] > best_f[i] {
                best_f[i] = f[i];
                best[i] = cur[i].clone();
            }
            let norm = gx[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let mut delta: Vec<f64> = cur[i]
                .iter()
                .zip(&batch[i])
                .zip(&gx[i])
                .map(|((c, x), gv)| c - x + cfg.pgd_lr * gv / norm)
                .collect();
            project(&mut delta, cfg.eps_w);
            cur[i] = batch[i].iter().zip(&delta).map(|(x, d)| x + d).collect();
        }
    }
    let (f, _) = loss_and_input_grad(loss, w, &cur)?;
    for i in 0..cur.len() {
        if f[i] > best_f[i] {
            best[i] = cur[i].clone();
        }
    }
    Ok(best)
}

fn project(delta: &mut [f64], radius: f64) {
    let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > radius {
        let s = radius / norm;
        delta.iter_mut().for_each(|v| *v *= s);
    }
}

pub fn train_wdro(
    loss: &dyn LossFn,
    w: &mut ParamVector,
    data: &[Vec<f64>],
    wcfg: &WDroConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    train_loop(w, data, cfg, rng, |w, b| {
        let adv = wdro_adversary(loss, w, b, wcfg)?;
        loss.mean_with_grad(w, &adv)
    })
}
