use rand::seq::SliceRandom;

use super::adversary::GenerativeAdversary;
use super::dual::DualState;
use super::loss::LossFn;
use crate::error::{Error, Result};
use crate::numcore::{sgd_step, AdamState, Graph, ParamVector, Tensor, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    /// Score-function surrogate `log p_θ · f`.
    Vpg,
    /// Clipped-ratio surrogate against a reference model.
    Ppo,
}

impl ObjectiveKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vpg" => Ok(ObjectiveKind::Vpg),
            "ppo" => Ok(ObjectiveKind::Ppo),
            other => Err(Error::config(format!("unknown objective {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Vpg => "vpg",
            ObjectiveKind::Ppo => "ppo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoConfig {
    pub kappa: f64,
    pub objective: ObjectiveKind,
}

impl PpoConfig {
    pub fn new(kappa: f64, objective: ObjectiveKind) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::config(format!("kappa must be in (0, 1), got {kappa}")));
        }
        Ok(PpoConfig { kappa, objective })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::config(format!("unknown optimizer {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Descent optimizer over one parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(lr, len)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut ParamVector) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params),
            Optimizer::Sgd { lr } => sgd_step(*lr, params),
        }
    }
}

/// Hyperparameters of the nested min-max.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Inner epochs `K` per outer iteration.
    pub inner_epochs: usize,
    /// Outer iterations `H`.
    pub outer_iters: usize,
    /// Samples `n` drawn from the generator per outer iteration.
    pub samples: usize,
    /// Outer learning rate `λ`.
    pub outer_lr: f64,
    /// Predictor minibatch steps per outer iteration.
    pub outer_steps: usize,
    pub inner_lr: f64,
    pub inner_optimizer: OptimizerKind,
    pub batch: usize,
    pub ppo: PpoConfig,
    pub mu_init: f64,
    pub eta: f64,
    pub eps: f64,
    /// Replace the PPO reference with the current generator after every
    /// outer iteration; otherwise keep the starting model.
    pub refresh_reference: bool,
    /// Skip the inner maximization entirely.
    pub freeze_generator: bool,
    /// Train the predictor on the nominal set together with the
    /// adversarial samples.
    pub augment_nominal: bool,
}

impl SolverConfig {
    /// Scaled-down defaults for CPU runs.
    pub fn desk() -> Self {
        SolverConfig {
            inner_epochs: 10,
            outer_iters: 15,
            samples: 64,
            outer_lr: 1e-3,
            outer_steps: 1,
            inner_lr: 1e-3,
            inner_optimizer: OptimizerKind::Adam,
            batch: 64,
            ppo: PpoConfig {
                kappa: 0.4,
                objective: ObjectiveKind::Ppo,
            },
            mu_init: 0.5,
            eta: 0.01,
            eps: 0.015,
            refresh_reference: true,
            freeze_generator: false,
            augment_nominal: false,
        }
    }

    /// Hyperparameters reported for the original experiments.
    pub fn paper() -> Self {
        SolverConfig {
            outer_lr: 1e-5,
            inner_lr: 1e-5,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_epochs == 0 || self.samples == 0 || self.batch == 0 {
            return Err(Error::config("inner epochs, samples and batch must be >= 1"));
        }
        if !(self.outer_lr > 0.0 && self.inner_lr > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        PpoConfig::new(self.ppo.kappa, self.ppo.objective)?;
        DualState::new(self.mu_init, self.eta, self.eps)?;
        Ok(())
    }

    pub fn dual(&self) -> Result<DualState> {
        DualState::new(self.mu_init, self.eta, self.eps)
    }
}

/// Diagnostics of one inner epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub j: f64,
    pub mu: f64,
    pub mean_f: f64,
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterRecord {
    pub iter: usize,
    /// Mean loss of the pre-update predictor on the adversarial dataset.
    pub worst_case_loss: f64,
    pub j: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverReport {
    /// `(outer iteration, record)` for every inner epoch.
    pub inner: Vec<(usize, EpochRecord)>,
    pub outer: Vec<OuterRecord>,
    /// Predictor parameters after each outer iteration.
    pub w_trace: Vec<Vec<f64>>,
}

/// `min(r f, clip(r, 1-κ, 1+κ) f)`.
pub fn ppo_term(r: f64, f: f64, kappa: f64) -> f64 {
    (r * f).min(r.clamp(1.0 - kappa, 1.0 + kappa) * f)
}

/// Mean surrogate over samples with log-densities `log_p` (`[n, 1]`).
///
/// VPG: `mean(log_p · f)`. PPO: `mean(min(r f, clip(r) f))` with
/// `r = exp(log_p − ref_log_p)`.
pub fn surrogate_graph(g: &mut Graph, log_p: Var, ref_log_p: &[f64], f: &[f64], ppo: &PpoConfig) -> Result<Var> {
    let n = f.len();
    if n == 0 {
        return Err(Error::Empty("surrogate samples"));
    }
    if g.value(log_p).len() != n {
        return Err(Error::shape("surrogate", "one log-density per loss value required"));
    }
    let fv = g.constant(Tensor::new(vec![n, 1], f.to_vec())?)?;
    let terms = match ppo.objective {
        ObjectiveKind::Vpg => g.mul(log_p, fv)?,
        ObjectiveKind::Ppo => {
            if ref_log_p.len() != n {
                return Err(Error::shape("surrogate", "one reference log-density per sample required"));
            }
            let rv = g.constant(Tensor::new(vec![n, 1], ref_log_p.to_vec())?)?;
            let diff = g.sub(log_p, rv)?;
            let r = g.exp(diff)?;
            let raw = g.mul(r, fv)?;
            let clipped = g.clamp(r, 1.0 - ppo.kappa, 1.0 + ppo.kappa)?;
            let cf = g.mul(clipped, fv)?;
            g.minimum(raw, cf)?
        }
    };
    g.mean(terms)
}

/// Records `surrogate − μ · J` on `g`.
#[allow(clippy::too_many_arguments)]
pub fn lagrangian_objective_graph<A: GenerativeAdversary>(
    adv: &A,
    g: &mut Graph,
    bound: &crate::numcore::BoundParams,
    samples: &[A::Sample],
    ref_log_p: &[f64],
    f: &[f64],
    mu: f64,
    ppo: &PpoConfig,
    rng: &mut Rng,
) -> Result<Var> {
    let lp = adv.log_prob_graph(g, bound, samples)?;
    let s = surrogate_graph(g, lp, ref_log_p, f, ppo)?;
    let j = adv.recon_graph(g, bound, rng)?;
    let pen = g.scale(j, -mu)?;
    g.add(s, pen)
}

/// Value of the Lagrangian objective at `params`.
#[allow(clippy::too_many_arguments)]
pub fn lagrangian_objective<A: GenerativeAdversary>(
    adv: &A,
    params: &ParamVector,
    samples: &[A::Sample],
    ref_log_p: &[f64],
    f: &[f64],
    mu: f64,
    ppo: &PpoConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let mut g = Graph::new();
    let b = g.bind(params)?;
    let o = lagrangian_objective_graph(adv, &mut g, &b, samples, ref_log_p, f, mu, ppo, rng)?;
    g.value(o).item()
}

/// `K` epochs of ascent on the Lagrangian in the generator parameters, each
/// followed by a dual update on the measured constraint.
#[allow(clippy::too_many_arguments)]
pub fn inner_max<A: GenerativeAdversary>(
    adv: &mut A,
    loss: &dyn LossFn,
    w: &ParamVector,
    reference: &ParamVector,
    dual: &mut DualState,
    cfg: &SolverConfig,
    opt: &mut Optimizer,
    rng: &mut Rng,
) -> Result<Vec<EpochRecord>> {
    let ppo = cfg.ppo;
    let mut fixed: Option<(Vec<A::Sample>, Vec<f64>, Vec<f64>)> = None;
    if ppo.objective == ObjectiveKind::Ppo {
        let s = adv.draw(reference, cfg.samples, rng)?;
        let pts: Vec<Vec<f64>> = s.iter().map(|x| adv.point(x).to_vec()).collect();
        let f = loss.per_sample(w, &pts)?;
        let lp = adv.log_prob(reference, &s)?;
        fixed = Some((s, lp, f));
    }
    let mut records = Vec::with_capacity(cfg.inner_epochs);
    for epoch in 0..cfg.inner_epochs {
        let (samples, ref_lp, f) = match &fixed {
            Some((s, lp, f)) => (s.clone(), lp.clone(), f.clone()),
            None => {
                let s = adv.draw(adv.params(), cfg.samples, rng)?;
                let pts: Vec<Vec<f64>> = s.iter().map(|x| adv.point(x).to_vec()).collect();
                let f = loss.per_sample(w, &pts)?;
                (s, Vec::new(), f)
            }
        };
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(rng);
        let mut surrogate_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mb: Vec<A::Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let mb_f: Vec<f64> = chunk.iter().map(|&i| f[i]).collect();
            let mb_lp: Vec<f64> = if ref_lp.is_empty() {
                Vec::new()
            } else {
                chunk.iter().map(|&i| ref_lp[i]).collect()
            };
            let mut g = Graph::new();
            let b = g.bind(adv.params())?;
            let lp = adv.log_prob_graph(&mut g, &b, &mb)?;
            let s = surrogate_graph(&mut g, lp, &mb_lp, &mb_f, &ppo)?;
            surrogate_sum += g.value(s).item()?;
            batches += 1;
            let j = adv.recon_graph(&mut g, &b, rng)?;
            let pen = g.scale(j, -dual.mu)?;
            let obj = g.add(s, pen)?;
            let neg = g.scale(obj, -1.0)?;
            let grads = g.backward(neg)?;
            grads.accumulate(&b, adv.params_mut())?;
            opt.step(adv.params_mut())?;
        }
        let j_hat = adv.constraint(adv.params())?;
        let mu_used = dual.mu;
        dual.dual_update(j_hat)?;
        records.push(EpochRecord {
            epoch,
            objective: surrogate_sum / batches as f64 - mu_used * j_hat,
            j: j_hat,
            mu: dual.mu,
            mean_f: f.iter().sum::<f64>() / f.len() as f64,
        });
    }
    Ok(records)
}

/// Minibatch descent on the mean loss over `data`; returns the mean of the
/// pre-step minibatch losses.
pub fn descend(
    loss: &dyn LossFn,
    w: &mut ParamVector,
    data: &[Vec<f64>],
    steps: usize,
    batch: usize,
    opt: &mut Optimizer,
    rng: &mut Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut total = 0.0;
    for _ in 0..steps {
        let mut mb = Vec::with_capacity(batch.min(data.len()));
        while mb.len() < batch.min(data.len()) {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(rng);
                cursor = 0;
            }
            mb.push(data[order[cursor]].clone());
            cursor += 1;
        }
        total += loss.mean_with_grad(w, &mb)?;
        opt.step(w)?;
    }
    Ok(if steps == 0 { 0.0 } else { total / steps as f64 })
}

/// The nested min-max: `H` outer iterations of inner maximization followed
/// by predictor steps on a fresh adversarial dataset.
pub fn outer_min<A: GenerativeAdversary>(
    w: &mut ParamVector,
    adv: &mut A,
    loss: &dyn LossFn,
    cfg: &SolverConfig,
    rng: &mut Rng,
) -> Result<SolverReport> {
    cfg.validate()?;
    let mut dual = cfg.dual()?;
    let mut inner_opt = Optimizer::new(cfg.inner_optimizer, cfg.inner_lr, adv.params().len());
    let mut outer_opt = Optimizer::new(OptimizerKind::Adam, cfg.outer_lr, w.len());
    let start = adv.params().clone();
    let mut report = SolverReport::default();
    for iter in 0..cfg.outer_iters {
        if !cfg.freeze_generator {
            let reference = if cfg.refresh_reference { adv.params().clone() } else { start.clone() };
            let recs = inner_max(adv, loss, w, &reference, &mut dual, cfg, &mut inner_opt, rng)?;
            report.inner.extend(recs.into_iter().map(|r| (iter, r)));
        }
        let mut data = adv.dataset(adv.params(), cfg.samples, rng)?;
        let worst = loss.mean(w, &data)?;
        if cfg.augment_nominal {
            data.extend_from_slice(adv.nominal());
        }
        descend(loss, w, &data, cfg.outer_steps, cfg.batch, &mut outer_opt, rng)?;
        report.outer.push(OuterRecord {
            iter,
            worst_case_loss: worst,
            j: adv.constraint(adv.params())?,
            mu: dual.mu,
        });
        report.w_trace.push(w.values().to_vec());
    }
    Ok(report)
}
