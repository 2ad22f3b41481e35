use std::f64::consts::PI;

use rand::Rng;

use super::schedule::{NoiseSchedule, MIN_STEP_STD};
use crate::error::{Error, Result};
use super::vae::minibatch;
use crate::numcore::{Activation, AdamState, BoundParams, Checkpoint, Graph, MlpSpec, ParamVector, Tensor, Var};
use crate::rng;

/// Width of the step embedding `(t/T, sin(2πt/T), cos(2πt/T))`.
pub const TIME_EMBED_DIM: usize = 3;

pub fn time_embedding(t: usize, steps: usize) -> [f64; TIME_EMBED_DIM] {
    let u = t as f64 / steps as f64;
    [u, (2.0 * PI * u).sin(), (2.0 * PI * u).cos()]
}

/// Draws `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) nu`; returns `(x_t, nu)`.
pub fn forward_sample<R: Rng + ?Sized>(
    schedule: &NoiseSchedule,
    x0: &[f64],
    t: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t == 0 || t > schedule.steps() {
        return Err(Error::config(format!(
            "step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    let nu = rng::normals(rng, x0.len());
    Ok((noised(schedule, x0, t, &nu), nu))
}

fn noised(schedule: &NoiseSchedule, x0: &[f64], t: usize, nu: &[f64]) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(nu).map(|(x, n)| a * x + b * n).collect()
}

/// How the denoising loss sums over steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepSampling {
    /// One uniformly drawn step in `2..=T` per example, scaled by `T - 1`.
    Sampled,
    /// Every step in `2..=T`, one noise draw each.
    FullSum,
    /// One uniformly drawn step in `1..=T` per example with unit weight.
    Unweighted,
    /// Every step in `1..=T` with weight `1 / T`.
    UnweightedFullSum,
}

/// Which denoising loss a model is trained on and constrained by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoisingObjective {
    /// Steps `t >= 2` weighted by `iota_t`.
    Elbo,
    /// Plain noise-prediction error averaged over `t = 1..=T`.
    Unweighted,
}

impl DenoisingObjective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "elbo" => Ok(DenoisingObjective::Elbo),
            "unweighted" => Ok(DenoisingObjective::Unweighted),
            other => Err(Error::config(format!(
                "unknown denoising objective {other:?}; expected elbo or unweighted"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DenoisingObjective::Elbo => "elbo",
            DenoisingObjective::Unweighted => "unweighted",
        }
    }

    /// One random step per example.
    pub fn sampled(self) -> StepSampling {
        match self {
            DenoisingObjective::Elbo => StepSampling::Sampled,
            DenoisingObjective::Unweighted => StepSampling::Unweighted,
        }
    }

    /// Every step per example.
    pub fn full(self) -> StepSampling {
        match self {
            DenoisingObjective::Elbo => StepSampling::FullSum,
            DenoisingObjective::Unweighted => StepSampling::UnweightedFullSum,
        }
    }
}

/// Noise draws that define one evaluation of the denoising loss.
#[derive(Debug, Clone)]
pub struct DmDraws {
    /// `(example index, step, weight)` per term.
    pub terms: Vec<(usize, usize, f64)>,
    pub noise: Vec<Vec<f64>>,
    pub examples: usize,
}

impl DmDraws {
    pub fn sample<R: Rng + ?Sized>(
        schedule: &NoiseSchedule,
        examples: usize,
        dim: usize,
        mode: StepSampling,
        rng: &mut R,
    ) -> Result<Self> {
        if examples == 0 {
            return Err(Error::Empty("denoising loss batch"));
        }
        let steps = schedule.steps();
        if steps < 2 {
            return Err(Error::config("denoising loss needs T >= 2"));
        }
        let mut terms = Vec::new();
        let mut noise = Vec::new();
        for i in 0..examples {
            match mode {
                StepSampling::Sampled => {
                    let t = rng.random_range(2..=steps);
                    terms.push((i, t, (steps - 1) as f64 * schedule.iota(t)));
                    noise.push(rng::normals(rng, dim));
                }
                StepSampling::Unweighted => {
                    terms.push((i, rng.random_range(1..=steps), 1.0));
                    noise.push(rng::normals(rng, dim));
                }
                StepSampling::UnweightedFullSum => {
                    for t in 1..=steps {
                        terms.push((i, t, 1.0 / steps as f64));
                        noise.push(rng::normals(rng, dim));
                    }
                }
                StepSampling::FullSum => {
                    for t in 2..=steps {
                        terms.push((i, t, schedule.iota(t)));
                        noise.push(rng::normals(rng, dim));
                    }
                }
            }
        }
        Ok(DmDraws {
            terms,
            noise,
            examples,
        })
    }
}

/// Discrete-time diffusion model with an MLP noise predictor.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub schedule: NoiseSchedule,
    pub denoiser: MlpSpec,
    pub params: ParamVector,
    /// Number of final reverse steps (`t <= fine_tuned_steps`) adjusted by
    /// the inner maximization.
    pub fine_tuned_steps: usize,
}

impl DiffusionModel {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        hidden: &[usize],
        activation: Activation,
        schedule: NoiseSchedule,
        fine_tuned_steps: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![data_dim + TIME_EMBED_DIM];
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        let denoiser = MlpSpec::new(widths, activation)?;
        let params = denoiser.init(rng)?;
        Self::from_parts(schedule, denoiser, params, fine_tuned_steps)
    }

    pub fn from_parts(
        schedule: NoiseSchedule,
        denoiser: MlpSpec,
        params: ParamVector,
        fine_tuned_steps: usize,
    ) -> Result<Self> {
        if denoiser.input_width() != denoiser.output_width() + TIME_EMBED_DIM {
            return Err(Error::config(
                "denoiser input must be data dim plus time embedding",
            ));
        }
        if fine_tuned_steps == 0 || fine_tuned_steps > schedule.steps() {
            return Err(Error::config(format!(
                "fine-tuned steps must be in 1..={}, got {fine_tuned_steps}",
                schedule.steps()
            )));
        }
        Ok(DiffusionModel {
            schedule,
            denoiser,
            params,
            fine_tuned_steps,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.denoiser.output_width()
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }

    /// Reverse-process std used when sampling step `t`.
    pub fn step_std(&self, t: usize) -> f64 {
        if t <= self.fine_tuned_steps {
            self.schedule.sigma_samp
        } else {
            self.schedule.sigma2(t).sqrt().max(MIN_STEP_STD)
        }
    }

    fn denoiser_input(&self, xs: &[&[f64]], ts: &[usize]) -> Result<Tensor> {
        let d = self.data_dim();
        let mut vals = Vec::with_capacity(xs.len() * (d + TIME_EMBED_DIM));
        for (x, &t) in xs.iter().zip(ts) {
            if x.len() != d {
                return Err(Error::shape(
                    "denoiser input",
                    format!("sample of width {}, model dim {d}", x.len()),
                ));
            }
            vals.extend_from_slice(x);
            vals.extend_from_slice(&time_embedding(t, self.steps()));
        }
        Tensor::new(vec![xs.len(), d + TIME_EMBED_DIM], vals)
    }

    /// Noise prediction `s_theta(x_t, t)` without recording.
    pub fn predict_noise(&self, params: &ParamVector, xs: &[&[f64]], ts: &[usize]) -> Result<Tensor> {
        let input = self.denoiser_input(xs, ts)?;
        self.denoiser.eval(params, "", &input)
    }

    /// Noise prediction recorded on `g`.
    pub fn predict_noise_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        xs: &[&[f64]],
        ts: &[usize],
    ) -> Result<Var> {
        let input = self.denoiser_input(xs, ts)?;
        let iv = g.constant(input)?;
        self.denoiser.forward(g, bound, "", iv)
    }

    /// Reverse means `mu_theta(x_t, t)` for a batch at a shared step.
    pub fn reverse_means(&self, params: &ParamVector, xs: &[&[f64]], t: usize) -> Result<Vec<Vec<f64>>> {
        let ts = vec![t; xs.len()];
        let s = self.predict_noise(params, xs, &ts)?;
        Ok(xs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                x.iter()
                    .zip(s.row(i))
                    .map(|(&xv, &sv)| self.schedule.reverse_mean(t, xv, sv))
                    .collect()
            })
            .collect())
    }

    fn reverse_means_graph(&self, g: &mut Graph, bound: &BoundParams, xs: &[&[f64]], t: usize) -> Result<Var> {
        let ts = vec![t; xs.len()];
        let s = self.predict_noise_graph(g, bound, xs, &ts)?;
        let x = g.constant(Tensor::from_rows(xs)?)?;
        let scaled = g.scale(s, self.schedule.noise_coef(t))?;
        let diff = g.sub(x, scaled)?;
        g.scale(diff, 1.0 / self.schedule.alpha(t).sqrt())
    }

    /// Denoising loss for `batch` with explicit draws, recorded on `g`.
    pub fn dm_loss_graph(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        batch: &[Vec<f64>],
        draws: &DmDraws,
    ) -> Result<Var> {
        let mut xt = Vec::with_capacity(draws.terms.len());
        let mut ts = Vec::with_capacity(draws.terms.len());
        for ((i, t, _), nu) in draws.terms.iter().zip(&draws.noise) {
            let x0 = batch
                .get(*i)
                .ok_or_else(|| Error::shape("dm_loss", "draws reference a missing example"))?;
            xt.push(noised(&self.schedule, x0, *t, nu));
            ts.push(*t);
        }
        let refs: Vec<&[f64]> = xt.iter().map(Vec::as_slice).collect();
        let pred = self.predict_noise_graph(g, bound, &refs, &ts)?;
        weighted_noise_error(g, pred, draws)
    }

    /// Monte-Carlo estimate of the denoising loss (value only).
    pub fn dm_loss<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        batch: &[Vec<f64>],
        mode: StepSampling,
        rng: &mut R,
    ) -> Result<f64> {
        let draws = DmDraws::sample(&self.schedule, batch.len(), self.data_dim(), mode, rng)?;
        let mut g = Graph::new();
        let bound = g.bind(params)?;
        let l = self.dm_loss_graph(&mut g, &bound, batch, &draws)?;
        g.value(l).item()
    }

    /// Samples `n` reverse-process trajectories from `params`.
    pub fn reverse_sample<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Trajectory>> {
        if n == 0 {
            return Err(Error::Empty("reverse_sample count"));
        }
        let d = self.data_dim();
        let steps = self.steps();
        let mut trajs: Vec<Trajectory> = (0..n)
            .map(|_| Trajectory {
                states: vec![Vec::new(); steps + 1],
                step_means: vec![Vec::new(); steps],
                noise_draws: vec![Vec::new(); steps],
            })
            .collect();
        for tr in trajs.iter_mut() {
            tr.states[steps] = rng::normals(rng, d);
        }
        for t in (1..=steps).rev() {
            let xs: Vec<&[f64]> = trajs.iter().map(|tr| tr.states[t].as_slice()).collect();
            let means = self.reverse_means(params, &xs, t)?;
            let std = self.step_std(t);
            for (tr, mean) in trajs.iter_mut().zip(means) {
                let w = rng::normals(rng, d);
                let next: Vec<f64> = mean.iter().zip(&w).map(|(m, z)| m + std * z).collect();
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("reverse_sample"));
                }
                tr.states[t - 1] = next;
                tr.step_means[t - 1] = mean;
                tr.noise_draws[t - 1] = w;
            }
        }
        Ok(trajs)
    }

    /// Final samples `x_0` only.
    pub fn sample<R: Rng + ?Sized>(&self, params: &ParamVector, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .reverse_sample(params, n, rng)?
            .into_iter()
            .map(|mut tr| std::mem::take(&mut tr.states[0]))
            .collect())
    }

    fn check_fine_tuned_std(&self) -> Result<f64> {
        let std = self.schedule.sigma_samp;
        if std <= 0.0 {
            return Err(Error::config("zero sampling std on a fine-tuned step"));
        }
        Ok(std)
    }

    /// Log-joint of the fine-tuned steps, up to a parameter-free constant.
    pub fn log_joint(&self, params: &ParamVector, traj: &Trajectory) -> Result<f64> {
        let std = self.check_fine_tuned_std()?;
        traj.check(self)?;
        let mut total = 0.0;
        for t in 1..=self.fine_tuned_steps {
            let mean = self.reverse_means(params, &[traj.states[t].as_slice()], t)?;
            let sq: f64 = traj.states[t - 1]
                .iter()
                .zip(&mean[0])
                .map(|(x, m)| (x - m).powi(2))
                .sum();
            total -= sq / (2.0 * std * std);
        }
        Ok(total)
    }

    /// Per-trajectory log-joints as a `[n, 1]` node on `g`.
    pub fn log_joint_graph(&self, g: &mut Graph, bound: &BoundParams, trajs: &[Trajectory]) -> Result<Var> {
        if trajs.is_empty() {
            return Err(Error::Empty("trajectories"));
        }
        let std = self.check_fine_tuned_std()?;
        for tr in trajs {
            tr.check(self)?;
        }
        let mut total: Option<Var> = None;
        for t in 1..=self.fine_tuned_steps {
            let xs: Vec<&[f64]> = trajs.iter().map(|tr| tr.states[t].as_slice()).collect();
            let prev: Vec<&[f64]> = trajs.iter().map(|tr| tr.states[t - 1].as_slice()).collect();
            let mean = self.reverse_means_graph(g, bound, &xs, t)?;
            let target = g.constant(Tensor::from_rows(&prev)?)?;
            let diff = g.sub(target, mean)?;
            let sq = g.square(diff)?;
            let rows = g.sum_cols(sq)?;
            let term = g.scale(rows, -1.0 / (2.0 * std * std))?;
            total = Some(match total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(total.expect("fine_tuned_steps >= 1"))
    }

    /// `p_theta / p_ref` of one trajectory over the fine-tuned steps.
    pub fn ppo_ratio(&self, params: &ParamVector, reference: &DiffusionModel, traj: &Trajectory) -> Result<f64> {
        self.check_compatible(reference)?;
        let lj = self.log_joint(params, traj)?;
        let lj_ref = reference.log_joint(&reference.params, traj)?;
        let r = (lj - lj_ref).exp();
        if !r.is_finite() {
            return Err(Error::NonFinite("ppo_ratio"));
        }
        Ok(r)
    }

    pub fn check_compatible(&self, other: &DiffusionModel) -> Result<()> {
        if self.schedule != other.schedule
            || self.fine_tuned_steps != other.fine_tuned_steps
            || self.denoiser != other.denoiser
        {
            return Err(Error::config("models do not share schedule, fine-tuned steps and denoiser layout"));
        }
        Ok(())
    }
}

impl DiffusionModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let widths: Vec<String> = self.denoiser.layer_widths.iter().map(|w| w.to_string()).collect();
        Checkpoint::new(self.params.clone())
            .with_meta("model", "ddpm")
            .with_meta("steps", self.steps())
            .with_meta("beta_min", format!("{:?}", self.schedule.beta(1)))
            .with_meta("beta_max", format!("{:?}", self.schedule.beta(self.steps())))
            .with_meta("sigma_samp", format!("{:?}", self.schedule.sigma_samp))
            .with_meta("fine_tuned_steps", self.fine_tuned_steps)
            .with_meta("widths", widths.join(","))
            .with_meta("activation", self.denoiser.activation.name())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("model")? != "ddpm" {
            return Err(Error::config("checkpoint does not hold a diffusion model"));
        }
        let steps: usize = ck.meta_parse("steps")?;
        let lo: f64 = ck.meta_parse("beta_min")?;
        let hi: f64 = ck.meta_parse("beta_max")?;
        let schedule = if steps == 1 {
            NoiseSchedule::from_betas(vec![lo])?
        } else {
            NoiseSchedule::linear(steps, lo, hi)?
        }
        .with_sigma_samp(ck.meta_parse("sigma_samp")?)?;
        let widths = parse_widths(ck.meta("widths")?)?;
        let denoiser = MlpSpec::new(widths, Activation::parse(ck.meta("activation")?)?)?;
        Self::from_parts(schedule, denoiser, ck.params.clone(), ck.meta_parse("fine_tuned_steps")?)
    }
}

impl DiffusionModel {
    /// Adam on the sampled denoising loss over minibatches; returns per-step losses.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        data: &[Vec<f64>],
        steps: usize,
        lr: f64,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.fit_with(data, steps, lr, batch, StepSampling::Sampled, rng)
    }

    pub fn fit_with<R: Rng + ?Sized>(
        &mut self,
        data: &[Vec<f64>],
        steps: usize,
        lr: f64,
        batch: usize,
        mode: StepSampling,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Empty("diffusion training data"));
        }
        let mut opt = AdamState::new(lr, self.params.len());
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mb = minibatch(data, batch, rng);
            let draws = DmDraws::sample(&self.schedule, mb.len(), self.data_dim(), mode, rng)?;
            let mut g = Graph::new();
            let bound = g.bind(&self.params)?;
            let l = self.dm_loss_graph(&mut g, &bound, &mb, &draws)?;
            losses.push(g.value(l).item()?);
            g.backward(l)?.accumulate(&bound, &mut self.params)?;
            opt.step(&mut self.params)?;
        }
        Ok(losses)
    }
}

pub(crate) fn parse_widths(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::config(format!("bad layer widths {s:?}")))
}

/// Squared noise-prediction error weighted per draw, averaged over examples.
pub fn weighted_noise_error(g: &mut Graph, pred: Var, draws: &DmDraws) -> Result<Var> {
    let target = g.constant(Tensor::from_rows(&draws.noise)?)?;
    let diff = g.sub(target, pred)?;
    let sq = g.square(diff)?;
    let rows = g.sum_cols(sq)?;
    let w: Vec<f64> = draws.terms.iter().map(|(_, _, w)| *w).collect();
    let wv = g.constant(Tensor::new(vec![w.len(), 1], w)?)?;
    let weighted = g.mul(rows, wv)?;
    let s = g.sum(weighted)?;
    g.scale(s, 1.0 / draws.examples as f64)
}

/// One reverse path `x_T .. x_0` with the means and noise used to produce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `states[t]` is `x_t` for `t = 0..=T`.
    pub states: Vec<Vec<f64>>,
    /// `step_means[t - 1]` is the generating model's `mu(x_t, t)`.
    pub step_means: Vec<Vec<f64>>,
    /// `noise_draws[t - 1]` is the standard normal draw at step `t`.
    pub noise_draws: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn sample(&self) -> &[f64] {
        &self.states[0]
    }

    fn check(&self, model: &DiffusionModel) -> Result<()> {
        if self.states.len() != model.steps() + 1 {
            return Err(Error::shape(
                "trajectory",
                format!("{} states for T = {}", self.states.len(), model.steps()),
            ));
        }
        Ok(())
    }

    /// Log-joint under the model that generated the trajectory, from the
    /// recorded means: `-sum ‖x_{t-1} - mean‖² / (2 std²)` over `t <= steps`.
    pub fn recorded_log_joint(&self, fine_tuned_steps: usize, std: f64) -> f64 {
        (1..=fine_tuned_steps)
            .map(|t| {
                let sq: f64 = self.states[t - 1]
                    .iter()
                    .zip(&self.step_means[t - 1])
                    .map(|(x, m)| (x - m).powi(2))
                    .sum();
                -sq / (2.0 * std * std)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{finite_difference_grad, relative_error};
    use crate::rng::seeded;

    fn small_model(seed: u64) -> DiffusionModel {
        let sched = NoiseSchedule::linear(6, 0.05, 0.3).unwrap();
        DiffusionModel::new(2, &[8], Activation::Tanh, sched, 3, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn forward_sample_edge_cases() {
        let s = NoiseSchedule::linear(4, 0.1, 0.2).unwrap();
        let mut rng = seeded(1);
        let (xt, nu) = forward_sample(&s, &[0.0, 0.0], 2, &mut rng).unwrap();
        let c = (1.0 - s.alpha_bar(2)).sqrt();
        assert_eq!(xt, vec![c * nu[0], c * nu[1]]);
        assert!(forward_sample(&s, &[1.0], 0, &mut rng).is_err());
        assert!(forward_sample(&s, &[1.0], 5, &mut rng).is_err());
    }

    #[test]
    fn forward_sample_hand_value() {
        // alpha_bar = 0.25 at t = 1 with beta = 0.75
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        let x = noised(&s, &[2.0], 1, &[1.0]);
        assert!((x[0] - (1.0 + 0.75f64.sqrt())).abs() < 1e-12);
        assert!((x[0] - 1.8660).abs() < 1e-4);
    }

    #[test]
    fn forward_sample_marginal_moments() {
        let s = NoiseSchedule::linear(10, 0.05, 0.2).unwrap();
        let mut rng = seeded(3);
        let t = 5;
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_sample(&s, &[1.5], t, &mut rng).unwrap().0[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - s.alpha_bar(t).sqrt() * 1.5).abs() < 0.02);
        assert!((var - (1.0 - s.alpha_bar(t))).abs() < 0.05);
    }

    #[test]
    fn oracle_denoiser_has_zero_loss() {
        let m = small_model(2);
        let draws = DmDraws::sample(&m.schedule, 2, 2, StepSampling::Sampled, &mut seeded(4)).unwrap();
        let mut g = Graph::new();
        let pred = g.constant(Tensor::from_rows(&draws.noise).unwrap()).unwrap();
        let l = weighted_noise_error(&mut g, pred, &draws).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn zero_denoiser_loss_matches_straight_line_evaluation() {
        let mut m = small_model(5);
        m.params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let batch = vec![vec![0.5, -1.0], vec![2.0, 0.1], vec![-0.3, 0.3]];
        let loss = m.dm_loss(&m.params, &batch, StepSampling::Sampled, &mut seeded(9)).unwrap();
        // replay the same stream by hand
        let mut rng = seeded(9);
        let steps = m.steps();
        let mut acc = 0.0;
        for _ in &batch {
            let t: usize = rng.random_range(2..=steps);
            let nu = rng::normals(&mut rng, 2);
            let sq: f64 = nu.iter().map(|v| v * v).sum();
            acc += (steps as f64 - 1.0) * m.schedule.iota(t) * sq;
        }
        assert!((loss - acc / batch.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let m = small_model(1);
        assert!(matches!(
            m.dm_loss(&m.params, &[], StepSampling::Sampled, &mut seeded(0)),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn dm_loss_gradient_matches_finite_differences() {
        let m = small_model(7);
        let batch = vec![vec![0.5, -1.0], vec![2.0, 0.1], vec![-0.3, 0.3]];
        let draws = DmDraws::sample(&m.schedule, 3, 2, StepSampling::FullSum, &mut seeded(8)).unwrap();
        let mut p = m.params.clone();
        let mut g = Graph::new();
        let b = g.bind(&p).unwrap();
        let l = m.dm_loss_graph(&mut g, &b, &batch, &draws).unwrap();
        g.backward(l).unwrap().accumulate(&b, &mut p).unwrap();
        let fd = finite_difference_grad(&p, 1e-5, |q| {
            let mut g = Graph::new();
            let b = g.bind(q)?;
            let l = m.dm_loss_graph(&mut g, &b, &batch, &draws)?;
            g.value(l).item()
        })
        .unwrap();
        assert!(relative_error(p.grad(), &fd, 1e-8) < 1e-4);
    }

    #[test]
    fn reverse_sampling_is_deterministic() {
        let m = small_model(3);
        let a = m.reverse_sample(&m.params, 4, &mut seeded(10)).unwrap();
        let b = m.reverse_sample(&m.params, 4, &mut seeded(10)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].states.len(), m.steps() + 1);
    }

    #[test]
    fn single_step_zero_denoiser_by_hand() {
        let sched = NoiseSchedule::from_betas(vec![0.2]).unwrap().with_sigma_samp(0.3).unwrap();
        let spec = MlpSpec::new(vec![1 + TIME_EMBED_DIM, 4, 1], Activation::Tanh).unwrap();
        let mut params = spec.init(&mut seeded(0)).unwrap();
        params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let m = DiffusionModel::from_parts(sched, spec, params, 1).unwrap();
        let tr = &m.reverse_sample(&m.params, 1, &mut seeded(12)).unwrap()[0];
        let mut rng = seeded(12);
        let x1 = rng::normal(&mut rng);
        let w = rng::normal(&mut rng);
        let expect = x1 / 0.8f64.sqrt() + 0.3 * w;
        assert!((tr.states[0][0] - expect).abs() < 1e-12);
    }

    #[test]
    fn log_joint_hand_values() {
        let m = small_model(4);
        let mut tr = m.reverse_sample(&m.params, 1, &mut seeded(1)).unwrap().remove(0);
        // regenerate with zero noise on the fine-tuned steps: means hit exactly
        for t in (1..=m.fine_tuned_steps).rev() {
            let mean = m.reverse_means(&m.params, &[tr.states[t].as_slice()], t).unwrap();
            tr.states[t - 1] = mean[0].clone();
        }
        assert_eq!(m.log_joint(&m.params, &tr).unwrap(), 0.0);

        // one step with squared deviation 0.1 and std² = 0.25
        let sched = NoiseSchedule::linear(3, 0.1, 0.2).unwrap().with_sigma_samp(0.5).unwrap();
        let spec = MlpSpec::new(vec![1 + TIME_EMBED_DIM, 3, 1], Activation::Tanh).unwrap();
        let p = spec.init(&mut seeded(2)).unwrap();
        let m1 = DiffusionModel::from_parts(sched, spec, p, 1).unwrap();
        let mut tr = m1.reverse_sample(&m1.params, 1, &mut seeded(3)).unwrap().remove(0);
        let mean = m1.reverse_means(&m1.params, &[tr.states[1].as_slice()], 1).unwrap();
        tr.states[0] = vec![mean[0][0] + 0.1f64.sqrt()];
        assert!((m1.log_joint(&m1.params, &tr).unwrap() + 0.2).abs() < 1e-12);
        tr.states[0] = vec![mean[0][0] + 0.2f64.sqrt()];
        assert!(m1.log_joint(&m1.params, &tr).unwrap() < -0.2);
    }

    #[test]
    fn ratio_identities() {
        let m = small_model(6);
        let mut other = m.clone();
        other.params.values_mut().iter_mut().for_each(|v| *v *= 1.05);
        let trajs = m.reverse_sample(&m.params, 5, &mut seeded(2)).unwrap();
        for tr in &trajs {
            assert_eq!(m.ppo_ratio(&m.params, &m, tr).unwrap(), 1.0);
            let r = other.ppo_ratio(&other.params, &m, tr).unwrap();
            let diff = other.log_joint(&other.params, tr).unwrap() - m.log_joint(&m.params, tr).unwrap();
            assert!((r.ln() - diff).abs() < 1e-12);
            let recorded = tr.recorded_log_joint(m.fine_tuned_steps, m.schedule.sigma_samp);
            assert!((recorded - m.log_joint(&m.params, tr).unwrap()).abs() < 1e-9);
        }
        let mut g = Graph::new();
        let b = g.bind(&m.params).unwrap();
        let lj = m.log_joint_graph(&mut g, &b, &trajs).unwrap();
        for (i, tr) in trajs.iter().enumerate() {
            assert!((g.value(lj).values()[i] - m.log_joint(&m.params, tr).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = small_model(8);
        let text = m.to_checkpoint().to_text();
        let back = DiffusionModel::from_checkpoint(
            &Checkpoint::parse(&text, std::path::Path::new("mem")).unwrap(),
        )
        .unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.schedule, m.schedule);
        assert_eq!(back.fine_tuned_steps, m.fine_tuned_steps);
    }

    #[test]
    fn ratio_rejects_schedule_mismatch() {
        let m = small_model(6);
        let mut other = m.clone();
        other.fine_tuned_steps = 2;
        let tr = m.reverse_sample(&m.params, 1, &mut seeded(2)).unwrap().remove(0);
        assert!(other.ppo_ratio(&other.params, &m, &tr).is_err());
    }
}
