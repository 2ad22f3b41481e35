use rand::Rng as _;

use crate::error::{Error, Result};
use crate::genmodels::{latent_perturb, DenoisingObjective, DiffusionModel, DmDraws, Trajectory, VaeModel};
use crate::numcore::{BoundParams, Graph, ParamVector, Var};
use crate::rng::{self, Rng};

/// A generative model that plays the maximizing side.
///
/// `constraint` is the reconstruction loss on the nominal set used by the
/// dual update; `recon_graph` is a differentiable estimate of the same loss.
pub trait GenerativeAdversary {
    type Sample: Clone;

    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;

    fn draw(&self, params: &ParamVector, n: usize, rng: &mut Rng) -> Result<Vec<Self::Sample>>;

    /// The data point a sample contributes to `f`.
    fn point<'a>(&self, s: &'a Self::Sample) -> &'a [f64];

    /// Log-density of each sample under the recorded parameters, as `[n, 1]`.
    fn log_prob_graph(&self, g: &mut Graph, bound: &BoundParams, samples: &[Self::Sample]) -> Result<Var>;

    fn log_prob(&self, params: &ParamVector, samples: &[Self::Sample]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = g.bind(params)?;
        let v = self.log_prob_graph(&mut g, &b, samples)?;
        Ok(g.value(v).values().to_vec())
    }

    /// Differentiable estimate of the reconstruction loss (scalar).
    fn recon_graph(&self, g: &mut Graph, bound: &BoundParams, rng: &mut Rng) -> Result<Var>;

    /// Deterministic constraint value `J(θ, S₀)` (minus the configured offset).
    fn constraint(&self, params: &ParamVector) -> Result<f64>;

    /// Nominal examples, if the adversary keeps them.
    fn nominal(&self) -> &[Vec<f64>] {
        &[]
    }

    /// Dataset handed to the minimizing player.
    fn dataset(&self, params: &ParamVector, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let s = self.draw(params, n, rng)?;
        Ok(s.iter().map(|s| self.point(s).to_vec()).collect())
    }
}

/// Diffusion model plus the nominal set that anchors its constraint.
#[derive(Debug, Clone)]
pub struct DiffusionAdversary {
    pub model: DiffusionModel,
    pub nominal: Vec<Vec<f64>>,
    eval_batch: Vec<Vec<f64>>,
    eval_draws: DmDraws,
    pub objective: DenoisingObjective,
    /// Subtracted from the raw loss in `constraint`.
    pub offset: f64,
}

impl DiffusionAdversary {
    /// The fixed evaluation set covers every nominal example at every step
    /// of `objective`, with `eval_repeats` noise draws each. With `excess`, the constraint is measured relative to
    /// the loss of the model as given.
    pub fn new(
        model: DiffusionModel,
        nominal: Vec<Vec<f64>>,
        eval_repeats: usize,
        eval_seed: u64,
        objective: DenoisingObjective,
        excess: bool,
    ) -> Result<Self> {
        if nominal.is_empty() {
            return Err(Error::Empty("nominal set"));
        }
        let eval_batch: Vec<Vec<f64>> = (0..eval_repeats.max(1)).flat_map(|_| nominal.iter().cloned()).collect();
        let eval_draws = DmDraws::sample(
            &model.schedule,
            eval_batch.len(),
            model.data_dim(),
            objective.full(),
            &mut rng::seeded(eval_seed),
        )?;
        let mut adv = DiffusionAdversary {
            model,
            nominal,
            eval_batch,
            eval_draws,
            objective,
            offset: 0.0,
        };
        if excess {
            adv.offset = adv.raw_constraint(&adv.model.params)?;
        }
        Ok(adv)
    }

    pub fn raw_constraint(&self, params: &ParamVector) -> Result<f64> {
        let mut g = Graph::new();
        let b = g.bind(params)?;
        let l = self.model.dm_loss_graph(&mut g, &b, &self.eval_batch, &self.eval_draws)?;
        g.value(l).item()
    }
}

impl GenerativeAdversary for DiffusionAdversary {
    type Sample = Trajectory;

    fn nominal(&self) -> &[Vec<f64>] {
        &self.nominal
    }

    fn params(&self) -> &ParamVector {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.model.params
    }

    fn draw(&self, params: &ParamVector, n: usize, rng: &mut Rng) -> Result<Vec<Trajectory>> {
        self.model.reverse_sample(params, n, rng)
    }

    fn point<'a>(&self, s: &'a Trajectory) -> &'a [f64] {
        s.sample()
    }

    fn log_prob_graph(&self, g: &mut Graph, bound: &BoundParams, samples: &[Trajectory]) -> Result<Var> {
        self.model.log_joint_graph(g, bound, samples)
    }

    fn recon_graph(&self, g: &mut Graph, bound: &BoundParams, rng: &mut Rng) -> Result<Var> {
        let draws = DmDraws::sample(
            &self.model.schedule,
            self.nominal.len(),
            self.model.data_dim(),
            self.objective.sampled(),
            rng,
        )?;
        self.model.dm_loss_graph(g, bound, &self.nominal, &draws)
    }

    fn constraint(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.raw_constraint(params)? - self.offset)
    }
}

/// One VAE draw: latent and generated point.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeSample {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// VAE decoder as the adversary; the encoder stays fixed.
#[derive(Debug, Clone)]
pub struct VaeAdversary {
    pub model: VaeModel,
    pub nominal: Vec<Vec<f64>>,
    /// Encoder means of the nominal set.
    pub latents: Vec<Vec<f64>>,
    /// Radius of the uniform latent perturbation applied when drawing.
    pub eps_z: f64,
    pub offset: f64,
}

impl VaeAdversary {
    pub fn new(model: VaeModel, nominal: Vec<Vec<f64>>, eps_z: f64, excess: bool) -> Result<Self> {
        let (latents, _) = model.encode(&nominal)?;
        let mut adv = VaeAdversary {
            model,
            nominal,
            latents,
            eps_z,
            offset: 0.0,
        };
        if excess {
            adv.offset = adv.model.recon_loss(&adv.model.params, &adv.nominal, &adv.latents)?;
        }
        Ok(adv)
    }

    fn perturbed_latents(&self, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        (0..n)
            .map(|_| {
                let z = &self.latents[rng.random_range(0..self.latents.len())];
                latent_perturb(z, self.eps_z, rng)
            })
            .collect()
    }
}

impl GenerativeAdversary for VaeAdversary {
    type Sample = VaeSample;

    fn nominal(&self) -> &[Vec<f64>] {
        &self.nominal
    }

    fn params(&self) -> &ParamVector {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.model.params
    }

    fn draw(&self, params: &ParamVector, n: usize, rng: &mut Rng) -> Result<Vec<VaeSample>> {
        if n == 0 {
            return Err(Error::Empty("vae draw count"));
        }
        let zs = self.perturbed_latents(n, rng)?;
        let xs = self.model.sample_given(params, &zs, rng)?;
        Ok(xs.into_iter().zip(zs).map(|(x, z)| VaeSample { x, z }).collect())
    }

    fn point<'a>(&self, s: &'a VaeSample) -> &'a [f64] {
        &s.x
    }

    fn log_prob_graph(&self, g: &mut Graph, bound: &BoundParams, samples: &[VaeSample]) -> Result<Var> {
        let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
        let zs: Vec<Vec<f64>> = samples.iter().map(|s| s.z.clone()).collect();
        self.model.log_lik_graph(g, bound, &xs, &zs)
    }

    fn recon_graph(&self, g: &mut Graph, bound: &BoundParams, _rng: &mut Rng) -> Result<Var> {
        self.model.recon_loss_graph(g, bound, &self.nominal, &self.latents)
    }

    fn constraint(&self, params: &ParamVector) -> Result<f64> {
        Ok(self.model.recon_loss(params, &self.nominal, &self.latents)? - self.offset)
    }

    /// Decoder means at perturbed nominal latents.
    fn dataset(&self, params: &ParamVector, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let zs = self.perturbed_latents(n, rng)?;
        self.model.decode(params, &zs)
    }
}
