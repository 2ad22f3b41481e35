use rand::Rng;

use super::diffusion::parse_widths;
use crate::error::{Error, Result};
use crate::numcore::{
    Activation, AdamState, BoundParams, Checkpoint, Graph, MlpSpec, ParamVector, Tensor, Var,
};
use crate::rng;

/// Fixed decoder variance `σ²` of `p_θ(x|z) = N(μ_θ(z), σ² I)`.
pub const DEFAULT_DECODER_VAR: f64 = 0.25;

/// Gaussian VAE. The encoder `φ` and decoder `θ` live in separate parameter
/// vectors so the inner maximization can move the decoder alone.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
    pub enc_params: ParamVector,
    pub params: ParamVector,
    pub decoder_var: f64,
}

/// Reparameterization noise, one latent-width row per example.
#[derive(Debug, Clone)]
pub struct VaeDraws {
    pub noise: Vec<Vec<f64>>,
}

impl VaeDraws {
    pub fn sample<R: Rng + ?Sized>(examples: usize, latent_dim: usize, rng: &mut R) -> Self {
        VaeDraws {
            noise: (0..examples).map(|_| rng::normals(rng, latent_dim)).collect(),
        }
    }
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(
        data_dim: usize,
        latent_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut enc = vec![data_dim];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent_dim);
        let mut dec = vec![latent_dim];
        dec.extend(hidden.iter().rev());
        dec.push(data_dim);
        let encoder = MlpSpec::new(enc, activation)?;
        let decoder = MlpSpec::new(dec, activation)?;
        let enc_params = encoder.init(rng)?;
        let params = decoder.init(rng)?;
        Self::from_parts(encoder, decoder, enc_params, params, DEFAULT_DECODER_VAR)
    }

    pub fn from_parts(
        encoder: MlpSpec,
        decoder: MlpSpec,
        enc_params: ParamVector,
        params: ParamVector,
        decoder_var: f64,
    ) -> Result<Self> {
        if encoder.output_width() != 2 * decoder.input_width() {
            return Err(Error::config("encoder output width must be twice the latent dim"));
        }
        if encoder.input_width() != decoder.output_width() {
            return Err(Error::config("decoder output width must equal data dim"));
        }
        if !(decoder_var > 0.0 && decoder_var.is_finite()) {
            return Err(Error::config(format!("decoder variance must be positive, got {decoder_var}")));
        }
        Ok(VaeModel {
            encoder,
            decoder,
            enc_params,
            params,
            decoder_var,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.output_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_width()
    }

    fn check_batch<T: AsRef<[f64]>>(&self, batch: &[T], width: usize, what: &'static str) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty(what));
        }
        if let Some(r) = batch.iter().find(|r| r.as_ref().len() != width) {
            return Err(Error::shape(what, format!("row width {}, expected {width}", r.as_ref().len())));
        }
        Ok(())
    }

    /// Records `(recon, prior_kl)`, each averaged over the batch.
    pub fn elbo_graph(
        &self,
        g: &mut Graph,
        enc: &BoundParams,
        dec: &BoundParams,
        batch: &[Vec<f64>],
        draws: &VaeDraws,
    ) -> Result<(Var, Var)> {
        self.check_batch(batch, self.data_dim(), "vae batch")?;
        if draws.noise.len() != batch.len() {
            return Err(Error::shape("vae_elbo", "one noise row per example required"));
        }
        let dz = self.latent_dim();
        let n = batch.len() as f64;
        let x = g.constant(Tensor::from_rows(batch)?)?;
        let h = self.encoder.forward(g, enc, "", x)?;
        let mean = g.slice_cols(h, 0, dz)?;
        let logvar = g.slice_cols(h, dz, 2 * dz)?;
        let half = g.scale(logvar, 0.5)?;
        let std = g.exp(half)?;
        let nu = g.constant(Tensor::from_rows(&draws.noise)?)?;
        let spread = g.mul(std, nu)?;
        let z = g.add(mean, spread)?;

        let recon_rows = self.neg_log_lik_rows(g, dec, x, z)?;
        let rs = g.sum(recon_rows)?;
        let recon = g.scale(rs, 1.0 / n)?;

        // KL(N(m, e^lv) || N(0, 1)) = ½ Σ (m² + e^lv − lv − 1)
        let m2 = g.square(mean)?;
        let var = g.exp(logvar)?;
        let a = g.add(m2, var)?;
        let b = g.sub(a, logvar)?;
        let c = g.add_scalar(b, -1.0)?;
        let ks = g.sum(c)?;
        let kl = g.scale(ks, 0.5 / n)?;
        Ok((recon, kl))
    }

    /// `‖x − μ_θ(z)‖² / (2σ²)` per row, as `[n, 1]`.
    fn neg_log_lik_rows(&self, g: &mut Graph, dec: &BoundParams, x: Var, z: Var) -> Result<Var> {
        let mu = self.decoder.forward(g, dec, "", z)?;
        let d = g.sub(x, mu)?;
        let sq = g.square(d)?;
        let rows = g.sum_cols(sq)?;
        g.scale(rows, 1.0 / (2.0 * self.decoder_var))
    }

    /// ELBO split `(recon_loss, prior_kl)` with one reparameterized draw per example.
    pub fn vae_elbo<R: Rng + ?Sized>(&self, batch: &[Vec<f64>], rng: &mut R) -> Result<(f64, f64)> {
        let draws = VaeDraws::sample(batch.len(), self.latent_dim(), rng);
        let mut g = Graph::new();
        let enc = g.bind(&self.enc_params)?;
        let dec = g.bind(&self.params)?;
        let (r, k) = self.elbo_graph(&mut g, &enc, &dec, batch, &draws)?;
        Ok((g.value(r).item()?, g.value(k).item()?))
    }

    /// Encoder `(mean, logvar)` rows for `xs`.
    pub fn encode(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_batch(xs, self.data_dim(), "vae encode")?;
        let h = self.encoder.eval(&self.enc_params, "", &Tensor::from_rows(xs)?)?;
        let dz = self.latent_dim();
        let rows = h.to_rows();
        Ok((
            rows.iter().map(|r| r[..dz].to_vec()).collect(),
            rows.iter().map(|r| r[dz..].to_vec()).collect(),
        ))
    }

    /// Reparameterized latents `μ_φ(x) + σ_φ(x) ⊙ ν`.
    pub fn encode_sample(&self, xs: &[Vec<f64>], draws: &VaeDraws) -> Result<Vec<Vec<f64>>> {
        let (mean, logvar) = self.encode(xs)?;
        Ok(mean
            .iter()
            .zip(&logvar)
            .zip(&draws.noise)
            .map(|((m, lv), nu)| {
                m.iter()
                    .zip(lv)
                    .zip(nu)
                    .map(|((m, lv), n)| m + (0.5 * lv).exp() * n)
                    .collect()
            })
            .collect())
    }

    pub fn decode(&self, params: &ParamVector, zs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.check_batch(zs, self.latent_dim(), "vae decode")?;
        Ok(self.decoder.eval(params, "", &Tensor::from_rows(zs)?)?.to_rows())
    }

    /// Reconstruction term on fixed latents, averaged over examples.
    pub fn recon_loss(&self, params: &ParamVector, xs: &[Vec<f64>], zs: &[Vec<f64>]) -> Result<f64> {
        let mu = self.decode(params, zs)?;
        self.check_batch(xs, self.data_dim(), "vae recon")?;
        if xs.len() != zs.len() {
            return Err(Error::shape("recon_loss", "one latent per example required"));
        }
        let total: f64 = xs
            .iter()
            .zip(&mu)
            .map(|(x, m)| sq_dist(x, m) / (2.0 * self.decoder_var))
            .sum();
        Ok(total / xs.len() as f64)
    }

    /// Reconstruction term on fixed latents, recorded on `g`.
    pub fn recon_loss_graph(&self, g: &mut Graph, dec: &BoundParams, xs: &[Vec<f64>], zs: &[Vec<f64>]) -> Result<Var> {
        let rows = self.log_lik_graph(g, dec, xs, zs)?;
        let s = g.sum(rows)?;
        g.scale(s, -1.0 / xs.len() as f64)
    }

    /// `ln p_θ(x|z)` per example up to a constant, as `[n, 1]`.
    pub fn log_lik_graph(&self, g: &mut Graph, dec: &BoundParams, xs: &[Vec<f64>], zs: &[Vec<f64>]) -> Result<Var> {
        self.check_batch(xs, self.data_dim(), "vae log-likelihood")?;
        self.check_batch(zs, self.latent_dim(), "vae log-likelihood")?;
        if xs.len() != zs.len() {
            return Err(Error::shape("log_lik", "one latent per example required"));
        }
        let x = g.constant(Tensor::from_rows(xs)?)?;
        let z = g.constant(Tensor::from_rows(zs)?)?;
        let rows = self.neg_log_lik_rows(g, dec, x, z)?;
        g.scale(rows, -1.0)
    }

    /// `p_θ(x, z) / p_old(x, z)` with shared latent and prior.
    pub fn vae_ratio(&self, x: &[f64], z: &[f64], params: &ParamVector, old: &ParamVector) -> Result<f64> {
        let z = vec![z.to_vec()];
        let mu = self.decode(params, &z)?;
        let mu_old = self.decode(old, &z)?;
        let r = ((sq_dist(x, &mu_old[0]) - sq_dist(x, &mu[0])) / (2.0 * self.decoder_var)).exp();
        if !r.is_finite() {
            return Err(Error::NonFinite("vae_ratio"));
        }
        Ok(r)
    }

    /// Draws `(x, z)` with `z` from the prior and `x ~ N(μ_θ(z), σ² I)`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        n: usize,
        rng: &mut R,
    ) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if n == 0 {
            return Err(Error::Empty("vae sample count"));
        }
        let zs: Vec<Vec<f64>> = (0..n).map(|_| rng::normals(rng, self.latent_dim())).collect();
        let xs = self.sample_given(params, &zs, rng)?;
        Ok((xs, zs))
    }

    /// `x ~ N(μ_θ(z), σ² I)` for each given latent.
    pub fn sample_given<R: Rng + ?Sized>(
        &self,
        params: &ParamVector,
        zs: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Vec<Vec<f64>>> {
        let std = self.decoder_var.sqrt();
        Ok(self
            .decode(params, zs)?
            .into_iter()
            .map(|m| m.into_iter().map(|v| v + std * rng::normal(rng)).collect())
            .collect())
    }

    /// Adam on the negative ELBO over minibatches; returns per-step losses.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        data: &[Vec<f64>],
        steps: usize,
        lr: f64,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        self.check_batch(data, self.data_dim(), "vae training data")?;
        let mut opt_enc = AdamState::new(lr, self.enc_params.len());
        let mut opt_dec = AdamState::new(lr, self.params.len());
        let mut losses = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mb = minibatch(data, batch, rng);
            let draws = VaeDraws::sample(mb.len(), self.latent_dim(), rng);
            let mut g = Graph::new();
            let enc = g.bind(&self.enc_params)?;
            let dec = g.bind(&self.params)?;
            let (r, k) = self.elbo_graph(&mut g, &enc, &dec, &mb, &draws)?;
            let l = g.add(r, k)?;
            losses.push(g.value(l).item()?);
            let grads = g.backward(l)?;
            grads.accumulate(&enc, &mut self.enc_params)?;
            grads.accumulate(&dec, &mut self.params)?;
            opt_enc.step(&mut self.enc_params)?;
            opt_dec.step(&mut self.params)?;
        }
        Ok(losses)
    }

    /// Checkpoint of both networks; encoder segments are prefixed `enc.`.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut all = ParamVector::new();
        for seg in self.enc_params.segments() {
            all.push(
                format!("enc.{}", seg.name),
                seg.shape.clone(),
                self.enc_params.values()[seg.range()].to_vec(),
            )?;
        }
        for seg in self.params.segments() {
            all.push(
                format!("dec.{}", seg.name),
                seg.shape.clone(),
                self.params.values()[seg.range()].to_vec(),
            )?;
        }
        let join = |w: &[usize]| w.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        Ok(Checkpoint::new(all)
            .with_meta("model", "vae")
            .with_meta("encoder_widths", join(&self.encoder.layer_widths))
            .with_meta("decoder_widths", join(&self.decoder.layer_widths))
            .with_meta("activation", self.encoder.activation.name())
            .with_meta("decoder_var", format!("{:?}", self.decoder_var)))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta("model")? != "vae" {
            return Err(Error::config("checkpoint does not hold a VAE"));
        }
        let act = Activation::parse(ck.meta("activation")?)?;
        let encoder = MlpSpec::new(parse_widths(ck.meta("encoder_widths")?)?, act)?;
        let decoder = MlpSpec::new(parse_widths(ck.meta("decoder_widths")?)?, act)?;
        let mut enc = ParamVector::new();
        let mut dec = ParamVector::new();
        for seg in ck.params.segments() {
            let vals = ck.params.values()[seg.range()].to_vec();
            if let Some(name) = seg.name.strip_prefix("enc.") {
                enc.push(name, seg.shape.clone(), vals)?;
            } else if let Some(name) = seg.name.strip_prefix("dec.") {
                dec.push(name, seg.shape.clone(), vals)?;
            } else {
                return Err(Error::config(format!("unexpected VAE segment {}", seg.name)));
            }
        }
        Self::from_parts(encoder, decoder, enc, dec, ck.meta_parse("decoder_var")?)
    }
}

/// `z + u` with `u` uniform in the ℓ2 ball of radius `eps_z`.
pub fn latent_perturb<R: Rng + ?Sized>(z: &[f64], eps_z: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(eps_z >= 0.0 && eps_z.is_finite()) {
        return Err(Error::config(format!("latent radius must be >= 0, got {eps_z}")));
    }
    if eps_z == 0.0 || z.is_empty() {
        return Ok(z.to_vec());
    }
    let dir = rng::normals(rng, z.len());
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let u: f64 = rng.random();
    let radius = eps_z * u.powf(1.0 / z.len() as f64);
    Ok(z.iter().zip(&dir).map(|(zi, d)| zi + radius * d / norm).collect())
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Uniform minibatch with replacement, or the full set when `size >= len`.
pub(crate) fn minibatch<R: Rng + ?Sized>(data: &[Vec<f64>], size: usize, rng: &mut R) -> Vec<Vec<f64>> {
    if size >= data.len() {
        return data.to_vec();
    }
    (0..size).map(|_| data[rng.random_range(0..data.len())].clone()).collect()
}
