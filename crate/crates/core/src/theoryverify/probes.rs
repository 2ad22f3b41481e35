use rand::Rng as _;

use super::toy::{toy_grid_optimum, toy_inner_optimum, toy_phi, toy_recon, gaussian_kl, GaussianToy, GaussianToyAdversary};
use crate::baselines::{kl_dro_bruteforce, kl_dro_dual, KlDroConfig};
use crate::dro::{inner_max, outer_min, ObjectiveKind, Optimizer, OptimizerKind, PpoConfig, SolverConfig, SquaredDistance};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Outcome of one verification probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub name: String,
    pub trials: usize,
    pub passes: usize,
    /// Smallest `bound − measured` over all checked inequalities.
    pub worst_slack: f64,
    pub notes: Vec<String>,
}

impl ProbeReport {
    fn new(name: &str) -> Self {
        ProbeReport {
            name: name.to_string(),
            trials: 0,
            passes: 0,
            worst_slack: f64::INFINITY,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, slack: f64) {
        self.trials += 1;
        if ok {
            self.passes += 1;
        }
        self.worst_slack = self.worst_slack.min(slack);
    }

    pub fn passed(&self) -> bool {
        self.trials > 0 && self.passes == self.trials
    }

    /// One `key=value` line.
    pub fn record_line(&self) -> String {
        format!(
            "probe={} trials={} passes={} worst_slack={:e} status={}",
            self.name,
            self.trials,
            self.passes,
            self.worst_slack,
            if self.passed() { "pass" } else { "fail" }
        )
    }
}

/// Left and right sides of the averaged dual-descent inequality for one
/// sequence `b`: `(1/K) Σ ⟨μ_k − μ, b_k⟩` and
/// `η (1/K) Σ b_k² + (μ − μ₁)² / (2Kη)`.
pub fn dual_lemma_sides(eta: f64, mu1: f64, mu: f64, b: &[f64]) -> (f64, f64) {
    let k = b.len() as f64;
    let mut mu_k = mu1;
    let mut lhs = 0.0;
    let mut sq = 0.0;
    for &bk in b {
        lhs += (mu_k - mu) * bk;
        sq += bk * bk;
        mu_k = (mu_k - eta * bk).max(0.0);
    }
    (lhs / k, eta * sq / k + (mu - mu1).powi(2) / (2.0 * k * eta))
}

pub fn check_dual_lemma(trials: usize, rng: &mut Rng) -> ProbeReport {
    let mut rep = ProbeReport::new("dual-lemma");
    for _ in 0..trials {
        let eta = 1.0 - rng.random::<f64>();
        let mu1 = rng.random_range(0.0..=5.0);
        let mu = rng.random_range(0.0..=5.0);
        let k = rng.random_range(1..=200);
        let b: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..=3.0)).collect();
        let (lhs, rhs) = dual_lemma_sides(eta, mu1, mu, &b);
        rep.check(lhs <= rhs + 1e-9, rhs - lhs);
    }
    rep
}

/// Settings for the inner-maximization probe on the Gaussian toy.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Config {
    pub toy: GaussianToy,
    pub k_list: Vec<usize>,
    pub replicates: usize,
    pub mc_samples: usize,
    /// Plain gradient step on `θ`.
    pub lr: f64,
    /// Dual step is `c / √K`.
    pub c: f64,
    pub mu1: f64,
    pub kl_tolerance: f64,
}

impl Default for Theorem1Config {
    fn default() -> Self {
        Theorem1Config {
            toy: GaussianToy { w: 0.0, eps: 0.5 },
            k_list: vec![25, 100, 400],
            replicates: 8,
            mc_samples: 10_000,
            lr: 0.3,
            c: 3.0,
            mu1: 2.0,
            kl_tolerance: 0.1,
        }
    }
}

/// Per-`K` measurements of the toy probe.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Row {
    pub k: usize,
    pub gap: f64,
    pub se: f64,
    pub bound: f64,
    pub j_bar: f64,
    pub mean_kl: f64,
}

/// Runs the solver's inner loop on the toy for each `K` and returns
/// gaps to the grid optimum with replicate standard errors.
pub fn theorem1_rows(cfg: &Theorem1Config, seed: u64) -> Result<Vec<Theorem1Row>> {
    if cfg.replicates < 2 || cfg.mc_samples == 0 {
        return Err(Error::config("need at least 2 replicates and a positive sample count"));
    }
    let (_, best) = toy_grid_optimum(&cfg.toy, 100_001);
    let loss = SquaredDistance { dim: 1 };
    let mut w = crate::numcore::ParamVector::new();
    w.push("w", vec![1], vec![cfg.toy.w])?;
    let mut rows = Vec::new();
    for &k in &cfg.k_list {
        let solver = SolverConfig {
            inner_epochs: k,
            samples: cfg.mc_samples,
            batch: cfg.mc_samples,
            inner_lr: cfg.lr,
            inner_optimizer: OptimizerKind::Sgd,
            ppo: PpoConfig { kappa: 0.4, objective: ObjectiveKind::Vpg },
            mu_init: cfg.mu1,
            eta: cfg.c / (k as f64).sqrt(),
            eps: cfg.toy.eps,
            ..SolverConfig::desk()
        };
        let mut gaps = Vec::new();
        let mut j_bar = cfg.toy.eps;
        let mut kl_sum = 0.0;
        for r in 0..cfg.replicates {
            let mut adv = GaussianToyAdversary::new(0.0);
            let mut dual = solver.dual()?;
            let mut opt = Optimizer::new(OptimizerKind::Sgd, cfg.lr, 1);
            let mut rng = rng::derive(seed, &format!("theorem1/{k}/{r}"));
            let reference = adv.params.clone();
            let recs = inner_max(&mut adv, &loss, &w, &reference, &mut dual, &solver, &mut opt, &mut rng)?;
            let mean_value = recs.iter().map(|e| e.mean_f).sum::<f64>() / k as f64;
            gaps.push(best - mean_value);
            j_bar = recs.iter().map(|e| e.j).fold(j_bar, f64::max);
            kl_sum += recs.iter().map(|e| e.j).sum::<f64>() / k as f64;
        }
        let n = gaps.len() as f64;
        let gap = gaps.iter().sum::<f64>() / n;
        let var = gaps.iter().map(|g| (g - gap).powi(2)).sum::<f64>() / (n - 1.0);
        rows.push(Theorem1Row {
            k,
            gap,
            se: (var / n).sqrt(),
            bound: j_bar.max(cfg.toy.eps) * cfg.mu1 / (k as f64).sqrt(),
            j_bar,
            mean_kl: kl_sum / n,
        });
    }
    Ok(rows)
}

pub fn check_theorem1(cfg: &Theorem1Config, seed: u64) -> Result<ProbeReport> {
    let rows = theorem1_rows(cfg, seed)?;
    let mut rep = ProbeReport::new("theorem1");
    for r in &rows {
        let slack = r.bound + 3.0 * r.se - r.gap;
        rep.check(slack >= 0.0, slack);
        rep.notes.push(format!(
            "K={} gap={:.5} se={:.5} bound={:.5} j_bar={:.4} mean_kl={:.4}",
            r.k, r.gap, r.se, r.bound, r.j_bar, r.mean_kl
        ));
    }
    for pair in rows.windows(2) {
        let tol = 3.0 * pair[0].se.hypot(pair[1].se);
        let slack = pair[0].gap + tol - pair[1].gap;
        rep.check(slack >= 0.0, slack);
    }
    if let Some(last) = rows.last() {
        let slack = cfg.toy.eps + cfg.kl_tolerance - last.mean_kl;
        rep.check(slack >= 0.0, slack);
    }
    Ok(rep)
}

/// Proximal search settings for the Moreau-envelope gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoreauProbe {
    pub beta: f64,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
}

impl MoreauProbe {
    pub fn new(beta: f64, grid_lo: f64, grid_hi: f64, grid_step: f64) -> Result<Self> {
        if !(beta > 0.0 && grid_step > 0.0 && grid_lo < grid_hi) {
            return Err(Error::config("moreau probe needs beta > 0, step > 0, lo < hi"));
        }
        Ok(MoreauProbe { beta, grid_lo, grid_hi, grid_step })
    }

    /// Grid argmin of `φ(w') + β (w − w')²`.
    pub fn prox(&self, phi: &dyn Fn(f64) -> f64, w: f64) -> Result<f64> {
        let n = ((self.grid_hi - self.grid_lo) / self.grid_step).round() as usize;
        let mut best = (self.grid_lo, f64::INFINITY);
        for i in 0..=n {
            let wp = self.grid_lo + i as f64 * self.grid_step;
            let v = phi(wp) + self.beta * (w - wp).powi(2);
            if v < best.1 {
                best = (wp, v);
            }
        }
        if best.0 <= self.grid_lo + 0.5 * self.grid_step || best.0 >= self.grid_hi - 0.5 * self.grid_step {
            return Err(Error::Search(format!("proximal point for w={w} lies on the grid boundary")));
        }
        Ok(best.0)
    }
}

/// `2β |w − ŵ|`.
pub fn estimate_moreau_grad(phi: &dyn Fn(f64) -> f64, w: f64, probe: &MoreauProbe) -> Result<f64> {
    Ok(2.0 * probe.beta * (w - probe.prox(phi, w)?).abs())
}

/// On the closed-form toy, `2β(w − ŵ)` must be a (sub)gradient of `φ` at `ŵ`.
pub fn check_moreau_identity(eps: f64, probe: &MoreauProbe, ws: &[f64]) -> Result<ProbeReport> {
    let mut rep = ProbeReport::new("moreau");
    let r = (2.0 * eps).sqrt();
    let phi = |w: f64| toy_phi(w, eps);
    for &w in ws {
        let wh = probe.prox(&phi, w)?;
        let lhs = 2.0 * probe.beta * (w - wh);
        let tol = 4.0 * probe.beta * probe.grid_step + 4.0 * probe.grid_step;
        let slack = if wh.abs() <= probe.grid_step {
            2.0 * r + tol - lhs.abs()
        } else {
            tol - (lhs - 2.0 * (wh.abs() + r) * wh.signum()).abs()
        };
        rep.check(slack >= 0.0, slack);
    }
    Ok(rep)
}

/// Least-squares slope of `ys` against `0, 1, ...`.
pub fn trend_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (i, y) in ys.iter().enumerate() {
        num += (i as f64 - mx) * (y - my);
        den += (i as f64 - mx).powi(2);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Moreau-gradient estimates along a full min-max run on the toy.
pub fn theorem2_trace(eps: f64, w0: f64, outer_iters: usize, seed: u64) -> Result<Vec<f64>> {
    let loss = SquaredDistance { dim: 1 };
    let mut adv = GaussianToyAdversary::new(0.0);
    let mut w = crate::numcore::ParamVector::new();
    w.push("w", vec![1], vec![w0])?;
    let cfg = SolverConfig {
        inner_epochs: 10,
        outer_iters,
        samples: 2000,
        batch: 2000,
        outer_lr: 0.1,
        outer_steps: 5,
        inner_lr: 0.3,
        inner_optimizer: OptimizerKind::Sgd,
        ppo: PpoConfig { kappa: 0.4, objective: ObjectiveKind::Vpg },
        mu_init: 2.0,
        eta: 0.5,
        eps,
        ..SolverConfig::desk()
    };
    let mut rng = rng::derive(seed, "theorem2");
    let rep = outer_min(&mut w, &mut adv, &loss, &cfg, &mut rng)?;
    let probe = MoreauProbe::new(1.0, -(w0.abs() + 6.0), w0.abs() + 6.0, 1e-3)?;
    let phi = |x: f64| toy_phi(x, eps);
    let mut out = vec![estimate_moreau_grad(&phi, w0, &probe)?];
    for wj in &rep.w_trace {
        out.push(estimate_moreau_grad(&phi, wj[0], &probe)?);
    }
    Ok(out)
}

pub fn check_theorem2(seed: u64) -> Result<ProbeReport> {
    let trace = theorem2_trace(0.5, 3.0, 15, seed)?;
    let slope = trend_slope(&trace);
    let mut rep = ProbeReport::new("theorem2");
    rep.check(slope < 0.0, -slope);
    rep.notes.push(format!("slope={slope:.5} first={:.4} last={:.4}", trace[0], trace[trace.len() - 1]));
    Ok(rep)
}

/// `J(θ) = KL(P₀ ‖ P_θ)` on the toy, and the closed-form optimum against the grid.
pub fn check_toy_identities() -> ProbeReport {
    let mut rep = ProbeReport::new("toy-kl");
    for i in -40..=40 {
        let th = i as f64 * 0.1;
        let d = (toy_recon(th) - gaussian_kl(0.0, 1.0, th, 1.0)).abs();
        rep.check(d <= 1e-12, 1e-12 - d);
    }
    for (w, eps) in [(0.0, 0.5), (1.0, 0.5), (-0.4, 0.2)] {
        let toy = GaussianToy { w, eps };
        let d = (toy_inner_optimum(&toy).1 - toy_grid_optimum(&toy, 100_001).1).abs();
        rep.check(d <= 1e-8, 1e-8 - d);
    }
    rep
}

/// Dual KL-DRO value against the tilting oracle on random discrete instances.
pub fn check_kl_duality(instances: usize, rng: &mut Rng) -> Result<ProbeReport> {
    let mut rep = ProbeReport::new("kl-duality");
    let budgets = [0.01, 0.1, 0.5];
    for i in 0..instances {
        let size = rng.random_range(2..=10);
        let f: Vec<f64> = (0..size).map(|_| rng.random_range(0.0..3.0)).collect();
        let eps = budgets[i % budgets.len()];
        let p = vec![1.0 / size as f64; size];
        let dual = kl_dro_dual(&f, &KlDroConfig::new(eps))?.value;
        let brute = kl_dro_bruteforce(&f, &p, eps)?;
        let d = (dual - brute).abs();
        rep.check(d <= 1e-4, 1e-4 - d);
    }
    let d = (kl_dro_dual(&[0.0, 1.0], &KlDroConfig::new(0.1))?.value - kl_dro_bruteforce(&[0.0, 1.0], &[0.5, 0.5], 0.1)?).abs();
    rep.check(d <= 1e-4, 1e-4 - d);
    Ok(rep)
}

pub const PROBE_NAMES: [&str; 6] = ["dual-lemma", "theorem1", "moreau", "theorem2", "toy-kl", "kl-duality"];

/// Runs one named probe.
pub fn run_probe(name: &str, seed: u64) -> Result<ProbeReport> {
    match name {
        "dual-lemma" => Ok(check_dual_lemma(1000, &mut rng::derive(seed, name))),
        "theorem1" => check_theorem1(&Theorem1Config::default(), seed),
        "moreau" => {
            let probe = MoreauProbe::new(1.0, -8.0, 8.0, 1e-3)?;
            check_moreau_identity(0.5, &probe, &[-3.0, -1.5, -0.2, 0.0, 0.4, 2.0, 5.0])
        }
        "theorem2" => check_theorem2(seed),
        "toy-kl" => Ok(check_toy_identities()),
        "kl-duality" => check_kl_duality(100, &mut rng::derive(seed, name)),
        other => Err(Error::config(format!(
            "unknown probe {other}; expected one of {}",
            PROBE_NAMES.join(", ")
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn dual_lemma_trivial_cases() {
        let (l, r) = dual_lemma_sides(0.5, 1.0, 1.0, &[0.0; 10]);
        assert_eq!(l, 0.0);
        assert!(r >= 0.0);
        let (l, r) = dual_lemma_sides(0.3, 2.0, 2.0, &[1.7]);
        assert_eq!(l, 0.0);
        assert!((r - 0.3 * 1.7 * 1.7).abs() < 1e-12);
        assert!(check_dual_lemma(200, &mut seeded(1)).passed());
    }

    #[test]
    fn moreau_hand_value() {
        let probe = MoreauProbe::new(1.0, -6.0, 6.0, 1e-4).unwrap();
        let phi = |w: f64| toy_phi(w, 0.5);
        let est = estimate_moreau_grad(&phi, 2.0, &probe).unwrap();
        assert!((est - 3.0).abs() < 1e-3);
        assert!((probe.prox(&phi, 2.0).unwrap() - 0.5).abs() < 1e-3);
        assert!(estimate_moreau_grad(&phi, 0.0, &probe).unwrap() <= 2.0 * probe.grid_step + 1e-12);
        let narrow = MoreauProbe::new(1.0, 1.0, 2.0, 1e-3).unwrap();
        assert!(estimate_moreau_grad(&phi, 2.0, &narrow).is_err());
    }

    #[test]
    fn slope_of_line() {
        assert!((trend_slope(&[3.0, 2.5, 2.0, 1.5]) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn unknown_probe() {
        assert!(matches!(run_probe("nope", 0), Err(Error::Config(_))));
    }

    #[test]
    fn identity_probes_pass() {
        assert!(check_toy_identities().passed());
        assert!(run_probe("moreau", 0).unwrap().passed());
        assert!(check_kl_duality(30, &mut seeded(2)).unwrap().passed());
    }
}
