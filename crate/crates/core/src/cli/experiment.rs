//! Typed experiment configuration, benchmark construction, training of every
//! method and evaluation on the corruption grid.

use std::path::{Path, PathBuf};

use rand::RngCore;

use super::config::Config;
use crate::baselines::{train_erm, train_kldro, train_wdro, KlDroConfig, TrainConfig, WDroConfig};
use crate::databench::{
    corrupt, ingest_csv, mse, synth_series, wasserstein1_sets, window, write_series_csv, CorruptionSpec,
    NormStats, SequenceDataset, ShiftFamilyConfig,
};
use crate::dro::{
    outer_min, DiffusionAdversary, ForecastLoss, LossFn, ObjectiveKind, OptimizerKind, PpoConfig, SolverConfig,
    SolverReport, VaeAdversary,
};
use crate::error::{Error, Result};
use crate::genmodels::{DenoisingObjective, DiffusionModel, NoiseSchedule, VaeModel};
use crate::numcore::{Activation, Checkpoint, MlpSpec, ParamVector};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Erm,
    Dml,
    KlDro,
    WDro,
    GasDro,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Erm, Method::Dml, Method::KlDro, Method::WDro, Method::GasDro];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Method::Erm),
            "dml" => Ok(Method::Dml),
            "kldro" => Ok(Method::KlDro),
            "wdro" => Ok(Method::WDro),
            "gasdro" => Ok(Method::GasDro),
            other => Err(Error::config(format!(
                "unknown method {other:?}; expected erm, dml, kldro, wdro or gasdro"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Dml => "dml",
            Method::KlDro => "kldro",
            Method::WDro => "wdro",
            Method::GasDro => "gasdro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    Ddpm,
    Vae,
}

impl GeneratorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(GeneratorKind::Ddpm),
            "vae" => Ok(GeneratorKind::Vae),
            other => Err(Error::config(format!("unknown generator {other:?}; expected ddpm or vae"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Ddpm => "ddpm",
            GeneratorKind::Vae => "vae",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        train: ShiftFamilyConfig,
        tests: Vec<ShiftFamilyConfig>,
        train_length: usize,
        test_length: usize,
    },
    /// CSV series already present in the data directory.
    Csv { test_ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdpmConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden: Vec<usize>,
    pub fine_tuned_steps: usize,
    pub sigma_samp: f64,
    /// Pretraining loss and constraint.
    pub objective: DenoisingObjective,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub latent: usize,
    pub hidden: Vec<usize>,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub eps_z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub method: Method,
    pub generator: GeneratorKind,
    pub source: DataSource,
    pub data_dir: PathBuf,
    pub l_in: usize,
    pub l_out: usize,
    pub stride: usize,
    pub predictor_hidden: Vec<usize>,
    pub predictor_activation: Activation,
    pub train: TrainConfig,
    pub ddpm: DdpmConfig,
    pub vae: VaeConfig,
    pub dml_augment: usize,
    pub dml_epochs: usize,
    pub kl: KlDroConfig,
    pub wdro: WDroConfig,
    pub solver: SolverConfig,
    pub excess: bool,
    pub eval_repeats: usize,
    pub warm_start: bool,
    pub corruptions: Vec<CorruptionSpec>,
    pub sweep_eps: Vec<f64>,
}

fn family(cfg: &Config, id: &str) -> Result<ShiftFamilyConfig> {
    let key = |k: &str| format!("family.{id}.{k}");
    if cfg.section(&format!("family.{id}")).is_empty() {
        return Err(Error::config(format!("no family.{id}.* keys for family {id:?}")));
    }
    let fam = ShiftFamilyConfig {
        id: id.to_string(),
        frequencies: cfg.get_list(&key("frequencies"))?,
        amplitudes: cfg.get_list(&key("amplitudes"))?,
        trend: cfg.get(&key("trend"))?,
        regime_offsets: cfg.get_list(&key("regime_offsets"))?,
        noise_std: cfg.get(&key("noise_std"))?,
    };
    fam.validate()?;
    Ok(fam)
}

fn parse_corruption(item: &str) -> Result<CorruptionSpec> {
    let (kind, level) = item
        .split_once(':')
        .ok_or_else(|| Error::config(format!("corruption {item:?} is not kind:level")))?;
    let level: f64 = level
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("corruption {item:?}: bad level")))?;
    CorruptionSpec::from_kind(kind.trim(), level)
}

impl ExperimentConfig {
    /// `out` anchors a relative `data.dir`.
    pub fn from_config(cfg: &Config, out: &Path) -> Result<Self> {
        let test_ids: Vec<String> = cfg.get_list("data.test_families")?;
        if test_ids.is_empty() {
            return Err(Error::config("data.test_families is empty"));
        }
        let source = match cfg.raw("data.source")? {
            "synthetic" => DataSource::Synthetic {
                train: family(cfg, cfg.raw("data.train_family")?)?,
                tests: test_ids.iter().map(|id| family(cfg, id)).collect::<Result<_>>()?,
                train_length: cfg.get("data.train_length")?,
                test_length: cfg.get("data.test_length")?,
            },
            "csv" => DataSource::Csv { test_ids },
            other => return Err(Error::config(format!("unknown data.source {other:?}"))),
        };
        let data_dir = PathBuf::from(cfg.raw("data.dir")?);
        let solver = SolverConfig {
            inner_epochs: cfg.get("solver.inner_epochs")?,
            outer_iters: cfg.get("solver.outer_iters")?,
            samples: cfg.get("solver.samples")?,
            outer_lr: cfg.get("solver.outer_lr")?,
            outer_steps: cfg.get("solver.outer_steps")?,
            inner_lr: cfg.get("solver.inner_lr")?,
            inner_optimizer: OptimizerKind::parse(cfg.raw("solver.inner_optimizer")?)?,
            batch: cfg.get("solver.batch")?,
            ppo: PpoConfig::new(cfg.get("solver.kappa")?, ObjectiveKind::parse(cfg.raw("solver.objective")?)?)?,
            mu_init: cfg.get("solver.mu_init")?,
            eta: cfg.get("solver.eta")?,
            eps: cfg.get("solver.eps")?,
            refresh_reference: cfg.get_bool("solver.refresh_reference")?,
            freeze_generator: cfg.get_bool("solver.freeze_generator")?,
            augment_nominal: cfg.get_bool("solver.augment_nominal")?,
        };
        solver.validate()?;
        let kl = KlDroConfig::new(cfg.get("kldro.eps")?);
        kl.validate()?;
        let wdro = WDroConfig {
            eps_w: cfg.get("wdro.eps")?,
            pgd_steps: cfg.get("wdro.pgd_steps")?,
            pgd_lr: cfg.get("wdro.pgd_lr")?,
        };
        wdro.validate()?;
        let train = TrainConfig {
            epochs: cfg.get("train.epochs")?,
            lr: cfg.get("train.lr")?,
            batch: cfg.get("train.batch")?,
        };
        train.validate()?;
        let out = ExperimentConfig {
            seed: cfg.get("seed")?,
            method: Method::parse(cfg.raw("method")?)?,
            generator: GeneratorKind::parse(cfg.raw("generator")?)?,
            source,
            data_dir: if data_dir.is_absolute() { data_dir } else { out.join(data_dir) },
            l_in: cfg.get("data.l_in")?,
            l_out: cfg.get("data.l_out")?,
            stride: cfg.get("data.stride")?,
            predictor_hidden: cfg.get_list("predictor.hidden")?,
            predictor_activation: Activation::parse(cfg.raw("predictor.activation")?)?,
            train,
            ddpm: DdpmConfig {
                steps: cfg.get("ddpm.steps")?,
                beta_min: cfg.get("ddpm.beta_min")?,
                beta_max: cfg.get("ddpm.beta_max")?,
                hidden: cfg.get_list("ddpm.hidden")?,
                fine_tuned_steps: cfg.get("ddpm.fine_tuned_steps")?,
                sigma_samp: cfg.get("ddpm.sigma_samp")?,
                objective: DenoisingObjective::parse(cfg.raw("ddpm.objective")?)?,
                pretrain_steps: cfg.get("ddpm.pretrain_steps")?,
                pretrain_lr: cfg.get("ddpm.pretrain_lr")?,
                pretrain_batch: cfg.get("ddpm.pretrain_batch")?,
            },
            vae: VaeConfig {
                latent: cfg.get("vae.latent")?,
                hidden: cfg.get_list("vae.hidden")?,
                pretrain_steps: cfg.get("vae.pretrain_steps")?,
                pretrain_lr: cfg.get("vae.pretrain_lr")?,
                pretrain_batch: cfg.get("vae.pretrain_batch")?,
                eps_z: cfg.get("vae.eps_z")?,
            },
            dml_augment: cfg.get("dml.augment_n")?,
            dml_epochs: cfg.get("dml.epochs")?,
            kl,
            wdro,
            solver,
            excess: cfg.get_bool("solver.excess")?,
            eval_repeats: cfg.get("solver.eval_repeats")?,
            warm_start: cfg.get_bool("solver.warm_start")?,
            corruptions: cfg
                .get_list::<String>("eval.corruptions")?
                .iter()
                .map(|s| parse_corruption(s))
                .collect::<Result<_>>()?,
            sweep_eps: cfg.get_list("sweep.eps")?,
        };
        if out.l_in == 0 || out.l_out == 0 || out.stride == 0 {
            return Err(Error::config("window lengths and stride must be positive"));
        }
        Ok(out)
    }

    pub fn forecast_loss(&self) -> Result<ForecastLoss> {
        let mut widths = vec![self.l_in];
        widths.extend(&self.predictor_hidden);
        widths.push(self.l_out);
        ForecastLoss::new(MlpSpec::new(widths, self.predictor_activation)?, self.l_in, self.l_out)
    }

    pub fn test_ids(&self) -> Vec<String> {
        match &self.source {
            DataSource::Synthetic { tests, .. } => tests.iter().map(|f| f.id.clone()).collect(),
            DataSource::Csv { test_ids } => test_ids.clone(),
        }
    }
}

pub const TRAIN_FILE: &str = "train.csv";

pub fn test_file(id: &str) -> String {
    format!("test_{id}.csv")
}

/// Raw series for the training family and every test family.
pub fn generate_series(cfg: &ExperimentConfig) -> Result<(Vec<f64>, Vec<(String, Vec<f64>)>)> {
    match &cfg.source {
        DataSource::Synthetic {
            train,
            tests,
            train_length,
            test_length,
        } => {
            let tr = synth_series(train, *train_length, &mut rng::derive(cfg.seed, "data/train"))?;
            let te = tests
                .iter()
                .map(|f| {
                    let s = synth_series(f, *test_length, &mut rng::derive(cfg.seed, &format!("data/test/{}", f.id)))?;
                    Ok((f.id.clone(), s))
                })
                .collect::<Result<_>>()?;
            Ok((tr, te))
        }
        DataSource::Csv { .. } => Err(Error::config("data.source = csv has nothing to generate")),
    }
}

/// Writes `train.csv` and one `test_<id>.csv` per family; returns the paths.
pub fn write_dataset_files(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (train, tests) = generate_series(cfg)?;
    std::fs::create_dir_all(&cfg.data_dir).map_err(|e| Error::io(&cfg.data_dir, e))?;
    let mut paths = vec![cfg.data_dir.join(TRAIN_FILE)];
    write_series_csv(&paths[0], &train)?;
    for (id, s) in tests {
        let p = cfg.data_dir.join(test_file(&id));
        write_series_csv(&p, &s)?;
        paths.push(p);
    }
    Ok(paths)
}

/// Windowed training and test sets, normalized with the training statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: SequenceDataset,
    pub tests: Vec<(String, SequenceDataset)>,
    pub stats: NormStats,
}

impl Benchmark {
    pub fn from_series(cfg: &ExperimentConfig, train: &[f64], tests: &[(String, Vec<f64>)]) -> Result<Self> {
        let raw = window(train, cfg.l_in, cfg.l_out, cfg.stride)?;
        let stats = raw.fit_stats()?;
        let tests = tests
            .iter()
            .map(|(id, s)| Ok((id.clone(), window(s, cfg.l_in, cfg.l_out, cfg.stride)?.normalized(stats))))
            .collect::<Result<_>>()?;
        Ok(Benchmark {
            train: raw.normalized(stats),
            tests,
            stats,
        })
    }

    /// Generates the series in memory.
    pub fn synthetic(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, tests) = generate_series(cfg)?;
        Self::from_series(cfg, &train, &tests)
    }

    /// Reads the series from the data directory.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let train = ingest_csv(&cfg.data_dir.join(TRAIN_FILE))?;
        let tests = cfg
            .test_ids()
            .into_iter()
            .map(|id| {
                let s = ingest_csv(&cfg.data_dir.join(test_file(&id)))?;
                Ok((id, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_series(cfg, &train, &tests)
    }
}

/// Predictor weights plus the diagnostics produced while training them.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub method: Method,
    pub loss: ForecastLoss,
    pub w: ParamVector,
    pub history: Vec<f64>,
    pub solver: Option<SolverReport>,
}

pub fn pretrain_ddpm(cfg: &ExperimentConfig, data: &[Vec<f64>]) -> Result<DiffusionModel> {
    let d = &cfg.ddpm;
    let sched = NoiseSchedule::linear(d.steps, d.beta_min, d.beta_max)?.with_sigma_samp(d.sigma_samp)?;
    let mut rng = rng::derive(cfg.seed, "ddpm");
    let dim = data.first().map(Vec::len).ok_or(Error::Empty("diffusion training data"))?;
    let mut model = DiffusionModel::new(dim, &d.hidden, Activation::Tanh, sched, d.fine_tuned_steps, &mut rng)?;
    model.fit_with(data, d.pretrain_steps, d.pretrain_lr, d.pretrain_batch, d.objective.sampled(), &mut rng)?;
    Ok(model)
}

pub fn pretrain_vae(cfg: &ExperimentConfig, data: &[Vec<f64>]) -> Result<VaeModel> {
    let v = &cfg.vae;
    let mut rng = rng::derive(cfg.seed, "vae");
    let dim = data.first().map(Vec::len).ok_or(Error::Empty("vae training data"))?;
    let mut model = VaeModel::new(dim, v.latent, &v.hidden, Activation::Tanh, &mut rng)?;
    model.fit(data, v.pretrain_steps, v.pretrain_lr, v.pretrain_batch, &mut rng)?;
    Ok(model)
}

/// ERM solution and pretrained generators shared between methods of one
/// seed. Entries are dropped whenever the settings they depend on change.
#[derive(Debug, Default)]
pub struct Pretrained {
    key: String,
    erm: Option<(ParamVector, Vec<f64>)>,
    ddpm: Option<DiffusionModel>,
    vae: Option<VaeModel>,
}

impl Pretrained {
    pub fn new() -> Self {
        Self::default()
    }

    fn sync(&mut self, cfg: &ExperimentConfig, bench: &Benchmark) {
        let key = format!(
            "{} {} {} {:?} {:?} {:?} {:?} {:?} {}",
            cfg.seed,
            cfg.l_in,
            cfg.l_out,
            cfg.predictor_hidden,
            cfg.predictor_activation,
            cfg.train,
            cfg.ddpm,
            cfg.vae,
            bench.train.len()
        );
        if key != self.key {
            *self = Pretrained {
                key,
                ..Default::default()
            };
        }
    }

    fn erm(&mut self, cfg: &ExperimentConfig, loss: &ForecastLoss, data: &[Vec<f64>]) -> Result<(ParamVector, Vec<f64>)> {
        if self.erm.is_none() {
            let mut w = initial_predictor(cfg, loss)?;
            let h = train_erm(loss, &mut w, data, &cfg.train, &mut rng::derive(cfg.seed, "erm"))?;
            self.erm = Some((w, h));
        }
        Ok(self.erm.clone().unwrap())
    }

    fn ddpm(&mut self, cfg: &ExperimentConfig, data: &[Vec<f64>]) -> Result<DiffusionModel> {
        if self.ddpm.is_none() {
            self.ddpm = Some(pretrain_ddpm(cfg, data)?);
        }
        Ok(self.ddpm.clone().unwrap())
    }

    fn vae(&mut self, cfg: &ExperimentConfig, data: &[Vec<f64>]) -> Result<VaeModel> {
        if self.vae.is_none() {
            self.vae = Some(pretrain_vae(cfg, data)?);
        }
        Ok(self.vae.clone().unwrap())
    }
}

fn initial_predictor(cfg: &ExperimentConfig, loss: &ForecastLoss) -> Result<ParamVector> {
    loss.init_params(&mut rng::derive(cfg.seed, "predictor"))
}

/// Trains `method` on the benchmark's training windows.
pub fn train_method(cfg: &ExperimentConfig, bench: &Benchmark, method: Method) -> Result<TrainedPredictor> {
    train_method_with(cfg, bench, method, &mut Pretrained::new())
}

/// As [`train_method`], reusing the ERM solution and generators in `cache`.
pub fn train_method_with(
    cfg: &ExperimentConfig,
    bench: &Benchmark,
    method: Method,
    cache: &mut Pretrained,
) -> Result<TrainedPredictor> {
    cache.sync(cfg, bench);
    let loss = cfg.forecast_loss()?;
    let mut w = initial_predictor(cfg, &loss)?;
    let data = &bench.train.windows;
    let mut history = Vec::new();
    let mut solver = None;
    match method {
        Method::Erm => (w, history) = cache.erm(cfg, &loss, data)?,
        Method::KlDro => history = train_kldro(&loss, &mut w, data, &cfg.kl, &cfg.train, &mut rng::derive(cfg.seed, "kldro"))?,
        Method::WDro => history = train_wdro(&loss, &mut w, data, &cfg.wdro, &cfg.train, &mut rng::derive(cfg.seed, "wdro"))?,
        Method::Dml => {
            (w, history) = cache.erm(cfg, &loss, data)?;
            let mut all = data.clone();
            if cfg.dml_augment > 0 {
                let mut rng = rng::derive(cfg.seed, "augment");
                all.extend(match cfg.generator {
                    GeneratorKind::Ddpm => {
                        let m = cache.ddpm(cfg, data)?;
                        m.sample(&m.params, cfg.dml_augment, &mut rng)?
                    }
                    GeneratorKind::Vae => {
                        let m = cache.vae(cfg, data)?;
                        m.sample(&m.params, cfg.dml_augment, &mut rng)?.0
                    }
                });
            }
            let ft = TrainConfig {
                epochs: cfg.dml_epochs,
                ..cfg.train
            };
            history.extend(train_erm(&loss, &mut w, &all, &ft, &mut rng::derive(cfg.seed, "dml"))?);
        }
        Method::GasDro => {
            if cfg.warm_start {
                (w, history) = cache.erm(cfg, &loss, data)?;
            }
            let mut rng = rng::derive(cfg.seed, "gasdro");
            let eval_seed = rng::derive(cfg.seed, "constraint-eval").next_u64();
            let report = match cfg.generator {
                GeneratorKind::Ddpm => {
                    let m = cache.ddpm(cfg, data)?;
                    let mut adv =
                        DiffusionAdversary::new(m, data.clone(), cfg.eval_repeats, eval_seed, cfg.ddpm.objective, cfg.excess)?;
                    outer_min(&mut w, &mut adv, &loss, &cfg.solver, &mut rng)?
                }
                GeneratorKind::Vae => {
                    let m = cache.vae(cfg, data)?;
                    let mut adv = VaeAdversary::new(m, data.clone(), cfg.vae.eps_z, cfg.excess)?;
                    outer_min(&mut w, &mut adv, &loss, &cfg.solver, &mut rng)?
                }
            };
            history.extend(report.outer.iter().map(|r| r.worst_case_loss));
            solver = Some(report);
        }
    }
    Ok(TrainedPredictor {
        method,
        loss,
        w,
        history,
        solver,
    })
}

impl TrainedPredictor {
    pub fn to_checkpoint(&self, cfg: &ExperimentConfig, stats: NormStats) -> Checkpoint {
        let widths: Vec<String> = self.loss.spec.layer_widths.iter().map(|w| w.to_string()).collect();
        Checkpoint::new(self.w.clone())
            .with_meta("model", "predictor")
            .with_meta("method", self.method.name())
            .with_meta("seed", cfg.seed)
            .with_meta("widths", widths.join(","))
            .with_meta("activation", self.loss.spec.activation.name())
            .with_meta("l_in", self.loss.l_in)
            .with_meta("l_out", self.loss.l_out)
            .with_meta("norm_mean", format!("{:?}", stats.mean))
            .with_meta("norm_std", format!("{:?}", stats.std))
    }

    /// Rebuilds a predictor; the window split must match `cfg`.
    pub fn from_checkpoint(ck: &Checkpoint, cfg: &ExperimentConfig) -> Result<Self> {
        if ck.meta("model")? != "predictor" {
            return Err(Error::config("checkpoint is not a predictor"));
        }
        let widths = ck
            .meta("widths")?
            .split(',')
            .map(|w| w.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::config("checkpoint widths are malformed"))?;
        let spec = MlpSpec::new(widths, Activation::parse(ck.meta("activation")?)?)?;
        let (l_in, l_out): (usize, usize) = (ck.meta_parse("l_in")?, ck.meta_parse("l_out")?);
        if (l_in, l_out) != (cfg.l_in, cfg.l_out) {
            return Err(Error::shape(
                "checkpoint",
                format!("checkpoint split {l_in}+{l_out} does not match config {}+{}", cfg.l_in, cfg.l_out),
            ));
        }
        let loss = ForecastLoss::new(spec, l_in, l_out)?;
        if ck.params.len() != loss.spec.param_count() {
            return Err(Error::shape("checkpoint", "parameter count does not match widths"));
        }
        Ok(TrainedPredictor {
            method: Method::parse(ck.meta("method")?)?,
            loss,
            w: ck.params.clone(),
            history: Vec::new(),
            solver: None,
        })
    }
}

/// One evaluation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run: String,
    pub method: String,
    pub dataset: String,
    /// `clean` or a corruption kind.
    pub corruption: String,
    pub level: f64,
    pub mse: f64,
    pub w1: f64,
}

pub const MEMORY_NOTE: &str = "untracked";

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        format!(
            "run={} method={} dataset={} corruption={} level={:?} mse={:?} w1={:?} peak_memory={}",
            self.run, self.method, self.dataset, self.corruption, self.level, self.mse, self.w1, MEMORY_NOTE
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let mut get = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::config(format!("metrics token {tok:?} is not key=value")))?;
            get.insert(k, v);
        }
        let field = |k: &str| {
            get.get(k)
                .copied()
                .ok_or_else(|| Error::config(format!("metrics line lacks {k:?}")))
        };
        let num = |k: &str| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|_| Error::config(format!("metrics field {k:?} is not a number")))
        };
        Ok(MetricsRecord {
            run: field("run")?.to_string(),
            method: field("method")?.to_string(),
            dataset: field("dataset")?.to_string(),
            corruption: field("corruption")?.to_string(),
            level: num("level")?,
            mse: num("mse")?,
            w1: num("w1")?,
        })
    }

    pub fn is_clean(&self) -> bool {
        self.corruption == "clean"
    }
}

/// Clean cell followed by every corruption cell, per test set, in order.
pub fn evaluate(cfg: &ExperimentConfig, bench: &Benchmark, pred: &TrainedPredictor) -> Result<Vec<MetricsRecord>> {
    let run = format!("{}-{}", cfg.seed, pred.method.name());
    let mut out = Vec::new();
    for (id, ds) in &bench.tests {
        let mut cells: Vec<(String, f64, SequenceDataset)> = vec![("clean".into(), 0.0, ds.clone())];
        for spec in &cfg.corruptions {
            let mut rng = rng::derive(cfg.seed, &format!("eval/{id}/{}/{:?}", spec.kind(), spec.level()));
            cells.push((spec.kind().to_string(), spec.level(), corrupt(ds, spec, &mut rng)?));
        }
        for (kind, level, cds) in cells {
            let preds = pred.loss.predict(&pred.w, &cds.windows)?;
            let flat_p: Vec<f64> = preds.concat();
            let flat_t: Vec<f64> = cds.targets().concat();
            out.push(MetricsRecord {
                run: run.clone(),
                method: pred.method.name().to_string(),
                dataset: id.clone(),
                corruption: kind,
                level,
                mse: mse(&flat_p, &flat_t)?,
                w1: wasserstein1_sets(&bench.train.windows, &cds.windows)?,
            });
        }
    }
    Ok(out)
}

/// Mean and maximum clean MSE over the test sets.
pub fn clean_summary(records: &[MetricsRecord]) -> Result<(f64, f64)> {
    let clean: Vec<f64> = records.iter().filter(|r| r.is_clean()).map(|r| r.mse).collect();
    if clean.is_empty() {
        return Err(Error::Empty("clean metrics"));
    }
    Ok((
        clean.iter().sum::<f64>() / clean.len() as f64,
        clean.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    ))
}
