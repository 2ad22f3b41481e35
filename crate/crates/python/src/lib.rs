//! Python bindings: generators, KL-DRO dual, corruption and W₁ utilities,
//! theory probes and the experiment pipeline.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gasdro::cli::{self, clean_summary, evaluate, train_method, Benchmark, Config, ExperimentConfig, Method};
use gasdro::databench::{corrupt_window, CorruptionSpec};
use gasdro::genmodels::{self, DenoisingObjective};
use gasdro::numcore::Activation;
use gasdro::rng::seeded;
use gasdro::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonFinite(_) | Error::Search(_) | Error::BackwardConsumed => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Linear beta schedule.
#[pyclass(frozen)]
struct NoiseSchedule(genmodels::NoiseSchedule);

#[pymethods]
impl NoiseSchedule {
    #[new]
    #[pyo3(signature = (steps, beta_min, beta_max, sigma_samp = genmodels::DEFAULT_SIGMA_SAMP))]
    fn new(steps: usize, beta_min: f64, beta_max: f64, sigma_samp: f64) -> PyResult<Self> {
        let s = genmodels::NoiseSchedule::linear(steps, beta_min, beta_max)
            .and_then(|s| s.with_sigma_samp(sigma_samp))
            .map_err(py_err)?;
        Ok(NoiseSchedule(s))
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.check(t, 0)?;
        Ok(self.0.alpha_bar(t))
    }

    fn sigma2(&self, t: usize) -> PyResult<f64> {
        self.check(t, 1)?;
        Ok(self.0.sigma2(t))
    }

    fn iota(&self, t: usize) -> PyResult<f64> {
        self.check(t, 1)?;
        Ok(self.0.iota(t))
    }
}

impl NoiseSchedule {
    fn check(&self, t: usize, lo: usize) -> PyResult<()> {
        if t < lo || t > self.0.steps() {
            return Err(PyValueError::new_err(format!("step {t} outside {lo}..={}", self.0.steps())));
        }
        Ok(())
    }
}

/// Discrete-time diffusion model with an MLP denoiser.
#[pyclass]
struct DiffusionModel(genmodels::DiffusionModel);

#[pymethods]
impl DiffusionModel {
    #[new]
    #[pyo3(signature = (data_dim, schedule, hidden = vec![64, 64], fine_tuned_steps = 8, seed = 0))]
    fn new(data_dim: usize, schedule: &NoiseSchedule, hidden: Vec<usize>, fine_tuned_steps: usize, seed: u64) -> PyResult<Self> {
        genmodels::DiffusionModel::new(
            data_dim,
            &hidden,
            Activation::Tanh,
            schedule.0.clone(),
            fine_tuned_steps,
            &mut seeded(seed),
        )
        .map(DiffusionModel)
        .map_err(py_err)
    }

    #[getter]
    fn data_dim(&self) -> usize {
        self.0.data_dim()
    }

    /// Returns the per-step training losses.
    #[pyo3(signature = (data, steps, lr = 0.003, batch = 128, objective = "unweighted", seed = 0))]
    fn fit(&mut self, data: Vec<Vec<f64>>, steps: usize, lr: f64, batch: usize, objective: &str, seed: u64) -> PyResult<Vec<f64>> {
        let obj = DenoisingObjective::parse(objective).map_err(py_err)?;
        self.0
            .fit_with(&data, steps, lr, batch, obj.sampled(), &mut seeded(seed))
            .map_err(py_err)
    }

    #[pyo3(signature = (n, seed = 0))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.0.sample(&self.0.params, n, &mut seeded(seed)).map_err(py_err)
    }
}

/// Worst-case mean of `f` over the KL ball of radius `eps` around uniform.
#[pyfunction]
fn kl_dro_value(f: Vec<f64>, eps: f64) -> PyResult<f64> {
    gasdro::baselines::kl_dro_dual(&f, &gasdro::baselines::KlDroConfig::new(eps))
        .map(|d| d.value)
        .map_err(py_err)
}

#[pyfunction]
fn wasserstein1(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    gasdro::databench::wasserstein1(&a, &b).map_err(py_err)
}

/// Applies one corruption (`gaussian`, `perlin` or `cutout`) to a copy of `window`.
#[pyfunction]
#[pyo3(signature = (window, kind, level, seed = 0))]
fn corrupt(mut window: Vec<f64>, kind: &str, level: f64, seed: u64) -> PyResult<Vec<f64>> {
    let spec = CorruptionSpec::from_kind(kind, level).map_err(py_err)?;
    corrupt_window(&mut window, &spec, &mut seeded(seed));
    Ok(window)
}

/// Runs one theory probe; returns `(passed, record_line)`.
#[pyfunction]
#[pyo3(signature = (name, seed = 0))]
fn run_probe(py: Python<'_>, name: &str, seed: u64) -> PyResult<(bool, String)> {
    let rep = py.detach(|| gasdro::theoryverify::run_probe(name, seed)).map_err(py_err)?;
    Ok((rep.passed(), rep.record_line()))
}

/// Runs the command-line interface with `args` (without the program name).
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("gasdro".to_string()).chain(args).collect();
    py.detach(|| cli::run(argv))
}

/// A resolved experiment configuration on the synthetic benchmark.
#[pyclass]
struct Experiment {
    cfg: ExperimentConfig,
    bench: Benchmark,
}

#[pymethods]
impl Experiment {
    #[new]
    #[pyo3(signature = (preset = "desk", overrides = Vec::new(), seed = None))]
    fn new(preset: &str, overrides: Vec<String>, seed: Option<u64>) -> PyResult<Self> {
        let mut raw = Config::preset(preset).map_err(py_err)?;
        for o in &overrides {
            raw.set_pair(o).map_err(py_err)?;
        }
        if let Some(s) = seed {
            raw.set("seed", &s.to_string()).map_err(py_err)?;
        }
        let cfg = ExperimentConfig::from_config(&raw, Path::new(".")).map_err(py_err)?;
        let bench = Benchmark::synthetic(&cfg).map_err(py_err)?;
        Ok(Experiment { cfg, bench })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[getter]
    fn test_ids(&self) -> Vec<String> {
        self.bench.tests.iter().map(|(id, _)| id.clone()).collect()
    }

    /// Trains `method` and returns `(average, worst)` clean test MSE.
    fn clean_mse(&self, py: Python<'_>, method: &str) -> PyResult<(f64, f64)> {
        let m = Method::parse(method).map_err(py_err)?;
        py.detach(|| {
            let pred = train_method(&self.cfg, &self.bench, m)?;
            clean_summary(&evaluate(&self.cfg, &self.bench, &pred)?)
        })
        .map_err(py_err)
    }

    /// Trains `method` and returns every metrics line.
    fn metrics(&self, py: Python<'_>, method: &str) -> PyResult<Vec<String>> {
        let m = Method::parse(method).map_err(py_err)?;
        py.detach(|| {
            let pred = train_method(&self.cfg, &self.bench, m)?;
            Ok::<_, Error>(evaluate(&self.cfg, &self.bench, &pred)?.iter().map(|r| r.to_line()).collect())
        })
        .map_err(py_err)
    }
}

#[pymodule]
fn gasdro_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<NoiseSchedule>()?;
    m.add_class::<DiffusionModel>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(kl_dro_value, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    m.add_function(wrap_pyfunction!(run_probe, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
