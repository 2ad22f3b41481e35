//! Subcommand implementations and argument handling.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use super::config::Config;
use super::experiment::{
    clean_summary, evaluate, train_method_with, write_dataset_files, Benchmark, ExperimentConfig, Method,
    MetricsRecord, Pretrained, TrainedPredictor,
};
use super::report::build_tables;
use crate::error::{Error, Result};
use crate::numcore::Checkpoint;
use crate::theoryverify::{run_probe, ProbeReport, PROBE_NAMES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gasdro", version, about = "Distributionally robust training with generative ambiguity sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Overrides the `seed` config key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config file applied on top of the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Base preset: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// `key=value` config override, repeatable.
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the training series and one test series per family.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train one method and write its checkpoint and diagnostics.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        generator: Option<String>,
    },
    /// Evaluate checkpoints on every test set and corruption cell.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to every `model_*.ckpt` in the output directory.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Average clean test MSE of gasdro across budgets.
    SweepEps {
        #[command(flatten)]
        common: Common,
        /// Comma-separated budgets; defaults to `sweep.eps`.
        #[arg(long)]
        eps: Option<String>,
    },
    /// Run the theory probes.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        only: Option<String>,
    },
    /// Build summary tables from the metrics files in a directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to the output directory.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

/// Preset, then config file, then `--set` overrides, then `--seed`.
pub fn resolve_config(common: &Common) -> Result<Config> {
    let mut cfg = Config::preset(&common.preset)?;
    if let Some(p) = &common.config {
        cfg.merge_file(p)?;
    }
    for o in &common.overrides {
        cfg.set_pair(o)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_timing(out: &Path, command: &str, seconds: f64) -> Result<()> {
    write(&out.join(format!("timing_{command}.txt")), &format!("command={command} wall_clock_s={seconds:.3}\n"))
}

pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    write_dataset_files(cfg)
}

/// One `key=value` line per inner epoch and per outer iteration, or one per
/// training epoch for the other methods.
pub fn diagnostics_text(pred: &TrainedPredictor) -> String {
    let mut out = String::new();
    match &pred.solver {
        Some(rep) => {
            for (iter, e) in &rep.inner {
                let _ = writeln!(
                    out,
                    "kind=inner iter={iter} epoch={} objective={:?} j={:?} mu={:?} mean_f={:?}",
                    e.epoch, e.objective, e.j, e.mu, e.mean_f
                );
            }
            for o in &rep.outer {
                let _ = writeln!(
                    out,
                    "kind=outer iter={} worst_case_loss={:?} j={:?} mu={:?}",
                    o.iter, o.worst_case_loss, o.j, o.mu
                );
            }
        }
        None => {
            for (i, l) in pred.history.iter().enumerate() {
                let _ = writeln!(out, "kind=epoch epoch={i} loss={l:?}");
            }
        }
    }
    out
}

pub fn checkpoint_path(out: &Path, method: Method) -> PathBuf {
    out.join(format!("model_{}.ckpt", method.name()))
}

/// Trains `cfg.method`, writes `model_<method>.ckpt`,
/// `diagnostics_<method>.txt` and `train_<method>.txt`.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainedPredictor> {
    let bench = Benchmark::load(cfg)?;
    let pred = train_method_with(cfg, &bench, cfg.method, &mut Pretrained::new())?;
    let name = cfg.method.name();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    pred.to_checkpoint(cfg, bench.stats).save(&checkpoint_path(out, cfg.method))?;
    write(&out.join(format!("diagnostics_{name}.txt")), &diagnostics_text(&pred))?;
    let train_mse = crate::dro::LossFn::mean(&pred.loss, &pred.w, &bench.train.windows)?;
    write(
        &out.join(format!("train_{name}.txt")),
        &format!(
            "run={}-{name} method={name} generator={} train_windows={} train_mse={train_mse:?}\n",
            cfg.seed,
            cfg.generator.name(),
            bench.train.len()
        ),
    )?;
    Ok(pred)
}

fn default_checkpoints(out: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for m in Method::ALL {
        let p = checkpoint_path(out, m);
        if p.exists() {
            found.push(p);
        }
    }
    if found.is_empty() {
        return Err(Error::config(format!("no model_*.ckpt in {}", out.display())));
    }
    Ok(found)
}

/// Evaluates each checkpoint and writes `metrics_<method>.txt`.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path, checkpoints: &[PathBuf]) -> Result<Vec<MetricsRecord>> {
    let bench = Benchmark::load(cfg)?;
    let paths = if checkpoints.is_empty() {
        default_checkpoints(out)?
    } else {
        checkpoints.to_vec()
    };
    let mut all = Vec::new();
    for p in paths {
        let pred = TrainedPredictor::from_checkpoint(&Checkpoint::load(&p)?, cfg)?;
        let recs = evaluate(cfg, &bench, &pred)?;
        let text: String = recs.iter().map(|r| r.to_line() + "\n").collect();
        write(&out.join(format!("metrics_{}.txt", pred.method.name())), &text)?;
        all.extend(recs);
    }
    Ok(all)
}

/// Reads every `metrics_*.txt` in `dir` in name order.
pub fn read_metrics_dir(dir: &Path) -> Result<Vec<MetricsRecord>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".txt"))
        })
        .collect();
    files.sort();
    let mut recs = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            recs.push(MetricsRecord::parse_line(line).map_err(|e| Error::Parse {
                path: f.clone(),
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
    }
    Ok(recs)
}

/// Writes one CSV table per corruption cell into `out`.
pub fn cmd_report(metrics_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let tables = build_tables(&read_metrics_dir(metrics_dir)?)?;
    let mut paths = Vec::new();
    for t in tables {
        let p = out.join(t.file_name());
        write(&p, &t.to_csv())?;
        paths.push(p);
    }
    Ok(paths)
}

/// `(eps, average clean test MSE)` rows sorted by `eps`, also written to
/// `sweep_eps.csv`.
pub fn cmd_sweep_eps(cfg: &ExperimentConfig, eps: &[f64], out: &Path) -> Result<Vec<(f64, f64)>> {
    if eps.is_empty() {
        return Err(Error::config("empty eps list"));
    }
    let mut eps = eps.to_vec();
    if eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::config("budgets must be positive"));
    }
    eps.sort_by(f64::total_cmp);
    let bench = Benchmark::load(cfg)?;
    let mut cache = Pretrained::new();
    let mut rows = Vec::new();
    for e in eps {
        let mut c = cfg.clone();
        c.method = Method::GasDro;
        c.solver.eps = e;
        let pred = train_method_with(&c, &bench, Method::GasDro, &mut cache)?;
        rows.push((e, clean_summary(&evaluate(&c, &bench, &pred)?)?.0));
    }
    let mut text = String::from("eps,avg_ood_mse\n");
    for (e, m) in &rows {
        let _ = writeln!(text, "{e:?},{m:.6}");
    }
    write(&out.join("sweep_eps.csv"), &text)?;
    Ok(rows)
}

pub fn cmd_verify(only: Option<&str>, seed: u64) -> Result<Vec<ProbeReport>> {
    match only {
        Some(name) => Ok(vec![run_probe(name, seed)?]),
        None => PROBE_NAMES.iter().map(|n| run_probe(n, seed)).collect(),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) | Error::Search(_) | Error::BackwardConsumed => EXIT_FAILED,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name) and runs the subcommand;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    let started = Instant::now();
    match cmd {
        Command::GenData { common } => {
            let cfg = ExperimentConfig::from_config(&resolve_config(&common)?, &common.out)?;
            for p in cmd_gen_data(&cfg)? {
                println!("wrote {}", p.display());
            }
            write_timing(&common.out, "gen-data", started.elapsed().as_secs_f64())?;
        }
        Command::Train {
            common,
            method,
            generator,
        } => {
            let mut raw = resolve_config(&common)?;
            if let Some(m) = method {
                raw.set("method", &m)?;
            }
            if let Some(g) = generator {
                raw.set("generator", &g)?;
            }
            let cfg = ExperimentConfig::from_config(&raw, &common.out)?;
            let pred = cmd_train(&cfg, &common.out)?;
            write(&common.out.join(format!("config_{}.conf", pred.method.name())), &raw.to_text())?;
            println!("trained {} -> {}", pred.method.name(), checkpoint_path(&common.out, pred.method).display());
            write_timing(&common.out, &format!("train_{}", pred.method.name()), started.elapsed().as_secs_f64())?;
        }
        Command::Eval { common, checkpoint } => {
            let cfg = ExperimentConfig::from_config(&resolve_config(&common)?, &common.out)?;
            let recs = cmd_eval(&cfg, &common.out, &checkpoint)?;
            for r in recs.iter().filter(|r| r.is_clean()) {
                println!("{}", r.to_line());
            }
            write_timing(&common.out, "eval", started.elapsed().as_secs_f64())?;
        }
        Command::SweepEps { common, eps } => {
            let mut raw = resolve_config(&common)?;
            if let Some(e) = eps {
                raw.set("sweep.eps", &e)?;
            }
            let cfg = ExperimentConfig::from_config(&raw, &common.out)?;
            for (e, m) in cmd_sweep_eps(&cfg, &cfg.sweep_eps, &common.out)? {
                println!("eps={e:?} avg_ood_mse={m:.6}");
            }
            write_timing(&common.out, "sweep-eps", started.elapsed().as_secs_f64())?;
        }
        Command::Verify { common, only } => {
            let seed: u64 = resolve_config(&common)?.get("seed")?;
            let reports = cmd_verify(only.as_deref(), seed)?;
            let mut text = String::new();
            for r in &reports {
                text.push_str(&r.record_line());
                text.push('\n');
                for n in &r.notes {
                    let _ = writeln!(text, "  {n}");
                }
            }
            print!("{text}");
            write(&common.out.join("verify.txt"), &text)?;
            let failed = reports.iter().filter(|r| !r.passed()).count();
            println!("{} of {} probes passed", reports.len() - failed, reports.len());
            if failed > 0 {
                return Ok(EXIT_FAILED);
            }
        }
        Command::Report { common, metrics } => {
            let dir = metrics.unwrap_or_else(|| common.out.clone());
            for p in cmd_report(&dir, &common.out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(EXIT_OK)
}
