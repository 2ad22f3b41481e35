//! Experiment orchestration behind the `gasdro` binary.

mod commands;
mod config;
mod experiment;
mod report;

pub use commands::{
    checkpoint_path, cmd_eval, cmd_gen_data, cmd_report, cmd_sweep_eps, cmd_train, cmd_verify, diagnostics_text,
    read_metrics_dir, resolve_config, run, Cli, Command, Common, EXIT_FAILED, EXIT_OK, EXIT_USAGE,
};
pub use config::{Config, DESK_PRESET, PAPER_PRESET_OVERRIDES};
pub use experiment::{
    clean_summary, evaluate, generate_series, pretrain_ddpm, pretrain_vae, test_file, train_method,
    train_method_with, write_dataset_files, Benchmark, DataSource, DdpmConfig, ExperimentConfig, GeneratorKind,
    Method, MetricsRecord, Pretrained, TrainedPredictor, VaeConfig, MEMORY_NOTE, TRAIN_FILE,
};
pub use report::{build_tables, Table};
