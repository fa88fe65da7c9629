//! Experiment runner for damped wave equations with measure-valued damping.
//!
//! A run takes an [`ExperimentConfig`], executes the requested tasks from a
//! [`Registry`] in dependency order and collects their results and verdicts
//! into a [`Report`].

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

pub mod config;
pub mod presets;
pub mod registry;
pub mod report;
mod tasks;

pub use config::ExperimentConfig;
pub use registry::{Context, Registry, Task, TaskOutput};
pub use report::{emit, output_root, Format, Manifest, Report, Verdict};
pub use tasks::{dissipativity_defect, theta_threshold};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("task {task} needs {needs} to run first")]
    MissingInput { task: &'static str, needs: &'static str },
    #[error("task {task}: {source}")]
    Task {
        task: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Runs `config` with the built-in tasks.
pub fn run(config: &ExperimentConfig) -> Result<Report, CliError> {
    run_with(&Registry::builtin(), config)
}

pub fn run_with(registry: &Registry, config: &ExperimentConfig) -> Result<Report, CliError> {
    config.validate()?;
    let plan = registry.plan(&config.tasks)?;
    let start = Instant::now();
    let mut ctx = Context::new(config);
    let mut results = BTreeMap::new();
    let mut verdicts = Vec::new();
    let mut artifacts = Vec::new();
    let mut timing = BTreeMap::new();
    let mut executed = Vec::new();
    for task in plan {
        let t0 = Instant::now();
        let (result, v, a) = task.run(&mut ctx)?.into_parts(task.name());
        timing.insert(task.name().to_string(), t0.elapsed().as_secs_f64() * 1e3);
        results.insert(task.name().to_string(), result);
        verdicts.extend(v);
        artifacts.extend(a);
        executed.push(task.name().to_string());
    }
    let passed = verdicts.iter().all(|v| v.passed);
    Ok(Report {
        schema_version: report::SCHEMA_VERSION.to_string(),
        label: config.name.clone(),
        config: config.clone(),
        executed,
        results,
        verdicts,
        passed,
        timing: report::Timing { total_ms: start.elapsed().as_secs_f64() * 1e3, tasks: timing },
        artifacts,
    })
}
