use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Bumped whenever the report layout changes.
pub const SCHEMA_VERSION: &str = "1.0.0";

pub const CONFIG_SCHEMA: &str = include_str!("../schema/config.schema.json");
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");
pub const MANIFEST_SCHEMA: &str = include_str!("../schema/manifest.schema.json");

/// Outcome of checking one invariant or declared expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub task: String,
    /// The invariant checked, stated as a formula.
    pub invariant: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(task: &str, invariant: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { task: task.to_string(), invariant: invariant.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub tasks: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Svg,
}

impl Format {
    pub fn ext(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Svg => "svg",
        }
    }

    pub fn all() -> Vec<Format> {
        vec![Format::Json, Format::Csv, Format::Svg]
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "svg" => Ok(Format::Svg),
            _ => Err(format!("unknown format {s:?} (json, csv, svg)")),
        }
    }
}

/// A rendered table or plot belonging to one task.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub task: String,
    pub format: Format,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    /// Preset name or config name; the output subdirectory.
    pub label: String,
    pub config: ExperimentConfig,
    /// Tasks in execution order.
    pub executed: Vec<String>,
    pub results: BTreeMap<String, Value>,
    pub verdicts: Vec<Verdict>,
    pub passed: bool,
    pub timing: Timing,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

impl Report {
    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }

    pub fn verdict(&self, invariant_prefix: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.invariant.starts_with(invariant_prefix))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: String,
    pub label: String,
    pub files: Vec<ManifestEntry>,
}

/// Output root: `DAMPLAB_OUTPUT_ROOT`, else the config's `output`, else
/// `damplab-out` in the working directory.
pub fn output_root(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os("DAMPLAB_OUTPUT_ROOT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output.clone().unwrap_or_else(|| PathBuf::from("damplab-out")),
    }
}

/// Writes `<root>/<label>/report.json`, one `<task>.<ext>` per artifact in
/// the requested formats, and `manifest.json` listing them.
pub fn emit(report: &Report, formats: &[Format], root: &Path) -> Result<Manifest, CliError> {
    let dir = root.join(&report.label);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io { path: dir.clone(), source: e })?;
    let mut files = Vec::new();
    let mut write = |name: String, task: Option<String>, format: Format, content: &str| -> Result<(), CliError> {
        let path = dir.join(&name);
        std::fs::write(&path, content).map_err(|e| CliError::Io { path, source: e })?;
        files.push(ManifestEntry { path: name, task, format });
        Ok(())
    };
    write("report.json".into(), None, Format::Json, &report.to_json())?;
    for task in &report.executed {
        for &format in formats {
            let content = match format {
                Format::Json => report.results.get(task).map(|v| serde_json::to_string_pretty(v).expect("value")),
                _ => report.artifacts.iter().find(|a| &a.task == task && a.format == format).map(|a| a.content.clone()),
            };
            if let Some(content) = content {
                write(format!("{task}.{}", format.ext()), Some(task.clone()), format, &content)?;
            }
        }
    }
    let manifest = Manifest { schema_version: SCHEMA_VERSION.into(), label: report.label.clone(), files };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| CliError::Io { path, source: e })?;
    Ok(manifest)
}
