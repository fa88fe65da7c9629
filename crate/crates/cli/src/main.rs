use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use damplab::presets::{preset, PRESETS};
use damplab::report::{CONFIG_SCHEMA, MANIFEST_SCHEMA, REPORT_SCHEMA};
use damplab::{emit, output_root, run, CliError, ExperimentConfig, Format};

#[derive(Parser)]
#[command(name = "damplab", version, about = "Damped wave equations with measure-valued damping")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a preset or a JSON config.
    Run {
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated subset of json, csv, svg; empty for the report only.
        #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
        formats: Vec<String>,
        /// Output root (overrides the config; DAMPLAB_OUTPUT_ROOT overrides both).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in presets.
    Presets,
    /// Print a preset's config.
    Show { preset: String },
    /// Print a JSON schema.
    Schema {
        #[arg(value_enum, default_value_t = SchemaKind::Report)]
        kind: SchemaKind,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaKind {
    Config,
    Report,
    Manifest,
}

fn list_presets() {
    for p in &PRESETS {
        println!("{:<26} {}", p.name, p.summary);
    }
}

fn execute(
    preset_name: Option<String>,
    config: Option<PathBuf>,
    formats: Vec<String>,
    output: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<bool, CliError> {
    let mut cfg = match (preset_name, config) {
        (Some(name), _) => preset(&name)?,
        (None, Some(path)) => ExperimentConfig::load(&path)?,
        (None, None) => return Err(CliError::Config("pass --preset or --config".into())),
    };
    if let Some(out) = output {
        cfg.output = Some(out);
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let formats = formats
        .iter()
        .filter(|f| !f.is_empty())
        .map(|f| f.parse::<Format>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::Config)?;
    let report = run(&cfg)?;
    let root = output_root(&cfg);
    let manifest = emit(&report, &formats, &root)?;
    for v in &report.verdicts {
        println!("{} [{}] {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.task, v.invariant, v.detail);
    }
    println!("{} files in {}", manifest.files.len() + 1, root.join(&report.label).display());
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        None | Some(Command::Presets) => {
            list_presets();
            Ok(true)
        }
        Some(Command::Show { preset: name }) => preset(&name).map(|c| {
            println!("{}", c.to_json());
            true
        }),
        Some(Command::Schema { kind }) => {
            let text = match kind {
                SchemaKind::Config => CONFIG_SCHEMA,
                SchemaKind::Report => REPORT_SCHEMA,
                SchemaKind::Manifest => MANIFEST_SCHEMA,
            };
            print!("{text}");
            Ok(true)
        }
        Some(Command::Run { preset, config, formats, output, seed }) => execute(preset, config, formats, output, seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
