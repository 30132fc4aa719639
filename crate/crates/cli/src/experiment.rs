//! Writing experiment runs to disk and exporting their reliability tables.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use smartfridge_core::experiment::experiment_losses;
use smartfridge_core::{run_experiment, CalibrationReport64, ExperimentConfig, ExperimentSummary};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TEMPERATURE_FILE: &str = "temperature_focal.json";

pub fn model_file(name: &str) -> String {
    format!("model_{name}.json")
}

pub fn table_file(name: &str) -> String {
    format!("reliability_{name}.tsv")
}

/// Every file an experiment run produces.
pub fn run_files() -> BTreeSet<String> {
    let mut files: BTreeSet<String> = experiment_losses()
        .iter()
        .flat_map(|(name, _)| [model_file(name), table_file(name)])
        .collect();
    files.insert(TEMPERATURE_FILE.into());
    files.insert(SUMMARY_FILE.into());
    files
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Trains the three models and writes the run into `out`, which must be
/// empty or hold only files of an earlier run.
pub fn write_experiment(seed: u64, epochs: usize, out: &Path) -> Result<ExperimentSummary> {
    if epochs == 0 {
        bail!("--epochs must be at least 1");
    }
    let expected = run_files();
    if out.exists() {
        for entry in fs::read_dir(out).with_context(|| format!("reading {}", out.display()))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if !expected.contains(&name) {
                bail!("{} already contains {name:?}; refusing to mix runs", out.display());
            }
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let run = run_experiment(&ExperimentConfig::new(seed, epochs))?;
    for (name, doc) in &run.models {
        let mut text = doc.to_json();
        text.push('\n');
        write(&out.join(model_file(name)), &text)?;
        write(&out.join(table_file(name)), &run.summary.models[name].report.to_table())?;
    }
    write(&out.join(TEMPERATURE_FILE), &pretty(&run.summary.temperature))?;
    write(&out.join(SUMMARY_FILE), &pretty(&run.summary))?;
    Ok(run.summary)
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Csv,
    Tsv,
    Json,
}

impl ExportFormat {
    fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Tsv => "tsv",
            ExportFormat::Json => "json",
        }
    }
}

/// One file per model in `out`; returns the paths written.
pub fn export_run(run: &Path, format: ExportFormat, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (name, _) in experiment_losses() {
        let src = run.join(table_file(name));
        let text = fs::read_to_string(&src).with_context(|| format!("reading {}", src.display()))?;
        let report = CalibrationReport64::from_table(&text)
            .with_context(|| format!("parsing {}", src.display()))?;
        let dst = out.join(format!("reliability_{name}.{}", format.extension()));
        let mut buf = Vec::new();
        match format {
            ExportFormat::Csv => report.write_csv(&mut buf)?,
            ExportFormat::Tsv => report.write_delimited(&mut buf, b'\t')?,
            ExportFormat::Json => {
                serde_json::to_writer_pretty(&mut buf, &report)?;
                buf.push(b'\n');
            }
        }
        fs::write(&dst, buf).with_context(|| format!("writing {}", dst.display()))?;
        written.push(dst);
    }
    Ok(written)
}
