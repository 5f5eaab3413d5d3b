//! Run reports and training telemetry. Reports are deterministic given the
//! config except for the wall-clock fields, which tests zero out before
//! comparing bytes.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::grpo::UpdateStats;
use crate::pipeline::config::{PipelineConfig, Variant};
use crate::pipeline::metrics::{Metrics, Winrate};

/// Seeds derived for each stage, echoed for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub corpus: u64,
    pub sft: u64,
    pub rl: u64,
    pub recover: u64,
    pub embedder: u64,
}

/// One pipeline stage's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Per-epoch mean NLL for supervised stages.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epoch_nll: Option<Vec<f64>>,
    /// Per-update telemetry for the RL stage.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub updates: Option<Vec<UpdateStats>>,
    /// Dev metrics of the checkpoint after this stage.
    pub metrics: Metrics,
    pub wall_clock_secs: f64,
}

/// Full train-reinforce-recover report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: PipelineConfig,
    pub seeds: StageSeeds,
    /// Metrics of the gold references on the dev split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gold: Option<Metrics>,
    /// Completed stages in execution order (sft, rl, recovered).
    pub stages: Vec<StageReport>,
    /// Recovered policy vs the supervised-only policy on the dev split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winrate_recovered_vs_sft: Option<Winrate>,
    /// False when a stage failed and the report stops early.
    pub complete: bool,
}

impl RunReport {
    /// Copy with wall-clock fields zeroed, for byte-level comparison of two
    /// runs.
    pub fn without_wall_clock(&self) -> RunReport {
        let mut out = self.clone();
        for s in &mut out.stages {
            s.wall_clock_secs = 0.0;
        }
        out
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }
}

/// One variant's RL-stage outcome in a side-by-side comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub metrics: Metrics,
    pub updates: Vec<UpdateStats>,
    pub wall_clock_secs: f64,
}

/// Side-by-side comparison of safeguard variants run from one shared
/// supervised checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub config: PipelineConfig,
    pub seeds: StageSeeds,
    pub gold: Metrics,
    /// Dev metrics of the shared supervised checkpoint.
    pub sft_metrics: Metrics,
    pub outcomes: Vec<VariantOutcome>,
}

impl CompareReport {
    pub fn outcome(&self, variant: Variant) -> Option<&VariantOutcome> {
        self.outcomes.iter().find(|o| o.variant == variant)
    }

    pub fn without_wall_clock(&self) -> CompareReport {
        let mut out = self.clone();
        for o in &mut out.outcomes {
            o.wall_clock_secs = 0.0;
        }
        out
    }
}

/// Append-only JSONL telemetry writer.
pub struct TelemetryWriter {
    file: std::fs::File,
}

/// One telemetry line: a stage tag plus either a supervised epoch loss or an
/// RL update record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TelemetryLine {
    Epoch {
        stage: String,
        epoch: usize,
        nll: f64,
    },
    Update {
        stage: String,
        update: usize,
        #[serde(flatten)]
        stats: UpdateStats,
    },
}

impl TelemetryWriter {
    pub fn create(path: &Path) -> Result<TelemetryWriter> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(TelemetryWriter {
            file: std::fs::File::create(path)?,
        })
    }

    pub fn write(&mut self, line: &TelemetryLine) -> Result<()> {
        serde_json::to_writer(&mut self.file, line)?;
        self.file.write_all(b"\n")?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
