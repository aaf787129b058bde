//! Versioned JSON reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::PipelineSummary;
use crate::error::Result;
use crate::montecarlo::{MonteCarloSummary, StudyConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub config: StudyConfig,
    pub summary: MonteCarloSummary,
}

impl SimulationReport {
    pub fn new(config: StudyConfig, summary: MonteCarloSummary) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config,
            summary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub replicates: usize,
    pub seed: u64,
    pub summary: PipelineSummary,
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}
