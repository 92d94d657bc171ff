use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::PipelineConfig;
use super::{PipelineError, Stage};
use crate::tensorio::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    /// Not needed under the current toggles.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub seconds: f64,
    pub llm_live: usize,
    pub llm_cached: usize,
    /// Output file name to sha256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl StageRecord {
    pub fn skipped(stage: Stage) -> Self {
        StageRecord {
            stage,
            status: StageStatus::Skipped,
            seconds: 0.0,
            llm_live: 0,
            llm_cached: 0,
            outputs: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    /// Input path to sha256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Latest record of each stage, in pipeline order.
    pub stages: Vec<StageRecord>,
}

pub fn hash_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config: PipelineConfig) -> Self {
        RunManifest {
            config,
            inputs: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    /// Loads an existing manifest, or starts a fresh one when none exists or
    /// the stored one no longer parses.
    pub fn load_or_new(path: &Path, config: &PipelineConfig) -> Self {
        let loaded = std::fs::read_to_string(path)
            .ok()
            .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok());
        let mut m = loaded.unwrap_or_else(|| RunManifest::new(config.clone()));
        m.config = config.clone();
        m
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == stage)
    }

    pub fn record(&mut self, record: StageRecord) {
        self.stages.retain(|r| r.stage != record.stage);
        self.stages.push(record);
        self.stages.sort_by_key(|r| r.stage);
    }

    /// Copy with every timing zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> Self {
        let mut m = self.clone();
        m.stages.iter_mut().for_each(|r| r.seconds = 0.0);
        m
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        write_atomic(path, s.as_bytes()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }
}
