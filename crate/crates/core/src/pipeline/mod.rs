//! Stage-by-stage orchestration over an output directory.
//!
//! Each stage reads the artifacts of earlier stages from disk and writes its
//! own atomically, so any stage can be rerun on its own. A `manifest.json`
//! records the config, input and output hashes, timings and LLM call counts.

mod config;
mod manifest;
mod stages;

use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

pub use config::{
    BackendKind, EmbedderKind, LlmConfig, Overrides, PathsConfig, PipelineConfig, Toggles,
};
pub use manifest::{hash_file, RunManifest, StageRecord, StageStatus};
pub use stages::{ClusterSummary, ConceptsFile, EvalFile};

use crate::eval::EvalReport;
use crate::knowledge::{HashEmbedder, SidecarEmbedder, TextEmbedder};
use crate::llm::{HttpBackend, LlmBackend, LlmClient, MockBackend};
use crate::synthetic::PlantedEmbedder;
use crate::tensorio;

pub const LOCK_FILE: &str = ".kec.lock";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Map,
    Concepts,
    Attributes,
    Ground,
    Cluster,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Map,
        Stage::Concepts,
        Stage::Attributes,
        Stage::Ground,
        Stage::Cluster,
        Stage::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Map => "map",
            Stage::Concepts => "concepts",
            Stage::Attributes => "attributes",
            Stage::Ground => "ground",
            Stage::Cluster => "cluster",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("output directory {0} is locked by another run (remove the lock file if stale)")]
    Locked(PathBuf),
    #[error("stage `{stage}` needs {artifact}; run `{run_first}` first")]
    MissingArtifact {
        stage: Stage,
        artifact: String,
        run_first: Stage,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}

/// Exclusive ownership of an output directory; released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Locked(dir.to_path_buf()))
            }
            Err(source) => Err(PipelineError::Io { path, source }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    /// Present when labels were configured.
    pub report: Option<EvalReport>,
    pub manifest: RunManifest,
}

pub struct Pipeline {
    config: PipelineConfig,
    embedder: Option<Arc<dyn TextEmbedder>>,
    backend: Option<Arc<dyn LlmBackend>>,
    client: OnceLock<LlmClient>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline {
            config,
            embedder: None,
            backend: None,
            client: OnceLock::new(),
        })
    }

    pub fn from_config_file(path: &Path, overrides: &Overrides) -> Result<Self, PipelineError> {
        let mut cfg = PipelineConfig::load(path)?;
        cfg.apply(overrides);
        Pipeline::new(cfg)
    }

    /// Replaces the configured string embedder.
    pub fn with_embedder(mut self, embedder: Arc<dyn TextEmbedder>) -> Self {
        self.embedder = Some(embedder);
        self
    }

    /// Replaces the configured LLM backend; caching and retries still apply.
    pub fn with_backend(mut self, backend: Arc<dyn LlmBackend>) -> Self {
        self.backend = Some(backend);
        self.client = OnceLock::new();
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn output_dir(&self) -> &Path {
        &self.config.paths.output_dir
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.output_dir().join(name)
    }

    pub(crate) fn client(&self) -> Result<&LlmClient, PipelineError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let mut backend_config = self.config.llm.backend_config();
        backend_config.cache_dir = Some(self.config.cache_dir());
        let backend: Arc<dyn LlmBackend> = match (&self.backend, self.config.llm.backend) {
            (Some(b), _) => b.clone(),
            (None, BackendKind::Mock) => Arc::new(MockBackend),
            (None, BackendKind::Http) => {
                Arc::new(HttpBackend::from_config(&backend_config).at(Stage::Concepts)?)
            }
        };
        let client = LlmClient::new(backend, &backend_config).at(Stage::Concepts)?;
        Ok(self.client.get_or_init(|| client))
    }

    pub(crate) fn embedder(&self, stage: Stage) -> Result<Arc<dyn TextEmbedder>, PipelineError> {
        if let Some(e) = &self.embedder {
            return Ok(e.clone());
        }
        Ok(match self.config.embedder {
            EmbedderKind::Hash => {
                let images = tensorio::read_embeddings(&self.config.paths.image_embeddings).at(stage)?;
                Arc::new(HashEmbedder::new(images.dim()))
            }
            EmbedderKind::Planted => Arc::new(PlantedEmbedder),
            EmbedderKind::Sidecar => {
                let p = &self.config.paths;
                let (Some(s), Some(e)) = (&p.sidecar_strings, &p.sidecar_embeddings) else {
                    return Err(PipelineError::Config("sidecar paths missing".into()));
                };
                Arc::new(SidecarEmbedder::load(s, e).at(stage)?)
            }
        })
    }

    /// Runs one stage under the output-directory lock.
    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let _lock = RunLock::acquire(self.output_dir())?;
        self.execute(stage)
    }

    /// Runs every stage in order; evaluation only when labels are set.
    pub fn run_all(&self) -> Result<RunOutcome, PipelineError> {
        let _lock = RunLock::acquire(self.output_dir())?;
        for stage in Stage::ALL {
            if stage == Stage::Eval && self.config.paths.labels.is_none() {
                continue;
            }
            self.execute(stage)?;
        }
        let report = match self.config.paths.labels {
            Some(_) => Some(self.read_eval()?.kec),
            None => None,
        };
        Ok(RunOutcome {
            report,
            manifest: RunManifest::read(&self.artifact(MANIFEST_FILE))?,
        })
    }

    pub fn read_eval(&self) -> Result<EvalFile, PipelineError> {
        let path = self.artifact(stages::EVAL_JSON);
        let text = std::fs::read_to_string(&path).map_err(|source| PipelineError::Io { path, source })?;
        serde_json::from_str(&text).at(Stage::Eval)
    }

    fn execute(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let before = match self.client.get() {
            Some(c) => c.stats(),
            None => Default::default(),
        };
        let start = std::time::Instant::now();
        let outputs = if self.config.toggles.is_baseline()
            && matches!(
                stage,
                Stage::Map | Stage::Concepts | Stage::Attributes | Stage::Ground
            ) {
            None
        } else {
            Some(stages::run(self, stage)?)
        };
        let record = match outputs {
            None => StageRecord::skipped(stage),
            Some(files) => {
                let delta = match self.client.get() {
                    Some(c) => c.stats().since(&before),
                    None => Default::default(),
                };
                let mut hashes = std::collections::BTreeMap::new();
                for f in files {
                    hashes.insert(f.clone(), hash_file(&self.artifact(&f))?);
                }
                StageRecord {
                    stage,
                    status: StageStatus::Completed,
                    seconds: start.elapsed().as_secs_f64(),
                    llm_live: delta.live_requests,
                    llm_cached: delta.cache_hits,
                    outputs: hashes,
                }
            }
        };
        let path = self.artifact(MANIFEST_FILE);
        let mut manifest = RunManifest::load_or_new(&path, &self.config);
        manifest.inputs = self.input_hashes()?;
        manifest.record(record.clone());
        manifest.write(&path)?;
        tracing::info!(stage = %stage, seconds = record.seconds, "stage finished");
        Ok(record)
    }

    fn input_hashes(&self) -> Result<std::collections::BTreeMap<String, String>, PipelineError> {
        let p = &self.config.paths;
        let mut out = std::collections::BTreeMap::new();
        let candidates = [
            Some(&p.image_embeddings),
            (!self.config.toggles.is_baseline()).then_some(&p.noun_embeddings),
            (!self.config.toggles.is_baseline()).then_some(&p.nouns),
            p.labels.as_ref(),
            p.sidecar_strings.as_ref(),
            p.sidecar_embeddings.as_ref(),
            p.class_embeddings.as_ref(),
        ];
        for path in candidates.into_iter().flatten() {
            if path.exists() {
                out.insert(path.display().to_string(), hash_file(path)?);
            }
        }
        Ok(out)
    }

    /// Writes the visual, enhanced and concatenated features to `out`
    /// (default `<output_dir>/export`). Baseline runs export only the
    /// visual features.
    pub fn export_features(&self, out: Option<&Path>) -> Result<Vec<PathBuf>, PipelineError> {
        stages::export_features(self, out)
    }
}
