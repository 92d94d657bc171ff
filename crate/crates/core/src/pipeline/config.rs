use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::grounding::{GroundingFlags, DEFAULT_TAU};
use crate::knowledge::graph::{DEFAULT_ALPHA, DEFAULT_MERGE_THRESHOLD};
use crate::knowledge::{
    PromptSettings, DEFAULT_LAMBDA1, DEFAULT_LAMBDA2, DEFAULT_MAX_NEIGHBORS,
    DEFAULT_NEIGHBOR_THRESHOLD,
};
use crate::llm::{
    BackendConfig, API_KEY_ENV, DEFAULT_MAX_CONCURRENT, DEFAULT_MAX_TOKENS, DEFAULT_MODEL,
    DEFAULT_RETRY_LIMIT, DEFAULT_TEMPERATURE,
};
use crate::mapping::{DEFAULT_RATIO, DEFAULT_TOP_K};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub image_embeddings: PathBuf,
    pub noun_embeddings: PathBuf,
    pub nouns: PathBuf,
    pub labels: Option<PathBuf>,
    /// Newline-delimited concept/attribute strings.
    pub sidecar_strings: Option<PathBuf>,
    /// Embeddings aligned with `sidecar_strings`.
    pub sidecar_embeddings: Option<PathBuf>,
    /// One unit text embedding per class, for the zero-shot baseline.
    pub class_embeddings: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub use_concept_name: bool,
    pub use_description: bool,
    pub use_uni_attr: bool,
    pub use_bi_attr: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            use_concept_name: true,
            use_description: true,
            use_uni_attr: true,
            use_bi_attr: true,
        }
    }
}

impl Toggles {
    /// Every knowledge component off: cluster the visual features alone.
    pub fn is_baseline(&self) -> bool {
        !(self.use_concept_name || self.use_description || self.use_uni_attr || self.use_bi_attr)
    }

    pub fn uses_attributes(&self) -> bool {
        self.use_uni_attr || self.use_bi_attr
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

/// How concept and attribute strings become vectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    /// Exact lookup in the sidecar pair; the only choice for real runs.
    #[default]
    Sidecar,
    /// Deterministic bag-of-words hashing, for smoke tests.
    Hash,
    /// Axis-planting embedder of the synthetic fixture.
    Planted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: BackendKind,
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
    /// Fresh requests allowed after an unparsable reply.
    pub parse_retries: u32,
    pub base_url: String,
    pub api_key_env_name: String,
    pub max_concurrent: usize,
    pub retry_limit: u32,
    /// Defaults to `<output_dir>/llm_cache`.
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub backoff_ms: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let b = BackendConfig::default();
        LlmConfig {
            backend: BackendKind::Mock,
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            parse_retries: 3,
            base_url: b.base_url,
            api_key_env_name: API_KEY_ENV.to_string(),
            max_concurrent: DEFAULT_MAX_CONCURRENT,
            retry_limit: DEFAULT_RETRY_LIMIT,
            cache_dir: None,
            timeout_secs: b.timeout_secs,
            backoff_ms: b.backoff_ms,
        }
    }
}

impl LlmConfig {
    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            base_url: self.base_url.clone(),
            api_key_env_name: self.api_key_env_name.clone(),
            max_concurrent: self.max_concurrent,
            retry_limit: self.retry_limit,
            cache_dir: self.cache_dir.clone(),
            timeout_secs: self.timeout_secs,
            backoff_ms: self.backoff_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub ratio: usize,
    pub top_k: usize,
    pub alpha: f64,
    pub merge_threshold: f64,
    pub neighbor_cumulative_threshold: f64,
    pub max_neighbors: usize,
    pub lambda1: usize,
    pub lambda2: usize,
    pub tau: f64,
    pub renormalize_kappa: bool,
    pub seed: u64,
    pub toggles: Toggles,
    pub llm: LlmConfig,
    pub embedder: EmbedderKind,
    pub domain_hint: Option<String>,
    /// Defaults to the number of label classes.
    pub final_k: Option<usize>,
    pub n_redo: usize,
    pub n_iter: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            ratio: DEFAULT_RATIO,
            top_k: DEFAULT_TOP_K,
            alpha: DEFAULT_ALPHA,
            merge_threshold: DEFAULT_MERGE_THRESHOLD,
            neighbor_cumulative_threshold: DEFAULT_NEIGHBOR_THRESHOLD,
            max_neighbors: DEFAULT_MAX_NEIGHBORS,
            lambda1: DEFAULT_LAMBDA1,
            lambda2: DEFAULT_LAMBDA2,
            tau: DEFAULT_TAU,
            renormalize_kappa: true,
            seed: 0,
            toggles: Toggles::default(),
            llm: LlmConfig::default(),
            embedder: EmbedderKind::Sidecar,
            domain_hint: None,
            final_k: None,
            n_redo: 20,
            n_iter: 300,
        }
    }
}

/// Command-line overrides applied on top of a loaded file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub domain_hint: Option<String>,
    pub no_name: bool,
    pub no_desc: bool,
    pub no_uni: bool,
    pub no_bi: bool,
    pub mock_llm: bool,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in [
            &mut p.image_embeddings,
            &mut p.noun_embeddings,
            &mut p.nouns,
            &mut p.output_dir,
        ] {
            resolve(base, path);
        }
        for path in [
            &mut p.labels,
            &mut p.sidecar_strings,
            &mut p.sidecar_embeddings,
            &mut p.class_embeddings,
            &mut self.llm.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(h) = &o.domain_hint {
            self.domain_hint = Some(h.clone());
        }
        self.toggles.use_concept_name &= !o.no_name;
        self.toggles.use_description &= !o.no_desc;
        self.toggles.use_uni_attr &= !o.no_uni;
        self.toggles.use_bi_attr &= !o.no_bi;
        if o.mock_llm {
            self.llm.backend = BackendKind::Mock;
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let p = &self.paths;
        for (name, v) in [
            ("paths.image_embeddings", &p.image_embeddings),
            ("paths.output_dir", &p.output_dir),
        ] {
            if v.as_os_str().is_empty() {
                return bad(format!("{name} is required"));
            }
        }
        if self.toggles.is_baseline() {
            return Ok(());
        }
        if p.noun_embeddings.as_os_str().is_empty() || p.nouns.as_os_str().is_empty() {
            return bad("paths.noun_embeddings and paths.nouns are required".into());
        }
        if !self.toggles.use_concept_name && !self.toggles.use_description {
            return bad("attributes need a concept name or description to attend over".into());
        }
        for (name, v) in [
            ("merge_threshold", self.merge_threshold),
            ("neighbor_cumulative_threshold", self.neighbor_cumulative_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} = {v} outside (0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be positive", self.tau));
        }
        if self.toggles.use_uni_attr && self.lambda1 == 0 {
            return bad("lambda1 must be >= 1 when uni-concept attributes are on".into());
        }
        if self.toggles.use_bi_attr && (self.lambda2 == 0 || self.max_neighbors == 0) {
            return bad("lambda2 and max_neighbors must be >= 1 when bi-concept attributes are on".into());
        }
        if self.ratio == 0 || self.top_k == 0 {
            return bad("ratio and top_k must be >= 1".into());
        }
        if self.n_redo == 0 || self.n_iter == 0 {
            return bad("n_redo and n_iter must be >= 1".into());
        }
        if self.embedder == EmbedderKind::Sidecar
            && (p.sidecar_strings.is_none() || p.sidecar_embeddings.is_none())
        {
            return bad(
                "embedder \"sidecar\" needs paths.sidecar_strings and paths.sidecar_embeddings"
                    .into(),
            );
        }
        if self.llm.max_concurrent == 0 {
            return bad("llm.max_concurrent must be >= 1".into());
        }
        Ok(())
    }

    pub fn grounding_flags(&self) -> GroundingFlags {
        GroundingFlags {
            use_name: self.toggles.use_concept_name,
            use_desc: self.toggles.use_description,
            use_uni: self.toggles.use_uni_attr,
            use_bi: self.toggles.use_bi_attr,
            renormalize_kappa: self.renormalize_kappa,
        }
    }

    pub fn prompt_settings(&self) -> PromptSettings {
        PromptSettings {
            model: self.llm.model.clone(),
            temperature: self.llm.temperature,
            max_tokens: self.llm.max_tokens,
            domain_hint: self.domain_hint.clone(),
            parse_retries: self.llm.parse_retries,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.llm
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.paths.output_dir.join("llm_cache"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
