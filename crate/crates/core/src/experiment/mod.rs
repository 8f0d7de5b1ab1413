//! Config-driven orchestration of the full pipeline:
//! embed -> build-pool -> select -> translate -> evaluate -> report.
//!
//! A run is keyed by the hash of its resolved config. Every phase persists
//! its outputs under `<out_dir>/run-<hash>/`, and a rerun skips any phase
//! whose artifacts already exist, so an unchanged config performs zero new
//! backend calls. Secrets never live in the config file; the HTTP backend
//! reads `LLM_API_KEY` from the environment.

mod pipeline;
mod report;

pub use pipeline::{run_pipeline, HypRecord, Pipeline, PhaseRecord, RunManifest, ShotRecord};
pub use report::{
    render_csv, render_markdown, sort_reports, write_report, PromptBudget, ReportPaths,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::CorpusFormat;
use crate::selectors::MethodSpec;
use crate::tree::TreeConfig;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{phase} phase failed: {message}")]
    PhaseFailed { phase: &'static str, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    File,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    #[default]
    Exact,
    Approximate,
}

/// A configured method: either the zero-shot baseline or a selection
/// strategy with its optional rerank pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentMethod {
    ZeroShot,
    Selection(MethodSpec),
}

impl ExperimentMethod {
    pub fn label(&self) -> String {
        match self {
            ExperimentMethod::ZeroShot => "zero_shot".into(),
            ExperimentMethod::Selection(spec) => spec.to_string(),
        }
    }
}

impl std::str::FromStr for ExperimentMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "zero_shot" {
            return Ok(ExperimentMethod::ZeroShot);
        }
        s.parse::<MethodSpec>().map(ExperimentMethod::Selection)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub prompt_source: PathBuf,
    #[serde(default = "default_format")]
    pub prompt_source_format: CorpusFormat,
    pub testset: PathBuf,
    #[serde(default = "default_format")]
    pub testset_format: CorpusFormat,
    pub source_lang: String,
    pub target_lang: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default)]
    pub provider: ProviderKind,
    #[serde(default)]
    pub source_vectors: Option<PathBuf>,
    #[serde(default)]
    pub test_vectors: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfspSection {
    pub channels: Vec<ChannelSection>,
    #[serde(default = "default_weights")]
    pub weights: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingSection {
    #[serde(default)]
    pub provider: ProviderKind,
    #[serde(default)]
    pub source_vectors: Option<PathBuf>,
    #[serde(default)]
    pub test_vectors: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub index: IndexKind,
    #[serde(default = "default_embed_parallelism")]
    pub embed_parallelism: usize,
    #[serde(default)]
    pub afsp: Option<AfspSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSection {
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model: String,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub methods: Vec<String>,
    #[serde(default = "default_shots")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window_cap")]
    pub rerank_window_cap: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptsSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSection {
    #[serde(default)]
    pub comet_dir: Option<PathBuf>,
    #[serde(default)]
    pub bertscore_dir: Option<PathBuf>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Jsonl
}

fn default_weights() -> [f64; 3] {
    [0.4, 0.4, 0.2]
}

fn default_embed_parallelism() -> usize {
    4
}

fn default_retries() -> u32 {
    2
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_tokens() -> u32 {
    256
}

fn default_shots() -> usize {
    5
}

fn default_window_cap() -> usize {
    crate::selectors::RERANK_WINDOW_CAP
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusSection,
    pub embedding: EmbeddingSection,
    pub llm: LlmSection,
    #[serde(default)]
    pub tree: Option<TreeConfig>,
    pub selection: SelectionSection,
    #[serde(default)]
    pub prompts: PromptsSection,
    pub output: OutputSection,
    #[serde(default)]
    pub external: ExternalSection,
}

impl ExperimentConfig {
    /// Parse a TOML config; relative paths resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.corpus.prompt_source);
        resolve(&mut self.corpus.testset);
        if let Some(p) = &mut self.embedding.source_vectors {
            resolve(p);
        }
        if let Some(p) = &mut self.embedding.test_vectors {
            resolve(p);
        }
        if let Some(afsp) = &mut self.embedding.afsp {
            for channel in &mut afsp.channels {
                if let Some(p) = &mut channel.source_vectors {
                    resolve(p);
                }
                if let Some(p) = &mut channel.test_vectors {
                    resolve(p);
                }
            }
        }
        if let Some(p) = &mut self.prompts.dir {
            resolve(p);
        }
        resolve(&mut self.output.dir);
        if let Some(p) = &mut self.output.cache_dir {
            resolve(p);
        }
        if let Some(p) = &mut self.external.comet_dir {
            resolve(p);
        }
        if let Some(p) = &mut self.external.bertscore_dir {
            resolve(p);
        }
    }

    pub fn methods(&self) -> Result<Vec<ExperimentMethod>, ExperimentError> {
        self.selection
            .methods
            .iter()
            .map(|name| {
                name.parse()
                    .map_err(|e: String| ExperimentError::Config(e))
            })
            .collect()
    }

    /// Hash of the resolved config; identical configs map to the same run
    /// directory regardless of TOML formatting.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.output
            .cache_dir
            .clone()
            .unwrap_or_else(|| self.output.dir.join("cache"))
    }

    fn channel_coherent(
        what: &str,
        provider: ProviderKind,
        source: &Option<PathBuf>,
        test: &Option<PathBuf>,
        endpoint: &Option<String>,
    ) -> Result<(), ExperimentError> {
        match provider {
            ProviderKind::File => {
                if source.is_none() || test.is_none() {
                    return Err(ExperimentError::Config(format!(
                        "{what}: file provider needs source_vectors and test_vectors"
                    )));
                }
                for path in [source, test].into_iter().flatten() {
                    if !path.exists() {
                        return Err(ExperimentError::Config(format!(
                            "{what}: vectors file {} does not exist",
                            path.display()
                        )));
                    }
                }
            }
            ProviderKind::Http => {
                if endpoint.as_deref().unwrap_or("").is_empty() {
                    return Err(ExperimentError::Config(format!(
                        "{what}: http provider needs an endpoint"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check path existence and cross-section coherence before any work.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.selection.methods.is_empty() {
            return Err(ExperimentError::Config("methods list is empty".into()));
        }
        let methods = self.methods()?;
        for path in [&self.corpus.prompt_source, &self.corpus.testset] {
            if !path.exists() {
                return Err(ExperimentError::Config(format!(
                    "corpus file {} does not exist",
                    path.display()
                )));
            }
        }
        if self.corpus.source_lang.trim().is_empty() || self.corpus.target_lang.trim().is_empty() {
            return Err(ExperimentError::Config("language tags must be non-empty".into()));
        }
        let needs_embeddings = methods.iter().any(|m| {
            matches!(m, ExperimentMethod::Selection(spec)
                if !matches!(spec.base, crate::selectors::BaseMethod::Random) )
        }) || methods.iter().any(|m| {
            matches!(m, ExperimentMethod::Selection(spec) if spec.base.is_tree())
        });
        if needs_embeddings {
            Self::channel_coherent(
                "embedding",
                self.embedding.provider,
                &self.embedding.source_vectors,
                &self.embedding.test_vectors,
                &self.embedding.endpoint,
            )?;
        }
        let needs_afsp = methods.iter().any(|m| {
            matches!(
                m,
                ExperimentMethod::Selection(MethodSpec {
                    base: crate::selectors::BaseMethod::Afsp
                        | crate::selectors::BaseMethod::TreeAfsp,
                    ..
                })
            )
        });
        if needs_afsp {
            let afsp = self.embedding.afsp.as_ref().ok_or_else(|| {
                ExperimentError::Config("afsp methods need an [embedding.afsp] section".into())
            })?;
            if afsp.channels.len() != 3 {
                return Err(ExperimentError::Config(format!(
                    "afsp needs exactly 3 channels, got {}",
                    afsp.channels.len()
                )));
            }
            for (i, channel) in afsp.channels.iter().enumerate() {
                Self::channel_coherent(
                    &format!("afsp channel {i}"),
                    channel.provider,
                    &channel.source_vectors,
                    &channel.test_vectors,
                    &channel.endpoint,
                )?;
            }
        }
        let needs_tree = methods.iter().any(
            |m| matches!(m, ExperimentMethod::Selection(spec) if spec.base.is_tree()),
        );
        if needs_tree {
            let tree = self.tree.as_ref().ok_or_else(|| {
                ExperimentError::Config("tree methods need a [tree] section".into())
            })?;
            tree.validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if self.llm.backend == BackendKind::Http
            && self.llm.endpoint.as_deref().unwrap_or("").is_empty()
        {
            return Err(ExperimentError::Config(
                "llm.backend = \"http\" needs llm.endpoint".into(),
            ));
        }
        if let Some(dir) = &self.prompts.dir {
            if !dir.is_dir() {
                return Err(ExperimentError::Config(format!(
                    "prompts.dir {} is not a directory",
                    dir.display()
                )));
            }
        }
        Ok(())
    }
}
