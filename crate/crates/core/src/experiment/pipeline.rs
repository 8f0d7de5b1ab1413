//! Phase execution. Each phase persists its outputs under the run
//! directory and is skipped on rerun when those outputs already exist;
//! the run directory is keyed by the config hash, so any config change
//! lands in a fresh directory and recomputes everything.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::report::{write_report, PromptBudget, ReportPaths};
use super::{BackendKind, ExperimentConfig, ExperimentError, ExperimentMethod, IndexKind, ProviderKind};
use crate::corpus::{load_corpus, Corpus, SentencePair};
use crate::embedding::{
    EmbeddingProvider, EmbeddingVector, FileProvider, HttpProvider, IndexMode, VectorIndex,
    VectorStore,
};
use crate::jsonl;
use crate::llm::{
    CallLedger, ChatRequest, HttpBackend, LedgerSnapshot, LlmBackend, LlmClient, MockBackend,
    Phase, ResponseCache, RetryPolicy,
};
use crate::metrics::{
    aggregate, attach_external, load_external_scores, EvalRecord, ExternalMetric, MethodReport,
};
use crate::prompting::PromptSet;
use crate::rng;
use crate::selectors::{
    AfspChannel, AfspResources, MethodSpec, Reranker, SelectionRequest, SelectionResources,
};
use crate::tree::{read_pool, run_treeprompt, write_pool, ExamplePool, LlmLabeler};

/// Per-query selected demonstrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub query_id: String,
    pub shot_ids: Vec<String>,
}

/// Per-query translation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypRecord {
    pub query_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub completed_at: String,
    pub skipped: bool,
    pub ledger_after: LedgerSnapshot,
}

/// What a run did: phase completion with cumulative ledger snapshots, the
/// artifact map, and the logical prompt budget. `ledger` counts only this
/// invocation's traffic (zero on a fully resumed rerun); `prompt_budget` is
/// derived from the persisted artifacts and is stable across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub created_at: String,
    pub updated_at: String,
    pub pool_size: Option<usize>,
    pub phases: BTreeMap<String, PhaseRecord>,
    pub ledger: LedgerSnapshot,
    pub prompt_budget: PromptBudget,
    pub artifacts: BTreeMap<String, String>,
}

const PHASE_ORDER: [&str; 6] = [
    "embed",
    "build-pool",
    "select",
    "translate",
    "evaluate",
    "report",
];

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn tag(phase: &'static str) -> impl Fn(String) -> ExperimentError {
    move |message| ExperimentError::PhaseFailed { phase, message }
}

fn parallel_map<T, U, E>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<U, E> + Sync,
) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let mut parts: Vec<Result<Vec<U>, E>> = Vec::new();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|slice| scope.spawn(move || slice.iter().map(f).collect()))
            .collect();
        for handle in handles {
            parts.push(handle.join().expect("pipeline worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Seed for one query's selection, derived so methods stay deterministic
/// per (run seed, query) without correlating across queries.
fn query_seed(base: u64, query_id: &str) -> u64 {
    rng::stream_of(&format!("{base}:{query_id}"))
}

/// A validated experiment bound to its run directory.
pub struct Pipeline {
    config: ExperimentConfig,
    methods: Vec<ExperimentMethod>,
    run_dir: PathBuf,
    config_hash: String,
    prompt_source: Corpus,
    testset: Corpus,
    prompts: PromptSet,
    client: Arc<LlmClient>,
}

impl Pipeline {
    /// Validate the config, load both corpora, and construct the backend,
    /// cache, and ledger.
    pub fn new(config: ExperimentConfig) -> Result<Pipeline, ExperimentError> {
        config.validate()?;
        let methods = config.methods()?;
        let prompt_source = load_corpus(
            &config.corpus.prompt_source,
            config.corpus.prompt_source_format,
            &config.corpus.source_lang,
            &config.corpus.target_lang,
        )
        .map_err(|e| ExperimentError::Config(format!("prompt source: {e}")))?;
        let testset = load_corpus(
            &config.corpus.testset,
            config.corpus.testset_format,
            &config.corpus.source_lang,
            &config.corpus.target_lang,
        )
        .map_err(|e| ExperimentError::Config(format!("testset: {e}")))?;
        let prompts = match &config.prompts.dir {
            Some(dir) => PromptSet::from_dir(dir)
                .map_err(|e| ExperimentError::Config(format!("prompts: {e}")))?,
            None => PromptSet::builtin(),
        };
        let backend: Arc<dyn LlmBackend> = match config.llm.backend {
            BackendKind::Mock => Arc::new(MockBackend),
            BackendKind::Http => {
                let endpoint = config.llm.endpoint.clone().expect("validated");
                let api_key = std::env::var("LLM_API_KEY").ok();
                Arc::new(
                    HttpBackend::new(endpoint, api_key)
                        .with_timeout(std::time::Duration::from_secs(config.llm.timeout_secs)),
                )
            }
        };
        let client = Arc::new(
            LlmClient::new(backend)
                .with_cache(ResponseCache::open(&config.cache_dir()))
                .with_ledger(Arc::new(CallLedger::new()))
                .with_retry(RetryPolicy {
                    max_retries: config.llm.retries,
                    backoff: std::time::Duration::from_millis(250),
                }),
        );
        let config_hash = config.hash();
        let run_dir = config.output.dir.join(format!("run-{config_hash}"));
        Ok(Pipeline {
            config,
            methods,
            run_dir,
            config_hash,
            prompt_source,
            testset,
            prompts,
            client,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn ledger(&self) -> LedgerSnapshot {
        self.client.ledger().snapshot()
    }

    fn embeddings_dir(&self) -> PathBuf {
        self.run_dir.join("embeddings")
    }

    fn vectors_path(&self, channel: Option<usize>, side: &str) -> PathBuf {
        match channel {
            None => self.embeddings_dir().join(format!("{side}.jsonl")),
            Some(i) => self.embeddings_dir().join(format!("afsp_{i}_{side}.jsonl")),
        }
    }

    fn pool_path(&self) -> PathBuf {
        self.run_dir.join("pool").join("pool.jsonl")
    }

    fn method_dir(&self, label: &str) -> PathBuf {
        self.run_dir.join("methods").join(label)
    }

    fn shots_path(&self, label: &str) -> PathBuf {
        self.method_dir(label).join("shots.jsonl")
    }

    fn hyps_path(&self, label: &str) -> PathBuf {
        self.method_dir(label).join("hyps.jsonl")
    }

    fn eval_path(&self, label: &str) -> PathBuf {
        self.method_dir(label).join("eval.jsonl")
    }

    fn method_report_path(&self, label: &str) -> PathBuf {
        self.method_dir(label).join("report.json")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest.json")
    }

    fn needs_tree(&self) -> bool {
        self.methods
            .iter()
            .any(|m| matches!(m, ExperimentMethod::Selection(spec) if spec.base.is_tree()))
    }

    fn needs_embeddings(&self) -> bool {
        self.methods.iter().any(|m| match m {
            ExperimentMethod::ZeroShot => false,
            ExperimentMethod::Selection(spec) => {
                spec.base.is_tree() || !matches!(spec.base, crate::selectors::BaseMethod::Random)
            }
        })
    }

    fn needs_afsp(&self) -> bool {
        self.methods.iter().any(|m| {
            matches!(
                m,
                ExperimentMethod::Selection(MethodSpec {
                    base: crate::selectors::BaseMethod::Afsp
                        | crate::selectors::BaseMethod::TreeAfsp,
                    ..
                })
            )
        })
    }

    fn needs_knn_index(&self) -> bool {
        self.needs_tree()
            || self.methods.iter().any(|m| {
                matches!(
                    m,
                    ExperimentMethod::Selection(MethodSpec {
                        base: crate::selectors::BaseMethod::Knn
                            | crate::selectors::BaseMethod::TreeKnn,
                        ..
                    })
                )
            })
    }

    fn index_mode(&self) -> IndexMode {
        match self.config.embedding.index {
            IndexKind::Exact => IndexMode::Exact,
            IndexKind::Approximate => IndexMode::Approximate(Default::default()),
        }
    }

    /// Copy or compute one corpus's vectors into the run directory.
    fn materialize_vectors(
        &self,
        what: &str,
        provider: ProviderKind,
        configured: &Option<PathBuf>,
        endpoint: &Option<String>,
        corpus: &Corpus,
        out: &Path,
    ) -> Result<bool, ExperimentError> {
        let fail = tag("embed");
        if out.exists() {
            return Ok(false);
        }
        let entries: Vec<(String, EmbeddingVector)> = match provider {
            ProviderKind::File => {
                let path = configured.as_ref().expect("validated");
                let store = VectorStore::load(path).map_err(|e| fail(format!("{what}: {e}")))?;
                corpus
                    .pairs()
                    .iter()
                    .map(|pair| {
                        store
                            .get(&pair.id)
                            .cloned()
                            .map(|v| (pair.id.clone(), v))
                            .ok_or_else(|| {
                                fail(format!(
                                    "{what}: no vector for corpus id {:?} in {}",
                                    pair.id,
                                    path.display()
                                ))
                            })
                    })
                    .collect::<Result<_, _>>()?
            }
            ProviderKind::Http => {
                let endpoint = endpoint.as_ref().expect("validated");
                let provider = HttpProvider::new(endpoint)
                    .with_parallelism(self.config.embedding.embed_parallelism)
                    .with_timeout(std::time::Duration::from_secs(self.config.llm.timeout_secs));
                let texts: Vec<String> = corpus
                    .pairs()
                    .iter()
                    .map(|p| p.source_text.clone())
                    .collect();
                let vectors = provider
                    .embed(&texts)
                    .map_err(|e| fail(format!("{what}: {e}")))?;
                corpus
                    .ids()
                    .map(String::from)
                    .zip(vectors)
                    .collect()
            }
        };
        let store = VectorStore::new(entries).map_err(|e| fail(format!("{what}: {e}")))?;
        store.save(out).map_err(|e| fail(format!("{what}: {e}")))?;
        Ok(true)
    }

    /// Persist every embedding space the configured methods require.
    pub fn embed(&self) -> Result<bool, ExperimentError> {
        if !self.needs_embeddings() {
            return Ok(false);
        }
        let mut did_work = false;
        let emb = &self.config.embedding;
        for (corpus, side) in [(&self.prompt_source, "source"), (&self.testset, "test")] {
            let configured = if side == "source" {
                &emb.source_vectors
            } else {
                &emb.test_vectors
            };
            did_work |= self.materialize_vectors(
                &format!("embedding/{side}"),
                emb.provider,
                configured,
                &emb.endpoint,
                corpus,
                &self.vectors_path(None, side),
            )?;
        }
        if self.needs_afsp() {
            let afsp = emb.afsp.as_ref().expect("validated");
            for (i, channel) in afsp.channels.iter().enumerate() {
                for (corpus, side) in [(&self.prompt_source, "source"), (&self.testset, "test")] {
                    let configured = if side == "source" {
                        &channel.source_vectors
                    } else {
                        &channel.test_vectors
                    };
                    did_work |= self.materialize_vectors(
                        &format!("afsp channel {i}/{side}"),
                        channel.provider,
                        configured,
                        &channel.endpoint,
                        corpus,
                        &self.vectors_path(Some(i), side),
                    )?;
                }
            }
        }
        Ok(did_work)
    }

    fn load_store(&self, channel: Option<usize>, side: &str) -> Result<VectorStore, ExperimentError> {
        let path = self.vectors_path(channel, side);
        VectorStore::load(&path).map_err(|e| ExperimentError::PhaseFailed {
            phase: "select",
            message: format!("loading {}: {e} (run the embed phase first)", path.display()),
        })
    }

    fn build_index_from(&self, store: &VectorStore) -> Result<VectorIndex, ExperimentError> {
        VectorIndex::build(store.entries().iter().cloned(), self.index_mode())
            .map_err(|e| ExperimentError::PhaseFailed {
                phase: "select",
                message: e.to_string(),
            })
    }

    /// Run the tree once per config and persist the pool. Reused by every
    /// tree-hybrid method.
    pub fn build_pool(&self) -> Result<(bool, Option<usize>), ExperimentError> {
        let fail = tag("build-pool");
        if !self.needs_tree() {
            return Ok((false, None));
        }
        let pool_path = self.pool_path();
        if pool_path.exists() {
            let pool = read_pool(&pool_path).map_err(|e| fail(e.to_string()))?;
            return Ok((false, Some(pool.entries.len())));
        }
        let tree_cfg = self.config.tree.as_ref().expect("validated");
        let store = self
            .load_store(None, "source")
            .map_err(|e| fail(e.to_string()))?;
        let index = self.build_index_from(&store).map_err(|e| fail(e.to_string()))?;
        let labeler = LlmLabeler::new(
            Arc::clone(&self.client),
            self.prompts.clone(),
            &self.config.llm.model,
            &self.config.corpus.source_lang,
            &self.config.corpus.target_lang,
        );
        let pool = run_treeprompt(&self.prompt_source, &self.testset, tree_cfg, &labeler, &index)
            .map_err(|e| fail(e.to_string()))?;
        write_pool(&pool_path, &pool).map_err(|e| fail(e.to_string()))?;
        Ok((true, Some(pool.entries.len())))
    }

    /// Select demonstrations for every test sentence, per method.
    pub fn select_phase(&self) -> Result<bool, ExperimentError> {
        let fail = tag("select");
        let pending: Vec<&ExperimentMethod> = self
            .methods
            .iter()
            .filter(|m| !self.shots_path(&m.label()).exists())
            .collect();
        if pending.is_empty() {
            return Ok(false);
        }
        let needs_selection = pending
            .iter()
            .any(|m| matches!(m, ExperimentMethod::Selection(_)));
        let mut index = None;
        let mut query_provider = None;
        let mut pool: Option<ExamplePool> = None;
        let mut afsp_stores: Vec<(VectorIndex, FileProvider)> = Vec::new();
        if needs_selection {
            if self.needs_knn_index() {
                let store = self.load_store(None, "source")?;
                index = Some(self.build_index_from(&store)?);
                let test_store = self.load_store(None, "test")?;
                query_provider = Some(
                    FileProvider::for_corpus(&self.testset, &test_store)
                        .map_err(|e| fail(e.to_string()))?,
                );
            }
            if self.needs_afsp() {
                for i in 0..3 {
                    let source = self.load_store(Some(i), "source")?;
                    let channel_index = self.build_index_from(&source)?;
                    let test_store = self.load_store(Some(i), "test")?;
                    let provider = FileProvider::for_corpus(&self.testset, &test_store)
                        .map_err(|e| fail(e.to_string()))?;
                    afsp_stores.push((channel_index, provider));
                }
            }
            if self.needs_tree() {
                pool = Some(read_pool(&self.pool_path()).map_err(|e| {
                    fail(format!("{e} (run the build-pool phase first)"))
                })?);
            }
        }

        for method in pending {
            let label = method.label();
            let records: Vec<ShotRecord> = match method {
                ExperimentMethod::ZeroShot => self
                    .testset
                    .pairs()
                    .iter()
                    .map(|q| ShotRecord {
                        query_id: q.id.clone(),
                        shot_ids: Vec::new(),
                    })
                    .collect(),
                ExperimentMethod::Selection(spec) => {
                    let resources = SelectionResources {
                        corpus: &self.prompt_source,
                        index: index.as_ref(),
                        query_provider: query_provider
                            .as_ref()
                            .map(|p| p as &dyn EmbeddingProvider),
                        afsp: if spec_needs_afsp(spec) {
                            let weights = self
                                .config
                                .embedding
                                .afsp
                                .as_ref()
                                .expect("validated")
                                .weights;
                            Some(AfspResources {
                                channels: [
                                    AfspChannel {
                                        provider: &afsp_stores[0].1,
                                        index: &afsp_stores[0].0,
                                    },
                                    AfspChannel {
                                        provider: &afsp_stores[1].1,
                                        index: &afsp_stores[1].0,
                                    },
                                    AfspChannel {
                                        provider: &afsp_stores[2].1,
                                        index: &afsp_stores[2].0,
                                    },
                                ],
                                weights,
                            })
                        } else {
                            None
                        },
                        reranker: spec.rerank.then(|| Reranker {
                            client: &self.client,
                            prompts: &self.prompts,
                            model: &self.config.llm.model,
                        }),
                        rerank_window_cap: self.config.selection.rerank_window_cap,
                    };
                    let pool_ref = spec.base.is_tree().then(|| {
                        pool.as_ref().expect("loaded when tree methods pending")
                    });
                    parallel_map(
                        self.testset.pairs(),
                        self.config.selection.parallelism,
                        |query: &SentencePair| -> Result<ShotRecord, ExperimentError> {
                            let request = SelectionRequest {
                                query,
                                k: self.config.selection.k,
                                method: *spec,
                                pool: pool_ref,
                                seed: query_seed(self.config.selection.seed, &query.id),
                            };
                            let picked = crate::selectors::select(&request, &resources)
                                .map_err(|e| fail(format!("{label} / {}: {e}", query.id)))?;
                            Ok(ShotRecord {
                                query_id: query.id.clone(),
                                shot_ids: picked.into_iter().map(|p| p.id).collect(),
                            })
                        },
                    )?
                }
            };
            jsonl::write(&self.shots_path(&label), records).map_err(|e| fail(e.to_string()))?;
        }
        Ok(true)
    }

    /// Render the translation prompt for every query and collect
    /// hypotheses, per method.
    pub fn translate(&self) -> Result<bool, ExperimentError> {
        let fail = tag("translate");
        let mut did_work = false;
        for method in &self.methods {
            let label = method.label();
            let out = self.hyps_path(&label);
            if out.exists() {
                continue;
            }
            let shots: Vec<ShotRecord> = jsonl::read(&self.shots_path(&label))
                .map_err(|e| fail(format!("{e} (run the select phase first)")))?;
            let records = parallel_map(
                &shots,
                self.config.selection.parallelism,
                |shot: &ShotRecord| -> Result<HypRecord, ExperimentError> {
                    let query = self.testset.get(&shot.query_id).ok_or_else(|| {
                        fail(format!("unknown query id {:?} in shots file", shot.query_id))
                    })?;
                    let demos: Vec<SentencePair> = shot
                        .shot_ids
                        .iter()
                        .map(|id| {
                            self.prompt_source.get(id).cloned().ok_or_else(|| {
                                fail(format!("unknown shot id {id:?} in shots file"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    let prompt = self
                        .prompts
                        .render_translation_prompt(
                            &demos,
                            query,
                            &self.config.corpus.source_lang,
                            &self.config.corpus.target_lang,
                        )
                        .map_err(|e| fail(e.to_string()))?;
                    let request = ChatRequest {
                        model: self.config.llm.model.clone(),
                        system_text: None,
                        user_text: prompt,
                        temperature: self.config.llm.temperature,
                        max_tokens: self.config.llm.max_tokens,
                    };
                    let text = self
                        .client
                        .cached_complete(Phase::Translation, &request)
                        .map_err(|e| fail(format!("{label} / {}: {e}", shot.query_id)))?;
                    Ok(HypRecord {
                        query_id: shot.query_id.clone(),
                        text,
                    })
                },
            )?;
            jsonl::write(&out, records).map_err(|e| fail(e.to_string()))?;
            did_work = true;
        }
        Ok(did_work)
    }

    fn external_scores_for(
        &self,
        label: &str,
        dir: &Option<PathBuf>,
        metric: ExternalMetric,
        records: &mut [EvalRecord],
    ) -> Result<(), ExperimentError> {
        let Some(dir) = dir else { return Ok(()) };
        let path = dir.join(format!("{label}.jsonl"));
        if !path.exists() {
            return Ok(());
        }
        let scores = load_external_scores(&path)
            .map_err(|e| tag("evaluate")(format!("{}: {e}", path.display())))?;
        let unmatched = attach_external(records, &scores, metric);
        if !unmatched.is_empty() {
            eprintln!(
                "warning: {} scores in {} match no query id (first: {:?})",
                unmatched.len(),
                path.display(),
                unmatched[0]
            );
        }
        Ok(())
    }

    /// Score every hypothesis with the native metrics, attach external
    /// scores when provided, and aggregate per method.
    pub fn evaluate(&self) -> Result<(bool, Vec<MethodReport>), ExperimentError> {
        let fail = tag("evaluate");
        let mut reports = Vec::with_capacity(self.methods.len());
        let mut did_work = false;
        for method in &self.methods {
            let label = method.label();
            let report_path = self.method_report_path(&label);
            if report_path.exists() && self.eval_path(&label).exists() {
                let text = std::fs::read_to_string(&report_path).map_err(|e| {
                    fail(format!("{}: {e}", report_path.display()))
                })?;
                reports.push(
                    serde_json::from_str(&text)
                        .map_err(|e| fail(format!("{}: {e}", report_path.display())))?,
                );
                continue;
            }
            let hyps: Vec<HypRecord> = jsonl::read(&self.hyps_path(&label))
                .map_err(|e| fail(format!("{e} (run the translate phase first)")))?;
            let mut records = hyps
                .iter()
                .map(|hyp| {
                    let reference = self.testset.get(&hyp.query_id).ok_or_else(|| {
                        fail(format!("unknown query id {:?} in hyps file", hyp.query_id))
                    })?;
                    Ok(EvalRecord::score(
                        hyp.query_id.clone(),
                        &hyp.text,
                        &reference.target_text,
                    ))
                })
                .collect::<Result<Vec<_>, ExperimentError>>()?;
            self.external_scores_for(
                &label,
                &self.config.external.comet_dir,
                ExternalMetric::Comet,
                &mut records,
            )?;
            self.external_scores_for(
                &label,
                &self.config.external.bertscore_dir,
                ExternalMetric::Bertscore,
                &mut records,
            )?;
            let report = aggregate(&records, &label).map_err(|e| fail(e.to_string()))?;
            jsonl::write(&self.eval_path(&label), records).map_err(|e| fail(e.to_string()))?;
            let pretty =
                serde_json::to_string_pretty(&report).expect("report serializes");
            std::fs::write(&report_path, pretty)
                .map_err(|e| fail(format!("{}: {e}", report_path.display())))?;
            reports.push(report);
            did_work = true;
        }
        Ok((did_work, reports))
    }

    /// Logical prompt counts recovered from the persisted artifacts: the
    /// pool provenance for labeling, hypothesis counts for translation, and
    /// one rerank prompt per query of each rerank-flagged method.
    pub fn prompt_budget(&self) -> Result<PromptBudget, ExperimentError> {
        let fail = tag("report");
        let mut budget = PromptBudget::default();
        let pool_path = self.pool_path();
        if pool_path.exists() {
            let pool = read_pool(&pool_path).map_err(|e| fail(e.to_string()))?;
            budget.labeling = pool.provenance.labeling_attempts;
            budget.pool_size = Some(pool.entries.len());
        }
        for method in &self.methods {
            let label = method.label();
            let hyps_path = self.hyps_path(&label);
            if !hyps_path.exists() {
                continue;
            }
            let hyps: Vec<HypRecord> =
                jsonl::read(&hyps_path).map_err(|e| fail(e.to_string()))?;
            budget.translation += hyps.len() as u64;
            if matches!(method, ExperimentMethod::Selection(spec) if spec.rerank) {
                budget.reranking += hyps.len() as u64;
            }
        }
        Ok(budget)
    }

    /// Emit `report.md` and `report.csv` for the given reports.
    pub fn report(&self, reports: &[MethodReport]) -> Result<ReportPaths, ExperimentError> {
        let budget = self.prompt_budget()?;
        write_report(&self.run_dir, reports, Some(&budget))
            .map_err(|e| tag("report")(e.to_string()))
    }

    /// All phases in order, with the manifest persisted after each one.
    pub fn run(&self) -> Result<RunManifest, ExperimentError> {
        std::fs::create_dir_all(&self.run_dir).map_err(|e| ExperimentError::Io {
            path: self.run_dir.display().to_string(),
            source: e,
        })?;
        let config_json = self.run_dir.join("config.json");
        if !config_json.exists() {
            std::fs::write(
                &config_json,
                serde_json::to_string_pretty(&self.config).expect("config serializes"),
            )
            .map_err(|e| ExperimentError::Io {
                path: config_json.display().to_string(),
                source: e,
            })?;
        }
        let created = now();
        let mut manifest = RunManifest {
            config_hash: self.config_hash.clone(),
            created_at: created.clone(),
            updated_at: created,
            pool_size: None,
            phases: BTreeMap::new(),
            ledger: self.client.ledger().snapshot(),
            prompt_budget: PromptBudget::default(),
            artifacts: BTreeMap::new(),
        };
        for phase in PHASE_ORDER {
            let did_work = match phase {
                "embed" => self.embed()?,
                "build-pool" => {
                    let (did, size) = self.build_pool()?;
                    manifest.pool_size = size;
                    did
                }
                "select" => self.select_phase()?,
                "translate" => self.translate()?,
                "evaluate" => {
                    let (did, reports) = self.evaluate()?;
                    let paths = self.report(&reports)?;
                    manifest
                        .artifacts
                        .insert("report.md".into(), paths.markdown.display().to_string());
                    manifest
                        .artifacts
                        .insert("report.csv".into(), paths.csv.display().to_string());
                    did
                }
                "report" => {
                    manifest.prompt_budget = self.prompt_budget()?;
                    false
                }
                _ => unreachable!(),
            };
            manifest.phases.insert(
                phase.to_string(),
                PhaseRecord {
                    completed_at: now(),
                    skipped: !did_work,
                    ledger_after: self.client.ledger().snapshot(),
                },
            );
            manifest.updated_at = now();
            manifest.ledger = self.client.ledger().snapshot();
            self.write_manifest(&manifest)?;
        }
        if self.needs_tree() {
            manifest
                .artifacts
                .insert("pool".into(), self.pool_path().display().to_string());
        }
        manifest.artifacts.insert(
            "methods".into(),
            self.run_dir.join("methods").display().to_string(),
        );
        self.write_manifest(&manifest)?;
        Ok(manifest)
    }

    fn write_manifest(&self, manifest: &RunManifest) -> Result<(), ExperimentError> {
        let path = self.manifest_path();
        std::fs::write(
            &path,
            serde_json::to_string_pretty(manifest).expect("manifest serializes"),
        )
        .map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    /// Load the manifest persisted by a previous `run`.
    pub fn read_manifest(&self) -> Result<RunManifest, ExperimentError> {
        let path = self.manifest_path();
        let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    /// Reports persisted by a previous `evaluate`, in config method order.
    pub fn read_method_reports(&self) -> Result<Vec<MethodReport>, ExperimentError> {
        self.methods
            .iter()
            .map(|method| {
                let path = self.method_report_path(&method.label());
                let text = std::fs::read_to_string(&path).map_err(|e| ExperimentError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                serde_json::from_str(&text)
                    .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
            })
            .collect()
    }
}

fn spec_needs_afsp(spec: &MethodSpec) -> bool {
    matches!(
        spec.base,
        crate::selectors::BaseMethod::Afsp | crate::selectors::BaseMethod::TreeAfsp
    )
}

/// Build a pipeline from `config` and run every phase.
pub fn run_pipeline(config: ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    Pipeline::new(config)?.run()
}
