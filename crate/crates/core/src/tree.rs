//! Preference-guided tree expansion over a KNN index.
//!
//! The loop: sample an initial batch from the prompt source, have the LLM
//! judge label each example against a rotating set of test sentences, then
//! repeatedly expand the most promising unexpanded node by retrieving its
//! nearest corpus neighbors and labeling those too. The run stops when
//! enough positively labeled examples exist, the expansion budget runs out,
//! or every node has been expanded. The surviving nodes form the example
//! pool consumed by the selection layer.
//!
//! Leaf priority is (label, similarity to parent, insertion order): positive
//! before neutral before negative, closer-to-parent first within a label
//! (roots rank as if infinitely close), earliest-created first as the final
//! tie-break. Negative nodes stay in the tree so they remain expandable when
//! nothing better is left.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_random, Corpus, CorpusError, SentencePair};
use crate::embedding::{EmbeddingError, VectorIndex};
use crate::jsonl::{self, JsonlError};
use crate::llm::{
    parse_label, ChatRequest, Label, LedgerSnapshot, LlmClient, LlmError, Phase,
    LABEL_MAX_TOKENS,
};
use crate::prompting::{PromptError, PromptSet};
use crate::rng;

/// Stream salt separating SRT rotation draws from root sampling under the
/// same run seed.
const SRT_STREAM: u64 = 0x535254;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("every node is already expanded")]
    TreeExhausted,
    #[error("expansion found no candidates outside the tree")]
    EmptyExpansion,
    #[error("node for example {0:?} was already expanded")]
    AlreadyExpanded(String),
    #[error("index has no vector for example {0:?}")]
    MissingIndexEntry(String),
    #[error("invalid tree config: {0}")]
    InvalidConfig(String),
    #[error("pool file {path} is malformed: {message}")]
    MalformedPool { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    File(#[from] JsonlError),
}

/// Hyperparameters for one tree run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConfig {
    /// Size of the initial random batch.
    pub initial_sample: usize,
    /// Neighbors retrieved and labeled per expansion.
    pub neighbors_per_expansion: usize,
    /// Hard cap on expansion iterations (equivalently, KNN executions).
    pub max_expansions: usize,
    /// Stop once this many positive labels exist.
    pub target_positives: usize,
    /// Test sentences shown per labeling prompt.
    pub srt_size: usize,
    pub seed: u64,
}

impl TreeConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        for (name, value) in [
            ("initial_sample", self.initial_sample),
            ("neighbors_per_expansion", self.neighbors_per_expansion),
            ("max_expansions", self.max_expansions),
            ("target_positives", self.target_positives),
            ("srt_size", self.srt_size),
        ] {
            if value == 0 {
                return Err(TreeError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// One labeled example in the tree. `parent` and `created_at` are node
/// indices / insertion ordinals within the owning [`SelectionTree`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub example_id: String,
    pub label: Label,
    pub parent: Option<usize>,
    pub depth: usize,
    pub expanded: bool,
    pub similarity_to_parent: Option<f64>,
    pub created_at: usize,
}

/// Priority for leaf selection; `None` similarity (a root) sorts above any
/// finite similarity at the same label.
fn priority(a: &TreeNode, b: &TreeNode) -> Ordering {
    let sim = |n: &TreeNode| n.similarity_to_parent.unwrap_or(f64::INFINITY);
    a.label
        .cmp(&b.label)
        .then(
            sim(a)
                .partial_cmp(&sim(b))
                .expect("similarities are finite"),
        )
        .then(b.created_at.cmp(&a.created_at))
}

/// The labeled tree built during a run. Example ids are unique across the
/// whole tree: retrieval excludes everything already present.
#[derive(Debug, Default)]
pub struct SelectionTree {
    nodes: Vec<TreeNode>,
    ids: HashSet<String>,
    positives: usize,
    labeling_attempts: u64,
}

impl SelectionTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains_example(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn positive_count(&self) -> usize {
        self.positives
    }

    /// Labeling calls issued while building this tree (one per example, not
    /// counting parse-retry resends inside the labeler).
    pub fn labeling_attempts(&self) -> u64 {
        self.labeling_attempts
    }

    fn push(
        &mut self,
        example_id: String,
        label: Label,
        parent: Option<usize>,
        similarity: Option<f64>,
    ) -> usize {
        let depth = parent.map(|p| self.nodes[p].depth + 1).unwrap_or(0);
        let idx = self.nodes.len();
        self.ids.insert(example_id.clone());
        if label == Label::Positive {
            self.positives += 1;
        }
        self.nodes.push(TreeNode {
            example_id,
            label,
            parent,
            depth,
            expanded: false,
            similarity_to_parent: similarity,
            created_at: idx,
        });
        idx
    }
}

/// Judges one example against the current SRT.
pub trait Labeler: Send + Sync {
    fn label(&self, example: &SentencePair, srt: &[SentencePair]) -> Result<Label, TreeError>;

    /// Ledger state, when the labeler fronts an [`LlmClient`].
    fn ledger_snapshot(&self) -> Option<LedgerSnapshot> {
        None
    }
}

/// The production labeler: renders the scoring prompt, sends it at
/// temperature 0, and parses the three-way verdict. An unparsable reply is
/// retried up to twice with an appended clarification line; the final
/// failure surfaces rather than defaulting to neutral, which would silently
/// bias the tree.
pub struct LlmLabeler {
    client: Arc<LlmClient>,
    prompts: PromptSet,
    model: String,
    src_lang: String,
    tgt_lang: String,
}

impl LlmLabeler {
    pub fn new(
        client: Arc<LlmClient>,
        prompts: PromptSet,
        model: impl Into<String>,
        src_lang: impl Into<String>,
        tgt_lang: impl Into<String>,
    ) -> Self {
        LlmLabeler {
            client,
            prompts,
            model: model.into(),
            src_lang: src_lang.into(),
            tgt_lang: tgt_lang.into(),
        }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }
}

impl Labeler for LlmLabeler {
    fn label(&self, example: &SentencePair, srt: &[SentencePair]) -> Result<Label, TreeError> {
        let mut user_text =
            self.prompts
                .render_label_prompt(example, srt, &self.src_lang, &self.tgt_lang)?;
        for attempt in 0..3 {
            let request = ChatRequest::deterministic(&self.model, &user_text, LABEL_MAX_TOKENS);
            let reply = self.client.cached_complete(Phase::Labeling, &request)?;
            match parse_label(&reply) {
                Ok(label) => return Ok(label),
                Err(e) if attempt == 2 => return Err(e.into()),
                Err(_) => user_text.push_str("\n\nReply with exactly one token: 1, 0, or -1."),
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    fn ledger_snapshot(&self) -> Option<LedgerSnapshot> {
        Some(self.client.ledger().snapshot())
    }
}

/// The test sentences shown in labeling prompts at `iteration`.
///
/// Each epoch shuffles the test set once (seeded); consecutive iterations
/// take disjoint windows of `srt_size` until the permutation is exhausted,
/// then the next epoch reshuffles. Iteration 0 labels the initial batch.
pub fn rotate_srt(
    testset: &Corpus,
    iteration: usize,
    srt_size: usize,
    seed: u64,
) -> Result<Vec<SentencePair>, TreeError> {
    if srt_size == 0 {
        return Err(TreeError::InvalidConfig("srt_size must be >= 1".into()));
    }
    if srt_size > testset.len() {
        return Err(TreeError::Corpus(CorpusError::SampleTooLarge {
            requested: srt_size,
            available: testset.len(),
        }));
    }
    let windows_per_epoch = testset.len() / srt_size;
    let epoch = (iteration / windows_per_epoch) as u64;
    let slot = iteration % windows_per_epoch;
    let mut rng = rng::derived(seed, SRT_STREAM.wrapping_add(epoch));
    let perm = rng::permutation(testset.len(), &mut rng);
    Ok(perm[slot * srt_size..(slot + 1) * srt_size]
        .iter()
        .map(|&i| testset.pairs()[i].clone())
        .collect())
}

/// Sample and label the initial batch, producing a tree of root nodes.
pub fn init_tree(
    prompt_source: &Corpus,
    testset: &Corpus,
    cfg: &TreeConfig,
    labeler: &dyn Labeler,
) -> Result<SelectionTree, TreeError> {
    cfg.validate()?;
    let srt = rotate_srt(testset, 0, cfg.srt_size, cfg.seed)?;
    let roots = sample_random(prompt_source, cfg.initial_sample, cfg.seed)?;
    let mut tree = SelectionTree::default();
    for pair in roots {
        tree.labeling_attempts += 1;
        let label = labeler.label(&pair, &srt)?;
        tree.push(pair.id, label, None, None);
    }
    Ok(tree)
}

/// The unexpanded node with the best (label, similarity, age) priority.
pub fn select_expansion_leaf(tree: &SelectionTree) -> Result<usize, TreeError> {
    tree.nodes
        .iter()
        .enumerate()
        .filter(|(_, node)| !node.expanded)
        .max_by(|(_, a), (_, b)| priority(a, b))
        .map(|(idx, _)| idx)
        .ok_or(TreeError::TreeExhausted)
}

/// Expand `node_idx`: retrieve its nearest corpus neighbors (everything
/// already in the tree excluded), label each against `srt`, and attach them
/// as children ordered by similarity. The node is marked expanded even when
/// exclusion leaves nothing to retrieve.
pub fn expand(
    tree: &mut SelectionTree,
    node_idx: usize,
    prompt_source: &Corpus,
    index: &VectorIndex,
    labeler: &dyn Labeler,
    srt: &[SentencePair],
    neighbors: usize,
) -> Result<Vec<usize>, TreeError> {
    let node = &tree.nodes[node_idx];
    if node.expanded {
        return Err(TreeError::AlreadyExpanded(node.example_id.clone()));
    }
    let query = index
        .vector_of(&node.example_id)
        .ok_or_else(|| TreeError::MissingIndexEntry(node.example_id.clone()))?;
    let found = index.knn_query(&query, neighbors, &tree.ids)?;
    tree.nodes[node_idx].expanded = true;
    if found.is_empty() {
        return Err(TreeError::EmptyExpansion);
    }
    let mut children = Vec::with_capacity(found.len());
    for neighbor in found {
        let pair = prompt_source
            .get(&neighbor.id)
            .ok_or_else(|| TreeError::MissingIndexEntry(neighbor.id.clone()))?;
        tree.labeling_attempts += 1;
        let label = labeler.label(pair, srt)?;
        children.push(tree.push(
            neighbor.id,
            label,
            Some(node_idx),
            Some(neighbor.similarity),
        ));
    }
    Ok(children)
}

/// Why a tree run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    BudgetExhausted,
    TreeExhausted,
}

/// Run metadata embedded in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolProvenance {
    pub config: TreeConfig,
    pub stop: StopReason,
    pub expansions: usize,
    pub labeling_attempts: u64,
    pub node_count: usize,
    pub positive_count: usize,
    pub ledger: Option<LedgerSnapshot>,
}

/// One pool entry; `parent` refers to the parent's example id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledExample {
    pub id: String,
    pub label: Label,
    pub depth: usize,
    pub parent: Option<String>,
    pub similarity: Option<f64>,
    pub created_at: usize,
}

/// The refined example set: every labeled node, ordered best-first by
/// (label, similarity to parent, insertion order). Negative entries are kept
/// for provenance but hidden from [`ExamplePool::selectable`], which is what
/// the selection layer consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePool {
    pub entries: Vec<PooledExample>,
    pub provenance: PoolProvenance,
}

impl ExamplePool {
    fn from_tree(tree: &SelectionTree, provenance: PoolProvenance) -> ExamplePool {
        let mut order: Vec<usize> = (0..tree.nodes.len()).collect();
        order.sort_by(|&a, &b| {
            priority(&tree.nodes[b], &tree.nodes[a])
                .then(tree.nodes[a].created_at.cmp(&tree.nodes[b].created_at))
        });
        let entries = order
            .into_iter()
            .map(|i| {
                let node = &tree.nodes[i];
                PooledExample {
                    id: node.example_id.clone(),
                    label: node.label,
                    depth: node.depth,
                    parent: node.parent.map(|p| tree.nodes[p].example_id.clone()),
                    similarity: node.similarity_to_parent,
                    created_at: node.created_at,
                }
            })
            .collect();
        ExamplePool {
            entries,
            provenance,
        }
    }

    /// Entries usable as demonstrations: positives first, then neutrals.
    pub fn selectable(&self) -> impl Iterator<Item = &PooledExample> {
        self.entries.iter().filter(|e| e.label >= Label::Neutral)
    }

    pub fn selectable_ids(&self) -> Vec<String> {
        self.selectable().map(|e| e.id.clone()).collect()
    }

    pub fn positive_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == Label::Positive)
            .count()
    }
}

/// Build the tree to completion and return the ordered pool.
pub fn run_treeprompt(
    prompt_source: &Corpus,
    testset: &Corpus,
    cfg: &TreeConfig,
    labeler: &dyn Labeler,
    index: &VectorIndex,
) -> Result<ExamplePool, TreeError> {
    let mut tree = init_tree(prompt_source, testset, cfg, labeler)?;
    let mut expansions = 0usize;
    let stop = loop {
        if tree.positives >= cfg.target_positives {
            break StopReason::TargetReached;
        }
        if expansions >= cfg.max_expansions {
            break StopReason::BudgetExhausted;
        }
        let leaf = match select_expansion_leaf(&tree) {
            Ok(idx) => idx,
            Err(TreeError::TreeExhausted) => break StopReason::TreeExhausted,
            Err(e) => return Err(e),
        };
        expansions += 1;
        let srt = rotate_srt(testset, expansions, cfg.srt_size, cfg.seed)?;
        match expand(
            &mut tree,
            leaf,
            prompt_source,
            index,
            labeler,
            &srt,
            cfg.neighbors_per_expansion,
        ) {
            Ok(_) | Err(TreeError::EmptyExpansion) => {}
            Err(e) => return Err(e),
        }
    };
    let provenance = PoolProvenance {
        config: cfg.clone(),
        stop,
        expansions,
        labeling_attempts: tree.labeling_attempts,
        node_count: tree.len(),
        positive_count: tree.positive_count(),
        ledger: labeler.ledger_snapshot(),
    };
    Ok(ExamplePool::from_tree(&tree, provenance))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PoolRecord {
    Provenance { provenance: PoolProvenance },
    Entry(PooledExample),
}

/// Write the pool as JSONL: a provenance header record, then one record per
/// entry in pool order.
pub fn write_pool(path: &Path, pool: &ExamplePool) -> Result<(), TreeError> {
    let mut records = Vec::with_capacity(pool.entries.len() + 1);
    records.push(PoolRecord::Provenance {
        provenance: pool.provenance.clone(),
    });
    records.extend(pool.entries.iter().cloned().map(PoolRecord::Entry));
    jsonl::write(path, records)?;
    Ok(())
}

pub fn read_pool(path: &Path) -> Result<ExamplePool, TreeError> {
    let records: Vec<PoolRecord> = jsonl::read(path)?;
    let mut iter = records.into_iter();
    let provenance = match iter.next() {
        Some(PoolRecord::Provenance { provenance }) => provenance,
        _ => {
            return Err(TreeError::MalformedPool {
                path: path.display().to_string(),
                message: "first record must be the provenance header".into(),
            })
        }
    };
    let entries = iter
        .map(|record| match record {
            PoolRecord::Entry(entry) => Ok(entry),
            PoolRecord::Provenance { .. } => Err(TreeError::MalformedPool {
                path: path.display().to_string(),
                message: "duplicate provenance record".into(),
            }),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExamplePool {
        entries,
        provenance,
    })
}
