//! Example-selection engine and experiment harness for few-shot machine
//! translation prompting.
//!
//! The centerpiece is a tree-based selection loop ([`tree`]) that labels
//! candidate examples with an LLM judge and expands the most promising ones
//! via nearest-neighbor retrieval over sentence embeddings ([`embedding`]).
//! Around it sit baseline and hybrid selectors ([`selectors`]), byte-exact
//! prompt rendering ([`prompting`]), native MT metrics ([`metrics`]), and a
//! config-driven pipeline ([`experiment`]) with exact call accounting
//! ([`llm`]).

pub mod corpus;
pub mod embedding;
pub mod experiment;
pub mod jsonl;
pub mod llm;
pub mod metrics;
pub mod prompting;
pub mod rng;
pub mod selectors;
pub mod stub;
pub mod tree;
