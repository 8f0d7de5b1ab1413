//! Exact accounting of LLM traffic by phase. `requests_sent` counts only
//! backend-reaching requests; cache hits are tallied separately so budget
//! laws can be checked as exact integer equalities.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Labeling,
    Translation,
    Reranking,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Labeling, Phase::Translation, Phase::Reranking];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Labeling => "labeling",
            Phase::Translation => "translation",
            Phase::Reranking => "reranking",
        }
    }

    fn index(self) -> usize {
        match self {
            Phase::Labeling => 0,
            Phase::Translation => 1,
            Phase::Reranking => 2,
        }
    }
}

/// Monotone counters, safe to share across threads.
#[derive(Debug, Default)]
pub struct CallLedger {
    sent: [AtomicU64; 3],
    hits: [AtomicU64; 3],
}

impl CallLedger {
    pub fn new() -> Self {
        CallLedger::default()
    }

    pub fn record_request(&self, phase: Phase) {
        self.sent[phase.index()].fetch_add(1, Ordering::SeqCst);
    }

    pub fn record_cache_hit(&self, phase: Phase) {
        self.hits[phase.index()].fetch_add(1, Ordering::SeqCst);
    }

    pub fn requests_sent(&self) -> u64 {
        self.sent.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    pub fn sent_in(&self, phase: Phase) -> u64 {
        self.sent[phase.index()].load(Ordering::SeqCst)
    }

    pub fn hits_in(&self, phase: Phase) -> u64 {
        self.hits[phase.index()].load(Ordering::SeqCst)
    }

    /// Requests plus cache hits: every answered attempt in a phase.
    pub fn attempts_in(&self, phase: Phase) -> u64 {
        self.sent_in(phase) + self.hits_in(phase)
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let mut by_phase = BTreeMap::new();
        let mut by_phase_hits = BTreeMap::new();
        for phase in Phase::ALL {
            by_phase.insert(phase.name().to_string(), self.sent_in(phase));
            by_phase_hits.insert(phase.name().to_string(), self.hits_in(phase));
        }
        LedgerSnapshot {
            requests_sent: self.requests_sent(),
            cache_hits: self.cache_hits(),
            by_phase,
            by_phase_hits,
        }
    }
}

/// Frozen ledger state, embedded in manifests and pool provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub requests_sent: u64,
    pub cache_hits: u64,
    pub by_phase: BTreeMap<String, u64>,
    pub by_phase_hits: BTreeMap<String, u64>,
}
