//! Native corpus/sentence BLEU and chrF, ingestion of externally computed
//! neural scores, and per-method aggregation.
//!
//! BLEU here is corpus-level n-gram precision (n = 1..4, uniform weights)
//! with brevity penalty. Tokenization splits punctuation into standalone
//! tokens and then splits on whitespace, without lowercasing; orders that
//! contribute no n-grams anywhere in the corpus are dropped from the
//! geometric mean, and a zero clipped count is smoothed to 1e-9. Absolute
//! values therefore differ from other toolkits' tokenizer defaults; scores
//! are comparable run to run within this crate.
//!
//! chrF is the character n-gram F-score (n = 1..6, beta = 2, word n-grams
//! fixed to 0), computed over the whitespace-stripped character stream and
//! reported on a 0..100 scale.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

const BLEU_MAX_ORDER: usize = 4;
const BLEU_EPSILON: f64 = 1e-9;
const CHRF_MAX_ORDER: usize = 6;
const CHRF_BETA: f64 = 2.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("hypothesis/reference length mismatch: {hypotheses} vs {references}")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("input must contain at least one record")]
    EmptyInput,
    #[error("duplicate query_id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    File(#[from] JsonlError),
}

/// Punctuation-splitting whitespace tokenizer used by BLEU.
fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if c.is_alphanumeric() {
            current.push(c);
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.join("\u{1}")).or_insert(0) += 1;
        }
    }
    counts
}

fn check_lengths(hypotheses: &[String], references: &[String]) -> Result<(), MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    Ok(())
}

/// Corpus BLEU in `[0, 1]` from pooled n-gram statistics.
pub fn bleu(hypotheses: &[String], references: &[String]) -> Result<f64, MetricsError> {
    check_lengths(hypotheses, references)?;
    let mut matched = [0u64; BLEU_MAX_ORDER];
    let mut total = [0u64; BLEU_MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hypothesis, reference) in hypotheses.iter().zip(references) {
        let hyp_tokens = tokenize(hypothesis);
        let ref_tokens = tokenize(reference);
        hyp_len += hyp_tokens.len() as u64;
        ref_len += ref_tokens.len() as u64;
        for n in 1..=BLEU_MAX_ORDER {
            let hyp_counts = ngram_counts(&hyp_tokens, n);
            let ref_counts = ngram_counts(&ref_tokens, n);
            for (gram, &count) in &hyp_counts {
                total[n - 1] += count;
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }
    if total[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0u32;
    for n in 0..BLEU_MAX_ORDER {
        if total[n] == 0 {
            continue;
        }
        let precision = if matched[n] > 0 {
            matched[n] as f64 / total[n] as f64
        } else {
            BLEU_EPSILON / total[n] as f64
        };
        log_sum += precision.ln();
        orders += 1;
    }
    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok((brevity * (log_sum / orders as f64).exp()).clamp(0.0, 1.0))
}

/// Sentence BLEU: the corpus formula applied to a single pair.
pub fn sentence_bleu(hypothesis: &str, reference: &str) -> f64 {
    bleu(&[hypothesis.to_string()], &[reference.to_string()]).unwrap_or(0.0)
}

fn char_stream(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

fn char_ngram_counts(chars: &[char], n: usize) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for window in chars.windows(n) {
            *counts.entry(window.iter().collect::<String>()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus chrF in `[0, 100]`.
pub fn chrf(hypotheses: &[String], references: &[String]) -> Result<f64, MetricsError> {
    check_lengths(hypotheses, references)?;
    let mut matched = [0u64; CHRF_MAX_ORDER];
    let mut hyp_total = [0u64; CHRF_MAX_ORDER];
    let mut ref_total = [0u64; CHRF_MAX_ORDER];
    for (hypothesis, reference) in hypotheses.iter().zip(references) {
        let hyp_chars = char_stream(hypothesis);
        let ref_chars = char_stream(reference);
        for n in 1..=CHRF_MAX_ORDER {
            let hyp_counts = char_ngram_counts(&hyp_chars, n);
            let ref_counts = char_ngram_counts(&ref_chars, n);
            hyp_total[n - 1] += hyp_counts.values().sum::<u64>();
            ref_total[n - 1] += ref_counts.values().sum::<u64>();
            for (gram, &count) in &hyp_counts {
                matched[n - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
            }
        }
    }
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut orders = 0u32;
    for n in 0..CHRF_MAX_ORDER {
        if hyp_total[n] == 0 && ref_total[n] == 0 {
            continue;
        }
        if hyp_total[n] > 0 {
            precision_sum += matched[n] as f64 / hyp_total[n] as f64;
        }
        if ref_total[n] > 0 {
            recall_sum += matched[n] as f64 / ref_total[n] as f64;
        }
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let precision = precision_sum / orders as f64;
    let recall = recall_sum / orders as f64;
    let beta_sq = CHRF_BETA * CHRF_BETA;
    let denominator = beta_sq * precision + recall;
    if denominator == 0.0 {
        return Ok(0.0);
    }
    Ok((100.0 * (1.0 + beta_sq) * precision * recall / denominator).clamp(0.0, 100.0))
}

/// Sentence chrF: the corpus formula applied to a single pair.
pub fn sentence_chrf(hypothesis: &str, reference: &str) -> f64 {
    chrf(&[hypothesis.to_string()], &[reference.to_string()]).unwrap_or(0.0)
}

/// Externally computed neural metrics consumed via the score-file adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExternalMetric {
    Comet,
    Bertscore,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRecord {
    query_id: String,
    score: f64,
}

/// Load `{query_id, score}` JSONL. Scores are recorded verbatim; negative
/// values are valid (unnormalized neural checkpoints produce them).
pub fn load_external_scores(
    path: &Path,
) -> Result<std::collections::BTreeMap<String, f64>, MetricsError> {
    let records: Vec<ScoreRecord> = jsonl::read(path)?;
    let mut scores = std::collections::BTreeMap::new();
    for record in records {
        if scores.insert(record.query_id.clone(), record.score).is_some() {
            return Err(MetricsError::DuplicateId(record.query_id));
        }
    }
    Ok(scores)
}

/// One scored translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub hypothesis: String,
    pub reference: String,
    pub bleu: f64,
    pub chrf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comet: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bertscore: Option<f64>,
}

impl EvalRecord {
    /// Score a hypothesis against its reference with the native metrics.
    pub fn score(query_id: impl Into<String>, hypothesis: &str, reference: &str) -> EvalRecord {
        EvalRecord {
            query_id: query_id.into(),
            hypothesis: hypothesis.to_string(),
            reference: reference.to_string(),
            bleu: sentence_bleu(hypothesis, reference),
            chrf: sentence_chrf(hypothesis, reference),
            comet: None,
            bertscore: None,
        }
    }
}

/// Attach external scores by query id; returns the score-file ids that
/// matched no record.
pub fn attach_external(
    records: &mut [EvalRecord],
    scores: &std::collections::BTreeMap<String, f64>,
    metric: ExternalMetric,
) -> Vec<String> {
    let mut matched: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for record in records.iter_mut() {
        if let Some(&score) = scores.get(&record.query_id) {
            matched.insert(record.query_id.as_str());
            match metric {
                ExternalMetric::Comet => record.comet = Some(score),
                ExternalMetric::Bertscore => record.bertscore = Some(score),
            }
        }
    }
    scores
        .keys()
        .filter(|id| !matched.contains(id.as_str()))
        .cloned()
        .collect()
}

/// Corpus-level results for one method. Corpus BLEU/chrF come from pooled
/// n-gram statistics, never from averaging sentence scores; neural metrics
/// are arithmetic means over the records that carry them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub corpus_bleu: f64,
    pub corpus_chrf: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_comet: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_bertscore: Option<f64>,
    pub record_count: usize,
    pub comet_count: usize,
    pub bertscore_count: usize,
}

pub fn aggregate(records: &[EvalRecord], method: &str) -> Result<MethodReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let hypotheses: Vec<String> = records.iter().map(|r| r.hypothesis.clone()).collect();
    let references: Vec<String> = records.iter().map(|r| r.reference.clone()).collect();
    let comets: Vec<f64> = records.iter().filter_map(|r| r.comet).collect();
    let berts: Vec<f64> = records.iter().filter_map(|r| r.bertscore).collect();
    let mean = |values: &[f64]| {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    Ok(MethodReport {
        method: method.to_string(),
        corpus_bleu: bleu(&hypotheses, &references)?,
        corpus_chrf: chrf(&hypotheses, &references)?,
        mean_comet: mean(&comets),
        mean_bertscore: mean(&berts),
        record_count: records.len(),
        comet_count: comets.len(),
        bertscore_count: berts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let text = strings(&["the quick brown fox jumps", "over the lazy dog"]);
        assert!((bleu(&text, &text).unwrap() - 1.0).abs() < 1e-12);
        let hyp = strings(&["aa bb cc dd"]);
        let reference = strings(&["xx yy zz ww"]);
        assert!(bleu(&hyp, &reference).unwrap() <= 1e-6);
    }

    #[test]
    fn bleu_hand_oracle_case() {
        // counts 3/3, 2/2, 1/1 up to trigrams, no 4-gram; BP = exp(1 - 4/3)
        let hyp = strings(&["the cat sat"]);
        let reference = strings(&["the cat sat down"]);
        let expected = (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu(&hyp, &reference).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn bleu_splits_punctuation() {
        assert_eq!(tokenize("don't stop."), vec!["don", "'", "t", "stop", "."]);
        // Same words, punctuation apart: still a perfect unigram match.
        let hyp = strings(&["hello , world !"]);
        let reference = strings(&["hello, world!"]);
        assert!((bleu(&hyp, &reference).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_single_token_identity() {
        let text = strings(&["hello"]);
        assert!((bleu(&text, &text).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_errors() {
        assert!(matches!(
            bleu(&strings(&["a"]), &strings(&["a", "b"])),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(bleu(&[], &[]), Err(MetricsError::EmptyInput)));
    }

    #[test]
    fn bleu_permutation_invariant() {
        let hyp = strings(&["one two three", "four five", "six seven eight nine"]);
        let reference = strings(&["one two four", "four five six", "six seven nine"]);
        let forward = bleu(&hyp, &reference).unwrap();
        let perm = [2usize, 0, 1];
        let hyp_p: Vec<String> = perm.iter().map(|&i| hyp[i].clone()).collect();
        let ref_p: Vec<String> = perm.iter().map(|&i| reference[i].clone()).collect();
        assert!((bleu(&hyp_p, &ref_p).unwrap() - forward).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_monotone_on_prefixes() {
        // Hypotheses are strict prefixes of the references; shorter prefixes
        // must never score higher.
        let reference =
            strings(&["alpha beta gamma delta epsilon zeta", "one two three four five six"]);
        let prefix = |text: &str, keep: usize| -> String {
            text.split_whitespace().take(keep).collect::<Vec<_>>().join(" ")
        };
        let mut last = -1.0;
        for keep in 1..6 {
            let hyp: Vec<String> = reference.iter().map(|r| prefix(r, keep)).collect();
            let score = bleu(&hyp, &reference).unwrap();
            assert!(
                score >= last,
                "prefix length {keep} scored {score} < {last}"
            );
            last = score;
        }
    }

    #[test]
    fn chrf_identity_and_disjoint() {
        let text = strings(&["der schnelle braune Fuchs"]);
        assert!((chrf(&text, &text).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(chrf(&strings(&["aaaa"]), &strings(&["bbbb"])).unwrap(), 0.0);
    }

    #[test]
    fn chrf_hand_case() {
        // "abcd" vs "abce": P = R = (3/4 + 2/3 + 1/2 + 0) / 4 = 23/48, and
        // with P == R the F-score reduces to P.
        let got = chrf(&strings(&["abcd"]), &strings(&["abce"])).unwrap();
        let expected = 100.0 * 23.0 / 48.0;
        assert!((got - expected).abs() < 1e-9, "got {got}, want {expected}");
    }

    #[test]
    fn chrf_ignores_whitespace() {
        let spaced = strings(&["a b c d"]);
        let joined = strings(&["abcd"]);
        assert!((chrf(&spaced, &joined).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn external_scores_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("comet.jsonl");
        jsonl::write(
            &path,
            vec![
                ScoreRecord { query_id: "a".into(), score: -0.1475 },
                ScoreRecord { query_id: "b".into(), score: 0.3 },
                ScoreRecord { query_id: "c".into(), score: -0.9 },
            ],
        )
        .unwrap();
        let scores = load_external_scores(&path).unwrap();
        assert_eq!(scores.len(), 3);
        assert_eq!(scores["a"], -0.1475, "negative scores are accepted");

        jsonl::write(
            &path,
            vec![
                ScoreRecord { query_id: "a".into(), score: 0.1 },
                ScoreRecord { query_id: "a".into(), score: 0.2 },
            ],
        )
        .unwrap();
        assert!(matches!(
            load_external_scores(&path),
            Err(MetricsError::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn attach_reports_unmatched_ids() {
        let mut records = vec![
            EvalRecord::score("a", "x y", "x y"),
            EvalRecord::score("b", "x", "y"),
        ];
        let scores = [("a".to_string(), -0.5), ("zz".to_string(), 0.1)]
            .into_iter()
            .collect();
        let unmatched = attach_external(&mut records, &scores, ExternalMetric::Comet);
        assert_eq!(unmatched, vec!["zz".to_string()]);
        assert_eq!(records[0].comet, Some(-0.5));
        assert_eq!(records[1].comet, None);
    }

    #[test]
    fn aggregate_single_and_missing_neural_scores() {
        let single = vec![EvalRecord::score("a", "same text", "same text")];
        let report = aggregate(&single, "demo").unwrap();
        assert!((report.corpus_bleu - 1.0).abs() < 1e-12);
        assert!((report.corpus_chrf - 100.0).abs() < 1e-9);
        assert_eq!(report.mean_comet, None, "absent, never zero");

        let mut two = vec![
            EvalRecord::score("a", "x y z", "x y w"),
            EvalRecord::score("b", "p q", "p q"),
        ];
        two[0].comet = Some(-0.2);
        let report = aggregate(&two, "demo").unwrap();
        assert_eq!(report.mean_comet, Some(-0.2), "mean over the one present");
        assert_eq!(report.comet_count, 1);
        assert_eq!(report.record_count, 2);
    }

    #[test]
    fn aggregate_matches_spreadsheet_recompute() {
        let mut records: Vec<EvalRecord> = (0..10)
            .map(|i| {
                let mut r = EvalRecord::score(
                    format!("q{i}"),
                    &format!("token{i} alpha beta"),
                    &format!("token{i} alpha gamma"),
                );
                r.comet = Some(-0.1 * i as f64);
                r.bertscore = (i % 2 == 0).then_some(0.9 + 0.001 * i as f64);
                r
            })
            .collect();
        records[3].comet = None;
        let report = aggregate(&records, "m").unwrap();
        let comet_values: Vec<f64> = records.iter().filter_map(|r| r.comet).collect();
        let expected_comet = comet_values.iter().sum::<f64>() / comet_values.len() as f64;
        assert!((report.mean_comet.unwrap() - expected_comet).abs() < 1e-12);
        assert_eq!(report.comet_count, 9);
        let bert_values: Vec<f64> = records.iter().filter_map(|r| r.bertscore).collect();
        let expected_bert = bert_values.iter().sum::<f64>() / bert_values.len() as f64;
        assert!((report.mean_bertscore.unwrap() - expected_bert).abs() < 1e-12);
    }
}
