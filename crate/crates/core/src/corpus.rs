//! Parallel corpus loading, validation, and seeded sampling.
//!
//! Two on-disk formats are supported: JSONL records of
//! `{"id": optional string, "src": string, "tgt": string}` and two-column
//! TSV (`src<TAB>tgt`). Records keep file order; missing ids are assigned
//! zero-padded record ordinals. A corpus is immutable once loaded.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("sample of {requested} exceeds corpus size {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("language tag must be non-empty")]
    EmptyLanguageTag,
}

/// On-disk corpus format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(format!("unknown corpus format {other:?} (expected jsonl or tsv)")),
        }
    }
}

/// One aligned source/target example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: String,
    pub source_text: String,
    pub target_text: String,
}

/// An ordered, id-unique collection of sentence pairs.
#[derive(Debug, Clone)]
pub struct Corpus {
    pairs: Vec<SentencePair>,
    by_id: HashMap<String, usize>,
    pub source_lang: String,
    pub target_lang: String,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.pairs == other.pairs
            && self.source_lang == other.source_lang
            && self.target_lang == other.target_lang
    }
}

impl Corpus {
    pub fn new(
        pairs: Vec<SentencePair>,
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let source_lang = source_lang.into();
        let target_lang = target_lang.into();
        if source_lang.trim().is_empty() || target_lang.trim().is_empty() {
            return Err(CorpusError::EmptyLanguageTag);
        }
        let mut by_id = HashMap::with_capacity(pairs.len());
        for (idx, pair) in pairs.iter().enumerate() {
            if pair.id.is_empty()
                || pair.source_text.trim().is_empty()
                || pair.target_text.trim().is_empty()
            {
                return Err(CorpusError::MalformedRecord {
                    line: idx + 1,
                    message: "empty id or whitespace-only text field".into(),
                });
            }
            if by_id.insert(pair.id.clone(), idx).is_some() {
                return Err(CorpusError::DuplicateId(pair.id.clone()));
            }
        }
        Ok(Corpus {
            pairs,
            by_id,
            source_lang,
            target_lang,
        })
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SentencePair> {
        self.by_id.get(id).map(|&idx| &self.pairs[idx])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    #[serde(default)]
    id: Option<String>,
    src: String,
    tgt: String,
}

#[derive(Serialize)]
struct JsonlRecordOut<'a> {
    id: &'a str,
    src: &'a str,
    tgt: &'a str,
}

fn parse_line(
    format: CorpusFormat,
    line: &str,
    line_no: usize,
    ordinal: usize,
) -> Result<SentencePair, CorpusError> {
    let (id, src, tgt) = match format {
        CorpusFormat::Jsonl => {
            let record: JsonlRecord =
                serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                    line: line_no,
                    message: e.to_string(),
                })?;
            (record.id, record.src, record.tgt)
        }
        CorpusFormat::Tsv => {
            let mut cols = line.splitn(2, '\t');
            let src = cols.next().unwrap_or_default().to_string();
            let tgt = cols
                .next()
                .ok_or_else(|| CorpusError::MalformedRecord {
                    line: line_no,
                    message: "expected src<TAB>tgt".into(),
                })?
                .to_string();
            (None, src, tgt)
        }
    };
    if src.trim().is_empty() || tgt.trim().is_empty() {
        return Err(CorpusError::MalformedRecord {
            line: line_no,
            message: "empty or whitespace-only text field".into(),
        });
    }
    let id = match id {
        Some(id) if !id.is_empty() => id,
        Some(_) => {
            return Err(CorpusError::MalformedRecord {
                line: line_no,
                message: "explicit id must be non-empty".into(),
            })
        }
        None => format!("{ordinal:06}"),
    };
    Ok(SentencePair {
        id,
        source_text: src,
        target_text: tgt,
    })
}

/// Load a corpus from disk. Record order is preserved; ids default to the
/// zero-padded record ordinal.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    source_lang: &str,
    target_lang: &str,
) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    let mut seen = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = parse_line(format, &line, line_no, pairs.len())?;
        if seen.insert(pair.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId(pair.id.clone()));
        }
        pairs.push(pair);
    }
    Corpus::new(pairs, source_lang, target_lang)
}

/// Collect per-line problems instead of failing on the first one. Used by
/// `corpus validate`; duplicate-id checks run across the whole file.
pub fn validate_file(path: &Path, format: CorpusFormat) -> Result<Vec<String>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let reader = BufReader::new(file);
    let mut problems = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut ordinal = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(format, &line, line_no, ordinal) {
            Ok(pair) => {
                if let Some(first) = seen.insert(pair.id.clone(), line_no) {
                    problems.push(format!(
                        "line {line_no}: duplicate id {:?} (first seen at line {first})",
                        pair.id
                    ));
                }
            }
            Err(e) => problems.push(e.to_string()),
        }
        ordinal += 1;
    }
    Ok(problems)
}

/// Write a corpus as JSONL with explicit ids, so `load(write(c)) == c`.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let io_err = |e: std::io::Error| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    for pair in corpus.pairs() {
        let record = JsonlRecordOut {
            id: &pair.id,
            src: &pair.source_text,
            tgt: &pair.target_text,
        };
        let line = serde_json::to_string(&record).expect("corpus record serializes");
        writer.write_all(line.as_bytes()).map_err(io_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
    }
    writer.flush().map_err(io_err)
}

/// Draw `n` distinct pairs without replacement. Pure function of
/// (corpus content, n, seed); see [`crate::rng`] for the generator contract.
pub fn sample_random(
    corpus: &Corpus,
    n: usize,
    seed: u64,
) -> Result<Vec<SentencePair>, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: corpus.len(),
        });
    }
    let mut rng = rng::seeded(seed);
    let indices = rng::sample_indices(corpus.len(), n, &mut rng);
    Ok(indices.into_iter().map(|i| corpus.pairs[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn small_corpus(n: usize) -> Corpus {
        let pairs = (0..n)
            .map(|i| SentencePair {
                id: format!("{i:06}"),
                source_text: format!("source {i}"),
                target_text: format!("target {i}"),
            })
            .collect();
        Corpus::new(pairs, "English", "German").unwrap()
    }

    #[test]
    fn jsonl_auto_ids() {
        let f = tmp_file(
            "{\"src\": \"a\", \"tgt\": \"b\"}\n{\"src\": \"c\", \"tgt\": \"d\"}\n{\"src\": \"e\", \"tgt\": \"f\"}\n",
        );
        let corpus = load_corpus(f.path(), CorpusFormat::Jsonl, "en", "de").unwrap();
        assert_eq!(corpus.len(), 3);
        let ids: Vec<_> = corpus.ids().collect();
        assert_eq!(ids, vec!["000000", "000001", "000002"]);
    }

    #[test]
    fn tsv_loads_with_ordinal_ids() {
        let f = tmp_file("hello world\thallo Welt\nsecond line\tzweite Zeile\n");
        let corpus = load_corpus(f.path(), CorpusFormat::Tsv, "en", "de").unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.pairs()[0].id, "000000");
        assert_eq!(corpus.pairs()[1].source_text, "second line");
        assert_eq!(corpus.pairs()[1].target_text, "zweite Zeile");
    }

    #[test]
    fn tsv_empty_target_is_malformed() {
        let f = tmp_file("hello\tWelt\nbroken\t   \n");
        let err = load_corpus(f.path(), CorpusFormat::Tsv, "en", "de").unwrap_err();
        match err {
            CorpusError::MalformedRecord { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedRecord, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_explicit_id() {
        let f = tmp_file(
            "{\"id\": \"a\", \"src\": \"x\", \"tgt\": \"y\"}\n{\"id\": \"a\", \"src\": \"p\", \"tgt\": \"q\"}\n",
        );
        let err = load_corpus(f.path(), CorpusFormat::Jsonl, "en", "de").unwrap_err();
        match err {
            CorpusError::DuplicateId(id) => assert_eq!(id, "a"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_preserves_fields() {
        let corpus = small_corpus(7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &corpus).unwrap();
        let reloaded = load_corpus(&path, CorpusFormat::Jsonl, "English", "German").unwrap();
        assert_eq!(corpus, reloaded);
    }

    #[test]
    fn sample_empty_and_exhaustive() {
        let corpus = small_corpus(5);
        assert!(sample_random(&corpus, 0, 1).unwrap().is_empty());
        let all = sample_random(&corpus, 5, 1).unwrap();
        let mut ids: Vec<_> = all.iter().map(|p| p.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, (0..5).map(|i| format!("{i:06}")).collect::<Vec<_>>());
    }

    #[test]
    fn sample_too_large() {
        let corpus = small_corpus(3);
        assert!(matches!(
            sample_random(&corpus, 4, 0),
            Err(CorpusError::SampleTooLarge { .. })
        ));
    }

    #[test]
    fn sample_seed_determinism() {
        let corpus = small_corpus(100);
        let a = sample_random(&corpus, 10, 42).unwrap();
        let b = sample_random(&corpus, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_random(&corpus, 10, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validator_reports_all_problems() {
        let f = tmp_file(
            "{\"id\": \"a\", \"src\": \"x\", \"tgt\": \"y\"}\nnot json\n{\"id\": \"a\", \"src\": \"p\", \"tgt\": \"q\"}\n{\"src\": \" \", \"tgt\": \"z\"}\n",
        );
        let problems = validate_file(f.path(), CorpusFormat::Jsonl).unwrap();
        assert_eq!(problems.len(), 3);
    }

    #[test]
    fn whitespace_only_fields_rejected() {
        let f = tmp_file("{\"src\": \"  \", \"tgt\": \"b\"}\n");
        assert!(matches!(
            load_corpus(f.path(), CorpusFormat::Jsonl, "en", "de"),
            Err(CorpusError::MalformedRecord { line: 1, .. })
        ));
    }
}
