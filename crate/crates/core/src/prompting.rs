//! Byte-exact prompt rendering for labeling, few-shot translation, and
//! reranking.
//!
//! Templates are plain text with `{name}` placeholders. The built-in set
//! ships under `templates/` and can be overridden from a directory holding
//! `labeling.txt`, `translation.txt`, and `rerank.txt`. Rendering is strict:
//! every `{name}` in a template must be bound, a stray `{` is an error, and
//! line endings are normalized to `\n` with no trailing newline so outputs
//! have one canonical byte form.

use std::path::Path;

use thiserror::Error;

use crate::corpus::SentencePair;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("field {0} must be non-empty")]
    EmptyField(&'static str),
    #[error("template references unbound placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("template has an unterminated placeholder near {0:?}")]
    UnterminatedPlaceholder(String),
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

const LABELING: &str = include_str!("../templates/labeling.txt");
const TRANSLATION: &str = include_str!("../templates/translation.txt");
const RERANK: &str = include_str!("../templates/rerank.txt");

/// Zero-shot keeps only the translation template's closing instruction; the
/// demo preamble would be nonsense with no examples to point at.
const ZERO_SHOT: &str = "Please provide only the translation result without any additional comments, formatting, or chat content. Translate the text from {src_lang} to {tgt_lang}.\n\n{query}";

fn normalize(text: &str) -> String {
    text.replace("\r\n", "\n").trim_end_matches('\n').to_string()
}

fn render(template: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let end = after.find('}').ok_or_else(|| {
            PromptError::UnterminatedPlaceholder(after.chars().take(24).collect())
        })?;
        let name = &after[..end];
        let value = bindings
            .iter()
            .find(|(key, _)| *key == name)
            .map(|(_, value)| *value)
            .ok_or_else(|| PromptError::UnboundPlaceholder(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn non_empty<'a>(value: &'a str, field: &'static str) -> Result<&'a str, PromptError> {
    if value.trim().is_empty() {
        Err(PromptError::EmptyField(field))
    } else {
        Ok(value)
    }
}

/// The three templates used by a run.
#[derive(Debug, Clone)]
pub struct PromptSet {
    labeling: String,
    translation: String,
    rerank: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::builtin()
    }
}

impl PromptSet {
    /// The templates shipped with the crate.
    pub fn builtin() -> PromptSet {
        PromptSet {
            labeling: normalize(LABELING),
            translation: normalize(TRANSLATION),
            rerank: normalize(RERANK),
        }
    }

    /// Load overrides from a directory containing `labeling.txt`,
    /// `translation.txt`, and `rerank.txt`.
    pub fn from_dir(dir: &Path) -> Result<PromptSet, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            let path = dir.join(name);
            std::fs::read_to_string(&path)
                .map(|s| normalize(&s))
                .map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })
        };
        Ok(PromptSet {
            labeling: read("labeling.txt")?,
            translation: read("translation.txt")?,
            rerank: read("rerank.txt")?,
        })
    }

    /// Render the example-scoring prompt: the SRT block holds one quoted
    /// source sentence per line.
    pub fn render_label_prompt(
        &self,
        example: &SentencePair,
        srt: &[SentencePair],
        src_lang: &str,
        tgt_lang: &str,
    ) -> Result<String, PromptError> {
        if srt.is_empty() {
            return Err(PromptError::EmptyField("srt"));
        }
        for sentence in srt {
            non_empty(&sentence.source_text, "srt.source_text")?;
        }
        let srt_block = srt
            .iter()
            .map(|s| format!("\"{}\"", s.source_text))
            .collect::<Vec<_>>()
            .join("\n");
        render(
            &self.labeling,
            &[
                ("src_lang", non_empty(src_lang, "src_lang")?),
                ("tgt_lang", non_empty(tgt_lang, "tgt_lang")?),
                ("SRT", &srt_block),
                ("ST", non_empty(&example.source_text, "example.source_text")?),
                ("TT", non_empty(&example.target_text, "example.target_text")?),
            ],
        )
    }

    /// Render the few-shot translation prompt; an empty demo list degrades
    /// to the zero-shot form.
    pub fn render_translation_prompt(
        &self,
        demos: &[SentencePair],
        query: &SentencePair,
        src_lang: &str,
        tgt_lang: &str,
    ) -> Result<String, PromptError> {
        let src_lang = non_empty(src_lang, "src_lang")?;
        let tgt_lang = non_empty(tgt_lang, "tgt_lang")?;
        let query_text = non_empty(&query.source_text, "query.source_text")?;
        if demos.is_empty() {
            return render(
                ZERO_SHOT,
                &[
                    ("src_lang", src_lang),
                    ("tgt_lang", tgt_lang),
                    ("query", query_text),
                ],
            );
        }
        let mut demo_lines = Vec::with_capacity(demos.len());
        for (i, demo) in demos.iter().enumerate() {
            non_empty(&demo.source_text, "demo.source_text")?;
            non_empty(&demo.target_text, "demo.target_text")?;
            demo_lines.push(format!(
                "{}. {src_lang} text: {}\n{tgt_lang} translation: {}",
                i + 1,
                demo.source_text,
                demo.target_text,
            ));
        }
        render(
            &self.translation,
            &[
                ("src_lang", src_lang),
                ("tgt_lang", tgt_lang),
                ("demos", &demo_lines.join("\n")),
                ("query", query_text),
            ],
        )
    }

    /// Render the rerank prompt: numbered candidates plus an instruction to
    /// reply with a comma-separated index ordering, best first.
    pub fn render_rerank_prompt(
        &self,
        query: &SentencePair,
        candidates: &[SentencePair],
        src_lang: &str,
        tgt_lang: &str,
    ) -> Result<String, PromptError> {
        if candidates.is_empty() {
            return Err(PromptError::EmptyField("candidates"));
        }
        let src_lang = non_empty(src_lang, "src_lang")?;
        let tgt_lang = non_empty(tgt_lang, "tgt_lang")?;
        let mut lines = Vec::with_capacity(candidates.len());
        for (i, candidate) in candidates.iter().enumerate() {
            non_empty(&candidate.source_text, "candidate.source_text")?;
            non_empty(&candidate.target_text, "candidate.target_text")?;
            lines.push(format!(
                "{}. {src_lang}: \"{}\" / {tgt_lang}: \"{}\"",
                i + 1,
                candidate.source_text,
                candidate.target_text,
            ));
        }
        render(
            &self.rerank,
            &[
                ("src_lang", src_lang),
                ("tgt_lang", tgt_lang),
                ("query", non_empty(&query.source_text, "query.source_text")?),
                ("demos", &lines.join("\n")),
            ],
        )
    }
}
