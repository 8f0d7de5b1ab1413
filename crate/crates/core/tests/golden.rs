//! Golden-file checks: rendered prompts must match the frozen fixtures
//! byte for byte.

use std::path::PathBuf;

use treeprompt_core::corpus::SentencePair;
use treeprompt_core::prompting::PromptSet;

fn golden(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("missing golden file {}: {e}", path.display()))
}

fn pair(id: &str, src: &str, tgt: &str) -> SentencePair {
    SentencePair {
        id: id.into(),
        source_text: src.into(),
        target_text: tgt.into(),
    }
}

fn srt() -> Vec<SentencePair> {
    vec![
        pair("t0", "The committee will meet on Thursday.", "-"),
        pair("t1", "Prices rose sharply last winter.", "-"),
        pair("t2", "She closed the window before the storm.", "-"),
    ]
}

fn example() -> SentencePair {
    pair(
        "e0",
        "The weather is nice today.",
        "Das Wetter ist heute schön.",
    )
}

fn demos() -> Vec<SentencePair> {
    vec![
        pair(
            "d0",
            "The house stood at the edge of the forest.",
            "Das Haus stand am Rand des Waldes.",
        ),
        pair("d1", "He poured the tea slowly.", "Er goss den Tee langsam ein."),
        pair("d2", "The train was late again.", "Der Zug hatte wieder Verspätung."),
        pair(
            "d3",
            "Children played in the narrow street.",
            "Kinder spielten in der engen Gasse.",
        ),
        pair(
            "d4",
            "The letter arrived on a rainy morning.",
            "Der Brief kam an einem regnerischen Morgen an.",
        ),
    ]
}

fn query() -> SentencePair {
    pair("q0", "The old bridge creaked under their feet.", "-")
}

#[test]
fn labeling_prompt_single_sentence_srt() {
    let rendered = PromptSet::builtin()
        .render_label_prompt(&example(), &srt()[..1], "English", "German")
        .unwrap();
    assert_eq!(rendered, golden("labeling_srt1.txt"));
}

#[test]
fn labeling_prompt_three_sentence_srt() {
    let rendered = PromptSet::builtin()
        .render_label_prompt(&example(), &srt(), "English", "German")
        .unwrap();
    assert_eq!(rendered, golden("labeling_srt3.txt"));
}

#[test]
fn translation_prompt_five_shot() {
    let rendered = PromptSet::builtin()
        .render_translation_prompt(&demos(), &query(), "English", "German")
        .unwrap();
    assert_eq!(rendered, golden("translation_k5.txt"));
}

#[test]
fn translation_prompt_zero_shot() {
    let rendered = PromptSet::builtin()
        .render_translation_prompt(&[], &query(), "English", "German")
        .unwrap();
    assert_eq!(rendered, golden("translation_k0.txt"));
}

#[test]
fn rerank_prompt_five_candidates() {
    let rendered = PromptSet::builtin()
        .render_rerank_prompt(&query(), &demos(), "English", "German")
        .unwrap();
    assert_eq!(rendered, golden("rerank_5.txt"));
}
