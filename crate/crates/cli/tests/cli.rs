//! End-to-end checks of the `treeprompt` binary.

use std::path::Path;
use std::process::Command;

fn treeprompt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_treeprompt"))
}

fn write_corpus(path: &Path, prefix: &str, n: usize) {
    let lines: Vec<String> = (0..n)
        .map(|i| {
            format!(
                "{{\"id\": \"{prefix}{i:04}\", \"src\": \"{prefix} source {i}\", \"tgt\": \"{prefix} target {i}\"}}"
            )
        })
        .collect();
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn corpus_validate_accepts_good_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("good.jsonl");
    write_corpus(&path, "x", 4);
    let output = treeprompt()
        .args(["corpus", "validate"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{output:?}");
    assert!(String::from_utf8_lossy(&output.stdout).contains("ok:"));
}

#[test]
fn corpus_validate_reports_first_ten_problems() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut lines: Vec<String> = (0..12).map(|_| "not json".to_string()).collect();
    lines.push("{\"src\": \"ok\", \"tgt\": \"ok\"}".to_string());
    std::fs::write(&path, lines.join("\n")).unwrap();
    let output = treeprompt()
        .args(["corpus", "validate"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains("malformed")).count(), 10);
    assert!(stdout.contains("and 2 more"));
}

#[test]
fn run_and_report_from_config() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(&dir.path().join("source.jsonl"), "s", 12);
    write_corpus(&dir.path().join("test.jsonl"), "t", 4);
    let config = r#"
[corpus]
prompt_source = "source.jsonl"
testset = "test.jsonl"
source_lang = "English"
target_lang = "German"

[embedding]

[llm]
backend = "mock"
model = "offline"

[selection]
methods = ["zero_shot", "random"]
k = 2

[output]
dir = "runs"
"#;
    let config_path = dir.path().join("run.toml");
    std::fs::write(&config_path, config).unwrap();

    let output = treeprompt()
        .args(["run", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("evaluate: done"), "{stdout}");
    assert!(stdout.contains("run dir:"));

    // The standalone report command rebuilds from persisted results.
    let output = treeprompt()
        .args(["report", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("report.md"));
}

#[test]
fn standalone_evaluate_writes_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let hyps = dir.path().join("hyps.jsonl");
    let refs = dir.path().join("refs.jsonl");
    std::fs::write(
        &hyps,
        "{\"query_id\": \"a\", \"text\": \"the cat sat\"}\n{\"query_id\": \"b\", \"text\": \"hello world\"}\n",
    )
    .unwrap();
    std::fs::write(
        &refs,
        "{\"query_id\": \"a\", \"text\": \"the cat sat down\"}\n{\"query_id\": \"b\", \"text\": \"hello world\"}\n",
    )
    .unwrap();
    let comet = dir.path().join("comet.jsonl");
    std::fs::write(&comet, "{\"query_id\": \"a\", \"score\": -0.25}\n").unwrap();
    let out = dir.path().join("report.json");
    let output = treeprompt()
        .args(["evaluate", "--hyps"])
        .arg(&hyps)
        .arg("--refs")
        .arg(&refs)
        .arg("--external")
        .arg(format!("comet={}", comet.display()))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["record_count"], 2);
    assert_eq!(report["comet_count"], 1);
    assert_eq!(report["mean_comet"], -0.25);
}

#[test]
fn validate_rejects_broken_config() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("broken.toml");
    std::fs::write(&config_path, "[corpus]\n").unwrap();
    let output = treeprompt()
        .args(["validate", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("error:"));
}
