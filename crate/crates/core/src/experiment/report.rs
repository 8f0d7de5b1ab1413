//! Result tables. Methods sort by mean COMET descending (the primary
//! metric); methods without COMET follow, ordered by corpus BLEU
//! descending. The Markdown report carries a timestamp line and a prompt
//! budget table; the CSV is timestamp-free.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::metrics::MethodReport;

pub struct ReportPaths {
    pub markdown: PathBuf,
    pub csv: PathBuf,
}

/// Logical prompt counts for a run, derived from persisted artifacts so
/// they are stable across resumed reruns: one labeling prompt per tree
/// node, one translation prompt per hypothesis, one rerank prompt per
/// reranked query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub labeling: u64,
    pub translation: u64,
    pub reranking: u64,
    pub pool_size: Option<usize>,
}

impl PromptBudget {
    pub fn total(&self) -> u64 {
        self.labeling + self.translation + self.reranking
    }
}

pub fn sort_reports(reports: &mut [MethodReport]) {
    reports.sort_by(|a, b| match (a.mean_comet, b.mean_comet) {
        (Some(x), Some(y)) => y
            .partial_cmp(&x)
            .expect("scores are finite")
            .then_with(|| a.method.cmp(&b.method)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => b
            .corpus_bleu
            .partial_cmp(&a.corpus_bleu)
            .expect("scores are finite")
            .then_with(|| a.method.cmp(&b.method)),
    });
}

fn fmt_opt(value: Option<f64>, decimals: usize) -> String {
    match value {
        Some(v) => format!("{v:.decimals$}"),
        None => "-".to_string(),
    }
}

pub fn render_markdown(
    reports: &[MethodReport],
    budget: Option<&PromptBudget>,
    generated_at: &str,
) -> String {
    let mut out = String::new();
    out.push_str("# Method comparison\n\n");
    out.push_str(&format!("Generated: {generated_at}\n\n"));
    out.push_str("| Method | BLEU | COMET | CHRF | BERT |\n");
    out.push_str("|---|---:|---:|---:|---:|\n");
    for report in reports {
        out.push_str(&format!(
            "| {} | {:.4} | {} | {:.2} | {} |\n",
            report.method,
            report.corpus_bleu,
            fmt_opt(report.mean_comet, 4),
            report.corpus_chrf,
            fmt_opt(report.mean_bertscore, 4),
        ));
    }
    if let Some(budget) = budget {
        out.push_str("\n## Prompt budget\n\n");
        out.push_str("| Phase | Prompts |\n");
        out.push_str("|---|---:|\n");
        out.push_str(&format!("| labeling | {} |\n", budget.labeling));
        out.push_str(&format!("| translation | {} |\n", budget.translation));
        out.push_str(&format!("| reranking | {} |\n", budget.reranking));
        out.push_str(&format!("| total | {} |\n", budget.total()));
        if let Some(size) = budget.pool_size {
            out.push_str(&format!("\nPool size: {size}\n"));
        }
    }
    out
}

pub fn render_csv(reports: &[MethodReport]) -> String {
    let mut out = String::from("method,bleu,comet,chrf,bert\n");
    for report in reports {
        out.push_str(&format!(
            "{},{:.6},{},{:.4},{}\n",
            report.method,
            report.corpus_bleu,
            report
                .mean_comet
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            report.corpus_chrf,
            report
                .mean_bertscore
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
        ));
    }
    out
}

/// Write `report.md` and `report.csv` under `dir`, sorted by the
/// presentation rule.
pub fn write_report(
    dir: &Path,
    reports: &[MethodReport],
    budget: Option<&PromptBudget>,
) -> Result<ReportPaths, ExperimentError> {
    if reports.is_empty() {
        return Err(ExperimentError::PhaseFailed {
            phase: "report",
            message: "input must contain at least one method report".into(),
        });
    }
    let mut sorted = reports.to_vec();
    sort_reports(&mut sorted);
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let generated_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let markdown = dir.join("report.md");
    std::fs::write(&markdown, render_markdown(&sorted, budget, &generated_at)).map_err(
        |e| ExperimentError::Io {
            path: markdown.display().to_string(),
            source: e,
        },
    )?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, render_csv(&sorted)).map_err(|e| ExperimentError::Io {
        path: csv.display().to_string(),
        source: e,
    })?;
    Ok(ReportPaths { markdown, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: &str, bleu: f64, comet: Option<f64>) -> MethodReport {
        MethodReport {
            method: method.into(),
            corpus_bleu: bleu,
            corpus_chrf: 28.0,
            mean_comet: comet,
            mean_bertscore: None,
            record_count: 10,
            comet_count: comet.map(|_| 10).unwrap_or(0),
            bertscore_count: 0,
        }
    }

    #[test]
    fn sorts_by_comet_then_bleu_fallback() {
        let mut reports = vec![
            report("worse", 0.02, Some(-0.20)),
            report("best", 0.01, Some(-0.14)),
            report("no_comet_low", 0.01, None),
            report("no_comet_high", 0.05, None),
        ];
        sort_reports(&mut reports);
        let order: Vec<&str> = reports.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(order, vec!["best", "worse", "no_comet_high", "no_comet_low"]);
    }

    #[test]
    fn single_method_renders_one_row() {
        let reports = vec![report("only", 0.03, Some(-0.5))];
        let md = render_markdown(&reports, None, "2026-01-01T00:00:00Z");
        let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| only")).collect();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].contains("-0.5000"));
        let csv = render_csv(&reports);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn budget_table_renders_logical_prompt_counts() {
        let reports = vec![report("only", 0.03, None)];
        let budget = PromptBudget {
            labeling: 850,
            translation: 520,
            reranking: 0,
            pool_size: Some(144),
        };
        let md = render_markdown(&reports, Some(&budget), "2026-01-01T00:00:00Z");
        assert!(md.contains("| labeling | 850 |"));
        assert!(md.contains("| total | 1370 |"));
        assert!(md.contains("Pool size: 144"));
    }

    #[test]
    fn empty_reports_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(dir.path(), &[], None).is_err());
    }
}
