use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Evaluation, ExperimentConfig, F1Over, MemoryFile};
use crate::error::{Error, Result};
use crate::matcher::{TrainOutcome, Variant};
use crate::openworld::{Decision, Memory, Thresholds};

pub const REPORT_FORMAT: &str = "pmnet-report-v1";
pub const REJECT_LABEL: &str = "<reject>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    /// `matrix[gold][predicted]`
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_secs: f64,
    pub fit_secs: f64,
    pub eval_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    /// Row label in the style `PM-Net 2-K=15`.
    pub model: String,
    pub split: String,
    pub seed: u64,
    /// Rejection is counted as a class in macro-F1 iff this is `seen+reject`.
    pub f1_over: F1Over,
    pub macro_f1: f64,
    pub per_class: Vec<ClassRow>,
    pub confusion: Confusion,
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub test_instances: usize,
    pub gold_rejects: usize,
    pub predicted_rejects: usize,
    pub epoch_losses: Vec<f64>,
    pub initial_loss: Option<f64>,
    pub thresholds: Thresholds,
    pub memory: Memory,
    pub config: ExperimentConfig,
    pub timings: Timings,
}

impl Report {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cfg: &ExperimentConfig,
        seed: u64,
        variant: Variant,
        split: String,
        unseen_classes: Vec<String>,
        mem: &MemoryFile,
        eval: &Evaluation,
        outcome: Option<&TrainOutcome>,
        timings: Timings,
    ) -> Self {
        let labels: Vec<String> = mem
            .class_names
            .iter()
            .cloned()
            .chain([REJECT_LABEL.to_owned()])
            .collect();
        let per_class = labels
            .iter()
            .zip(&eval.table.per_class)
            .map(|(name, s)| ClassRow {
                class: name.clone(),
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                support: s.support,
            })
            .collect();
        let count_rejects = |v: &[Decision]| v.iter().filter(|d| **d == Decision::Reject).count();
        Self {
            format: REPORT_FORMAT.into(),
            model: format!("{}-K={}", variant.display_name(), mem.memory.k),
            split,
            seed,
            f1_over: eval.table.averaged_over,
            macro_f1: eval.table.macro_f1,
            per_class,
            confusion: Confusion {
                labels,
                matrix: eval.table.confusion.clone(),
            },
            seen_classes: mem.class_names.clone(),
            unseen_classes,
            test_instances: eval.gold.len(),
            gold_rejects: count_rejects(&eval.gold),
            predicted_rejects: count_rejects(&eval.predicted),
            epoch_losses: outcome.map(|o| o.epoch_losses.clone()).unwrap_or_default(),
            initial_loss: outcome.map(|o| o.initial_loss),
            thresholds: mem.thresholds.clone(),
            memory: mem.memory.clone(),
            config: ExperimentConfig {
                seed,
                ..cfg.clone()
            },
            timings,
        }
    }

    /// The report with timing fields zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Report {
        Report {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One row per report, macro-F1 as a percentage with two decimals.
pub fn render_table(reports: &[Report]) -> String {
    let header = ["Model", "Seen:Unseen", "Seed", "Macro-F1(%)"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.model.clone(),
                r.split.clone(),
                r.seed.to_string(),
                format!("{:.2}", 100.0 * r.macro_f1),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 4]| {
        let _ = writeln!(
            out,
            "{:<w0$} | {:<w1$} | {:>w2$} | {:>w3$}",
            cells[0],
            cells[1],
            cells[2],
            cells[3],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3]
        );
    };
    line(&mut out, header);
    let _ = writeln!(
        out,
        "{}",
        widths
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("-|-")
    );
    for row in &rows {
        line(&mut out, [&row[0], &row[1], &row[2], &row[3]]);
    }
    out
}

/// Writes the JSON report to `path` and the plain-text table next to it
/// (same path, `.txt` extension).
pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))?;
    let table_path = path.with_extension("txt");
    fs::write(&table_path, render_table(std::slice::from_ref(report)))
        .map_err(|e| Error::io(&table_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{macro_f1, MEMORY_FORMAT};
    use crate::openworld::{ClassProbabilities, Thresholds};
    use crate::text_data::{Instance, TokenizeMode};

    fn sample_report() -> Report {
        let gold = vec![Decision::Seen(0), Decision::Seen(1), Decision::Reject];
        let predicted = vec![Decision::Seen(0), Decision::Reject, Decision::Reject];
        let table = macro_f1(&predicted, &gold, 2, F1Over::SeenAndReject).unwrap();
        let eval = Evaluation {
            gold,
            predicted,
            probabilities: vec![ClassProbabilities(vec![0.9, 0.1]); 3],
            table,
        };
        let mem = MemoryFile {
            format: MEMORY_FORMAT.into(),
            class_names: vec!["a".into(), "b".into()],
            tokenize: TokenizeMode::Lowercase,
            memory: Memory {
                k: 1,
                classes: vec![
                    vec![Instance::new(vec![2, 0], Some(0))],
                    vec![Instance::new(vec![3, 0], Some(1))],
                ],
            },
            thresholds: Thresholds::scalar(0.6),
        };
        let outcome = TrainOutcome {
            epoch_losses: vec![0.6, 0.3],
            initial_loss: 0.69,
        };
        Report::new(
            &ExperimentConfig::default(),
            7,
            Variant::Pm2,
            "2:1".into(),
            vec!["c".into()],
            &mem,
            &eval,
            Some(&outcome),
            Timings::default(),
        )
    }

    #[test]
    fn macro_f1_matches_its_own_column() {
        let r = sample_report();
        let mean = r.per_class.iter().map(|c| c.f1).sum::<f64>() / r.per_class.len() as f64;
        assert!((r.macro_f1 - mean).abs() < 1e-15);
        assert_eq!(r.model, "PM-Net 2-K=1");
        assert_eq!(r.per_class.last().unwrap().class, REJECT_LABEL);
    }

    #[test]
    fn json_round_trip() {
        let r = sample_report();
        assert_eq!(Report::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn table_prints_percent_with_two_decimals() {
        let r = sample_report();
        let table = render_table(std::slice::from_ref(&r));
        assert!(
            table.contains(&format!("{:.2}", r.macro_f1 * 100.0)),
            "{table}"
        );
        assert!(table.contains("PM-Net 2-K=1"));
    }

    #[test]
    fn missing_directory_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope").join("r.json");
        let err = emit_report(&sample_report(), &path).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn emits_json_and_table() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&sample_report(), &path).unwrap();
        assert!(dir.path().join("r.txt").exists());
        let back = Report::from_json(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back, sample_report());
    }
}
