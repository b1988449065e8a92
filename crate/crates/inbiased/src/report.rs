//! Result aggregation: mean ± std tables over multi-seed runs, rendered
//! as markdown documents and CSV files.
//!
//! A [`RunArtifacts`] bundles one run's record with whatever evaluations
//! were performed on its checkpoint. [`report`] groups runs of the same
//! mode (seeds of one configuration), aggregates each requested metric,
//! and emits one or more tables; with a single run per group the std
//! column is omitted, matching how single-run numbers are quoted.

use crate::adversarial::RobustnessRow;
use crate::calib::ReliabilityReport;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::fourier::SeverityRow;
use crate::record::RunRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::str::FromStr;

/// Which table family to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportLayout {
    /// Accuracy on bias-conflicting test data, per group when available.
    Shortcut,
    /// In-distribution accuracy next to accuracy on held-out folders.
    IidOod,
    /// Accuracy under PGD attack per epsilon and under low-pass filtering
    /// per severity.
    Robustness,
    /// Accuracy, mean confidence, and expected calibration error.
    Calibration,
}

impl FromStr for ReportLayout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shortcut" => Ok(ReportLayout::Shortcut),
            "iid_ood" => Ok(ReportLayout::IidOod),
            "robustness" => Ok(ReportLayout::Robustness),
            "calibration" => Ok(ReportLayout::Calibration),
            other => Err(Error::Config(format!(
                "unknown report layout `{other}` (expected shortcut, iid_ood, robustness, or calibration)"
            ))),
        }
    }
}

/// Everything recorded about one finished run: the training record plus
/// optional evaluation outputs, as persisted in the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub record: RunRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robustness: Option<Vec<RobustnessRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fourier: Option<Vec<SeverityRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<ReliabilityReport>,
    /// Accuracy on additional folders, keyed by a caller-chosen name
    /// (for example `stylized` or an out-of-distribution split).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub folder_evals: BTreeMap<String, EvalReport>,
}

impl RunArtifacts {
    pub fn new(record: RunRecord) -> Self {
        Self {
            record,
            eval: None,
            robustness: None,
            fourier: None,
            calibration: None,
            folder_evals: BTreeMap::new(),
        }
    }
}

/// One aggregated value: mean over seeds, sample standard deviation when
/// more than one seed contributed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub n: usize,
}

impl ReportCell {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            Some(var.sqrt())
        } else {
            None
        };
        Some(Self { mean, std, n })
    }

    fn render(&self) -> String {
        match self.std {
            Some(std) => format!("{:.2} ± {:.2}", self.mean, std),
            None => format!("{:.2}", self.mean),
        }
    }
}

/// A rendered table: one row per mode, one column per metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    /// Header for the row-label column.
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub cells: Vec<Option<ReportCell>>,
}

impl ReportTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("### {}\n\n", self.title);
        out.push_str(&format!("| {} |", self.row_header));
        for c in &self.columns {
            out.push_str(&format!(" {c} |"));
        }
        out.push('\n');
        out.push_str(&"| --- ".repeat(self.columns.len() + 1));
        out.push_str("|\n");
        for row in &self.rows {
            out.push_str(&format!("| {} |", row.label));
            for cell in &row.cells {
                match cell {
                    Some(c) => out.push_str(&format!(" {} |", c.render())),
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// CSV with explicit mean/std/n columns so the numbers stay
    /// machine-readable at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_escape(&self.row_header));
        for c in &self.columns {
            out.push_str(&format!(
                ",{},{},{}",
                csv_escape(&format!("{c} mean")),
                csv_escape(&format!("{c} std")),
                csv_escape(&format!("{c} n"))
            ));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_escape(&row.label));
            for cell in &row.cells {
                match cell {
                    Some(c) => out.push_str(&format!(
                        ",{},{},{}",
                        c.mean,
                        c.std.map(|s| s.to_string()).unwrap_or_default(),
                        c.n
                    )),
                    None => out.push_str(",,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Groups runs by mode, preserving first-appearance order.
fn group_by_mode(runs: &[RunArtifacts]) -> Vec<(String, Vec<&RunArtifacts>)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&RunArtifacts>> = BTreeMap::new();
    for run in runs {
        let mode = run.record.mode.clone();
        if !groups.contains_key(&mode) {
            order.push(mode.clone());
        }
        groups.entry(mode).or_default().push(run);
    }
    order
        .into_iter()
        .map(|m| {
            let g = groups.remove(&m).unwrap();
            (m, g)
        })
        .collect()
}

fn cell_over<'a>(
    group: &[&'a RunArtifacts],
    value: impl Fn(&'a RunArtifacts) -> Option<f64>,
) -> Option<ReportCell> {
    let samples: Vec<f64> = group.iter().filter_map(|r| value(r)).collect();
    ReportCell::from_samples(&samples)
}

/// Builds the tables for one layout over a set of runs. Runs sharing a
/// mode are treated as seeds of one configuration and aggregated.
pub fn report(layout: ReportLayout, runs: &[RunArtifacts]) -> Result<Vec<ReportTable>> {
    if runs.is_empty() {
        return Err(Error::Config("report: no runs given".into()));
    }
    let groups = group_by_mode(runs);
    let tables = match layout {
        ReportLayout::Shortcut => vec![shortcut_table(&groups)],
        ReportLayout::IidOod => vec![iid_ood_table(&groups)],
        ReportLayout::Robustness => {
            let mut t = Vec::new();
            if let Some(table) = robustness_table(&groups) {
                t.push(table);
            }
            if let Some(table) = fourier_table(&groups) {
                t.push(table);
            }
            if t.is_empty() {
                return Err(Error::Config(
                    "report: no robustness or low-pass evaluations among the given runs".into(),
                ));
            }
            t
        }
        ReportLayout::Calibration => vec![calibration_table(&groups)],
    };
    Ok(tables)
}

fn shortcut_table(groups: &[(String, Vec<&RunArtifacts>)]) -> ReportTable {
    // Column set: overall accuracy plus every group name seen.
    let mut group_cols: Vec<String> = Vec::new();
    for (_, g) in groups {
        for run in g {
            if let Some(eval) = &run.eval {
                if let Some(map) = &eval.groups {
                    for name in map.keys() {
                        if !group_cols.contains(name) {
                            group_cols.push(name.clone());
                        }
                    }
                }
            }
        }
    }
    group_cols.sort();
    let mut columns = vec!["accuracy %".to_string()];
    columns.extend(group_cols.iter().map(|g| format!("{g} %")));

    let rows = groups
        .iter()
        .map(|(mode, g)| {
            let mut cells = vec![cell_over(g, |r| r.eval.as_ref().map(|e| e.accuracy * 100.0))];
            for name in &group_cols {
                cells.push(cell_over(g, |r| {
                    r.eval
                        .as_ref()
                        .and_then(|e| e.groups.as_ref())
                        .and_then(|m| m.get(name))
                        .map(|ga| ga.accuracy * 100.0)
                }));
            }
            ReportRow {
                label: mode.clone(),
                cells,
            }
        })
        .collect();
    ReportTable {
        title: "Accuracy on the bias-conflicting test split".into(),
        row_header: "mode".into(),
        columns,
        rows,
    }
}

fn iid_ood_table(groups: &[(String, Vec<&RunArtifacts>)]) -> ReportTable {
    let mut folder_cols: Vec<String> = Vec::new();
    for (_, g) in groups {
        for run in g {
            for name in run.folder_evals.keys() {
                if !folder_cols.contains(name) {
                    folder_cols.push(name.clone());
                }
            }
        }
    }
    folder_cols.sort();
    let mut columns = vec!["test %".to_string()];
    columns.extend(folder_cols.iter().map(|c| format!("{c} %")));
    let rows = groups
        .iter()
        .map(|(mode, g)| {
            let mut cells = vec![cell_over(g, |r| r.eval.as_ref().map(|e| e.accuracy * 100.0))];
            for name in &folder_cols {
                cells.push(cell_over(g, |r| {
                    r.folder_evals.get(name).map(|e| e.accuracy * 100.0)
                }));
            }
            ReportRow {
                label: mode.clone(),
                cells,
            }
        })
        .collect();
    ReportTable {
        title: "In-distribution and held-out-folder accuracy".into(),
        row_header: "mode".into(),
        columns,
        rows,
    }
}

fn robustness_table(groups: &[(String, Vec<&RunArtifacts>)]) -> Option<ReportTable> {
    let mut epsilons: Vec<f64> = Vec::new();
    for (_, g) in groups {
        for run in g {
            if let Some(rows) = &run.robustness {
                for row in rows {
                    if !epsilons.iter().any(|&e| (e - row.epsilon).abs() < 1e-9) {
                        epsilons.push(row.epsilon);
                    }
                }
            }
        }
    }
    if epsilons.is_empty() {
        return None;
    }
    epsilons.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let columns: Vec<String> = epsilons.iter().map(|e| format!("eps {e}/255 %")).collect();
    let rows = groups
        .iter()
        .map(|(mode, g)| ReportRow {
            label: mode.clone(),
            cells: epsilons
                .iter()
                .map(|&eps| {
                    cell_over(g, |r| {
                        r.robustness.as_ref().and_then(|rows| {
                            rows.iter()
                                .find(|row| (row.epsilon - eps).abs() < 1e-9)
                                .map(|row| row.accuracy * 100.0)
                        })
                    })
                })
                .collect(),
        })
        .collect();
    Some(ReportTable {
        title: "Accuracy under PGD attack".into(),
        row_header: "mode".into(),
        columns,
        rows,
    })
}

fn fourier_table(groups: &[(String, Vec<&RunArtifacts>)]) -> Option<ReportTable> {
    let mut severities: Vec<u32> = Vec::new();
    for (_, g) in groups {
        for run in g {
            if let Some(rows) = &run.fourier {
                for row in rows {
                    if !severities.contains(&row.severity) {
                        severities.push(row.severity);
                    }
                }
            }
        }
    }
    if severities.is_empty() {
        return None;
    }
    severities.sort_unstable();
    let columns: Vec<String> = severities.iter().map(|s| format!("severity {s} %")).collect();
    let rows = groups
        .iter()
        .map(|(mode, g)| ReportRow {
            label: mode.clone(),
            cells: severities
                .iter()
                .map(|&sev| {
                    cell_over(g, |r| {
                        r.fourier.as_ref().and_then(|rows| {
                            rows.iter()
                                .find(|row| row.severity == sev)
                                .map(|row| row.accuracy * 100.0)
                        })
                    })
                })
                .collect(),
        })
        .collect();
    Some(ReportTable {
        title: "Accuracy under low-pass filtering".into(),
        row_header: "mode".into(),
        columns,
        rows,
    })
}

fn calibration_table(groups: &[(String, Vec<&RunArtifacts>)]) -> ReportTable {
    let columns = vec![
        "accuracy %".to_string(),
        "confidence %".to_string(),
        "ece".to_string(),
    ];
    let rows = groups
        .iter()
        .map(|(mode, g)| ReportRow {
            label: mode.clone(),
            cells: vec![
                cell_over(g, |r| r.calibration.as_ref().map(|c| c.accuracy * 100.0)),
                cell_over(g, |r| {
                    r.calibration.as_ref().map(|c| c.mean_confidence * 100.0)
                }),
                cell_over(g, |r| r.calibration.as_ref().map(|c| c.ece)),
            ],
        })
        .collect();
    ReportTable {
        title: "Calibration".into(),
        row_header: "mode".into(),
        columns,
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::RunRecord;

    fn run_with_accuracy(mode: &str, seed: u64, accuracy: f64) -> RunArtifacts {
        let record = RunRecord::new(mode, "hash".into(), "ds".into(), "mlp".into(), seed);
        let mut run = RunArtifacts::new(record);
        run.eval = Some(EvalReport {
            correct: (accuracy * 100.0).round() as usize,
            total: 100,
            accuracy,
            groups: None,
        });
        run
    }

    #[test]
    fn three_seeds_aggregate_to_mean_and_sample_std() {
        let runs = vec![
            run_with_accuracy("inbiased", 0, 0.40),
            run_with_accuracy("inbiased", 1, 0.43),
            run_with_accuracy("inbiased", 2, 0.46),
            run_with_accuracy("baseline_rgb", 0, 0.10),
        ];
        let tables = report(ReportLayout::Shortcut, &runs).unwrap();
        assert_eq!(tables.len(), 1);
        let t = &tables[0];
        assert_eq!(t.rows.len(), 2);
        let cell = t.rows[0].cells[0].unwrap();
        assert!((cell.mean - 43.0).abs() < 1e-9);
        assert!((cell.std.unwrap() - 3.0).abs() < 1e-9, "sample std of 40/43/46");
        assert_eq!(cell.n, 3);
        assert!(t.to_markdown().contains("43.00 ± 3.00"), "{}", t.to_markdown());

        // The single-seed row has no std.
        let single = t.rows[1].cells[0].unwrap();
        assert_eq!(single.std, None);
        assert!(t.to_markdown().contains("| baseline_rgb | 10.00 |"));
    }

    #[test]
    fn robustness_layout_collects_both_tables() {
        let mut run = run_with_accuracy("inbiased", 0, 0.9);
        run.robustness = Some(vec![
            RobustnessRow {
                epsilon: 0.0,
                steps: 10,
                accuracy: 0.9,
            },
            RobustnessRow {
                epsilon: 8.0,
                steps: 10,
                accuracy: 0.2,
            },
        ]);
        run.fourier = Some(vec![
            SeverityRow {
                severity: 0,
                accuracy: 0.9,
            },
            SeverityRow {
                severity: 4,
                accuracy: 0.1,
            },
        ]);
        let tables = report(ReportLayout::Robustness, &[run]).unwrap();
        assert_eq!(tables.len(), 2);
        assert_eq!(tables[0].columns, vec!["eps 0/255 %", "eps 8/255 %"]);
        assert_eq!(tables[1].columns, vec!["severity 0 %", "severity 4 %"]);
        assert!((tables[0].rows[0].cells[1].unwrap().mean - 20.0).abs() < 1e-9);
    }

    #[test]
    fn missing_artifacts_render_as_blanks() {
        let with = run_with_accuracy("inbiased", 0, 0.5);
        let without = RunArtifacts::new(RunRecord::new(
            "baseline_rgb",
            "hash".into(),
            "ds".into(),
            "mlp".into(),
            0,
        ));
        let tables = report(ReportLayout::Shortcut, &[with, without]).unwrap();
        let t = &tables[0];
        assert!(t.rows[1].cells[0].is_none());
        assert!(t.to_markdown().contains("| baseline_rgb | - |"));
        let csv = t.to_csv();
        assert!(csv.lines().nth(2).unwrap().starts_with("baseline_rgb,,,"));
    }

    #[test]
    fn calibration_layout_reports_raw_ece() {
        let mut run = run_with_accuracy("inbiased", 0, 0.5);
        run.calibration = Some(crate::calib::ReliabilityReport {
            bins: vec![],
            ece: 0.35,
            total: 2,
            accuracy: 0.5,
            mean_confidence: 0.75,
        });
        let tables = report(ReportLayout::Calibration, &[run]).unwrap();
        let row = &tables[0].rows[0];
        assert!((row.cells[2].unwrap().mean - 0.35).abs() < 1e-12);
        assert!((row.cells[1].unwrap().mean - 75.0).abs() < 1e-9);
    }

    #[test]
    fn empty_run_set_is_rejected_and_layouts_parse() {
        assert!(report(ReportLayout::Shortcut, &[]).is_err());
        assert_eq!(
            ReportLayout::from_str("iid_ood").unwrap(),
            ReportLayout::IidOod
        );
        assert!(ReportLayout::from_str("surprise").is_err());
    }
}
