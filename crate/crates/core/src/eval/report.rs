//! Text and JSON reports over a finished matrix.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{ExperimentSummary, MemoryVariant, Scenario};
use crate::error::{Error, Result};
use crate::session::Setting;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

/// Rounds to one decimal place.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Difference of the rounded values, so the printed delta always matches the
/// printed cells.
pub fn delta1(value: f64, baseline: f64) -> f64 {
    let d = round1(round1(value) - round1(baseline));
    if d == 0.0 {
        0.0
    } else {
        d
    }
}

pub fn format_cell(value: f64) -> String {
    format!("{:.1}", round1(value))
}

/// `48.2(+7.2)`
pub fn format_with_delta(value: f64, baseline: f64) -> String {
    format!("{}({:+.1})", format_cell(value), delta1(value, baseline))
}

/// Mean accuracies for one cell of a table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triple {
    pub dep: f64,
    pub su: f64,
    pub overall: f64,
}

impl Triple {
    fn of(s: &ExperimentSummary) -> Option<Triple> {
        let a = s.aggregate.as_ref()?;
        Some(Triple {
            dep: a.dep.mean,
            su: a.su.mean,
            overall: a.overall.mean,
        })
    }

    fn cells(self, baseline: Option<Triple>) -> [String; 3] {
        let f = |v: f64, b: Option<f64>| match b {
            Some(b) => format_with_delta(v, b),
            None => format_cell(v),
        };
        [
            f(self.dep, baseline.map(|b| b.dep)),
            f(self.su, baseline.map(|b| b.su)),
            f(self.overall, baseline.map(|b| b.overall)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiments: Vec<ExperimentSummary>,
}

fn find(
    s: &[ExperimentSummary],
    scenario: Scenario,
    setting: Setting,
    memory: MemoryVariant,
    plugin: bool,
) -> Option<&ExperimentSummary> {
    s.iter().find(|e| {
        e.scenario == scenario && e.setting == setting && e.memory == memory && e.plugin == plugin
    })
}

fn setting_label(s: Setting) -> &'static str {
    match s {
        Setting::Quiz => "Quiz (Train)",
        Setting::Exam => "Exam (Test)",
    }
}

fn memory_label(m: MemoryVariant) -> &'static str {
    match m {
        MemoryVariant::None => "w/o",
        MemoryVariant::Emr => "emr",
        MemoryVariant::Skills => "skills",
        MemoryVariant::Both => "w/",
    }
}

fn push_row(out: &mut String, cols: &[String]) {
    let widths = [14, 8, 12, 12, 12, 12, 12, 12];
    let line: Vec<String> = cols
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{c:<w$}", w = widths.get(i).copied().unwrap_or(12)))
        .collect();
    out.push_str(line.join(" ").trim_end());
    out.push('\n');
}

/// Accuracy by setting and memory variant, original and simulated dialogues
/// side by side. Rows with memory carry the change against the no-memory row.
pub fn memory_table(s: &[ExperimentSummary]) -> String {
    let mut out = String::new();
    push_row(&mut out, &[
        "".into(), "".into(),
        "Original".into(), "".into(), "".into(),
        "Simulated".into(),
    ]);
    push_row(&mut out, &[
        "Setting".into(), "Memory".into(),
        "Dep.".into(), "Su.".into(), "Overall".into(),
        "Dep.".into(), "Su.".into(), "Overall".into(),
    ]);
    for setting in [Setting::Quiz, Setting::Exam] {
        for memory in [MemoryVariant::None, MemoryVariant::Emr, MemoryVariant::Skills, MemoryVariant::Both] {
            let mut cols = vec![
                if memory == MemoryVariant::None { setting_label(setting).to_string() } else { String::new() },
                memory_label(memory).to_string(),
            ];
            let mut any = false;
            for scenario in [Scenario::OriginalDialogue, Scenario::SimulatedDialogue] {
                let cell = find(s, scenario, setting, memory, true).and_then(Triple::of);
                let base = if memory == MemoryVariant::None {
                    None
                } else {
                    find(s, scenario, setting, MemoryVariant::None, true).and_then(Triple::of)
                };
                match cell {
                    Some(t) => {
                        any = true;
                        cols.extend(t.cells(base));
                    }
                    None => cols.extend(["-".to_string(), "-".into(), "-".into()]),
                }
            }
            if any {
                push_row(&mut out, &cols);
            }
        }
    }
    out
}

/// Simulated dialogues with both memory layers, with and without the
/// tracking plugin.
pub fn plugin_table(s: &[ExperimentSummary]) -> String {
    let mut out = String::new();
    push_row(&mut out, &[
        "Setting".into(), "Plugin".into(),
        "Dep.".into(), "Su.".into(), "Overall".into(),
    ]);
    for setting in [Setting::Quiz, Setting::Exam] {
        let off = find(s, Scenario::SimulatedDialogue, setting, MemoryVariant::Both, false)
            .and_then(Triple::of);
        let on = find(s, Scenario::SimulatedDialogue, setting, MemoryVariant::Both, true)
            .and_then(Triple::of);
        if let Some(t) = off {
            let mut cols = vec![setting_label(setting).to_string(), "w/o".into()];
            cols.extend(t.cells(None));
            push_row(&mut out, &cols);
        }
        if let Some(t) = on {
            let label = if off.is_some() { String::new() } else { setting_label(setting).to_string() };
            let mut cols = vec![label, "w/".into()];
            cols.extend(t.cells(off));
            push_row(&mut out, &cols);
        }
    }
    out
}

pub fn render_text(s: &[ExperimentSummary]) -> String {
    let mut out = String::new();
    out.push_str("Accuracy by memory variant (percent, mean over seeds)\n\n");
    out.push_str(&memory_table(s));
    out.push_str("\nTracking plugin, simulated dialogues, both memory layers\n\n");
    out.push_str(&plugin_table(s));
    out.push_str("\nExperiments\n\n");
    for e in s {
        match &e.aggregate {
            Some(a) => {
                let _ = write!(
                    out,
                    "{:<28} seeds={} dep={} [{}, {}] su={} [{}, {}] overall={}",
                    e.name,
                    a.seeds,
                    format_cell(a.dep.mean),
                    format_cell(a.dep.min),
                    format_cell(a.dep.max),
                    format_cell(a.su.mean),
                    format_cell(a.su.min),
                    format_cell(a.su.max),
                    format_cell(a.overall.mean),
                );
            }
            None => {
                let _ = write!(out, "{:<28} no completed seeds", e.name);
            }
        }
        let failed_sessions: usize = e.seeds.iter().map(|r| r.failed_sessions.len()).sum();
        let flagged: usize = e.seeds.iter().map(|r| r.repetition_flagged.len()).sum();
        if failed_sessions > 0 {
            let _ = write!(out, " failed_sessions={failed_sessions}");
        }
        if flagged > 0 {
            let _ = write!(out, " repetitive={flagged}");
        }
        for f in &e.failed_seeds {
            let _ = write!(out, "\n    seed {} failed: {}", f.seed, f.error);
        }
        out.push('\n');
    }
    out
}

/// Writes `report.json` and `report.txt` into `dir`.
pub fn emit_report(summaries: &[ExperimentSummary], dir: &Path) -> Result<()> {
    if summaries.is_empty() {
        return Err(Error::EmptyReport);
    }
    let json_path = dir.join(REPORT_JSON);
    let mut json = serde_json::to_string_pretty(&Report {
        experiments: summaries.to_vec(),
    })
    .expect("report serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    let txt_path = dir.join(REPORT_TXT);
    std::fs::write(&txt_path, render_text(summaries)).map_err(|e| Error::io(&txt_path, e))
}

pub fn load_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let p = e.path().to_string();
        Error::schema(format!("{}: {p}", path.display()), e.into_inner().to_string())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_formatting() {
        assert_eq!(format_with_delta(48.2, 41.0), "48.2(+7.2)");
        assert_eq!(format_with_delta(27.0, 28.0), "27.0(-1.0)");
        assert_eq!(format_with_delta(12.04, 12.0), "12.0(+0.0)");
        assert_eq!(format_with_delta(11.96, 12.0), "12.0(+0.0)");
    }

    #[test]
    fn empty_report_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&[], dir.path()), Err(Error::EmptyReport)));
    }
}
