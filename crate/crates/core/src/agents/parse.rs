//! Tolerant parsing of the labelled response formats the prompt templates
//! request (`LABEL: value` lines, optionally followed by bullet lines).

use std::collections::BTreeMap;

use tracing::warn;

use crate::domain::{DiagnosisResult, Ontology, RiskLevel, SymptomId, SymptomStatus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub key: &'static str,
    pub value: String,
    pub lines: Vec<String>,
}

impl Section {
    /// Inline value plus continuation lines, joined with newlines.
    pub fn full_text(&self) -> String {
        let mut parts = Vec::new();
        if !self.value.is_empty() {
            parts.push(self.value.as_str());
        }
        parts.extend(self.lines.iter().map(String::as_str));
        parts.join("\n").trim().to_string()
    }
}

fn normalise_key(raw: &str) -> String {
    raw.chars()
        .filter(|c| *c != '*' && *c != '`')
        .map(|c| if c == '_' || c == '-' { ' ' } else { c.to_ascii_lowercase() })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn strip_bullet(line: &str) -> &str {
    line.trim()
        .trim_start_matches(['-', '*', '#', '•'])
        .trim()
}

/// Splits `text` into sections headed by one of `keys` (matched after
/// normalisation, so `DEPRESSION_RISK`, `**Depression risk**` and
/// `depression-risk` are all the same key). Text before the first key is
/// dropped.
pub fn sections(text: &str, keys: &[&'static str]) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    for line in text.lines() {
        let stripped = strip_bullet(line);
        let header = stripped.split_once(':').and_then(|(k, v)| {
            let nk = normalise_key(k);
            keys.iter().find(|key| **key == nk).map(|key| (*key, v.trim()))
        });
        match header {
            Some((key, value)) => out.push(Section {
                key,
                value: value.trim_matches('*').trim().to_string(),
                lines: Vec::new(),
            }),
            None => {
                if let Some(cur) = out.last_mut() {
                    if !stripped.is_empty() {
                        cur.lines.push(stripped.to_string());
                    }
                }
            }
        }
    }
    out
}

pub fn find<'a>(sections: &'a [Section], key: &str) -> Option<&'a Section> {
    sections.iter().find(|s| s.key == key)
}

/// First word of `value` read as a risk level.
pub fn parse_risk(value: &str) -> Option<RiskLevel> {
    value
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .and_then(|w| w.parse().ok())
}

/// Parses `id=status` / `id: status` pairs separated by `;`, `,` or new
/// lines. Ids outside the ontology are dropped with a warning.
pub fn parse_status_pairs(text: &str, ontology: &Ontology) -> Vec<(SymptomId, SymptomStatus, String)> {
    text.split([';', ',', '\n'])
        .filter_map(|item| parse_status_item(item, ontology))
        .collect()
}

/// Like [`parse_status_pairs`] but one item per line, so notes after `|`
/// may contain commas.
pub fn parse_status_lines(text: &str, ontology: &Ontology) -> Vec<(SymptomId, SymptomStatus, String)> {
    text.lines()
        .filter_map(|item| parse_status_item(item, ontology))
        .collect()
}

fn parse_status_item(item: &str, ontology: &Ontology) -> Option<(SymptomId, SymptomStatus, String)> {
    let item = strip_bullet(item);
    if item.is_empty() {
        return None;
    }
    let (raw_id, rest) = item.split_once(['=', ':'])?;
    let (raw_status, note) = match rest.split_once('|') {
        Some((s, n)) => (s, n.trim().to_string()),
        None => (rest, String::new()),
    };
    let status_word = raw_status
        .split(|c: char| !c.is_alphanumeric() && c != '?')
        .find(|w| !w.is_empty())
        .unwrap_or("");
    let Ok(status) = status_word.parse::<SymptomStatus>() else {
        warn!(item, "unrecognised symptom status");
        return None;
    };
    match ontology.resolve(raw_id) {
        Some(id) => Some((id, status, note)),
        None => {
            warn!(symptom = raw_id.trim(), "dropping symptom outside the ontology");
            None
        }
    }
}

/// Partially parsed diagnosis sample.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedDiagnosis {
    pub depression_risk: Option<RiskLevel>,
    pub suicide_risk: Option<RiskLevel>,
    pub symptom_findings: BTreeMap<SymptomId, SymptomStatus>,
    pub rationale: String,
}

impl ParsedDiagnosis {
    pub fn missing_fields(&self) -> Vec<&'static str> {
        let mut m = Vec::new();
        if self.depression_risk.is_none() {
            m.push("depression_risk");
        }
        if self.suicide_risk.is_none() {
            m.push("suicide_risk");
        }
        m
    }

    pub fn complete(self) -> Option<DiagnosisResult> {
        Some(DiagnosisResult {
            depression_risk: self.depression_risk?,
            suicide_risk: self.suicide_risk?,
            symptom_findings: self.symptom_findings,
            rationale: self.rationale,
        })
    }
}

const DIAGNOSIS_KEYS: [&str; 5] = [
    "depression risk",
    "suicide risk",
    "suicidal risk",
    "findings",
    "rationale",
];

pub fn parse_diagnosis(text: &str, ontology: &Ontology) -> ParsedDiagnosis {
    let secs = sections(text, &DIAGNOSIS_KEYS);
    let findings = find(&secs, "findings")
        .map(|s| {
            parse_status_pairs(&s.full_text(), ontology)
                .into_iter()
                .map(|(id, st, _)| (id, st))
                .collect()
        })
        .unwrap_or_default();
    ParsedDiagnosis {
        depression_risk: find(&secs, "depression risk").and_then(|s| parse_risk(&s.value)),
        suicide_risk: find(&secs, "suicide risk")
            .or_else(|| find(&secs, "suicidal risk"))
            .and_then(|s| parse_risk(&s.value)),
        symptom_findings: findings,
        rationale: find(&secs, "rationale").map(Section::full_text).unwrap_or_default(),
    }
}
