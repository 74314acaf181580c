//! Shared vocabulary: risk levels, symptoms, cases, transcripts, diagnoses.

mod ontology;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ontology::{Ontology, SymptomEntry};

/// Four-way ordinal risk label used for both depression and suicide risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskLevel {
    Control,
    Mild,
    Moderate,
    Severe,
}

impl RiskLevel {
    pub const ALL: [RiskLevel; 4] = [
        RiskLevel::Control,
        RiskLevel::Mild,
        RiskLevel::Moderate,
        RiskLevel::Severe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Control => "control",
            RiskLevel::Mild => "mild",
            RiskLevel::Moderate => "moderate",
            RiskLevel::Severe => "severe",
        }
    }
}

/// Ordinal of a risk level: control 0, mild 1, moderate 2, severe 3.
pub fn risk_to_int(level: RiskLevel) -> u8 {
    match level {
        RiskLevel::Control => 0,
        RiskLevel::Mild => 1,
        RiskLevel::Moderate => 2,
        RiskLevel::Severe => 3,
    }
}

/// Inverse of [`risk_to_int`].
pub fn int_to_risk(value: i64) -> Result<RiskLevel> {
    match value {
        0 => Ok(RiskLevel::Control),
        1 => Ok(RiskLevel::Mild),
        2 => Ok(RiskLevel::Moderate),
        3 => Ok(RiskLevel::Severe),
        other => Err(Error::OutOfRange(other)),
    }
}

impl fmt::Display for RiskLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_matches(|c: char| !c.is_alphanumeric());
        match t.to_ascii_lowercase().as_str() {
            "control" | "none" | "no" | "normal" => Ok(RiskLevel::Control),
            "mild" | "low" => Ok(RiskLevel::Mild),
            "moderate" | "medium" => Ok(RiskLevel::Moderate),
            "severe" | "high" => Ok(RiskLevel::Severe),
            other => match other.parse::<i64>() {
                Ok(n) => int_to_risk(n),
                Err(_) => Err(Error::ParseFailure {
                    what: "risk level",
                    detail: format!("unrecognised value `{s}`"),
                }),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymptomId(pub String);

impl SymptomId {
    pub fn new(id: impl Into<String>) -> Self {
        SymptomId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SymptomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SymptomId {
    fn from(s: &str) -> Self {
        SymptomId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymptomStatus {
    #[default]
    Unknown,
    Present,
    Absent,
}

impl SymptomStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SymptomStatus::Unknown => "unknown",
            SymptomStatus::Present => "present",
            SymptomStatus::Absent => "absent",
        }
    }

    pub fn is_resolved(self) -> bool {
        self != SymptomStatus::Unknown
    }
}

impl fmt::Display for SymptomStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SymptomStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "present" | "true" | "yes" => Ok(SymptomStatus::Present),
            "absent" | "false" | "no" => Ok(SymptomStatus::Absent),
            "unknown" | "?" | "unclear" => Ok(SymptomStatus::Unknown),
            other => Err(Error::ParseFailure {
                what: "symptom status",
                detail: format!("unrecognised value `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroundTruth {
    pub depression_risk: RiskLevel,
    pub suicide_risk: RiskLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymptomFact {
    pub present: bool,
    #[serde(default)]
    pub severity_note: String,
}

/// One clinic case. The ground truth is never exposed to the agents that
/// converse; see [`crate::agents::PatientProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub case_id: String,
    pub portrait: String,
    pub chief_complaint: String,
    #[serde(default)]
    pub symptoms: BTreeMap<SymptomId, SymptomFact>,
    #[serde(default)]
    pub life_events: Vec<String>,
    #[serde(default)]
    pub original_dialogue: Transcript,
    pub ground_truth: GroundTruth,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Patient,
    Psychiatrist,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Speaker::Patient => "Patient",
            Speaker::Psychiatrist => "Psychiatrist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub turn_index: usize,
}

/// Dialogue stage driven by the supervisor: Start, then Exploring, then End.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStage {
    Start,
    Exploring,
    End,
}

impl SessionStage {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionStage::Start => "start",
            SessionStage::Exploring => "exploring",
            SessionStage::End => "end",
        }
    }
}

impl fmt::Display for SessionStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageMark {
    pub turn_index: usize,
    pub stage: SessionStage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub stage_marks: Vec<StageMark>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn last(&self) -> Option<&Utterance> {
        self.utterances.last()
    }

    pub fn next_turn_index(&self) -> usize {
        self.utterances.last().map_or(0, |u| u.turn_index + 1)
    }

    pub fn push(&mut self, speaker: Speaker, text: impl Into<String>) -> &Utterance {
        let turn_index = self.next_turn_index();
        self.utterances.push(Utterance {
            speaker,
            text: text.into(),
            turn_index,
        });
        self.utterances.last().expect("just pushed")
    }

    /// Records a stage change at the next turn index. Marks must stay monotone
    /// in both turn and stage order.
    pub fn mark_stage(&mut self, stage: SessionStage) -> Result<()> {
        let turn_index = self.next_turn_index();
        if let Some(prev) = self.stage_marks.last() {
            if prev.stage >= stage || prev.turn_index > turn_index {
                return Err(Error::Precondition(format!(
                    "stage mark {stage}@{turn_index} does not follow {}@{}",
                    prev.stage, prev.turn_index
                )));
            }
        }
        self.stage_marks.push(StageMark { turn_index, stage });
        Ok(())
    }

    pub fn stages(&self) -> Vec<SessionStage> {
        self.stage_marks.iter().map(|m| m.stage).collect()
    }

    pub fn speakers_alternate(&self) -> bool {
        self.utterances
            .windows(2)
            .all(|w| w[0].speaker != w[1].speaker)
    }

    /// Checks the ordering invariants on turn indices and stage marks.
    pub fn validate(&self) -> std::result::Result<(), String> {
        for w in self.utterances.windows(2) {
            if w[1].turn_index <= w[0].turn_index {
                return Err(format!(
                    "turn_index {} does not increase after {}",
                    w[1].turn_index, w[0].turn_index
                ));
            }
        }
        for w in self.stage_marks.windows(2) {
            if w[1].turn_index < w[0].turn_index || w[1].stage <= w[0].stage {
                return Err("stage_marks are not monotone".to_string());
            }
        }
        Ok(())
    }

    /// Plain-text rendering used in prompt history slots.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(u.speaker.label());
            out.push_str(": ");
            out.push_str(&u.text);
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    pub depression_risk: RiskLevel,
    pub suicide_risk: RiskLevel,
    #[serde(default)]
    pub symptom_findings: BTreeMap<SymptomId, SymptomStatus>,
    #[serde(default)]
    pub rationale: String,
}

impl DiagnosisResult {
    pub fn risks(depression_risk: RiskLevel, suicide_risk: RiskLevel) -> Self {
        DiagnosisResult {
            depression_risk,
            suicide_risk,
            symptom_findings: BTreeMap::new(),
            rationale: String::new(),
        }
    }
}

/// Conjunctive match: both risks must equal the ground truth.
pub fn labels_match(diag: &DiagnosisResult, truth: &GroundTruth) -> bool {
    diag.depression_risk == truth.depression_risk && diag.suicide_risk == truth.suicide_risk
}
