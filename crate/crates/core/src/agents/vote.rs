//! Aggregation of sampled diagnoses.
//!
//! Per risk dimension: the unique mode if there is one, otherwise the mean of
//! the ordinal votes rounded half-up.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{int_to_risk, risk_to_int, DiagnosisResult, RiskLevel, SymptomId, SymptomStatus};

/// A diagnosis sample whose missing risk field(s) were replaced by the
/// fallback level after parse retries ran out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailureRecord {
    pub sample_index: usize,
    pub missing_fields: Vec<String>,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteSet {
    pub samples: Vec<DiagnosisResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parse_failures: Vec<ParseFailureRecord>,
}

impl VoteSet {
    pub fn new(samples: Vec<DiagnosisResult>) -> Self {
        VoteSet {
            samples,
            parse_failures: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Votes over one risk dimension. `None` for an empty slice.
pub fn vote_levels(votes: &[RiskLevel]) -> Option<RiskLevel> {
    if votes.is_empty() {
        return None;
    }
    let mut counts = [0usize; 4];
    for v in votes {
        counts[risk_to_int(*v) as usize] += 1;
    }
    let top = *counts.iter().max().expect("four counters");
    let modes: Vec<usize> = (0..4).filter(|&i| counts[i] == top).collect();
    if modes.len() == 1 {
        return Some(int_to_risk(modes[0] as i64).expect("index in range"));
    }
    // round-half-up of sum / n in integer arithmetic: floor((2 * sum + n) / (2 * n))
    let n = votes.len() as u64;
    let sum: u64 = votes.iter().map(|v| risk_to_int(*v) as u64).sum();
    let rounded = (2 * sum + n) / (2 * n);
    Some(int_to_risk(rounded as i64).expect("mean of 0..=3 stays in range"))
}

fn merge_findings(samples: &[DiagnosisResult]) -> BTreeMap<SymptomId, SymptomStatus> {
    let mut tallies: BTreeMap<&SymptomId, [usize; 3]> = BTreeMap::new();
    for s in samples {
        for id in s.symptom_findings.keys() {
            tallies.entry(id).or_default();
        }
    }
    for (id, tally) in tallies.iter_mut() {
        for s in samples {
            let slot = match s.symptom_findings.get(*id).copied().unwrap_or_default() {
                SymptomStatus::Unknown => 0,
                SymptomStatus::Present => 1,
                SymptomStatus::Absent => 2,
            };
            tally[slot] += 1;
        }
    }
    tallies
        .into_iter()
        .map(|(id, t)| {
            let top = *t.iter().max().expect("three counters");
            let winners: Vec<usize> = (0..3).filter(|&i| t[i] == top).collect();
            let status = match winners.as_slice() {
                [1] => SymptomStatus::Present,
                [2] => SymptomStatus::Absent,
                _ => SymptomStatus::Unknown,
            };
            (id.clone(), status)
        })
        .collect()
}

/// Aggregates a vote set into one diagnosis. Risks are voted per dimension;
/// findings by per-symptom majority with ties going to Unknown.
///
/// # Panics
/// On an empty vote set.
pub fn vote(votes: &VoteSet) -> DiagnosisResult {
    assert!(!votes.is_empty(), "vote() needs at least one sample");
    let dep: Vec<RiskLevel> = votes.samples.iter().map(|s| s.depression_risk).collect();
    let su: Vec<RiskLevel> = votes.samples.iter().map(|s| s.suicide_risk).collect();
    let depression_risk = vote_levels(&dep).expect("non-empty");
    let suicide_risk = vote_levels(&su).expect("non-empty");
    let rationale = votes
        .samples
        .iter()
        .find(|s| s.depression_risk == depression_risk && s.suicide_risk == suicide_risk)
        .unwrap_or(&votes.samples[0])
        .rationale
        .clone();
    DiagnosisResult {
        depression_risk,
        suicide_risk,
        symptom_findings: merge_findings(&votes.samples),
        rationale,
    }
}
