use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{GroundTruth, RiskLevel};
use crate::error::{Error, Result};
use crate::session::SessionOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetric {
    pub case_id: String,
    pub predicted: (RiskLevel, RiskLevel),
    pub truth: (RiskLevel, RiskLevel),
    pub correct_dep: bool,
    pub correct_su: bool,
}

/// Accuracy of the second attempts in a Quiz run. Logged beside the
/// headline numbers, never mixed into them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryStats {
    pub retried: usize,
    pub retry_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent of completed sessions whose first-attempt depression risk
    /// equals the truth.
    pub dep_accuracy: f64,
    pub su_accuracy: f64,
    /// Mean of the two accuracies.
    pub overall: f64,
    pub n_cases: usize,
    /// Sessions marked failed; excluded from the accuracies.
    pub n_failed: usize,
    pub per_case: Vec<CaseMetric>,
    pub retry: RetryStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 * 100.0 / n as f64
    }
}

pub fn overall_accuracy(dep: f64, su: f64) -> f64 {
    (dep + su) / 2.0
}

/// Computes first-attempt accuracies. Failed sessions are counted but
/// excluded; with no completed session every accuracy is 0.
pub fn compute_accuracy(
    outcomes: &[SessionOutcome],
    truths: &BTreeMap<String, GroundTruth>,
) -> Result<MetricsReport> {
    let mut per_case = Vec::new();
    let mut n_failed = 0;
    let mut retry = RetryStats {
        retried: 0,
        retry_correct: 0,
    };
    for o in outcomes {
        if !o.is_completed() {
            n_failed += 1;
            continue;
        }
        let truth = truths
            .get(&o.case_id)
            .ok_or_else(|| Error::MissingTruth(o.case_id.clone()))?;
        let first = o
            .first_attempt()
            .ok_or_else(|| Error::NoAttempts(o.case_id.clone()))?;
        let d = &first.diagnosis;
        per_case.push(CaseMetric {
            case_id: o.case_id.clone(),
            predicted: (d.depression_risk, d.suicide_risk),
            truth: (truth.depression_risk, truth.suicide_risk),
            correct_dep: d.depression_risk == truth.depression_risk,
            correct_su: d.suicide_risk == truth.suicide_risk,
        });
        if let Some(second) = o.attempts.get(1) {
            retry.retried += 1;
            retry.retry_correct += second.correct as usize;
        }
    }
    let n = per_case.len();
    let dep = percent(per_case.iter().filter(|c| c.correct_dep).count(), n);
    let su = percent(per_case.iter().filter(|c| c.correct_su).count(), n);
    Ok(MetricsReport {
        dep_accuracy: dep,
        su_accuracy: su,
        overall: overall_accuracy(dep, su),
        n_cases: n,
        n_failed,
        per_case,
        retry,
        seed: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        Some(Stat {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub seeds: usize,
    pub dep: Stat,
    pub su: Stat,
    pub overall: Stat,
}

pub fn aggregate(reports: &[MetricsReport]) -> Option<AggregateMetrics> {
    let col = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
    Some(AggregateMetrics {
        seeds: reports.len(),
        dep: Stat::of(&col(|r| r.dep_accuracy))?,
        su: Stat::of(&col(|r| r.su_accuracy))?,
        overall: Stat::of(&col(|r| r.overall))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_and_percent() {
        assert_eq!(percent(1, 4), 25.0);
        assert_eq!(percent(0, 0), 0.0);
        let s = Stat::of(&[1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
        assert!(Stat::of(&[]).is_none());
        assert!(aggregate(&[]).is_none());
    }
}
