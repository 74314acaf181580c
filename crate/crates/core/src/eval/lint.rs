//! Transcript lint for copied phrasing between turns.

use std::collections::HashSet;

use crate::domain::{Speaker, Transcript};
use crate::error::{Error, Result};

pub const REPETITION_THRESHOLD: f64 = 0.6;
const MIN_UTTERANCES: usize = 4;

fn grams(text: &str) -> HashSet<Vec<String>> {
    let tokens: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.len() < 3 {
        // too short for trigrams; the whole utterance is one gram
        return if tokens.is_empty() { HashSet::new() } else { HashSet::from([tokens]) };
    }
    tokens.windows(3).map(<[String]>::to_vec).collect()
}

fn jaccard(a: &HashSet<Vec<String>>, b: &HashSet<Vec<String>>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Highest word-trigram Jaccard overlap between two utterances of the same
/// speaker, in `[0, 1]`.
pub fn repetition_lint(transcript: &Transcript) -> Result<f64> {
    if transcript.len() < MIN_UTTERANCES {
        return Err(Error::TooShort {
            needed: MIN_UTTERANCES,
            got: transcript.len(),
        });
    }
    let mut best: f64 = 0.0;
    for speaker in [Speaker::Psychiatrist, Speaker::Patient] {
        let sets: Vec<_> = transcript
            .utterances
            .iter()
            .filter(|u| u.speaker == speaker)
            .map(|u| grams(&u.text))
            .collect();
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                best = best.max(jaccard(&sets[i], &sets[j]));
            }
        }
    }
    Ok(best)
}

pub fn is_repetitive(score: f64, threshold: f64) -> bool {
    score > threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(lines: &[&str]) -> Transcript {
        let mut t = Transcript::new();
        for (i, l) in lines.iter().enumerate() {
            let sp = if i % 2 == 0 { Speaker::Psychiatrist } else { Speaker::Patient };
            t.push(sp, *l);
        }
        t
    }

    #[test]
    fn identical_and_disjoint() {
        let same = t(&["How have you been sleeping lately?", "Badly.", "How have you been sleeping lately?", "Still badly."]);
        let s = repetition_lint(&same).unwrap();
        assert_eq!(s, 1.0);
        assert!(is_repetitive(s, REPETITION_THRESHOLD));
        let disjoint = t(&["Good morning, please sit down.", "Thanks for seeing me.", "What brings you here today?", "My sleep is terrible."]);
        assert_eq!(repetition_lint(&disjoint).unwrap(), 0.0);
    }

    #[test]
    fn short_transcript_rejected() {
        assert!(matches!(repetition_lint(&t(&["a", "b", "c"])), Err(Error::TooShort { needed: 4, got: 3 })));
    }
}
