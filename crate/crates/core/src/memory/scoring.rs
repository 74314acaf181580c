//! Min-max normalisation and score-proportional probabilities.

use rand::Rng;

/// Value every element takes when a component has no spread.
pub const DEGENERATE_NORM: f64 = 0.5;

/// Maps `values` onto `[0, 1]` by min-max scaling. When all values are equal
/// every element becomes [`DEGENERATE_NORM`].
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let Some(&first) = values.first() else {
        return Vec::new();
    };
    let (lo, hi) = values
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span <= 0.0 || !span.is_finite() {
        return vec![DEGENERATE_NORM; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
        .collect()
}

/// `p_i = score_i / sum_j score_j`, or uniform when the total is zero.
pub fn selection_probabilities(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

/// Successive weighted sampling without replacement.
///
/// Each draw picks one remaining index with probability proportional to its
/// score, removes it and renormalises over the rest. A remainder whose scores
/// sum to zero is drawn uniformly. Returns at most `k` distinct indices.
pub fn sample_without_replacement<R: Rng + ?Sized>(
    scores: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut picked = Vec::with_capacity(k.min(scores.len()));
    while picked.len() < k && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| scores[i]).sum();
        let slot = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (pos, &i) in remaining.iter().enumerate() {
                if scores[i] <= 0.0 {
                    continue;
                }
                acc += scores[i];
                chosen = Some(pos);
                if target < acc {
                    break;
                }
            }
            chosen.expect("positive total implies a positive score")
        } else {
            rng.random_range(0..remaining.len())
        };
        picked.push(remaining.remove(slot));
    }
    picked
}
