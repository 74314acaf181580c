use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

// Weight of the whole-text component relative to the token component.
const TEXT_JITTER: f64 = 0.15;

/// Deterministic unit-norm embedding derived from SHA-256.
///
/// Tokens are feature-hashed into signed buckets, so texts sharing words
/// score higher dot products. A small whole-text component keeps distinct
/// texts (including word permutations) apart.
pub fn hash_embedding(text: &str, dim: usize) -> Result<Embedding, BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::EmptyText);
    }
    if dim == 0 {
        return Err(BackendError::Config("embedding dimension must be positive".into()));
    }
    let mut v = vec![0.0f64; dim];
    let lower = text.to_lowercase();
    for token in lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let h = Sha256::digest(token.as_bytes());
        let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % dim as u64;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[bucket as usize] += sign;
    }
    let token_norm = norm(&v);
    if token_norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= token_norm);
    }

    let mut counter = 0u32;
    let mut filled = 0;
    while filled < dim {
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.update(counter.to_le_bytes());
        let block = hasher.finalize();
        for pair in block.chunks_exact(2) {
            if filled == dim {
                break;
            }
            let raw = u16::from_le_bytes([pair[0], pair[1]]) as f64 / u16::MAX as f64;
            v[filled] += TEXT_JITTER * (2.0 * raw - 1.0);
            filled += 1;
        }
        counter += 1;
    }

    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(Embedding(v))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::distr::Alphanumeric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_and_unit_norm() {
        let a = hash_embedding("I can't sleep at night", 64).unwrap();
        let b = hash_embedding("I can't sleep at night", 64).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 64);
        assert!((a.dot(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(hash_embedding("", 64), Err(BackendError::EmptyText));
        assert_eq!(hash_embedding("  \n", 64), Err(BackendError::EmptyText));
    }

    #[test]
    fn shared_words_raise_similarity() {
        let q = hash_embedding("trouble sleeping and waking early", 64).unwrap();
        let near = hash_embedding("waking early with trouble sleeping", 64).unwrap();
        let far = hash_embedding("appetite has been fine lately", 64).unwrap();
        assert!(q.dot(&near) > q.dot(&far));
    }

    #[test]
    fn permutations_still_differ() {
        let a = hash_embedding("low mood", 64).unwrap();
        let b = hash_embedding("mood low", 64).unwrap();
        assert_ne!(a, b);
    }

    // Distinct random strings must embed to distinct vectors.
    #[test]
    fn distinct_random_texts_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut collisions = 0;
        for _ in 0..1000 {
            let len_a = rng.random_range(1..24);
            let len_b = rng.random_range(1..24);
            let a: String = (&mut rng).sample_iter(Alphanumeric).take(len_a).map(char::from).collect();
            let b: String = (&mut rng).sample_iter(Alphanumeric).take(len_b).map(char::from).collect();
            if a == b {
                continue;
            }
            let ea = hash_embedding(&a, 64).unwrap();
            let eb = hash_embedding(&b, 64).unwrap();
            if ea.as_slice().iter().zip(eb.as_slice()).all(|(x, y)| x == y) {
                collisions += 1;
            }
        }
        assert_eq!(collisions, 0);
    }
}
