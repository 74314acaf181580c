//! Tiered memory of the psychiatrist agent.
//!
//! Nodes live in one of three layers. Retrieval scores each node in the
//! requested layers as `a1 * rel + a2 * imp`, where `rel` is the min-max
//! normalised embedding dot product with the query and `imp` the min-max
//! normalised importance. Scores are turned into a probability distribution
//! and `k` nodes are drawn without replacement. There is no recency term.

mod scoring;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Embedding};
use crate::error::{Error, Result};

pub use scoring::{min_max_normalize, sample_without_replacement, selection_probabilities, DEGENERATE_NORM};

pub const INITIAL_IMPORTANCE: f64 = 5.0;
pub const MIN_IMPORTANCE: f64 = 0.0;
pub const MAX_IMPORTANCE: f64 = 10.0;
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryLayer {
    ConversationRecord,
    ElectronicMedicalRecord,
    DiagnosticSkill,
}

impl MemoryLayer {
    pub fn short_name(self) -> &'static str {
        match self {
            MemoryLayer::ConversationRecord => "conversation",
            MemoryLayer::ElectronicMedicalRecord => "emr",
            MemoryLayer::DiagnosticSkill => "skill",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub node_id: NodeId,
    pub layer: MemoryLayer,
    pub content: String,
    pub embedding: Embedding,
    pub importance: f64,
    pub source_case: String,
    pub created_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub query_text: String,
    pub layers: BTreeSet<MemoryLayer>,
    pub k: usize,
    /// `(relevance weight, importance weight)`.
    pub weights: (f64, f64),
}

impl RetrievalQuery {
    pub fn new(query_text: impl Into<String>, layers: impl IntoIterator<Item = MemoryLayer>) -> Self {
        RetrievalQuery {
            query_text: query_text.into(),
            layers: layers.into_iter().collect(),
            k: 10,
            weights: (1.0, 1.0),
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_weights(mut self, relevance: f64, importance: f64) -> Self {
        self.weights = (relevance, importance);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Precondition("retrieval k must be at least 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Precondition("retrieval needs at least one layer".into()));
        }
        let (a, b) = self.weights;
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Precondition("retrieval weights must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub node_id: NodeId,
    pub rel: f64,
    pub imp_norm: f64,
    pub score: f64,
    pub probability: f64,
}

/// Scores a candidate pool from raw relevances (dot products) and raw
/// importances. Pure; the store calls it after collecting the pool.
pub fn score_pool(
    ids: &[NodeId],
    raw_relevance: &[f64],
    importance: &[f64],
    weights: (f64, f64),
) -> Vec<ScoredNode> {
    debug_assert_eq!(ids.len(), raw_relevance.len());
    debug_assert_eq!(ids.len(), importance.len());
    let rel = min_max_normalize(raw_relevance);
    let imp = min_max_normalize(importance);
    let scores: Vec<f64> = rel
        .iter()
        .zip(&imp)
        .map(|(r, i)| weights.0 * r + weights.1 * i)
        .collect();
    let probs = selection_probabilities(&scores);
    ids.iter()
        .enumerate()
        .map(|(n, &node_id)| ScoredNode {
            node_id,
            rel: rel[n],
            imp_norm: imp[n],
            score: scores[n],
            probability: probs[n],
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotFile {
    version: u32,
    next_seq: u64,
    nodes: Vec<MemoryNode>,
}

/// The memory store. Writers need `&mut`; share behind an `RwLock` for the
/// single-writer, multi-reader pattern.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryStore {
    nodes: Vec<MemoryNode>,
    next_seq: u64,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[MemoryNode] {
        &self.nodes
    }

    pub fn get(&self, id: NodeId) -> Option<&MemoryNode> {
        // ids are assigned from created_seq, so nodes stay sorted by id
        self.nodes
            .binary_search_by_key(&id, |n| n.node_id)
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn count(&self, layer: MemoryLayer) -> usize {
        self.nodes.iter().filter(|n| n.layer == layer).count()
    }

    fn dim(&self) -> Option<usize> {
        self.nodes.first().map(|n| n.embedding.dim())
    }

    /// Embeds `content` with `embedder` and stores it with the initial
    /// importance.
    pub fn insert(
        &mut self,
        layer: MemoryLayer,
        content: &str,
        source_case: &str,
        embedder: &dyn Backend,
    ) -> Result<NodeId> {
        if content.trim().is_empty() {
            return Err(Error::EmptyContent);
        }
        let embedding = embedder.embed(content)?;
        self.insert_embedded(layer, content, source_case, embedding)
    }

    pub fn insert_embedded(
        &mut self,
        layer: MemoryLayer,
        content: &str,
        source_case: &str,
        embedding: Embedding,
    ) -> Result<NodeId> {
        if content.trim().is_empty() {
            return Err(Error::EmptyContent);
        }
        if embedding.dim() == 0 {
            return Err(Error::Precondition("embedding is empty".into()));
        }
        if let Some(dim) = self.dim() {
            if dim != embedding.dim() {
                return Err(Error::Precondition(format!(
                    "embedding dimension {} differs from store dimension {dim}",
                    embedding.dim()
                )));
            }
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let node_id = NodeId(seq);
        self.nodes.push(MemoryNode {
            node_id,
            layer,
            content: content.to_string(),
            embedding,
            importance: INITIAL_IMPORTANCE,
            source_case: source_case.to_string(),
            created_seq: seq,
        });
        Ok(node_id)
    }

    fn pool(&self, layers: &BTreeSet<MemoryLayer>) -> Vec<&MemoryNode> {
        self.nodes.iter().filter(|n| layers.contains(&n.layer)).collect()
    }

    /// Scores every node in the requested layers against a pre-computed
    /// query embedding.
    pub fn score_with_embedding(
        &self,
        query: &RetrievalQuery,
        query_embedding: &Embedding,
    ) -> Result<Vec<ScoredNode>> {
        query.validate()?;
        let pool = self.pool(&query.layers);
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        if query_embedding.dim() != pool[0].embedding.dim() {
            return Err(Error::Precondition(format!(
                "query embedding dimension {} differs from store dimension {}",
                query_embedding.dim(),
                pool[0].embedding.dim()
            )));
        }
        let ids: Vec<NodeId> = pool.iter().map(|n| n.node_id).collect();
        let raw_rel: Vec<f64> = pool.iter().map(|n| n.embedding.dot(query_embedding)).collect();
        let imp: Vec<f64> = pool.iter().map(|n| n.importance).collect();
        Ok(score_pool(&ids, &raw_rel, &imp, query.weights))
    }

    pub fn score_candidates(&self, query: &RetrievalQuery, embedder: &dyn Backend) -> Result<Vec<ScoredNode>> {
        query.validate()?;
        if self.pool(&query.layers).is_empty() {
            return Err(Error::EmptyPool);
        }
        let q = embedder.embed(&query.query_text)?;
        self.score_with_embedding(query, &q)
    }

    /// Draws up to `query.k` distinct nodes per the score distribution. An
    /// empty pool yields an empty list without touching the embedder.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        query: &RetrievalQuery,
        embedder: &dyn Backend,
        rng: &mut R,
    ) -> Result<Vec<MemoryNode>> {
        query.validate()?;
        if self.pool(&query.layers).is_empty() {
            return Ok(Vec::new());
        }
        let scored = self.score_candidates(query, embedder)?;
        Ok(self.draw(&scored, query.k, rng))
    }

    pub fn sample_seeded(
        &self,
        query: &RetrievalQuery,
        embedder: &dyn Backend,
        rng_seed: u64,
    ) -> Result<Vec<MemoryNode>> {
        self.sample(query, embedder, &mut ChaCha8Rng::seed_from_u64(rng_seed))
    }

    /// Draws from already scored candidates.
    pub fn draw<R: Rng + ?Sized>(&self, scored: &[ScoredNode], k: usize, rng: &mut R) -> Vec<MemoryNode> {
        let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
        sample_without_replacement(&scores, k, rng)
            .into_iter()
            .filter_map(|i| self.get(scored[i].node_id).cloned())
            .collect()
    }

    /// Moves each listed node's importance by +1 (correct) or -1, clamped to
    /// `[0, 10]`. Duplicate ids count once. Nothing changes if any id is
    /// unknown.
    pub fn update_importance(&mut self, node_ids: &[NodeId], correct: bool) -> Result<()> {
        for id in node_ids {
            if self.get(*id).is_none() {
                return Err(Error::UnknownNode(*id));
            }
        }
        let delta = if correct { 1.0 } else { -1.0 };
        let unique: HashSet<NodeId> = node_ids.iter().copied().collect();
        for node in self.nodes.iter_mut().filter(|n| unique.contains(&n.node_id)) {
            node.importance = (node.importance + delta).clamp(MIN_IMPORTANCE, MAX_IMPORTANCE);
        }
        Ok(())
    }

    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let file = SnapshotFile {
            version: SNAPSHOT_VERSION,
            next_seq: self.next_seq,
            nodes: self.nodes.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file).expect("snapshot serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self> {
        let file: SnapshotFile =
            serde_json::from_slice(bytes).map_err(|e| Error::CorruptSnapshot(e.to_string()))?;
        if file.version != SNAPSHOT_VERSION {
            return Err(Error::CorruptSnapshot(format!(
                "unsupported version {} (expected {SNAPSHOT_VERSION})",
                file.version
            )));
        }
        let dim = file.nodes.first().map(|n| n.embedding.dim());
        let mut prev: Option<u64> = None;
        for n in &file.nodes {
            if n.node_id.0 != n.created_seq {
                return Err(Error::CorruptSnapshot(format!("node {} has mismatched seq", n.node_id)));
            }
            if prev.is_some_and(|p| p >= n.created_seq) || n.created_seq >= file.next_seq {
                return Err(Error::CorruptSnapshot("node sequence out of order".into()));
            }
            if !(MIN_IMPORTANCE..=MAX_IMPORTANCE).contains(&n.importance) {
                return Err(Error::CorruptSnapshot(format!("node {} importance out of range", n.node_id)));
            }
            if Some(n.embedding.dim()) != dim || n.embedding.dim() == 0 {
                return Err(Error::CorruptSnapshot(format!("node {} embedding dimension", n.node_id)));
            }
            prev = Some(n.created_seq);
        }
        Ok(MemoryStore {
            nodes: file.nodes,
            next_seq: file.next_seq,
        })
    }

    pub fn snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_snapshot_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn restore(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_snapshot_bytes(&bytes)
    }
}
