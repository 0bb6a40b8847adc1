//! Embedding, the exact vector index and top-k retrieval.
//!
//! Distances are non-squared Euclidean; lower means more relevant. Hits are
//! ordered by ascending distance, ties by ascending entry id.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::knowledge_store::KnowledgeBase;
use crate::scalar::{l2_distance, Scalar};

pub const DEFAULT_K: usize = 4;
pub const TEST_EMBEDDER_DIM: usize = 64;
pub const CACHE_FILE: &str = "embeddings.bin";
const CACHE_MAGIC: &[u8; 5] = b"L2RV1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("embedding has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding cache corrupt: {0}")]
    CacheCorrupt(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// splitmix64 generator seeded with an arbitrary 64-bit state.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

pub trait Embedder: Send + Sync {
    /// Identifies provider and dimension; part of every cache key.
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;
}

/// Deterministic bag-of-tokens embedder, bit-exact across platforms.
///
/// ASCII letters (lowercased) and digits form tokens, every other byte
/// separates them. Each token seeds a splitmix64 stream from its FNV-1a hash;
/// `dim` draws become components in `[-1, 1)`. Token vectors are summed with
/// multiplicity and L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    id: String,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            id: format!("hash-fnv1a-splitmix64-d{dim}"),
        }
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = Vec<u8>> + '_ {
        text.as_bytes()
            .split(|b| !b.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_ascii_lowercase())
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(TEST_EMBEDDER_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut acc = vec![0.0f64; self.dim];
        for token in Self::tokens(text) {
            let mut rng = SplitMix64::new(fnv1a64(&token));
            for slot in acc.iter_mut() {
                let v = rng.next_u64();
                *slot += (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0;
            }
        }
        normalize(&mut acc);
        Ok(acc)
    }
}

fn normalize(v: &mut [f64]) {
    let norm = crate::scalar::l2_norm(v);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// OpenAI-compatible `/embeddings` client. Vectors are L2-normalized.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    api_key_env: String,
    dim: usize,
    id: String,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: &str,
        model: &str,
        api_key_env: &str,
        dim: usize,
        timeout_ms: u64,
    ) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(timeout_ms))
            .build()
            .map_err(|e| RetrievalError::Provider(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env: api_key_env.to_string(),
            dim,
            id: format!("remote-{model}-d{dim}"),
            client,
        })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        if text.is_empty() {
            return Ok(vec![0.0; self.dim]);
        }
        let key = std::env::var(&self.api_key_env)
            .map_err(|_| RetrievalError::Provider(format!("{} is not set", self.api_key_env)))?;
        let resp = self
            .client
            .post(format!("{}/embeddings", self.endpoint))
            .bearer_auth(key)
            .json(&serde_json::json!({ "model": self.model, "input": text }))
            .send()
            .map_err(|e| RetrievalError::Provider(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(RetrievalError::Provider(format!("{status}: {body}")));
        }
        let parsed: EmbeddingResponse =
            resp.json().map_err(|e| RetrievalError::Provider(e.to_string()))?;
        let mut v = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| RetrievalError::Provider("empty embedding response".into()))?
            .embedding;
        if v.len() != self.dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        normalize(&mut v);
        Ok(v)
    }
}

/// Cache key: FNV-1a over `embedder_id`, a NUL byte and the text.
pub fn cache_key(embedder_id: &str, text: &str) -> u64 {
    let mut bytes = Vec::with_capacity(embedder_id.len() + 1 + text.len());
    bytes.extend_from_slice(embedder_id.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(text.as_bytes());
    fnv1a64(&bytes)
}

/// Content-addressed embedding cache backed by the `embeddings.bin` sidecar.
///
/// Layout: magic `L2RV1`, little-endian u32 dimension, then records of
/// (u64 key, `dim` little-endian f64).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    vectors: HashMap<u64, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: u64) -> Option<&Vec<f64>> {
        self.vectors.get(&key)
    }

    pub fn insert(&mut self, key: u64, vector: Vec<f64>) {
        self.vectors.insert(key, vector);
    }

    pub fn from_bytes(bytes: &[u8], dim: usize) -> Result<Self, RetrievalError> {
        let corrupt = |m: &str| RetrievalError::CacheCorrupt(m.to_string());
        if bytes.len() < 9 || &bytes[..5] != CACHE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let stored_dim = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        if stored_dim != dim {
            return Err(RetrievalError::CacheCorrupt(format!(
                "dimension {stored_dim} does not match embedder dimension {dim}"
            )));
        }
        let record = 8 + 8 * dim;
        let body = &bytes[9..];
        if !body.len().is_multiple_of(record) {
            return Err(corrupt("truncated record"));
        }
        let mut cache = Self::new(dim);
        for chunk in body.chunks_exact(record) {
            let key = u64::from_le_bytes(chunk[..8].try_into().unwrap());
            let v = chunk[8..]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            cache.vectors.insert(key, v);
        }
        Ok(cache)
    }

    /// Records are written in ascending key order so the file is reproducible.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut keys: Vec<_> = self.vectors.keys().copied().collect();
        keys.sort_unstable();
        let mut out = Vec::with_capacity(9 + keys.len() * (8 + 8 * self.dim));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for key in keys {
            out.extend_from_slice(&key.to_le_bytes());
            for x in &self.vectors[&key] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Reads the sidecar. Missing file yields an empty cache; a corrupt one is
    /// reported so the caller can fall back to a full rebuild.
    pub fn load(path: &Path, dim: usize) -> Result<Self, RetrievalError> {
        match fs::read(path) {
            Ok(bytes) => Self::from_bytes(&bytes, dim),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::new(dim)),
            Err(e) => Err(e.into()),
        }
    }

    /// Like [`Self::load`] but any corruption silently yields an empty cache.
    pub fn load_or_empty(path: &Path, dim: usize) -> Self {
        Self::load(path, dim).unwrap_or_else(|e| {
            tracing::warn!(error = %e, "discarding embedding cache");
            Self::new(dim)
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let tmp = path.with_extension("bin.tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        fs::rename(tmp, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct RetrievalHit<T: Scalar> {
    pub entry_id: u64,
    pub confidence: T,
    pub distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct RetrievalSet<T: Scalar> {
    pub hits: Vec<RetrievalHit<T>>,
    pub k_requested: usize,
    pub query_text: String,
}

impl<T: Scalar> RetrievalSet<T> {
    pub fn contains(&self, id: u64) -> bool {
        self.hits.iter().any(|h| h.entry_id == id)
    }
}

#[derive(Debug, Clone)]
pub struct IndexedEntry<T: Scalar> {
    pub id: u64,
    pub text: String,
    pub confidence: T,
    pub vector: Vec<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub computed: usize,
    pub reused: usize,
}

/// Ascending distance, then ascending id.
pub fn hit_order<T: Scalar>(a: &RetrievalHit<T>, b: &RetrievalHit<T>) -> Ordering {
    a.distance
        .partial_cmp(&b.distance)
        .unwrap_or(Ordering::Equal)
        .then(a.entry_id.cmp(&b.entry_id))
}

/// Immutable exact index over the retrievable entries of a knowledge base.
pub struct VectorIndex<T: Scalar = f64> {
    embedder: Arc<dyn Embedder>,
    items: Vec<IndexedEntry<T>>,
    positions: HashMap<u64, usize>,
}

impl<T: Scalar> std::fmt::Debug for VectorIndex<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorIndex")
            .field("embedder", &self.embedder.id())
            .field("len", &self.items.len())
            .finish()
    }
}

impl<T: Scalar> VectorIndex<T> {
    /// Embeds every retrievable entry (confidence > 0, not tombstoned),
    /// reusing cached vectors. `cache` is replaced by exactly the vectors the
    /// new index uses.
    pub fn build(
        kb: &KnowledgeBase,
        embedder: Arc<dyn Embedder>,
        cache: &mut EmbeddingCache,
    ) -> Result<(Self, BuildStats), RetrievalError> {
        let dim = embedder.dim();
        if cache.dim() != dim {
            *cache = EmbeddingCache::new(dim);
        }
        let mut next = EmbeddingCache::new(dim);
        let mut stats = BuildStats::default();
        let mut items = Vec::new();
        for entry in kb.entries().iter().filter(|e| e.is_retrievable()) {
            let key = cache_key(embedder.id(), &entry.text);
            let vector = match next.get(key).or_else(|| cache.get(key)) {
                Some(v) => {
                    stats.reused += 1;
                    v.clone()
                }
                None => {
                    stats.computed += 1;
                    let v = embedder.embed(&entry.text)?;
                    if v.len() != dim {
                        return Err(RetrievalError::DimensionMismatch {
                            expected: dim,
                            got: v.len(),
                        });
                    }
                    v
                }
            };
            items.push(IndexedEntry {
                id: entry.id,
                text: entry.text.clone(),
                confidence: T::of(entry.confidence),
                vector: vector.iter().map(|&x| T::of(x)).collect(),
            });
            next.insert(key, vector);
        }
        *cache = next;
        Ok((Self::from_items(embedder, items), stats))
    }

    pub fn from_items(embedder: Arc<dyn Embedder>, items: Vec<IndexedEntry<T>>) -> Self {
        let positions = items.iter().enumerate().map(|(i, e)| (e.id, i)).collect();
        Self {
            embedder,
            items,
            positions,
        }
    }

    pub fn empty(embedder: Arc<dyn Embedder>) -> Self {
        Self::from_items(embedder, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn entry(&self, id: u64) -> Option<&IndexedEntry<T>> {
        self.positions.get(&id).map(|&i| &self.items[i])
    }

    pub fn items(&self) -> &[IndexedEntry<T>] {
        &self.items
    }

    /// Top-k hits for a precomputed query vector.
    pub fn search(&self, query: &[T], k: usize) -> Vec<RetrievalHit<T>> {
        let mut hits: Vec<RetrievalHit<T>> = self
            .items
            .iter()
            .map(|e| RetrievalHit {
                entry_id: e.id,
                confidence: e.confidence,
                distance: l2_distance(query, &e.vector),
            })
            .collect();
        let k = k.min(hits.len());
        if k == 0 {
            return Vec::new();
        }
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, hit_order);
            hits.truncate(k);
        }
        hits.sort_by(hit_order);
        hits
    }

    /// Embeds the raw query text and returns the `k` nearest entries.
    /// An empty index yields an empty set.
    pub fn retrieve_top_k(&self, query: &str, k: usize) -> Result<RetrievalSet<T>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let hits = if self.items.is_empty() {
            Vec::new()
        } else {
            let q: Vec<T> = self.embedder.embed(query)?.into_iter().map(T::of).collect();
            self.search(&q, k)
        };
        Ok(RetrievalSet {
            hits,
            k_requested: k,
            query_text: query.to_string(),
        })
    }
}

/// Shared slot holding the current index; rebuilds swap in a new `Arc`.
pub struct IndexHandle<T: Scalar = f64> {
    current: RwLock<Arc<VectorIndex<T>>>,
}

impl<T: Scalar> IndexHandle<T> {
    pub fn new(index: VectorIndex<T>) -> Self {
        Self {
            current: RwLock::new(Arc::new(index)),
        }
    }

    pub fn load(&self) -> Arc<VectorIndex<T>> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn swap(&self, index: VectorIndex<T>) -> Arc<VectorIndex<T>> {
        let mut slot = self.current.write().unwrap_or_else(|e| e.into_inner());
        std::mem::replace(&mut *slot, Arc::new(index))
    }
}
