//! Text embeddings behind an interchangeable provider.
//!
//! Three backends are supported: a precomputed JSON Lines store, a remote
//! HTTP service (feature `remote`), and a deterministic signed-hash trigram
//! embedder that needs no model at all. Every backend is keyed on the
//! normalized text (lowercase, whitespace collapsed) and every vector handed
//! out is either unit-length or all-zero.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIMS: usize = 256;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("text not present in embedding store: {text:?}")]
    StoreMiss { text: String },
    #[error("remote embedding failed for {text:?}: {reason}")]
    Remote { text: String, reason: String },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("embedding store line {line}: {reason}")]
    StoreFormat { line: usize, reason: String },
    #[error("duplicate text in embedding store (line {line}): {text:?}")]
    StoreDuplicate { line: usize, text: String },
    #[error("non-finite component in vector for {text:?}")]
    NonFinite { text: String },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid dimensionality {0} (need at least 8 for hashing, 1 otherwise)")]
    BadDims(usize),
}

/// A dense vector with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(components: Vec<f64>) -> Option<Self> {
        components.iter().all(|c| c.is_finite()).then_some(Self(components))
    }

    pub fn zeros(dims: usize) -> Self {
        Self(vec![0.0; dims])
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    /// Scales to unit length; the zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            for x in &mut self.0 {
                *x /= n;
            }
        }
        self
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|x| -x).collect())
    }
}

/// Lowercases and collapses runs of whitespace to one space (trimming ends).
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Signed feature-hashing embedding over character trigrams.
///
/// Each trigram of the normalized text is hashed with FNV-1a (64 bit); the
/// hash selects component `hash % dims` and bit 63 selects the sign. Strings
/// shorter than three characters contribute themselves as a single gram and
/// the empty string contributes nothing.
pub fn hash_embed(text: &str, dims: usize) -> EmbeddingVector {
    assert!(dims >= 8, "hash_embed needs dims >= 8, got {dims}");
    let norm = normalize_text(text);
    let chars: Vec<char> = norm.chars().collect();
    let mut acc = vec![0.0f64; dims];
    let mut add = |gram: &str| {
        let h = fnv1a64(gram.as_bytes());
        let idx = (h % dims as u64) as usize;
        acc[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    };
    if chars.is_empty() {
        // no grams
    } else if chars.len() < 3 {
        add(&norm);
    } else {
        let mut buf = String::with_capacity(12);
        for w in chars.windows(3) {
            buf.clear();
            buf.extend(w);
            add(&buf);
        }
    }
    EmbeddingVector(acc).normalized()
}

/// Cosine similarity, defined as 0 when either side is all-zero.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dims() != v.dims() {
        return Err(EmbedError::DimMismatch {
            left: u.dims(),
            right: v.dims(),
        });
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderMode {
    FileStore,
    RemoteService,
    DeterministicHash,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
}

enum Backend {
    Store(HashMap<String, EmbeddingVector>),
    #[cfg_attr(not(feature = "remote"), allow(dead_code))]
    Remote(RemoteConfig),
    Hash,
}

/// Embedding source plus a normalized-text cache.
///
/// `embed_text` may be called from many threads; cache insertion is guarded
/// by a lock and a cached vector is never replaced.
pub struct EmbeddingProvider {
    backend: Backend,
    dims: usize,
    cache: RwLock<HashMap<String, Arc<EmbeddingVector>>>,
}

impl std::fmt::Debug for EmbeddingProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingProvider")
            .field("mode", &self.mode())
            .field("dims", &self.dims)
            .finish()
    }
}

#[derive(Deserialize)]
struct StoreLine {
    text: String,
    vector: Vec<f64>,
}

impl EmbeddingProvider {
    pub fn hash(dims: usize) -> Result<Self, EmbedError> {
        if dims < 8 {
            return Err(EmbedError::BadDims(dims));
        }
        Ok(Self::with_backend(Backend::Hash, dims))
    }

    /// Builds a file-store provider from JSON Lines `{"text", "vector"}`.
    ///
    /// Texts are normalized before insertion, so two lines that differ only
    /// in case or spacing count as duplicates.
    pub fn from_store_reader<R: BufRead>(reader: R) -> Result<Self, EmbedError> {
        let mut map = HashMap::new();
        let mut dims = None;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| EmbedError::StoreFormat {
                line: lineno,
                reason: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: StoreLine = serde_json::from_str(&line).map_err(|e| EmbedError::StoreFormat {
                line: lineno,
                reason: e.to_string(),
            })?;
            let d = *dims.get_or_insert(entry.vector.len());
            if entry.vector.len() != d || d == 0 {
                return Err(EmbedError::StoreFormat {
                    line: lineno,
                    reason: format!("vector has {} components, expected {d}", entry.vector.len()),
                });
            }
            let vector = EmbeddingVector::new(entry.vector).ok_or_else(|| EmbedError::NonFinite {
                text: entry.text.clone(),
            })?;
            let key = normalize_text(&entry.text);
            if map.insert(key, vector.normalized()).is_some() {
                return Err(EmbedError::StoreDuplicate {
                    line: lineno,
                    text: entry.text,
                });
            }
        }
        let dims = dims.unwrap_or(1);
        Ok(Self::with_backend(Backend::Store(map), dims))
    }

    pub fn from_store_file(path: &Path) -> Result<Self, EmbedError> {
        let file = std::fs::File::open(path).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_store_reader(std::io::BufReader::new(file))
    }

    /// Remote provider speaking `POST {"texts": [..]}` -> `{"embeddings": [[..]]}`.
    pub fn remote(config: RemoteConfig, dims: usize) -> Result<Self, EmbedError> {
        if dims == 0 {
            return Err(EmbedError::BadDims(dims));
        }
        Ok(Self::with_backend(Backend::Remote(config), dims))
    }

    fn with_backend(backend: Backend, dims: usize) -> Self {
        Self {
            backend,
            dims,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn mode(&self) -> ProviderMode {
        match self.backend {
            Backend::Store(_) => ProviderMode::FileStore,
            Backend::Remote(_) => ProviderMode::RemoteService,
            Backend::Hash => ProviderMode::DeterministicHash,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn embed_text(&self, text: &str) -> Result<Arc<EmbeddingVector>, EmbedError> {
        let key = normalize_text(text);
        if let Some(v) = self.cache.read().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(v));
        }
        let computed = match &self.backend {
            Backend::Hash => hash_embed(&key, self.dims),
            Backend::Store(map) => map
                .get(&key)
                .cloned()
                .ok_or_else(|| EmbedError::StoreMiss { text: text.to_string() })?,
            Backend::Remote(cfg) => {
                let mut out = remote_fetch(cfg, self.dims, std::slice::from_ref(&key))?;
                out.pop().expect("one embedding per text")
            }
        };
        Ok(self.insert(key, computed))
    }

    /// Embeds several texts, issuing a single remote request for the uncached ones.
    pub fn embed_many(&self, texts: &[&str]) -> Result<Vec<Arc<EmbeddingVector>>, EmbedError> {
        if let Backend::Remote(cfg) = &self.backend {
            let mut missing: Vec<String> = {
                let cache = self.cache.read().expect("cache poisoned");
                texts
                    .iter()
                    .map(|t| normalize_text(t))
                    .filter(|k| !cache.contains_key(k))
                    .collect()
            };
            missing.sort();
            missing.dedup();
            if !missing.is_empty() {
                let vectors = remote_fetch(cfg, self.dims, &missing)?;
                for (k, v) in missing.into_iter().zip(vectors) {
                    self.insert(k, v);
                }
            }
        }
        texts.iter().map(|t| self.embed_text(t)).collect()
    }

    fn insert(&self, key: String, v: EmbeddingVector) -> Arc<EmbeddingVector> {
        let mut cache = self.cache.write().expect("cache poisoned");
        Arc::clone(cache.entry(key).or_insert_with(|| Arc::new(v)))
    }
}

#[cfg(feature = "remote")]
fn remote_fetch(cfg: &RemoteConfig, dims: usize, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    use std::time::Duration;

    #[derive(Serialize)]
    struct Req<'a> {
        texts: &'a [String],
    }
    #[derive(Deserialize)]
    struct Resp {
        embeddings: Vec<Vec<f64>>,
    }

    let fail = |reason: String| EmbedError::Remote {
        text: texts.first().cloned().unwrap_or_default(),
        reason,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
        .build()
        .into();
    let mut resp = agent
        .post(&cfg.endpoint)
        .send_json(Req { texts })
        .map_err(|e| fail(e.to_string()))?;
    let body: Resp = resp
        .body_mut()
        .read_json()
        .map_err(|e| fail(format!("malformed response: {e}")))?;
    if body.embeddings.len() != texts.len() {
        return Err(fail(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            body.embeddings.len()
        )));
    }
    texts
        .iter()
        .zip(body.embeddings)
        .map(|(text, v)| {
            if v.len() != dims {
                return Err(EmbedError::Remote {
                    text: text.clone(),
                    reason: format!("expected {dims} components, got {}", v.len()),
                });
            }
            EmbeddingVector::new(v)
                .map(EmbeddingVector::normalized)
                .ok_or_else(|| EmbedError::NonFinite { text: text.clone() })
        })
        .collect()
}

#[cfg(not(feature = "remote"))]
fn remote_fetch(_cfg: &RemoteConfig, _dims: usize, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
    Err(EmbedError::Remote {
        text: texts.first().cloned().unwrap_or_default(),
        reason: "built without the `remote` feature".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_hashes_to_zero() {
        let v = hash_embed("", 256);
        assert!(v.is_zero());
        assert_eq!(v.dims(), 256);
        assert!(hash_embed("   \t ", 64).is_zero());
    }

    #[test]
    fn short_strings_are_a_single_gram() {
        let v = hash_embed("ab", 32);
        let h = fnv1a64(b"ab");
        let idx = (h % 32) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        assert_eq!(v.components()[idx], sign);
        assert_eq!(v.components().iter().filter(|&&x| x != 0.0).count(), 1);
    }

    #[test]
    fn nonempty_text_is_unit_length() {
        for t in ["a", "crossing road", "Théft in   the SHOP", "🚗🚗🚗🚗"] {
            let n = hash_embed(t, 64).norm();
            assert!((n - 1.0).abs() < 1e-12, "{t}: {n}");
        }
    }

    #[test]
    fn cosine_conventions() {
        let u = hash_embed("smoking on a bus", 128);
        assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&u, &u.negated()).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&EmbeddingVector::zeros(128), &u).unwrap(), 0.0);
        assert!(matches!(
            cosine(&u, &EmbeddingVector::zeros(3)),
            Err(EmbedError::DimMismatch { left: 128, right: 3 })
        ));
    }

    #[test]
    fn provider_is_deterministic_and_delegates() {
        let p = EmbeddingProvider::hash(256).unwrap();
        let a = p.embed_text("crossing road").unwrap();
        let b = p.embed_text("  Crossing   ROAD ").unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, hash_embed("crossing road", 256));
        assert_eq!(p.mode(), ProviderMode::DeterministicHash);
    }

    #[test]
    fn store_miss_names_text() {
        let store = r#"{"text": "xyz", "vector": [1.0, 0.0, 0.0]}"#;
        let p = EmbeddingProvider::from_store_reader(store.as_bytes()).unwrap();
        let err = p.embed_text("abc").unwrap_err();
        assert!(matches!(&err, EmbedError::StoreMiss { text } if text == "abc"));
        assert!(err.to_string().contains("abc"));
    }

    #[test]
    fn store_vectors_are_normalized() {
        let store = "{\"text\": \"XYZ\", \"vector\": [3.0, 4.0]}\n";
        let p = EmbeddingProvider::from_store_reader(store.as_bytes()).unwrap();
        assert_eq!(p.dims(), 2);
        let v = p.embed_text("xyz").unwrap();
        assert_eq!(v.components(), &[0.6, 0.8]);
    }

    #[test]
    fn store_rejects_duplicates_and_ragged_vectors() {
        let dup = "{\"text\": \"a b\", \"vector\": [1.0]}\n{\"text\": \"A  B\", \"vector\": [1.0]}\n";
        assert!(matches!(
            EmbeddingProvider::from_store_reader(dup.as_bytes()),
            Err(EmbedError::StoreDuplicate { line: 2, .. })
        ));
        let ragged = "{\"text\": \"a\", \"vector\": [1.0]}\n{\"text\": \"b\", \"vector\": [1.0, 2.0]}\n";
        assert!(matches!(
            EmbeddingProvider::from_store_reader(ragged.as_bytes()),
            Err(EmbedError::StoreFormat { line: 2, .. })
        ));
    }

    #[test]
    fn hash_provider_requires_eight_dims() {
        assert!(matches!(EmbeddingProvider::hash(4), Err(EmbedError::BadDims(4))));
    }
}
