use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::net;

pub const DEFAULT_DIMENSION: usize = 256;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Accepts values that already have unit L2 norm.
    pub fn new(values: Vec<f64>) -> Result<Self, RetrievalError> {
        let norm = l2(&values);
        if values.is_empty() || norm == 0.0 {
            return Err(RetrievalError::ZeroVector);
        }
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(RetrievalError::NotNormalized(norm));
        }
        Ok(Self(values))
    }

    /// Scales arbitrary non-zero values to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self, RetrievalError> {
        let norm = l2(&values);
        if values.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::ZeroVector);
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Neg for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn neg(self) -> EmbeddingVector {
        EmbeddingVector(self.0.iter().map(|v| -v).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = RetrievalError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

fn l2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Similarity in `[0, 1]`: `(1 + cos(u, v)) / 2`.
pub fn similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if u.dimension() != v.dimension() {
        return Err(RetrievalError::DimensionMismatch { expected: u.dimension(), actual: v.dimension() });
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    Ok(((1.0 + dot) / 2.0).clamp(0.0, 1.0))
}

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in the index.
    fn id(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Deterministic bag-of-tokens embedder: each token is hashed with FNV-1a
/// into one of `dimension` buckets, counts are accumulated and the vector is
/// L2-normalized.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl Embedder for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-fnv1a64/{}", self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let mut counts = vec![0.0; self.dimension];
        let mut any = false;
        for token in tokenize(text) {
            let bucket = (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize;
            counts[bucket] += 1.0;
            any = true;
        }
        if !any {
            // Text made only of punctuation has no tokens to count.
            return Err(RetrievalError::EmptyText);
        }
        EmbeddingVector::normalized(counts)
    }
}

/// Embedder backed by an OpenAI-style `/embeddings` endpoint:
/// `POST {endpoint} {"model", "input"}` answered by `{"data": [{"embedding": [...]}]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    pub endpoint: String,
    pub model_name: String,
    pub api_key: Option<String>,
    pub dimension: usize,
    pub timeout: Duration,
}

impl Embedder for RemoteEmbedder {
    fn id(&self) -> String {
        format!("remote:{}/{}", self.model_name, self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        if text.trim().is_empty() {
            return Err(RetrievalError::EmptyText);
        }
        let body = serde_json::json!({ "model": self.model_name, "input": text });
        let (status, text) = net::post_json(&self.endpoint, self.api_key.as_deref(), &body, self.timeout)
            .map_err(|e| RetrievalError::Remote(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(RetrievalError::Remote(format!("status {status}: {text}")));
        }
        let parsed: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| RetrievalError::Remote(e.to_string()))?;
        let values: Vec<f64> = parsed["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| RetrievalError::Remote("response has no data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0))
            .collect();
        if values.len() != self.dimension {
            return Err(RetrievalError::DimensionMismatch { expected: self.dimension, actual: values.len() });
        }
        EmbeddingVector::normalized(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn embedding_is_deterministic() {
        let e = HashingEmbedder::default();
        let a = e.embed("Ecology Model of a pond").unwrap();
        let b = e.embed("Ecology Model of a pond").unwrap();
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn token_order_does_not_matter() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("run simulation").unwrap(), e.embed("simulation run").unwrap());
        assert_eq!(e.embed("Run, Simulation!").unwrap(), e.embed("simulation run").unwrap());
    }

    #[test]
    fn unit_norm() {
        let v = HashingEmbedder::default().embed("ecology").unwrap();
        assert!((l2(v.values()) - 1.0).abs() < 1e-12);
        assert_eq!(v.dimension(), 256);
    }

    #[test]
    fn empty_text_rejected() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("   "), Err(RetrievalError::EmptyText));
        assert_eq!(e.embed("?!"), Err(RetrievalError::EmptyText));
    }

    #[test]
    fn similarity_extremes() {
        let e = HashingEmbedder::default();
        let u = e.embed("ecology model").unwrap();
        assert!((similarity(&u, &u).unwrap() - 1.0).abs() < 1e-12);
        assert!(similarity(&u, &-&u).unwrap().abs() < 1e-12);

        let x = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let y = EmbeddingVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(similarity(&x, &y).unwrap(), 0.5);
    }

    #[test]
    fn similarity_dimension_mismatch() {
        let x = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let y = EmbeddingVector::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(
            similarity(&x, &y),
            Err(RetrievalError::DimensionMismatch { expected: 2, actual: 3 })
        );
    }

    #[test]
    fn vector_invariants() {
        assert_eq!(EmbeddingVector::new(vec![0.0, 0.0]), Err(RetrievalError::ZeroVector));
        assert!(matches!(EmbeddingVector::new(vec![2.0]), Err(RetrievalError::NotNormalized(_))));
        assert!(serde_json::from_str::<EmbeddingVector>("[3.0, 4.0]").is_err());
        let v: EmbeddingVector = serde_json::from_str("[0.6, 0.8]").unwrap();
        assert_eq!(v.values(), &[0.6, 0.8]);
    }
}
