//! Fixed-length feature vectors used for frame keys and object appearance.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("embedding must have at least one component")]
    Empty,
    #[error("embedding component {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("incompatible embeddings: dim {left} vs dim {right}")]
    DimMismatch { left: usize, right: usize },
}

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn zeros(dim: usize) -> Result<Self, EmbeddingError> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Multiplies every component by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self, EmbeddingError> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn ensure_same_dim(&self, other: &Embedding) -> Result<(), EmbeddingError> {
        if self.dim() != other.dim() {
            return Err(EmbeddingError::DimMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }
}

/// Cosine similarity in `[-1, 1]`. A zero-norm operand yields `0.0`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    a.ensure_same_dim(b)?;
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let (na, nb): (f64, f64) = (a.0.iter().map(|x| x * x).sum(), b.0.iter().map(|x| x * x).sum());
    // sqrt of the product keeps cosine(a, a) exactly 1
    let mut denom = (na * nb).sqrt();
    if !denom.is_finite() {
        denom = a.norm() * b.norm();
    }
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}
