//! Caption retrieval around a discovered direction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::Dataset;
use crate::linalg::{dot, norm, normalized};

#[derive(Debug, Error, PartialEq)]
pub enum InterpretError {
    #[error("query vector vanished (norm below 1e-12)")]
    ZeroVector,
    #[error("corpus carries no captions")]
    NoCaptions,
    #[error("dimension mismatch: corpus has {corpus}, query has {query}")]
    DimensionMismatch { corpus: usize, query: usize },
    #[error("top_k = {top_k} exceeds corpus size {size}")]
    TooMany { top_k: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub corpus_index: usize,
    pub similarity: f64,
    pub caption: String,
}

/// `normalize(class + scale·direction)`.
pub fn build_query(class_embedding: &[f64], direction: &[f64], scale: f64) -> Result<Vec<f64>, InterpretError> {
    if class_embedding.len() != direction.len() {
        return Err(InterpretError::DimensionMismatch { corpus: class_embedding.len(), query: direction.len() });
    }
    let q: Vec<f64> = class_embedding.iter().zip(direction).map(|(c, d)| c + scale * d).collect();
    normalized(&q, 1e-12).ok_or(InterpretError::ZeroVector)
}

/// Exhaustive cosine scan; ties keep the lower corpus index first.
pub fn retrieve(query: &[f64], corpus: &Dataset, top_k: usize) -> Result<Vec<RetrievalHit>, InterpretError> {
    let captions = corpus.captions().ok_or(InterpretError::NoCaptions)?;
    if query.len() != corpus.dim() {
        return Err(InterpretError::DimensionMismatch { corpus: corpus.dim(), query: query.len() });
    }
    if top_k > corpus.len() {
        return Err(InterpretError::TooMany { top_k, size: corpus.len() });
    }
    let qn = norm(query);
    if qn < 1e-12 {
        return Err(InterpretError::ZeroVector);
    }
    let mut sims: Vec<(usize, f64)> = corpus
        .embeddings()
        .iter_rows()
        .enumerate()
        .map(|(i, row)| {
            let rn = norm(row);
            let s = if rn == 0.0 { 0.0 } else { dot(query, row) / (qn * rn) };
            (i, s.clamp(-1.0, 1.0))
        })
        .collect();
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(sims
        .into_iter()
        .take(top_k)
        .map(|(i, s)| RetrievalHit { corpus_index: i, similarity: s, caption: captions[i].clone() })
        .collect())
}
