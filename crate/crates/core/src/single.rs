//! One correlation memory used directly as a language model over windows of
//! exactly `h` tokens.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::cmm::CorrelationMemory;
use crate::corpus::Pair;
use crate::embeddings::{argmax_from, EmbeddingTable};
use crate::error::{param, MemoError, Result};
use crate::projections::{flat_h, ProjectionSet};
use crate::real::Real;
use crate::{TokenId, PAD};

/// Scores for every vocabulary entry and the winning token.
///
/// Scores are raw association strengths: a next token stored `k` times
/// under the queried sequence scores about `k`. The padding token never
/// wins.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<F: Real = f64> {
    pub scores: Array1<F>,
    pub token: TokenId,
}

impl<F: Real> Prediction<F> {
    pub(crate) fn from_scores(scores: Array1<F>) -> Self {
        let token = best_token(scores.view());
        Prediction { scores, token }
    }

    /// Score of `token`.
    pub fn score(&self, token: TokenId) -> f64 {
        self.scores[token as usize].as_f64()
    }

    /// Score of the winning token.
    pub fn best_score(&self) -> f64 {
        self.score(self.token)
    }
}

pub(crate) fn best_token<F: Real>(scores: ArrayView1<'_, F>) -> TokenId {
    argmax_from(scores, PAD as usize + 1).unwrap_or(PAD as usize) as TokenId
}

/// A window of `h` tokens is keyed by concatenating the `h` projected token
/// vectors; the key maps to the embedding of the next token.
#[derive(Debug, Clone)]
pub struct SingleLayerLM<F: Real = f64> {
    table: EmbeddingTable<F>,
    proj: ProjectionSet<F>,
    mem: CorrelationMemory<F>,
    h: usize,
}

impl<F: Real> SingleLayerLM<F> {
    /// Same table and projection as a one-layer stacked model with the same
    /// `(n, h, d, seed)`.
    pub fn new(n: usize, h: usize, d: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(param("vocabulary must hold a token besides padding"));
        }
        let table = EmbeddingTable::build(n, d, seed)?;
        let proj = ProjectionSet::build(h, 1, d, seed)?;
        Ok(SingleLayerLM { table, proj, mem: CorrelationMemory::new(d, d), h })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn table(&self) -> &EmbeddingTable<F> {
        &self.table
    }

    pub fn memory(&self) -> &CorrelationMemory<F> {
        &self.mem
    }

    pub fn memory_mut(&mut self) -> &mut CorrelationMemory<F> {
        &mut self.mem
    }

    fn check_len(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.len() != self.h {
            return Err(MemoError::Input(format!(
                "expected {} tokens, got {}",
                self.h,
                tokens.len()
            )));
        }
        Ok(())
    }

    /// Keys of several sequences, one row each.
    pub fn encode_batch(&self, seqs: &[&[TokenId]]) -> Result<Array2<F>> {
        let mut flat = Vec::with_capacity(seqs.len() * self.h);
        for s in seqs {
            self.check_len(s)?;
            flat.extend_from_slice(s);
        }
        let x = self.table.embed(&flat)?;
        let projected = self.proj.apply_wv(x.view(), 1)?;
        flat_h(projected.view(), self.h)
    }

    /// Concatenation of the `h` projected token vectors; norm about one.
    pub fn encode_sequence(&self, tokens: &[TokenId]) -> Result<Array1<F>> {
        Ok(self.encode_batch(&[tokens])?.row(0).to_owned())
    }

    pub fn memorize_pair(&mut self, tokens: &[TokenId], next: TokenId) -> Result<()> {
        self.memorize_pairs(&[Pair { tokens: tokens.to_vec(), next }])
    }

    pub fn memorize_pairs(&mut self, pairs: &[Pair]) -> Result<()> {
        let seqs: Vec<&[TokenId]> = pairs.iter().map(|p| p.tokens.as_slice()).collect();
        let keys = self.encode_batch(&seqs)?;
        let next: Vec<TokenId> = pairs.iter().map(|p| p.next).collect();
        let values = self.table.embed(&next)?;
        self.mem.store(keys.view(), values.view(), None)
    }

    pub fn predict(&self, tokens: &[TokenId]) -> Result<Prediction<F>> {
        let key = self.encode_batch(&[tokens])?;
        let out = self.mem.retrieve(key.view())?;
        Ok(Prediction::from_scores(self.table.decode(out.row(0))))
    }

    /// Winning token for each sequence.
    pub fn predict_batch(&self, seqs: &[&[TokenId]]) -> Result<Vec<TokenId>> {
        let keys = self.encode_batch(seqs)?;
        let out = self.mem.retrieve(keys.view())?;
        let scores = out.dot(&self.table.rows().t());
        Ok(scores.axis_iter(Axis(0)).map(|r| best_token(r)).collect())
    }

    /// Share of `batch` whose winning token equals the recorded next token.
    pub fn accuracy(&self, batch: &[Pair]) -> Result<f64> {
        if batch.is_empty() {
            return Err(param("accuracy needs a nonempty batch"));
        }
        let mut hits = 0usize;
        for chunk in batch.chunks(256) {
            let seqs: Vec<&[TokenId]> = chunk.iter().map(|p| p.tokens.as_slice()).collect();
            let got = self.predict_batch(&seqs)?;
            hits += got.iter().zip(chunk).filter(|(g, p)| **g == p.next).count();
        }
        Ok(hits as f64 / batch.len() as f64)
    }
}
