//! Token importance from softmax attention and sparse deformable selection.
//!
//! Importance of token `n` is the mean attention it receives, i.e. the column
//! mean of the row-stochastic attention matrix. Row means carry no
//! information: every row of a softmax sums to one.

use std::cmp::Ordering;

use crate::config::{check_ratio, sparse_len};
use crate::error::{ensure_finite, CoreError, Result};
use crate::linalg::{gemm, Op};
use crate::scalar::Scalar;

/// Axis a token sequence was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Temporal,
    Spectral,
    Spatial,
}

/// `len` tokens of width `dim` plus the position each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<S> {
    pub tokens: Vec<S>,
    pub dim: usize,
    pub source_indices: Vec<usize>,
    pub axis: Axis,
}

impl<S: Scalar> TokenSequence<S> {
    /// Tokens in source order.
    pub fn new(tokens: Vec<S>, dim: usize, axis: Axis) -> Result<Self> {
        if dim == 0 || tokens.len() % dim != 0 {
            return Err(CoreError::Shape(format!(
                "{} values do not split into tokens of width {dim}",
                tokens.len()
            )));
        }
        ensure_finite("token sequence", &tokens)?;
        let n = tokens.len() / dim;
        Ok(Self {
            tokens,
            dim,
            source_indices: (0..n).collect(),
            axis,
        })
    }

    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }

    pub fn token(&self, i: usize) -> &[S] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }
}

/// Outcome of sparsifying one token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSelection {
    /// Source positions in the order they are fed to the scan.
    pub indices: Vec<usize>,
    /// Importance (temporal, spectral) or angle (spatial) of each chosen token,
    /// aligned with `indices`.
    pub scores: Vec<f64>,
    pub ratio: f64,
    pub source_len: usize,
}

impl SparseSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of source index `i` in the scan order, if selected.
    pub fn rank_of(&self, i: usize) -> Option<usize> {
        self.indices.iter().position(|&x| x == i)
    }
}

/// `softmax(tokens Wq (tokens Wk)^T / sqrt(hidden))`, rows over keys.
/// `tokens` is `n x dim`, both projections `dim x hidden`.
pub fn attention_matrix<S: Scalar>(
    tokens: &[S],
    n: usize,
    dim: usize,
    wq: &[S],
    wk: &[S],
    hidden: usize,
) -> Result<Vec<S>> {
    if n == 0 || hidden == 0 || tokens.len() != n * dim || wq.len() != dim * hidden || wk.len() != dim * hidden {
        return Err(CoreError::Shape(format!(
            "attention over {n} tokens of width {dim} with hidden {hidden}: got {} tokens, {} / {} weights",
            tokens.len(),
            wq.len(),
            wk.len()
        )));
    }
    let mut q = vec![S::zero(); n * hidden];
    let mut k = vec![S::zero(); n * hidden];
    gemm(n, dim, hidden, S::one(), tokens, Op::N, wq, Op::N, S::zero(), &mut q);
    gemm(n, dim, hidden, S::one(), tokens, Op::N, wk, Op::N, S::zero(), &mut k);
    ensure_finite("query projection", &q)?;
    ensure_finite("key projection", &k)?;
    let mut attn = vec![S::zero(); n * n];
    attention_from_projections(&q, &k, n, hidden, &mut attn);
    Ok(attn)
}

/// Scaled dot products of `q` and `k` (`n x hidden`) followed by a row softmax.
pub(crate) fn attention_from_projections<S: Scalar>(q: &[S], k: &[S], n: usize, hidden: usize, out: &mut [S]) {
    let scale = S::one() / S::from_usize(hidden).sqrt();
    gemm(n, hidden, n, scale, q, Op::N, k, Op::T, S::zero(), out);
    softmax_rows(out, n);
}

pub(crate) fn softmax_rows<S: Scalar>(m: &mut [S], n: usize) {
    for row in m.chunks_exact_mut(n) {
        let max = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Column means of an `n x n` attention matrix: the attention each token receives.
pub fn importance_scores<S: Scalar>(attn: &[S], n: usize) -> Vec<S> {
    let mut scores = vec![S::zero(); n];
    for row in attn.chunks_exact(n) {
        for (s, v) in scores.iter_mut().zip(row) {
            *s += *v;
        }
    }
    let inv = S::one() / S::from_usize(n);
    for s in scores.iter_mut() {
        *s *= inv;
    }
    scores
}

/// Indices of the `k` highest scores, highest first; equal scores keep
/// ascending index order.
pub fn rank_descending<S: Scalar>(scores: &[S], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Indices of the `k` lowest values, lowest first; ties by ascending index.
pub fn rank_ascending<S: Scalar>(values: &[S], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Selection behavior shared by the temporal and spectral modules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectOptions {
    pub score_scaling: bool,
    pub natural_order: bool,
}

/// Chosen positions plus the multiplier applied to each chosen token.
#[derive(Debug, Clone)]
pub(crate) struct Pick<S> {
    pub selection: SparseSelection,
    pub factors: Vec<S>,
}

pub(crate) fn pick_by_importance<S: Scalar>(scores: &[S], ratio: f64, opts: SelectOptions) -> Pick<S> {
    let n = scores.len();
    let k = sparse_len(ratio, n);
    let mut indices = rank_descending(scores, k);
    if opts.natural_order {
        indices.sort_unstable();
    }
    let chosen: Vec<S> = indices.iter().map(|&i| scores[i]).collect();
    let factors = if opts.score_scaling {
        let mean = chosen.iter().copied().sum::<S>() / S::from_usize(k);
        chosen.iter().map(|&s| s / mean).collect()
    } else {
        vec![S::one(); k]
    };
    Pick {
        selection: SparseSelection {
            indices,
            scores: chosen.iter().map(|s| s.as_f64()).collect(),
            ratio,
            source_len: n,
        },
        factors,
    }
}

/// Keeps the `max(1, floor(ratio * n))` most important tokens, most important
/// first (source order with `natural_order`). With `score_scaling` each
/// kept token is multiplied by its score over the mean kept score.
pub fn select_tokens<S: Scalar>(
    seq: &TokenSequence<S>,
    scores: &[S],
    ratio: f64,
    opts: SelectOptions,
) -> Result<(TokenSequence<S>, SparseSelection)> {
    check_ratio("sparsity ratio", ratio)?;
    if scores.len() != seq.len() {
        return Err(CoreError::Shape(format!(
            "{} scores for {} tokens",
            scores.len(),
            seq.len()
        )));
    }
    ensure_finite("importance scores", scores)?;
    let pick = pick_by_importance(scores, ratio, opts);
    let mut tokens = Vec::with_capacity(pick.selection.len() * seq.dim);
    for (&i, &f) in pick.selection.indices.iter().zip(&pick.factors) {
        tokens.extend(seq.token(i).iter().map(|&v| v * f));
    }
    let source_indices = pick
        .selection
        .indices
        .iter()
        .map(|&i| seq.source_indices[i])
        .collect();
    Ok((
        TokenSequence {
            tokens,
            dim: seq.dim,
            source_indices,
            axis: seq.axis,
        },
        pick.selection,
    ))
}
