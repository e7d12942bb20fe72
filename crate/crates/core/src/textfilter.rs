//! Discriminative text-token filtering.
//!
//! Each non-special text token gets two scores: the attention mass it
//! receives from the other text tokens (intra) and from the image patches
//! (inter). Both come from temperature softmaxes over cosine affinities of
//! the raw, pre-model embeddings. Special tokens (sequence start/end and
//! similar attention sinks) are removed before any softmax, so no probability
//! mass leaks to them.

use crate::error::{invalid_input, invalid_param, Result};
use crate::numerics::{
    floor_count, l2_normalize_rows, matmul_transposed, minmax_scale, row_softmax, top_k_indices,
    Matrix, ScoreVector,
};

/// Embeddings of one text prompt or one image, with caller-provided flags
/// marking special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    embeddings: Matrix,
    special: Vec<bool>,
}

impl TokenSequence {
    pub fn new(embeddings: Matrix, special: Vec<bool>) -> Result<Self> {
        if special.len() != embeddings.rows() {
            return Err(invalid_input(format!(
                "{} special flags for {} tokens",
                special.len(),
                embeddings.rows()
            )));
        }
        Ok(Self {
            embeddings,
            special,
        })
    }

    /// Sequence without special tokens (image patches).
    pub fn plain(embeddings: Matrix) -> Self {
        let special = vec![false; embeddings.rows()];
        Self {
            embeddings,
            special,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn special_flags(&self) -> &[bool] {
        &self.special
    }

    /// Indices of the non-special tokens, ascending.
    pub fn content_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.special[i]).collect()
    }

    /// ℓ₂-normalized embeddings of the non-special tokens, with their indices.
    fn normalized_content(&self) -> Result<(Vec<usize>, Matrix)> {
        let idx = self.content_indices();
        if idx.is_empty() {
            return Err(invalid_input("sequence has no non-special tokens"));
        }
        let normalized = l2_normalize_rows(&self.embeddings.select_rows(&idx))?;
        Ok((idx, normalized))
    }
}

/// Output of [`filter_text_tokens`]. Score vectors span all `L_T` positions;
/// special positions hold `f32::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFilterResult {
    pub intra_scores: ScoreVector,
    pub inter_scores: ScoreVector,
    pub unified_scores: ScoreVector,
    pub mask: Vec<bool>,
    pub kept_indices: Vec<usize>,
    pub k_t: usize,
}

fn scatter(len: usize, idx: &[usize], values: &[f32]) -> ScoreVector {
    let mut out = vec![f32::NEG_INFINITY; len];
    for (&i, &v) in idx.iter().zip(values) {
        out[i] = v;
    }
    ScoreVector::new(out)
}

fn column_sums(p: &Matrix) -> Vec<f32> {
    let mut acc = vec![0.0f64; p.cols()];
    for row in p.iter_rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

fn compact(scores: &ScoreVector, idx: &[usize]) -> Vec<f32> {
    idx.iter().map(|&i| scores[i]).collect()
}

/// Attention mass each text token receives from the (non-special) prompt.
pub fn intra_affinity_scores(text: &TokenSequence, tau: f64) -> Result<ScoreVector> {
    let (idx, z) = text.normalized_content()?;
    let self_affinity = matmul_transposed(&z, &z)?;
    let p = row_softmax(&self_affinity, tau)?;
    Ok(scatter(text.len(), &idx, &column_sums(&p)))
}

/// Attention mass each text token receives from all image patches.
pub fn inter_affinity_scores(
    text: &TokenSequence,
    image: &TokenSequence,
    tau: f64,
) -> Result<ScoreVector> {
    if text.dim() != image.dim() {
        return Err(invalid_input(format!(
            "text dim {} != image dim {}",
            text.dim(),
            image.dim()
        )));
    }
    if image.is_empty() {
        return Err(invalid_input("image has no patches"));
    }
    let (idx, zt) = text.normalized_content()?;
    let zi = l2_normalize_rows(image.embeddings())?;
    let cross = matmul_transposed(&zi, &zt)?;
    let p = row_softmax(&cross, tau)?;
    Ok(scatter(text.len(), &idx, &column_sums(&p)))
}

/// `max(1, floor(rho * content_len))`.
pub fn kept_token_count(rho: f64, content_len: usize) -> usize {
    floor_count(rho, content_len).max(1)
}

/// Keeps the `max(1, ⌊ρ·L_eff⌋)` tokens with the largest sum of min-max
/// scaled intra and inter scores.
pub fn filter_text_tokens(
    text: &TokenSequence,
    image: &TokenSequence,
    rho: f64,
    tau: f64,
) -> Result<TextFilterResult> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(invalid_param(format!("rho must be in (0, 1], got {rho}")));
    }
    let intra = intra_affinity_scores(text, tau)?;
    let inter = inter_affinity_scores(text, image, tau)?;
    let idx = text.content_indices();

    let intra_n = minmax_scale(&compact(&intra, &idx));
    let inter_n = minmax_scale(&compact(&inter, &idx));
    let omega: Vec<f32> = intra_n
        .iter()
        .zip(inter_n.iter())
        .map(|(a, b)| a + b)
        .collect();

    let k_t = kept_token_count(rho, idx.len());
    let kept_indices: Vec<usize> = top_k_indices(&omega, k_t)?
        .into_iter()
        .map(|c| idx[c])
        .collect();
    let mut mask = vec![false; text.len()];
    for &j in &kept_indices {
        mask[j] = true;
    }
    Ok(TextFilterResult {
        intra_scores: intra,
        inter_scores: inter,
        unified_scores: scatter(text.len(), &idx, &omega),
        mask,
        kept_indices,
        k_t,
    })
}
