//! Visual grounding map: how much text→image attention the kept text tokens
//! put on each patch.

use crate::error::{invalid_input, invalid_param, Result};
use crate::numerics::{
    l2_normalize_rows, matmul_transposed, minmax_scale, row_softmax, uniform_vector, Rng,
    ScoreVector,
};
use crate::textfilter::{TextFilterResult, TokenSequence};

pub const DEFAULT_NOISE_SCALE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundingMap {
    /// Filter-weighted attention mass per patch; sums to the kept-token count.
    pub raw: ScoreVector,
    /// `raw` min-max scaled to `[0, 1]`.
    pub normalized: ScoreVector,
    /// `normalized + ξ`, `ξ ~ U[0, α)`. Not re-clamped.
    pub perturbed: Option<ScoreVector>,
    /// Optional `(rows, cols)` patch grid, only used for rendering.
    pub grid: Option<(usize, usize)>,
    pub noise_scale: f64,
    pub rng_seed: u64,
}

impl GroundingMap {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn with_grid(mut self, rows: usize, cols: usize) -> Self {
        self.grid = Some((rows, cols));
        self
    }
}

/// `m_i = Σ_j w_j · softmax_i(⟨ẑ_j, ẑ_i⟩ / τ)` over the kept text tokens `j`.
pub fn grounding_map(
    text: &TokenSequence,
    image: &TokenSequence,
    filter: &TextFilterResult,
    tau: f64,
) -> Result<GroundingMap> {
    if text.dim() != image.dim() {
        return Err(invalid_input(format!(
            "text dim {} != image dim {}",
            text.dim(),
            image.dim()
        )));
    }
    if filter.mask.len() != text.len() {
        return Err(invalid_input(format!(
            "filter mask has {} entries for {} text tokens",
            filter.mask.len(),
            text.len()
        )));
    }
    if image.is_empty() {
        return Err(invalid_input("image has no patches"));
    }

    let kept: Vec<usize> = (0..text.len()).filter(|&j| filter.mask[j]).collect();
    let mut raw = vec![0.0f64; image.len()];
    if !kept.is_empty() {
        let zt = l2_normalize_rows(&text.embeddings().select_rows(&kept))?;
        let zi = l2_normalize_rows(image.embeddings())?;
        let p = row_softmax(&matmul_transposed(&zt, &zi)?, tau)?;
        for row in p.iter_rows() {
            for (m, &v) in raw.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
    }
    let raw: Vec<f32> = raw.into_iter().map(|v| v as f32).collect();
    let normalized = minmax_scale(&raw);
    Ok(GroundingMap {
        raw: ScoreVector::new(raw),
        normalized,
        perturbed: None,
        grid: None,
        noise_scale: 0.0,
        rng_seed: 0,
    })
}

/// Adds fresh `U[0, α)` noise to the normalized map. Called once per step.
pub fn perturb(map: &GroundingMap, alpha: f64, rng: &mut Rng) -> Result<GroundingMap> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(invalid_param(format!(
            "noise scale must be >= 0, got {alpha}"
        )));
    }
    let alpha32 = alpha as f32;
    let seed = rng.seed();
    let noise = uniform_vector(rng, map.len(), 0.0, alpha32)?;
    let perturbed = map
        .normalized
        .iter()
        .zip(noise.iter())
        .map(|(&m, &xi)| {
            let mut p = m + xi;
            // keep the realised increment strictly below alpha after rounding
            while alpha32 > 0.0 && p - m >= alpha32 {
                p = p.next_down();
            }
            p
        })
        .collect();
    Ok(GroundingMap {
        perturbed: Some(ScoreVector::new(perturbed)),
        noise_scale: alpha,
        rng_seed: seed,
        ..map.clone()
    })
}
