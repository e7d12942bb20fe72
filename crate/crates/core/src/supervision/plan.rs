use crate::error::{invalid_input, invalid_param, Result};
use crate::grounding::GroundingMap;
use crate::numerics::{ceil_count, floor_count, top_k_indices, Matrix, Rng};
use crate::textfilter::TokenSequence;

/// Role assignment of every patch for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionPlan {
    pub n_patches: usize,
    /// Top-scoring patches, copied in front of the sequence as hints.
    pub hint_indices: Vec<usize>,
    /// Bottom-scoring patches left visible in the corrupted input.
    pub seen_indices: Vec<usize>,
    /// Complement of `seen_indices`; reconstruction targets.
    pub masked_indices: Vec<usize>,
    pub gamma: f64,
    pub eta: f64,
    /// `masked_indices`, or its best-grounded subset under drop-loss.
    pub loss_target_indices: Vec<usize>,
    pub drop_loss: Option<f64>,
}

impl SupervisionPlan {
    pub fn is_masked(&self, i: usize) -> bool {
        self.masked_indices.binary_search(&i).is_ok()
    }

    pub fn is_loss_target(&self, i: usize) -> bool {
        self.loss_target_indices.binary_search(&i).is_ok()
    }
}

/// Uniform masking ratio in `[lo, hi)`.
pub fn draw_masking_ratio(rng: &mut Rng, lo: f64, hi: f64) -> Result<f64> {
    if !(lo > 0.0 && lo < hi && hi <= 1.0) {
        return Err(invalid_param(format!(
            "masking ratio bounds must satisfy 0 < lo < hi <= 1, got [{lo}, {hi})"
        )));
    }
    Ok(rng.uniform(lo, hi))
}

/// Builds the plan from the perturbed grounding map.
pub fn build_plan(
    map: &GroundingMap,
    gamma: f64,
    eta: f64,
    drop_loss: Option<f64>,
) -> Result<SupervisionPlan> {
    let scores = map
        .perturbed
        .as_ref()
        .ok_or_else(|| invalid_input("grounding map has not been perturbed"))?;
    build_plan_from_scores(scores, gamma, eta, drop_loss)
}

/// Hints are the top `max(1, ⌊η·N⌋)` scores, the seen set is the bottom
/// `N − ⌊γ·N⌋`, everything else is masked.
pub fn build_plan_from_scores(
    scores: &[f32],
    gamma: f64,
    eta: f64,
    drop_loss: Option<f64>,
) -> Result<SupervisionPlan> {
    let n = scores.len();
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(invalid_param(format!(
            "gamma must be in (0, 1), got {gamma}"
        )));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(invalid_param(format!("eta must be in (0, 1], got {eta}")));
    }
    let k_mask = floor_count(gamma, n);
    if k_mask == 0 {
        return Err(invalid_param(format!(
            "gamma {gamma} masks no patch out of {n}"
        )));
    }
    let k_seen = n - k_mask;
    let k_hint = floor_count(eta, n).max(1);

    // One ranking (score descending, index ascending) feeds both ends so hints
    // and the visible context never collide on tied scores.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hint_indices = order[..k_hint].to_vec();
    hint_indices.sort_unstable();
    let mut seen_indices = order[n - k_seen..].to_vec();
    seen_indices.sort_unstable();
    let masked_indices: Vec<usize> = (0..n)
        .filter(|i| seen_indices.binary_search(i).is_err())
        .collect();

    let loss_target_indices = match drop_loss {
        None => masked_indices.clone(),
        Some(r) => {
            if !(r > 0.0 && r <= 1.0) {
                return Err(invalid_param(format!(
                    "drop-loss ratio must be in (0, 1], got {r}"
                )));
            }
            let k = ceil_count(r, n).clamp(1, masked_indices.len());
            let masked_scores: Vec<f32> = masked_indices.iter().map(|&i| scores[i]).collect();
            top_k_indices(&masked_scores, k)?
                .into_iter()
                .map(|c| masked_indices[c])
                .collect()
        }
    };

    Ok(SupervisionPlan {
        n_patches: n,
        hint_indices,
        seen_indices,
        masked_indices,
        gamma,
        eta,
        loss_target_indices,
        drop_loss,
    })
}

/// Image embeddings with every masked row replaced by the mask embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedSequence {
    pub embeddings: Matrix,
    pub mask_embedding: Vec<f32>,
    pub plan: SupervisionPlan,
}

pub fn corrupt(
    image: &TokenSequence,
    plan: &SupervisionPlan,
    mask_embedding: &[f32],
) -> Result<CorruptedSequence> {
    if mask_embedding.len() != image.dim() {
        return Err(invalid_input(format!(
            "mask embedding has {} dims, image has {}",
            mask_embedding.len(),
            image.dim()
        )));
    }
    if plan.n_patches != image.len() {
        return Err(invalid_input(format!(
            "plan covers {} patches, image has {}",
            plan.n_patches,
            image.len()
        )));
    }
    if !mask_embedding.iter().all(|v| v.is_finite()) {
        return Err(invalid_input("non-finite mask embedding"));
    }
    let mut embeddings = image.embeddings().clone();
    for &i in &plan.masked_indices {
        embeddings.set_row(i, mask_embedding);
    }
    Ok(CorruptedSequence {
        embeddings,
        mask_embedding: mask_embedding.to_vec(),
        plan: plan.clone(),
    })
}

/// Copies of the hint patches with their source patch indices.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualHints {
    pub embeddings: Matrix,
    pub source_indices: Vec<usize>,
}

impl VisualHints {
    pub fn gather(image: &TokenSequence, plan: &SupervisionPlan) -> Self {
        Self {
            embeddings: image.embeddings().select_rows(&plan.hint_indices),
            source_indices: plan.hint_indices.clone(),
        }
    }

    pub fn none(dim: usize) -> Self {
        Self {
            embeddings: Matrix::zeros(0, dim),
            source_indices: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.source_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_indices.is_empty()
    }
}
