use ndarray::Array2;

use crate::error::{invalid_input, Result};
use crate::numerics::Matrix;
use crate::supervision::SupervisionPlan;

/// Masked reconstruction loss with its gradient w.r.t. the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionLoss {
    pub value: f64,
    /// Contribution of each patch; sums to `value`, zero off-target.
    pub per_position: Vec<f64>,
    pub grad: Array2<f64>,
}

/// Losses of one training step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub segros_loss: f64,
    pub i2t_loss: f64,
    pub total: f64,
    pub per_position: Vec<f64>,
    pub lambda: f64,
}

impl LossReport {
    pub fn new(recon: &ReconstructionLoss, i2t_loss: f64, lambda: f64) -> Self {
        Self {
            segros_loss: recon.value,
            i2t_loss,
            total: recon.value + lambda * i2t_loss,
            per_position: recon.per_position.clone(),
            lambda,
        }
    }
}

fn targets(plan: &SupervisionPlan, rows: usize) -> Result<&[usize]> {
    if rows != plan.n_patches {
        return Err(invalid_input(format!(
            "{rows} prediction rows for a plan over {} patches",
            plan.n_patches
        )));
    }
    if plan.loss_target_indices.is_empty() {
        return Err(invalid_input("plan has no loss targets"));
    }
    Ok(&plan.loss_target_indices)
}

/// Mean squared error over the plan's loss targets, averaged over rows and
/// feature dimensions.
pub fn segros_loss_continuous(
    pred: &Array2<f64>,
    target: &Matrix,
    plan: &SupervisionPlan,
) -> Result<ReconstructionLoss> {
    if pred.dim() != (target.rows(), target.cols()) {
        return Err(invalid_input(format!(
            "prediction shape {:?} differs from target {}x{}",
            pred.dim(),
            target.rows(),
            target.cols()
        )));
    }
    let idx = targets(plan, pred.nrows())?;
    let denom = (idx.len() * pred.ncols()) as f64;
    let mut per_position = vec![0.0; pred.nrows()];
    let mut grad = Array2::zeros(pred.raw_dim());
    for &i in idx {
        let mut sq = 0.0;
        for (j, &t) in target.row(i).iter().enumerate() {
            let diff = pred[[i, j]] - t as f64;
            sq += diff * diff;
            grad[[i, j]] = 2.0 * diff / denom;
        }
        per_position[i] = sq / denom;
    }
    let value = per_position.iter().sum();
    Ok(ReconstructionLoss {
        value,
        per_position,
        grad,
    })
}

/// Mean negative log-likelihood of the ground-truth codes over the plan's
/// loss targets.
pub fn segros_loss_discrete(
    logits: &Array2<f64>,
    codes: &[usize],
    plan: &SupervisionPlan,
) -> Result<ReconstructionLoss> {
    if codes.len() != logits.nrows() {
        return Err(invalid_input(format!(
            "{} codes for {} logit rows",
            codes.len(),
            logits.nrows()
        )));
    }
    let v = logits.ncols();
    if let Some(&c) = codes.iter().find(|&&c| c >= v) {
        return Err(invalid_input(format!("code {c} outside vocabulary of {v}")));
    }
    let idx = targets(plan, logits.nrows())?;
    let n = idx.len() as f64;
    let mut per_position = vec![0.0; logits.nrows()];
    let mut grad = Array2::zeros(logits.raw_dim());
    for &i in idx {
        let r = logits.row(i);
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = r.iter().map(|&x| (x - max).exp()).sum();
        let log_z = max + sum.ln();
        per_position[i] = (log_z - r[codes[i]]) / n;
        for k in 0..v {
            let p = (r[k] - log_z).exp();
            grad[[i, k]] = (p - if k == codes[i] { 1.0 } else { 0.0 }) / n;
        }
    }
    let value = per_position.iter().sum();
    Ok(ReconstructionLoss {
        value,
        per_position,
        grad,
    })
}
