use super::model::ToyModel;
use super::synthetic::SyntheticSample;
use super::train::{prepare_sample, sample_loss_and_grad};
use crate::config::SegrosConfig;
use crate::error::{invalid_param, Result};
use crate::numerics::Rng;

const STEP: f64 = 1e-4;
/// Denominator floor so parameters with a vanishing gradient compare by
/// absolute error.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter with the largest error.
    pub worst_index: usize,
    pub checked: usize,
}

/// Central differences of the total loss against the analytic gradient on a
/// random subset of parameters, with the supervision plan held fixed.
pub fn finite_diff_gradient_check(
    model: &ToyModel,
    sample: &SyntheticSample,
    cfg: &SegrosConfig,
    n_params: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if n_params == 0 {
        return Err(invalid_param("gradient check needs at least one parameter"));
    }
    let mut rng = Rng::new(seed);
    let prepared = prepare_sample(model, sample, cfg, &mut rng, None)?;
    let (_, analytic) = sample_loss_and_grad(model, sample, &prepared, cfg.lambda)?;

    let mut indices: Vec<usize> = (0..model.param_count()).collect();
    rng.shuffle(&mut indices);
    indices.truncate(n_params);

    let mut probe = model.clone();
    let mut total_at = |i: usize, value: f64| -> Result<f64> {
        probe.params_mut()[i] = value;
        let (report, _) = sample_loss_and_grad(&probe, sample, &prepared, cfg.lambda)?;
        Ok(report.total)
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: indices[0],
        checked: indices.len(),
    };
    for &i in &indices {
        let p = model.params()[i];
        let up = total_at(i, p + STEP)?;
        let down = total_at(i, p - STEP)?;
        total_at(i, p)?;
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}
