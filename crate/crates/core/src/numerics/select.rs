use std::cmp::Ordering;
use std::ops::Deref;

use crate::error::{invalid_param, Result};

/// A vector of per-token or per-patch scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreVector(Vec<f32>);

impl ScoreVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.0
    }

    /// Sum accumulated in `f64`.
    pub fn sum(&self) -> f64 {
        self.0.iter().map(|&v| v as f64).sum()
    }
}

impl Deref for ScoreVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for ScoreVector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

/// Affine map onto `[0, 1]`. A constant vector maps to all zeros.
pub fn minmax_scale(v: &[f32]) -> ScoreVector {
    let (lo, hi) = v
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if v.is_empty() || hi <= lo {
        return ScoreVector(vec![0.0; v.len()]);
    }
    let (lo, range) = (lo as f64, hi as f64 - lo as f64);
    ScoreVector(
        v.iter()
            .map(|&x| (((x as f64 - lo) / range) as f32).clamp(0.0, 1.0))
            .collect(),
    )
}

fn ranked(v: &[f32], k: usize, order: impl Fn(f32, f32) -> Ordering) -> Result<Vec<usize>> {
    if k == 0 || k > v.len() {
        return Err(invalid_param(format!(
            "selection size {k} outside 1..={}",
            v.len()
        )));
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    // stable sort keeps ascending index among equal scores
    idx.sort_by(|&a, &b| order(v[a], v[b]));
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx)
}

/// Indices of the `k` largest values, ties to the lower index, sorted ascending.
pub fn top_k_indices(v: &[f32], k: usize) -> Result<Vec<usize>> {
    ranked(v, k, |a, b| b.total_cmp(&a))
}

/// Indices of the `k` smallest values, ties to the lower index, sorted ascending.
pub fn bottom_k_indices(v: &[f32], k: usize) -> Result<Vec<usize>> {
    ranked(v, k, |a, b| a.total_cmp(&b))
}
