use super::loss::{segros_loss_continuous, segros_loss_discrete, LossReport};
use super::model::ToyModel;
use super::params::{Mode, ToyModelConfig};
use super::synthetic::SyntheticSample;
use crate::config::{MaskingStrategy, SegrosConfig};
use crate::error::{invalid_input, invalid_param, Result};
use crate::grounding::{grounding_map, perturb, GroundingMap};
use crate::numerics::{top_k_indices, uniform_vector, Rng};
use crate::supervision::{
    build_attention_mask, build_plan, build_plan_from_scores, corrupt, draw_masking_ratio,
    AttentionMask, CorruptedSequence, SupervisionPlan, VisualHints,
};
use crate::textfilter::filter_text_tokens;

/// Step size of the plain gradient-descent trainer.
pub const DEFAULT_LR: f64 = 0.5;

/// Model inputs for one sample at one step.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub map: GroundingMap,
    pub plan: SupervisionPlan,
    pub hints: VisualHints,
    pub corrupted: CorruptedSequence,
    pub mask: AttentionMask,
}

/// Runs filter, grounding, perturbation, ratio draw, plan, corruption and
/// mask construction. `gamma` overrides the random draw.
pub fn prepare_sample(
    model: &ToyModel,
    sample: &SyntheticSample,
    cfg: &SegrosConfig,
    rng: &mut Rng,
    gamma: Option<f64>,
) -> Result<PreparedSample> {
    cfg.validate()?;
    let filter = filter_text_tokens(&sample.text, &sample.image, cfg.rho, cfg.tau)?;
    let map = grounding_map(&sample.text, &sample.image, &filter, cfg.tau)?;
    let map = perturb(&map, cfg.alpha, rng)?;
    let gamma = match gamma {
        Some(g) => g,
        None => draw_masking_ratio(rng, cfg.gamma_lo, cfg.gamma_hi)?,
    };
    let plan = match cfg.masking {
        MaskingStrategy::Grounded => build_plan(&map, gamma, cfg.eta, cfg.drop_loss)?,
        MaskingStrategy::Random => {
            let scores = uniform_vector(rng, sample.image.len(), 0.0, 1.0)?;
            build_plan_from_scores(&scores, gamma, cfg.eta, cfg.drop_loss)?
        }
    };
    let corrupted = corrupt(&sample.image, &plan, &model.mask_embedding())?;
    let hints = VisualHints::gather(&sample.image, &plan);
    let mask = build_attention_mask(hints.len(), sample.text.len(), sample.image.len());
    Ok(PreparedSample {
        map,
        plan,
        hints,
        corrupted,
        mask,
    })
}

/// Losses and the gradient of `L_SeGroS + λ·L_i2t` for one prepared sample.
pub fn sample_loss_and_grad(
    model: &ToyModel,
    sample: &SyntheticSample,
    prepared: &PreparedSample,
    lambda: f64,
) -> Result<(LossReport, Vec<f64>)> {
    let (out, tape) = model.t2i_forward(
        &prepared.hints,
        &sample.text,
        &prepared.corrupted,
        &prepared.mask,
    )?;
    let recon = match model.mode() {
        Mode::Continuous => {
            segros_loss_continuous(&out, sample.image.embeddings(), &prepared.plan)?
        }
        Mode::Discrete => segros_loss_discrete(&out, &sample.discrete_codes, &prepared.plan)?,
    };
    let mut grads = vec![0.0; model.param_count()];
    model.t2i_backward(&tape, &recon.grad, &mut grads);
    let (i2t, i2t_tape) =
        model.i2t_forward(&sample.image, &sample.question_codes, &sample.answer_codes)?;
    if lambda != 0.0 {
        model.i2t_backward(&i2t_tape, lambda, &mut grads);
    }
    Ok((LossReport::new(&recon, i2t.mean, lambda), grads))
}

/// Batch-averaged losses of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub segros_loss: f64,
    pub i2t_loss: f64,
    pub total: f64,
    pub samples: Vec<LossReport>,
    pub plans: Vec<SupervisionPlan>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub steps: Vec<StepReport>,
}

impl RunSummary {
    pub fn first(&self) -> Option<&StepReport> {
        self.steps.first()
    }

    pub fn last(&self) -> Option<&StepReport> {
        self.steps.last()
    }

    pub fn all_finite(&self) -> bool {
        self.steps
            .iter()
            .all(|s| s.segros_loss.is_finite() && s.i2t_loss.is_finite() && s.total.is_finite())
    }

    /// Mean total loss of the first and last tenth of the run.
    pub fn head_tail_means(&self) -> Option<(f64, f64)> {
        let n = self.steps.len();
        if n < 2 {
            return None;
        }
        let w = (n / 10).max(1);
        let mean = |s: &[StepReport]| s.iter().map(|r| r.total).sum::<f64>() / s.len() as f64;
        Some((mean(&self.steps[..w]), mean(&self.steps[n - w..])))
    }

    /// The last tenth of the run has a lower mean loss than the first.
    pub fn decreasing_on_average(&self) -> bool {
        self.head_tail_means().is_some_and(|(h, t)| t < h)
    }
}

/// Plain gradient descent on a fixed batch.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ToyModel,
    pub cfg: SegrosConfig,
    pub lr: f64,
    rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(model: ToyModel, cfg: SegrosConfig, lr: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(invalid_param(format!(
                "learning rate {lr} must be positive"
            )));
        }
        Ok(Self {
            model,
            cfg,
            lr,
            rng: Rng::new(seed),
            step: 0,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn step(&mut self, batch: &[SyntheticSample]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(invalid_input("training batch is empty"));
        }
        let lambda = self.cfg.lambda;
        let mut grads = vec![0.0; self.model.param_count()];
        let mut samples = Vec::with_capacity(batch.len());
        let mut plans = Vec::with_capacity(batch.len());
        for sample in batch {
            let prepared = prepare_sample(&self.model, sample, &self.cfg, &mut self.rng, None)?;
            let (report, g) = sample_loss_and_grad(&self.model, sample, &prepared, lambda)?;
            grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            samples.push(report);
            plans.push(prepared.plan);
        }
        let n = batch.len() as f64;
        grads.iter_mut().for_each(|g| *g /= n);
        self.model.apply_gradient(&grads, self.lr);
        self.step += 1;
        let segros_loss = samples.iter().map(|r| r.segros_loss).sum::<f64>() / n;
        let i2t_loss = samples.iter().map(|r| r.i2t_loss).sum::<f64>() / n;
        Ok(StepReport {
            step: self.step,
            segros_loss,
            i2t_loss,
            total: segros_loss + lambda * i2t_loss,
            samples,
            plans,
        })
    }

    pub fn run(&mut self, batch: &[SyntheticSample], steps: usize) -> Result<RunSummary> {
        let mut summary = RunSummary::default();
        for _ in 0..steps {
            summary.steps.push(self.step(batch)?);
        }
        Ok(summary)
    }
}

/// Precision of the top-|planted| patches of the unperturbed map.
pub fn planted_recovery_precision(sample: &SyntheticSample, tau: f64, rho: f64) -> Result<f64> {
    let filter = filter_text_tokens(&sample.text, &sample.image, rho, tau)?;
    let map = grounding_map(&sample.text, &sample.image, &filter, tau)?;
    let planted = sample.planted_indices();
    let top = top_k_indices(&map.normalized, planted.len())?;
    let hits = top.iter().filter(|i| sample.planted_map[**i]).count();
    Ok(hits as f64 / planted.len() as f64)
}

/// Precision of the top-|planted| patches of the map perturbed with the
/// configured noise width.
pub fn perturbed_recovery_precision(
    sample: &SyntheticSample,
    cfg: &SegrosConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let filter = filter_text_tokens(&sample.text, &sample.image, cfg.rho, cfg.tau)?;
    let map = grounding_map(&sample.text, &sample.image, &filter, cfg.tau)?;
    let map = perturb(&map, cfg.alpha, rng)?;
    let scores = map.perturbed.as_ref().unwrap_or(&map.normalized);
    let planted = sample.planted_indices();
    let top = top_k_indices(scores, planted.len())?;
    let hits = top.iter().filter(|i| sample.planted_map[**i]).count();
    Ok(hits as f64 / planted.len() as f64)
}

/// Reconstruction error on masked planted patches under a fixed evaluation
/// plan: grounded masking, no noise, mid-range ratio. Squared error per
/// feature in continuous mode, NLL in discrete mode.
pub fn evaluate_planted_error(
    model: &ToyModel,
    samples: &[SyntheticSample],
    cfg: &SegrosConfig,
) -> Result<f64> {
    let eval_cfg = SegrosConfig {
        alpha: 0.0,
        drop_loss: None,
        masking: MaskingStrategy::Grounded,
        ..cfg.clone()
    };
    let gamma = 0.5 * (cfg.gamma_lo + cfg.gamma_hi);
    let mut rng = Rng::new(0);
    let (mut sum, mut count) = (0.0, 0usize);
    for sample in samples {
        let prepared = prepare_sample(model, sample, &eval_cfg, &mut rng, Some(gamma))?;
        let out = model.forward(
            &prepared.hints,
            &sample.text,
            &prepared.corrupted,
            &prepared.mask,
        )?;
        for i in sample
            .planted_indices()
            .into_iter()
            .filter(|&i| prepared.plan.is_masked(i))
        {
            let r = out.row(i);
            sum += match model.mode() {
                Mode::Continuous => {
                    let t = sample.image.embeddings().row(i);
                    r.iter()
                        .zip(t)
                        .map(|(p, &t)| (p - t as f64).powi(2))
                        .sum::<f64>()
                        / r.len() as f64
                }
                Mode::Discrete => {
                    let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let lz = max + r.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
                    lz - r[sample.discrete_codes[i]]
                }
            };
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid_input(
            "no planted patch is masked under the evaluation plan",
        ));
    }
    Ok(sum / count as f64)
}

/// Grounded versus random masking from identical initial weights and seeds.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub grounded: RunSummary,
    pub random: RunSummary,
    pub grounded_error: f64,
    pub random_error: f64,
}

pub fn compare_masking(
    batch: &[SyntheticSample],
    model_cfg: &ToyModelConfig,
    cfg: &SegrosConfig,
    lr: f64,
    steps: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    let run = |masking: MaskingStrategy| -> Result<(RunSummary, f64)> {
        let cfg = SegrosConfig {
            masking,
            ..cfg.clone()
        };
        let mut trainer = Trainer::new(ToyModel::new(model_cfg.clone())?, cfg.clone(), lr, seed)?;
        let summary = trainer.run(batch, steps)?;
        let err = evaluate_planted_error(&trainer.model, batch, &cfg)?;
        Ok((summary, err))
    };
    let (grounded, grounded_error) = run(MaskingStrategy::Grounded)?;
    let (random, random_error) = run(MaskingStrategy::Random)?;
    Ok(ComparisonReport {
        grounded,
        random,
        grounded_error,
        random_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toymodel::generate_synthetic;

    pub(crate) fn batch(seed: u64, n: usize) -> Vec<SyntheticSample> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|_| generate_synthetic(&mut rng, 8, 10, 16, 0.3, 8).unwrap())
            .collect()
    }

    fn trainer(mode: Mode, cfg: SegrosConfig) -> Trainer {
        let model = ToyModel::new(ToyModelConfig {
            mode,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        Trainer::new(model, cfg, 0.05, 3).unwrap()
    }

    #[test]
    fn total_is_segros_plus_weighted_i2t() {
        let b = batch(1, 2);
        for lambda in [0.0, 1.0, 0.25] {
            let mut t = trainer(
                Mode::Continuous,
                SegrosConfig {
                    lambda,
                    ..Default::default()
                },
            );
            let r = t.step(&b).unwrap();
            assert_eq!(r.total, r.segros_loss + lambda * r.i2t_loss);
            for s in &r.samples {
                assert_eq!(s.total, s.segros_loss + lambda * s.i2t_loss);
            }
        }
    }

    #[test]
    fn per_position_is_zero_off_target() {
        let b = batch(2, 3);
        let mut t = trainer(
            Mode::Discrete,
            SegrosConfig {
                drop_loss: Some(0.3),
                ..Default::default()
            },
        );
        let r = t.step(&b).unwrap();
        for (rep, plan) in r.samples.iter().zip(&r.plans) {
            assert_eq!(plan.loss_target_indices.len(), 3);
            for (i, &v) in rep.per_position.iter().enumerate() {
                if !plan.is_loss_target(i) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn noiseless_runs_are_bit_identical() {
        let b = batch(3, 2);
        let cfg = SegrosConfig {
            alpha: 0.0,
            ..Default::default()
        };
        let a = trainer(Mode::Continuous, cfg.clone()).run(&b, 5).unwrap();
        let c = trainer(Mode::Continuous, cfg).run(&b, 5).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn lambda_zero_leaves_text_head_untouched() {
        let b = batch(4, 1);
        let model = ToyModel::new(ToyModelConfig {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let cfg = SegrosConfig::default();
        let prepared = prepare_sample(&model, &b[0], &cfg, &mut Rng::new(1), None).unwrap();
        let (_, g0) = sample_loss_and_grad(&model, &b[0], &prepared, 0.0).unwrap();
        let (_, g1) = sample_loss_and_grad(&model, &b[0], &prepared, 1.0).unwrap();
        let text = model.text_embedding_range();
        assert!(g0[text.clone()].iter().all(|&g| g == 0.0));
        assert!(g1[text].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn random_masking_ignores_the_map() {
        let b = batch(5, 1);
        let model = ToyModel::new(ToyModelConfig::default()).unwrap();
        let cfg = SegrosConfig {
            masking: MaskingStrategy::Random,
            alpha: 0.0,
            ..Default::default()
        };
        let plans: Vec<_> = (0..20)
            .map(|s| {
                prepare_sample(&model, &b[0], &cfg, &mut Rng::new(s), Some(0.7))
                    .unwrap()
                    .plan
                    .hint_indices
            })
            .collect();
        assert!(plans.iter().any(|h| h != &plans[0]));
    }

    #[test]
    fn planted_recovery_on_small_samples() {
        let b = batch(6, 10);
        for s in &b {
            assert_eq!(planted_recovery_precision(s, 1.0, 0.4).unwrap(), 1.0);
        }
    }

    #[test]
    fn noise_free_recovery_matches_clean_map() {
        let b = batch(7, 5);
        let cfg = SegrosConfig {
            alpha: 0.0,
            ..Default::default()
        };
        for s in &b {
            let clean = planted_recovery_precision(s, 1.0, 0.4).unwrap();
            let noisy = perturbed_recovery_precision(s, &cfg, &mut Rng::new(1)).unwrap();
            assert_eq!(clean, noisy);
        }
    }

    #[test]
    fn empty_batch_and_bad_lr_rejected() {
        let mut t = trainer(Mode::Continuous, SegrosConfig::default());
        assert!(t.step(&[]).is_err());
        let model = ToyModel::new(ToyModelConfig::default()).unwrap();
        assert!(Trainer::new(model, SegrosConfig::default(), 0.0, 0).is_err());
    }
}
