use segros::toymodel::{
    compare_masking, generate_batch, planted_recovery_precision, Mode, SyntheticSpec, ToyModel,
    ToyModelConfig, Trainer, DEFAULT_LR,
};
use segros::{
    build_attention_mask, build_plan, corrupt, filter_text_tokens, grounding_map, perturb, Rng,
    SegrosConfig, VisualHints,
};

#[test]
fn end_to_end_plan_and_forward() {
    let batch = generate_batch(7, 4, &SyntheticSpec::default()).unwrap();
    let cfg = SegrosConfig::default();
    let model = ToyModel::new(ToyModelConfig::default()).unwrap();
    let mut rng = Rng::new(7);
    for s in &batch {
        let f = filter_text_tokens(&s.text, &s.image, cfg.rho, cfg.tau).unwrap();
        assert_eq!(f.k_t, 2);
        let map = grounding_map(&s.text, &s.image, &f, cfg.tau).unwrap();
        assert!((map.raw.sum() - f.k_t as f64).abs() < 1e-4);
        let map = perturb(&map, cfg.alpha, &mut rng).unwrap();
        let plan = build_plan(&map, 0.8, cfg.eta, None).unwrap();
        assert_eq!(plan.masked_indices.len(), 8);
        assert_eq!(plan.hint_indices.len(), 3);
        let corrupted = corrupt(&s.image, &plan, &model.mask_embedding()).unwrap();
        let hints = VisualHints::gather(&s.image, &plan);
        let mask = build_attention_mask(hints.len(), s.text.len(), s.image.len());
        let out = model.forward(&hints, &s.text, &corrupted, &mask).unwrap();
        assert_eq!(out.dim(), (10, 16));
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn planted_patches_are_recovered() {
    let batch = generate_batch(11, 50, &SyntheticSpec::default()).unwrap();
    let mean = batch
        .iter()
        .map(|s| planted_recovery_precision(s, 1.0, 0.4).unwrap())
        .sum::<f64>()
        / batch.len() as f64;
    assert!(mean >= 0.95, "{mean}");
}

#[test]
fn training_halves_the_reconstruction_loss() {
    let batch = generate_batch(1, 8, &SyntheticSpec::default()).unwrap();
    let model = ToyModel::new(ToyModelConfig {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let mut trainer = Trainer::new(model, SegrosConfig::default(), DEFAULT_LR, 1).unwrap();
    let run = trainer.run(&batch, 200).unwrap();
    let first = run.first().unwrap().segros_loss;
    let last = run.last().unwrap().segros_loss;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(run.all_finite() && run.decreasing_on_average());
}

#[test]
fn discrete_training_also_improves() {
    let batch = generate_batch(2, 8, &SyntheticSpec::default()).unwrap();
    let model = ToyModel::new(ToyModelConfig {
        mode: Mode::Discrete,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let mut trainer = Trainer::new(model, SegrosConfig::default(), DEFAULT_LR, 2).unwrap();
    let run = trainer.run(&batch, 100).unwrap();
    assert!(run.last().unwrap().segros_loss < 0.5 * run.first().unwrap().segros_loss);
}

#[test]
fn masking_comparison_completes() {
    let batch = generate_batch(3, 4, &SyntheticSpec::default()).unwrap();
    let r = compare_masking(
        &batch,
        &ToyModelConfig::default(),
        &SegrosConfig::default(),
        DEFAULT_LR,
        60,
        3,
    )
    .unwrap();
    for run in [&r.grounded, &r.random] {
        assert_eq!(run.steps.len(), 60);
        assert!(run.all_finite() && run.decreasing_on_average());
    }
    assert!(r.grounded_error.is_finite() && r.random_error.is_finite());
}
