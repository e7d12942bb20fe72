use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use segros::supervision::{build_plan_from_scores, parse_plans, write_plans, PlanRecord};
use segros::toymodel::{
    compare_masking, finite_diff_gradient_check, generate_batch, perturbed_recovery_precision,
    planted_recovery_precision, RunSummary, SyntheticSample, SyntheticSpec, ToyModel,
    ToyModelConfig, Trainer,
};
use segros::{
    build_plan, draw_masking_ratio, filter_text_tokens, grounding_map, numerics::uniform_vector,
    perturb, MaskingStrategy, Rng,
};

use crate::args::{Command, HeatmapArgs, PlanArgs, SweepArgs, SyntheticArgs, TrainArgs};
use crate::config::RunConfig;
use crate::embfile::EmbeddingFile;
use crate::error::{CliError, CliResult};
use crate::pgm;

pub const PLAN_FILE: &str = "plan.txt";
pub const TEXTFILTER_FILE: &str = "textfilter.txt";
pub const GROUNDING_FILE: &str = "grounding.txt";
pub const LOG_FILE: &str = "train.log";
pub const REPORT_FILE: &str = "report.txt";
pub const COMPARE_FILE: &str = "compare.txt";
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
const GRADCHECK_PARAMS: usize = 100;

/// Runs a parsed command and returns what it prints on success.
pub fn run(command: Command) -> CliResult<String> {
    match command {
        Command::Plan(a) => cmd_plan(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn fmt_score(v: f32) -> String {
    if v == f32::NEG_INFINITY {
        "-inf".to_string()
    } else {
        v.to_string()
    }
}

pub fn cmd_plan(args: &PlanArgs) -> CliResult<String> {
    let cfg = RunConfig::resolve(args.config.config.as_deref(), &args.config.overrides())?;
    let p = &cfg.pipeline;
    let text_file = EmbeddingFile::load(&args.text)?;
    let image_file = EmbeddingFile::load(&args.image)?;
    if text_file.dim != image_file.dim {
        return Err(CliError::Config(format!(
            "text dim {} differs from image dim {}",
            text_file.dim, image_file.dim
        )));
    }
    let text = text_file.to_sequence()?;
    let image = image_file.to_sequence()?;

    let mut rng = Rng::new(cfg.seed);
    let filter = filter_text_tokens(&text, &image, p.rho, p.tau)?;
    let mut map = grounding_map(&text, &image, &filter, p.tau)?;
    if let Some((r, c)) = image_file.grid {
        map = map.with_grid(r, c);
    }
    let map = perturb(&map, p.alpha, &mut rng)?;
    let gamma = draw_masking_ratio(&mut rng, p.gamma_lo, p.gamma_hi)?;
    let plan = match p.masking {
        MaskingStrategy::Grounded => build_plan(&map, gamma, p.eta, p.drop_loss)?,
        MaskingStrategy::Random => {
            let scores = uniform_vector(&mut rng, image.len(), 0.0, 1.0)?;
            build_plan_from_scores(&scores, gamma, p.eta, p.drop_loss)?
        }
    };

    ensure_dir(&args.out)?;
    let header = cfg.header();
    let record = PlanRecord {
        plan: plan.clone(),
        seed: cfg.seed,
    };
    write_file(&args.out.join(PLAN_FILE), &write_plans(&[record]))?;

    let mut tf = format!("{header}\n");
    let kept: Vec<String> = filter.kept_indices.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(tf, "# k_t={} kept={}", filter.k_t, kept.join(","));
    tf.push_str("# token\tspecial\tintra\tinter\tunified\tkept\n");
    for j in 0..text.len() {
        let _ = writeln!(
            tf,
            "{j}\t{}\t{}\t{}\t{}\t{}",
            u8::from(text.special_flags()[j]),
            fmt_score(filter.intra_scores[j]),
            fmt_score(filter.inter_scores[j]),
            fmt_score(filter.unified_scores[j]),
            u8::from(filter.mask[j])
        );
    }
    write_file(&args.out.join(TEXTFILTER_FILE), &tf)?;

    let mut gr = format!("{header}\n");
    match map.grid {
        Some((r, c)) => {
            let _ = writeln!(gr, "# grid={r}x{c}");
        }
        None => gr.push_str("# grid=none\n"),
    }
    gr.push_str("# patch\traw\tnormalized\tperturbed\n");
    let perturbed = map.perturbed.as_ref().expect("perturb sets the field");
    for i in 0..map.len() {
        let _ = writeln!(
            gr,
            "{i}\t{}\t{}\t{}",
            map.raw[i], map.normalized[i], perturbed[i]
        );
    }
    write_file(&args.out.join(GROUNDING_FILE), &gr)?;

    Ok(format!(
        "{header}\nplan: n_patches={} gamma={} hints={} masked={} seen={} targets={}\nwrote {}\n",
        plan.n_patches,
        plan.gamma,
        plan.hint_indices.len(),
        plan.masked_indices.len(),
        plan.seen_indices.len(),
        plan.loss_target_indices.len(),
        args.out.display()
    ))
}

/// Normalized grounding values from a `grounding.txt` artifact.
pub fn read_normalized_map(text: &str) -> CliResult<Vec<f32>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let parsed = (cols.len() == 4)
            .then(|| {
                cols[0]
                    .parse::<usize>()
                    .ok()
                    .zip(cols[2].parse::<f32>().ok())
            })
            .flatten();
        match parsed {
            Some((i, v)) if i == out.len() => out.push(v),
            _ => {
                return Err(CliError::Parse(format!(
                    "{GROUNDING_FILE} line {}: malformed row",
                    n + 1
                )))
            }
        }
    }
    Ok(out)
}

fn hints_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_hints.pgm"))
}

pub fn cmd_heatmap(args: &HeatmapArgs) -> CliResult<String> {
    let image = EmbeddingFile::load(&args.image)?;
    let (rows, cols) = image.grid.ok_or_else(|| {
        CliError::MissingMetadata(format!("{} has no grid shape", args.image.display()))
    })?;
    if rows * cols != image.n_tokens {
        return Err(CliError::Config(format!(
            "grid {rows}x{cols} does not cover {} patches",
            image.n_tokens
        )));
    }
    let read = |name: &str| {
        let path = args.artifacts.join(name);
        std::fs::read_to_string(&path)
            .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    };
    let values = read_normalized_map(&read(GROUNDING_FILE)?)?;
    let plans = parse_plans(&read(PLAN_FILE)?).map_err(|e| CliError::Parse(e.to_string()))?;
    let plan = match plans.as_slice() {
        [r] => &r.plan,
        _ => {
            return Err(CliError::Parse(format!(
                "{PLAN_FILE} must hold exactly one record"
            )))
        }
    };
    if values.len() != image.n_tokens || plan.n_patches != image.n_tokens {
        return Err(CliError::Config(format!(
            "artifacts cover {} patches, image has {}",
            values.len(),
            image.n_tokens
        )));
    }

    let heat: Vec<u8> = values.iter().map(|&v| pgm::quantize(v)).collect();
    let mut hints = vec![0u8; image.n_tokens];
    for &i in &plan.hint_indices {
        hints[i] = 255;
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let hint_out = hints_path(&args.out);
    write_file(&args.out, &pgm::render(rows, cols, &heat))?;
    write_file(&hint_out, &pgm::render(rows, cols, &hints))?;
    Ok(format!(
        "wrote {} and {} ({rows}x{cols}, {} hint cells)\n",
        args.out.display(),
        hint_out.display(),
        plan.hint_indices.len()
    ))
}

fn synthetic_batch(data: &SyntheticArgs, seed: u64) -> CliResult<Vec<SyntheticSample>> {
    if data.batch == 0 {
        return Err(CliError::Config("batch must be positive".into()));
    }
    let spec = SyntheticSpec {
        n_text: data.n_text,
        n_patches: data.n_patches,
        dim: data.dim,
        planted_fraction: data.planted_fraction,
        vocab_size: data.vocab,
    };
    Ok(generate_batch(seed, data.batch, &spec)?)
}

fn model_config(data: &SyntheticArgs, cfg: &RunConfig) -> CliResult<ToyModelConfig> {
    let m = ToyModelConfig {
        dim: data.dim,
        n_layers: data.layers,
        n_heads: data.heads,
        vocab_size: data.vocab,
        mode: cfg.mode,
        seed: cfg.seed,
        max_patches: data.n_patches,
        ffn_dim: data.dim,
    };
    m.validate()?;
    Ok(m)
}

fn mean_recovery(batch: &[SyntheticSample], cfg: &RunConfig) -> CliResult<f64> {
    let mut sum = 0.0;
    for s in batch {
        sum += planted_recovery_precision(s, cfg.pipeline.tau, cfg.pipeline.rho)?;
    }
    Ok(sum / batch.len() as f64)
}

fn log_text(header: &str, run: &RunSummary) -> String {
    let mut log = format!("{header}\n# step\tsegros\ti2t\ttotal\n");
    for s in &run.steps {
        let _ = writeln!(
            log,
            "{}\t{}\t{}\t{}",
            s.step, s.segros_loss, s.i2t_loss, s.total
        );
    }
    log
}

fn run_lines(out: &mut String, prefix: &str, run: &RunSummary) {
    let (head, tail) = run.head_tail_means().unwrap_or((f64::NAN, f64::NAN));
    let first = run.first().map_or(f64::NAN, |s| s.segros_loss);
    let last = run.last().map_or(f64::NAN, |s| s.segros_loss);
    let _ = writeln!(out, "{prefix}first_segros={first}");
    let _ = writeln!(out, "{prefix}last_segros={last}");
    let _ = writeln!(out, "{prefix}head_mean_total={head}");
    let _ = writeln!(out, "{prefix}tail_mean_total={tail}");
    let _ = writeln!(out, "{prefix}finite={}", run.all_finite());
    let _ = writeln!(
        out,
        "{prefix}decreasing_on_average={}",
        run.decreasing_on_average()
    );
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<String> {
    let cfg = RunConfig::resolve(args.config.config.as_deref(), &args.config.overrides())?;
    if !args.data.synthetic {
        return Err(CliError::Config(
            "only synthetic training data is supported; pass --synthetic".into(),
        ));
    }
    if args.steps == 0 {
        return Err(CliError::Config("steps must be positive".into()));
    }
    let batch = synthetic_batch(&args.data, cfg.seed)?;
    let model_cfg = model_config(&args.data, &cfg)?;
    let header = cfg.header();
    let mut report = format!("{header}\n");
    let _ = writeln!(report, "steps={}", args.steps);
    let _ = writeln!(report, "batch={}", batch.len());
    let _ = writeln!(report, "lr={}", args.data.lr);
    let _ = writeln!(
        report,
        "n_text={} n_patches={} dim={} planted_fraction={} vocab={} layers={} heads={}",
        args.data.n_text,
        args.data.n_patches,
        args.data.dim,
        args.data.planted_fraction,
        args.data.vocab,
        args.data.layers,
        args.data.heads
    );

    let mut gradcheck_error = None;
    if args.gradcheck {
        let model = ToyModel::new(model_cfg.clone())?;
        let r = finite_diff_gradient_check(
            &model,
            &batch[0],
            &cfg.pipeline,
            GRADCHECK_PARAMS,
            cfg.seed,
        )?;
        let _ = writeln!(report, "gradcheck_params={}", r.checked);
        let _ = writeln!(report, "gradcheck_max_rel_error={}", r.max_rel_error);
        let _ = writeln!(
            report,
            "gradcheck_pass={}",
            r.max_rel_error < GRADCHECK_TOLERANCE
        );
        gradcheck_error = Some(r.max_rel_error);
    }

    let mut trainer = Trainer::new(
        ToyModel::new(model_cfg.clone())?,
        cfg.pipeline.clone(),
        args.data.lr,
        cfg.seed,
    )?;
    let run = trainer.run(&batch, args.steps)?;
    run_lines(&mut report, "", &run);
    let recovery = mean_recovery(&batch, &cfg)?;
    let _ = writeln!(report, "planted_recovery_precision={recovery}");

    if args.compare_random {
        let cmp = compare_masking(
            &batch,
            &model_cfg,
            &cfg.pipeline,
            args.data.lr,
            args.steps,
            cfg.seed,
        )?;
        let _ = writeln!(
            report,
            "compare_eval=grounded plan, alpha=0, gamma=midpoint, masked planted patches"
        );
        run_lines(&mut report, "grounded_", &cmp.grounded);
        run_lines(&mut report, "random_", &cmp.random);
        let _ = writeln!(report, "grounded_final_masked_error={}", cmp.grounded_error);
        let _ = writeln!(report, "random_final_masked_error={}", cmp.random_error);
        let _ = writeln!(
            report,
            "grounded_not_worse={}",
            cmp.grounded_error <= cmp.random_error
        );
        let mut table = format!("{header}\n# step\tgrounded_total\trandom_total\n");
        for (g, r) in cmp.grounded.steps.iter().zip(&cmp.random.steps) {
            let _ = writeln!(table, "{}\t{}\t{}", g.step, g.total, r.total);
        }
        ensure_dir(&args.out)?;
        write_file(&args.out.join(COMPARE_FILE), &table)?;
    }

    ensure_dir(&args.out)?;
    write_file(&args.out.join(LOG_FILE), &log_text(&header, &run))?;
    write_file(&args.out.join(REPORT_FILE), &report)?;

    if let Some(err) = gradcheck_error {
        if err >= GRADCHECK_TOLERANCE {
            return Err(CliError::GradCheck(err));
        }
    }
    let mut out = report;
    if let Some(err) = gradcheck_error {
        let _ = writeln!(out, "max relative error: {err:e}");
    }
    Ok(out)
}

/// Drops repeated values, keeping first occurrences; returns the duplicates.
pub fn dedup_values(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &v in values {
        if kept.contains(&v) {
            dropped.push(v);
        } else {
            kept.push(v);
        }
    }
    (kept, dropped)
}

struct SweepRow {
    value: f64,
    recovery: f64,
    final_segros: f64,
    final_total: f64,
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<String> {
    let base = RunConfig::resolve(args.config.config.as_deref(), &args.config.overrides())?;
    let (values, dropped) = dedup_values(&args.values);
    for v in &dropped {
        eprintln!("warning: duplicate sweep value {v} ignored");
    }
    if values.len() < 2 {
        return Err(CliError::Config(
            "a sweep needs at least two distinct values".into(),
        ));
    }
    if args.steps == 0 {
        return Err(CliError::Config("steps must be positive".into()));
    }
    let key = args.param.key();
    let configs = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            c.set(key, &v.to_string())?;
            c.pipeline.validate()?;
            Ok(c)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let batch = synthetic_batch(&args.data, base.seed)?;
    let model_cfg = model_config(&args.data, &base)?;

    let results: Vec<CliResult<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&values)
            .map(|(cfg, &value)| {
                let batch = &batch;
                let model_cfg = &model_cfg;
                scope.spawn(move || -> CliResult<SweepRow> {
                    let mut rng = Rng::new(cfg.seed);
                    let mut recovery = 0.0;
                    for s in batch {
                        recovery += perturbed_recovery_precision(s, &cfg.pipeline, &mut rng)?;
                    }
                    let mut trainer = Trainer::new(
                        ToyModel::new(model_cfg.clone())?,
                        cfg.pipeline.clone(),
                        args.data.lr,
                        cfg.seed,
                    )?;
                    let run = trainer.run(batch, args.steps)?;
                    let last = run.last().expect("steps > 0");
                    Ok(SweepRow {
                        value,
                        recovery: recovery / batch.len() as f64,
                        final_segros: last.segros_loss,
                        final_total: last.total,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });

    let mut table = format!(
        "{}\n# param\tvalue\tplanted_recovery\tfinal_segros\tfinal_total\n",
        base.header()
    );
    for row in results {
        let row = row?;
        let _ = writeln!(
            table,
            "{key}\t{}\t{}\t{}\t{}",
            row.value, row.recovery, row.final_segros, row.final_total
        );
    }
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_file(&args.out, &table)?;
    Ok(table)
}
