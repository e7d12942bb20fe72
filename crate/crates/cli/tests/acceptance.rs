//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use segros::numerics::{row_softmax, uniform_vector, Matrix};
use segros::supervision::build_plan_from_scores;
use segros::textfilter::{inter_affinity_scores, intra_affinity_scores};
use segros::toymodel::{
    generate_batch, prepare_sample, sample_loss_and_grad, segros_loss_continuous,
    segros_loss_discrete, Mode, SyntheticSpec, ToyModel, ToyModelConfig, Trainer, DEFAULT_LR,
};
use segros::{
    build_attention_mask, filter_text_tokens, grounding_map, Rng, SegrosConfig, TokenSequence,
};
use segros_cli::EmbeddingFile;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_sequence(rng: &mut Rng, len: usize, dim: usize, special: bool) -> TokenSequence {
    let scale = rng.uniform(0.1, 5.0);
    let data = (0..len * dim)
        .map(|_| (rng.normal() * scale) as f32)
        .collect();
    let m = Matrix::new(len, dim, data).unwrap();
    let mut flags = vec![false; len];
    if special && len > 2 {
        flags[0] = true;
        flags[len - 1] = rng.below(2) == 0;
    }
    TokenSequence::new(m, flags).unwrap()
}

fn content_sum(v: &[f32]) -> f64 {
    v.iter().filter(|x| x.is_finite()).map(|&x| x as f64).sum()
}

fn stochasticity() -> Check {
    let mut rng = Rng::new(0x5eed);
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let dim = 2 + rng.below(15);
        let (l_text, n_img) = (1 + rng.below(20), 1 + rng.below(40));
        let text = random_sequence(&mut rng, l_text, dim, true);
        let image = random_sequence(&mut rng, n_img, dim, false);
        let tau = [1.0, 0.5, 2.0][rng.below(3)];

        let (rows, cols) = (1 + rng.below(12), 1 + rng.below(30));
        let logits = random_sequence(&mut rng, rows, cols, false);
        let p = row_softmax(logits.embeddings(), tau).map_err(|e| e.to_string())?;
        for row in p.iter_rows() {
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            ensure((s - 1.0).abs() <= 1e-6, || {
                format!("trial {trial}: softmax row sums to {s}")
            })?;
        }

        let l_eff = text.content_indices().len();
        let intra = content_sum(&intra_affinity_scores(&text, tau).map_err(|e| e.to_string())?);
        let inter =
            content_sum(&inter_affinity_scores(&text, &image, tau).map_err(|e| e.to_string())?);
        let f = filter_text_tokens(&text, &image, 0.4, tau).map_err(|e| e.to_string())?;
        let map = grounding_map(&text, &image, &f, tau).map_err(|e| e.to_string())?;
        let m: f64 = map.raw.iter().map(|&v| v as f64).sum();
        for (what, got, want) in [
            ("intra", intra, l_eff as f64),
            ("inter", inter, n_img as f64),
            ("map", m, f.k_t as f64),
        ] {
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-4, || {
                format!("trial {trial}: {what} sums to {got}, want {want}")
            })?;
        }
    }
    Ok(format!("1000 inputs, max sum deviation {worst:.2e}"))
}

fn partition() -> Check {
    let mut rng = Rng::new(0xbeef);
    let mut rejected = 0;
    for trial in 0..1000 {
        let n = 1 + rng.below(64);
        let scores = uniform_vector(&mut rng, n, 0.0, 1.5).unwrap();
        let gamma = rng.uniform(0.01, 0.999);
        let eta = rng.uniform(0.01, 1.0);
        let drop = (rng.below(2) == 0).then(|| rng.uniform(0.05, 1.0));
        let k_mask = (gamma * n as f64).floor() as usize;
        let plan = match build_plan_from_scores(&scores, gamma, eta, drop) {
            Ok(p) => p,
            Err(_) if k_mask == 0 => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(format!("trial {trial}: {e}")),
        };
        ensure(k_mask > 0, || format!("trial {trial}: empty mask accepted"))?;
        let k_hint = ((eta * n as f64).floor() as usize).max(1);

        let mut roles = vec![0u8; n];
        for &i in &plan.seen_indices {
            roles[i] += 1;
        }
        for &i in &plan.masked_indices {
            roles[i] += 1;
        }
        ensure(roles.iter().all(|&r| r == 1), || {
            format!("trial {trial}: seen/masked do not partition")
        })?;
        ensure(plan.masked_indices.len() == k_mask, || {
            format!(
                "trial {trial}: |masked| {} != {k_mask}",
                plan.masked_indices.len()
            )
        })?;
        ensure(plan.hint_indices.len() == k_hint, || {
            format!(
                "trial {trial}: |hint| {} != {k_hint}",
                plan.hint_indices.len()
            )
        })?;
        if k_hint + (n - k_mask) <= n {
            ensure(
                plan.hint_indices
                    .iter()
                    .all(|i| !plan.seen_indices.contains(i)),
                || format!("trial {trial}: hint overlaps seen"),
            )?;
        }
        ensure(
            plan.loss_target_indices
                .iter()
                .all(|i| plan.masked_indices.contains(i)),
            || format!("trial {trial}: loss target outside masked"),
        )?;
    }
    Ok(format!(
        "1000 triples, {rejected} rejected for masking no patch"
    ))
}

fn block_rule(n_hint: usize, n_text: usize, q: usize, k: usize) -> bool {
    let seg = |p: usize| {
        if p < n_hint {
            0
        } else if p < n_hint + n_text {
            1
        } else {
            2
        }
    };
    match seg(q) {
        0 => seg(k) == 0,
        1 => seg(k) == 0 || (seg(k) == 1 && k <= q),
        _ => true,
    }
}

fn attention_blocks() -> Check {
    let mut masks = 0;
    for h in 0..=6 {
        for t in 0..=6 {
            for i in 0..=6 {
                let mask = build_attention_mask(h, t, i);
                let n = h + t + i;
                ensure(mask.total_len() == n, || format!("({h},{t},{i}): size"))?;
                for q in 0..n {
                    for k in 0..n {
                        ensure(mask.allowed(q, k) == block_rule(h, t, q, k), || {
                            format!("({h},{t},{i}) cell ({q},{k})")
                        })?;
                    }
                }
                masks += 1;
            }
        }
    }
    let count = build_attention_mask(2, 3, 4).count_allowed();
    ensure(count == 52, || {
        format!("2/3/4 mask allows {count}, want 52")
    })?;
    Ok(format!("{masks} masks exhaustive, 2/3/4 allows {count}"))
}

fn planted_recovery() -> Check {
    let specs = [
        SyntheticSpec::default(),
        SyntheticSpec {
            n_text: 12,
            n_patches: 24,
            dim: 24,
            planted_fraction: 0.25,
            vocab_size: 8,
        },
    ];
    let mut total = 0.0;
    let mut count = 0;
    for (s, spec) in specs.iter().enumerate() {
        for sample in generate_batch(100 + s as u64, 50, spec).map_err(|e| e.to_string())? {
            let f = filter_text_tokens(&sample.text, &sample.image, 0.4, 1.0)
                .map_err(|e| e.to_string())?;
            let map =
                grounding_map(&sample.text, &sample.image, &f, 1.0).map_err(|e| e.to_string())?;
            let planted = sample.planted_map.iter().filter(|&&p| p).count();
            let mut order: Vec<usize> = (0..map.len()).collect();
            order.sort_by(|&a, &b| map.normalized[b].total_cmp(&map.normalized[a]));
            let hits = order[..planted]
                .iter()
                .filter(|&&i| sample.planted_map[i])
                .count();
            total += hits as f64 / planted as f64;
            count += 1;
        }
    }
    let mean = total / count as f64;
    ensure(mean >= 0.95, || format!("mean precision {mean:.4} < 0.95"))?;
    Ok(format!("{count} samples, mean precision {mean:.4}"))
}

fn gradient() -> Check {
    let sample = &generate_batch(21, 1, &SyntheticSpec::default()).map_err(|e| e.to_string())?[0];
    let mut worst_all = 0.0f64;
    let mut n_params = 0;
    for mode in [Mode::Continuous, Mode::Discrete] {
        for lambda in [0.0, 1.0] {
            let mut model = ToyModel::new(ToyModelConfig {
                mode,
                seed: 21,
                max_patches: 10,
                ..Default::default()
            })
            .map_err(|e| e.to_string())?;
            n_params = model.param_count();
            ensure(n_params <= 5000, || format!("{n_params} parameters"))?;
            let cfg = SegrosConfig {
                lambda,
                ..Default::default()
            };
            let prepared = prepare_sample(&model, sample, &cfg, &mut Rng::new(4), None)
                .map_err(|e| e.to_string())?;
            let (_, grads) = sample_loss_and_grad(&model, sample, &prepared, lambda)
                .map_err(|e| e.to_string())?;

            let mut pick = Rng::new(99);
            let mut indices: Vec<usize> = (0..n_params).collect();
            pick.shuffle(&mut indices);
            let h = 1e-5;
            let mut worst = 0.0f64;
            for &i in &indices[..100] {
                let orig = model.params()[i];
                let mut eval = |v: f64| {
                    model.params_mut()[i] = v;
                    sample_loss_and_grad(&model, sample, &prepared, lambda)
                        .map(|(r, _)| r.segros_loss + lambda * r.i2t_loss)
                        .map_err(|e| e.to_string())
                };
                let numeric = (eval(orig + h)? - eval(orig - h)?) / (2.0 * h);
                model.params_mut()[i] = orig;
                let a = grads[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
            ensure(worst < 1e-3, || {
                format!(
                    "{} lambda={lambda}: max rel error {worst:.2e}",
                    mode.as_str()
                )
            })?;
            worst_all = worst_all.max(worst);
        }
    }
    Ok(format!(
        "{n_params} parameters, 4 configurations x 100 sampled, max rel error {worst_all:.2e}"
    ))
}

fn loss_restriction() -> Check {
    let batch = generate_batch(31, 4, &SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let mut rng = Rng::new(31);
    let mut checked = 0;
    for (s, sample) in batch.iter().enumerate() {
        let n = sample.image.len();
        let scores = uniform_vector(&mut rng, n, 0.0, 1.0).unwrap();
        let plan =
            build_plan_from_scores(&scores, 0.8, 0.3, Some(0.3)).map_err(|e| e.to_string())?;
        let off: Vec<usize> = (0..n).filter(|&i| !plan.is_loss_target(i)).collect();
        ensure(!off.is_empty(), || "no off-target rows".into())?;

        let d = sample.image.dim();
        let pred = ndarray::Array2::from_shape_fn((n, d), |_| rng.normal());
        let target = sample.image.embeddings();
        let base = segros_loss_continuous(&pred, target, &plan).map_err(|e| e.to_string())?;
        let vocab = 8;
        let logits = ndarray::Array2::from_shape_fn((n, vocab), |_| rng.normal());
        let base_d = segros_loss_discrete(&logits, &sample.discrete_codes, &plan)
            .map_err(|e| e.to_string())?;
        for &i in &off {
            ensure(base.grad.row(i).iter().all(|&g| g == 0.0), || {
                format!("sample {s}: continuous grad row {i} non-zero")
            })?;
            ensure(base_d.grad.row(i).iter().all(|&g| g == 0.0), || {
                format!("sample {s}: discrete grad row {i} non-zero")
            })?;
        }
        let (mut pred2, mut logits2) = (pred.clone(), logits.clone());
        for &i in &off {
            pred2.row_mut(i).mapv_inplace(|v| v * -3.0 + 7.0);
            logits2.row_mut(i).mapv_inplace(|v| v * 5.0 - 2.0);
        }
        let moved = segros_loss_continuous(&pred2, target, &plan).map_err(|e| e.to_string())?;
        let moved_d = segros_loss_discrete(&logits2, &sample.discrete_codes, &plan)
            .map_err(|e| e.to_string())?;
        ensure(
            moved.value == base.value && moved_d.value == base_d.value,
            || format!("sample {s}: loss moved with off-target rows"),
        )?;
        checked += off.len();
    }
    Ok(format!(
        "{checked} off-target rows, gradient and loss exactly unchanged"
    ))
}

fn training_regression() -> Check {
    let batch = generate_batch(1, 8, &SyntheticSpec::default()).map_err(|e| e.to_string())?;
    let model = ToyModel::new(ToyModelConfig {
        seed: 1,
        max_patches: 10,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut trainer =
        Trainer::new(model, SegrosConfig::default(), DEFAULT_LR, 1).map_err(|e| e.to_string())?;
    let run = trainer.run(&batch, 200).map_err(|e| e.to_string())?;
    let first = run.first().unwrap().segros_loss;
    let last = run.last().unwrap().segros_loss;
    let ratio = last / first;
    ensure(run.all_finite(), || "non-finite loss".into())?;
    ensure(ratio < 0.5, || {
        format!("{first:.4} -> {last:.4} (ratio {ratio:.3})")
    })?;
    Ok(format!(
        "step 1 {first:.4} -> step 200 {last:.4} (ratio {ratio:.3})"
    ))
}

fn segros_bin(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_segros"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`segros {}` exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn report_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

fn ablation(dir: &Path) -> Check {
    let out = dir.join("ablation");
    segros_bin(&[
        "train",
        "--synthetic",
        "--compare-random",
        "--steps",
        "200",
        "--seed",
        "3",
        "--out",
        p(&out),
    ])?;
    ensure(out.join("compare.txt").exists(), || {
        "compare.txt missing".into()
    })?;
    let report = std::fs::read_to_string(out.join("report.txt")).map_err(|e| e.to_string())?;
    for key in [
        "grounded_finite",
        "random_finite",
        "grounded_decreasing_on_average",
        "random_decreasing_on_average",
    ] {
        ensure(report_value(&report, key) == Some("true"), || {
            format!("{key} is not true")
        })?;
    }
    let g: f64 = report_value(&report, "grounded_final_masked_error")
        .and_then(|v| v.parse().ok())
        .ok_or("grounded error missing")?;
    let r: f64 = report_value(&report, "random_final_masked_error")
        .and_then(|v| v.parse().ok())
        .ok_or("random error missing")?;
    let order = if g <= r {
        "grounded <= random"
    } else {
        "grounded > random"
    };
    Ok(format!(
        "both runs finite and decreasing; masked planted error grounded {g:.4}, random {r:.4} ({order}, reported only)"
    ))
}

fn write_inputs(dir: &Path) -> Result<(PathBuf, PathBuf), String> {
    let s = &generate_batch(9, 1, &SyntheticSpec::default()).map_err(|e| e.to_string())?[0];
    let text = dir.join("text.emb");
    let image = dir.join("image.emb");
    EmbeddingFile::from_sequence(&s.text)
        .save(&text)
        .map_err(|e| e.to_string())?;
    EmbeddingFile::from_sequence(&s.image)
        .with_grid(2, 5)
        .with_codes(s.discrete_codes.clone())
        .save(&image)
        .map_err(|e| e.to_string())?;
    Ok((text, image))
}

/// Runs every command into `root` and returns the artifact paths.
fn run_all_commands(
    root: &Path,
    inputs: &(PathBuf, PathBuf),
    extra: &[&str],
) -> Result<Vec<PathBuf>, String> {
    let (text, image) = inputs;
    let plan = root.join("plan");
    let mut args = vec![
        "plan",
        "--text",
        p(text),
        "--image",
        p(image),
        "--out",
        p(&plan),
    ];
    args.extend_from_slice(extra);
    segros_bin(&args)?;
    let heat = root.join("heat.pgm");
    segros_bin(&[
        "heatmap",
        "--image",
        p(image),
        "--artifacts",
        p(&plan),
        "--out",
        p(&heat),
    ])?;
    let train = root.join("train");
    let mut args = vec![
        "train",
        "--synthetic",
        "--steps",
        "30",
        "--batch",
        "4",
        "--gradcheck",
        "--compare-random",
        "--out",
        p(&train),
    ];
    args.extend_from_slice(extra);
    segros_bin(&args)?;
    let sweep = root.join("sweep.tsv");
    let mut args = vec![
        "sweep",
        "--param",
        "eta",
        "--values",
        "0.2,0.4",
        "--steps",
        "10",
        "--batch",
        "2",
        "--out",
        p(&sweep),
    ];
    args.extend_from_slice(extra);
    segros_bin(&args)?;
    Ok(vec![
        plan.join("plan.txt"),
        plan.join("textfilter.txt"),
        plan.join("grounding.txt"),
        heat,
        root.join("heat_hints.pgm"),
        train.join("train.log"),
        train.join("report.txt"),
        train.join("compare.txt"),
        sweep,
    ])
}

fn determinism(dir: &Path) -> Check {
    let inputs = write_inputs(dir)?;
    let extra = ["--alpha", "0", "--seed", "17"];
    let a = run_all_commands(&dir.join("det_a"), &inputs, &extra)?;
    let b = run_all_commands(&dir.join("det_b"), &inputs, &extra)?;
    let mut bytes = 0;
    for (x, y) in a.iter().zip(&b) {
        let bx = std::fs::read(x).map_err(|e| format!("{}: {e}", x.display()))?;
        let by = std::fs::read(y).map_err(|e| format!("{}: {e}", y.display()))?;
        let name = x.file_name().unwrap().to_string_lossy();
        ensure(bx == by, || format!("{name} differs between runs"))?;
        bytes += bx.len();
    }
    Ok(format!(
        "{} artifacts from plan, heatmap, train, sweep identical ({bytes} bytes)",
        a.len()
    ))
}

fn constants(dir: &Path) -> Check {
    let d = SegrosConfig::default();
    ensure(
        d.tau == 1.0
            && d.rho == 0.4
            && d.lambda == 1.0
            && d.eta == 0.3
            && d.gamma_lo == 0.7
            && d.gamma_hi == 1.0
            && d.alpha == 0.5,
        || format!("defaults are {d:?}"),
    )?;
    let echo = "tau=1 rho=0.4 eta=0.3 alpha=0.5 gamma=[0.7,1) lambda=1";
    let inputs = write_inputs(dir)?;
    let root = dir.join("defaults");
    let artifacts = run_all_commands(&root, &inputs, &[])?;
    let mut reports = 0;
    for path in artifacts {
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with(".pgm") || name == "plan.txt" {
            continue;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let first = text.lines().next().unwrap_or_default();
        ensure(first.starts_with("# ") && first.contains(echo), || {
            format!("{name} header is `{first}`")
        })?;
        reports += 1;
    }
    let (text, image) = &inputs;
    let stdout = segros_bin(&[
        "plan",
        "--text",
        p(text),
        "--image",
        p(image),
        "--out",
        p(&root.join("echo")),
    ])?;
    ensure(
        stdout.lines().next().is_some_and(|l| l.contains(echo)),
        || "plan stdout lacks the header".into(),
    )?;
    Ok(format!(
        "defaults match; header echoed in {reports} reports and on stdout"
    ))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
}

fn main() {
    let dir = tempfile::TempDir::new().expect("temp dir");
    let secs = |s: u64| Some(Duration::from_secs(s));
    let criteria: Vec<(Criterion, Box<dyn Fn() -> Check + '_>)> = vec![
        (
            Criterion {
                name: "stochasticity",
                limit: secs(10),
            },
            Box::new(stochasticity),
        ),
        (
            Criterion {
                name: "partition-cardinality",
                limit: secs(10),
            },
            Box::new(partition),
        ),
        (
            Criterion {
                name: "attention-mask-blocks",
                limit: secs(5),
            },
            Box::new(attention_blocks),
        ),
        (
            Criterion {
                name: "planted-recovery",
                limit: secs(30),
            },
            Box::new(planted_recovery),
        ),
        (
            Criterion {
                name: "gradient",
                limit: secs(60),
            },
            Box::new(gradient),
        ),
        (
            Criterion {
                name: "loss-restriction",
                limit: None,
            },
            Box::new(loss_restriction),
        ),
        (
            Criterion {
                name: "training-regression",
                limit: secs(120),
            },
            Box::new(training_regression),
        ),
        (
            Criterion {
                name: "masking-ablation-report",
                limit: None,
            },
            Box::new(|| ablation(dir.path())),
        ),
        (
            Criterion {
                name: "determinism",
                limit: None,
            },
            Box::new(|| determinism(dir.path())),
        ),
        (
            Criterion {
                name: "default-constants-echo",
                limit: None,
            },
            Box::new(|| constants(dir.path())),
        ),
    ];

    let mut failed = 0;
    for (c, check) in &criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = match (result, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!(
                "took {:.2}s, limit {}s",
                elapsed.as_secs_f64(),
                limit.as_secs()
            )),
            (r, _) => r,
        };
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "{tag} {:<24} {:>7.2}s  {detail}",
            c.name,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
