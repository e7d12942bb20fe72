use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::textfilter::{filter_text_tokens, TokenSequence};

const MAX_TRIES: usize = 100;
/// Keep ratio under which every planted source token must survive filtering.
const KEEP_RATIO: f64 = 0.4;
const PLANT_NOISE: f64 = 0.1;
const FILLER_OBJECT_WEIGHT: f64 = 0.6;
const BACKGROUND_JITTER: f64 = 0.35;
const CODEBOOK_SEED: u64 = 0x005e_6705_c0de_b00c;

/// Text/image pair with planted cross-modal correspondences.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub text: TokenSequence,
    pub image: TokenSequence,
    /// Patches built from a text token.
    pub planted_map: Vec<bool>,
    /// Nearest codebook entry of each patch.
    pub discrete_codes: Vec<usize>,
    pub question_codes: Vec<usize>,
    /// Distinct codes of the planted patches, at most three.
    pub answer_codes: Vec<usize>,
}

impl SyntheticSample {
    pub fn planted_indices(&self) -> Vec<usize> {
        (0..self.planted_map.len())
            .filter(|&i| self.planted_map[i])
            .collect()
    }
}

fn gen_err(msg: impl Into<String>) -> Error {
    Error::Generation(msg.into())
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit vector supported on `range`.
fn random_unit(rng: &mut Rng, dim: usize, range: std::ops::Range<usize>) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for x in &mut v[range] {
        *x = rng.normal();
    }
    normalize(&mut v);
    v
}

fn orthonormal(
    rng: &mut Rng,
    dim: usize,
    count: usize,
    range: std::ops::Range<usize>,
) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let v = orthogonal_unit(rng, dim, range.clone(), &basis);
        basis.push(v);
    }
    basis
}

/// Unit vector on `range` orthogonal to every vector of `basis`, which must
/// not span the range.
fn orthogonal_unit(
    rng: &mut Rng,
    dim: usize,
    range: std::ops::Range<usize>,
    basis: &[Vec<f64>],
) -> Vec<f64> {
    loop {
        let mut v = random_unit(rng, dim, range.clone());
        for b in basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let data = rows.iter().flatten().map(|&x| x as f32).collect();
    Matrix::new(rows.len(), rows[0].len(), data)
}

/// Fixed codebook shared by every sample with the same shape.
fn codebook(dim: usize, vocab_size: usize) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(CODEBOOK_SEED ^ ((dim as u64) << 32) ^ vocab_size as u64);
    (0..vocab_size)
        .map(|_| random_unit(&mut rng, dim, 0..dim))
        .collect()
}

fn nearest_code(book: &[Vec<f64>], patch: &[f32]) -> usize {
    let p: Vec<f64> = patch.iter().map(|&x| x as f64).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (k, c) in book.iter().enumerate() {
        let s = dot(c, &p);
        if s > best.1 {
            best = (k, s);
        }
    }
    best.0
}

fn satisfies_invariants(text: &TokenSequence, image: &Matrix, planted: &[bool]) -> bool {
    let emb = text.embeddings();
    let content = text.content_indices();
    planted.iter().enumerate().all(|(i, &p)| {
        let patch = image.row(i);
        if p {
            content.iter().any(|&j| cosine(patch, emb.row(j)) >= 0.9)
        } else {
            (0..emb.rows()).all(|j| cosine(patch, emb.row(j)).abs() <= 0.1)
        }
    })
}

/// Draws one sample.
///
/// Text lives in the first half of the feature space and background patches
/// in the second. `n_text` counts a leading and a trailing special token.
/// Planted patches copy one of the object tokens and add noise of norm at
/// most 0.1. Samples whose planted source tokens would not all be kept by the
/// text filter at the default keep ratio are redrawn.
pub fn generate_synthetic(
    rng: &mut Rng,
    n_text: usize,
    n_patches: usize,
    dim: usize,
    planted_fraction: f64,
    vocab_size: usize,
) -> Result<SyntheticSample> {
    if !(planted_fraction > 0.0 && planted_fraction < 1.0) {
        return Err(gen_err(format!(
            "planted fraction {planted_fraction} must lie strictly between 0 and 1"
        )));
    }
    let n_planted = (planted_fraction * n_patches as f64).round() as usize;
    if n_planted == 0 || n_planted >= n_patches {
        return Err(gen_err(format!(
            "planted fraction {planted_fraction} gives {n_planted} of {n_patches} patches"
        )));
    }
    if n_text < 3 {
        return Err(gen_err("text needs at least one content token"));
    }
    if dim < 2 || vocab_size == 0 {
        return Err(gen_err("dim must be at least 2 and the codebook non-empty"));
    }
    let half = dim / 2;
    let content_len = n_text - 2;
    let n_obj = (content_len / 3).max(1);
    if n_obj >= half {
        return Err(gen_err(format!(
            "{n_obj} orthogonal objects and their fillers do not fit in {half} text dimensions"
        )));
    }
    let book = codebook(dim, vocab_size);

    for _ in 0..MAX_TRIES {
        let objects = orthonormal(rng, dim, n_obj, 0..half);
        let mut content: Vec<Vec<f64>> = objects.clone();
        for k in n_obj..content_len {
            let o = &objects[k % n_obj];
            let r = orthogonal_unit(rng, dim, 0..half, &objects);
            let mut f: Vec<f64> = o
                .iter()
                .zip(&r)
                .map(|(a, b)| FILLER_OBJECT_WEIGHT * a + 0.8 * b)
                .collect();
            normalize(&mut f);
            content.push(f);
        }
        // slot[k] is the content position of the k-th generated token
        let mut slot: Vec<usize> = (0..content_len).collect();
        rng.shuffle(&mut slot);
        let mut shuffled = vec![Vec::new(); content_len];
        for (k, v) in content.into_iter().enumerate() {
            shuffled[slot[k]] = v;
        }
        let mut text_rows = Vec::with_capacity(n_text);
        text_rows.push(random_unit(rng, dim, 0..half));
        text_rows.extend(shuffled);
        text_rows.push(random_unit(rng, dim, 0..half));
        let mut special = vec![false; n_text];
        special[0] = true;
        special[n_text - 1] = true;
        let text = TokenSequence::new(to_matrix(&text_rows)?, special)?;

        let mut order: Vec<usize> = (0..n_patches).collect();
        rng.shuffle(&mut order);
        let mut planted = vec![false; n_patches];
        for &i in &order[..n_planted] {
            planted[i] = true;
        }
        let background = random_unit(rng, dim, half..dim);
        let mut patches = Vec::with_capacity(n_patches);
        let mut next_obj = 0;
        let mut used_objects = Vec::new();
        for &p in &planted {
            if p {
                let o = &objects[next_obj % n_obj];
                used_objects.push(1 + slot[next_obj % n_obj]);
                next_obj += 1;
                let noise = random_unit(rng, dim, 0..dim);
                let scale = rng.uniform(0.0, PLANT_NOISE);
                patches.push(o.iter().zip(&noise).map(|(a, b)| a + scale * b).collect());
            } else {
                let r = random_unit(rng, dim, half..dim);
                let mut v: Vec<f64> = background
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| a + BACKGROUND_JITTER * b)
                    .collect();
                normalize(&mut v);
                patches.push(v);
            }
        }
        let image = to_matrix(&patches)?;
        if !satisfies_invariants(&text, &image, &planted) {
            continue;
        }
        let image = TokenSequence::plain(image);
        let filter = filter_text_tokens(&text, &image, KEEP_RATIO, 1.0)?;
        if !used_objects.iter().all(|&j| filter.mask[j]) {
            continue;
        }
        let image = image.embeddings().clone();
        let discrete_codes: Vec<usize> = (0..n_patches)
            .map(|i| nearest_code(&book, image.row(i)))
            .collect();
        let mut answer_codes = Vec::new();
        for i in (0..n_patches).filter(|&i| planted[i]) {
            let c = discrete_codes[i];
            if !answer_codes.contains(&c) && answer_codes.len() < 3 {
                answer_codes.push(c);
            }
        }
        return Ok(SyntheticSample {
            text,
            image: TokenSequence::plain(image),
            planted_map: planted,
            discrete_codes,
            question_codes: vec![0],
            answer_codes,
        });
    }
    Err(gen_err(format!(
        "no valid sample after {MAX_TRIES} attempts"
    )))
}

/// Shape of generated samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_text: usize,
    pub n_patches: usize,
    pub dim: usize,
    pub planted_fraction: f64,
    pub vocab_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_text: 8,
            n_patches: 10,
            dim: 16,
            planted_fraction: 0.3,
            vocab_size: 8,
        }
    }
}

/// `count` samples from one seeded stream.
pub fn generate_batch(
    seed: u64,
    count: usize,
    spec: &SyntheticSpec,
) -> Result<Vec<SyntheticSample>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            generate_synthetic(
                &mut rng,
                spec.n_text,
                spec.n_patches,
                spec.dim,
                spec.planted_fraction,
                spec.vocab_size,
            )
        })
        .collect()
}
