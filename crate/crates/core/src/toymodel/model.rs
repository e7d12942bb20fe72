use ndarray::{s, Array1, Array2, Axis};

use super::params::{add_into, add_row, row, view, LayerSlots, Layout, Mode, ToyModelConfig};
use crate::error::{invalid_input, Result};
use crate::numerics::Rng;
use crate::supervision::{AttentionMask, CorruptedSequence, VisualHints};
use crate::textfilter::TokenSequence;

/// Attention-only toy backbone over `[hints | text | corrupted patches]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ToyModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

struct LayerCache {
    xn: Array2<f64>,
    x_rms: Array1<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
    hn: Array2<f64>,
    h_rms: Array1<f64>,
    g: Array2<f64>,
}

/// Everything the backward pass of the reconstruction branch needs.
pub(crate) struct T2iTape {
    caches: Vec<LayerCache>,
    y_img: Array2<f64>,
    img_rms: Array1<f64>,
    img_start: usize,
    total: usize,
    hint_src: Vec<usize>,
    masked: Vec<bool>,
}

pub(crate) struct I2tTape {
    caches: Vec<LayerCache>,
    sources: Vec<usize>,
    y_src: Array2<f64>,
    src_rms: Array1<f64>,
    probs: Array2<f64>,
    answer: Vec<usize>,
    prefix_codes: Vec<usize>,
    n_img: usize,
    total: usize,
}

/// Teacher-forced image-to-text loss.
#[derive(Debug, Clone, PartialEq)]
pub struct I2tLoss {
    pub mean: f64,
    /// NLL of each answer token.
    pub per_token: Vec<f64>,
}

fn to_f64(m: &crate::numerics::Matrix) -> Array2<f64> {
    Array2::from_shape_fn((m.rows(), m.cols()), |(i, j)| m.get(i, j) as f64)
}

const RMS_EPS: f64 = 1e-6;

/// Row-wise RMS normalization without a learned gain.
fn rms_norm(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let rms = x.map_axis(Axis(1), |r| (r.dot(&r) / d + RMS_EPS).sqrt());
    let n = x / &rms.view().insert_axis(Axis(1));
    (n, rms)
}

fn rms_norm_backward(dn: &Array2<f64>, n: &Array2<f64>, rms: &Array1<f64>) -> Array2<f64> {
    let d = n.ncols() as f64;
    let proj = (dn * n).sum_axis(Axis(1)) / d;
    (dn - &(n * &proj.insert_axis(Axis(1)))) / rms.view().insert_axis(Axis(1))
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut r in p.rows_mut() {
        let max = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        r.mapv_inplace(|v| (v - max).exp());
        let sum = r.sum();
        r /= sum;
    }
    p
}

impl ToyModel {
    /// Seeded initialization; the mask embedding starts at zero.
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = Rng::new(config.seed);
        let mut params = vec![0.0; layout.total];
        let mut fill = |params: &mut [f64], slot: super::params::Slot, scale: f64| {
            for p in &mut params[slot.offset..slot.offset + slot.len()] {
                *p = rng.uniform(-scale, scale);
            }
        };
        let d = config.dim as f64;
        fill(&mut params, layout.pos, 0.2);
        fill(&mut params, layout.hint_type, 0.2);
        fill(&mut params, layout.text_emb, 0.5);
        let attn_scale = (3.0 / d).sqrt();
        for l in &layout.layers {
            for w in [l.wq, l.wk, l.wv] {
                fill(&mut params, w, attn_scale);
            }
            fill(&mut params, l.wo, 0.5 * attn_scale);
            fill(&mut params, l.w1, attn_scale);
            fill(
                &mut params,
                l.w2,
                (3.0 / config.ffn_dim as f64).sqrt() * 0.5,
            );
        }
        fill(&mut params, layout.out_w, 0.5 * attn_scale);
        fill(&mut params, layout.text_w, 0.5 * attn_scale);
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// All parameters zero.
    pub fn zeros(config: ToyModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let params = vec![0.0; layout.total];
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Current mask embedding, rounded to `f32` for [`crate::supervision::corrupt`].
    pub fn mask_embedding(&self) -> Vec<f32> {
        row(&self.params, self.layout.mask_emb, 0)
            .iter()
            .map(|&v| v as f32)
            .collect()
    }

    /// Plain gradient-descent update.
    pub fn apply_gradient(&mut self, grads: &[f64], lr: f64) {
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= lr * g;
        }
    }

    /// Index ranges of the reconstruction head (weights then bias).
    pub fn output_head_range(&self) -> std::ops::Range<usize> {
        self.layout.out_w.offset..self.layout.out_b.offset + self.layout.out_b.len()
    }

    /// Index range of the text-token embedding table used by the I2T branch.
    pub fn text_embedding_range(&self) -> std::ops::Range<usize> {
        self.layout.text_emb.offset..self.layout.text_emb.offset + self.layout.text_emb.len()
    }

    fn layer_forward(
        &self,
        l: &LayerSlots,
        x: Array2<f64>,
        mask: &AttentionMask,
    ) -> (Array2<f64>, LayerCache) {
        let p = &self.params;
        let t = x.nrows();
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let (xn, x_rms) = rms_norm(&x);
        let q = xn.dot(&view(p, l.wq));
        let k = xn.dot(&view(p, l.wk));
        let v = xn.dot(&view(p, l.wv));
        let mut o = Array2::zeros((t, self.config.dim));
        let mut attn = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            let mut a = Array2::zeros((t, t));
            for qi in 0..t {
                let max = (0..t)
                    .filter(|&kj| mask.allowed(qi, kj))
                    .map(|kj| scores[[qi, kj]])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for kj in 0..t {
                    if mask.allowed(qi, kj) {
                        let e = (scores[[qi, kj]] - max).exp();
                        a[[qi, kj]] = e;
                        sum += e;
                    }
                }
                a.row_mut(qi).mapv_inplace(|e| e / sum);
            }
            o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
            attn.push(a);
        }
        let h = &x + &o.dot(&view(p, l.wo));
        let (hn, h_rms) = rms_norm(&h);
        let g = (hn.dot(&view(p, l.w1)) + view(p, l.b1).row(0)).mapv(f64::tanh);
        let y = &h + &(g.dot(&view(p, l.w2)) + view(p, l.b2).row(0));
        let cache = LayerCache {
            xn,
            x_rms,
            q,
            k,
            v,
            attn,
            o,
            hn,
            h_rms,
            g,
        };
        (y, cache)
    }

    fn layer_backward(
        &self,
        l: &LayerSlots,
        c: &LayerCache,
        dy: Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        let p = &self.params;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        // MLP
        add_into(grads, l.w2, &c.g.t().dot(&dy));
        add_into(grads, l.b2, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let du = dy.dot(&view(p, l.w2).t()) * c.g.mapv(|g| 1.0 - g * g);
        add_into(grads, l.w1, &c.hn.t().dot(&du));
        add_into(grads, l.b1, &du.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dh_res = &dy + &rms_norm_backward(&du.dot(&view(p, l.w1).t()), &c.hn, &c.h_rms);

        // attention
        add_into(grads, l.wo, &c.o.t().dot(&dh_res));
        let d_o = dh_res.dot(&view(p, l.wo).t());
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, a) in c.attn.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_oh = d_o.slice(cols);
            let da = d_oh.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&d_oh));
            let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let ds = a * &(&da - &row_dot);
            dq.slice_mut(cols)
                .assign(&(ds.dot(&c.k.slice(cols)) * scale));
            dk.slice_mut(cols)
                .assign(&(ds.t().dot(&c.q.slice(cols)) * scale));
        }
        add_into(grads, l.wq, &c.xn.t().dot(&dq));
        add_into(grads, l.wk, &c.xn.t().dot(&dk));
        add_into(grads, l.wv, &c.xn.t().dot(&dv));
        let dxn =
            dq.dot(&view(p, l.wq).t()) + dk.dot(&view(p, l.wk).t()) + dv.dot(&view(p, l.wv).t());
        dh_res + rms_norm_backward(&dxn, &c.xn, &c.x_rms)
    }

    fn encode(&self, mut x: Array2<f64>, mask: &AttentionMask) -> (Array2<f64>, Vec<LayerCache>) {
        let mut caches = Vec::with_capacity(self.layout.layers.len());
        for l in &self.layout.layers {
            let (y, c) = self.layer_forward(l, x, mask);
            caches.push(c);
            x = y;
        }
        (x, caches)
    }

    fn encode_backward(
        &self,
        caches: &[LayerCache],
        mut dy: Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        for (l, c) in self.layout.layers.iter().zip(caches).rev() {
            dy = self.layer_backward(l, c, dy, grads);
        }
        dy
    }

    fn check_patch_positions(&self, n: usize) -> Result<()> {
        if n > self.config.max_patches {
            return Err(invalid_input(format!(
                "{n} patches exceed the model's {} positions",
                self.config.max_patches
            )));
        }
        Ok(())
    }

    pub(crate) fn t2i_forward(
        &self,
        hints: &VisualHints,
        text: &TokenSequence,
        corrupted: &CorruptedSequence,
        mask: &AttentionMask,
    ) -> Result<(Array2<f64>, T2iTape)> {
        let d = self.config.dim;
        let n_img = corrupted.embeddings.rows();
        let (n_hint, n_text) = (hints.len(), text.len());
        if text.dim() != d || corrupted.embeddings.cols() != d || hints.embeddings.cols() != d {
            return Err(invalid_input(format!("inputs must have width {d}")));
        }
        if mask.n_hint() != n_hint || mask.n_text() != n_text || mask.n_img() != n_img {
            return Err(invalid_input(format!(
                "attention mask segments ({}, {}, {}) do not match inputs ({n_hint}, {n_text}, {n_img})",
                mask.n_hint(),
                mask.n_text(),
                mask.n_img()
            )));
        }
        if corrupted.plan.n_patches != n_img {
            return Err(invalid_input(
                "corrupted sequence and plan disagree on patch count",
            ));
        }
        self.check_patch_positions(n_img)?;
        if let Some(&src) = hints
            .source_indices
            .iter()
            .find(|&&s| s >= self.config.max_patches)
        {
            return Err(invalid_input(format!(
                "hint source index {src} out of range"
            )));
        }

        let p = &self.params;
        let lay = &self.layout;
        let total = mask.total_len();
        let mut x = Array2::zeros((total, d));
        let hint_type = row(p, lay.hint_type, 0);
        for (r, &src) in hints.source_indices.iter().enumerate() {
            let e = Array1::from_iter(hints.embeddings.row(r).iter().map(|&v| v as f64));
            x.row_mut(r)
                .assign(&(&e + &row(p, lay.pos, src) + hint_type));
        }
        let emb_text = to_f64(text.embeddings());
        x.slice_mut(s![n_hint..n_hint + n_text, ..])
            .assign(&emb_text);
        let masked: Vec<bool> = (0..n_img).map(|i| corrupted.plan.is_masked(i)).collect();
        let img_start = n_hint + n_text;
        for (i, &is_masked) in masked.iter().enumerate() {
            let base = if is_masked {
                row(p, lay.mask_emb, 0).to_owned()
            } else {
                Array1::from_iter(corrupted.embeddings.row(i).iter().map(|&v| v as f64))
            };
            x.row_mut(img_start + i)
                .assign(&(&base + &row(p, lay.pos, i)));
        }

        let (y, caches) = self.encode(x, mask);
        let (y_img, img_rms) = rms_norm(&y.slice(s![img_start.., ..]).to_owned());
        let out = y_img.dot(&view(p, lay.out_w)) + view(p, lay.out_b).row(0);
        let tape = T2iTape {
            caches,
            y_img,
            img_rms,
            img_start,
            total,
            hint_src: hints.source_indices.clone(),
            masked,
        };
        Ok((out, tape))
    }

    pub(crate) fn t2i_backward(&self, tape: &T2iTape, d_out: &Array2<f64>, grads: &mut [f64]) {
        let p = &self.params;
        let lay = &self.layout;
        add_into(grads, lay.out_w, &tape.y_img.t().dot(d_out));
        add_into(
            grads,
            lay.out_b,
            &d_out.sum_axis(Axis(0)).insert_axis(Axis(0)),
        );
        let mut dy = Array2::zeros((tape.total, self.config.dim));
        let d_img = rms_norm_backward(
            &d_out.dot(&view(p, lay.out_w).t()),
            &tape.y_img,
            &tape.img_rms,
        );
        dy.slice_mut(s![tape.img_start.., ..]).assign(&d_img);
        let dx = self.encode_backward(&tape.caches, dy, grads);
        for (r, &src) in tape.hint_src.iter().enumerate() {
            add_row(grads, lay.pos, src, dx.row(r));
            add_row(grads, lay.hint_type, 0, dx.row(r));
        }
        for (i, &m) in tape.masked.iter().enumerate() {
            let g = dx.row(tape.img_start + i);
            add_row(grads, lay.pos, i, g);
            if m {
                add_row(grads, lay.mask_emb, 0, g);
            }
        }
    }

    /// Predictions for every corrupted position: `N_I × D` latents in
    /// continuous mode, `N_I × V` logits in discrete mode. Masked rows are
    /// read from the model's own mask parameter, seen rows from `corrupted`.
    pub fn forward(
        &self,
        hints: &VisualHints,
        text: &TokenSequence,
        corrupted: &CorruptedSequence,
        mask: &AttentionMask,
    ) -> Result<Array2<f64>> {
        Ok(self.t2i_forward(hints, text, corrupted, mask)?.0)
    }

    pub(crate) fn i2t_forward(
        &self,
        image: &TokenSequence,
        question: &[usize],
        answer: &[usize],
    ) -> Result<(I2tLoss, I2tTape)> {
        if answer.is_empty() {
            return Err(invalid_input("answer must not be empty"));
        }
        let v = self.config.vocab_size;
        if let Some(&c) = question.iter().chain(answer).find(|&&c| c >= v) {
            return Err(invalid_input(format!(
                "text code {c} outside vocabulary of {v}"
            )));
        }
        let d = self.config.dim;
        if image.dim() != d || image.is_empty() {
            return Err(invalid_input(format!(
                "image must be non-empty with width {d}"
            )));
        }
        let n_img = image.len();
        self.check_patch_positions(n_img)?;

        let p = &self.params;
        let lay = &self.layout;
        // the final answer token is never used as context
        let prefix_codes: Vec<usize> = question
            .iter()
            .chain(&answer[..answer.len() - 1])
            .copied()
            .collect();
        let total = n_img + prefix_codes.len();
        let mut x = Array2::zeros((total, d));
        let img = to_f64(image.embeddings());
        for i in 0..n_img {
            x.row_mut(i).assign(&(&img.row(i) + &row(p, lay.pos, i)));
        }
        for (t, &c) in prefix_codes.iter().enumerate() {
            x.row_mut(n_img + t).assign(&row(p, lay.text_emb, c));
        }
        let mask = AttentionMask::prefix_causal(n_img, prefix_codes.len());
        let (y, caches) = self.encode(x, &mask);

        // answer token t is predicted from the position right before it
        let sources: Vec<usize> = (0..answer.len())
            .map(|t| n_img + question.len() + t - 1)
            .collect();
        let (y_src, src_rms) = rms_norm(&y.select(Axis(0), &sources));
        let logits = y_src.dot(&view(p, lay.text_w)) + view(p, lay.text_b).row(0);
        let probs = softmax_rows(&logits);
        let per_token: Vec<f64> = answer
            .iter()
            .enumerate()
            .map(|(t, &c)| -probs[[t, c]].ln())
            .collect();
        let mean = per_token.iter().sum::<f64>() / per_token.len() as f64;
        let tape = I2tTape {
            caches,
            sources,
            y_src,
            src_rms,
            probs,
            answer: answer.to_vec(),
            prefix_codes,
            n_img,
            total,
        };
        Ok((I2tLoss { mean, per_token }, tape))
    }

    /// Accumulates `scale · ∂(mean NLL)/∂θ`.
    pub(crate) fn i2t_backward(&self, tape: &I2tTape, scale: f64, grads: &mut [f64]) {
        let p = &self.params;
        let lay = &self.layout;
        let n = tape.answer.len() as f64;
        let mut d_logits = tape.probs.clone();
        for (t, &c) in tape.answer.iter().enumerate() {
            d_logits[[t, c]] -= 1.0;
        }
        d_logits *= scale / n;
        add_into(grads, lay.text_w, &tape.y_src.t().dot(&d_logits));
        add_into(
            grads,
            lay.text_b,
            &d_logits.sum_axis(Axis(0)).insert_axis(Axis(0)),
        );
        let d_src = rms_norm_backward(
            &d_logits.dot(&view(p, lay.text_w).t()),
            &tape.y_src,
            &tape.src_rms,
        );
        let mut dy = Array2::zeros((tape.total, self.config.dim));
        for (t, &src) in tape.sources.iter().enumerate() {
            let mut r = dy.row_mut(src);
            r += &d_src.row(t);
        }
        let dx = self.encode_backward(&tape.caches, dy, grads);
        for i in 0..tape.n_img {
            add_row(grads, lay.pos, i, dx.row(i));
        }
        for (t, &c) in tape.prefix_codes.iter().enumerate() {
            add_row(grads, lay.text_emb, c, dx.row(tape.n_img + t));
        }
    }

    /// Mean NLL of `answer` given the image and the question, teacher forced.
    pub fn i2t_loss(
        &self,
        image: &TokenSequence,
        question: &[usize],
        answer: &[usize],
    ) -> Result<I2tLoss> {
        Ok(self.i2t_forward(image, question, answer)?.0)
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }
}
