use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::error::{invalid_param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Regress clean patch latents with masked MSE.
    #[default]
    Continuous,
    /// Predict discrete patch codes with masked NLL.
    Discrete,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Continuous => "continuous",
            Mode::Discrete => "discrete",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Mode::Continuous),
            "discrete" => Ok(Mode::Discrete),
            other => Err(invalid_param(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Codebook size for discrete patches and for the text tokens of the
    /// image-to-text objective.
    pub vocab_size: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Number of learned patch positions.
    pub max_patches: usize,
    pub ffn_dim: usize,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_layers: 1,
            n_heads: 2,
            vocab_size: 8,
            mode: Mode::Continuous,
            seed: 0,
            max_patches: 16,
            ffn_dim: 16,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_heads == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return Err(invalid_param(format!(
                "dim {} must be a positive multiple of n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(invalid_param("vocab_size must be at least 2"));
        }
        if self.max_patches == 0 || self.ffn_dim == 0 {
            return Err(invalid_param("max_patches and ffn_dim must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Width of the reconstruction head.
    pub fn output_dim(&self) -> usize {
        match self.mode {
            Mode::Continuous => self.dim,
            Mode::Discrete => self.vocab_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub wo: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub pos: Slot,
    pub hint_type: Slot,
    pub mask_emb: Slot,
    pub text_emb: Slot,
    pub layers: Vec<LayerSlots>,
    pub out_w: Slot,
    pub out_b: Slot,
    pub text_w: Slot,
    pub text_b: Slot,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ToyModelConfig) -> Self {
        let mut offset = 0;
        let mut slot = |rows: usize, cols: usize| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            s
        };
        let d = cfg.dim;
        let pos = slot(cfg.max_patches, d);
        let hint_type = slot(1, d);
        let mask_emb = slot(1, d);
        let text_emb = slot(cfg.vocab_size, d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerSlots {
                wq: slot(d, d),
                wk: slot(d, d),
                wv: slot(d, d),
                wo: slot(d, d),
                w1: slot(d, cfg.ffn_dim),
                b1: slot(1, cfg.ffn_dim),
                w2: slot(cfg.ffn_dim, d),
                b2: slot(1, d),
            })
            .collect();
        let out_w = slot(d, cfg.output_dim());
        let out_b = slot(1, cfg.output_dim());
        let text_w = slot(d, cfg.vocab_size);
        let text_b = slot(1, cfg.vocab_size);
        Self {
            pos,
            hint_type,
            mask_emb,
            text_emb,
            layers,
            out_w,
            out_b,
            text_w,
            text_b,
            total: offset,
        }
    }
}

pub(crate) fn view(params: &[f64], s: Slot) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((s.rows, s.cols), &params[s.offset..s.offset + s.len()])
        .expect("slot shape")
}

pub(crate) fn view_mut(params: &mut [f64], s: Slot) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut params[s.offset..s.offset + s.len()])
        .expect("slot shape")
}

pub(crate) fn row(params: &[f64], s: Slot, r: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&params[s.offset + r * s.cols..s.offset + (r + 1) * s.cols])
}

pub(crate) fn add_into(grads: &mut [f64], s: Slot, g: &Array2<f64>) {
    let mut v = view_mut(grads, s);
    v += g;
}

pub(crate) fn add_row(grads: &mut [f64], s: Slot, r: usize, g: ArrayView1<'_, f64>) {
    let dst = &mut grads[s.offset + r * s.cols..s.offset + (r + 1) * s.cols];
    for (d, &v) in dst.iter_mut().zip(g.iter()) {
        *d += v;
    }
}
