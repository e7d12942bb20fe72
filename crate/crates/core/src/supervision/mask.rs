use crate::error::{invalid_input, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Hint,
    Text,
    Corrupted,
}

/// Boolean attention pattern over `[hints | text | corrupted]`.
/// `allowed(q, k)` says whether query position `q` may attend to key `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    total_len: usize,
    allowed: Vec<bool>,
    /// Start offsets of the hint, text and corrupted segments.
    pub segment_bounds: (usize, usize, usize),
}

impl AttentionMask {
    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn n_hint(&self) -> usize {
        self.segment_bounds.1 - self.segment_bounds.0
    }

    pub fn n_text(&self) -> usize {
        self.segment_bounds.2 - self.segment_bounds.1
    }

    pub fn n_img(&self) -> usize {
        self.total_len - self.segment_bounds.2
    }

    pub fn segment(&self, pos: usize) -> Segment {
        let (_, text, img) = self.segment_bounds;
        if pos < text {
            Segment::Hint
        } else if pos < img {
            Segment::Text
        } else {
            Segment::Corrupted
        }
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.total_len + k]
    }

    /// Overrides one cell; useful for probing masked attention.
    pub fn set_allowed(&mut self, q: usize, k: usize, allowed: bool) {
        self.allowed[q * self.total_len + k] = allowed;
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Fails when some query row has no allowed key.
    pub fn check_rows(&self) -> Result<()> {
        for q in 0..self.total_len {
            if !(0..self.total_len).any(|k| self.allowed(q, k)) {
                return Err(invalid_input(format!("query {q} may attend to nothing")));
            }
        }
        Ok(())
    }

    /// Prefix block that is bidirectional within itself, followed by a causal
    /// block that also sees the whole prefix. Layout of the image-to-text
    /// objective: `[image | question answer]`.
    pub fn prefix_causal(n_prefix: usize, n_causal: usize) -> Self {
        let total = n_prefix + n_causal;
        let mut allowed = vec![false; total * total];
        for q in 0..total {
            for k in 0..total {
                allowed[q * total + k] = if q < n_prefix { k < n_prefix } else { k <= q };
            }
        }
        Self {
            total_len: total,
            allowed,
            segment_bounds: (0, n_prefix, total),
        }
    }
}

fn rule(q: Segment, k: Segment, q_pos: usize, k_pos: usize) -> bool {
    use Segment::*;
    match (q, k) {
        (Hint, Hint) => true,
        (Hint, _) => false,
        (Text, Hint) => true,
        (Text, Text) => k_pos <= q_pos,
        (Text, Corrupted) => false,
        (Corrupted, _) => true,
    }
}

/// Hints attend only among themselves; text sees all hints and earlier text;
/// corrupted patches see the whole sequence.
pub fn build_attention_mask(n_hint: usize, n_text: usize, n_img: usize) -> AttentionMask {
    let total = n_hint + n_text + n_img;
    let mut mask = AttentionMask {
        total_len: total,
        allowed: vec![false; total * total],
        segment_bounds: (0, n_hint, n_hint + n_text),
    };
    for q in 0..total {
        for k in 0..total {
            let a = rule(mask.segment(q), mask.segment(k), q, k);
            mask.allowed[q * total + k] = a;
        }
    }
    mask
}
