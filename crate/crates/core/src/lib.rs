//! Semantically grounded supervision for masked multimodal training.
//!
//! The pipeline scores text tokens by how much attention they receive from
//! the rest of the prompt and from the image, keeps the most discriminative
//! ones, projects them onto image patches to get a grounding map, and uses
//! that map to pick visual hints (highest scores) and the visible context of
//! the corrupted input (lowest scores). The remaining, text-aligned patches
//! become the reconstruction targets.
//!
//! [`toymodel`] contains a small attention model with hand-written backprop
//! that trains against these targets on synthetic data.

pub mod config;
pub mod error;
pub mod grounding;
pub mod numerics;
pub mod supervision;
pub mod textfilter;
pub mod toymodel;

pub use config::{MaskingStrategy, SegrosConfig};
pub use error::{Error, Result};
pub use grounding::{grounding_map, perturb, GroundingMap};
pub use numerics::{Matrix, Rng, ScoreVector};
pub use supervision::{
    build_attention_mask, build_plan, corrupt, draw_masking_ratio, AttentionMask,
    CorruptedSequence, SupervisionPlan, VisualHints,
};
pub use textfilter::{filter_text_tokens, TextFilterResult, TokenSequence};
