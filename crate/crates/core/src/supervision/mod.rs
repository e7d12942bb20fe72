//! Visual hints, the grounded corrupted input and the attention layout that
//! ties hints, text and corrupted patches together.

mod mask;
mod plan;
mod plan_format;

pub use mask::{build_attention_mask, AttentionMask, Segment};
pub use plan::{
    build_plan, build_plan_from_scores, corrupt, draw_masking_ratio, CorruptedSequence,
    SupervisionPlan, VisualHints,
};
pub use plan_format::{parse_plans, write_plans, PlanRecord};
