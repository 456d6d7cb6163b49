// SPDX-License-Identifier: MIT OR Apache-2.0

//! Attention statistics, copying, logit attribution, head detectors and
//! rank statistics.

mod attention;
mod attribution;
mod detectors;
pub mod stats;

pub use attention::{
    attention_profile, attention_rows, attention_stats, copy_scatter, CopyPoint, CopyScatter, TokenGroup,
};
pub use attribution::{
    answer_direction, cumulative_labels, cumulative_logit_attribution, cumulative_logit_attribution_with,
    cumulative_points, decompose, direct_logit_attribution, final_bias_attribution, frozen_scale, head_attributions,
    residual_write, Attribution, Contrast, CumulativeCurve,
};
pub use detectors::{detect_heads, repeated_sequences, score_heads, HeadScore, HeadScores};
pub use stats::{pearson, spearman};
