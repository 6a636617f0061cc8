//! Caption quality: answering questions from captions, reference and
//! embedding metrics, caption length, and correlation.

mod answers;
mod metrics;
mod prompts;
mod report;

use thiserror::Error;

pub use answers::{
    exact_match, nli_match, nli_premise, normalize_answer, AnswerRecord, RefusalList,
    DEFAULT_REFUSALS,
};
pub use metrics::{
    align, clip_score, length_delta, length_stats, meteor_exact, meteor_tokens, pearson, round1,
    LengthStats, EXACT_ALIGNMENT_LIMIT,
};
pub use prompts::{
    render_no_caption_prompt, render_vqa_prompt, NO_CAPTION_SYSTEM_PROMPT, VQA_ASSISTANT_PREFIX,
    VQA_SYSTEM_PROMPT,
};
pub use report::{
    caption_variants, evaluate_paragraph, EvalMode, ItemRow, MetricReport, VariantMetrics,
    VqaEvaluator, VqaItem, NO_CAPTION_VARIANT,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroVector,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("correlation is undefined for a constant series")]
    Constant,
    #[error("{0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, EvalError>;
