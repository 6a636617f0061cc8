//! Pyramid-of-captions: split an image into positional patches, caption the
//! whole and each part, and merge the captions with a chat model.

mod image;
mod pyramid;
mod run;
mod template;

use thiserror::Error;

use crate::backends::BackendError;

pub use self::image::{
    crop_png, split_image, split_patch, split_rect, ImageRef, ImageSource, Patch, Position, Rect,
};
pub use pyramid::{
    build_pyramid, build_pyramid_counted, caption, concat_baseline, expected_calls, merge_captions,
    word_count, CallCounts, CaptionNode, CaptionPyramid, PromptKind, PyramidNode, PyramidSpec,
    Scope, DETAILED_CAPTION_PROMPT, SHORT_CAPTION_PROMPT,
};
pub use run::{
    read_manifest, run_pipeline, ItemError, Locals, ManifestItem, PipelineRun, QaPair, RunOptions,
    RunRecord, Timing,
};
pub(crate) use template::sections_to_string;
pub use template::{
    transcript, MergeInputs, MergePromptTemplate, TemplatePreset, MERGE_ASSISTANT_PREFIX,
    MERGE_SYSTEM_PROMPT, SLOTS,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image {id}: {message}")]
    Image { id: String, message: String },
    #[error("{id} is {width}x{height}; splitting needs at least 2x2")]
    TooSmall { id: String, width: u32, height: u32 },
    #[error("merge template: {0}")]
    Template(String),
    #[error("pyramid depth must be at least 1, got {0}")]
    Depth(u32),
    #[error("{node}: {stage} failed: {source}")]
    Backend {
        node: String,
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
