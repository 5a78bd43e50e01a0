//! Scene synthesis: procedural start images, pluggable generative stages and
//! the deterministic in-repo operations between them.

pub mod backend;
pub mod canny;
pub mod color;
pub mod compose;
pub mod glyph;
pub mod pipeline;
pub mod place;
pub mod reference;
pub mod resample;
pub mod stages;

pub use backend::{BackendRegistry, RemoteStageBackend, StageAdapter, StageBackend, StageKind};
pub use canny::{canny_edges, CannyParams, EdgeMap};
pub use compose::{compose_plain, outpaint};
pub use pipeline::{render, run_pipeline, PipelineConfig, StageAdapters};
pub use place::{place, PlacedObject};
pub use reference::{Hint, ReferenceBackend};
pub use stages::{caption, recolor, rotate_view, segment, upscale};
