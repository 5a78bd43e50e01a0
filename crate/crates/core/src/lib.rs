//! Controllable synthetic scenes for probing object detectors.
//!
//! The crate renders single-object street scenes from an attribute vector,
//! runs detectors over attribute grids, aggregates per-subgroup error rates
//! in exact arithmetic, searches for small attribute changes that remove an
//! error, and prepares outpainting fine-tune datasets.

pub mod config;
pub mod counterfactual;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod imageio;
pub mod mask;
pub mod num;
pub mod outpaint_prep;
pub mod palette;
pub mod report;
pub mod scene;
pub mod sweep;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::BBox;
pub use mask::Mask;
pub use num::{Rate, Real};
pub use scene::{
    AttrName, AttrValue, AttributeVector, Background, Detection, EvalOutcome, ObjectAsset, ObjectColor, SceneSample,
    StageRecord, SubgroupResult, SubgroupSpec,
};

/// Integer pixel box, half-open.
pub type PixelBox = BBox<u32>;
/// Real-valued box as returned by detectors.
pub type RealBox = BBox<f64>;
pub type CannyParams64 = synth::canny::CannyParams<f64>;
pub type CannyParams32 = synth::canny::CannyParams<f32>;
