//! Generative stages as typed operations over the backend registry.
//!
//! Each operation validates its inputs, makes one backend call and checks the
//! stage contract on the way back (shape preserved by recolor, dimensions
//! multiplied by upscale, and so on).

use image::{DynamicImage, RgbImage};

use super::backend::{BackendRegistry, NamedImage, StageAdapter, StageKind, StageResponse};
use super::canny::EdgeMap;
use super::compose::expect_kind;
use super::reference::{Hint, NO_FOREGROUND};
use crate::error::{Error, Result};
use crate::palette;
use crate::scene::{ObjectAsset, ObjectColor, StageRecord};

fn rgba(img: &ObjectAsset) -> NamedImage {
    NamedImage::new("asset", DynamicImage::ImageRgba8(img.pixels().clone()))
}

fn take_asset(mut resp: StageResponse, adapter: &StageAdapter) -> Result<image::RgbaImage> {
    resp.take("asset")
        .map(|i| i.to_rgba8())
        .ok_or_else(|| Error::stage(adapter.stage_kind.as_str(), &adapter.backend_id, "response has no `asset` image"))
}

fn record(adapter: &StageAdapter, seed: u64) -> StageRecord {
    StageRecord::new(adapter.stage_kind.as_str())
        .backend(&adapter.backend_id)
        .seed(seed)
}

/// Cuts a single object out of `image`.
pub fn segment(
    registry: &BackendRegistry,
    adapter: &StageAdapter,
    image: &RgbImage,
    hint: Option<Hint>,
    seed: u64,
) -> Result<ObjectAsset> {
    expect_kind(adapter, StageKind::Segment)?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Precondition("segment needs a nonempty image".into()));
    }
    let mut adapter = adapter.clone();
    let mut rec = record(&adapter, seed);
    match hint {
        Some(Hint::Point(x, y)) => {
            adapter = adapter.with("hint_point", vec![x, y]);
            rec = rec.param("hint_point", vec![x, y]);
        }
        Some(Hint::Box(b)) => {
            let v = serde_json::to_value(b)?;
            adapter = adapter.with("hint_box", v.clone());
            rec = rec.param("hint_box", v);
        }
        None => {}
    }
    let resp = registry
        .call(&adapter, seed, vec![NamedImage::new("image", DynamicImage::ImageRgb8(image.clone()))])
        .map_err(|e| match e {
            Error::Stage { message, .. } if message.starts_with(NO_FOREGROUND) => Error::SegmentationFailed(message),
            e => e,
        })?;
    let pixels = take_asset(resp, &adapter)?;
    ObjectAsset::new(pixels, vec![rec]).map_err(|_| Error::SegmentationFailed("backend returned an empty mask".into()))
}

/// Paints the object `color`, conditioned on its edge map. `ORIGINAL`
/// leaves the pixels untouched.
pub fn recolor(
    registry: &BackendRegistry,
    adapter: &StageAdapter,
    asset: &ObjectAsset,
    edges: &EdgeMap,
    color: &ObjectColor,
    seed: u64,
) -> Result<ObjectAsset> {
    expect_kind(adapter, StageKind::Recolor)?;
    if edges.dimensions() != asset.dimensions() {
        return Err(Error::config(format!(
            "edge map is {:?} but the asset is {:?}",
            edges.dimensions(),
            asset.dimensions()
        )));
    }
    let name = match color {
        ObjectColor::Original => {
            return Ok(asset.clone().with_record(record(adapter, seed).param("color", color.to_string())));
        }
        ObjectColor::Named(n) => n,
    };
    palette::reference_hue(name)?;
    let adapter = adapter.clone().with("color", name.as_str());
    let resp = registry.call(
        &adapter,
        seed,
        vec![
            rgba(asset),
            NamedImage::new("edges", DynamicImage::ImageLuma8(edges.edges().to_gray())),
        ],
    )?;
    let out = asset.derive(take_asset(resp, &adapter)?, record(&adapter, seed).param("color", name.as_str()))?;
    if out.mask() != asset.mask() {
        return Err(Error::stage("recolor", &adapter.backend_id, "backend changed the object's shape"));
    }
    Ok(out)
}

/// Novel view of the object rotated by `angle_deg`.
pub fn rotate_view(
    registry: &BackendRegistry,
    adapter: &StageAdapter,
    asset: &ObjectAsset,
    angle_deg: f64,
    seed: u64,
) -> Result<ObjectAsset> {
    expect_kind(adapter, StageKind::RotateView)?;
    if !(-180.0..180.0).contains(&angle_deg) {
        return Err(Error::Precondition(format!("angle {angle_deg} not in [-180, 180)")));
    }
    let adapter = adapter.clone().with("angle_deg", angle_deg);
    let resp = registry.call(&adapter, seed, vec![rgba(asset)])?;
    asset.derive(take_asset(resp, &adapter)?, record(&adapter, seed).param("angle_deg", angle_deg))
}

/// Super-resolution by an integer factor.
pub fn upscale(
    registry: &BackendRegistry,
    adapter: &StageAdapter,
    asset: &ObjectAsset,
    factor: u32,
    seed: u64,
) -> Result<ObjectAsset> {
    expect_kind(adapter, StageKind::Upscale)?;
    if factor < 1 {
        return Err(Error::config("upscale factor must be at least 1"));
    }
    let adapter = adapter.clone().with("factor", factor);
    let resp = registry.call(&adapter, seed, vec![rgba(asset)])?;
    let pixels = take_asset(resp, &adapter)?;
    let (w, h) = asset.dimensions();
    if pixels.dimensions() != (w * factor, h * factor) {
        return Err(Error::stage(
            "upscale",
            &adapter.backend_id,
            format!("output is {:?}, expected {:?}", pixels.dimensions(), (w * factor, h * factor)),
        ));
    }
    asset.derive(pixels, record(&adapter, seed).param("factor", factor))
}

/// Text description of an image given its instance labels.
pub fn caption(
    registry: &BackendRegistry,
    adapter: &StageAdapter,
    image: &RgbImage,
    labels: &[String],
    seed: u64,
) -> Result<String> {
    expect_kind(adapter, StageKind::Caption)?;
    let adapter = adapter.clone().with("labels", labels.to_vec());
    let resp = registry.call(&adapter, seed, vec![NamedImage::new("image", DynamicImage::ImageRgb8(image.clone()))])?;
    match resp.text {
        Some(t) if !t.trim().is_empty() => Ok(t),
        _ => Err(Error::stage("caption", &adapter.backend_id, "empty caption")),
    }
}
