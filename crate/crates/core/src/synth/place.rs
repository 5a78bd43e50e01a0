//! Downscaling and positioning of an asset on the scene canvas.

use image::{imageops, RgbaImage};

use super::resample::area_resize;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::scene::{ObjectAsset, StageRecord};
use crate::PixelBox;

/// Canvas-sized RGBA layer holding exactly one object.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    image: RgbaImage,
    gt_bbox: PixelBox,
    scale_factor: f64,
    location: [f64; 2],
    provenance: Vec<StageRecord>,
}

impl PlacedObject {
    /// Wraps a canvas layer; the box is derived from its alpha channel.
    pub fn new(image: RgbaImage, scale_factor: f64, location: [f64; 2], provenance: Vec<StageRecord>) -> Result<Self> {
        let gt_bbox = Mask::from_alpha(&image)
            .tight_bbox()
            .map_err(|_| Error::Placement("placed object has no visible pixels".into()))?;
        Ok(PlacedObject {
            image,
            gt_bbox,
            scale_factor,
            location,
            provenance,
        })
    }

    pub fn image(&self) -> &RgbaImage {
        &self.image
    }

    pub fn gt_bbox(&self) -> PixelBox {
        self.gt_bbox
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn location(&self) -> [f64; 2] {
        self.location
    }

    pub fn provenance(&self) -> &[StageRecord] {
        &self.provenance
    }

    pub fn mask(&self) -> Mask {
        Mask::from_alpha(&self.image)
    }
}

fn round_dim(v: f64) -> u32 {
    v.round().max(1.0) as u32
}

/// Top-left offset centering `size` at `center`, shifted minimally to fit.
fn clamp_offset(center: f64, size: u32, canvas: u32) -> u32 {
    let start = (center - f64::from(size) / 2.0).round();
    start.clamp(0.0, f64::from(canvas - size)) as u32
}

/// Resamples the object's tight crop to `1/scale_factor` of its size and
/// centers it at `location * canvas`, translating minimally to stay inside.
pub fn place(asset: &ObjectAsset, scale_factor: f64, location: [f64; 2], canvas: (u32, u32)) -> Result<PlacedObject> {
    if !(scale_factor >= 1.0) || !scale_factor.is_finite() {
        return Err(Error::Precondition(format!("scale factor {scale_factor} is below 1")));
    }
    if location.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::Precondition(format!("location {location:?} not in [0,1]^2")));
    }
    let b = asset.tight_bbox();
    let crop = imageops::crop_imm(asset.pixels(), b.x1, b.y1, b.width(), b.height()).to_image();
    let (ow, oh) = (
        round_dim(f64::from(b.width()) / scale_factor),
        round_dim(f64::from(b.height()) / scale_factor),
    );
    if ow > canvas.0 || oh > canvas.1 {
        return Err(Error::Placement(format!(
            "object of {ow}x{oh} does not fit the {}x{} canvas",
            canvas.0, canvas.1
        )));
    }
    let small = if (ow, oh) == (b.width(), b.height()) {
        crop
    } else {
        area_resize::<f64>(&crop, ow, oh)
    };
    let x0 = clamp_offset(location[0] * f64::from(canvas.0), ow, canvas.0);
    let y0 = clamp_offset(location[1] * f64::from(canvas.1), oh, canvas.1);
    let mut layer = RgbaImage::new(canvas.0, canvas.1);
    imageops::replace(&mut layer, &small, i64::from(x0), i64::from(y0));

    let mut provenance = asset.provenance().to_vec();
    provenance.push(
        StageRecord::new("place")
            .param("scale_factor", scale_factor)
            .param("location", vec![location[0], location[1]])
            .param("canvas", vec![canvas.0, canvas.1]),
    );
    PlacedObject::new(layer, scale_factor, location, provenance)
}
