//! Background composition: plain colors and outpainting.

use image::{DynamicImage, Rgb, RgbImage};

use super::backend::{BackendRegistry, NamedImage, StageAdapter, StageKind};
use super::place::PlacedObject;
use crate::error::{Error, Result};
use crate::palette;
use crate::scene::{AttributeVector, SceneSample, StageRecord};

/// Integer "over" operator, rounded half away from zero.
pub fn blend(fg: [u8; 4], bg: [u8; 3]) -> [u8; 3] {
    let a = u32::from(fg[3]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let v = a * u32::from(fg[c]) + (255 - a) * u32::from(bg[c]);
        out[c] = ((2 * v + 255) / 510) as u8;
    }
    out
}

pub fn over_color(placed: &PlacedObject, bg: [u8; 3]) -> RgbImage {
    let img = placed.image();
    RgbImage::from_fn(img.width(), img.height(), |x, y| Rgb(blend(img.get_pixel(x, y).0, bg)))
}

/// Object alpha-composited over a palette color.
pub fn compose_plain(placed: &PlacedObject, color: &str, attrs: &AttributeVector, seed: u64) -> Result<SceneSample> {
    let bg = palette::lookup(color)?;
    let image = over_color(placed, bg.0);
    let mut provenance = placed.provenance().to_vec();
    provenance.push(StageRecord::new("compose_plain").param("color", color));
    SceneSample::new(image, placed.gt_bbox(), attrs.clone(), seed, provenance)
}

/// Background synthesized around the object. Every pixel with alpha > 0 must
/// come back unchanged; a backend that repaints the object is rejected.
pub fn outpaint(
    registry: &BackendRegistry,
    adapter: &StageAdapter,
    placed: &PlacedObject,
    prompt: &str,
    attrs: &AttributeVector,
    seed: u64,
) -> Result<SceneSample> {
    if prompt.trim().is_empty() {
        return Err(Error::Precondition("outpaint prompt is empty".into()));
    }
    expect_kind(adapter, StageKind::Outpaint)?;
    let adapter = adapter.clone().with("prompt", prompt);
    let mut resp = registry.call(
        &adapter,
        seed,
        vec![NamedImage::new("placed", DynamicImage::ImageRgba8(placed.image().clone()))],
    )?;
    let fail = |msg: String| Error::stage("outpaint", &adapter.backend_id, msg);
    let scene = resp.take("scene").ok_or_else(|| fail("response has no `scene` image".into()))?.to_rgb8();
    if scene.dimensions() != placed.image().dimensions() {
        return Err(fail(format!("scene is {:?}, expected {:?}", scene.dimensions(), placed.image().dimensions())));
    }
    for (x, y, p) in placed.image().enumerate_pixels() {
        if p[3] > 0 && scene.get_pixel(x, y).0 != [p[0], p[1], p[2]] {
            return Err(fail(format!("object pixel ({x}, {y}) was repainted")));
        }
    }
    let mut provenance = placed.provenance().to_vec();
    provenance.push(
        StageRecord::new("outpaint")
            .backend(&adapter.backend_id)
            .param("prompt", prompt)
            .seed(seed),
    );
    SceneSample::new(scene, placed.gt_bbox(), attrs.clone(), seed, provenance)
}

pub(crate) fn expect_kind(adapter: &StageAdapter, kind: StageKind) -> Result<()> {
    if adapter.stage_kind != kind {
        return Err(Error::config(format!(
            "adapter for `{}` used for stage `{kind}`",
            adapter.stage_kind
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_extremes() {
        assert_eq!(blend([10, 20, 30, 255], [200, 200, 200]), [10, 20, 30]);
        assert_eq!(blend([10, 20, 30, 0], [200, 201, 202]), [200, 201, 202]);
        // 0.5 * 0 + 0.5 * 255 with a = 128: (128*0 + 127*255) / 255 = 127
        assert_eq!(blend([0, 0, 0, 128], [255, 255, 255]), [127, 127, 127]);
    }
}
