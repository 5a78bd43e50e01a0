use std::sync::Arc;

use detprobe::synth::backend::{StageRequest, StageResponse};
use detprobe::synth::glyph::{start_image, OBJECT_TYPES};
use detprobe::synth::reference::{outpaint_image, segment_mask, DEFAULT_TOLERANCE};
use detprobe::synth::{outpaint, place, BackendRegistry, StageAdapter, StageBackend, StageKind};
use detprobe::{AttributeVector, Background, Error, ObjectAsset, ObjectColor};
use image::{DynamicImage, Rgb, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn attrs(prompt: &str) -> AttributeVector {
    AttributeVector {
        object_type: "sedan".into(),
        object_color: ObjectColor::Original,
        orientation_deg: 0.0,
        scale_factor: 2.0,
        location: [0.5, 0.5],
        background: Background::Outpaint(prompt.into()),
    }
}

fn random_asset(rng: &mut ChaCha8Rng) -> ObjectAsset {
    let (w, h) = (rng.random_range(10..90u32), rng.random_range(10..70u32));
    let img = RgbaImage::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
        if dx * dx + dy * dy < 0.2 {
            Rgba([rng.random(), rng.random(), rng.random(), rng.random_range(1..=255)])
        } else {
            Rgba([0, 0, 0, 0])
        }
    });
    ObjectAsset::new(img, vec![]).unwrap()
}

#[test]
fn reference_outpaint_preserves_object_pixels_on_100_placements() {
    let registry = BackendRegistry::with_reference();
    let adapter = StageAdapter::reference(StageKind::Outpaint);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let prompts = ["a city street", "a highway at dusk", "a parking lot"];
    for i in 0..100 {
        let asset = random_asset(&mut rng);
        let scale = rng.random_range(1.0..3.0);
        let loc = [rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0)];
        let placed = place(&asset, scale, loc, (128, 96)).unwrap();
        let prompt = prompts[i % prompts.len()];
        let seed = rng.random();
        let scene = outpaint(&registry, &adapter, &placed, prompt, &attrs(prompt), seed).unwrap();
        let mut checked = 0;
        for (x, y, p) in placed.image().enumerate_pixels() {
            if p[3] > 0 {
                assert_eq!(*scene.image().get_pixel(x, y), Rgb([p[0], p[1], p[2]]), "placement {i} at ({x}, {y})");
                checked += 1;
            }
        }
        assert_eq!(checked, placed.mask().count());
        assert_eq!(scene.gt_bbox(), placed.gt_bbox());
        assert_eq!(*scene.image(), outpaint_image(placed.image(), prompt, seed));
    }
}

#[test]
fn outpaint_background_depends_on_seed_and_prompt() {
    let layer = RgbaImage::new(64, 48);
    let a = outpaint_image(&layer, "a street", 1);
    assert_eq!(a, outpaint_image(&layer, "a street", 1));
    assert_ne!(a, outpaint_image(&layer, "a street", 2));
    assert_ne!(a, outpaint_image(&layer, "a beach", 1));
}

/// Outpaints by painting the whole canvas one color, object included.
struct Overpainter;

impl StageBackend for Overpainter {
    fn backend_id(&self) -> &str {
        "overpainter"
    }

    fn supports(&self, kind: StageKind) -> bool {
        kind == StageKind::Outpaint
    }

    fn call(&self, req: &StageRequest) -> Result<StageResponse, String> {
        let (w, h) = (req.image("placed")?.width(), req.image("placed")?.height());
        let flat = image::RgbImage::from_pixel(w, h, Rgb([7, 7, 7]));
        Ok(StageResponse::image("scene", DynamicImage::ImageRgb8(flat)))
    }
}

#[test]
fn repainting_backend_is_rejected() {
    let mut registry = BackendRegistry::with_reference();
    registry.register(Arc::new(Overpainter));
    let adapter = StageAdapter::new(StageKind::Outpaint, "overpainter");
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let placed = place(&random_asset(&mut rng), 1.5, [0.5, 0.5], (64, 64)).unwrap();
    let err = outpaint(&registry, &adapter, &placed, "a street", &attrs("a street"), 0).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
    assert!(err.to_string().contains("repainted"));
}

#[test]
fn segmentation_recovers_the_rendered_glyph_mask() {
    for t in OBJECT_TYPES {
        for canvas in [(256, 192), (320, 240), (512, 384)] {
            let (img, mask) = start_image(t, canvas).unwrap();
            let seg = segment_mask(&img, None, DEFAULT_TOLERANCE).unwrap();
            assert_eq!(seg, mask, "{t} on {canvas:?}");
        }
    }
}
