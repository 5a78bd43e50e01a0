//! Deterministic, model-free stand-ins for the generative stages.
//!
//! * segment: background-distance thresholding + 8-connected components
//! * recolor: hue replacement inside the mask, lightness preserved
//! * rotate_view: exact nearest-neighbor 2D rotation
//! * upscale: bilinear resampling
//! * outpaint: seeded smooth procedural texture behind the object
//! * caption: fixed template over the instance labels

use std::collections::HashMap;

use image::{DynamicImage, Rgb, RgbImage, Rgba, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::backend::{StageBackend, StageKind, StageRequest, StageResponse};
use super::color::{hsl_to_rgb, rgb_to_hsl};
use super::resample::bilinear_upscale;
use crate::mask::Mask;
use crate::palette;
use crate::PixelBox;

pub const REFERENCE_ID: &str = "reference";

/// Marker prefix of the segmentation "nothing found" failure.
pub const NO_FOREGROUND: &str = "no foreground";

pub const DEFAULT_TOLERANCE: u8 = 32;
pub const DEFAULT_MARGIN: u32 = 8;

/// Pixels with saturation below this are left alone by recolor
/// (windows, tyres).
pub const RECOLOR_MIN_SATURATION: f64 = 0.25;

#[derive(Debug, Default, Clone)]
pub struct ReferenceBackend;

impl StageBackend for ReferenceBackend {
    fn backend_id(&self) -> &str {
        REFERENCE_ID
    }

    fn supports(&self, _kind: StageKind) -> bool {
        true
    }

    fn call(&self, req: &StageRequest) -> Result<StageResponse, String> {
        match req.stage_kind {
            StageKind::Segment => {
                let img = req.image("image")?.to_rgb8();
                let hint = parse_hint(req)?;
                let tol = req.config_f64("tolerance").map_or(DEFAULT_TOLERANCE, |t| t as u8);
                let margin = req.config_f64("margin").map_or(DEFAULT_MARGIN, |m| m as u32);
                let out = segment_image(&img, hint, tol, margin)?;
                Ok(StageResponse::image("asset", DynamicImage::ImageRgba8(out)))
            }
            StageKind::Recolor => {
                let asset = req.image("asset")?.to_rgba8();
                let color = req.config_str("color").ok_or("recolor needs a `color`")?;
                let out = recolor_image(&asset, color)?;
                Ok(StageResponse::image("asset", DynamicImage::ImageRgba8(out)))
            }
            StageKind::RotateView => {
                let asset = req.image("asset")?.to_rgba8();
                let angle = req.config_f64("angle_deg").ok_or("rotate_view needs `angle_deg`")?;
                Ok(StageResponse::image("asset", DynamicImage::ImageRgba8(rotate_image(&asset, angle))))
            }
            StageKind::Upscale => {
                let asset = req.image("asset")?.to_rgba8();
                let factor = req.config_f64("factor").ok_or("upscale needs `factor`")?;
                if factor < 1.0 || factor.fract() != 0.0 {
                    return Err(format!("bad upscale factor {factor}"));
                }
                let out = bilinear_upscale::<f64>(&asset, factor as u32);
                Ok(StageResponse::image("asset", DynamicImage::ImageRgba8(out)))
            }
            StageKind::Outpaint => {
                let placed = req.image("placed")?.to_rgba8();
                let prompt = req.config_str("prompt").ok_or("outpaint needs a `prompt`")?;
                let out = outpaint_image(&placed, prompt, req.seed);
                Ok(StageResponse::image("scene", DynamicImage::ImageRgb8(out)))
            }
            StageKind::Caption => {
                let labels: Vec<String> = match req.config.get("labels") {
                    Some(Value::Array(a)) => a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
                    _ => Vec::new(),
                };
                Ok(StageResponse {
                    images: Vec::new(),
                    text: Some(caption_template(&labels)),
                })
            }
        }
    }
}

/// Where to look for the object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hint {
    Point(f64, f64),
    Box(PixelBox),
}

fn parse_hint(req: &StageRequest) -> Result<Option<Hint>, String> {
    if let Some(v) = req.config.get("hint_point") {
        let a = v.as_array().filter(|a| a.len() == 2).ok_or("hint_point must be [x, y]")?;
        let x = a[0].as_f64().ok_or("hint_point must be numeric")?;
        let y = a[1].as_f64().ok_or("hint_point must be numeric")?;
        return Ok(Some(Hint::Point(x, y)));
    }
    if let Some(v) = req.config.get("hint_box") {
        let b: PixelBox = serde_json::from_value(v.clone()).map_err(|e| format!("hint_box: {e}"))?;
        return Ok(Some(Hint::Box(b)));
    }
    Ok(None)
}

/// Most frequent border color; ties go to the smallest RGB triple.
fn border_color(img: &RgbImage) -> [u8; 3] {
    let (w, h) = img.dimensions();
    let mut counts: HashMap<[u8; 3], usize> = HashMap::new();
    for x in 0..w {
        *counts.entry(img.get_pixel(x, 0).0).or_default() += 1;
        *counts.entry(img.get_pixel(x, h - 1).0).or_default() += 1;
    }
    for y in 0..h {
        *counts.entry(img.get_pixel(0, y).0).or_default() += 1;
        *counts.entry(img.get_pixel(w - 1, y).0).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(c, _)| c)
        .unwrap_or([255, 255, 255])
}

/// 8-connected components; returns per-pixel labels (0 = background) and
/// the component count.
pub fn label_components(mask: &Mask) -> (Vec<u32>, u32) {
    let (w, h) = mask.dimensions();
    let mut labels = vec![0u32; w as usize * h as usize];
    let mut next = 0;
    let mut stack = Vec::new();
    for (x, y) in mask.iter_set() {
        let i = y as usize * w as usize + x as usize;
        if labels[i] != 0 {
            continue;
        }
        next += 1;
        labels[i] = next;
        stack.push((x, y));
        while let Some((cx, cy)) = stack.pop() {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (i64::from(cx) + dx, i64::from(cy) + dy);
                    if !mask.get_signed(nx, ny) {
                        continue;
                    }
                    let j = ny as usize * w as usize + nx as usize;
                    if labels[j] == 0 {
                        labels[j] = next;
                        stack.push((nx as u32, ny as u32));
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Foreground mask of a single object against a uniform background.
pub fn segment_mask(img: &RgbImage, hint: Option<Hint>, tolerance: u8) -> Result<Mask, String> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err("empty image".into());
    }
    let bg = border_color(img);
    let fg = Mask::from_fn(w, h, |x, y| {
        let p = img.get_pixel(x, y).0;
        (0..3).any(|c| p[c].abs_diff(bg[c]) > tolerance)
    });
    if fg.is_empty() {
        return Err(format!("{NO_FOREGROUND} in {w}x{h} image"));
    }
    let (labels, n) = label_components(&fg);
    let mut sizes = vec![0usize; n as usize + 1];
    for l in &labels {
        sizes[*l as usize] += 1;
    }
    let largest = |score: &dyn Fn(u32) -> usize| (1..=n).max_by(|a, b| score(*a).cmp(&score(*b)).then(b.cmp(a)));
    let chosen = match hint {
        None => largest(&|l| sizes[l as usize]),
        Some(Hint::Point(px, py)) => {
            let mut best: Option<(f64, u32)> = None;
            for (x, y) in fg.iter_set() {
                let d = (f64::from(x) + 0.5 - px).powi(2) + (f64::from(y) + 0.5 - py).powi(2);
                let l = labels[y as usize * w as usize + x as usize];
                if best.is_none_or(|(bd, bl)| d < bd || (d == bd && l < bl)) {
                    best = Some((d, l));
                }
            }
            best.map(|(_, l)| l)
        }
        Some(Hint::Box(b)) => {
            let mut inside = vec![0usize; n as usize + 1];
            for (x, y) in fg.iter_set() {
                if x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2 {
                    inside[labels[y as usize * w as usize + x as usize] as usize] += 1;
                }
            }
            largest(&|l| inside[l as usize]).filter(|l| inside[*l as usize] > 0)
        }
    };
    let chosen = chosen.ok_or_else(|| format!("{NO_FOREGROUND} near the hint"))?;
    Ok(Mask::from_fn(w, h, |x, y| labels[y as usize * w as usize + x as usize] == chosen))
}

/// Cuts the object out with a transparent margin around its tight box.
pub fn segment_image(img: &RgbImage, hint: Option<Hint>, tolerance: u8, margin: u32) -> Result<RgbaImage, String> {
    let mask = segment_mask(img, hint, tolerance)?;
    let b = mask.tight_bbox().map_err(|e| e.to_string())?;
    let (ow, oh) = (b.width() + 2 * margin, b.height() + 2 * margin);
    Ok(RgbaImage::from_fn(ow, oh, |x, y| {
        let sx = i64::from(x) + i64::from(b.x1) - i64::from(margin);
        let sy = i64::from(y) + i64::from(b.y1) - i64::from(margin);
        if mask.get_signed(sx, sy) {
            let p = img.get_pixel(sx as u32, sy as u32).0;
            Rgba([p[0], p[1], p[2], 255])
        } else {
            Rgba([0, 0, 0, 0])
        }
    }))
}

/// Replaces the hue of saturated object pixels, keeping lightness.
pub fn recolor_image(asset: &RgbaImage, color: &str) -> Result<RgbaImage, String> {
    let hue = palette::reference_hue(color).map_err(|e| e.to_string())?;
    let mut out = asset.clone();
    for p in out.pixels_mut() {
        if p[3] == 0 {
            continue;
        }
        let mut hsl = rgb_to_hsl::<f64>([p[0], p[1], p[2]]);
        if hsl.s < RECOLOR_MIN_SATURATION {
            continue;
        }
        match hue {
            Some(h) => hsl.h = h,
            None => hsl.s = 0.0,
        }
        let rgb = hsl_to_rgb(hsl);
        *p = Rgba([rgb[0], rgb[1], rgb[2], p[3]]);
    }
    Ok(out)
}

/// `(cos, sin)` with exact values at multiples of 90 degrees.
fn exact_cos_sin(angle_deg: f64) -> (f64, f64) {
    let a = angle_deg.rem_euclid(360.0);
    if a == 0.0 {
        (1.0, 0.0)
    } else if a == 90.0 {
        (0.0, 1.0)
    } else if a == 180.0 {
        (-1.0, 0.0)
    } else if a == 270.0 {
        (0.0, -1.0)
    } else {
        let r = a.to_radians();
        (r.cos(), r.sin())
    }
}

/// Nearest-neighbor rotation, counter-clockwise as displayed, onto a canvas
/// just large enough for the rotated frame.
pub fn rotate_image(src: &RgbaImage, angle_deg: f64) -> RgbaImage {
    if angle_deg == 0.0 {
        return src.clone();
    }
    let (w, h) = src.dimensions();
    let (c, s) = exact_cos_sin(angle_deg);
    let (wf, hf) = (f64::from(w), f64::from(h));
    let ow = ((wf * c.abs() + hf * s.abs()) - 1e-9).ceil().max(1.0) as u32;
    let oh = ((wf * s.abs() + hf * c.abs()) - 1e-9).ceil().max(1.0) as u32;
    let (ocx, ocy) = (f64::from(ow) / 2.0, f64::from(oh) / 2.0);
    RgbaImage::from_fn(ow, oh, |x, y| {
        let u = f64::from(x) + 0.5 - ocx;
        let v = f64::from(y) + 0.5 - ocy;
        let sx = (u * c - v * s + wf / 2.0).floor();
        let sy = (u * s + v * c + hf / 2.0).floor();
        if sx >= 0.0 && sy >= 0.0 && sx < wf && sy < hf {
            *src.get_pixel(sx as u32, sy as u32)
        } else {
            Rgba([0, 0, 0, 0])
        }
    })
}

fn texture_seed(prompt: &str, seed: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update(seed.to_le_bytes());
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Smooth seeded texture behind the object; object pixels copied verbatim.
pub fn outpaint_image(placed: &RgbaImage, prompt: &str, seed: u64) -> RgbImage {
    let (w, h) = placed.dimensions();
    let mut rng = ChaCha8Rng::seed_from_u64(texture_seed(prompt, seed));
    const GRID: usize = 6;
    let lattice: Vec<[f64; 3]> = (0..(GRID + 1) * (GRID + 1))
        .map(|i| {
            let row = (i / (GRID + 1)) as f64 / GRID as f64;
            // brighter "sky" at the top, darker "ground" at the bottom
            let base = 200.0 - 110.0 * row;
            [
                base + rng.random_range(-50.0..50.0),
                base + rng.random_range(-50.0..50.0),
                base + rng.random_range(-50.0..50.0),
            ]
        })
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        let p = placed.get_pixel(x, y);
        if p[3] > 0 {
            return Rgb([p[0], p[1], p[2]]);
        }
        let gx = (f64::from(x) + 0.5) / f64::from(w) * GRID as f64;
        let gy = (f64::from(y) + 0.5) / f64::from(h) * GRID as f64;
        let (ix, iy) = ((gx.floor() as usize).min(GRID - 1), (gy.floor() as usize).min(GRID - 1));
        let (tx, ty) = (gx - ix as f64, gy - iy as f64);
        let at = |cx: usize, cy: usize| lattice[cy * (GRID + 1) + cx];
        let mut out = [0u8; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(ix, iy)[c] * (1.0 - tx) + at(ix + 1, iy)[c] * tx;
            let bot = at(ix, iy + 1)[c] * (1.0 - tx) + at(ix + 1, iy + 1)[c] * tx;
            *o = crate::num::to_u8(top * (1.0 - ty) + bot * ty);
        }
        Rgb(out)
    })
}

fn plural(label: &str) -> String {
    match label {
        "person" => "people".into(),
        "bus" => "buses".into(),
        l if l.ends_with('s') => format!("{l}es"),
        l => format!("{l}s"),
    }
}

fn article(label: &str) -> &'static str {
    if label.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

/// `"a photo of a car and 2 people on a street"`: labels in order of first
/// appearance, with counts.
pub fn caption_template(labels: &[String]) -> String {
    let mut order: Vec<(&str, usize)> = Vec::new();
    for l in labels {
        match order.iter_mut().find(|(n, _)| n == l) {
            Some((_, c)) => *c += 1,
            None => order.push((l, 1)),
        }
    }
    let parts: Vec<String> = order
        .iter()
        .map(|(l, c)| if *c == 1 { format!("{} {l}", article(l)) } else { format!("{c} {}", plural(l)) })
        .collect();
    let body = match parts.len() {
        0 => "an empty street".to_string(),
        1 => format!("{} on a street", parts[0]),
        n => format!("{} and {} on a street", parts[..n - 1].join(", "), parts[n - 1]),
    };
    format!("a photo of {body}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn captions() {
        assert_eq!(caption_template(&["car".into()]), "a photo of a car on a street");
        assert_eq!(
            caption_template(&["car".into(), "person".into(), "car".into(), "bus".into()]),
            "a photo of 2 cars, a person and a bus on a street"
        );
        assert_eq!(caption_template(&[]), "a photo of an empty street");
    }

    #[test]
    fn rotation_by_ninety_is_a_transpose_flip() {
        let src = RgbaImage::from_fn(5, 3, |x, y| Rgba([x as u8, y as u8, 0, 255]));
        let r = rotate_image(&src, 90.0);
        assert_eq!(r.dimensions(), (3, 5));
        for y in 0..5 {
            for x in 0..3 {
                // counter-clockwise: the right column becomes the top row
                assert_eq!(*r.get_pixel(x, y), *src.get_pixel(4 - y, x));
            }
        }
    }

    #[test]
    fn segmentation_picks_hinted_component() {
        let img = RgbImage::from_fn(20, 10, |x, _| {
            if (2..5).contains(&x) || (10..18).contains(&x) {
                Rgb([0, 0, 0])
            } else {
                Rgb([255, 255, 255])
            }
        });
        let big = segment_mask(&img, None, 32).unwrap();
        assert_eq!(big.count(), 8 * 10);
        let small = segment_mask(&img, Some(Hint::Point(3.0, 5.0)), 32).unwrap();
        assert_eq!(small.count(), 3 * 10);
        let boxed = segment_mask(&img, Some(Hint::Box(PixelBox::new(0, 0, 6, 10))), 32).unwrap();
        assert_eq!(boxed, small);
        assert!(segment_mask(&img, Some(Hint::Box(PixelBox::new(6, 0, 9, 10))), 32).is_err());
    }
}
