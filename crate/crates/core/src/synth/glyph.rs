//! Procedural "car glyph" renderer.
//!
//! A side-view car made of a body polygon, a cabin with an inset window and
//! two wheels. Pixels are point-sampled at their centers with no
//! antialiasing, so the renderer's own coverage mask is exact and every
//! glyph is a single 8-connected component.

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::Mask;

pub const WINDOW_RGB: [u8; 3] = [150, 160, 170];
pub const WHEEL_RGB: [u8; 3] = [40, 40, 40];
pub const START_BACKGROUND: [u8; 3] = [255, 255, 255];

/// Shape parameters, in units of the body length.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub length: f64,
    pub body_height: f64,
    pub cabin_start: f64,
    pub cabin_end: f64,
    pub roof_height: f64,
    pub cabin_slope: f64,
    pub wheel_radius: f64,
    pub body_rgb: [u8; 3],
}

/// Known object types and their glyph proportions.
pub const OBJECT_TYPES: [&str; 5] = ["sports car", "sedan", "smart car", "SUV", "coupe car"];

impl GlyphSpec {
    pub fn for_type(object_type: &str) -> Result<GlyphSpec> {
        let g = |length, body_height, cabin_start, cabin_end, roof_height, cabin_slope, wheel_radius, body_rgb| GlyphSpec {
            length,
            body_height,
            cabin_start,
            cabin_end,
            roof_height,
            cabin_slope,
            wheel_radius,
            body_rgb,
        };
        let spec = match object_type {
            "sports car" => g(1.0, 0.20, 0.32, 0.72, 0.12, 0.10, 0.10, [200, 30, 30]),
            "sedan" => g(1.0, 0.24, 0.25, 0.76, 0.18, 0.07, 0.11, [40, 70, 190]),
            "smart car" => g(0.62, 0.30, 0.18, 0.86, 0.26, 0.05, 0.10, [235, 120, 20]),
            "SUV" => g(1.0, 0.30, 0.14, 0.86, 0.24, 0.03, 0.13, [30, 120, 60]),
            "coupe car" => g(0.95, 0.22, 0.28, 0.70, 0.15, 0.12, 0.10, [120, 40, 160]),
            other => return Err(Error::config(format!("unknown object type `{other}`"))),
        };
        Ok(spec)
    }

    /// Height of the glyph in units of the unit length.
    fn total_height(&self) -> f64 {
        self.body_height + self.roof_height
    }
}

type Poly = Vec<(f64, f64)>;

fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut c = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            c = !c;
        }
        j = i;
    }
    c
}

/// Renders `spec` with its length spanning `length_px` pixels, ground line at
/// `ground_y`, left end at `left_x`. Returns the image and the glyph mask.
pub fn render_glyph(
    spec: &GlyphSpec,
    canvas: (u32, u32),
    left_x: f64,
    ground_y: f64,
    length_px: f64,
) -> (RgbImage, Mask) {
    let unit = length_px / spec.length;
    let l = spec.length;
    let r = spec.wheel_radius;
    let b0 = r * 0.6;
    let b1 = spec.body_height;
    let body: Poly = vec![
        (0.0, b0),
        (0.0, b1 * 0.75),
        (0.06 * l, b1),
        (0.94 * l, b1),
        (l, b1 * 0.65),
        (l, b0),
    ];
    let (c0, c1) = (spec.cabin_start * l, spec.cabin_end * l);
    let roof = b1 + spec.roof_height;
    let slope = spec.cabin_slope * l;
    let cabin: Poly = vec![(c0, b1 - 0.02), (c0 + slope, roof), (c1 - slope, roof), (c1, b1 - 0.02)];
    let inset = 0.025;
    let window: Poly = vec![
        (c0 + inset * 1.8, b1),
        (c0 + slope + inset, roof - inset),
        (c1 - slope - inset, roof - inset),
        (c1 - inset * 1.8, b1),
    ];
    let wheels = [(0.2 * l, r), (0.8 * l, r)];

    let mut img = RgbImage::from_pixel(canvas.0, canvas.1, Rgb(START_BACKGROUND));
    let mut mask = Mask::new(canvas.0, canvas.1);
    for py in 0..canvas.1 {
        for px in 0..canvas.0 {
            // glyph coordinates, y up from the ground line
            let gx = (f64::from(px) + 0.5 - left_x) / unit;
            let gy = (ground_y - (f64::from(py) + 0.5)) / unit;
            let color = if wheels.iter().any(|(wx, wy)| (gx - wx).powi(2) + (gy - wy).powi(2) <= r * r) {
                Some(WHEEL_RGB)
            } else if inside(&window, gx, gy) {
                Some(WINDOW_RGB)
            } else if inside(&body, gx, gy) || inside(&cabin, gx, gy) {
                Some(spec.body_rgb)
            } else {
                None
            };
            if let Some(c) = color {
                img.put_pixel(px, py, Rgb(c));
                mask.set(px, py, true);
            }
        }
    }
    (img, mask)
}

/// Start image for an object type: the glyph centered on a white canvas,
/// spanning 75% of the canvas width.
pub fn start_image(object_type: &str, canvas: (u32, u32)) -> Result<(RgbImage, Mask)> {
    let spec = GlyphSpec::for_type(object_type)?;
    let (w, h) = (f64::from(canvas.0), f64::from(canvas.1));
    let mut length_px = 0.75 * w * spec.length;
    let max_h = 0.8 * h;
    let glyph_h = spec.total_height() / spec.length * length_px;
    if glyph_h > max_h {
        length_px *= max_h / glyph_h;
    }
    let left = ((w - length_px) / 2.0).floor();
    let glyph_h = spec.total_height() / spec.length * length_px;
    let ground = ((h + glyph_h) / 2.0).floor();
    let (img, mask) = render_glyph(&spec, canvas, left, ground, length_px);
    if mask.is_empty() {
        return Err(Error::config(format!("canvas {canvas:?} too small for a glyph")));
    }
    Ok((img, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn components(mask: &Mask) -> usize {
        let (w, h) = mask.dimensions();
        let mut seen = Mask::new(w, h);
        let mut n = 0;
        for (x, y) in mask.iter_set() {
            if seen.get(x, y) {
                continue;
            }
            n += 1;
            let mut stack = vec![(x, y)];
            seen.set(x, y, true);
            while let Some((cx, cy)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (i64::from(cx) + dx, i64::from(cy) + dy);
                        if mask.get_signed(nx, ny) && !seen.get(nx as u32, ny as u32) {
                            seen.set(nx as u32, ny as u32, true);
                            stack.push((nx as u32, ny as u32));
                        }
                    }
                }
            }
        }
        n
    }

    #[test]
    fn every_type_is_one_component() {
        for t in OBJECT_TYPES {
            let (img, mask) = start_image(t, (96, 64)).unwrap();
            assert_eq!(components(&mask), 1, "{t}");
            assert!(mask.count() > 200, "{t}");
            // mask is exactly the non-white pixels
            for (x, y, p) in img.enumerate_pixels() {
                assert_eq!(mask.get(x, y), p.0 != START_BACKGROUND, "{t} at {x},{y}");
            }
        }
    }

    #[test]
    fn unknown_type_rejected() {
        assert!(start_image("tank", (96, 64)).is_err());
    }
}
