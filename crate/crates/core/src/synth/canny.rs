//! Canny edge detection: Gaussian smoothing, Sobel gradients, non-maximum
//! suppression and hysteresis thresholding.
//!
//! Magnitudes are normalized so that an unsmoothed axis-aligned step from
//! intensity 0 to 1 has magnitude 1; thresholds are on that scale.
//!
//! The smoothing kernel radius is `ceil(3*sigma) - 1`, so the combined
//! smoothing + Sobel stencil reaches exactly `ceil(3*sigma)` pixels. Edges
//! can therefore never appear further than `ceil(3*sigma)` from the object.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::num::Real;
use crate::scene::ObjectAsset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams<R> {
    pub sigma: R,
    pub low: R,
    pub high: R,
}

impl<R: Real> Default for CannyParams<R> {
    fn default() -> Self {
        CannyParams {
            sigma: R::lit(1.4),
            low: R::lit(0.1),
            high: R::lit(0.2),
        }
    }
}

impl<R: Real> CannyParams<R> {
    pub fn new(sigma: R, low: R, high: R) -> Result<Self> {
        let p = CannyParams { sigma, low, high };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > R::zero()) || !self.sigma.is_finite() {
            return Err(Error::config(format!("canny sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.low > R::zero() && self.low < self.high) {
            return Err(Error::config(format!(
                "canny thresholds need 0 < low < high, got low={} high={}",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// Reach of the smoothing + gradient stencil, in pixels.
    pub fn support(&self) -> u32 {
        (R::lit(3.0) * self.sigma).ceil().to_u32().unwrap_or(1).max(1)
    }

    fn kernel(&self) -> Vec<R> {
        let radius = self.support() as i64 - 1;
        let two_s2 = R::lit(2.0) * self.sigma * self.sigma;
        let mut k: Vec<R> = (-radius..=radius)
            .map(|i| {
                let x = R::from_i64(i).unwrap();
                (-(x * x) / two_s2).exp()
            })
            .collect();
        let sum = k.iter().fold(R::zero(), |a, b| a + *b);
        for v in &mut k {
            *v = *v / sum;
        }
        k
    }
}

/// Row-major scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<R> {
    pub width: u32,
    pub height: u32,
    pub data: Vec<R>,
}

impl<R: Real> Plane<R> {
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> R) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: u32, y: u32) -> R {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Replicated border.
    #[inline]
    fn clamped(&self, x: i64, y: i64) -> R {
        let cx = x.clamp(0, i64::from(self.width) - 1) as u32;
        let cy = y.clamp(0, i64::from(self.height) - 1) as u32;
        self.at(cx, cy)
    }

    /// Zero outside the image.
    #[inline]
    fn or_zero(&self, x: i64, y: i64) -> R {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            R::zero()
        } else {
            self.at(x as u32, y as u32)
        }
    }
}

/// Luminance in `[0, 1]` of the asset composited over white.
pub fn luminance<R: Real>(asset: &ObjectAsset) -> Plane<R> {
    let px = asset.pixels();
    let k = R::lit(255.0);
    Plane::from_fn(px.width(), px.height(), |x, y| {
        let p = px.get_pixel(x, y).0;
        let a = R::from_u8(p[3]).unwrap() / k;
        let ch = |c: u8| a * R::from_u8(c).unwrap() / k + (R::one() - a);
        R::lit(0.299) * ch(p[0]) + R::lit(0.587) * ch(p[1]) + R::lit(0.114) * ch(p[2])
    })
}

pub fn gaussian_blur<R: Real>(plane: &Plane<R>, params: &CannyParams<R>) -> Plane<R> {
    let k = params.kernel();
    let r = (k.len() / 2) as i64;
    let horiz = Plane::from_fn(plane.width, plane.height, |x, y| {
        k.iter().enumerate().fold(R::zero(), |acc, (i, w)| {
            acc + *w * plane.clamped(i64::from(x) + i as i64 - r, i64::from(y))
        })
    });
    Plane::from_fn(plane.width, plane.height, |x, y| {
        k.iter().enumerate().fold(R::zero(), |acc, (i, w)| {
            acc + *w * horiz.clamped(i64::from(x), i64::from(y) + i as i64 - r)
        })
    })
}

/// Sobel derivatives `(gx, gy)` with replicated borders, unnormalized.
pub fn sobel<R: Real>(plane: &Plane<R>) -> (Plane<R>, Plane<R>) {
    let two = R::lit(2.0);
    let gx = Plane::from_fn(plane.width, plane.height, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        let right = plane.clamped(x + 1, y - 1) + two * plane.clamped(x + 1, y) + plane.clamped(x + 1, y + 1);
        let left = plane.clamped(x - 1, y - 1) + two * plane.clamped(x - 1, y) + plane.clamped(x - 1, y + 1);
        right - left
    });
    let gy = Plane::from_fn(plane.width, plane.height, |x, y| {
        let (x, y) = (i64::from(x), i64::from(y));
        let down = plane.clamped(x - 1, y + 1) + two * plane.clamped(x, y + 1) + plane.clamped(x + 1, y + 1);
        let up = plane.clamped(x - 1, y - 1) + two * plane.clamped(x, y - 1) + plane.clamped(x + 1, y - 1);
        down - up
    });
    (gx, gy)
}

/// Quantized gradient direction as a neighbor offset with nonnegative y
/// (or `(1, 0)`).
pub fn quantize_direction<R: Real>(gx: R, gy: R) -> (i64, i64) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < R::zero() {
        angle = angle + R::lit(180.0);
    }
    let a = angle.to_f64().unwrap_or(0.0);
    if !(22.5..157.5).contains(&a) {
        (1, 0)
    } else if a < 67.5 {
        (1, 1)
    } else if a < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Intermediate planes of a Canny run, kept for inspection and testing.
#[derive(Debug, Clone)]
pub struct CannyTrace<R> {
    /// Normalized gradient magnitude.
    pub magnitude: Plane<R>,
    /// Magnitude after non-maximum suppression (zero where suppressed).
    pub thinned: Plane<R>,
    pub edges: Mask,
}

pub fn canny_plane<R: Real>(plane: &Plane<R>, params: &CannyParams<R>) -> Result<CannyTrace<R>> {
    params.validate()?;
    let blurred = gaussian_blur(plane, params);
    let (gx, gy) = sobel(&blurred);
    let four = R::lit(4.0);
    let magnitude = Plane::from_fn(plane.width, plane.height, |x, y| gx.at(x, y).hypot(gy.at(x, y)) / four);

    // A pixel survives if it beats its predecessor along the gradient
    // strictly and its successor or equals it; exact plateaus of width two
    // keep only one pixel.
    let thinned = Plane::from_fn(plane.width, plane.height, |x, y| {
        let m = magnitude.at(x, y);
        if m <= R::zero() {
            return R::zero();
        }
        let (dx, dy) = quantize_direction(gx.at(x, y), gy.at(x, y));
        let (xi, yi) = (i64::from(x), i64::from(y));
        let before = magnitude.or_zero(xi - dx, yi - dy);
        let after = magnitude.or_zero(xi + dx, yi + dy);
        if m > before && m >= after {
            m
        } else {
            R::zero()
        }
    });

    let edges = hysteresis(&thinned, params.low, params.high);
    Ok(CannyTrace {
        magnitude,
        thinned,
        edges,
    })
}

/// Keeps pixels `>= low` that are 8-connected through such pixels to a
/// pixel `>= high`.
fn hysteresis<R: Real>(thinned: &Plane<R>, low: R, high: R) -> Mask {
    let (w, h) = (thinned.width, thinned.height);
    let mut out = Mask::new(w, h);
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if thinned.at(x, y) >= high && !out.get(x, y) {
                out.set(x, y, true);
                queue.push_back((x, y));
                while let Some((cx, cy)) = queue.pop_front() {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let (nx, ny) = (i64::from(cx) + dx, i64::from(cy) + dy);
                            if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                                continue;
                            }
                            let (nx, ny) = (nx as u32, ny as u32);
                            if !out.get(nx, ny) && thinned.at(nx, ny) >= low {
                                out.set(nx, ny, true);
                                queue.push_back((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Binary edge map of an asset.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    edges: Mask,
}

impl EdgeMap {
    pub fn edges(&self) -> &Mask {
        &self.edges
    }

    pub fn dimensions(&self) -> (u32, u32) {
        self.edges.dimensions()
    }

    pub fn count(&self) -> usize {
        self.edges.count()
    }
}

pub fn canny_edges<R: Real>(asset: &ObjectAsset, params: &CannyParams<R>) -> Result<EdgeMap> {
    let trace = canny_plane(&luminance::<R>(asset), params)?;
    Ok(EdgeMap { edges: trace.edges })
}
