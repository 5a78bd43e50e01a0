use image::{GrayImage, Luma, RgbaImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::PixelBox;

/// Binary image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; (width as usize) * (height as usize)],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    /// Pixels with alpha > 0.
    pub fn from_alpha(img: &RgbaImage) -> Self {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[3] > 0)
    }

    /// Pixels with a nonzero value.
    pub fn from_gray(img: &GrayImage) -> Self {
        Mask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] > 0)
    }

    /// 0/255 grayscale rendering.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        (y as usize) * (self.width as usize) + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.idx(x, y)]
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < u64::from(self.width) && (y as u64) < u64::from(self.height) && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let i = self.idx(x, y);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!(self.dimensions(), other.dimensions(), "mask dimensions differ");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: u32) -> Mask {
        let r = i64::from(radius);
        let mut out = Mask::new(self.width, self.height);
        for (x, y) in self.iter_set() {
            let (x, y) = (i64::from(x), i64::from(y));
            for yy in (y - r).max(0)..=(y + r).min(i64::from(self.height) - 1) {
                for xx in (x - r).max(0)..=(x + r).min(i64::from(self.width) - 1) {
                    out.set(xx as u32, yy as u32, true);
                }
            }
        }
        out
    }

    /// Smallest half-open box containing every set pixel.
    pub fn tight_bbox(&self) -> Result<PixelBox> {
        let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let w = self.width as usize;
        for (row, chunk) in self.bits.chunks(w.max(1)).enumerate() {
            let first = match chunk.iter().position(|b| *b) {
                Some(p) => p as u32,
                None => continue,
            };
            let last = chunk.iter().rposition(|b| *b).unwrap_or(0) as u32;
            let row = row as u32;
            x1 = x1.min(first);
            x2 = x2.max(last + 1);
            y1 = y1.min(row);
            y2 = row + 1;
        }
        if x1 == u32::MAX {
            return Err(Error::EmptyAsset);
        }
        Ok(PixelBox::new(x1, y1, x2, y2))
    }

    /// Mean (x, y) of set pixels, in pixel-center coordinates.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0usize);
        for (x, y) in self.iter_set() {
            sx += f64::from(x) + 0.5;
            sy += f64::from(y) + 0.5;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub fn crop(&self, b: &PixelBox) -> Mask {
        Mask::from_fn(b.width(), b.height(), |x, y| self.get(b.x1 + x, b.y1 + y))
    }
}
