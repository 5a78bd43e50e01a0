//! Deterministic resampling of RGBA assets.
//!
//! Color is interpolated premultiplied by alpha so transparent pixels never
//! bleed into the object. Alpha is re-binarized afterwards (`> 127` becomes
//! opaque), which keeps the "mask = alpha > 0" invariant crisp.

use image::{Rgba, RgbaImage};

use crate::num::{to_u8, Real};

const ALPHA_CUT: u8 = 127;

fn premul<R: Real>(p: Rgba<u8>) -> [R; 4] {
    let a = R::from_u8(p[3]).unwrap() / R::lit(255.0);
    [
        R::from_u8(p[0]).unwrap() * a,
        R::from_u8(p[1]).unwrap() * a,
        R::from_u8(p[2]).unwrap() * a,
        R::from_u8(p[3]).unwrap(),
    ]
}

fn finish<R: Real>(acc: [R; 4]) -> Rgba<u8> {
    let alpha = to_u8(acc[3]);
    if alpha <= ALPHA_CUT {
        return Rgba([0, 0, 0, 0]);
    }
    let a = acc[3] / R::lit(255.0);
    Rgba([to_u8(acc[0] / a), to_u8(acc[1] / a), to_u8(acc[2] / a), 255])
}

/// Bilinear upscaling by an integer factor (pixel-center aligned).
pub fn bilinear_upscale<R: Real>(src: &RgbaImage, factor: u32) -> RgbaImage {
    if factor == 1 {
        return src.clone();
    }
    let (w, h) = src.dimensions();
    let f = R::from_u32(factor).unwrap();
    let half = R::lit(0.5);
    let max_x = R::from_u32(w - 1).unwrap();
    let max_y = R::from_u32(h - 1).unwrap();
    RgbaImage::from_fn(w * factor, h * factor, |x, y| {
        let sx = ((R::from_u32(x).unwrap() + half) / f - half).max(R::zero()).min(max_x);
        let sy = ((R::from_u32(y).unwrap() + half) / f - half).max(R::zero()).min(max_y);
        let x0 = sx.floor().to_u32().unwrap();
        let y0 = sy.floor().to_u32().unwrap();
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let tx = sx - R::from_u32(x0).unwrap();
        let ty = sy - R::from_u32(y0).unwrap();
        let p00 = premul::<R>(*src.get_pixel(x0, y0));
        let p10 = premul::<R>(*src.get_pixel(x1, y0));
        let p01 = premul::<R>(*src.get_pixel(x0, y1));
        let p11 = premul::<R>(*src.get_pixel(x1, y1));
        let mut acc = [R::zero(); 4];
        for c in 0..4 {
            let top = p00[c] * (R::one() - tx) + p10[c] * tx;
            let bot = p01[c] * (R::one() - tx) + p11[c] * tx;
            acc[c] = top * (R::one() - ty) + bot * ty;
        }
        finish(acc)
    })
}

/// Coverage of source cells `[i, i+1)` by the interval `[a, b)`.
fn coverage<R: Real>(a: R, b: R, len: u32) -> Vec<(u32, R)> {
    let start = a.floor().to_u32().unwrap_or(0);
    let end = b.ceil().to_u32().unwrap_or(len).min(len);
    (start..end)
        .filter_map(|i| {
            let lo = R::from_u32(i).unwrap().max(a);
            let hi = R::from_u32(i + 1).unwrap().min(b);
            (hi > lo).then_some((i, hi - lo))
        })
        .collect()
}

/// Area-averaging resize to exactly `out_w x out_h`.
pub fn area_resize<R: Real>(src: &RgbaImage, out_w: u32, out_h: u32) -> RgbaImage {
    let (w, h) = src.dimensions();
    let sx = R::from_u32(w).unwrap() / R::from_u32(out_w).unwrap();
    let sy = R::from_u32(h).unwrap() / R::from_u32(out_h).unwrap();
    let cols: Vec<_> = (0..out_w)
        .map(|x| {
            let a = R::from_u32(x).unwrap() * sx;
            coverage(a, a + sx, w)
        })
        .collect();
    let rows: Vec<_> = (0..out_h)
        .map(|y| {
            let a = R::from_u32(y).unwrap() * sy;
            coverage(a, a + sy, h)
        })
        .collect();
    let norm = sx * sy;
    RgbaImage::from_fn(out_w, out_h, |x, y| {
        let mut acc = [R::zero(); 4];
        for &(sy_i, wy) in &rows[y as usize] {
            for &(sx_i, wx) in &cols[x as usize] {
                let p = premul::<R>(*src.get_pixel(sx_i, sy_i));
                let wgt = wx * wy;
                for c in 0..4 {
                    acc[c] = acc[c] + p[c] * wgt;
                }
            }
        }
        for v in &mut acc {
            *v = *v / norm;
        }
        finish(acc)
    })
}
