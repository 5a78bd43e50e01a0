//! RGB <-> HSL conversion.

use crate::num::{to_u8, Real};

/// Hue in degrees `[0, 360)`, saturation and lightness in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsl<R> {
    pub h: R,
    pub s: R,
    pub l: R,
}

pub fn rgb_to_hsl<R: Real>(rgb: [u8; 3]) -> Hsl<R> {
    let c = |v: u8| R::from_u8(v).unwrap() / R::lit(255.0);
    let (r, g, b) = (c(rgb[0]), c(rgb[1]), c(rgb[2]));
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let two = R::lit(2.0);
    let l = (max + min) / two;
    let d = max - min;
    if d <= R::zero() {
        return Hsl {
            h: R::zero(),
            s: R::zero(),
            l,
        };
    }
    let s = d / (R::one() - (two * l - R::one()).abs());
    let sixty = R::lit(60.0);
    let mut h = if max == r {
        sixty * (((g - b) / d) % R::lit(6.0))
    } else if max == g {
        sixty * ((b - r) / d + two)
    } else {
        sixty * ((r - g) / d + R::lit(4.0))
    };
    if h < R::zero() {
        h = h + R::lit(360.0);
    }
    Hsl { h, s: s.min(R::one()), l }
}

pub fn hsl_to_rgb<R: Real>(hsl: Hsl<R>) -> [u8; 3] {
    let two = R::lit(2.0);
    let c = (R::one() - (two * hsl.l - R::one()).abs()) * hsl.s;
    let hp = (hsl.h % R::lit(360.0)) / R::lit(60.0);
    let x = c * (R::one() - ((hp % two) - R::one()).abs());
    let (r1, g1, b1) = match hp.to_u8().unwrap_or(0) {
        0 => (c, x, R::zero()),
        1 => (x, c, R::zero()),
        2 => (R::zero(), c, x),
        3 => (R::zero(), x, c),
        4 => (x, R::zero(), c),
        _ => (c, R::zero(), x),
    };
    let m = hsl.l - c / two;
    let k = R::lit(255.0);
    [to_u8((r1 + m) * k), to_u8((g1 + m) * k), to_u8((b1 + m) * k)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        let red = rgb_to_hsl::<f64>([255, 0, 0]);
        assert_eq!((red.h, red.s, red.l), (0.0, 1.0, 0.5));
        let green = rgb_to_hsl::<f64>([0, 255, 0]);
        assert_eq!(green.h, 120.0);
        let blue = rgb_to_hsl::<f32>([0, 0, 255]);
        assert_eq!(blue.h, 240.0);
        assert_eq!(rgb_to_hsl::<f64>([128, 128, 128]).s, 0.0);
    }

    #[test]
    fn roundtrip_all_sampled_colors() {
        for r in (0..=255).step_by(15) {
            for g in (0..=255).step_by(17) {
                for b in (0..=255).step_by(51) {
                    let rgb = [r as u8, g as u8, b as u8];
                    assert_eq!(hsl_to_rgb(rgb_to_hsl::<f64>(rgb)), rgb, "{rgb:?}");
                }
            }
        }
    }
}
