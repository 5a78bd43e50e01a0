//! Axis-aligned boxes.
//!
//! Coordinates follow the canvas convention used everywhere in the crate:
//! origin top-left, x to the right, y downward, and boxes are half-open,
//! `[x1, x2) x [y1, y2)`, so a box's area is exactly `(x2-x1)*(y2-y1)`.

use serde::{Deserialize, Serialize};

use crate::num::{Coord, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[T; 4]", from = "[T; 4]")]
#[serde(bound(serialize = "T: Coord + Serialize", deserialize = "T: Coord + Deserialize<'de>"))]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Coord> From<BBox<T>> for [T; 4] {
    fn from(b: BBox<T>) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl<T: Coord> From<[T; 4]> for BBox<T> {
    fn from(a: [T; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

fn max<T: PartialOrd>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

fn min<T: PartialOrd>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}

impl<T: Coord> BBox<T> {
    pub const fn new(x1: T, y1: T, x2: T, y2: T) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    /// `x1 < x2` and `y1 < y2`.
    pub fn is_well_ordered(&self) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2
    }

    pub fn width(&self) -> T {
        if self.x2 > self.x1 {
            self.x2 - self.x1
        } else {
            T::zero()
        }
    }

    pub fn height(&self) -> T {
        if self.y2 > self.y1 {
            self.y2 - self.y1
        } else {
            T::zero()
        }
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        let b = BBox::new(
            max(self.x1, other.x1),
            max(self.y1, other.y1),
            min(self.x2, other.x2),
            min(self.y2, other.y2),
        );
        b.is_well_ordered().then_some(b)
    }

    /// `true` when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Self) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    /// Intersection over union, evaluated in `R`.
    ///
    /// Degenerate (zero-area) boxes yield 0.
    pub fn iou<R: Real>(&self, other: &Self) -> R {
        let inter = match self.intersection(other) {
            Some(i) => i,
            None => return R::zero(),
        };
        let ia: R = cast(inter.area());
        let union: R = cast::<T, R>(self.area()) + cast::<T, R>(other.area()) - ia;
        if union <= R::zero() {
            R::zero()
        } else {
            ia / union
        }
    }

    pub fn cast<U: Coord>(&self) -> BBox<U> {
        BBox::new(cast(self.x1), cast(self.y1), cast(self.x2), cast(self.y2))
    }
}

fn cast<T: Coord, U: num_traits::NumCast>(v: T) -> U {
    U::from(v).expect("coordinate representable in target scalar")
}

/// Standalone form of [`BBox::iou`] on real-valued boxes.
pub fn iou<R: Real>(a: &BBox<R>, b: &BBox<R>) -> R {
    a.iou(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_identity_and_disjoint() {
        let a = BBox::new(1.0, 2.0, 5.0, 9.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BBox::new(5.0, 2.0, 8.0, 9.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_half_overlap_is_one_third() {
        // intersection 5x10 = 50 cells, union 100 + 100 - 50 = 150
        let a = BBox::<u32>::new(0, 0, 10, 10);
        let b = BBox::<u32>::new(5, 0, 15, 10);
        assert_eq!(a.iou::<f64>(&b), 1.0 / 3.0);
    }

    #[test]
    fn degenerate_boxes_have_zero_iou() {
        let a = BBox::new(3.0f32, 3.0, 3.0, 8.0);
        assert_eq!(a.iou::<f32>(&a), 0.0);
    }

    #[test]
    fn serializes_as_array() {
        let b = BBox::<u32>::new(2, 1, 6, 7);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[2,1,6,7]");
        let back: BBox<u32> = serde_json::from_str("[2,1,6,7]").unwrap();
        assert_eq!(back, b);
    }
}
