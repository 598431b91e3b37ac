//! Box geometry on the layout grid: pixel mapping, overlap, spatial
//! relations, betweenness, and arrow anchors.

use serde::{Deserialize, Serialize};

use crate::plan::{GridBox, GRID};

/// Default margin, in grid units, for directional relations.
pub const DEFAULT_MARGIN: f64 = 2.0;
/// Default perpendicular tolerance, in grid units, for [`is_between`].
pub const DEFAULT_BETWEEN_TOLERANCE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelRect {
    pub fn center(&self) -> Point {
        Point { x: self.x + self.w / 2.0, y: self.y + self.h / 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn dist2(self, other: Point) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        dx * dx + dy * dy
    }

    pub fn scale(self, k: f64) -> Point {
        Point { x: self.x * k, y: self.y * k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("canvas side must be positive, got {0}")]
pub struct BadCanvas(pub f64);

/// Maps a grid box onto a square canvas of side `canvas_side` pixels.
pub fn to_pixels(b: GridBox, canvas_side: f64) -> Result<PixelRect, BadCanvas> {
    if !canvas_side.is_finite() || canvas_side <= 0.0 {
        return Err(BadCanvas(canvas_side));
    }
    let k = canvas_side / f64::from(GRID);
    Ok(PixelRect {
        x: f64::from(b.x) * k,
        y: f64::from(b.y) * k,
        w: f64::from(b.w) * k,
        h: f64::from(b.h) * k,
    })
}

fn intersection_area(a: GridBox, b: GridBox) -> u64 {
    let w = a.right().min(b.right()).saturating_sub(a.x.max(b.x));
    let h = a.bottom().min(b.bottom()).saturating_sub(a.y.max(b.y));
    u64::from(w) * u64::from(h)
}

/// Intersection over union. Zero for disjoint or edge-touching boxes.
pub fn iou(a: GridBox, b: GridBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Directional and overlap relations of one box with respect to another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpatialRelations {
    pub left_of: bool,
    pub right_of: bool,
    pub above: bool,
    pub below: bool,
    pub overlapping: bool,
}

impl SpatialRelations {
    pub fn is_empty(&self) -> bool {
        *self == SpatialRelations::default()
    }
}

/// Relations of `a` with respect to `b`, judged on box centers with the
/// given margin. `LeftOf` and `Above` may both hold.
pub fn spatial_relation(a: GridBox, b: GridBox, margin: f64) -> SpatialRelations {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    SpatialRelations {
        left_of: ax + margin <= bx,
        right_of: bx + margin <= ax,
        above: ay + margin <= by,
        below: by + margin <= ay,
        overlapping: iou(a, b) > 0.0,
    }
}

/// Whether the center of `mid` projects strictly inside the segment between
/// the centers of `a` and `b` and lies within `tolerance` of that segment's
/// line.
pub fn is_between(mid: GridBox, a: GridBox, b: GridBox, tolerance: f64) -> bool {
    let (mx, my) = mid.center();
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return false;
    }
    let (px, py) = (mx - ax, my - ay);
    let t = (px * dx + py * dy) / len2;
    if !(t > 0.0 && t < 1.0) {
        return false;
    }
    let cross = px * dy - py * dx;
    // squared perpendicular distance = cross^2 / len2
    cross * cross <= tolerance * tolerance * len2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Top,
    Right,
    Bottom,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Top, Side::Right, Side::Bottom, Side::Left];
}

/// Edge-midpoint of a box, in grid units.
pub fn anchor(b: GridBox, side: Side) -> Point {
    let (cx, cy) = b.center();
    match side {
        Side::Top => Point { x: cx, y: f64::from(b.y) },
        Side::Right => Point { x: f64::from(b.right()), y: cy },
        Side::Bottom => Point { x: cx, y: f64::from(b.bottom()) },
        Side::Left => Point { x: f64::from(b.x), y: cy },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPair {
    pub from_side: Side,
    pub from: Point,
    pub to_side: Side,
    pub to: Point,
}

/// Closest pair of edge-midpoints between two boxes. Ties go to the first
/// pair in (top, right, bottom, left) order on `a`, then on `b`.
pub fn anchor_pair(a: GridBox, b: GridBox) -> AnchorPair {
    let mut best: Option<(f64, AnchorPair)> = None;
    for sa in Side::ALL {
        let pa = anchor(a, sa);
        for sb in Side::ALL {
            let pb = anchor(b, sb);
            let d = pa.dist2(pb);
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, AnchorPair { from_side: sa, from: pa, to_side: sb, to: pb }));
            }
        }
    }
    best.map(|(_, p)| p).expect("sixteen candidates")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::fixtures::bx;
    use proptest::prelude::*;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn pixel_mapping() {
        let r = to_pixels(bx(24, 50, 14, 14), 512.0).unwrap();
        assert!(approx(r.x, 122.88) && approx(r.y, 256.0) && approx(r.w, 71.68) && approx(r.h, 71.68));
        assert_eq!(to_pixels(bx(0, 0, 100, 100), 512.0).unwrap(), PixelRect { x: 0.0, y: 0.0, w: 512.0, h: 512.0 });
        assert_eq!(to_pixels(bx(50, 24, 14, 14), 100.0).unwrap(), PixelRect { x: 50.0, y: 24.0, w: 14.0, h: 14.0 });
        assert!(to_pixels(bx(0, 0, 1, 1), 0.0).is_err());
        assert!(to_pixels(bx(0, 0, 1, 1), -3.0).is_err());
        assert!(to_pixels(bx(0, 0, 1, 1), f64::NAN).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bx(0, 0, 10, 10);
        assert_eq!(iou(a, a), 1.0);
        assert_eq!(iou(a, bx(50, 50, 10, 10)), 0.0);
        // intersection 5x5 = 25, union 100 + 100 - 25 = 175
        assert!(approx(iou(a, bx(5, 5, 10, 10)), 25.0 / 175.0));
        assert_eq!(iou(a, bx(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn spatial_examples() {
        let r = spatial_relation(bx(24, 50, 14, 14), bx(74, 50, 14, 14), DEFAULT_MARGIN);
        assert_eq!(r, SpatialRelations { left_of: true, ..Default::default() });
        let a = bx(30, 30, 10, 10);
        assert_eq!(spatial_relation(a, a, DEFAULT_MARGIN), SpatialRelations { overlapping: true, ..Default::default() });
        let r = spatial_relation(bx(0, 0, 10, 10), bx(50, 50, 10, 10), DEFAULT_MARGIN);
        assert_eq!(r, SpatialRelations { left_of: true, above: true, ..Default::default() });
        // centers 1 unit apart fall inside the margin
        let r = spatial_relation(bx(0, 0, 10, 10), bx(1, 0, 10, 10), DEFAULT_MARGIN);
        assert!(!r.left_of && !r.right_of && r.overlapping);
    }

    #[test]
    fn betweenness_examples() {
        let sun = bx(5, 40, 20, 20);
        let earth = bx(40, 45, 10, 10);
        let moon = bx(70, 47, 6, 6);
        assert!(is_between(earth, sun, moon, DEFAULT_BETWEEN_TOLERANCE));
        assert!(!is_between(moon, sun, earth, DEFAULT_BETWEEN_TOLERANCE));
        // off-axis by 40 units
        let far = bx(40, 5, 10, 10);
        assert!(!is_between(far, sun, moon, DEFAULT_BETWEEN_TOLERANCE));
        assert!(!is_between(earth, sun, sun, DEFAULT_BETWEEN_TOLERANCE));
    }

    #[test]
    fn anchors() {
        let p = anchor_pair(bx(10, 40, 10, 10), bx(60, 40, 10, 10));
        assert_eq!((p.from_side, p.to_side), (Side::Right, Side::Left));
        assert_eq!((p.from, p.to), (Point { x: 20.0, y: 45.0 }, Point { x: 60.0, y: 45.0 }));
        let p = anchor_pair(bx(40, 10, 10, 10), bx(40, 60, 10, 10));
        assert_eq!((p.from_side, p.to_side), (Side::Bottom, Side::Top));
        let a = bx(40, 40, 10, 10);
        let p = anchor_pair(a, a);
        assert_eq!((p.from_side, p.to_side), (Side::Top, Side::Top));
    }

    fn arb_box() -> impl Strategy<Value = GridBox> {
        (0u32..=100, 0u32..=100, 1u32..=100, 1u32..=100).prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let v = iou(a, b);
            prop_assert_eq!(v, iou(b, a));
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(iou(a, a), 1.0);
        }

        #[test]
        fn directional_antisymmetry(a in arb_box(), b in arb_box()) {
            let ab = spatial_relation(a, b, DEFAULT_MARGIN);
            let ba = spatial_relation(b, a, DEFAULT_MARGIN);
            prop_assert!(!(ab.left_of && ba.left_of));
            prop_assert!(!(ab.above && ba.above));
            prop_assert_eq!(ab.left_of, ba.right_of);
            prop_assert_eq!(ab.above, ba.below);
        }

        #[test]
        fn between_symmetric(m in arb_box(), a in arb_box(), b in arb_box()) {
            prop_assert_eq!(
                is_between(m, a, b, DEFAULT_BETWEEN_TOLERANCE),
                is_between(m, b, a, DEFAULT_BETWEEN_TOLERANCE)
            );
        }

        #[test]
        fn pixels_linear(b in arb_box(), side in 1u32..4096) {
            let s = f64::from(side);
            let one = to_pixels(b, s).unwrap();
            let two = to_pixels(b, 2.0 * s).unwrap();
            prop_assert_eq!(two.x, 2.0 * one.x);
            prop_assert_eq!(two.y, 2.0 * one.y);
            prop_assert_eq!(two.w, 2.0 * one.w);
            prop_assert_eq!(two.h, 2.0 * one.h);
        }
    }
}
