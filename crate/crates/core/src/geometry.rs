//! Oriented 3D boxes, point clouds, and overlap computation.
//!
//! Boxes live in a right-handed sensor frame with the sensor at the origin;
//! yaw rotates the box about +z, measured from +x. Footprint overlap is
//! computed exactly by clipping one yaw-rotated rectangle against the other
//! (Sutherland–Hodgman) and taking the shoelace area of the result.
//!
//! Boxes whose yaw differs by π, or by π/2 with swapped length and width,
//! describe the same footprint. No canonicalization is applied because the
//! overlap routines only ever look at the corner geometry.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub reflectance: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, reflectance: f64) -> Self {
        Self {
            x,
            y,
            z,
            reflectance,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && (0.0..=1.0).contains(&self.reflectance)
    }
}

/// An unordered set of LiDAR returns in the frame-local sensor coordinates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let wrapped = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Oriented 3D bounding box `(p_x, p_y, p_z, l, w, h, θ)` with a 0-based
/// class label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    /// Length (along heading), width, height.
    pub dims: [f64; 3],
    pub yaw: f64,
    pub class_id: usize,
}

impl Box3D {
    /// Builds a box with its yaw normalized into `[-π, π)`.
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64, class_id: usize) -> Self {
        Self {
            center,
            dims,
            yaw: normalize_yaw(yaw),
            class_id,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.center.iter().all(|c| c.is_finite())
            && self.dims.iter().all(|d| d.is_finite() && *d > 0.0)
            && self.yaw.is_finite()
            && (-PI..PI).contains(&self.yaw)
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn footprint_area(&self) -> f64 {
        self.dims[0] * self.dims[1]
    }

    /// Footprint corners in counter-clockwise order.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = self.dims[0] / 2.0;
        let hw = self.dims[1] / 2.0;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        // (hl, hw) -> (-hl, hw) -> ... walks counter-clockwise in the box frame,
        // and a rotation preserves orientation.
        local.map(|[u, v]| [self.center[0] + c * u - s * v, self.center[1] + s * u + c * v])
    }

    /// Vertical extent `[p_z - h/2, p_z + h/2]`.
    pub fn z_range(&self) -> (f64, f64) {
        let hh = self.dims[2] / 2.0;
        (self.center[2] - hh, self.center[2] + hh)
    }

    /// Expresses `(x, y, z)` in the box frame: translate to the center, then
    /// rotate by `-yaw`.
    pub fn to_local(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, z - self.center[2]]
    }

    /// Strict containment; points on a face count as outside.
    pub fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let [u, v, w] = self.to_local(x, y, z);
        u.abs() < self.dims[0] / 2.0 && v.abs() < self.dims[1] / 2.0 && w.abs() < self.dims[2] / 2.0
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    twice / 2.0
}

/// Sutherland–Hodgman clipping of `subject` against the convex,
/// counter-clockwise polygon `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        let mut prev = *input.last().expect("non-empty");
        let mut prev_side = cross(e0, e1, prev);
        for &cur in &input {
            let cur_side = cross(e0, e1, cur);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(line_intersection(prev, cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(line_intersection(prev, cur, prev_side, cur_side));
            }
            prev = cur;
            prev_side = cur_side;
        }
    }
    output
}

// Point where segment p->q crosses the clip line, given the signed distances
// (up to a common factor) of p and q to that line.
fn line_intersection(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of the two yaw-rotated footprints.
pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    // Cheap reject on circumscribed circles.
    let ra = 0.5 * a.dims[0].hypot(a.dims[1]);
    let rb = 0.5 * b.dims[0].hypot(b.dims[1]);
    let dc = (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]);
    if dc >= ra + rb {
        return 0.0;
    }
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    // Collinear-edge degeneracies can leave a sliver with zero or slightly
    // negative area; those are empty intersections.
    polygon_area(&poly).max(0.0)
}

/// Intersection-over-union of the bird's-eye-view footprints.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.footprint_area() + b.footprint_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Length of the overlap of the two vertical extents.
pub fn vertical_overlap(a: &Box3D, b: &Box3D) -> f64 {
    let (a_lo, a_hi) = a.z_range();
    let (b_lo, b_hi) = b.z_range();
    (a_hi.min(b_hi) - a_lo.max(b_lo)).max(0.0)
}

/// Volumetric intersection-over-union of two yaw-only oriented boxes.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Number of points strictly inside the box.
pub fn points_in_box(cloud: &PointCloud, bbox: &Box3D) -> usize {
    cloud
        .points
        .iter()
        .filter(|p| bbox.contains(p.x, p.y, p.z))
        .count()
}

/// BEV range of the box center from the sensor origin.
pub fn box_distance(bbox: &Box3D) -> f64 {
    bbox.center[0].hypot(bbox.center[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square(yaw: f64) -> Box3D {
        Box3D::new([0.0, 0.0, 0.5], [1.0, 1.0, 1.0], yaw, 0)
    }

    // Monte-Carlo estimate of BEV IoU by uniform sampling over the joint
    // bounding rectangle of both footprints.
    fn mc_bev_iou(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
        let corners: Vec<[f64; 2]> = a.bev_corners().into_iter().chain(b.bev_corners()).collect();
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for [x, y] in corners {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut in_a, mut in_b, mut both) = (0usize, 0usize, 0usize);
        for _ in 0..samples {
            let x = rng.random_range(x0..x1);
            let y = rng.random_range(y0..y1);
            let pa = a.contains(x, y, a.center[2]);
            let pb = b.contains(x, y, b.center[2]);
            in_a += pa as usize;
            in_b += pb as usize;
            both += (pa && pb) as usize;
        }
        both as f64 / (in_a + in_b - both) as f64
    }

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_yaw(PI), -PI);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_yaw(0.25), 0.25);
        for k in -5..5 {
            let y = normalize_yaw(0.3 + k as f64 * 2.0 * PI);
            assert!((y - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_boxes_overlap_fully() {
        let b = Box3D::new([3.0, -2.0, 1.0], [4.5, 1.9, 1.6], 0.7, 1);
        assert!((bev_iou(&b, &b) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_have_zero_overlap() {
        let a = Box3D::new([0.0, 0.0, 0.0], [2.0, 1.0, 1.0], 0.3, 0);
        let b = Box3D::new([10.0, 0.0, 0.0], [2.0, 1.0, 1.0], -1.1, 0);
        assert_eq!(bev_iou(&a, &b), 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn rotated_unit_squares_form_octagon() {
        // Octagon area 2(√2 − 1); union 2 − that.
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (2.0 - inter);
        let iou = bev_iou(&unit_square(0.0), &unit_square(PI / 4.0));
        assert!((iou - expected).abs() < 1e-12, "{iou} vs {expected}");
        assert!((iou - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        let mc = mc_bev_iou(&unit_square(0.0), &unit_square(PI / 4.0), 1_000_000, 3);
        assert!((mc - iou).abs() < 0.01);
    }

    #[test]
    fn square_footprint_is_quarter_turn_symmetric() {
        let a = unit_square(0.1);
        for shift in [PI / 2.0, PI, -PI / 2.0] {
            let b = unit_square(0.1 + shift);
            assert!((bev_iou(&a, &b) - 1.0).abs() < 1e-9);
        }
        // A non-square footprint turned by π/2 is a different box.
        let r = Box3D::new([0.0; 3], [2.0, 1.0, 1.0], 0.0, 0);
        let r90 = Box3D::new([0.0; 3], [2.0, 1.0, 1.0], PI / 2.0, 0);
        assert!(bev_iou(&r, &r90) < 0.5);
        let swapped = Box3D::new([0.0; 3], [1.0, 2.0, 1.0], PI / 2.0, 0);
        assert!((bev_iou(&r, &swapped) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_3d_vertical_cases() {
        let a = Box3D::new([0.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0, 0);
        let touching = Box3D::new([0.0, 0.0, 1.5], [1.0, 1.0, 1.0], 0.0, 0);
        assert_eq!(iou_3d(&a, &touching), 0.0);
        let shifted = Box3D::new([0.0, 0.0, 1.0], [1.0, 1.0, 1.0], 0.0, 0);
        assert!((iou_3d(&a, &shifted) - 0.5 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn point_containment() {
        let bbox = Box3D::new([1.0, 2.0, 0.5], [2.0, 2.0, 1.0], PI / 2.0, 0);
        assert_eq!(points_in_box(&PointCloud::default(), &bbox), 0);
        let center = PointCloud::new(vec![Point::new(1.0, 2.0, 0.5, 0.3)]);
        assert_eq!(points_in_box(&center, &bbox), 1);

        // Corners of the axis-aligned box shrunk by 0.9, checked against the
        // rotated box with a plain world-frame bounds test as the oracle.
        let mut pts = Vec::new();
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for sz in [-1.0, 1.0] {
                    pts.push(Point::new(1.0 + sx * 0.9, 2.0 + sy * 0.9, 0.5 + sz * 0.45, 0.5));
                }
            }
        }
        let oracle = pts
            .iter()
            .filter(|p| (p.x - 1.0).abs() < 1.0 && (p.y - 2.0).abs() < 1.0 && (p.z - 0.5).abs() < 0.5)
            .count();
        assert_eq!(oracle, 8);
        assert_eq!(points_in_box(&PointCloud::new(pts), &bbox), 8);

        let on_face = PointCloud::new(vec![Point::new(2.0, 2.0, 0.5, 0.0)]);
        assert_eq!(points_in_box(&on_face, &bbox), 0);
    }

    #[test]
    fn distances() {
        let b = |x, y, z| Box3D::new([x, y, z], [1.0, 1.0, 1.0], 0.0, 0);
        assert_eq!(box_distance(&b(0.0, 0.0, 1.0)), 0.0);
        assert_eq!(box_distance(&b(3.0, 4.0, 0.0)), 5.0);
        assert_eq!(box_distance(&b(-6.0, 8.0, 2.0)), 10.0);
    }

    #[test]
    fn mc_oracle_agrees_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..10 {
            let a = Box3D::new(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
                [rng.random_range(0.5..4.0), rng.random_range(0.5..4.0), 1.0],
                rng.random_range(-PI..PI),
                0,
            );
            let b = Box3D::new(
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
                [rng.random_range(0.5..4.0), rng.random_range(0.5..4.0), 1.0],
                rng.random_range(-PI..PI),
                0,
            );
            let exact = bev_iou(&a, &b);
            let mc = mc_bev_iou(&a, &b, 200_000, i);
            assert!((exact - mc).abs() < 0.01, "pair {i}: {exact} vs {mc}");
        }
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            -5.0..5.0f64,
            -5.0..5.0f64,
            -1.0..1.0f64,
            0.2..6.0f64,
            0.2..6.0f64,
            0.2..3.0f64,
            -PI..PI,
        )
            .prop_map(|(x, y, z, l, w, h, yaw)| Box3D::new([x, y, z], [l, w, h], yaw, 0))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = bev_iou(&a, &b);
            let ba = bev_iou(&b, &a);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - ba).abs() < 1e-9);
            let ab3 = iou_3d(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab3));
            prop_assert!((ab3 - iou_3d(&b, &a)).abs() < 1e-9);
            prop_assert!(ab3 <= ab + 1e-12);
        }

        #[test]
        fn containment_invariant_under_joint_rotation(
            bbox in arb_box(),
            turn in -PI..PI,
            pts in proptest::collection::vec((-8.0..8.0f64, -8.0..8.0f64, -2.0..2.0f64), 0..60),
        ) {
            let cloud = PointCloud::new(pts.iter().map(|&(x, y, z)| Point::new(x, y, z, 0.5)).collect());
            let (s, c) = turn.sin_cos();
            let rot = |x: f64, y: f64| (c * x - s * y, s * x + c * y);
            let (cx, cy) = rot(bbox.center[0], bbox.center[1]);
            let rotated_box = Box3D::new([cx, cy, bbox.center[2]], bbox.dims, bbox.yaw + turn, 0);
            // Points within rounding distance of a face may flip; compare
            // only points that are clearly inside or outside.
            let clear: Vec<Point> = cloud.points.iter().copied().filter(|p| {
                let [u, v, w] = bbox.to_local(p.x, p.y, p.z);
                let margin = 1e-9;
                (u.abs() - bbox.dims[0] / 2.0).abs() > margin
                    && (v.abs() - bbox.dims[1] / 2.0).abs() > margin
                    && (w.abs() - bbox.dims[2] / 2.0).abs() > margin
            }).collect();
            let rotated_clear: Vec<Point> = clear.iter().map(|p| {
                let (x, y) = rot(p.x, p.y);
                Point::new(x, y, p.z, p.reflectance)
            }).collect();
            prop_assert_eq!(
                points_in_box(&PointCloud::new(clear), &bbox),
                points_in_box(&PointCloud::new(rotated_clear), &rotated_box)
            );
        }
    }
}
