//! Oriented 3D box geometry in camera coordinates.
//!
//! Camera frame: x right, y down, z forward. A box footprint lives in the
//! x–z (bird's-eye-view) plane; yaw rotates about the vertical y axis with
//! length along x at yaw 0. Boxes store their *geometric center*; the KITTI
//! bottom-anchored convention is converted at ingest/output by `kitti`.

use crate::scalar::{real, Real};
use serde::{Deserialize, Serialize};

/// A 3D oriented box: center (x, y, z), dimensions (w, h, l), yaw about the
/// vertical axis, class id and optional detection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec<T> {
    /// Geometric center (x, y, z) in meters, camera frame.
    pub center: [T; 3],
    /// Dimensions (w, h, l) in meters: w across the heading, h vertical,
    /// l along the heading.
    pub dims: [T; 3],
    /// Heading angle in radians, (−π, π].
    pub yaw: T,
    pub class_id: usize,
    pub score: Option<T>,
}

impl<T: Real> BoxSpec<T> {
    pub fn new(center: [T; 3], dims: [T; 3], yaw: T, class_id: usize) -> Self {
        BoxSpec {
            center,
            dims,
            yaw,
            class_id,
            score: None,
        }
    }

    pub fn with_score(mut self, score: T) -> Self {
        self.score = Some(score);
        self
    }

    #[inline]
    pub fn w(&self) -> T {
        self.dims[0]
    }
    #[inline]
    pub fn h(&self) -> T {
        self.dims[1]
    }
    #[inline]
    pub fn l(&self) -> T {
        self.dims[2]
    }

    pub fn volume(&self) -> T {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Vertical interval [y_low, y_high] occupied by the box (y points down,
    /// the interval is centered on `center[1]`).
    pub fn vertical_interval(&self) -> (T, T) {
        let half = self.dims[1] / real::<T>(2.0);
        (self.center[1] - half, self.center[1] + half)
    }
}

/// Convex polygon in the BEV plane, vertices (x, z) in counter-clockwise
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct BevPolygon<T> {
    pub vertices: Vec<[T; 2]>,
}

impl<T: Real> BevPolygon<T> {
    pub fn new(vertices: Vec<[T; 2]>) -> Self {
        BevPolygon { vertices }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Signed shoelace area; positive for CCW vertex order.
    pub fn signed_area(&self) -> T {
        let n = self.vertices.len();
        if n < 3 {
            return T::zero();
        }
        let mut acc = T::zero();
        for i in 0..n {
            let [x0, z0] = self.vertices[i];
            let [x1, z1] = self.vertices[(i + 1) % n];
            acc += x0 * z1 - x1 * z0;
        }
        acc / real::<T>(2.0)
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    /// Convexity check tolerant of collinear vertices: all edge cross
    /// products share a sign (or are zero).
    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 {
            return true;
        }
        let mut pos = false;
        let mut neg = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if cross > T::zero() {
                pos = true;
            } else if cross < T::zero() {
                neg = true;
            }
        }
        !(pos && neg)
    }
}

/// Wrap an angle into (−π, π].
///
/// Panics on non-finite input.
pub fn normalize_angle<T: Real>(theta: T) -> T {
    assert!(theta.is_finite(), "normalize_angle: non-finite angle");
    let two_pi = T::PI() + T::PI();
    let mut r = theta % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    // r in [0, 2π); fold the upper half down so the result is (−π, π].
    if r > T::PI() {
        r -= two_pi;
    }
    r
}

/// The four BEV footprint corners of a box, counter-clockwise.
///
/// Extents are l along the heading and w across it; at yaw 0 the heading is
/// the +x axis.
pub fn box_to_bev_corners<T: Real>(b: &BoxSpec<T>) -> BevPolygon<T> {
    let (c, s) = (b.yaw.cos(), b.yaw.sin());
    let hl = b.l() / real::<T>(2.0);
    let hw = b.w() / real::<T>(2.0);
    // Local (forward, lateral) corners in CCW order.
    let local = [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]];
    let vertices = local
        .iter()
        .map(|&[u, v]| {
            // Rotation about the (downward) y axis: x' = c*u + s*v, z' = -s*u + c*v.
            [b.center[0] + c * u + s * v, b.center[2] - s * u + c * v]
        })
        .collect();
    BevPolygon::new(vertices)
}

#[inline]
fn is_left_of<T: Real>(p: [T; 2], a: [T; 2], b: [T; 2]) -> bool {
    // Closed half-plane to the left of edge a→b (CCW polygons keep their
    // boundary, so identical polygons clip to themselves exactly).
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= T::zero()
}

fn edge_intersection<T: Real>(p0: [T; 2], p1: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let d1 = [p1[0] - p0[0], p1[1] - p0[1]];
    let d2 = [b[0] - a[0], b[1] - a[1]];
    let denom = d1[0] * d2[1] - d1[1] * d2[0];
    if denom == T::zero() {
        return p1; // parallel: the caller only asks when sides differ
    }
    let t = ((a[0] - p0[0]) * d2[1] - (a[1] - p0[1]) * d2[0]) / denom;
    [p0[0] + t * d1[0], p0[1] + t * d1[1]]
}

/// Area of the intersection of two convex polygons (Sutherland–Hodgman
/// clipping + shoelace). Degenerate overlaps (shared edge or point) have
/// area 0.
///
/// Panics if either polygon is non-convex.
pub fn polygon_intersection_area<T: Real>(a: &BevPolygon<T>, b: &BevPolygon<T>) -> T {
    assert!(a.is_convex(), "polygon_intersection_area: non-convex subject");
    assert!(b.is_convex(), "polygon_intersection_area: non-convex clip");
    if a.is_empty() || b.is_empty() {
        return T::zero();
    }

    // Sutherland–Hodgman expects CCW clip edges.
    let mut clip = b.vertices.clone();
    if b.signed_area() < T::zero() {
        clip.reverse();
    }

    let mut subject = a.vertices.clone();
    for i in 0..clip.len() {
        if subject.is_empty() {
            break;
        }
        let ca = clip[i];
        let cb = clip[(i + 1) % clip.len()];
        let mut out = Vec::with_capacity(subject.len() + 2);
        for j in 0..subject.len() {
            let prev = subject[(j + subject.len() - 1) % subject.len()];
            let cur = subject[j];
            let cur_in = is_left_of(cur, ca, cb);
            let prev_in = is_left_of(prev, ca, cb);
            if cur_in {
                if !prev_in {
                    out.push(edge_intersection(prev, cur, ca, cb));
                }
                out.push(cur);
            } else if prev_in {
                out.push(edge_intersection(prev, cur, ca, cb));
            }
        }
        subject = out;
    }
    BevPolygon::new(subject).area()
}

/// Deterministic argument order so the clipping-based IoUs are exactly
/// symmetric (Sutherland–Hodgman rounding is order sensitive).
fn canonical_order<'a, T: Real>(
    a: &'a BoxSpec<T>,
    b: &'a BoxSpec<T>,
) -> (&'a BoxSpec<T>, &'a BoxSpec<T>) {
    let key = |bx: &BoxSpec<T>| {
        [
            bx.center[0], bx.center[1], bx.center[2], bx.dims[0], bx.dims[1], bx.dims[2], bx.yaw,
        ]
    };
    let (ka, kb) = (key(a), key(b));
    for i in 0..7 {
        if ka[i] < kb[i] {
            return (a, b);
        }
        if ka[i] > kb[i] {
            return (b, a);
        }
    }
    (a, b)
}

/// Rotated-footprint IoU of two boxes in the BEV plane. Exactly symmetric,
/// and exactly 1 for identical footprints.
pub fn bev_iou<T: Real>(a: &BoxSpec<T>, b: &BoxSpec<T>) -> T {
    let (a, b) = canonical_order(a, b);
    let pa = box_to_bev_corners(a);
    let pb = box_to_bev_corners(b);
    let inter = polygon_intersection_area(&pa, &pb);
    let union = pa.area() + pb.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    inter / union
}

/// Full 3D IoU: rotated BEV intersection × vertical overlap over the union
/// of volumes. Volumes use the same footprint-area measure as the
/// intersection so identical boxes score exactly 1.
pub fn iou3d<T: Real>(a: &BoxSpec<T>, b: &BoxSpec<T>) -> T {
    let (a, b) = canonical_order(a, b);
    let pa = box_to_bev_corners(a);
    let pb = box_to_bev_corners(b);
    let inter_area = polygon_intersection_area(&pa, &pb);
    let v_overlap = axis_overlap(a.center[1], a.dims[1], b.center[1], b.dims[1]);
    let inter = inter_area * v_overlap;
    let union = pa.area() * a.h() + pb.area() * b.h() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    inter / union
}

/// Overlap length of two centered intervals. The `min(e1, e2, ·)` form is
/// exact for identical intervals, which keeps equal-input IoUs at exactly 1.
#[inline]
pub(crate) fn axis_overlap<T: Real>(c1: T, e1: T, c2: T, e2: T) -> T {
    let half = real::<T>(0.5);
    let m = (e1 + e2) * half - (c1 - c2).abs();
    e1.min(e2).min(m).max(T::zero())
}

/// IoU of two boxes on raw (center, extent) triples, ignoring yaw.
/// Extents map (w, h, l) onto the (x, y, z) axes.
pub(crate) fn aabb_iou3d_raw<T: Real>(c1: &[T; 3], e1: &[T; 3], c2: &[T; 3], e2: &[T; 3]) -> T {
    let ox = axis_overlap(c1[0], e1[0], c2[0], e2[0]);
    let oy = axis_overlap(c1[1], e1[1], c2[1], e2[1]);
    let oz = axis_overlap(c1[2], e1[2], c2[2], e2[2]);
    let inter = ox * oy * oz;
    let union = e1[0] * e1[1] * e1[2] + e2[0] * e2[1] * e2[2] - inter;
    if union <= T::zero() {
        return T::zero();
    }
    inter / union
}

/// Axis-aligned 3D IoU: yaw is ignored and each box is taken as an
/// axis-aligned box with extents (w, h, l) about its center. Piecewise
/// differentiable in all continuous inputs, which is what the box loss
/// needs.
pub fn aabb_iou3d<T: Real>(a: &BoxSpec<T>, b: &BoxSpec<T>) -> T {
    aabb_iou3d_raw(&a.center, &a.dims, &b.center, &b.dims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boxf(center: [f64; 3], dims: [f64; 3], yaw: f64) -> BoxSpec<f64> {
        BoxSpec::new(center, dims, yaw, 0)
    }

    #[test]
    fn normalize_angle_examples() {
        assert_eq!(normalize_angle(0.0), 0.0);
        let r = normalize_angle(std::f64::consts::PI + 0.1);
        assert!((r - (-std::f64::consts::PI + 0.1)).abs() < 1e-12);
        let r = normalize_angle(-3.0 * std::f64::consts::PI);
        assert!((r - std::f64::consts::PI).abs() < 1e-12);
        // Boundary convention: −π maps to +π.
        assert!(normalize_angle(-std::f64::consts::PI) > 0.0);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn normalize_angle_rejects_nan() {
        normalize_angle(f64::NAN);
    }

    #[test]
    fn bev_corners_axis_aligned() {
        let b = boxf([0.0, 0.0, 0.0], [2.0, 1.5, 4.0], 0.0);
        let poly = box_to_bev_corners(&b);
        let mut got: Vec<(i64, i64)> = poly
            .vertices
            .iter()
            .map(|v| (v[0].round() as i64, v[1].round() as i64))
            .collect();
        got.sort_unstable();
        assert_eq!(got, vec![(-2, -1), (-2, 1), (2, -1), (2, 1)]);
        assert!(poly.signed_area() > 0.0, "corners must be CCW");
        assert!((poly.area() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn bev_corners_quarter_turn_swaps_extents() {
        let b = boxf([0.0, 0.0, 0.0], [2.0, 1.5, 4.0], std::f64::consts::FRAC_PI_2);
        let poly = box_to_bev_corners(&b);
        let max_x = poly.vertices.iter().map(|v| v[0]).fold(f64::MIN, f64::max);
        let max_z = poly.vertices.iter().map(|v| v[1]).fold(f64::MIN, f64::max);
        assert!((max_x - 1.0).abs() < 1e-12);
        assert!((max_z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn corner_area_matches_w_times_l() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let b = boxf(
                [
                    rng.random_range(-30.0..30.0),
                    rng.random_range(-1.0..2.0),
                    rng.random_range(0.0..60.0),
                ],
                [
                    rng.random_range(0.5..6.0),
                    rng.random_range(0.5..4.0),
                    rng.random_range(0.5..6.0),
                ],
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            );
            let area = box_to_bev_corners(&b).area();
            assert!((area - b.w() * b.l()).abs() < 1e-9);
        }
    }

    #[test]
    fn intersection_identical_unit_squares() {
        let sq: BevPolygon<f64> =
            BevPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(polygon_intersection_area(&sq, &sq), 1.0);
    }

    #[test]
    fn intersection_offset_squares() {
        let a: BevPolygon<f64> =
            BevPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let b = BevPolygon::new(vec![[0.5, 0.0], [1.5, 0.0], [1.5, 1.0], [0.5, 1.0]]);
        assert!((polygon_intersection_area(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn intersection_rotated_square() {
        // Unit square vs itself rotated 45° about the center: analytic area
        // is 2(√2 − 1) ≈ 0.8284.
        let a = boxf([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let b = boxf([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], std::f64::consts::FRAC_PI_4);
        let inter =
            polygon_intersection_area(&box_to_bev_corners(&a), &box_to_bev_corners(&b));
        assert!((inter - 0.828_427_124_746_19).abs() < 1e-10);
    }

    #[test]
    #[should_panic(expected = "non-convex")]
    fn intersection_rejects_non_convex() {
        let bowtie: BevPolygon<f64> =
            BevPolygon::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        let sq = BevPolygon::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        polygon_intersection_area(&bowtie, &sq);
    }

    #[test]
    fn bev_iou_examples() {
        let a = boxf([0.5, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(bev_iou(&a, &a), 1.0);
        let far = boxf([10.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(bev_iou(&a, &far), 0.0);
        let shifted = boxf([1.0, 0.0, 0.5], [1.0, 1.0, 1.0], 0.0);
        assert!((bev_iou(&a, &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou3d_examples() {
        let a = boxf([0.0, 0.0, 0.0], [2.0, 2.0, 2.0], 0.3);
        assert_eq!(iou3d(&a, &a), 1.0);

        let mut b = a.clone();
        b.center[1] = 5.0;
        assert_eq!(iou3d(&a, &b), 0.0);

        // Same footprint, heights overlapping by h/2 → 1/3.
        let mut c = a.clone();
        c.center[1] = 1.0;
        assert!((iou3d(&a, &c) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn aabb_iou3d_examples() {
        let a = boxf([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(aabb_iou3d(&a, &a), 1.0);
        let b = boxf([0.5, 0.0, 0.0], [1.0, 1.0, 1.0], 1.0); // yaw ignored
        assert!((aabb_iou3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = boxf([1.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        assert_eq!(aabb_iou3d(&a, &c), 0.0);
    }

    #[test]
    fn iou_symmetry_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let mk = |rng: &mut ChaCha8Rng| {
                boxf(
                    [
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-5.0..5.0),
                    ],
                    [
                        rng.random_range(0.5..6.0),
                        rng.random_range(0.5..6.0),
                        rng.random_range(0.5..6.0),
                    ],
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            for f in [bev_iou::<f64>, iou3d::<f64>, aabb_iou3d::<f64>] {
                let ab = f(&a, &b);
                let ba = f(&b, &a);
                assert_eq!(ab, ba, "IoU must be exactly symmetric");
                assert!((0.0..=1.0 + 1e-12).contains(&ab));
                assert_eq!(f(&a, &a), 1.0);
            }
        }
    }

    #[test]
    fn bev_iou_rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                boxf(
                    [
                        rng.random_range(-5.0..5.0),
                        0.0,
                        rng.random_range(-5.0..5.0),
                    ],
                    [
                        rng.random_range(0.5..4.0),
                        1.0,
                        rng.random_range(0.5..4.0),
                    ],
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                )
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let base = bev_iou(&a, &b);

            let phi: f64 = rng.random_range(-3.0..3.0);
            let (tx, tz) = (rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let transform = |bx: &BoxSpec<f64>| {
                let (c, s) = (phi.cos(), phi.sin());
                let x = bx.center[0];
                let z = bx.center[2];
                BoxSpec::new(
                    [c * x + s * z + tx, bx.center[1], -s * x + c * z + tz],
                    bx.dims,
                    normalize_angle(bx.yaw + phi),
                    bx.class_id,
                )
            };
            let moved = bev_iou(&transform(&a), &transform(&b));
            assert!(
                (base - moved).abs() < 1e-9,
                "IoU changed under rigid motion: {base} vs {moved}"
            );
        }
    }

    #[test]
    fn shared_edge_counts_as_zero_area() {
        let a = boxf([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let b = boxf([1.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0);
        let inter =
            polygon_intersection_area(&box_to_bev_corners(&a), &box_to_bev_corners(&b));
        assert_eq!(inter, 0.0);
        assert_eq!(bev_iou(&a, &b), 0.0);
    }
}
