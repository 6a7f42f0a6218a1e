//! KITTI object-detection data: label and calibration parsing, difficulty
//! classification, train/val split handling, data augmentation and frame
//! loading.
//!
//! Labels use the devkit text format: one object per line with 15
//! whitespace-separated fields (class, truncation, occlusion, alpha, 2D box,
//! 3D size h/w/l, 3D location x/y/z, rotation_y) plus an optional 16th score
//! field on detections. `location` is the *bottom center* of the box in
//! camera coordinates; conversion to the internal center-anchored
//! [`BoxSpec`] shifts y by h/2.

mod augment;
mod calib;
mod dataset;
mod label;
mod split;

pub use augment::{adjust_contrast, flip_frame};
pub use calib::{format_calib, parse_calib};
pub use dataset::KittiDataset;
pub use label::{
    format_label_line, parse_label_file, parse_label_line, read_label_dir, write_label_file,
};
pub use split::{generate_split, make_split, write_split_files, SplitSpec};

use crate::geometry::{normalize_angle, BoxSpec};
use crate::scalar::{real, Real};
use image::RgbImage;

/// One KITTI annotation row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord<T> {
    pub class_name: String,
    /// Fraction of the object outside image bounds, [0, 1] (−1 sentinel on
    /// DontCare rows).
    pub truncation: T,
    /// 0 fully visible, 1 partly occluded, 2 largely occluded, 3 unknown
    /// (−1 sentinel on DontCare rows).
    pub occlusion: i32,
    /// Observation angle in radians.
    pub alpha: T,
    /// (left, top, right, bottom) in pixels.
    pub bbox2d: [T; 4],
    /// (h, w, l) in meters — devkit field order.
    pub dims: [T; 3],
    /// Bottom-center (x, y, z) in meters, camera frame.
    pub location: [T; 3],
    /// Heading about the vertical axis, (−π, π].
    pub rotation_y: T,
    /// Detection score (16th field), absent on ground truth.
    pub score: Option<T>,
}

impl<T: Real> LabelRecord<T> {
    pub fn bbox_height(&self) -> T {
        self.bbox2d[3] - self.bbox2d[1]
    }

    pub fn is_dont_care(&self) -> bool {
        self.class_name == "DontCare"
    }
}

/// Left color camera projection matrix (3×4).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibBundle<T> {
    pub p2: [[T; 4]; 3],
}

impl<T: Real> CalibBundle<T> {
    /// Project a camera-frame point onto the image plane; `None` behind the
    /// camera.
    pub fn project(&self, xyz: [T; 3]) -> Option<[T; 2]> {
        let h = [xyz[0], xyz[1], xyz[2], T::one()];
        let mut uvw = [T::zero(); 3];
        for (r, row) in self.p2.iter().enumerate() {
            uvw[r] = row.iter().zip(h.iter()).map(|(&a, &b)| a * b).sum();
        }
        if uvw[2] <= real::<T>(1e-6) {
            return None;
        }
        Some([uvw[0] / uvw[2], uvw[1] / uvw[2]])
    }
}

/// One dataset sample: image, annotations and calibration.
#[derive(Debug, Clone)]
pub struct Frame<T> {
    pub frame_id: String,
    pub image: RgbImage,
    pub labels: Vec<LabelRecord<T>>,
    pub calib: CalibBundle<T>,
}

/// KITTI benchmark difficulty buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    /// Does not meet any bucket; excluded from scoring.
    Ignored,
}

/// Classify a ground-truth object by 2D box height, occlusion and
/// truncation: Easy ≥40 px / occ 0 / trunc ≤0.15, Moderate ≥25 px / occ ≤1 /
/// trunc ≤0.30, Hard ≥25 px / occ ≤2 / trunc ≤0.50. The easiest level whose
/// conditions hold wins.
pub fn assign_difficulty<T: Real>(rec: &LabelRecord<T>) -> Difficulty {
    let height = rec.bbox_height().to_f64().unwrap_or(0.0);
    let trunc = rec.truncation.to_f64().unwrap_or(1.0);
    let occ = rec.occlusion;
    if height >= 40.0 && occ <= 0 && trunc <= 0.15 {
        Difficulty::Easy
    } else if height >= 25.0 && occ <= 1 && trunc <= 0.30 {
        Difficulty::Moderate
    } else if height >= 25.0 && occ <= 2 && trunc <= 0.50 {
        Difficulty::Hard
    } else {
        Difficulty::Ignored
    }
}

/// Convert an annotation to the internal center-anchored box. Returns `None`
/// when the class is not in `classes` (this is how DontCare regions and
/// ignored categories drop out of encoding).
pub fn label_to_box<T: Real>(rec: &LabelRecord<T>, classes: &[String]) -> Option<BoxSpec<T>> {
    let class_id = classes.iter().position(|c| c == &rec.class_name)?;
    let half = real::<T>(0.5);
    let center = [
        rec.location[0],
        rec.location[1] - rec.dims[0] * half, // bottom → center (y down)
        rec.location[2],
    ];
    let dims = [rec.dims[1], rec.dims[0], rec.dims[2]]; // (h,w,l) → (w,h,l)
    let mut b = BoxSpec::new(center, dims, normalize_angle(rec.rotation_y), class_id);
    b.score = rec.score;
    Some(b)
}

/// Convert an internal box back to a KITTI record (bottom-anchored
/// location). The 2D box is projected through `calib` when available and
/// clamped to the image; a degenerate projection yields −1 sentinels.
pub fn box_to_label<T: Real>(
    b: &BoxSpec<T>,
    class_name: &str,
    calib: Option<&CalibBundle<T>>,
    image_size: (u32, u32),
) -> LabelRecord<T> {
    let half = real::<T>(0.5);
    let location = [
        b.center[0],
        b.center[1] + b.h() * half,
        b.center[2],
    ];
    let alpha = normalize_angle(b.yaw - b.center[0].atan2(b.center[2]));

    let neg = -T::one();
    let mut bbox2d = [neg, neg, neg, neg];
    if let Some(c) = calib {
        let poly = crate::geometry::box_to_bev_corners(b);
        let (y_lo, y_hi) = b.vertical_interval();
        let mut min = [T::infinity(); 2];
        let mut max = [T::neg_infinity(); 2];
        let mut seen = 0;
        for [x, z] in &poly.vertices {
            for y in [y_lo, y_hi] {
                if let Some([u, v]) = c.project([*x, y, *z]) {
                    min[0] = min[0].min(u);
                    min[1] = min[1].min(v);
                    max[0] = max[0].max(u);
                    max[1] = max[1].max(v);
                    seen += 1;
                }
            }
        }
        if seen == 8 {
            let (w, h) = (real::<T>(image_size.0 as f64), real::<T>(image_size.1 as f64));
            bbox2d = [
                min[0].max(T::zero()).min(w),
                min[1].max(T::zero()).min(h),
                max[0].max(T::zero()).min(w),
                max[1].max(T::zero()).min(h),
            ];
        }
    }

    LabelRecord {
        class_name: class_name.to_string(),
        truncation: T::zero(),
        occlusion: 0,
        alpha,
        bbox2d,
        dims: [b.h(), b.w(), b.l()],
        location,
        rotation_y: b.yaw,
        score: b.score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(height: f64, occ: i32, trunc: f64) -> LabelRecord<f64> {
        LabelRecord {
            class_name: "Car".into(),
            truncation: trunc,
            occlusion: occ,
            alpha: 0.0,
            bbox2d: [100.0, 100.0, 150.0, 100.0 + height],
            dims: [1.5, 1.6, 4.0],
            location: [0.0, 1.7, 30.0],
            rotation_y: 0.0,
            score: None,
        }
    }

    #[test]
    fn difficulty_examples() {
        assert_eq!(assign_difficulty(&rec(50.0, 0, 0.0)), Difficulty::Easy);
        assert_eq!(assign_difficulty(&rec(30.0, 1, 0.2)), Difficulty::Moderate);
        assert_eq!(assign_difficulty(&rec(30.0, 2, 0.45)), Difficulty::Hard);
        assert_eq!(assign_difficulty(&rec(20.0, 0, 0.0)), Difficulty::Ignored);
    }

    #[test]
    fn difficulty_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let h = rng.random_range(5.0..80.0);
            let occ = rng.random_range(0..4);
            let tr = rng.random_range(0.0..0.8);
            let base = assign_difficulty(&rec(h, occ, tr));
            // Relaxing any condition never makes the level harder.
            let easier = [
                rec(h + rng.random_range(0.0..40.0), occ, tr),
                rec(h, occ.saturating_sub(1), tr),
                rec(h, occ, (tr - rng.random_range(0.0..0.5)).max(0.0)),
            ];
            for e in easier {
                assert!(assign_difficulty(&e) <= base);
            }
        }
    }

    #[test]
    fn label_box_round_trip() {
        let r = rec(50.0, 0, 0.0);
        let classes = vec!["Car".to_string()];
        let b = label_to_box(&r, &classes).unwrap();
        // Bottom-anchored y 1.7 with h 1.5 → center y 0.95.
        assert!((b.center[1] - 0.95).abs() < 1e-12);
        assert_eq!(b.dims, [1.6, 1.5, 4.0]);
        let back = box_to_label(&b, "Car", None, (1242, 375));
        assert!((back.location[1] - 1.7).abs() < 1e-12);
        assert_eq!(back.dims, r.dims);
        // Unknown classes are dropped.
        assert!(label_to_box(&r, &["Pedestrian".to_string()]).is_none());
    }

    #[test]
    fn projection_behind_camera_is_none() {
        let calib = CalibBundle::<f64> {
            p2: [
                [700.0, 0.0, 240.0, 0.0],
                [0.0, 700.0, 240.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
        };
        assert!(calib.project([0.0, 0.0, -5.0]).is_none());
        let uv = calib.project([0.0, 0.0, 10.0]).unwrap();
        assert!((uv[0] - 240.0).abs() < 1e-9 && (uv[1] - 240.0).abs() < 1e-9);
    }
}
