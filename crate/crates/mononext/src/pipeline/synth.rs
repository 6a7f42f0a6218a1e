//! Synthetic KITTI-layout dataset for demos and desk-scale training runs.
//!
//! Frames are 480×480 renders of randomly placed boxes: each object paints a
//! filled rectangle at its projected image location whose colors encode its
//! pose, over a per-frame noise background. The labels and calibration files
//! use the standard devkit formats, so the synthetic corpus flows through
//! the exact same ingestion path as real data.

use crate::error::{Error, Result};
use crate::geometry::{bev_iou, normalize_angle, BoxSpec};
use crate::grid::{cell_index, GridSpec};
use crate::kitti::{box_to_label, write_label_file, CalibBundle};
use crate::scalar::Real;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

const IMG: u32 = 480;
const FOCAL: f64 = 700.0;

pub fn synthetic_calib<T: Real>() -> CalibBundle<T> {
    let f = T::from_f64(FOCAL).unwrap();
    let c = T::from_f64(IMG as f64 / 2.0).unwrap();
    CalibBundle {
        p2: [
            [f, T::zero(), c, T::zero()],
            [T::zero(), f, c, T::zero()],
            [T::zero(), T::zero(), T::one(), T::zero()],
        ],
    }
}

fn place_objects(rng: &mut ChaCha8Rng, g: &GridSpec<f64>) -> Vec<BoxSpec<f64>> {
    let n = rng.random_range(1..=3);
    let mut boxes: Vec<BoxSpec<f64>> = Vec::new();
    'outer: for _ in 0..n {
        for _attempt in 0..50 {
            let z = rng.random_range(8.0..35.0);
            let x = rng.random_range(-0.3 * z..0.3 * z);
            let h = rng.random_range(1.4..1.7);
            let b = BoxSpec::new(
                [x, 1.65 - h / 2.0, z],
                [
                    rng.random_range(1.5..1.9),
                    h,
                    rng.random_range(3.4..4.6),
                ],
                normalize_angle(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)),
                0,
            );
            let cell = cell_index(b.center[0], b.center[2], g);
            let clashes = boxes.iter().any(|other| {
                bev_iou(other, &b) > 0.0
                    || cell_index(other.center[0], other.center[2], g) == cell
            });
            if !clashes {
                boxes.push(b);
                continue 'outer;
            }
        }
    }
    boxes
}

fn render_frame(rng: &mut ChaCha8Rng, boxes: &[BoxSpec<f64>], calib: &CalibBundle<f64>) -> RgbImage {
    let mut img = RgbImage::new(IMG, IMG);
    // Per-frame noise blocks make every frame visually distinct.
    let block = 40;
    let blocks = (IMG as usize).div_ceil(block);
    let mut palette = vec![[0u8; 3]; blocks * blocks];
    for p in palette.iter_mut() {
        *p = [
            rng.random_range(30..110),
            rng.random_range(30..110),
            rng.random_range(30..110),
        ];
    }
    for (x, y, p) in img.enumerate_pixels_mut() {
        let b = (y as usize / block) * blocks + x as usize / block;
        *p = Rgb(palette[b]);
    }

    // Far to near so closer boxes overdraw.
    let mut order: Vec<&BoxSpec<f64>> = boxes.iter().collect();
    order.sort_by(|a, b| b.center[2].partial_cmp(&a.center[2]).unwrap());
    for b in order {
        let rec = box_to_label(b, "Car", Some(calib), (IMG, IMG));
        let [left, top, right, bottom] = rec.bbox2d;
        if right <= left || bottom <= top {
            continue;
        }
        // Body color encodes position and yaw; the top strip encodes size.
        let body = Rgb([
            ((b.center[0] + 55.0) / 110.0 * 255.0) as u8,
            (b.center[2] / 85.0 * 255.0) as u8,
            ((b.yaw + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * 255.0) as u8,
        ]);
        let strip = Rgb([
            (b.dims[0] / 4.0 * 255.0) as u8,
            (b.dims[1] / 4.0 * 255.0) as u8,
            (b.dims[2] / 8.0 * 255.0) as u8,
        ]);
        let strip_h = ((bottom - top) * 0.25).max(4.0);
        for y in top as u32..bottom as u32 {
            for x in left as u32..right as u32 {
                if x < IMG && y < IMG {
                    let c = if (y as f64) < top + strip_h { strip } else { body };
                    img.put_pixel(x, y, c);
                }
            }
        }
    }
    img
}

/// Write `n_frames` synthetic frames (image_2/label_2/calib) under `root`.
/// Returns the frame ids.
pub fn generate_synthetic_dataset(
    root: &Path,
    n_frames: usize,
    seed: u64,
    grid: &GridSpec<f64>,
) -> Result<Vec<String>> {
    let image_dir = root.join("image_2");
    let label_dir = root.join("label_2");
    let calib_dir = root.join("calib");
    for d in [&image_dir, &label_dir, &calib_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let calib = synthetic_calib::<f64>();
    let calib_text = crate::kitti::format_calib(&calib);

    let mut ids = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let id = format!("{i:06}");
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (i as u64 + 1).wrapping_mul(0x517c_c1b7_2722_0a95));
        let boxes = place_objects(&mut rng, grid);
        let img = render_frame(&mut rng, &boxes, &calib);

        let img_path = image_dir.join(format!("{id}.png"));
        img.save(&img_path).map_err(|e| Error::Image {
            path: img_path.clone(),
            msg: e.to_string(),
        })?;
        let records: Vec<_> = boxes
            .iter()
            .map(|b| box_to_label(b, "Car", Some(&calib), (IMG, IMG)))
            .collect();
        write_label_file(&label_dir.join(format!("{id}.txt")), &records)?;
        let calib_path = calib_dir.join(format!("{id}.txt"));
        std::fs::write(&calib_path, &calib_text).map_err(|e| Error::io(&calib_path, e))?;
        ids.push(id);
    }
    Ok(ids)
}
