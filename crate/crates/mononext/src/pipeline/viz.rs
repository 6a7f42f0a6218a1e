//! Detection visualization: projected 3D wireframes on the camera image and
//! a bird's-eye-view plot. Ground truth draws green, predictions blue, the
//! ego/camera position black.

use crate::error::{Error, Result};
use crate::geometry::{box_to_bev_corners, BoxSpec};
use crate::grid::GridSpec;
use crate::kitti::Frame;
use crate::scalar::Real;
use image::{Rgb, RgbImage};
use std::path::Path;

const GT_COLOR: Rgb<u8> = Rgb([40, 200, 40]);
const PRED_COLOR: Rgb<u8> = Rgb([60, 90, 235]);
const EGO_COLOR: Rgb<u8> = Rgb([0, 0, 0]);

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    // Bresenham; clipped per pixel so partially visible edges still draw.
    loop {
        if (0..w).contains(&x0) && (0..h).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// The eight corners of a box, bottom face first.
fn box_corners3d<T: Real>(b: &BoxSpec<T>) -> Vec<[f64; 3]> {
    let bev = box_to_bev_corners(b);
    let (y_lo, y_hi) = b.vertical_interval();
    let mut corners = Vec::with_capacity(8);
    for y in [y_hi, y_lo] {
        for v in &bev.vertices {
            corners.push([
                v[0].to_f64().unwrap(),
                y.to_f64().unwrap(),
                v[1].to_f64().unwrap(),
            ]);
        }
    }
    corners
}

/// Wireframe a box onto the camera image. Boxes behind the camera are
/// skipped entirely.
fn draw_box_camera<T: Real>(img: &mut RgbImage, frame: &Frame<T>, b: &BoxSpec<T>, color: Rgb<u8>) {
    if b.center[2].to_f64().unwrap() <= 0.0 {
        return;
    }
    let corners = box_corners3d(b);
    let projected: Vec<Option<(f64, f64)>> = corners
        .iter()
        .map(|c| {
            frame
                .calib
                .project([
                    T::from_f64(c[0]).unwrap(),
                    T::from_f64(c[1]).unwrap(),
                    T::from_f64(c[2]).unwrap(),
                ])
                .map(|uv| (uv[0].to_f64().unwrap(), uv[1].to_f64().unwrap()))
        })
        .collect();
    let edges = [
        (0, 1), (1, 2), (2, 3), (3, 0), // bottom ring
        (4, 5), (5, 6), (6, 7), (7, 4), // top ring
        (0, 4), (1, 5), (2, 6), (3, 7), // verticals
    ];
    for (i, j) in edges {
        if let (Some(a), Some(b)) = (projected[i], projected[j]) {
            draw_line(img, a, b, color);
        }
    }
}

/// BEV canvas: x maps to columns, z to rows (camera at the bottom).
struct BevCanvas {
    img: RgbImage,
    x_min: f64,
    z_min: f64,
    scale_x: f64,
    scale_z: f64,
}

impl BevCanvas {
    fn new<T: Real>(g: &GridSpec<T>, width: u32, height: u32) -> Self {
        let x_min = g.x_range[0].to_f64().unwrap();
        let x_max = g.x_range[1].to_f64().unwrap();
        let z_min = g.z_range[0].to_f64().unwrap();
        let z_max = g.z_range[1].to_f64().unwrap();
        BevCanvas {
            img: RgbImage::from_pixel(width, height, Rgb([245, 245, 245])),
            x_min,
            z_min,
            scale_x: width as f64 / (x_max - x_min),
            scale_z: height as f64 / (z_max - z_min),
        }
    }

    fn to_px(&self, x: f64, z: f64) -> (f64, f64) {
        let u = (x - self.x_min) * self.scale_x;
        let v = self.img.height() as f64 - (z - self.z_min) * self.scale_z;
        (u, v)
    }

    fn draw_footprint<T: Real>(&mut self, b: &BoxSpec<T>, color: Rgb<u8>) {
        let poly = box_to_bev_corners(b);
        let px: Vec<(f64, f64)> = poly
            .vertices
            .iter()
            .map(|v| self.to_px(v[0].to_f64().unwrap(), v[1].to_f64().unwrap()))
            .collect();
        for i in 0..px.len() {
            let a = px[i];
            let b = px[(i + 1) % px.len()];
            draw_line(&mut self.img, a, b, color);
        }
        // Heading tick from the center to the front edge midpoint.
        let cx = b.center[0].to_f64().unwrap();
        let cz = b.center[2].to_f64().unwrap();
        let center = self.to_px(cx, cz);
        let front = ((px[0].0 + px[1].0) / 2.0, (px[0].1 + px[1].1) / 2.0);
        draw_line(&mut self.img, center, front, color);
    }

    fn draw_ego(&mut self) {
        let (u, v) = self.to_px(0.0, 0.0);
        for du in -3i64..=3 {
            for dv in -3i64..=3 {
                let (x, y) = (u as i64 + du, v as i64 + dv - 4);
                if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height()
                {
                    self.img.put_pixel(x as u32, y as u32, EGO_COLOR);
                }
            }
        }
    }
}

/// Emit `<id>_camera.png` (projected wireframes) and `<id>_bev.png`
/// (top-down footprints) into `out_dir`.
pub fn visualize<T: Real>(
    frame: &Frame<T>,
    dets: &[BoxSpec<T>],
    gts: &[BoxSpec<T>],
    g: &GridSpec<T>,
    out_dir: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut camera = frame.image.clone();
    for b in gts {
        draw_box_camera(&mut camera, frame, b, GT_COLOR);
    }
    for b in dets {
        draw_box_camera(&mut camera, frame, b, PRED_COLOR);
    }
    let camera_path = out_dir.join(format!("{}_camera.png", frame.frame_id));
    camera.save(&camera_path).map_err(|e| Error::Image {
        path: camera_path.clone(),
        msg: e.to_string(),
    })?;

    let mut bev = BevCanvas::new(g, 440, 340);
    for b in gts {
        bev.draw_footprint(b, GT_COLOR);
    }
    for b in dets {
        bev.draw_footprint(b, PRED_COLOR);
    }
    bev.draw_ego();
    let bev_path = out_dir.join(format!("{}_bev.png", frame.frame_id));
    bev.img.save(&bev_path).map_err(|e| Error::Image {
        path: bev_path.clone(),
        msg: e.to_string(),
    })?;

    Ok((camera_path, bev_path))
}
