//! The two training augmentations: horizontal flip (with label transform)
//! and contrast adjustment.

use super::Frame;
use crate::geometry::normalize_angle;
use crate::scalar::{real, Real};
use image::RgbImage;

/// Mirror a frame left–right. Labels transform as x → −x,
/// rotation_y → normalize(π − rotation_y) (the mirrored heading direction),
/// alpha likewise, and the 2D box reflects about the image width; dims are
/// unchanged.
pub fn flip_frame<T: Real>(frame: &Frame<T>) -> Frame<T> {
    let image = image::imageops::flip_horizontal(&frame.image);
    let w = real::<T>(frame.image.width() as f64);
    let labels = frame
        .labels
        .iter()
        .map(|rec| {
            let mut out = rec.clone();
            out.location[0] = -rec.location[0];
            out.rotation_y = normalize_angle(T::PI() - rec.rotation_y);
            out.alpha = normalize_angle(T::PI() - rec.alpha);
            out.bbox2d = [
                w - rec.bbox2d[2],
                rec.bbox2d[1],
                w - rec.bbox2d[0],
                rec.bbox2d[3],
            ];
            out
        })
        .collect();
    Frame {
        frame_id: frame.frame_id.clone(),
        image,
        labels,
        calib: frame.calib.clone(),
    }
}

/// Scale contrast about the per-channel image mean:
/// pixel' = clamp(mean + factor·(pixel − mean)).
///
/// Panics on a non-positive factor.
pub fn adjust_contrast(image: &RgbImage, factor: f64) -> RgbImage {
    assert!(
        factor > 0.0 && factor.is_finite(),
        "adjust_contrast: factor must be positive and finite"
    );
    let n = (image.width() as f64) * (image.height() as f64);
    let mut mean = [0.0f64; 3];
    for p in image.pixels() {
        for c in 0..3 {
            mean[c] += p.0[c] as f64;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut out = image.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            let v = mean[c] + factor * (p.0[c] as f64 - mean[c]);
            p.0[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
