//! Frame → training sample conversion: bilinear resize to the network input
//! size, pixel normalization to [0, 1], optional augmentation, and target
//! encoding. 3D targets are independent of the image size, so labels pass
//! through the resize untouched.

use super::TrainConfig;
use crate::geometry::BoxSpec;
use crate::grid::{encode, GridTensor};
use crate::kitti::{adjust_contrast, flip_frame, label_to_box, Frame};
use crate::scalar::{real, Real};
use image::RgbImage;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Resize (bilinear, aspect ratio not preserved) and scale pixels to [0, 1].
pub fn image_to_tensor<T: Real>(image: &RgbImage, size: (usize, usize)) -> Array3<T> {
    let resized = if (image.width() as usize, image.height() as usize) == (size.1, size.0) {
        image.clone()
    } else {
        image::imageops::resize(
            image,
            size.1 as u32,
            size.0 as u32,
            image::imageops::FilterType::Triangle,
        )
    };
    let mut out = Array3::zeros((size.0, size.1, 3));
    let scale = real::<T>(1.0 / 255.0);
    for (x, y, p) in resized.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = real::<T>(p.0[c] as f64) * scale;
        }
    }
    out
}

/// Ground-truth boxes of the configured classes.
pub fn frame_boxes<T: Real>(frame: &Frame<T>, classes: &[String]) -> Vec<BoxSpec<T>> {
    frame
        .labels
        .iter()
        .filter_map(|rec| label_to_box(rec, classes))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Sample<T> {
    pub frame_id: String,
    pub input: Array3<T>,
    pub target: GridTensor<T>,
    pub boxes: Vec<BoxSpec<T>>,
}

/// Build one training sample. When `aug_rng` is given, horizontal flip and
/// contrast increase are each applied with probability 0.5 (contrast factor
/// uniform in [1.0, 1.5]).
pub fn prepare_sample<T: Real>(
    frame: &Frame<T>,
    cfg: &TrainConfig<T>,
    aug_rng: Option<&mut ChaCha8Rng>,
) -> Sample<T> {
    let mut owned: Option<Frame<T>> = None;
    if let Some(rng) = aug_rng {
        if rng.random_bool(0.5) {
            owned = Some(flip_frame(frame));
        }
        if rng.random_bool(0.5) {
            let factor = rng.random_range(1.0..1.5);
            let base = owned.take().unwrap_or_else(|| frame.clone());
            let image = adjust_contrast(&base.image, factor);
            owned = Some(Frame { image, ..base });
        }
    }
    let frame = owned.as_ref().unwrap_or(frame);
    let boxes = frame_boxes(frame, &cfg.classes);
    let target = encode(&boxes, &cfg.grid);
    let (h, w, _) = cfg.network.input_size;
    Sample {
        frame_id: frame.frame_id.clone(),
        input: image_to_tensor(&frame.image, (h, w)),
        target,
        boxes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti::CalibBundle;
    use image::Rgb;

    #[test]
    fn tensor_is_normalized_and_shaped() {
        let mut img = RgbImage::new(10, 6);
        img.put_pixel(3, 2, Rgb([255, 128, 0]));
        let t = image_to_tensor::<f64>(&img, (6, 10)); // same size, no resize
        assert_eq!(t.dim(), (6, 10, 3));
        assert!((t[[2, 3, 0]] - 1.0).abs() < 1e-12);
        assert!((t[[2, 3, 1]] - 128.0 / 255.0).abs() < 1e-12);
        let resized = image_to_tensor::<f64>(&img, (4, 4));
        assert_eq!(resized.dim(), (4, 4, 3));
    }

    #[test]
    fn sample_encodes_configured_classes_only() {
        let mut cfg = TrainConfig::<f64>::default();
        cfg.network = crate::network::NetworkConfig::tiny();
        let line_car =
            "Car 0.0 0 0.0 100 100 200 200 1.5 1.6 4.0 0.0 1.65 42.5 0.0";
        let line_ped =
            "Pedestrian 0.0 0 0.0 100 100 120 180 1.8 0.6 0.5 2.0 1.65 20.0 0.0";
        let frame = Frame {
            frame_id: "000000".into(),
            image: RgbImage::new(480, 480),
            labels: vec![
                crate::kitti::parse_label_line(line_car).unwrap(),
                crate::kitti::parse_label_line(line_ped).unwrap(),
            ],
            calib: CalibBundle {
                p2: [
                    [700.0, 0.0, 240.0, 0.0],
                    [0.0, 700.0, 240.0, 0.0],
                    [0.0, 0.0, 1.0, 0.0],
                ],
            },
        };
        let sample = prepare_sample(&frame, &cfg, None);
        assert_eq!(sample.boxes.len(), 1);
        assert_eq!(sample.target.data.iter().filter(|v| **v != 0.0).count(), 9);
        assert_eq!(sample.input.dim(), (480, 480, 3));
    }
}
