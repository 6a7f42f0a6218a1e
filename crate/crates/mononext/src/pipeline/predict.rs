//! Prediction runner: forward + decode per frame, optionally writing
//! KITTI-format detection files (bottom-anchored location, score last).

use super::{image_to_tensor, TrainConfig};
use crate::error::{Error, Result};
use crate::grid::{decode, ScoredBox};
use crate::kitti::{box_to_label, write_label_file, KittiDataset};
use crate::network::MonoNext;
use crate::scalar::{real, Real};
use std::collections::BTreeMap;
use std::path::Path;

/// Run the model over `ids`, decoding each prediction grid into scored
/// boxes. When `out_dir` is set, one detection file per frame is written.
pub fn predict_frames<T: Real>(
    model: &mut MonoNext<T>,
    dataset: &KittiDataset,
    ids: &[String],
    cfg: &TrainConfig<T>,
    out_dir: Option<&Path>,
) -> Result<BTreeMap<String, Vec<ScoredBox<T>>>> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut out = BTreeMap::new();
    for id in ids {
        let frame = dataset.load_frame::<T>(id)?;
        let (h, w, _) = cfg.network.input_size;
        let input = image_to_tensor(&frame.image, (h, w));
        let pred = model.forward(&input);
        let boxes = decode(
            &pred,
            real(cfg.threshold),
            &cfg.grid,
            cfg.nms_iou.map(real),
        );
        if let Some(dir) = out_dir {
            write_predictions(
                &dir.join(format!("{id}.txt")),
                &boxes,
                &cfg.classes,
                &frame,
            )?;
        }
        out.insert(id.clone(), boxes);
    }
    Ok(out)
}

/// Write scored boxes as KITTI detection lines (16 fields, score last).
pub fn write_predictions<T: Real>(
    path: &Path,
    boxes: &[ScoredBox<T>],
    classes: &[String],
    frame: &crate::kitti::Frame<T>,
) -> Result<()> {
    let image_size = (frame.image.width(), frame.image.height());
    let records: Vec<_> = boxes
        .iter()
        .map(|b| {
            let name = classes
                .get(b.class_id)
                .map(String::as_str)
                .unwrap_or("Unknown");
            box_to_label(b, name, Some(&frame.calib), image_size)
        })
        .collect();
    write_label_file(path, &records)
}
