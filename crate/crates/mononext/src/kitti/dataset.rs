//! Frame loading from the standard KITTI directory layout:
//! `root/image_2/<id>.png`, `root/label_2/<id>.txt`, `root/calib/<id>.txt`.

use super::{calib::parse_calib, label::parse_label_file, Frame};
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct KittiDataset {
    root: PathBuf,
}

impl KittiDataset {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        KittiDataset { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_dir(&self) -> PathBuf {
        self.root.join("image_2")
    }

    pub fn label_dir(&self) -> PathBuf {
        self.root.join("label_2")
    }

    pub fn calib_dir(&self) -> PathBuf {
        self.root.join("calib")
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.image_dir().join(format!("{id}.png"))
    }

    /// Frame ids that have an image, a label file and calibration.
    pub fn frame_ids(&self) -> Result<Vec<String>> {
        let image_dir = self.image_dir();
        if !image_dir.exists() {
            return Ok(Vec::new());
        }
        let entries = std::fs::read_dir(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
        let mut ids = BTreeSet::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&image_dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if self.label_dir().join(format!("{stem}.txt")).exists()
                && self.calib_dir().join(format!("{stem}.txt")).exists()
            {
                ids.insert(stem.to_string());
            }
        }
        Ok(ids.into_iter().collect())
    }

    pub fn available(&self) -> Result<BTreeSet<String>> {
        Ok(self.frame_ids()?.into_iter().collect())
    }

    pub fn load_frame<T: Real>(&self, id: &str) -> Result<Frame<T>> {
        let image_path = self.image_path(id);
        let image = image::open(&image_path)
            .map_err(|e| Error::Image {
                path: image_path.clone(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let labels = parse_label_file(&self.label_dir().join(format!("{id}.txt")))?;
        let calib = parse_calib(&self.calib_dir().join(format!("{id}.txt")))?;
        Ok(Frame {
            frame_id: id.to_string(),
            image,
            labels,
            calib,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    #[test]
    fn lists_only_complete_frames() {
        let dir = tempfile::tempdir().unwrap();
        let ds = KittiDataset::new(dir.path());
        std::fs::create_dir_all(ds.image_dir()).unwrap();
        std::fs::create_dir_all(ds.label_dir()).unwrap();
        std::fs::create_dir_all(ds.calib_dir()).unwrap();

        // Complete frame.
        RgbImage::new(4, 4).save(ds.image_path("000000")).unwrap();
        std::fs::write(ds.label_dir().join("000000.txt"), "").unwrap();
        std::fs::write(
            ds.calib_dir().join("000000.txt"),
            "P2: 700 0 240 0 0 700 240 0 0 0 1 0\n",
        )
        .unwrap();
        // Image without labels.
        RgbImage::new(4, 4).save(ds.image_path("000001")).unwrap();

        assert_eq!(ds.frame_ids().unwrap(), vec!["000000".to_string()]);
        let frame = ds.load_frame::<f64>("000000").unwrap();
        assert_eq!(frame.frame_id, "000000");
        assert!(frame.labels.is_empty());
    }

    #[test]
    fn empty_root_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let ds = KittiDataset::new(dir.path().join("nope"));
        assert!(ds.frame_ids().unwrap().is_empty());
    }
}
