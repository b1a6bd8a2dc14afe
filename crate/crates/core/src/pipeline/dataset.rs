use std::path::{Path, PathBuf};

use crate::array::DenseArray;
use crate::bbox::BoundingBox;
use crate::cross_modal::pseudo_label_path;
use crate::error::{Error, Result};
use crate::evaluation::{group_by_image, parse_ground_truth};

pub const IMAGES_DIR: &str = "images";
pub const ANNOTATIONS_FILE: &str = "annotations.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub boxes: Vec<BoundingBox>,
    pub pseudo_label: Option<PathBuf>,
}

/// `<root>/images/*.png` plus `<root>/annotations.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let img_dir = root.join(IMAGES_DIR);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&img_dir)
            .map_err(|e| Error::Dataset(format!("{}: {e}", img_dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Dataset(format!(
                "no PNG images under {}",
                img_dir.display()
            )));
        }
        let ids: Vec<String> = paths
            .iter()
            .map(|p| {
                p.file_stem()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        let ann = root.join(ANNOTATIONS_FILE);
        let text = std::fs::read_to_string(&ann)
            .map_err(|e| Error::Dataset(format!("{}: {e}", ann.display())))?;
        let grouped = group_by_image(&ids, parse_ground_truth(&text)?)?;
        let records = ids
            .into_iter()
            .zip(paths)
            .zip(grouped)
            .map(|((id, image_path), boxes)| DatasetRecord {
                id,
                image_path,
                boxes,
                pseudo_label: None,
            })
            .collect();
        Ok(Self { root, records })
    }

    /// Points every record at `<dir>/<id>.vls`.
    pub fn with_pseudo_labels(mut self, dir: &Path) -> Self {
        for r in &mut self.records {
            r.pseudo_label = Some(pseudo_label_path(dir, &r.id));
        }
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn ground_truth(&self) -> Vec<Vec<BoundingBox>> {
        self.records.iter().map(|r| r.boxes.clone()).collect()
    }
}

/// RGB image as `[3, H, W]` in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<DenseArray> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(DenseArray::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    }))
}

pub fn save_image(image: &DenseArray, path: &Path) -> Result<()> {
    let d = image.dims();
    if d.len() != 3 || d[0] != 3 {
        return Err(Error::Dimension(format!("expected [3, H, W], got {d:?}")));
    }
    let (h, w) = (d[1], d[2]);
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for p in 0..h * w {
            raw[p * 3 + c] = (image.values()[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    image::RgbImage::from_raw(w as u32, h as u32, raw)
        .expect("buffer size")
        .save(path)?;
    Ok(())
}

/// Loads a record's image and checks its boxes lie inside it.
pub fn load_record_image(record: &DatasetRecord) -> Result<DenseArray> {
    let img = load_image(&record.image_path)?;
    let (h, w) = (img.dims()[1] as f64, img.dims()[2] as f64);
    for b in &record.boxes {
        if b.x < -0.5 || b.y < -0.5 || b.x2() > w + 0.5 || b.y2() > h + 0.5 {
            return Err(Error::Dataset(format!(
                "{}: box ({}, {}, {}, {}) outside {w}x{h} image",
                record.id, b.x, b.y, b.w, b.h
            )));
        }
    }
    Ok(img)
}
