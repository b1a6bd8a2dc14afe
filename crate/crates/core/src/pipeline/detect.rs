use std::path::Path;

use rayon::prelude::*;

use super::dataset::{load_record_image, Dataset};
use super::model::Detector;
use super::train::Trainer;
use crate::bbox::BoundingBox;
use crate::config::RunConfig;
use crate::cross_modal::{generate_pseudo_labels, pseudo_label_path, save_pseudo_labels};
use crate::detection::write_detections;
use crate::error::Result;
use crate::evaluation::{evaluate, EvalReport, SubsetSpec};

/// Caches the frozen encoder's score map of every image as `<out>/<id>.vls`.
pub fn pseudolabel_dataset(cfg: &RunConfig, dataset: &Dataset, out: &Path) -> Result<usize> {
    let trainer = Trainer::new(cfg)?;
    std::fs::create_dir_all(out)?;
    dataset.records.par_iter().try_for_each(|r| {
        let input = trainer.detector.normalize(&load_record_image(r)?)?;
        let map = generate_pseudo_labels(&input, trainer.frozen(), trainer.detector.linguistic())?;
        save_pseudo_labels(&map, pseudo_label_path(out, &r.id))
    })?;
    Ok(dataset.len())
}

/// Detections per record, in dataset order.
pub fn detect_dataset(
    detector: &Detector,
    dataset: &Dataset,
    threshold: f64,
) -> Result<Vec<Vec<BoundingBox>>> {
    dataset
        .records
        .par_iter()
        .map(|r| detector.detect(&load_record_image(r)?, threshold))
        .collect()
}

pub fn write_dataset_detections(
    path: &Path,
    dataset: &Dataset,
    dets: &[Vec<BoundingBox>],
) -> Result<()> {
    write_detections(
        path,
        dataset
            .records
            .iter()
            .zip(dets)
            .map(|(r, d)| (r.id.as_str(), d.as_slice())),
    )
}

pub fn evaluate_detector(
    detector: &Detector,
    dataset: &Dataset,
    threshold: f64,
    subsets: &[SubsetSpec],
) -> Result<(EvalReport, Vec<Vec<BoundingBox>>)> {
    let dets = detect_dataset(detector, dataset, threshold)?;
    let report = evaluate(&dets, &dataset.ground_truth(), subsets)?;
    Ok((report, dets))
}
