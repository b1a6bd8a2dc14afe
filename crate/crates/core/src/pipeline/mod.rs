//! Dataset IO, synthetic data, the trainee network, training, and inference.

pub mod checkpoint;
pub mod dataset;
pub mod detect;
pub mod model;
pub mod plot;
pub mod synth;
pub mod train;

pub use checkpoint::Checkpoint;
pub use dataset::{load_image, Dataset, DatasetRecord};
pub use detect::{
    detect_dataset, evaluate_detector, pseudolabel_dataset, write_dataset_detections,
};
pub use model::Detector;
pub use plot::plot_report;
pub use synth::make_synthetic_dataset;
pub use train::{combined_loss, train, LossRecord, TrainJob, Trainer, TrainingSet};
