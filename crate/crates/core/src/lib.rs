//! Context-aware pedestrian detection with vision-language self-supervision,
//! trained and evaluated at desk scale on synthetic data.

pub mod array;
pub mod bbox;
pub mod config;
pub mod container;
pub mod cross_modal;
pub mod detection;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod pipeline;
pub mod psc;
pub mod vls;

pub use array::DenseArray;
pub use bbox::{iou, BoundingBox};
pub use config::RunConfig;
pub use error::{Error, Result};
