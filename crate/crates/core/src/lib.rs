//! Core building blocks of the exit-aware tracker: box geometry, the
//! annotation format and dataset statistics, the synthetic conveyor
//! generator, tracking/exit metrics, exit-score calibration and the
//! pick-and-place gating simulation.

pub mod dataset;
pub mod geometry;
pub mod kv;
pub mod metrics;
pub mod ood;
pub mod synthetic;
pub mod tasksim;

pub use dataset::{DatasetStats, FrameAnnotation, RgbFrame, Sequence};
pub use geometry::BBox;
