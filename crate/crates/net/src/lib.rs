pub mod checkpoint;
pub mod crop;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod loss;
pub mod model;
pub mod params;
pub mod perturb;
pub mod track;
pub mod train;

pub use error::NetError;
pub use model::{NetConfig, OodInput, TrackerNet, TrainMode};
