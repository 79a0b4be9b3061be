//! Semi-discrete optimal transport partitions of a continuous source measure,
//! singular-boundary ambiguity samples synthesized from them, and a small
//! confidence-suppression training loop with calibration metrics.

pub mod base_measure;
pub mod cloud;
pub mod codec;
pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sdot;
pub mod singularity;
pub mod synthesis;
pub mod toy;
pub mod trainer;

pub use base_measure::BaseMeasure;
pub use cloud::PointCloud;
pub use codec::Codec;
pub use config::RunConfig;
pub use error::{Error, ErrorClass, Result};
pub use rng::SeededRng;
pub use sdot::{CellStats, PotentialOffsets, SolveReport, SolverConfig};
