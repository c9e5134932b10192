//! Adaptive-directional attention for multi-view radar semantic segmentation,
//! built from first principles: a minimal reverse-mode tensor engine, a
//! synthetic Range-Angle-Doppler data generator, the attention block and full
//! network, the class-imbalance loss suite, and IoU/Dice metrics.

pub mod attention;
pub mod error;
pub mod graph;
pub mod init;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod synth;
pub mod tensor;

pub use error::{CoreError, Result};
pub use graph::{Graph, Var};
pub use params::{BoundParams, ParamSet, Parameter};
pub use tensor::Tensor;
