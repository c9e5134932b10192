//! Training, evaluation, gradient checking, ablation and inference for the
//! adaptive-directional radar segmentation model.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod gradcheck_cmd;
pub mod infer;
pub mod optim;
pub mod reports;
pub mod trainer;
