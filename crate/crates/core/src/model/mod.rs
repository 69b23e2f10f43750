//! Network modules: the shared backbone, the Transformer and CNN viewers,
//! and the full model.

pub mod backbone;
pub mod cnn;
pub mod multiview;
pub mod nn;
pub mod transformer;

pub use multiview::{Model, ModelConfig, Prediction, SampleLosses, Target, TaskFlags};
