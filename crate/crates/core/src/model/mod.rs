//! FCN-5 and MsE-CNN assembly, execution, differentiation and cost counting.

mod config;
mod cost;
mod graph;
mod state;

pub use config::{ModelConfig, Variant};
pub use cost::{count_flops, FlopReport, LevelCost};
pub use graph::{backward, forward, ForwardCache, Mode};
pub use state::{build_model, count_params, tensor_layout, Gradients, LevelGrads, LevelParams, ModelState};
