//! Pipeline orchestration for the robusthedge CLI: configuration, synthetic
//! data generation, stage execution and report emission.

pub mod config;
pub mod pipeline;
pub mod scatter;
pub mod synth;
