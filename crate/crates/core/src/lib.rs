pub mod alignment;
pub mod builder;
pub mod bundle_adjust;
pub mod dataset;
pub mod descriptor;
pub mod lie;
pub mod map;
pub mod multiview;
pub mod pipeline;
pub mod place_recognition;
pub mod simulation;
