//! Frequency-decoupled fusion network for joint pansharpening and thin-cloud
//! removal, with a small reverse-mode tape, an Adam trainer, checkpoint
//! archives and finite-difference gradient verification.

pub mod blocks;
pub mod budget;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use config::{Ablation, AblationRow, NetworkConfig};
pub use graph::{Graph, NodeId};
pub use model::PanTcr;
pub use params::{InitMode, ParamStore};
pub use tensor::Tensor;
pub use train::TrainConfig;
