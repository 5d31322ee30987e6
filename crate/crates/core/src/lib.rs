//! Few-shot action recognition with trajectory embeddings.
//!
//! Each video is split into `a` temporally ordered sub-actions, each
//! sub-action is embedded on the unit hypersphere by a small MLP, and each
//! training class owns a bank of `a` learned prototypes. Videos of novel
//! classes are classified (or, for untrimmed videos, detected) by their
//! distance to support trajectories built from a few labeled examples.

pub mod checkpoint;
pub mod cli;
pub mod detection;
pub mod embednet;
pub mod episodic;
pub mod error;
pub mod features;
pub mod linalg;
pub mod loss;
pub mod prototypes;
pub mod synth;
pub mod trainer;

pub use checkpoint::Model;
pub use embednet::{MlpParams, Trajectory};
pub use error::{Result, TaenError};
pub use features::{PooledVideo, VideoFeatures};
pub use linalg::Matrix;
pub use loss::{LossReport, LossWeights, MotionSign};
pub use prototypes::PrototypeBank;
pub use trainer::TrainConfig;
