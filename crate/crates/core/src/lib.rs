//! Dense retrieval with a contrastive dual objective.
//!
//! The core is generic over the scalar type; the aliases below fix it to `f64`,
//! which is what the command-line tool and the checkpoints use.

pub mod checkpoint;
pub mod corpus;
pub mod diagnostics;
pub mod encoder;
pub mod eval;
pub mod index;
pub mod loss;
pub mod optim;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

pub type Params = encoder::ModelParams<f64>;
pub type Embedding = encoder::UnitEmbedding<f64>;
pub type Index = index::FlatIndex<f64>;
pub type Checkpoint = checkpoint::Checkpoint<f64>;
pub type TrainState = trainer::TrainState<f64>;
