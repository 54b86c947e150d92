//! Relevance-knowledge acquisition and transfer (RAT) for multi-task
//! pretraining over heterogeneous label spaces.
//!
//! The crate is organized bottom-up:
//!
//! * [`diffcore`]: tensors, reverse-mode tape, SGD, gradient checking
//! * [`datagen`]: synthetic multi-domain benchmark with controlled domain shift
//! * [`knowledge`]: knowledge base, posterior knowledge, relevance weighting
//! * [`model`]: encoder, RAT module, projector and task heads; EMA; checkpoints
//! * [`training`]: cyclic pretraining and the adaptation protocols
//! * [`transfer`]: zero-shot prediction by relevance-weighted head aggregation
//! * [`federated`]: simulated federated pretraining
//! * [`metrics`]: AUC, F1, AP, MCC, bootstrap CIs, t-tests

pub mod datagen;
pub mod diffcore;
pub mod error;
pub mod federated;
pub mod knowledge;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod training;
pub mod transfer;

pub use error::{Error, Result};
