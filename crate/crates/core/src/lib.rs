//! Stereo geometry transformer and endoscope-centric action-chunking policy.
//!
//! Pipeline: procedural stereo scenes with exact point-map ground truth
//! ([`scenegen`]) train a point-map regression transformer ([`geotrans`]).
//! Its frozen decoder embeddings feed a feature connector ([`connector`]) and
//! an action-chunking decoder ([`policy`]) that is trained on demonstrations
//! from a simulated dual-arm robot ([`simrobot`]).

pub mod bench;
pub mod config;
pub mod connector;
pub mod error;
pub mod geom;
pub mod geotrans;
pub mod nn;
pub mod policy;
pub mod scenegen;
pub mod simrobot;

pub use candle_core::DType;
pub use config::RunConfig;
pub use error::{Error, Result};

/// Version string embedded in every artifact.
pub const CODE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), "/", env!("CARGO_PKG_VERSION"));
