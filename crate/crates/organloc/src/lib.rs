//! File formats, phantom corpora, checkpoints and batch commands around
//! [`organloc_core`].

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod io;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{Error, Result};
