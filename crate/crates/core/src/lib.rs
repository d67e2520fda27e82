pub mod data;
pub mod error;
pub mod fsutil;
pub mod hash;
pub mod inlp;
pub mod metrics;
pub mod npy;
pub mod orchestrator;
pub mod probe;
pub mod pwcca;
pub mod synth;
pub mod tasks;
pub mod temporal;

pub use error::{Error, Result};
