pub mod compare;
pub mod editing;
pub mod error;
pub mod inversion;
pub mod latent;
pub mod pipeline;
pub mod scenegen;
pub mod semantics;
pub mod service;
pub mod store;
pub mod world;

pub use error::{Error, Result};
