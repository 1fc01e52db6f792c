//! Object-hallucination evaluation for image captions, and a small
//! controllable language model that trades hallucination against coverage.

pub mod control;
pub mod datagen;
pub mod error;
pub mod extraction;
pub mod io;
pub mod llm_client;
pub mod matching;
pub mod metrics;
pub mod pipeline;
pub mod toyworld;

pub use error::{Error, ErrorKind, Result};
