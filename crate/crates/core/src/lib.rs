//! Novel-object image captioning.
//!
//! Word embeddings of object categories are estimated from their visual
//! prototypes by a learned converter, so new categories can be added to a
//! trained captioner from a few feature samples without retraining. Captions
//! for tagged images are decoded with constrained beam search over a bitmask
//! automaton that forces every tag group to appear.

pub mod captioner;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod cbs;
pub mod converter;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod microworld;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod vocab;

pub use error::{Error, Result};
