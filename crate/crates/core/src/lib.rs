//! Value embeddings for LLM answers.
//!
//! The crate covers the whole workflow: building a value-eliciting QA corpus
//! from pluggable LLM and translation clients ([`corpus`]), sampling
//! multi-view training pairs ([`views`]), a hashed-feature Siamese encoder
//! ([`encoder`]) trained with a multi-view InfoNCE objective ([`trainer`]),
//! value-identification evaluation ([`evalharness`]) and value maps with
//! centroid distances ([`valuemap`]). The [`cli`] module ties these together
//! behind the `univar` binary.

pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalharness;
pub mod hashing;
pub mod par;
pub mod store;
pub mod synth;
pub mod trainer;
pub mod valuemap;
pub mod views;

pub use error::{Error, Result};
pub use par::Execution;
