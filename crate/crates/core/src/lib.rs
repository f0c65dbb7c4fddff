//! Segmentation masks as text.
//!
//! A mask is reduced to a coarse grid of label strings ("semantic
//! descriptors") that a language model can read and emit. This crate covers
//! everything around the model: grid construction ([`grid`]), text codecs with
//! tolerant parsing ([`codec`]), mask refiners ([`refine`]), evaluation
//! metrics ([`metrics`]), instruction-data generation ([`dataset`]) and a
//! robustness harness with synthetic data ([`harness`], [`synth`]).

pub mod codec;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod refine;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
