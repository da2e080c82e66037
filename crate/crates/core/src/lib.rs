//! Multimodal re-identification toolkit: synthetic multimodal data, MLP
//! streams with BNNeck heads, fusion and UniCat training strategies, and
//! retrieval evaluation.

pub mod cli;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod pipeline;
pub mod synthdata;

pub use error::{Error, Result};
