pub mod augment;
pub mod autograd;
pub mod benchgen;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod loss;
pub mod table;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};
