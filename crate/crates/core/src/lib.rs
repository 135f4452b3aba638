//! A tabular multi-class classification laboratory.
//!
//! Implements 1-D convolutional and recurrent networks with hand-written
//! backpropagation, three optimizers, univariate feature selection, over- and
//! under-sampling, gradient-boosted trees and random forests, stratified cross
//! validation with macro metrics, and a CNN → gradient-boosting cascade.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod resample;
pub mod select;
pub mod tensor;
pub mod trees;

pub use error::{Error, Result};
