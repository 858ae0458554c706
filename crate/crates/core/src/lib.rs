//! Fitness landscape analysis for grammar-encoded CNN neuroevolution.
//!
//! Genotypes from [`grammar`] are mutated by one of three operator families
//! ([`mutation`]), scored by an [`evaluator`] backend, driven through selective
//! walks or evolution ([`walks`]), and the resulting fitness series are
//! summarised by autocorrelation and entropy measures ([`measures`]).

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod experiment;
pub mod grammar;
pub mod measures;
pub mod mutation;
pub mod report;
pub mod traces;
pub mod walks;

pub use error::{Error, Result};
