//! Distributed dataflow inference framework.
//!
//! An application is a directed graph of actors connected by bounded FIFO
//! edges carrying fixed-size tokens. The crate provides the graph model and
//! its file formats ([`model`]), design-rule and deadlock analysis
//! ([`analyzer`]), a thread-per-actor runtime ([`runtime`]), TCP
//! transmit/receive FIFO endpoints ([`netfifo`]), a deployment compiler that
//! splits a graph across devices ([`deploy`]), and a partition-point
//! explorer ([`explorer`]).

pub mod analyzer;
pub mod deploy;
pub mod diag;
pub mod explorer;
pub mod kernels;
pub mod model;
pub mod netfifo;
pub mod rng;
pub mod rules;
pub mod runtime;
pub mod synthetic;

#[cfg(test)]
pub(crate) mod testutil;
