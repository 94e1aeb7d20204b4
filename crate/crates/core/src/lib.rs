#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Probing toolkit for quirky language-model activations.
//!
//! The crate covers the whole desk-scale pipeline: generating quirky
//! datasets, storing per-layer activations, training linear probes,
//! measuring transfer between truthful and untruthful contexts, and
//! flagging untruthful behavior with a Mahalanobis anomaly detector.
//! A planted-direction synthetic world stands in for real model
//! activations and comes with closed-form AUROC oracles.

pub mod anomaly;
pub mod data;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod probes;
pub mod store;
pub mod world;

pub use error::{Error, Result};
