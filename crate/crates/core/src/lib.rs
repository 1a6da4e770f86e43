//! Causal discovery and causal inference with affine autoregressive flows.
//!
//! The model class is a stack of affine autoregressive transforms sharing one
//! causal ordering: each variable is an affine function of its own latent
//! noise, with scale and shift produced by small MLPs reading only variables
//! of lower causal rank. Fitting the same data under competing orderings and
//! comparing held-out log-likelihood yields a direction decision; because the
//! transform is invertible, a fitted model also answers interventional and
//! counterfactual queries.
//!
//! Modules build on each other roughly in this order: [`nn`] (conditioner
//! MLPs and Adam), [`flow`] (the invertible model itself), [`train`]
//! (maximum-likelihood fitting), [`discovery`] (direction and ordering
//! selection), [`queries`] (interventions and counterfactuals), and
//! [`datagen`] (synthetic benchmark data).

pub mod data;
pub mod datagen;
pub mod discovery;
mod error;
pub mod flow;
pub mod nn;
pub mod queries;
pub mod rng;
pub mod train;

pub use data::DataMatrix;
pub use error::{Error, Result};
