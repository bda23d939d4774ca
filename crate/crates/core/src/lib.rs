//! Mixed hidden Markov models for multivariate animal-movement series.
//!
//! Each series follows one of K discrete behavioural contexts, each with its
//! own Markov chain over N hidden states. State-dependent observations are
//! conditionally independent across variables, and a binary exposure
//! covariate may shift the transition logits.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod estimation;
pub mod inference;
pub mod likelihood;
pub mod markov;
pub mod model;
pub mod obsmodel;
pub mod optim;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
pub use model::{CovariateEffect, Layout, Model, ModelSpec, NaturalParams, ParamId};
pub use obsmodel::{EmissionParams, EventObservation, Family, Series, SeriesSet, StateDensity, Variable};
