#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boundaries;
pub mod bpp_engine;
pub mod dte_model;
pub mod error;
pub mod normal;
pub mod oc_engine;
pub mod priors;
pub mod rng;
pub mod scalar;
pub mod trial_engine;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ControlParams = dte_model::ControlParams<f64>;
pub type ScenarioDraw = dte_model::ScenarioDraw<f64>;
