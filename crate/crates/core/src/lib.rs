//! Stable continuous-time linear predictors learned through coupling flows.
//!
//! A [`flow::CouplingFlow`] maps the state into a latent space where the
//! dynamics are linear with a Hurwitz matrix built from unconstrained
//! [`hurwitz::HurwitzFactors`]. Lifting the latent state through a
//! [`monomial::MultiIndexBasis`] gives a linear system whose output is read
//! back through a linear map, see [`predictor::LinearPredictor`].

// Negated comparisons are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diff;
pub mod flow;
pub mod hurwitz;
pub mod linalg;
pub mod monomial;
pub mod data;
pub mod predictor;
pub mod metrics;
pub mod training;
