//! Boosted off-policy learning from logged bandit feedback.
//!
//! Policies are softmax distributions over the scores of an additive ensemble
//! of decision trees. Training minimizes the inverse-propensity-scored risk of
//! such a policy directly (`Algorithm::Bopl`) or a convex-in-part surrogate of
//! it (`Algorithm::BoplS`); a reward-regression baseline (`Algorithm::Brr`)
//! shares the same tree learner.

pub mod base_learners;
pub mod boosting;
pub mod data_io;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod policy;
pub mod simulation;
pub mod tree;

pub use error::{Error, Result};
