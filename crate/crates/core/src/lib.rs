//! Exact evaluators, mixing constants, dynamic programming, softmax policy
//! gradients and bound audits for small tabular MDPs.

pub mod audit;
pub mod bounds;
pub mod dp;
pub mod error;
pub mod estimators;
pub mod fixtures;
pub mod linalg;
pub mod mdp;
pub mod mixing;
pub mod softmax;
pub mod train;
pub mod values;

pub use error::{Error, Result};
pub use mdp::{Mdp, PolicySequence, Setting, StationaryPolicy, ValueReport, R_MAX};
pub use mixing::MixingConstants;
pub use softmax::SoftmaxParams;
