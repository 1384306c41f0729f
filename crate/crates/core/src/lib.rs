//! Learning a multiclass classifier from label-subset membership queries.
//!
//! Each training example reveals only whether its hidden label lies in a
//! uniformly drawn size-`m` subset of the `k` classes. The supervised risk is
//! recovered exactly as `m E[l̄ | s=1] - (m-1) E[l̄ | s=0]`, estimated from
//! the two response groups, optionally corrected against negative values,
//! and minimized by minibatch SGD.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod datasets;
pub mod error;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod query;
pub mod risk;
pub mod rng;
pub mod stats;
pub mod trainer;
pub mod verify;

pub use error::{Error, ErrorClass, Result};
pub use losses::{ClasswiseLoss, ProbabilityVector};
pub use model::{Architecture, Scorer};
pub use query::{LabelSpace, LabelSubset, QueryConfig, Response};
pub use risk::{Correction, RiskEstimate};
pub use rng::SeededRng;
