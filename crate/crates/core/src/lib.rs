//! Label-free coordination toolkit for small tabular Dec-POMDPs.
//!
//! The model, evaluation and symmetry layers are generic over a [`Scalar`]
//! type, so the toy games can be checked in `f64`, `f32` or exact
//! rationals. Training and the hash-based tie-breaker work in `f64`.

pub mod envs;
pub mod error;
pub mod eval;
pub mod history;
pub mod lfc;
pub mod model;
pub mod pipeline;
pub mod otherplay;
pub mod policy;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod symmetry;
pub mod tiebreak;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use history::{AoHistory, AoSpace, History};
pub use model::{DecPomdp, Diagnostic, EnvSpec, JointSpace};
pub use policy::{LocalPolicy, PolicyFile, TabularPolicy};
pub use scalar::Scalar;

/// Exact rational scalar.
pub type Rational = num_rational::Ratio<i64>;

pub type Env = DecPomdp<f64>;
pub type Policy = TabularPolicy<f64>;
pub type EnvF32 = DecPomdp<f32>;
pub type PolicyF32 = TabularPolicy<f32>;
pub type ExactEnv = DecPomdp<Rational>;
pub type ExactPolicy = TabularPolicy<Rational>;
