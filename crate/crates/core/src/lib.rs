//! Meta ordinal regression forests.
//!
//! A feed-forward backbone produces an FC activation vector; a forest of soft
//! binary trees with monotone ordinal leaves turns it into an ordinal
//! distribution. Training weights each tree's loss with a small per-tree
//! network whose parameters are fit by a bilevel meta step against a
//! dynamically regrouped forest.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix it to `f64`.

pub mod autodiff;
pub mod backbone;
pub mod data;
pub mod forest;
pub mod gfs;
pub mod metatrain;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod twwnet;
pub mod verify;

pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Model = metatrain::Model<f64>;
pub type Trainer = metatrain::Trainer<f64>;
pub type Checkpoint = metatrain::Checkpoint<f64>;
pub type TwwNet = twwnet::TwwNet<f64>;
