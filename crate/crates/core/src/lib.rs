//! Object-goal navigation on procedurally generated gridworlds, driven by a
//! multi-channel semantic map of the agent's history.
//!
//! The crate is organised bottom-up:
//!
//! - [`gridsim`]: worlds, kinematics, ray sensing and the geodesic oracle.
//! - [`mapper`]: semantic map accumulation, egocentric views, sector
//!   descriptions, rendering and the `MUVM` map codec.
//! - [`demogen`]: scripted demonstrators, 4-step chunking, stop augmentation
//!   and the on-disk dataset.
//! - [`rewards`]: z-scored progress rewards and short-horizon return-to-go.
//! - [`nnet`]: dense tensors, a reverse-mode tape, Adam and gradient checking.
//! - [`policy`]: the map/observation fusion network with action and reward heads.
//! - [`training`]: the staged training pipeline and its losses.
//! - [`eval`]: rollouts and SR/SPL metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the `f64` instantiation used throughout the pipeline.

pub mod demogen;
pub mod error;
pub mod eval;
pub mod gridsim;
pub mod mapper;
pub mod nnet;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by the pipeline.
pub type Real = f64;
pub type Tensor = nnet::Tensor<Real>;
pub type ParamStore = nnet::ParamStore<Real>;
pub type Policy = policy::Policy<Real>;
pub type TrainReport = training::TrainReport;
