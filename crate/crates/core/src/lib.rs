//! Closed-loop offline reinforcement learning with an adaptive diffusion
//! world model.
//!
//! The crate provides, bottom to top:
//!
//! - [`tensor`], [`nn`], [`adam`]: a small reverse-mode autodiff substrate
//!   over dense 64-bit arrays, dense MLPs, and Adam.
//! - [`schedule`], [`diffusion`]: a conditional denoising diffusion model of
//!   one-step transitions with classifier-free guidance, plus a reward and
//!   terminal head.
//! - [`policy`], [`adaptation`]: diagonal Gaussian policies, behavior
//!   cloning, and importance-weighted world-model updates that track the
//!   target policy as it drifts from the behavior policy.
//! - [`rollout`]: synthetic trajectory generation with dataset-range
//!   clipping and a ring replay buffer.
//! - [`learners`]: SAC and IQL policy improvement plus true-environment
//!   evaluation.
//! - [`env`]: toy continuous-control environments, tiered offline datasets,
//!   normalization, and the dataset file format.
//! - [`bound`]: exact tabular verification of the return-gap bound and its
//!   supporting inequalities.

pub mod adam;
pub mod adaptation;
pub mod bound;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod env;
pub mod error;
pub mod learners;
pub mod nn;
pub mod policy;
pub mod rollout;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
