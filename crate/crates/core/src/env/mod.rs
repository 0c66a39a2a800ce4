//! Toy continuous-control environments and tiered offline datasets.

mod dataset;
mod gen;
mod pendulum;
mod point_mass;
pub mod synthetic;

pub use dataset::{load_dataset, normalize, save_dataset, NormStats, OfflineDataset, Tier};
pub use gen::{generate_dataset, GenConfig};
pub use pendulum::Pendulum1d;
pub use point_mass::PointMass2d;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// The environments built into this crate. Dynamics are deterministic given
/// the RNG stream; rewards are bounded above by `r_max`.
#[derive(Debug, Clone)]
pub enum ToyEnv {
    PointMass(PointMass2d),
    Pendulum(Pendulum1d),
}

impl ToyEnv {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point-mass-2d" => Ok(ToyEnv::PointMass(PointMass2d::default())),
            "pendulum-1d" => Ok(ToyEnv::Pendulum(Pendulum1d::default())),
            other => Err(Error::Config(format!(
                "unknown env {other:?} (expected point-mass-2d or pendulum-1d)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ToyEnv::PointMass(_) => "point-mass-2d",
            ToyEnv::Pendulum(_) => "pendulum-1d",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ToyEnv::PointMass(_) => 4,
            ToyEnv::Pendulum(_) => 2,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            ToyEnv::PointMass(_) => 2,
            ToyEnv::Pendulum(_) => 1,
        }
    }

    pub fn action_bounds(&self) -> Vec<(f64, f64)> {
        match self {
            ToyEnv::PointMass(e) => vec![(-e.max_accel, e.max_accel); 2],
            ToyEnv::Pendulum(e) => vec![(-e.max_torque, e.max_torque)],
        }
    }

    /// Steps per episode before truncation.
    pub fn episode_cap(&self) -> usize {
        match self {
            ToyEnv::PointMass(e) => e.episode_cap,
            ToyEnv::Pendulum(e) => e.episode_cap,
        }
    }

    /// Supremum of the reward function.
    pub fn r_max(&self) -> f64 {
        0.0
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            ToyEnv::PointMass(e) => e.reset(rng),
            ToyEnv::Pendulum(e) => e.reset(rng),
        }
    }

    /// Returns `(next_state, reward, done)`. `done` marks a true terminal
    /// state, not the episode cap.
    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        match self {
            ToyEnv::PointMass(e) => e.step(state, action),
            ToyEnv::Pendulum(e) => e.step(state, action),
        }
    }
}
