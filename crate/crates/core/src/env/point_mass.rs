//! Planar point mass steered by bounded acceleration toward the origin.
//!
//! State is `(px, py, vx, vy)`. Reward is the negative squared distance to
//! the goal minus a small action cost, so returns are dense, bounded above
//! by zero, and reproducible in closed form. Reaching the goal region
//! terminates the episode.

use rand::Rng as _;

use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct PointMass2d {
    pub dt: f64,
    pub max_accel: f64,
    /// Acceleration applied per unit action; weak thrust makes goal-directed
    /// cruising speeds rare under random actions, so offline coverage of the
    /// fast part of the state space is thin.
    pub thrust: f64,
    pub max_speed: f64,
    pub arena: f64,
    pub goal_radius: f64,
    pub action_cost: f64,
    pub episode_cap: usize,
}

impl Default for PointMass2d {
    fn default() -> Self {
        PointMass2d {
            dt: 0.1,
            max_accel: 1.0,
            thrust: 0.3,
            max_speed: 2.0,
            arena: 2.0,
            goal_radius: 0.1,
            action_cost: 0.01,
            episode_cap: 100,
        }
    }
}

impl PointMass2d {
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
        ]
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let (px, py, vx, vy) = (state[0], state[1], state[2], state[3]);
        let ax = action[0].clamp(-self.max_accel, self.max_accel);
        let ay = action[1].clamp(-self.max_accel, self.max_accel);
        let reward = -(px * px + py * py) - self.action_cost * (ax * ax + ay * ay);

        let nvx = (vx + ax * self.dt).clamp(-self.max_speed, self.max_speed);
        let nvy = (vy + ay * self.dt).clamp(-self.max_speed, self.max_speed);
        let npx = (px + nvx * self.dt).clamp(-self.arena, self.arena);
        let npy = (py + nvy * self.dt).clamp(-self.arena, self.arena);
        let done = (npx * npx + npy * npy).sqrt() <= self.goal_radius;
        (vec![npx, npy, nvx, nvy], reward, done)
    }
}
