//! Torque-limited pendulum swing-up with wrapped angle.
//!
//! State is `(theta, theta_dot)` with `theta = 0` upright and wrapped into
//! `(-pi, pi]`. Episodes never terminate; the cap truncates them.

use rand::Rng as _;

use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Pendulum1d {
    pub dt: f64,
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub episode_cap: usize,
}

impl Default for Pendulum1d {
    fn default() -> Self {
        Pendulum1d {
            dt: 0.05,
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            max_torque: 2.0,
            max_speed: 8.0,
            episode_cap: 100,
        }
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    }
    t
}

impl Pendulum1d {
    pub fn reset(&self, rng: &mut Rng) -> Vec<f64> {
        vec![
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-1.0..1.0),
        ]
    }

    pub fn step(&self, state: &[f64], action: &[f64]) -> (Vec<f64>, f64, bool) {
        let theta = state[0];
        let theta_dot = state[1];
        let u = action[0].clamp(-self.max_torque, self.max_torque);
        let reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * u * u);

        let accel = 3.0 * self.gravity / (2.0 * self.length) * theta.sin()
            + 3.0 / (self.mass * self.length * self.length) * u;
        let new_dot = (theta_dot + accel * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_theta = wrap_angle(theta + new_dot * self.dt);
        (vec![new_theta, new_dot], reward, false)
    }
}
