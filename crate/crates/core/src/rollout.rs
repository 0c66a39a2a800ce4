//! Synthetic trajectory generation against the world model, with
//! dataset-range clipping, and the replay buffer the trajectories feed.

use rand::Rng as _;

use crate::data::{Batch, Transition};
use crate::diffusion::DiffusionWorldModel;
use crate::env::OfflineDataset;
use crate::error::{Error, Result};
use crate::policy::GaussianPolicy;
use crate::rng::Rng;

/// Terminal probability above which a generated step ends the trajectory.
pub const DONE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Default)]
pub struct SyntheticTrajectory {
    /// One more state than actions; `states[t]` is where `actions[t]` was
    /// taken.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Whether the model predicted a terminal before the horizon.
    pub terminated: bool,
}

impl SyntheticTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(|t| Transition {
            state: self.states[t].clone(),
            action: self.actions[t].clone(),
            reward: self.rewards[t],
            next_state: self.states[t + 1].clone(),
            done: self.terminated && t + 1 == self.len(),
        })
    }
}

/// Generation failure carrying the transitions completed before the fault.
#[derive(Debug)]
pub struct RolloutError {
    pub prefix: SyntheticTrajectory,
    pub at_step: usize,
    pub source: Error,
}

impl std::fmt::Display for RolloutError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rollout aborted at t={} after {} transitions: {}",
            self.at_step,
            self.prefix.len(),
            self.source
        )
    }
}

impl std::error::Error for RolloutError {}

impl From<RolloutError> for Error {
    fn from(e: RolloutError) -> Error {
        Error::Generation {
            step: e.at_step,
            reason: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutConfig {
    pub horizon: usize,
    /// Clip generated states and rewards into the dataset's per-dimension
    /// range.
    pub clip: bool,
}

/// Runs one model rollout: start state drawn uniformly from non-terminal
/// dataset rows, actions from the policy, next states from the reverse
/// diffusion chain, rewards and terminals from the reward head.
pub fn rollout(
    model: &DiffusionWorldModel,
    pi: &GaussianPolicy,
    dataset: &OfflineDataset,
    cfg: RolloutConfig,
    rng: &mut Rng,
) -> std::result::Result<SyntheticTrajectory, RolloutError> {
    let mut traj = SyntheticTrajectory::default();
    let fail = |traj: SyntheticTrajectory, t: usize, e: Error| RolloutError {
        prefix: traj,
        at_step: t,
        source: e,
    };
    if cfg.horizon == 0 {
        return Err(fail(
            traj,
            0,
            Error::contract("rollout horizon must be at least 1"),
        ));
    }
    let start = match draw_start_state(dataset, rng) {
        Ok(s) => s,
        Err(e) => return Err(fail(traj, 0, e)),
    };
    traj.states.push(start);

    for t in 0..cfg.horizon {
        let s = traj.states[t].clone();
        let a = match pi.sample(&s, rng) {
            Ok(a) => a,
            Err(e) => return Err(fail(traj, t, e)),
        };
        let mut s2 = match model.sample_next_state(&s, &a, rng) {
            Ok(s2) => s2,
            Err(e) => return Err(fail(traj, t, e)),
        };
        if cfg.clip {
            clip_state(&mut s2, dataset);
        }
        let (mut r, p_done) = match model.predict_reward_done(&s, &a, &s2) {
            Ok(v) => v,
            Err(e) => return Err(fail(traj, t, e)),
        };
        if cfg.clip {
            r = r.clamp(dataset.stats.reward_min, dataset.stats.reward_max);
        }
        traj.states.push(s2);
        traj.actions.push(a);
        traj.rewards.push(r);
        if p_done > DONE_THRESHOLD {
            traj.terminated = true;
            break;
        }
    }
    Ok(traj)
}

/// Uniform draw over dataset states whose transition is not flagged done
/// (mid-episode states are fair start states; absorbing ones are not).
pub fn draw_start_state(dataset: &OfflineDataset, rng: &mut Rng) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::contract("drawing a start state from an empty dataset"));
    }
    for _ in 0..64 {
        let i = rng.gen_range(0..dataset.len());
        if !dataset.dones[i] {
            return Ok(dataset.state(i).to_vec());
        }
    }
    // Dataset is (almost) all terminal rows; fall back to a linear scan.
    match (0..dataset.len()).find(|i| !dataset.dones[*i]) {
        Some(i) => Ok(dataset.state(i).to_vec()),
        None => Err(Error::contract(
            "every dataset transition is terminal; no start states",
        )),
    }
}

fn clip_state(state: &mut [f64], dataset: &OfflineDataset) {
    for (j, v) in state.iter_mut().enumerate() {
        *v = v.clamp(dataset.stats.state_min[j], dataset.stats.state_max[j]);
    }
}

/// Fixed-capacity ring of transitions with oldest-first eviction.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    write: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            data: Vec::new(),
            write: 0,
            inserted: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.write] = t;
            self.write = (self.write + 1) % self.capacity;
        }
        self.inserted += 1;
    }

    pub fn push_trajectory(&mut self, traj: &SyntheticTrajectory) {
        for t in traj.transitions() {
            self.push(t);
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.data.iter()
    }
}

/// Uniform batch over the union of the real dataset and the replay buffer.
/// `real_fraction`, when set, instead fixes the per-draw probability of
/// sampling the real dataset.
pub fn sample_mixed(
    dataset: &OfflineDataset,
    buffer: &ReplayBuffer,
    batch_size: usize,
    real_fraction: Option<f64>,
    rng: &mut Rng,
) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let n_d = dataset.len();
    let n_b = buffer.len();
    if n_d + n_b == 0 {
        return Err(Error::contract("both data sources are empty"));
    }
    let mut batch = Batch::with_dims(dataset.state_dim, dataset.action_dim);
    for _ in 0..batch_size {
        let from_real = match real_fraction {
            Some(f) if n_d > 0 && n_b > 0 => rng.gen_range(0.0..1.0) < f,
            _ => {
                let i = rng.gen_range(0..n_d + n_b);
                i < n_d
            }
        };
        if from_real {
            let i = rng.gen_range(0..n_d);
            batch.push(&dataset.transition(i))?;
        } else {
            let i = rng.gen_range(0..n_b);
            batch.push(buffer.get(i))?;
        }
    }
    Ok(batch)
}

/// Writes one trajectory as CSV rows `(episode_id, t, s..., a..., r, done)`.
pub fn write_trajectory_csv<W: std::io::Write>(
    w: &mut W,
    episode_id: u64,
    traj: &SyntheticTrajectory,
) -> Result<()> {
    for (t, tr) in traj.transitions().enumerate() {
        write!(w, "{episode_id},{t}")?;
        for v in &tr.state {
            write!(w, ",{v}")?;
        }
        for v in &tr.action {
            write!(w, ",{v}")?;
        }
        writeln!(w, ",{},{}", tr.reward, if tr.done { 1 } else { 0 })?;
    }
    Ok(())
}

/// Header matching [`write_trajectory_csv`].
pub fn trajectory_csv_header(state_dim: usize, action_dim: usize) -> String {
    let mut cols = vec!["episode_id".to_string(), "t".to_string()];
    cols.extend((0..state_dim).map(|j| format!("s{j}")));
    cols.extend((0..action_dim).map(|j| format!("a{j}")));
    cols.push("r".to_string());
    cols.push("done".to_string());
    cols.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{DiffusionConfig, TIME_EMBED_DIM};
    use crate::env::Tier;
    use crate::nn::{Activation, Layer, MlpParams};
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    fn constant_net(in_dim: usize, out: &[f64]) -> MlpParams {
        let layer = Layer {
            weight: Tensor::new(vec![in_dim, out.len()], vec![0.0; in_dim * out.len()]).unwrap(),
            bias: Tensor::new(vec![1, out.len()], out.to_vec()).unwrap(),
            activation: Activation::Identity,
        };
        MlpParams::from_layers(vec![layer]).unwrap()
    }

    fn test_policy() -> GaussianPolicy {
        let net = constant_net(2, &[0.0, 0.0, -5.0, -5.0]); // mean 0, tiny std
        GaussianPolicy::from_parts(net, false, &[(-1.0, 1.0), (-1.0, 1.0)]).unwrap()
    }

    /// Model with zero noise prediction and a fixed reward head output.
    fn rigged_model(reward: f64, terminal_logit: f64) -> DiffusionWorldModel {
        let mut rng = seeded(0);
        let cfg = DiffusionConfig {
            hidden_dim: 4,
            noise_depth: 1,
            reward_depth: 1,
            ..DiffusionConfig::new(2, 2)
        };
        let mut model = DiffusionWorldModel::new(&cfg, &mut rng).unwrap();
        let noise_in = 2 + 4 + TIME_EMBED_DIM;
        model.noise_net = constant_net(noise_in, &[0.0, 0.0]);
        model.reward_net = constant_net(2 + 2 + 2, &[reward, terminal_logit]);
        model
    }

    fn tiny_dataset() -> OfflineDataset {
        let transitions: Vec<Transition> = (0..8)
            .map(|i| Transition {
                state: vec![0.1 * i as f64 - 0.4, 0.05 * i as f64],
                action: vec![0.0, 0.0],
                reward: -(i as f64) * 0.1,
                next_state: vec![0.1 * i as f64 - 0.35, 0.05 * i as f64 + 0.01],
                done: i == 7,
            })
            .collect();
        OfflineDataset::from_transitions("point-mass-2d", "t", Tier::Random, 2, 2, &transitions)
            .unwrap()
    }

    #[test]
    fn immediate_terminal_gives_one_transition() {
        let model = rigged_model(0.0, 50.0); // terminal prob ~1
        let ds = tiny_dataset();
        let traj = rollout(
            &model,
            &test_policy(),
            &ds,
            RolloutConfig {
                horizon: 10,
                clip: true,
            },
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(traj.len(), 1);
        assert!(traj.terminated);
        assert_eq!(traj.states.len(), 2);
    }

    #[test]
    fn no_terminal_hits_horizon() {
        let model = rigged_model(0.5, -50.0); // terminal prob ~0
        let ds = tiny_dataset();
        let traj = rollout(
            &model,
            &test_policy(),
            &ds,
            RolloutConfig {
                horizon: 10,
                clip: true,
            },
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(traj.len(), 10);
        assert!(!traj.terminated);
    }

    #[test]
    fn clipping_contains_states_and_rewards() {
        let model = rigged_model(99.0, -50.0); // reward far above dataset max
        let ds = tiny_dataset();
        let traj = rollout(
            &model,
            &test_policy(),
            &ds,
            RolloutConfig {
                horizon: 10,
                clip: true,
            },
            &mut seeded(9),
        )
        .unwrap();
        for s in &traj.states[1..] {
            for (j, v) in s.iter().enumerate() {
                assert!(*v >= ds.stats.state_min[j] && *v <= ds.stats.state_max[j]);
            }
        }
        for r in &traj.rewards {
            assert!(*r <= ds.stats.reward_max && *r >= ds.stats.reward_min);
            assert_eq!(*r, ds.stats.reward_max); // 99 clamps to the max
        }
    }

    #[test]
    fn clip_disabled_matches_raw_sampler() {
        // Same rng stream with clipping off must reproduce the raw chain
        // outputs exactly.
        let model = rigged_model(0.0, -50.0);
        let ds = tiny_dataset();
        let traj = rollout(
            &model,
            &test_policy(),
            &ds,
            RolloutConfig {
                horizon: 3,
                clip: false,
            },
            &mut seeded(4),
        )
        .unwrap();

        let mut rng = seeded(4);
        let start = draw_start_state(&ds, &mut rng).unwrap();
        assert_eq!(traj.states[0], start);
        let mut s = start;
        for t in 0..3 {
            let a = test_policy().sample(&s, &mut rng).unwrap();
            let s2 = model.sample_next_state(&s, &a, &mut rng).unwrap();
            assert_eq!(traj.actions[t], a);
            assert_eq!(traj.states[t + 1], s2);
            s = s2;
        }
    }

    #[test]
    fn start_states_skip_terminal_rows() {
        let ds = tiny_dataset(); // row 7 is terminal
        let mut rng = seeded(2);
        for _ in 0..100 {
            let s = draw_start_state(&ds, &mut rng).unwrap();
            assert_ne!(s, ds.state(7).to_vec());
        }
    }

    #[test]
    fn generation_failure_carries_prefix() {
        let mut model = rigged_model(0.0, -50.0);
        // Break the noise net so the chain dies immediately.
        model.noise_net = constant_net(2 + 4 + TIME_EMBED_DIM, &[f64::NAN, f64::NAN]);
        let ds = tiny_dataset();
        let err = rollout(
            &model,
            &test_policy(),
            &ds,
            RolloutConfig {
                horizon: 5,
                clip: true,
            },
            &mut seeded(3),
        )
        .unwrap_err();
        assert_eq!(err.at_step, 0);
        assert_eq!(err.prefix.len(), 0);
        assert_eq!(err.prefix.states.len(), 1); // start state retained
        assert!(matches!(err.source, Error::Generation { .. }));
    }

    #[test]
    fn ring_buffer_evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3);
        let mk = |r: f64| Transition {
            state: vec![0.0],
            action: vec![0.0],
            reward: r,
            next_state: vec![0.0],
            done: false,
        };
        for r in 0..3 {
            buf.push(mk(r as f64));
        }
        assert_eq!(buf.len(), 3);
        buf.push(mk(3.0)); // evicts reward 0
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert!(!rewards.contains(&0.0));
        assert!(rewards.contains(&3.0));
        buf.push(mk(4.0)); // evicts reward 1
        let rewards: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        assert!(!rewards.contains(&1.0));
        assert_eq!(buf.inserted(), 5);
    }

    #[test]
    fn empty_buffer_samples_only_real_data() {
        let ds = tiny_dataset();
        let buf = ReplayBuffer::new(16);
        let batch = sample_mixed(&ds, &buf, 32, None, &mut seeded(5)).unwrap();
        assert_eq!(batch.len, 32);
        // All rewards must come from the dataset's reward set.
        for r in &batch.rewards {
            assert!(ds.rewards.iter().any(|dr| dr == r));
        }
    }

    #[test]
    fn both_sources_empty_is_contract_error() {
        let ds = tiny_dataset();
        let empty = OfflineDataset {
            states: vec![],
            actions: vec![],
            rewards: vec![],
            next_states: vec![],
            dones: vec![],
            ..ds
        };
        let buf = ReplayBuffer::new(4);
        assert!(matches!(
            sample_mixed(&empty, &buf, 8, None, &mut seeded(0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mixing_fraction_matches_uniform_union() {
        // 100 real + 300 synthetic: expected real fraction 0.25 +- 0.02
        // over 1e5 draws.
        let transitions: Vec<Transition> = (0..100)
            .map(|_| Transition {
                state: vec![1.0, 1.0],
                action: vec![0.0, 0.0],
                reward: 1.0, // marker for "real"
                next_state: vec![1.0, 1.0],
                done: false,
            })
            .collect();
        let ds = OfflineDataset::from_transitions(
            "point-mass-2d",
            "t",
            Tier::Random,
            2,
            2,
            &transitions,
        )
        .unwrap();
        let mut buf = ReplayBuffer::new(1000);
        for _ in 0..300 {
            buf.push(Transition {
                state: vec![0.0, 0.0],
                action: vec![0.0, 0.0],
                reward: 0.0, // marker for "synthetic"
                next_state: vec![0.0, 0.0],
                done: false,
            });
        }
        let mut rng = seeded(12);
        let mut real = 0usize;
        let total = 100_000usize;
        let mut drawn = 0usize;
        while drawn < total {
            let b = sample_mixed(&ds, &buf, 1000, None, &mut rng).unwrap();
            real += b.rewards.iter().filter(|r| **r == 1.0).count();
            drawn += 1000;
        }
        let frac = real as f64 / total as f64;
        assert!((frac - 0.25).abs() < 0.02, "real fraction {frac}");
    }

    #[test]
    fn csv_dump_has_expected_shape() {
        let model = rigged_model(0.25, -50.0);
        let ds = tiny_dataset();
        let traj = rollout(
            &model,
            &test_policy(),
            &ds,
            RolloutConfig {
                horizon: 4,
                clip: true,
            },
            &mut seeded(6),
        )
        .unwrap();
        let mut out = Vec::new();
        write_trajectory_csv(&mut out, 7, &traj).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), traj.len());
        let header = trajectory_csv_header(2, 2);
        assert_eq!(header, "episode_id,t,s0,s1,a0,a1,r,done");
        for line in lines {
            assert_eq!(line.split(',').count(), header.split(',').count());
            assert!(line.starts_with("7,"));
        }
    }
}
