//! Offline transition datasets: per-dimension statistics, normalization,
//! uniform sampling, and the on-disk format.
//!
//! File layout (all integers and floats little-endian):
//! magic `ADEPT-DS\0`, version byte, env-name string (u16 length + utf-8),
//! source-policy descriptor string, state dim (u8), action dim (u8), tier
//! byte, transition count (u64), then column-major f64 arrays for states,
//! actions, rewards, next states, and dones (0/1), then the stats block,
//! a has-normalizer byte, and the raw-space stats when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::data::{Batch, Transition};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DS_MAGIC: &[u8] = b"ADEPT-DS\0";
pub const DS_VERSION: u8 = 1;

/// Floor applied to per-dimension standard deviations so constant columns
/// stay invertible.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Random,
    Medium,
    Mixed,
}

impl Tier {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "random" => Ok(Tier::Random),
            "medium" => Ok(Tier::Medium),
            "mixed" => Ok(Tier::Mixed),
            other => Err(Error::Config(format!(
                "unknown tier {other:?} (expected random, medium, or mixed)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Tier::Random => "random",
            Tier::Medium => "medium",
            Tier::Mixed => "mixed",
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Tier::Random => 0,
            Tier::Medium => 1,
            Tier::Mixed => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Tier::Random),
            1 => Ok(Tier::Medium),
            2 => Ok(Tier::Mixed),
            other => Err(Error::Truncated(format!("invalid tier byte {other}"))),
        }
    }
}

/// Per-dimension state statistics plus reward range. Means and standard
/// deviations are taken over the state column (population std, floored);
/// minima and maxima cover both the state and next-state columns so clipping
/// bounds contain every stored state.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_min: f64,
    pub reward_max: f64,
}

impl NormStats {
    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    /// `(x - mean) / std` per dimension.
    pub fn normalize_state(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.state_mean.iter().zip(&self.state_std))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    /// Inverse of [`NormStats::normalize_state`].
    pub fn denormalize_state(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.state_mean.iter().zip(&self.state_std))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    /// Named tensors under `prefix` for embedding in checkpoints.
    pub fn to_tensors(&self, prefix: &str) -> Vec<(String, crate::tensor::Tensor)> {
        let d = self.state_dim();
        let t = |v: &[f64]| crate::tensor::Tensor::new(vec![v.len()], v.to_vec()).unwrap();
        vec![
            (format!("{prefix}/state_mean"), t(&self.state_mean)),
            (format!("{prefix}/state_std"), t(&self.state_std)),
            (format!("{prefix}/state_min"), t(&self.state_min)),
            (format!("{prefix}/state_max"), t(&self.state_max)),
            (
                format!("{prefix}/reward"),
                crate::tensor::Tensor::new(
                    vec![4],
                    vec![
                        self.reward_mean,
                        self.reward_std,
                        self.reward_min,
                        self.reward_max,
                    ],
                )
                .unwrap(),
            ),
        ]
        .into_iter()
        .map(|(n, tensor)| (n, tensor))
        .chain(std::iter::once((
            format!("{prefix}/dim"),
            crate::tensor::Tensor::scalar(d as f64),
        )))
        .collect()
    }

    pub fn from_tensors(
        entries: &[(String, crate::tensor::Tensor)],
        prefix: &str,
    ) -> Result<Self> {
        let get = |name: &str| -> Result<Vec<f64>> {
            Ok(crate::checkpoint::find_tensor(entries, &format!("{prefix}/{name}"))?
                .data()
                .to_vec())
        };
        let reward = get("reward")?;
        if reward.len() != 4 {
            return Err(Error::Truncated(format!(
                "{prefix}/reward has wrong length"
            )));
        }
        Ok(NormStats {
            state_mean: get("state_mean")?,
            state_std: get("state_std")?,
            state_min: get("state_min")?,
            state_max: get("state_max")?,
            reward_mean: reward[0],
            reward_std: reward[1],
            reward_min: reward[2],
            reward_max: reward[3],
        })
    }
}

#[derive(Debug, Clone)]
pub struct OfflineDataset {
    pub env_name: String,
    /// Human-readable description of the policy that produced the data.
    pub source: String,
    pub tier: Tier,
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
    /// Statistics of the stored payload.
    pub stats: NormStats,
    /// Raw-space statistics when the payload has been normalized.
    pub normalizer: Option<NormStats>,
}

impl OfflineDataset {
    pub fn from_transitions(
        env_name: &str,
        source: &str,
        tier: Tier,
        state_dim: usize,
        action_dim: usize,
        transitions: &[Transition],
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::contract("dataset needs at least one transition"));
        }
        let n = transitions.len();
        let mut states = Vec::with_capacity(n * state_dim);
        let mut actions = Vec::with_capacity(n * action_dim);
        let mut rewards = Vec::with_capacity(n);
        let mut next_states = Vec::with_capacity(n * state_dim);
        let mut dones = Vec::with_capacity(n);
        for t in transitions {
            if t.state.len() != state_dim
                || t.next_state.len() != state_dim
                || t.action.len() != action_dim
            {
                return Err(Error::shape(
                    "dataset transition",
                    &[state_dim, action_dim],
                    &[t.state.len(), t.action.len()],
                ));
            }
            states.extend_from_slice(&t.state);
            actions.extend_from_slice(&t.action);
            rewards.push(t.reward);
            next_states.extend_from_slice(&t.next_state);
            dones.push(t.done);
        }
        let stats = compute_stats(&states, &next_states, &rewards, state_dim);
        Ok(OfflineDataset {
            env_name: env_name.to_string(),
            source: source.to_string(),
            tier,
            state_dim,
            action_dim,
            states,
            actions,
            rewards,
            next_states,
            dones,
            stats,
            normalizer: None,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            state: self.state(i).to_vec(),
            action: self.action(i).to_vec(),
            reward: self.rewards[i],
            next_state: self.next_state(i).to_vec(),
            done: self.dones[i],
        }
    }

    /// Recomputes payload statistics from scratch (consistency checks).
    pub fn recompute_stats(&self) -> NormStats {
        compute_stats(&self.states, &self.next_states, &self.rewards, self.state_dim)
    }

    /// Collects the given rows into a batch.
    pub fn gather(&self, idx: &[usize]) -> Batch {
        let mut b = Batch::with_dims(self.state_dim, self.action_dim);
        for &i in idx {
            b.states.extend_from_slice(self.state(i));
            b.actions.extend_from_slice(self.action(i));
            b.rewards.push(self.rewards[i]);
            b.next_states.extend_from_slice(self.next_state(i));
            b.dones.push(if self.dones[i] { 1.0 } else { 0.0 });
            b.len += 1;
        }
        b
    }

    /// Uniform sample of `n` rows with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut Rng) -> Result<Batch> {
        if self.is_empty() {
            return Err(Error::contract("sampling from an empty dataset"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..self.len())).collect();
        Ok(self.gather(&idx))
    }
}

fn compute_stats(
    states: &[f64],
    next_states: &[f64],
    rewards: &[f64],
    state_dim: usize,
) -> NormStats {
    let n = rewards.len();
    let mut mean = vec![0.0; state_dim];
    for row in states.chunks_exact(state_dim) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; state_dim];
    for row in states.chunks_exact(state_dim) {
        for (v, (x, m)) in var.iter_mut().zip(row.iter().zip(&mean)) {
            let d = x - m;
            *v += d * d;
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(STD_FLOOR))
        .collect();

    let mut min = vec![f64::INFINITY; state_dim];
    let mut max = vec![f64::NEG_INFINITY; state_dim];
    for col in [states, next_states] {
        for row in col.chunks_exact(state_dim) {
            for j in 0..state_dim {
                min[j] = min[j].min(row[j]);
                max[j] = max[j].max(row[j]);
            }
        }
    }

    let r_mean = rewards.iter().sum::<f64>() / n as f64;
    let r_var = rewards.iter().map(|r| (r - r_mean) * (r - r_mean)).sum::<f64>() / n as f64;
    let r_min = rewards.iter().cloned().fold(f64::INFINITY, f64::min);
    let r_max = rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    NormStats {
        state_mean: mean,
        state_std: std,
        state_min: min,
        state_max: max,
        reward_mean: r_mean,
        reward_std: r_var.sqrt(),
        reward_min: r_min,
        reward_max: r_max,
    }
}

/// Maps every state column through `(x - mean) / std` using the payload's
/// own statistics, recomputes stats, and remembers the raw-space transform.
/// Rewards keep their scale; only their range is recorded for clipping.
pub fn normalize(dataset: &OfflineDataset) -> Result<(OfflineDataset, NormStats)> {
    if dataset.is_empty() {
        return Err(Error::contract("normalizing an empty dataset"));
    }
    let raw = dataset.stats.clone();
    let map = |col: &[f64]| -> Vec<f64> {
        col.chunks_exact(dataset.state_dim)
            .flat_map(|row| raw.normalize_state(row))
            .collect()
    };
    let states = map(&dataset.states);
    let next_states = map(&dataset.next_states);
    let stats = compute_stats(&states, &next_states, &dataset.rewards, dataset.state_dim);
    Ok((
        OfflineDataset {
            env_name: dataset.env_name.clone(),
            source: dataset.source.clone(),
            tier: dataset.tier,
            state_dim: dataset.state_dim,
            action_dim: dataset.action_dim,
            states,
            actions: dataset.actions.clone(),
            rewards: dataset.rewards.clone(),
            next_states,
            dones: dataset.dones.clone(),
            stats,
            normalizer: Some(dataset.normalizer.clone().unwrap_or_else(|| raw.clone())),
        },
        raw,
    ))
}

pub fn save_dataset(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DS_MAGIC)?;
    w.write_all(&[DS_VERSION])?;
    write_string(&mut w, &dataset.env_name)?;
    write_string(&mut w, &dataset.source)?;
    w.write_all(&[dataset.state_dim as u8, dataset.action_dim as u8])?;
    w.write_all(&[dataset.tier.to_byte()])?;
    w.write_all(&(dataset.len() as u64).to_le_bytes())?;
    write_column_major(&mut w, &dataset.states, dataset.state_dim)?;
    write_column_major(&mut w, &dataset.actions, dataset.action_dim)?;
    for r in &dataset.rewards {
        w.write_all(&r.to_le_bytes())?;
    }
    write_column_major(&mut w, &dataset.next_states, dataset.state_dim)?;
    for d in &dataset.dones {
        w.write_all(&(if *d { 1.0f64 } else { 0.0f64 }).to_le_bytes())?;
    }
    write_stats(&mut w, &dataset.stats)?;
    match &dataset.normalizer {
        Some(norm) => {
            w.write_all(&[1])?;
            write_stats(&mut w, norm)?;
        }
        None => w.write_all(&[0])?,
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 9];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if magic != DS_MAGIC {
        return Err(Error::BadMagic {
            expected: "ADEPT-DS\\0",
        });
    }
    let version = read_u8(&mut r, "version byte")?;
    if version != DS_VERSION {
        return Err(Error::Version {
            expected: DS_VERSION,
            found: version,
        });
    }
    let env_name = read_string(&mut r, "env name")?;
    let source = read_string(&mut r, "source descriptor")?;
    let state_dim = read_u8(&mut r, "state dim")? as usize;
    let action_dim = read_u8(&mut r, "action dim")? as usize;
    let tier = Tier::from_byte(read_u8(&mut r, "tier byte")?)?;
    let mut nbuf = [0u8; 8];
    read_exact_or(&mut r, &mut nbuf, "transition count")?;
    let n = u64::from_le_bytes(nbuf) as usize;
    if state_dim == 0 || action_dim == 0 || n == 0 {
        return Err(Error::Truncated("empty dims or zero transitions".into()));
    }
    let states = read_column_major(&mut r, n, state_dim, "states")?;
    let actions = read_column_major(&mut r, n, action_dim, "actions")?;
    let rewards = read_floats(&mut r, n, "rewards")?;
    let next_states = read_column_major(&mut r, n, state_dim, "next states")?;
    let done_floats = read_floats(&mut r, n, "dones")?;
    let dones = done_floats.iter().map(|d| *d != 0.0).collect();
    let stats = read_stats(&mut r, state_dim)?;
    let normalizer = match read_u8(&mut r, "normalizer flag")? {
        0 => None,
        1 => Some(read_stats(&mut r, state_dim)?),
        other => {
            return Err(Error::Truncated(format!(
                "invalid normalizer flag {other}"
            )))
        }
    };
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::TrailingData("dataset file".into()));
    }
    Ok(OfflineDataset {
        env_name,
        source,
        tier,
        state_dim,
        action_dim,
        states,
        actions,
        rewards,
        next_states,
        dones,
        stats,
        normalizer,
    })
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    if bytes.len() > u16::MAX as usize {
        return Err(Error::contract("string too long for dataset header"));
    }
    w.write_all(&(bytes.len() as u16).to_le_bytes())?;
    w.write_all(bytes)?;
    Ok(())
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let mut len = [0u8; 2];
    read_exact_or(r, &mut len, what)?;
    let mut bytes = vec![0u8; u16::from_le_bytes(len) as usize];
    read_exact_or(r, &mut bytes, what)?;
    String::from_utf8(bytes).map_err(|_| Error::Truncated(format!("{what} is not utf-8")))
}

fn write_column_major<W: Write>(w: &mut W, rows: &[f64], dim: usize) -> Result<()> {
    let n = rows.len() / dim;
    for j in 0..dim {
        for i in 0..n {
            w.write_all(&rows[i * dim + j].to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_column_major<R: Read>(r: &mut R, n: usize, dim: usize, what: &str) -> Result<Vec<f64>> {
    let flat = read_floats(r, n * dim, what)?;
    let mut rows = vec![0.0; n * dim];
    for j in 0..dim {
        for i in 0..n {
            rows[i * dim + j] = flat[j * n + i];
        }
    }
    Ok(rows)
}

fn read_floats<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    read_exact_or(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn write_stats<W: Write>(w: &mut W, s: &NormStats) -> Result<()> {
    for col in [&s.state_mean, &s.state_std, &s.state_min, &s.state_max] {
        for v in col.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in [s.reward_mean, s.reward_std, s.reward_min, s.reward_max] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_stats<R: Read>(r: &mut R, state_dim: usize) -> Result<NormStats> {
    let state_mean = read_floats(r, state_dim, "stats")?;
    let state_std = read_floats(r, state_dim, "stats")?;
    let state_min = read_floats(r, state_dim, "stats")?;
    let state_max = read_floats(r, state_dim, "stats")?;
    let scalars = read_floats(r, 4, "stats")?;
    Ok(NormStats {
        state_mean,
        state_std,
        state_min,
        state_max,
        reward_mean: scalars[0],
        reward_std: scalars[1],
        reward_min: scalars[2],
        reward_max: scalars[3],
    })
}

fn read_u8<R: Read>(r: &mut R, what: &str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact_or(r, &mut b, what)?;
    Ok(b[0])
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("file ended inside {what}"))
        } else {
            Error::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> OfflineDataset {
        let transitions: Vec<Transition> = (0..3)
            .map(|i| Transition {
                state: vec![1.0 + i as f64, -1.0],
                action: vec![0.1 * i as f64],
                reward: i as f64,
                next_state: vec![2.0 + i as f64, -1.0],
                done: i == 2,
            })
            .collect();
        OfflineDataset::from_transitions("point-mass-2d", "test", Tier::Random, 2, 1, &transitions)
            .unwrap()
    }

    #[test]
    fn hand_computed_normalization() {
        // Column [1, 2, 3]: mean 2, population std sqrt(2/3) ~ 0.8165.
        let ds = toy_dataset();
        assert!((ds.stats.state_mean[0] - 2.0).abs() < 1e-15);
        let expected_std = (2.0f64 / 3.0).sqrt();
        assert!((ds.stats.state_std[0] - expected_std).abs() < 1e-12);
        let (norm, _) = normalize(&ds).unwrap();
        let col: Vec<f64> = (0..3).map(|i| norm.state(i)[0]).collect();
        assert!((col[0] + 1.224744871391589).abs() < 1e-12);
        assert!(col[1].abs() < 1e-12);
        assert!((col[2] - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn normalized_payload_has_zero_mean_unit_std() {
        let ds = toy_dataset();
        let (norm, _) = normalize(&ds).unwrap();
        assert!(norm.stats.state_mean[0].abs() < 1e-12);
        assert!((norm.stats.state_std[0] - 1.0).abs() < 1e-12);
        // Constant second dimension hits the std floor in raw space and is
        // mapped to zero mean.
        assert!(norm.stats.state_mean[1].abs() < 1e-9);
    }

    #[test]
    fn normalize_is_idempotent() {
        let ds = toy_dataset();
        let (once, _) = normalize(&ds).unwrap();
        let (twice, _) = normalize(&once).unwrap();
        for (a, b) in once.states.iter().zip(&twice.states) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn denormalize_round_trips() {
        let ds = toy_dataset();
        let (_, raw) = normalize(&ds).unwrap();
        for i in 0..ds.len() {
            let x = ds.state(i);
            let n = raw.normalize_state(x);
            let back = raw.denormalize_state(&n);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stats_match_recomputation() {
        let ds = toy_dataset();
        let again = ds.recompute_stats();
        assert_eq!(ds.stats, again);
    }

    #[test]
    fn single_transition_stats_degenerate() {
        let t = Transition {
            state: vec![0.5],
            action: vec![0.0],
            reward: 2.5,
            next_state: vec![0.6],
            done: false,
        };
        let ds =
            OfflineDataset::from_transitions("pendulum-1d", "one", Tier::Random, 1, 1, &[t])
                .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.stats.state_mean[0], 0.5);
        assert_eq!(ds.stats.state_std[0], STD_FLOOR);
        assert_eq!(ds.stats.state_min[0], 0.5);
        assert_eq!(ds.stats.state_max[0], 0.6);
        assert_eq!(ds.stats.reward_mean, 2.5);
    }

    #[test]
    fn empty_dataset_rejected() {
        let err = OfflineDataset::from_transitions("x", "y", Tier::Random, 1, 1, &[]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn save_load_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.ads");
        let ds = {
            let mut d = toy_dataset();
            d.rewards[0] = 0.1 + 0.2; // not exactly representable in decimal
            d
        };
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.env_name, ds.env_name);
        assert_eq!(loaded.source, ds.source);
        assert_eq!(loaded.tier, ds.tier);
        assert_eq!(loaded.dones, ds.dones);
        for (a, b) in [
            (&loaded.states, &ds.states),
            (&loaded.actions, &ds.actions),
            (&loaded.rewards, &ds.rewards),
            (&loaded.next_states, &ds.next_states),
        ] {
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(loaded.stats, ds.stats);
        assert_eq!(loaded.normalizer, ds.normalizer);
    }

    #[test]
    fn normalized_dataset_roundtrips_with_normalizer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("norm.ads");
        let (norm, raw) = normalize(&toy_dataset()).unwrap();
        save_dataset(&norm, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded.normalizer.as_ref().unwrap(), &raw);
    }

    #[test]
    fn truncated_file_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.ads");
        save_dataset(&toy_dataset(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Truncated(_))));
    }

    #[test]
    fn bad_magic_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ads");
        std::fs::write(&path, b"WRONGMAG\0 and then some").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("ADEPT-DS"));
    }

    #[test]
    fn version_mismatch_is_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ver.ads");
        let mut bytes = DS_MAGIC.to_vec();
        bytes.push(7);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trail.ads");
        save_dataset(&toy_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::TrailingData(_))));
    }

    #[test]
    fn gather_and_sample() {
        let ds = toy_dataset();
        let b = ds.gather(&[2, 0]);
        assert_eq!(b.len, 2);
        assert_eq!(b.rewards, vec![2.0, 0.0]);
        assert_eq!(b.dones, vec![1.0, 0.0]);
        let mut rng = crate::rng::seeded(0);
        let s = ds.sample_batch(10, &mut rng).unwrap();
        assert_eq!(s.len, 10);
    }
}
