//! Round-trips of the composite checkpoints (world model, policy) through
//! the on-disk format.

use adept_core::checkpoint::{load_checkpoint, save_checkpoint};
use adept_core::diffusion::{DiffusionConfig, DiffusionWorldModel};
use adept_core::policy::GaussianPolicy;
use adept_core::rng::seeded;

#[test]
fn world_model_checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wm.ckpt");
    let mut rng = seeded(31);
    let cfg = DiffusionConfig {
        hidden_dim: 12,
        noise_depth: 2,
        reward_depth: 1,
        k_steps: 7,
        guidance_weight: 0.35,
        cond_dropout: 0.15,
        ..DiffusionConfig::new(3, 2)
    };
    let model = DiffusionWorldModel::new(&cfg, &mut rng).unwrap();
    let entries = model.to_checkpoint();
    let refs: Vec<(String, &adept_core::tensor::Tensor)> =
        entries.iter().map(|(n, t)| (n.clone(), t)).collect();
    save_checkpoint(&path, &refs).unwrap();

    let loaded_entries = load_checkpoint(&path).unwrap();
    let loaded = DiffusionWorldModel::from_checkpoint(&loaded_entries).unwrap();
    assert_eq!(loaded.state_dim, 3);
    assert_eq!(loaded.action_dim, 2);
    assert_eq!(loaded.guidance_weight, 0.35);
    assert_eq!(loaded.cond_dropout, 0.15);
    assert_eq!(loaded.k_steps(), 7);
    for (a, b) in model
        .theta_tensors()
        .iter()
        .chain(model.eta_tensors().iter())
        .zip(loaded.theta_tensors().iter().chain(loaded.eta_tensors().iter()))
    {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    // Behavioral equivalence on a probe input.
    let probe = model
        .predict_noise_guided(&[0.1, -0.2, 0.3], &[0.0, 0.1, 0.2], &[0.5, -0.5], 3)
        .unwrap();
    let probe2 = loaded
        .predict_noise_guided(&[0.1, -0.2, 0.3], &[0.0, 0.1, 0.2], &[0.5, -0.5], 3)
        .unwrap();
    assert_eq!(probe, probe2);
}

#[test]
fn policy_checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pi.ckpt");
    let mut rng = seeded(32);
    for squash in [false, true] {
        let pi = GaussianPolicy::new(4, &[(-1.0, 1.0), (0.0, 2.5)], &[8, 8], squash, &mut rng)
            .unwrap();
        let entries = pi.to_checkpoint("pi");
        let refs: Vec<(String, &adept_core::tensor::Tensor)> =
            entries.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_checkpoint(&path, &refs).unwrap();
        let loaded = GaussianPolicy::from_checkpoint(&load_checkpoint(&path).unwrap(), "pi").unwrap();
        assert_eq!(loaded.is_squashed(), squash);
        assert_eq!(loaded.bounds(), pi.bounds());
        let s = [0.3, -0.1, 0.0, 0.7];
        assert_eq!(pi.mean_action(&s).unwrap(), loaded.mean_action(&s).unwrap());
        let a = pi.mean_action(&s).unwrap();
        assert_eq!(
            pi.log_prob(&s, &a).unwrap().to_bits(),
            loaded.log_prob(&s, &a).unwrap().to_bits()
        );
    }
}
