//! Representation learning: the environment, policy, and cell encoders, the
//! contrastive and information-refinement losses, and the training loops
//! that produce the frozen embedding spaces every later stage consumes.
//!
//! Conventions used throughout:
//! - an *environment context* is a set of transitions, each entered as the
//!   flat vector `s ⊕ a ⊕ r ⊕ s′`;
//! - a *behavior sample* is a set of `(s, a)` pairs, entered as `s ⊕ a`;
//! - embeddings that must not carry gradients (momentum targets, detached
//!   cell embeddings, frozen heads) enter tapes as constants.

pub mod encoder;
pub mod loss;
pub mod train;

pub use encoder::{Bilinear, DeepSet, DeepSetBinding, MiHead, MiHeadBinding, LOGVAR_MAX, LOGVAR_MIN};
pub use train::{train_contrastive, train_dynamics, LossRow, ReprConfig, TrainedEncoders};

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint::{self, Tensor};
use crate::nn::{Activation, Mlp};
use crate::store::Transition;

/// Flat encoder input for one stored transition.
pub fn env_input(t: &Transition) -> Vec<f64> {
    let mut x = Vec::with_capacity(t.s.len() + t.a.len() + 1 + t.s_next.len());
    x.extend_from_slice(&t.s);
    x.extend_from_slice(&t.a);
    x.push(t.r);
    x.extend_from_slice(&t.s_next);
    x
}

/// Flat encoder input for one (state, action) pair.
pub fn behavior_input(s: &[f64], a: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(s.len() + a.len());
    x.extend_from_slice(s);
    x.extend_from_slice(a);
    x
}

/// The trained encoders the downstream stages use: the environment and
/// policy set encoders plus the action decoder that turns a policy embedding
/// back into an executable controller.
#[derive(Clone, Debug)]
pub struct EncoderBundle {
    pub env: DeepSet,
    pub policy: DeepSet,
    pub decoder: Mlp,
}

impl EncoderBundle {
    /// Shared embedding width.
    pub fn d(&self) -> usize {
        self.env.out_dim()
    }

    pub fn embed_env(&self, tuples: &[Transition]) -> Vec<f64> {
        let inputs: Vec<Vec<f64>> = tuples.iter().map(env_input).collect();
        self.env.embed(&inputs)
    }

    pub fn embed_policy(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
        let inputs: Vec<Vec<f64>> = pairs.iter().map(|(s, a)| behavior_input(s, a)).collect();
        self.policy.embed(&inputs)
    }

    /// Raw decoded action (callers clip to the environment's bound).
    pub fn decode_action(&self, s: &[f64], z_pi: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(s.len() + z_pi.len());
        x.extend_from_slice(s);
        x.extend_from_slice(z_pi);
        self.decoder.forward(&x)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        tensors.extend(mlp_tensors("env.feature", &self.env.feature));
        tensors.extend(mlp_tensors("env.project", &self.env.project));
        tensors.extend(mlp_tensors("policy.feature", &self.policy.feature));
        tensors.extend(mlp_tensors("policy.project", &self.policy.project));
        tensors.extend(mlp_tensors("decoder", &self.decoder));
        checkpoint::save(base, &tensors)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let tensors = checkpoint::load(base)?;
        Ok(EncoderBundle {
            env: DeepSet {
                feature: mlp_from_tensors(&tensors, "env.feature")?,
                project: mlp_from_tensors(&tensors, "env.project")?,
            },
            policy: DeepSet {
                feature: mlp_from_tensors(&tensors, "policy.feature")?,
                project: mlp_from_tensors(&tensors, "policy.project")?,
            },
            decoder: mlp_from_tensors(&tensors, "decoder")?,
        })
    }
}

/// Serializes an MLP as two tensors: its layer sizes and its flat parameters.
/// The pair makes checkpoints self-describing.
pub(crate) fn mlp_tensors(name: &str, mlp: &Mlp) -> Vec<Tensor> {
    let sizes: Vec<f64> = mlp.sizes().iter().map(|&s| s as f64).collect();
    vec![
        Tensor::new(format!("{name}.sizes"), vec![sizes.len()], sizes),
        Tensor::new(name, vec![mlp.n_params()], mlp.params.clone()),
    ]
}

/// Rebuilds an MLP from the tensor pair written by [`mlp_tensors`]. All nets
/// in this crate use tanh hidden activations.
pub(crate) fn mlp_from_tensors(tensors: &[Tensor], name: &str) -> Result<Mlp> {
    let find = |n: &str| -> Result<&Tensor> {
        tensors
            .iter()
            .find(|t| t.name == n)
            .ok_or_else(|| Error::contract(format!("checkpoint is missing tensor {n:?}")))
    };
    let sizes_t = find(&format!("{name}.sizes"))?;
    let sizes: Vec<usize> = sizes_t.data.iter().map(|&x| x as usize).collect();
    let params_t = find(name)?;
    let mut rng = crate::rng::stream(0, "checkpoint-shape", &[]);
    let mut mlp = Mlp::new(&sizes, Activation::Tanh, &mut rng)?;
    if params_t.data.len() != mlp.n_params() {
        return Err(Error::contract(format!(
            "tensor {name:?} holds {} parameters, architecture {sizes:?} needs {}",
            params_t.data.len(),
            mlp.n_params()
        )));
    }
    mlp.params.copy_from_slice(&params_t.data);
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvFamily, FamilyConfig, FamilyId};
    use crate::rng::stream;
    use crate::store::{ExperienceStore, StoreMeta, Trajectory, View};
    use crate::collect::{collect_cell, RandomPolicy};

    /// A small real store: 3 MassDamp variations × 2 synthetic "policies"
    /// (random streams with different action bounds, so columns differ).
    pub(crate) fn tiny_store(seed: u64) -> ExperienceStore {
        let fam = EnvFamily::new(FamilyConfig::defaults(FamilyId::MassDamp)).unwrap();
        let meta = StoreMeta {
            family: FamilyId::MassDamp,
            n_envs: 3,
            n_policies: 2,
            state_dim: 2,
            action_dim: 1,
            horizon: fam.config().horizon,
            discount: fam.config().discount,
            episodes_per_cell: 2,
            seed,
            train_variations: (0..3).map(|i| fam.train_env(i).variation).collect(),
        };
        let mut store = ExperienceStore::new(meta).unwrap();
        for i in 0..3 {
            let env = fam.train_env(i);
            for k in 0..2 {
                let policy = RandomPolicy { action_dim: 1, action_bound: 0.3 + 0.7 * k as f64 };
                let mut rng = stream(seed, "tiny-store", &[i as u64, k as u64]);
                let mut steps = 0;
                let trajs: Vec<Trajectory> =
                    collect_cell(&env, i, k, &policy, 2, &mut rng, &mut steps).unwrap();
                store.ingest_cell(i, k, trajs).unwrap();
            }
        }
        store
    }

    #[test]
    fn bundle_round_trips_through_a_checkpoint() {
        let mut rng = stream(21, "bundle", &[]);
        let bundle = EncoderBundle {
            env: DeepSet::new(6, 8, 4, &mut rng).unwrap(),
            policy: DeepSet::new(3, 8, 4, &mut rng).unwrap(),
            decoder: Mlp::new(&[6, 8, 1], Activation::Tanh, &mut rng).unwrap(),
        };
        let dir = std::env::temp_dir().join("pandr-bundle-test");
        std::fs::remove_dir_all(&dir).ok();
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("encoders");
        bundle.save(&base).unwrap();
        let loaded = EncoderBundle::load(&base).unwrap();
        assert_eq!(bundle.env.feature.params, loaded.env.feature.params);
        assert_eq!(bundle.policy.project.params, loaded.policy.project.params);
        assert_eq!(bundle.decoder.params, loaded.decoder.params);
        let tuples = vec![Transition {
            s: vec![0.1, 0.2],
            a: vec![0.3],
            r: -0.4,
            s_next: vec![0.5, 0.6],
            done: false,
        }];
        assert_eq!(bundle.embed_env(&tuples), loaded.embed_env(&tuples));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn contrastive_training_runs_and_improves_environment_contrast() {
        let store = tiny_store(31);
        let cfg = ReprConfig {
            d: 4,
            hidden: 16,
            head_hidden: 16,
            n_ctx: 10,
            n_bhv: 10,
            steps: 60,
            mi_batch: 4,
            rec_batch: 8,
            cell_batch: 6,
            pretrain_steps: 10,
            ..ReprConfig::default()
        };
        let out = train_contrastive(&store, &cfg, 7).unwrap();
        assert_eq!(out.history.len(), 60);
        assert!(out.behavior.is_some(), "completeness active, cell encoder returned");
        // The contrast term should fall well below its ln(3) ceiling.
        let early: f64 = out.history[..10].iter().map(|r| r.env_term).sum::<f64>() / 10.0;
        let late: f64 = out.history[50..].iter().map(|r| r.env_term).sum::<f64>() / 10.0;
        assert!(late < early, "contrast should improve: {early} → {late}");
        // Deterministic rerun.
        let out2 = train_contrastive(&store, &cfg, 7).unwrap();
        assert_eq!(
            out.bundle.env.project.params, out2.bundle.env.project.params,
            "training must be bit-deterministic per seed"
        );
    }

    #[test]
    fn ablated_weights_skip_their_terms() {
        let store = tiny_store(32);
        let cfg = ReprConfig {
            d: 4,
            hidden: 16,
            head_hidden: 16,
            n_ctx: 8,
            n_bhv: 8,
            steps: 5,
            alpha: 0.0,
            beta: 0.0,
            mi_batch: 4,
            rec_batch: 6,
            pretrain_steps: 10,
            cell_batch: 4,
            ..ReprConfig::default()
        };
        let out = train_contrastive(&store, &cfg, 9).unwrap();
        assert!(out.behavior.is_none());
        assert!(out.history.iter().all(|r| r.decouple == 0.0 && r.complete == 0.0 && r.mle == 0.0));
        assert!(out.history.iter().all(|r| (r.env_term + r.recovery - r.total).abs() < 1e-12));
    }

    #[test]
    fn dynamics_training_runs_and_reduces_prediction_error() {
        let store = tiny_store(33);
        let cfg = ReprConfig {
            d: 4,
            hidden: 16,
            n_ctx: 10,
            n_bhv: 10,
            steps: 80,
            rec_batch: 8,
            ..ReprConfig::default()
        };
        let out = train_dynamics(&store, &cfg, 11).unwrap();
        let early: f64 = out.history[..10].iter().map(|r| r.env_term).sum::<f64>() / 10.0;
        let late: f64 = out.history[70..].iter().map(|r| r.env_term).sum::<f64>() / 10.0;
        assert!(late < early, "prediction error should fall: {early} → {late}");
    }

    #[test]
    fn mle_step_trains_only_the_decoupling_head() {
        // Wiring audit for the detach pattern used by the training loop: the
        // head's likelihood loss on detached embeddings moves ψ₁ and nothing
        // else; the encoders' parameters are untouched by construction since
        // the embeddings enter the second tape as constants.
        let store = tiny_store(34);
        let cfg = ReprConfig {
            d: 4,
            hidden: 16,
            head_hidden: 16,
            n_ctx: 8,
            n_bhv: 8,
            steps: 1,
            beta: 0.0,
            mi_batch: 4,
            rec_batch: 6,
            ..ReprConfig::default()
        };
        // One step must succeed with α > 0 and record a finite head loss.
        let out = train_contrastive(&store, &cfg, 13).unwrap();
        assert!(out.history[0].mle.is_finite());
        assert!(out.history[0].decouple.is_finite());
    }

    #[test]
    fn view_sampling_respects_tags_in_training_inputs() {
        // Row and column views feed the encoders; spot-check the tags.
        let store = tiny_store(35);
        let mut rng = stream(35, "check", &[]);
        let ctx = store.sample_context(View::Row(2), 10, &mut rng).unwrap();
        assert_eq!(ctx.source, View::Row(2));
        let bhv = store.sample_behavior(View::Column(1), 10, &mut rng).unwrap();
        assert_eq!(bhv.source, View::Column(1));
    }
}
