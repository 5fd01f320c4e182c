//! Collector policies and the PPO trainer that produces them.
//!
//! Each training environment gets its own set of PPO policies; rolling those
//! policies out fills the experience-store cells. Stored trajectories carry
//! the *executed* (clipped) action so replaying them through the environment
//! reproduces the recorded next states bit-for-bit. PPO itself keeps the raw
//! pre-clip sample in its internal buffers, because that is what the Gaussian
//! log-density and the importance ratio are defined on.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::env::EnvInstance;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{Activation, Adam, Mlp, MlpBinding, Tape, Var};
use crate::rng::{normal, Stream};
use crate::store::{Trajectory, Transition};

/// Anything that maps a state to an executed action. Implementations must
/// respect the environment's action bound themselves.
pub trait Policy {
    fn act(&self, s: &[f64], rng: &mut Stream) -> Vec<f64>;
}

/// Diagonal-Gaussian policy: `a_raw ~ N(mean_net(s), exp(2·log_std))`,
/// executed action clipped to ±`action_bound`.
#[derive(Clone, Debug)]
pub struct GaussianPolicy {
    pub mean_net: Mlp,
    pub log_std: Vec<f64>,
    pub action_bound: f64,
}

/// One stochastic draw: the raw sample (what PPO's density is defined on),
/// the clipped executed action, and the raw sample's log-density.
#[derive(Clone, Debug)]
pub struct ActionSample {
    pub raw: Vec<f64>,
    pub executed: Vec<f64>,
    pub logp: f64,
}

impl GaussianPolicy {
    pub fn sample(&self, s: &[f64], rng: &mut Stream) -> ActionSample {
        let mean = self.mean_net.forward(s);
        let mut raw = Vec::with_capacity(mean.len());
        let mut logp = 0.0;
        for (i, &mu) in mean.iter().enumerate() {
            let std = self.log_std[i].exp();
            let x = mu + std * normal(rng);
            let e = (x - mu) / std;
            logp += -0.5 * (2.0 * std::f64::consts::PI).ln() - self.log_std[i] - 0.5 * e * e;
            raw.push(x);
        }
        let executed = raw.iter().map(|&x| x.clamp(-self.action_bound, self.action_bound)).collect();
        ActionSample { raw, executed, logp }
    }

    /// The deterministic policy at this Gaussian's mean.
    pub fn mean_policy(&self) -> MeanPolicy {
        MeanPolicy { net: self.mean_net.clone(), action_bound: self.action_bound }
    }
}

impl Policy for GaussianPolicy {
    fn act(&self, s: &[f64], rng: &mut Stream) -> Vec<f64> {
        self.sample(s, rng).executed
    }
}

/// Deterministic policy: clipped network mean, no noise.
#[derive(Clone, Debug)]
pub struct MeanPolicy {
    pub net: Mlp,
    pub action_bound: f64,
}

impl Policy for MeanPolicy {
    fn act(&self, s: &[f64], _rng: &mut Stream) -> Vec<f64> {
        self.net
            .forward(s)
            .into_iter()
            .map(|x| x.clamp(-self.action_bound, self.action_bound))
            .collect()
    }
}

/// Uniform noise over the action box — the floor that trained collectors
/// are measured against.
#[derive(Clone, Copy, Debug)]
pub struct RandomPolicy {
    pub action_dim: usize,
    pub action_bound: f64,
}

impl Policy for RandomPolicy {
    fn act(&self, _s: &[f64], rng: &mut Stream) -> Vec<f64> {
        (0..self.action_dim).map(|_| rng.gen_range(-self.action_bound..self.action_bound)).collect()
    }
}

/// Rolls one episode, incrementing `steps` once per environment transition.
/// Returns the transitions and the episode's undiscounted return.
pub fn run_episode(
    env: &EnvInstance,
    policy: &dyn Policy,
    rng: &mut Stream,
    steps: &mut u64,
) -> Result<(Vec<Transition>, f64)> {
    let mut s = env.reset(rng);
    let mut transitions = Vec::with_capacity(env.horizon());
    let mut ret = 0.0;
    for t in 0..env.horizon() {
        let a = policy.act(&s, rng);
        let out = env.step(&s, &a, t)?;
        *steps += 1;
        ret += out.reward;
        transitions.push(Transition {
            s: s.clone(),
            a,
            r: out.reward,
            s_next: out.next.clone(),
            done: out.done,
        });
        s = out.next;
        if out.done {
            break;
        }
    }
    Ok((transitions, ret))
}

/// Mean and population standard deviation of undiscounted returns over
/// `episodes` rollouts.
pub fn evaluate(
    env: &EnvInstance,
    policy: &dyn Policy,
    episodes: usize,
    rng: &mut Stream,
    steps: &mut u64,
) -> Result<(f64, f64)> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (_, ret) = run_episode(env, policy, rng, steps)?;
        returns.push(ret);
    }
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok((mean, var.sqrt()))
}

/// Rolls `episodes` episodes and tags them for cell (i, k).
pub fn collect_cell(
    env: &EnvInstance,
    i: usize,
    k: usize,
    policy: &dyn Policy,
    episodes: usize,
    rng: &mut Stream,
    steps: &mut u64,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let (transitions, _) = run_episode(env, policy, rng, steps)?;
        out.push(Trajectory { env_index: i, policy_index: k, transitions });
    }
    Ok(out)
}

/// Generalized advantage estimation over one complete episode (terminal
/// value 0). Returns `(advantages, value_targets)` where
/// `target_t = A_t + V(s_t)`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let v_next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * v_next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// One sample's PPO objective — the clipped-surrogate policy term plus a
/// ½·squared-error critic term — as a tape scalar. Split out of the update
/// loop so its gradient can be checked independently of training.
#[allow(clippy::too_many_arguments)]
pub fn ppo_sample_loss(
    tape: &mut Tape,
    actor: &MlpBinding,
    critic: &MlpBinding,
    logvar: Var,
    state: &[f64],
    raw_action: &[f64],
    logp_old: f64,
    advantage: f64,
    target: f64,
    clip: f64,
) -> Var {
    let s = tape.constant(state);
    let mean_v = actor.forward(tape, s);
    let a_raw = tape.constant(raw_action);
    let logp = tape.gaussian_logpdf(mean_v, logvar, a_raw);
    let old = tape.constant(&[logp_old]);
    let diff = tape.sub(logp, old);
    let ratio = tape.exp(diff);
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let surr1 = tape.scale(ratio, advantage);
    let surr2 = tape.scale(clipped, advantage);
    let obj = tape.min(surr1, surr2);
    let pi_loss = tape.scale(obj, -1.0);

    let v = critic.forward(tape, s);
    let tgt = tape.constant(&[target]);
    let err = tape.sub(v, tgt);
    let sq = tape.dot(err, err);
    let v_loss = tape.scale(sq, 0.5);
    tape.add(pi_loss, v_loss)
}

/// PPO training budget and shape knobs.
#[derive(Clone, Debug)]
pub struct PpoConfig {
    /// Environment steps spent on rollouts (evaluation steps are extra).
    pub total_steps: usize,
    /// Steps gathered per update phase (rounded up to whole episodes).
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub lr: f64,
    pub gae_lambda: f64,
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    /// Episodes per deterministic evaluation pass (snapshot selection).
    pub eval_episodes: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            total_steps: 50_000,
            rollout_steps: 1024,
            epochs: 10,
            minibatch: 32,
            clip: 0.2,
            lr: 3e-4,
            gae_lambda: 0.95,
            hidden: vec![64, 64],
            log_std_init: -0.5,
            eval_episodes: 10,
        }
    }
}

/// What PPO hands back: the best policy seen (by deterministic evaluation on
/// a fixed stream), plus bookkeeping.
#[derive(Clone, Debug)]
pub struct PpoOutcome {
    pub policy: GaussianPolicy,
    /// Deterministic mean-policy return of the returned snapshot.
    pub best_eval: f64,
    /// Same metric for the untouched initial network.
    pub initial_eval: f64,
    /// All environment steps spent, rollouts and evaluations together.
    pub env_steps: u64,
}

struct FlatBuffer {
    states: Vec<Vec<f64>>,
    raw_actions: Vec<Vec<f64>>,
    advantages: Vec<f64>,
    targets: Vec<f64>,
    logp_old: Vec<f64>,
}

/// Clipped-surrogate PPO with a diagonal-Gaussian actor and an MSE critic,
/// both updated by Adam from per-minibatch reverse-mode gradients. The actor
/// snapshot with the best deterministic evaluation is returned; evaluations
/// replay the same seed-derived stream so snapshots compete on identical
/// start states.
pub fn train_ppo(
    env: &EnvInstance,
    cfg: &PpoConfig,
    seed: u64,
    tag: &[u64],
) -> Result<PpoOutcome> {
    if cfg.minibatch == 0 || cfg.rollout_steps == 0 || cfg.epochs == 0 {
        return Err(Error::contract("ppo batch shape must be positive"));
    }
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let mut init_rng = crate::rng::stream(seed, "ppo-init", tag);
    let mut actor_sizes = vec![sd];
    actor_sizes.extend_from_slice(&cfg.hidden);
    actor_sizes.push(ad);
    let mut critic_sizes = vec![sd];
    critic_sizes.extend_from_slice(&cfg.hidden);
    critic_sizes.push(1);
    let mut actor = Mlp::new(&actor_sizes, Activation::Tanh, &mut init_rng)?;
    let mut critic = Mlp::new(&critic_sizes, Activation::Tanh, &mut init_rng)?;
    let mut log_std = vec![cfg.log_std_init; ad];

    let mut actor_opt = Adam::new(actor.n_params(), cfg.lr);
    let mut critic_opt = Adam::new(critic.n_params(), cfg.lr);
    let mut log_std_opt = Adam::new(ad, cfg.lr);

    let mut rollout_rng = crate::rng::stream(seed, "ppo-rollout", tag);
    let mut shuffle_rng = crate::rng::stream(seed, "ppo-shuffle", tag);
    let mut env_steps = 0u64;
    let gamma = env.discount();

    let eval_snapshot = |net: &Mlp, env_steps: &mut u64| -> Result<f64> {
        let mut eval_rng = crate::rng::stream(seed, "ppo-eval", tag);
        let policy = MeanPolicy { net: net.clone(), action_bound: env.action_bound() };
        let (mean, _) = evaluate(env, &policy, cfg.eval_episodes, &mut eval_rng, env_steps)?;
        Ok(mean)
    };

    let initial_eval = eval_snapshot(&actor, &mut env_steps)?;
    let mut best_eval = initial_eval;
    let mut best_actor = actor.clone();
    let mut best_log_std = log_std.clone();

    let mut rollout_steps_done = 0usize;
    while rollout_steps_done < cfg.total_steps {
        // ── Gather whole episodes until the rollout quota is met. ──
        let mut buf = FlatBuffer {
            states: Vec::new(),
            raw_actions: Vec::new(),
            advantages: Vec::new(),
            targets: Vec::new(),
            logp_old: Vec::new(),
        };
        let policy = GaussianPolicy {
            mean_net: actor.clone(),
            log_std: log_std.clone(),
            action_bound: env.action_bound(),
        };
        let mut gathered = 0usize;
        while gathered < cfg.rollout_steps {
            let mut s = env.reset(&mut rollout_rng);
            let mut ep_states = Vec::with_capacity(env.horizon());
            let mut ep_raw = Vec::with_capacity(env.horizon());
            let mut ep_rewards = Vec::with_capacity(env.horizon());
            let mut ep_logp = Vec::with_capacity(env.horizon());
            for t in 0..env.horizon() {
                let sample = policy.sample(&s, &mut rollout_rng);
                let out = env.step(&s, &sample.executed, t)?;
                env_steps += 1;
                ep_states.push(s.clone());
                ep_raw.push(sample.raw);
                ep_rewards.push(out.reward);
                ep_logp.push(sample.logp);
                s = out.next;
                if out.done {
                    break;
                }
            }
            gathered += ep_states.len();
            let values: Vec<f64> = ep_states.iter().map(|s| critic.forward(s)[0]).collect();
            let (adv, targets) = compute_gae(&ep_rewards, &values, gamma, cfg.gae_lambda);
            buf.states.extend(ep_states);
            buf.raw_actions.extend(ep_raw);
            buf.advantages.extend(adv);
            buf.targets.extend(targets);
            buf.logp_old.extend(ep_logp);
        }
        rollout_steps_done += gathered;

        // Normalize advantages across the whole rollout.
        let n = buf.advantages.len() as f64;
        let mean = buf.advantages.iter().sum::<f64>() / n;
        let std =
            (buf.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-8);
        for a in &mut buf.advantages {
            *a = (*a - mean) / std;
        }

        // ── Clipped-surrogate updates. ──
        let mut order: Vec<usize> = (0..buf.states.len()).collect();
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(cfg.minibatch) {
                if chunk.len() < cfg.minibatch {
                    continue; // drop the ragged tail; next epoch reshuffles
                }
                let mut tape = Tape::new();
                let actor_b = actor.bind(&mut tape);
                let critic_b = critic.bind(&mut tape);
                let log_std_v = tape.leaf(&log_std);
                let logvar = tape.scale(log_std_v, 2.0);
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    losses.push(ppo_sample_loss(
                        &mut tape,
                        &actor_b,
                        &critic_b,
                        logvar,
                        &buf.states[i],
                        &buf.raw_actions[i],
                        buf.logp_old[i],
                        buf.advantages[i],
                        buf.targets[i],
                        cfg.clip,
                    ));
                }
                let loss = tape.mean_scalars(&losses);
                let grads = tape.backward(loss);
                let mut ga = actor.zeros_like();
                actor_b.grad_into(&grads, &mut ga);
                let mut gc = critic.zeros_like();
                critic_b.grad_into(&grads, &mut gc);
                let gs = grads.dense(log_std_v, ad);
                ensure_finite(&ga, "ppo actor gradient")?;
                actor_opt.step(&mut actor.params, &ga);
                critic_opt.step(&mut critic.params, &gc);
                log_std_opt.step(&mut log_std, &gs);
            }
        }

        let eval = eval_snapshot(&actor, &mut env_steps)?;
        if eval > best_eval {
            best_eval = eval;
            best_actor = actor.clone();
            best_log_std = log_std.clone();
        }
    }

    Ok(PpoOutcome {
        policy: GaussianPolicy {
            mean_net: best_actor,
            log_std: best_log_std,
            action_bound: env.action_bound(),
        },
        best_eval,
        initial_eval,
        env_steps,
    })
}
