//! Training loops for the two encoder recipes: the contrastive pipeline
//! (InfoNCE + action recovery, optionally refined by the mutual-information
//! terms) and the dynamics-prediction ablation encoder.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{ensure_finite_scalar, Error, Result};
use crate::nn::{momentum_update, Activation, Adam, Mlp, Tape, Var};
use crate::repr::encoder::{Bilinear, DeepSet, DeepSetBinding, MiHead};
use crate::repr::loss;
use crate::repr::{behavior_input, env_input, EncoderBundle};
use crate::rng::{stream, Stream};
use crate::store::{ExperienceStore, View};

/// Shape and schedule of representation training.
#[derive(Clone, Debug)]
pub struct ReprConfig {
    /// Embedding width shared by z_e, z_π and z_b.
    pub d: usize,
    /// Hidden width of the deep-set nets and the action decoder.
    pub hidden: usize,
    /// Hidden width of the Gaussian heads.
    pub head_hidden: usize,
    /// Context set size (transitions per environment sample).
    pub n_ctx: usize,
    /// Behavior set size ((s, a) pairs per policy sample).
    pub n_bhv: usize,
    /// Optimizer steps for the main loop.
    pub steps: usize,
    pub lr_env: f64,
    pub lr_policy: f64,
    pub lr_psi1: f64,
    pub lr_psi2: f64,
    /// Weight of the decoupling (upper-bound MI) penalty.
    pub alpha: f64,
    /// Weight of the completeness (joint-information) term.
    pub beta: f64,
    /// Momentum-copy retention factor.
    pub momentum: f64,
    /// Cells per mutual-information batch.
    pub mi_batch: usize,
    /// Decoupling-head likelihood updates per encoder step. The head must
    /// track the moving embedding distribution; with a single update it
    /// lags, and a stale conditional density turns the (heavily weighted)
    /// decoupling gradient into noise that erodes the codes.
    pub mle_iters: usize,
    /// Fresh (s, a) pairs per column for the recovery loss.
    pub rec_batch: usize,
    /// Anchor cells per joint-contrast pretraining step.
    pub cell_batch: usize,
    /// Joint-contrast pretraining steps for the cell encoder.
    pub pretrain_steps: usize,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig {
            d: 8,
            hidden: 64,
            head_hidden: 64,
            n_ctx: 25,
            n_bhv: 25,
            steps: 3000,
            lr_env: 1e-3,
            lr_policy: 1e-2,
            lr_psi1: 5e-3,
            lr_psi2: 5e-3,
            alpha: 1000.0,
            beta: 1.0,
            momentum: 0.99,
            mi_batch: 16,
            mle_iters: 5,
            rec_batch: 16,
            cell_batch: 16,
            pretrain_steps: 500,
        }
    }
}

/// One training step's loss terms, for the training-history CSV.
#[derive(Clone, Copy, Debug)]
pub struct LossRow {
    pub step: usize,
    /// Environment-encoder loss: InfoNCE for the contrastive recipe,
    /// next-state MSE for the dynamics recipe.
    pub env_term: f64,
    pub recovery: f64,
    pub decouple: f64,
    pub complete: f64,
    pub mle: f64,
    pub total: f64,
}

/// Everything representation training produces.
pub struct TrainedEncoders {
    pub bundle: EncoderBundle,
    /// The cell encoder φ_b (present when the completeness term was active).
    pub behavior: Option<DeepSet>,
    pub history: Vec<LossRow>,
}

/// Paired Adam states for a deep set's two nets.
struct SetOptim {
    feature: Adam,
    project: Adam,
}

impl SetOptim {
    fn new(ds: &DeepSet, lr: f64) -> Self {
        SetOptim {
            feature: Adam::new(ds.feature.n_params(), lr),
            project: Adam::new(ds.project.n_params(), lr),
        }
    }

    fn step(&mut self, ds: &mut DeepSet, gf: &[f64], gp: &[f64]) {
        self.feature.step(&mut ds.feature.params, gf);
        self.project.step(&mut ds.project.params, gp);
    }
}

fn momentum_update_set(shadow: &mut DeepSet, source: &DeepSet, m: f64) {
    momentum_update(&mut shadow.feature.params, &source.feature.params, m);
    momentum_update(&mut shadow.project.params, &source.project.params, m);
}

/// Traces one context sample through a bound set encoder.
fn trace_context(
    tape: &mut Tape,
    binding: &DeepSetBinding,
    store: &ExperienceStore,
    view: View,
    n: usize,
    rng: &mut Stream,
) -> Result<Var> {
    let sample = store.sample_context(view, n, rng)?;
    let items: Vec<Var> = sample.tuples.iter().map(|t| tape.constant(&env_input(t))).collect();
    Ok(binding.forward(tape, &items))
}

/// Traces one behavior sample through a bound set encoder.
fn trace_behavior(
    tape: &mut Tape,
    binding: &DeepSetBinding,
    store: &ExperienceStore,
    view: View,
    n: usize,
    rng: &mut Stream,
) -> Result<Var> {
    let sample = store.sample_behavior(view, n, rng)?;
    let items: Vec<Var> =
        sample.pairs.iter().map(|(s, a)| tape.constant(&behavior_input(s, a))).collect();
    Ok(binding.forward(tape, &items))
}

/// Plain (constant) embedding of a fresh context sample via a momentum copy.
fn momentum_context(
    tape: &mut Tape,
    encoder: &DeepSet,
    store: &ExperienceStore,
    view: View,
    n: usize,
    rng: &mut Stream,
) -> Result<Var> {
    let sample = store.sample_context(view, n, rng)?;
    let inputs: Vec<Vec<f64>> = sample.tuples.iter().map(env_input).collect();
    let z = encoder.embed(&inputs);
    Ok(tape.constant(&z))
}

/// Pretrains the cell encoder φ_b by joint contrast: samples from the same
/// cell are mutual positives, samples from any other cell are negatives.
fn pretrain_cell_encoder(
    store: &ExperienceStore,
    cfg: &ReprConfig,
    phi_b: &mut DeepSet,
    w_b: &mut Bilinear,
    seed: u64,
) -> Result<()> {
    let mut rng = stream(seed, "repr-pretrain", &[]);
    let mut phi_b_mom = phi_b.clone();
    let mut opt = SetOptim::new(phi_b, cfg.lr_env);
    let mut w_opt = Adam::new(cfg.d * cfg.d, cfg.lr_env);
    let all_cells: Vec<(usize, usize)> = (0..store.meta.n_envs)
        .flat_map(|i| (0..store.meta.n_policies).map(move |k| (i, k)))
        .collect();
    if all_cells.len() < 2 {
        return Err(Error::contract("joint contrast needs at least two cells"));
    }
    for step in 0..cfg.pretrain_steps {
        let mut cells = all_cells.clone();
        cells.shuffle(&mut rng);
        cells.truncate(cfg.cell_batch.clamp(2, all_cells.len()));

        let mut tape = Tape::new();
        let binding = phi_b.bind(&mut tape);
        let w = tape.leaf(&w_b.w);
        let mut anchors = Vec::with_capacity(cells.len());
        let mut positives = Vec::with_capacity(cells.len());
        for &(i, k) in &cells {
            anchors.push(trace_context(&mut tape, &binding, store, View::Cell(i, k), cfg.n_ctx, &mut rng)?);
            positives.push(momentum_context(&mut tape, &phi_b_mom, store, View::Cell(i, k), cfg.n_ctx, &mut rng)?);
        }
        let l = loss::infonce(&mut tape, w, cfg.d, &anchors, &positives)?;
        ensure_finite_scalar(tape.scalar(l), &format!("joint contrast loss at pretrain step {step}"))?;
        let grads = tape.backward(l);
        let mut gf = phi_b.feature.zeros_like();
        let mut gp = phi_b.project.zeros_like();
        binding.grad_into(&grads, &mut gf, &mut gp);
        opt.step(phi_b, &gf, &gp);
        let gw = grads.dense(w, cfg.d * cfg.d);
        w_opt.step(&mut w_b.w, &gw);
        momentum_update_set(&mut phi_b_mom, phi_b, cfg.momentum);
    }
    Ok(())
}

/// The contrastive recipe: per step, one environment-contrast batch (anchor
/// and positive contexts per training environment), one action-recovery
/// batch per collector policy, and — when α or β is positive — one batch of
/// same-cell pairs feeding the decoupling and completeness terms. The
/// decoupling head trains on its own tape afterwards, one step per encoder
/// step, on detached embeddings.
pub fn train_contrastive(
    store: &ExperienceStore,
    cfg: &ReprConfig,
    seed: u64,
) -> Result<TrainedEncoders> {
    let meta = &store.meta;
    if meta.n_envs < 2 {
        return Err(Error::contract("environment contrast needs at least two training environments"));
    }
    let (sd, ad) = (meta.state_dim, meta.action_dim);
    let env_in = 2 * sd + ad + 1;
    let pol_in = sd + ad;

    let mut init = stream(seed, "repr-init", &[]);
    let mut phi_e = DeepSet::new(env_in, cfg.hidden, cfg.d, &mut init)?;
    let mut w_cc = Bilinear::identity(cfg.d);
    let mut phi_pi = DeepSet::new(pol_in, cfg.hidden, cfg.d, &mut init)?;
    let mut decoder =
        Mlp::new(&[sd + cfg.d, cfg.hidden, cfg.hidden, ad], Activation::Tanh, &mut init)?;
    let mut psi1 = MiHead::new(cfg.d, cfg.d, cfg.head_hidden, &mut init)?;
    let mut psi2 = MiHead::new(2 * cfg.d, cfg.d, cfg.head_hidden, &mut init)?;
    let mut phi_b = DeepSet::new(env_in, cfg.hidden, cfg.d, &mut init)?;
    let mut w_b = Bilinear::identity(cfg.d);
    let mut phi_e_mom = phi_e.clone();

    // The cell encoder is settled before the main loop and frozen after.
    if cfg.beta > 0.0 {
        pretrain_cell_encoder(store, cfg, &mut phi_b, &mut w_b, seed)?;
    }

    let mut e_opt = SetOptim::new(&phi_e, cfg.lr_env);
    let mut w_opt = Adam::new(cfg.d * cfg.d, cfg.lr_env);
    let mut pi_opt = SetOptim::new(&phi_pi, cfg.lr_policy);
    let mut dec_opt = Adam::new(decoder.n_params(), cfg.lr_policy);
    let mut psi1_opt = Adam::new(psi1.net.n_params(), cfg.lr_psi1);
    let mut psi2_opt = Adam::new(psi2.net.n_params(), cfg.lr_psi2);

    let mut rng = stream(seed, "repr-train", &[]);
    let mi_active = cfg.alpha > 0.0 || cfg.beta > 0.0;
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let phi_e_b = phi_e.bind(&mut tape);
        let w_v = tape.leaf(&w_cc.w);
        let phi_pi_b = phi_pi.bind(&mut tape);
        let dec_b = decoder.bind(&mut tape);

        // ── Environment contrast. ──
        let mut anchors = Vec::with_capacity(meta.n_envs);
        let mut positives = Vec::with_capacity(meta.n_envs);
        for i in 0..meta.n_envs {
            anchors.push(trace_context(&mut tape, &phi_e_b, store, View::Row(i), cfg.n_ctx, &mut rng)?);
            positives.push(momentum_context(&mut tape, &phi_e_mom, store, View::Row(i), cfg.n_ctx, &mut rng)?);
        }
        let l_cc = loss::infonce(&mut tape, w_v, cfg.d, &anchors, &positives)?;
        let cc_val = tape.scalar(l_cc);
        ensure_finite_scalar(cc_val, &format!("environment contrast loss at step {step}"))?;

        // ── Action recovery. ──
        let mut rec = Vec::with_capacity(meta.n_policies);
        for k in 0..meta.n_policies {
            let z_pi =
                trace_behavior(&mut tape, &phi_pi_b, store, View::Column(k), cfg.n_bhv, &mut rng)?;
            let probe = store.sample_behavior(View::Column(k), cfg.rec_batch, &mut rng)?;
            rec.push(loss::policy_recovery(&mut tape, &dec_b, &probe.pairs, z_pi)?);
        }
        let l_pr = tape.mean_scalars(&rec);
        let pr_val = tape.scalar(l_pr);
        ensure_finite_scalar(pr_val, &format!("action recovery loss at step {step}"))?;

        // ── Same-cell pairs for the information terms. ──
        let mut z_e_cells = Vec::new();
        let mut z_pi_cells = Vec::new();
        let mut z_b_cells = Vec::new();
        if mi_active {
            for _ in 0..cfg.mi_batch.max(2) {
                let i = rng.gen_range(0..meta.n_envs);
                let k = rng.gen_range(0..meta.n_policies);
                let cell = View::Cell(i, k);
                z_e_cells.push(trace_context(&mut tape, &phi_e_b, store, cell, cfg.n_ctx, &mut rng)?);
                z_pi_cells.push(trace_behavior(&mut tape, &phi_pi_b, store, cell, cfg.n_bhv, &mut rng)?);
                if cfg.beta > 0.0 {
                    let sample = store.sample_context(cell, cfg.n_ctx, &mut rng)?;
                    let inputs: Vec<Vec<f64>> = sample.tuples.iter().map(env_input).collect();
                    z_b_cells.push(tape.constant(&phi_b.embed(&inputs)));
                }
            }
        }

        let mut total = tape.add(l_cc, l_pr);
        let mut rd_val = 0.0;
        if cfg.alpha > 0.0 {
            let psi1_frozen = psi1.bind_frozen(&mut tape);
            let mut perm: Vec<usize> = (0..z_e_cells.len()).collect();
            perm.shuffle(&mut rng);
            let l_rd = loss::club(&mut tape, &psi1_frozen, &z_pi_cells, &z_e_cells, &perm)?;
            rd_val = tape.scalar(l_rd);
            ensure_finite_scalar(rd_val, &format!("decoupling loss at step {step}"))?;
            let weighted = tape.scale(l_rd, cfg.alpha);
            total = tape.add(total, weighted);
        }
        let mut rc_val = 0.0;
        let mut psi2_binding = None;
        if cfg.beta > 0.0 {
            let psi2_b = psi2.bind(&mut tape);
            let joint: Vec<Var> = z_e_cells
                .iter()
                .zip(&z_pi_cells)
                .map(|(&e, &p)| tape.concat(&[e, p]))
                .collect();
            let l_rc = loss::gaussian_nll(&mut tape, &psi2_b, &joint, &z_b_cells)?;
            rc_val = tape.scalar(l_rc);
            ensure_finite_scalar(rc_val, &format!("completeness loss at step {step}"))?;
            let weighted = tape.scale(l_rc, cfg.beta);
            total = tape.add(total, weighted);
            psi2_binding = Some(psi2_b);
        }
        let total_val = tape.scalar(total);
        ensure_finite_scalar(total_val, &format!("total representation loss at step {step}"))?;

        let grads = tape.backward(total);
        let mut gef = phi_e.feature.zeros_like();
        let mut gep = phi_e.project.zeros_like();
        phi_e_b.grad_into(&grads, &mut gef, &mut gep);
        e_opt.step(&mut phi_e, &gef, &gep);
        let gw = grads.dense(w_v, cfg.d * cfg.d);
        w_opt.step(&mut w_cc.w, &gw);
        let mut gpf = phi_pi.feature.zeros_like();
        let mut gpp = phi_pi.project.zeros_like();
        phi_pi_b.grad_into(&grads, &mut gpf, &mut gpp);
        pi_opt.step(&mut phi_pi, &gpf, &gpp);
        let mut gd = decoder.zeros_like();
        dec_b.grad_into(&grads, &mut gd);
        dec_opt.step(&mut decoder.params, &gd);
        if let Some(psi2_b) = &psi2_binding {
            let mut g2 = psi2.net.zeros_like();
            psi2_b.net.grad_into(&grads, &mut g2);
            psi2_opt.step(&mut psi2.net.params, &g2);
        }

        let mut mle_val = 0.0;
        // ── Decoupling head MLE on detached embeddings. The first
        // iteration reuses the step's own batch; the rest draw fresh cells
        // and embed them with the just-updated encoders, so the head keeps
        // tracking the distribution the next step will see. ──
        if cfg.alpha > 0.0 {
            for iter in 0..cfg.mle_iters.max(1) {
                let (z_pi_vals, z_e_vals): (Vec<Vec<f64>>, Vec<Vec<f64>>) = if iter == 0 {
                    (
                        z_pi_cells.iter().map(|&v| tape.value(v).to_vec()).collect(),
                        z_e_cells.iter().map(|&v| tape.value(v).to_vec()).collect(),
                    )
                } else {
                    let mut zp = Vec::with_capacity(cfg.mi_batch.max(2));
                    let mut ze = Vec::with_capacity(cfg.mi_batch.max(2));
                    for _ in 0..cfg.mi_batch.max(2) {
                        let i = rng.gen_range(0..meta.n_envs);
                        let k = rng.gen_range(0..meta.n_policies);
                        let cell = View::Cell(i, k);
                        let bhv = store.sample_behavior(cell, cfg.n_bhv, &mut rng)?;
                        let pairs: Vec<Vec<f64>> =
                            bhv.pairs.iter().map(|(s, a)| behavior_input(s, a)).collect();
                        zp.push(phi_pi.embed(&pairs));
                        let ctx = store.sample_context(cell, cfg.n_ctx, &mut rng)?;
                        let inputs: Vec<Vec<f64>> = ctx.tuples.iter().map(env_input).collect();
                        ze.push(phi_e.embed(&inputs));
                    }
                    (zp, ze)
                };
                let mut t2 = Tape::new();
                let psi1_b = psi1.bind(&mut t2);
                let xs: Vec<Var> = z_pi_vals.iter().map(|z| t2.constant(z)).collect();
                let ys: Vec<Var> = z_e_vals.iter().map(|z| t2.constant(z)).collect();
                let l_mle = loss::gaussian_nll(&mut t2, &psi1_b, &xs, &ys)?;
                mle_val = t2.scalar(l_mle);
                ensure_finite_scalar(
                    mle_val,
                    &format!("decoupling head likelihood at step {step}"),
                )?;
                let g2 = t2.backward(l_mle);
                let mut gp1 = psi1.net.zeros_like();
                psi1_b.net.grad_into(&g2, &mut gp1);
                psi1_opt.step(&mut psi1.net.params, &gp1);
            }
        }

        momentum_update_set(&mut phi_e_mom, &phi_e, cfg.momentum);

        history.push(LossRow {
            step,
            env_term: cc_val,
            recovery: pr_val,
            decouple: rd_val,
            complete: rc_val,
            mle: mle_val,
            total: total_val,
        });
    }

    Ok(TrainedEncoders {
        bundle: EncoderBundle { env: phi_e, policy: phi_pi, decoder },
        behavior: if cfg.beta > 0.0 { Some(phi_b) } else { None },
        history,
    })
}

/// The ablation recipe: the environment encoder is trained by next-state
/// prediction instead of contrast; the policy side (recovery decoder) is
/// identical to the contrastive recipe. No information terms.
pub fn train_dynamics(
    store: &ExperienceStore,
    cfg: &ReprConfig,
    seed: u64,
) -> Result<TrainedEncoders> {
    let meta = &store.meta;
    let (sd, ad) = (meta.state_dim, meta.action_dim);
    let env_in = 2 * sd + ad + 1;
    let pol_in = sd + ad;

    let mut init = stream(seed, "dp-init", &[]);
    let mut phi_e = DeepSet::new(env_in, cfg.hidden, cfg.d, &mut init)?;
    let mut predictor =
        Mlp::new(&[sd + ad + cfg.d, cfg.hidden, cfg.hidden, sd], Activation::Tanh, &mut init)?;
    let mut phi_pi = DeepSet::new(pol_in, cfg.hidden, cfg.d, &mut init)?;
    let mut decoder =
        Mlp::new(&[sd + cfg.d, cfg.hidden, cfg.hidden, ad], Activation::Tanh, &mut init)?;

    let mut e_opt = SetOptim::new(&phi_e, cfg.lr_env);
    let mut pred_opt = Adam::new(predictor.n_params(), cfg.lr_env);
    let mut pi_opt = SetOptim::new(&phi_pi, cfg.lr_policy);
    let mut dec_opt = Adam::new(decoder.n_params(), cfg.lr_policy);

    let mut rng = stream(seed, "dp-train", &[]);
    let mut history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let phi_e_b = phi_e.bind(&mut tape);
        let pred_b = predictor.bind(&mut tape);
        let phi_pi_b = phi_pi.bind(&mut tape);
        let dec_b = decoder.bind(&mut tape);

        let mut dp = Vec::with_capacity(meta.n_envs);
        for i in 0..meta.n_envs {
            let z_e = trace_context(&mut tape, &phi_e_b, store, View::Row(i), cfg.n_ctx, &mut rng)?;
            let targets = store.sample_context(View::Row(i), cfg.rec_batch, &mut rng)?;
            dp.push(loss::dynamics_prediction(&mut tape, &pred_b, &targets.tuples, z_e)?);
        }
        let l_dp = tape.mean_scalars(&dp);
        let dp_val = tape.scalar(l_dp);
        ensure_finite_scalar(dp_val, &format!("dynamics prediction loss at step {step}"))?;

        let mut rec = Vec::with_capacity(meta.n_policies);
        for k in 0..meta.n_policies {
            let z_pi =
                trace_behavior(&mut tape, &phi_pi_b, store, View::Column(k), cfg.n_bhv, &mut rng)?;
            let probe = store.sample_behavior(View::Column(k), cfg.rec_batch, &mut rng)?;
            rec.push(loss::policy_recovery(&mut tape, &dec_b, &probe.pairs, z_pi)?);
        }
        let l_pr = tape.mean_scalars(&rec);
        let pr_val = tape.scalar(l_pr);
        ensure_finite_scalar(pr_val, &format!("action recovery loss at step {step}"))?;

        let total = tape.add(l_dp, l_pr);
        let grads = tape.backward(total);
        let mut gef = phi_e.feature.zeros_like();
        let mut gep = phi_e.project.zeros_like();
        phi_e_b.grad_into(&grads, &mut gef, &mut gep);
        e_opt.step(&mut phi_e, &gef, &gep);
        let mut gpr = predictor.zeros_like();
        pred_b.grad_into(&grads, &mut gpr);
        pred_opt.step(&mut predictor.params, &gpr);
        let mut gpf = phi_pi.feature.zeros_like();
        let mut gpp = phi_pi.project.zeros_like();
        phi_pi_b.grad_into(&grads, &mut gpf, &mut gpp);
        pi_opt.step(&mut phi_pi, &gpf, &gpp);
        let mut gd = decoder.zeros_like();
        dec_b.grad_into(&grads, &mut gd);
        dec_opt.step(&mut decoder.params, &gd);

        history.push(LossRow {
            step,
            env_term: dp_val,
            recovery: pr_val,
            decouple: 0.0,
            complete: 0.0,
            mle: 0.0,
            total: tape.scalar(total),
        });
    }

    Ok(TrainedEncoders {
        bundle: EncoderBundle { env: phi_e, policy: phi_pi, decoder },
        behavior: None,
        history,
    })
}
