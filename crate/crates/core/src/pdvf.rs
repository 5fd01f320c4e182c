//! The policy-dynamics value function: a network regressing Monte-Carlo
//! returns-to-go onto (state, environment embedding, policy embedding), plus
//! the quadratic closed-form baseline it is compared against.
//!
//! Encoders are frozen here but still run forward: every training draw
//! infers its embeddings from a fresh context window and behavior sample of
//! the drawn episode, so the value function trains against the embedding
//! distribution it will see online. Evaluation uses the deterministic
//! per-trajectory [`EmbeddingBank`] (full-episode embeddings computed once).

use std::path::Path;

use crate::error::{ensure_finite, ensure_finite_scalar, Error, Result};
use crate::nn::checkpoint::{self, Tensor};
use crate::nn::{Activation, Adam, Mlp, Tape};
use crate::repr::{mlp_from_tensors, mlp_tensors, EncoderBundle};
use crate::rng::stream;
use crate::store::ExperienceStore;

/// Frozen per-trajectory embeddings for every cell of a store. The bank also
/// remembers the mean policy-embedding norm, which downstream stages use to
/// place synthetic embeddings (random inits, eigenvectors) on the data scale.
pub struct EmbeddingBank {
    env: Vec<Vec<Vec<f64>>>,
    policy: Vec<Vec<Vec<f64>>>,
    n_policies: usize,
    pub d: usize,
    pub mean_policy_norm: f64,
}

impl EmbeddingBank {
    pub fn build(store: &ExperienceStore, encoders: &EncoderBundle) -> Result<Self> {
        let (m, o) = (store.meta.n_envs, store.meta.n_policies);
        let mut env = Vec::with_capacity(m * o);
        let mut policy = Vec::with_capacity(m * o);
        let mut norm_sum = 0.0;
        let mut count = 0usize;
        for i in 0..m {
            for k in 0..o {
                let mut cell_env = Vec::new();
                let mut cell_pol = Vec::new();
                for traj in store.cell_trajectories(i, k) {
                    let z_e = encoders.embed_env(&traj.transitions);
                    ensure_finite(&z_e, "environment embedding")?;
                    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
                        traj.transitions.iter().map(|t| (t.s.clone(), t.a.clone())).collect();
                    let z_pi = encoders.embed_policy(&pairs);
                    ensure_finite(&z_pi, "policy embedding")?;
                    norm_sum += z_pi.iter().map(|x| x * x).sum::<f64>().sqrt();
                    count += 1;
                    cell_env.push(z_e);
                    cell_pol.push(z_pi);
                }
                env.push(cell_env);
                policy.push(cell_pol);
            }
        }
        Ok(EmbeddingBank {
            env,
            policy,
            n_policies: o,
            d: encoders.d(),
            mean_policy_norm: norm_sum / count as f64,
        })
    }

    fn cell(&self, i: usize, k: usize) -> usize {
        i * self.n_policies + k
    }

    pub fn env_embedding(&self, i: usize, k: usize, traj: usize) -> &[f64] {
        &self.env[self.cell(i, k)][traj]
    }

    pub fn policy_embedding(&self, i: usize, k: usize, traj: usize) -> &[f64] {
        &self.policy[self.cell(i, k)][traj]
    }

    /// Mean policy embedding of one column (one collector policy).
    pub fn column_policy_embedding(&self, k: usize, n_envs: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.d];
        let mut n = 0usize;
        for i in 0..n_envs {
            for z in &self.policy[self.cell(i, k)] {
                for (a, b) in acc.iter_mut().zip(z) {
                    *a += b;
                }
                n += 1;
            }
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        acc
    }
}

/// Training budget for the value regression.
#[derive(Clone, Debug)]
pub struct PdvfConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Context-window size used to infer z_e for each training draw.
    pub ctx_window: usize,
    /// Behavior-pair count used to infer z_π for each training draw.
    pub bhv_window: usize,
}

impl Default for PdvfConfig {
    fn default() -> Self {
        PdvfConfig {
            steps: 3000,
            batch: 128,
            lr: 5e-3,
            hidden: vec![128, 128, 128],
            ctx_window: 25,
            bhv_window: 25,
        }
    }
}

/// Elementwise state standardization statistics, frozen after fitting.
fn fit_state_stats(store: &ExperienceStore, exclude: Option<(usize, usize)>) -> (Vec<f64>, Vec<f64>) {
    let sd = store.meta.state_dim;
    let mut mean = vec![0.0; sd];
    let mut n = 0.0;
    for i in 0..store.meta.n_envs {
        for k in 0..store.meta.n_policies {
            if exclude == Some((i, k)) {
                continue;
            }
            for traj in store.cell_trajectories(i, k) {
                for tr in &traj.transitions {
                    for (m, &x) in mean.iter_mut().zip(&tr.s) {
                        *m += x;
                    }
                    n += 1.0;
                }
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; sd];
    for i in 0..store.meta.n_envs {
        for k in 0..store.meta.n_policies {
            if exclude == Some((i, k)) {
                continue;
            }
            for traj in store.cell_trajectories(i, k) {
                for tr in &traj.transitions {
                    for (v, (&x, &m)) in var.iter_mut().zip(tr.s.iter().zip(&mean)) {
                        *v += (x - m) * (x - m);
                    }
                }
            }
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(1e-8)).collect();
    (mean, std)
}

fn fit_target_stats(store: &ExperienceStore, exclude: Option<(usize, usize)>) -> (f64, f64) {
    let mut sum = 0.0;
    let mut n = 0.0;
    for i in 0..store.meta.n_envs {
        for k in 0..store.meta.n_policies {
            if exclude == Some((i, k)) {
                continue;
            }
            for rtg in store.cell_returns(i, k) {
                sum += rtg.iter().sum::<f64>();
                n += rtg.len() as f64;
            }
        }
    }
    let mean = sum / n;
    let mut var = 0.0;
    for i in 0..store.meta.n_envs {
        for k in 0..store.meta.n_policies {
            if exclude == Some((i, k)) {
                continue;
            }
            for rtg in store.cell_returns(i, k) {
                var += rtg.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>();
            }
        }
    }
    (mean, (var / n).sqrt().max(1e-8))
}

fn standardize(s: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    s.iter().zip(mean.iter().zip(std)).map(|(&x, (&m, &d))| (x - m) / d).collect()
}

/// The nonlinear value network V(s, z_e, z_π) with frozen input/target
/// standardization.
#[derive(Clone, Debug)]
pub struct PdvfModel {
    pub body: Mlp,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub d: usize,
}

impl PdvfModel {
    fn input(&self, s: &[f64], z_e: &[f64], z_pi: &[f64]) -> Vec<f64> {
        let mut x = standardize(s, &self.state_mean, &self.state_std);
        x.extend_from_slice(z_e);
        x.extend_from_slice(z_pi);
        x
    }

    pub fn value(&self, s: &[f64], z_e: &[f64], z_pi: &[f64]) -> f64 {
        self.target_mean + self.target_std * self.body.forward(&self.input(s, z_e, z_pi))[0]
    }

    /// Mean value over `states` and its gradient with respect to z_π.
    pub fn value_and_grad_zpi(
        &self,
        states: &[Vec<f64>],
        z_e: &[f64],
        z_pi: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        if states.is_empty() {
            return Err(Error::contract("value gradient needs at least one state"));
        }
        let mut tape = Tape::new();
        let body = self.body.bind_frozen(&mut tape);
        let z = tape.leaf(z_pi);
        let mut vs = Vec::with_capacity(states.len());
        for s in states {
            let mut head = standardize(s, &self.state_mean, &self.state_std);
            head.extend_from_slice(z_e);
            let head = tape.constant(&head);
            let x = tape.concat(&[head, z]);
            vs.push(body.forward(&mut tape, x));
        }
        let vbar = tape.mean_scalars(&vs);
        let grads = tape.backward(vbar);
        let g: Vec<f64> =
            grads.dense(z, self.d).iter().map(|x| x * self.target_std).collect();
        ensure_finite(&g, "value gradient")?;
        let value = self.target_mean + self.target_std * tape.scalar(vbar);
        Ok((value, g))
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut tensors = mlp_tensors("body", &self.body);
        tensors.push(Tensor::new("state_mean", vec![self.state_mean.len()], self.state_mean.clone()));
        tensors.push(Tensor::new("state_std", vec![self.state_std.len()], self.state_std.clone()));
        tensors.push(Tensor::new(
            "target_stats",
            vec![2],
            vec![self.target_mean, self.target_std],
        ));
        tensors.push(Tensor::new("embed_dim", vec![1], vec![self.d as f64]));
        checkpoint::save(base, &tensors)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let tensors = checkpoint::load(base)?;
        let find = |n: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|t| t.name == n)
                .ok_or_else(|| Error::contract(format!("checkpoint is missing tensor {n:?}")))
        };
        let ts = find("target_stats")?;
        Ok(PdvfModel {
            body: mlp_from_tensors(&tensors, "body")?,
            state_mean: find("state_mean")?.data.clone(),
            state_std: find("state_std")?.data.clone(),
            target_mean: ts.data[0],
            target_std: ts.data[1],
            d: find("embed_dim")?.data[0] as usize,
        })
    }
}

/// Draws one value tuple whose cell is not the held-out one; the rejected
/// draws still consume RNG, so the sequence stays reproducible.
fn draw_training_tuple(
    store: &ExperienceStore,
    exclude: Option<(usize, usize)>,
    cfg: &PdvfConfig,
    rng: &mut crate::rng::Stream,
) -> Result<crate::store::ValueTuple> {
    loop {
        let tuple = store
            .sample_value_tuples(1, cfg.ctx_window, cfg.bhv_window, rng)?
            .pop()
            .expect("one tuple requested");
        if exclude != Some((tuple.env_index, tuple.policy_index)) {
            return Ok(tuple);
        }
    }
}

/// Monte-Carlo regression of returns-to-go onto (s, z_e, z_π), where each
/// training draw infers its embeddings from a fresh context window and
/// behavior sample of the drawn episode. With `holdout` set, that cell is
/// excluded from the standardization fit and the training batches (the
/// leave-one-cell-out protocol).
pub fn train_pdvf(
    store: &ExperienceStore,
    encoders: &EncoderBundle,
    cfg: &PdvfConfig,
    seed: u64,
    holdout: Option<(usize, usize)>,
) -> Result<PdvfModel> {
    if store.meta.n_envs * store.meta.n_policies < 2 && holdout.is_some() {
        return Err(Error::contract("cannot hold out the only cell"));
    }
    let sd = store.meta.state_dim;
    let d = encoders.d();
    let (state_mean, state_std) = fit_state_stats(store, holdout);
    let (target_mean, target_std) = fit_target_stats(store, holdout);

    let mut sizes = vec![sd + 2 * d];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let tag: &[u64] = &holdout.map(|(i, k)| [i as u64, k as u64]).unwrap_or([u64::MAX, u64::MAX]);
    let mut init = stream(seed, "pdvf-init", tag);
    let body = Mlp::new(&sizes, Activation::Tanh, &mut init)?;
    let mut model = PdvfModel { body, state_mean, state_std, target_mean, target_std, d };

    let mut opt = Adam::new(model.body.n_params(), cfg.lr);
    let mut rng = stream(seed, "pdvf-train", tag);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let body = model.body.bind(&mut tape);
        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let tuple = draw_training_tuple(store, holdout, cfg, &mut rng)?;
            let mut x = standardize(&tuple.state, &model.state_mean, &model.state_std);
            x.extend_from_slice(&encoders.embed_env(&tuple.context.tuples));
            x.extend_from_slice(&encoders.embed_policy(&tuple.behavior.pairs));
            let x = tape.constant(&x);
            let v = body.forward(&mut tape, x);
            let y = tape.constant(&[(tuple.ret - model.target_mean) / model.target_std]);
            let e = tape.sub(v, y);
            losses.push(tape.dot(e, e));
        }
        let loss = tape.mean_scalars(&losses);
        ensure_finite_scalar(tape.scalar(loss), &format!("value regression loss at step {step}"))?;
        let grads = tape.backward(loss);
        let mut g = model.body.zeros_like();
        body.grad_into(&grads, &mut g);
        opt.step(&mut model.body.params, &g);
    }
    Ok(model)
}

/// Per-cell evaluation row for the value function's generalization report.
#[derive(Clone, Debug)]
pub struct CellEval {
    pub env_index: usize,
    pub policy_index: usize,
    pub mean_return: f64,
    pub mean_value: f64,
    pub r2: f64,
    pub n: usize,
}

/// Mean return, mean prediction, and R² of the model on one cell (every
/// (trajectory, step) point, R² against the cell's own mean).
pub fn eval_cell(
    store: &ExperienceStore,
    bank: &EmbeddingBank,
    model: &PdvfModel,
    i: usize,
    k: usize,
) -> CellEval {
    let mut gs = Vec::new();
    let mut vs = Vec::new();
    for (traj, t_list) in store.cell_trajectories(i, k).iter().enumerate() {
        let z_e = bank.env_embedding(i, k, traj);
        let z_pi = bank.policy_embedding(i, k, traj);
        for (t, tr) in t_list.transitions.iter().enumerate() {
            gs.push(store.cell_returns(i, k)[traj][t]);
            vs.push(model.value(&tr.s, z_e, z_pi));
        }
    }
    let n = gs.len();
    let mean_g = gs.iter().sum::<f64>() / n as f64;
    let mean_v = vs.iter().sum::<f64>() / n as f64;
    let ss_res: f64 = gs.iter().zip(&vs).map(|(g, v)| (g - v) * (g - v)).sum();
    let ss_tot: f64 = gs.iter().map(|g| (g - mean_g) * (g - mean_g)).sum();
    CellEval {
        env_index: i,
        policy_index: k,
        mean_return: mean_g,
        mean_value: mean_v,
        r2: 1.0 - ss_res / ss_tot.max(1e-12),
        n,
    }
}

/// Leave-one-cell-out generalization: for every cell, train on the rest and
/// predict the held-out cell. Returns the pooled R² over all held-out points
/// (against the pooled mean) and the per-cell rows.
pub fn loco_r2(
    store: &ExperienceStore,
    encoders: &EncoderBundle,
    bank: &EmbeddingBank,
    cfg: &PdvfConfig,
    seed: u64,
) -> Result<(f64, Vec<CellEval>)> {
    let mut rows = Vec::new();
    let mut all_g = Vec::new();
    let mut all_v = Vec::new();
    for i in 0..store.meta.n_envs {
        for k in 0..store.meta.n_policies {
            let model = train_pdvf(store, encoders, cfg, seed, Some((i, k)))?;
            let row = eval_cell(store, bank, &model, i, k);
            for (traj, t_list) in store.cell_trajectories(i, k).iter().enumerate() {
                let z_e = bank.env_embedding(i, k, traj);
                let z_pi = bank.policy_embedding(i, k, traj);
                for (t, tr) in t_list.transitions.iter().enumerate() {
                    all_g.push(store.cell_returns(i, k)[traj][t]);
                    all_v.push(model.value(&tr.s, z_e, z_pi));
                }
            }
            rows.push(row);
        }
    }
    let n = all_g.len() as f64;
    let mean_g = all_g.iter().sum::<f64>() / n;
    let ss_res: f64 = all_g.iter().zip(&all_v).map(|(g, v)| (g - v) * (g - v)).sum();
    let ss_tot: f64 = all_g.iter().map(|g| (g - mean_g) * (g - mean_g)).sum();
    Ok((1.0 - ss_res / ss_tot.max(1e-12), rows))
}

// ─── Quadratic baseline ───

/// The closed-form baseline: V(s, z_e, ẑ_π) = ẑ_πᵀ · sym(A(s, z_e)) · ẑ_π on
/// unit-normalized policy embeddings, with an eigenvector argmax.
#[derive(Clone, Debug)]
pub struct QuadraticPdvf {
    pub head: Mlp,
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub d: usize,
    /// Mean ‖z_π‖ over the training bank; eigenvectors are rescaled by this
    /// before decoding so they live on the embedding scale the decoder saw.
    pub mean_policy_norm: f64,
}

fn unit(z: &[f64]) -> Result<Vec<f64>> {
    let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(Error::contract("cannot normalize a zero policy embedding"));
    }
    Ok(z.iter().map(|x| x / n).collect())
}

impl QuadraticPdvf {
    /// Raw matrix entries A(s, z_e), row-major d×d.
    fn matrix(&self, s: &[f64], z_e: &[f64]) -> Vec<f64> {
        let mut x = standardize(s, &self.state_mean, &self.state_std);
        x.extend_from_slice(z_e);
        self.head.forward(&x)
    }

    pub fn value(&self, s: &[f64], z_e: &[f64], z_pi: &[f64]) -> Result<f64> {
        let zh = unit(z_pi)?;
        let a = self.matrix(s, z_e);
        let d = self.d;
        let mut q = 0.0;
        for r in 0..d {
            for c in 0..d {
                q += zh[r] * a[r * d + c] * zh[c];
            }
        }
        Ok(self.target_mean + self.target_std * q)
    }

    /// Mean symmetrized matrix over the probe states.
    pub fn mean_sym_matrix(&self, states: &[Vec<f64>], z_e: &[f64]) -> Result<Vec<f64>> {
        if states.is_empty() {
            return Err(Error::contract("quadratic argmax needs at least one state"));
        }
        let d = self.d;
        let mut acc = vec![0.0; d * d];
        for s in states {
            let a = self.matrix(s, z_e);
            for r in 0..d {
                for c in 0..d {
                    acc[r * d + c] += 0.5 * (a[r * d + c] + a[c * d + r]);
                }
            }
        }
        let inv = 1.0 / states.len() as f64;
        for x in &mut acc {
            *x *= inv;
        }
        Ok(acc)
    }

    /// Closed-form maximizer of the mean quadratic value over the unit
    /// sphere: the leading eigenvector of the mean symmetrized matrix.
    /// Ties pick the lowest eigen-index; sign makes the first component
    /// larger than 1e-12 in magnitude positive.
    pub fn argmax(&self, states: &[Vec<f64>], z_e: &[f64]) -> Result<(Vec<f64>, f64)> {
        let a = self.mean_sym_matrix(states, z_e)?;
        let (vals, vecs) = jacobi_eigen(&a, self.d)?;
        let mut best = 0;
        for (j, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = j;
            }
        }
        let mut v: Vec<f64> = (0..self.d).map(|r| vecs[r * self.d + best]).collect();
        if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-12) {
            if lead < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
        }
        Ok((v, vals[best]))
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let mut tensors = mlp_tensors("head", &self.head);
        tensors.push(Tensor::new("state_mean", vec![self.state_mean.len()], self.state_mean.clone()));
        tensors.push(Tensor::new("state_std", vec![self.state_std.len()], self.state_std.clone()));
        tensors.push(Tensor::new(
            "target_stats",
            vec![2],
            vec![self.target_mean, self.target_std],
        ));
        tensors.push(Tensor::new(
            "embed_stats",
            vec![2],
            vec![self.d as f64, self.mean_policy_norm],
        ));
        checkpoint::save(base, &tensors)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let tensors = checkpoint::load(base)?;
        let find = |n: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|t| t.name == n)
                .ok_or_else(|| Error::contract(format!("checkpoint is missing tensor {n:?}")))
        };
        let ts = find("target_stats")?;
        let es = find("embed_stats")?;
        Ok(QuadraticPdvf {
            head: mlp_from_tensors(&tensors, "head")?,
            state_mean: find("state_mean")?.data.clone(),
            state_std: find("state_std")?.data.clone(),
            target_mean: ts.data[0],
            target_std: ts.data[1],
            d: es.data[0] as usize,
            mean_policy_norm: es.data[1],
        })
    }
}

/// Trains the quadratic head by the same Monte-Carlo regression — fresh
/// per-draw embeddings, with the policy embedding unit-normalized before
/// entering the form. The bank supplies the mean ‖z_π‖ kept for rescaling
/// eigenvector solutions back onto the decoder's scale.
pub fn train_quadratic(
    store: &ExperienceStore,
    encoders: &EncoderBundle,
    bank: &EmbeddingBank,
    cfg: &PdvfConfig,
    seed: u64,
    holdout: Option<(usize, usize)>,
) -> Result<QuadraticPdvf> {
    let sd = store.meta.state_dim;
    let (state_mean, state_std) = fit_state_stats(store, holdout);
    let (target_mean, target_std) = fit_target_stats(store, holdout);
    let d = encoders.d();

    let mut sizes = vec![sd + d];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(d * d);
    let tag: &[u64] = &holdout.map(|(i, k)| [i as u64, k as u64]).unwrap_or([u64::MAX, u64::MAX]);
    let mut init = stream(seed, "quad-init", tag);
    let head = Mlp::new(&sizes, Activation::Tanh, &mut init)?;
    let mut model = QuadraticPdvf {
        head,
        state_mean,
        state_std,
        target_mean,
        target_std,
        d,
        mean_policy_norm: bank.mean_policy_norm,
    };

    let mut opt = Adam::new(model.head.n_params(), cfg.lr);
    let mut rng = stream(seed, "quad-train", tag);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let head = model.head.bind(&mut tape);
        let mut losses = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let tuple = draw_training_tuple(store, holdout, cfg, &mut rng)?;
            let zh = unit(&encoders.embed_policy(&tuple.behavior.pairs))?;
            let mut x = standardize(&tuple.state, &model.state_mean, &model.state_std);
            x.extend_from_slice(&encoders.embed_env(&tuple.context.tuples));
            let x = tape.constant(&x);
            let a = head.forward(&mut tape, x);
            let zv = tape.constant(&zh);
            let az = tape.matvec(a, d, d, zv);
            let q = tape.dot(zv, az);
            let y = tape.constant(&[(tuple.ret - model.target_mean) / model.target_std]);
            let e = tape.sub(q, y);
            losses.push(tape.dot(e, e));
        }
        let loss = tape.mean_scalars(&losses);
        ensure_finite_scalar(tape.scalar(loss), &format!("quadratic regression loss at step {step}"))?;
        let grads = tape.backward(loss);
        let mut g = model.head.zeros_like();
        head.grad_into(&grads, &mut g);
        opt.step(&mut model.head.params, &g);
    }
    Ok(model)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major).
/// Returns (eigenvalues, eigenvectors) with eigenvector j in column j.
pub fn jacobi_eigen(a: &[f64], d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != d * d {
        return Err(Error::contract("eigensolver needs a square matrix"));
    }
    let mut m = a.to_vec();
    for r in 0..d {
        for c in 0..d {
            if (m[r * d + c] - m[c * d + r]).abs() > 1e-9 {
                return Err(Error::Eigen("matrix is not symmetric".into()));
            }
        }
    }
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..d {
            for c in 0..d {
                if r != c {
                    s += m[r * d + c] * m[r * d + c];
                }
            }
        }
        s
    };
    for _sweep in 0..100 {
        if off(&m) < 1e-24 {
            let vals = (0..d).map(|i| m[i * d + i]).collect();
            return Ok((vals, v));
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m[p * d + q];
                if apq.abs() < 1e-18 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q of m.
                for i in 0..d {
                    let aip = m[i * d + p];
                    let aiq = m[i * d + q];
                    m[i * d + p] = c * aip - s * aiq;
                    m[i * d + q] = s * aip + c * aiq;
                }
                for i in 0..d {
                    let api = m[p * d + i];
                    let aqi = m[q * d + i];
                    m[p * d + i] = c * api - s * aqi;
                    m[q * d + i] = s * api + c * aqi;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    Err(Error::Eigen("Jacobi sweeps did not converge".into()))
}
