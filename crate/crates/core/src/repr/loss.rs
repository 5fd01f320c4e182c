//! The five losses of the representation stage plus the dynamics-prediction
//! loss used by the ablation encoder. All take a tape and already-entered
//! nodes, so callers control exactly which parameters receive gradients:
//! momentum/detached embeddings enter as constants, frozen heads via frozen
//! bindings.

use crate::error::{Error, Result};
use crate::nn::{MlpBinding, Tape, Var};
use crate::repr::encoder::MiHeadBinding;
use crate::store::Transition;

/// InfoNCE with in-batch negatives: anchor i's positive is `positives[i]`,
/// its negatives are every other positive. Loss is
/// −mean_i [ s(a_i, p_i) − log Σ_j exp s(a_i, p_j) ] with s(a, p) = aᵀ W p.
pub fn infonce(tape: &mut Tape, w: Var, d: usize, anchors: &[Var], positives: &[Var]) -> Result<Var> {
    if anchors.len() != positives.len() {
        return Err(Error::contract("one positive per anchor required"));
    }
    if anchors.len() < 2 {
        return Err(Error::contract("InfoNCE needs at least one negative (batch of two anchors)"));
    }
    let wp: Vec<Var> = positives.iter().map(|&p| tape.matvec(w, d, d, p)).collect();
    let mut gaps = Vec::with_capacity(anchors.len());
    for (i, &a) in anchors.iter().enumerate() {
        let row: Vec<Var> = wp.iter().map(|&x| tape.dot(a, x)).collect();
        let lse = tape.logsumexp(&row);
        gaps.push(tape.sub(row[i], lse));
    }
    let mean = tape.mean_scalars(&gaps);
    Ok(tape.scale(mean, -1.0))
}

/// Action-recovery loss for one policy embedding: mean squared Euclidean
/// error of the decoder's action prediction over the probe pairs.
pub fn policy_recovery(
    tape: &mut Tape,
    decoder: &MlpBinding,
    pairs: &[(Vec<f64>, Vec<f64>)],
    z_pi: Var,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::contract("policy recovery needs at least one (s, a) pair"));
    }
    let mut errs = Vec::with_capacity(pairs.len());
    for (s, a) in pairs {
        let s_in = tape.constant(s);
        let x = tape.concat(&[s_in, z_pi]);
        let pred = decoder.forward(tape, x);
        let target = tape.constant(a);
        let e = tape.sub(pred, target);
        errs.push(tape.dot(e, e));
    }
    Ok(tape.mean_scalars(&errs))
}

/// Negative mean conditional log-likelihood −mean_i log q(y_i | x_i) under a
/// Gaussian head. Serves both the head's own MLE objective (embeddings
/// entered as constants) and the completeness term (embeddings traced,
/// targets constant).
pub fn gaussian_nll(tape: &mut Tape, head: &MiHeadBinding, xs: &[Var], ys: &[Var]) -> Result<Var> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::contract("conditional likelihood needs matched (x, y) batches"));
    }
    let mut lps = Vec::with_capacity(xs.len());
    for (&x, &y) in xs.iter().zip(ys) {
        let (mean, logvar) = head.forward(tape, x);
        lps.push(tape.gaussian_logpdf(mean, logvar, y));
    }
    let m = tape.mean_scalars(&lps);
    Ok(tape.scale(m, -1.0))
}

/// Sampled CLUB upper bound on I(z_e; z_π) with the conditioning variable
/// shuffled for the marginal term:
/// mean_i [ log q(z_e_i | z_π_i) − log q(z_e_i | z_π_{perm(i)}) ].
/// The head must be entered frozen by the caller — this loss never trains it.
pub fn club(
    tape: &mut Tape,
    head: &MiHeadBinding,
    z_pi: &[Var],
    z_e: &[Var],
    perm: &[usize],
) -> Result<Var> {
    let b = z_pi.len();
    if b < 2 {
        return Err(Error::contract("CLUB needs a batch of at least two pairs to shuffle"));
    }
    if z_e.len() != b || perm.len() != b {
        return Err(Error::contract("CLUB batch lengths must match"));
    }
    let mut seen = vec![false; b];
    for &p in perm {
        if p >= b || seen[p] {
            return Err(Error::contract("CLUB shuffle must be a permutation of the batch"));
        }
        seen[p] = true;
    }
    let mut diffs = Vec::with_capacity(b);
    for i in 0..b {
        let (mean_j, logvar_j) = head.forward(tape, z_pi[i]);
        let joint = tape.gaussian_logpdf(mean_j, logvar_j, z_e[i]);
        let (mean_m, logvar_m) = head.forward(tape, z_pi[perm[i]]);
        let marginal = tape.gaussian_logpdf(mean_m, logvar_m, z_e[i]);
        diffs.push(tape.sub(joint, marginal));
    }
    Ok(tape.mean_scalars(&diffs))
}

/// Mean squared next-state prediction error with a shared environment
/// embedding: mean_i ‖head(s_i ⊕ a_i ⊕ z_e) − s′_i‖².
pub fn dynamics_prediction(
    tape: &mut Tape,
    head: &MlpBinding,
    transitions: &[Transition],
    z_e: Var,
) -> Result<Var> {
    if transitions.is_empty() {
        return Err(Error::contract("dynamics prediction needs at least one transition"));
    }
    let mut errs = Vec::with_capacity(transitions.len());
    for tr in transitions {
        let s = tape.constant(&tr.s);
        let a = tape.constant(&tr.a);
        let x = tape.concat(&[s, a, z_e]);
        let pred = head.forward(tape, x);
        let target = tape.constant(&tr.s_next);
        let e = tape.sub(pred, target);
        errs.push(tape.dot(e, e));
    }
    Ok(tape.mean_scalars(&errs))
}
