//! The building blocks of the representation stage: permutation-invariant
//! deep-set encoders, the bilinear contrastive score, and the small Gaussian
//! heads used by the mutual-information terms.

use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Mlp, MlpBinding, Tape, Var};
use crate::rng::Stream;

/// Log-variance clamp applied by every Gaussian head.
pub const LOGVAR_MIN: f64 = -6.0;
pub const LOGVAR_MAX: f64 = 2.0;

/// Set encoder: per-element MLP, mean pool, tanh, linear projection. The
/// pooled mean makes the embedding independent of element order.
#[derive(Clone, Debug)]
pub struct DeepSet {
    pub feature: Mlp,
    pub project: Mlp,
}

impl DeepSet {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Stream) -> Result<Self> {
        Ok(DeepSet {
            feature: Mlp::new(&[in_dim, hidden, hidden], Activation::Tanh, rng)?,
            project: Mlp::new(&[hidden, out_dim], Activation::Tanh, rng)?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.feature.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.project.out_dim()
    }

    /// Plain (non-traced) embedding; arithmetic mirrors the traced path
    /// operation for operation, so the two agree bit-for-bit.
    pub fn embed(&self, items: &[Vec<f64>]) -> Vec<f64> {
        assert!(!items.is_empty(), "cannot embed an empty set");
        let mut pooled = vec![0.0; self.feature.out_dim()];
        for item in items {
            let f = self.feature.forward(item);
            for (acc, x) in pooled.iter_mut().zip(&f) {
                *acc += x;
            }
        }
        let inv = 1.0 / items.len() as f64;
        for acc in &mut pooled {
            *acc *= inv;
        }
        let squashed: Vec<f64> = pooled.iter().map(|x| x.tanh()).collect();
        self.project.forward(&squashed)
    }

    pub fn bind(&self, tape: &mut Tape) -> DeepSetBinding {
        DeepSetBinding { feature: self.feature.bind(tape), project: self.project.bind(tape) }
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> DeepSetBinding {
        DeepSetBinding {
            feature: self.feature.bind_frozen(tape),
            project: self.project.bind_frozen(tape),
        }
    }
}

/// A deep set's parameters entered on a tape.
pub struct DeepSetBinding {
    pub feature: MlpBinding,
    pub project: MlpBinding,
}

impl DeepSetBinding {
    pub fn forward(&self, tape: &mut Tape, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "cannot embed an empty set");
        let feats: Vec<Var> = items.iter().map(|&x| self.feature.forward(tape, x)).collect();
        let pooled = tape.mean_pool(&feats);
        let squashed = tape.tanh(pooled);
        self.project.forward(tape, squashed)
    }

    /// Accumulates this binding's parameter gradients into flat buffers laid
    /// out like `DeepSet::{feature, project}.params`.
    pub fn grad_into(&self, grads: &Grads, feature_out: &mut [f64], project_out: &mut [f64]) {
        self.feature.grad_into(grads, feature_out);
        self.project.grad_into(grads, project_out);
    }
}

/// Bilinear contrastive score s(a, b) = aᵀ W b with an unconstrained square
/// matrix, initialized to the identity so scores start as plain dot products.
#[derive(Clone, Debug)]
pub struct Bilinear {
    pub w: Vec<f64>,
    pub d: usize,
}

impl Bilinear {
    pub fn identity(d: usize) -> Self {
        let mut w = vec![0.0; d * d];
        for i in 0..d {
            w[i * d + i] = 1.0;
        }
        Bilinear { w, d }
    }

    pub fn bind(&self, tape: &mut Tape) -> Var {
        tape.leaf(&self.w)
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> Var {
        tape.constant(&self.w)
    }

    /// Traced score given a bound matrix node.
    pub fn score(tape: &mut Tape, w: Var, d: usize, a: Var, b: Var) -> Var {
        let wb = tape.matvec(w, d, d, b);
        tape.dot(a, wb)
    }
}

/// Gaussian conditional head q(y | x): an MLP producing a mean and a
/// diagonal log-variance, the latter clamped to [−6, 2].
#[derive(Clone, Debug)]
pub struct MiHead {
    pub net: Mlp,
    pub out_dim: usize,
}

impl MiHead {
    pub fn new(in_dim: usize, out_dim: usize, hidden: usize, rng: &mut Stream) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::contract("gaussian head needs a positive output dimension"));
        }
        Ok(MiHead {
            net: Mlp::new(&[in_dim, hidden, hidden, 2 * out_dim], Activation::Tanh, rng)?,
            out_dim,
        })
    }

    /// Plain (mean, logvar) prediction with the clamp applied.
    pub fn predict(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let y = self.net.forward(x);
        let mean = y[..self.out_dim].to_vec();
        let logvar = y[self.out_dim..].iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
        (mean, logvar)
    }

    pub fn bind(&self, tape: &mut Tape) -> MiHeadBinding {
        MiHeadBinding { net: self.net.bind(tape), out_dim: self.out_dim }
    }

    pub fn bind_frozen(&self, tape: &mut Tape) -> MiHeadBinding {
        MiHeadBinding { net: self.net.bind_frozen(tape), out_dim: self.out_dim }
    }
}

pub struct MiHeadBinding {
    pub net: MlpBinding,
    pub out_dim: usize,
}

impl MiHeadBinding {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> (Var, Var) {
        let y = self.net.forward(tape, x);
        let mean = tape.slice(y, 0, self.out_dim);
        let raw = tape.slice(y, self.out_dim, self.out_dim);
        let logvar = tape.clamp(raw, LOGVAR_MIN, LOGVAR_MAX);
        (mean, logvar)
    }
}
