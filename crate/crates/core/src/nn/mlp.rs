//! Fully connected networks over flat `f64` parameter vectors.
//!
//! Layout is fixed and documented so checkpoints and optimizer state can
//! address parameters by offset: for each layer, the weight matrix W_l
//! (out×in, row-major) followed by the bias b_l. The same struct serves two
//! calling modes — a plain forward pass for frozen/shadow copies, and a taped
//! forward for anything being differentiated. Both modes perform the
//! arithmetic in the same order, so they agree bit-for-bit.

use std::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::tape::{Grads, Tape, Var};
use crate::rng::Stream;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Tanh,
    Relu,
}

/// A multilayer perceptron: `sizes = [in, h1, ..., out]`, with the hidden
/// activation applied after every layer except the last (the output layer is
/// linear).
#[derive(Clone, Debug)]
pub struct Mlp {
    sizes: Vec<usize>,
    act: Activation,
    pub params: Vec<f64>,
}

/// (weight range, bias range, rows, cols) for one layer in the flat layout.
#[derive(Clone, Debug)]
pub struct LayerSpec {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub rows: usize,
    pub cols: usize,
}

impl Mlp {
    /// Builds an MLP with parameters drawn from U(−√(1/fan_in), √(1/fan_in))
    /// (weights and biases alike).
    pub fn new(sizes: &[usize], act: Activation, rng: &mut Stream) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::contract("Mlp needs at least an input and an output layer"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::contract("Mlp layer sizes must be positive"));
        }
        let mut params = Vec::new();
        for l in 1..sizes.len() {
            let (fan_in, fan_out) = (sizes[l - 1], sizes[l]);
            let bound = (1.0 / fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in + fan_out {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(Mlp { sizes: sizes.to_vec(), act, params })
    }

    /// Same layout, all parameters zero (useful as a gradient buffer mold).
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut off = 0;
        for l in 1..self.sizes.len() {
            let (cols, rows) = (self.sizes[l - 1], self.sizes[l]);
            let w = off..off + rows * cols;
            let b = w.end..w.end + rows;
            off = b.end;
            specs.push(LayerSpec { w, b, rows, cols });
        }
        specs
    }

    fn apply_act(&self, xs: &mut [f64]) {
        match self.act {
            Activation::Tanh => xs.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(0.0)),
        }
    }

    /// Plain forward pass (no gradient tracking).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "Mlp::forward input length");
        let specs = self.layers();
        let mut cur = x.to_vec();
        for (l, spec) in specs.iter().enumerate() {
            let mut next = vec![0.0; spec.rows];
            let w = &self.params[spec.w.clone()];
            let b = &self.params[spec.b.clone()];
            for i in 0..spec.rows {
                let row = &w[i * spec.cols..(i + 1) * spec.cols];
                let mut acc = 0.0;
                for j in 0..spec.cols {
                    acc += row[j] * cur[j];
                }
                next[i] = acc;
            }
            for i in 0..spec.rows {
                next[i] += b[i];
            }
            if l + 1 < specs.len() {
                self.apply_act(&mut next);
            }
            cur = next;
        }
        cur
    }

    /// Binds the parameters onto a tape as differentiable leaves.
    pub fn bind(&self, tape: &mut Tape) -> MlpBinding {
        self.bind_inner(tape, true)
    }

    /// Binds the parameters as constants: gradients still flow *through* the
    /// network to its inputs, but never *into* it.
    pub fn bind_frozen(&self, tape: &mut Tape) -> MlpBinding {
        self.bind_inner(tape, false)
    }

    fn bind_inner(&self, tape: &mut Tape, trainable: bool) -> MlpBinding {
        let mut layers = Vec::new();
        for spec in self.layers() {
            let wv = &self.params[spec.w.clone()];
            let bv = &self.params[spec.b.clone()];
            let (w, b) = if trainable {
                (tape.leaf(wv), tape.leaf(bv))
            } else {
                (tape.constant(wv), tape.constant(bv))
            };
            layers.push(BoundLayer { w, b, rows: spec.rows, cols: spec.cols });
        }
        MlpBinding { layers, act: self.act, in_dim: self.in_dim() }
    }
}

struct BoundLayer {
    w: Var,
    b: Var,
    rows: usize,
    cols: usize,
}

/// Tape-bound view of an [`Mlp`]. One binding can run any number of forward
/// passes on the same tape; their gradients accumulate into the shared
/// parameter leaves.
pub struct MlpBinding {
    layers: Vec<BoundLayer>,
    act: Activation,
    in_dim: usize,
}

impl MlpBinding {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        assert_eq!(tape.value(x).len(), self.in_dim, "MlpBinding::forward input length");
        let n = self.layers.len();
        let mut cur = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let h = tape.matvec(layer.w, layer.rows, layer.cols, cur);
            let h = tape.add(h, layer.b);
            cur = if l + 1 < n {
                match self.act {
                    Activation::Tanh => tape.tanh(h),
                    Activation::Relu => tape.relu(h),
                }
            } else {
                h
            };
        }
        cur
    }

    /// Copies this binding's gradients into a flat buffer matching the
    /// source [`Mlp`] layout. Untouched blocks come out zero.
    pub fn grad_into(&self, grads: &Grads, out: &mut [f64]) {
        let mut off = 0;
        for layer in &self.layers {
            let nw = layer.rows * layer.cols;
            write_block(grads.get(layer.w), &mut out[off..off + nw]);
            off += nw;
            write_block(grads.get(layer.b), &mut out[off..off + layer.rows]);
            off += layer.rows;
        }
        assert_eq!(off, out.len(), "gradient buffer length mismatch");
    }
}

fn write_block(g: &[f64], out: &mut [f64]) {
    if g.is_empty() {
        out.fill(0.0);
    } else {
        out.copy_from_slice(g);
    }
}
