//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Node values are plain `Vec<f64>` vectors; matrices exist only as flat
//! parameter leaves consumed by [`Tape::matvec`]. Nodes are appended in
//! topological order, so the backward pass is a single reverse sweep with
//! per-op vector–Jacobian products. The tape is rebuilt every optimization
//! step — graphs here are a few thousand nodes, so construction cost is
//! negligible next to the matrix work.
//!
//! Gradient flow is controlled at the leaves: [`Tape::leaf`] participates in
//! differentiation, [`Tape::constant`] does not, and no op propagates into a
//! subgraph whose inputs are all constants. Freezing a module is therefore a
//! matter of binding its parameters as constants; detaching a value is a
//! matter of re-entering it as a constant.

/// Handle to a tape node.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(u32);

impl Var {
    #[inline]
    fn idx(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    Leaf,
    /// y = W x with `w` a flat rows×cols matrix leaf (row-major).
    MatVec { w: Var, x: Var, rows: usize, cols: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    /// Elementwise clamp; gradient passes through inside [lo, hi] (inclusive).
    Clamp { x: Var, lo: f64, hi: f64 },
    /// Elementwise min; ties route the gradient to the first argument.
    Min(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    /// Mean of equal-length vectors.
    MeanPool(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    /// Stable log Σ exp over scalar nodes.
    LogSumExp(Vec<Var>),
    /// Σ_d log N(x_d; mean_d, exp(logvar_d)) as one scalar node.
    GaussLogPdf { mean: Var, logvar: Var, x: Var },
}

pub struct Tape {
    vals: Vec<Vec<f64>>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes the loss does
/// not depend on (or that were constants) report an empty slice.
pub struct Grads {
    g: Vec<Vec<f64>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `v`; empty slice means identically zero.
    pub fn get(&self, v: Var) -> &[f64] {
        &self.g[v.idx()]
    }

    /// Dense copy of the gradient for a node of length `len`.
    pub fn dense(&self, v: Var, len: usize) -> Vec<f64> {
        let g = self.get(v);
        if g.is_empty() {
            vec![0.0; len]
        } else {
            assert_eq!(g.len(), len, "gradient length mismatch");
            g.to_vec()
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), ops: Vec::new(), needs_grad: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[v.idx()]
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a node of length {}", val.len());
        val[0]
    }

    fn push(&mut self, val: Vec<f64>, op: Op, needs: bool) -> Var {
        let id = self.ops.len();
        assert!(id < u32::MAX as usize, "tape overflow");
        self.vals.push(val);
        self.ops.push(op);
        self.needs_grad.push(needs);
        Var(id as u32)
    }

    fn needs(&self, v: Var) -> bool {
        self.needs_grad[v.idx()]
    }

    /// Differentiable leaf (parameter slice or input being optimized).
    pub fn leaf(&mut self, val: &[f64]) -> Var {
        self.push(val.to_vec(), Op::Leaf, true)
    }

    /// Non-differentiable leaf (data, detached value, frozen parameter).
    pub fn constant(&mut self, val: &[f64]) -> Var {
        self.push(val.to_vec(), Op::Leaf, false)
    }

    pub fn matvec(&mut self, w: Var, rows: usize, cols: usize, x: Var) -> Var {
        assert_eq!(self.vals[w.idx()].len(), rows * cols, "matvec: bad matrix length");
        assert_eq!(self.vals[x.idx()].len(), cols, "matvec: bad input length");
        let mut y = vec![0.0; rows];
        {
            let wv = &self.vals[w.idx()];
            let xv = &self.vals[x.idx()];
            for i in 0..rows {
                let row = &wv[i * cols..(i + 1) * cols];
                let mut acc = 0.0;
                for j in 0..cols {
                    acc += row[j] * xv[j];
                }
                y[i] = acc;
            }
        }
        let needs = self.needs(w) || self.needs(x);
        self.push(y, Op::MatVec { w, x, rows, cols }, needs)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let av = &self.vals[a.idx()];
        let bv = &self.vals[b.idx()];
        assert_eq!(av.len(), bv.len(), "elementwise op length mismatch");
        let y: Vec<f64> = av.iter().zip(bv).map(|(&x, &z)| f(x, z)).collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(y, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| x + z, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| x - z, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| x * z, Op::Mul(a, b))
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, z| if x <= z { x } else { z }, Op::Min(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y: Vec<f64> = self.vals[a.idx()].iter().map(|&x| c * x).collect();
        let needs = self.needs(a);
        self.push(y, Op::Scale(a, c), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y: Vec<f64> = self.vals[x.idx()].iter().map(|&v| v.tanh()).collect();
        let needs = self.needs(x);
        self.push(y, Op::Tanh(x), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y: Vec<f64> = self.vals[x.idx()].iter().map(|&v| v.max(0.0)).collect();
        let needs = self.needs(x);
        self.push(y, Op::Relu(x), needs)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y: Vec<f64> = self.vals[x.idx()].iter().map(|&v| v.exp()).collect();
        let needs = self.needs(x);
        self.push(y, Op::Exp(x), needs)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        assert!(lo < hi, "clamp: lo must be < hi");
        let y: Vec<f64> = self.vals[x.idx()].iter().map(|&v| v.clamp(lo, hi)).collect();
        let needs = self.needs(x);
        self.push(y, Op::Clamp { x, lo, hi }, needs)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut y = Vec::new();
        for &p in parts {
            y.extend_from_slice(&self.vals[p.idx()]);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(y, Op::Concat(parts.to_vec()), needs)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.vals[x.idx()];
        assert!(start + len <= xv.len(), "slice out of range");
        let y = xv[start..start + len].to_vec();
        let needs = self.needs(x);
        self.push(y, Op::Slice { x, start, len }, needs)
    }

    /// Mean of equal-length vectors (deep-set pooling).
    pub fn mean_pool(&mut self, items: &[Var]) -> Var {
        assert!(!items.is_empty(), "mean_pool of nothing");
        let len = self.vals[items[0].idx()].len();
        let mut y = vec![0.0; len];
        for &it in items {
            let v = &self.vals[it.idx()];
            assert_eq!(v.len(), len, "mean_pool length mismatch");
            for (acc, &x) in y.iter_mut().zip(v) {
                *acc += x;
            }
        }
        let inv = 1.0 / items.len() as f64;
        for acc in &mut y {
            *acc *= inv;
        }
        let needs = items.iter().any(|&p| self.needs(p));
        self.push(y, Op::MeanPool(items.to_vec()), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.vals[x.idx()].iter().sum();
        let needs = self.needs(x);
        self.push(vec![s], Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = &self.vals[x.idx()];
        assert!(!xv.is_empty(), "mean of empty vector");
        let s: f64 = xv.iter().sum::<f64>() / xv.len() as f64;
        let needs = self.needs(x);
        self.push(vec![s], Op::Mean(x), needs)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let av = &self.vals[a.idx()];
        let bv = &self.vals[b.idx()];
        assert_eq!(av.len(), bv.len(), "dot length mismatch");
        let s: f64 = av.iter().zip(bv).map(|(&x, &z)| x * z).sum();
        let needs = self.needs(a) || self.needs(b);
        self.push(vec![s], Op::Dot(a, b), needs)
    }

    /// Stable log Σ exp over scalar nodes. Invariant under a common shift of
    /// all inputs (up to the usual float rounding).
    pub fn logsumexp(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "logsumexp of nothing");
        let vals: Vec<f64> = xs
            .iter()
            .map(|&v| {
                let x = &self.vals[v.idx()];
                assert_eq!(x.len(), 1, "logsumexp expects scalar nodes");
                x[0]
            })
            .collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vals.iter().map(|&x| (x - m).exp()).sum();
        let y = m + s.ln();
        let needs = xs.iter().any(|&p| self.needs(p));
        self.push(vec![y], Op::LogSumExp(xs.to_vec()), needs)
    }

    /// Log-density of a diagonal Gaussian, summed over dimensions:
    /// Σ_d [ −½·ln(2π) − ½·logvar_d − ½·(x_d − mean_d)²·exp(−logvar_d) ].
    pub fn gaussian_logpdf(&mut self, mean: Var, logvar: Var, x: Var) -> Var {
        let mv = &self.vals[mean.idx()];
        let lv = &self.vals[logvar.idx()];
        let xv = &self.vals[x.idx()];
        assert_eq!(mv.len(), lv.len(), "gaussian_logpdf: mean/logvar mismatch");
        assert_eq!(mv.len(), xv.len(), "gaussian_logpdf: mean/x mismatch");
        const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
        let mut acc = 0.0;
        for d in 0..mv.len() {
            let e = xv[d] - mv[d];
            acc += -HALF_LN_2PI - 0.5 * lv[d] - 0.5 * e * e * (-lv[d]).exp();
        }
        let needs = self.needs(mean) || self.needs(logvar) || self.needs(x);
        self.push(vec![acc], Op::GaussLogPdf { mean, logvar, x }, needs)
    }

    /// Mean of scalar nodes (averaging a batch of per-sample losses).
    pub fn mean_scalars(&mut self, xs: &[Var]) -> Var {
        self.mean_pool(xs)
    }

    /// Runs the reverse sweep from scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.vals[loss.idx()].len(), 1, "backward expects a scalar loss");
        let n = self.ops.len();
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); n];
        if !self.needs_grad[loss.idx()] {
            return Grads { g };
        }
        g[loss.idx()] = vec![1.0];

        // Accumulate `gy` into the gradient slot of node `j`.
        fn slot<'a>(g: &'a mut [Vec<f64>], j: Var, len: usize) -> &'a mut [f64] {
            let s = &mut g[j.idx()];
            if s.is_empty() {
                s.resize(len, 0.0);
            }
            &mut s[..]
        }

        for id in (0..n).rev() {
            if !self.needs_grad[id] || g[id].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut g[id]);
            match &self.ops[id] {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let (rows, cols) = (*rows, *cols);
                    let xv = &self.vals[x.idx()];
                    let wv = &self.vals[w.idx()];
                    if self.needs(*w) {
                        let gw = slot(&mut g, *w, rows * cols);
                        for i in 0..rows {
                            let gyi = gy[i];
                            if gyi != 0.0 {
                                let row = &mut gw[i * cols..(i + 1) * cols];
                                for j in 0..cols {
                                    row[j] += gyi * xv[j];
                                }
                            }
                        }
                    }
                    if self.needs(*x) {
                        let gx = slot(&mut g, *x, cols);
                        for i in 0..rows {
                            let gyi = gy[i];
                            if gyi != 0.0 {
                                let row = &wv[i * cols..(i + 1) * cols];
                                for j in 0..cols {
                                    gx[j] += gyi * row[j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &(v, sgn) in &[(*a, 1.0), (*b, 1.0)] {
                        if self.needs(v) {
                            let gv = slot(&mut g, v, gy.len());
                            for (gi, &gyi) in gv.iter_mut().zip(&gy) {
                                *gi += sgn * gyi;
                            }
                        }
                    }
                }
                Op::Sub(a, b) => {
                    for &(v, sgn) in &[(*a, 1.0), (*b, -1.0)] {
                        if self.needs(v) {
                            let gv = slot(&mut g, v, gy.len());
                            for (gi, &gyi) in gv.iter_mut().zip(&gy) {
                                *gi += sgn * gyi;
                            }
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.vals[b.idx()].clone();
                        let ga = slot(&mut g, *a, gy.len());
                        for i in 0..gy.len() {
                            ga[i] += gy[i] * bv[i];
                        }
                    }
                    if self.needs(*b) {
                        let av = self.vals[a.idx()].clone();
                        let gb = slot(&mut g, *b, gy.len());
                        for i in 0..gy.len() {
                            gb[i] += gy[i] * av[i];
                        }
                    }
                }
                Op::Min(a, b) => {
                    let av = &self.vals[a.idx()];
                    let bv = &self.vals[b.idx()];
                    if self.needs(*a) {
                        let mask: Vec<f64> =
                            av.iter().zip(bv).map(|(&x, &z)| if x <= z { 1.0 } else { 0.0 }).collect();
                        let ga = slot(&mut g, *a, gy.len());
                        for i in 0..gy.len() {
                            ga[i] += gy[i] * mask[i];
                        }
                    }
                    if self.needs(*b) {
                        let mask: Vec<f64> =
                            av.iter().zip(bv).map(|(&x, &z)| if x <= z { 0.0 } else { 1.0 }).collect();
                        let gb = slot(&mut g, *b, gy.len());
                        for i in 0..gy.len() {
                            gb[i] += gy[i] * mask[i];
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if self.needs(*a) {
                        let ga = slot(&mut g, *a, gy.len());
                        for (gi, &gyi) in ga.iter_mut().zip(&gy) {
                            *gi += c * gyi;
                        }
                    }
                }
                Op::Tanh(x) => {
                    if self.needs(*x) {
                        let yv = self.vals[id].clone();
                        let gx = slot(&mut g, *x, gy.len());
                        for i in 0..gy.len() {
                            gx[i] += gy[i] * (1.0 - yv[i] * yv[i]);
                        }
                    }
                }
                Op::Relu(x) => {
                    if self.needs(*x) {
                        let xv = self.vals[x.idx()].clone();
                        let gx = slot(&mut g, *x, gy.len());
                        for i in 0..gy.len() {
                            if xv[i] > 0.0 {
                                gx[i] += gy[i];
                            }
                        }
                    }
                }
                Op::Exp(x) => {
                    if self.needs(*x) {
                        let yv = self.vals[id].clone();
                        let gx = slot(&mut g, *x, gy.len());
                        for i in 0..gy.len() {
                            gx[i] += gy[i] * yv[i];
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    if self.needs(*x) {
                        let xv = self.vals[x.idx()].clone();
                        let (lo, hi) = (*lo, *hi);
                        let gx = slot(&mut g, *x, gy.len());
                        for i in 0..gy.len() {
                            if xv[i] >= lo && xv[i] <= hi {
                                gx[i] += gy[i];
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.vals[p.idx()].len();
                        if self.needs(p) {
                            let gp = slot(&mut g, p, len);
                            for i in 0..len {
                                gp[i] += gy[off + i];
                            }
                        }
                        off += len;
                    }
                }
                Op::Slice { x, start, len } => {
                    if self.needs(*x) {
                        let full = self.vals[x.idx()].len();
                        let gx = slot(&mut g, *x, full);
                        for i in 0..*len {
                            gx[start + i] += gy[i];
                        }
                    }
                }
                Op::MeanPool(items) => {
                    let inv = 1.0 / items.len() as f64;
                    for &it in items {
                        if self.needs(it) {
                            let gi = slot(&mut g, it, gy.len());
                            for (gv, &gyi) in gi.iter_mut().zip(&gy) {
                                *gv += inv * gyi;
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    if self.needs(*x) {
                        let len = self.vals[x.idx()].len();
                        let gx = slot(&mut g, *x, len);
                        for gi in gx.iter_mut() {
                            *gi += gy[0];
                        }
                    }
                }
                Op::Mean(x) => {
                    if self.needs(*x) {
                        let len = self.vals[x.idx()].len();
                        let inv = gy[0] / len as f64;
                        let gx = slot(&mut g, *x, len);
                        for gi in gx.iter_mut() {
                            *gi += inv;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    if self.needs(*a) {
                        let bv = self.vals[b.idx()].clone();
                        let ga = slot(&mut g, *a, bv.len());
                        for i in 0..bv.len() {
                            ga[i] += gy[0] * bv[i];
                        }
                    }
                    if self.needs(*b) {
                        let av = self.vals[a.idx()].clone();
                        let gb = slot(&mut g, *b, av.len());
                        for i in 0..av.len() {
                            gb[i] += gy[0] * av[i];
                        }
                    }
                }
                Op::LogSumExp(xs) => {
                    let y = self.vals[id][0];
                    for &xi in xs {
                        if self.needs(xi) {
                            let w = (self.vals[xi.idx()][0] - y).exp();
                            let gx = slot(&mut g, xi, 1);
                            gx[0] += gy[0] * w;
                        }
                    }
                }
                Op::GaussLogPdf { mean, logvar, x } => {
                    let mv = self.vals[mean.idx()].clone();
                    let lv = self.vals[logvar.idx()].clone();
                    let xv = self.vals[x.idx()].clone();
                    let d = mv.len();
                    if self.needs(*mean) {
                        let gm = slot(&mut g, *mean, d);
                        for i in 0..d {
                            gm[i] += gy[0] * (xv[i] - mv[i]) * (-lv[i]).exp();
                        }
                    }
                    if self.needs(*logvar) {
                        let gl = slot(&mut g, *logvar, d);
                        for i in 0..d {
                            let e = xv[i] - mv[i];
                            gl[i] += gy[0] * (-0.5 + 0.5 * e * e * (-lv[i]).exp());
                        }
                    }
                    if self.needs(*x) {
                        let gx = slot(&mut g, *x, d);
                        for i in 0..d {
                            gx[i] += gy[0] * (mv[i] - xv[i]) * (-lv[i]).exp();
                        }
                    }
                }
            }
            g[id] = gy;
        }
        Grads { g }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}
