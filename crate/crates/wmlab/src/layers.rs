//! Small parameter-bundle builders shared by the models.

use wmlab_nn::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, group: &str, name: &str, out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let w = store.add_linear_weight(group, &format!("{name}.w"), out_dim, in_dim, seed);
        let b = store.add_zeros(group, &format!("{name}.b"), 1, out_dim);
        Self { w, b: Some(b) }
    }

    /// Weight and bias both zero; the layer starts as a constant-zero map.
    pub fn zero(store: &mut ParamStore, group: &str, name: &str, out_dim: usize, in_dim: usize) -> Self {
        let w = store.add_zeros(group, &format!("{name}.w"), out_dim, in_dim);
        let b = store.add_zeros(group, &format!("{name}.b"), 1, out_dim);
        Self { w, b: Some(b) }
    }

    pub fn fwd(&self, t: &Tape, x: Var) -> Var {
        t.linear(x, t.param(self.w), self.b.map(|b| t.param(b)))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LnAffine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LnAffine {
    pub fn new(store: &mut ParamStore, group: &str, name: &str, width: usize) -> Self {
        let gamma = store.add(group, &format!("{name}.gamma"), Tensor::full(1, width, 1.0));
        let beta = store.add_zeros(group, &format!("{name}.beta"), 1, width);
        Self { gamma, beta }
    }

    pub fn fwd(&self, t: &Tape, x: Var) -> Var {
        t.layernorm_affine(x, t.param(self.gamma), t.param(self.beta))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Mha {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

impl Mha {
    pub fn new(store: &mut ParamStore, group: &str, name: &str, width: usize, heads: usize, seed: u64) -> Self {
        Self {
            wq: Linear::new(store, group, &format!("{name}.wq"), width, width, seed),
            wk: Linear::new(store, group, &format!("{name}.wk"), width, width, seed),
            wv: Linear::new(store, group, &format!("{name}.wv"), width, width, seed),
            wo: Linear::new(store, group, &format!("{name}.wo"), width, width, seed),
            heads,
        }
    }

    pub fn fwd(&self, t: &Tape, x_q: Var, x_kv: Var, groups: usize, causal: bool) -> Var {
        let q = self.wq.fwd(t, x_q);
        let k = self.wk.fwd(t, x_kv);
        let v = self.wv.fwd(t, x_kv);
        let o = t.attention(q, k, v, groups, self.heads, causal);
        self.wo.fwd(t, o)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub w1: Linear,
    pub w2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, group: &str, name: &str, width: usize, hidden: usize, seed: u64) -> Self {
        Self {
            w1: Linear::new(store, group, &format!("{name}.w1"), hidden, width, seed),
            w2: Linear::new(store, group, &format!("{name}.w2"), width, hidden, seed),
        }
    }

    pub fn fwd(&self, t: &Tape, x: Var) -> Var {
        self.w2.fwd(t, t.gelu(self.w1.fwd(t, x)))
    }
}
