use std::cell::RefCell;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`]. Carries dims so op code can shape-check
/// without borrowing the tape.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    pub(crate) id: usize,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
}

impl Var {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn numel(&self) -> usize {
        self.rows * self.cols
    }
}

pub(crate) type BackFn = Box<dyn Fn(&[f32], &mut GradStore)>;

pub(crate) struct Node {
    pub value: Tensor,
    pub backward: Option<BackFn>,
    pub requires: bool,
    pub param: Option<usize>, // flat param index for leaf parameters
}

/// Per-node gradient buffers, allocated lazily during the reverse sweep.
pub struct GradStore {
    slots: Vec<Option<Vec<f32>>>,
    sizes: Vec<usize>,
}

impl GradStore {
    pub fn add_to(&mut self, id: usize, f: impl FnOnce(&mut [f32])) {
        if self.slots[id].is_none() {
            self.slots[id] = Some(vec![0.0; self.sizes[id]]);
        }
        f(self.slots[id].as_mut().unwrap());
    }
}

/// Gradients produced by one backward pass.
pub struct Grads {
    pub by_param: Vec<Option<Vec<f32>>>,
    retained: Vec<(usize, Vec<f32>)>,
}

impl Grads {
    pub fn param(&self, id: ParamId) -> Option<&[f32]> {
        self.by_param[id.flat()].as_deref()
    }

    pub fn retained(&self, v: Var) -> Option<&[f32]> {
        self.retained.iter().find(|(id, _)| *id == v.id).map(|(_, g)| g.as_slice())
    }
}

/// Eager reverse-mode tape over a read-only [`ParamStore`]. Each op computes
/// its value immediately (so data-dependent control flow like vector
/// quantization can inspect it) and records a backward closure.
pub struct Tape<'s> {
    pub(crate) store: &'s ParamStore,
    pub(crate) nodes: RefCell<Vec<Node>>,
    param_vars: RefCell<Vec<Option<Var>>>,
    grad_enabled: bool,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(vec![None; store.len()]),
            grad_enabled: true,
        }
    }

    /// Forward-only tape: values are computed but no backward graph is kept.
    pub fn eval(store: &'s ParamStore) -> Self {
        let mut t = Self::new(store);
        t.grad_enabled = false;
        t
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn requires(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires
    }

    pub(crate) fn push(
        &self,
        value: Tensor,
        requires: bool,
        param: Option<usize>,
        backward: Option<BackFn>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let (rows, cols) = (value.rows(), value.cols());
        let requires = requires && self.grad_enabled;
        nodes.push(Node { value, backward: if requires { backward } else { None }, requires, param });
        Var { id, rows, cols }
    }

    /// Constant input; gradients are not propagated into it.
    pub fn input(&self, t: Tensor) -> Var {
        self.push(t, false, None, None)
    }

    /// Input that participates in differentiation (for probes and tests).
    pub fn input_grad(&self, t: Tensor) -> Var {
        self.push(t, true, None, None)
    }

    pub fn param(&self, id: ParamId) -> Var {
        let mut pv = self.param_vars.borrow_mut();
        if let Some(v) = pv[id.flat()] {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), true, Some(id.flat()), None);
        pv[id.flat()] = Some(v);
        v
    }

    /// Stop-gradient: same value, no backward edge.
    pub fn detach(&self, x: Var) -> Var {
        let v = self.value(x);
        self.push(v, false, None, None)
    }

    pub fn backward(&self, loss: Var) -> Grads {
        self.backward_retaining(loss, &[])
    }

    pub fn backward_retaining(&self, loss: Var, retain: &[Var]) -> Grads {
        assert!(self.grad_enabled, "backward on an eval tape");
        assert_eq!(loss.numel(), 1, "loss must be scalar");
        let nodes = self.nodes.borrow();
        let n = loss.id + 1;
        let sizes: Vec<usize> = nodes.iter().take(n).map(|nd| nd.value.numel()).collect();
        let mut gs = GradStore { slots: vec![None; n], sizes };
        gs.slots[loss.id] = Some(vec![1.0]);

        let mut by_param: Vec<Option<Vec<f32>>> = vec![None; self.store.len()];
        let mut retained: Vec<(usize, Vec<f32>)> = Vec::new();
        for i in (0..n).rev() {
            let Some(g) = gs.slots[i].take() else { continue };
            if !nodes[i].requires {
                continue;
            }
            if let Some(back) = &nodes[i].backward {
                back(&g, &mut gs);
            }
            if let Some(p) = nodes[i].param {
                by_param[p] = Some(g);
            } else if retain.iter().any(|v| v.id == i) {
                retained.push((i, g));
            }
        }
        Grads { by_param, retained }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_nodes_are_deduplicated() {
        let mut s = ParamStore::new();
        let w = s.add_zeros("g", "w", 2, 2);
        let t = Tape::new(&s);
        let a = t.param(w);
        let b = t.param(w);
        assert_eq!(a.id, b.id);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn eval_tape_skips_backward_bookkeeping() {
        let mut s = ParamStore::new();
        let w = s.add_normal("g", "w", 2, 2, 1.0, 0);
        let t = Tape::eval(&s);
        let x = t.param(w);
        let y = t.add(x, x);
        assert!(!t.requires(y));
    }
}
