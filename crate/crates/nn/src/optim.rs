use crate::params::ParamStore;

/// Adam with decoupled weight decay fixed at zero and optional global-norm
/// gradient clipping. Moment buffers for frozen groups are left untouched so
/// freeze contracts stay byte-exact.
pub struct Adam {
    beta1: f32,
    beta2: f32,
    eps: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let m = (0..store.len()).map(|i| vec![0.0; store.get(i).value.numel()]).collect();
        let v = (0..store.len()).map(|i| vec![0.0; store.get(i).value.numel()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, m, v, t: 0 }
    }

    /// Apply one update. `grads` is flat-indexed like the store; parameters in
    /// groups rejected by `trainable` are skipped entirely.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Vec<f32>>],
        lr: f32,
        trainable: &dyn Fn(&str) -> bool,
        clip_norm: Option<f32>,
    ) {
        self.t += 1;
        let mut scale = 1.0f32;
        if let Some(max_norm) = clip_norm {
            let mut sq = 0.0f64;
            for (i, g) in grads.iter().enumerate() {
                if let Some(g) = g {
                    if trainable(store.group_of(i)) {
                        sq += g.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
                    }
                }
            }
            let norm = sq.sqrt() as f32;
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            if !trainable(store.group_of(i)) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = store.get_mut(i).value.data_mut();
            for j in 0..p.len() {
                let gj = g[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Running sum of per-clip gradients, merged in a fixed order so results do
/// not depend on which worker finished first.
pub fn accumulate_grads(total: &mut Vec<Option<Vec<f32>>>, part: &[Option<Vec<f32>>]) {
    if total.is_empty() {
        *total = vec![None; part.len()];
    }
    for (t, p) in total.iter_mut().zip(part) {
        match (t.as_mut(), p) {
            (_, None) => {}
            (Some(t), Some(p)) => {
                for (a, b) in t.iter_mut().zip(p) {
                    *a += *b;
                }
            }
            (None, Some(p)) => *t = Some(p.clone()),
        }
    }
}

pub fn scale_grads(grads: &mut [Option<Vec<f32>>], c: f32) {
    for g in grads.iter_mut().flatten() {
        for x in g.iter_mut() {
            *x *= c;
        }
    }
}
