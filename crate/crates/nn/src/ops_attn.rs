use crate::ops_linear::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc};
use crate::tape::{BackFn, Tape, Var};
use crate::tensor::Tensor;

/// Copy a (rows × hd) block at column offset `h*hd` out of a (R × heads*hd) matrix.
fn gather_block(src: &[f32], row0: usize, rows: usize, width: usize, col0: usize, hd: usize, out: &mut [f32]) {
    for r in 0..rows {
        let s = (row0 + r) * width + col0;
        out[r * hd..(r + 1) * hd].copy_from_slice(&src[s..s + hd]);
    }
}

fn scatter_block_add(dst: &mut [f32], row0: usize, rows: usize, width: usize, col0: usize, hd: usize, src: &[f32]) {
    for r in 0..rows {
        let d = (row0 + r) * width + col0;
        for j in 0..hd {
            dst[d + j] += src[r * hd + j];
        }
    }
}

impl<'s> Tape<'s> {
    /// Multi-head scaled dot-product attention over independent groups.
    ///
    /// `q` has groups·sq rows, `k`/`v` have groups·skv rows; all are
    /// (heads·hd) wide. Attention runs within each (group, head) pair.
    /// With `causal` set (requires sq == skv), position i attends to j ≤ i.
    pub fn attention(&self, q: Var, k: Var, v: Var, groups: usize, heads: usize, causal: bool) -> Var {
        let width = q.cols;
        assert_eq!(k.cols, width);
        assert_eq!(v.cols, width);
        assert_eq!(width % heads, 0, "width must divide into heads");
        assert_eq!(q.rows % groups, 0);
        assert_eq!(k.rows % groups, 0);
        assert_eq!(k.rows, v.rows);
        let hd = width / heads;
        let sq = q.rows / groups;
        let skv = k.rows / groups;
        if causal {
            assert_eq!(sq, skv, "causal attention requires square scores");
        }
        let scale = 1.0 / (hd as f32).sqrt();

        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = vec![0.0f32; q.rows * width];
        let mut probs = vec![0.0f32; groups * heads * sq * skv];

        let mut qb = vec![0.0f32; sq * hd];
        let mut kb = vec![0.0f32; skv * hd];
        let mut vb = vec![0.0f32; skv * hd];
        let mut ob = vec![0.0f32; sq * hd];
        for g in 0..groups {
            for h in 0..heads {
                gather_block(qv.data(), g * sq, sq, width, h * hd, hd, &mut qb);
                gather_block(kv.data(), g * skv, skv, width, h * hd, hd, &mut kb);
                gather_block(vv.data(), g * skv, skv, width, h * hd, hd, &mut vb);
                let p = &mut probs[(g * heads + h) * sq * skv..(g * heads + h + 1) * sq * skv];
                matmul_nt_acc(&qb, &kb, sq, hd, skv, p);
                for i in 0..sq {
                    let row = &mut p[i * skv..(i + 1) * skv];
                    let limit = if causal { i + 1 } else { skv };
                    let mut m = f32::NEG_INFINITY;
                    for &s in &row[..limit] {
                        m = m.max(s * scale);
                    }
                    let mut sum = 0.0f32;
                    for (j, s) in row.iter_mut().enumerate() {
                        if j < limit {
                            *s = (*s * scale - m).exp();
                            sum += *s;
                        } else {
                            *s = 0.0;
                        }
                    }
                    for s in row[..limit].iter_mut() {
                        *s /= sum;
                    }
                }
                ob.fill(0.0);
                matmul_nn_acc(p, &vb, sq, skv, hd, &mut ob);
                scatter_block_add(&mut out, g * sq, sq, width, h * hd, hd, &ob);
            }
        }

        let needs = self.requires(q) || self.requires(k) || self.requires(v);
        let (nq, nk, nv) = (self.requires(q), self.requires(k), self.requires(v));
        let (qc, kc, vc) = (qv.clone(), kv.clone(), vv.clone());
        let back: Option<BackFn> = if needs {
            Some(Box::new(move |grad, gs| {
                // recompute per-block scratch; probs are cached from forward
                let mut qb = vec![0.0f32; sq * hd];
                let mut kb = vec![0.0f32; skv * hd];
                let mut vb = vec![0.0f32; skv * hd];
                let mut dob = vec![0.0f32; sq * hd];
                let mut dqb = vec![0.0f32; sq * hd];
                let mut dkb = vec![0.0f32; skv * hd];
                let mut dvb = vec![0.0f32; skv * hd];
                let mut dp = vec![0.0f32; sq * skv];
                let mut dq_all = vec![0.0f32; sq * groups * width];
                let mut dk_all = vec![0.0f32; skv * groups * width];
                let mut dv_all = vec![0.0f32; skv * groups * width];
                for g in 0..groups {
                    for h in 0..heads {
                        let p = &probs[(g * heads + h) * sq * skv..(g * heads + h + 1) * sq * skv];
                        gather_block(grad, g * sq, sq, width, h * hd, hd, &mut dob);
                        gather_block(qc.data(), g * sq, sq, width, h * hd, hd, &mut qb);
                        gather_block(kc.data(), g * skv, skv, width, h * hd, hd, &mut kb);
                        gather_block(vc.data(), g * skv, skv, width, h * hd, hd, &mut vb);
                        // dV = Pᵀ dO
                        dvb.fill(0.0);
                        matmul_tn_acc(p, &dob, sq, skv, hd, &mut dvb);
                        // dP = dO Vᵀ
                        dp.fill(0.0);
                        matmul_nt_acc(&dob, &vb, sq, hd, skv, &mut dp);
                        // dS = P ⊙ (dP − rowsum(dP ⊙ P)); masked entries have P = 0
                        for i in 0..sq {
                            let pi = &p[i * skv..(i + 1) * skv];
                            let di = &mut dp[i * skv..(i + 1) * skv];
                            let dot: f32 = pi.iter().zip(di.iter()).map(|(a, b)| a * b).sum();
                            for j in 0..skv {
                                di[j] = pi[j] * (di[j] - dot) * scale;
                            }
                        }
                        // dQ = dS K ; dK = dSᵀ Q  (scale folded into dS)
                        dqb.fill(0.0);
                        matmul_nn_acc(&dp, &kb, sq, skv, hd, &mut dqb);
                        dkb.fill(0.0);
                        matmul_tn_acc(&dp, &qb, sq, skv, hd, &mut dkb);
                        scatter_block_add(&mut dq_all, g * sq, sq, width, h * hd, hd, &dqb);
                        scatter_block_add(&mut dk_all, g * skv, skv, width, h * hd, hd, &dkb);
                        scatter_block_add(&mut dv_all, g * skv, skv, width, h * hd, hd, &dvb);
                    }
                }
                if nq {
                    gs.add_to(q.id, |d| {
                        for (x, y) in d.iter_mut().zip(&dq_all) {
                            *x += *y;
                        }
                    });
                }
                if nk {
                    gs.add_to(k.id, |d| {
                        for (x, y) in d.iter_mut().zip(&dk_all) {
                            *x += *y;
                        }
                    });
                }
                if nv {
                    gs.add_to(v.id, |d| {
                        for (x, y) in d.iter_mut().zip(&dv_all) {
                            *x += *y;
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(q.rows, width, out), needs, None, back)
    }
}
