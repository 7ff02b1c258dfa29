use crate::tape::{BackFn, Tape, Var};
use crate::tensor::Tensor;

/// Below this flop count a matmul is not worth a rayon dispatch.
#[cfg(feature = "parallel")]
const PAR_FLOPS: usize = 1 << 17;

#[inline]
fn axpy(dst: &mut [f32], src: &[f32], c: f32) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// out[M×N] += a[M×K] · b[K×N]
pub fn matmul_nn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row = |out_row: &mut [f32], i: usize| {
        for l in 0..k {
            axpy(out_row, &b[l * n..(l + 1) * n], a[i * k + l]);
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOPS {
        use rayon::prelude::*;
        out.par_chunks_mut(n).enumerate().for_each(|(i, o)| row(o, i));
        return;
    }
    for (i, o) in out.chunks_mut(n).enumerate() {
        row(o, i);
    }
}

/// out[M×N] += a[M×K] · b[N×K]ᵀ  (dot products of rows)
pub fn matmul_nt_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let row = |out_row: &mut [f32], i: usize| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (x, y) in ar.iter().zip(br) {
                acc += x * y;
            }
            *o += acc;
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOPS {
        use rayon::prelude::*;
        out.par_chunks_mut(n).enumerate().for_each(|(i, o)| row(o, i));
        return;
    }
    for (i, o) in out.chunks_mut(n).enumerate() {
        row(o, i);
    }
}

/// out[N×K] += a[M×N]ᵀ · b[M×K]
pub fn matmul_tn_acc(a: &[f32], b: &[f32], m: usize, n: usize, k: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), m * k);
    debug_assert_eq!(out.len(), n * k);
    let row = |out_row: &mut [f32], j: usize| {
        for i in 0..m {
            axpy(out_row, &b[i * k..(i + 1) * k], a[i * n + j]);
        }
    };
    #[cfg(feature = "parallel")]
    if m * k * n >= PAR_FLOPS {
        use rayon::prelude::*;
        out.par_chunks_mut(k).enumerate().for_each(|(j, o)| row(o, j));
        return;
    }
    for (j, o) in out.chunks_mut(k).enumerate() {
        row(o, j);
    }
}

impl<'s> Tape<'s> {
    /// a[M×K] · b[K×N]
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        assert_eq!(a.cols, b.rows, "matmul inner dim mismatch");
        let (m, k, n) = (a.rows, a.cols, b.cols);
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = vec![0.0f32; m * n];
        matmul_nn_acc(av.data(), bv.data(), m, k, n, &mut data);
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ac, bc) = (av.clone(), bv.clone());
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                if na {
                    gs.add_to(a.id, |d| matmul_nt_acc(g, bc.data(), m, n, k, d));
                }
                if nb {
                    gs.add_to(b.id, |d| matmul_tn_acc(ac.data(), g, m, k, n, d));
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(m, n, data), na || nb, None, back)
    }

    /// y = x · wᵀ + bias, with w stored as (out_features × in_features).
    pub fn linear(&self, x: Var, w: Var, bias: Option<Var>) -> Var {
        assert_eq!(x.cols, w.cols, "linear in_features mismatch");
        let (m, k, n) = (x.rows, x.cols, w.rows);
        let (xv, wv) = (self.value(x), self.value(w));
        let mut data = vec![0.0f32; m * n];
        matmul_nt_acc(xv.data(), wv.data(), m, k, n, &mut data);
        if let Some(b) = bias {
            assert_eq!(b.numel(), n, "bias size mismatch");
            let bv = self.value(b);
            for r in 0..m {
                axpy(&mut data[r * n..(r + 1) * n], bv.data(), 1.0);
            }
        }
        let (nx, nw) = (self.requires(x), self.requires(w));
        let nb = bias.map(|b| self.requires(b)).unwrap_or(false);
        let (xc, wc) = (xv.clone(), wv.clone());
        let back: Option<BackFn> = if nx || nw || nb {
            Some(Box::new(move |g, gs| {
                if nx {
                    gs.add_to(x.id, |d| matmul_nn_acc(g, wc.data(), m, n, k, d));
                }
                if nw {
                    gs.add_to(w.id, |d| matmul_tn_acc(g, xc.data(), m, n, k, d));
                }
                if let Some(b) = bias {
                    if nb {
                        gs.add_to(b.id, |d| {
                            for r in 0..m {
                                axpy(d, &g[r * n..(r + 1) * n], 1.0);
                            }
                        });
                    }
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(m, n, data), nx || nw || nb, None, back)
    }

    /// Row-wise layer normalization without affine parameters.
    pub fn layernorm(&self, x: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (rows, w) = (x.rows, x.cols);
        let xv = self.value(x);
        let mut data = vec![0.0f32; rows * w];
        let mut rstds = vec![0.0f32; rows];
        let mut means = vec![0.0f32; rows];
        for r in 0..rows {
            let xr = xv.row(r);
            let mean = xr.iter().map(|&v| v as f64).sum::<f64>() / w as f64;
            let var = xr.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w as f64;
            let rstd = 1.0 / (var + EPS).sqrt();
            means[r] = mean as f32;
            rstds[r] = rstd as f32;
            for j in 0..w {
                data[r * w + j] = ((xr[j] as f64 - mean) * rstd) as f32;
            }
        }
        let req = self.requires(x);
        let yc = Tensor::new(rows, w, data.clone());
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| {
                    for r in 0..rows {
                        let yr = yc.row(r);
                        let gr = &g[r * w..(r + 1) * w];
                        let gmean: f32 = gr.iter().sum::<f32>() / w as f32;
                        let gymean: f32 =
                            gr.iter().zip(yr).map(|(gi, yi)| gi * yi).sum::<f32>() / w as f32;
                        let rstd = rstds[r];
                        for j in 0..w {
                            d[r * w + j] += rstd * (gr[j] - gmean - yr[j] * gymean);
                        }
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(rows, w, data), req, None, back)
    }

    /// y = ln(x) ⊙ gamma + beta with gamma/beta as 1×W rows broadcast over rows.
    pub fn layernorm_affine(&self, x: Var, gamma: Var, beta: Var) -> Var {
        let normed = self.layernorm(x);
        let scaled = self.mul(normed, self.tile_rows(gamma, x.rows));
        self.add_tiled(scaled, beta)
    }
}
