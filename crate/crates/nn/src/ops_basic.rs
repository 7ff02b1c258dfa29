use crate::tape::{BackFn, Tape, Var};
use crate::tensor::Tensor;

#[inline]
fn add_assign(dst: &mut [f32], src: &[f32]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

#[inline]
fn sigmoid_f(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl<'s> Tape<'s> {
    fn unary(&self, x: Var, value: Tensor, dfdx: impl Fn(usize, f32) -> f32 + 'static) -> Var {
        let req = self.requires(x);
        let xv = self.value(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |dx| {
                    for (i, (d, gi)) in dx.iter_mut().zip(g).enumerate() {
                        *d += gi * dfdx(i, xv.data()[i]);
                    }
                })
            }))
        } else {
            None
        };
        self.push(value, req, None, back)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "add shape mismatch");
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f32> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let (na, nb) = (self.requires(a), self.requires(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                if na {
                    gs.add_to(a.id, |d| add_assign(d, g));
                }
                if nb {
                    gs.add_to(b.id, |d| add_assign(d, g));
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(a.rows, a.cols, data), na || nb, None, back)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "sub shape mismatch");
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f32> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let (na, nb) = (self.requires(a), self.requires(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                if na {
                    gs.add_to(a.id, |d| add_assign(d, g));
                }
                if nb {
                    gs.add_to(b.id, |d| {
                        for (x, gi) in d.iter_mut().zip(g) {
                            *x -= gi;
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(a.rows, a.cols, data), na || nb, None, back)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "mul shape mismatch");
        let (av, bv) = (self.value(a), self.value(b));
        let data: Vec<f32> = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ac, bc) = (av.clone(), bv.clone());
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                if na {
                    gs.add_to(a.id, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * bc.data()[i];
                        }
                    });
                }
                if nb {
                    gs.add_to(b.id, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * ac.data()[i];
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(a.rows, a.cols, data), na || nb, None, back)
    }

    pub fn scale(&self, x: Var, c: f32) -> Var {
        let xv = self.value(x);
        let data: Vec<f32> = xv.data().iter().map(|v| v * c).collect();
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| {
                    for (di, gi) in d.iter_mut().zip(g) {
                        *di += gi * c;
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, x.cols, data), req, None, back)
    }

    pub fn add_scalar(&self, x: Var, c: f32) -> Var {
        let xv = self.value(x);
        let data: Vec<f32> = xv.data().iter().map(|v| v + c).collect();
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| gs.add_to(x.id, |d| add_assign(d, g))))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, x.cols, data), req, None, back)
    }

    pub fn silu(&self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f32> = xv.data().iter().map(|&v| v * sigmoid_f(v)).collect();
        self.unary(x, Tensor::new(x.rows, x.cols, data), |_, v| {
            let s = sigmoid_f(v);
            s * (1.0 + v * (1.0 - s))
        })
    }

    pub fn gelu(&self, x: Var) -> Var {
        const C: f32 = 0.797_884_6; // sqrt(2/pi)
        const A: f32 = 0.044_715;
        let xv = self.value(x);
        let data: Vec<f32> = xv
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()))
            .collect();
        self.unary(x, Tensor::new(x.rows, x.cols, data), |_, v| {
            let u = C * (v + A * v * v * v);
            let t = u.tanh();
            0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * C * (1.0 + 3.0 * A * v * v)
        })
    }

    pub fn relu(&self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f32> = xv.data().iter().map(|&v| v.max(0.0)).collect();
        self.unary(x, Tensor::new(x.rows, x.cols, data), |_, v| if v > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f32> = xv.data().iter().map(|&v| sigmoid_f(v)).collect();
        self.unary(x, Tensor::new(x.rows, x.cols, data), |_, v| {
            let s = sigmoid_f(v);
            s * (1.0 - s)
        })
    }

    /// Clamp to [0, 1]; gradient passes only strictly inside the interval.
    pub fn clamp01(&self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f32> = xv.data().iter().map(|&v| v.clamp(0.0, 1.0)).collect();
        self.unary(x, Tensor::new(x.rows, x.cols, data), |_, v| {
            if v > 0.0 && v < 1.0 {
                1.0
            } else {
                0.0
            }
        })
    }

    /// x has A·B rows; e (B rows) is added to every block of B rows.
    pub fn add_tiled(&self, x: Var, e: Var) -> Var {
        assert_eq!(x.cols, e.cols);
        assert_eq!(x.rows % e.rows, 0, "add_tiled: rows must tile");
        let b = e.rows;
        let w = x.cols;
        let (xv, ev) = (self.value(x), self.value(e));
        let mut data = xv.data().to_vec();
        for r in 0..x.rows {
            let er = (r % b) * w;
            for j in 0..w {
                data[r * w + j] += ev.data()[er + j];
            }
        }
        let (nx, ne) = (self.requires(x), self.requires(e));
        let back: Option<BackFn> = if nx || ne {
            Some(Box::new(move |g, gs| {
                if nx {
                    gs.add_to(x.id, |d| add_assign(d, g));
                }
                if ne {
                    gs.add_to(e.id, |d| {
                        for r in 0..x.rows {
                            let er = (r % b) * w;
                            for j in 0..w {
                                d[er + j] += g[r * w + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, x.cols, data), nx || ne, None, back)
    }

    /// x has A·B rows grouped in A consecutive blocks of B; e (A rows) is
    /// added to every row of its block.
    pub fn add_grouped(&self, x: Var, e: Var) -> Var {
        assert_eq!(x.cols, e.cols);
        assert_eq!(x.rows % e.rows, 0, "add_grouped: rows must group");
        let bsz = x.rows / e.rows;
        let w = x.cols;
        let (xv, ev) = (self.value(x), self.value(e));
        let mut data = xv.data().to_vec();
        for r in 0..x.rows {
            let er = (r / bsz) * w;
            for j in 0..w {
                data[r * w + j] += ev.data()[er + j];
            }
        }
        let (nx, ne) = (self.requires(x), self.requires(e));
        let back: Option<BackFn> = if nx || ne {
            Some(Box::new(move |g, gs| {
                if nx {
                    gs.add_to(x.id, |d| add_assign(d, g));
                }
                if ne {
                    gs.add_to(e.id, |d| {
                        for r in 0..x.rows {
                            let er = (r / bsz) * w;
                            for j in 0..w {
                                d[er + j] += g[r * w + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, x.cols, data), nx || ne, None, back)
    }

    /// AdaLN-style modulation: y[r] = x[r] * (1 + scale[r/B]) + shift[r/B],
    /// where B = x.rows / scale.rows.
    pub fn film(&self, x: Var, scale: Var, shift: Var) -> Var {
        assert_eq!(scale.rows, shift.rows);
        assert_eq!(x.cols, scale.cols);
        assert_eq!(x.rows % scale.rows, 0);
        let bsz = x.rows / scale.rows;
        let w = x.cols;
        let (xv, sv, bv) = (self.value(x), self.value(scale), self.value(shift));
        let mut data = vec![0.0f32; x.rows * w];
        for r in 0..x.rows {
            let m = (r / bsz) * w;
            for j in 0..w {
                data[r * w + j] = xv.data()[r * w + j] * (1.0 + sv.data()[m + j]) + bv.data()[m + j];
            }
        }
        let (nx, ns, nb) = (self.requires(x), self.requires(scale), self.requires(shift));
        let (xc, sc) = (xv.clone(), sv.clone());
        let back: Option<BackFn> = if nx || ns || nb {
            Some(Box::new(move |g, gs| {
                if nx {
                    gs.add_to(x.id, |d| {
                        for r in 0..x.rows {
                            let m = (r / bsz) * w;
                            for j in 0..w {
                                d[r * w + j] += g[r * w + j] * (1.0 + sc.data()[m + j]);
                            }
                        }
                    });
                }
                if ns {
                    gs.add_to(scale.id, |d| {
                        for r in 0..x.rows {
                            let m = (r / bsz) * w;
                            for j in 0..w {
                                d[m + j] += g[r * w + j] * xc.data()[r * w + j];
                            }
                        }
                    });
                }
                if nb {
                    gs.add_to(shift.id, |d| {
                        for r in 0..x.rows {
                            let m = (r / bsz) * w;
                            for j in 0..w {
                                d[m + j] += g[r * w + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, x.cols, data), nx || ns || nb, None, back)
    }

    /// Gated residual: y[r] = x[r] + gate[r/B] ⊙ h[r].
    pub fn gate_res(&self, x: Var, h: Var, gate: Var) -> Var {
        assert_eq!((x.rows, x.cols), (h.rows, h.cols));
        assert_eq!(x.cols, gate.cols);
        assert_eq!(x.rows % gate.rows, 0);
        let bsz = x.rows / gate.rows;
        let w = x.cols;
        let (xv, hv, gv) = (self.value(x), self.value(h), self.value(gate));
        let mut data = vec![0.0f32; x.rows * w];
        for r in 0..x.rows {
            let m = (r / bsz) * w;
            for j in 0..w {
                data[r * w + j] = xv.data()[r * w + j] + gv.data()[m + j] * hv.data()[r * w + j];
            }
        }
        let (nx, nh, ng) = (self.requires(x), self.requires(h), self.requires(gate));
        let (hc, gc) = (hv.clone(), gv.clone());
        let back: Option<BackFn> = if nx || nh || ng {
            Some(Box::new(move |g, gs| {
                if nx {
                    gs.add_to(x.id, |d| add_assign(d, g));
                }
                if nh {
                    gs.add_to(h.id, |d| {
                        for r in 0..x.rows {
                            let m = (r / bsz) * w;
                            for j in 0..w {
                                d[r * w + j] += g[r * w + j] * gc.data()[m + j];
                            }
                        }
                    });
                }
                if ng {
                    gs.add_to(gate.id, |d| {
                        for r in 0..x.rows {
                            let m = (r / bsz) * w;
                            for j in 0..w {
                                d[m + j] += g[r * w + j] * hc.data()[r * w + j];
                            }
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, x.cols, data), nx || nh || ng, None, back)
    }

    pub fn tile_rows(&self, x: Var, n: usize) -> Var {
        assert_eq!(x.rows, 1, "tile_rows expects a single row");
        let xv = self.value(x);
        let w = x.cols;
        let mut data = Vec::with_capacity(n * w);
        for _ in 0..n {
            data.extend_from_slice(xv.data());
        }
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| {
                    for r in 0..n {
                        for j in 0..w {
                            d[j] += g[r * w + j];
                        }
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(n, w, data), req, None, back)
    }

    /// Row r of the output comes from `a` when mask[r] is true, else from `b`.
    pub fn select_rows(&self, a: Var, b: Var, mask: &[bool]) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols));
        assert_eq!(mask.len(), a.rows);
        let w = a.cols;
        let (av, bv) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(a.rows * w);
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { av.row(r) } else { bv.row(r) });
        }
        let mask: Vec<bool> = mask.to_vec();
        let (na, nb) = (self.requires(a), self.requires(b));
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                for (r, &m) in mask.iter().enumerate() {
                    let (src, need) = if m { (a.id, na) } else { (b.id, nb) };
                    if need {
                        gs.add_to(src, |d| add_assign(&mut d[r * w..(r + 1) * w], &g[r * w..(r + 1) * w]));
                    }
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(a.rows, a.cols, data), na || nb, None, back)
    }

    /// Transpose the two leading group axes: input rows indexed (a, b) become
    /// output rows indexed (b, a). Used to flip between frame-major and
    /// position-major token layouts.
    pub fn regroup(&self, x: Var, a: usize, b: usize) -> Var {
        assert_eq!(x.rows, a * b, "regroup row mismatch");
        let w = x.cols;
        let xv = self.value(x);
        let mut data = vec![0.0f32; x.rows * w];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * w;
                let dst = (j * a + i) * w;
                data[dst..dst + w].copy_from_slice(&xv.data()[src..src + w]);
            }
        }
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| {
                    for i in 0..a {
                        for j in 0..b {
                            let src = (j * a + i) * w;
                            let dst = (i * b + j) * w;
                            add_assign(&mut d[dst..dst + w], &g[src..src + w]);
                        }
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, w, data), req, None, back)
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= x.rows, "slice_rows out of range");
        let w = x.cols;
        let xv = self.value(x);
        let data = xv.data()[start * w..(start + len) * w].to_vec();
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| add_assign(&mut d[start * w..(start + len) * w], g))
            }))
        } else {
            None
        };
        self.push(Tensor::new(len, w, data), req, None, back)
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= x.cols, "slice_cols out of range");
        let w = x.cols;
        let xv = self.value(x);
        let mut data = Vec::with_capacity(x.rows * len);
        for r in 0..x.rows {
            data.extend_from_slice(&xv.data()[r * w + start..r * w + start + len]);
        }
        let req = self.requires(x);
        let rows = x.rows;
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| {
                    for r in 0..rows {
                        add_assign(&mut d[r * w + start..r * w + start + len], &g[r * len..(r + 1) * len]);
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(x.rows, len, data), req, None, back)
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let w = parts[0].cols;
        assert!(parts.iter().all(|p| p.cols == w), "concat_rows col mismatch");
        let total: usize = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(total * w);
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let needs: Vec<bool> = parts.iter().map(|p| self.requires(*p)).collect();
        let any = needs.iter().any(|&n| n);
        let parts: Vec<Var> = parts.to_vec();
        let back: Option<BackFn> = if any {
            Some(Box::new(move |g, gs| {
                let mut off = 0;
                for (p, need) in parts.iter().zip(&needs) {
                    let n = p.rows * w;
                    if *need {
                        gs.add_to(p.id, |d| add_assign(d, &g[off..off + n]));
                    }
                    off += n;
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(total, w, data), any, None, back)
    }

    /// Zero-copy shape reinterpretation (rows*cols must be preserved).
    pub fn reinterp(&self, x: Var, rows: usize, cols: usize) -> Var {
        assert_eq!(rows * cols, x.numel(), "reinterp must preserve element count");
        let v = self.value(x).reshaped(rows, cols);
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| gs.add_to(x.id, |d| add_assign(d, g))))
        } else {
            None
        };
        self.push(v, req, None, back)
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        let n = x.numel();
        let sum: f64 = xv.data().iter().map(|&v| v as f64).sum();
        let req = self.requires(x);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                let c = g[0] / n as f32;
                gs.add_to(x.id, |d| {
                    for v in d.iter_mut() {
                        *v += c;
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(1, 1, vec![(sum / n as f64) as f32]), req, None, back)
    }

    /// Mean squared error over all elements (f64 accumulation).
    pub fn mse(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "mse shape mismatch");
        let (av, bv) = (self.value(a), self.value(b));
        let n = a.numel();
        let mut sum = 0.0f64;
        for (x, y) in av.data().iter().zip(bv.data()) {
            let d = (x - y) as f64;
            sum += d * d;
        }
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ac, bc) = (av.clone(), bv.clone());
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                let c = 2.0 * g[0] / n as f32;
                if na {
                    gs.add_to(a.id, |d| {
                        for i in 0..n {
                            d[i] += c * (ac.data()[i] - bc.data()[i]);
                        }
                    });
                }
                if nb {
                    gs.add_to(b.id, |d| {
                        for i in 0..n {
                            d[i] -= c * (ac.data()[i] - bc.data()[i]);
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(1, 1, vec![(sum / n as f64) as f32]), na || nb, None, back)
    }

    /// Mean absolute error over all elements.
    pub fn l1(&self, a: Var, b: Var) -> Var {
        assert_eq!((a.rows, a.cols), (b.rows, b.cols), "l1 shape mismatch");
        let (av, bv) = (self.value(a), self.value(b));
        let n = a.numel();
        let mut sum = 0.0f64;
        for (x, y) in av.data().iter().zip(bv.data()) {
            sum += (x - y).abs() as f64;
        }
        let (na, nb) = (self.requires(a), self.requires(b));
        let (ac, bc) = (av.clone(), bv.clone());
        let back: Option<BackFn> = if na || nb {
            Some(Box::new(move |g, gs| {
                let c = g[0] / n as f32;
                if na {
                    gs.add_to(a.id, |d| {
                        for i in 0..n {
                            d[i] += c * (ac.data()[i] - bc.data()[i]).signum_or_zero();
                        }
                    });
                }
                if nb {
                    gs.add_to(b.id, |d| {
                        for i in 0..n {
                            d[i] -= c * (ac.data()[i] - bc.data()[i]).signum_or_zero();
                        }
                    });
                }
            }))
        } else {
            None
        };
        self.push(Tensor::new(1, 1, vec![(sum / n as f64) as f32]), na || nb, None, back)
    }

    pub fn softmax_rows(&self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, w) = (x.rows, x.cols);
        let mut data = vec![0.0f32; rows * w];
        for r in 0..rows {
            softmax_row(xv.row(r), &mut data[r * w..(r + 1) * w]);
        }
        let probs = Tensor::new(rows, w, data);
        let req = self.requires(x);
        let pc = probs.clone();
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(x.id, |d| {
                    for r in 0..rows {
                        let p = pc.row(r);
                        let gr = &g[r * w..(r + 1) * w];
                        let dot: f32 = p.iter().zip(gr).map(|(pi, gi)| pi * gi).sum();
                        for j in 0..w {
                            d[r * w + j] += p[j] * (gr[j] - dot);
                        }
                    }
                })
            }))
        } else {
            None
        };
        self.push(probs, req, None, back)
    }

    /// Mean cross-entropy of row-wise softmax against integer targets.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize]) -> Var {
        assert_eq!(targets.len(), logits.rows, "one target per row");
        let xv = self.value(logits);
        let (rows, w) = (logits.rows, logits.cols);
        let mut probs = vec![0.0f32; rows * w];
        let mut loss = 0.0f64;
        for r in 0..rows {
            softmax_row(xv.row(r), &mut probs[r * w..(r + 1) * w]);
            let p = probs[r * w + targets[r]].max(1e-30);
            loss -= (p as f64).ln();
        }
        loss /= rows as f64;
        let req = self.requires(logits);
        let targets: Vec<usize> = targets.to_vec();
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                let c = g[0] / rows as f32;
                gs.add_to(logits.id, |d| {
                    for r in 0..rows {
                        for j in 0..w {
                            let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                            d[r * w + j] += c * (probs[r * w + j] - onehot);
                        }
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(1, 1, vec![loss as f32]), req, None, back)
    }

    /// Straight-through estimator: forward takes `values`, backward passes the
    /// gradient through to `pre` unchanged (identity Jacobian).
    pub fn straight_through(&self, pre: Var, values: Tensor) -> Var {
        assert_eq!((pre.rows, pre.cols), (values.rows(), values.cols()));
        let req = self.requires(pre);
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| gs.add_to(pre.id, |d| add_assign(d, g))))
        } else {
            None
        };
        self.push(values, req, None, back)
    }

    /// y[i] = table[idx[i]]; gradients scatter-add back into the table rows.
    pub fn gather_rows(&self, table: Var, idx: &[usize]) -> Var {
        let w = table.cols;
        let tv = self.value(table);
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            assert!(i < table.rows, "gather index out of range");
            data.extend_from_slice(tv.row(i));
        }
        let req = self.requires(table);
        let n = idx.len();
        let idx: Vec<usize> = idx.to_vec();
        let back: Option<BackFn> = if req {
            Some(Box::new(move |g, gs| {
                gs.add_to(table.id, |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        add_assign(&mut d[i * w..(i + 1) * w], &g[r * w..(r + 1) * w]);
                    }
                })
            }))
        } else {
            None
        };
        self.push(Tensor::new(n, w, data), req, None, back)
    }
}

fn softmax_row(row: &[f32], out: &mut [f32]) {
    let m = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - m).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

trait SignumOrZero {
    fn signum_or_zero(self) -> f32;
}

impl SignumOrZero for f32 {
    fn signum_or_zero(self) -> f32 {
        if self > 0.0 {
            1.0
        } else if self < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}
