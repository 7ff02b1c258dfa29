//! Finite-difference checks for every differentiable op on the tape.

use wmlab_nn::{CounterRng, ParamId, ParamStore, Tape, Tensor, Var};

fn assert_close(num: f32, ana: f32, ctx: &str) {
    let tol = 2e-3 + 1e-2 * ana.abs().max(num.abs());
    assert!(
        (num - ana).abs() <= tol,
        "{ctx}: numeric {num} vs analytic {ana} (tol {tol})"
    );
}

/// Generic central-difference check of d(loss)/d(param) for every registered
/// parameter coordinate.
fn check_grads(
    setup: impl Fn(&mut ParamStore) -> Vec<ParamId>,
    loss_fn: impl Fn(&Tape, &[Var]) -> Var,
    ctx: &str,
) {
    let mut store = ParamStore::new();
    let ids = setup(&mut store);

    let eval = |store: &ParamStore| -> f32 {
        let tape = Tape::new(store);
        let vars: Vec<Var> = ids.iter().map(|&i| tape.param(i)).collect();
        let loss = loss_fn(&tape, &vars);
        tape.value(loss).data()[0]
    };

    let tape = Tape::new(&store);
    let vars: Vec<Var> = ids.iter().map(|&i| tape.param(i)).collect();
    let loss = loss_fn(&tape, &vars);
    let grads = tape.backward(loss);

    let h = 1e-2f32;
    for &id in &ids {
        let n = store.value(id).numel();
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.get_mut(id.flat()).value.data_mut()[j] = orig + h;
            let lp = eval(&store);
            store.get_mut(id.flat()).value.data_mut()[j] = orig - h;
            let lm = eval(&store);
            store.get_mut(id.flat()).value.data_mut()[j] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = grads.param(id).map(|g| g[j]).unwrap_or(0.0);
            assert_close(num, ana, &format!("{ctx} param{} [{j}]", id.flat()));
        }
    }
}

fn probe(tape: &Tape, y: Var, seed: u64) -> Var {
    let mut rng = CounterRng::keyed(&[seed, 0xabcd]);
    let t = Tensor::from_fn(y.rows(), y.cols(), |_, _| rng.uniform_in(-1.0, 1.0));
    tape.mean_all(tape.mul(y, tape.input(t)))
}

fn one(rows: usize, cols: usize, std: f32) -> impl Fn(&mut ParamStore) -> Vec<ParamId> {
    move |s| vec![s.add_normal("g", "x", rows, cols, std, 11)]
}

fn two(r1: usize, c1: usize, r2: usize, c2: usize) -> impl Fn(&mut ParamStore) -> Vec<ParamId> {
    move |s| {
        vec![
            s.add_normal("g", "a", r1, c1, 0.8, 12),
            s.add_normal("g", "b", r2, c2, 0.8, 13),
        ]
    }
}

#[test]
fn elementwise_ops() {
    check_grads(two(3, 4, 3, 4), |t, v| probe(t, t.add(v[0], v[1]), 1), "add");
    check_grads(two(3, 4, 3, 4), |t, v| probe(t, t.sub(v[0], v[1]), 2), "sub");
    check_grads(two(3, 4, 3, 4), |t, v| probe(t, t.mul(v[0], v[1]), 3), "mul");
    check_grads(one(3, 4, 0.8), |t, v| probe(t, t.scale(v[0], -1.7), 4), "scale");
    check_grads(one(3, 4, 0.8), |t, v| probe(t, t.add_scalar(v[0], 0.3), 5), "add_scalar");
}

#[test]
fn activations() {
    check_grads(one(4, 5, 1.0), |t, v| probe(t, t.silu(v[0]), 6), "silu");
    check_grads(one(4, 5, 1.0), |t, v| probe(t, t.gelu(v[0]), 7), "gelu");
    check_grads(one(4, 5, 1.0), |t, v| probe(t, t.sigmoid(v[0]), 8), "sigmoid");
    // keep relu inputs away from the kink
    check_grads(
        |s| vec![s.add("g", "x", Tensor::new(2, 3, vec![-0.9, -0.4, 0.3, 0.8, 1.2, -1.5]))],
        |t, v| probe(t, t.relu(v[0]), 9),
        "relu",
    );
    // clamp01 interior and exterior points, none near the boundary
    check_grads(
        |s| vec![s.add("g", "x", Tensor::new(2, 3, vec![-0.5, 0.2, 0.7, 1.5, 0.4, 0.9]))],
        |t, v| probe(t, t.clamp01(v[0]), 10),
        "clamp01",
    );
}

#[test]
fn broadcast_and_group_ops() {
    check_grads(two(6, 4, 2, 4), |t, v| probe(t, t.add_tiled(v[0], v[1]), 11), "add_tiled");
    check_grads(two(6, 4, 3, 4), |t, v| probe(t, t.add_grouped(v[0], v[1]), 12), "add_grouped");
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "x", 6, 4, 0.8, 21),
                s.add_normal("g", "s", 2, 4, 0.5, 22),
                s.add_normal("g", "b", 2, 4, 0.5, 23),
            ]
        },
        |t, v| probe(t, t.film(v[0], v[1], v[2]), 13),
        "film",
    );
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "x", 6, 4, 0.8, 24),
                s.add_normal("g", "h", 6, 4, 0.8, 25),
                s.add_normal("g", "gate", 3, 4, 0.5, 26),
            ]
        },
        |t, v| probe(t, t.gate_res(v[0], v[1], v[2]), 14),
        "gate_res",
    );
    check_grads(one(1, 5, 0.8), |t, v| probe(t, t.tile_rows(v[0], 4), 15), "tile_rows");
    check_grads(
        two(4, 3, 4, 3),
        |t, v| probe(t, t.select_rows(v[0], v[1], &[true, false, false, true]), 16),
        "select_rows",
    );
}

#[test]
fn shape_ops() {
    check_grads(one(6, 3, 0.8), |t, v| probe(t, t.regroup(v[0], 2, 3), 17), "regroup");
    check_grads(one(5, 3, 0.8), |t, v| probe(t, t.slice_rows(v[0], 1, 3), 18), "slice_rows");
    check_grads(one(3, 6, 0.8), |t, v| probe(t, t.slice_cols(v[0], 2, 3), 19), "slice_cols");
    check_grads(
        two(2, 4, 3, 4),
        |t, v| probe(t, t.concat_rows(&[v[0], v[1], v[0]]), 20),
        "concat_rows",
    );
    check_grads(one(4, 6, 0.8), |t, v| probe(t, t.reinterp(v[0], 8, 3), 21), "reinterp");
}

#[test]
fn reductions_and_losses() {
    check_grads(one(3, 4, 0.8), |t, v| t.mean_all(v[0]), "mean_all");
    check_grads(two(3, 4, 3, 4), |t, v| t.mse(v[0], v[1]), "mse");
    // keep |a - b| well away from the kink at zero
    check_grads(
        |s| {
            let mut rng = CounterRng::new(77);
            let a = Tensor::from_fn(3, 4, |_, _| rng.uniform_in(-1.0, 1.0));
            let b = Tensor::from_fn(3, 4, |r, c| {
                a.data()[r * 4 + c] + if (r + c) % 2 == 0 { 0.5 } else { -0.5 }
            });
            vec![s.add("g", "a", a), s.add("g", "b", b)]
        },
        |t, v| t.l1(v[0], v[1]),
        "l1",
    );
    check_grads(one(3, 5, 1.2), |t, v| probe(t, t.softmax_rows(v[0]), 22), "softmax_rows");
    check_grads(
        one(4, 5, 1.2),
        |t, v| t.cross_entropy(v[0], &[0, 3, 2, 2]),
        "cross_entropy",
    );
}

#[test]
fn straight_through_jacobian_is_identity() {
    let mut store = ParamStore::new();
    let x = store.add_normal("g", "x", 2, 3, 1.0, 30);
    let tape = Tape::new(&store);
    let xv = tape.param(x);
    let q = Tensor::from_fn(2, 3, |r, c| (r * 3 + c) as f32); // arbitrary quantized values
    let y = tape.straight_through(xv, q.clone());
    assert_eq!(tape.value(y), q);
    let loss = probe(&tape, y, 23);
    let grads = tape.backward(loss);
    // gradient w.r.t. x equals gradient w.r.t. y elementwise (identity Jacobian)
    let mut rng = CounterRng::keyed(&[23, 0xabcd]);
    let gy: Vec<f32> = (0..6).map(|_| rng.uniform_in(-1.0, 1.0) / 6.0).collect();
    for (a, b) in grads.param(x).unwrap().iter().zip(&gy) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn gather_rows_scatters_gradients() {
    check_grads(
        |s| vec![s.add_normal("g", "table", 4, 3, 0.8, 31)],
        |t, v| probe(t, t.gather_rows(v[0], &[2, 0, 2, 3]), 24),
        "gather_rows",
    );
}

#[test]
fn linear_algebra_ops() {
    check_grads(two(3, 4, 4, 2), |t, v| probe(t, t.matmul(v[0], v[1]), 25), "matmul");
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "x", 3, 4, 0.8, 32),
                s.add_normal("g", "w", 5, 4, 0.8, 33),
                s.add_normal("g", "b", 1, 5, 0.8, 34),
            ]
        },
        |t, v| probe(t, t.linear(v[0], v[1], Some(v[2])), 26),
        "linear",
    );
    check_grads(one(4, 6, 1.0), |t, v| probe(t, t.layernorm(v[0]), 27), "layernorm");
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "x", 4, 6, 1.0, 35),
                s.add_normal("g", "gamma", 1, 6, 0.3, 36),
                s.add_normal("g", "beta", 1, 6, 0.3, 37),
            ]
        },
        |t, v| probe(t, t.layernorm_affine(v[0], v[1], v[2]), 28),
        "layernorm_affine",
    );
}

#[test]
fn attention_grads() {
    // full attention, 2 groups, 2 heads, sq == skv
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "q", 6, 8, 0.7, 40),
                s.add_normal("g", "k", 6, 8, 0.7, 41),
                s.add_normal("g", "v", 6, 8, 0.7, 42),
            ]
        },
        |t, v| probe(t, t.attention(v[0], v[1], v[2], 2, 2, false), 29),
        "attention_full",
    );
    // causal
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "q", 8, 4, 0.7, 43),
                s.add_normal("g", "k", 8, 4, 0.7, 44),
                s.add_normal("g", "v", 8, 4, 0.7, 45),
            ]
        },
        |t, v| probe(t, t.attention(v[0], v[1], v[2], 2, 2, true), 30),
        "attention_causal",
    );
    // cross attention: query length differs from key/value length
    check_grads(
        |s| {
            vec![
                s.add_normal("g", "q", 2, 6, 0.7, 46),
                s.add_normal("g", "k", 5, 6, 0.7, 47),
                s.add_normal("g", "v", 5, 6, 0.7, 48),
            ]
        },
        |t, v| probe(t, t.attention(v[0], v[1], v[2], 1, 3, false), 31),
        "attention_cross",
    );
}

#[test]
fn causal_attention_masks_future() {
    let mut store = ParamStore::new();
    let q = store.add_normal("g", "q", 4, 4, 0.7, 50);
    let k = store.add_normal("g", "k", 4, 4, 0.7, 51);
    let v = store.add_normal("g", "v", 4, 4, 0.7, 52);
    let tape = Tape::new(&store);
    let out1 = tape.value(tape.attention(tape.param(q), tape.param(k), tape.param(v), 1, 2, true));

    // perturb the last key/value row; earlier outputs must be bit-identical
    store.get_mut(k.flat()).value.data_mut()[12] += 5.0;
    store.get_mut(v.flat()).value.data_mut()[14] -= 3.0;
    let tape = Tape::new(&store);
    let out2 = tape.value(tape.attention(tape.param(q), tape.param(k), tape.param(v), 1, 2, true));

    assert_eq!(&out1.data()[..12], &out2.data()[..12], "rows before the perturbed step changed");
    assert_ne!(out1.data()[12..], out2.data()[12..]);
}

#[test]
fn matmul_kernels_match_naive_loops() {
    let mut rng = CounterRng::new(99);
    for &(m, k, n) in &[(3usize, 4usize, 5usize), (7, 2, 3), (16, 16, 16)] {
        let a: Vec<f32> = (0..m * k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut out = vec![0.0f32; m * n];
        wmlab_nn::matmul_nn_acc(&a, &b, m, k, n, &mut out);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for l in 0..k {
                    acc += a[i * k + l] * b[l * n + j];
                }
                assert!((out[i * n + j] - acc).abs() < 1e-4);
            }
        }

        let bt: Vec<f32> = (0..n * k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut out = vec![0.0f32; m * n];
        wmlab_nn::matmul_nt_acc(&a, &bt, m, k, n, &mut out);
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f32;
                for l in 0..k {
                    acc += a[i * k + l] * bt[j * k + l];
                }
                assert!((out[i * n + j] - acc).abs() < 1e-4);
            }
        }

        let c: Vec<f32> = (0..m * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let d: Vec<f32> = (0..m * k).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut out = vec![0.0f32; n * k];
        wmlab_nn::matmul_tn_acc(&c, &d, m, n, k, &mut out);
        for j in 0..n {
            for l in 0..k {
                let mut acc = 0.0f32;
                for i in 0..m {
                    acc += c[i * n + j] * d[i * k + l];
                }
                assert!((out[j * k + l] - acc).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn detached_values_block_gradients() {
    let mut store = ParamStore::new();
    let x = store.add_normal("g", "x", 2, 2, 1.0, 60);
    let tape = Tape::new(&store);
    let xv = tape.param(x);
    let loss = tape.mse(tape.detach(xv), tape.input(Tensor::zeros(2, 2)));
    let grads = tape.backward(loss);
    assert!(grads.param(x).is_none());
}
