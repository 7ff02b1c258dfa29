use wmlab_nn::Tensor;

/// One rectified-flow training draw in patch-token space. Linear interpolant
/// convention: xt = (1-t)·x0 + t·x1 and v_target = x1 - x0, so xt(0) = x0,
/// xt(1) = x1, and the target is independent of t.
#[derive(Clone, Debug)]
pub struct DiffusionSample {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: f32,
    pub xt: Tensor,
    pub v_target: Tensor,
}

impl DiffusionSample {
    pub fn draw(x1: &Tensor, x0: Tensor, t: f32) -> Self {
        assert_eq!((x0.rows(), x0.cols()), (x1.rows(), x1.cols()));
        let xt = Tensor::new(
            x1.rows(),
            x1.cols(),
            x0.data()
                .iter()
                .zip(x1.data())
                .map(|(n, d)| (1.0 - t) * n + t * d)
                .collect(),
        );
        let v_target = Tensor::new(
            x1.rows(),
            x1.cols(),
            x1.data().iter().zip(x0.data()).map(|(d, n)| d - n).collect(),
        );
        Self { x0, x1: x1.clone(), t, xt, v_target }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use wmlab_nn::CounterRng;

    fn pair(seed: u64) -> (Tensor, Tensor) {
        let mut rng = CounterRng::new(seed);
        let x1 = Tensor::from_fn(3, 4, |_, _| rng.uniform());
        let x0 = Tensor::from_fn(3, 4, |_, _| rng.normal());
        (x1, x0)
    }

    #[test]
    fn interpolant_boundary_identities() {
        let (x1, x0) = pair(1);
        let s0 = DiffusionSample::draw(&x1, x0.clone(), 0.0);
        assert_eq!(s0.xt, x0);
        let s1 = DiffusionSample::draw(&x1, x0.clone(), 1.0);
        for (a, b) in s1.xt.data().iter().zip(x1.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn velocity_target_is_independent_of_t() {
        let (x1, x0) = pair(2);
        let a = DiffusionSample::draw(&x1, x0.clone(), 0.2);
        let b = DiffusionSample::draw(&x1, x0, 0.9);
        assert_eq!(a.v_target, b.v_target);
    }

    #[test]
    fn scalar_arithmetic_example() {
        // x0 = 0, x1 = 2, t = 0.5 -> xt = 1, v_target = 2; a model that
        // outputs 1 incurs squared error (2 - 1)^2 = 1
        let x1 = Tensor::new(1, 1, vec![2.0]);
        let s = DiffusionSample::draw(&x1, Tensor::new(1, 1, vec![0.0]), 0.5);
        assert_eq!(s.xt.data()[0], 1.0);
        assert_eq!(s.v_target.data()[0], 2.0);
        let model_out = 1.0f32;
        let loss = (s.v_target.data()[0] - model_out).powi(2);
        assert_eq!(loss, 1.0);
    }
}
