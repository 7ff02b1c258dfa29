//! Flow-matching diffusion-transformer world model with additive AdaLN
//! action conditioning, causal temporal attention, and classifier-free
//! guidance at sampling time.

mod cond;
mod dit;
mod flow;
mod sampler;

pub use cond::ActionConditioner;
pub use dit::{Dit, Modulations};
pub use flow::DiffusionSample;
pub use sampler::{rollout, sample, SampleParams};

use serde::{Deserialize, Serialize};
use wmlab_nn::{CounterRng, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::lam::patchify_clip;
use crate::synthenv::VideoClip;

pub const GROUP_BACKBONE: &str = "wm_backbone";
pub const GROUP_ACTION_COND: &str = "wm_action_cond";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WmConfig {
    pub frame_size: usize,
    pub patch: usize,
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Self-attention blocks in the action-context network.
    pub ctx_blocks: usize,
    /// Temporal position-embedding capacity (max clip length).
    pub max_frames: usize,
    pub guidance_scale: f32,
    pub denoise_steps: usize,
    /// Probability of dropping each transition's action during training.
    pub cond_drop_prob: f32,
}

impl Default for WmConfig {
    fn default() -> Self {
        Self {
            frame_size: 32,
            patch: 4,
            width: 192,
            blocks: 6,
            heads: 6,
            ctx_blocks: 2,
            max_frames: 16,
            guidance_scale: 4.0,
            denoise_steps: 10,
            cond_drop_prob: 0.1,
        }
    }
}

impl WmConfig {
    pub fn tokens_per_frame(&self) -> usize {
        (self.frame_size / self.patch) * (self.frame_size / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * crate::synthenv::CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size % self.patch != 0 {
            return Err(Error::Config("wm frame_size must divide by patch".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config("wm width must divide into heads".into()));
        }
        if !(0.0..=1.0).contains(&self.cond_drop_prob) {
            return Err(Error::Config("cond_drop_prob must be in [0,1]".into()));
        }
        if self.denoise_steps == 0 {
            return Err(Error::Config("denoise_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Backbone + action conditioner pair.
pub struct WorldModel {
    pub cfg: WmConfig,
    pub dit: Dit,
    pub cond: ActionConditioner,
}

/// Where the per-transition conditioning comes from.
pub enum CondSource<'a> {
    /// Every transition uses the learned null embedding (action-free).
    Null,
    /// Quantized latent embeddings on the tape, ((T-1)·G) × D, with a
    /// per-transition drop mask replacing dropped rows by the null embedding.
    Embeds { embeds: Var, drop: &'a [bool] },
}

impl WorldModel {
    pub fn build(store: &mut ParamStore, cfg: &WmConfig, latent_dim: usize, action_tokens: usize, seed: u64) -> Self {
        let dit = Dit::build(store, cfg, seed);
        let cond = ActionConditioner::build(store, cfg, latent_dim, action_tokens, seed);
        Self { cfg: cfg.clone(), dit, cond }
    }

    /// Contextual conditioning rows, one per frame (row 0 conditions frame 1
    /// and is always the null path).
    pub fn frame_ctx(&self, t: &Tape, source: CondSource, n_frames: usize) -> Result<Var> {
        self.cond.frame_ctx(t, source, n_frames)
    }

    /// Velocity prediction in patch-token space for an interpolated clip.
    pub fn velocity_tokens(&self, t: &Tape, xt_tokens: Var, t_frames: &[f32], ctx: Var) -> Result<Var> {
        let mods = self.dit.modulations(t, t_frames, ctx)?;
        self.dit.velocity(t, xt_tokens, &mods)
    }

    /// Training objective for one clip: draw (t, x0), pin frame 1 clean, and
    /// regress the velocity of frames 2..T. Returns the scalar loss.
    pub fn flow_loss(&self, t: &Tape, clip: &VideoClip, source: CondSource, rng: &mut CounterRng) -> Result<Var> {
        if clip.t < 2 {
            return Err(Error::Shape("flow loss needs at least 2 frames".into()));
        }
        let x1 = patchify_clip(clip, self.cfg.patch)?;
        let t_scalar = rng.uniform();
        let p = self.cfg.tokens_per_frame();
        let pd = self.cfg.patch_dim();
        let mut x0 = vec![0.0f32; x1.numel()];
        rng.fill_normal(&mut x0[p * pd..]);
        let sample = DiffusionSample::draw(&x1, Tensor::new(x1.rows(), pd, x0), t_scalar);
        self.flow_loss_from_sample(t, &sample, source, clip.t)
    }

    pub fn flow_loss_from_sample(
        &self,
        t: &Tape,
        sample: &DiffusionSample,
        source: CondSource,
        n_frames: usize,
    ) -> Result<Var> {
        let p = self.cfg.tokens_per_frame();
        let pd = self.cfg.patch_dim();
        assert_eq!(sample.x1.rows(), n_frames * p);

        // frame 1 enters clean (t = 1), later frames at the sampled t
        let mut xt_data = sample.xt.data().to_vec();
        xt_data[..p * pd].copy_from_slice(&sample.x1.data()[..p * pd]);
        let xt = t.input(Tensor::new(sample.xt.rows(), pd, xt_data));

        let mut t_frames = vec![sample.t; n_frames];
        t_frames[0] = 1.0;

        let ctx = self.frame_ctx(t, source, n_frames)?;
        let v_pred = self.velocity_tokens(t, xt, &t_frames, ctx)?;
        let v_pred_masked = t.slice_rows(v_pred, p, (n_frames - 1) * p);
        let v_target = Tensor::new(
            (n_frames - 1) * p,
            pd,
            sample.v_target.data()[p * pd..].to_vec(),
        );
        Ok(t.mse(v_pred_masked, t.input(v_target)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_cfg() -> WmConfig {
        tests_support::tiny16()
    }

    pub(crate) fn rand_clip(t: usize, _size: usize, seed: u64) -> VideoClip {
        tests_support::rand_clip16(t, seed)
    }

    #[test]
    fn flow_loss_runs_and_is_deterministic() {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let wm = WorldModel::build(&mut store, &cfg, 4, 2, 3);
        let clip = rand_clip(3, 8, 1);
        let run = || {
            let t = Tape::new(&store);
            let mut rng = CounterRng::keyed(&[5, 0]);
            let loss = wm.flow_loss(&t, &clip, CondSource::Null, &mut rng).unwrap();
            t.value(loss).data()[0]
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn gradient_check_on_probe_parameters() {
        let report = flow_gradcheck_max_rel_err(8);
        assert!(report.checked >= 4, "too few parameters had measurable gradients");
        assert!(report.max_rel < 1e-3, "worst relative error {}", report.max_rel);
    }
}

pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel: f64,
}

/// Analytic flow-loss gradients vs central finite differences on a width-16
/// model. For each of up to `max_params` parameters, perturbs the coordinate
/// with the largest gradient and compares against an f64-accumulated FD loss;
/// returns the worst relative error observed.
pub fn flow_gradcheck_max_rel_err(max_params: usize) -> GradCheckReport {
    use crate::lam::patchify_clip;

    let cfg = tests_support::tiny16();
    let mut store = ParamStore::new();
    let wm = WorldModel::build(&mut store, &cfg, 4, 2, 7);
    let clip = tests_support::rand_clip16(3, 2);
    let n_frames = clip.t;
    let p = cfg.tokens_per_frame();
    let pd = cfg.patch_dim();

    // one fixed diffusion draw reused by every evaluation
    let x1 = patchify_clip(&clip, cfg.patch).unwrap();
    let mut rng = CounterRng::keyed(&[9, 1]);
    let t_scalar = rng.uniform();
    let mut x0 = vec![0.0f32; x1.numel()];
    rng.fill_normal(&mut x0[p * pd..]);
    let sample = DiffusionSample::draw(&x1, Tensor::new(x1.rows(), pd, x0), t_scalar);
    let embeds_t = Tensor::from_fn(4, 4, |r, c| ((r * 4 + c) as f32).sin() * 0.5);
    let drop = vec![false; n_frames - 1];

    // f64 finite-difference loss from the f32 velocity prediction
    let eval_f64 = |store: &ParamStore| -> f64 {
        let t = Tape::eval(store);
        let mut xt_data = sample.xt.data().to_vec();
        xt_data[..p * pd].copy_from_slice(&sample.x1.data()[..p * pd]);
        let xt = t.input(Tensor::new(sample.xt.rows(), pd, xt_data));
        let mut t_frames = vec![sample.t; n_frames];
        t_frames[0] = 1.0;
        let ctx = wm
            .frame_ctx(&t, CondSource::Embeds { embeds: t.input(embeds_t.clone()), drop: &drop }, n_frames)
            .unwrap();
        let v = t.value(wm.velocity_tokens(&t, xt, &t_frames, ctx).unwrap());
        let pred = &v.data()[p * pd..];
        let target = &sample.v_target.data()[p * pd..];
        let mut acc = 0.0f64;
        for (a, b) in pred.iter().zip(target) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        acc / pred.len() as f64
    };

    let t = Tape::new(&store);
    let embeds = t.input(embeds_t.clone());
    let loss = wm
        .flow_loss_from_sample(&t, &sample, CondSource::Embeds { embeds, drop: &drop }, n_frames)
        .unwrap();
    let grads = t.backward(loss);

    let mut checked = 0;
    let mut max_rel = 0.0f64;
    for flat in 0..store.len() {
        let Some(g) = grads.by_param[flat].as_ref() else { continue };
        let (j, gj) = g
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, v)| (i, *v))
            .unwrap();
        if gj.abs() < 1e-2 {
            continue;
        }
        let h = 0.0078125f32; // 2^-7, exactly representable
        let orig = store.get(flat).value.data()[j];
        store.get_mut(flat).value.data_mut()[j] = orig + h;
        let lp = eval_f64(&store);
        store.get_mut(flat).value.data_mut()[j] = orig - h;
        let lm = eval_f64(&store);
        store.get_mut(flat).value.data_mut()[j] = orig;
        let num = (lp - lm) / (2.0 * h as f64);
        let rel = (num - gj as f64).abs() / (gj as f64).abs().max(num.abs());
        max_rel = max_rel.max(rel);
        checked += 1;
        if checked >= max_params {
            break;
        }
    }
    GradCheckReport { checked, max_rel }
}

/// Tiny fixtures shared with the acceptance suite.
pub mod tests_support {
    use super::WmConfig;
    use crate::synthenv::{VideoClip, CHANNELS};
    use wmlab_nn::CounterRng;

    pub fn tiny16() -> WmConfig {
        WmConfig {
            frame_size: 8,
            patch: 4,
            width: 16,
            blocks: 2,
            heads: 2,
            ctx_blocks: 1,
            max_frames: 8,
            ..WmConfig::default()
        }
    }

    pub fn rand_clip16(t: usize, seed: u64) -> VideoClip {
        let mut rng = CounterRng::new(seed);
        let data = (0..t * 8 * 8 * CHANNELS).map(|_| rng.uniform()).collect();
        VideoClip { t, h: 8, w: 8, data }
    }
}
