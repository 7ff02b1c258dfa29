use wmlab_nn::{CounterRng, ParamStore, Tape, Tensor, Var};

use super::{CondSource, WorldModel};
use crate::error::{Error, Result};
use crate::lam::{patchify, unpatchify, LatentAction};
use crate::synthenv::{Frame, VideoClip, CHANNELS};

#[derive(Clone, Copy, Debug)]
pub struct SampleParams {
    pub steps: usize,
    pub guidance_scale: f32,
    pub noise_seed: u64,
}

fn latents_tensor(latents: &[LatentAction]) -> Tensor {
    let g = latents[0].embeddings.rows();
    let d = latents[0].embeddings.cols();
    let mut data = Vec::with_capacity(latents.len() * g * d);
    for la in latents {
        data.extend_from_slice(la.embeddings.data());
    }
    Tensor::new(latents.len() * g, d, data)
}

/// Generate frames 2..T from a clean first frame and T-1 latent actions by
/// Euler integration of the guided velocity field from t = 0 to t = 1.
/// Frame 1 stays pinned to `first_frame` throughout; the guided velocity is
/// v_null + s·(v_cond − v_null), with the endpoints s = 1 and s = 0 taking
/// the single-branch path exactly.
pub fn sample(
    store: &ParamStore,
    wm: &WorldModel,
    first_frame: &Frame,
    latents: &[LatentAction],
    params: &SampleParams,
) -> Result<VideoClip> {
    if params.steps == 0 {
        return Err(Error::Config("sampler steps must be >= 1".into()));
    }
    if latents.is_empty() {
        return Err(Error::Shape("sample needs at least one latent action".into()));
    }
    let n_frames = latents.len() + 1;
    let p = wm.cfg.tokens_per_frame();
    let pd = wm.cfg.patch_dim();
    if first_frame.h != wm.cfg.frame_size || first_frame.w != wm.cfg.frame_size {
        return Err(Error::Shape(format!(
            "first frame {}x{} does not match model size {}",
            first_frame.h, first_frame.w, wm.cfg.frame_size
        )));
    }

    let first_tokens = patchify(&first_frame.data, first_frame.h, first_frame.w, wm.cfg.patch)?;
    let mut rng = CounterRng::keyed(&[params.noise_seed]);
    let mut state = vec![0.0f32; n_frames * p * pd];
    state[..p * pd].copy_from_slice(first_tokens.data());
    rng.fill_normal(&mut state[p * pd..]);

    let lat = latents_tensor(latents);
    let no_drop = vec![false; latents.len()];
    let dt = 1.0 / params.steps as f32;
    for k in 0..params.steps {
        let tk = k as f32 * dt;
        let mut t_frames = vec![tk; n_frames];
        t_frames[0] = 1.0;
        let v = guided_velocity(store, wm, &state, n_frames, &t_frames, &lat, &no_drop, params.guidance_scale)?;
        for (s, vi) in state[p * pd..].iter_mut().zip(&v[p * pd..]) {
            *s += dt * vi;
        }
    }

    // decode token state to pixels; clamp generated frames into range and
    // keep frame 1 pinned bit-exactly
    let mut data = Vec::with_capacity(n_frames * first_frame.data.len());
    data.extend_from_slice(&first_frame.data);
    let s = wm.cfg.frame_size;
    for f in 1..n_frames {
        let tokens = Tensor::new(p, pd, state[f * p * pd..(f + 1) * p * pd].to_vec());
        let mut frame = unpatchify(&tokens, s, s, wm.cfg.patch);
        for v in frame.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        data.extend_from_slice(&frame);
    }
    Ok(VideoClip { t: n_frames, h: s, w: s, data })
}

#[allow(clippy::too_many_arguments)]
fn guided_velocity(
    store: &ParamStore,
    wm: &WorldModel,
    state: &[f32],
    n_frames: usize,
    t_frames: &[f32],
    latents: &Tensor,
    no_drop: &[bool],
    guidance: f32,
) -> Result<Vec<f32>> {
    let p = wm.cfg.tokens_per_frame();
    let pd = wm.cfg.patch_dim();
    let eval_branch = |cond_null: bool| -> Result<Vec<f32>> {
        let t = Tape::eval(store);
        let xt = t.input(Tensor::new(n_frames * p, pd, state.to_vec()));
        let source = if cond_null {
            CondSource::Null
        } else {
            CondSource::Embeds { embeds: t.input(latents.clone()), drop: no_drop }
        };
        let ctx = wm.frame_ctx(&t, source, n_frames)?;
        let v = wm.velocity_tokens(&t, xt, t_frames, ctx)?;
        Ok(t.value(v).data().to_vec())
    };
    if guidance == 1.0 {
        return eval_branch(false);
    }
    if guidance == 0.0 {
        return eval_branch(true);
    }
    let v_cond = eval_branch(false)?;
    let v_null = eval_branch(true)?;
    Ok(v_null
        .iter()
        .zip(&v_cond)
        .map(|(n, c)| n + guidance * (c - n))
        .collect())
}

/// Chain `horizon` sample calls, re-seeding each chunk's first frame with the
/// previous chunk's last generated frame. Output has 1 + horizon·(T-1) frames
/// where T-1 = chunk_transitions.
pub fn rollout(
    store: &ParamStore,
    wm: &WorldModel,
    first_frame: &Frame,
    latents: &[LatentAction],
    horizon: usize,
    chunk_transitions: usize,
    params: &SampleParams,
) -> Result<VideoClip> {
    if horizon == 0 {
        return Err(Error::Config("rollout horizon must be >= 1".into()));
    }
    if latents.len() < horizon * chunk_transitions {
        return Err(Error::Shape(format!(
            "rollout needs {} latents, got {}",
            horizon * chunk_transitions,
            latents.len()
        )));
    }
    let mut frames: Vec<Frame> = vec![first_frame.clone()];
    let mut current = first_frame.clone();
    for chunk in 0..horizon {
        let chunk_latents = &latents[chunk * chunk_transitions..(chunk + 1) * chunk_transitions];
        let chunk_params = SampleParams {
            noise_seed: CounterRng::keyed(&[params.noise_seed, chunk as u64]).next_u64(),
            ..*params
        };
        let clip = sample(store, wm, &current, chunk_latents, &chunk_params)?;
        for i in 1..clip.t {
            frames.push(clip.frame(i));
        }
        current = frames.last().unwrap().clone();
    }
    Ok(VideoClip::from_frames(&frames))
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_cfg;
    use super::*;
    use crate::wm::WorldModel;
    use wmlab_nn::ParamStore;

    fn setup(seed: u64) -> (ParamStore, WorldModel) {
        let cfg = tiny_cfg();
        let mut store = ParamStore::new();
        let wm = WorldModel::build(&mut store, &cfg, 4, 2, seed);
        (store, wm)
    }

    fn frame(seed: u64) -> Frame {
        let mut rng = CounterRng::new(seed);
        Frame { h: 8, w: 8, data: (0..8 * 8 * CHANNELS).map(|_| rng.uniform()).collect() }
    }

    fn latents(n: usize, fill: f32) -> Vec<LatentAction> {
        (0..n)
            .map(|_| LatentAction { indices: vec![0, 0], embeddings: Tensor::full(2, 4, fill) })
            .collect()
    }

    #[test]
    fn first_frame_is_pinned_bit_exactly() {
        let (store, wm) = setup(1);
        let f = frame(10);
        let p = SampleParams { steps: 10, guidance_scale: 4.0, noise_seed: 3 };
        let clip = sample(&store, &wm, &f, &latents(2, 0.5), &p).unwrap();
        assert_eq!(clip.t, 3);
        assert_eq!(clip.frame_data(0), f.data.as_slice());
        assert!(clip.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_init_action_branch_makes_samples_action_invariant() {
        let (store, wm) = setup(2);
        let f = frame(11);
        let p = SampleParams { steps: 4, guidance_scale: 1.0, noise_seed: 9 };
        let a = sample(&store, &wm, &f, &latents(2, 5.0), &p).unwrap();
        let b = sample(&store, &wm, &f, &latents(2, -7.0), &p).unwrap();
        assert_eq!(a.data, b.data, "untrained action branch leaked into samples");
    }

    #[test]
    fn guidance_one_equals_conditional_only() {
        let (mut store, wm) = setup(3);
        // make the action branch nonzero so cond and null branches differ
        for i in 0..store.len() {
            if store.get(i).name.contains("amod") {
                let mut rng = CounterRng::new(50 + i as u64);
                for v in store.get_mut(i).value.data_mut() {
                    *v = rng.uniform_in(-0.05, 0.05);
                }
            }
        }
        let f = frame(12);
        let la = latents(2, 0.8);
        let a = sample(&store, &wm, &f, &la, &SampleParams { steps: 3, guidance_scale: 1.0, noise_seed: 5 }).unwrap();
        // a second run with the same params is bit-identical (determinism)
        let b = sample(&store, &wm, &f, &la, &SampleParams { steps: 3, guidance_scale: 1.0, noise_seed: 5 }).unwrap();
        assert_eq!(a.data, b.data);
        // and guidance 0 equals the null-conditioned path
        let n1 = sample(&store, &wm, &f, &la, &SampleParams { steps: 3, guidance_scale: 0.0, noise_seed: 5 }).unwrap();
        let n2 = sample(&store, &wm, &f, &latents(2, -0.3), &SampleParams { steps: 3, guidance_scale: 0.0, noise_seed: 5 }).unwrap();
        assert_eq!(n1.data, n2.data, "guidance 0 must ignore the condition entirely");
        assert_ne!(a.data, n1.data, "cond and null branches should differ on this checkpoint");
    }

    #[test]
    fn guided_velocity_is_affine_in_scale() {
        let (mut store, wm) = setup(4);
        for i in 0..store.len() {
            if store.get(i).name.contains("amod") {
                let mut rng = CounterRng::new(90 + i as u64);
                for v in store.get_mut(i).value.data_mut() {
                    *v = rng.uniform_in(-0.05, 0.05);
                }
            }
        }
        let n_frames = 3;
        let p = wm.cfg.tokens_per_frame();
        let pd = wm.cfg.patch_dim();
        let mut rng = CounterRng::new(33);
        let mut state = vec![0.0f32; n_frames * p * pd];
        rng.fill_normal(&mut state);
        let lat = Tensor::full(4, 4, 0.6);
        let t_frames = vec![1.0, 0.5, 0.5];
        let no_drop = vec![false; 2];
        let v = |s: f32| {
            guided_velocity(&store, &wm, &state, n_frames, &t_frames, &lat, &no_drop, s).unwrap()
        };
        let (v0, v1, v2, v35) = (v(0.0), v(1.0), v(2.0), v(3.5));
        for i in 0..v0.len() {
            // affine: v(s) = v0 + s (v1 - v0)
            let predict2 = v0[i] + 2.0 * (v1[i] - v0[i]);
            let predict35 = v0[i] + 3.5 * (v1[i] - v0[i]);
            assert!((predict2 - v2[i]).abs() <= 1e-6, "{} vs {}", predict2, v2[i]);
            assert!((predict35 - v35[i]).abs() <= 1e-6, "{} vs {}", predict35, v35[i]);
        }
    }

    #[test]
    fn rollout_counts_and_determinism() {
        let (store, wm) = setup(5);
        let f = frame(13);
        let p = SampleParams { steps: 2, guidance_scale: 1.0, noise_seed: 21 };
        // horizon 2 chunks of T=3 (2 transitions each) -> 5 frames
        let la = latents(4, 0.2);
        let a = rollout(&store, &wm, &f, &la, 2, 2, &p).unwrap();
        assert_eq!(a.t, 5);
        let b = rollout(&store, &wm, &f, &la, 2, 2, &p).unwrap();
        assert_eq!(a.data, b.data);
        // too few latents for the horizon is an error
        assert!(rollout(&store, &wm, &f, &la, 3, 2, &p).is_err());
    }

    #[test]
    fn horizon_one_equals_sample() {
        let (store, wm) = setup(6);
        let f = frame(14);
        let la = latents(2, 0.4);
        let p = SampleParams { steps: 3, guidance_scale: 1.0, noise_seed: 8 };
        let chunk_seed = CounterRng::keyed(&[8, 0]).next_u64();
        let direct = sample(&store, &wm, &f, &la, &SampleParams { noise_seed: chunk_seed, ..p }).unwrap();
        let rolled = rollout(&store, &wm, &f, &la, 1, 2, &p).unwrap();
        assert_eq!(rolled.data, direct.data);
    }
}
