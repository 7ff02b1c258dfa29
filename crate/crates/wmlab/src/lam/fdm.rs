use wmlab_nn::{ParamId, ParamStore, Tape, Var};

use super::{patchify, patchify_clip, unpatchify, LamConfig};
use crate::error::{Error, Result};
use crate::layers::{Linear, LnAffine, Mha, Mlp};
use crate::synthenv::{Frame, VideoClip};

struct SpatialBlock {
    ln1: LnAffine,
    attn: Mha,
    ln2: LnAffine,
    mlp: Mlp,
}

/// Spatial-transformer forward dynamics model: concatenates the current
/// frame's patch tokens with the quantized action tokens, attends within each
/// transition, and decodes next-frame pixels through a clamped head.
/// Teacher-forced single-step only; used by the two-stage baseline.
pub struct Fdm {
    cfg: LamConfig,
    patch_proj: Linear,
    pos_emb: ParamId,
    act_proj: Linear,
    slot_emb: ParamId, // G rows, one per action token slot
    blocks: Vec<SpatialBlock>,
    ln_f: LnAffine,
    head: Linear,
}

const G: &str = "fdm";

impl Fdm {
    pub fn build(store: &mut ParamStore, cfg: &LamConfig, seed: u64) -> Self {
        let w = cfg.fdm_width;
        let patch_proj = Linear::new(store, G, "fdm.patch", w, cfg.patch_dim(), seed);
        let pos_emb = store.add_normal(G, "fdm.pos", cfg.tokens_per_frame(), w, 0.02, seed);
        let act_proj = Linear::new(store, G, "fdm.act", w, cfg.code_dim, seed);
        let slot_emb = store.add_normal(G, "fdm.slot", cfg.action_tokens, w, 0.02, seed);
        let blocks = (0..cfg.fdm_layers)
            .map(|i| SpatialBlock {
                ln1: LnAffine::new(store, G, &format!("fdm.b{i}.ln1"), w),
                attn: Mha::new(store, G, &format!("fdm.b{i}.attn"), w, cfg.heads, seed),
                ln2: LnAffine::new(store, G, &format!("fdm.b{i}.ln2"), w),
                mlp: Mlp::new(store, G, &format!("fdm.b{i}.mlp"), w, 4 * w, seed),
            })
            .collect();
        let ln_f = LnAffine::new(store, G, "fdm.lnf", w);
        let head = Linear::new(store, G, "fdm.head", cfg.patch_dim(), w, seed);
        Self { cfg: cfg.clone(), patch_proj, pos_emb, act_proj, slot_emb, blocks, ln_f, head }
    }

    /// Predict next-frame patch tokens for every transition of the clip:
    /// ((T-1)·P) × patch_dim, clamped to [0, 1].
    ///
    /// `actions` is the ((T-1)·G) × D quantized latent matrix.
    pub fn forward_tokens(&self, t: &Tape, clip: &VideoClip, actions: Var) -> Result<Var> {
        if clip.t < 2 {
            return Err(Error::Shape("fdm needs at least 2 frames".into()));
        }
        let n = clip.t - 1;
        let g = self.cfg.action_tokens;
        if actions.rows() != n * g || actions.cols() != self.cfg.code_dim {
            return Err(Error::Shape(format!(
                "action latents {}x{} do not match {} transitions of {} tokens",
                actions.rows(),
                actions.cols(),
                n,
                g
            )));
        }
        let p_tokens = self.cfg.tokens_per_frame();
        let all_tokens = t.input(patchify_clip(clip, self.cfg.patch)?);
        let projected = self.patch_proj.fwd(t, all_tokens);
        let act_tokens = self.act_proj.fwd(t, actions);

        // interleave per transition: [patches(frame i), action tokens(i)]
        let mut groups = Vec::with_capacity(n);
        for i in 0..n {
            let patches = t.slice_rows(projected, i * p_tokens, p_tokens);
            let patches = t.add_tiled(patches, t.param(self.pos_emb));
            let acts = t.slice_rows(act_tokens, i * g, g);
            let acts = t.add_tiled(acts, t.param(self.slot_emb));
            groups.push(t.concat_rows(&[patches, acts]));
        }
        let mut x = t.concat_rows(&groups);
        let seq = p_tokens + g;
        for b in &self.blocks {
            let n1 = b.ln1.fwd(t, x);
            let h = b.attn.fwd(t, n1, n1, n, false);
            x = t.add(x, h);
            let h = b.mlp.fwd(t, b.ln2.fwd(t, x));
            x = t.add(x, h);
        }
        x = self.ln_f.fwd(t, x);

        // keep only the patch-token rows of each transition group
        let mut patch_rows = Vec::with_capacity(n);
        for i in 0..n {
            patch_rows.push(t.slice_rows(x, i * seq, p_tokens));
        }
        let patches = t.concat_rows(&patch_rows);
        let decoded = self.head.fwd(t, patches);
        Ok(t.clamp01(t.add_scalar(decoded, 0.5)))
    }

    /// Single-step prediction as a frame.
    pub fn forward_frame(&self, t: &Tape, frame: &Frame, action_embed: Var) -> Result<Frame> {
        let clip = VideoClip {
            t: 2,
            h: frame.h,
            w: frame.w,
            data: [frame.data.as_slice(), frame.data.as_slice()].concat(),
        };
        let tokens = self.forward_tokens(t, &clip, action_embed)?;
        let val = t.value(tokens);
        Ok(Frame { h: frame.h, w: frame.w, data: unpatchify(&val, frame.h, frame.w, self.cfg.patch) })
    }
}

/// Patchified frame as a plain tensor, for building loss targets.
pub fn frame_tokens(frame: &Frame, patch: usize) -> Result<wmlab_nn::Tensor> {
    patchify(&frame.data, frame.h, frame.w, patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::CHANNELS;
    use wmlab_nn::{CounterRng, Tensor};

    fn cfg() -> LamConfig {
        LamConfig {
            frame_size: 8,
            patch: 4,
            fdm_width: 16,
            fdm_layers: 2,
            heads: 2,
            code_dim: 4,
            action_tokens: 2,
            ..LamConfig::default()
        }
    }

    fn frame(seed: u64) -> Frame {
        let mut rng = CounterRng::new(seed);
        Frame { h: 8, w: 8, data: (0..8 * 8 * CHANNELS).map(|_| rng.uniform()).collect() }
    }

    #[test]
    fn output_shape_matches_input_frame() {
        let cfg = cfg();
        let mut store = ParamStore::new();
        let fdm = Fdm::build(&mut store, &cfg, 7);
        let t = Tape::eval(&store);
        let f = frame(1);
        let act = t.input(Tensor::zeros(cfg.action_tokens, cfg.code_dim));
        let out = fdm.forward_frame(&t, &f, act).unwrap();
        assert_eq!((out.h, out.w, out.data.len()), (f.h, f.w, f.data.len()));
        assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fixed_weights_give_deterministic_output() {
        let cfg = cfg();
        let mut store = ParamStore::new();
        let fdm = Fdm::build(&mut store, &cfg, 8);
        let f = frame(2);
        let run = || {
            let t = Tape::eval(&store);
            let act = t.input(Tensor::full(cfg.action_tokens, cfg.code_dim, 0.3));
            fdm.forward_frame(&t, &f, act).unwrap()
        };
        assert_eq!(run().data, run().data);
    }

    #[test]
    fn action_tokens_change_the_prediction() {
        // raw (untrained but nonzero) weights: different latents give
        // different predictions through the attention mix
        let cfg = cfg();
        let mut store = ParamStore::new();
        let fdm = Fdm::build(&mut store, &cfg, 9);
        let f = frame(3);
        let t = Tape::eval(&store);
        let a1 = t.input(Tensor::full(cfg.action_tokens, cfg.code_dim, 1.0));
        let a2 = t.input(Tensor::full(cfg.action_tokens, cfg.code_dim, -1.0));
        let p1 = fdm.forward_frame(&t, &f, a1).unwrap();
        let p2 = fdm.forward_frame(&t, &f, a2).unwrap();
        let diff: f32 = p1.data.iter().zip(&p2.data).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 0.0, "predictions identical across different action latents");
    }
}
