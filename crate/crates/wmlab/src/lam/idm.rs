use wmlab_nn::{ParamId, ParamStore, Tape, Var};

use super::{patchify_clip, LamConfig};
use crate::error::{Error, Result};
use crate::layers::{Linear, LnAffine, Mha, Mlp};
use crate::synthenv::VideoClip;

struct StBlock {
    ln1: LnAffine,
    spatial: Mha,
    ln2: LnAffine,
    temporal: Mha,
    ln3: LnAffine,
    mlp: Mlp,
}

/// ST-Transformer inverse dynamics model. Spatial attention runs within each
/// frame; temporal attention runs causally across frames at fixed spatial
/// position, with no temporal position embedding so that identical frames
/// produce identical features regardless of index. Transition t is read out
/// by learned queries attending over the (frame t, frame t+1) features, so it
/// depends only on frames <= t+1.
pub struct Idm {
    cfg: LamConfig,
    patch_proj: Linear,
    pos_emb: ParamId,
    blocks: Vec<StBlock>,
    ln_f: LnAffine,
    role_emb: ParamId, // 2 rows: current frame, next frame
    queries: ParamId,  // G rows
    readout: Mha,
    out_proj: Linear,
}

const G: &str = "idm";

impl Idm {
    pub fn build(store: &mut ParamStore, cfg: &LamConfig, seed: u64) -> Self {
        let w = cfg.width;
        let p_tokens = cfg.tokens_per_frame();
        let patch_proj = Linear::new(store, G, "idm.patch", w, cfg.patch_dim(), seed);
        let pos_emb = store.add_normal(G, "idm.pos", p_tokens, w, 0.02, seed);
        let blocks = (0..cfg.layers)
            .map(|i| StBlock {
                ln1: LnAffine::new(store, G, &format!("idm.b{i}.ln1"), w),
                spatial: Mha::new(store, G, &format!("idm.b{i}.sa"), w, cfg.heads, seed),
                ln2: LnAffine::new(store, G, &format!("idm.b{i}.ln2"), w),
                temporal: Mha::new(store, G, &format!("idm.b{i}.ta"), w, cfg.heads, seed),
                ln3: LnAffine::new(store, G, &format!("idm.b{i}.ln3"), w),
                mlp: Mlp::new(store, G, &format!("idm.b{i}.mlp"), w, 4 * w, seed),
            })
            .collect();
        let ln_f = LnAffine::new(store, G, "idm.lnf", w);
        let role_emb = store.add_normal(G, "idm.role", 2, w, 0.02, seed);
        let queries = store.add_normal(G, "idm.queries", cfg.action_tokens, w, 0.5, seed);
        let readout = Mha::new(store, G, "idm.readout", w, cfg.heads, seed);
        let out_proj = Linear::new(store, G, "idm.out", cfg.code_dim, w, seed);
        Self { cfg: cfg.clone(), patch_proj, pos_emb, blocks, ln_f, role_emb, queries, readout, out_proj }
    }

    /// Pre-quantization latents for every transition: ((T-1)·G) × D.
    pub fn forward(&self, t: &Tape, clip: &VideoClip) -> Result<Var> {
        if clip.t < 2 {
            return Err(Error::Shape(format!("idm needs at least 2 frames, got {}", clip.t)));
        }
        if clip.h != self.cfg.frame_size || clip.w != self.cfg.frame_size {
            return Err(Error::Shape(format!(
                "idm expects {0}x{0} frames, got {1}x{2}",
                self.cfg.frame_size, clip.h, clip.w
            )));
        }
        let frames = clip.t;
        let p_tokens = self.cfg.tokens_per_frame();
        let tokens = t.input(patchify_clip(clip, self.cfg.patch)?);
        let mut x = self.patch_proj.fwd(t, tokens);
        x = t.add_tiled(x, t.param(self.pos_emb));
        for b in &self.blocks {
            let n1 = b.ln1.fwd(t, x);
            let h = b.spatial.fwd(t, n1, n1, frames, false);
            x = t.add(x, h);
            // flip to position-major for causal attention over time
            let xp = t.regroup(x, frames, p_tokens);
            let n = b.ln2.fwd(t, xp);
            let ht = b.temporal.fwd(t, n, n, p_tokens, true);
            let hb = t.regroup(ht, p_tokens, frames);
            x = t.add(x, hb);
            let h = b.mlp.fwd(t, b.ln3.fwd(t, x));
            x = t.add(x, h);
        }
        x = self.ln_f.fwd(t, x);

        // per-transition readout over the (t, t+1) frame pair
        let role = t.param(self.role_emb);
        let role_cur = t.slice_rows(role, 0, 1);
        let role_next = t.slice_rows(role, 1, 1);
        let queries = t.param(self.queries);
        let mut outs = Vec::with_capacity(frames - 1);
        for i in 0..frames - 1 {
            let cur = t.add_tiled(t.slice_rows(x, i * p_tokens, p_tokens), role_cur);
            let next = t.add_tiled(t.slice_rows(x, (i + 1) * p_tokens, p_tokens), role_next);
            let kv = t.concat_rows(&[cur, next]);
            let o = self.readout.fwd(t, queries, kv, 1, false);
            outs.push(self.out_proj.fwd(t, o));
        }
        Ok(t.concat_rows(&outs))
    }
}
