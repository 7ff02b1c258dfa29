use wmlab_nn::{ParamId, ParamStore, Tape, Var};

use super::{CondSource, WmConfig, GROUP_ACTION_COND};
use crate::error::{Error, Result};
use crate::layers::{Linear, LnAffine, Mha, Mlp};

struct CtxBlock {
    ln1: LnAffine,
    attn: Mha,
    ln2: LnAffine,
    mlp: Mlp,
}

/// From-scratch action-context network: projects each transition's quantized
/// latent tokens to model width, replaces dropped transitions with a learned
/// null embedding, prepends the null row that conditions frame 1, and runs
/// causal self-attention so the embedding for frame i sees transitions < i.
/// All parameters live in the "wm_action_cond" group.
pub struct ActionConditioner {
    cfg: WmConfig,
    latent_dim: usize,
    action_tokens: usize,
    in_proj: Linear,
    null_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<CtxBlock>,
    ln_f: LnAffine,
}

const G: &str = GROUP_ACTION_COND;

impl ActionConditioner {
    pub fn build(store: &mut ParamStore, cfg: &WmConfig, latent_dim: usize, action_tokens: usize, seed: u64) -> Self {
        let w = cfg.width;
        let in_proj = Linear::new(store, G, "cond.in", w, latent_dim * action_tokens, seed);
        let null_emb = store.add_normal(G, "cond.null", 1, w, 0.02, seed);
        let pos_emb = store.add_normal(G, "cond.pos", cfg.max_frames, w, 0.02, seed);
        let blocks = (0..cfg.ctx_blocks)
            .map(|i| CtxBlock {
                ln1: LnAffine::new(store, G, &format!("cond.b{i}.ln1"), w),
                attn: Mha::new(store, G, &format!("cond.b{i}.attn"), w, cfg.heads, seed),
                ln2: LnAffine::new(store, G, &format!("cond.b{i}.ln2"), w),
                mlp: Mlp::new(store, G, &format!("cond.b{i}.mlp"), w, 2 * w, seed),
            })
            .collect();
        let ln_f = LnAffine::new(store, G, "cond.lnf", w);
        Self { cfg: cfg.clone(), latent_dim, action_tokens, in_proj, null_emb, pos_emb, blocks, ln_f }
    }

    /// One conditioning row per frame (n_frames rows). Row 0 is the null path
    /// for frame 1; row i conditions frame i+1 with transition i-1's action.
    pub fn frame_ctx(&self, t: &Tape, source: CondSource, n_frames: usize) -> Result<Var> {
        if n_frames > self.cfg.max_frames {
            return Err(Error::Shape(format!(
                "{n_frames} frames exceed max_frames {}",
                self.cfg.max_frames
            )));
        }
        let n_trans = n_frames - 1;
        let null_row = t.param(self.null_emb);
        let null_tiled = t.tile_rows(null_row, n_trans);
        let trans_rows = match source {
            CondSource::Null => null_tiled,
            CondSource::Embeds { embeds, drop } => {
                if drop.len() != n_trans {
                    return Err(Error::Shape(format!(
                        "drop mask has {} flags for {n_trans} transitions",
                        drop.len()
                    )));
                }
                if embeds.rows() != n_trans * self.action_tokens || embeds.cols() != self.latent_dim {
                    return Err(Error::Shape(format!(
                        "latent embeds {}x{} do not match {n_trans} transitions",
                        embeds.rows(),
                        embeds.cols()
                    )));
                }
                let flat = t.reinterp(embeds, n_trans, self.latent_dim * self.action_tokens);
                let projected = self.in_proj.fwd(t, flat);
                let keep: Vec<bool> = drop.iter().map(|&d| !d).collect();
                t.select_rows(projected, null_tiled, &keep)
            }
        };
        let mut x = t.concat_rows(&[t.tile_rows(null_row, 1), trans_rows]);
        x = t.add_tiled(x, t.slice_rows(t.param(self.pos_emb), 0, n_frames));
        for b in &self.blocks {
            let n1 = b.ln1.fwd(t, x);
            let h = b.attn.fwd(t, n1, n1, 1, true);
            x = t.add(x, h);
            let h = b.mlp.fwd(t, b.ln2.fwd(t, x));
            x = t.add(x, h);
        }
        Ok(self.ln_f.fwd(t, x))
    }

    /// Contextual embeddings for the transitions only ((T-1) × width), the
    /// conditioning actually applied to frames 2..T.
    pub fn embed_actions(&self, t: &Tape, source: CondSource, n_frames: usize) -> Result<Var> {
        let ctx = self.frame_ctx(t, source, n_frames)?;
        Ok(t.slice_rows(ctx, 1, n_frames - 1))
    }
}
