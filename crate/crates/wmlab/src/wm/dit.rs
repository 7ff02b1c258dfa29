use wmlab_nn::{ParamId, ParamStore, Tape, Tensor, Var};

use super::{WmConfig, GROUP_ACTION_COND, GROUP_BACKBONE};
use crate::error::{Error, Result};
use crate::layers::{Linear, Mha, Mlp};

/// Per-frame (scale, shift, gate) triples for the three modulated sites of a
/// block. Each Var is n_frames × width; the effective value is the sum of the
/// timestep branch and the (zero-initialized) action branch.
#[derive(Clone, Copy)]
pub struct SiteMods {
    pub scale: Var,
    pub shift: Var,
    pub gate: Var,
}

#[derive(Clone, Copy)]
pub struct BlockMods {
    pub spatial: SiteMods,
    pub temporal: SiteMods,
    pub mlp: SiteMods,
}

pub struct Modulations {
    pub n_frames: usize,
    pub blocks: Vec<BlockMods>,
    pub final_scale: Var,
    pub final_shift: Var,
}

struct DitBlock {
    spatial: Mha,
    temporal: Mha,
    mlp: Mlp,
    t_head: Linear, // timestep branch, 9 modulation vectors
    a_head: Linear, // action branch, zero-initialized
}

/// Pixel-space video DiT. Spatial attention is full within each frame,
/// temporal attention is strictly causal across frames, and every LayerNorm
/// site is modulated by additive timestep + action AdaLN parameters.
pub struct Dit {
    cfg: WmConfig,
    patch_embed: Linear,
    pos_spatial: ParamId,
    pos_temporal: ParamId,
    t_in: Linear,
    t_hidden: Linear,
    blocks: Vec<DitBlock>,
    t_final: Linear,
    a_final: Linear,
    head: Linear,
}

impl Dit {
    pub fn build(store: &mut ParamStore, cfg: &WmConfig, seed: u64) -> Self {
        let w = cfg.width;
        let b = GROUP_BACKBONE;
        let patch_embed = Linear::new(store, b, "dit.patch", w, cfg.patch_dim(), seed);
        let pos_spatial = store.add_normal(b, "dit.pos_s", cfg.tokens_per_frame(), w, 0.02, seed);
        let pos_temporal = store.add_normal(b, "dit.pos_t", cfg.max_frames, w, 0.02, seed);
        let t_in = Linear::new(store, b, "dit.temb1", w, w, seed);
        let t_hidden = Linear::new(store, b, "dit.temb2", w, w, seed);
        let blocks = (0..cfg.blocks)
            .map(|i| DitBlock {
                spatial: Mha::new(store, b, &format!("dit.b{i}.sa"), w, cfg.heads, seed),
                temporal: Mha::new(store, b, &format!("dit.b{i}.ta"), w, cfg.heads, seed),
                mlp: Mlp::new(store, b, &format!("dit.b{i}.mlp"), w, 4 * w, seed),
                t_head: Linear::zero(store, b, &format!("dit.b{i}.tmod"), 9 * w, w),
                a_head: Linear::zero(store, GROUP_ACTION_COND, &format!("dit.b{i}.amod"), 9 * w, w),
            })
            .collect();
        let t_final = Linear::zero(store, b, "dit.tmod_f", 2 * w, w);
        let a_final = Linear::zero(store, GROUP_ACTION_COND, "dit.amod_f", 2 * w, w);
        let head = Linear::zero(store, b, "dit.head", cfg.patch_dim(), w);
        Self {
            cfg: cfg.clone(),
            patch_embed,
            pos_spatial,
            pos_temporal,
            t_in,
            t_hidden,
            blocks,
            t_final,
            a_final,
            head,
        }
    }

    fn timestep_features(&self, t: &Tape, t_frames: &[f32]) -> Var {
        let w = self.cfg.width;
        let half = w / 2;
        let feats = Tensor::from_fn(t_frames.len(), w, |r, c| {
            let tv = t_frames[r] * 1000.0;
            let i = c % half;
            let freq = (-(10_000.0f32).ln() * i as f32 / half as f32).exp();
            if c < half {
                (tv * freq).sin()
            } else {
                (tv * freq).cos()
            }
        });
        let x = self.t_in.fwd(t, t.input(feats));
        self.t_hidden.fwd(t, t.silu(x))
    }

    fn nine(&self, t: &Tape, m: Var) -> [SiteMods; 3] {
        let w = self.cfg.width;
        let site = |k: usize| SiteMods {
            scale: t.slice_cols(m, (3 * k) * w, w),
            shift: t.slice_cols(m, (3 * k + 1) * w, w),
            gate: t.slice_cols(m, (3 * k + 2) * w, w),
        };
        [site(0), site(1), site(2)]
    }

    /// Per-block, per-frame modulation triples from diffusion times and the
    /// per-frame action context. The action branch is additive and exactly
    /// zero at initialization.
    pub fn modulations(&self, t: &Tape, t_frames: &[f32], ctx: Var) -> Result<Modulations> {
        let n_frames = t_frames.len();
        if ctx.rows() != n_frames {
            return Err(Error::Shape(format!(
                "ctx rows {} do not match {n_frames} frames",
                ctx.rows()
            )));
        }
        let tf = t.silu(self.timestep_features(t, t_frames));
        let ca = t.silu(ctx);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let m = t.add(b.t_head.fwd(t, tf), b.a_head.fwd(t, ca));
            let [spatial, temporal, mlp] = self.nine(t, m);
            blocks.push(BlockMods { spatial, temporal, mlp });
        }
        let f = t.add(self.t_final.fwd(t, tf), self.a_final.fwd(t, ca));
        let w = self.cfg.width;
        Ok(Modulations {
            n_frames,
            blocks,
            final_scale: t.slice_cols(f, 0, w),
            final_shift: t.slice_cols(f, w, w),
        })
    }

    /// Timestep-only modulations (action branch ablated), for contrast tests.
    pub fn modulations_timestep_only(&self, t: &Tape, t_frames: &[f32]) -> Modulations {
        let tf = t.silu(self.timestep_features(t, t_frames));
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let m = b.t_head.fwd(t, tf);
            let [spatial, temporal, mlp] = self.nine(t, m);
            blocks.push(BlockMods { spatial, temporal, mlp });
        }
        let f = self.t_final.fwd(t, tf);
        let w = self.cfg.width;
        Modulations {
            n_frames: t_frames.len(),
            blocks,
            final_scale: t.slice_cols(f, 0, w),
            final_shift: t.slice_cols(f, w, w),
        }
    }

    /// Velocity prediction in patch-token space: xt_tokens is (T·P) × patch_dim.
    pub fn velocity(&self, t: &Tape, xt_tokens: Var, mods: &Modulations) -> Result<Var> {
        let p = self.cfg.tokens_per_frame();
        let frames = mods.n_frames;
        if xt_tokens.rows() != frames * p || xt_tokens.cols() != self.cfg.patch_dim() {
            return Err(Error::Shape(format!(
                "xt tokens {}x{} do not match {frames} frames of {p} patches",
                xt_tokens.rows(),
                xt_tokens.cols()
            )));
        }
        let mut x = self.patch_embed.fwd(t, xt_tokens);
        x = t.add_tiled(x, t.param(self.pos_spatial));
        x = t.add_grouped(x, t.slice_rows(t.param(self.pos_temporal), 0, frames));
        for (b, m) in self.blocks.iter().zip(&mods.blocks) {
            let h = t.film(t.layernorm(x), m.spatial.scale, m.spatial.shift);
            let h = b.spatial.fwd(t, h, h, frames, false);
            x = t.gate_res(x, h, m.spatial.gate);

            let h = t.film(t.layernorm(x), m.temporal.scale, m.temporal.shift);
            let hp = t.regroup(h, frames, p);
            let hp = b.temporal.fwd(t, hp, hp, p, true);
            let h = t.regroup(hp, p, frames);
            x = t.gate_res(x, h, m.temporal.gate);

            let h = t.film(t.layernorm(x), m.mlp.scale, m.mlp.shift);
            let h = b.mlp.fwd(t, h);
            x = t.gate_res(x, h, m.mlp.gate);
        }
        let y = t.film(t.layernorm(x), mods.final_scale, mods.final_shift);
        Ok(self.head.fwd(t, y))
    }
}
