//! Latent action model: ST-Transformer inverse dynamics, vector-quantized
//! bottleneck, and a spatial-transformer forward dynamics model (used by the
//! two-stage baseline only).

mod fdm;
mod idm;
mod stats;
mod vq;

pub use fdm::Fdm;
pub use idm::Idm;
pub use stats::{codebook_stats, stats_from_counts, CodebookStats, UsageWindow};
pub use vq::{Quantized, Quantizer};

use serde::{Deserialize, Serialize};
use wmlab_nn::{ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::synthenv::{VideoClip, CHANNELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LamConfig {
    pub frame_size: usize,
    pub patch: usize,
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// K codebook entries of dimension D; each latent action is G tokens.
    pub codebook_size: usize,
    pub code_dim: usize,
    pub action_tokens: usize,
    pub fdm_layers: usize,
    pub fdm_width: usize,
}

impl Default for LamConfig {
    fn default() -> Self {
        Self {
            frame_size: 32,
            patch: 4,
            width: 128,
            layers: 4,
            heads: 4,
            codebook_size: 16,
            code_dim: 16,
            action_tokens: 2,
            fdm_layers: 4,
            fdm_width: 128,
        }
    }
}

impl LamConfig {
    pub fn tokens_per_frame(&self) -> usize {
        (self.frame_size / self.patch) * (self.frame_size / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch * CHANNELS
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size % self.patch != 0 {
            return Err(Error::Config(format!(
                "frame_size {} not divisible by patch {}",
                self.frame_size, self.patch
            )));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config("lam width must divide into heads".into()));
        }
        if self.codebook_size < 2 {
            return Err(Error::Config("codebook_size must be >= 2".into()));
        }
        if self.code_dim == 0 || self.action_tokens == 0 {
            return Err(Error::Config("code_dim and action_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Split one frame (h*w*c values, row-major) into non-overlapping p×p patches,
/// each flattened row-major with channels innermost.
pub fn patchify(frame: &[f32], h: usize, w: usize, p: usize) -> Result<Tensor> {
    if h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!("frame {h}x{w} not divisible by patch {p}")));
    }
    assert_eq!(frame.len(), h * w * CHANNELS);
    let (gh, gw) = (h / p, w / p);
    let pd = p * p * CHANNELS;
    let mut data = Vec::with_capacity(gh * gw * pd);
    for gi in 0..gh {
        for gj in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    let base = ((gi * p + py) * w + (gj * p + px)) * CHANNELS;
                    data.extend_from_slice(&frame[base..base + CHANNELS]);
                }
            }
        }
    }
    Ok(Tensor::new(gh * gw, pd, data))
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, h: usize, w: usize, p: usize) -> Vec<f32> {
    let (gh, gw) = (h / p, w / p);
    assert_eq!(tokens.rows(), gh * gw);
    assert_eq!(tokens.cols(), p * p * CHANNELS);
    let mut frame = vec![0.0f32; h * w * CHANNELS];
    for gi in 0..gh {
        for gj in 0..gw {
            let tok = tokens.row(gi * gw + gj);
            let mut k = 0;
            for py in 0..p {
                for px in 0..p {
                    let base = ((gi * p + py) * w + (gj * p + px)) * CHANNELS;
                    frame[base..base + CHANNELS].copy_from_slice(&tok[k..k + CHANNELS]);
                    k += CHANNELS;
                }
            }
        }
    }
    frame
}

/// Patchify every frame of a clip into one frame-major token matrix
/// of shape (t * tokens_per_frame, patch_dim).
pub fn patchify_clip(clip: &VideoClip, p: usize) -> Result<Tensor> {
    let per = patchify(clip.frame_data(0), clip.h, clip.w, p)?;
    let (rows, cols) = (per.rows(), per.cols());
    let mut data = Vec::with_capacity(clip.t * rows * cols);
    data.extend_from_slice(per.data());
    for i in 1..clip.t {
        let tok = patchify(clip.frame_data(i), clip.h, clip.w, p)?;
        data.extend_from_slice(tok.data());
    }
    Ok(Tensor::new(clip.t * rows, cols, data))
}

/// The discrete latent action for one transition: G code indices plus their
/// codebook embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentAction {
    pub indices: Vec<usize>,
    pub embeddings: Tensor, // G×D
}

/// Loss terms of the two-stage latent-action objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LamLossTerms {
    pub recon: f32,
    pub vq: f32,
    pub commit: f32,
    pub total: f32,
}

pub const VQ_WEIGHT: f32 = 1.0;
pub const COMMIT_WEIGHT: f32 = 0.25;

impl LamLossTerms {
    pub fn compose(recon: f32, vq: f32, commit: f32) -> Self {
        Self { recon, vq, commit, total: recon + VQ_WEIGHT * vq + COMMIT_WEIGHT * commit }
    }
}

/// IDM + quantizer (+ FDM for the two-stage baseline).
pub struct Lam {
    pub cfg: LamConfig,
    pub idm: Idm,
    pub quantizer: Quantizer,
    pub fdm: Fdm,
}

impl Lam {
    pub fn build(store: &mut ParamStore, cfg: &LamConfig, seed: u64) -> Self {
        let idm = Idm::build(store, cfg, seed);
        let quantizer = Quantizer::build(store, cfg, seed);
        let fdm = Fdm::build(store, cfg, seed);
        Self { cfg: cfg.clone(), idm, quantizer, fdm }
    }

    /// IDM + VQ for a model-sized clip: pre-quant latents, quantized result.
    pub fn encode(&self, t: &Tape, clip: &VideoClip) -> Result<(Var, Quantized)> {
        let pre = self.idm.forward(t, clip)?;
        let q = self.quantizer.quantize(t, pre)?;
        Ok((pre, q))
    }

    /// Extract latent actions without gradients.
    pub fn extract(&self, store: &ParamStore, clip: &VideoClip) -> Result<Vec<LatentAction>> {
        let t = Tape::eval(store);
        let (_, q) = self.encode(&t, clip)?;
        let emb = t.value(q.st_embed);
        let g = self.cfg.action_tokens;
        let d = self.cfg.code_dim;
        let n = clip.t - 1;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let indices = q.indices[i * g..(i + 1) * g].to_vec();
            let mut data = Vec::with_capacity(g * d);
            for j in 0..g {
                data.extend_from_slice(emb.row(i * g + j));
            }
            out.push(LatentAction { indices, embeddings: Tensor::new(g, d, data) });
        }
        Ok(out)
    }

    /// Full two-stage objective on one clip. Returns scalar vars
    /// (recon, vq, commit, total) plus the code indices used.
    pub fn loss(&self, t: &Tape, clip: &VideoClip) -> Result<(Var, Var, Var, Var, Vec<usize>)> {
        let (pre, q) = self.encode(t, clip)?;
        let _ = pre;
        let pred_tokens = self.fdm.forward_tokens(t, clip, q.st_embed)?;
        let target = patchify_clip(clip, self.cfg.patch)?;
        let p_tokens = self.cfg.tokens_per_frame();
        let target_next = Tensor::new(
            (clip.t - 1) * p_tokens,
            self.cfg.patch_dim(),
            target.data()[p_tokens * self.cfg.patch_dim()..].to_vec(),
        );
        let recon = t.mse(pred_tokens, t.input(target_next));
        let vq_scaled = t.scale(q.vq_loss, VQ_WEIGHT);
        let commit_scaled = t.scale(q.commit_loss, COMMIT_WEIGHT);
        let total = t.add(t.add(recon, vq_scaled), commit_scaled);
        Ok((recon, q.vq_loss, q.commit_loss, total, q.indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_episode, EnvConfig};
    use wmlab_nn::CounterRng;

    fn test_cfg() -> LamConfig {
        LamConfig {
            frame_size: 16,
            patch: 4,
            width: 32,
            layers: 2,
            heads: 2,
            codebook_size: 8,
            code_dim: 8,
            action_tokens: 2,
            fdm_layers: 2,
            fdm_width: 32,
            ..LamConfig::default()
        }
    }

    pub(crate) fn toy_clip(t: usize, size: usize, seed: u64) -> VideoClip {
        let mut rng = CounterRng::new(seed);
        let data: Vec<f32> = (0..t * size * size * CHANNELS).map(|_| rng.uniform()).collect();
        VideoClip { t, h: size, w: size, data }
    }

    #[test]
    fn patchify_counts_and_roundtrip() {
        let frame: Vec<f32> = (0..32 * 32 * CHANNELS).map(|i| i as f32).collect();
        let tokens = patchify(&frame, 32, 32, 4).unwrap();
        assert_eq!(tokens.rows(), 64);
        assert_eq!(tokens.cols(), 48);
        assert_eq!(unpatchify(&tokens, 32, 32, 4), frame);

        // p = H = W yields a single whole-frame token
        let one = patchify(&frame, 32, 32, 32).unwrap();
        assert_eq!(one.rows(), 1);
        assert_eq!(one.data(), frame.as_slice());

        assert!(patchify(&frame, 32, 32, 5).is_err());
    }

    #[test]
    fn lam_loss_decomposes_exactly() {
        let cfg = test_cfg();
        let mut store = ParamStore::new();
        let lam = Lam::build(&mut store, &cfg, 1);
        let clip = toy_clip(3, 16, 5);
        let t = Tape::new(&store);
        let (recon, vq, commit, total, _) = lam.loss(&t, &clip).unwrap();
        let terms = LamLossTerms::compose(
            t.value(recon).data()[0],
            t.value(vq).data()[0],
            t.value(commit).data()[0],
        );
        assert!((t.value(total).data()[0] - terms.total).abs() < 1e-6);
    }

    #[test]
    fn encode_then_extract_are_consistent() {
        let cfg = test_cfg();
        let mut store = ParamStore::new();
        let lam = Lam::build(&mut store, &cfg, 2);
        let env = EnvConfig { frame_size: 16, render_margin: 0, ..EnvConfig::default() };
        let ep = generate_episode(&env, 11, 4);
        let latents = lam.extract(&store, &ep.clip).unwrap();
        assert_eq!(latents.len(), 3);
        for la in &latents {
            assert_eq!(la.indices.len(), cfg.action_tokens);
            // embeddings equal codebook entries at those indices exactly
            let cb = store.value(lam.quantizer.codebook);
            for (g, &idx) in la.indices.iter().enumerate() {
                assert_eq!(la.embeddings.row(g), cb.row(idx));
            }
        }
    }
}
