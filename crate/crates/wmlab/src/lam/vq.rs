use wmlab_nn::{ParamId, ParamStore, Tape, Tensor, Var};

use super::LamConfig;
use crate::error::{Error, Result};

/// Result of quantizing a batch of pre-quant vectors.
pub struct Quantized {
    /// One code index per token row, nearest entry with ties to lowest index.
    pub indices: Vec<usize>,
    /// Straight-through surrogate: value equals the codebook entries, gradient
    /// w.r.t. the pre-quant input is the identity.
    pub st_embed: Var,
    /// ‖sg(pre) − entry‖² averaged per element; trains the codebook.
    pub vq_loss: Var,
    /// ‖pre − sg(entry)‖² averaged per element; trains the encoder.
    pub commit_loss: Var,
}

/// Vector-quantization bottleneck over a K×D codebook (parameter group
/// "quantizer"). Updates are loss-gradient based, not EMA.
pub struct Quantizer {
    pub codebook: ParamId,
    pub k: usize,
    pub d: usize,
}

impl Quantizer {
    pub fn build(store: &mut ParamStore, cfg: &LamConfig, seed: u64) -> Self {
        let codebook = store.add_normal(
            "quantizer",
            "vq.codebook",
            cfg.codebook_size,
            cfg.code_dim,
            0.5,
            seed,
        );
        Self { codebook, k: cfg.codebook_size, d: cfg.code_dim }
    }

    /// Nearest entry per row by squared Euclidean distance; strict `<` keeps
    /// the lowest index on ties.
    pub fn nearest(codebook: &Tensor, row: &[f32]) -> usize {
        let mut best = 0usize;
        let mut best_d = f32::INFINITY;
        for i in 0..codebook.rows() {
            let e = codebook.row(i);
            let mut d = 0.0f32;
            for (a, b) in row.iter().zip(e) {
                let diff = a - b;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn quantize(&self, t: &Tape, pre: Var) -> Result<Quantized> {
        if self.k == 0 {
            return Err(Error::Config("empty codebook".into()));
        }
        if pre.cols() != self.d {
            return Err(Error::Shape(format!(
                "pre-quant dim {} does not match codebook dim {}",
                pre.cols(),
                self.d
            )));
        }
        let pre_val = t.value(pre);
        if !pre_val.is_finite() {
            return Err(Error::Shape("non-finite pre-quant latents".into()));
        }
        let cb = t.param(self.codebook);
        let cb_val = t.value(cb);
        let indices: Vec<usize> = (0..pre.rows()).map(|r| Self::nearest(&cb_val, pre_val.row(r))).collect();

        let entries = t.gather_rows(cb, &indices);
        let vq_loss = t.mse(t.detach(pre), entries);
        let commit_loss = t.mse(pre, t.detach(entries));
        let st_embed = t.straight_through(pre, t.value(entries));
        Ok(Quantized { indices, st_embed, vq_loss, commit_loss })
    }
}
