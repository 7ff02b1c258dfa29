//! Latent-action probing, video prediction metrics, action transfer, and the
//! comparative report harness.

mod metrics;
mod plot;
mod probe;
mod report;
mod transfer;

pub use metrics::{psnr, ssim, ssim_clip, PSNR_CAP_DB};
pub use plot::{grouped_bar_chart, line_chart, Series};
pub use probe::{collect_probe_data, median_baseline_l1, shuffled, train_probe, ProbeData, ProbeOutcome};
pub use report::{MethodRow, Report, VideoMetricReport};
pub use transfer::{action_transfer, agent_track, displacement_correlation};

use wmlab_nn::CounterRng;

use crate::error::Result;
use crate::exec::{map_indexed, Exec};
use crate::synthenv::LoadedSplit;
use crate::training::{center_crop, crop_window, Models};
use crate::wm::{sample, SampleParams};

/// Action-conditioned video prediction metrics over a fixed test split: for
/// each episode, extract latents from the ground-truth window with the frozen
/// LAM, regenerate frames 2..T from frame 1, and score the generated frames.
pub fn evaluate_video_metrics(
    models: &Models,
    test: &LoadedSplit,
    clip_len: usize,
    max_clips: usize,
    noise_seed: u64,
    exec: Exec,
) -> Result<VideoMetricReport> {
    let n = test.len().min(max_clips);
    if n == 0 {
        return Err(crate::error::Error::MissingArtifact("empty test split".into()));
    }
    let size = models.lam.cfg.frame_size;
    let results = map_indexed(exec, n, |i| -> Result<(f64, f64)> {
        let stored = &test.clips[i];
        let oy = (stored.h - size) / 2;
        let ox = (stored.w - size) / 2;
        let gt = crop_window(stored, 0, clip_len.min(stored.t), oy, ox, size);
        let latents = models.lam.extract(&models.store, &gt)?;
        let params = SampleParams {
            steps: models.wm.cfg.denoise_steps,
            guidance_scale: models.wm.cfg.guidance_scale,
            noise_seed: CounterRng::keyed(&[noise_seed, i as u64]).next_u64(),
        };
        let pred = sample(&models.store, &models.wm, &gt.frame(0), &latents, &params)?;
        // score only the generated frames
        let pred_gen = crop_window(&pred, 1, pred.t - 1, 0, 0, size);
        let gt_gen = crop_window(&gt, 1, gt.t - 1, 0, 0, size);
        Ok((psnr(&pred_gen, &gt_gen)?, ssim_clip(&pred_gen, &gt_gen)?))
    });
    let mut per_psnr = Vec::with_capacity(n);
    let mut per_ssim = Vec::with_capacity(n);
    for r in results {
        let (p, s) = r?;
        per_psnr.push(p);
        per_ssim.push(s);
    }
    let psnr_mean = per_psnr.iter().sum::<f64>() / n as f64;
    let ssim_mean = per_ssim.iter().sum::<f64>() / n as f64;
    Ok(VideoMetricReport {
        psnr_db: psnr_mean,
        ssim: ssim_mean,
        ssim_x100: ssim_mean * 100.0,
        per_episode_psnr: per_psnr,
        per_episode_ssim: per_ssim,
    })
}

/// Center-cropped model-sized views of a split (shared eval helper).
pub fn model_views(split: &LoadedSplit, size: usize) -> Vec<crate::synthenv::VideoClip> {
    split.clips.iter().map(|c| center_crop(c, size)).collect()
}
