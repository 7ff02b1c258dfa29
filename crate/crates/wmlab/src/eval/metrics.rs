use crate::error::{Error, Result};
use crate::synthenv::{Frame, VideoClip, CHANNELS};

pub const PSNR_CAP_DB: f64 = 100.0;
const SSIM_WINDOW: usize = 7;
const C1: f64 = 1e-4; // (0.01)^2 on [0,1] range
const C2: f64 = 9e-4; // (0.03)^2

/// 10·log10(1 / MSE) over all pixels and frames, capped at 100 dB so
/// identical clips stay finite.
pub fn psnr(pred: &VideoClip, gt: &VideoClip) -> Result<f64> {
    if (pred.t, pred.h, pred.w) != (gt.t, gt.h, gt.w) {
        return Err(Error::Shape("psnr clips differ in shape".into()));
    }
    let mut mse = 0.0f64;
    for (a, b) in pred.data.iter().zip(&gt.data) {
        let d = (*a - *b) as f64;
        mse += d * d;
    }
    mse /= pred.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// SSIM with a 7×7 uniform window over valid positions, population statistics,
/// averaged over windows and channels.
pub fn ssim(pred: &Frame, gt: &Frame) -> Result<f64> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::Shape("ssim frames differ in shape".into()));
    }
    if pred.h < SSIM_WINDOW || pred.w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "frame {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window",
            pred.h, pred.w
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut acc = 0.0f64;
    let mut windows = 0usize;
    for c in 0..CHANNELS {
        for y0 in 0..=pred.h - SSIM_WINDOW {
            for x0 in 0..=pred.w - SSIM_WINDOW {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let i = ((y0 + dy) * pred.w + (x0 + dx)) * CHANNELS + c;
                        let x = pred.data[i] as f64;
                        let y = gt.data[i] as f64;
                        sx += x;
                        sy += y;
                        sxx += x * x;
                        syy += y * y;
                        sxy += x * y;
                    }
                }
                let mx = sx / n;
                let my = sy / n;
                let vx = sxx / n - mx * mx;
                let vy = syy / n - my * my;
                let cov = sxy / n - mx * my;
                acc += ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                    / ((mx * mx + my * my + C1) * (vx + vy + C2));
                windows += 1;
            }
        }
    }
    Ok(acc / windows as f64)
}

/// Mean frame-level SSIM over a clip.
pub fn ssim_clip(pred: &VideoClip, gt: &VideoClip) -> Result<f64> {
    if (pred.t, pred.h, pred.w) != (gt.t, gt.h, gt.w) {
        return Err(Error::Shape("ssim clips differ in shape".into()));
    }
    let mut acc = 0.0;
    for i in 0..pred.t {
        acc += ssim(&pred.frame(i), &gt.frame(i))?;
    }
    Ok(acc / pred.t as f64)
}
