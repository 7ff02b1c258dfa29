use crate::error::Result;
use crate::synthenv::{Frame, VideoClip, CHANNELS};
use crate::training::Models;
use crate::wm::{sample, SampleParams};

/// Extract the latent actions of a source clip with the frozen LAM and let
/// the world model replay them from a different first frame.
pub fn action_transfer(
    models: &Models,
    source: &VideoClip,
    target_first_frame: &Frame,
    params: &SampleParams,
) -> Result<VideoClip> {
    let latents = models.lam.extract(&models.store, source)?;
    sample(&models.store, &models.wm, target_first_frame, &latents, params)
}

/// Centroid of near-white pixels per frame — a cheap agent tracker for
/// synthetic frames (the agent is the only white shape).
pub fn agent_track(clip: &VideoClip) -> Vec<Option<[f32; 2]>> {
    let mut out = Vec::with_capacity(clip.t);
    for i in 0..clip.t {
        let f = clip.frame_data(i);
        let (mut sx, mut sy, mut n) = (0.0f32, 0.0f32, 0usize);
        for y in 0..clip.h {
            for x in 0..clip.w {
                let p = (y * clip.w + x) * CHANNELS;
                let min_c = f[p].min(f[p + 1]).min(f[p + 2]);
                if min_c > 0.7 {
                    sx += x as f32;
                    sy += y as f32;
                    n += 1;
                }
            }
        }
        out.push((n > 0).then(|| [sx / n as f32 / clip.w as f32, sy / n as f32 / clip.h as f32]));
    }
    out
}

/// Pearson correlation between per-step displacements of two tracks
/// (concatenating the x and y components); None when a track is too sparse.
pub fn displacement_correlation(a: &[Option<[f32; 2]>], b: &[Option<[f32; 2]>]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 1..a.len().min(b.len()) {
        if let (Some(a0), Some(a1), Some(b0), Some(b1)) = (a[i - 1], a[i], b[i - 1], b[i]) {
            xs.push((a1[0] - a0[0]) as f64);
            ys.push((b1[0] - b0[0]) as f64);
            xs.push((a1[1] - a0[1]) as f64);
            ys.push((b1[1] - b0[1]) as f64);
        }
    }
    if xs.len() < 4 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx.sqrt() * vy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthenv::{generate_episode, EnvConfig};

    #[test]
    fn tracker_follows_the_rendered_agent() {
        let env = EnvConfig::default();
        let ep = generate_episode(&env, 77, 6);
        let track = agent_track(&ep.clip);
        assert!(track.iter().filter(|t| t.is_some()).count() >= 5);
    }

    #[test]
    fn identical_tracks_correlate_perfectly() {
        let a: Vec<Option<[f32; 2]>> =
            (0..6).map(|i| Some([0.1 * i as f32, 0.05 * (i * i) as f32])).collect();
        let c = displacement_correlation(&a, &a).unwrap();
        assert!((c - 1.0).abs() < 1e-9);
    }
}
