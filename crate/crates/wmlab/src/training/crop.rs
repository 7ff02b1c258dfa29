use wmlab_nn::CounterRng;

use crate::error::{Error, Result};
use crate::synthenv::{VideoClip, CHANNELS};

/// Spatial crop at a fixed offset, applied to a temporal window of frames.
pub fn crop_window(
    clip: &VideoClip,
    t0: usize,
    t_len: usize,
    oy: usize,
    ox: usize,
    out_size: usize,
) -> VideoClip {
    assert!(t0 + t_len <= clip.t);
    assert!(oy + out_size <= clip.h && ox + out_size <= clip.w);
    let mut data = Vec::with_capacity(t_len * out_size * out_size * CHANNELS);
    for f in t0..t0 + t_len {
        let frame = clip.frame_data(f);
        for row in 0..out_size {
            let start = ((oy + row) * clip.w + ox) * CHANNELS;
            data.extend_from_slice(&frame[start..start + out_size * CHANNELS]);
        }
    }
    VideoClip { t: t_len, h: out_size, w: out_size, data }
}

/// One crop offset per clip, shared by every frame; deterministic in the rng.
pub fn random_crop(clip: &VideoClip, out_size: usize, rng: &mut CounterRng) -> Result<VideoClip> {
    if out_size > clip.h || out_size > clip.w {
        return Err(Error::Shape(format!(
            "crop {out_size} exceeds frame {}x{}",
            clip.h, clip.w
        )));
    }
    let oy = rng.range(clip.h - out_size + 1);
    let ox = rng.range(clip.w - out_size + 1);
    Ok(crop_window(clip, 0, clip.t, oy, ox, out_size))
}

/// Centered crop (the non-augmented path).
pub fn center_crop(clip: &VideoClip, out_size: usize) -> VideoClip {
    let oy = (clip.h - out_size) / 2;
    let ox = (clip.w - out_size) / 2;
    crop_window(clip, 0, clip.t, oy, ox, out_size)
}

/// Centered crop of a single frame.
pub fn center_crop_frame(frame: &crate::synthenv::Frame, out_size: usize) -> crate::synthenv::Frame {
    let clip = VideoClip { t: 1, h: frame.h, w: frame.w, data: frame.data.clone() };
    center_crop(&clip, out_size).frame(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(t: usize, s: usize) -> VideoClip {
        let data = (0..t * s * s * CHANNELS).map(|i| i as f32).collect();
        VideoClip { t, h: s, w: s, data }
    }

    #[test]
    fn full_size_crop_is_identity() {
        let c = clip(3, 6);
        let mut rng = CounterRng::new(1);
        let out = random_crop(&c, 6, &mut rng).unwrap();
        assert_eq!(out.data, c.data);
    }

    #[test]
    fn fixed_seed_gives_fixed_offset() {
        let c = clip(2, 8);
        let a = random_crop(&c, 4, &mut CounterRng::new(9)).unwrap();
        let b = random_crop(&c, 4, &mut CounterRng::new(9)).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn frames_share_the_offset() {
        // build a clip whose frames are shifted copies; if all frames use the
        // same offset, cropped frame deltas stay constant
        let s = 8;
        let mut data = Vec::new();
        for f in 0..3 {
            for i in 0..s * s * CHANNELS {
                data.push((i + f * 1000) as f32);
            }
        }
        let c = VideoClip { t: 3, h: s, w: s, data };
        let out = random_crop(&c, 5, &mut CounterRng::new(4)).unwrap();
        let fl = out.frame_len();
        for f in 1..3 {
            for i in 0..fl {
                assert_eq!(out.data[f * fl + i] - out.data[i], (f * 1000) as f32);
            }
        }
    }

    #[test]
    fn oversized_crop_is_rejected() {
        let c = clip(1, 4);
        assert!(random_crop(&c, 5, &mut CounterRng::new(0)).is_err());
    }
}
