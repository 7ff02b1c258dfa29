//! Deterministic synthetic video environment: a 2D arena with a gripper agent
//! and a few rigid shapes, rendered to small RGB frames. All state math is
//! f32 and every step is a pure function, so episodes regenerate bit-exactly
//! from their seed.

mod dataset;

pub use dataset::{
    dataset_digest, env_config_hash, generate_dataset, generate_episode, load_dataset,
    DataGenConfig, Dataset, Episode, LoadedSplit, Manifest, ManifestEntry, Split,
};

use serde::{Deserialize, Serialize};
use wmlab_nn::CounterRng;

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

const BACKGROUND: [f32; 3] = [0.08, 0.08, 0.10];
const AGENT_COLOR: [f32; 3] = [0.95, 0.95, 0.92];
const PALETTE: [[f32; 3]; 6] = [
    [0.90, 0.20, 0.15],
    [0.15, 0.75, 0.25],
    [0.20, 0.35, 0.95],
    [0.95, 0.85, 0.20],
    [0.85, 0.25, 0.85],
    [0.20, 0.85, 0.90],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embodiment {
    Cartesian,
    Polar,
}

/// One agent action: a bounded planar displacement plus a binary grip.
/// Cartesian values are (dx, dy); polar values are (angle, magnitude).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealAction {
    pub embodiment: Embodiment,
    pub values: [f32; 2],
    pub grip: bool,
}

impl RealAction {
    pub fn cartesian(dx: f32, dy: f32, grip: bool) -> Self {
        Self { embodiment: Embodiment::Cartesian, values: [dx, dy], grip }
    }

    pub fn polar(angle: f32, magnitude: f32, grip: bool) -> Self {
        Self { embodiment: Embodiment::Polar, values: [angle, magnitude], grip }
    }

    pub fn displacement(&self) -> [f32; 2] {
        match self.embodiment {
            Embodiment::Cartesian => self.values,
            Embodiment::Polar => {
                let (angle, mag) = (self.values[0], self.values[1]);
                [mag * angle.cos(), mag * angle.sin()]
            }
        }
    }

    /// Feature vector used by probes and adapters: raw values plus grip.
    pub fn features(&self) -> [f32; 3] {
        [self.values[0], self.values[1], if self.grip { 1.0 } else { 0.0 }]
    }
}

/// Re-parameterize a cartesian action as the polar action with the same
/// induced displacement (round-trips within 1e-6).
pub fn remap_to_polar(a: &RealAction) -> RealAction {
    assert_eq!(a.embodiment, Embodiment::Cartesian, "remap_to_polar expects a cartesian action");
    let [dx, dy] = a.values;
    let angle = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    RealAction::polar(angle, dx.hypot(dy), a.grip)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape_id: u8, // 0 = circle, 1 = square, 2 = triangle
    pub pos: [f32; 2],
    pub color_id: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_pos: [f32; 2],
    pub objects: Vec<SceneObject>,
    pub held_object: Option<usize>,
    pub rng_state: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Model-facing crop size; stored frames add `render_margin` per side.
    pub frame_size: usize,
    pub render_margin: usize,
    pub n_objects: usize,
    /// Shape ids objects are drawn from.
    pub object_shapes: Vec<u8>,
    pub agent_radius: f32,
    pub object_radius: f32,
    /// Maximum displacement magnitude per step (arena units).
    pub max_step: f32,
    /// Parameterization in which dataset actions are expressed.
    pub embodiment: Embodiment,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            frame_size: 32,
            render_margin: 2,
            n_objects: 2,
            object_shapes: vec![0, 1],
            agent_radius: 0.10,
            object_radius: 0.09,
            max_step: 0.25,
            embodiment: Embodiment::Cartesian,
        }
    }
}

impl EnvConfig {
    pub fn render_size(&self) -> usize {
        self.frame_size + 2 * self.render_margin
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_size < 8 {
            return Err(Error::Config("frame_size must be at least 8".into()));
        }
        if self.n_objects > 4 {
            return Err(Error::Config("n_objects must be at most 4".into()));
        }
        if self.object_shapes.is_empty() || self.object_shapes.iter().any(|&s| s > 2) {
            return Err(Error::Config("object_shapes must be nonempty ids in 0..=2".into()));
        }
        if !(self.max_step > 0.0 && self.max_step <= 0.5) {
            return Err(Error::Config("max_step must be in (0, 0.5]".into()));
        }
        Ok(())
    }
}

fn check_bounds(a: &RealAction, max_step: f32) -> Result<()> {
    let ok = match a.embodiment {
        Embodiment::Cartesian => {
            let [dx, dy] = a.values;
            dx.is_finite() && dy.is_finite() && dx.hypot(dy) <= max_step * (1.0 + 1e-5)
        }
        Embodiment::Polar => {
            let [angle, mag] = a.values;
            angle.is_finite()
                && angle.abs() <= std::f32::consts::PI * (1.0 + 1e-5)
                && (0.0..=max_step * (1.0 + 1e-5)).contains(&mag)
        }
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Bounds(format!(
            "action values {:?} outside {:?} bounds (max_step {})",
            a.values, a.embodiment, max_step
        )))
    }
}

/// Advance the environment one step. Pure: identical (state, action) pairs
/// give identical successors.
pub fn step(state: &EnvState, a: &RealAction, config: &EnvConfig) -> Result<EnvState> {
    check_bounds(a, config.max_step)?;
    let [dx, dy] = a.displacement();
    let mut next = state.clone();
    next.agent_pos = [
        (state.agent_pos[0] + dx).clamp(0.0, 1.0),
        (state.agent_pos[1] + dy).clamp(0.0, 1.0),
    ];
    next.held_object = if a.grip {
        match state.held_object {
            Some(i) => Some(i),
            None => {
                let grab = config.agent_radius + config.object_radius;
                state.objects.iter().position(|o| {
                    let ddx = o.pos[0] - next.agent_pos[0];
                    let ddy = o.pos[1] - next.agent_pos[1];
                    ddx.hypot(ddy) < grab
                })
            }
        }
    } else {
        None
    };
    if let Some(i) = next.held_object {
        next.objects[i].pos = next.agent_pos;
    }
    next.rng_state = state.rng_state.wrapping_add(1);
    Ok(next)
}

/// Single RGB frame, row-major (h, w, c) in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.w + col) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// T frames of identical geometry, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl VideoClip {
    pub fn from_frames(frames: &[Frame]) -> Self {
        let (h, w) = (frames[0].h, frames[0].w);
        let mut data = Vec::with_capacity(frames.len() * h * w * CHANNELS);
        for f in frames {
            assert_eq!((f.h, f.w), (h, w));
            data.extend_from_slice(&f.data);
        }
        Self { t: frames.len(), h, w, data }
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * CHANNELS
    }

    pub fn frame_data(&self, i: usize) -> &[f32] {
        &self.data[i * self.frame_len()..(i + 1) * self.frame_len()]
    }

    pub fn frame(&self, i: usize) -> Frame {
        Frame { h: self.h, w: self.w, data: self.frame_data(i).to_vec() }
    }
}

fn covers(shape_id: u8, center: [f32; 2], radius: f32, x: f32, y: f32) -> bool {
    let (dx, dy) = (x - center[0], y - center[1]);
    match shape_id {
        0 => dx * dx + dy * dy <= radius * radius,
        1 => dx.abs() <= radius && dy.abs() <= radius,
        // upward triangle with vertices on the circumscribed circle
        2 => {
            let r = radius * 1.25;
            let top = -r;
            let bottom = r * 0.5;
            if dy < top || dy > bottom {
                return false;
            }
            let half_width = (dy - top) / (bottom - top) * r * 0.866;
            dx.abs() <= half_width
        }
        _ => false,
    }
}

/// Anti-aliased rasterization: 2x2 supersampling box-filtered to one pixel.
/// Objects draw in index order, agent on top. Pure function of the state.
pub fn render(state: &EnvState, config: &EnvConfig) -> Frame {
    let s = config.render_size();
    let mut data = vec![0.0f32; s * s * CHANNELS];
    let sub = [0.25f32, 0.75];
    for row in 0..s {
        for col in 0..s {
            let mut acc = [0.0f32; 3];
            for sy in sub {
                for sx in sub {
                    let x = (col as f32 + sx) / s as f32;
                    let y = (row as f32 + sy) / s as f32;
                    let mut color = BACKGROUND;
                    for o in &state.objects {
                        if covers(o.shape_id, o.pos, config.object_radius, x, y) {
                            color = PALETTE[o.color_id as usize % PALETTE.len()];
                        }
                    }
                    if covers(0, state.agent_pos, config.agent_radius, x, y) {
                        color = AGENT_COLOR;
                    }
                    for c in 0..3 {
                        acc[c] += color[c];
                    }
                }
            }
            let i = (row * s + col) * CHANNELS;
            for c in 0..3 {
                data[i + c] = acc[c] * 0.25;
            }
        }
    }
    Frame { h: s, w: s, data }
}

/// Starting state drawn from a keyed rng; positions keep shapes inside the arena.
pub fn initial_state(config: &EnvConfig, rng: &mut CounterRng) -> EnvState {
    let lo = 0.15f32;
    let hi = 0.85f32;
    let agent_pos = [rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)];
    let mut objects = Vec::with_capacity(config.n_objects);
    for i in 0..config.n_objects {
        let shape_id = config.object_shapes[rng.range(config.object_shapes.len())];
        let pos = [rng.uniform_in(lo, hi), rng.uniform_in(lo, hi)];
        objects.push(SceneObject { shape_id, pos, color_id: (i % PALETTE.len()) as u8 });
    }
    EnvState { agent_pos, objects, held_object: None, rng_state: 0 }
}

/// Random action in the configured embodiment, bounded by max_step.
pub fn sample_action(config: &EnvConfig, rng: &mut CounterRng) -> RealAction {
    let angle = rng.uniform_in(-std::f32::consts::PI, std::f32::consts::PI);
    let mag = config.max_step * rng.uniform();
    let grip = rng.chance(0.15);
    match config.embodiment {
        Embodiment::Cartesian => RealAction::cartesian(mag * angle.cos(), mag * angle.sin(), grip),
        Embodiment::Polar => RealAction::polar(angle, mag, grip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state_at(x: f32, y: f32) -> EnvState {
        EnvState { agent_pos: [x, y], objects: vec![], held_object: None, rng_state: 0 }
    }

    #[test]
    fn identity_action_leaves_state_unchanged() {
        let cfg = EnvConfig::default();
        let s = EnvState {
            agent_pos: [0.5, 0.5],
            objects: vec![SceneObject { shape_id: 0, pos: [0.2, 0.2], color_id: 0 }],
            held_object: None,
            rng_state: 0,
        };
        let next = step(&s, &RealAction::cartesian(0.0, 0.0, false), &cfg).unwrap();
        assert_eq!(next.agent_pos, [0.5, 0.5]);
        assert_eq!(next.objects, s.objects);
    }

    #[test]
    fn displacement_clamps_to_arena() {
        let cfg = EnvConfig { max_step: 0.4, ..EnvConfig::default() };
        let next = step(&state_at(0.9, 0.5), &RealAction::cartesian(0.3, 0.0, false), &cfg).unwrap();
        assert_eq!(next.agent_pos, [1.0, 0.5]);
    }

    #[test]
    fn polar_and_cartesian_with_equal_displacement_agree() {
        let cfg = EnvConfig::default();
        let m = 0.2f32;
        let a = step(&state_at(0.5, 0.5), &RealAction::polar(0.0, m, false), &cfg).unwrap();
        let b = step(&state_at(0.5, 0.5), &RealAction::cartesian(m, 0.0, false), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_bounds_action_is_rejected() {
        let cfg = EnvConfig::default();
        let err = step(&state_at(0.5, 0.5), &RealAction::cartesian(0.4, 0.4, false), &cfg);
        assert!(matches!(err, Err(Error::Bounds(_))));
        let err = step(&state_at(0.5, 0.5), &RealAction::polar(0.1, -0.01, false), &cfg);
        assert!(matches!(err, Err(Error::Bounds(_))));
    }

    #[test]
    fn grip_picks_up_and_carries_object() {
        let cfg = EnvConfig::default();
        let s = EnvState {
            agent_pos: [0.5, 0.5],
            objects: vec![SceneObject { shape_id: 1, pos: [0.55, 0.5], color_id: 1 }],
            held_object: None,
            rng_state: 0,
        };
        let held = step(&s, &RealAction::cartesian(0.0, 0.0, true), &cfg).unwrap();
        assert_eq!(held.held_object, Some(0));
        assert_eq!(held.objects[0].pos, held.agent_pos);

        let moved = step(&held, &RealAction::cartesian(0.1, 0.05, true), &cfg).unwrap();
        assert_eq!(moved.objects[0].pos, moved.agent_pos);

        let released = step(&moved, &RealAction::cartesian(0.0, 0.0, false), &cfg).unwrap();
        assert_eq!(released.held_object, None);
    }

    #[test]
    fn remap_to_polar_matches_atan2() {
        let a = remap_to_polar(&RealAction::cartesian(1.0, 0.0, false));
        assert_eq!(a.values, [0.0, 1.0]);
        let b = remap_to_polar(&RealAction::cartesian(0.0, 1.0, false));
        assert!((b.values[0] - std::f32::consts::FRAC_PI_2).abs() < 1e-7);
        assert!((b.values[1] - 1.0).abs() < 1e-7);
        let c = remap_to_polar(&RealAction::cartesian(0.3, 0.4, false));
        assert!((c.values[0] - 0.4f32.atan2(0.3)).abs() < 1e-7);
        assert!((c.values[1] - 0.5).abs() < 1e-7);
        // zero vector maps to (0, 0)
        let z = remap_to_polar(&RealAction::cartesian(0.0, 0.0, true));
        assert_eq!(z.values, [0.0, 0.0]);
    }

    #[test]
    fn remap_round_trips_displacement() {
        let mut rng = CounterRng::new(3);
        for _ in 0..200 {
            let dx = rng.uniform_in(-0.2, 0.2);
            let dy = rng.uniform_in(-0.2, 0.2);
            let c = RealAction::cartesian(dx, dy, false);
            let p = remap_to_polar(&c);
            let [rx, ry] = p.displacement();
            assert!((rx - dx).abs() < 1e-6, "{rx} vs {dx}");
            assert!((ry - dy).abs() < 1e-6, "{ry} vs {dy}");
        }
    }

    #[test]
    fn empty_arena_renders_uniform_background() {
        let cfg = EnvConfig { n_objects: 0, ..EnvConfig::default() };
        let s = EnvState { agent_pos: [2.0, 2.0], objects: vec![], held_object: None, rng_state: 0 };
        let f = render(&s, &cfg);
        for row in 0..f.h {
            for col in 0..f.w {
                assert_eq!(f.pixel(row, col), BACKGROUND);
            }
        }
    }

    #[test]
    fn render_is_deterministic() {
        let cfg = EnvConfig::default();
        let mut rng = CounterRng::new(9);
        let s = initial_state(&cfg, &mut rng);
        assert_eq!(render(&s, &cfg), render(&s, &cfg));
    }

    #[test]
    fn object_center_pixel_takes_object_color() {
        // Place an object centered exactly on a pixel center: pixel (row, col)
        // has center ((col + 0.5)/S, (row + 0.5)/S). All four subsamples of
        // that pixel lie within the object radius, so the pixel color is the
        // object color exactly.
        let cfg = EnvConfig::default();
        let s_px = cfg.render_size();
        let (row, col) = (20usize, 14usize);
        let center = [(col as f32 + 0.5) / s_px as f32, (row as f32 + 0.5) / s_px as f32];
        let state = EnvState {
            agent_pos: [0.05, 0.05],
            objects: vec![SceneObject { shape_id: 0, pos: center, color_id: 2 }],
            held_object: None,
            rng_state: 0,
        };
        let f = render(&state, &cfg);
        assert_eq!(f.pixel(row, col), PALETTE[2]);
    }

    #[test]
    fn step_is_pure() {
        let cfg = EnvConfig::default();
        let mut rng = CounterRng::new(4);
        let s = initial_state(&cfg, &mut rng);
        let a = RealAction::cartesian(0.05, -0.08, true);
        assert_eq!(step(&s, &a, &cfg).unwrap(), step(&s, &a, &cfg).unwrap());
    }

    #[test]
    fn positions_stay_inside_arena_under_random_walk() {
        let cfg = EnvConfig::default();
        let mut rng = CounterRng::new(17);
        let mut s = initial_state(&cfg, &mut rng);
        for i in 0..300 {
            let mut arng = CounterRng::keyed(&[17, 0, i]);
            let a = sample_action(&cfg, &mut arng);
            s = step(&s, &a, &cfg).unwrap();
            for p in std::iter::once(&s.agent_pos).chain(s.objects.iter().map(|o| &o.pos)) {
                assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
            }
        }
    }
}
