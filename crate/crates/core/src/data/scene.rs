use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{mix_seed, Domain, DomainSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BACKGROUND: u8 = 0;
pub const HEAD: u8 = 1;
pub const UPPER_BODY: u8 = 2;
pub const LOWER_BODY: u8 = 3;
pub const NUM_CLASSES: usize = 4;

const MIN_CANVAS: usize = 16;
const ATTEMPTS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneParams {
    pub seed: u64,
    /// `(H, W)`.
    pub canvas_hw: (usize, usize),
    /// Figure height as a fraction of the canvas height.
    pub scale_range: (f64, f64),
    /// Amplitude of limb angle, lean and placement perturbations.
    pub pose_jitter: f64,
    /// Amplitude of background texture and per-pixel color noise.
    pub texture_level: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams { seed: 0, canvas_hw: (49, 25), scale_range: (0.75, 1.0), pose_jitter: 1.0, texture_level: 0.15 }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.canvas_hw;
        if h < MIN_CANVAS || w < MIN_CANVAS {
            return Err(Error::InvalidConfig(format!(
                "canvas {h}×{w} is too small for a figure (minimum {MIN_CANVAS}×{MIN_CANVAS})"
            )));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!("scale range ({lo}, {hi}) must satisfy 0 < lo ≤ hi ≤ 1")));
        }
        if !(self.pose_jitter >= 0.0 && self.pose_jitter.is_finite()) {
            return Err(Error::InvalidConfig("pose jitter must be finite and nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.texture_level) {
            return Err(Error::InvalidConfig("texture level must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Thick line segment.
struct Strip {
    a: (f64, f64),
    b: (f64, f64),
    half_width: f64,
}

impl Strip {
    fn contains(&self, p: (f64, f64)) -> bool {
        let (dx, dy) = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = dx * dx + dy * dy;
        let t =
            if len2 == 0.0 { 0.0 } else { (((p.0 - self.a.0) * dx + (p.1 - self.a.1) * dy) / len2).clamp(0.0, 1.0) };
        let (qx, qy) = (self.a.0 + t * dx - p.0, self.a.1 + t * dy - p.1);
        qx * qx + qy * qy <= self.half_width * self.half_width
    }
}

struct Figure {
    head_center: (f64, f64),
    head_radii: (f64, f64),
    torso_top: f64,
    torso_bottom: f64,
    torso_x: (f64, f64),
    torso_half: (f64, f64),
    arms: [Strip; 2],
    legs: [Strip; 2],
}

impl Figure {
    fn sample(rng: &mut ChaCha8Rng, p: &SceneParams) -> Figure {
        let (h, w) = (p.canvas_hw.0 as f64, p.canvas_hw.1 as f64);
        let scale = if p.scale_range.0 < p.scale_range.1 {
            rng.gen_range(p.scale_range.0..p.scale_range.1)
        } else {
            p.scale_range.0
        };
        let j = p.pose_jitter;
        let mut jit = |amp: f64| amp * j * rng.gen_range(-1.0..1.0);
        let fh = scale * 0.96 * h;
        let margin = (h - fh).max(0.0);
        let top = 0.5 * margin + jit(0.5 * margin);
        let cx = 0.5 * w + jit(0.08 * w);
        let unit = fh.min(2.0 * w);

        let head_center = (cx + jit(0.02 * unit), top + 0.09 * fh);
        let head_radii = (0.075 * unit * (1.0 + jit(0.1)), 0.09 * fh);
        let torso_top = top + 0.19 * fh;
        let torso_bottom = top + 0.55 * fh;
        let lean = jit(0.05 * unit);
        let torso_x = (cx, cx + lean);
        let torso_half = (0.16 * unit * (1.0 + jit(0.1)), 0.12 * unit * (1.0 + jit(0.1)));

        let arm_len = 0.36 * fh;
        let arm_half = (0.035 * unit).max(0.75);
        let arms = [-1.0, 1.0].map(|side: f64| {
            let angle = 0.2 + jit(0.15);
            let a = (cx + side * (torso_half.0 - arm_half), torso_top + arm_half);
            Strip { a, b: (a.0 + side * arm_len * angle.sin(), a.1 + arm_len * angle.cos()), half_width: arm_half }
        });
        let foot_y = top + fh;
        let leg_half = (0.05 * unit).max(0.9);
        let legs = [-1.0, 1.0].map(|side: f64| {
            let a = (cx + lean + side * 0.5 * torso_half.1, torso_bottom - leg_half);
            let spread = 0.08 + jit(0.06);
            let len = foot_y - a.1;
            Strip { a, b: (a.0 + side * len * spread.sin(), foot_y), half_width: leg_half }
        });
        Figure { head_center, head_radii, torso_top, torso_bottom, torso_x, torso_half, arms, legs }
    }

    fn class_at(&self, p: (f64, f64)) -> u8 {
        let (dx, dy) = ((p.0 - self.head_center.0) / self.head_radii.0, (p.1 - self.head_center.1) / self.head_radii.1);
        if dx * dx + dy * dy <= 1.0 {
            return HEAD;
        }
        if self.arms.iter().any(|s| s.contains(p)) {
            return UPPER_BODY;
        }
        if p.1 >= self.torso_top && p.1 <= self.torso_bottom {
            let t = (p.1 - self.torso_top) / (self.torso_bottom - self.torso_top);
            let x = self.torso_x.0 + t * (self.torso_x.1 - self.torso_x.0);
            let half = self.torso_half.0 + t * (self.torso_half.1 - self.torso_half.0);
            if (p.0 - x).abs() <= half {
                return UPPER_BODY;
            }
        }
        if self.legs.iter().any(|s| s.contains(p)) {
            return LOWER_BODY;
        }
        BACKGROUND
    }
}

fn palette(rng: &mut ChaCha8Rng) -> [[f64; 3]; NUM_CLASSES] {
    let grey = rng.gen_range(0.35..0.75);
    let tint = [0, 1, 2].map(|_| rng.gen_range(-0.12..0.12));
    let background = [grey + tint[0], grey + tint[1], grey + tint[2]];
    let skin = rng.gen_range(0.7..0.95);
    let head = [skin, skin * rng.gen_range(0.62..0.78), skin * rng.gen_range(0.45..0.62)];
    let upper = [0, 1, 2].map(|_| rng.gen_range(0.1..0.95));
    let dark = rng.gen_range(0.08..0.35);
    let lower = [dark, dark + rng.gen_range(0.0..0.1), dark + rng.gen_range(0.05..0.3)];
    [background, head, upper, lower]
}

/// Render scene `index`: a figure with head, torso, arms and legs over a
/// textured background. Deterministic in `(params.seed, index)`; every class
/// is present in the label map.
pub fn generate_scene(params: &SceneParams, index: u64) -> Result<DomainSample> {
    params.validate()?;
    let (h, w) = params.canvas_hw;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, index));
    for _ in 0..ATTEMPTS {
        let figure = Figure::sample(&mut rng, params);
        let labels: Vec<u8> =
            (0..h * w).map(|i| figure.class_at(((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))).collect();
        let mut present = [false; NUM_CLASSES];
        for &c in &labels {
            present[c as usize] = true;
        }
        if !present.iter().all(|p| *p) {
            continue;
        }
        let colors = palette(&mut rng);
        let tex = params.texture_level;
        let freq = (rng.gen_range(0.2..0.9), rng.gen_range(0.2..0.9));
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut image = vec![0.0f32; 3 * h * w];
        for (i, &c) in labels.iter().enumerate() {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let shade = if c == BACKGROUND {
                tex * ((freq.0 * x + freq.1 * y + phase).sin() + rng.gen_range(-0.5..0.5))
            } else {
                0.25 * tex * rng.gen_range(-1.0..1.0)
            };
            for ch in 0..3 {
                image[ch * h * w + i] = (colors[c as usize][ch] + shade).clamp(0.0, 1.0) as f32;
            }
        }
        return Ok(DomainSample {
            id: format!("{index:05}"),
            image: Tensor::new(vec![3, h, w], image)?,
            label: Some(Tensor::new(vec![h, w], labels)?),
            domain: Domain::Source,
        });
    }
    Err(Error::InvalidConfig(format!("could not place a complete figure on a {h}×{w} canvas")))
}
