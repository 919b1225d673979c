//! Glyph renderer for the two modalities.
//!
//! A glyph is a pedestrian-like silhouette (head, torso with a stripe texture,
//! legs, optional arms and bag) whose geometry comes from the identity's
//! `shape_params`. RGB renders paint the parts with the identity palette on a
//! dim background. IR renders ignore the palette: every part carries a fixed
//! latent emission colour, and the three latent bands are collapsed by a fixed
//! weighted sum, a power-law nonlinearity, and an inversion.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{CameraSpec, IdentitySpec, Modality, Sample};
use crate::seed;
use crate::tensor::Tensor;

pub const SHAPE_PARAMS: usize = 10;
pub const PALETTE_PARAMS: usize = 9;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Part {
    Background,
    Head,
    Torso { stripe: bool },
    Legs,
    Arms,
    Bag,
}

/// Silhouette geometry decoded from `shape_params` (body frame, y down, unit ~ half height).
struct Glyph {
    head_r: f64,
    shoulder: f64,
    waist: f64,
    torso_bottom: f64,
    leg_gap: f64,
    leg_width: f64,
    stripe_freq: f64,
    stripe_angle: f64,
    arm_len: f64,
    bag: f64,
}

const NECK: f64 = -0.52;
const FEET: f64 = 0.92;

impl Glyph {
    fn new(p: &[f64]) -> Self {
        let lerp = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * p[i];
        Glyph {
            head_r: lerp(0, 0.11, 0.21),
            shoulder: lerp(1, 0.22, 0.44),
            waist: lerp(2, 0.14, 0.32),
            torso_bottom: lerp(3, 0.02, 0.36),
            leg_gap: lerp(4, 0.015, 0.13),
            leg_width: lerp(5, 0.07, 0.15),
            stripe_freq: lerp(6, 2.0, 7.0),
            stripe_angle: lerp(7, -1.2, 1.2),
            arm_len: lerp(8, 0.0, 0.55),
            bag: p[9],
        }
    }

    fn part_at(&self, x: f64, y: f64) -> Part {
        // bag hangs at the right hip for bag > 0.55, left hip for bag < 0.2
        if self.bag > 0.55 || self.bag < 0.2 {
            let side = if self.bag > 0.55 { 1.0 } else { -1.0 };
            let size = if self.bag > 0.55 { 0.08 + 0.2 * (self.bag - 0.55) } else { 0.08 + 0.3 * (0.2 - self.bag) };
            let cx = side * (self.waist + 0.08 + size * 0.5);
            let cy = self.torso_bottom - 0.05;
            if (x - cx).abs() < size * 0.6 && (y - cy).abs() < size {
                return Part::Bag;
            }
        }
        let head_cy = NECK - self.head_r * 0.95;
        if x * x + (y - head_cy) * (y - head_cy) <= self.head_r * self.head_r {
            return Part::Head;
        }
        if y >= NECK && y <= self.torso_bottom {
            let t = (y - NECK) / (self.torso_bottom - NECK);
            let half = self.shoulder + (self.waist - self.shoulder) * t;
            if x.abs() <= half {
                let (s, c) = self.stripe_angle.sin_cos();
                let u = (x * c + (y - NECK) * s) * self.stripe_freq * std::f64::consts::PI;
                return Part::Torso { stripe: u.sin() > 0.35 };
            }
            if self.arm_len > 0.08 {
                let arm_bottom = NECK + self.arm_len * (FEET - NECK) * 0.6;
                let inner = half + 0.02;
                if y <= arm_bottom && x.abs() > inner && x.abs() <= inner + 0.07 {
                    return Part::Arms;
                }
            }
        }
        if y > self.torso_bottom && y <= FEET {
            let dx = x.abs() - self.leg_gap;
            if dx >= 0.0 && dx <= self.leg_width * 2.0 {
                return Part::Legs;
            }
        }
        Part::Background
    }
}

/// Fixed latent emission per part, three bands.
fn ir_latent(part: Part) -> [f64; 3] {
    match part {
        Part::Background => [0.10, 0.14, 0.08],
        Part::Head => [0.95, 0.90, 0.85],
        Part::Torso { stripe: false } => [0.70, 0.62, 0.55],
        Part::Torso { stripe: true } => [0.42, 0.35, 0.40],
        Part::Legs => [0.60, 0.58, 0.50],
        Part::Arms => [0.82, 0.78, 0.70],
        Part::Bag => [0.22, 0.20, 0.30],
    }
}

const IR_WEIGHTS: [f64; 3] = [0.5, 0.3, 0.2];
const IR_GAMMA: f64 = 0.6;

/// The fixed IR collapse: weighted band sum, power-law, inversion; maps into [0, 1].
pub fn ir_collapse(latent: [f64; 3]) -> f64 {
    let s: f64 = latent.iter().zip(IR_WEIGHTS).map(|(c, w)| c * w).sum();
    1.0 - s.clamp(0.0, 1.0).powf(IR_GAMMA)
}

fn rgb_color(part: Part, identity: &IdentitySpec, skin: [f64; 3]) -> [f64; 3] {
    let p = &identity.palette_params;
    let pick = |i: usize| [p[3 * i], p[3 * i + 1], p[3 * i + 2]].map(|v| 0.2 + 0.8 * v);
    match part {
        Part::Background => [0.0; 3],
        Part::Head => skin,
        Part::Torso { stripe } => {
            let c = pick(0);
            if stripe {
                c.map(|v| v * 0.45)
            } else {
                c
            }
        }
        Part::Legs => pick(1),
        Part::Arms | Part::Bag => pick(2),
    }
}

fn sym(rng: &mut impl Rng, amp: f64) -> f64 {
    if amp == 0.0 {
        0.0
    } else {
        rng.random_range(-amp..=amp)
    }
}

/// Render one sample. The output is deterministic in `(identity, camera, instance_seed)`
/// and already rounded to `f32` precision.
pub fn render_sample(
    identity: &IdentitySpec,
    camera: &CameraSpec,
    instance_seed: u64,
    size: usize,
    sample_id: u32,
) -> Sample {
    let mut rng = seed::rng(instance_seed, "render", camera.camera_id as u64);
    let nl = camera.nuisance_level;
    let glyph = Glyph::new(&identity.shape_params);

    let tx = sym(&mut rng, 0.16 * nl);
    let ty = sym(&mut rng, 0.10 * nl);
    let rot = sym(&mut rng, 0.25 * nl);
    let scale = 1.0 + sym(&mut rng, 0.15 * nl);
    let illum = 1.0 + sym(&mut rng, 0.35 * nl);
    let ir_shift = sym(&mut rng, 0.30 * nl);
    let bg_level = 0.08 + 0.22 * rng.random::<f64>() * nl.max(0.2);
    let bg_tint = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
    let bg_grad = sym(&mut rng, 0.15 * nl);
    let skin_base = 0.55 + 0.3 * rng.random::<f64>();
    let skin = [skin_base, skin_base * 0.8, skin_base * 0.65];
    let noise_sigma = 0.06 * nl;
    let noise = Normal::new(0.0, noise_sigma).expect("nonnegative sigma");

    let channels = camera.modality.channels();
    let mut data = vec![0.0f64; channels * size * size];
    let (sin_r, cos_r) = rot.sin_cos();
    const SS: usize = 2;
    for py in 0..size {
        for px in 0..size {
            let mut acc = [0.0f64; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    // canvas -> [-1, 1], then inverse camera transform -> body frame
                    let cx = ((px as f64 + (sx as f64 + 0.5) / SS as f64) / size as f64) * 2.0 - 1.0;
                    let cy = ((py as f64 + (sy as f64 + 0.5) / SS as f64) / size as f64) * 2.0 - 1.0;
                    let (dx, dy) = ((cx - tx) / scale, (cy - ty) / scale);
                    // narrow canvas: bodies are taller than wide
                    let bx = (cos_r * dx + sin_r * dy) * 1.25;
                    let by = -sin_r * dx + cos_r * dy;
                    let part = glyph.part_at(bx, by);
                    match camera.modality {
                        Modality::Rgb => {
                            let c = if part == Part::Background {
                                let g = bg_level * (1.0 + bg_grad * cy);
                                bg_tint.map(|t| g * (0.7 + 0.3 * t))
                            } else {
                                rgb_color(part, identity, skin).map(|v| v * illum)
                            };
                            for k in 0..3 {
                                acc[k] += c[k];
                            }
                        }
                        Modality::Ir => {
                            acc[0] += ir_collapse(ir_latent(part));
                        }
                    }
                }
            }
            let norm = (SS * SS) as f64;
            for k in 0..channels {
                let mut v = acc[k] / norm;
                if camera.modality == Modality::Ir {
                    v += ir_shift;
                }
                let v = (v * 2.0 - 1.0 + noise.sample(&mut rng)).clamp(-1.0, 1.0);
                data[(k * size + py) * size + px] = v as f32 as f64;
            }
        }
    }
    Sample {
        sample_id,
        identity_id: identity.identity_id,
        camera_id: camera.camera_id,
        modality: camera.modality,
        image: Tensor::new(vec![channels, size, size], data),
    }
}

/// Luminance view of an RGB image, used by diagnostics.
pub fn grayscale(image: &Tensor) -> Vec<f64> {
    let hw = image.dim(1) * image.dim(2);
    if image.dim(0) == 1 {
        return image.data().to_vec();
    }
    let d = image.data();
    (0..hw)
        .map(|i| 0.299 * d[i] + 0.587 * d[hw + i] + 0.114 * d[2 * hw + i])
        .collect()
}
