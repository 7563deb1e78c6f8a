//! Procedural talking-head generator.
//!
//! Each identity owns an appearance (face layout, skin texture, background)
//! and a motion program (oscillating brow, mouth, head pose and blinks with a
//! left/right asymmetry). A video renders the target's appearance animated by
//! the driver's program; per-video phases and jitter come from a seed mixed
//! from `(motion_seed, target, driver, index)`. Style tags post-process frames
//! with a blur, noise level and tone curve to mimic different generators.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Manifest, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SIDECAR_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub videos_per_pair: usize,
    pub frame_count_range: [usize; 2],
    pub frame_size: usize,
    pub motion_seed: u64,
    pub style_tags: Vec<String>,
    /// Identities assigned to the validation split (taken after train).
    pub val_identities: usize,
    /// Identities assigned to the test split (the last ones).
    pub test_identities: usize,
    pub fps: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 4,
            videos_per_pair: 2,
            frame_count_range: [48, 80],
            frame_size: 128,
            motion_seed: 0,
            style_tags: vec!["style_a".into()],
            val_identities: 0,
            test_identities: 0,
            fps: 25.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_identities < 2 {
            return bad(format!("n_identities must be >= 2, got {}", self.n_identities));
        }
        if self.videos_per_pair == 0 {
            return bad("videos_per_pair must be >= 1".into());
        }
        let [lo, hi] = self.frame_count_range;
        if lo < 1 || hi < lo {
            return bad(format!("invalid frame_count_range [{lo}, {hi}]"));
        }
        if self.frame_size < 32 {
            return bad(format!("frame_size must be >= 32, got {}", self.frame_size));
        }
        if self.style_tags.is_empty() {
            return bad("style_tags must not be empty".into());
        }
        let mut tags = self.style_tags.clone();
        tags.sort();
        tags.dedup();
        if tags.len() != self.style_tags.len() {
            return bad("style_tags must be distinct".into());
        }
        if let Some(t) = self
            .style_tags
            .iter()
            .find(|t| t.is_empty() || t.contains(['/', '\\']) || t.starts_with('.'))
        {
            return bad(format!("style tag `{t}` is not a valid directory name"));
        }
        if self.val_identities + self.test_identities >= self.n_identities {
            return bad("at least one identity must remain in the train split".into());
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        Ok(())
    }

    pub fn identity_ids(&self) -> Vec<String> {
        let width = (self.n_identities - 1).to_string().len().max(2);
        (0..self.n_identities)
            .map(|i| format!("id{i:0width$}"))
            .collect()
    }

    pub fn identity_split(&self, index: usize) -> Split {
        let train = self.n_identities - self.val_identities - self.test_identities;
        if index < train {
            Split::Train
        } else if index < train + self.val_identities {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// A sinusoid term `amp · sin(2π·freq·u + phase)` over normalised image
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureWave {
    pub freq_x: f64,
    pub freq_y: f64,
    pub phase: f64,
    pub amplitude: f64,
}

/// Static look of a target identity, in normalised `[0, 1]` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceParams {
    pub background: f64,
    pub background_wave: TextureWave,
    pub face_center: [f64; 2],
    pub face_radii: [f64; 2],
    pub skin_tone: f64,
    pub skin_texture: Vec<TextureWave>,
    pub eye_offset_x: f64,
    pub eye_y: f64,
    pub eye_radii: [f64; 2],
    pub brow_gap: f64,
    pub brow_half_length: f64,
    pub mouth_y: f64,
    pub mouth_half_width: f64,
    pub feature_tone: f64,
}

impl AppearanceParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let wave = |rng: &mut dyn rand::RngCore, f: f64, a: f64| TextureWave {
            freq_x: rng.random_range(-f..f),
            freq_y: rng.random_range(-f..f),
            phase: rng.random_range(0.0..TAU),
            amplitude: rng.random_range(0.3 * a..a),
        };
        let skin_tone = rng.random_range(0.45..0.85);
        let background = if rng.random_bool(0.5) {
            rng.random_range(0.05..0.3)
        } else {
            rng.random_range(0.85..1.0)
        };
        Self {
            background,
            background_wave: wave(rng, 6.0, 0.08),
            face_center: [rng.random_range(0.46..0.54), rng.random_range(0.47..0.53)],
            face_radii: [rng.random_range(0.27..0.34), rng.random_range(0.33..0.40)],
            skin_tone,
            skin_texture: (0..3).map(|_| wave(rng, 5.0, 0.06)).collect(),
            eye_offset_x: rng.random_range(0.10..0.14),
            eye_y: rng.random_range(0.40..0.45),
            eye_radii: [rng.random_range(0.045..0.065), rng.random_range(0.03..0.045)],
            brow_gap: rng.random_range(0.06..0.08),
            brow_half_length: rng.random_range(0.06..0.08),
            mouth_y: rng.random_range(0.66..0.71),
            mouth_half_width: rng.random_range(0.08..0.12),
            feature_tone: (skin_tone - rng.random_range(0.35..0.45)).max(0.0),
        }
    }
}

/// Oscillator `amplitude · sin(2π·frequency·t + phase)` with `t` in frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oscillator {
    pub frequency: f64,
    pub amplitude: f64,
}

/// Motion program of a driver identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub brow: Oscillator,
    /// In `[-1, 1]`; positive raises the left brow more than the right.
    pub brow_asymmetry: f64,
    /// Phase lag of the right brow relative to the left, in radians.
    pub brow_lag: f64,
    pub mouth: Oscillator,
    /// Relative weight of the mouth's second harmonic.
    pub mouth_harmonic: f64,
    pub sway: Oscillator,
    pub nod: Oscillator,
    /// Mean frames between blinks.
    pub blink_period: f64,
    pub blink_duration: f64,
    /// In `[0, 1)`; how much less the right eye closes during a blink.
    pub blink_asymmetry: f64,
}

impl MotionParams {
    pub fn sample(rng: &mut impl Rng) -> Self {
        let osc = |rng: &mut dyn rand::RngCore, f: (f64, f64), a: (f64, f64)| Oscillator {
            frequency: rng.random_range(f.0..f.1),
            amplitude: rng.random_range(a.0..a.1),
        };
        Self {
            brow: osc(rng, (0.04, 0.20), (0.03, 0.07)),
            brow_asymmetry: rng.random_range(-0.8..0.8),
            brow_lag: rng.random_range(-PI / 2.0..PI / 2.0),
            mouth: osc(rng, (0.05, 0.22), (0.03, 0.09)),
            mouth_harmonic: rng.random_range(0.0..0.8),
            sway: osc(rng, (0.02, 0.12), (0.01, 0.05)),
            nod: osc(rng, (0.03, 0.15), (0.01, 0.04)),
            blink_period: rng.random_range(10.0..40.0),
            blink_duration: rng.random_range(2.0..5.0),
            blink_asymmetry: rng.random_range(0.0..0.7),
        }
    }

    /// Number of scalar parameters that define the program.
    pub const SCALAR_COUNT: usize = 15;
}

/// Per-video realisation of a motion program.
#[derive(Debug, Clone)]
struct MotionPhases {
    brow: f64,
    mouth: f64,
    mouth_second: f64,
    sway: f64,
    nod: f64,
    blink_offset: f64,
    tempo: f64,
}

impl MotionPhases {
    fn sample(rng: &mut impl Rng) -> Self {
        Self {
            brow: rng.random_range(0.0..TAU),
            mouth: rng.random_range(0.0..TAU),
            mouth_second: rng.random_range(0.0..TAU),
            sway: rng.random_range(0.0..TAU),
            nod: rng.random_range(0.0..TAU),
            blink_offset: rng.random_range(0.0..1.0),
            tempo: rng.random_range(0.97..1.03),
        }
    }
}

/// Facial state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub brow_raise: [f64; 2],
    pub eye_open: [f64; 2],
    pub mouth_open: f64,
    pub offset: [f64; 2],
}

fn pose_at(m: &MotionParams, p: &MotionPhases, frame: f64) -> Pose {
    let t = frame * p.tempo;
    let wave = |o: &Oscillator, phase: f64| (TAU * o.frequency * t + phase).sin();
    let brow_l = 0.5 + 0.5 * wave(&m.brow, p.brow);
    let brow_r = 0.5 + 0.5 * wave(&m.brow, p.brow + m.brow_lag);
    let mouth_raw = (wave(&m.mouth, p.mouth)
        + m.mouth_harmonic * (2.0 * TAU * m.mouth.frequency * t + p.mouth_second).sin())
        / (1.0 + m.mouth_harmonic);
    let cycle = (t / m.blink_period + p.blink_offset).fract() * m.blink_period;
    let closure = (1.0 - (cycle - m.blink_duration).abs() / m.blink_duration).max(0.0);
    Pose {
        brow_raise: [
            m.brow.amplitude * (1.0 + m.brow_asymmetry) * brow_l,
            m.brow.amplitude * (1.0 - m.brow_asymmetry) * brow_r,
        ],
        eye_open: [1.0 - closure, 1.0 - closure * (1.0 - m.blink_asymmetry)],
        mouth_open: m.mouth.amplitude * (0.5 + 0.5 * mouth_raw),
        offset: [m.sway.amplitude * wave(&m.sway, p.sway), m.nod.amplitude * wave(&m.nod, p.nod)],
    }
}

/// Rendering perturbations that emulate a particular generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    /// Gaussian blur sigma in pixels (0 disables).
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub gamma: f64,
}

impl StyleParams {
    /// Deterministic parameters for a tag. The first three tags of the
    /// conventional set map to clearly distinct looks.
    pub fn for_tag(tag: &str) -> Self {
        match tag {
            "style_a" => Self {
                blur_sigma: 0.0,
                noise_std: 0.005,
                gamma: 1.0,
            },
            "style_b" => Self {
                blur_sigma: 0.9,
                noise_std: 0.0,
                gamma: 0.8,
            },
            "style_c" => Self {
                blur_sigma: 0.4,
                noise_std: 0.02,
                gamma: 1.3,
            },
            other => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0, &["style", other]));
                Self {
                    blur_sigma: rng.random_range(0.0..1.0),
                    noise_std: rng.random_range(0.0..0.02),
                    gamma: rng.random_range(0.75..1.35),
                }
            }
        }
    }
}

/// Contents of the per-video sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoSidecar {
    pub appearance_params: AppearanceParams,
    pub motion_params: MotionParams,
    pub style_tag: String,
}

pub fn read_sidecar(video_dir: &Path) -> Result<VideoSidecar> {
    let path = video_dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

/// Soft inside-mask of an axis-aligned ellipse, about one pixel wide at the
/// edge.
fn ellipse_mask(dx: f64, dy: f64, rx: f64, ry: f64, pixel: f64) -> f64 {
    let r = ((dx / rx).powi(2) + (dy / ry).powi(2)).sqrt();
    let dist = (r - 1.0) * rx.min(ry);
    1.0 / (1.0 + (dist / (0.5 * pixel)).exp())
}

fn texture(waves: &[TextureWave], u: f64, v: f64) -> f64 {
    waves
        .iter()
        .map(|w| w.amplitude * (TAU * (w.freq_x * u + w.freq_y * v) + w.phase).sin())
        .sum()
}

/// Renders one clean frame in `[0, 1]`, row-major `size × size`.
pub fn render_frame(a: &AppearanceParams, pose: &Pose, size: usize) -> Vec<f64> {
    let pixel = 1.0 / size as f64;
    let [ox, oy] = pose.offset;
    let [cx, cy] = [a.face_center[0] + ox, a.face_center[1] + oy];
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let v = (y as f64 + 0.5) * pixel;
        for x in 0..size {
            let u = (x as f64 + 0.5) * pixel;
            let bg = a.background + texture(std::slice::from_ref(&a.background_wave), u, v);
            let face = ellipse_mask(u - cx, v - cy, a.face_radii[0], a.face_radii[1], pixel);
            let skin = a.skin_tone + texture(&a.skin_texture, u - ox, v - oy);
            let mut val = bg + face * (skin - bg);
            let mut paint = |m: f64| val += face * m * (a.feature_tone - val);
            for (side, sign) in [(0, -1.0), (1, 1.0)] {
                let ex = cx + sign * a.eye_offset_x;
                let ey = a.eye_y + oy;
                let open = pose.eye_open[side].max(0.08);
                paint(ellipse_mask(u - ex, v - ey, a.eye_radii[0], a.eye_radii[1] * open, pixel));
                let by = ey - a.brow_gap - pose.brow_raise[side];
                paint(ellipse_mask(u - ex, v - by, a.brow_half_length, 0.014, pixel));
            }
            let my = a.mouth_y + oy;
            let mouth_h = 0.012 + pose.mouth_open;
            let mouth_w = a.mouth_half_width * (1.0 - 0.8 * pose.mouth_open);
            paint(ellipse_mask(u - cx, v - my, mouth_w, mouth_h, pixel));
            out.push(val);
        }
    }
    out
}

fn gaussian_blur(img: &mut [f64], size: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |i: isize| i.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..size {
        for x in 0..size {
            tmp[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * img[y * size + clamp(x as isize + k as isize - radius)])
                .sum();
        }
    }
    for y in 0..size {
        for x in 0..size {
            img[y * size + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - radius) * size + x])
                .sum();
        }
    }
}

fn stylise(img: &mut [f64], size: usize, style: &StyleParams, rng: &mut ChaCha8Rng) {
    gaussian_blur(img, size, style.blur_sigma);
    let noise = (style.noise_std > 0.0)
        .then(|| Normal::new(0.0, style.noise_std).expect("finite std"));
    for v in img.iter_mut() {
        let mut p = v.clamp(0.0, 1.0).powf(style.gamma);
        if let Some(n) = &noise {
            p += n.sample(rng);
        }
        *v = p.clamp(0.0, 1.0);
    }
}

fn frame_file(index: usize) -> String {
    format!("frame_{index:05}.png")
}

/// Identity-level parameters, independent of any particular video.
pub fn appearance_for(motion_seed: u64, identity: &str) -> AppearanceParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(motion_seed, &["appearance", identity]));
    AppearanceParams::sample(&mut rng)
}

pub fn motion_for(motion_seed: u64, identity: &str) -> MotionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(motion_seed, &["motion", identity]));
    MotionParams::sample(&mut rng)
}

/// Writes every `(target, driver)` pair within each split, `videos_per_pair`
/// times per style tag, under `out_dir/videos/<style>/`, plus
/// `out_dir/manifest.jsonl`.
pub fn generate_synthetic_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ids = cfg.identity_ids();
    let appearances: Vec<_> = ids.iter().map(|id| appearance_for(cfg.motion_seed, id)).collect();
    let motions: Vec<_> = ids.iter().map(|id| motion_for(cfg.motion_seed, id)).collect();
    let mut records = Vec::new();
    for style in &cfg.style_tags {
        let style_params = StyleParams::for_tag(style);
        for (ti, target) in ids.iter().enumerate() {
            for (di, driver) in ids.iter().enumerate() {
                let split = cfg.identity_split(ti);
                if cfg.identity_split(di) != split {
                    continue;
                }
                for k in 0..cfg.videos_per_pair {
                    let rel = PathBuf::from("videos")
                        .join(style)
                        .join(format!("{target}__{driver}__{k:02}"));
                    let dir = out_dir.join(&rel);
                    let num_frames = render_video(
                        cfg,
                        &dir,
                        (target, &appearances[ti]),
                        (driver, &motions[di]),
                        k,
                        style,
                        &style_params,
                    )?;
                    records.push(VideoRecord {
                        video_path: dir,
                        target_id: target.clone(),
                        driver_id: driver.clone(),
                        generator: style.clone(),
                        split,
                        num_frames,
                        fps: cfg.fps,
                    });
                }
            }
        }
    }
    let manifest = Manifest::from_records(records)?;
    manifest.save(&out_dir.join(MANIFEST_FILE), Some(out_dir))?;
    Ok(manifest)
}

fn render_video(
    cfg: &SynthConfig,
    dir: &Path,
    (target, appearance): (&str, &AppearanceParams),
    (driver, motion): (&str, &MotionParams),
    index: usize,
    style: &str,
    style_params: &StyleParams,
) -> Result<usize> {
    let idx = index.to_string();
    let mut video_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(cfg.motion_seed, &["video", target, driver, &idx]));
    let [lo, hi] = cfg.frame_count_range;
    let num_frames = video_rng.random_range(lo..=hi);
    let phases = MotionPhases::sample(&mut video_rng);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.motion_seed,
        &["noise", target, driver, &idx, style],
    ));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let size = cfg.frame_size;
    for f in 0..num_frames {
        let pose = pose_at(motion, &phases, f as f64);
        let mut img = render_frame(appearance, &pose, size);
        stylise(&mut img, size, style_params, &mut noise_rng);
        let gray = GrayImage::from_fn(size as u32, size as u32, |x, y| {
            Luma([(img[y as usize * size + x as usize] * 255.0).round() as u8])
        });
        let path = dir.join(frame_file(f));
        gray.save(&path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(&path, io),
            other => Error::Decode {
                path: path.clone(),
                message: other.to_string(),
            },
        })?;
    }
    let sidecar = VideoSidecar {
        appearance_params: appearance.clone(),
        motion_params: motion.clone(),
        style_tag: style.to_string(),
    };
    let path = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(num_frames)
}
