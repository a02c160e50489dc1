//! Deterministic procedural dataset fixtures: rendered faces plus a fixed
//! recapture-style spoof transform, written in the source-tree layout the
//! ingest stage consumes. Everything derives from one seed, so regenerating
//! a fixture is byte-identical.

use std::f64::consts::PI;
use std::path::Path;

use fas_nn::rng::{derive_seed, seeded_rng};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::image_buffer::ImageBuffer;
use crate::ingest::AttackType;

/// Upper bound on distinct spoof styles (tags a..j).
pub const MAX_STYLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureSpec {
    pub subjects: usize,
    pub live_videos: usize,
    pub frames_per_video: usize,
    pub spoof_styles: usize,
    pub spoof_videos_per_style: usize,
    pub spoof_frames_per_video: usize,
    /// Rendered frame side in pixels.
    pub frame_size: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            subjects: 4,
            live_videos: 10,
            frames_per_video: 10,
            spoof_styles: 10,
            spoof_videos_per_style: 2,
            spoof_frames_per_video: 5,
            frame_size: 64,
            seed: 0,
        }
    }
}

impl FixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.live_videos == 0 || self.frames_per_video == 0 {
            return Err(CoreError::InvalidInput("fixture needs live data".into()));
        }
        if !(1..=MAX_STYLES).contains(&self.spoof_styles) {
            return Err(CoreError::InvalidInput(format!(
                "spoof_styles must lie in 1..={MAX_STYLES}, got {}",
                self.spoof_styles
            )));
        }
        if self.spoof_videos_per_style == 0 || self.spoof_frames_per_video == 0 {
            return Err(CoreError::InvalidInput("fixture needs spoof data".into()));
        }
        if self.frame_size < 16 {
            return Err(CoreError::InvalidInput(format!(
                "frame_size must be at least 16, got {}",
                self.frame_size
            )));
        }
        Ok(())
    }
}

/// Parameters of one recapture style. Grating period is given in pixels at a
/// 64 px frame and scales proportionally with the image side, so the visual
/// frequency is resolution-independent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StyleParams {
    pub tag: char,
    pub attack: AttackType,
    pub period: f64,
    pub angle: f64,
    pub amplitude: f64,
    pub color_shift: [f64; 3],
    /// Downscale-upscale factor simulating recapture blur.
    pub downscale: usize,
}

const ATTACK_CYCLE: [AttackType; 4] = [
    AttackType::Print,
    AttackType::Phone,
    AttackType::Monitor,
    AttackType::Tablet,
];

/// Fixed table of the ten recapture styles.
pub fn style_params(index: usize) -> StyleParams {
    assert!(index < MAX_STYLES, "style index {index} out of range");
    let attack = ATTACK_CYCLE[index % ATTACK_CYCLE.len()];
    let base_shift = match attack {
        AttackType::Print => [0.10, 0.02, -0.06],
        AttackType::Phone => [-0.04, 0.02, 0.10],
        AttackType::Monitor => [-0.02, 0.09, 0.02],
        AttackType::Tablet => [0.06, -0.04, 0.08],
        AttackType::None => unreachable!("spoof styles only"),
    };
    let wiggle = 0.015 * (index as f64 - 4.5) / 4.5;
    StyleParams {
        tag: (b'a' + index as u8) as char,
        attack,
        period: 5.0 + 0.8 * index as f64,
        angle: 0.2 + index as f64 * PI / 10.0,
        amplitude: 0.06 + 0.012 * (index % 5) as f64,
        color_shift: [
            base_shift[0] + wiggle,
            base_shift[1] - wiggle,
            base_shift[2] + wiggle,
        ],
        downscale: 2 + index % 3,
    }
}

/// Style id as it appears in manifests built over fixture output.
pub fn style_id(index: usize) -> String {
    let p = style_params(index);
    format!("{}-{}", p.attack, p.tag)
}

#[derive(Debug, Clone, Copy)]
struct SubjectLook {
    skin: [f64; 3],
    bg: [f64; 3],
    rx: f64,
    ry: f64,
    eye_dx: f64,
    eye_y: f64,
    mouth_y: f64,
    tex_fx: f64,
    tex_fy: f64,
    tex_amp: f64,
}

fn subject_look(seed: u64, subject: usize) -> SubjectLook {
    let mut rng = seeded_rng(derive_seed(seed, &format!("fix-subject/{subject}")));
    let tone = 0.45 + 0.35 * rng.random::<f64>();
    SubjectLook {
        skin: [
            tone + 0.12 + 0.06 * rng.random::<f64>(),
            tone + 0.04 * rng.random::<f64>(),
            tone - 0.10 + 0.06 * rng.random::<f64>(),
        ],
        bg: [
            0.15 + 0.25 * rng.random::<f64>(),
            0.15 + 0.25 * rng.random::<f64>(),
            0.20 + 0.30 * rng.random::<f64>(),
        ],
        rx: 0.30 + 0.06 * rng.random::<f64>(),
        ry: 0.38 + 0.06 * rng.random::<f64>(),
        eye_dx: 0.12 + 0.04 * rng.random::<f64>(),
        eye_y: -0.12 - 0.04 * rng.random::<f64>(),
        mouth_y: 0.18 + 0.05 * rng.random::<f64>(),
        tex_fx: 3.0 + 3.0 * rng.random::<f64>(),
        tex_fy: 2.0 + 3.0 * rng.random::<f64>(),
        tex_amp: 0.025 + 0.02 * rng.random::<f64>(),
    }
}

#[derive(Debug, Clone, Copy)]
struct VideoTake {
    cx_off: f64,
    cy_off: f64,
    brightness: f64,
    light_x: f64,
    light_y: f64,
    tex_phase: f64,
}

fn video_take(seed: u64, subject: usize, video_key: &str) -> VideoTake {
    let mut rng = seeded_rng(derive_seed(seed, &format!("fix-video/{subject}/{video_key}")));
    VideoTake {
        cx_off: 0.08 * (rng.random::<f64>() - 0.5),
        cy_off: 0.08 * (rng.random::<f64>() - 0.5),
        brightness: 0.92 + 0.16 * rng.random::<f64>(),
        light_x: rng.random::<f64>() - 0.5,
        light_y: rng.random::<f64>() - 0.5,
        tex_phase: rng.random::<f64>() * 2.0 * PI,
    }
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Renders one synthetic face frame, deterministic in all arguments. The
/// `video_key` distinguishes takes (live videos and spoof base takes draw
/// from separate streams).
pub fn render_face(
    seed: u64,
    subject: usize,
    video_key: &str,
    frame: usize,
    size: usize,
) -> ImageBuffer {
    let look = subject_look(seed, subject);
    let take = video_take(seed, subject, video_key);
    // Per-frame motion: slow head sway plus a periodic eye blink.
    let sway_x = 0.015 * (frame as f64 * 0.7 + take.tex_phase).sin();
    let sway_y = 0.010 * (frame as f64 * 0.5 + take.tex_phase).cos();
    let blink = {
        let s = (frame as f64 * 2.0 * PI / 9.0).sin().max(0.0);
        1.0 - 0.7 * s.powi(4)
    };
    let cx = 0.5 + take.cx_off + sway_x;
    let cy = 0.5 + take.cy_off + sway_y;
    let n = size as f64;

    ImageBuffer::from_fn(size, size, |c, y, x| {
        let xf = (x as f64 + 0.5) / n;
        let yf = (y as f64 + 0.5) / n;
        let u = (xf - cx) / look.rx;
        let v = (yf - cy) / look.ry;
        let r2 = u * u + v * v;

        // Background: vertical gradient in the subject's backdrop color.
        let mut value = look.bg[c] * (0.8 + 0.4 * yf);

        // Face disc with soft edge and simple directional shading.
        let face = smoothstep((1.1 - r2) / 0.25);
        if face > 0.0 {
            let shade = 1.0 - 0.25 * (u * take.light_x + v * take.light_y + r2 * 0.4);
            let mut skin = look.skin[c] * shade;
            // Fine skin texture the recapture blur will degrade.
            skin += look.tex_amp
                * (2.0 * PI * (xf * look.tex_fx + yf * look.tex_fy) + take.tex_phase).sin()
                * (2.0 * PI * (xf * look.tex_fy - yf * look.tex_fx)).cos();

            // Eyes: dark blobs; the blink narrows them vertically.
            for ex in [cx - look.eye_dx, cx + look.eye_dx] {
                let dy = (yf - (cy + look.eye_y)) / (0.030 * blink.max(0.15));
                let dx = (xf - ex) / 0.045;
                skin -= 0.45 * (-(dx * dx + dy * dy)).exp();
            }
            // Mouth.
            let dy = (yf - (cy + look.mouth_y)) / 0.025;
            let dx = (xf - cx) / 0.09;
            skin -= 0.30 * (-(dx * dx + dy * dy)).exp();

            value = value * (1.0 - face) + skin * face;
        }
        (value * take.brightness).clamp(0.0, 1.0)
    })
}

/// Fixed recapture transform: downscale-upscale blur, additive color shift,
/// and a periodic luminance grating.
pub fn recapture(img: &ImageBuffer, style: &StyleParams) -> ImageBuffer {
    let (h, w) = (img.height(), img.width());
    let small = img.resize_bilinear(
        (h / style.downscale).max(2),
        (w / style.downscale).max(2),
    );
    let blurred = small.resize_bilinear(h, w);
    let period = style.period * h as f64 / 64.0;
    let (dir_x, dir_y) = (style.angle.cos(), style.angle.sin());
    ImageBuffer::from_fn(h, w, |c, y, x| {
        let phase = 2.0 * PI * (x as f64 * dir_x + y as f64 * dir_y) / period;
        let grating = style.amplitude * phase.sin();
        (blurred.get(c, y, x) + style.color_shift[c] + grating).clamp(0.0, 1.0)
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSummary {
    pub subjects: Vec<String>,
    pub style_ids: Vec<String>,
    pub live_frames: usize,
    pub spoof_frames: usize,
}

/// Writes the fixture source tree under `root`:
/// `<subject>/live/<video>/<frame>.png` and
/// `<subject>/spoof/<attack>/<tag>__<video>/<frame>.png`.
/// Idempotent: existing files are overwritten with identical bytes.
pub fn generate_fixture(root: &Path, spec: &FixtureSpec) -> Result<FixtureSummary> {
    spec.validate()?;
    let mut summary = FixtureSummary {
        subjects: Vec::new(),
        style_ids: (0..spec.spoof_styles).map(style_id).collect(),
        live_frames: 0,
        spoof_frames: 0,
    };
    for s in 0..spec.subjects {
        let subject = format!("s{s:02}");
        for v in 0..spec.live_videos {
            let video = format!("v{v:03}");
            let dir = root.join(&subject).join("live").join(&video);
            std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
            for f in 0..spec.frames_per_video {
                let img = render_face(spec.seed, s, &format!("live/{video}"), f, spec.frame_size);
                img.save_png(&dir.join(format!("{f}.png")))?;
                summary.live_frames += 1;
            }
        }
        for style_idx in 0..spec.spoof_styles {
            let params = style_params(style_idx);
            for v in 0..spec.spoof_videos_per_style {
                let video = format!("{}__v{v:03}", params.tag);
                let dir = root
                    .join(&subject)
                    .join("spoof")
                    .join(params.attack.as_str())
                    .join(&video);
                std::fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
                for f in 0..spec.spoof_frames_per_video {
                    let base =
                        render_face(spec.seed, s, &format!("spoof/{video}"), f, spec.frame_size);
                    recapture(&base, &params).save_png(&dir.join(format!("{f}.png")))?;
                    summary.spoof_frames += 1;
                }
            }
        }
        summary.subjects.push(subject);
    }
    Ok(summary)
}
