//! Synthetic spam/ham image generator.
//!
//! Spam images are light backgrounds carrying rows of dark glyph-like blocks
//! (plus optional artifact speckle); ham images are smooth corner gradients
//! with soft ellipses and a low-frequency texture. The two classes are
//! deliberately easy to separate so desk-scale classifiers train in minutes.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, CorpusManifest, Label, ManifestEntry, Split};
use crate::imaging::{save_image, ImageBuffer};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub spam_count: usize,
    pub ham_count: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Fraction controlling salt-and-pepper artifact speckle on spam images.
    pub noise_level: f32,
    /// Target fraction of spam image height covered by glyph strips.
    pub text_density: f32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            spam_count: 200,
            ham_count: 200,
            image_size: 400,
            seed: 0,
            noise_level: 0.1,
            text_density: 0.5,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), CorpusError> {
        if self.spam_count < 2 || self.ham_count < 2 {
            return Err(CorpusError::InvalidSpec(
                "each class needs at least 2 images".into(),
            ));
        }
        if self.image_size < 32 {
            return Err(CorpusError::InvalidSpec(
                "image size must be at least 32".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(CorpusError::InvalidSpec("noise level must be in [0, 1]".into()));
        }
        if !(self.text_density > 0.0 && self.text_density <= 1.0) {
            return Err(CorpusError::InvalidSpec(
                "text density must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Generate the corpus into `out_dir` and return its manifest (all entries
/// start in the train split). Identical specs produce identical images.
pub fn generate_synthetic_corpus(
    spec: &SyntheticSpec,
    out_dir: impl AsRef<Path>,
) -> Result<CorpusManifest, CorpusError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|source| CorpusError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut manifest = CorpusManifest::new(format!("synthetic-{}", spec.seed), out_dir);
    for i in 0..spec.spam_count {
        let img = spam_image(spec, &mut rng);
        let rel = PathBuf::from(format!("spam_{i:04}.png"));
        save_image(&img, out_dir.join(&rel))?;
        manifest.entries.push(ManifestEntry {
            path: rel,
            label: Label::Spam,
            split: Split::Train,
        });
    }
    for i in 0..spec.ham_count {
        let img = ham_image(spec, &mut rng);
        let rel = PathBuf::from(format!("ham_{i:04}.png"));
        save_image(&img, out_dir.join(&rel))?;
        manifest.entries.push(ManifestEntry {
            path: rel,
            label: Label::Ham,
            split: Split::Train,
        });
    }
    Ok(manifest)
}

fn fill_rect(img: &mut ImageBuffer, y0: usize, y1: usize, x0: usize, x1: usize, color: [f32; 3]) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            for c in 0..3 {
                img.set(y, x, c, color[c]);
            }
        }
    }
}

/// Rows of word-like dark rectangles between y and the covered height.
#[allow(clippy::too_many_arguments)]
fn draw_text_strips(
    img: &mut ImageBuffer,
    rng: &mut ChaCha8Rng,
    y_start: usize,
    cover_target: usize,
    x_lo: usize,
    x_hi: usize,
    ink_lo: f32,
    ink_hi: f32,
) {
    let s = img.height();
    let mut y = y_start;
    let mut covered = 0usize;
    while covered < cover_target && y + s / 16 < s {
        let strip_h = rng.gen_range(s / 28..s / 14);
        let x_start = x_lo + rng.gen_range(0..(s / 10).max(1));
        let x_end = x_hi.saturating_sub(rng.gen_range(0..(s / 10).max(1)));
        let ink = rng.gen_range(ink_lo..ink_hi);
        let color = [
            ink,
            (ink + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0),
            (ink + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0),
        ];
        let mut x = x_start;
        while x < x_end {
            let word = rng.gen_range(s / 50..s / 12).max(2);
            let jitter = rng.gen_range(0..strip_h.max(4) / 4 + 1);
            fill_rect(
                img,
                y + jitter / 2,
                y + strip_h - jitter.div_ceil(2),
                x,
                (x + word).min(x_end),
                color,
            );
            x += word + rng.gen_range(s / 100..s / 33).max(1);
        }
        covered += strip_h;
        y += strip_h + rng.gen_range(s / 50..s / 12).max(2);
    }
}

/// Busy photographic detail: many small colored shapes. Natural photos are
/// dense in edges, so edge volume alone must not separate the classes.
fn scatter_detail(img: &mut ImageBuffer, rng: &mut ChaCha8Rng, density: f32) {
    let s = img.height();
    let count = (density * (s as f32 / 400.0).powi(2) * 350.0) as usize;
    for _ in 0..count {
        let cy = rng.gen_range(0..s);
        let cx = rng.gen_range(0..s);
        let sz = rng.gen_range(2..(s / 28).max(3));
        let color = [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ];
        match rng.gen_range(0..3) {
            0 => {
                // filled rectangle
                let h = rng.gen_range(1..sz.max(2));
                fill_rect(img, cy, (cy + h).min(s), cx, (cx + sz).min(s), color);
            }
            1 => {
                // disc
                let r = (sz / 2).max(1) as isize;
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dy * dy + dx * dx <= r * r {
                            let (y, x) = (cy as isize + dy, cx as isize + dx);
                            if y >= 0 && (y as usize) < s && x >= 0 && (x as usize) < s {
                                for c in 0..3 {
                                    img.set(y as usize, x as usize, c, color[c]);
                                }
                            }
                        }
                    }
                }
            }
            _ => {
                // short line segment
                let horizontal = rng.gen_bool(0.5);
                for t in 0..sz * 2 {
                    let (y, x) = if horizontal { (cy, cx + t) } else { (cy + t, cx) };
                    if y < s && x < s {
                        for c in 0..3 {
                            img.set(y, x, c, color[c]);
                        }
                    }
                }
            }
        }
    }
}

/// Smooth four-corner color gradient.
fn gradient_background(rng: &mut ChaCha8Rng, s: usize, lo: f32, hi: f32) -> Vec<f32> {
    let mut corner = [[0.0f32; 3]; 4];
    for c in corner.iter_mut() {
        for v in c.iter_mut() {
            *v = rng.gen_range(lo..hi);
        }
    }
    let mut pixels = vec![0.0f32; s * s * 3];
    for y in 0..s {
        let fy = y as f32 / (s - 1) as f32;
        for x in 0..s {
            let fx = x as f32 / (s - 1) as f32;
            for c in 0..3 {
                let top = corner[0][c] * (1.0 - fx) + corner[1][c] * fx;
                let bottom = corner[2][c] * (1.0 - fx) + corner[3][c] * fx;
                pixels[(y * s + x) * 3 + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    pixels
}

fn spam_image(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let s = spec.image_size;
    // Two spam styles: classic light-background text spam, and text
    // superimposed on a natural-looking photo background.
    let photo_bg = rng.gen_bool(0.45);
    let mut img = if photo_bg {
        let mut base = ImageBuffer::clamped(s, s, 3, gradient_background(rng, s, 0.35, 0.9))
            .expect("generator output is clamped");
        let density = rng.gen_range(0.4..1.0);
        scatter_detail(&mut base, rng, density);
        base
    } else {
        let mut base = ImageBuffer::filled(s, s, 3, 1.0);
        let bg = [
            rng.gen_range(0.86..0.98),
            rng.gen_range(0.86..0.98),
            rng.gen_range(0.86..0.98),
        ];
        fill_rect(&mut base, 0, s, 0, s, bg);
        if rng.gen_bool(0.4) {
            let density = rng.gen_range(0.1..0.5);
            scatter_detail(&mut base, rng, density);
        }
        base
    };

    let (ink_lo, ink_hi) = if photo_bg { (0.02, 0.25) } else { (0.05, 0.45) };
    let y_start = rng.gen_range(s / 20..s / 8);
    draw_text_strips(
        &mut img,
        rng,
        y_start,
        (spec.text_density * s as f32) as usize,
        s / 20,
        s - s / 20,
        ink_lo,
        ink_hi,
    );

    // Occasional frame, as seen in promotional spam.
    if rng.gen_bool(0.25) {
        let ink = rng.gen_range(0.05..0.4);
        let t = (s / 100).max(1);
        let color = [ink, ink, ink];
        fill_rect(&mut img, 0, t, 0, s, color);
        fill_rect(&mut img, s - t, s, 0, s, color);
        fill_rect(&mut img, 0, s, 0, t, color);
        fill_rect(&mut img, 0, s, s - t, s, color);
    }

    // Artifact speckle to mimic OCR-evasion noise.
    let speckles = (spec.noise_level * (s * s) as f32 * 0.01) as usize;
    for _ in 0..speckles {
        let y = rng.gen_range(0..s);
        let x = rng.gen_range(0..s);
        let v = rng.gen_range(0.0..1.0f32);
        for c in 0..3 {
            img.set(y, x, c, v);
        }
    }
    img
}

fn ham_image(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let s = spec.image_size;
    let mut pixels = gradient_background(rng, s, 0.1, 0.9);

    // Soft ellipses with feathered rims.
    let n_ellipses = rng.gen_range(1..=3);
    for _ in 0..n_ellipses {
        let cy = rng.gen_range(0.2..0.8) * s as f32;
        let cx = rng.gen_range(0.2..0.8) * s as f32;
        let ry = rng.gen_range(0.10..0.35) * s as f32;
        let rx = rng.gen_range(0.10..0.35) * s as f32;
        let color = [
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
        ];
        let strength = rng.gen_range(0.5..0.9f32);
        for y in 0..s {
            for x in 0..s {
                let dy = (y as f32 - cy) / ry;
                let dx = (x as f32 - cx) / rx;
                let d = (dy * dy + dx * dx).sqrt();
                if d < 1.3 {
                    // Smooth falloff from the center to the feathered rim.
                    let alpha = strength * (1.0 - (d / 1.3).powi(2)).max(0.0);
                    for c in 0..3 {
                        let i = (y * s + x) * 3 + c;
                        pixels[i] = pixels[i] * (1.0 - alpha) + color[c] * alpha;
                    }
                }
            }
        }
    }

    // Low-frequency sinusoidal texture.
    let amp = rng.gen_range(0.02..0.08f32);
    let fy = rng.gen_range(0.5..2.5f32);
    let fx = rng.gen_range(0.5..2.5f32);
    let phase = rng.gen_range(0.0..std::f32::consts::TAU);
    for y in 0..s {
        for x in 0..s {
            let v = amp
                * (std::f32::consts::TAU * (fy * y as f32 + fx * x as f32) / s as f32 + phase)
                    .sin();
            for c in 0..3 {
                let i = (y * s + x) * 3 + c;
                pixels[i] = (pixels[i] + v).clamp(0.0, 1.0);
            }
        }
    }
    let mut img = ImageBuffer::clamped(s, s, 3, pixels).expect("generator output is clamped");

    // Photographic detail: lots of unstructured fine content and edges.
    let density = rng.gen_range(0.5..1.2);
    scatter_detail(&mut img, rng, density);

    // Photos sometimes carry a short caption: a little text is not proof of
    // spam, which keeps the two classes from separating trivially.
    if rng.gen_bool(0.45) {
        let y0 = rng.gen_range(s / 2..s - s / 8);
        let cover = rng.gen_range(s / 30..s / 12);
        let x_hi = s - rng.gen_range(s / 4..s / 2);
        draw_text_strips(&mut img, rng, y0, cover, s / 8, x_hi, 0.05, 0.35);
    }
    img
}
