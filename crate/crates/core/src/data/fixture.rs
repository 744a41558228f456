//! Deterministic synthetic clips for desk-scale tests.
//!
//! Each clip shows one person box moving over a textured background, with
//! per-frame optical flow stored as two 8-bit images. In separable mode the
//! dominant label of an instance decides the box's colour, stripe pattern and
//! motion direction, and the VAD targets are a function of that label.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{flow_files, frame_file, BodyBox, Dataset, InstanceAnnotation, Split};
use crate::error::{Error, Result};
use crate::taxonomy::{label_tokens, DEFAULT_LABELS};
use crate::{NUM_CATEGORIES, NUM_VAD};

/// Encoded pixel value of zero displacement.
pub const FLOW_CENTER: f32 = 128.0;
/// Encoded pixel steps per pixel of displacement.
pub const FLOW_SCALE: f32 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub seed: u64,
    pub n_instances: usize,
    pub frames_per_clip: usize,
    pub image_size: u32,
    pub separable: bool,
    /// Width of the toy word vectors written next to the clips.
    pub embedding_dim: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_instances: 8,
            frames_per_clip: 12,
            image_size: 32,
            separable: true,
            embedding_dim: 8,
        }
    }
}

impl FixtureConfig {
    fn validate(&self) -> Result<()> {
        if self.n_instances < 1 {
            return Err(Error::invalid("n_instances must be >= 1"));
        }
        if self.frames_per_clip < 3 {
            return Err(Error::invalid(format!(
                "frames_per_clip must be >= 3, got {}",
                self.frames_per_clip
            )));
        }
        if self.image_size < 16 {
            return Err(Error::invalid(format!(
                "image_size must be >= 16, got {}",
                self.image_size
            )));
        }
        if self.embedding_dim < 1 {
            return Err(Error::invalid("embedding_dim must be >= 1"));
        }
        Ok(())
    }

    /// Labels used as dominant classes in separable mode, spread over the taxonomy.
    pub fn pattern_labels(&self) -> Vec<usize> {
        let m = self.n_instances.div_ceil(2).clamp(1, NUM_CATEGORIES);
        (0..m).map(|j| j * NUM_CATEGORIES / m).collect()
    }
}

const DIRECTIONS: [(i32, i32); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// VAD targets implied by a label in separable mode.
fn label_vad(label: usize) -> [f64; NUM_VAD] {
    let f = |mul: usize| 0.1 + 0.8 * ((label * mul) % NUM_CATEGORIES) as f64 / 25.0;
    [f(7), f(11), f(3)]
}

fn label_colour(label: usize) -> [u8; 3] {
    // Hue wheel at full saturation.
    let h = label as f64 / NUM_CATEGORIES as f64 * 6.0;
    let x = 1.0 - ((h % 2.0) - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 230.0 + 20.0) as u8, (g * 230.0 + 20.0) as u8, (b * 230.0 + 20.0) as u8]
}

/// Pixel of the label's stripe pattern at box-relative coordinates.
fn pattern_pixel(label: usize, u: u32, v: u32) -> [u8; 3] {
    let period = 2 + (label / 4) % 3;
    let phase = match label % 4 {
        0 => v as usize,
        1 => u as usize,
        2 => (u + v) as usize,
        _ => (u + 1000 - v) as usize,
    };
    let c = label_colour(label);
    if (phase / period).is_multiple_of(2) {
        c
    } else {
        [c[0] / 3, c[1] / 3, c[2] / 3]
    }
}

/// Position along a reflecting path on `[0, max]`.
fn bounce(x: i64, max: i64) -> i64 {
    if max == 0 {
        return 0;
    }
    let y = x.rem_euclid(2 * max);
    if y > max {
        2 * max - y
    } else {
        y
    }
}

fn flow_value(d: i64) -> u8 {
    (FLOW_CENTER + FLOW_SCALE * d as f32).clamp(0.0, 255.0) as u8
}

fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Writes a synthetic dataset under `root` and returns its annotations.
///
/// Layout: `labels.txt`, `embeddings.txt`, `annotations.jsonl` and
/// `clips/clip_NNNN/{img,flow_x,flow_y}_FFFFF.png`. Identical configs produce
/// byte-identical trees.
pub fn generate_fixture(cfg: &FixtureConfig, root: &Path) -> Result<Dataset> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    write_text(&root.join("labels.txt"), &(DEFAULT_LABELS.join("\n") + "\n"))?;
    write_toy_embeddings(cfg, &root.join("embeddings.txt"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = cfg.image_size;
    let pattern_labels = cfg.pattern_labels();
    let mut instances = Vec::with_capacity(cfg.n_instances);

    for i in 0..cfg.n_instances {
        let clip_id = format!("clip_{i:04}");
        let frames_dir = format!("clips/{clip_id}");
        let clip_path = root.join(&frames_dir);
        fs::create_dir_all(&clip_path).map_err(|e| Error::io(&clip_path, e))?;

        let (label, categorical, vad) = if cfg.separable {
            let label = pattern_labels[i % pattern_labels.len()];
            let cats: Vec<f64> = (0..NUM_CATEGORIES)
                .map(|c| {
                    if c == label {
                        round4(rng.random_range(0.6..1.0))
                    } else {
                        round4(rng.random_range(0.0..0.3))
                    }
                })
                .collect();
            let vad = label_vad(label)
                .iter()
                .map(|v| round4((v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0)))
                .collect();
            (label, cats, vad)
        } else {
            let label = rng.random_range(0..NUM_CATEGORIES);
            let cats = (0..NUM_CATEGORIES)
                .map(|_| round4(rng.random_range(0.0..1.0)))
                .collect();
            let vad = (0..NUM_VAD)
                .map(|_| round4(rng.random_range(0.0..1.0)))
                .collect();
            (label, cats, vad)
        };

        let box_size = ((size as f64) * rng.random_range(0.4..0.55)).round() as u32;
        let max_pos = (size - box_size) as i64;
        let p0 = (rng.random_range(0..=max_pos), rng.random_range(0..=max_pos));
        let dir = if cfg.separable {
            DIRECTIONS[label % DIRECTIONS.len()]
        } else {
            DIRECTIONS[rng.random_range(0..DIRECTIONS.len())]
        };

        let bg_base = [
            rng.random_range(40..120u8),
            rng.random_range(40..120u8),
            rng.random_range(40..120u8),
        ];
        let noise: Vec<i16> = (0..size * size)
            .map(|_| rng.random_range(-12..=12i16))
            .collect();

        let pos = |t: usize| {
            (
                bounce(p0.0 + dir.0 as i64 * t as i64, max_pos),
                bounce(p0.1 + dir.1 as i64 * t as i64, max_pos),
            )
        };

        let n = cfg.frames_per_clip;
        let mut regions = Vec::with_capacity(n);
        for t in 0..n {
            let (px, py) = pos(t);
            let region = BodyBox::new(
                px as u32,
                py as u32,
                px as u32 + box_size,
                py as u32 + box_size,
            );
            regions.push(region);

            let img = RgbImage::from_fn(size, size, |x, y| {
                if region.contains(x, y) {
                    Rgb(pattern_pixel(label, x - region.x1, y - region.y1))
                } else {
                    let nz = noise[(y * size + x) as usize];
                    Rgb(bg_base.map(|c| (c as i16 + nz).clamp(0, 255) as u8))
                }
            });
            save_rgb(&img, &clip_path.join(frame_file(t)))?;

            let (nx, ny) = if t + 1 < n { pos(t + 1) } else { pos(t) };
            let (qx, qy) = if t + 1 < n { (px, py) } else { pos(t - 1) };
            let (dx, dy) = (nx - qx, ny - qy);
            let fx = GrayImage::from_fn(size, size, |x, y| {
                Luma([if region.contains(x, y) { flow_value(dx) } else { FLOW_CENTER as u8 }])
            });
            let fy = GrayImage::from_fn(size, size, |x, y| {
                Luma([if region.contains(x, y) { flow_value(dy) } else { FLOW_CENTER as u8 }])
            });
            let (fxn, fyn) = flow_files(t);
            save_gray(&fx, &clip_path.join(fxn))?;
            save_gray(&fy, &clip_path.join(fyn))?;
        }

        instances.push(InstanceAnnotation {
            clip_id,
            frames_dir,
            person_id: 0,
            frame_start: 0,
            frame_end: n,
            regions,
            categorical,
            vad,
        });
    }

    let ds = Dataset {
        split: Split::Train,
        root: root.to_path_buf(),
        instances,
    };
    ds.write_annotations(&root.join("annotations.jsonl"))?;
    Ok(ds)
}

fn write_toy_embeddings(cfg: &FixtureConfig, path: &Path) -> Result<()> {
    // Independent stream so the vectors do not depend on clip count.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_e3b0);
    let mut tokens: Vec<String> = DEFAULT_LABELS.iter().flat_map(|l| label_tokens(l)).collect();
    tokens.sort();
    tokens.dedup();
    let mut text = String::new();
    for tok in tokens {
        text.push_str(&tok);
        for _ in 0..cfg.embedding_dim {
            let v: f64 = rng.random_range(-1.0..1.0);
            text.push_str(&format!(" {v:.6}"));
        }
        text.push('\n');
    }
    write_text(path, &text)
}
