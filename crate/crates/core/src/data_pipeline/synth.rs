//! Procedural two-domain digit corpus for offline smoke runs.
//!
//! Domain A mimics handwritten-style digits: a single white glyph on black,
//! stored as 1-channel PNG. Domain B mimics house-number crops: a colored
//! glyph on a colored gradient with noise and partial neighbor digits at the
//! left and right borders, stored as RGB PNG.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{domain_dir, Domain, Split};
use crate::error::{Error, Result};
use crate::rng::RngState;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const SUPERSAMPLE: usize = 4;

#[rustfmt::skip]
const GLYPHS: [[&str; GLYPH_H]; 10] = [
    ["01110", "10001", "10011", "10101", "11001", "10001", "01110"],
    ["00100", "01100", "00100", "00100", "00100", "00100", "01110"],
    ["01110", "10001", "00001", "00010", "00100", "01000", "11111"],
    ["11111", "00010", "00100", "00010", "00001", "10001", "01110"],
    ["00010", "00110", "01010", "10010", "11111", "00010", "00010"],
    ["11111", "10000", "11110", "00001", "00001", "10001", "01110"],
    ["00110", "01000", "10000", "11110", "10001", "10001", "01110"],
    ["11111", "00001", "00010", "00100", "01000", "01000", "01000"],
    ["01110", "10001", "10001", "01110", "10001", "10001", "01110"],
    ["01110", "10001", "10001", "01111", "00001", "00010", "01100"],
];

fn lit_cells(digit: usize) -> Vec<(f32, f32)> {
    let mut cells = Vec::new();
    for (r, row) in GLYPHS[digit].iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            if ch == b'1' {
                cells.push((c as f32 + 0.5, r as f32 + 0.5));
            }
        }
    }
    cells
}

/// Placement of one glyph in pixel space.
#[derive(Clone, Copy, Debug)]
struct Placement {
    cx: f32,
    cy: f32,
    /// Glyph height in pixels.
    height: f32,
    rotation: f32,
    shear: f32,
    /// Extra half-width of strokes, in glyph cells.
    thickness: f32,
}

/// Anti-aliased coverage in `[0, 1]` for a `size × size` canvas.
fn render_glyph(digit: usize, size: usize, p: &Placement) -> Vec<f32> {
    let cells = lit_cells(digit);
    let scale = p.height / GLYPH_H as f32;
    let (sin, cos) = p.rotation.sin_cos();
    let half = 0.5 + p.thickness;
    let mut out = vec![0f32; size * size];
    let step = 1.0 / SUPERSAMPLE as f32;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f32 + (sx as f32 + 0.5) * step - p.cx;
                    let py = y as f32 + (sy as f32 + 0.5) * step - p.cy;
                    // undo rotation, then shear, then scale
                    let rx = cos * px + sin * py;
                    let ry = -sin * px + cos * py;
                    let ux = rx - p.shear * ry;
                    let u = ux / scale + GLYPH_W as f32 / 2.0;
                    let v = ry / scale + GLYPH_H as f32 / 2.0;
                    if cells
                        .iter()
                        .any(|&(cu, cv)| (u - cu).abs() <= half && (v - cv).abs() <= half)
                    {
                        hits += 1;
                    }
                }
            }
            out[y * size + x] = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
        }
    }
    out
}

fn centered_placement(size: usize, rng: &mut RngState, height_frac: (f32, f32)) -> Placement {
    let s = size as f32;
    Placement {
        cx: s / 2.0 + rng.random_range(-0.08..0.08) * s,
        cy: s / 2.0 + rng.random_range(-0.06..0.06) * s,
        height: rng.random_range(height_frac.0..height_frac.1) * s,
        rotation: rng.random_range(-0.25..0.25),
        shear: rng.random_range(-0.3..0.3),
        thickness: rng.random_range(0.0..0.35),
    }
}

/// White-on-black grayscale digit.
pub fn render_plain(digit: usize, size: usize, rng: &mut RngState) -> GrayImage {
    let p = centered_placement(size, rng, (0.55, 0.72));
    let cov = render_glyph(digit, size, &p);
    GrayImage::from_fn(size as u32, size as u32, |x, y| {
        Luma([(cov[y as usize * size + x as usize] * 255.0).round() as u8])
    })
}

fn random_color(rng: &mut RngState) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn luminance(c: [f32; 3]) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Colored digit on a textured background with neighbor distractors.
pub fn render_house_number(digit: usize, size: usize, rng: &mut RngState) -> RgbImage {
    let bg0 = random_color(rng);
    let bg1 = random_color(rng);
    let mut fg = random_color(rng);
    // keep some contrast between glyph and background
    let mut tries = 0;
    while (luminance(fg) - luminance(bg0)).abs() < 0.3 && tries < 16 {
        fg = random_color(rng);
        tries += 1;
    }
    if (luminance(fg) - luminance(bg0)).abs() < 0.3 {
        fg = if luminance(bg0) > 0.5 { [0.05; 3] } else { [0.95; 3] };
    }

    let mut coverage = render_glyph(digit, size, &centered_placement(size, rng, (0.5, 0.8)));
    let s = size as f32;
    for side in [-1.0f32, 1.0] {
        if rng.random_bool(0.7) {
            let p = Placement {
                cx: s / 2.0 + side * rng.random_range(0.55..0.75) * s,
                ..centered_placement(size, rng, (0.5, 0.8))
            };
            let other = rng.random_range(0..10);
            for (c, d) in coverage.iter_mut().zip(render_glyph(other, size, &p)) {
                *c = c.max(d);
            }
        }
    }

    let noise = Normal::new(0.0f32, 0.04).expect("valid std");
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let mut img = RgbImage::new(size as u32, size as u32);
    for y in 0..size {
        for x in 0..size {
            let t = ((x as f32 / s - 0.5) * dx + (y as f32 / s - 0.5) * dy + 0.5).clamp(0.0, 1.0);
            let a = coverage[y * size + x];
            let mut px = [0u8; 3];
            for c in 0..3 {
                let bg = bg0[c] * (1.0 - t) + bg1[c] * t;
                let v = bg * (1.0 - a) + fg[c] * a + noise.sample(rng);
                px[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SynthConfig {
    pub size: usize,
    pub train_per_domain: usize,
    pub test_per_domain: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 32,
            train_per_domain: 500,
            test_per_domain: 100,
            seed: 0,
        }
    }
}

/// Writes `trainA`, `trainB`, `testA` and `testB` under `root`.
/// Returns the directories written, in that order.
pub fn write_digit_domains(root: &Path, cfg: &SynthConfig) -> Result<Vec<PathBuf>> {
    if cfg.size < 8 {
        return Err(Error::Param("synthetic images need size >= 8".into()));
    }
    let mut written = Vec::new();
    for (split, count) in [
        (Split::Train, cfg.train_per_domain),
        (Split::Test, cfg.test_per_domain),
    ] {
        for domain in [Domain::A, Domain::B] {
            let dir = domain_dir(root, split, domain);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let stream = match (split, domain) {
                (Split::Train, Domain::A) => 11,
                (Split::Train, Domain::B) => 12,
                (Split::Test, Domain::A) => 13,
                (Split::Test, Domain::B) => 14,
            };
            let mut rng = RngState::with_stream(cfg.seed, stream);
            for k in 0..count {
                let digit = rng.random_range(0..10);
                let path = dir.join(format!("{k:05}_{digit}.png"));
                let res = match domain {
                    Domain::A => render_plain(digit, cfg.size, &mut rng).save(&path),
                    Domain::B => render_house_number(digit, cfg.size, &mut rng).save(&path),
                };
                res.map_err(|e| Error::Dataset(format!("cannot write {}: {e}", path.display())))?;
            }
            written.push(dir);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyph_table_is_well_formed() {
        for g in GLYPHS {
            assert!(g.iter().all(|row| row.len() == GLYPH_W));
        }
        // "1" lights 10 cells of the 5x7 grid
        assert_eq!(lit_cells(1).len(), 10);
    }

    #[test]
    fn upright_glyph_covers_its_center_column() {
        let p = Placement {
            cx: 16.0,
            cy: 16.0,
            height: 21.0,
            rotation: 0.0,
            shear: 0.0,
            thickness: 0.0,
        };
        let cov = render_glyph(1, 32, &p);
        // the stem of "1" runs through the center column
        assert_eq!(cov[16 * 32 + 16], 1.0);
        assert_eq!(cov[0], 0.0);
        assert_eq!(cov[16 * 32 + 4], 0.0);
    }

    #[test]
    fn plain_digits_are_mostly_dark_with_bright_strokes() {
        let mut rng = RngState::new(2);
        for d in 0..10 {
            let img = render_plain(d, 32, &mut rng);
            let px: Vec<u8> = img.pixels().map(|p| p.0[0]).collect();
            let bright = px.iter().filter(|&&v| v > 200).count();
            assert!(bright > 20 && bright < 32 * 32 / 2, "digit {d}: {bright}");
        }
    }

    #[test]
    fn writes_all_four_directories_deterministically() {
        let cfg = SynthConfig {
            size: 16,
            train_per_domain: 3,
            test_per_domain: 2,
            seed: 9,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let dirs = write_digit_domains(d1.path(), &cfg).unwrap();
        write_digit_domains(d2.path(), &cfg).unwrap();
        assert_eq!(dirs.len(), 4);
        for dir in &dirs {
            let rel = dir.strip_prefix(d1.path()).unwrap();
            let a = super::super::list_images(dir).unwrap();
            let b = super::super::list_images(&d2.path().join(rel)).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
            }
        }
        let train_b = super::super::list_images(&d1.path().join("trainB")).unwrap();
        let img = image::open(&train_b[0]).unwrap();
        assert_eq!(img.color(), image::ColorType::Rgb8);
    }
}
