//! Synthetic corpus generator.
//!
//! Renders line images whose *writing style* depends only on the scribe
//! class and whose *appearance* (parchment tint, noise, margins) depends
//! only on the codex. A model that keys on color therefore learns codex
//! identity, while the masked-grayscale route must key on stroke geometry
//! — mirroring the separation the pipeline is designed to probe.
//!
//! Every background pixel has luma >= 156 and every ink pixel luma <= 110,
//! so the default mask threshold separates them exactly.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{write_manifest, LineRecord};
use crate::error::Error;
use crate::imaging::RasterImage;
use crate::Result;

/// Corpus shape knobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Codices per class; at least 2 so one can be held out as separate.
    pub codices_per_class: usize,
    pub lines_per_codex: usize,
    pub lines_per_page: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 7,
            codices_per_class: 3,
            lines_per_codex: 36,
            lines_per_page: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSynthConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.codices_per_class < 2 {
            return Err(Error::InvalidSynthConfig(format!(
                "need at least 2 codices per class, got {}",
                self.codices_per_class
            )));
        }
        if self.lines_per_codex == 0 {
            return Err(Error::InvalidSynthConfig("lines_per_codex must be positive".into()));
        }
        if self.lines_per_page == 0 {
            return Err(Error::InvalidSynthConfig("lines_per_page must be positive".into()));
        }
        Ok(())
    }
}

/// Hand geometry for one scribe class. Deterministic in the class index and
/// independent of codex and seed, so the same hand reappears across codices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassStyle {
    /// Stroke thickness in pixels (1..=3).
    pub stroke_width: usize,
    /// Horizontal shear: x' = x + slant * (baseline - y).
    pub slant: f64,
    /// Horizontal advance per glyph in pixels.
    pub spacing: usize,
    /// Preferred glyph shape, drawn more often than the rest.
    pub favored_glyph: usize,
}

impl ClassStyle {
    pub fn for_class(class: usize) -> Self {
        Self {
            stroke_width: 1 + class % 3,
            slant: -0.35 + 0.7 * ((class * 2) % 7) as f64 / 6.0,
            spacing: 7 + 2 * ((class * 3) % 5),
            favored_glyph: class % GLYPH_KINDS,
        }
    }
}

/// Codex-level appearance, shared by every line of the codex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodexPalette {
    /// Parchment base color; each channel in 170..=235.
    pub tint: [u8; 3],
    /// Per-pixel brightness jitter, in -amp..=amp (amp in 3..=14).
    pub noise_amp: i32,
    /// Ink-free border at the left and right edge, in 4..=10 px.
    pub margin: usize,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent random stream for one codex. Keyed by codex id so codices
/// can render in parallel without sharing (or re-seeding) a global stream.
fn codex_stream(master_seed: u64, codex_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master_seed ^ fnv1a64(codex_id.as_bytes())))
}

/// The palette a given codex renders with. Also usable from tests to verify
/// that generated pixels stay inside the palette's envelope.
pub fn codex_palette(master_seed: u64, codex_id: &str) -> CodexPalette {
    let mut rng = codex_stream(master_seed, codex_id);
    draw_palette(&mut rng)
}

fn draw_palette(rng: &mut ChaCha8Rng) -> CodexPalette {
    CodexPalette {
        tint: [
            rng.random_range(170..=235u8),
            rng.random_range(170..=235u8),
            rng.random_range(170..=235u8),
        ],
        noise_amp: rng.random_range(3..=14),
        margin: rng.random_range(4..=10),
    }
}

const GLYPH_KINDS: usize = 6;

/// Stroke endpoints per glyph kind, in a unit box with y=0 at the top.
fn glyph_segments(kind: usize) -> &'static [(f64, f64, f64, f64)] {
    match kind {
        // minim: single vertical
        0 => &[(0.5, 0.0, 0.5, 1.0)],
        // u-shape: two verticals joined at the foot
        1 => &[
            (0.15, 0.0, 0.15, 1.0),
            (0.85, 0.0, 0.85, 1.0),
            (0.15, 1.0, 0.85, 1.0),
        ],
        // rising diagonal
        2 => &[(0.0, 1.0, 1.0, 0.0)],
        // closed bowl
        3 => &[
            (0.1, 0.0, 0.9, 0.0),
            (0.9, 0.0, 0.9, 1.0),
            (0.9, 1.0, 0.1, 1.0),
            (0.1, 1.0, 0.1, 0.0),
        ],
        // crossed stem
        4 => &[(0.5, 0.0, 0.5, 1.0), (0.0, 0.25, 1.0, 0.25)],
        // zigzag
        _ => &[(0.0, 1.0, 0.5, 0.0), (0.5, 0.0, 1.0, 1.0)],
    }
}

/// Interleaved-RGB canvas under construction; becomes a [`RasterImage`]
/// once drawing is done.
struct Canvas {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Stamp a thick segment in ink gray. Coordinates are image-space pixels;
/// pixels outside the canvas are dropped. No anti-aliasing: edges stay hard
/// so the ink/background luma gap survives exactly.
fn draw_segment(
    canvas: &mut Canvas,
    (x0, y0): (f64, f64),
    (x1, y1): (f64, f64),
    stroke_width: usize,
    ink: u8,
) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize) * 2 + 1;
    let half = (stroke_width - 1) as f64 / 2.0;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = x0 + (x1 - x0) * t;
        let y = y0 + (y1 - y0) * t;
        let px0 = (x - half).round() as i64;
        let py0 = (y - half).round() as i64;
        for dy in 0..stroke_width as i64 {
            for dx in 0..stroke_width as i64 {
                let (px, py) = (px0 + dx, py0 + dy);
                if px < 0 || py < 0 || px >= canvas.width as i64 || py >= canvas.height as i64 {
                    continue;
                }
                let idx = (py as usize * canvas.width + px as usize) * 3;
                canvas.pixels[idx] = ink;
                canvas.pixels[idx + 1] = ink;
                canvas.pixels[idx + 2] = ink;
            }
        }
    }
}

/// Render one line image for `class` using the codex palette.
fn render_line(
    style: &ClassStyle,
    palette: &CodexPalette,
    rng: &mut ChaCha8Rng,
) -> RasterImage {
    let height = rng.random_range(40..=56usize);
    let width = rng.random_range(380..=560usize);

    // parchment: tint plus one brightness jitter shared by all channels, so
    // hue stays a codex property while texture varies per pixel
    let mut pixels = Vec::with_capacity(width * height * 3);
    for _ in 0..width * height {
        let delta = rng.random_range(-palette.noise_amp..=palette.noise_amp);
        for c in 0..3 {
            pixels.push((palette.tint[c] as i32 + delta).clamp(0, 255) as u8);
        }
    }
    let mut canvas = Canvas {
        width,
        height,
        pixels,
    };

    let baseline = height as f64 * 0.72;
    let x_height = height as f64 * 0.38;
    let mut cursor = palette.margin as f64 + 2.0;
    let right_stop = (width - palette.margin) as f64 - style.spacing as f64;
    while cursor < right_stop {
        // favored glyph roughly half the time, otherwise uniform
        let kind = if rng.random_range(0..2u32) == 0 {
            style.favored_glyph
        } else {
            rng.random_range(0..GLYPH_KINDS)
        };
        let tall = rng.random_range(0..4u32) == 0;
        let glyph_h = if tall { x_height * 1.7 } else { x_height };
        let glyph_w = style.spacing as f64 * 0.72;
        let ink = (75 + rng.random_range(-12..=12i32)).clamp(40, 110) as u8;
        for &(ux0, uy0, ux1, uy1) in glyph_segments(kind) {
            let map = |ux: f64, uy: f64| {
                let y = baseline - glyph_h * (1.0 - uy);
                let x = cursor + glyph_w * ux + style.slant * (baseline - y);
                (x, y)
            };
            let a = map(ux0, uy0);
            let b = map(ux1, uy1);
            draw_segment(&mut canvas, a, b, style.stroke_width, ink);
        }
        cursor += style.spacing as f64;
    }
    RasterImage::new(canvas.width, canvas.height, 3, canvas.pixels).expect("valid synth canvas")
}

/// Generate the corpus under `out_dir` and write `manifest.csv` at its
/// root. Returns the manifest path. Layout:
/// `out_dir/<codex>/<page>/<line_id>.png`, one page per
/// `lines_per_page` consecutive lines.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // class-major codex list; codex ids are globally unique
    let codices: Vec<(usize, String)> = (0..config.num_classes)
        .flat_map(|class| {
            (0..config.codices_per_class).map(move |k| {
                let codex_id = format!("c{:03}", class * config.codices_per_class + k);
                (class, codex_id)
            })
        })
        .collect();

    let per_codex: Vec<Result<Vec<LineRecord>>> = codices
        .par_iter()
        .map(|(class, codex_id)| {
            let mut rng = codex_stream(config.seed, codex_id);
            let palette = draw_palette(&mut rng);
            let style = ClassStyle::for_class(*class);
            let mut records = Vec::with_capacity(config.lines_per_codex);
            for li in 0..config.lines_per_codex {
                let page = format!("p{}", li / config.lines_per_page);
                let line_id = format!("{codex_id}_{page}_l{li:03}");
                let rel_path = format!("{codex_id}/{page}/{line_id}.png");
                let image = render_line(&style, &palette, &mut rng);
                let full = out_dir.join(&rel_path);
                if let Some(parent) = full.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                image.save_png(&full)?;
                records.push(LineRecord {
                    line_id,
                    image_path: rel_path,
                    scribe: format!("scribe{class:02}"),
                    codex: codex_id.clone(),
                    page,
                });
            }
            Ok(records)
        })
        .collect();

    let mut records = Vec::new();
    for result in per_codex {
        records.extend(result?);
    }
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&records, &manifest_path)?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging;

    fn tiny_config(seed: u64) -> SynthConfig {
        SynthConfig {
            num_classes: 2,
            codices_per_class: 2,
            lines_per_codex: 4,
            lines_per_page: 3,
            seed,
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        let bad = SynthConfig { num_classes: 1, ..SynthConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { codices_per_class: 1, ..SynthConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SynthConfig { lines_per_codex: 0, ..SynthConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn styles_differ_across_first_seven_classes() {
        let styles: Vec<ClassStyle> = (0..7).map(ClassStyle::for_class).collect();
        for i in 0..styles.len() {
            for j in i + 1..styles.len() {
                assert_ne!(styles[i], styles[j], "classes {i} and {j} share a style");
            }
        }
    }

    #[test]
    fn corpus_layout_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(11);
        let manifest_path = generate_synthetic(&config, dir.path()).unwrap();
        let records = super::super::load_manifest(&manifest_path).unwrap();
        assert_eq!(records.len(), 2 * 2 * 4);
        for r in &records {
            assert!(dir.path().join(&r.image_path).is_file(), "missing {}", r.image_path);
            // 4 lines at 3 per page -> pages p0 and p1
            assert!(r.page == "p0" || r.page == "p1");
        }
        let classes: std::collections::BTreeSet<&str> =
            records.iter().map(|r| r.scribe.as_str()).collect();
        assert_eq!(
            classes.into_iter().collect::<Vec<_>>(),
            vec!["scribe00", "scribe01"]
        );
    }

    #[test]
    fn ink_and_background_are_luma_separable() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(5);
        let manifest_path = generate_synthetic(&config, dir.path()).unwrap();
        let records = super::super::load_manifest(&manifest_path).unwrap();
        let mut saw_ink = false;
        let mut saw_bg = false;
        for r in &records {
            let image = RasterImage::load(&dir.path().join(&r.image_path)).unwrap();
            let gray = imaging::to_grayscale(&image).unwrap();
            for &v in gray.pixels() {
                assert!(
                    v <= 110 || v >= 156,
                    "luma {v} falls inside the guard band of line {}",
                    r.line_id
                );
                saw_ink |= v <= 110;
                saw_bg |= v >= 156;
            }
        }
        assert!(saw_ink && saw_bg);
    }

    #[test]
    fn background_matches_codex_palette() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(9);
        let manifest_path = generate_synthetic(&config, dir.path()).unwrap();
        let records = super::super::load_manifest(&manifest_path).unwrap();
        for r in records.iter().take(4) {
            let palette = codex_palette(config.seed, &r.codex);
            let image = RasterImage::load(&dir.path().join(&r.image_path)).unwrap();
            let gray = imaging::to_grayscale(&image).unwrap();
            for y in 0..image.height() {
                for x in 0..image.width() {
                    if gray.get(x, y, 0) <= 135 {
                        continue; // ink
                    }
                    for c in 0..3 {
                        let v = image.get(x, y, c) as i32;
                        let t = palette.tint[c] as i32;
                        assert!(
                            (v - t).abs() <= palette.noise_amp,
                            "pixel {v} strays from tint {t} beyond amp {}",
                            palette.noise_amp
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn same_seed_reproduces_bytes_exactly() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = tiny_config(21);
        let manifest_a = generate_synthetic(&config, dir_a.path()).unwrap();
        let manifest_b = generate_synthetic(&config, dir_b.path()).unwrap();
        assert_eq!(
            std::fs::read(&manifest_a).unwrap(),
            std::fs::read(&manifest_b).unwrap()
        );
        let records = super::super::load_manifest(&manifest_a).unwrap();
        for r in &records {
            assert_eq!(
                std::fs::read(dir_a.path().join(&r.image_path)).unwrap(),
                std::fs::read(dir_b.path().join(&r.image_path)).unwrap(),
                "pixel bytes differ for {}",
                r.line_id
            );
        }
    }

    #[test]
    fn different_seed_changes_pixels() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let manifest_a = generate_synthetic(&tiny_config(1), dir_a.path()).unwrap();
        let _ = generate_synthetic(&tiny_config(2), dir_b.path()).unwrap();
        let records = super::super::load_manifest(&manifest_a).unwrap();
        let r = &records[0];
        assert_ne!(
            std::fs::read(dir_a.path().join(&r.image_path)).unwrap(),
            std::fs::read(dir_b.path().join(&r.image_path)).unwrap()
        );
    }
}
