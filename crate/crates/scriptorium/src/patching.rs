//! Height-normalizing resize and sliding-window patch extraction.
//!
//! Line images vary in length, so they are first resized to a fixed height
//! (aspect ratio preserved, bilinear) and then cut into fixed-size windows
//! along the writing direction. Windows do not overlap except possibly the
//! last one, which is anchored to the right edge so every pixel of the line
//! is covered; a line shorter than one window becomes a single white-padded
//! patch. A line of width `W` therefore always yields `ceil(W / w)` patches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::imaging::RasterImage;
use crate::Result;

/// Intensity used to pad lines narrower than one patch window (parchment
/// white).
pub const PAD_VALUE: u8 = 255;

/// Patch window geometry. `height` is also the height every line image is
/// resized to before extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub width: usize,
    pub height: usize,
}

impl PatchSpec {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidPatchSpec(format!(
                "window must have positive dimensions, got {width}x{height}"
            )));
        }
        Ok(Self { width, height })
    }

    /// Square window, the common case.
    pub fn square(side: usize) -> Result<Self> {
        Self::new(side, side)
    }

    /// Number of patches a line of the given resized width produces.
    pub fn patch_count(&self, line_width: usize) -> usize {
        line_width.div_ceil(self.width).max(1)
    }
}

/// Where a patch came from within its line: extraction index and the window's
/// x offset in resized-line coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub index: usize,
    pub x_offset: usize,
}

/// An 8-bit patch cut from a resized line image. Pixel layout matches
/// [`RasterImage`]: row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPatch {
    pub image: RasterImage,
    pub origin: PatchOrigin,
}

/// A normalized patch ready for the classifier: f64 values in planar layout
/// (all of channel 0, then channel 1, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    width: usize,
    height: usize,
    channels: u8,
    data: Vec<f64>,
}

impl Patch {
    pub fn new(width: usize, height: usize, channels: u8, data: Vec<f64>) -> Result<Self> {
        let expected = width * height * channels as usize;
        if width == 0 || height == 0 || (channels != 1 && channels != 3) || data.len() != expected {
            return Err(Error::InvalidPatchSpec(format!(
                "patch {width}x{height}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Value at (channel, row, column).
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        debug_assert!(c < self.channels as usize && y < self.height && x < self.width);
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Dataset-level normalization constants, computed over the training patches
/// and reused unchanged for validation and test data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstants {
    pub mean: f64,
    pub std: f64,
}

impl NormConstants {
    /// Identity normalization (useful in tests).
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

/// Resize to the target height with bilinear interpolation, preserving aspect
/// ratio. The new width is `round(width * target_height / height)`, at least 1.
/// Sampling is center-aligned: destination pixel centers map to
/// `(d + 0.5) * src/dst - 0.5` in source coordinates, clamped to the image.
pub fn resize_to_height(img: &RasterImage, target_height: usize) -> Result<RasterImage> {
    if target_height == 0 {
        return Err(Error::InvalidPatchSpec(
            "resize target height must be positive".into(),
        ));
    }
    let (src_w, src_h) = (img.width(), img.height());
    if src_h == target_height {
        return Ok(img.clone());
    }
    let dst_w = ((src_w as f64 * target_height as f64 / src_h as f64).round() as usize).max(1);
    let dst_h = target_height;
    let channels = img.channels() as usize;
    let mut pixels = vec![0u8; dst_w * dst_h * channels];

    let x_scale = src_w as f64 / dst_w as f64;
    let y_scale = src_h as f64 / dst_h as f64;
    for dy in 0..dst_h {
        let sy = ((dy as f64 + 0.5) * y_scale - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = sy - y0 as f64;
        for dx in 0..dst_w {
            let sx = ((dx as f64 + 0.5) * x_scale - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let fx = sx - x0 as f64;
            for c in 0..channels {
                let at = |x: usize, y: usize| img.pixels()[(y * src_w + x) * channels + c] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bot * fy;
                pixels[(dy * dst_w + dx) * channels + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterImage::new(dst_w, dst_h, img.channels(), pixels)
}

/// Window start offsets for a line of the given width: non-overlapping
/// windows from the left, plus one right-anchored window when the width is
/// not an exact multiple. A width at most one window wide yields `[0]`.
pub fn window_offsets(line_width: usize, patch_width: usize) -> Vec<usize> {
    if line_width <= patch_width {
        return vec![0];
    }
    let mut xs: Vec<usize> = (0..=line_width - patch_width)
        .step_by(patch_width)
        .collect();
    if line_width % patch_width != 0 {
        xs.push(line_width - patch_width);
    }
    xs
}

/// Cut a resized line image into patches. The image height must already equal
/// the spec height; a line narrower than one window is padded on the right
/// with white.
pub fn extract_patches(img: &RasterImage, spec: &PatchSpec) -> Result<Vec<RawPatch>> {
    if img.height() != spec.height {
        return Err(Error::PatchHeightMismatch {
            expected: spec.height,
            actual: img.height(),
        });
    }
    let channels = img.channels() as usize;
    let offsets = window_offsets(img.width(), spec.width);
    let mut patches = Vec::with_capacity(offsets.len());
    for (index, &x_offset) in offsets.iter().enumerate() {
        let mut pixels = vec![PAD_VALUE; spec.width * spec.height * channels];
        let copy_w = spec.width.min(img.width() - x_offset);
        for y in 0..spec.height {
            let src_start = (y * img.width() + x_offset) * channels;
            let dst_start = y * spec.width * channels;
            pixels[dst_start..dst_start + copy_w * channels]
                .copy_from_slice(&img.pixels()[src_start..src_start + copy_w * channels]);
        }
        let image = RasterImage::new(spec.width, spec.height, img.channels(), pixels)?;
        patches.push(RawPatch {
            image,
            origin: PatchOrigin { index, x_offset },
        });
    }
    Ok(patches)
}

/// Scale a raw patch to `[0, 1]` and standardize with the dataset constants:
/// `(v / 255 - mean) / std`.
pub fn normalize(raw: &RawPatch, norm: &NormConstants) -> Patch {
    let img = &raw.image;
    let channels = img.channels() as usize;
    let mut data = vec![0.0; img.width() * img.height() * channels];
    // interleaved u8 -> planar f64
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..channels {
                let v = img.pixels()[(y * img.width() + x) * channels + c] as f64;
                data[(c * img.height() + y) * img.width() + x] =
                    (v / 255.0 - norm.mean) / norm.std;
            }
        }
    }
    Patch::new(img.width(), img.height(), img.channels(), data)
        .expect("raw patch dimensions are valid by construction")
}

/// File name for a dumped patch: `<lineid>_<index>_<xoffset>.png`.
pub fn patch_file_name(line_id: &str, origin: &PatchOrigin) -> String {
    format!("{line_id}_{}_{}.png", origin.index, origin.x_offset)
}

/// Write every patch of a line to `dir` as PNG files.
pub fn dump_patches(patches: &[RawPatch], line_id: &str, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for patch in patches {
        let path = dir.join(patch_file_name(line_id, &patch.origin));
        patch.image.save_png(&path)?;
    }
    Ok(())
}
