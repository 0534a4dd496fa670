//! Line-image preprocessing: grayscale conversion, ink masking, and the
//! aspect-ratio filter for uninformative snippets.
//!
//! Segmented line images arrive as RGB. Depending on the configured mode they
//! are passed through unchanged, converted to grayscale, or converted and then
//! masked: every pixel brighter than the ink threshold is treated as parchment
//! and set to white, while ink pixels keep their gray value. Masking is not
//! binarization; the ink side of the threshold stays grayscale.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Fixed ink/parchment separation threshold.
pub const DEFAULT_MASK_THRESHOLD: u8 = 135;

/// Minimum width/height ratio for a line image to be considered informative.
pub const MIN_ASPECT_RATIO: f64 = 5.0;

/// An 8-bit raster image, row-major, channels interleaved. `channels` is 1
/// (grayscale) or 3 (RGB).
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: u8,
    pixels: Vec<u8>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish()
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width * height * channels as usize;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Uniform image of the given intensity (replicated across channels).
    pub fn filled(width: usize, height: usize, channels: u8, value: u8) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels as usize],
        )
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

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Sample one channel of one pixel. Row-major, interleaved.
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height && c < self.channels as usize);
        self.pixels[(y * self.width + x) * self.channels as usize + c]
    }

    /// Decode a PNG or JPEG file. Grayscale files load as single-channel,
    /// everything else as RGB.
    pub fn load(path: &Path) -> Result<Self> {
        let dynamic = image::open(path).map_err(|source| Error::ImageIo {
            path: path.to_path_buf(),
            action: "decoded",
            source,
        })?;
        let img = match dynamic {
            image::DynamicImage::ImageLuma8(gray) => {
                let (w, h) = gray.dimensions();
                Self::new(w as usize, h as usize, 1, gray.into_raw())?
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self::new(w as usize, h as usize, 3, rgb.into_raw())?
            }
        };
        Ok(img)
    }

    /// Write the image as PNG (8-bit grayscale or RGB depending on channels).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let save = |err_path: &Path, result: image::ImageResult<()>| {
            result.map_err(|source| Error::ImageIo {
                path: err_path.to_path_buf(),
                action: "encoded",
                source,
            })
        };
        match self.channels {
            1 => {
                let buf = image::GrayImage::from_raw(
                    self.width as u32,
                    self.height as u32,
                    self.pixels.clone(),
                )
                .expect("buffer length checked at construction");
                save(path, buf.save_with_format(path, image::ImageFormat::Png))
            }
            _ => {
                let buf = image::RgbImage::from_raw(
                    self.width as u32,
                    self.height as u32,
                    self.pixels.clone(),
                )
                .expect("buffer length checked at construction");
                save(path, buf.save_with_format(path, image::ImageFormat::Png))
            }
        }
    }
}

/// Input-image preprocessing mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreprocessMode {
    /// Pass the RGB image through unchanged.
    Rgb,
    /// Convert to grayscale.
    Gs,
    /// Convert to grayscale, then mask parchment to white.
    GsMask,
}

impl PreprocessMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGB" => Some(Self::Rgb),
            "GS" => Some(Self::Gs),
            "GS_MASK" | "GSMASK" | "GS-MASK" => Some(Self::GsMask),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Rgb => "RGB",
            Self::Gs => "GS",
            Self::GsMask => "GS_MASK",
        }
    }

    /// Channel count of images produced by this mode.
    pub fn output_channels(&self) -> u8 {
        match self {
            Self::Rgb => 3,
            Self::Gs | Self::GsMask => 1,
        }
    }
}

/// Snippet filter: line images are expected to be wide; anything with
/// width/height <= 5 carries no usable handwriting and is skipped.
pub fn is_informative(img: &RasterImage) -> bool {
    img.width as f64 / img.height as f64 > MIN_ASPECT_RATIO
}

/// ITU-R 601 luma conversion, rounded to the nearest integer.
pub fn to_grayscale(img: &RasterImage) -> Result<RasterImage> {
    if img.channels != 3 {
        return Err(Error::NotRgb(img.channels));
    }
    let mut pixels = Vec::with_capacity(img.width * img.height);
    for px in img.pixels.chunks_exact(3) {
        let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        pixels.push(luma.round().clamp(0.0, 255.0) as u8);
    }
    RasterImage::new(img.width, img.height, 1, pixels)
}

/// Replace parchment with white. Pixels with intensity <= threshold count as
/// ink and keep their value; everything brighter becomes 255.
pub fn mask(img: &RasterImage, threshold: u8) -> Result<RasterImage> {
    if img.channels != 1 {
        return Err(Error::NotGrayscale(img.channels));
    }
    let pixels = img
        .pixels
        .iter()
        .map(|&v| if v <= threshold { v } else { 255 })
        .collect();
    RasterImage::new(img.width, img.height, 1, pixels)
}

/// Apply the configured preprocessing mode.
///
/// Already-grayscale input is accepted for the GS and GS_MASK modes (the
/// conversion step becomes a no-op); mode RGB requires 3 channels.
pub fn preprocess(img: &RasterImage, mode: PreprocessMode) -> Result<RasterImage> {
    match mode {
        PreprocessMode::Rgb => {
            if img.channels != 3 {
                return Err(Error::NotRgb(img.channels));
            }
            Ok(img.clone())
        }
        PreprocessMode::Gs => {
            if img.channels == 1 {
                Ok(img.clone())
            } else {
                to_grayscale(img)
            }
        }
        PreprocessMode::GsMask => {
            let gray = if img.channels == 1 {
                img.clone()
            } else {
                to_grayscale(img)?
            };
            mask(&gray, DEFAULT_MASK_THRESHOLD)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rgb1(r: u8, g: u8, b: u8) -> RasterImage {
        RasterImage::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(RasterImage::new(0, 4, 1, vec![]).is_err());
        assert!(RasterImage::new(2, 2, 2, vec![0; 8]).is_err());
        assert!(RasterImage::new(2, 2, 1, vec![0; 5]).is_err());
    }

    #[test]
    fn informative_uses_strict_ratio() {
        let wide = RasterImage::filled(1000, 100, 1, 0).unwrap();
        assert!(is_informative(&wide));
        // ratio exactly 5 is skipped
        let boundary = RasterImage::filled(500, 100, 1, 0).unwrap();
        assert!(!is_informative(&boundary));
        let square = RasterImage::filled(100, 100, 1, 0).unwrap();
        assert!(!is_informative(&square));
    }

    #[test]
    fn grayscale_fixed_points() {
        assert_eq!(to_grayscale(&rgb1(255, 255, 255)).unwrap().pixels()[0], 255);
        assert_eq!(to_grayscale(&rgb1(0, 0, 0)).unwrap().pixels()[0], 0);
        // 0.299*100 + 0.587*150 + 0.114*200 = 140.75 -> 141
        assert_eq!(to_grayscale(&rgb1(100, 150, 200)).unwrap().pixels()[0], 141);
    }

    #[test]
    fn grayscale_rejects_single_channel() {
        let gray = RasterImage::filled(2, 2, 1, 10).unwrap();
        assert!(matches!(to_grayscale(&gray), Err(Error::NotRgb(1))));
    }

    #[test]
    fn mask_boundary_is_inclusive_ink() {
        let img = RasterImage::new(3, 1, 1, vec![135, 136, 255]).unwrap();
        let masked = mask(&img, DEFAULT_MASK_THRESHOLD).unwrap();
        assert_eq!(masked.pixels(), &[135, 255, 255]);
    }

    #[test]
    fn mask_keeps_pure_parchment_white() {
        let img = RasterImage::filled(4, 2, 1, 255).unwrap();
        let masked = mask(&img, DEFAULT_MASK_THRESHOLD).unwrap();
        assert_eq!(masked.pixels(), img.pixels());
    }

    #[test]
    fn preprocess_modes() {
        let img = RasterImage::filled(2, 2, 3, 200).unwrap();
        let rgb = preprocess(&img, PreprocessMode::Rgb).unwrap();
        assert_eq!(rgb, img);
        let gs = preprocess(&img, PreprocessMode::Gs).unwrap();
        assert_eq!(gs.channels(), 1);
        assert!(gs.pixels().iter().all(|&v| v == 200));
        // uniform 200 > 135 is all parchment
        let masked = preprocess(&img, PreprocessMode::GsMask).unwrap();
        assert!(masked.pixels().iter().all(|&v| v == 255));
    }

    #[test]
    fn preprocess_white_stays_white() {
        let img = RasterImage::filled(2, 2, 3, 255).unwrap();
        let gs = preprocess(&img, PreprocessMode::Gs).unwrap();
        assert!(gs.pixels().iter().all(|&v| v == 255));
    }

    proptest! {
        #[test]
        fn mask_is_idempotent(pixels in proptest::collection::vec(0u8..=255, 1..64)) {
            let w = pixels.len();
            let img = RasterImage::new(w, 1, 1, pixels).unwrap();
            let once = mask(&img, DEFAULT_MASK_THRESHOLD).unwrap();
            let twice = mask(&once, DEFAULT_MASK_THRESHOLD).unwrap();
            prop_assert_eq!(&once, &twice);
        }

        #[test]
        fn mask_preserves_ink_count(pixels in proptest::collection::vec(0u8..=255, 1..64)) {
            let w = pixels.len();
            let img = RasterImage::new(w, 1, 1, pixels).unwrap();
            let masked = mask(&img, DEFAULT_MASK_THRESHOLD).unwrap();
            let ink_before: Vec<u8> = img
                .pixels()
                .iter()
                .copied()
                .filter(|&v| v <= DEFAULT_MASK_THRESHOLD)
                .collect();
            let ink_after: Vec<u8> = masked
                .pixels()
                .iter()
                .copied()
                .filter(|&v| v <= DEFAULT_MASK_THRESHOLD)
                .collect();
            // ink pixels are untouched, everything else is exactly 255
            prop_assert_eq!(ink_before, ink_after);
            for (&a, &b) in img.pixels().iter().zip(masked.pixels()) {
                if a > DEFAULT_MASK_THRESHOLD {
                    prop_assert_eq!(b, 255);
                }
            }
        }

        #[test]
        fn grayscale_within_channel_range(r in 0u8..=255, g in 0u8..=255, b in 0u8..=255) {
            let out = to_grayscale(&rgb1(r, g, b)).unwrap().pixels()[0];
            let lo = r.min(g).min(b);
            let hi = r.max(g).max(b);
            prop_assert!(out >= lo && out <= hi, "{out} outside [{lo}, {hi}]");
        }

        #[test]
        fn informative_monotone_in_width(h in 1usize..50, w in 1usize..400, extra in 0usize..100) {
            let narrow = RasterImage::filled(w, h, 1, 0).unwrap();
            let wide = RasterImage::filled(w + extra, h, 1, 0).unwrap();
            if is_informative(&narrow) {
                prop_assert!(is_informative(&wide));
            }
        }
    }
}
