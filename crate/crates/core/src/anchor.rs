//! Reflectance scaling and adaptive gain for raw satellite anchor images.
//!
//! Inputs are 3-channel composites with integer values on the nominal
//! 0..10,000 reflectance scale. Values are clipped to 10,000, divided by
//! 10,000, and then a single scalar gain lifts dark images: when the mean
//! over all pixels and channels is below 0.25 the image is multiplied by
//! 0.5/mean, capped at 8. Outputs are clipped to [0, 1].

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

/// Reflectance integers above this are clipped before scaling.
pub const REFLECTANCE_SCALE: f64 = 10_000.0;
/// Gain kicks in below this mean reflectance (strict less-than).
pub const GAIN_MEAN_THRESHOLD: f64 = 0.25;
/// Gain numerator: images are pushed toward this mean.
pub const GAIN_TARGET: f64 = 0.5;
/// Gain cap.
pub const MAX_GAIN: f64 = 8.0;

/// Raw 3-channel anchor image, row-major interleaved RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct RawAnchorImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u16>,
}

impl RawAnchorImage {
    pub fn new(width: u32, height: u32, values: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        let expected = width as usize * height as usize * 3;
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "expected {expected} values for {width}x{height} RGB, got {}",
                values.len()
            )));
        }
        Ok(RawAnchorImage {
            width,
            height,
            values,
        })
    }
}

/// Normalized anchor image: values in [0, 1] and the gain that was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAnchorImage {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
    pub applied_gain: f32,
}

/// Clip to the nominal range and divide by 10,000.
pub fn to_reflectance(img: &RawAnchorImage) -> Vec<f32> {
    img.values
        .iter()
        .map(|&v| ((v as f64).min(REFLECTANCE_SCALE) / REFLECTANCE_SCALE) as f32)
        .collect()
}

/// Apply the adaptive gain rule to reflectance values in [0, 1].
///
/// One scalar gain per image, computed from the mean over all pixels and
/// channels. An all-zero image takes the maximum gain (the continuous limit
/// of the cap rule) and stays zero.
pub fn adaptive_gain(width: u32, height: u32, values: &[f32]) -> Result<NormalizedAnchorImage> {
    if width == 0 || height == 0 || values.is_empty() {
        return Err(Error::EmptyImage);
    }
    let mut sum = 0f64;
    for &v in values {
        sum += v as f64;
    }
    let mean = sum / values.len() as f64;
    let gain = if mean == 0.0 {
        MAX_GAIN
    } else if mean < GAIN_MEAN_THRESHOLD {
        (GAIN_TARGET / mean).min(MAX_GAIN)
    } else {
        1.0
    };
    let out: Vec<f32> = values
        .iter()
        .map(|&v| ((v as f64 * gain).min(1.0)) as f32)
        .collect();
    Ok(NormalizedAnchorImage {
        width,
        height,
        values: out,
        applied_gain: gain as f32,
    })
}

/// Full normalization: reflectance scaling then adaptive gain.
pub fn normalize_anchor(img: &RawAnchorImage) -> Result<NormalizedAnchorImage> {
    let reflectance = to_reflectance(img);
    adaptive_gain(img.width, img.height, &reflectance)
}

/// Read a raw anchor from an 8- or 16-bit RGB PNG. 16-bit samples are taken
/// as reflectance integers verbatim; 8-bit samples are rescaled onto the
/// 0..10,000 range (round-to-nearest) since they are already web-range data.
pub fn load_anchor_png(path: impl AsRef<Path>) -> Result<RawAnchorImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let buf_size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png(format!("{}: output size overflows", path.display())))?;
    let mut buf = vec![0u8; buf_size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb {
        return Err(Error::InvalidInput(format!(
            "{}: anchor PNG must be RGB, got {:?}",
            path.display(),
            info.color_type
        )));
    }
    let pixels = info.width as usize * info.height as usize * 3;
    let values = match info.bit_depth {
        png::BitDepth::Eight => buf[..pixels]
            .iter()
            .map(|&v| ((v as f64 / 255.0 * REFLECTANCE_SCALE).round()) as u16)
            .collect(),
        png::BitDepth::Sixteen => buf[..pixels * 2]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect(),
        other => {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported bit depth {other:?}",
                path.display()
            )))
        }
    };
    RawAnchorImage::new(info.width, info.height, values)
}

/// Read the raw-grid text fixture format: `width height` on the first line,
/// then width*height*3 whitespace-separated integers, interleaved RGB.
pub fn load_anchor_grid(path: impl AsRef<Path>) -> Result<RawAnchorImage> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = text.split_whitespace();
    let mut next_int = |what: &str| -> Result<u32> {
        tokens
            .next()
            .ok_or_else(|| Error::InvalidInput(format!("{}: missing {what}", path.display())))?
            .parse::<u32>()
            .map_err(|e| Error::InvalidInput(format!("{}: bad {what}: {e}", path.display())))
    };
    let width = next_int("width")?;
    let height = next_int("height")?;
    let expected = width as usize * height as usize * 3;
    let mut values = Vec::with_capacity(expected);
    for _ in 0..expected {
        let v = next_int("pixel value")?;
        if v > u16::MAX as u32 {
            return Err(Error::InvalidInput(format!(
                "{}: value {v} exceeds 16-bit range",
                path.display()
            )));
        }
        values.push(v as u16);
    }
    if tokens.next().is_some() {
        return Err(Error::InvalidInput(format!(
            "{}: trailing values after {expected} samples",
            path.display()
        )));
    }
    RawAnchorImage::new(width, height, values)
}

/// Load either format by extension: `.png` or anything else as raw grid.
pub fn load_anchor(path: impl AsRef<Path>) -> Result<RawAnchorImage> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => load_anchor_png(path),
        _ => load_anchor_grid(path),
    }
}

/// Write a normalized image as an 8-bit RGB PNG (value x 255, round half up).
pub fn save_normalized_png(img: &NormalizedAnchorImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width, img.height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Png(e.to_string()))?;
    let bytes: Vec<u8> = img
        .values
        .iter()
        .map(|&v| ((v as f64) * 255.0).round() as u8)
        .collect();
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Png(e.to_string()))
}
