//! Image I/O, colour conversion and the grayscale saliency writer.
//!
//! Only 8/16-bit PNG and binary PPM/PGM are accepted. Intensities are kept as
//! `f32` in `[0, 1]`, row-major, channels interleaved.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{NerdError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(NerdError::InvalidArgument(format!(
                "image must have 1 or 3 channels, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(NerdError::InvalidArgument("image has zero extent".into()));
        }
        if data.len() != width * height * channels {
            return Err(NerdError::DimensionMismatch(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(NerdError::InvalidArgument(
                "image values must be finite and in [0, 1]".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a 3-channel image by evaluating `f(x, y)` per pixel.
    pub fn from_rgb_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, 3, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Replicates a grayscale image into three identical channels; colour
    /// images are returned unchanged.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

/// Decodes a PNG or PPM/PGM file into an [`Image`] scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(NerdError::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let format = match image::guess_format(&bytes) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Pnm)) => f,
        _ => return Err(NerdError::UnsupportedFormat(path.to_path_buf())),
    };
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| {
        NerdError::CorruptHeader {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    Ok(from_dynamic(decoded))
}

fn from_dynamic(img: DynamicImage) -> Image {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    let (channels, data): (usize, Vec<f32>) = match (gray, sixteen) {
        (true, false) => (1, scale8(img.to_luma8().into_raw())),
        (true, true) => (1, scale16(img.to_luma16().into_raw())),
        (false, false) => (3, scale8(img.to_rgb8().into_raw())),
        (false, true) => (3, scale16(img.to_rgb16().into_raw())),
    };
    Image {
        width,
        height,
        channels,
        data,
    }
}

fn scale8(raw: Vec<u8>) -> Vec<f32> {
    raw.into_iter().map(|v| v as f32 / 255.0).collect()
}

fn scale16(raw: Vec<u16>) -> Vec<f32> {
    raw.into_iter().map(|v| v as f32 / 65535.0).collect()
}

/// Per-pixel CIELAB triplets (D65 white).
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl LabImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }
}

const D65: [f64; 3] = [0.95047, 1.0, 1.08883];

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if t > EPS {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// sRGB (components in `[0, 1]`) to CIELAB.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let fx = lab_f(x / D65[0]);
    let fy = lab_f(y / D65[1]);
    let fz = lab_f(z / D65[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn rgb_to_lab(img: &Image) -> Result<LabImage> {
    if img.channels() != 3 {
        return Err(NerdError::InvalidArgument(
            "rgb_to_lab needs a 3-channel image".into(),
        ));
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| srgb_pixel_to_lab([p[0] as f64, p[1] as f64, p[2] as f64]))
        .collect();
    Ok(LabImage {
        width: img.width(),
        height: img.height(),
        data,
    })
}

/// Quantizes a `[0, 1]` value to a byte as `round(v * 255)`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `values` (row-major, `width * height`) as an 8-bit grayscale image.
/// The encoding is chosen from the extension: `.pgm` gives binary P5, anything
/// else PNG.
pub fn save_gray(
    values: &[f64],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if values.len() != width * height {
        return Err(NerdError::DimensionMismatch(format!(
            "map has {} values for {}x{}",
            values.len(),
            width,
            height
        )));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(NerdError::InvalidArgument(
            "saliency values must lie in [0, 1]".into(),
        ));
    }
    let bytes: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    let unwritable = |reason: String| NerdError::Unwritable {
        path: path.to_path_buf(),
        reason,
    };
    let is_pgm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("pgm"))
        .unwrap_or(false);
    let file = File::create(path).map_err(|e| unwritable(e.to_string()))?;
    let mut out = BufWriter::new(file);
    if is_pgm {
        write!(out, "P5\n{width} {height}\n255\n").map_err(|e| unwritable(e.to_string()))?;
        out.write_all(&bytes)
            .map_err(|e| unwritable(e.to_string()))?;
    } else {
        image::write_buffer_with_format(
            &mut out,
            &bytes,
            width as u32,
            height as u32,
            image::ExtendedColorType::L8,
            ImageFormat::Png,
        )
        .map_err(|e| unwritable(e.to_string()))?;
    }
    out.flush().map_err(|e| unwritable(e.to_string()))
}

/// Writes a 16-bit binary PGM, used for label-map debug dumps.
pub fn save_gray16(
    values: &[u16],
    width: usize,
    height: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let unwritable = |e: std::io::Error| NerdError::Unwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let file = File::create(path).map_err(unwritable)?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{width} {height}\n65535\n").map_err(unwritable)?;
    for v in values {
        out.write_all(&v.to_be_bytes()).map_err(unwritable)?;
    }
    out.flush().map_err(unwritable)
}

/// Writes an 8-bit RGB PNG or P6 PPM (by extension). Used by the corpus
/// generator and tests.
pub fn save_rgb(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let rgb = img.to_rgb();
    let bytes: Vec<u8> = rgb.data().iter().map(|&v| quantize(v as f64)).collect();
    let unwritable = |reason: String| NerdError::Unwritable {
        path: path.to_path_buf(),
        reason,
    };
    let is_ppm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("ppm"))
        .unwrap_or(false);
    let file = File::create(path).map_err(|e| unwritable(e.to_string()))?;
    let mut out = BufWriter::new(file);
    if is_ppm {
        write!(out, "P6\n{} {}\n255\n", img.width(), img.height())
            .map_err(|e| unwritable(e.to_string()))?;
        out.write_all(&bytes)
            .map_err(|e| unwritable(e.to_string()))?;
    } else {
        image::write_buffer_with_format(
            &mut out,
            &bytes,
            img.width() as u32,
            img.height() as u32,
            image::ExtendedColorType::Rgb8,
            ImageFormat::Png,
        )
        .map_err(|e| unwritable(e.to_string()))?;
    }
    out.flush().map_err(|e| unwritable(e.to_string()))
}
