use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use super::Image;
use crate::error::{Error, Result};

fn sniff_format(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(b"P6") {
        Some(ImageFormat::Pnm)
    } else {
        None
    }
}

/// Reads an 8-bit PNG (gray, gray+alpha, RGB, RGBA) or a binary P6 PPM.
///
/// Values are scaled by 1/255. Gray inputs produce 1-channel images, color
/// inputs 3-channel images; alpha is discarded.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decode_err = |reason: String| Error::Decode {
        path: path.to_path_buf(),
        reason,
    };
    let format = sniff_format(&bytes)
        .ok_or_else(|| decode_err("unsupported format (expected PNG or binary PPM P6)".into()))?;
    let dynamic = ImageReader::with_format(Cursor::new(&bytes), format)
        .decode()
        .map_err(|e| decode_err(format!("{format:?}: {e}")))?;

    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let (channels, raw): (usize, Vec<u8>) = match dynamic {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageLumaA8(buf) => (1, buf.into_raw().chunks_exact(2).map(|p| p[0]).collect()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        DynamicImage::ImageRgba8(buf) => (
            3,
            buf.into_raw()
                .chunks_exact(4)
                .flat_map(|p| [p[0], p[1], p[2]])
                .collect(),
        ),
        other => {
            return Err(decode_err(format!(
                "{format:?} with color type {:?} is not supported (8-bit only)",
                other.color()
            )))
        }
    };
    let data = raw.into_iter().map(|b| b as f64 / 255.0).collect();
    Image::from_vec(h, w, channels, data)
}

/// Quantizes a sample to a byte: clamp to [0,1], then `round(v * 255)` with
/// halves rounded away from zero.
#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG. Values are clamped to [0,1] before quantization.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => {
            return Err(Error::Encode {
                path: path.to_path_buf(),
                reason: format!("PNG output needs 1 or 3 channels, got {c}"),
            })
        }
    };
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Encode {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })
}
