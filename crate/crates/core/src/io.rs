//! Binary containers for images and masks, plus 8-bit PNG previews.
//!
//! Image file: `b"AUTODIMG"`, `u32` version, `u32` height, `u32` width, then
//! `height * width` little-endian `f32` values, row-major.
//! Mask file: `b"AUTODMSK"`, `u32` version, `u32` height, `u32` width, then
//! one byte (0 or 1) per pixel.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};

pub const IMAGE_MAGIC: &[u8; 8] = b"AUTODIMG";
pub const MASK_MAGIC: &[u8; 8] = b"AUTODMSK";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 4;

pub fn encode_image(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * img.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(img.height() as u32).to_le_bytes());
    out.extend_from_slice(&(img.width() as u32).to_le_bytes());
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + mask.data().len());
    out.extend_from_slice(MASK_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(mask.height() as u32).to_le_bytes());
    out.extend_from_slice(&(mask.width() as u32).to_le_bytes());
    out.extend_from_slice(mask.data());
    out
}

fn parse_header(bytes: &[u8], magic: &[u8; 8], path: &Path) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::corrupt(path, format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::corrupt(path, "bad magic bytes"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != CONTAINER_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            expected: CONTAINER_VERSION,
            found: version,
        });
    }
    let (h, w) = (word(12) as usize, word(16) as usize);
    if h == 0 || w == 0 {
        return Err(Error::corrupt(path, "zero-sized grid"));
    }
    Ok((h, w))
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    let (h, w) = parse_header(bytes, IMAGE_MAGIC, path)?;
    let expected = HEADER_LEN + 4 * h * w;
    if bytes.len() != expected {
        return Err(Error::corrupt(
            path,
            format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len()),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Image::new(h, w, data).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<BinaryMask> {
    let (h, w) = parse_header(bytes, MASK_MAGIC, path)?;
    let expected = HEADER_LEN + h * w;
    if bytes.len() != expected {
        return Err(Error::corrupt(
            path,
            format!("expected {expected} bytes for {h}x{w}, found {}", bytes.len()),
        ));
    }
    BinaryMask::new(h, w, bytes[HEADER_LEN..].to_vec()).map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_image(img)).map_err(|e| Error::io(path, e))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&bytes, path)
}

/// 8-bit grayscale PNG. Values are clipped to `[lo, hi]` and scaled to 0..=255.
pub fn write_png(img: &Image, lo: f64, hi: f64, path: &Path) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_gray_png(img.width(), img.height(), &pixels, path)
}

pub(crate) fn write_gray_png(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Serialization(format!("png header for {}: {e}", path.display())))?;
    writer
        .write_image_data(pixels)
        .map_err(|e| Error::Serialization(format!("png data for {}: {e}", path.display())))?;
    Ok(())
}
