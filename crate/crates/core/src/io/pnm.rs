//! Binary PPM (P6) color and PGM (P5) gray images.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::image::{GrayImage, RgbImage};

use super::{read_bytes, write_bytes, IoError};

fn decode(bytes: &[u8]) -> Result<image::DynamicImage, IoError> {
    image::load_from_memory_with_format(bytes, ImageFormat::Pnm).map_err(|e| IoError::Format(e.to_string()))
}

fn encode(width: usize, height: usize, data: &[u8], subtype: PnmSubtype, color: ExtendedColorType) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(data, width as u32, height as u32, color)
        .map_err(|e| IoError::Format(e.to_string()))?;
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<RgbImage, IoError> {
    let img = decode(&read_bytes(path)?)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Ok(RgbImage { width: w, height: h, data })
}

pub fn write_image(img: &RgbImage, path: &Path) -> Result<(), IoError> {
    let flat: Vec<u8> = img.data.iter().flatten().copied().collect();
    let bytes = encode(
        img.width,
        img.height,
        &flat,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        ExtendedColorType::Rgb8,
    )?;
    write_bytes(path, &bytes)
}

/// Gray values come back as exact integers in `[0, 255]`.
pub fn read_pgm(path: &Path) -> Result<GrayImage, IoError> {
    let img = decode(&read_bytes(path)?)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0[0] as f32).collect();
    Ok(GrayImage { width: w, height: h, data })
}

/// Values are rounded and clamped to `[0, 255]`.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<(), IoError> {
    let flat: Vec<u8> = img.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let bytes = encode(
        img.width,
        img.height,
        &flat,
        PnmSubtype::Graymap(SampleEncoding::Binary),
        ExtendedColorType::L8,
    )?;
    write_bytes(path, &bytes)
}
