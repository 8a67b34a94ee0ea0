//! Label masks as 8-bit grayscale PNG (pixel value = label), RGB images,
//! and write-only VOC-coloured mask previews.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use thiserror::Error;

use crate::cam::PseudoMask;
use crate::curriculum::RgbImage;

#[derive(Debug, Error)]
pub enum PngError {
    #[error("invalid PNG: {0}")]
    BadPng(String),
    #[error("expected {expected}, found {color:?} at {depth:?}")]
    DepthMismatch {
        expected: &'static str,
        color: ColorType,
        depth: BitDepth,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<png::DecodingError> for PngError {
    fn from(e: png::DecodingError) -> Self {
        match e {
            png::DecodingError::IoError(io) => PngError::Io(io),
            other => PngError::BadPng(other.to_string()),
        }
    }
}

impl From<png::EncodingError> for PngError {
    fn from(e: png::EncodingError) -> Self {
        match e {
            png::EncodingError::IoError(io) => PngError::Io(io),
            other => PngError::BadPng(other.to_string()),
        }
    }
}

/// Standard PASCAL VOC palette entry: the bits of the class index are
/// dealt round-robin into the high bits of R, G and B.
pub fn voc_color(label: u8) -> [u8; 3] {
    let mut rgb = [0u8; 3];
    let mut c = label;
    for j in 0..8 {
        for (ch, value) in rgb.iter_mut().enumerate() {
            *value |= ((c >> ch) & 1) << (7 - j);
        }
        c >>= 3;
    }
    rgb
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<(), PngError> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(bytes: &[u8]) -> Result<Decoded, PngError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| PngError::BadPng("image too large".into()))?;
    let mut data = vec![0; size];
    let frame = reader.next_frame(&mut data)?;
    data.truncate(frame.buffer_size());
    Ok(Decoded {
        width: frame.width as usize,
        height: frame.height as usize,
        color: frame.color_type,
        depth: frame.bit_depth,
        data,
    })
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &PseudoMask) -> Result<(), PngError> {
    encode(path.as_ref(), mask.width(), mask.height(), ColorType::Grayscale, mask.labels())
}

/// Reads an 8-bit grayscale PNG whose pixel values are labels.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<PseudoMask, PngError> {
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut BufReader::new(File::open(path)?), &mut bytes)?;
    let d = decode(&bytes)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Eight {
        return Err(PngError::DepthMismatch {
            expected: "8-bit grayscale",
            color: d.color,
            depth: d.depth,
        });
    }
    PseudoMask::new(d.height, d.width, d.data).map_err(|e| PngError::BadPng(e.to_string()))
}

/// RGB preview of a mask in the VOC palette. Not meant to be read back.
pub fn write_color_mask_png(path: impl AsRef<Path>, mask: &PseudoMask) -> Result<(), PngError> {
    let data: Vec<u8> = mask.labels().iter().flat_map(|&l| voc_color(l)).collect();
    encode(path.as_ref(), mask.width(), mask.height(), ColorType::Rgb, &data)
}

pub fn write_rgb_png(path: impl AsRef<Path>, image: &RgbImage) -> Result<(), PngError> {
    encode(path.as_ref(), image.width(), image.height(), ColorType::Rgb, image.data())
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<RgbImage, PngError> {
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut BufReader::new(File::open(path)?), &mut bytes)?;
    let d = decode(&bytes)?;
    if d.color != ColorType::Rgb || d.depth != BitDepth::Eight {
        return Err(PngError::DepthMismatch {
            expected: "8-bit RGB",
            color: d.color,
            depth: d.depth,
        });
    }
    RgbImage::new(d.height, d.width, d.data).map_err(|e| PngError::BadPng(e.to_string()))
}
