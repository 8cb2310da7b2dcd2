use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{io_err, DataError, Result};
use crate::tensor::Tensor;

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    bytes: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(io_err(path))?;
    let image_err = |reason: String| DataError::Image {
        path: path.to_path_buf(),
        reason,
    };
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| image_err(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err("image too large".into()))?;
    let mut bytes = vec![0; size];
    let info = reader
        .next_frame(&mut bytes)
        .map_err(|e| image_err(e.to_string()))?;
    bytes.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes,
    })
}

/// Reads an 8-bit RGB (alpha, if present, is dropped) PNG into `[3,H,W]`
/// with values in 0..=255.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = decode(path)?;
    let stride = match (img.color, img.depth) {
        (ColorType::Rgb, BitDepth::Eight) => 3,
        (ColorType::Rgba, BitDepth::Eight) => 4,
        (c, d) => {
            return Err(DataError::Image {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit RGB, found {c:?} at {d:?}"),
            })
        }
    };
    let plane = img.width * img.height;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in img.bytes.chunks_exact(stride).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = px[c] as f64;
        }
    }
    Ok(Tensor::new([3, img.height, img.width], data).expect("rgb shape"))
}

/// Reads a single-channel depth PNG (16-bit, or 8-bit) into `[1,H,W]` in
/// raw sensor units.
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = decode(path)?;
    let data: Vec<f64> = match (img.color, img.depth) {
        (ColorType::Grayscale, BitDepth::Sixteen) => img
            .bytes
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64)
            .collect(),
        (ColorType::Grayscale, BitDepth::Eight) => img.bytes.iter().map(|&b| b as f64).collect(),
        (c, d) => {
            return Err(DataError::Image {
                path: path.to_path_buf(),
                reason: format!("expected grayscale depth, found {c:?} at {d:?}"),
            })
        }
    };
    Ok(Tensor::new([1, img.height, img.width], data).expect("depth shape"))
}

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let image_err = |e: png::EncodingError| DataError::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(image_err)?;
    writer.write_image_data(bytes).map_err(image_err)?;
    writer.finish().map_err(image_err)
}

/// Writes interleaved 8-bit RGB pixels (`3·W·H` bytes, row-major).
pub fn write_rgb_png(path: impl AsRef<Path>, pixels: &[u8], width: usize, height: usize) -> Result<()> {
    assert_eq!(pixels.len(), 3 * width * height, "rgb buffer size");
    encode(path.as_ref(), width, height, ColorType::Rgb, BitDepth::Eight, pixels)
}

/// Writes a 16-bit grayscale depth map.
pub fn write_depth_png(path: impl AsRef<Path>, depth: &[u16], width: usize, height: usize) -> Result<()> {
    assert_eq!(depth.len(), width * height, "depth buffer size");
    let bytes: Vec<u8> = depth.iter().flat_map(|d| d.to_be_bytes()).collect();
    encode(path.as_ref(), width, height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}
