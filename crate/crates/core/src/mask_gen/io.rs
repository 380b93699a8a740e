//! 1-bit grayscale PNG encoding for masks: 0 ↔ black, 1 ↔ white.

use std::path::Path;

use super::Mask;
use crate::error::{Error, Result};

pub fn encode_png(mask: &Mask) -> Result<Vec<u8>> {
    let size = mask.size();
    let row_bytes = size.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * size];
    for i in 0..size {
        for j in 0..size {
            if mask.get(i, j) {
                packed[i * row_bytes + j / 8] |= 0x80 >> (j % 8);
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, size as u32, size as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(&packed)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    Ok(out)
}

/// Decodes into a `(width, height, bits)` grid, rejecting any pixel that is
/// not pure black or pure white.
fn decode_grid(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("cannot decode mask png: {e}")))?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut bits = Vec::with_capacity(w * h);
    for (k, &v) in img.as_raw().iter().enumerate() {
        match v {
            0 => bits.push(0),
            255 => bits.push(1),
            other => {
                return Err(Error::Format(format!(
                    "mask is not binary: pixel value {other} at ({}, {})",
                    k / w,
                    k % w
                )))
            }
        }
    }
    Ok((w, h, bits))
}

pub fn decode_png(bytes: &[u8]) -> Result<Mask> {
    let (w, h, bits) = decode_grid(bytes)?;
    if w != h {
        return Err(Error::Format(format!("mask must be square, got {w}x{h}")));
    }
    Mask::from_bits(w, bits).map_err(|e| Error::Format(e.to_string()))
}

/// Decodes a binary PNG of any shape and resamples it to `size × size` with
/// nearest-neighbor lookup, which keeps the result binary.
pub fn decode_png_resized(bytes: &[u8], size: usize) -> Result<Mask> {
    let (w, h, bits) = decode_grid(bytes)?;
    if w == size && h == size {
        return Mask::from_bits(size, bits);
    }
    Ok(Mask::from_fn(size, |i, j| {
        let si = ((2 * i + 1) * h) / (2 * size);
        let sj = ((2 * j + 1) * w) / (2 * size);
        bits[si.min(h - 1) * w + sj.min(w - 1)] == 1
    }))
}

pub fn write_png(mask: &Mask, path: &Path) -> Result<()> {
    let bytes = encode_png(mask)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_png(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_round_trip() {
        let m = Mask::from_bits(2, vec![1, 0, 0, 1]).unwrap();
        let bytes = encode_png(&m).unwrap();
        assert_eq!(decode_png(&bytes).unwrap(), m);
    }

    #[test]
    fn non_multiple_of_eight_width() {
        let m = Mask::from_fn(13, |i, j| (i * 7 + j * 3) % 5 < 2);
        assert_eq!(decode_png(&encode_png(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn gray_value_is_rejected() {
        let img = image::GrayImage::from_fn(4, 4, |x, _| image::Luma([if x == 2 { 128 } else { 255 }]));
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png).unwrap();
        let err = decode_png(bytes.get_ref()).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
        assert!(err.to_string().contains("128"));
    }

    #[test]
    fn eight_bit_binary_png_is_accepted() {
        let img = image::GrayImage::from_fn(3, 3, |x, y| image::Luma([if x == y { 255 } else { 0 }]));
        let mut bytes = std::io::Cursor::new(Vec::new());
        img.write_to(&mut bytes, image::ImageFormat::Png).unwrap();
        let m = decode_png(bytes.get_ref()).unwrap();
        assert_eq!(m.bits(), &[1, 0, 0, 0, 1, 0, 0, 0, 1]);
    }

    #[test]
    fn nearest_resize_stays_binary() {
        let m = Mask::from_fn(4, |i, _| i < 2);
        let big = decode_png_resized(&encode_png(&m).unwrap(), 8).unwrap();
        assert_eq!(big, Mask::from_fn(8, |i, _| i < 4));
        let small = decode_png_resized(&encode_png(&big).unwrap(), 4).unwrap();
        assert_eq!(small, m);
    }
}
