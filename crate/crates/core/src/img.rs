//! Channel-major float images with pixel values in `[-1, 1]`.

use std::path::Path;

use candle_core::{Device, Tensor};
use image::{imageops, DynamicImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

/// A `channels × height × width` image stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Input(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Input(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                channels * height * width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    /// Converts an 8-bit decoded image. Grayscale sources are replicated to
    /// three channels; pixel `p` maps to `2p/255 - 1`.
    pub fn from_dynamic(img: &DynamicImage) -> Self {
        let gray = matches!(img.color().channel_count(), 1 | 2);
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(3, h, w, 0.0);
        if gray {
            let luma = img.to_luma8();
            for (x, y, p) in luma.enumerate_pixels() {
                let v = to_unit(p.0[0]);
                for c in 0..3 {
                    out.set(c, y as usize, x as usize, v);
                }
            }
        } else {
            let rgb = img.to_rgb8();
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    out.set(c, y as usize, x as usize, to_unit(p.0[c]));
                }
            }
        }
        out
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::Format(format!("cannot decode image: {e}")))?;
        Ok(Self::from_dynamic(&img))
    }

    /// Quantizes to 8-bit RGB. Single-channel images render as gray.
    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width as u32, self.height as u32);
        for i in 0..self.height {
            for j in 0..self.width {
                let px = std::array::from_fn(|c| {
                    let src = if self.channels == 1 { 0 } else { c.min(self.channels - 1) };
                    to_u8(self.get(src, i, j))
                });
                out.put_pixel(j as u32, i as u32, image::Rgb(px));
            }
        }
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_rgb8().write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Bilinear resize of every channel.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        let plane = self.height * self.width;
        for c in 0..self.channels {
            let buf: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
                self.width as u32,
                self.height as u32,
                self.data[c * plane..(c + 1) * plane].to_vec(),
            )
            .expect("plane length matches dimensions");
            let resized = imageops::resize(
                &buf,
                width as u32,
                height as u32,
                imageops::FilterType::Triangle,
            );
            data.extend(resized.into_raw());
        }
        Self {
            channels: self.channels,
            height,
            width,
            data,
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..self.channels {
            for i in 0..self.height {
                for j in 0..self.width {
                    out.set(c, i, j, self.get(c, i, self.width - 1 - j));
                }
            }
        }
        out
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::Input(format!(
                "crop {height}x{width}+{top}+{left} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut out = Image::filled(self.channels, height, width, 0.0);
        for c in 0..self.channels {
            for i in 0..height {
                for j in 0..width {
                    out.set(c, i, j, self.get(c, top + i, left + j));
                }
            }
        }
        Ok(out)
    }

    /// `(1, C, H, W)` f32 tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            device,
        )?)
    }

    /// Accepts `(C, H, W)` or `(1, C, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => {
                return Err(Error::Input(format!(
                    "expected a single image tensor, got shape {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t
            .to_dtype(candle_core::DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Image::new(c, h, w, data)
    }
}

/// Stacks equally-shaped images into an `(N, C, H, W)` tensor.
pub fn stack(images: &[Image], device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Input("cannot stack an empty image list".into()))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if (img.channels, img.height, img.width) != (c, h, w) {
            return Err(Error::Input("images in a batch must share a shape".into()));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), c, h, w), device)?)
}

/// Splits an `(N, C, H, W)` tensor back into images.
pub fn unstack(t: &Tensor) -> Result<Vec<Image>> {
    let n = t.dim(0)?;
    (0..n).map(|i| Image::from_tensor(&t.get(i)?)).collect()
}

/// Lays out rows of equally sized images edge to edge, without padding.
pub fn tile(rows: &[Vec<Image>]) -> Result<Image> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Input("cannot tile an empty grid".into()))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Input("grid rows must have equal length".into()));
    }
    let mut out = Image::filled(c, h * rows.len(), w * cols, -1.0);
    for (r, row) in rows.iter().enumerate() {
        for (k, cell) in row.iter().enumerate() {
            if (cell.channels, cell.height, cell.width) != (c, h, w) {
                return Err(Error::Input(format!(
                    "grid cell ({r}, {k}) is {}x{}x{}, expected {c}x{h}x{w}",
                    cell.channels, cell.height, cell.width
                )));
            }
            for ch in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        out.set(ch, r * h + i, k * w + j, cell.get(ch, i, j));
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn to_unit(p: u8) -> f32 {
    p as f32 / 127.5 - 1.0
}

#[inline]
fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_places_cells_row_major() {
        let a = Image::filled(3, 2, 2, 0.25);
        let b = Image::filled(3, 2, 2, -0.5);
        let grid = tile(&[vec![a.clone(), b.clone()], vec![b, a]]).unwrap();
        assert_eq!((grid.height(), grid.width()), (4, 4));
        assert_eq!(grid.get(0, 0, 0), 0.25);
        assert_eq!(grid.get(1, 0, 3), -0.5);
        assert_eq!(grid.get(2, 3, 0), -0.5);
        assert_eq!(grid.get(0, 3, 3), 0.25);
    }

    #[test]
    fn pixel_extremes_map_to_unit_interval() {
        assert_eq!(to_unit(255), 1.0);
        assert_eq!(to_unit(0), -1.0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(-1.0), 0);
    }

    #[test]
    fn grayscale_is_replicated() {
        let gray = image::GrayImage::from_fn(3, 2, |x, y| image::Luma([(x * 40 + y * 7) as u8]));
        let img = Image::from_dynamic(&DynamicImage::ImageLuma8(gray));
        assert_eq!(img.channels(), 3);
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(img.get(0, i, j), img.get(1, i, j));
                assert_eq!(img.get(1, i, j), img.get(2, i, j));
            }
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = Image::new(1, 2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(img.flip_horizontal().get(0, 0, 0), 3.0);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }

    #[test]
    fn tensor_round_trip() {
        let img = Image::new(3, 2, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        let t = img.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 2, 2]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn rejects_bad_buffer_length() {
        assert!(Image::new(3, 2, 2, vec![0.0; 5]).is_err());
    }
}
