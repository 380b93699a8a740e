//! Binary masks and the schemes that sample them.
//!
//! A mask value of 1 marks the *masked region* (pixels whose content is kept
//! and translated); 0 marks the *contextual region*. Masks are single-channel
//! and broadcast across image channels when applied.

mod io;

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::rng::RngState;

pub use io::{decode_png, decode_png_resized, encode_png, read_png, write_png};

/// Square binary pixel grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    size: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            bits: vec![0; size * size],
        }
    }

    pub fn full(size: usize) -> Self {
        Self {
            size,
            bits: vec![1; size * size],
        }
    }

    /// Row-major bits; every entry must be 0 or 1.
    pub fn from_bits(size: usize, bits: Vec<u8>) -> Result<Self> {
        if size == 0 {
            return Err(Error::Param("mask size must be positive".into()));
        }
        if bits.len() != size * size {
            return Err(Error::Input(format!(
                "mask of size {size} needs {} entries, got {}",
                size * size,
                bits.len()
            )));
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Input(format!(
                "mask entry {} at ({}, {}) is not binary",
                bits[pos],
                pos / size,
                pos % size
            )));
        }
        Ok(Self { size, bits })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(size * size);
        for i in 0..size {
            for j in 0..size {
                bits.push(f(i, j) as u8);
            }
        }
        Self { size, bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.size + j] == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Fraction of pixels in the masked region.
    pub fn fraction(&self) -> f64 {
        self.count_ones() as f64 / self.bits.len() as f64
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b == 1)
    }

    pub fn invert(&self) -> Self {
        Self {
            size: self.size,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    /// Elementwise product with every channel of `image`. Contextual pixels
    /// become exactly `0.0`.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        self.check_image(image)?;
        let mut out = image.clone();
        let plane = self.size * self.size;
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            if self.bits[k % plane] == 0 {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    pub(crate) fn check_image(&self, image: &Image) -> Result<()> {
        if image.height() != self.size || image.width() != self.size {
            return Err(Error::Input(format!(
                "mask is {0}x{0} but image is {1}x{2}",
                self.size,
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// `(1, 1, size, size)` f32 tensor of zeros and ones.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let data: Vec<f32> = self.bits.iter().map(|&b| b as f32).collect();
        Ok(Tensor::from_vec(data, (1, 1, self.size, self.size), device)?)
    }

    /// Renders the mask as a 3-channel image: masked region white (+1),
    /// contextual region black (-1).
    pub fn to_image(&self) -> Image {
        let mut img = Image::filled(3, self.size, self.size, -1.0);
        for i in 0..self.size {
            for j in 0..self.size {
                if self.get(i, j) {
                    for c in 0..3 {
                        img.set(c, i, j, 1.0);
                    }
                }
            }
        }
        img
    }
}

/// Selects a masking scheme and its parameters.
///
/// Serializes as `{"variant": "<kebab-name>", ...params}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", rename_all_fields = "camelCase")]
pub enum MaskScheme {
    CenteredSquare {
        scale: f64,
    },
    MultiRectangles {
        #[serde(default = "default_min_max_num_rects")]
        min_max_num_rects: u32,
        #[serde(default = "default_min_sum_rel_area")]
        min_sum_rel_area: f64,
        /// Defaults to `size / 10`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_rect_size: Option<usize>,
        /// Defaults to `size`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_rect_size: Option<usize>,
    },
    AttentionBinarize {
        threshold: f64,
        /// Directory of grayscale attention-map PNGs (white = 1.0).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        maps: Option<PathBuf>,
    },
    Round {
        scale: f64,
    },
    Full,
}

fn default_min_max_num_rects() -> u32 {
    5
}

fn default_min_sum_rel_area() -> f64 {
    0.15
}

impl MaskScheme {
    /// Multi-rectangles with the default parameters.
    pub fn multi_rectangles() -> Self {
        MaskScheme::MultiRectangles {
            min_max_num_rects: default_min_max_num_rects(),
            min_sum_rel_area: default_min_sum_rel_area(),
            min_rect_size: None,
            max_rect_size: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MaskScheme::CenteredSquare { .. } => "centered-square",
            MaskScheme::MultiRectangles { .. } => "multi-rectangles",
            MaskScheme::AttentionBinarize { .. } => "attention-binarize",
            MaskScheme::Round { .. } => "round",
            MaskScheme::Full => "full",
        }
    }

    /// Checks parameter ranges for masks of side `size`.
    pub fn validate(&self, size: usize) -> Result<()> {
        if size == 0 {
            return Err(Error::Param("mask size must be positive".into()));
        }
        match self {
            MaskScheme::CenteredSquare { scale } | MaskScheme::Round { scale } => {
                check_scale(*scale)
            }
            MaskScheme::MultiRectangles { .. } => MultiRectParams::resolve(self, size).map(|_| ()),
            MaskScheme::AttentionBinarize { threshold, .. } => {
                if !(0.0..=1.0).contains(threshold) {
                    return Err(Error::Param(format!(
                        "attention threshold must lie in [0, 1], got {threshold}"
                    )));
                }
                Ok(())
            }
            MaskScheme::Full => Ok(()),
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Param(format!("scale must lie in (0, 1], got {scale}")));
    }
    Ok(())
}

/// Masked region is a centered axis-aligned square of side
/// `round(scale * size)`, offset `floor((size - side) / 2)`.
pub fn sample_centered_square(size: usize, scale: f64) -> Result<Mask> {
    check_scale(scale)?;
    if size == 0 {
        return Err(Error::Param("mask size must be positive".into()));
    }
    let side = ((scale * size as f64).round() as usize).clamp(1, size);
    let lo = (size - side) / 2;
    let hi = lo + side;
    Ok(Mask::from_fn(size, |i, j| {
        (lo..hi).contains(&i) && (lo..hi).contains(&j)
    }))
}

/// Masked region is the centered disk of diameter `scale * size`; a pixel
/// belongs to it when its cell center lies inside the disk.
pub fn sample_round(size: usize, scale: f64) -> Result<Mask> {
    check_scale(scale)?;
    if size == 0 {
        return Err(Error::Param("mask size must be positive".into()));
    }
    let c = size as f64 / 2.0;
    let r = scale * size as f64 / 2.0;
    Ok(Mask::from_fn(size, |i, j| {
        let di = i as f64 + 0.5 - c;
        let dj = j as f64 + 0.5 - c;
        di * di + dj * dj <= r * r
    }))
}

/// Half-open rectangle `[i0, i1) × [j0, j1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.i1 - self.i0
    }

    pub fn width(&self) -> usize {
        self.j1 - self.j0
    }
}

/// Multi-rectangles parameters with size-dependent defaults filled in.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultiRectParams {
    pub size: usize,
    pub min_max_num_rects: u32,
    pub min_sum_rel_area: f64,
    pub min_rect_size: usize,
    pub max_rect_size: usize,
}

impl MultiRectParams {
    pub fn resolve(scheme: &MaskScheme, size: usize) -> Result<Self> {
        let MaskScheme::MultiRectangles {
            min_max_num_rects,
            min_sum_rel_area,
            min_rect_size,
            max_rect_size,
        } = scheme
        else {
            return Err(Error::Param(format!(
                "expected a multi-rectangles scheme, got {}",
                scheme.name()
            )));
        };
        let params = Self {
            size,
            min_max_num_rects: *min_max_num_rects,
            min_sum_rel_area: *min_sum_rel_area,
            min_rect_size: min_rect_size.unwrap_or((size / 10).max(1)),
            max_rect_size: max_rect_size.unwrap_or(size),
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let Self {
            size,
            min_max_num_rects,
            min_sum_rel_area,
            min_rect_size,
            max_rect_size,
        } = *self;
        if size == 0 {
            return Err(Error::Param("mask size must be positive".into()));
        }
        if min_max_num_rects < 1 {
            return Err(Error::Param("minMaxNumRects must be at least 1".into()));
        }
        if !(min_sum_rel_area > 0.0 && min_sum_rel_area <= 1.0) {
            return Err(Error::Param(format!(
                "minSumRelArea must lie in (0, 1], got {min_sum_rel_area}"
            )));
        }
        if min_rect_size < 1 || min_rect_size > size {
            return Err(Error::Param(format!(
                "minRectSize must lie in [1, {size}], got {min_rect_size}"
            )));
        }
        if max_rect_size < min_rect_size || max_rect_size > size {
            return Err(Error::Param(format!(
                "maxRectSize must lie in [{min_rect_size}, {size}], got {max_rect_size}"
            )));
        }
        Ok(())
    }
}

/// Result of one multi-rectangles draw, with the loop bookkeeping exposed.
#[derive(Clone, Debug)]
pub struct MultiRectSample {
    pub mask: Mask,
    pub rects: Vec<Rect>,
    /// Lower bound on the rectangle count drawn for this sample.
    pub min_num_rects: u32,
    /// Accumulated rectangle area over `size²`; overlaps count twice.
    pub sum_rel_area: f64,
}

/// Draws a union of random rectangles.
///
/// The loop keeps adding rectangles until at least `min_num_rects` (drawn
/// uniformly from `[1, minMaxNumRects]`) have been placed and the summed
/// relative area reaches `minSumRelArea`. The summed area counts overlapping
/// pixels once per rectangle, so it can exceed the covered fraction.
///
/// `minSumRelArea = 1` requests the whole image and returns the full mask.
pub fn sample_multi_rectangles(params: &MultiRectParams, rng: &mut RngState) -> Result<MultiRectSample> {
    params.validate()?;
    let size = params.size;
    if params.min_sum_rel_area >= 1.0 {
        // Summed area counts overlaps, so reaching 1.0 does not imply the
        // union covers every pixel; the full image is the defined outcome.
        let all = Rect {
            i0: 0,
            i1: size,
            j0: 0,
            j1: size,
        };
        return Ok(MultiRectSample {
            mask: Mask::full(size),
            rects: vec![all],
            min_num_rects: 1,
            sum_rel_area: 1.0,
        });
    }

    let min_num_rects = rng.random_range(1..=params.min_max_num_rects);
    let (lo_side, hi_side) = (params.min_rect_size, params.max_rect_size);
    let total = (size * size) as f64;

    let mut mask = Mask::zeros(size);
    let mut rects = Vec::new();
    let mut sum_rel_area = 0.0;
    while (rects.len() as u32) < min_num_rects || sum_rel_area < params.min_sum_rel_area {
        let i0 = rng.random_range(0..=size - lo_side);
        let j0 = rng.random_range(0..=size - lo_side);
        let i1 = rng.random_range(i0 + lo_side..=(i0 + hi_side).min(size));
        let j1 = rng.random_range(j0 + lo_side..=(j0 + hi_side).min(size));
        for i in i0..i1 {
            mask.bits[i * size + j0..i * size + j1].fill(1);
        }
        let rect = Rect { i0, i1, j0, j1 };
        sum_rel_area += (rect.height() * rect.width()) as f64 / total;
        rects.push(rect);
    }
    Ok(MultiRectSample {
        mask,
        rects,
        min_num_rects,
        sum_rel_area,
    })
}

/// Square grid of attention weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    size: usize,
    values: Vec<f32>,
}

impl AttentionMap {
    pub fn new(size: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::Input(format!(
                "attention map of size {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::Input(format!(
                "attention weights must lie in [0, 1], found {v}"
            )));
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Loads a grayscale PNG (0 → 0.0, 255 → 1.0), bilinearly resized to `size`.
    pub fn open(path: &Path, size: usize) -> Result<Self> {
        let img = image::open(path)?.to_luma32f();
        let img = if img.width() as usize != size || img.height() as usize != size {
            image::imageops::resize(
                &img,
                size as u32,
                size as u32,
                image::imageops::FilterType::Triangle,
            )
        } else {
            img
        };
        let values = img.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(size, values)
    }
}

/// `bits[i, j] = 1` iff `map[i, j] >= threshold`.
pub fn binarize_attention(map: &AttentionMap, threshold: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Param(format!(
            "attention threshold must lie in [0, 1], got {threshold}"
        )));
    }
    let bits = map
        .values
        .iter()
        .map(|&v| (v as f64 >= threshold) as u8)
        .collect();
    Ok(Mask {
        size: map.size,
        bits,
    })
}

/// Draws masks of a fixed size from a scheme.
#[derive(Clone, Debug)]
pub struct MaskSampler {
    scheme: MaskScheme,
    size: usize,
    attention: Vec<AttentionMap>,
}

impl MaskSampler {
    /// Validates the scheme. Attention schemes with a `maps` directory load
    /// it here; otherwise supply maps with [`MaskSampler::with_attention_maps`].
    pub fn new(scheme: MaskScheme, size: usize) -> Result<Self> {
        scheme.validate(size)?;
        let mut attention = Vec::new();
        if let MaskScheme::AttentionBinarize {
            maps: Some(dir), ..
        } = &scheme
        {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
                .collect();
            paths.sort();
            for p in &paths {
                attention.push(AttentionMap::open(p, size)?);
            }
            if attention.is_empty() {
                return Err(Error::Input(format!(
                    "no attention maps found in {}",
                    dir.display()
                )));
            }
        }
        Ok(Self {
            scheme,
            size,
            attention,
        })
    }

    pub fn with_attention_maps(mut self, maps: Vec<AttentionMap>) -> Result<Self> {
        if let Some(m) = maps.iter().find(|m| m.size != self.size) {
            return Err(Error::Input(format!(
                "attention map size {} does not match mask size {}",
                m.size, self.size
            )));
        }
        self.attention = maps;
        Ok(self)
    }

    pub fn scheme(&self) -> &MaskScheme {
        &self.scheme
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sample(&self, rng: &mut RngState) -> Result<Mask> {
        match &self.scheme {
            MaskScheme::CenteredSquare { scale } => sample_centered_square(self.size, *scale),
            MaskScheme::Round { scale } => sample_round(self.size, *scale),
            MaskScheme::Full => Ok(Mask::full(self.size)),
            MaskScheme::MultiRectangles { .. } => {
                let params = MultiRectParams::resolve(&self.scheme, self.size)?;
                Ok(sample_multi_rectangles(&params, rng)?.mask)
            }
            MaskScheme::AttentionBinarize { threshold, .. } => {
                if self.attention.is_empty() {
                    return Err(Error::Input(
                        "attention-binarize needs at least one attention map".into(),
                    ));
                }
                let k = rng.random_range(0..self.attention.len());
                binarize_attention(&self.attention[k], *threshold)
            }
        }
    }
}
