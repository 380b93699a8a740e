//! Unpaired two-domain image loading.
//!
//! Layout on disk: `{root}/{trainA|trainB|testA|testB}/*.{png,jpg,jpeg}`.
//! Images are decoded, replicated to three channels when grayscale,
//! resized bilinearly and mapped to `[-1, 1]`.

pub mod synth;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::{self, Image};
use crate::rng::{streams, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn other(self) -> Self {
        match self {
            Domain::A => Domain::B,
            Domain::B => Domain::A,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AugmentConfig {
    /// Random horizontal flip with probability 0.5.
    pub flip: bool,
    /// Load at `round(1.12 × resolution)` and take a random crop.
    pub random_crop: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip: true,
            random_crop: false,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            flip: false,
            random_crop: false,
        }
    }
}

fn default_resolution() -> usize {
    128
}

fn default_batch_size() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DatasetSpec {
    pub root: PathBuf,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default)]
    pub split: Split,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Keep only the first `n` files (sorted by name) of each domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_images: Option<usize>,
}

impl DatasetSpec {
    pub fn new(root: impl Into<PathBuf>, resolution: usize) -> Self {
        Self {
            root: root.into(),
            resolution,
            split: Split::Train,
            batch_size: 1,
            augment: AugmentConfig::default(),
            max_images: None,
        }
    }

    pub fn domain_dir(&self, domain: Domain) -> PathBuf {
        domain_dir(&self.root, self.split, domain)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 {
            return Err(Error::Param("resolution must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Param("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Side length images are decoded to before augmentation.
    pub fn load_size(&self) -> usize {
        if self.augment.random_crop && self.split == Split::Train {
            (self.resolution as f64 * 1.12).round() as usize
        } else {
            self.resolution
        }
    }
}

pub fn domain_dir(root: &Path, split: Split, domain: Domain) -> PathBuf {
    let suffix = match domain {
        Domain::A => "A",
        Domain::B => "B",
    };
    root.join(format!("{}{suffix}", split.as_str()))
}

fn is_image_file(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Image files of a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Decodes every image in `dir` at `size × size`. Fails with a list of all
/// files that could not be decoded.
pub fn load_images(dir: &Path, size: usize, max_images: Option<usize>) -> Result<Vec<Image>> {
    let mut files = list_images(dir)?;
    if let Some(n) = max_images {
        files.truncate(n);
    }
    if files.is_empty() {
        return Err(Error::Dataset(format!(
            "no png/jpg images in {}",
            dir.display()
        )));
    }
    let mut images = Vec::with_capacity(files.len());
    let mut bad = Vec::new();
    for f in &files {
        match Image::open(f) {
            Ok(img) => images.push(img.resize(size, size)),
            Err(e) => bad.push(format!("{} ({e})", f.display())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Dataset(format!(
            "undecodable images in {}: {}",
            dir.display(),
            bad.join(", ")
        )));
    }
    Ok(images)
}

/// Random flip and optional random crop down to `resolution`.
pub fn train_augment(
    img: &Image,
    cfg: &AugmentConfig,
    resolution: usize,
    rng: &mut RngState,
) -> Result<Image> {
    let mut out = if cfg.random_crop && img.height() > resolution {
        let top = rng.random_range(0..=img.height() - resolution);
        let left = rng.random_range(0..=img.width() - resolution);
        img.crop(top, left, resolution, resolution)?
    } else if img.height() != resolution || img.width() != resolution {
        img.resize(resolution, resolution)
    } else {
        img.clone()
    };
    if cfg.flip && rng.random_bool(0.5) {
        out = out.flip_horizontal();
    }
    Ok(out)
}

/// One unpaired draw from each domain.
#[derive(Clone, Debug)]
pub struct Batch {
    pub a: Vec<Image>,
    pub b: Vec<Image>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn tensors(&self, device: &Device) -> Result<(Tensor, Tensor)> {
        Ok((img::stack(&self.a, device)?, img::stack(&self.b, device)?))
    }
}

/// Endless reshuffled stream over one domain.
#[derive(Clone, Debug)]
struct DomainStream {
    images: Arc<Vec<Image>>,
    order: Vec<usize>,
    pos: usize,
    rng: RngState,
}

impl DomainStream {
    fn new(images: Arc<Vec<Image>>, rng: RngState) -> Self {
        let mut s = Self {
            order: (0..images.len()).collect(),
            images,
            pos: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let k = self.order[self.pos];
        self.pos += 1;
        k
    }
}

/// Infinite iterator of unpaired batches. Each domain is permuted
/// independently every epoch.
#[derive(Clone, Debug)]
pub struct BatchIter {
    a: DomainStream,
    b: DomainStream,
    batch_size: usize,
    resolution: usize,
    augment: AugmentConfig,
    augment_rng: RngState,
    split: Split,
}

impl BatchIter {
    pub fn domain_len(&self, domain: Domain) -> usize {
        match domain {
            Domain::A => self.a.images.len(),
            Domain::B => self.b.images.len(),
        }
    }

    fn draw(&mut self, domain: Domain) -> Result<Image> {
        let stream = match domain {
            Domain::A => &mut self.a,
            Domain::B => &mut self.b,
        };
        let k = stream.next_index();
        let img = &stream.images[k];
        if self.split == Split::Train {
            train_augment(img, &self.augment, self.resolution, &mut self.augment_rng)
        } else {
            Ok(img.clone())
        }
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let mut a = Vec::with_capacity(self.batch_size);
        let mut b = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            a.push(self.draw(Domain::A)?);
            b.push(self.draw(Domain::B)?);
        }
        Ok(Batch { a, b })
    }
}

impl Iterator for BatchIter {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        // decoded images are already validated, augmentation cannot fail
        Some(self.next_batch().expect("augmenting a decoded image"))
    }
}

/// Decodes both domains of `spec.split` and returns an endless batch
/// stream seeded by `seed`.
pub fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<BatchIter> {
    spec.validate()?;
    let size = spec.load_size();
    let a = Arc::new(load_images(&spec.domain_dir(Domain::A), size, spec.max_images)?);
    let b = Arc::new(load_images(&spec.domain_dir(Domain::B), size, spec.max_images)?);
    Ok(BatchIter {
        a: DomainStream::new(a, RngState::with_stream(seed, streams::DATA)),
        b: DomainStream::new(b, RngState::with_stream(seed, streams::DATA + 100)),
        batch_size: spec.batch_size,
        resolution: spec.resolution,
        augment: spec.augment,
        augment_rng: RngState::with_stream(seed, streams::AUGMENT),
        split: spec.split,
    })
}
