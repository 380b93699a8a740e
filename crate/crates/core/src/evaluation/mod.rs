//! FID matrices across mask scales and qualitative output grids.

pub mod features;
pub mod frechet;

use std::path::{Path, PathBuf};

use candle_core::Device;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_pipeline::{domain_dir, list_images, load_images, DatasetSpec, Domain, Split};
use crate::error::{Error, Result};
use crate::img::{self, Image};
use crate::mask_gen::{sample_centered_square, sample_round, Mask};
use crate::nets::{Checkpoint, Direction, Generator};

pub use features::{extract_features, FeatureExtractor, EXTRACTOR_IDS};
pub use frechet::{frechet_distance, FeatureStats};

/// Environment variable naming the cache root; stats live in
/// `$MASKCYCLE_CACHE/fid-cache/`.
pub const CACHE_ENV: &str = "MASKCYCLE_CACHE";
const GEN_BATCH: usize = 16;

/// Round-mask scales used by the generalization probe.
pub const ROUND_PROBE_SCALES: [f64; 3] = [0.5, 0.8, 1.0];

pub fn cache_root_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

/// `gen@0.5`, `gen@1.0`.
pub fn scale_label(scale: f64) -> String {
    if scale.fract() == 0.0 {
        format!("gen@{scale:.1}")
    } else {
        format!("gen@{scale}")
    }
}

/// `FID(lhs, reference) < FID(rhs, reference)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub reference: String,
    pub lhs: String,
    pub rhs: String,
    pub lhs_value: f64,
    pub rhs_value: f64,
    pub holds: bool,
}

/// Labelled square matrix of pairwise Fréchet distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FidMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Number of images behind each label.
    pub counts: Vec<usize>,
    pub extractor_id: String,
    pub direction: Direction,
    pub comparisons: Vec<Comparison>,
}

impl FidMatrix {
    /// Computes every ordered pair independently, diagonal included.
    pub fn from_stats(
        labels: Vec<String>,
        stats: &[FeatureStats],
        direction: Direction,
    ) -> Result<Self> {
        if labels.len() != stats.len() || stats.is_empty() {
            return Err(Error::Input("one stats entry per label is required".into()));
        }
        let mut values = vec![vec![0.0; stats.len()]; stats.len()];
        for (i, p) in stats.iter().enumerate() {
            for (j, q) in stats.iter().enumerate() {
                values[i][j] = frechet_distance(p, q)?;
            }
        }
        let mut m = Self {
            labels,
            values,
            counts: stats.iter().map(|s| s.n).collect(),
            extractor_id: stats[0].extractor_id.clone(),
            direction,
            comparisons: Vec::new(),
        };
        m.comparisons = m.default_comparisons();
        Ok(m)
    }

    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.values[self.index(a)?][self.index(b)?])
    }

    pub fn compare(&self, reference: &str, lhs: &str, rhs: &str) -> Option<Comparison> {
        let lhs_value = self.get(lhs, reference)?;
        let rhs_value = self.get(rhs, reference)?;
        Some(Comparison {
            reference: reference.into(),
            lhs: lhs.into(),
            rhs: rhs.into(),
            lhs_value,
            rhs_value,
            holds: lhs_value < rhs_value,
        })
    }

    /// Every pair of generated sets against `test`, and `train-half`
    /// against each generated set relative to `train`.
    fn default_comparisons(&self) -> Vec<Comparison> {
        let gens: Vec<&String> = self.labels.iter().filter(|l| l.starts_with("gen@")).collect();
        let mut out = Vec::new();
        for (i, a) in gens.iter().enumerate() {
            for b in &gens[i + 1..] {
                out.extend(self.compare("test", a, b));
            }
        }
        for g in &gens {
            out.extend(self.compare("train", "train-half", g));
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.labels.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.values[i][j] - self.values[j][i]).abs());
            }
        }
        worst
    }

    pub fn max_diagonal(&self) -> f64 {
        (0..self.labels.len())
            .map(|i| self.values[i][i].abs())
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("matrix is always serializable")
    }

    /// One `cell × cell` square per entry, dark for small distances and
    /// bright for large ones.
    pub fn heatmap(&self, cell: usize) -> Image {
        let n = self.labels.len();
        let top = self
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut out = Image::filled(3, n * cell, n * cell, -1.0);
        for i in 0..n {
            for j in 0..n {
                let rgb = colormap(self.values[i][j] / top);
                for (c, v) in rgb.iter().enumerate() {
                    for y in 0..cell {
                        for x in 0..cell {
                            out.set(c, i * cell + y, j * cell + x, *v);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Three-stop purple → teal → yellow ramp, in `[-1, 1]` pixel units.
fn colormap(t: f64) -> [f32; 3] {
    const STOPS: [[f64; 3]; 3] = [[68.0, 1.0, 84.0], [33.0, 145.0, 140.0], [253.0, 231.0, 37.0]];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let (lo, hi, f) = if t <= 1.0 { (0, 1, t) } else { (1, 2, t - 1.0) };
    let mut out = [0.0f32; 3];
    for c in 0..3 {
        let v = STOPS[lo][c] * (1.0 - f) + STOPS[hi][c] * f;
        out[c] = (v / 127.5 - 1.0) as f32;
    }
    out
}

/// Settings for [`fid_matrix`].
#[derive(Clone, Debug)]
pub struct FidOptions {
    pub extractor_id: String,
    /// Adds a `train-half` set: every other training image of the target
    /// domain.
    pub include_train_half: bool,
    /// Root of the feature cache; real-image stats are stored under
    /// `fid-cache/` here.
    pub cache_root: Option<PathBuf>,
}

impl Default for FidOptions {
    fn default() -> Self {
        Self {
            extractor_id: "toy-mnist".into(),
            include_train_half: true,
            cache_root: None,
        }
    }
}

fn domains(direction: Direction) -> (Domain, Domain) {
    match direction {
        Direction::AtoB => (Domain::A, Domain::B),
        Direction::BtoA => (Domain::B, Domain::A),
    }
}

fn existing_split(root: &Path, split: Split, domain: Domain) -> Result<PathBuf> {
    let dir = domain_dir(root, split, domain);
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing split directory {}", dir.display())));
    }
    Ok(dir)
}

fn cache_key(dir: &Path, spec: &DatasetSpec, variant: &str, extractor: &str, size: usize) -> Result<String> {
    let canonical = dir.canonicalize().map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for f in list_images(dir)? {
        let len = std::fs::metadata(&f).map_err(|e| Error::io(&f, e))?.len();
        files.push((f.file_name().map(|n| n.to_string_lossy().into_owned()), len));
    }
    let key = serde_json::json!({
        "dir": canonical,
        "variant": variant,
        "extractorId": extractor,
        "resolution": size,
        "maxImages": spec.max_images,
        "files": files,
    });
    Ok(hex::encode(Sha256::digest(key.to_string().as_bytes())))
}

/// Stats of a real image set, read from or written to the cache.
fn real_stats(
    dir: &Path,
    spec: &DatasetSpec,
    variant: &str,
    size: usize,
    extractor: &FeatureExtractor,
    opts: &FidOptions,
    select: impl Fn(Vec<Image>) -> Vec<Image>,
) -> Result<FeatureStats> {
    let cache_file = match &opts.cache_root {
        Some(root) => {
            let key = cache_key(dir, spec, variant, extractor.id(), size)?;
            Some(root.join("fid-cache").join(format!("{key}.json")))
        }
        None => None,
    };
    if let Some(path) = &cache_file {
        if let Ok(text) = std::fs::read_to_string(path) {
            if let Ok(stats) = serde_json::from_str::<FeatureStats>(&text) {
                log::debug!("fid cache hit {}", path.display());
                return Ok(stats);
            }
        }
    }
    let images = select(load_images(dir, size, spec.max_images)?);
    let stats = FeatureStats::from_features(&extractor.extract(&images, &Device::Cpu)?, extractor.id())?;
    if let Some(path) = &cache_file {
        let parent = path.parent().expect("cache file has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        std::fs::write(path, serde_json::to_string(&stats)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(stats)
}

/// Translates `images` under one shared mask, in batches.
pub fn translate_all(generator: &Generator, images: &[Image], mask: &Mask) -> Result<Vec<Image>> {
    let device = Device::Cpu;
    let m = mask.to_tensor(&device)?;
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(GEN_BATCH) {
        let y = generator.forward(&img::stack(chunk, &device)?, &m)?;
        out.extend(img::unstack(&y)?);
    }
    Ok(out)
}

/// Real `train` and `test` sets of the target domain, an optional
/// `train-half`, and one translated test set per centered-square scale.
pub fn fid_matrix(
    ckpt: &Checkpoint,
    dataset: &DatasetSpec,
    scales: &[f64],
    direction: Direction,
    opts: &FidOptions,
) -> Result<FidMatrix> {
    let extractor = FeatureExtractor::by_id(&opts.extractor_id, &Device::Cpu)?;
    let size = ckpt.resolution();
    for &s in scales {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Param(format!("mask scale must lie in (0, 1], got {s}")));
        }
    }
    let (source, target) = domains(direction);
    let train_dir = existing_split(&dataset.root, Split::Train, target)?;
    let test_dir = existing_split(&dataset.root, Split::Test, target)?;
    let source_dir = existing_split(&dataset.root, Split::Test, source)?;

    let mut labels = vec!["train".to_string(), "test".to_string()];
    let mut stats = vec![
        real_stats(&train_dir, dataset, "all", size, &extractor, opts, |v| v)?,
        real_stats(&test_dir, dataset, "all", size, &extractor, opts, |v| v)?,
    ];
    if opts.include_train_half {
        labels.push("train-half".into());
        stats.push(real_stats(&train_dir, dataset, "half", size, &extractor, opts, |v| {
            v.into_iter().step_by(2).collect()
        })?);
    }
    let sources = load_images(&source_dir, size, dataset.max_images)?;
    let generator = ckpt.generators.get(direction);
    for &s in scales {
        let mask = sample_centered_square(size, s)?;
        let generated = translate_all(generator, &sources, &mask)?;
        labels.push(scale_label(s));
        stats.push(FeatureStats::from_features(
            &extractor.extract(&generated, &Device::Cpu)?,
            extractor.id(),
        )?);
    }
    FidMatrix::from_stats(labels, &stats, direction)
}

/// A rendered output grid and its generated cells.
#[derive(Clone, Debug)]
pub struct OutputGrid {
    pub image: Image,
    /// `cells[r][c]` translates source `r` under mask `c`.
    pub cells: Vec<Vec<Image>>,
}

/// `(j+1) × (k+1)` grid: masks along the top row, sources down the first
/// column, translations in the body. The corner cell is mid gray.
pub fn render_output_grid(
    ckpt: &Checkpoint,
    direction: Direction,
    sources: &[Image],
    masks: &[Mask],
) -> Result<OutputGrid> {
    let size = ckpt.resolution();
    if sources.is_empty() || masks.is_empty() {
        return Err(Error::Input("a grid needs at least one source and one mask".into()));
    }
    for (k, s) in sources.iter().enumerate() {
        if s.height() != size || s.width() != size || s.channels() != 3 {
            return Err(Error::Input(format!(
                "source {k} is {}x{}x{}, model expects 3x{size}x{size}",
                s.channels(),
                s.height(),
                s.width()
            )));
        }
    }
    if let Some((k, m)) = masks.iter().enumerate().find(|(_, m)| m.size() != size) {
        return Err(Error::Input(format!(
            "mask {k} is {0}x{0}, model expects {size}x{size}",
            m.size()
        )));
    }
    let generator = ckpt.generators.get(direction);
    let by_mask: Vec<Vec<Image>> = masks
        .iter()
        .map(|m| translate_all(generator, sources, m))
        .collect::<Result<_>>()?;
    let cells: Vec<Vec<Image>> = (0..sources.len())
        .map(|r| by_mask.iter().map(|col| col[r].clone()).collect())
        .collect();

    let mut rows = Vec::with_capacity(sources.len() + 1);
    let mut header = vec![Image::filled(3, size, size, 0.0)];
    header.extend(masks.iter().map(Mask::to_image));
    rows.push(header);
    for (r, src) in sources.iter().enumerate() {
        let mut row = vec![src.clone()];
        row.extend(cells[r].iter().cloned());
        rows.push(row);
    }
    Ok(OutputGrid {
        image: img::tile(&rows)?,
        cells,
    })
}

/// Round masks at the probe scales.
pub fn round_probe_masks(size: usize) -> Result<Vec<Mask>> {
    ROUND_PROBE_SCALES
        .iter()
        .map(|&s| sample_round(size, s))
        .collect()
}
