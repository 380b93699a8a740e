use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskcycle_core::{Direction, MaskScheme};

#[derive(Parser, Debug)]
#[command(name = "maskcycle", version, about = "Mask-conditioned CycleGAN: training, evaluation, masks and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model. Flags override values from --config.
    Train(TrainArgs),
    /// Pairwise FID between real and translated image sets.
    FidMatrix(FidArgs),
    /// Render a sources × masks output grid.
    Grid(GridArgs),
    /// Sample masks to PNG files.
    Masks(MasksArgs),
    /// Translate one image.
    Translate(TranslateArgs),
    /// Serve a checkpoint over HTTP.
    Serve(ServeArgs),
    /// Write the procedural digit corpus (trainA/trainB/testA/testB).
    SynthData(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirArg {
    A2b,
    B2a,
}

impl From<DirArg> for Direction {
    fn from(d: DirArg) -> Self {
        match d {
            DirArg::A2b => Direction::AtoB,
            DirArg::B2a => Direction::BtoA,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeName {
    CenteredSquare,
    MultiRectangles,
    AttentionBinarize,
    Round,
    Full,
}

/// Mask scheme selection shared by `train` and `masks`.
#[derive(Args, Debug, Default)]
pub struct SchemeArgs {
    /// Masking scheme.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeName>,
    /// Relative side (centered-square) or diameter (round), in (0, 1].
    #[arg(long)]
    pub scale: Option<f64>,
    /// Multi-rectangles: upper bound of the random minimum rectangle count.
    #[arg(long)]
    pub min_max_num_rects: Option<u32>,
    /// Multi-rectangles: minimum summed relative area.
    #[arg(long)]
    pub min_sum_rel_area: Option<f64>,
    /// Multi-rectangles: smallest rectangle side in pixels.
    #[arg(long)]
    pub min_rect_size: Option<usize>,
    /// Multi-rectangles: largest rectangle side in pixels.
    #[arg(long)]
    pub max_rect_size: Option<usize>,
    /// Attention-binarize: threshold in [0, 1].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Attention-binarize: directory of grayscale attention PNGs.
    #[arg(long)]
    pub maps: Option<PathBuf>,
}

impl SchemeArgs {
    /// The selected scheme, or `None` when `--scheme` is absent.
    pub fn scheme(&self) -> Result<Option<MaskScheme>, String> {
        let Some(name) = self.scheme else {
            let stray = self.scale.is_some()
                || self.min_max_num_rects.is_some()
                || self.min_sum_rel_area.is_some()
                || self.min_rect_size.is_some()
                || self.max_rect_size.is_some()
                || self.threshold.is_some()
                || self.maps.is_some();
            if stray {
                return Err("scheme parameters given without --scheme".into());
            }
            return Ok(None);
        };
        let scale = || {
            self.scale
                .ok_or_else(|| format!("--scale is required for --scheme {}", name.to_possible_value().unwrap().get_name()))
        };
        Ok(Some(match name {
            SchemeName::CenteredSquare => MaskScheme::CenteredSquare { scale: scale()? },
            SchemeName::Round => MaskScheme::Round { scale: scale()? },
            SchemeName::MultiRectangles => {
                let MaskScheme::MultiRectangles {
                    min_max_num_rects,
                    min_sum_rel_area,
                    ..
                } = MaskScheme::multi_rectangles()
                else {
                    unreachable!()
                };
                MaskScheme::MultiRectangles {
                    min_max_num_rects: self.min_max_num_rects.unwrap_or(min_max_num_rects),
                    min_sum_rel_area: self.min_sum_rel_area.unwrap_or(min_sum_rel_area),
                    min_rect_size: self.min_rect_size,
                    max_rect_size: self.max_rect_size,
                }
            }
            SchemeName::AttentionBinarize => MaskScheme::AttentionBinarize {
                threshold: self
                    .threshold
                    .ok_or("--threshold is required for --scheme attention-binarize")?,
                maps: self.maps.clone(),
            },
            SchemeName::Full => MaskScheme::Full,
        }))
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON training config; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for logs, snapshots and checkpoints.
    #[arg(long, required_unless_present = "dump_config")]
    pub out: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Print the merged config as JSON and exit.
    #[arg(long)]
    pub dump_config: bool,
    /// Dataset root holding trainA/trainB/testA/testB.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Image resolution (default 128 without a config).
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Total iterations (default 200000 without a config).
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Use only the first N images of each domain.
    #[arg(long)]
    pub max_images: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Linear learning-rate decay to zero after this iteration.
    #[arg(long)]
    pub lr_decay_start: Option<u64>,
    /// Weight of the masked-region adversarial term.
    #[arg(long)]
    pub lambda_gan_m: Option<f64>,
    /// Weight of the masked region inside the cycle term.
    #[arg(long)]
    pub lambda_cyc_m: Option<f64>,
    #[arg(long)]
    pub lambda_cyc: Option<f64>,
    #[arg(long)]
    pub lambda_idt: Option<f64>,
    /// Checkpoint every N iterations (0 disables).
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Snapshot grid every N iterations (0 disables).
    #[arg(long)]
    pub snapshot_every: Option<u64>,
    /// Fake-image pool size (at most 50).
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub gen_filters: Option<usize>,
    #[arg(long)]
    pub encoder_filters: Option<usize>,
    #[arg(long)]
    pub res_blocks: Option<usize>,
    #[arg(long)]
    pub disc_filters: Option<usize>,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Args, Debug)]
pub struct FidArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset root holding trainX/testX of both domains.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "a2b")]
    pub dir: DirArg,
    /// Centered-square scales of the translated sets.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.8, 1.0])]
    pub scales: Vec<f64>,
    /// Feature extractor id (toy-mnist, random-conv-128).
    #[arg(long, default_value = "toy-mnist")]
    pub extractor: String,
    /// Leave out the train-half reference set.
    #[arg(long)]
    pub no_train_half: bool,
    /// Use only the first N images per set.
    #[arg(long)]
    pub max_images: Option<usize>,
    /// Output directory for fid_matrix.json and fid_matrix.png.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridShape {
    Square,
    Round,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "a2b")]
    pub dir: DirArg,
    /// Source images (one grid row each).
    #[arg(long = "image", num_args = 1.., required_unless_present = "image_dir")]
    pub images: Vec<PathBuf>,
    /// Take sources from this directory instead.
    #[arg(long, conflicts_with = "images")]
    pub image_dir: Option<PathBuf>,
    /// Number of sources taken from --image-dir.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Mask PNGs (one grid column each); overrides --shape/--scales.
    #[arg(long = "mask", num_args = 1..)]
    pub masks: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "square")]
    pub shape: GridShape,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.8, 1.0])]
    pub scales: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MasksArgs {
    #[command(flatten)]
    pub scheme: SchemeArgs,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; files are mask_000.png, mask_001.png, ...
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, value_enum)]
    pub dir: DirArg,
    #[arg(long)]
    pub image: PathBuf,
    /// Binary mask PNG; the full mask when absent.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = maskcycle_service::DEFAULT_PORT)]
    pub port: u16,
    /// Allowed CORS origin (repeatable); any origin when absent.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 500)]
    pub train_per_domain: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_domain: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
