//! Generators and discriminators.
//!
//! A generator is a pair: the *core translator* that only ever sees the
//! masked region `a ⊙ m`, and the *mask encoder* that fuses the core output
//! with the untouched contextual pixels and the mask itself:
//!
//! ```text
//! g   = core(a ⊙ m)
//! out = encoder([g ⊙ m, a ⊙ (1 - m), m])
//! ```

mod checkpoint;
mod layers;
mod params;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use layers::{instance_norm, leaky_relu, Conv2d, UpConv2d, INIT_STD};
pub use params::ParamStore;

pub(crate) use layers::Init;

/// Translation direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a2b")]
    AtoB,
    #[serde(rename = "b2a")]
    BtoA,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtoB => "a2b",
            Direction::BtoA => "b2a",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a2b" => Ok(Direction::AtoB),
            "b2a" => Ok(Direction::BtoA),
            other => Err(Error::Param(format!(
                "direction must be a2b or b2a, got {other:?}"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NetConfig {
    pub resolution: usize,
    /// Channel width of the first core-translator stage.
    pub gen_filters: usize,
    pub encoder_filters: usize,
    pub res_blocks: usize,
    pub disc_filters: usize,
}

impl NetConfig {
    /// Six residual blocks at 64 px and above, three below.
    pub fn for_resolution(resolution: usize) -> Self {
        Self {
            resolution,
            gen_filters: 64,
            encoder_filters: 32,
            res_blocks: if resolution >= 64 { 6 } else { 3 },
            disc_filters: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 32 || self.resolution % 8 != 0 {
            return Err(Error::Param(format!(
                "resolution must be a multiple of 8 and at least 32, got {}",
                self.resolution
            )));
        }
        if self.gen_filters == 0 || self.encoder_filters == 0 || self.disc_filters == 0 {
            return Err(Error::Param("filter counts must be positive".into()));
        }
        Ok(())
    }
}

fn check_image_tensor(x: &Tensor, resolution: usize, what: &str) -> Result<()> {
    match x.dims() {
        &[_, 3, h, w] if h == resolution && w == resolution => Ok(()),
        dims => Err(Error::Input(format!(
            "{what} expects (N, 3, {resolution}, {resolution}) input, got {dims:?}"
        ))),
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

impl ResBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.c1.forward(x)?)?.relu()?;
        let h = instance_norm(&self.c2.forward(&h)?)?;
        Ok((x + h)?)
    }
}

/// Encoder / residual / decoder translator.
#[derive(Clone, Debug)]
pub struct CoreTranslator {
    stem: Conv2d,
    down: Vec<Conv2d>,
    blocks: Vec<ResBlock>,
    up: Vec<UpConv2d>,
    head: Conv2d,
}

impl CoreTranslator {
    fn new(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        let f = cfg.gen_filters;
        let stem = Conv2d::new(init, &format!("{name}.stem"), 3, f, 7, 1, 3)?;
        let down = vec![
            Conv2d::new(init, &format!("{name}.down0"), f, 2 * f, 3, 2, 1)?,
            Conv2d::new(init, &format!("{name}.down1"), 2 * f, 4 * f, 3, 2, 1)?,
        ];
        let blocks = (0..cfg.res_blocks)
            .map(|k| {
                Ok(ResBlock {
                    c1: Conv2d::new(init, &format!("{name}.res{k}.c1"), 4 * f, 4 * f, 3, 1, 1)?,
                    c2: Conv2d::new(init, &format!("{name}.res{k}.c2"), 4 * f, 4 * f, 3, 1, 1)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let up = vec![
            UpConv2d::new(init, &format!("{name}.up0"), 4 * f, 2 * f)?,
            UpConv2d::new(init, &format!("{name}.up1"), 2 * f, f)?,
        ];
        let head = Conv2d::new(init, &format!("{name}.head"), f, 3, 7, 1, 3)?;
        Ok(Self {
            stem,
            down,
            blocks,
            up,
            head,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = instance_norm(&self.stem.forward(x)?)?.relu()?;
        for conv in &self.down {
            h = instance_norm(&conv.forward(&h)?)?.relu()?;
        }
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        for conv in &self.up {
            h = instance_norm(&conv.forward(&h)?)?.relu()?;
        }
        Ok(self.head.forward(&h)?.tanh()?)
    }
}

/// Three 3×3 convolutions over `[g ⊙ m, a ⊙ (1 - m), m]` (7 channels).
#[derive(Clone, Debug)]
pub struct MaskEncoder {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

impl MaskEncoder {
    fn new(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        let f = cfg.encoder_filters;
        Ok(Self {
            c1: Conv2d::new(init, &format!("{name}.c1"), 7, f, 3, 1, 1)?,
            c2: Conv2d::new(init, &format!("{name}.c2"), f, f, 3, 1, 1)?,
            c3: Conv2d::new(init, &format!("{name}.c3"), f, 3, 3, 1, 1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.c1.forward(x)?)?.relu()?;
        let h = instance_norm(&self.c2.forward(&h)?)?.relu()?;
        Ok(self.c3.forward(&h)?.tanh()?)
    }
}

/// Intermediate tensors of one generator pass.
#[derive(Clone, Debug)]
pub struct GeneratorTrace {
    /// `a ⊙ m`, the only input of the core translator.
    pub core_input: Tensor,
    pub core_output: Tensor,
    /// `a ⊙ (1 - m)`.
    pub context_input: Tensor,
    pub output: Tensor,
}

#[derive(Clone, Debug)]
pub struct Generator {
    core: CoreTranslator,
    encoder: MaskEncoder,
    resolution: usize,
}

impl Generator {
    fn new(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        Ok(Self {
            core: CoreTranslator::new(init, &format!("{name}.core"), cfg)?,
            encoder: MaskEncoder::new(init, &format!("{name}.encoder"), cfg)?,
            resolution: cfg.resolution,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn core(&self) -> &CoreTranslator {
        &self.core
    }

    /// `a`: `(N, 3, R, R)`; `m`: `(1, 1, R, R)` or `(N, 1, R, R)` of zeros
    /// and ones.
    pub fn forward_trace(&self, a: &Tensor, m: &Tensor) -> Result<GeneratorTrace> {
        check_image_tensor(a, self.resolution, "generator")?;
        let r = self.resolution;
        let n = a.dim(0)?;
        match m.dims() {
            &[mn, 1, h, w] if (mn == 1 || mn == n) && h == r && w == r => {}
            dims => {
                return Err(Error::Input(format!(
                    "mask tensor must be (1|N, 1, {r}, {r}), got {dims:?}"
                )))
            }
        }
        let m = m.to_dtype(a.dtype())?;
        let inv = m.affine(-1.0, 1.0)?;
        let core_input = a.broadcast_mul(&m)?;
        let core_output = self.core.forward(&core_input)?;
        let context_input = a.broadcast_mul(&inv)?;
        let m_n = m.broadcast_as((n, 1, r, r))?;
        let fused = Tensor::cat(
            &[&core_output.broadcast_mul(&m)?, &context_input, &m_n],
            1,
        )?;
        let output = self.encoder.forward(&fused)?;
        Ok(GeneratorTrace {
            core_input,
            core_output,
            context_input,
            output,
        })
    }

    pub fn forward(&self, a: &Tensor, m: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(a, m)?.output)
    }
}

/// Patch discriminator: three stride-2 4×4 convolutions, one stride-1, and a
/// 1-channel stride-1 projection. An `R × R` input yields an
/// `(R/8 - 2) × (R/8 - 2)` score grid.
#[derive(Clone, Debug)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    resolution: usize,
}

impl Discriminator {
    fn new(init: &mut Init<'_>, name: &str, cfg: &NetConfig) -> Result<Self> {
        let f = cfg.disc_filters;
        let convs = vec![
            Conv2d::new(init, &format!("{name}.c0"), 3, f, 4, 2, 1)?,
            Conv2d::new(init, &format!("{name}.c1"), f, 2 * f, 4, 2, 1)?,
            Conv2d::new(init, &format!("{name}.c2"), 2 * f, 4 * f, 4, 2, 1)?,
            Conv2d::new(init, &format!("{name}.c3"), 4 * f, 8 * f, 4, 1, 1)?,
            Conv2d::new(init, &format!("{name}.out"), 8 * f, 1, 4, 1, 1)?,
        ];
        Ok(Self {
            convs,
            resolution: cfg.resolution,
        })
    }

    pub fn score_grid_size(resolution: usize) -> usize {
        resolution / 8 - 2
    }

    /// `(N, 1, g, g)` patch scores.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        check_image_tensor(x, self.resolution, "discriminator")?;
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (k, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?;
            if k == last {
                break;
            }
            if k > 0 {
                h = instance_norm(&h)?;
            }
            h = leaky_relu(&h, 0.2)?;
        }
        Ok(h)
    }
}

/// Both translation directions and their parameters.
#[derive(Clone, Debug)]
pub struct GeneratorBundle {
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub params: ParamStore,
}

impl GeneratorBundle {
    pub fn new(cfg: &NetConfig, rng: &mut RngState, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng,
            device,
            std: INIT_STD,
        };
        let g_ab = Generator::new(&mut init, "g_ab", cfg)?;
        let g_ba = Generator::new(&mut init, "g_ba", cfg)?;
        Ok(Self { g_ab, g_ba, params })
    }

    pub fn get(&self, dir: Direction) -> &Generator {
        match dir {
            Direction::AtoB => &self.g_ab,
            Direction::BtoA => &self.g_ba,
        }
    }
}

/// Full-image and masked discriminators for each domain.
#[derive(Clone, Debug)]
pub struct DiscriminatorSet {
    pub d_af: Discriminator,
    pub d_am: Discriminator,
    pub d_bf: Discriminator,
    pub d_bm: Discriminator,
    pub params: ParamStore,
}

impl DiscriminatorSet {
    pub fn new(cfg: &NetConfig, rng: &mut RngState, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init {
            store: &mut params,
            rng,
            device,
            std: INIT_STD,
        };
        Ok(Self {
            d_af: Discriminator::new(&mut init, "d_af", cfg)?,
            d_am: Discriminator::new(&mut init, "d_am", cfg)?,
            d_bf: Discriminator::new(&mut init, "d_bf", cfg)?,
            d_bm: Discriminator::new(&mut init, "d_bm", cfg)?,
            params,
        })
    }
}
