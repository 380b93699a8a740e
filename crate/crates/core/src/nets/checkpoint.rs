//! Single-file checkpoint archive.
//!
//! The file is a safetensors container. Parameter blobs are stored under
//! `gen.*` / `disc.*`, optimizer moments under `opt_g.*` / `opt_d.*`, and a
//! JSON manifest sits in the header metadata under the key `manifest`.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::{DiscriminatorSet, GeneratorBundle, NetConfig};
use crate::error::{Error, Result};
use crate::mask_gen::MaskScheme;
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngState;

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST_KEY: &str = "manifest";

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Manifest {
    format_version: u32,
    resolution: usize,
    iteration: u64,
    scheme: MaskScheme,
    net: NetConfig,
    domains: [String; 2],
    opt_g: OptimizerMeta,
    opt_d: OptimizerMeta,
    #[serde(default)]
    config: Option<serde_json::Value>,
    #[serde(default)]
    trainer: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct OptimizerMeta {
    config: AdamConfig,
    step: u64,
}

/// Everything needed to resume training or serve a model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub generators: GeneratorBundle,
    pub discriminators: DiscriminatorSet,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub iteration: u64,
    /// Masking scheme used during training.
    pub scheme: MaskScheme,
    pub domains: [String; 2],
    /// Snapshot of the training configuration, if any.
    pub config: Option<serde_json::Value>,
    /// Opaque trainer bookkeeping (rng positions and the like).
    pub trainer: Option<serde_json::Value>,
}

impl Checkpoint {
    /// Freshly initialized models; generator and discriminator parameters
    /// are drawn from `rng` in that order.
    pub fn init(
        net: NetConfig,
        scheme: MaskScheme,
        adam: AdamConfig,
        rng: &mut RngState,
        device: &Device,
    ) -> Result<Self> {
        let generators = GeneratorBundle::new(&net, rng, device)?;
        let discriminators = DiscriminatorSet::new(&net, rng, device)?;
        Ok(Self {
            net,
            generators,
            discriminators,
            opt_g: Adam::new(adam),
            opt_d: Adam::new(adam),
            iteration: 0,
            scheme,
            domains: ["A".into(), "B".into()],
            config: None,
            trainer: None,
        })
    }

    pub fn resolution(&self) -> usize {
        self.net.resolution
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            resolution: self.net.resolution,
            iteration: self.iteration,
            scheme: self.scheme.clone(),
            net: self.net,
            domains: self.domains.clone(),
            opt_g: OptimizerMeta {
                config: self.opt_g.config(),
                step: self.opt_g.steps_taken(),
            },
            opt_d: OptimizerMeta {
                config: self.opt_d.config(),
                step: self.opt_d.steps_taken(),
            },
            config: self.config.clone(),
            trainer: self.trainer.clone(),
        };
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        for (k, v) in self.generators.params.iter() {
            tensors.push((format!("gen.{k}"), v.as_tensor().clone()));
        }
        for (k, v) in self.discriminators.params.iter() {
            tensors.push((format!("disc.{k}"), v.as_tensor().clone()));
        }
        self.opt_g.export("opt_g.", &mut tensors);
        self.opt_d.export("opt_d.", &mut tensors);
        let metadata = HashMap::from([(
            MANIFEST_KEY.to_string(),
            serde_json::to_string(&manifest)?,
        )]);
        safetensors::serialize(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(metadata))
            .map_err(|e| Error::Format(format!("cannot serialize checkpoint: {e}")))
    }

    /// Writes to a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let (_, meta) = safetensors::SafeTensors::read_metadata(bytes)
            .map_err(|e| Error::Load(format!("not a checkpoint archive: {e}")))?;
        let raw = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(MANIFEST_KEY))
            .ok_or_else(|| Error::Load("checkpoint has no manifest".into()))?;
        let manifest: Manifest = serde_json::from_str(raw)
            .map_err(|e| Error::Load(format!("bad checkpoint manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Load(format!(
                "checkpoint format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.net.resolution != manifest.resolution {
            return Err(Error::Load("manifest resolution disagrees with net config".into()));
        }
        let tensors = candle_core::safetensors::load_buffer(bytes, device)
            .map_err(|e| Error::Load(format!("cannot read checkpoint tensors: {e}")))?;

        let mut scratch = RngState::new(0);
        let mut ckpt = Self::init(
            manifest.net,
            manifest.scheme,
            manifest.opt_g.config,
            &mut scratch,
            device,
        )?;
        ckpt.generators.params.load_from(&tensors, "gen.")?;
        ckpt.discriminators.params.load_from(&tensors, "disc.")?;
        let expected = ckpt.generators.params.len() + ckpt.discriminators.params.len();
        let stored = tensors
            .keys()
            .filter(|k| k.starts_with("gen.") || k.starts_with("disc."))
            .count();
        if stored != expected {
            return Err(Error::Load(format!(
                "checkpoint holds {stored} parameters, model expects {expected}"
            )));
        }
        ckpt.opt_g = Adam::import(manifest.opt_g.config, manifest.opt_g.step, "opt_g.", &tensors)?;
        ckpt.opt_d = Adam::import(manifest.opt_d.config, manifest.opt_d.step, "opt_d.", &tensors)?;
        ckpt.iteration = manifest.iteration;
        ckpt.domains = manifest.domains;
        ckpt.config = manifest.config;
        ckpt.trainer = manifest.trainer;
        Ok(ckpt)
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, device)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask_gen::Mask;

    fn tiny() -> NetConfig {
        NetConfig {
            resolution: 32,
            gen_filters: 4,
            encoder_filters: 4,
            res_blocks: 1,
            disc_filters: 4,
        }
    }

    fn probe() -> Tensor {
        Tensor::arange(0f32, (3 * 32 * 32) as f32, &Device::Cpu)
            .unwrap()
            .affine(1.0 / 3072.0, -0.5)
            .unwrap()
            .reshape((1, 3, 32, 32))
            .unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_pass() {
        let mut ckpt = Checkpoint::init(
            tiny(),
            MaskScheme::multi_rectangles(),
            AdamConfig::default(),
            &mut RngState::new(3),
            &Device::Cpu,
        )
        .unwrap();
        ckpt.iteration = 17;
        let m = Mask::from_fn(32, |i, j| i > 4 && j < 20)
            .to_tensor(&Device::Cpu)
            .unwrap();
        let before = ckpt.generators.g_ab.forward(&probe(), &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.safetensors");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path, &Device::Cpu).unwrap();
        let after = back.generators.g_ab.forward(&probe(), &m).unwrap();
        let diff = (before - after)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f32>()
            .unwrap();
        assert!(diff <= 1e-6);
        assert_eq!(back.iteration, 17);
        assert_eq!(back.scheme, MaskScheme::multi_rectangles());
        assert_eq!(
            back.generators.params.num_scalars(),
            ckpt.generators.params.num_scalars()
        );
    }

    #[test]
    fn truncated_file_is_load_error() {
        let ckpt = Checkpoint::init(
            tiny(),
            MaskScheme::Full,
            AdamConfig::default(),
            &mut RngState::new(3),
            &Device::Cpu,
        )
        .unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        for cut in [0, 7, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut], &Device::Cpu).unwrap_err();
            assert!(matches!(err, Error::Load(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn version_mismatch_is_load_error() {
        let ckpt = Checkpoint::init(
            tiny(),
            MaskScheme::Full,
            AdamConfig::default(),
            &mut RngState::new(3),
            &Device::Cpu,
        )
        .unwrap();
        let mut bytes = ckpt.to_bytes().unwrap();
        let needle = format!("\\\"formatVersion\\\":{FORMAT_VERSION}").into_bytes();
        let pos = bytes
            .windows(needle.len())
            .position(|w| w == needle.as_slice())
            .expect("manifest carries the format version");
        // same-length edit keeps the header size valid
        let last = pos + needle.len() - 1;
        bytes[last] = b'9';
        let patched_bytes = bytes;
        let err = Checkpoint::from_bytes(&patched_bytes, &Device::Cpu).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
