//! Feature extractors for Fréchet distances.
//!
//! * `toy-mnist`: a small digit classifier trained on the procedural digit
//!   corpus (both domains); features are the 64 globally pooled activations
//!   before its classification head. Weights ship with the crate.
//! * `random-conv-128`: a fixed-seed random convolutional stack for 128 px
//!   images with ReLU and He-scaled weights; 128 pooled channels.

use candle_core::{Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data_pipeline::synth::{render_house_number, render_plain};
use crate::error::{Error, Result};
use crate::img::{self, Image};
use crate::nets::{Conv2d, Init, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::rng::RngState;

const TOY_WEIGHTS: &[u8] = include_bytes!("../../assets/toy_mnist.safetensors");
const RANDOM_SEED: u64 = 0x5eed_f1d0;
const CHUNK: usize = 32;

pub const EXTRACTOR_IDS: [&str; 2] = ["toy-mnist", "random-conv-128"];

/// A frozen convolutional feature network.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    id: &'static str,
    resolution: usize,
    convs: Vec<Conv2d>,
    head: Option<(Tensor, Tensor)>,
    params: ParamStore,
}

fn digit_stack(init: &mut Init<'_>) -> Result<Vec<Conv2d>> {
    let specs = [(3, 16, 1), (16, 32, 2), (32, 64, 2), (64, 64, 2)];
    specs
        .iter()
        .enumerate()
        .map(|(k, &(ci, co, s))| {
            init.std = (2.0 / (ci * 9) as f64).sqrt();
            Conv2d::new(init, &format!("c{k}"), ci, co, 3, s, 1)
        })
        .collect()
}

impl FeatureExtractor {
    /// Looks up an extractor by id.
    pub fn by_id(id: &str, device: &Device) -> Result<Self> {
        match id {
            "toy-mnist" => Self::toy_mnist(device),
            "random-conv-128" => Self::random_conv_128(device),
            other => Err(Error::Param(format!(
                "unknown extractor id {other:?}; known: {}",
                EXTRACTOR_IDS.join(", ")
            ))),
        }
    }

    /// Untrained digit network with its classification head.
    fn digit_network(rng: &mut RngState, device: &Device) -> Result<Self> {
        let mut params = ParamStore::new();
        let convs = {
            let mut init = Init {
                store: &mut params,
                rng,
                device,
                std: 0.0,
            };
            digit_stack(&mut init)?
        };
        let w = params.normal("head.weight".into(), &[10, 64], (1.0f64 / 64.0).sqrt(), rng, device)?;
        let b = params.zeros("head.bias".into(), &[10], device)?;
        Ok(Self {
            id: "toy-mnist",
            resolution: 32,
            convs,
            head: Some((w, b)),
            params,
        })
    }

    fn toy_mnist(device: &Device) -> Result<Self> {
        let net = Self::digit_network(&mut RngState::new(0), device)?;
        let tensors = candle_core::safetensors::load_buffer(TOY_WEIGHTS, device)
            .map_err(|e| Error::Load(format!("bundled toy-mnist weights: {e}")))?;
        net.params.load_from(&tensors, "")?;
        Ok(net)
    }

    fn random_conv_128(device: &Device) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = RngState::new(RANDOM_SEED);
        let specs = [(3, 16), (16, 32), (32, 64), (64, 128)];
        let mut init = Init {
            store: &mut params,
            rng: &mut rng,
            device,
            std: 0.0,
        };
        let convs = specs
            .iter()
            .enumerate()
            .map(|(k, &(ci, co))| {
                init.std = (2.0 / (ci * 9) as f64).sqrt();
                Conv2d::new(&mut init, &format!("c{k}"), ci, co, 3, 2, 1)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: "random-conv-128",
            resolution: 128,
            convs,
            head: None,
            params,
        })
    }

    pub fn id(&self) -> &'static str {
        self.id
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        match self.id {
            "toy-mnist" => 64,
            _ => 128,
        }
    }

    /// `(N, 3, R, R)` → `(N, d)` pooled features.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let (w, b) = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Param(format!("{} has no classification head", self.id)))?;
        Ok(self.forward(x)?.matmul(&w.t()?)?.broadcast_add(b)?)
    }

    /// Row-major `n × d` feature matrix, one row per image. Images are
    /// resized to the extractor resolution first.
    pub fn extract(&self, images: &[Image], device: &Device) -> Result<Vec<Vec<f64>>> {
        if images.len() < 2 {
            return Err(Error::Input(format!(
                "feature extraction needs at least 2 images, got {}",
                images.len()
            )));
        }
        let r = self.resolution;
        let mut rows = Vec::with_capacity(images.len());
        for chunk in images.chunks(CHUNK) {
            let resized: Vec<Image> = chunk
                .iter()
                .map(|im| {
                    if im.height() == r && im.width() == r {
                        im.clone()
                    } else {
                        im.resize(r, r)
                    }
                })
                .collect();
            let feats = self.forward(&img::stack(&resized, device)?)?;
            for row in feats.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()? {
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

/// Features of `images` under the extractor named `extractor_id`.
pub fn extract_features(images: &[Image], extractor_id: &str) -> Result<Vec<Vec<f64>>> {
    let device = Device::Cpu;
    FeatureExtractor::by_id(extractor_id, &device)?.extract(images, &device)
}

/// One labelled procedural digit, drawn from either domain.
fn labelled_digit(rng: &mut RngState, size: usize) -> (Image, u32) {
    let digit = rng.random_range(0..10usize);
    let img = if rng.random_bool(0.5) {
        Image::from_dynamic(&image::DynamicImage::ImageLuma8(render_plain(digit, size, rng)))
    } else {
        Image::from_dynamic(&image::DynamicImage::ImageRgb8(render_house_number(digit, size, rng)))
    };
    (img, digit as u32)
}

/// Outcome of [`train_digit_features`].
pub struct DigitTraining {
    pub params: ParamStore,
    /// Accuracy on a held-out set of fresh digits.
    pub accuracy: f64,
}

/// Fits the `toy-mnist` network as a 10-way digit classifier on
/// procedurally drawn digits of both domains.
pub fn train_digit_features(steps: usize, batch: usize, seed: u64) -> Result<DigitTraining> {
    let device = Device::Cpu;
    let mut rng = RngState::new(seed);
    let net = FeatureExtractor::digit_network(&mut rng, &device)?;
    let mut data_rng = RngState::with_stream(seed, 1);
    let pool: Vec<(Image, u32)> = (0..4000).map(|_| labelled_digit(&mut data_rng, 32)).collect();
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut opt = Adam::new(AdamConfig {
        learning_rate: 2e-3,
        beta1: 0.9,
        ..AdamConfig::default()
    });
    let mut pos = order.len();
    for step in 0..steps {
        let mut imgs = Vec::with_capacity(batch);
        let mut labels = Vec::with_capacity(batch);
        for _ in 0..batch {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            let (im, l) = &pool[order[pos]];
            pos += 1;
            imgs.push(im.clone());
            labels.push(*l);
        }
        let x = img::stack(&imgs, &device)?;
        let y = Tensor::new(labels.as_slice(), &device)?;
        let loss = cross_entropy(&net.logits(&x)?, &y)?;
        if step % 100 == 0 {
            log::info!("digit features step {step}: loss {:.4}", loss.to_scalar::<f32>()?);
        }
        opt.step(&net.params, &loss.backward()?)?;
    }

    let mut test_rng = RngState::with_stream(seed, 2);
    let held: Vec<(Image, u32)> = (0..500).map(|_| labelled_digit(&mut test_rng, 32)).collect();
    let mut correct = 0;
    for chunk in held.chunks(CHUNK) {
        let imgs: Vec<Image> = chunk.iter().map(|(im, _)| im.clone()).collect();
        let pred = net.logits(&img::stack(&imgs, &device)?)?.argmax(D::Minus1)?.to_vec1::<u32>()?;
        correct += pred.iter().zip(chunk).filter(|(p, (_, l))| *p == l).count();
    }
    Ok(DigitTraining {
        params: net.params,
        accuracy: correct as f64 / held.len() as f64,
    })
}

fn cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(D::Minus1)?;
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    let log_probs = shifted.broadcast_sub(&lse)?;
    let picked = log_probs.gather(&labels.unsqueeze(1)?, 1)?;
    Ok(picked.mean_all()?.neg()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digits(n: usize, seed: u64) -> (Vec<Image>, Vec<u32>) {
        let mut rng = RngState::new(seed);
        (0..n).map(|_| labelled_digit(&mut rng, 32)).unzip()
    }

    #[test]
    fn unknown_id_is_rejected() {
        let err = FeatureExtractor::by_id("inception-v9", &Device::Cpu).unwrap_err();
        assert!(err.to_string().contains("toy-mnist"));
    }

    #[test]
    fn rows_match_images_and_repeat_exactly() {
        let (mut imgs, _) = digits(3, 1);
        imgs.push(imgs[0].clone());
        let rows = extract_features(&imgs, "toy-mnist").unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].len(), 64);
        assert_eq!(rows[0], rows[3]);
        assert_ne!(rows[0], rows[1]);
    }

    #[test]
    fn single_image_is_rejected() {
        let (imgs, _) = digits(1, 2);
        assert!(extract_features(&imgs, "toy-mnist").is_err());
    }

    #[test]
    fn random_extractor_resizes_input() {
        let (imgs, _) = digits(2, 3);
        let rows = extract_features(&imgs, "random-conv-128").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].len(), 128);
        assert!(rows.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn bundled_classifier_recognizes_fresh_digits() {
        let net = FeatureExtractor::by_id("toy-mnist", &Device::Cpu).unwrap();
        let (imgs, labels) = digits(200, 77);
        let pred = net
            .logits(&img::stack(&imgs, &Device::Cpu).unwrap())
            .unwrap()
            .argmax(D::Minus1)
            .unwrap()
            .to_vec1::<u32>()
            .unwrap();
        let acc = pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / 200.0;
        assert!(acc > 0.8, "accuracy {acc}");
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_ten() {
        let logits = Tensor::zeros((4, 10), candle_core::DType::F32, &Device::Cpu).unwrap();
        let labels = Tensor::new(&[0u32, 3, 5, 9], &Device::Cpu).unwrap();
        let v = cross_entropy(&logits, &labels).unwrap().to_scalar::<f32>().unwrap();
        assert!((v as f64 - 10f64.ln()).abs() < 1e-6);
    }
}
