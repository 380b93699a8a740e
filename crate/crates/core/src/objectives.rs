//! Loss terms over images, masks and discriminator scores.
//!
//! The ℓ1 norms are means over *all* elements (`N·C·H·W`), not over the
//! masked or contextual region alone. With that normalization
//! `λ·mean|Δ⊙m| + (1-λ)·mean|Δ⊙(1-m)|` at `λ = 0.5` is exactly
//! `0.5·mean|Δ|` for every binary mask.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::Discriminator;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LossWeights {
    /// Weight of the masked discriminator in the adversarial term.
    pub lambda_gan_m: f64,
    /// Weight of the masked region in the cycle term.
    pub lambda_cyc_m: f64,
    pub lambda_cyc: f64,
    pub lambda_idt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_gan_m: 0.7,
            lambda_cyc_m: 0.3,
            lambda_cyc: 10.0,
            lambda_idt: 5.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.lambda_gan_m) {
            return Err(Error::Param(format!(
                "lambdaGanM must lie in [0, 1], got {}",
                self.lambda_gan_m
            )));
        }
        if !unit.contains(&self.lambda_cyc_m) {
            return Err(Error::Param(format!(
                "lambdaCycM must lie in [0, 1], got {}",
                self.lambda_cyc_m
            )));
        }
        if !(self.lambda_cyc >= 0.0 && self.lambda_idt >= 0.0) {
            return Err(Error::Param("lambdaCyc and lambdaIdt must be non-negative".into()));
        }
        Ok(())
    }
}

/// Adversarial criterion. Least squares targets 1 for real and 0 for fake;
/// `Log` is the cross-entropy form on raw logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanCriterion {
    #[default]
    LeastSquares,
    Log,
}

fn softplus(x: &Tensor) -> Result<Tensor> {
    // relu(x) + log(1 + exp(-|x|))
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Mean criterion pushing `scores` toward the real target.
pub fn adversarial_real(scores: &Tensor, criterion: GanCriterion) -> Result<Tensor> {
    Ok(match criterion {
        GanCriterion::LeastSquares => (scores - 1.0)?.sqr()?.mean_all()?,
        GanCriterion::Log => softplus(&scores.neg()?)?.mean_all()?,
    })
}

/// Mean criterion pushing `scores` toward the fake target.
pub fn adversarial_fake(scores: &Tensor, criterion: GanCriterion) -> Result<Tensor> {
    Ok(match criterion {
        GanCriterion::LeastSquares => scores.sqr()?.mean_all()?,
        GanCriterion::Log => softplus(scores)?.mean_all()?,
    })
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

fn ensure_finite(t: &Tensor, what: &str) -> Result<()> {
    let v = scalar(t)?;
    if !v.is_finite() {
        return Err(Error::Numeric(format!("{what} is {v}")));
    }
    Ok(())
}

fn check_same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Input(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Convex combination of the masked and full-image generator criteria,
/// computed from precomputed scores.
pub fn gan_generator_from_scores(
    full_scores: &Tensor,
    masked_scores: &Tensor,
    lambda_gan_m: f64,
    criterion: GanCriterion,
) -> Result<Tensor> {
    let masked = adversarial_real(masked_scores, criterion)?;
    let full = adversarial_real(full_scores, criterion)?;
    let loss = ((masked * lambda_gan_m)? + (full * (1.0 - lambda_gan_m))?)?;
    ensure_finite(&loss, "generator adversarial loss")?;
    Ok(loss)
}

/// `λ·adv(D_masked(fake ⊙ m)) + (1-λ)·adv(D_full(fake))`, differentiable in
/// `fake`. `m` is a `(1|N, 1, H, W)` binary tensor.
pub fn gan_loss_generator(
    d_full: &Discriminator,
    d_masked: &Discriminator,
    fake: &Tensor,
    m: &Tensor,
    w: &LossWeights,
    criterion: GanCriterion,
) -> Result<Tensor> {
    let masked_fake = fake.broadcast_mul(&m.to_dtype(fake.dtype())?)?;
    let full_scores = d_full.forward(fake)?;
    let masked_scores = d_masked.forward(&masked_fake)?;
    gan_generator_from_scores(&full_scores, &masked_scores, w.lambda_gan_m, criterion)
}

/// `0.5·(adv_real(D(real)) + adv_fake(D(fake)))`. Gradients never flow into
/// whatever produced `fake`.
pub fn gan_loss_discriminator(
    d: &Discriminator,
    real: &Tensor,
    fake: &Tensor,
    criterion: GanCriterion,
) -> Result<Tensor> {
    check_same_shape(real, fake, "discriminator loss")?;
    let real_scores = d.forward(real)?;
    let fake_scores = d.forward(&fake.detach())?;
    discriminator_from_scores(&real_scores, &fake_scores, criterion)
}

pub fn discriminator_from_scores(
    real_scores: &Tensor,
    fake_scores: &Tensor,
    criterion: GanCriterion,
) -> Result<Tensor> {
    let loss = ((adversarial_real(real_scores, criterion)?
        + adversarial_fake(fake_scores, criterion)?)?
        * 0.5)?;
    ensure_finite(&loss, "discriminator loss")?;
    Ok(loss)
}

/// `λ_M·mean|(a - a')⊙m| + (1-λ_M)·mean|(a - a')⊙(1-m)|`.
pub fn cycle_loss(a: &Tensor, a_rec: &Tensor, m: &Tensor, w: &LossWeights) -> Result<Tensor> {
    check_same_shape(a, a_rec, "cycle loss")?;
    let m = m.to_dtype(a.dtype())?;
    let diff = (a - a_rec)?;
    let masked = diff.broadcast_mul(&m)?.abs()?.mean_all()?;
    let context = diff.broadcast_mul(&m.affine(-1.0, 1.0)?)?.abs()?.mean_all()?;
    Ok(((masked * w.lambda_cyc_m)? + (context * (1.0 - w.lambda_cyc_m))?)?)
}

/// `mean|a - a_idt|`. Takes no mask: the identity mapping is meant to be
/// mask-invariant.
pub fn identity_loss(a: &Tensor, a_idt: &Tensor) -> Result<Tensor> {
    check_same_shape(a, a_idt, "identity loss")?;
    Ok((a - a_idt)?.abs()?.mean_all()?)
}

/// Scalar components of the generator objective plus the two
/// discriminator losses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub gan_a: f64,
    pub gan_b: f64,
    pub cyc_a: f64,
    pub cyc_b: f64,
    pub idt_a: f64,
    pub idt_b: f64,
    pub d_a: f64,
    pub d_b: f64,
}

/// One training-log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LossReport {
    pub iter: u64,
    pub gan_a: f64,
    pub gan_b: f64,
    pub cyc_a: f64,
    pub cyc_b: f64,
    pub idt_a: f64,
    pub idt_b: f64,
    pub total: f64,
    pub d_a: f64,
    pub d_b: f64,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("loss report is always serializable")
    }
}

/// `(ganA + ganB) + λ_CYC·(cycA + cycB) + λ_IDT·(idtA + idtB)`.
pub fn total_objective(p: &LossParts, w: &LossWeights) -> f64 {
    (p.gan_a + p.gan_b) + w.lambda_cyc * (p.cyc_a + p.cyc_b) + w.lambda_idt * (p.idt_a + p.idt_b)
}

pub fn full_objective(iter: u64, parts: &LossParts, w: &LossWeights) -> Result<LossReport> {
    let named = [
        ("ganA", parts.gan_a),
        ("ganB", parts.gan_b),
        ("cycA", parts.cyc_a),
        ("cycB", parts.cyc_b),
        ("idtA", parts.idt_a),
        ("idtB", parts.idt_b),
        ("dA", parts.d_a),
        ("dB", parts.d_b),
    ];
    if let Some((name, v)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("loss term {name} is {v}")));
    }
    Ok(LossReport {
        iter,
        gan_a: parts.gan_a,
        gan_b: parts.gan_b,
        cyc_a: parts.cyc_a,
        cyc_b: parts.cyc_b,
        idt_a: parts.idt_a,
        idt_b: parts.idt_b,
        total: total_objective(parts, w),
        d_a: parts.d_a,
        d_b: parts.d_b,
        weights: *w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn t(v: &[f32], shape: &[usize]) -> Tensor {
        Tensor::from_slice(v, shape, &Device::Cpu).unwrap()
    }

    fn s(x: &Tensor) -> f64 {
        scalar(x).unwrap()
    }

    #[test]
    fn gan_generator_weight_endpoints() {
        let full = t(&[0.2, 0.9, -0.1, 0.4], &[1, 1, 2, 2]);
        let masked = t(&[0.7, 0.1, 0.3, 1.2], &[1, 1, 2, 2]);
        for crit in [GanCriterion::LeastSquares, GanCriterion::Log] {
            let only_full = s(&adversarial_real(&full, crit).unwrap());
            let only_masked = s(&adversarial_real(&masked, crit).unwrap());
            let at0 = s(&gan_generator_from_scores(&full, &masked, 0.0, crit).unwrap());
            let at1 = s(&gan_generator_from_scores(&full, &masked, 1.0, crit).unwrap());
            assert!((at0 - only_full).abs() < 1e-7);
            assert!((at1 - only_masked).abs() < 1e-7);
        }
    }

    #[test]
    fn gan_generator_equal_scores_ignore_weight() {
        let sc = t(&[0.3, -0.2, 0.8, 0.5], &[1, 1, 2, 2]);
        let base = s(&gan_generator_from_scores(&sc, &sc, 0.0, GanCriterion::LeastSquares).unwrap());
        for l in [0.1, 0.5, 0.7, 1.0] {
            let v = s(&gan_generator_from_scores(&sc, &sc, l, GanCriterion::LeastSquares).unwrap());
            assert!((v - base).abs() < 1e-7);
        }
    }

    #[test]
    fn gan_generator_nan_is_numeric_error() {
        let sc = t(&[f32::NAN, 0.0, 0.0, 0.0], &[1, 1, 2, 2]);
        let ok = t(&[0.0; 4], &[1, 1, 2, 2]);
        let err = gan_generator_from_scores(&sc, &ok, 0.5, GanCriterion::LeastSquares).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn discriminator_examples() {
        let ones = Tensor::ones((1, 1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let zeros = Tensor::zeros((1, 1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let perfect = discriminator_from_scores(&ones, &zeros, GanCriterion::LeastSquares).unwrap();
        assert_eq!(s(&perfect), 0.0);
        let blank = discriminator_from_scores(&zeros, &zeros, GanCriterion::LeastSquares).unwrap();
        assert_eq!(s(&blank), 0.5);
    }

    #[test]
    fn cycle_examples() {
        let a = t(&[0.5, -0.25, 0.75, 0.0, 1.0, -1.0, 0.25, 0.5], &[1, 2, 2, 2]);
        let rec = t(&[0.0, 0.25, 0.5, 0.5, 0.0, -0.5, 0.0, 0.5], &[1, 2, 2, 2]);
        let m = t(&[1.0, 0.0, 0.0, 1.0], &[1, 1, 2, 2]);
        let full = Tensor::ones((1, 1, 2, 2), DType::F32, &Device::Cpu).unwrap();
        let w = LossWeights::default();
        assert_eq!(s(&cycle_loss(&a, &a, &m, &w).unwrap()), 0.0);

        let mean_abs: f64 = [0.5, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.0].iter().sum::<f64>() / 8.0;
        let half = LossWeights {
            lambda_cyc_m: 0.5,
            ..w
        };
        assert!((s(&cycle_loss(&a, &rec, &m, &half).unwrap()) - 0.5 * mean_abs).abs() < 1e-7);
        assert!((s(&cycle_loss(&a, &rec, &full, &w).unwrap()) - 0.3 * mean_abs).abs() < 1e-7);
    }

    #[test]
    fn identity_examples() {
        let a = t(&[0.1, -0.4, 0.3, 0.9], &[1, 1, 2, 2]);
        assert_eq!(s(&identity_loss(&a, &a).unwrap()), 0.0);
        let shifted = (&a + 0.25).unwrap();
        assert!((s(&identity_loss(&a, &shifted).unwrap()) - 0.25).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_is_input_error() {
        let a = t(&[0.0; 4], &[1, 1, 2, 2]);
        let b = t(&[0.0; 8], &[1, 2, 2, 2]);
        let m = t(&[1.0; 4], &[1, 1, 2, 2]);
        assert!(matches!(identity_loss(&a, &b), Err(Error::Input(_))));
        assert!(matches!(
            cycle_loss(&a, &b, &m, &LossWeights::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn full_objective_examples() {
        let w = LossWeights::default();
        let zero = full_objective(1, &LossParts::default(), &w).unwrap();
        assert_eq!(zero.total, 0.0);
        let parts = LossParts {
            cyc_a: 1.0,
            cyc_b: 1.0,
            ..Default::default()
        };
        assert_eq!(full_objective(1, &parts, &w).unwrap().total, 20.0);
        assert_eq!(zero.weights, w);
        let bad = LossParts {
            idt_b: f64::INFINITY,
            ..Default::default()
        };
        assert!(matches!(full_objective(1, &bad, &w), Err(Error::Numeric(_))));
    }

    #[test]
    fn report_json_keys() {
        let r = full_objective(3, &LossParts::default(), &LossWeights::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json_line()).unwrap();
        for key in ["iter", "ganA", "ganB", "cycA", "cycB", "idtA", "idtB", "total", "dA", "dB"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            lambda_gan_m: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
