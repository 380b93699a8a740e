use candle_core::{Device, Tensor};

use super::params::ParamStore;
use crate::error::Result;
use crate::rng::RngState;

/// Convolution weights are drawn from `N(0, 0.02²)`; biases start at zero.
pub const INIT_STD: f64 = 0.02;

pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut RngState,
    pub device: &'a Device,
    pub std: f64,
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        init: &mut Init<'_>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = init.store.normal(
            format!("{name}.weight"),
            &[c_out, c_in, kernel, kernel],
            init.std,
            init.rng,
            init.device,
        )?;
        let bias = init.store.zeros(format!("{name}.bias"), &[c_out], init.device)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Transposed convolution doubling spatial size (kernel 3, stride 2,
/// padding 1, output padding 1).
#[derive(Clone, Debug)]
pub struct UpConv2d {
    weight: Tensor,
    bias: Tensor,
}

impl UpConv2d {
    pub(crate) fn new(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize) -> Result<Self> {
        let weight = init.store.normal(
            format!("{name}.weight"),
            &[c_in, c_out, 3, 3],
            init.std,
            init.rng,
            init.device,
        )?;
        let bias = init.store.zeros(format!("{name}.bias"), &[c_out], init.device)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, 1, 1, 2, 1)?;
        let c = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Per-sample, per-channel normalization over spatial positions, without
/// learned affine parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    const EPS: f64 = 1e-5;
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    let mean = flat.mean_keepdim(2)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(2)?;
    let out = centered.broadcast_div(&(var + EPS)?.sqrt()?)?;
    Ok(out.reshape((n, c, h, w))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - x.neg()?.relu()?.affine(slope, 0.0)?)?)
}
