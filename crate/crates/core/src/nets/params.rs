use std::collections::{BTreeMap, HashMap};

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::RngState;

/// Named trainable tensors in a stable (sorted) order.
///
/// Layers hold clones of the variable tensors; [`Var::set`] updates the
/// shared storage so optimizer steps are visible to every layer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, var: Var) -> Result<Tensor> {
        let t = var.as_tensor().clone();
        if self.vars.insert(name.clone(), var).is_some() {
            return Err(Error::Param(format!("duplicate parameter name {name}")));
        }
        Ok(t)
    }

    /// Registers a tensor drawn from `N(0, std²)`.
    pub fn normal(
        &mut self,
        name: String,
        shape: &[usize],
        std: f64,
        rng: &mut RngState,
        device: &Device,
    ) -> Result<Tensor> {
        let dist = Normal::new(0.0f32, std as f32)
            .map_err(|e| Error::Param(format!("bad init std {std}: {e}")))?;
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, device)?)?;
        self.insert(name, var)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize], device: &Device) -> Result<Tensor> {
        let var = Var::zeros(shape, DType::F32, device)?;
        self.insert(name, var)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Deep copies of the current values.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    /// Overwrites every parameter from `tensors[prefix + name]`. Missing
    /// entries or shape mismatches are load errors.
    pub fn load_from(&self, tensors: &HashMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            let key = format!("{prefix}{name}");
            let src = tensors
                .get(&key)
                .ok_or_else(|| Error::Load(format!("missing parameter {key}")))?;
            if src.dims() != var.dims() {
                return Err(Error::Load(format!(
                    "parameter {key} has shape {:?}, expected {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.to_dtype(DType::F32)?.to_device(var.device())?)?;
        }
        Ok(())
    }
}
