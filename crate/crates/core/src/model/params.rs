use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::{seeded, streams};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// N(0, 0.02) weights, zero biases, unit norm gains.
    #[default]
    Normal,
    /// Every parameter zero: the model predicts uniform distributions.
    Zeros,
}

/// All learnable weights, addressable by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<f32>>,
}

/// Decoupled weight decay skips biases and norm gains.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.ends_with(".gain"))
}

impl ModelParams {
    pub fn init(config: &ModelConfig, scheme: InitScheme, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed, streams::INIT);
        let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let data = match scheme {
                InitScheme::Zeros => vec![0.0; n],
                InitScheme::Normal if name.ends_with(".gain") => vec![1.0; n],
                InitScheme::Normal if name.ends_with(".bias") => vec![0.0; n],
                InitScheme::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        Self::init(config, InitScheme::Zeros, 0)
    }

    /// Builds a parameter set from named tensors, requiring exactly the
    /// names and shapes `config` implies.
    pub fn from_tensors(config: &ModelConfig, mut tensors: BTreeMap<String, Tensor<f32>>) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        let mut ordered = BTreeMap::new();
        for (name, shape) in expected {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::data(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::data(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            ordered.insert(name, t);
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::data(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self {
            config: config.clone(),
            tensors: ordered,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Replaces the non-structural parts of the config (dropout).
    pub fn set_dropout(&mut self, rate: f32) {
        self.config.dropout_rate = rate;
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<f32>> {
        self.tensors
    }

    /// Records every parameter as a gradient-tracking leaf on `tape`.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(t.cast::<T>())))
            .collect();
        Bound { vars }
    }

    /// Binds caller-supplied values in place of the stored weights, e.g.
    /// perturbed `f64` copies for finite-difference checks. Names and shapes
    /// must match exactly.
    pub fn bind_values<T: Scalar>(&self, tape: &mut Tape<T>, values: &BTreeMap<String, Tensor<T>>) -> Result<Bound> {
        if values.len() != self.tensors.len() {
            return Err(Error::data(format!(
                "{} values for {} parameters",
                values.len(),
                self.tensors.len()
            )));
        }
        let mut vars = BTreeMap::new();
        for (name, t) in &self.tensors {
            let v = values
                .get(name)
                .ok_or_else(|| Error::data(format!("no value for parameter `{name}`")))?;
            if v.shape() != t.shape() {
                return Err(Error::data(format!(
                    "parameter `{name}`: shape {:?}, expected {:?}",
                    v.shape(),
                    t.shape()
                )));
            }
            vars.insert(name.clone(), tape.param(v.clone()));
        }
        Ok(Bound { vars })
    }
}

/// Parameter name to tape handle.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients of every bound parameter, zero-filled where untouched.
    pub fn grads<T: Scalar>(&self, tape: &Tape<T>) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .map(<[T]>::to_vec)
                    .unwrap_or_else(|| vec![T::zero(); tape.value(v).len()]);
                (name.clone(), g)
            })
            .collect()
    }
}
