use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::float::Float;
use super::tensor::{grad, numel, Tensor};
use crate::error::{Error, Result};

struct Entry<T: Float> {
    tensor: Tensor<T>,
    grad: Option<Vec<T>>,
}

/// Named parameters, iterated in name order.
///
/// Each entry is a leaf tensor; updating values swaps in a new leaf of the
/// same shape, so tensors handed out earlier keep their old values.
pub struct ParamSet<T: Float = f32> {
    entries: BTreeMap<String, Entry<T>>,
    trainable: bool,
}

impl<T: Float> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Clone for ParamSet<T> {
    fn clone(&self) -> Self {
        let mut out = ParamSet::new();
        out.trainable = self.trainable;
        for (name, e) in &self.entries {
            out.insert(name, e.tensor.shape(), e.tensor.to_vec());
            out.entries.get_mut(name).expect("just inserted").grad = e.grad.clone();
        }
        out
    }
}

impl<T: Float> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
            trainable: true,
        }
    }

    fn make_leaf(&self, values: Vec<T>, shape: &[usize]) -> Tensor<T> {
        if self.trainable {
            Tensor::leaf(values, shape)
        } else {
            Tensor::constant(values, shape)
        }
    }

    /// Adds a parameter. Panics if the name is taken or the value count does
    /// not match the shape.
    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<T>) {
        assert_eq!(values.len(), numel(shape), "parameter {name}: value count vs shape {shape:?}");
        assert!(!self.entries.contains_key(name), "duplicate parameter name {name}");
        let tensor = self.make_leaf(values, shape);
        self.entries.insert(name.to_string(), Entry { tensor, grad: None });
    }

    pub fn get(&self, name: &str) -> Result<Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| e.tensor.clone())
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        self.entries
            .get(name)
            .map(|e| e.tensor.shape())
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn values(&self, name: &str) -> Result<&[T]> {
        self.entries
            .get(name)
            .map(|e| e.tensor.data())
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn set_values(&mut self, name: &str, values: Vec<T>) -> Result<()> {
        let shape = self.shape(name)?.to_vec();
        if values.len() != numel(&shape) {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name} has shape {shape:?} but {} values were given",
                values.len()
            )));
        }
        let tensor = self.make_leaf(values, &shape);
        self.entries.get_mut(name).expect("checked above").tensor = tensor;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Option<&[T]> {
        self.entries.get(name).and_then(|e| e.grad.as_deref())
    }

    pub fn clear_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad = None;
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    /// Switches every entry between gradient-tracking leaves and constants.
    pub fn set_trainable(&mut self, trainable: bool) {
        if self.trainable == trainable {
            return;
        }
        self.trainable = trainable;
        let names: Vec<String> = self.entries.keys().cloned().collect();
        for name in names {
            let e = self.entries.get(&name).expect("own key");
            let tensor = self.make_leaf(e.tensor.to_vec(), e.tensor.shape());
            self.entries.get_mut(&name).expect("own key").tensor = tensor;
        }
    }

    fn leaves(&self) -> Vec<Tensor<T>> {
        self.entries.values().map(|e| e.tensor.clone()).collect()
    }
}

/// Populates the gradient of every parameter with `d output / d param`.
/// Parameters the output does not depend on get zeros.
pub fn backward<T: Float>(output: &Tensor<T>, params: &mut ParamSet<T>) -> Result<()> {
    let leaves = params.leaves();
    let grads = grad(output, &leaves, false)?;
    for (e, g) in params.entries.values_mut().zip(grads) {
        e.grad = Some(g.to_vec());
    }
    Ok(())
}

/// Deterministic parameter initialisation. Every parameter draws from its
/// own stream derived from the seed and its name, so adding a layer does not
/// perturb the others.
#[derive(Clone, Copy, Debug)]
pub struct Initializer {
    seed: u64,
}

/// Seed for an independent random stream identified by `label`.
pub fn stream_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer { seed }
    }

    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_normal<T: Float>(&self, name: &str, shape: &[usize], fan_in: usize) -> Vec<T> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, name));
        (0..numel(shape)).map(|_| T::lit(dist.sample(&mut rng))).collect()
    }

    /// Convolution weight `[co, ci, k, k]` plus zero bias `[1, co, 1, 1]`.
    pub fn conv<T: Float>(&self, params: &mut ParamSet<T>, name: &str, ci: usize, co: usize, k: usize, bias: bool) {
        let shape = [co, ci, k, k];
        let w = self.he_normal(&format!("{name}.weight"), &shape, ci * k * k);
        params.insert(&format!("{name}.weight"), &shape, w);
        if bias {
            params.insert(&format!("{name}.bias"), &[1, co, 1, 1], vec![T::zero(); co]);
        }
    }
}
