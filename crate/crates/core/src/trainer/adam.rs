use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::nn::{Float, ParamSet};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("lr", self.lr);
        m.set("beta1", self.beta1);
        m.set("beta2", self.beta2);
        m.set("eps", self.eps);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let d = AdamConfig::default();
        let cfg = AdamConfig {
            lr: m.parse_or("lr", d.lr)?,
            beta1: m.parse_or("beta1", d.beta1)?,
            beta2: m.parse_or("beta2", d.beta2)?,
            eps: m.parse_or("eps", d.eps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Float = f32> {
    pub t: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Float> Default for AdamState<T> {
    fn default() -> Self {
        AdamState {
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl<T: Float> AdamState<T> {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every parameter at learning rate `lr`.
/// Fails before touching anything if a gradient is missing.
pub fn adam_step<T: Float>(params: &mut ParamSet<T>, state: &mut AdamState<T>, hyper: &AdamConfig, lr: f64) -> Result<()> {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        if params.grad(name).is_none() {
            return Err(Error::MissingGrad(name.clone()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for name in &names {
        let g = params.grad(name).expect("checked above");
        let n = g.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
        let mut p = params.values(name)?.to_vec();
        for i in 0..n {
            let gi = g[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = T::lit(mi);
            v[i] = T::lit(vi);
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + hyper.eps);
            p[i] = T::lit(p[i].as_f64() - step);
        }
        params.set_values(name, p)?;
    }
    Ok(())
}
