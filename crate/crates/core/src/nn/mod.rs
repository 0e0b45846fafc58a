//! Decoder networks: a feed-forward noise predictor for continuous
//! diffusion and a factored-attention transformer for masked diffusion.

mod checkpoint;
mod continuous;
mod masked;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::BinaryVector;
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};

pub use checkpoint::{
    Checkpoint, CheckpointHeader, Network, ParamEntry, StageRecord, CHECKPOINT_VERSION,
};
pub use continuous::{ContinuousConfig, ContinuousNet, DEFAULT_TIME_DIM};
pub use masked::{export_attention, MaskedConfig, MaskedNet};

/// Standard deviation of Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Token values of a partially masked logical vector.
pub const TOKEN_ZERO: u8 = 0;
pub const TOKEN_ONE: u8 = 1;
pub const TOKEN_MASK: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NetConfig {
    Masked(MaskedConfig),
    Continuous(ContinuousConfig),
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            NetConfig::Masked(c) => c.validate(),
            NetConfig::Continuous(c) => c.validate(),
        }
    }

    pub fn n_l(&self) -> usize {
        match self {
            NetConfig::Masked(c) => c.n_l,
            NetConfig::Continuous(c) => c.n_l,
        }
    }

    pub fn n_s(&self) -> usize {
        match self {
            NetConfig::Masked(c) => c.n_s(),
            NetConfig::Continuous(c) => c.n_s,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            NetConfig::Masked(c) => c.steps,
            NetConfig::Continuous(c) => c.steps,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            NetConfig::Masked(c) => c.param_count(),
            NetConfig::Continuous(c) => c.param_count(),
        }
    }
}

/// Named trainable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Real = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Model(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Model(format!("missing parameter {name}")))
    }

    /// Parameters in lexicographic name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a, T>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v)))
                .collect(),
        }
    }

    /// Per-name gradients of a backward pass over `bound`.
    pub fn collect_grads(&self, bound: &Bound, grads: &mut Gradients<T>) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, t) in &self.tensors {
            let g = bound
                .vars
                .get(name)
                .and_then(|&v| grads.take(v))
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            out.insert(name.clone(), g);
        }
        out
    }
}

/// Tape handles of a bound [`ParamStore`].
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }
}

pub(crate) fn linear_init<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut impl Rng,
) {
    store.insert(
        format!("{name}.w"),
        Tensor::randn(&[d_in, d_out], INIT_STD, rng),
    );
    store.insert(format!("{name}.b"), Tensor::zeros(&[d_out]));
}

/// `(sin ω_0 t, …, sin ω_{d/2-1} t, cos ω_0 t, …)` with `ω_k = 1000^{-2k/d}`.
pub fn time_embed(t: f64, d_t: usize) -> Result<Vec<f64>> {
    if d_t == 0 || !d_t.is_multiple_of(2) {
        return Err(Error::config(format!(
            "time embedding dimension {d_t} must be even and positive"
        )));
    }
    let half = d_t / 2;
    let omega = |k: usize| 1000f64.powf(-2.0 * k as f64 / d_t as f64);
    let mut out: Vec<f64> = (0..half).map(|k| (omega(k) * t).sin()).collect();
    out.extend((0..half).map(|k| (omega(k) * t).cos()));
    Ok(out)
}

/// Probability that each logical bit is 1 given the partially masked tokens.
pub trait MaskedPredictor: Sync {
    fn n_l(&self) -> usize;

    /// `tokens` is `B × n_l` row-major; returns `B × n_l` probabilities.
    fn predict(&self, tokens: &[u8], syndromes: &[&BinaryVector]) -> Result<Vec<f64>>;
}

/// Noise prediction `ε_θ(l_t, s, t)`.
pub trait NoisePredictor: Sync {
    fn n_l(&self) -> usize;

    /// `l_t` is `B × n_l` row-major; returns `B × n_l`.
    fn predict_noise(
        &self,
        l_t: &[f64],
        syndromes: &[&BinaryVector],
        t: &[usize],
    ) -> Result<Vec<f64>>;
}

pub(crate) fn syndrome_tokens(syndromes: &[&BinaryVector], n_s: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(syndromes.len() * n_s);
    for s in syndromes {
        if s.len() != n_s {
            return Err(Error::Model(format!("syndrome length {} ≠ {n_s}", s.len())));
        }
        out.extend(s.iter().map(usize::from));
    }
    Ok(out)
}

pub(crate) fn check_finite<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite values in {what}")))
    }
}
