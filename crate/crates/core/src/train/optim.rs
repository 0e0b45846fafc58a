//! AdamW and learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("AdamW decay rates must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("AdamW needs eps > 0 and weight decay ≥ 0"));
        }
        Ok(())
    }
}

/// First and second moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update with bias correction.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut OptimizerState<T>,
    hyper: &AdamW,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads.iter() {
        if !g.all_finite() {
            return Err(Error::numeric(format!("non-finite gradient for {name}")));
        }
    }
    state.step += 1;
    let c1 = 1.0 - hyper.beta1.powi(state.step as i32);
    let c2 = 1.0 - hyper.beta2.powi(state.step as i32);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state.m.get_mut(name)?;
        if g.shape() != p.shape() || m.shape() != p.shape() {
            return Err(Error::Model(format!(
                "shape mismatch in optimizer for {name}"
            )));
        }
        let v = state.v.get_mut(name)?;
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i].f64();
            let mi = hyper.beta1 * md[i].f64() + (1.0 - hyper.beta1) * gi;
            let vi = hyper.beta2 * vd[i].f64() + (1.0 - hyper.beta2) * gi * gi;
            md[i] = T::c(mi);
            vd[i] = T::c(vi);
            let theta = pd[i].f64();
            let update = (mi / c1) / ((vi / c2).sqrt() + hyper.eps);
            pd[i] = T::c(theta - lr * hyper.weight_decay * theta - lr * update);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `hi → lo` along a half cosine over `horizon` iterations, then `lo`.
    Cosine {
        lo: f64,
        hi: f64,
        horizon: usize,
    },
    /// `lo → hi` linearly over `horizon` iterations, then `hi`.
    Warmup {
        lo: f64,
        hi: f64,
        horizon: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrKind {
    Cosine,
    Warmup,
}

pub fn lr_schedule(kind: LrKind, lo: f64, hi: f64, horizon: usize) -> Result<LrSchedule> {
    let s = match kind {
        LrKind::Cosine => LrSchedule::Cosine { lo, hi, horizon },
        LrKind::Warmup => LrSchedule::Warmup { lo, hi, horizon },
    };
    s.validate()?;
    Ok(s)
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant { lr } if lr > 0.0 && lr.is_finite() => Ok(()),
            LrSchedule::Cosine { lo, hi, .. } | LrSchedule::Warmup { lo, hi, .. }
                if lo >= 0.0 && lo < hi && hi.is_finite() =>
            {
                Ok(())
            }
            _ => Err(Error::config(format!(
                "invalid learning-rate schedule {self:?}"
            ))),
        }
    }

    pub fn at(&self, iteration: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lo, hi, horizon } => {
                let f = if horizon == 0 {
                    1.0
                } else {
                    iteration.min(horizon) as f64 / horizon as f64
                };
                lo + (hi - lo) * 0.5 * (1.0 + (PI * f).cos())
            }
            LrSchedule::Warmup { lo, hi, horizon } => {
                let f = if horizon == 0 {
                    1.0
                } else {
                    iteration.min(horizon) as f64 / horizon as f64
                };
                lo + (hi - lo) * f
            }
        }
    }
}
