//! Flooding min-sum belief propagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gf2::{BinaryMatrix, BinaryVector};

/// Messages and posteriors are clamped to `±LLR_CLAMP`.
pub const LLR_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpConfig {
    pub max_iterations: usize,
    /// Min-sum scaling factor applied to check-to-variable messages.
    pub scaling: f64,
    #[serde(default)]
    pub stop: BpStop,
}

/// When a decode that already satisfies the syndrome ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BpStop {
    /// At the first iteration whose hard decision satisfies `s`.
    #[default]
    Syndrome,
    /// Once the messages also stop changing. On a tree this reaches the
    /// exact max-marginals.
    FixedPoint,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            scaling: 1.0,
            stop: BpStop::Syndrome,
        }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("BP needs at least one iteration"));
        }
        if !(self.scaling > 0.0 && self.scaling <= 1.0) {
            return Err(Error::config(format!(
                "min-sum scaling {} outside (0, 1]",
                self.scaling
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpResult {
    /// Posterior log-likelihood ratios `ln Pr[e_j=0]/Pr[e_j=1]`.
    pub llr: Vec<f64>,
    pub hard: BinaryVector,
    pub converged: bool,
    pub iterations: usize,
}

/// Edge lists of a parity-check matrix, reusable across syndromes.
#[derive(Debug, Clone)]
pub struct BpDecoder {
    n_checks: usize,
    n_vars: usize,
    /// Edges of each check, as indices into the edge arrays.
    check_edges: Vec<Vec<usize>>,
    var_edges: Vec<Vec<usize>>,
    edge_var: Vec<usize>,
    channel: Vec<f64>,
    config: BpConfig,
}

fn clamp(x: f64) -> f64 {
    x.clamp(-LLR_CLAMP, LLR_CLAMP)
}

impl BpDecoder {
    pub fn new(h: &BinaryMatrix, priors: &[f64], config: BpConfig) -> Result<Self> {
        config.validate()?;
        if priors.len() != h.cols() {
            return Err(Error::Model(format!(
                "{} priors for {} columns",
                priors.len(),
                h.cols()
            )));
        }
        if let Some(p) = priors.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Model(format!("prior {p} outside (0,1)")));
        }
        let mut check_edges = vec![Vec::new(); h.rows()];
        let mut var_edges = vec![Vec::new(); h.cols()];
        let mut edge_var = Vec::new();
        for i in 0..h.rows() {
            for j in h.row_support(i) {
                let e = edge_var.len();
                edge_var.push(j);
                check_edges[i].push(e);
                var_edges[j].push(e);
            }
        }
        Ok(Self {
            n_checks: h.rows(),
            n_vars: h.cols(),
            check_edges,
            var_edges,
            edge_var,
            channel: priors.iter().map(|p| clamp(((1.0 - p) / p).ln())).collect(),
            config,
        })
    }

    fn satisfies(&self, e: &BinaryVector, s: &BinaryVector) -> bool {
        (0..self.n_checks).all(|i| {
            let parity = self.check_edges[i]
                .iter()
                .filter(|&&k| e.get(self.edge_var[k]))
                .count()
                % 2
                == 1;
            parity == s.get(i)
        })
    }

    pub fn decode(&self, s: &BinaryVector) -> Result<BpResult> {
        if s.len() != self.n_checks {
            return Err(Error::Model(format!(
                "syndrome length {} ≠ {}",
                s.len(),
                self.n_checks
            )));
        }
        let n_edges = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&j| self.channel[j]).collect();
        let mut c2v = vec![0.0; n_edges];
        let mut llr = self.channel.clone();
        let mut hard = BinaryVector::zeros(self.n_vars);
        let mut prev = vec![f64::NAN; n_edges];
        for it in 1..=self.config.max_iterations {
            for (i, edges) in self.check_edges.iter().enumerate() {
                let mut sign = if s.get(i) { -1.0 } else { 1.0 };
                let (mut min1, mut min2, mut arg) = (f64::INFINITY, f64::INFINITY, usize::MAX);
                for &k in edges {
                    let m = v2c[k];
                    if m < 0.0 {
                        sign = -sign;
                    }
                    let a = m.abs();
                    if a < min1 {
                        min2 = min1;
                        min1 = a;
                        arg = k;
                    } else if a < min2 {
                        min2 = a;
                    }
                }
                for &k in edges {
                    let own = if v2c[k] < 0.0 { -1.0 } else { 1.0 };
                    let mag = if k == arg { min2 } else { min1 };
                    let mag = if mag.is_finite() { mag } else { LLR_CLAMP };
                    c2v[k] = clamp(self.config.scaling * sign * own * mag);
                }
            }
            for (j, edges) in self.var_edges.iter().enumerate() {
                let total = self.channel[j] + edges.iter().map(|&k| c2v[k]).sum::<f64>();
                llr[j] = clamp(total);
                hard.set(j, llr[j] < 0.0);
                for &k in edges {
                    v2c[k] = clamp(total - c2v[k]);
                }
            }
            let settled = match self.config.stop {
                BpStop::Syndrome => true,
                BpStop::FixedPoint => {
                    let still = c2v.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= 1e-12);
                    prev.copy_from_slice(&c2v);
                    still
                }
            };
            if settled && self.satisfies(&hard, s) {
                return Ok(BpResult {
                    llr,
                    hard,
                    converged: true,
                    iterations: it,
                });
            }
        }
        Ok(BpResult {
            llr,
            hard,
            converged: false,
            iterations: self.config.max_iterations,
        })
    }
}

/// One-shot min-sum decode of `s` against `H` with channel priors.
pub fn bp_minsum(
    h: &BinaryMatrix,
    priors: &[f64],
    s: &BinaryVector,
    config: BpConfig,
) -> Result<BpResult> {
    BpDecoder::new(h, priors, config)?.decode(s)
}
