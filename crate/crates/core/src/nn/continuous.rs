//! Feed-forward noise predictor for continuous diffusion.
//!
//! With `y = (emb(t), s − 0.5)`:
//!
//! ```text
//! x ← (l_t − 0.5, y)
//! x ← gelu(x·W1 + b1); x ← gelu(x·W2 + b2)
//! x ← (x, y)
//! x ← gelu(x·W3 + b3); x ← gelu(x·W4 + b4)
//! ε ← x·W5 + b5
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_finite, linear_init, syndrome_tokens, time_embed, Bound, NoisePredictor, ParamStore,
};
use crate::error::{Error, Result};
use crate::gf2::BinaryVector;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Time-embedding width giving the parameter totals of the reference
/// configurations.
pub const DEFAULT_TIME_DIM: usize = 140;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    pub n_l: usize,
    pub n_s: usize,
    pub d_t: usize,
    pub d_f: usize,
    pub steps: usize,
}

impl ContinuousConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_l == 0 || self.n_s == 0 || self.d_f == 0 || self.steps == 0 {
            return Err(Error::config(
                "continuous network dimensions must be positive",
            ));
        }
        if self.d_t == 0 || !self.d_t.is_multiple_of(2) {
            return Err(Error::config(format!(
                "d_t = {} must be even and positive",
                self.d_t
            )));
        }
        Ok(())
    }

    fn cond_dim(&self) -> usize {
        self.d_t + self.n_s
    }

    pub fn layer_shapes(&self) -> [(usize, usize); 5] {
        let f = self.d_f;
        [
            (self.n_l + self.cond_dim(), f),
            (f, f),
            (f + self.cond_dim(), f),
            (f, f),
            (f, self.n_l),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousNet<T: Real = f32> {
    pub config: ContinuousConfig,
    pub params: ParamStore<T>,
}

impl<T: Real> ContinuousNet<T> {
    pub fn new(config: ContinuousConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (i, (d_in, d_out)) in config.layer_shapes().into_iter().enumerate() {
            linear_init(&mut params, &format!("l{}", i + 1), d_in, d_out, rng);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ContinuousConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut want: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, (d_in, d_out)) in config.layer_shapes().into_iter().enumerate() {
            want.push((format!("l{}.b", i + 1), vec![d_out]));
            want.push((format!("l{}.w", i + 1), vec![d_in, d_out]));
        }
        let have: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect();
        if have != want {
            return Err(Error::Checkpoint(
                "parameter table does not match the network configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> ContinuousNet<U> {
        ContinuousNet {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Builds the network inputs `(x, y)` as constants.
    fn inputs(
        &self,
        l_t: &[f64],
        syndromes: &[&BinaryVector],
        t: &[usize],
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let c = &self.config;
        let batch = syndromes.len();
        if l_t.len() != batch * c.n_l || t.len() != batch {
            return Err(Error::Model(format!(
                "batch {batch}: {} noisy values, {} time steps",
                l_t.len(),
                t.len()
            )));
        }
        let bits = syndrome_tokens(syndromes, c.n_s)?;
        let mut x = Vec::with_capacity(batch * (c.n_l + c.cond_dim()));
        let mut y = Vec::with_capacity(batch * c.cond_dim());
        for b in 0..batch {
            let mut cond = time_embed(t[b] as f64, c.d_t)?;
            cond.extend(
                bits[b * c.n_s..(b + 1) * c.n_s]
                    .iter()
                    .map(|&s| s as f64 - 0.5),
            );
            x.extend(
                l_t[b * c.n_l..(b + 1) * c.n_l]
                    .iter()
                    .map(|&v| T::c(v - 0.5)),
            );
            x.extend(cond.iter().map(|&v| T::c(v)));
            y.extend(cond.into_iter().map(T::c));
        }
        Ok((
            Tensor::new(&[batch, c.n_l + c.cond_dim()], x)?,
            Tensor::new(&[batch, c.cond_dim()], y)?,
        ))
    }

    fn dense<'a>(&self, tape: &mut Tape<'a, T>, p: &Bound, layer: usize, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p.var(&format!("l{layer}.w")))?;
        Ok(tape.add(h, p.var(&format!("l{layer}.b")))?)
    }

    /// `ε_θ` as a `[B, n_l]` tape value.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a, T>,
        p: &Bound,
        l_t: &[f64],
        syndromes: &[&BinaryVector],
        t: &[usize],
    ) -> Result<Var> {
        let (x, y) = self.inputs(l_t, syndromes, t)?;
        let x = tape.constant(x);
        let y = tape.constant(y);
        let h = self.dense(tape, p, 1, x)?;
        let h = tape.gelu(h);
        let h = self.dense(tape, p, 2, h)?;
        let h = tape.gelu(h);
        let h = tape.concat(&[h, y], 1)?;
        let h = self.dense(tape, p, 3, h)?;
        let h = tape.gelu(h);
        let h = self.dense(tape, p, 4, h)?;
        let h = tape.gelu(h);
        self.dense(tape, p, 5, h)
    }
}

impl<T: Real> NoisePredictor for ContinuousNet<T> {
    fn n_l(&self) -> usize {
        self.config.n_l
    }

    fn predict_noise(
        &self,
        l_t: &[f64],
        syndromes: &[&BinaryVector],
        t: &[usize],
    ) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, l_t, syndromes, t)?;
        let out = tape.value(out);
        check_finite(out, "continuous network output")?;
        Ok(out.data().iter().map(|v| v.f64()).collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::max_relative_error;

    fn tiny() -> ContinuousConfig {
        ContinuousConfig {
            n_l: 3,
            n_s: 2,
            d_t: 4,
            d_f: 5,
            steps: 10,
        }
    }

    #[test]
    fn reference_parameter_totals() {
        let bb72 = ContinuousConfig {
            n_l: 24,
            n_s: 72,
            d_t: DEFAULT_TIME_DIM,
            d_f: 2048,
            steps: 200,
        };
        assert_eq!(bb72.param_count(), 13_557_784);
        let bb144 = ContinuousConfig { n_s: 144, ..bb72 };
        assert_eq!(bb144.param_count(), 13_852_696);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ContinuousNet::<f32>::new(tiny(), &mut rng).unwrap();
        assert_eq!(net.params.count(), tiny().param_count());
        assert!(ContinuousNet::from_params(tiny(), net.params.clone()).is_ok());
        assert!(
            ContinuousNet::from_params(ContinuousConfig { d_f: 4, ..tiny() }, net.params).is_err()
        );
    }

    #[test]
    fn zero_weights_output_b5() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = ContinuousNet::<f64>::new(tiny(), &mut rng).unwrap();
        for (_, t) in net.params.iter_mut() {
            t.data_mut().fill(0.0);
        }
        net.params
            .get_mut("l5.b")
            .unwrap()
            .data_mut()
            .copy_from_slice(&[0.1, -0.2, 0.3]);
        let s = BinaryVector::from_bits(&[1, 0]);
        let out = net.predict_noise(&[0.3, -1.0, 2.0], &[&s], &[7]).unwrap();
        assert_eq!(out, vec![0.1, -0.2, 0.3]);
        let again = net.predict_noise(&[0.3, -1.0, 2.0], &[&s], &[7]).unwrap();
        assert_eq!(out, again);
        assert!(net.predict_noise(&[0.3], &[&s], &[7]).is_err());
    }

    fn mse(
        net: &ContinuousNet<f64>,
        l_t: &[f64],
        syn: &[&BinaryVector],
        t: &[usize],
        eps: &Tensor<f64>,
    ) -> (f64, ParamStore<f64>) {
        let mut tape = Tape::new();
        let p = net.params.bind(&mut tape);
        let out = net.forward(&mut tape, &p, l_t, syn, t).unwrap();
        let loss = tape.mse_loss(out, eps).unwrap();
        let v = tape.value(loss).item();
        let mut g = tape.backward(loss).unwrap();
        (v, net.params.collect_grads(&p, &mut g))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = ContinuousNet::<f64>::new(tiny(), &mut rng).unwrap();
        for (_, t) in net.params.iter_mut() {
            *t = Tensor::randn(t.shape(), 0.5, &mut rng);
        }
        let s1 = BinaryVector::from_bits(&[1, 0]);
        let s2 = BinaryVector::from_bits(&[1, 1]);
        let l_t = [0.2, -0.4, 0.9, -0.1, 0.0, 0.7];
        let eps = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 0.3, 1.2, 0.1, -0.6]).unwrap();
        let syn = [&s1, &s2];
        let (_, grads) = mse(&net, &l_t, &syn, &[3, 9], &eps);
        let names: Vec<String> = net.params.names().cloned().collect();
        let mut ts: Vec<Tensor<f64>> = net.params.iter().map(|(_, t)| t.clone()).collect();
        let gs: Vec<Tensor<f64>> = grads.iter().map(|(_, t)| t.clone()).collect();
        let err = max_relative_error(&mut ts, &gs, 1e-3, |ts| {
            let mut probe = net.clone();
            for (n, t) in names.iter().zip(ts) {
                *probe.params.get_mut(n).unwrap() = t.clone();
            }
            mse(&probe, &l_t, &syn, &[3, 9], &eps).0
        });
        assert!(err < 1e-3, "relative error {err}");
    }
}
