//! Gaussian diffusion over centered logical bits `l ∈ {−0.5, +0.5}^n_l`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gf2::BinaryVector;
use crate::nn::{ContinuousNet, NoisePredictor, ParamStore};
use crate::tensor::{Real, Tape, Tensor};

/// Decoding aborts once any coordinate exceeds this magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSchedule {
    /// `β_1..β_T` at indices `0..T`.
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl ContinuousSchedule {
    /// Linear schedule `β_t = (0.1 + 19.9·t/T)/T`, which needs `T ≥ 20`
    /// for `β_T ≤ 1`. At `T = 20` the last step destroys the signal and the
    /// schedule is usable for sampling only.
    pub fn linear(steps: usize) -> Result<Self> {
        if steps < 20 {
            return Err(Error::config(format!(
                "linear schedule needs T ≥ 20, got {steps}"
            )));
        }
        let t_max = steps as f64;
        Self::from_betas(
            (1..=steps)
                .map(|t| (0.1 + 19.9 * t as f64 / t_max) / t_max)
                .collect(),
        )
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::config("β_t must lie in [0, 1]"));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Training-time step distribution, proportional to `β_t²/(1 − ᾱ_t)`.
    pub fn step_weights(&self) -> Vec<f64> {
        let w: Vec<f64> = (1..=self.steps())
            .map(|t| {
                let denom = 1.0 - self.alpha_bar(t);
                if denom > 0.0 {
                    self.beta(t).powi(2) / denom
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.into_iter().map(|v| v / total).collect()
    }

    pub fn step_sampler(&self) -> Result<StepSampler> {
        let dist = WeightedIndex::new(self.step_weights())
            .map_err(|e| Error::config(format!("degenerate step distribution: {e}")))?;
        Ok(StepSampler(dist))
    }
}

pub struct StepSampler(WeightedIndex<f64>);

impl StepSampler {
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.0.sample(rng) + 1
    }
}

/// `l0` mapped to `±0.5`.
pub fn center(l0: &BinaryVector) -> Vec<f64> {
    l0.iter().map(|b| if b { 0.5 } else { -0.5 }).collect()
}

fn gaussian(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Closed-form `q(l_t | l_0)`: returns `(l_t, ε)` with
/// `l_t = √ᾱ_t·l_0 + √(1−ᾱ_t)·ε`.
pub fn continuous_sample(
    l0: &BinaryVector,
    t: usize,
    schedule: &ContinuousSchedule,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(1..=schedule.steps()).contains(&t) {
        return Err(Error::config(format!(
            "step {t} outside 1..={}",
            schedule.steps()
        )));
    }
    let a = schedule.alpha_bar(t);
    let eps = gaussian(l0.len(), rng);
    let l_t = center(l0)
        .iter()
        .zip(&eps)
        .map(|(x, e)| a.sqrt() * x + (1.0 - a).sqrt() * e)
        .collect();
    Ok((l_t, eps))
}

/// One forward step `l_t = √α_t·l_{t−1} + √β_t·ε`.
pub fn forward_step(
    l_prev: &[f64],
    t: usize,
    schedule: &ContinuousSchedule,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let b = schedule.beta(t);
    let eps = gaussian(l_prev.len(), rng);
    l_prev
        .iter()
        .zip(eps)
        .map(|(x, e)| (1.0 - b).sqrt() * x + b.sqrt() * e)
        .collect()
}

/// Noised inputs for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousBatch {
    pub l_t: Vec<f64>,
    pub eps: Vec<f64>,
    pub steps: Vec<usize>,
}

impl ContinuousBatch {
    pub fn draw(
        targets: &[&BinaryVector],
        schedule: &ContinuousSchedule,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let sampler = schedule.step_sampler()?;
        let mut out = Self {
            l_t: vec![],
            eps: vec![],
            steps: vec![],
        };
        for l in targets {
            let t = sampler.sample(rng);
            let (l_t, eps) = continuous_sample(l, t, schedule, rng)?;
            out.l_t.extend(l_t);
            out.eps.extend(eps);
            out.steps.push(t);
        }
        Ok(out)
    }

    /// Samples `range` of a batch with `n_l` logicals.
    pub fn slice(&self, range: std::ops::Range<usize>, n_l: usize) -> Self {
        let rows = range.start * n_l..range.end * n_l;
        Self {
            l_t: self.l_t[rows.clone()].to_vec(),
            eps: self.eps[rows].to_vec(),
            steps: self.steps[range].to_vec(),
        }
    }
}

/// Mean over the batch of `‖ε − ε_θ(l_t, s, t)‖²` and its gradients.
pub fn continuous_loss_and_grads<T: Real>(
    net: &ContinuousNet<T>,
    syndromes: &[&BinaryVector],
    batch: &ContinuousBatch,
) -> Result<(f64, ParamStore<T>)> {
    let mut tape = Tape::new();
    let p = net.params.bind(&mut tape);
    let out = net.forward(&mut tape, &p, &batch.l_t, syndromes, &batch.steps)?;
    let target = Tensor::from_f64(&[syndromes.len(), net.config.n_l], &batch.eps)?;
    let loss = tape.mse_loss(out, &target)?;
    let value = tape.value(loss).item().f64();
    if !value.is_finite() {
        return Err(Error::numeric(format!("continuous loss is {value}")));
    }
    let mut g = tape.backward(loss)?;
    Ok((value, net.params.collect_grads(&p, &mut g)))
}

/// Monte-Carlo noise-prediction loss on `(s, l)` pairs.
pub fn continuous_loss<T: Real>(
    net: &ContinuousNet<T>,
    pairs: &[(&BinaryVector, &BinaryVector)],
    schedule: &ContinuousSchedule,
    rng: &mut impl Rng,
) -> Result<f64> {
    let syndromes: Vec<&BinaryVector> = pairs.iter().map(|p| p.0).collect();
    let targets: Vec<&BinaryVector> = pairs.iter().map(|p| p.1).collect();
    let batch = ContinuousBatch::draw(&targets, schedule, rng)?;
    Ok(continuous_loss_and_grads(net, &syndromes, &batch)?.0)
}

/// Deterministic reverse chain from `l_T = 0`, thresholding `l_0 > 0`.
pub fn continuous_decode_batch(
    pred: &impl NoisePredictor,
    syndromes: &[&BinaryVector],
    schedule: &ContinuousSchedule,
) -> Result<Vec<BinaryVector>> {
    if let Some(t) = (1..=schedule.steps()).find(|&t| schedule.alpha(t) <= 0.0) {
        return Err(Error::config(format!("reverse chain undefined: β_{t} = 1")));
    }
    let n_l = pred.n_l();
    let batch = syndromes.len();
    let mut l = vec![0.0; batch * n_l];
    for t in (1..=schedule.steps()).rev() {
        let eps = pred.predict_noise(&l, syndromes, &vec![t; batch])?;
        let a = schedule.alpha(t);
        let coef = if a < 1.0 {
            (1.0 - a) / ((1.0 - schedule.alpha_bar(t)).sqrt() * a.sqrt())
        } else {
            0.0
        };
        for (x, e) in l.iter_mut().zip(&eps) {
            *x = *x / a.sqrt() - coef * e;
            if !x.is_finite() || x.abs() > DIVERGENCE_LIMIT {
                return Err(Error::numeric(format!("reverse chain diverged at t = {t}")));
            }
        }
    }
    Ok(l.chunks(n_l.max(1))
        .take(batch)
        .map(|row| BinaryVector::from_bools(&row.iter().map(|&x| x > 0.0).collect::<Vec<_>>()))
        .collect())
}

pub fn continuous_decode(
    pred: &impl NoisePredictor,
    s: &BinaryVector,
    schedule: &ContinuousSchedule,
) -> Result<BinaryVector> {
    Ok(continuous_decode_batch(pred, &[s], schedule)?.remove(0))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    struct Const(Vec<f64>);

    impl NoisePredictor for Const {
        fn n_l(&self) -> usize {
            self.0.len()
        }
        fn predict_noise(&self, l_t: &[f64], _: &[&BinaryVector], _: &[usize]) -> Result<Vec<f64>> {
            Ok(self.0.iter().cycle().take(l_t.len()).copied().collect())
        }
    }

    #[test]
    fn linear_schedule_values() {
        let s = ContinuousSchedule::linear(200).unwrap();
        assert!((s.beta(1) - (0.1 + 19.9 / 200.0) / 200.0).abs() < 1e-15);
        assert!((s.beta(200) - 0.1).abs() < 1e-15);
        let direct: f64 = (1..=200).map(|t| 1.0 - s.beta(t)).product();
        assert!((s.alpha_bar(200) - direct).abs() < 1e-15);
        assert!(s.alpha_bar(200) < 1e-3);
        let w = s.step_weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(ContinuousSchedule::linear(0).is_err());
        assert!(ContinuousSchedule::linear(19).is_err());
        let edge = ContinuousSchedule::linear(20).unwrap();
        assert_eq!(edge.alpha_bar(20), 0.0);
        assert!(continuous_decode(&Const(vec![0.0]), &BinaryVector::zeros(1), &edge).is_err());
        assert!(ContinuousSchedule::from_betas(vec![1.5]).is_err());
    }

    #[test]
    fn closed_form_matches_step_chain() {
        let s = ContinuousSchedule::linear(20).unwrap();
        let l0 = BinaryVector::from_bits(&[1, 0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40_000;
        let t = 7;
        let (mut m_chain, mut v_chain, mut m_closed, mut v_closed) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let mut l = center(&l0);
            for k in 1..=t {
                l = forward_step(&l, k, &s, &mut rng);
            }
            m_chain += l[0];
            v_chain += l[0] * l[0];
            let (c, _) = continuous_sample(&l0, t, &s, &mut rng).unwrap();
            m_closed += c[0];
            v_closed += c[0] * c[0];
        }
        let mean = 0.5 * s.alpha_bar(t).sqrt();
        let second = 0.25 * s.alpha_bar(t) + 1.0 - s.alpha_bar(t);
        let tol = 4.0 / (n as f64).sqrt();
        for (m, v) in [(m_chain, v_chain), (m_closed, v_closed)] {
            assert!((m / n as f64 - mean).abs() < tol);
            assert!((v / n as f64 - second).abs() < 2.0 * tol);
        }
    }

    #[test]
    fn identity_step_leaves_state() {
        let s = ContinuousSchedule::from_betas(vec![0.0, 0.3]).unwrap();
        // t = 1 has α = 1 so l_0 = l_1 regardless of ε
        let pred = Const(vec![0.7, -0.2]);
        let l2 = 0.0;
        let a2 = s.alpha(2);
        let c2 = (1.0 - a2) / ((1.0 - s.alpha_bar(2)).sqrt() * a2.sqrt());
        let l1 = [l2 / a2.sqrt() - c2 * 0.7, l2 / a2.sqrt() + c2 * 0.2];
        let out = continuous_decode(&pred, &BinaryVector::zeros(1), &s).unwrap();
        let want: Vec<u8> = l1.iter().map(|&x| u8::from(x > 0.0)).collect();
        assert_eq!(out.to_bits(), want);
        assert_eq!(want, vec![0, 1]);
    }

    #[test]
    fn divergence_is_reported() {
        let s = ContinuousSchedule::linear(50).unwrap();
        let err = continuous_decode(&Const(vec![1e6]), &BinaryVector::zeros(1), &s).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn perfect_noise_oracle_recovers_l0() {
        // ε_θ(l_t) = (l_t − √ᾱ_t·l_0)/√(1−ᾱ_t) inverts the forward process
        struct Oracle(Vec<f64>, ContinuousSchedule);
        impl NoisePredictor for Oracle {
            fn n_l(&self) -> usize {
                self.0.len()
            }
            fn predict_noise(
                &self,
                l_t: &[f64],
                _: &[&BinaryVector],
                t: &[usize],
            ) -> Result<Vec<f64>> {
                let a = self.1.alpha_bar(t[0]);
                Ok(l_t
                    .iter()
                    .zip(&self.0)
                    .map(|(x, l)| (x - a.sqrt() * l) / (1.0 - a).sqrt())
                    .collect())
            }
        }
        let s = ContinuousSchedule::linear(100).unwrap();
        let l0 = BinaryVector::from_bits(&[1, 0, 0, 1, 1]);
        let out = continuous_decode(&Oracle(center(&l0), s.clone()), &BinaryVector::zeros(1), &s)
            .unwrap();
        assert_eq!(out, l0);
    }
}
