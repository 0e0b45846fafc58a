//! Absorbing-state (masked) diffusion over logical bits.
//!
//! Forward step `t` masks each still-visible token with probability
//! `β_t = 1/(T−t+1)`, so after `t` steps a token is masked with probability
//! `1 − α_t = t/T`. The reverse model predicts each masked bit from the
//! visible ones and the syndrome.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gf2::BinaryVector;
use crate::nn::{MaskedNet, MaskedPredictor, ParamStore, TOKEN_MASK};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedSchedule {
    pub steps: usize,
}

impl MaskedSchedule {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("diffusion needs at least one step"));
        }
        Ok(Self { steps })
    }

    /// Per-step masking probability of a visible token.
    pub fn beta(&self, t: usize) -> f64 {
        assert!((1..=self.steps).contains(&t));
        1.0 / (self.steps - t + 1) as f64
    }

    /// Probability that a token is still visible after `t` steps.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t <= self.steps);
        1.0 - t as f64 / self.steps as f64
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if !(1..=self.steps).contains(&t) {
            return Err(Error::config(format!(
                "step {t} outside 1..={}",
                self.steps
            )));
        }
        Ok(())
    }

    /// Number of tokens masked at step `t` during training.
    pub fn masked_count(&self, n_l: usize, t: usize) -> usize {
        (n_l as f64 * t as f64 / self.steps as f64).round() as usize
    }

    /// Runs the per-step forward chain, returning the mask after each step
    /// `1..=T`.
    pub fn trajectory(&self, n_l: usize, rng: &mut impl Rng) -> Vec<Vec<bool>> {
        let mut masked = vec![false; n_l];
        (1..=self.steps)
            .map(|t| {
                let b = self.beta(t);
                for m in masked.iter_mut() {
                    if !*m && rng.random::<f64>() < b {
                        *m = true;
                    }
                }
                masked.clone()
            })
            .collect()
    }
}

/// Masks exactly `round(n_l·t/T)` positions of `l0`, uniformly without
/// replacement.
pub fn mask_sample(
    l0: &BinaryVector,
    t: usize,
    schedule: MaskedSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<u8>> {
    schedule.check_step(t)?;
    let n = l0.len();
    let mut tokens: Vec<u8> = l0.iter().map(u8::from).collect();
    for k in sample(rng, n, schedule.masked_count(n, t)).iter() {
        tokens[k] = TOKEN_MASK;
    }
    Ok(tokens)
}

/// `q(l_{t−1,k} | l_t, l_0)` as `[Pr(0), Pr(1), Pr(*)]` per position.
///
/// A visible token stays put; a masked token stays masked with probability
/// `(t−1)/t` and reveals `l_{0,k}` with probability `1/t`.
pub fn masked_reverse_exact(l_t: &[u8], l0: &BinaryVector, t: usize) -> Result<Vec<[f64; 3]>> {
    if t == 0 {
        return Err(Error::config("reverse step needs t ≥ 1"));
    }
    if l_t.len() != l0.len() {
        return Err(Error::Model(format!(
            "{} tokens for {} logicals",
            l_t.len(),
            l0.len()
        )));
    }
    let stay = (t - 1) as f64 / t as f64;
    let reveal = 1.0 / t as f64;
    l_t.iter()
        .enumerate()
        .map(|(k, &tok)| {
            let bit = l0.get(k) as usize;
            let mut row = [0.0; 3];
            match tok {
                TOKEN_MASK => {
                    row[2] = stay;
                    row[bit] = reveal;
                }
                0 | 1 if tok as usize == bit => row[bit] = 1.0,
                0 | 1 => {
                    return Err(Error::Model(format!(
                        "visible token {k} disagrees with l_0"
                    )));
                }
                _ => return Err(Error::Model(format!("unknown token {tok}"))),
            }
            Ok(row)
        })
        .collect()
}

/// One training minibatch: noised tokens, per-sample steps and loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBatch {
    pub n_l: usize,
    pub tokens: Vec<u8>,
    pub steps: Vec<usize>,
    pub targets: Vec<f64>,
    /// `1/t` on masked positions, zero elsewhere.
    pub weights: Vec<f64>,
}

impl MaskedBatch {
    /// Draws `t ~ U{1..T}` and a mask per target.
    pub fn draw(
        targets: &[&BinaryVector],
        schedule: MaskedSchedule,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let n_l = targets
            .first()
            .map(|l| l.len())
            .ok_or_else(|| Error::config("empty batch"))?;
        let mut steps = Vec::with_capacity(targets.len());
        let mut tokens = Vec::with_capacity(targets.len() * n_l);
        for l in targets {
            if l.len() != n_l {
                return Err(Error::Model("ragged targets".into()));
            }
            let t = rng.random_range(1..=schedule.steps);
            steps.push(t);
            tokens.extend(mask_sample(l, t, schedule, rng)?);
        }
        Self::with_tokens(targets, tokens, steps)
    }

    pub fn with_tokens(
        targets: &[&BinaryVector],
        tokens: Vec<u8>,
        steps: Vec<usize>,
    ) -> Result<Self> {
        let n_l = targets
            .first()
            .map(|l| l.len())
            .ok_or_else(|| Error::config("empty batch"))?;
        if tokens.len() != targets.len() * n_l || steps.len() != targets.len() || steps.contains(&0)
        {
            return Err(Error::Model(
                "batch tokens, steps and targets disagree".into(),
            ));
        }
        let mut weights = Vec::with_capacity(tokens.len());
        let mut tv = Vec::with_capacity(tokens.len());
        for (b, l) in targets.iter().enumerate() {
            for k in 0..n_l {
                tv.push(if l.get(k) { 1.0 } else { 0.0 });
                let masked = tokens[b * n_l + k] == TOKEN_MASK;
                weights.push(if masked { 1.0 / steps[b] as f64 } else { 0.0 });
            }
        }
        Ok(Self {
            n_l,
            tokens,
            steps,
            targets: tv,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    /// Samples `range` of the batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let rows = range.start * self.n_l..range.end * self.n_l;
        Self {
            n_l: self.n_l,
            tokens: self.tokens[rows.clone()].to_vec(),
            steps: self.steps[range].to_vec(),
            targets: self.targets[rows.clone()].to_vec(),
            weights: self.weights[rows].to_vec(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn target_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.len(), self.n_l], &self.targets).expect("consistent batch")
    }

    pub fn weight_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.len(), self.n_l], &self.weights).expect("consistent batch")
    }
}

/// Batch-mean of `(1/t)·Σ_masked −log q(l_{0,k})` and its parameter
/// gradients, decoding from syndrome memory of round `round` (the final
/// round when `None`).
pub fn masked_loss_and_grads<T: Real>(
    net: &MaskedNet<T>,
    syndromes: &[&BinaryVector],
    batch: &MaskedBatch,
    round: Option<usize>,
) -> Result<(f64, ParamStore<T>)> {
    let mut tape = Tape::new();
    let p = net.params.bind(&mut tape);
    let r = round.unwrap_or(net.config.rounds);
    let memories = net.encode(&mut tape, &p, syndromes, r)?;
    let z = net.decode(
        &mut tape,
        &p,
        &batch.tokens,
        *memories.last().expect("memory"),
    )?;
    let loss = tape.masked_bce_loss(z, &batch.target_tensor(), &batch.weight_tensor())?;
    let value = tape.value(loss).item().f64();
    if !value.is_finite() {
        return Err(Error::numeric(format!("masked loss is {value}")));
    }
    let mut g = tape.backward(loss)?;
    Ok((value, net.params.collect_grads(&p, &mut g)))
}

/// Monte-Carlo masked loss on `(s, l)` pairs.
pub fn masked_loss<T: Real>(
    net: &MaskedNet<T>,
    pairs: &[(&BinaryVector, &BinaryVector)],
    rng: &mut impl Rng,
) -> Result<f64> {
    let schedule = MaskedSchedule::new(net.config.steps)?;
    let syndromes: Vec<&BinaryVector> = pairs.iter().map(|p| p.0).collect();
    let targets: Vec<&BinaryVector> = pairs.iter().map(|p| p.1).collect();
    let batch = MaskedBatch::draw(&targets, schedule, rng)?;
    Ok(masked_loss_and_grads(net, &syndromes, &batch, None)?.0)
}

fn unmask_order(p: &[f64], tokens: &[u8]) -> Vec<usize> {
    let mut masked: Vec<usize> = (0..tokens.len())
        .filter(|&k| tokens[k] == TOKEN_MASK)
        .collect();
    let conf = |k: usize| p[k].max(1.0 - p[k]);
    // stable: equal confidences keep ascending index order
    masked.sort_by(|&a, &b| conf(b).total_cmp(&conf(a)));
    masked
}

/// Greedy reverse decoding with `T_inf` steps for a batch of syndromes.
///
/// After step `t` exactly `floor(n_l·(t−1)/T_inf)` tokens stay masked; the
/// most confident masked tokens are revealed first, ties by lowest index,
/// each set to `round(p)`.
pub fn masked_decode_batch(
    pred: &impl MaskedPredictor,
    syndromes: &[&BinaryVector],
    t_inf: usize,
) -> Result<Vec<BinaryVector>> {
    let n_l = pred.n_l();
    if !(1..=n_l).contains(&t_inf) {
        return Err(Error::config(format!("T_inf = {t_inf} outside 1..={n_l}")));
    }
    let batch = syndromes.len();
    let mut tokens = vec![TOKEN_MASK; batch * n_l];
    for t in (1..=t_inf).rev() {
        let keep = n_l * (t - 1) / t_inf;
        let p = pred.predict(&tokens, syndromes)?;
        for b in 0..batch {
            let row = &mut tokens[b * n_l..(b + 1) * n_l];
            let pb = &p[b * n_l..(b + 1) * n_l];
            let order = unmask_order(pb, row);
            let reveal = order.len().saturating_sub(keep);
            for &k in &order[..reveal] {
                row[k] = u8::from(pb[k].round() >= 1.0);
            }
        }
    }
    Ok(tokens
        .chunks(n_l.max(1))
        .take(batch)
        .map(BinaryVector::from_bits)
        .collect())
}

pub fn masked_decode(
    pred: &impl MaskedPredictor,
    s: &BinaryVector,
    t_inf: usize,
) -> Result<BinaryVector> {
    Ok(masked_decode_batch(pred, &[s], t_inf)?.remove(0))
}

/// Decodes with a uniformly random unmasking order (one token per step),
/// as a reference point for the confidence ordering.
pub fn masked_decode_random_order(
    pred: &impl MaskedPredictor,
    s: &BinaryVector,
    rng: &mut impl Rng,
) -> Result<BinaryVector> {
    let n_l = pred.n_l();
    let mut tokens = vec![TOKEN_MASK; n_l];
    let order = sample(rng, n_l, n_l).into_vec();
    for k in order {
        let p = pred.predict(&tokens, &[s])?;
        tokens[k] = u8::from(p[k].round() >= 1.0);
    }
    Ok(BinaryVector::from_bits(&tokens))
}

/// Largest exhaustive search accepted by [`masked_decode_exhaustive`].
pub const EXHAUSTIVE_MAX_LOGICALS: usize = 8;

/// Maximizes `Π_steps q(revealed value)` over every unmasking order and
/// every revealed value, one token per step, by dynamic programming over
/// the `3^n_l` token states.
pub fn masked_decode_exhaustive(
    pred: &impl MaskedPredictor,
    s: &BinaryVector,
) -> Result<(BinaryVector, f64)> {
    let n_l = pred.n_l();
    if n_l > EXHAUSTIVE_MAX_LOGICALS {
        return Err(Error::config(format!(
            "exhaustive decoding needs n_l ≤ {EXHAUSTIVE_MAX_LOGICALS}, got {n_l}"
        )));
    }
    // every state with at least one mask, grouped by mask count
    let total = 3usize.pow(n_l as u32);
    let decode = |mut code: usize| -> Vec<u8> {
        (0..n_l)
            .map(|_| {
                let d = (code % 3) as u8;
                code /= 3;
                d
            })
            .collect()
    };
    let states: Vec<Vec<u8>> = (0..total).map(decode).collect();
    let masked_states: Vec<usize> = (0..total)
        .filter(|&c| states[c].contains(&TOKEN_MASK))
        .collect();
    let mut probs: HashMap<usize, Vec<f64>> = HashMap::with_capacity(masked_states.len());
    for chunk in masked_states.chunks(256) {
        let tokens: Vec<u8> = chunk
            .iter()
            .flat_map(|&c| states[c].iter().copied())
            .collect();
        let syn = vec![s; chunk.len()];
        let p = pred.predict(&tokens, &syn)?;
        for (i, &c) in chunk.iter().enumerate() {
            probs.insert(c, p[i * n_l..(i + 1) * n_l].to_vec());
        }
    }
    let mut pow3 = vec![1usize; n_l];
    for k in 1..n_l {
        pow3[k] = pow3[k - 1] * 3;
    }
    // value[c] = best log-probability of finishing from state c, with its endpoint
    let mut best: HashMap<usize, (f64, usize)> = HashMap::with_capacity(total);
    let mut by_masks: Vec<usize> = (0..total).collect();
    by_masks.sort_by_key(|&c| (states[c].iter().filter(|&&t| t == TOKEN_MASK).count(), c));
    for c in by_masks {
        let st = &states[c];
        if !st.contains(&TOKEN_MASK) {
            best.insert(c, (0.0, c));
            continue;
        }
        let p = &probs[&c];
        let mut top: Option<(f64, usize)> = None;
        for k in (0..n_l).filter(|&k| st[k] == TOKEN_MASK) {
            for v in 0..2u8 {
                let q = if v == 1 { p[k] } else { 1.0 - p[k] };
                let next = c - (TOKEN_MASK as usize) * pow3[k] + v as usize * pow3[k];
                let (tail, end) = best[&next];
                let score = q.ln() + tail;
                if top.is_none_or(|(b, e)| score > b || (score == b && end < e)) {
                    top = Some((score, end));
                }
            }
        }
        best.insert(c, top.expect("at least one masked position"));
    }
    let (score, end) = best[&(total - 1)];
    Ok((BinaryVector::from_bits(&states[end]), score.exp()))
}
