//! AdamW training of the diffusion decoders, including the multi-stage
//! curriculum over intermediate rounds.

mod optim;

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use optim::{adamw_step, lr_schedule, AdamW, LrKind, LrSchedule, OptimizerState};

use crate::codes::{build_structural, CodeModel};
use crate::diffusion::{
    continuous_loss_and_grads, ContinuousBatch, ContinuousSchedule, MaskedBatch, MaskedSchedule,
};
use crate::error::{Error, Result};
use crate::experiment::{network_decoder, ModelSpec};
use crate::gf2::BinaryVector;
use crate::nn::{
    Checkpoint, ContinuousConfig, ContinuousNet, MaskedConfig, MaskedNet, Network, ParamStore,
    StageRecord, DEFAULT_TIME_DIM,
};
use crate::noise::{rng_stream, Sample, Sampler};
use crate::tensor::{Real, Tape};

/// Samples per gradient shard. Fixed so results do not depend on the
/// thread count.
pub const GRAD_CHUNK: usize = 16;
const VALIDATION_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub r1: usize,
    pub r2: usize,
    pub iterations: usize,
    pub lr: LrSchedule,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StagePlan {
    pub stages: Vec<Stage>,
}

impl StagePlan {
    pub fn validate(&self, rounds: usize) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            if s.r1 > s.r2 || s.r2 > rounds {
                return Err(Error::config(format!(
                    "stage {i}: need 0 ≤ R1 ≤ R2 ≤ {rounds}, got ({}, {})",
                    s.r1, s.r2
                )));
            }
            s.lr.validate()?;
        }
        if let Some(last) = self.stages.last() {
            if last.r1 != rounds || last.r2 != rounds {
                return Err(Error::config(format!(
                    "final stage must train round {rounds} only"
                )));
            }
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }
}

fn round_target(sample: &Sample, r: usize, rounds: usize) -> Result<&BinaryVector> {
    if r == rounds {
        return Ok(&sample.l);
    }
    sample
        .intermediates
        .as_ref()
        .and_then(|l| l.get(r))
        .ok_or_else(|| {
            Error::config(format!(
                "round {r} < R = {rounds} needs intermediate targets"
            ))
        })
}

/// Noised tokens for every round in `r1..=r2`, drawn in round order.
pub fn draw_staged(
    samples: &[Sample],
    r1: usize,
    r2: usize,
    rounds: usize,
    schedule: MaskedSchedule,
    rng: &mut impl Rng,
) -> Result<Vec<(usize, MaskedBatch)>> {
    (r1..=r2)
        .map(|r| {
            let targets: Vec<&BinaryVector> = samples
                .iter()
                .map(|s| round_target(s, r, rounds))
                .collect::<Result<_>>()?;
            Ok((r, MaskedBatch::draw(&targets, schedule, rng)?))
        })
        .collect()
}

/// `Σ_r L^[r]` with the decoder reading memory `M_r` for round `r`.
pub fn staged_loss_and_grads<T: Real>(
    net: &MaskedNet<T>,
    syndromes: &[&BinaryVector],
    batches: &[(usize, MaskedBatch)],
) -> Result<(f64, ParamStore<T>)> {
    let upto = batches
        .iter()
        .map(|b| b.0)
        .max()
        .ok_or_else(|| Error::config("no rounds to train"))?;
    let mut tape = Tape::new();
    let p = net.params.bind(&mut tape);
    let memories = net.encode(&mut tape, &p, syndromes, upto)?;
    let mut total = None;
    for (r, batch) in batches {
        let memory = memories[(*r).min(memories.len() - 1)];
        let z = net.decode(&mut tape, &p, &batch.tokens, memory)?;
        let loss = tape.masked_bce_loss(z, &batch.target_tensor(), &batch.weight_tensor())?;
        total = Some(match total {
            Some(acc) => tape.add(acc, loss)?,
            None => loss,
        });
    }
    let total = total.expect("at least one round");
    let value = tape.value(total).item().f64();
    if !value.is_finite() {
        return Err(Error::numeric(format!("staged loss is {value}")));
    }
    let mut g = tape.backward(total)?;
    Ok((value, net.params.collect_grads(&p, &mut g)))
}

/// Monte-Carlo `L(θ; R1, R2)` on samples carrying intermediate targets.
pub fn staged_loss<T: Real>(
    net: &MaskedNet<T>,
    samples: &[Sample],
    r1: usize,
    r2: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let schedule = MaskedSchedule::new(net.config.steps)?;
    let batches = draw_staged(samples, r1, r2, net.config.rounds, schedule, rng)?;
    let syndromes: Vec<&BinaryVector> = samples.iter().map(|s| &s.s).collect();
    Ok(staged_loss_and_grads(net, &syndromes, &batches)?.0)
}

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n)
        .step_by(GRAD_CHUNK)
        .map(|s| s..(s + GRAD_CHUNK).min(n))
        .collect()
}

/// Batch-weighted sum of per-shard losses and gradients, in shard order.
fn combine<T: Real>(parts: Vec<(usize, f64, ParamStore<T>)>, total: usize) -> (f64, ParamStore<T>) {
    let mut iter = parts.into_iter();
    let (n0, l0, mut grads) = iter.next().expect("nonempty batch");
    let w0 = n0 as f64 / total as f64;
    for (_, g) in grads.iter_mut() {
        g.data_mut()
            .iter_mut()
            .for_each(|v| *v = T::c(v.f64() * w0));
    }
    let mut loss = l0 * w0;
    for (n, l, g) in iter {
        let w = n as f64 / total as f64;
        loss += l * w;
        for ((_, acc), (_, gi)) in grads.iter_mut().zip(g.iter()) {
            for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a += T::c(b.f64() * w);
            }
        }
    }
    (loss, grads)
}

/// A network with its optimizer state.
pub struct Trainer {
    pub network: Network,
    pub state: OptimizerState<f32>,
    pub hyper: AdamW,
}

impl Trainer {
    pub fn new(network: Network, hyper: AdamW) -> Self {
        let state = OptimizerState::new(Self::params_of(&network));
        Self {
            network,
            state,
            hyper,
        }
    }

    fn params_of(net: &Network) -> &ParamStore<f32> {
        match net {
            Network::Masked(m) => &m.params,
            Network::Continuous(c) => &c.params,
        }
    }

    pub fn reset_optimizer(&mut self) {
        self.state = OptimizerState::new(Self::params_of(&self.network));
    }

    /// One optimizer step on `samples`; returns the batch loss. Parameters
    /// are left untouched when the loss or a gradient is not finite.
    pub fn step(
        &mut self,
        samples: &[Sample],
        r1: usize,
        r2: usize,
        lr: f64,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::config("empty training batch"));
        }
        let syndromes: Vec<&BinaryVector> = samples.iter().map(|s| &s.s).collect();
        let ranges = chunks(samples.len());
        let (loss, grads) = match &self.network {
            Network::Masked(net) => {
                let schedule = MaskedSchedule::new(net.config.steps)?;
                let batches = draw_staged(samples, r1, r2, net.config.rounds, schedule, rng)?;
                let parts = ranges
                    .par_iter()
                    .map(|r| {
                        let sub: Vec<(usize, MaskedBatch)> = batches
                            .iter()
                            .map(|(k, b)| (*k, b.slice(r.clone())))
                            .collect();
                        let (l, g) = staged_loss_and_grads(net, &syndromes[r.clone()], &sub)?;
                        Ok((r.len(), l, g))
                    })
                    .collect::<Result<Vec<_>>>()?;
                combine(parts, samples.len())
            }
            Network::Continuous(net) => {
                let schedule = ContinuousSchedule::linear(net.config.steps)?;
                let targets: Vec<&BinaryVector> = samples.iter().map(|s| &s.l).collect();
                let batch = ContinuousBatch::draw(&targets, &schedule, rng)?;
                let n_l = net.config.n_l;
                let parts = ranges
                    .par_iter()
                    .map(|r| {
                        let (l, g) = continuous_loss_and_grads(
                            net,
                            &syndromes[r.clone()],
                            &batch.slice(r.clone(), n_l),
                        )?;
                        Ok((r.len(), l, g))
                    })
                    .collect::<Result<Vec<_>>>()?;
                combine(parts, samples.len())
            }
        };
        if !loss.is_finite() {
            return Err(Error::numeric(format!("training loss is {loss}")));
        }
        let params = match &mut self.network {
            Network::Masked(m) => &mut m.params,
            Network::Continuous(c) => &mut c.params,
        };
        adamw_step(params, &grads, &mut self.state, &self.hyper, lr)?;
        Ok(loss)
    }
}

/// Architecture hyperparameters; code dimensions come from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ArchConfig {
    Masked {
        n_dl: usize,
        #[serde(default)]
        n_el: usize,
        n_h: usize,
        d_m: usize,
        d_f: usize,
        steps: usize,
    },
    Continuous {
        #[serde(default = "default_time_dim")]
        d_t: usize,
        d_f: usize,
        steps: usize,
    },
}

fn default_time_dim() -> usize {
    DEFAULT_TIME_DIM
}

fn default_validation_interval() -> usize {
    1000
}

fn default_validation_samples() -> usize {
    10_000
}

fn default_log_interval() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelSpec,
    pub p_train: f64,
    pub batch: usize,
    pub network: ArchConfig,
    #[serde(default)]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub optimizer: AdamW,
    #[serde(default)]
    pub reset_optimizer: bool,
    #[serde(default = "default_validation_interval")]
    pub validation_interval: usize,
    #[serde(default = "default_validation_samples")]
    pub validation_samples: usize,
    /// Reverse steps used for validation decoding of masked networks.
    #[serde(default)]
    pub validation_t_inf: Option<usize>,
    #[serde(default = "default_log_interval")]
    pub log_interval: usize,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        if !(self.p_train > 0.0 && self.p_train < 1.0) {
            return Err(Error::config(format!(
                "p_train = {} outside (0,1)",
                self.p_train
            )));
        }
        if self.batch == 0 || self.validation_interval == 0 || self.log_interval == 0 {
            return Err(Error::config(
                "batch, validation and log intervals must be positive",
            ));
        }
        Ok(())
    }

    pub fn plan(&self) -> StagePlan {
        StagePlan {
            stages: self.stages.clone(),
        }
    }
}

/// Freshly initialized network for `model`.
pub fn build_network(arch: &ArchConfig, model: &CodeModel, rng: &mut impl Rng) -> Result<Network> {
    Ok(match *arch {
        ArchConfig::Masked {
            n_dl,
            n_el,
            n_h,
            d_m,
            d_f,
            steps,
        } => {
            let config = MaskedConfig {
                n_l: model.n_l(),
                n_c: model.n_c,
                rounds: model.rounds,
                n_dl,
                n_el,
                n_h,
                d_m,
                d_f,
                steps,
            };
            let structural = (n_el > 0).then(|| build_structural(model));
            Network::Masked(MaskedNet::new(config, structural.as_ref(), rng)?)
        }
        ArchConfig::Continuous { d_t, d_f, steps } => {
            let config = ContinuousConfig {
                n_l: model.n_l(),
                n_s: model.n_s(),
                d_t,
                d_f,
                steps,
            };
            ContinuousSchedule::linear(steps)?;
            Network::Continuous(ContinuousNet::new(config, rng)?)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
    pub val_ler: Option<f64>,
}

pub fn write_metrics_csv(rows: &[MetricRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRow>,
}

/// Fraction of held-out shots whose final logical vector is decoded wrongly.
pub fn validation_ler(net: &Network, samples: &[Sample], t_inf: Option<usize>) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let decoder = network_decoder(net, t_inf)?;
    let failures: Vec<usize> = samples
        .par_chunks(VALIDATION_CHUNK)
        .map(|chunk| {
            let syn: Vec<&BinaryVector> = chunk.iter().map(|s| &s.s).collect();
            let out = decoder.decode_batch(&syn)?;
            Ok(chunk.iter().zip(&out).filter(|(s, l)| &s.l != *l).count())
        })
        .collect::<Result<_>>()?;
    Ok(failures.iter().sum::<usize>() as f64 / samples.len() as f64)
}

fn save_artifacts(
    dir: Option<&Path>,
    name: &str,
    ckpt: &Checkpoint,
    metrics: &[MetricRow],
) -> Result<()> {
    if let Some(dir) = dir {
        ckpt.save(&dir.join(name))?;
        write_metrics_csv(metrics, std::fs::File::create(dir.join("metrics.csv"))?)?;
    }
    Ok(())
}

/// Trains on fresh samples from the model at `p_train`.
///
/// Streams of `seed`: 0 initializes the network, 1 draws training errors,
/// 2 draws diffusion noise, 3 draws the held-out validation set. With an
/// output directory, writes `initial.ckpt`, `stage{i}.ckpt`, `final.ckpt`
/// and `metrics.csv`; on a numeric failure writes `last_good.ckpt` instead
/// of `final.ckpt` and returns the error.
pub fn run_training(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let model = config.model.build(config.p_train)?;
    let plan = config.plan();
    plan.validate(model.rounds)?;
    let mut init_rng = rng_stream(config.seed, 0);
    let network = build_network(&config.network, &model, &mut init_rng)?;
    if matches!(network, Network::Continuous(_)) && plan.stages.iter().any(|s| s.r1 != model.rounds)
    {
        return Err(Error::config(
            "continuous networks train on the final round only",
        ));
    }
    let mut sampler = Sampler::new(&model);
    if model.rounds > 0 && plan.stages.iter().any(|s| s.r1 < model.rounds) {
        sampler = sampler.with_intermediates(&model);
    }
    let mut data_rng = rng_stream(config.seed, 1);
    let mut noise_rng = rng_stream(config.seed, 2);
    let mut val_rng = rng_stream(config.seed, 3);
    let val_sampler = Sampler::new(&model);
    let validation: Vec<Sample> = (0..config.validation_samples)
        .map(|_| val_sampler.sample_checked(&mut val_rng, &model))
        .collect();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut trainer = Trainer::new(network, config.optimizer);
    let mut metrics = Vec::new();
    let mut records = Vec::new();
    save_artifacts(
        out_dir,
        "initial.ckpt",
        &Checkpoint::from_network(&trainer.network, config.seed, vec![]),
        &metrics,
    )?;
    let mut iteration = 0;
    for (si, stage) in plan.stages.iter().enumerate() {
        if si > 0 && config.reset_optimizer {
            trainer.reset_optimizer();
        }
        let (mut acc, mut n_acc, mut last) = (0.0, 0usize, None);
        for local in 0..stage.iterations {
            let lr = stage.lr.at(local);
            let batch: Vec<Sample> = (0..config.batch)
                .map(|_| sampler.sample_checked(&mut data_rng, &model))
                .collect();
            let loss = match trainer.step(&batch, stage.r1, stage.r2, lr, &mut noise_rng) {
                Ok(l) => l,
                Err(e @ Error::Numeric(_)) => {
                    let ckpt = Checkpoint::from_network(&trainer.network, config.seed, records);
                    save_artifacts(out_dir, "last_good.ckpt", &ckpt, &metrics)?;
                    return Err(Error::numeric(format!("iteration {}: {e}", iteration + 1)));
                }
                Err(e) => return Err(e),
            };
            iteration += 1;
            acc += loss;
            n_acc += 1;
            last = Some(loss);
            let validate_now =
                iteration % config.validation_interval == 0 || local + 1 == stage.iterations;
            if iteration % config.log_interval == 0 || validate_now {
                let val_ler = if validate_now && !validation.is_empty() {
                    Some(validation_ler(
                        &trainer.network,
                        &validation,
                        config.validation_t_inf,
                    )?)
                } else {
                    None
                };
                metrics.push(MetricRow {
                    iteration,
                    loss: acc / n_acc as f64,
                    lr,
                    val_ler,
                });
                acc = 0.0;
                n_acc = 0;
            }
        }
        records.push(StageRecord {
            r1: stage.r1,
            r2: stage.r2,
            iterations: stage.iterations,
            final_loss: last,
        });
        let ckpt = Checkpoint::from_network(&trainer.network, config.seed, records.clone());
        save_artifacts(out_dir, &format!("stage{si}.ckpt"), &ckpt, &metrics)?;
    }
    let checkpoint = Checkpoint::from_network(&trainer.network, config.seed, records);
    save_artifacts(out_dir, "final.ckpt", &checkpoint, &metrics)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffusion::masked_loss_and_grads;
    use crate::gf2::BinaryMatrix;
    use crate::noise::generate_dataset;
    use crate::tensor::gradcheck::max_relative_error;

    /// Two noisy rounds of a two-check toy: 4 × 5 H over n_c = 2.
    fn two_round_model() -> CodeModel {
        let h = BinaryMatrix::from_rows(&[
            [1u8, 1, 0, 0, 0],
            [0, 1, 1, 0, 0],
            [0, 0, 1, 1, 1],
            [0, 0, 0, 0, 1],
        ])
        .unwrap();
        let l = BinaryMatrix::from_rows(&[[1u8, 0, 0, 1, 0], [0, 0, 1, 0, 1]]).unwrap();
        CodeModel::new(h, l, vec![0.1, 0.15, 0.2, 0.12, 0.08], 2, 1).unwrap()
    }

    fn circuit_net() -> MaskedNet<f64> {
        let model = two_round_model();
        let cfg = MaskedConfig {
            n_l: 2,
            n_c: 2,
            rounds: 1,
            n_dl: 1,
            n_el: 1,
            n_h: 2,
            d_m: 8,
            d_f: 8,
            steps: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = MaskedNet::new(cfg, Some(&build_structural(&model)), &mut rng).unwrap();
        for (_, t) in net.params.iter_mut() {
            *t = crate::tensor::Tensor::randn(t.shape(), 0.5, &mut rng);
        }
        net
    }

    fn samples(n: usize, seed: u64) -> Vec<Sample> {
        let model = two_round_model();
        generate_dataset(&model, n, seed, true).collect()
    }

    #[test]
    fn final_stage_equals_plain_masked_loss() {
        let net = circuit_net();
        let data = samples(6, 1);
        let schedule = MaskedSchedule::new(2).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let staged = staged_loss(&net, &data, 1, 1, &mut a).unwrap();
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let targets: Vec<&BinaryVector> = data.iter().map(|s| &s.l).collect();
        let batch = MaskedBatch::draw(&targets, schedule, &mut b).unwrap();
        let syn: Vec<&BinaryVector> = data.iter().map(|s| &s.s).collect();
        let (plain, _) = masked_loss_and_grads(&net, &syn, &batch, None).unwrap();
        assert!((staged - plain).abs() < 1e-12, "{staged} vs {plain}");
    }

    #[test]
    fn staged_gradient_is_sum_of_round_gradients() {
        let net = circuit_net();
        let data = samples(3, 2);
        let syn: Vec<&BinaryVector> = data.iter().map(|s| &s.s).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches =
            draw_staged(&data, 0, 1, 1, MaskedSchedule::new(2).unwrap(), &mut rng).unwrap();
        let (total, grads) = staged_loss_and_grads(&net, &syn, &batches).unwrap();
        let mut sum = 0.0;
        for (r, b) in &batches {
            let (l, g) = masked_loss_and_grads(&net, &syn, b, Some(*r)).unwrap();
            sum += l;
            for ((_, a), (_, c)) in grads.iter().zip(g.iter()) {
                assert_eq!(a.shape(), c.shape());
            }
        }
        assert!((total - sum).abs() < 1e-12);
        // finite differences on the summed objective
        let names: Vec<String> = net.params.names().cloned().collect();
        let mut ts: Vec<_> = net.params.iter().map(|(_, t)| t.clone()).collect();
        let gs: Vec<_> = grads.iter().map(|(_, t)| t.clone()).collect();
        let err = max_relative_error(&mut ts, &gs, 1e-4, |ts| {
            let mut probe = net.clone();
            for (n, t) in names.iter().zip(ts) {
                *probe.params.get_mut(n).unwrap() = t.clone();
            }
            batches
                .iter()
                .map(|(r, b)| masked_loss_and_grads(&probe, &syn, b, Some(*r)).unwrap().0)
                .sum()
        });
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn zero_error_samples_train_towards_zero_targets() {
        let zero = Sample {
            e: BinaryVector::zeros(5),
            s: BinaryVector::zeros(4),
            l: BinaryVector::zeros(2),
            intermediates: Some(vec![BinaryVector::zeros(2); 2]),
        };
        let batches = draw_staged(
            std::slice::from_ref(&zero),
            0,
            1,
            1,
            MaskedSchedule::new(2).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        for (_, b) in &batches {
            assert!(b.targets.iter().all(|&t| t == 0.0));
        }
        let missing = Sample {
            intermediates: None,
            ..zero
        };
        assert!(draw_staged(
            std::slice::from_ref(&missing),
            0,
            1,
            1,
            MaskedSchedule::new(2).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
        assert!(draw_staged(
            &[missing],
            1,
            1,
            1,
            MaskedSchedule::new(2).unwrap(),
            &mut ChaCha8Rng::seed_from_u64(0)
        )
        .is_ok());
    }

    #[test]
    fn plan_validation() {
        let lr = LrSchedule::Constant { lr: 1e-3 };
        let stage = |r1, r2| Stage {
            r1,
            r2,
            iterations: 1,
            lr,
        };
        assert!(StagePlan {
            stages: vec![stage(0, 1), stage(1, 1)]
        }
        .validate(1)
        .is_ok());
        assert!(StagePlan {
            stages: vec![stage(0, 1)]
        }
        .validate(1)
        .is_err());
        assert!(StagePlan {
            stages: vec![stage(1, 0), stage(1, 1)]
        }
        .validate(1)
        .is_err());
        assert!(StagePlan {
            stages: vec![stage(2, 2)]
        }
        .validate(1)
        .is_err());
        assert!(StagePlan::default().validate(3).is_ok());
    }

    fn toy_config(iterations: usize) -> TrainConfig {
        TrainConfig::from_toml(&format!(
            r#"
seed = 5
p_train = 0.1
batch = 8
validation_interval = 10
validation_samples = 50
log_interval = 5

[model]
code = "toy422"

[network]
kind = "masked"
n_dl = 1
n_h = 2
d_m = 8
d_f = 8
steps = 4

[[stages]]
r1 = 0
r2 = 0
iterations = {iterations}
lr = {{ kind = "cosine", lo = 1e-4, hi = 1e-2, horizon = {iterations} }}
"#
        ))
        .unwrap()
    }

    #[test]
    fn zero_iteration_plan_keeps_initial_network() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_training(&toy_config(0), Some(dir.path())).unwrap();
        let init = Checkpoint::load(&dir.path().join("initial.ckpt")).unwrap();
        assert_eq!(out.checkpoint.params, init.params);
        assert!(out.metrics.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_training(&toy_config(25), Some(dir.path())).unwrap();
        let b = run_training(&toy_config(25), None).unwrap();
        assert_eq!(
            a.checkpoint.to_bytes().unwrap(),
            b.checkpoint.to_bytes().unwrap()
        );
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.len(), 5);
        assert!(a.metrics[1].val_ler.is_some() && a.metrics[0].val_ler.is_none());
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert!(csv.starts_with("iteration,loss,lr,val_ler\n"));
        for name in ["initial.ckpt", "stage0.ckpt", "final.ckpt"] {
            assert!(dir.path().join(name).exists());
        }
    }

    #[test]
    fn config_errors() {
        assert!(TrainConfig::from_toml("seed = 1").is_err());
        let mut cfg = toy_config(1);
        cfg.p_train = 1.5;
        assert!(cfg.validate().is_err());
        let text = toy_config(3).to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), toy_config(3));
        assert!(
            TrainConfig::from_toml(&text.replace("batch = 8", "batch = 8\nbogus = 1")).is_err()
        );
    }

    #[test]
    fn memorizes_sixteen_syndromes() {
        let cfg = MaskedConfig {
            n_l: 2,
            n_c: 4,
            rounds: 0,
            n_dl: 2,
            n_el: 0,
            n_h: 2,
            d_m: 16,
            d_f: 32,
            steps: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = MaskedNet::new(cfg, None, &mut rng).unwrap();
        let data: Vec<Sample> = (0..16u8)
            .map(|v| {
                let bits: Vec<u8> = (0..4).map(|k| v >> k & 1).collect();
                Sample {
                    e: BinaryVector::zeros(1),
                    s: BinaryVector::from_bits(&bits),
                    l: BinaryVector::from_bits(&[bits[0] ^ bits[1], bits[2] & bits[3]]),
                    intermediates: None,
                }
            })
            .collect();
        let hyper = AdamW {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut trainer = Trainer::new(Network::Masked(net), hyper);
        let sched = lr_schedule(LrKind::Cosine, 1e-4, 3e-3, 5000).unwrap();
        let mut recent = Vec::new();
        for it in 0..5000 {
            let loss = trainer.step(&data, 0, 0, sched.at(it), &mut rng).unwrap();
            if it >= 4900 {
                recent.push(loss);
            }
        }
        let mean = recent.iter().sum::<f64>() / recent.len() as f64;
        assert!(mean < 0.01, "final loss {mean}");
    }
}
