//! Logical-error-rate evaluation, latency measurement and T-sweeps.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BpOsdDecoder, EnumeratedPosterior};
use crate::codes::{code_capacity_model, preset, CodeModel};
use crate::diffusion::{continuous_decode_batch, masked_decode_batch, ContinuousSchedule};
use crate::error::{Error, Result};
use crate::gf2::BinaryVector;
use crate::nn::{ContinuousNet, MaskedConfig, MaskedNet, Network};
use crate::noise::{phenomenological_dem, rng_stream, DetectorErrorModel, Sampler};

/// Version of the result CSV layout.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Code-capacity depolarizing noise.
    #[default]
    Depolarizing,
    Phenomenological,
}

/// Where a decoding model comes from: a code preset with a noise family,
/// or a QDEM file with fixed event probabilities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub dem: Option<PathBuf>,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default)]
    pub rounds: usize,
}

impl ModelSpec {
    pub fn preset(code: &str) -> Self {
        Self {
            code: Some(code.to_string()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.code, &self.dem) {
            (Some(_), Some(_)) => Err(Error::config(
                "give either a code preset or a DEM file, not both",
            )),
            (None, None) => Err(Error::config("no code preset or DEM file given")),
            (Some(_), None) => match self.noise {
                NoiseKind::Depolarizing if self.rounds != 0 => {
                    Err(Error::config("code-capacity noise has no rounds"))
                }
                NoiseKind::Phenomenological if self.rounds == 0 => {
                    Err(Error::config("phenomenological noise needs rounds ≥ 1"))
                }
                _ => Ok(()),
            },
            (None, Some(_)) => Ok(()),
        }
    }

    /// Builds the model at physical rate `p`; DEM files keep their own
    /// probabilities.
    pub fn build(&self, p: f64) -> Result<CodeModel> {
        self.validate()?;
        if let Some(path) = &self.dem {
            let text = std::fs::read_to_string(path)?;
            return DetectorErrorModel::parse(&text)?.to_code_model();
        }
        let code = preset(self.code.as_deref().expect("validated"))?;
        match self.noise {
            NoiseKind::Depolarizing => code_capacity_model(&code, p),
            NoiseKind::Phenomenological => {
                let mut model = phenomenological_dem(&code, p, self.rounds)?.to_code_model()?;
                model.x_checks_per_round = Some(code.hx.rows());
                model.validate()?;
                Ok(model)
            }
        }
    }
}

/// Maps syndromes to logical estimates.
pub trait Decoder: Sync {
    fn decode_batch(&self, syndromes: &[&BinaryVector]) -> Result<Vec<BinaryVector>>;

    fn decode(&self, s: &BinaryVector) -> Result<BinaryVector> {
        Ok(self.decode_batch(&[s])?.remove(0))
    }
}

/// Greedy masked diffusion with `T_inf` reverse steps; `T_inf = 1` is the
/// logistic-regression mode.
pub struct MaskedDecoder<'a> {
    pub net: &'a MaskedNet,
    pub t_inf: usize,
}

impl Decoder for MaskedDecoder<'_> {
    fn decode_batch(&self, syndromes: &[&BinaryVector]) -> Result<Vec<BinaryVector>> {
        masked_decode_batch(self.net, syndromes, self.t_inf)
    }
}

pub struct ContinuousDecoder<'a> {
    pub net: &'a ContinuousNet,
    pub schedule: ContinuousSchedule,
}

impl Decoder for ContinuousDecoder<'_> {
    fn decode_batch(&self, syndromes: &[&BinaryVector]) -> Result<Vec<BinaryVector>> {
        continuous_decode_batch(self.net, syndromes, &self.schedule)
    }
}

impl Decoder for EnumeratedPosterior {
    fn decode_batch(&self, syndromes: &[&BinaryVector]) -> Result<Vec<BinaryVector>> {
        Ok(syndromes
            .iter()
            .map(|s| EnumeratedPosterior::decode(self, s))
            .collect())
    }
}

impl Decoder for BpOsdDecoder {
    fn decode_batch(&self, syndromes: &[&BinaryVector]) -> Result<Vec<BinaryVector>> {
        syndromes
            .iter()
            .map(|s| BpOsdDecoder::decode(self, s))
            .collect()
    }
}

/// Always predicts `l = 0`.
pub struct ZeroDecoder(pub usize);

impl Decoder for ZeroDecoder {
    fn decode_batch(&self, syndromes: &[&BinaryVector]) -> Result<Vec<BinaryVector>> {
        Ok(syndromes
            .iter()
            .map(|_| BinaryVector::zeros(self.0))
            .collect())
    }
}

/// Builds the decoder matching a loaded network.
pub fn network_decoder<'a>(
    net: &'a Network,
    t_inf: Option<usize>,
) -> Result<Box<dyn Decoder + 'a>> {
    Ok(match net {
        Network::Masked(m) => {
            let t = t_inf.unwrap_or(m.config.steps.min(m.config.n_l));
            Box::new(MaskedDecoder { net: m, t_inf: t })
        }
        Network::Continuous(c) => {
            if t_inf.is_some_and(|t| t != c.config.steps) {
                return Err(Error::config(
                    "continuous decoding uses the training step count",
                ));
            }
            Box::new(ContinuousDecoder {
                net: c,
                schedule: ContinuousSchedule::linear(c.config.steps)?,
            })
        }
    })
}

/// Checks that a masked network was built for `model`.
pub fn check_masked_compatible(config: &MaskedConfig, model: &CodeModel) -> Result<()> {
    if config.n_l != model.n_l() || config.n_s() != model.n_s() || config.n_c != model.n_c {
        return Err(Error::config(format!(
            "network expects n_l = {}, n_s = {}, n_c = {}; model has {}, {}, {}",
            config.n_l,
            config.n_s(),
            config.n_c,
            model.n_l(),
            model.n_s(),
            model.n_c
        )));
    }
    Ok(())
}

pub fn check_network_compatible(net: &Network, model: &CodeModel) -> Result<()> {
    match net {
        Network::Masked(m) => check_masked_compatible(&m.config, model),
        Network::Continuous(c) => {
            if c.config.n_l != model.n_l() || c.config.n_s != model.n_s() {
                return Err(Error::config(format!(
                    "network expects n_l = {}, n_s = {}; model has {}, {}",
                    c.config.n_l,
                    c.config.n_s,
                    model.n_l(),
                    model.n_s()
                )));
            }
            Ok(())
        }
    }
}

/// 95% Wilson score interval for `failures` out of `n`.
pub fn wilson_interval(failures: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n_f = n as f64;
    let p = failures as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let centre = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if failures == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if failures == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LerResult {
    pub schema: u32,
    pub p: f64,
    pub decoder: String,
    pub t_inf: Option<usize>,
    pub samples: usize,
    pub failures: usize,
    pub ler: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub latency_mean_us: f64,
    pub latency_p50_us: f64,
    pub latency_p99_us: f64,
    pub latency_max_us: f64,
}

impl LerResult {
    /// Standard error of the LER estimate.
    pub fn sigma(&self) -> f64 {
        (self.ler * (1.0 - self.ler) / self.samples as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub seed: u64,
    /// Samples per independently seeded shard.
    #[serde(default = "default_shard")]
    pub shard: usize,
    /// Shots decoded one at a time for the latency distribution.
    #[serde(default = "default_latency")]
    pub latency_samples: usize,
}

fn default_shard() -> usize {
    4096
}

fn default_latency() -> usize {
    200
}

impl EvalConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            shard: default_shard(),
            latency_samples: default_latency(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("sample budget must be at least 1"));
        }
        if self.shard == 0 {
            return Err(Error::config("shard size must be at least 1"));
        }
        Ok(())
    }
}

const DECODE_CHUNK: usize = 256;
const LATENCY_STREAM: u64 = u64::MAX;

/// Failures among `count` shots of shard `index`.
fn shard_failures(
    model: &CodeModel,
    sampler: &Sampler,
    decoder: &dyn Decoder,
    seed: u64,
    index: usize,
    count: usize,
) -> Result<usize> {
    let mut rng = rng_stream(seed, index as u64);
    let samples: Vec<_> = (0..count)
        .map(|_| sampler.sample_checked(&mut rng, model))
        .collect();
    let mut failures = 0;
    for chunk in samples.chunks(DECODE_CHUNK) {
        let syn: Vec<&BinaryVector> = chunk.iter().map(|s| &s.s).collect();
        let out = decoder.decode_batch(&syn)?;
        failures += chunk.iter().zip(&out).filter(|(s, l)| &s.l != *l).count();
    }
    Ok(failures)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Decode-only wall-clock times of single-shot decoding, in microseconds.
pub fn measure_latency(
    model: &CodeModel,
    decoder: &dyn Decoder,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sampler = Sampler::new(model);
    let mut rng = rng_stream(seed, LATENCY_STREAM);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let sample = sampler.sample(&mut rng);
        let start = Instant::now();
        let l = decoder.decode(&sample.s)?;
        out.push(start.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(l);
    }
    Ok(out)
}

/// Monte-Carlo logical error rate: a shot fails when any logical bit
/// differs. Shards are seeded independently of the thread count.
pub fn evaluate(
    model: &CodeModel,
    decoder: &dyn Decoder,
    label: &str,
    p: f64,
    t_inf: Option<usize>,
    config: &EvalConfig,
) -> Result<LerResult> {
    config.validate()?;
    let sampler = Sampler::new(model);
    let shards = config.samples.div_ceil(config.shard);
    let counts: Vec<usize> = (0..shards)
        .into_par_iter()
        .map(|i| {
            let count = config.shard.min(config.samples - i * config.shard);
            shard_failures(model, &sampler, decoder, config.seed, i, count)
        })
        .collect::<Result<_>>()?;
    let failures = counts.iter().sum();
    let mut lat = measure_latency(model, decoder, config.latency_samples, config.seed)?;
    lat.sort_by(f64::total_cmp);
    let mean = if lat.is_empty() {
        0.0
    } else {
        lat.iter().sum::<f64>() / lat.len() as f64
    };
    let (ci_low, ci_high) = wilson_interval(failures, config.samples);
    Ok(LerResult {
        schema: CSV_SCHEMA_VERSION,
        p,
        decoder: label.to_string(),
        t_inf,
        samples: config.samples,
        failures,
        ler: failures as f64 / config.samples as f64,
        ci_low,
        ci_high,
        latency_mean_us: mean,
        latency_p50_us: percentile(&lat, 0.5),
        latency_p99_us: percentile(&lat, 0.99),
        latency_max_us: lat.last().copied().unwrap_or(0.0),
    })
}

/// One evaluation per `T_inf` from the same masked network.
pub fn tsweep(
    model: &CodeModel,
    net: &MaskedNet,
    p: f64,
    t_list: &[usize],
    config: &EvalConfig,
) -> Result<Vec<LerResult>> {
    check_masked_compatible(&net.config, model)?;
    if t_list.is_empty() {
        return Err(Error::config("empty T list"));
    }
    t_list
        .iter()
        .map(|&t| {
            evaluate(
                model,
                &MaskedDecoder { net, t_inf: t },
                "masked-df",
                p,
                Some(t),
                config,
            )
        })
        .collect()
}

/// Least-squares line `y = a·x + b` with its coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    (a, b, r2)
}

pub fn write_results_csv(rows: &[LerResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(input: impl std::io::Read) -> Result<Vec<LerResult>> {
    let mut r = csv::Reader::from_reader(input);
    let rows: Vec<LerResult> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    if let Some(bad) = rows.iter().find(|r| r.schema != CSV_SCHEMA_VERSION) {
        return Err(Error::config(format!(
            "unsupported result schema {}",
            bad.schema
        )));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::exact_mld;

    #[test]
    fn wilson_contains_estimate() {
        for (f, n) in [(0, 10), (3, 10), (10, 10), (17, 100_000)] {
            let (lo, hi) = wilson_interval(f, n);
            let p = f as f64 / n as f64;
            assert!(lo <= p && p <= hi && (0.0..=1.0).contains(&lo) && hi <= 1.0);
        }
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
    }

    #[test]
    fn model_spec_validation() {
        assert!(ModelSpec::default().build(0.1).is_err());
        let both = ModelSpec {
            code: Some("toy422".into()),
            dem: Some("x.qdem".into()),
            ..Default::default()
        };
        assert!(both.validate().is_err());
        let bad_rounds = ModelSpec {
            rounds: 2,
            ..ModelSpec::preset("toy422")
        };
        assert!(bad_rounds.validate().is_err());
        let phen = ModelSpec {
            noise: NoiseKind::Phenomenological,
            rounds: 2,
            ..ModelSpec::preset("toy422")
        };
        let m = phen.build(0.01).unwrap();
        assert_eq!(m.rounds, 2);
        assert_eq!(m.x_check_rows().unwrap(), vec![0, 2, 4]);
        assert!(ModelSpec::preset("nope").build(0.1).is_err());
    }

    #[test]
    fn oracle_decoders_match_enumeration() {
        let model = ModelSpec::preset("toy422").build(0.1).unwrap();
        let post = exact_mld(&model).unwrap();
        let cfg = EvalConfig {
            samples: 200_000,
            seed: 3,
            shard: 10_000,
            latency_samples: 10,
        };
        let r = evaluate(&model, &post, "mld", 0.1, None, &cfg).unwrap();
        assert!(
            (r.ler - post.ler()).abs() < 4.0 * r.sigma(),
            "{} vs {}",
            r.ler,
            post.ler()
        );
        let z = evaluate(&model, &ZeroDecoder(model.n_l()), "zero", 0.1, None, &cfg).unwrap();
        let want = post.nonzero_logical_probability();
        assert!(
            (z.ler - want).abs() < 4.0 * z.sigma(),
            "{} vs {want}",
            z.ler
        );
        assert!(evaluate(&model, &post, "mld", 0.1, None, &EvalConfig::new(0, 1)).is_err());
    }

    #[test]
    fn evaluation_is_repeatable_and_csv_round_trips() {
        let model = ModelSpec::preset("toy422").build(0.2).unwrap();
        let post = exact_mld(&model).unwrap();
        let cfg = EvalConfig {
            samples: 5000,
            seed: 8,
            shard: 700,
            latency_samples: 5,
        };
        let a = evaluate(&model, &post, "mld", 0.2, None, &cfg).unwrap();
        let b = evaluate(&model, &post, "mld", 0.2, None, &cfg).unwrap();
        assert_eq!(a.failures, b.failures);
        let mut buf = Vec::new();
        write_results_csv(std::slice::from_ref(&a), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("schema,p,decoder,t_inf,samples,failures,ler,"));
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), vec![a]);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let (a, b, r2) = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]);
        assert!((a - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
