//! Experiment driver behind the `qdiff` binary.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use qdiff::baselines::{exact_mld, BaselineConfig, BpOsdDecoder};
use qdiff::codes::{build_structural, preset, CodeModel};
use qdiff::error::{Error, Result};
use qdiff::experiment::{
    check_network_compatible, evaluate, linear_fit, network_decoder, tsweep, write_results_csv,
    Decoder, EvalConfig, LerResult, ModelSpec, NoiseKind, ZeroDecoder,
};
use qdiff::nn::{export_attention, Checkpoint, Network};
use qdiff::noise::phenomenological_dem;
use qdiff::train::{run_training, TrainConfig};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Checkpoint(_) => EXIT_CONFIG,
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_OTHER,
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    MaskedDf,
    ContinuousDf,
    /// Masked network decoded in a single step.
    Lr,
    BpOsd,
    Mld,
    Zero,
}

impl DecoderKind {
    pub fn label(self) -> &'static str {
        match self {
            DecoderKind::MaskedDf => "masked-df",
            DecoderKind::ContinuousDf => "continuous-df",
            DecoderKind::Lr => "lr",
            DecoderKind::BpOsd => "bp-osd",
            DecoderKind::Mld => "mld",
            DecoderKind::Zero => "zero",
        }
    }

    fn neural(self) -> bool {
        matches!(
            self,
            DecoderKind::MaskedDf | DecoderKind::ContinuousDf | DecoderKind::Lr
        )
    }
}

fn default_samples() -> usize {
    10_000
}

fn default_latency_samples() -> usize {
    200
}

/// Evaluation settings, read from TOML and then overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub p: Vec<f64>,
    pub decoder: DecoderKind,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub t_inf: Option<usize>,
    #[serde(default)]
    pub t_list: Vec<usize>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_latency_samples")]
    pub latency_samples: usize,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.samples == 0 {
            return Err(config_error("sample budget must be at least 1"));
        }
        if self.p.is_empty() {
            return Err(config_error("p list is empty"));
        }
        if let Some(&p) = self.p.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(config_error(format!("p = {p} outside (0,1)")));
        }
        if self.decoder.neural() && self.checkpoint.is_none() {
            return Err(config_error(format!(
                "{} needs a checkpoint",
                self.decoder.label()
            )));
        }
        if self.decoder == DecoderKind::Lr && self.t_inf.is_some_and(|t| t != 1) {
            return Err(config_error("lr mode decodes in one step"));
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            latency_samples: self.latency_samples,
            ..EvalConfig::new(self.samples, self.seed)
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qdiff",
    version,
    about = "Diffusion decoders for quantum LDPC codes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Logical error rate and latency of one decoder over a list of p.
    Eval(EvalArgs),
    /// Masked-decoder evaluation for several T_inf from one checkpoint.
    Tsweep(TsweepArgs),
    /// Train a network from a TOML config.
    Train(TrainArgs),
    /// Dump attention matrices and the code's J matrix as JSON.
    ExportAttention(ExportArgs),
    /// Write a phenomenological QDEM file.
    GenDem(GenDemArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Code preset (bb72, bb144, toy422, steane).
    #[arg(long)]
    pub code: Option<String>,
    /// QDEM file instead of a preset.
    #[arg(long)]
    pub dem: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub noise: Option<NoiseArg>,
    #[arg(long)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Depolarizing,
    Phenomenological,
}

impl ModelArgs {
    fn apply(&self, spec: &mut ModelSpec) {
        if let Some(c) = &self.code {
            spec.code = Some(c.clone());
            spec.dem = None;
        }
        if let Some(d) = &self.dem {
            spec.dem = Some(d.clone());
            spec.code = None;
        }
        if let Some(n) = self.noise {
            spec.noise = match n {
                NoiseArg::Depolarizing => NoiseKind::Depolarizing,
                NoiseArg::Phenomenological => NoiseKind::Phenomenological,
            };
        }
        if let Some(r) = self.rounds {
            spec.rounds = r;
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// TOML experiment config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated physical error rates.
    #[arg(long, value_delimiter = ',')]
    pub p: Vec<f64>,
    #[arg(long, value_enum)]
    pub decoder: Option<DecoderKind>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub t_inf: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub latency_samples: Option<usize>,
    #[arg(long)]
    pub osd_order: Option<usize>,
    /// Result CSV path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write results with run metadata as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TsweepArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
    /// Comma-separated T_inf values.
    #[arg(long, value_delimiter = ',')]
    pub t_list: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub p_train: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Rate used to build the model; only the structure matters.
    #[arg(long, default_value_t = 0.01)]
    pub p: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenDemArgs {
    #[arg(long)]
    pub code: String,
    #[arg(long)]
    pub p: f64,
    #[arg(long)]
    pub rounds: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn read_config(path: Option<&Path>) -> Result<Option<ExperimentConfig>> {
    path.map(|p| ExperimentConfig::from_toml(&std::fs::read_to_string(p)?))
        .transpose()
}

/// Merges the optional config file with flag overrides.
pub fn resolve_experiment(args: &EvalArgs, t_list: &[usize]) -> Result<ExperimentConfig> {
    let mut cfg = match read_config(args.config.as_deref())? {
        Some(c) => c,
        None => ExperimentConfig {
            model: ModelSpec::default(),
            p: vec![],
            decoder: args
                .decoder
                .ok_or_else(|| config_error("no decoder given"))?,
            checkpoint: None,
            t_inf: None,
            t_list: vec![],
            samples: default_samples(),
            seed: 0,
            latency_samples: default_latency_samples(),
            baseline: BaselineConfig::default(),
            output: None,
            json: None,
        },
    };
    args.model.apply(&mut cfg.model);
    if !args.p.is_empty() {
        cfg.p = args.p.clone();
    }
    if let Some(d) = args.decoder {
        cfg.decoder = d;
    }
    if let Some(c) = &args.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if args.t_inf.is_some() {
        cfg.t_inf = args.t_inf;
    }
    if !t_list.is_empty() {
        cfg.t_list = t_list.to_vec();
    }
    if let Some(s) = args.samples {
        cfg.samples = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.latency_samples {
        cfg.latency_samples = s;
    }
    if let Some(o) = args.osd_order {
        cfg.baseline.osd_order = o;
    }
    if let Some(o) = &args.output {
        cfg.output = Some(o.clone());
    }
    if let Some(j) = &args.json {
        cfg.json = Some(j.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_network(path: &Path, kind: DecoderKind) -> Result<Network> {
    let net = Checkpoint::load(path)?.network()?;
    let ok = match (&net, kind) {
        (Network::Masked(_), DecoderKind::MaskedDf | DecoderKind::Lr) => true,
        (Network::Continuous(_), DecoderKind::ContinuousDf) => true,
        _ => false,
    };
    if !ok {
        return Err(config_error(format!(
            "checkpoint {} does not hold a {} network",
            path.display(),
            kind.label()
        )));
    }
    Ok(net)
}

fn eval_one(
    cfg: &ExperimentConfig,
    net: Option<&Network>,
    model: &CodeModel,
    p: f64,
) -> Result<LerResult> {
    let label = cfg.decoder.label();
    let ec = cfg.eval_config();
    match cfg.decoder {
        DecoderKind::MaskedDf | DecoderKind::ContinuousDf | DecoderKind::Lr => {
            let net = net.expect("neural decoder has a network");
            check_network_compatible(net, model)?;
            let t = if cfg.decoder == DecoderKind::Lr {
                Some(1)
            } else {
                cfg.t_inf
            };
            let dec = network_decoder(net, t)?;
            let t_col = match net {
                Network::Masked(m) => Some(t.unwrap_or(m.config.steps.min(m.config.n_l))),
                Network::Continuous(c) => Some(c.config.steps),
            };
            evaluate(model, dec.as_ref(), label, p, t_col, &ec)
        }
        DecoderKind::BpOsd => evaluate(
            model,
            &BpOsdDecoder::new(model, cfg.baseline)?,
            label,
            p,
            None,
            &ec,
        ),
        DecoderKind::Mld => evaluate(model, &exact_mld(model)?, label, p, None, &ec),
        DecoderKind::Zero => {
            let d: &dyn Decoder = &ZeroDecoder(model.n_l());
            evaluate(model, d, label, p, None, &ec)
        }
    }
}

/// One result row per physical error rate.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<LerResult>> {
    cfg.validate()?;
    let net = match &cfg.checkpoint {
        Some(path) if cfg.decoder.neural() => Some(load_network(path, cfg.decoder)?),
        _ => None,
    };
    cfg.p
        .iter()
        .map(|&p| eval_one(cfg, net.as_ref(), &cfg.model.build(p)?, p))
        .collect()
}

/// One result row per `(p, T_inf)` pair from a single masked checkpoint.
pub fn cmd_tsweep(cfg: &ExperimentConfig) -> Result<Vec<LerResult>> {
    cfg.validate()?;
    if cfg.decoder != DecoderKind::MaskedDf {
        return Err(config_error("tsweep needs the masked-df decoder"));
    }
    let Network::Masked(net) =
        load_network(cfg.checkpoint.as_deref().expect("validated"), cfg.decoder)?
    else {
        unreachable!("kind checked on load")
    };
    let mut rows = Vec::new();
    for &p in &cfg.p {
        rows.extend(tsweep(
            &cfg.model.build(p)?,
            &net,
            p,
            &cfg.t_list,
            &cfg.eval_config(),
        )?);
    }
    Ok(rows)
}

/// Attention bundle with the structural `J` of the model the network serves.
pub fn cmd_export_attention(checkpoint: &Path, model: &CodeModel) -> Result<serde_json::Value> {
    let net = Checkpoint::load(checkpoint)?.network()?;
    check_network_compatible(&net, model)?;
    let Network::Masked(m) = net else {
        return Err(config_error("attention export needs a masked network"));
    };
    export_attention(&m, &build_structural(model))
}

pub fn cmd_gen_dem(code: &str, p: f64, rounds: usize) -> Result<String> {
    if rounds == 0 {
        return Err(config_error("gen-dem needs rounds ≥ 1"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(config_error(format!("p = {p} outside (0,1)")));
    }
    Ok(phenomenological_dem(&preset(code)?, p, rounds)?.to_text())
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn emit_results(
    cfg: &ExperimentConfig,
    rows: &[LerResult],
    extra: serde_json::Value,
) -> Result<()> {
    let mut csv = Vec::new();
    write_results_csv(rows, &mut csv)?;
    write_output(cfg.output.as_deref(), &csv)?;
    if let Some(path) = &cfg.json {
        let doc = serde_json::json!({
            "config": cfg,
            "results": rows,
            "analysis": extra,
        });
        std::fs::write(path, serde_json::to_vec_pretty(&doc)?)?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Eval(args) => {
            let cfg = resolve_experiment(&args, &[])?;
            let rows = cmd_eval(&cfg)?;
            emit_results(&cfg, &rows, serde_json::Value::Null)
        }
        Command::Tsweep(args) => {
            let cfg = resolve_experiment(&args.eval, &args.t_list)?;
            let rows = cmd_tsweep(&cfg)?;
            let xs: Vec<f64> = rows.iter().map(|r| r.t_inf.unwrap_or(0) as f64).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.latency_mean_us).collect();
            let fit = if cfg.p.len() == 1 && rows.len() >= 2 {
                let (slope, intercept, r2) = linear_fit(&xs, &ys);
                serde_json::json!({ "latency_slope_us": slope, "latency_intercept_us": intercept, "r2": r2 })
            } else {
                serde_json::Value::Null
            };
            emit_results(&cfg, &rows, fit)
        }
        Command::Train(args) => {
            let mut cfg = TrainConfig::from_toml(&std::fs::read_to_string(&args.config)?)?;
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(p) = args.p_train {
                cfg.p_train = p;
            }
            std::fs::create_dir_all(&args.out_dir)?;
            std::fs::write(args.out_dir.join("config.toml"), cfg.to_toml()?)?;
            let out = run_training(&cfg, Some(&args.out_dir))?;
            let summary = serde_json::json!({
                "seed": cfg.seed,
                "iterations": cfg.plan().total_iterations(),
                "parameters": out.checkpoint.config.param_count(),
                "stages": out.checkpoint.stages,
                "final": out.metrics.last(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Command::ExportAttention(args) => {
            let mut spec = ModelSpec::default();
            args.model.apply(&mut spec);
            let bundle = cmd_export_attention(&args.checkpoint, &spec.build(args.p)?)?;
            write_output(args.output.as_deref(), &serde_json::to_vec_pretty(&bundle)?)
        }
        Command::GenDem(args) => {
            let text = cmd_gen_dem(&args.code, args.p, args.rounds)?;
            write_output(args.output.as_deref(), text.as_bytes())
        }
    }
}
