//! Command-line front end. Every command is a function of its input files,
//! flags and seed, and writes a [`RunManifest`] next to its primary output.
//!
//! Exit codes: 0 success, 2 configuration or schema error, 3 I/O error,
//! 4 numeric failure.

pub mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::causal_api::{self, row_seed, CausalError, DEFAULT_N_MC};
use crate::cfm_train::{self, TrainConfig, TrainError};
use crate::kvfile::KvError;
use crate::metrics::{self, EvalConfig, MetricError, MetricsReport, METRIC_NAMES};
use crate::ode_engine::{OdeConfig, OdeError};
use crate::scm_data::{
    self, fmt_real, generate_ihdp_like, kfold_indices, standardize, CausalDataset, DataError,
};
use crate::velocity_net::{FlowModel, NetError, TrainMeta};

pub use manifest::{sha256_file, FileDigest, RunManifest};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match &e {
            DataError::Io { .. } => EXIT_IO,
            DataError::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => EXIT_IO,
            DataError::NonFinite { .. } => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        let code = match &e {
            NetError::Io(_) => EXIT_IO,
            NetError::Num(_) => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<OdeError> for CliError {
    fn from(e: OdeError) -> Self {
        match e {
            OdeError::Net(n) => n.into(),
            OdeError::Config(m) => Self::config(m),
            e @ OdeError::NonFinite { .. } => Self {
                code: EXIT_NUMERIC,
                message: e.to_string(),
            },
        }
    }
}

impl From<CausalError> for CliError {
    fn from(e: CausalError) -> Self {
        match e {
            CausalError::Ode(o) => o.into(),
            e => Self::config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Num(_) => Self {
                code: EXIT_NUMERIC,
                message: e.to_string(),
            },
            TrainError::Data(d) => d.into(),
            TrainError::Net(n) => n.into(),
            TrainError::Io(io) => Self {
                code: EXIT_IO,
                message: io.to_string(),
            },
            e => Self::config(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Causal(c) => c.into(),
            MetricError::Io(io) => Self {
                code: EXIT_IO,
                message: io.to_string(),
            },
            MetricError::NonFinite => Self {
                code: EXIT_NUMERIC,
                message: e.to_string(),
            },
            e => Self::config(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "counterflow", version, about = "Counterfactual inference with conditional flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth columns.
    Generate(GenerateArgs),
    /// Train a flow model on a dataset.
    Train(TrainArgs),
    /// Per-row predictions from a trained model.
    Predict(PredictArgs),
    /// In- and out-of-sample metrics.
    Eval(EvalArgs),
    /// Latent-invariance MMD test.
    A3test(A3Args),
}

#[derive(Debug, Clone, clap::Args)]
pub struct GenerateArgs {
    /// Generator config (`key = value`); defaults to 747 rows and 25 covariates.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed; 0 when neither is given.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub net_config: Option<PathBuf>,
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Model file; the loss history goes to `<stem>.loss.csv` beside it.
    #[arg(long)]
    pub model_out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictMode {
    /// Potential-outcome samples under the row's treatment.
    Po,
    /// Counterfactual outcome under the other treatment.
    Cf,
    /// Monte Carlo CATE.
    Cate,
    /// Most likely of the sampled potential outcomes.
    Map,
    /// Log density of the observed outcome.
    Density,
}

impl PredictMode {
    fn name(self) -> &'static str {
        match self {
            Self::Po => "po",
            Self::Cf => "cf",
            Self::Cate => "cate",
            Self::Map => "map",
            Self::Density => "density",
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub mode: PredictMode,
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per row for po, cate and map.
    #[arg(long, default_value_t = DEFAULT_N_MC)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Report document; a flat table goes to `<stem>.metrics.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cross-validate over the pooled train and test rows, retraining the
    /// model's configuration on each fold.
    #[arg(long)]
    pub folds: Option<usize>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct A3Args {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(m) => {
            for o in &m.outputs {
                println!("wrote {}", o.path);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

pub fn execute(cmd: &Command) -> Result<RunManifest, CliError> {
    match cmd {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::A3test(a) => cmd_a3test(a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_model(path: &Path) -> Result<FlowModel, CliError> {
    let text = read_text(path)?;
    FlowModel::from_json(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<CausalDataset, CliError> {
    scm_data::load_csv(path).map_err(|e| {
        let mut err = CliError::from(e);
        if !err.message.starts_with(&path.display().to_string()) {
            err.message = format!("{}: {}", path.display(), err.message);
        }
        err
    })
}

fn check_dims(model: &FlowModel, ds: &CausalDataset) -> Result<(), CliError> {
    if model.d_x() != ds.d_x() {
        return Err(CliError::config(format!(
            "dimension mismatch: model has d_x = {}, data has d_x = {}",
            model.d_x(),
            ds.d_x()
        )));
    }
    Ok(())
}

fn digest(path: &Path) -> Result<FileDigest, CliError> {
    FileDigest::of(path).map_err(|e| CliError::io(path, e))
}

/// Fills digests and timing, then writes the manifest beside `primary`.
fn finish(
    mut m: RunManifest,
    started: Instant,
    inputs: &[&Path],
    outputs: &[&Path],
    primary: &Path,
) -> Result<RunManifest, CliError> {
    m.inputs = inputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?;
    m.outputs = outputs.iter().map(|p| digest(p)).collect::<Result<_, _>>()?;
    m.wall_time_s = started.elapsed().as_secs_f64();
    let path = RunManifest::path_for(primary);
    m.write(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(m)
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut m = RunManifest::new("generate");
    let text = match &args.config {
        Some(p) => {
            m.config_paths.insert("config".into(), p.display().to_string());
            read_text(p)?
        }
        None => String::new(),
    };
    let mut cfg = config::dgp_from_kv(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    m.seeds.insert("seed".into(), cfg.seed);
    let ds = generate_ihdp_like(&cfg)?;
    ds.write_csv(&args.out)?;
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    finish(m, started, &inputs, &[&args.out], &args.out)
}

/// `<stem>.loss.csv` beside the model file.
pub fn loss_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("loss.csv")
}

/// Standardizes `ds`, trains, and bundles the scaler into the model.
pub fn fit_model(
    ds: &CausalDataset,
    net_cfg: &crate::velocity_net::NetConfig,
    train_cfg: &TrainConfig,
) -> Result<(FlowModel, cfm_train::TrainReport), CliError> {
    if !ds.has_both_arms() {
        return Err(CliError::config("training data must contain both treatment arms"));
    }
    let (model_ds, scaler) = standardize(ds)?;
    let (params, report) = cfm_train::train(&model_ds, net_cfg, train_cfg)?;
    let model = FlowModel {
        params,
        scaler,
        train_meta: TrainMeta {
            iters_run: report.iters_run,
            final_loss: Some(report.final_loss),
            seed: Some(train_cfg.seed),
            data_digest: None,
            train_config: Some(train_cfg.to_kv()),
        },
    };
    Ok((model, report))
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut m = RunManifest::new("train");
    let ds = load_data(&args.data)?;
    let net_text = match &args.net_config {
        Some(p) => {
            m.config_paths.insert("net_config".into(), p.display().to_string());
            read_text(p)?
        }
        None => String::new(),
    };
    let train_text = match &args.train_config {
        Some(p) => {
            m.config_paths.insert("train_config".into(), p.display().to_string());
            read_text(p)?
        }
        None => String::new(),
    };
    let net_cfg = config::net_from_kv(&net_text, ds.d_x())?;
    let train_cfg = TrainConfig::from_kv(&train_text)?;
    m.seeds.insert("train_seed".into(), train_cfg.seed);
    m.seeds.insert("init_seed".into(), net_cfg.init_seed);

    let (mut model, report) = fit_model(&ds, &net_cfg, &train_cfg)?;
    model.train_meta.data_digest = Some(digest(&args.data)?.sha256);
    model.save(&args.model_out)?;
    let loss = loss_path(&args.model_out);
    write_text(&loss, &report.loss_csv())?;

    let mut inputs = vec![args.data.as_path()];
    inputs.extend(args.net_config.as_deref());
    inputs.extend(args.train_config.as_deref());
    finish(m, started, &inputs, &[&args.model_out, &loss], &args.model_out)
}

/// Prediction rows as CSV text: `row,mode,value[,logp]`.
pub fn predict_csv(
    model: &FlowModel,
    ds: &CausalDataset,
    mode: PredictMode,
    n_samples: usize,
    seed: u64,
    ode: &OdeConfig,
) -> Result<String, CliError> {
    check_dims(model, ds)?;
    let with_logp = matches!(mode, PredictMode::Po | PredictMode::Map);
    let mut out = String::from(if with_logp { "row,mode,value,logp\n" } else { "row,mode,value\n" });
    let name = mode.name();
    for i in 0..ds.n() {
        let (x, a, y) = (ds.x_row(i), ds.a[i], ds.y[i]);
        let rs = row_seed(seed, i as u64);
        match mode {
            PredictMode::Po => {
                let set = causal_api::sample_po(model, x, a, n_samples, ode, rs)?;
                for (v, lp) in set.samples {
                    let _ = writeln!(out, "{i},{name},{},{}", fmt_real(v), fmt_real(lp));
                }
            }
            PredictMode::Map => {
                let set = causal_api::sample_po(model, x, a, n_samples, ode, rs)?;
                let k = causal_api::argmax_logp(&set.samples).ok_or(CausalError::NoSamples)?;
                let (v, lp) = set.samples[k];
                let _ = writeln!(out, "{i},{name},{},{}", fmt_real(v), fmt_real(lp));
            }
            PredictMode::Cf => {
                let v = causal_api::predict_counterfactual(model, y, x, a, ode)?;
                let _ = writeln!(out, "{i},{name},{}", fmt_real(v));
            }
            PredictMode::Cate => {
                let v = causal_api::estimate_cate(model, x, n_samples, ode, rs)?;
                let _ = writeln!(out, "{i},{name},{}", fmt_real(v));
            }
            PredictMode::Density => {
                let v = causal_api::log_density(model, y, x, a, ode)?;
                let _ = writeln!(out, "{i},{name},{}", fmt_real(v));
            }
        }
    }
    Ok(out)
}

pub fn cmd_predict(args: &PredictArgs) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut m = RunManifest::new(&format!("predict:{}", args.mode.name()));
    m.seeds.insert("seed".into(), args.seed);
    let model = load_model(&args.model)?;
    let ds = load_data(&args.data)?;
    let text = predict_csv(&model, &ds, args.mode, args.n_samples, args.seed, &OdeConfig::default())?;
    write_text(&args.out, &text)?;
    finish(m, started, &[&args.model, &args.data], &[&args.out], &args.out)
}

/// `<stem>.metrics.csv` beside the report document.
pub fn metrics_csv_path(out: &Path) -> PathBuf {
    out.with_extension("metrics.csv")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    /// Mean and sample standard deviation; `None` when empty.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldStat {
    #[serde(rename = "in")]
    pub in_sample: Option<MeanSd>,
    #[serde(rename = "out")]
    pub out_sample: Option<MeanSd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossValReport {
    pub folds: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, FoldStat>,
    pub per_fold: Vec<MetricsReport>,
}

impl CrossValReport {
    pub fn from_folds(seed: u64, per_fold: Vec<MetricsReport>) -> Self {
        let metrics = METRIC_NAMES
            .iter()
            .map(|&name| {
                let ins: Vec<f64> = per_fold.iter().filter_map(|r| r.get(name).in_sample).collect();
                let outs: Vec<f64> = per_fold.iter().filter_map(|r| r.get(name).out_sample).collect();
                let stat = FoldStat {
                    in_sample: MeanSd::of(&ins),
                    out_sample: MeanSd::of(&outs),
                };
                (name.to_owned(), stat)
            })
            .collect();
        Self {
            folds: per_fold.len(),
            seed,
            metrics,
            per_fold,
        }
    }

    /// `metric,in_mean,in_sd,out_mean,out_sd`.
    pub fn to_csv(&self) -> String {
        let cells = |v: Option<MeanSd>| match v {
            Some(s) => format!("{},{}", fmt_real(s.mean), fmt_real(s.sd)),
            None => ",".into(),
        };
        let mut s = String::from("metric,in_mean,in_sd,out_mean,out_sd\n");
        for (name, st) in &self.metrics {
            let _ = writeln!(s, "{name},{},{}", cells(st.in_sample), cells(st.out_sample));
        }
        s
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::config(e.to_string()))
}

/// K-fold cross-validation over `pool`: each fold retrains with the given
/// configs on the other folds and evaluates on itself.
pub fn cross_validate(
    pool: &CausalDataset,
    net_cfg: &crate::velocity_net::NetConfig,
    train_cfg: &TrainConfig,
    folds: usize,
    eval: &EvalConfig,
) -> Result<CrossValReport, CliError> {
    let parts = kfold_indices(pool.n(), folds, eval.seed)?;
    let mut reports = Vec::with_capacity(folds);
    for (k, test_idx) in parts.iter().enumerate() {
        let train_idx: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let (train, test) = (pool.subset(&train_idx), pool.subset(test_idx));
        let (model, _) = fit_model(&train, net_cfg, train_cfg)?;
        reports.push(metrics::evaluate_all(&model, &train, &test, eval)?);
    }
    Ok(CrossValReport::from_folds(eval.seed, reports))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut m = RunManifest::new("eval");
    m.seeds.insert("seed".into(), args.seed);
    let model = load_model(&args.model)?;
    let train = load_data(&args.train)?;
    let test = load_data(&args.test)?;
    check_dims(&model, &train)?;
    check_dims(&model, &test)?;
    let cfg = EvalConfig {
        seed: args.seed,
        ..EvalConfig::default()
    };
    let csv_path = metrics_csv_path(&args.out);
    match args.folds {
        None => {
            let report = metrics::evaluate_all(&model, &train, &test, &cfg)?;
            write_text(&args.out, &report.to_json()?)?;
            write_text(&csv_path, &report.to_csv())?;
        }
        Some(k) => {
            m.seeds.insert("folds".into(), k as u64);
            let train_cfg = match &model.train_meta.train_config {
                Some(text) => TrainConfig::from_kv(text)?,
                None => TrainConfig::default(),
            };
            let pool = train.concat(&test)?;
            let report = cross_validate(&pool, &model.params.config, &train_cfg, k, &cfg)?;
            write_text(&args.out, &json(&report)?)?;
            write_text(&csv_path, &report.to_csv())?;
        }
    }
    finish(
        m,
        started,
        &[&args.model, &args.train, &args.test],
        &[&args.out, &csv_path],
        &args.out,
    )
}

pub fn cmd_a3test(args: &A3Args) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut m = RunManifest::new("a3test");
    m.seeds.insert("seed".into(), args.seed);
    let model = load_model(&args.model)?;
    let ds = load_data(&args.data)?;
    check_dims(&model, &ds)?;
    let r = metrics::mmd_a3_test(&model, &ds, &OdeConfig::default(), args.seed)?;
    write_text(&args.out, &json(&r)?)?;
    finish(m, started, &[&args.model, &args.data], &[&args.out], &args.out)
}
