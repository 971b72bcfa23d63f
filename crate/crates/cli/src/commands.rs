use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use lvd_core::conformal::{collect_residuals, predict_center, Predictor};
use lvd_core::kernel::KernelRegressor;
use lvd_core::synth::{generate, split_sizes, SynthConfig};
use lvd_core::{EvalReport, Interval, MetricModel, PreparedCalibration, TrainConfig};
use serde_json::{Map, Value};

use crate::artifact::{load_model, save_model, ModelArtifact};
use crate::calibration::{load_calibration, save_calibration};
use crate::dataset::{load_dataset, save_dataset, Dataset};
use crate::error::{CliError, Result};
use crate::fmt_f64;
use crate::intervals::{load_intervals, save_intervals, IntervalRow, Method};

/// Conformal intervals that adapt to the input through a learned kernel.
///
/// Train on one file, calibrate on a second and predict on a third. The
/// metric must never see calibration rows, otherwise the coverage guarantee
/// no longer holds.
#[derive(Debug, Parser)]
#[command(name = "lvd", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn the kernel transform on a training file.
    Train(TrainArgs),
    /// Compute calibration residuals on a held-out file.
    Calibrate(CalibrateArgs),
    /// Write intervals for a test file.
    Predict(PredictArgs),
    /// Score intervals against test targets.
    Evaluate(EvaluateArgs),
    /// Generate the cubic benchmark.
    Synth(SynthArgs),
}

fn defaults() -> TrainConfig {
    TrainConfig::default()
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset CSV.
    pub data: PathBuf,
    #[arg(long, default_value_t = defaults().rank)]
    pub k: usize,
    #[arg(long, default_value_t = defaults().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = defaults().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = defaults().max_batches)]
    pub max_batches: usize,
    #[arg(long, default_value_t = defaults().patience)]
    pub patience: usize,
    #[arg(long, default_value_t = defaults().neighbor_cap)]
    pub neighbor_cap: usize,
    #[arg(long)]
    pub neighbor_sample: Option<usize>,
    #[arg(long, default_value_t = defaults().smooth, action = clap::ArgAction::Set)]
    pub smooth: bool,
    #[arg(long, default_value_t = defaults().seed)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    /// The `y_hat` column.
    Base,
    /// Kernel regression over the training file.
    Kr,
}

#[derive(Debug, Args)]
pub struct CenterArgs {
    #[arg(long, value_enum, default_value_t = PredictorArg::Base)]
    pub predictor: PredictorArg,
    /// Training dataset, required by `--predictor kr`.
    #[arg(long)]
    pub train: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub model: PathBuf,
    /// Held-out dataset CSV, disjoint from the training file.
    pub data: PathBuf,
    #[command(flatten)]
    pub center: CenterArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub model: PathBuf,
    pub calibration: PathBuf,
    pub data: PathBuf,
    /// Miscoverage level; repeat for several levels.
    #[arg(long = "alpha", default_values_t = [0.1])]
    pub alphas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Method::Lvd)]
    pub method: Method,
    #[command(flatten)]
    pub center: CenterArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub intervals: PathBuf,
    pub data: PathBuf,
    /// Model for kernel-weighted local coverage.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Raw embedding, comma separated, at which to estimate local coverage.
    /// Repeatable; needs `--model`.
    #[arg(long = "local-centers", value_delimiter = ';')]
    pub local_centers: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.9)]
    pub uniform_prob: f64,
    #[arg(long, default_value_t = 1.0)]
    pub halfnormal_sigma: f64,
    /// Percentages such as `60/20/20` (train, cal, test) or `80/20` (train, test).
    /// Parts go to `<out stem>.<part>.csv`.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs one command and returns the text meant for standard output.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Synth(a) => synth(a),
    }
}

fn train(a: TrainArgs) -> Result<String> {
    let ds = load_dataset(&a.data)?;
    let config = TrainConfig {
        rank: a.k,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_batches: a.max_batches,
        patience: a.patience,
        neighbor_cap: a.neighbor_cap,
        neighbor_sample: a.neighbor_sample,
        smooth: a.smooth,
        seed: a.seed,
    };
    config
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let (model, summary) = lvd_core::train::train_metric(&ds.embeddings, &ds.y, &config)?;
    save_model(&ModelArtifact::new(&model, &config, &summary), &a.out)?;
    Ok(format!(
        "final_loss={}\nbatches_run={}\ninitial_loss={}\nrank={}\nreverted_to_init={}\n",
        fmt_f64(summary.final_loss),
        summary.batches_run,
        fmt_f64(summary.initial_loss),
        summary.rank,
        summary.reverted_to_init
    ))
}

fn check_dim(ds: &Dataset, model: &MetricModel, path: &Path) -> Result<()> {
    let want = model.norm().input_dim();
    if ds.dim() != want {
        return Err(CliError::data_in(
            path,
            format!(
                "embedding width {} does not match the model's {want}",
                ds.dim()
            ),
        ));
    }
    Ok(())
}

/// Centers for normalized embeddings `xs` under the chosen predictor.
fn centers(
    args: &CenterArgs,
    artifact: &ModelArtifact,
    model: &MetricModel,
    ds: &Dataset,
    xs: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let (predictor, regressor) = match args.predictor {
        PredictorArg::Base => {
            if ds.y_hat.is_none() {
                return Err(CliError::Data(
                    "--predictor base needs a y_hat column".into(),
                ));
            }
            (Predictor::Base, None)
        }
        PredictorArg::Kr => {
            let path = args
                .train
                .as_deref()
                .ok_or_else(|| CliError::Usage("--predictor kr requires --train".into()))?;
            let train = load_dataset(path)?;
            check_dim(&train, model, path)?;
            let norm_train = model.norm().normalize_all(&train.embeddings)?;
            let reg = KernelRegressor::new(model, &norm_train, &train.y, artifact.config.smooth)?;
            (Predictor::KernelRegression, Some(reg))
        }
    };
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let base = ds.y_hat.as_ref().map(|p| p[i]);
            Ok(predict_center(
                predictor,
                model,
                x,
                regressor.as_ref(),
                base,
            )?)
        })
        .collect()
}

fn calibrate(a: CalibrateArgs) -> Result<String> {
    let (artifact, model) = load_model(&a.model)?;
    let ds = load_dataset(&a.data)?;
    check_dim(&ds, &model, &a.data)?;
    let xs = model.norm().normalize_all(&ds.embeddings)?;
    let preds = centers(&a.center, &artifact, &model, &ds, &xs)?;
    let cal = collect_residuals(&ds.y, &preds, ds.sigma_hat.as_deref())?.with_embeddings(xs)?;
    save_calibration(&cal, &a.out)?;
    Ok(format!("calibration_points={}\n", cal.len()))
}

fn predict(a: PredictArgs) -> Result<String> {
    let (artifact, model) = load_model(&a.model)?;
    let cal = load_calibration(&a.calibration)?;
    let ds = load_dataset(&a.data)?;
    check_dim(&ds, &model, &a.data)?;
    for &alpha in &a.alphas {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Usage(format!(
                "--alpha must lie in (0, 1), got {alpha}"
            )));
        }
    }
    if a.method == Method::Mad && (cal.mad_scales().is_none() || ds.sigma_hat.is_none()) {
        return Err(lvd_core::Error::MadScalesRequired.into());
    }
    let xs = model.norm().normalize_all(&ds.embeddings)?;
    let centers = centers(&a.center, &artifact, &model, &ds, &xs)?;
    let prepared = PreparedCalibration::new(&model, &cal)?;
    let split = match a.method {
        Method::Split => Some(prepared.split_half_widths(&a.alphas)?),
        _ => None,
    };
    let mut rows = Vec::with_capacity(xs.len() * a.alphas.len());
    for (i, x) in xs.iter().enumerate() {
        let widths = match a.method {
            Method::Split => split.clone().expect("computed above"),
            Method::Lvd => prepared.lvd_half_widths(x, &a.alphas)?,
            Method::Mad => {
                let sigma = ds.sigma_hat.as_ref().expect("checked above")[i];
                prepared.mad_half_widths(x, sigma, &a.alphas)?
            }
        };
        for (&alpha, hw) in a.alphas.iter().zip(widths) {
            let iv = Interval {
                center: centers[i],
                half_width: hw,
            };
            rows.push(IntervalRow::new(i, alpha, a.method, iv));
        }
    }
    save_intervals(&rows, &a.out)?;
    let finite = rows.iter().filter(|r| r.upper.is_finite()).count();
    Ok(format!("rows={}\nfinite={finite}\n", rows.len()))
}

fn parse_center(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            crate::dataset::parse_finite(c.trim())
                .map_err(|m| CliError::Usage(format!("--local-centers {s:?}: {m}")))
        })
        .collect()
}

type GroupKey = (Method, f64);

/// Groups rows by `(method, alpha)` in order of first appearance.
fn group_rows(rows: &[IntervalRow], n: usize) -> Result<Vec<(GroupKey, Vec<Interval>)>> {
    let mut groups: Vec<(GroupKey, Vec<Option<Interval>>)> = Vec::new();
    for r in rows {
        let key = (r.method, r.alpha);
        let pos = match groups.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                groups.push((key, vec![None; n]));
                groups.len() - 1
            }
        };
        let slot = groups[pos].1.get_mut(r.index).ok_or_else(|| {
            CliError::Data(format!(
                "interval index {} out of range for {n} test rows",
                r.index
            ))
        })?;
        if slot.replace(r.interval()).is_some() {
            return Err(CliError::Data(format!(
                "duplicate interval for index {} ({}, alpha {})",
                r.index,
                r.method.as_str(),
                r.alpha
            )));
        }
    }
    groups
        .into_iter()
        .map(|(key, slots)| {
            let ivs: Option<Vec<Interval>> = slots.into_iter().collect();
            ivs.map(|v| (key, v)).ok_or_else(|| {
                CliError::Data(format!(
                    "({}, alpha {}) does not cover every test row",
                    key.0.as_str(),
                    key.1
                ))
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, Value::from)
}

fn evaluate(a: EvaluateArgs) -> Result<String> {
    let ds = load_dataset(&a.data)?;
    let rows = load_intervals(&a.intervals)?;
    if rows.is_empty() {
        return Err(CliError::data_in(&a.intervals, "no intervals"));
    }
    let local = match (&a.model, a.local_centers.is_empty()) {
        (_, true) => None,
        (None, false) => return Err(CliError::Usage("--local-centers requires --model".into())),
        (Some(path), false) => {
            let (_, model) = load_model(path)?;
            check_dim(&ds, &model, &a.data)?;
            let centers = a
                .local_centers
                .iter()
                .map(|s| {
                    let c = parse_center(s)?;
                    Ok(model.norm().normalize(&c)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let xs = model.norm().normalize_all(&ds.embeddings)?;
            Some((model, centers, xs))
        }
    };
    let mut doc = Map::new();
    doc.insert("n_test".into(), ds.len().into());
    let groups = group_rows(&rows, ds.len())?;
    let mut lines = String::new();
    for ((method, alpha), ivs) in &groups {
        let rep = EvalReport::compute(ivs, &ds.y)?;
        let prefix = format!("{}@{}", method.as_str(), fmt_f64(*alpha));
        let mut put = |k: &str, v: Value| doc.insert(format!("{prefix}/{k}"), v);
        put("mcr", rep.mcr.into());
        put("tcr", opt(rep.tcr));
        put("auroc", opt(rep.auroc));
        put("mad", rep.mad.into());
        put("mean_finite_width", opt(rep.mean_finite_width));
        put("finite_count", rep.finite_count.into());
        if let Some((model, centers, xs)) = &local {
            for (j, c) in centers.iter().enumerate() {
                let lc = lvd_core::eval::local_coverage_estimate(model, c, ivs, &ds.y, xs)?;
                put(&format!("local_coverage_{j}"), lc.into());
            }
        }
        lines.push_str(&format!("{prefix}/mcr={}\n", fmt_f64(rep.mcr)));
    }
    let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("finite values");
    std::fs::write(&a.out, text + "\n").map_err(|e| CliError::io(&a.out, e))?;
    Ok(lines)
}

fn parse_split(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split('/')
        .map(|p| p.trim().parse::<f64>().map(|v| v / 100.0))
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| {
            CliError::Usage(format!("--split {s:?}: expected percentages like 60/20/20"))
        })?;
    if !(2..=3).contains(&parts.len()) {
        return Err(CliError::Usage("--split takes two or three parts".into()));
    }
    Ok(parts)
}

/// `data.csv` with part `cal` becomes `data.cal.csv`.
fn part_path(out: &Path, part: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.{part}.csv"))
}

fn synth(a: SynthArgs) -> Result<String> {
    let cfg = SynthConfig {
        n: a.n,
        seed: a.seed,
        noise_sigma: a.noise_sigma,
        uniform_prob: a.uniform_prob,
        halfnormal_sigma: a.halfnormal_sigma,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let samples = generate(&cfg)?;
    let to_ds = |s: &[lvd_core::synth::Sample]| Dataset {
        embeddings: s.iter().map(|p| vec![p.x]).collect(),
        y: s.iter().map(|p| p.y).collect(),
        y_hat: None,
        sigma_hat: None,
    };
    let Some(split) = &a.split else {
        save_dataset(&to_ds(&samples), &a.out)?;
        return Ok(format!("rows={}\n", samples.len()));
    };
    let fractions = parse_split(split)?;
    let sizes = split_sizes(a.n, &fractions).map_err(|e| CliError::Usage(e.to_string()))?;
    let names: &[&str] = if sizes.len() == 3 {
        &["train", "cal", "test"]
    } else {
        &["train", "test"]
    };
    let mut start = 0;
    let mut out = String::new();
    for (name, size) in names.iter().zip(sizes) {
        let path = part_path(&a.out, name);
        save_dataset(&to_ds(&samples[start..start + size]), &path)?;
        out.push_str(&format!("{name}={} rows={size}\n", path.display()));
        start += size;
    }
    Ok(out)
}
