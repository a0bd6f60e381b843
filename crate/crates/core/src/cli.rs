//! Command-line front end: `generate | train | evaluate | infer | baseline`.
//!
//! Settings come from an optional TOML file, then command-line flags, which
//! win. Every command writes the fully resolved settings next to its outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    build_graph, export_graph, granger_test, var_fit, var_forecast, GraphFormat, LagProfile, Thresholds,
};
use crate::checkpoint::Checkpoint;
use crate::data::synthetic::{read_labels, write_labels};
use crate::data::{
    generate_bivariate, load_csv, make_windows, split_windows, write_csv, RuleLabel, Scaler, SplitRanges,
    SyntheticConfig, TimeSeriesFrame, WindowSample,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Seq2Graph};
use crate::train::{error_metrics, evaluate, train, Objective, SeriesMetrics, TrainConfig, TrainStatus};

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Parser)]
#[command(name = "seq2graph", version, about = "Attention-based dependency discovery in multivariate time series")]
pub struct Cli {
    /// TOML settings file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed; data, initialization and shuffling streams derive from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic bivariate series and its rule labels.
    Generate(GenerateArgs),
    /// Fit a model and write a checkpoint, training log and metrics.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Forecasts, dependency graphs and lag profiles per timestamp.
    Infer(InferArgs),
    /// VAR forecasts or Granger causality tests.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub regen_probability: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rule-label sidecar (`row,rule`); windows whose target row is a
    /// drawn row are then skipped.
    #[arg(long)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub window: Option<usize>,
    /// Sets all three GRU widths.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub grad_clip_norm: Option<f64>,
    /// Give every series its own temporal attention weights.
    #[arg(long)]
    pub unshared_attention: bool,
    /// Train the multi-step decoder for this series instead of next-step.
    #[arg(long, requires = "horizon")]
    pub target: Option<String>,
    #[arg(long, requires = "target")]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitName,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// First row index whose window ends the input (default: last row).
    #[arg(long)]
    pub from: Option<usize>,
    /// Last row index, inclusive (default: `from`).
    #[arg(long)]
    pub to: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Json,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Var,
    Granger,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Lag order (default: the model window length).
    #[arg(long)]
    pub lag: Option<usize>,
    /// Restrict Granger tests to this target series.
    #[arg(long)]
    pub target: Option<String>,
}

/// Architecture settings; the series count comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub window: usize,
    pub enc_hidden: usize,
    pub dp_hidden: usize,
    pub dec_hidden: usize,
    pub v_dim: Option<usize>,
    pub feat_dim: Option<usize>,
    pub temporal_score_hidden: Option<usize>,
    pub inter_score_hidden: Option<usize>,
    pub share_temporal_attention: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            window: m.m,
            enc_hidden: m.enc_hidden,
            dp_hidden: m.dp_hidden,
            dec_hidden: m.dec_hidden,
            v_dim: None,
            feat_dim: None,
            temporal_score_hidden: None,
            inter_score_hidden: None,
            share_temporal_attention: true,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, d: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            d,
            m: self.window,
            enc_hidden: self.enc_hidden,
            dp_hidden: self.dp_hidden,
            dec_hidden: self.dec_hidden,
            v_dim: self.v_dim,
            feat_dim: self.feat_dim,
            temporal_score_hidden: self.temporal_score_hidden,
            inter_score_hidden: self.inter_score_hidden,
            share_temporal_attention: self.share_temporal_attention,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub early_stop_patience: usize,
    pub grad_clip_norm: Option<f64>,
    /// Multi-step objective: series name and horizon.
    pub target: Option<String>,
    pub horizon: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            early_stop_patience: t.early_stop_patience,
            grad_clip_norm: t.grad_clip_norm,
            target: None,
            horizon: None,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            early_stop_patience: self.early_stop_patience,
            seed,
            grad_clip_norm: self.grad_clip_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub length: usize,
    pub regen_probability: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            length: s.length,
            regen_probability: s.regen_probability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub train_fraction: f64,
    pub dev_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            labels: None,
            train_fraction: 0.70,
            dev_fraction: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Defaults to `1.5 / D`.
    pub primary_threshold: Option<f64>,
    /// Defaults to `0.75 / D`.
    pub secondary_threshold: Option<f64>,
    /// Defaults to the model window length.
    pub var_lag: Option<usize>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            primary_threshold: None,
            secondary_threshold: None,
            var_lag: None,
        }
    }
}

impl AnalysisSection {
    pub fn thresholds(&self, d: usize) -> Thresholds {
        let rel = Thresholds::relative(d);
        Thresholds {
            primary: self.primary_threshold.unwrap_or(rel.primary),
            secondary: self.secondary_threshold.unwrap_or(rel.secondary),
        }
    }
}

/// Everything a run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synthetic: SyntheticSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("."),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            synthetic: SyntheticSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn splits(&self, len: usize) -> Result<SplitRanges> {
        SplitRanges::chronological(len, self.data.train_fraction, self.data.dev_fraction)
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            length: self.synthetic.length,
            seed: self.seed,
            regen_probability: self.synthetic.regen_probability,
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut rc = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        rc.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        rc.out_dir = d.clone();
    }
    let data_args = match &cli.command {
        Command::Generate(a) => {
            if let Some(l) = a.length {
                rc.synthetic.length = l;
            }
            if let Some(p) = a.regen_probability {
                rc.synthetic.regen_probability = p;
            }
            None
        }
        Command::Train(a) => {
            let (m, t) = (&mut rc.model, &mut rc.train);
            if let Some(w) = a.window {
                m.window = w;
            }
            if let Some(w) = a.width {
                m.enc_hidden = w;
                m.dp_hidden = w;
                m.dec_hidden = w;
            }
            if a.unshared_attention {
                m.share_temporal_attention = false;
            }
            if let Some(v) = a.epochs {
                t.epochs = v;
            }
            if let Some(v) = a.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = a.lr {
                t.lr = v;
            }
            if let Some(v) = a.patience {
                t.early_stop_patience = v;
            }
            if a.grad_clip_norm.is_some() {
                t.grad_clip_norm = a.grad_clip_norm;
            }
            if a.target.is_some() {
                t.target = a.target.clone();
                t.horizon = a.horizon;
            }
            Some(&a.data)
        }
        Command::Evaluate(a) => Some(&a.data),
        Command::Infer(a) => Some(&a.data),
        Command::Baseline(a) => {
            if let Some(l) = a.lag {
                rc.analysis.var_lag = Some(l);
            }
            Some(&a.data)
        }
    };
    if let Some(d) = data_args {
        if d.data.is_some() {
            rc.data.path = d.data.clone();
        }
        if d.labels.is_some() {
            rc.data.labels = d.labels.clone();
        }
    }
    Ok(rc)
}

fn prepare_out_dir(rc: &RunConfig) -> Result<()> {
    fs::create_dir_all(&rc.out_dir).map_err(|e| Error::io(&rc.out_dir, e))?;
    write_text(&rc.out_dir.join(RESOLVED_CONFIG), &rc.to_toml()?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_data(rc: &RunConfig) -> Result<(TimeSeriesFrame, Option<Vec<RuleLabel>>)> {
    let path = rc
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("no input data given (--data or [data].path)".into()))?;
    let frame = load_csv(path)?;
    let labels = match &rc.data.labels {
        Some(p) => {
            let l = read_labels(p)?;
            if l.len() != frame.len() {
                return Err(Error::Config(format!(
                    "{} labels for {} data rows",
                    l.len(),
                    frame.len()
                )));
            }
            Some(l)
        }
        None => None,
    };
    Ok((frame, labels))
}

fn keep_rule_targets<T: Clone>(windows: Vec<WindowSample<T>>, labels: Option<&[RuleLabel]>) -> Vec<WindowSample<T>> {
    match labels {
        Some(l) => windows.into_iter().filter(|w| l[w.target_row] != RuleLabel::Drawn).collect(),
        None => windows,
    }
}

/// Table layout: one row per (metric, method), one column per series.
pub fn metrics_table(method: &str, metrics: &[SeriesMetrics]) -> String {
    let mut out = String::from("metric,method");
    for m in metrics {
        let _ = write!(out, ",{}", m.series);
    }
    out.push('\n');
    for (label, pick) in [("RMSE", 0), ("MAE", 1)] {
        let _ = write!(out, "{label},{method}");
        for m in metrics {
            let _ = write!(out, ",{}", if pick == 0 { m.rmse } else { m.mae });
        }
        out.push('\n');
    }
    out
}

fn split_range(ranges: &SplitRanges, s: SplitName) -> std::ops::Range<usize> {
    match s {
        SplitName::Train => ranges.train.clone(),
        SplitName::Dev => ranges.dev.clone(),
        SplitName::Test => ranges.test.clone(),
    }
}

fn cmd_generate(rc: &RunConfig) -> Result<()> {
    let cfg = rc.synthetic_config();
    let s = generate_bivariate(&cfg)?;
    prepare_out_dir(rc)?;
    write_csv(&s.frame, rc.out_dir.join("synthetic.csv"))?;
    write_labels(&s.labels, rc.out_dir.join("synthetic_labels.csv"))?;
    let [drawn, r1, r2] = s.label_frequencies();
    println!(
        "generated {} rows: rule1 {:.4}, rule2 {:.4}, drawn {:.4}",
        s.frame.len(),
        r1,
        r2,
        drawn
    );
    Ok(())
}

fn objective_for(rc: &RunConfig, frame: &TimeSeriesFrame) -> Result<Objective> {
    match (&rc.train.target, rc.train.horizon) {
        (None, None) => Ok(Objective::NextStep),
        (Some(name), Some(h)) if h >= 1 => Ok(Objective::Horizon {
            target_series: frame
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("unknown target series {name:?}")))?,
            horizon: h,
        }),
        _ => Err(Error::Config("multi-step training needs both target and horizon ≥ 1".into())),
    }
}

/// Windows whose target holds the next `horizon` values of one series.
fn horizon_windows(frame: &TimeSeriesFrame, m: usize, target: usize, horizon: usize) -> Result<Vec<WindowSample<f64>>> {
    let base = make_windows::<f64>(frame, m)?;
    Ok(base
        .into_iter()
        .filter(|w| w.target_row + horizon <= frame.len())
        .map(|mut w| {
            w.target = (0..horizon).map(|i| frame.row(w.target_row + i)[target]).collect();
            w
        })
        .collect())
}

fn cmd_train(rc: &RunConfig) -> Result<bool> {
    let (frame, labels) = load_data(rc)?;
    let ranges = rc.splits(frame.len())?;
    let scaler = Scaler::fit(&frame, ranges.train.clone())?;
    let norm = scaler.apply(&frame)?;
    let objective = objective_for(rc, &frame)?;
    let windows = match objective {
        Objective::NextStep => make_windows::<f64>(&norm, rc.model.window)?,
        Objective::Horizon {
            target_series,
            horizon,
        } => horizon_windows(&norm, rc.model.window, target_series, horizon)?,
    };
    let windows = keep_rule_targets(windows, labels.as_deref());
    let (tr, dv, te) = split_windows(&windows, &ranges);
    if tr.is_empty() || dv.is_empty() || te.is_empty() {
        return Err(Error::Config("every split needs at least one window".into()));
    }

    let model_cfg = rc.model.to_config(frame.series_count(), rc.seed);
    let train_cfg = rc.train.to_config(rc.seed);
    train_cfg.validate()?;
    let mut model = Seq2Graph::<f64>::new(model_cfg)?;
    prepare_out_dir(rc)?;
    let log_path = rc.out_dir.join("training_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let report = train(&mut model, &tr, &dv, &train_cfg, objective, Some(&mut log))?;
    drop(log);

    Checkpoint::new(&model, frame.names().to_vec(), scaler.clone())?.save(rc.out_dir.join("checkpoint.json"))?;
    if report.status == TrainStatus::Diverged {
        eprintln!(
            "training diverged; checkpoint holds the parameters from epoch {}",
            report.best_epoch
        );
        return Ok(false);
    }
    let names = frame.names().to_vec();
    let (dev_m, test_m) = match objective {
        Objective::NextStep => (
            evaluate(&model, &dv, &names, Some(&scaler))?,
            evaluate(&model, &te, &names, Some(&scaler))?,
        ),
        Objective::Horizon {
            target_series,
            horizon,
        } => (
            horizon_metrics(&model, &dv, &names[target_series], target_series, horizon, &scaler)?,
            horizon_metrics(&model, &te, &names[target_series], target_series, horizon, &scaler)?,
        ),
    };
    write_text(&rc.out_dir.join("dev_metrics.csv"), &metrics_table("seq2graph", &dev_m))?;
    write_text(&rc.out_dir.join("metrics.csv"), &metrics_table("seq2graph", &test_m))?;
    println!(
        "trained {} epochs ({:?}), best epoch {}, best dev loss {:.6e}",
        report.history.len(),
        report.status,
        report.best_epoch,
        report.best_dev_loss
    );
    print!("{}", metrics_table("seq2graph", &test_m));
    Ok(true)
}

/// Per-step errors of the multi-step decoder, one column per future step.
fn horizon_metrics(
    model: &Seq2Graph<f64>,
    windows: &[WindowSample<f64>],
    name: &str,
    target: usize,
    horizon: usize,
    scaler: &Scaler,
) -> Result<Vec<SeriesMetrics>> {
    let step_names: Vec<String> = (1..=horizon).map(|i| format!("{name}+{i}")).collect();
    let mut preds = Vec::with_capacity(windows.len());
    for w in windows {
        preds.push(model.multi_step_forward(&w.inputs, target, horizon)?.y);
    }
    let targets: Vec<Vec<f64>> = windows.iter().map(|w| w.target.clone()).collect();
    let mut m = error_metrics(&step_names, &preds, &targets, None)?;
    for s in &mut m {
        s.rmse *= scaler.range(target);
        s.mae *= scaler.range(target);
    }
    Ok(m)
}

fn checkpoint_and_data(rc: &RunConfig, path: &Path) -> Result<(Checkpoint, TimeSeriesFrame, Option<Vec<RuleLabel>>)> {
    let ck = Checkpoint::load(path)?;
    let (frame, labels) = load_data(rc)?;
    ck.check_series(&frame)?;
    Ok((ck, frame, labels))
}

fn cmd_evaluate(rc: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let (ck, frame, labels) = checkpoint_and_data(rc, &args.checkpoint)?;
    let norm = ck.scaler.apply(&frame)?;
    let windows = keep_rule_targets(make_windows::<f64>(&norm, ck.config.m)?, labels.as_deref());
    let r = split_range(&rc.splits(frame.len())?, args.split);
    let chosen: Vec<_> = windows.into_iter().filter(|w| r.contains(&w.target_row)).collect();
    if chosen.is_empty() {
        return Err(Error::Config(format!("split {:?} has no windows", args.split)));
    }
    let metrics = evaluate(&ck.model(), &chosen, frame.names(), Some(&ck.scaler))?;
    prepare_out_dir(rc)?;
    let table = metrics_table("seq2graph", &metrics);
    write_text(&rc.out_dir.join("metrics.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_infer(rc: &RunConfig, args: &InferArgs) -> Result<()> {
    let (ck, frame, _) = checkpoint_and_data(rc, &args.checkpoint)?;
    let m = ck.config.m;
    if frame.len() < m {
        return Err(Error::Config(format!("need at least {m} rows for one window")));
    }
    let from = args.from.unwrap_or(frame.len() - 1);
    let to = args.to.unwrap_or(from);
    if from < m - 1 || to < from || to >= frame.len() {
        return Err(Error::Config(format!(
            "row range {from}..={to} must lie within {}..{}",
            m - 1,
            frame.len()
        )));
    }
    let norm = ck.scaler.apply(&frame)?;
    let model = ck.model();
    let format = match args.format {
        FormatArg::Json => GraphFormat::Json,
        FormatArg::Dot => GraphFormat::Dot,
    };
    let thresholds = rc.analysis.thresholds(ck.config.d);
    prepare_out_dir(rc)?;
    let graph_dir = rc.out_dir.join("graphs");
    fs::create_dir_all(&graph_dir).map_err(|e| Error::io(&graph_dir, e))?;

    let names = frame.names();
    let mut forecasts = String::from("timestamp");
    let mut profiles = String::from("timestamp,series");
    for n in names {
        let _ = write!(forecasts, ",{n}");
    }
    for l in 0..m {
        let _ = write!(profiles, ",lag_{l}");
    }
    forecasts.push('\n');
    profiles.push('\n');

    for t in from..=to {
        let data: Vec<f64> = norm.rows()[t + 1 - m..=t].iter().flatten().copied().collect();
        let window = crate::autodiff::Tensor::matrix(m, ck.config.d, data)?;
        let trace = model.forward(&window)?;
        let stamp = frame.timestamp_label(t);
        let y = ck.scaler.invert_row(&trace.y_hat);
        forecasts.push_str(&stamp);
        for v in y {
            let _ = write!(forecasts, ",{v}");
        }
        forecasts.push('\n');

        let graph = build_graph(&trace.betas, names, thresholds, stamp.clone())?;
        let file = graph_dir.join(format!("graph_{t}.{}", format.extension()));
        write_text(&file, &export_graph(&graph, format)?)?;

        let prof = LagProfile::from_alphas(names, &trace.alphas)?;
        for (name, w) in prof.series.iter().zip(&prof.weights) {
            let _ = write!(profiles, "{stamp},{name}");
            for v in w {
                let _ = write!(profiles, ",{v}");
            }
            profiles.push('\n');
        }
    }
    write_text(&rc.out_dir.join("forecasts.csv"), &forecasts)?;
    write_text(&rc.out_dir.join("lag_profiles.csv"), &profiles)?;
    println!("wrote {} timestamps to {}", to - from + 1, rc.out_dir.display());
    Ok(())
}

/// Rolling one-step VAR forecasts for the given windows (raw scale).
pub fn var_predictions(frame: &TimeSeriesFrame, train_rows: std::ops::Range<usize>, p: usize, target_rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    let model = var_fit(&frame.slice_rows(train_rows)?, p)?;
    target_rows
        .iter()
        .map(|&r| {
            if r < p {
                return Err(Error::contract(format!("row {r} has fewer than {p} predecessors")));
            }
            var_forecast(&model, &frame.rows()[r - p..r])
        })
        .collect()
}

fn cmd_baseline(rc: &RunConfig, args: &BaselineArgs) -> Result<()> {
    let (frame, labels) = load_data(rc)?;
    let p = rc.analysis.var_lag.unwrap_or(rc.model.window);
    prepare_out_dir(rc)?;
    match args.method {
        Method::Var => {
            let ranges = rc.splits(frame.len())?;
            let targets: Vec<usize> = ranges
                .test
                .clone()
                .filter(|&r| r >= rc.model.window.max(p))
                .filter(|&r| labels.as_ref().is_none_or(|l| l[r] != RuleLabel::Drawn))
                .collect();
            if targets.is_empty() {
                return Err(Error::Config("test split has no usable target rows".into()));
            }
            let preds = var_predictions(&frame, ranges.train.clone(), p, &targets)?;
            let truth: Vec<Vec<f64>> = targets.iter().map(|&r| frame.row(r).to_vec()).collect();
            let metrics = error_metrics(frame.names(), &preds, &truth, None)?;
            let table = metrics_table("VAR", &metrics);
            write_text(&rc.out_dir.join("var_metrics.csv"), &table)?;
            print!("{table}");
        }
        Method::Granger => {
            let targets: Vec<usize> = match &args.target {
                Some(name) => vec![frame
                    .index_of(name)
                    .ok_or_else(|| Error::Config(format!("unknown target series {name:?}")))?],
                None => (0..frame.series_count()).collect(),
            };
            let mut out = String::from("target,candidate,lag,f_statistic,p_value,rss_restricted,rss_unrestricted\n");
            for &t in &targets {
                for c in (0..frame.series_count()).filter(|&c| c != t) {
                    let r = granger_test(&frame, t, c, p)?;
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        frame.names()[t],
                        frame.names()[c],
                        p,
                        r.f_statistic,
                        r.p_value,
                        r.rss_restricted,
                        r.rss_unrestricted
                    );
                }
            }
            write_text(&rc.out_dir.join("granger.csv"), &out)?;
            print!("{out}");
        }
    }
    Ok(())
}

/// Process exit status for an error: 2 for usage and configuration
/// problems (including missing input files), 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let rc = resolve(cli)?;
    match &cli.command {
        Command::Generate(_) => cmd_generate(&rc).map(|_| true),
        Command::Train(_) => cmd_train(&rc),
        Command::Evaluate(a) => cmd_evaluate(&rc, a).map(|_| true),
        Command::Infer(a) => cmd_infer(&rc, a).map(|_| true),
        Command::Baseline(a) => cmd_baseline(&rc, a).map(|_| true),
    }
}
