//! Config-driven runner for the one-pass class-incremental loop.
//!
//! For every batch the runner extracts features of the current and the next
//! batch, steps each layer's head, and optionally evaluates the ensemble on
//! the test set. Task boundaries are read only by evaluation code; the audit
//! in [`BoundaryAudit`] counts any read that happens while learners step.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::baselines::{fit_baseline, BaselineKind, BaselineRecord};
use crate::learners::{AdaptiveKTrace, RegStyle, StyleKind, SubLearner};
use crate::metrics::{
    compute_acc, compute_bwt, compute_fwt, immediate_accuracy, immediate_kl, immediate_regret,
    AccuracyMatrix, TraceSeries,
};
use crate::rvfl::{fuse_probabilities, softmax_rows, Backbone, EnsembleMode, NetworkConfig};
use crate::stream::{
    batchify_with, load_csv_features, load_idx, per_class_batch_size, split_class_incremental,
    BatchStream, CsvSchema, LabeledDataset, Split, SyntheticSpec, Task, TaskSplitSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        classes: Option<usize>,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        schema: CsvSchema,
    },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            DataSource::Csv { train, test, .. } => vec![train, test],
            DataSource::Synthetic(_) => Vec::new(),
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => vec![train_images, train_labels, test_images, test_labels],
            DataSource::Csv { train, test, .. } => vec![train, test],
            DataSource::Synthetic(_) => Vec::new(),
        }
        .into_iter()
        .map(PathBuf::as_path)
        .collect()
    }

    /// Loads the train and test splits.
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                let train = load_idx(train_images, train_labels, *classes, Split::Train)?;
                let test = load_idx(test_images, test_labels, Some(classes.unwrap_or(train.classes)), Split::Test)?;
                Ok((train, test))
            }
            DataSource::Csv { train, test, schema } => {
                let tr = load_csv_features(train, schema, Split::Train)?;
                let schema = CsvSchema {
                    classes: Some(schema.classes.unwrap_or(tr.classes)),
                    ..schema.clone()
                };
                let te = load_csv_features(test, &schema, Split::Test)?;
                if te.dim() != tr.dim() {
                    return Err(Error::Config(format!(
                        "train has {} features but test has {}",
                        tr.dim(),
                        te.dim()
                    )));
                }
                Ok((tr, te))
            }
            DataSource::Synthetic(spec) => spec.generate(),
        }
    }
}

/// When the ensemble is scored on the test set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    #[default]
    EveryBatch,
    EveryTask,
}

fn default_repeats() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub split: TaskSplitSpec,
    pub batch_size: usize,
    pub network: NetworkConfig,
    pub style: RegStyle,
    #[serde(default)]
    pub cadence: Cadence,
    #[serde(default)]
    pub ensemble: EnsembleMode,
    /// Extra reference models to fit and report.
    #[serde(default)]
    pub baselines: Vec<BaselineKind>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config. Relative data paths are resolved against the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.data.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.split.batches_per_class == Some(0) {
            return Err(Error::Config("batches_per_class must be >= 1".into()));
        }
        if self.network.layers == 0 || self.network.nodes == 0 {
            return Err(Error::Config("network layers and nodes must be >= 1".into()));
        }
        self.style.validate().map_err(as_config)?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        for p in self.data.paths() {
            if !p.exists() {
                return Err(Error::Config(format!("data file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Copy with every seed offset by `repeat`.
    pub fn for_repeat(&self, repeat: usize) -> RunConfig {
        let r = repeat as u64;
        let mut cfg = self.clone();
        cfg.network.seed = cfg.network.seed.wrapping_add(r);
        cfg.split.order_seed = cfg.split.order_seed.wrapping_add(r);
        if let DataSource::Synthetic(spec) = &mut cfg.data {
            spec.seed = spec.seed.wrapping_add(r);
        }
        cfg
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            weights: self.network.seed,
            order: self.split.order_seed,
            synthetic: match &self.data {
                DataSource::Synthetic(spec) => Some(spec.seed),
                _ => None,
            },
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Contract(msg) => Error::Config(msg),
        other => other,
    }
}

/// Short human-readable name of a style.
pub fn style_label(style: &RegStyle) -> String {
    match style.kind {
        StyleKind::Ridge => "ridge".to_string(),
        StyleKind::Kf => format!("kf(k={})", style.k),
        StyleKind::KfBayes => format!("kf_bayes(kappa={},sigma={})", style.kappa, style.sigma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub weights: u64,
    pub order: u64,
    pub synthetic: Option<u64>,
}

/// Precomputed test-set design matrices and per-task row lists.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub features: Vec<Array2<f64>>,
    pub y: Array2<f64>,
    pub labels: Vec<usize>,
    pub task_rows: Vec<Vec<usize>>,
}

impl EvalSet {
    pub fn new(backbone: &Backbone, test: &LabeledDataset, tasks: &[Task]) -> Result<Self> {
        Ok(EvalSet {
            features: backbone.features(test.x.view())?,
            y: test.one_hot(),
            labels: test.y.clone(),
            task_rows: tasks.iter().map(|t| test.rows_of_classes(&t.classes)).collect(),
        })
    }

    pub fn accuracy(&self, pred: ArrayView2<f64>) -> Result<f64> {
        immediate_accuracy(pred, self.y.view())
    }

    pub fn accuracy_on(&self, pred: ArrayView2<f64>, rows: &[usize]) -> Result<f64> {
        if rows.is_empty() {
            return Err(Error::contract("no test rows for this subset"));
        }
        let p = pred.select(Axis(0), rows);
        let y = self.y.select(Axis(0), rows);
        immediate_accuracy(p.view(), y.view())
    }

    pub fn per_task_accuracy(&self, pred: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.task_rows.iter().map(|rows| self.accuracy_on(pred, rows)).collect()
    }

    /// Test rows whose class is in `seen`.
    pub fn rows_of(&self, seen: &BTreeSet<usize>) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| seen.contains(&self.labels[i])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryAudit {
    /// Boundary reads that happened while learners were stepping.
    pub learner_path_reads: usize,
    /// Reads made by evaluation code.
    pub harness_reads: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub message: String,
    pub batch: Option<usize>,
    pub layer: Option<usize>,
    pub style: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub style: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub stream_hash: String,
    pub batches: usize,
    pub short_batches: usize,
    pub tasks: usize,
    pub classes: usize,
    pub feature_dim: usize,
    pub acc: Option<f64>,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
    pub final_acc_full: Option<f64>,
    pub final_acc_seen: Option<f64>,
    pub cumulative_regret: f64,
    pub accuracy: AccuracyMatrix,
    pub trace: TraceSeries,
    pub baselines: Vec<BaselineRecord>,
    /// Wall-clock seconds per batch for feature extraction plus all steps.
    pub batch_seconds: Vec<f64>,
    pub audit: BoundaryAudit,
    pub failure: Option<FailureInfo>,
}

impl RunReport {
    /// The report as JSON without timing fields, for determinism checks.
    pub fn deterministic_payload(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("batch_seconds");
        }
        v
    }

    pub fn k_trace(&self) -> &AdaptiveKTrace {
        &self.trace.k
    }
}

/// A run that stopped early, with whatever was recorded up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Option<Box<RunReport>>,
}

impl fmt::Display for RunFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        RunFailure { error, partial: None }
    }
}

/// Everything a run needs before the first step.
pub struct Prepared {
    pub config: RunConfig,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub stream: BatchStream,
    pub backbone: Backbone,
    pub eval: EvalSet,
}

/// Loads data, splits it into tasks, batches it and builds the backbone.
pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate()?;
    let (train, test) = config.data.load()?;
    let mut config = config.clone();
    fill_dim(&mut config.network.input_dim, train.dim(), "input_dim")?;
    fill_dim(&mut config.network.classes, train.classes, "classes")?;
    if test.classes != train.classes || test.dim() != train.dim() {
        return Err(Error::Config("train and test splits disagree on shape".into()));
    }
    config.network.validate().map_err(as_config)?;

    let tasks = split_class_incremental(&train, &config.split).map_err(as_config)?;
    let b = config.batch_size;
    let stream = match config.split.batches_per_class {
        Some(n) => batchify_with(&train, &tasks, b, |t| per_class_batch_size(t, n)),
        None => batchify_with(&train, &tasks, b, |_| b),
    }
    .map_err(as_config)?;
    let first = &stream.learner_batches()[0];
    let backbone = Backbone::new(config.network.clone(), first.x.view())?;
    let eval = EvalSet::new(&backbone, &test, &tasks)?;
    Ok(Prepared {
        config,
        train,
        test,
        stream,
        backbone,
        eval,
    })
}

fn fill_dim(slot: &mut usize, actual: usize, name: &str) -> Result<()> {
    if *slot == 0 {
        *slot = actual;
    } else if *slot != actual {
        return Err(Error::Config(format!("network.{name} is {} but the data has {actual}", *slot)));
    }
    Ok(())
}

/// Runs one repeat of `config` as given.
pub fn run_experiment(config: &RunConfig) -> std::result::Result<RunReport, RunFailure> {
    let prepared = prepare(config)?;
    run_prepared(&prepared)
}

/// Runs every repeat, offsetting seeds by the repeat index.
pub fn run_repeats(config: &RunConfig) -> Vec<std::result::Result<RunReport, RunFailure>> {
    (0..config.repeats).map(|r| run_experiment(&config.for_repeat(r))).collect()
}

struct Evaluation {
    per_task: Vec<f64>,
    acc_full: f64,
    acc_seen: f64,
    regret: f64,
    kl: f64,
}

fn evaluate(
    learners: &[SubLearner],
    eval: &EvalSet,
    mode: EnsembleMode,
    seen_rows: &[usize],
) -> Result<Evaluation> {
    let probs: Vec<Array2<f64>> = learners
        .iter()
        .zip(&eval.features)
        .map(|(h, d)| h.logits(d.view()).map(|z| softmax_rows(z.view())))
        .collect::<Result<_>>()?;
    let fused = fuse_probabilities(&probs, mode)?;
    Ok(Evaluation {
        per_task: eval.per_task_accuracy(fused.view())?,
        acc_full: eval.accuracy(fused.view())?,
        acc_seen: eval.accuracy_on(fused.view(), seen_rows)?,
        regret: immediate_regret(&probs, eval.y.view())?,
        kl: immediate_kl(&probs, eval.y.view())?,
    })
}

/// Runs the loop on an already prepared stream.
pub fn run_prepared(p: &Prepared) -> std::result::Result<RunReport, RunFailure> {
    let cfg = &p.config;
    let net = &cfg.network;
    let batches = p.stream.learner_batches();
    let channel = p.stream.boundaries();
    let reads_at_start = channel.reads();
    let tasks = channel.tasks().to_vec();
    let q = tasks.len();

    let mut report = RunReport {
        style: style_label(&cfg.style),
        config: cfg.clone(),
        seeds: cfg.seeds(),
        stream_hash: p.stream.content_hash(),
        batches: batches.len(),
        short_batches: batches.iter().filter(|b| b.short).count(),
        tasks: q,
        classes: net.classes,
        feature_dim: net.feature_dim(),
        acc: None,
        bwt: None,
        fwt: None,
        final_acc_full: None,
        final_acc_seen: None,
        cumulative_regret: 0.0,
        accuracy: AccuracyMatrix::new(q),
        trace: TraceSeries::new(net.layers),
        baselines: Vec::new(),
        batch_seconds: Vec::with_capacity(batches.len()),
        audit: BoundaryAudit {
            learner_path_reads: 0,
            harness_reads: 0,
            passed: true,
        },
        failure: None,
    };

    let outcome = stream_loop(p, &mut report);
    let outcome = outcome.and_then(|()| finish(p, &tasks, &mut report));
    report.audit.harness_reads = channel.reads() - reads_at_start - report.audit.learner_path_reads;
    report.audit.passed = report.audit.learner_path_reads == 0;
    match outcome {
        Ok(()) => Ok(report),
        Err(error) => {
            report.failure = Some(FailureInfo {
                message: error.to_string(),
                batch: error_batch(&error),
                layer: error_layer(&error),
                style: report.style.clone(),
            });
            report.cumulative_regret = report.trace.cumulative_regret();
            Err(RunFailure {
                error,
                partial: Some(Box::new(report)),
            })
        }
    }
}

fn error_batch(e: &Error) -> Option<usize> {
    match e {
        Error::Numerical { batch, .. } => *batch,
        _ => None,
    }
}

fn error_layer(e: &Error) -> Option<usize> {
    match e {
        Error::Numerical { layer, .. } => *layer,
        _ => None,
    }
}

fn stream_loop(p: &Prepared, report: &mut RunReport) -> Result<()> {
    let cfg = &p.config;
    let net = &cfg.network;
    let batches = p.stream.learner_batches();
    let channel = p.stream.boundaries();
    let t_total = batches.len();

    let mut learners: Vec<SubLearner> = (0..net.layers)
        .map(|l| {
            SubLearner::new(
                net.feature_dim(),
                net.classes,
                net.lambda_for(l),
                cfg.style.clone(),
                net.seed.wrapping_add(l as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut current = p.backbone.features(batches[0].x.view()).map_err(|e| e.at_batch(0))?;
    for t in 0..t_total {
        let started = Instant::now();
        let next = match batches.get(t + 1) {
            Some(b) => Some(p.backbone.features(b.x.view()).map_err(|e| e.at_batch(t + 1))?),
            None => None,
        };
        let y_t = batches[t].y.view();

        let reads_before = channel.reads();
        for (l, head) in learners.iter_mut().enumerate() {
            let d_next = next.as_ref().map(|n| n[l].view());
            let pair = head
                .step(current[l].view(), y_t, d_next)
                .map_err(|e| e.at_batch(t).at_layer(l))?;
            if let Some(pair) = pair {
                report.trace.k.record(l, t, pair);
            }
        }
        report.audit.learner_path_reads += channel.reads() - reads_before;
        report.batch_seconds.push(started.elapsed().as_secs_f64());

        for row in batches[t].y.rows() {
            seen.insert(crate::rvfl::argmax_row(row));
        }

        let task_end = channel.ends_task(t);
        if cfg.cadence == Cadence::EveryBatch || task_end {
            let seen_rows = p.eval.rows_of(&seen);
            let ev = evaluate(&learners, &p.eval, cfg.ensemble, &seen_rows).map_err(|e| e.at_batch(t))?;
            report.trace.push(t, ev.acc_seen, ev.acc_full, ev.regret, ev.kl);
            report.final_acc_full = Some(ev.acc_full);
            report.final_acc_seen = Some(ev.acc_seen);
            if task_end {
                let after = channel.task_of(t);
                for (j, &a) in ev.per_task.iter().enumerate().take(after + 1) {
                    report.accuracy.set(after, j, a)?;
                }
            }
        }
        if let Some(n) = next {
            current = n;
        }
    }
    report.cumulative_regret = report.trace.cumulative_regret();
    Ok(())
}

fn finish(p: &Prepared, tasks: &[Task], report: &mut RunReport) -> Result<()> {
    let cfg = &p.config;
    let q = tasks.len();
    report.acc = Some(compute_acc(&report.accuracy)?);

    let mut kinds = cfg.baselines.clone();
    if q >= 2 && !kinds.contains(&BaselineKind::Separate) {
        kinds.push(BaselineKind::Separate);
    }
    for kind in kinds {
        let record = fit_baseline(kind, &p.train, Some(tasks), &p.backbone, &p.eval, cfg.ensemble)?;
        if kind == BaselineKind::Separate {
            for (j, &a) in record.per_task.iter().enumerate() {
                report.accuracy.set_independent(j, a)?;
            }
        }
        if cfg.baselines.contains(&kind) {
            report.baselines.push(record);
        }
    }
    if q >= 2 {
        report.bwt = Some(compute_bwt(&report.accuracy)?);
        report.fwt = Some(compute_fwt(&report.accuracy)?);
    }
    report.trace.validate()?;
    Ok(())
}

/// Median and range of one metric across repeats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Spread {
            median,
            min: v[0],
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub style: String,
    pub acc: Option<Spread>,
    pub bwt: Option<Spread>,
    pub fwt: Option<Spread>,
    pub final_acc_full: Option<Spread>,
    pub cumulative_regret: Option<Spread>,
    pub stream_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub repeats: usize,
    pub rows: Vec<ComparisonRow>,
    /// Offline baseline accuracy per repeat, when requested in the configs.
    pub offline_acc: Option<Spread>,
}

fn without_style(cfg: &RunConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("style");
        obj.remove("out_dir");
        obj.remove("repeats");
    }
    v
}

/// Runs every config for `repeats` seeds and summarises each style.
pub fn compare_styles(configs: &[RunConfig], repeats: usize) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| Error::contract("nothing to compare"))?;
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let reference = without_style(first);
    if configs.iter().any(|c| without_style(c) != reference) {
        return Err(Error::contract("compared configs must differ only in style"));
    }

    let mut rows = Vec::with_capacity(configs.len());
    let mut offline = Vec::new();
    for (ci, cfg) in configs.iter().enumerate() {
        let mut reports = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let report = run_experiment(&cfg.for_repeat(r)).map_err(|f| f.error)?;
            if ci == 0 {
                offline.extend(
                    report
                        .baselines
                        .iter()
                        .filter(|b| b.kind == BaselineKind::Offline)
                        .map(|b| b.acc),
                );
            }
            reports.push(report);
        }
        let collect = |f: &dyn Fn(&RunReport) -> Option<f64>| -> Option<Spread> {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            Spread::of(&v)
        };
        rows.push(ComparisonRow {
            style: style_label(&cfg.style),
            acc: collect(&|r| r.acc),
            bwt: collect(&|r| r.bwt),
            fwt: collect(&|r| r.fwt),
            final_acc_full: collect(&|r| r.final_acc_full),
            cumulative_regret: collect(&|r| Some(r.cumulative_regret)),
            stream_hashes: reports.iter().map(|r| r.stream_hash.clone()).collect(),
        });
    }
    Ok(Comparison {
        repeats,
        rows,
        offline_acc: Spread::of(&offline),
    })
}
