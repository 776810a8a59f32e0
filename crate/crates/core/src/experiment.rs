//! Training loop with per-batch selection, metrics and file exports.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Axis;
use serde::{Deserialize, Serialize};

use crate::data::{self, BlobParams, Dataset, FeatureFormat, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{
    self, Architecture, Classifier, OptimizerState, DEFAULT_LEARNING_RATE, DEFAULT_MOMENTUM,
};
use crate::selection::{self, JestState, SelectionConfig, Strategy};

pub const METRICS_CSV_HEADER: [&str; 7] = [
    "epoch",
    "train_loss",
    "train_acc",
    "val_loss",
    "val_acc",
    "epoch_time_s",
    "samples_processed",
];

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Blobs(BlobParams),
    File { path: PathBuf, format: FeatureFormat },
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Blobs(params) => data::generate_blobs(*params, seed),
            DatasetSource::File { path, format } => data::load_features(path, *format),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    /// Synthetic data generation.
    pub data: u64,
    /// Model initialisation.
    pub init: u64,
    /// Per-epoch batch order.
    pub shuffle: u64,
    /// Random and JEST tie-breaking.
    pub selection: u64,
}

impl Seeds {
    /// Four distinct seeds derived from one base value.
    pub fn from_base(base: u64) -> Self {
        Self {
            data: base,
            init: base.wrapping_add(1),
            shuffle: base.wrapping_add(2),
            selection: base.wrapping_add(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub selection: SelectionConfig,
    pub architecture: Architecture,
    pub seeds: Seeds,
    pub dataset: DatasetSource,
    pub split: SplitSpec,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let seeds = Seeds::from_base(0);
        Self {
            epochs: 25,
            batch_size: 64,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: DEFAULT_MOMENTUM,
            selection: SelectionConfig::default(),
            architecture: Architecture::Linear,
            seeds,
            dataset: DatasetSource::Blobs(BlobParams {
                n: 2000,
                d: 20,
                classes: 2,
                separation: 6.0,
            }),
            split: SplitSpec {
                shuffle_seed: seeds.data,
                ..SplitSpec::default()
            },
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} is outside [0, 1)", self.momentum)));
        }
        if let Architecture::Mlp { hidden_width: 0 } = self.architecture {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        self.selection.validate()?;
        self.split.validate()
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        let mut cfg = self.clone();
        cfg.selection.strategy = strategy;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub epoch_wall_time_s: f64,
    pub samples_processed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    /// Validation metrics of the freshly initialised model.
    pub initial_val_accuracy: f64,
    pub initial_val_loss: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub total_wall_time_s: f64,
    pub total_samples_processed: usize,
    /// JEST selection-history size at the end of each epoch (empty otherwise).
    pub selection_history_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: TrainingConfig,
    pub epochs: Vec<EpochMetrics>,
    pub summary: RunSummary,
}

impl ExperimentRecord {
    /// Copy with every wall-clock field zeroed, for determinism checks.
    pub fn without_timing(&self) -> ExperimentRecord {
        let mut rec = self.clone();
        for e in &mut rec.epochs {
            e.epoch_wall_time_s = 0.0;
        }
        rec.summary.total_wall_time_s = 0.0;
        rec
    }
}

/// A finished run together with its final model.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub record: ExperimentRecord,
    pub model: Classifier,
}

/// Decorrelates per-batch seeds (splitmix64 finaliser).
fn derive_seed(base: u64, epoch: u64, batch: u64) -> u64 {
    let mut z = base ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ batch.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_experiment(cfg: &TrainingConfig) -> Result<ExperimentRecord> {
    train(cfg).map(|run| run.record)
}

/// Runs the configured training and returns the record and final model.
///
/// Each epoch reshuffles the training split, and every batch is reduced to
/// the rows chosen by the configured selector before the forward/backward
/// pass. Only selection and the optimisation step are timed; validation and
/// test evaluation always use the full splits.
pub fn train(cfg: &TrainingConfig) -> Result<TrainedRun> {
    cfg.validate()?;
    let dataset = cfg.dataset.load(cfg.seeds.data)?;
    dataset.require_labels()?;
    if dataset.class_count() < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 classes, dataset has {}",
            dataset.class_count()
        )));
    }
    let (train_set, val_set, test_set) = data::split(&dataset, &cfg.split)?;
    if train_set.len() < 2 || val_set.is_empty() || test_set.is_empty() {
        return Err(Error::Config(format!(
            "split left train/val/test = {}/{}/{} samples",
            train_set.len(),
            val_set.len(),
            test_set.len()
        )));
    }
    let val_labels = val_set.require_labels()?;
    let test_labels = test_set.require_labels()?;

    let mut model = Classifier::new(cfg.architecture, dataset.dim(), dataset.class_count(), cfg.seeds.init)?;
    let reference = model.clone();
    let mut opt = OptimizerState::new(&model, cfg.learning_rate, cfg.momentum);
    let initial = model::evaluate(&model, val_set.features(), val_labels)?;

    let strategy = cfg.selection.strategy;
    let mut history: BTreeSet<usize> = BTreeSet::new();
    let mut history_sizes = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batches = data::batches(&train_set, cfg.batch_size, cfg.seeds.shuffle, epoch as u64)?;

        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut correct = 0.0;
        let mut processed = 0;
        for (b, batch) in batches.iter().enumerate() {
            let mut sel_cfg = cfg.selection.clone();
            sel_cfg.seed = derive_seed(cfg.seeds.selection, epoch as u64, b as u64);

            let jest_state = if strategy == Strategy::Jest {
                let x = batch.features.data();
                let learner = model::per_sample_losses(&model.forward(x)?, &batch.labels)?;
                let reference = model::per_sample_losses(&reference.forward(x)?, &batch.labels)?;
                Some(JestState::new(learner, reference).with_history(batch.ids.clone(), history.clone()))
            } else {
                None
            };
            let selected = selection::select(&batch.features, &sel_cfg, jest_state.as_ref())?;

            let x = batch.features.data().select(Axis(0), &selected.indices);
            let labels: Vec<usize> = selected.indices.iter().map(|&i| batch.labels[i]).collect();
            let logits = model.forward(&x)?;
            let (loss, grad) = model::cross_entropy(&logits, &labels)?;
            let grads = model.backward(&x, &grad)?;
            model::sgd_momentum_step(&mut model, &mut opt, &grads)?;

            loss_sum += loss * labels.len() as f64;
            correct += model::accuracy(&logits, &labels) * labels.len() as f64;
            processed += labels.len();
            if strategy == Strategy::Jest {
                history.extend(selected.indices.iter().map(|&i| batch.ids[i]));
            }
        }
        let elapsed = started.elapsed().as_secs_f64();

        if !model.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1 });
        }
        let val = model::evaluate(&model, val_set.features(), val_labels)?;
        epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / processed as f64,
            train_accuracy: correct / processed as f64,
            val_loss: val.loss,
            val_accuracy: val.accuracy,
            epoch_wall_time_s: elapsed,
            samples_processed: processed,
        });
        if strategy == Strategy::Jest {
            history_sizes.push(history.len());
        }
    }

    let test = model::evaluate(&model, test_set.features(), test_labels)?;
    let summary = RunSummary {
        strategy,
        train_size: train_set.len(),
        val_size: val_set.len(),
        test_size: test_set.len(),
        initial_val_accuracy: initial.accuracy,
        initial_val_loss: initial.loss,
        test_accuracy: test.accuracy,
        test_loss: test.loss,
        total_wall_time_s: epochs.iter().map(|e| e.epoch_wall_time_s).sum(),
        total_samples_processed: epochs.iter().map(|e| e.samples_processed).sum(),
        selection_history_sizes: history_sizes,
    };
    Ok(TrainedRun {
        record: ExperimentRecord {
            config: cfg.clone(),
            epochs,
            summary,
        },
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: Strategy,
    pub filter_ratio: f64,
    /// Final-epoch values.
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub test_acc: f64,
    pub test_loss: f64,
    pub total_time_s: f64,
    pub samples_processed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: TrainingConfig,
    pub strategies: Vec<Strategy>,
    pub rows: Vec<ComparisonRow>,
    pub records: Vec<ExperimentRecord>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text side-by-side table, one row per strategy.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>9} {:>9} {:>9} {:>13} {:>17}\n",
            "strategy", "train_acc", "val_acc", "test_acc", "total_time_s", "samples_processed"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>13.4} {:>17}",
                row.strategy.as_str(),
                row.train_acc,
                row.val_acc,
                row.test_acc,
                row.total_time_s,
                row.samples_processed
            );
        }
        out
    }
}

/// Runs the same configuration once per strategy. Data, initialisation and
/// batch order are shared; only the selector differs. Runs execute one after
/// another so their timings are comparable.
pub fn compare_strategies(base: &TrainingConfig, strategies: &[Strategy]) -> Result<ComparisonReport> {
    if strategies.len() < 2 {
        return Err(Error::Config("comparison needs at least two strategies".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = strategies.iter().find(|s| !seen.insert(**s)) {
        return Err(Error::Config(format!("strategy '{dup}' listed twice")));
    }
    base.validate()?;

    let mut rows = Vec::with_capacity(strategies.len());
    let mut records = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let record = run_experiment(&base.with_strategy(strategy))?;
        let last = record.epochs.last().expect("at least one epoch");
        rows.push(ComparisonRow {
            strategy,
            filter_ratio: if strategy == Strategy::Standard { 0.0 } else { base.selection.filter_ratio },
            train_acc: last.train_accuracy,
            train_loss: last.train_loss,
            val_acc: last.val_accuracy,
            val_loss: last.val_loss,
            test_acc: record.summary.test_accuracy,
            test_loss: record.summary.test_loss,
            total_time_s: record.summary.total_wall_time_s,
            samples_processed: record.summary.total_samples_processed,
        });
        records.push(record);
    }
    Ok(ComparisonReport {
        config: base.clone(),
        strategies: strategies.to_vec(),
        rows,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricsFormat {
    Csv,
    Json,
}

pub fn metrics_csv(rec: &ExperimentRecord) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(METRICS_CSV_HEADER)?;
    for e in &rec.epochs {
        writer.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.train_accuracy.to_string(),
            e.val_loss.to_string(),
            e.val_accuracy.to_string(),
            e.epoch_wall_time_s.to_string(),
            e.samples_processed.to_string(),
        ])?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

pub fn metrics_json(rec: &ExperimentRecord) -> Result<String> {
    Ok(serde_json::to_string_pretty(rec)?)
}

pub fn export_metrics(rec: &ExperimentRecord, path: &Path, format: MetricsFormat) -> Result<()> {
    let text = match format {
        MetricsFormat::Csv => metrics_csv(rec)?,
        MetricsFormat::Json => metrics_json(rec)?,
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_CSV_HEADER {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let num = |field: &str| -> Result<f64> {
        field
            .parse()
            .map_err(|_| Error::Format(format!("'{field}' is not a number")))
    };
    let int = |field: &str| -> Result<usize> {
        field
            .parse()
            .map_err(|_| Error::Format(format!("'{field}' is not an integer")))
    };
    reader
        .records()
        .map(|record| {
            let r = record?;
            Ok(EpochMetrics {
                epoch: int(&r[0])?,
                train_loss: num(&r[1])?,
                train_accuracy: num(&r[2])?,
                val_loss: num(&r[3])?,
                val_accuracy: num(&r[4])?,
                epoch_wall_time_s: num(&r[5])?,
                samples_processed: int(&r[6])?,
            })
        })
        .collect()
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    parse_metrics_csv(&fs::read_to_string(path)?)
}

pub fn read_metrics_json(path: &Path) -> Result<ExperimentRecord> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    /// Range covered by the bins; widened by 0.5 on each side when all
    /// weights are equal.
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Final-layer weight distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub layer: String,
    pub shape: Vec<usize>,
    /// Row-major, `fan_in x classes`.
    pub weights: Vec<f64>,
    pub histogram: Histogram,
    pub stats: WeightStats,
}

pub fn weight_summary(model: &Classifier) -> WeightSummary {
    let layer = model.final_layer();
    let weights: Vec<f64> = layer.weight.iter().copied().collect();
    let count = weights.len() as f64;
    let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = weights.iter().sum::<f64>() / count;
    let var = weights.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / count;

    let (lower, upper) = if max > min { (min, max) } else { (min - 0.5, max + 0.5) };
    let width = upper - lower;
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for &w in &weights {
        let bin = (((w - lower) / width) * HISTOGRAM_BINS as f64).floor() as usize;
        counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }

    WeightSummary {
        layer: model.layer_names().last().copied().unwrap_or("fc").to_owned(),
        shape: vec![layer.weight.nrows(), layer.weight.ncols()],
        weights,
        histogram: Histogram {
            bins: HISTOGRAM_BINS,
            lower,
            upper,
            counts,
        },
        stats: WeightStats {
            min,
            max,
            mean,
            std: var.sqrt(),
        },
    }
}

pub fn export_weight_summary(model: &Classifier, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&weight_summary(model))?)?;
    Ok(())
}
