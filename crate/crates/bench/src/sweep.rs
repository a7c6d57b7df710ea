//! One-axis hyperparameter sweeps over datasets, learning rates and seeds.

use std::path::{Path, PathBuf};

use kan_tsc::complexity::{Assumptions, ComplexityReport};
use kan_tsc::metrics::{precision_recall_f1, ConfusionMatrix};
use kan_tsc::network::Variant;
use kan_tsc::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainingConfig, DEFAULT_SEEDS};
use crate::run::{run_prepared, LoadedDataset, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Grid,
    Depth,
    Width,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Grid => "grid",
            Family::Depth => "depth",
            Family::Width => "width",
        }
    }

    /// Standard values for this axis.
    pub fn default_axis(self) -> Vec<usize> {
        match self {
            Family::Grid => vec![3, 5, 10, 15, 20],
            Family::Depth => (2..=10).collect(),
            Family::Width => (1..=20).map(|i| 5 * i).collect(),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid" => Ok(Family::Grid),
            "depth" => Ok(Family::Depth),
            "width" => Ok(Family::Width),
            other => Err(Error::Config(format!("unknown sweep family `{other}`"))),
        }
    }
}

pub const DEFAULT_LEARNING_RATES: [f64; 5] = [0.0001, 0.001, 0.01, 0.1, 1.0];

/// Exactly one architectural axis varies; the others stay at the fixed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub family: Family,
    pub datasets: Vec<String>,
    /// Dataset list file used when `datasets` is empty.
    pub manifest: Option<PathBuf>,
    pub variants: Vec<Variant>,
    /// Values of the varying axis; empty means the standard values.
    pub axis_values: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub fixed_grid: usize,
    pub fixed_depth: usize,
    pub fixed_width: usize,
    pub spline_order: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        let t = TrainingConfig::default();
        SweepPlan {
            family: Family::Grid,
            datasets: Vec::new(),
            manifest: None,
            variants: vec![Variant::KanOriginal, Variant::KanEfficient],
            axis_values: Vec::new(),
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            seeds: DEFAULT_SEEDS.to_vec(),
            fixed_grid: 5,
            fixed_depth: 3,
            fixed_width: 40,
            spline_order: 3,
            epochs: t.epochs,
            batch_size: t.batch_size,
            train_fraction: t.train_fraction,
        }
    }
}

/// One cell of the plan's Cartesian product.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub dataset: String,
    pub model: ModelConfig,
    pub seed: u64,
    pub axis_value: usize,
}

impl SweepPlan {
    pub fn axis(&self) -> Vec<usize> {
        if self.axis_values.is_empty() {
            self.family.default_axis()
        } else {
            self.axis_values.clone()
        }
    }

    /// Fills `datasets` from `manifest` when no names are given inline.
    pub fn resolve_datasets(&mut self) -> Result<()> {
        if self.datasets.is_empty() {
            if let Some(path) = &self.manifest {
                self.datasets = read_manifest(path)?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.datasets.is_empty() || self.variants.is_empty() || self.seeds.is_empty() {
            return bad("sweep needs datasets, variants and seeds".into());
        }
        if self.learning_rates.is_empty() || self.axis().is_empty() {
            return bad("sweep needs learning rates and axis values".into());
        }
        if self.family == Family::Grid && self.variants.contains(&Variant::Mlp) {
            return bad("grid sweeps apply to KAN variants only".into());
        }
        if self.family == Family::Depth && self.axis().contains(&0) {
            return bad("depth values must be positive".into());
        }
        if self.fixed_depth == 0 || self.fixed_width == 0 || self.epochs == 0 || self.batch_size == 0 {
            return bad("fixed depth, width, epochs and batch size must be positive".into());
        }
        Ok(())
    }

    pub fn model_for(&self, variant: Variant, lr: f64, axis_value: usize) -> ModelConfig {
        let (grid, depth, width) = match self.family {
            Family::Grid => (axis_value, self.fixed_depth, self.fixed_width),
            Family::Depth => (self.fixed_grid, axis_value, self.fixed_width),
            Family::Width => (self.fixed_grid, self.fixed_depth, axis_value),
        };
        let hidden = vec![width; depth - 1];
        let mut m = if variant.is_kan() {
            ModelConfig::kan(variant, hidden, grid, lr)
        } else {
            ModelConfig::mlp(hidden, lr)
        };
        m.spline_order = if variant.is_kan() { self.spline_order } else { 0 };
        m
    }

    /// Jobs ordered by dataset, variant, learning rate, axis value, seed.
    pub fn jobs(&self) -> Vec<Job> {
        let mut jobs = Vec::new();
        for d in &self.datasets {
            for &v in &self.variants {
                for &lr in &self.learning_rates {
                    for a in self.axis() {
                        for &seed in &self.seeds {
                            jobs.push(Job {
                                dataset: d.clone(),
                                model: self.model_for(v, lr, a),
                                seed,
                                axis_value: a,
                            });
                        }
                    }
                }
            }
        }
        jobs
    }

    fn training(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seeds: self.seeds.clone(),
            train_fraction: self.train_fraction,
            ..TrainingConfig::default()
        }
    }
}

/// One dataset name per line; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn failed_record(job: &Job, data: &LoadedDataset, plan: &SweepPlan, err: &Error) -> RunRecord {
    let (t, c) = (data.train.series_len(), data.train.class_count());
    let spec = job.model.spec(t, c);
    let empty = precision_recall_f1(&ConfusionMatrix::zeros(c));
    let complexity = ComplexityReport::for_spec(&job.model.row_name(), &spec, Assumptions::default())
        .unwrap_or_else(|_| ComplexityReport {
            model: job.model.variant.display_name().into(),
            config: job.model.row_name(),
            params_eq: 0.0,
            params_stored: 0.0,
            flops: 0.0,
            tec_joules: 0.0,
            nl_silu: 0.0,
            gflops_per_watt: 0.0,
        });
    RunRecord {
        dataset: job.dataset.clone(),
        model: job.model.clone(),
        epochs: plan.epochs,
        batch_size: plan.batch_size,
        seed: job.seed,
        family: Some(plan.family),
        axis_value: Some(job.axis_value as f64),
        series_len: t,
        classes: c,
        metrics: empty.clone(),
        final_metrics: empty,
        best_epoch: 0,
        complexity,
        train_seconds: 0.0,
        eval_seconds: 0.0,
        diverged: true,
        error: Some(err.to_string()),
    }
}

/// Runs every job of `plan` on at most `parallelism` threads. Records come
/// back in job order whatever the thread count; a failing run becomes a
/// record with `error` set instead of aborting the sweep. Datasets that fail
/// to load, such as those with missing values, are logged and skipped.
pub fn run_sweep(plan: &SweepPlan, data_dir: &Path, parallelism: usize) -> Result<Vec<RunRecord>> {
    plan.validate()?;
    let mut data = Vec::new();
    for name in &plan.datasets {
        match LoadedDataset::load(data_dir, name) {
            Ok(d) => data.push(d),
            Err(e) => log::warn!("skipping {e}"),
        }
    }
    if data.is_empty() {
        return Err(Error::Config(format!(
            "no dataset of the plan loads from {}",
            data_dir.display()
        )));
    }
    let jobs: Vec<Job> = plan
        .jobs()
        .into_iter()
        .filter(|j| data.iter().any(|d| d.name == j.dataset))
        .collect();
    let training = plan.training();
    let total = jobs.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let done = std::sync::atomic::AtomicUsize::new(0);
    let records = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let ds = data
                    .iter()
                    .find(|d| d.name == job.dataset)
                    .expect("dataset loaded");
                let cfg = training.train_config(&job.model, job.seed);
                let rec = match run_prepared(ds, &job.model, &cfg, plan.train_fraction) {
                    Ok(a) => {
                        let mut r = a.record;
                        r.family = Some(plan.family);
                        r.axis_value = Some(job.axis_value as f64);
                        r
                    }
                    Err(e) => {
                        log::error!("{} {} seed {}: {e}", job.dataset, job.model.key(), job.seed);
                        failed_record(job, ds, plan, &e)
                    }
                };
                let n = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                log::info!(
                    "[{n}/{total}] {} {} seed {} f1 {:.4}",
                    job.dataset,
                    job.model.key(),
                    job.seed,
                    rec.f1()
                );
                rec
            })
            .collect()
    });
    Ok(records)
}
