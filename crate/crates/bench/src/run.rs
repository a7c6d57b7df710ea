//! Single-run pipeline: load, split, standardize, train, evaluate, cost.

use std::io::{BufRead, Write};
use std::path::Path;

use kan_tsc::complexity::{Assumptions, ComplexityReport};
use kan_tsc::metrics::ClassificationMetrics;
use kan_tsc::network::Checkpoint;
use kan_tsc::optimizer::{evaluate, train, EpochLog, Selection, TrainConfig};
use kan_tsc::ucr_data::{
    apply_scaler, fit_scaler, load_ucr_pair, stratified_split, Dataset, ScalerParams, SplitSpec,
};
use kan_tsc::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::sweep::Family;

/// Training and test data of one dataset, not yet split or scaled.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

impl LoadedDataset {
    pub fn load(data_dir: &Path, name: &str) -> Result<Self> {
        let (train, test) =
            load_ucr_pair(data_dir, name).map_err(|e| Error::Config(format!("dataset {name}: {e}")))?;
        Ok(LoadedDataset {
            name: name.to_string(),
            train,
            test,
        })
    }

    /// Stratified split seeded by `seed`, then standardization fit on the
    /// training part only.
    pub fn prepare(&self, seed: u64, train_fraction: f64) -> Result<Prepared> {
        let (tr, val) = stratified_split(
            &self.train,
            &SplitSpec {
                train_fraction,
                seed,
                stratify: true,
            },
        )?;
        let scaler = fit_scaler(&tr);
        Ok(Prepared {
            train: apply_scaler(&tr, &scaler)?,
            val: apply_scaler(&val, &scaler)?,
            test: apply_scaler(&self.test, &scaler)?,
            scaler,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub scaler: ScalerParams,
}

/// Outcome of one (dataset, configuration, seed) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub family: Option<Family>,
    #[serde(default)]
    pub axis_value: Option<f64>,
    pub series_len: usize,
    pub classes: usize,
    /// Test metrics of the selected snapshot.
    pub metrics: ClassificationMetrics,
    /// Test metrics of the last-epoch parameters.
    pub final_metrics: ClassificationMetrics,
    pub best_epoch: usize,
    pub complexity: ComplexityReport,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub diverged: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn f1(&self) -> f64 {
        self.metrics.macro_f1
    }

    /// Same run up to wall-clock fields.
    pub fn same_result(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        for r in [&mut a, &mut b] {
            r.train_seconds = 0.0;
            r.eval_seconds = 0.0;
        }
        a == b
    }
}

/// Everything [`run_prepared`] produces beyond the record.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub logs: Vec<EpochLog>,
    pub checkpoint: Checkpoint,
}

/// Runs one configuration on an already loaded dataset.
pub fn run_prepared(
    data: &LoadedDataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    train_fraction: f64,
) -> Result<RunArtifacts> {
    let prepared = data.prepare(cfg.seed, train_fraction)?;
    let spec = model.spec(prepared.train.series_len(), prepared.train.class_count());
    let outcome = train(&spec, &prepared.train, &prepared.val, cfg)?;
    let started = std::time::Instant::now();
    let selected = outcome.selected(cfg.selection);
    let metrics = evaluate(selected, &prepared.test)?;
    let final_metrics = if cfg.selection == Selection::FinalEpoch {
        metrics.clone()
    } else {
        evaluate(&outcome.final_params, &prepared.test)?
    };
    let eval_seconds = started.elapsed().as_secs_f64();
    let complexity = ComplexityReport::for_spec(&model.row_name(), &spec, Assumptions::default())?;
    let record = RunRecord {
        dataset: data.name.clone(),
        model: model.clone(),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        family: None,
        axis_value: None,
        series_len: spec.input_len(),
        classes: spec.class_count(),
        metrics,
        final_metrics,
        best_epoch: outcome.best_epoch,
        complexity,
        train_seconds: outcome.train_seconds,
        eval_seconds,
        diverged: outcome.diverged.is_some(),
        error: None,
    };
    let checkpoint = Checkpoint {
        seed: cfg.seed,
        network: selected.clone(),
    };
    Ok(RunArtifacts {
        record,
        logs: outcome.logs,
        checkpoint,
    })
}

/// Loads `name` from `data_dir` and runs one configuration.
pub fn run_single(data_dir: &Path, name: &str, model: &ModelConfig, cfg: &TrainConfig) -> Result<RunRecord> {
    let data = LoadedDataset::load(data_dir, name)?;
    Ok(run_prepared(&data, model, cfg, 0.8)?.record)
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[RunRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::Io {
            path: "records".into(),
            source: e,
        })?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::Io {
            path: "records".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Reads every `*.jsonl` file in `dir`, in file-name order.
pub fn read_records_dir(dir: &Path) -> Result<Vec<RunRecord>> {
    let io = |e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let f = std::fs::File::open(&p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?;
        out.extend(read_jsonl(std::io::BufReader::new(f))?);
    }
    Ok(out)
}
