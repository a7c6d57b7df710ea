//! CSV outputs for comparison tables, sensitivity curves, scatter plots and
//! average ranks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kan_tsc::complexity::{Assumptions, ComplexityReport};
use kan_tsc::metrics::MetricsRecord;
use kan_tsc::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateReport;
use crate::config::{ModelConfig, Preset};
use crate::run::RunRecord;

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Mean series length and class count over the 117 retained datasets.
pub const ARCHIVE_MEAN_T: f64 = 537.10;
pub const ARCHIVE_MEAN_C: f64 = 8.26;

/// Declares the rows of a complexity table. Input length and class count may
/// be fractional (archive means); uniform hidden widths then use the closed
/// forms, other shapes are rounded and summed layer by layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplexitySpec {
    pub series_len: f64,
    pub classes: f64,
    pub presets: Vec<Preset>,
    pub models: Vec<ModelConfig>,
    pub assumptions: Assumptions,
}

impl Default for ComplexitySpec {
    fn default() -> Self {
        ComplexitySpec {
            series_len: ARCHIVE_MEAN_T,
            classes: ARCHIVE_MEAN_C,
            presets: Preset::REFERENCE.to_vec(),
            models: Vec::new(),
            assumptions: Assumptions::default(),
        }
    }
}

pub fn complexity_row(model: &ModelConfig, t: f64, c: f64, a: Assumptions) -> Result<ComplexityReport> {
    let name = model.row_name();
    let uniform = model
        .hidden
        .first()
        .filter(|&&m| model.hidden.iter().all(|&h| h == m));
    let mut row = match uniform {
        Some(&m) if model.variant.is_kan() => ComplexityReport::kan(
            &name,
            t,
            m as f64,
            model.depth(),
            c,
            model.grid_size,
            model.spline_order,
            a,
        )?,
        Some(&m) => ComplexityReport::mlp(&name, t, m as f64, model.hidden.len(), c, a)?,
        None => {
            let spec = model.spec(t.round() as usize, c.round() as usize);
            ComplexityReport::for_spec(&name, &spec, a)?
        }
    };
    row.model = model.variant.display_name().into();
    Ok(row)
}

impl ComplexitySpec {
    pub fn rows(&self) -> Result<Vec<ComplexityReport>> {
        self.presets
            .iter()
            .map(|p| p.config())
            .chain(self.models.iter().cloned())
            .map(|m| complexity_row(&m, self.series_len, self.classes, self.assumptions))
            .collect()
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

pub const TABLE_HEADER: [&str; 20] = [
    "model",
    "config",
    "datasets",
    "runs",
    "divergent",
    "precision_mean",
    "precision_std",
    "recall_mean",
    "recall_std",
    "f1_mean",
    "f1_std",
    "precision_w_mean",
    "recall_w_mean",
    "f1_w_mean",
    "train_seconds_mean",
    "train_seconds_std",
    "params",
    "flops",
    "tec_joules",
    "key",
];

/// Writes `table.csv`, `curves.csv`, `scatter.csv`, `ranks.csv`,
/// `per_dataset.csv` and `runs.csv` into `out_dir`. Returns the paths.
pub fn emit_reports(report: &AggregateReport, records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let mut written = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let path = out_dir.join(name);
        write_csv(&path, header, &rows)?;
        written.push(path);
        Ok(())
    };

    // Comparison tables list configurations that are not part of a sweep.
    let table: Vec<Vec<String>> = report
        .rows
        .iter()
        .filter(|r| r.family.is_none())
        .map(|r| {
            vec![
                r.model.clone(),
                r.config.clone(),
                r.datasets.to_string(),
                r.runs.to_string(),
                r.divergent.to_string(),
                num(r.precision.mean),
                num(r.precision.std),
                num(r.recall.mean),
                num(r.recall.std),
                num(r.f1.mean),
                num(r.f1.std),
                num(r.precision_w.mean),
                num(r.recall_w.mean),
                num(r.f1_w.mean),
                num(r.train_seconds.mean),
                num(r.train_seconds.std),
                num(r.params),
                num(r.flops),
                num(r.tec_joules),
                r.key.clone(),
            ]
        })
        .collect();
    emit("table.csv", &TABLE_HEADER, table)?;

    let mut curves: Vec<(String, String, f64, f64, f64)> = report
        .rows
        .iter()
        .filter_map(|r| {
            let fam = r.family?;
            Some((
                fam.name().to_string(),
                r.variant.clone(),
                r.learning_rate,
                r.axis_value?,
                r.f1.mean,
            ))
        })
        .collect();
    curves.sort_by(|a, b| {
        (&a.0, &a.1)
            .cmp(&(&b.0, &b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.total_cmp(&b.3))
    });
    emit(
        "curves.csv",
        &["family", "variant", "lr", "axis_value", "mean_f1"],
        curves
            .into_iter()
            .map(|c| vec![c.0, c.1, num(c.2), num(c.3), num(c.4)])
            .collect(),
    )?;

    // Scatter pairs for every two non-sweep configurations sharing datasets.
    let table_keys: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.family.is_none())
        .map(|r| r.key.as_str())
        .collect();
    let mut by_key: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for s in &report.per_dataset {
        if table_keys.contains(&s.key.as_str()) {
            by_key.entry(&s.key).or_default().insert(&s.dataset, s.mean_f1);
        }
    }
    let keys: Vec<&str> = by_key.keys().copied().collect();
    let mut scatter = Vec::new();
    for (i, x) in keys.iter().enumerate() {
        for y in &keys[i + 1..] {
            for (d, fx) in &by_key[x] {
                if let Some(fy) = by_key[y].get(d) {
                    scatter.push(vec![
                        x.to_string(),
                        y.to_string(),
                        d.to_string(),
                        num(*fx),
                        num(*fy),
                    ]);
                }
            }
        }
    }
    emit(
        "scatter.csv",
        &["model_x", "model_y", "dataset", "model_x_f1", "model_y_f1"],
        scatter,
    )?;

    let mut ranks = report.ranks.clone();
    ranks.sort_by(|a, b| a.average_rank.total_cmp(&b.average_rank).then(a.key.cmp(&b.key)));
    emit(
        "ranks.csv",
        &["key", "average_rank", "datasets"],
        ranks
            .into_iter()
            .map(|r| vec![r.key, num(r.average_rank), r.datasets.to_string()])
            .collect(),
    )?;

    emit(
        "per_dataset.csv",
        &["key", "dataset", "mean_f1", "runs"],
        report
            .per_dataset
            .iter()
            .map(|s| {
                vec![
                    s.key.clone(),
                    s.dataset.clone(),
                    num(s.mean_f1),
                    s.runs.to_string(),
                ]
            })
            .collect(),
    )?;

    emit(
        "runs.csv",
        &[
            "dataset",
            "model",
            "seed",
            "precision",
            "recall",
            "f1",
            "precision_w",
            "recall_w",
            "f1_w",
        ],
        records
            .iter()
            .map(|r| {
                let m = MetricsRecord::new(&r.dataset, &r.model.key(), r.seed, &r.metrics);
                vec![
                    m.dataset,
                    m.model,
                    m.seed.to_string(),
                    num(m.precision),
                    num(m.recall),
                    num(m.f1),
                    num(m.precision_w),
                    num(m.recall_w),
                    num(m.f1_w),
                ]
            })
            .collect(),
    )?;
    Ok(written)
}
