//! Mean/stddev tables and average ranks from run records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::run::RunRecord;
use crate::sweep::Family;

/// Per-run quantities that get averaged.
const FIELDS: usize = 10;
const PRECISION: usize = 0;
const RECALL: usize = 1;
const F1: usize = 2;
const PRECISION_W: usize = 3;
const RECALL_W: usize = 4;
const F1_W: usize = 5;
const TRAIN_SECONDS: usize = 6;
const PARAMS: usize = 7;
const FLOPS: usize = 8;
const TEC: usize = 9;

fn values(r: &RunRecord) -> [f64; FIELDS] {
    let m = &r.metrics;
    [
        m.macro_precision,
        m.macro_recall,
        m.macro_f1,
        m.weighted_precision,
        m.weighted_recall,
        m.weighted_f1,
        r.train_seconds,
        r.complexity.params_eq,
        r.complexity.flops,
        r.complexity.tec_joules,
    ]
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Cell {
    /// `(seed, values)` per run.
    runs: Vec<(u64, [f64; FIELDS])>,
    divergent: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Group {
    model: ModelConfig,
    family: Option<Family>,
    axis_value: Option<f64>,
    cells: BTreeMap<String, Cell>,
}

/// Order-insensitive, mergeable collection of records. Raw values are kept
/// and summed in a canonical order, so any sharding gives identical output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Aggregator {
    groups: BTreeMap<String, Group>,
}

impl Aggregator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, r: &RunRecord) {
        let g = self.groups.entry(r.model.key()).or_insert_with(|| Group {
            model: r.model.clone(),
            family: r.family,
            axis_value: r.axis_value,
            cells: BTreeMap::new(),
        });
        let cell = g.cells.entry(r.dataset.clone()).or_default();
        cell.runs.push((r.seed, values(r)));
        cell.divergent += usize::from(r.diverged);
    }

    pub fn extend<'a>(&mut self, records: impl IntoIterator<Item = &'a RunRecord>) {
        for r in records {
            self.add(r);
        }
    }

    pub fn merge(&mut self, other: Aggregator) {
        for (key, g) in other.groups {
            match self.groups.get_mut(&key) {
                None => {
                    self.groups.insert(key, g);
                }
                Some(mine) => {
                    for (d, c) in g.cells {
                        let cell = mine.cells.entry(d).or_default();
                        cell.runs.extend(c.runs);
                        cell.divergent += c.divergent;
                    }
                }
            }
        }
    }

    pub fn finish(&self, pooled: bool) -> AggregateReport {
        let mut rows = Vec::new();
        let mut per_dataset = Vec::new();
        for (key, g) in &self.groups {
            let mut dataset_means: Vec<[f64; FIELDS]> = Vec::new();
            let mut all_runs: Vec<[f64; FIELDS]> = Vec::new();
            let mut runs = 0;
            let mut divergent = 0;
            for (dataset, cell) in &g.cells {
                let mut sorted = cell.runs.clone();
                sorted.sort_by(|a, b| {
                    a.0.cmp(&b.0).then_with(|| {
                        a.1.iter()
                            .zip(&b.1)
                            .map(|(x, y)| x.total_cmp(y))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                });
                let vals: Vec<[f64; FIELDS]> = sorted.iter().map(|r| r.1).collect();
                let m = column_means(&vals);
                per_dataset.push(DatasetScore {
                    key: key.clone(),
                    dataset: dataset.clone(),
                    mean_f1: m[F1],
                    runs: vals.len(),
                });
                runs += vals.len();
                divergent += cell.divergent;
                all_runs.extend(vals);
                dataset_means.push(m);
            }
            let basis = if pooled { &all_runs } else { &dataset_means };
            let mean = column_means(basis);
            let std = column_stds(basis, &mean);
            let stat = |i: usize| Stat {
                mean: mean[i],
                std: std[i],
            };
            rows.push(AggregateRow {
                key: key.clone(),
                model: g.model.variant.display_name().to_string(),
                config: g.model.row_name(),
                variant: g.model.variant.name().to_string(),
                learning_rate: g.model.learning_rate,
                family: g.family,
                axis_value: g.axis_value,
                datasets: g.cells.len(),
                runs,
                divergent,
                precision: stat(PRECISION),
                recall: stat(RECALL),
                f1: stat(F1),
                precision_w: stat(PRECISION_W),
                recall_w: stat(RECALL_W),
                f1_w: stat(F1_W),
                train_seconds: stat(TRAIN_SECONDS),
                params: mean[PARAMS],
                flops: mean[FLOPS],
                tec_joules: mean[TEC],
            });
        }
        let ranks = average_ranks(&per_dataset);
        AggregateReport {
            pooled,
            rows,
            per_dataset,
            ranks,
        }
    }
}

fn column_means(rows: &[[f64; FIELDS]]) -> [f64; FIELDS] {
    let mut out = [0.0; FIELDS];
    if rows.is_empty() {
        return out;
    }
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= rows.len() as f64);
    out
}

/// Sample standard deviation (n - 1); zero for fewer than two rows.
fn column_stds(rows: &[[f64; FIELDS]], mean: &[f64; FIELDS]) -> [f64; FIELDS] {
    let mut out = [0.0; FIELDS];
    if rows.len() < 2 {
        return out;
    }
    for r in rows {
        for i in 0..FIELDS {
            out[i] += (r[i] - mean[i]).powi(2);
        }
    }
    out.iter_mut()
        .for_each(|o| *o = (*o / (rows.len() - 1) as f64).sqrt());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// Full configuration description.
    pub key: String,
    pub model: String,
    pub config: String,
    pub variant: String,
    pub learning_rate: f64,
    pub family: Option<Family>,
    pub axis_value: Option<f64>,
    pub datasets: usize,
    pub runs: usize,
    pub divergent: usize,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub precision_w: Stat,
    pub recall_w: Stat,
    pub f1_w: Stat,
    pub train_seconds: Stat,
    pub params: f64,
    pub flops: f64,
    pub tec_joules: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetScore {
    pub key: String,
    pub dataset: String,
    pub mean_f1: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub key: String,
    pub average_rank: f64,
    pub datasets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Statistics over all runs rather than over per-dataset seed means.
    pub pooled: bool,
    pub rows: Vec<AggregateRow>,
    pub per_dataset: Vec<DatasetScore>,
    pub ranks: Vec<RankRow>,
}

impl AggregateReport {
    pub fn row(&self, key: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.key == key)
    }
}

pub fn aggregate(records: &[RunRecord], pooled: bool) -> AggregateReport {
    let mut agg = Aggregator::new();
    agg.extend(records);
    agg.finish(pooled)
}

/// Ranks of `scores` (1 = largest); tied values share the mean of their ranks.
pub fn rank_descending(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Average rank per configuration over the datasets that every
/// configuration was run on.
pub fn average_ranks(scores: &[DatasetScore]) -> Vec<RankRow> {
    let mut by_dataset: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut keys: Vec<&str> = Vec::new();
    for s in scores {
        by_dataset
            .entry(&s.dataset)
            .or_default()
            .insert(&s.key, s.mean_f1);
        if !keys.contains(&s.key.as_str()) {
            keys.push(&s.key);
        }
    }
    keys.sort_unstable();
    let mut sums = vec![0.0; keys.len()];
    let mut n = 0;
    for row in by_dataset.values() {
        if row.len() != keys.len() {
            continue;
        }
        let vals: Vec<f64> = keys.iter().map(|k| row[k]).collect();
        for (s, r) in sums.iter_mut().zip(rank_descending(&vals)) {
            *s += r;
        }
        n += 1;
    }
    keys.iter()
        .zip(sums)
        .map(|(k, s)| RankRow {
            key: k.to_string(),
            average_rank: if n == 0 { f64::NAN } else { s / n as f64 },
            datasets: n,
        })
        .collect()
}
