//! UCR-archive style datasets: parsing, label remapping, per-timestep
//! standardization and seeded train/validation splits.
//!
//! On disk a dataset is a pair of `<name>_TRAIN.tsv` / `<name>_TEST.tsv` files,
//! one series per line with the raw class label first:
//!
//! ```text
//! 1\t0.51\t0.73\t...
//! 2\t0.12\t0.25\t...
//! ```
//!
//! Raw labels are numeric and get remapped to `0..C` by ascending value, so the
//! mapping never depends on row order. The test file of a pair is remapped with
//! the training file's map.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered raw-label → class-index mapping. Position `i` holds the raw label of class `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    raw: Vec<f64>,
}

impl LabelMap {
    fn from_raw_labels(labels: &[f64]) -> Self {
        let mut raw = labels.to_vec();
        raw.sort_by(f64::total_cmp);
        raw.dedup();
        LabelMap { raw }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Contiguous index of a raw label, if known.
    pub fn index_of(&self, raw: f64) -> Option<usize> {
        self.raw.binary_search_by(|probe| probe.total_cmp(&raw)).ok()
    }

    /// Raw label of a contiguous class index.
    pub fn raw_label(&self, index: usize) -> Option<f64> {
        self.raw.get(index).copied()
    }

    pub fn raw_labels(&self) -> &[f64] {
        &self.raw
    }
}

/// A labeled collection of equal-length univariate series, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    series: Vec<f64>,
    length: usize,
    labels: Vec<usize>,
    label_map: LabelMap,
}

impl Dataset {
    /// Builds a dataset from rows and already-contiguous labels.
    pub fn from_rows(
        name: impl Into<String>,
        rows: &[Vec<f64>],
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: rows.len(),
                got: labels.len(),
            });
        }
        let length = rows[0].len();
        let mut series = Vec::with_capacity(rows.len() * length);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != length {
                return Err(Error::RaggedRow {
                    line: i + 1,
                    expected: length,
                    found: row.len(),
                });
            }
            series.extend_from_slice(row);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_count,
            });
        }
        let label_map = LabelMap {
            raw: (0..class_count).map(|c| c as f64).collect(),
        };
        Ok(Dataset {
            name: name.into(),
            series,
            length,
            labels,
            label_map,
        })
    }

    /// Number of series (N).
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Series length (T).
    pub fn series_len(&self) -> usize {
        self.length
    }

    /// Number of classes (C).
    pub fn class_count(&self) -> usize {
        self.label_map.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    /// The whole N × T matrix, row-major.
    pub fn values(&self) -> &[f64] {
        &self.series
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.series[i * self.length..(i + 1) * self.length]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.series.chunks_exact(self.length.max(1))
    }

    /// Rows at `indices`, in the given order, sharing this dataset's label map.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut series = Vec::with_capacity(indices.len() * self.length);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            series.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            name: self.name.clone(),
            series,
            length: self.length,
            labels,
            label_map: self.label_map.clone(),
        }
    }

    /// Serializes back to the UCR TSV format using raw labels.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (row, &label) in self.rows().zip(&self.labels) {
            let raw = self.label_map.raw[label];
            write!(out, "{raw}").unwrap();
            for v in row {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

struct RawTable {
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
}

fn parse_table(text: &str) -> Result<RawTable> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut expected: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split('\t');
        let label_tok = tokens.next().unwrap_or_default().trim();
        let label = parse_number(label_tok, line_no)?;
        let mut row = Vec::new();
        for tok in tokens {
            row.push(parse_number(tok.trim(), line_no)?);
        }
        match expected {
            None => expected = Some(row.len()),
            Some(t) if t != row.len() => {
                return Err(Error::RaggedRow {
                    line: line_no,
                    expected: t,
                    found: row.len(),
                })
            }
            Some(_) => {}
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() || expected == Some(0) {
        return Err(Error::EmptyDataset);
    }
    Ok(RawTable { rows, labels })
}

fn parse_number(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        token: tok.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue {
            line,
            token: tok.to_string(),
        });
    }
    Ok(v)
}

fn assemble(name: &str, table: RawTable, label_map: LabelMap) -> Result<Dataset> {
    let mut labels = Vec::with_capacity(table.labels.len());
    for (i, &raw) in table.labels.iter().enumerate() {
        let idx = label_map.index_of(raw).ok_or_else(|| Error::Parse {
            line: i + 1,
            token: format!("{raw} (label not present in training data)"),
        })?;
        labels.push(idx);
    }
    let length = table.rows[0].len();
    let series = table.rows.into_iter().flatten().collect();
    Ok(Dataset {
        name: name.to_string(),
        series,
        length,
        labels,
        label_map,
    })
}

/// Parses UCR TSV text, remapping raw labels by ascending value to `0..C`.
pub fn parse_ucr_tsv(name: &str, text: &str) -> Result<Dataset> {
    let table = parse_table(text)?;
    let map = LabelMap::from_raw_labels(&table.labels);
    assemble(name, table, map)
}

/// Parses UCR TSV text using an existing label map (for test files).
pub fn parse_ucr_tsv_with_map(name: &str, text: &str, map: &LabelMap) -> Result<Dataset> {
    let table = parse_table(text)?;
    assemble(name, table, map.clone())
}

/// Loads `<dir>/<name>_TRAIN.tsv` and `<dir>/<name>_TEST.tsv`.
/// `dir` may also be the parent directory holding a `<name>/` folder.
pub fn load_ucr_pair(dir: &Path, name: &str) -> Result<(Dataset, Dataset)> {
    let mut base = dir.to_path_buf();
    if !base.join(format!("{name}_TRAIN.tsv")).exists() && base.join(name).is_dir() {
        base = base.join(name);
    }
    let train_path = base.join(format!("{name}_TRAIN.tsv"));
    let test_path = base.join(format!("{name}_TEST.tsv"));
    let train_text = std::fs::read_to_string(&train_path).map_err(|e| Error::io(&train_path, e))?;
    let test_text = std::fs::read_to_string(&test_path).map_err(|e| Error::io(&test_path, e))?;
    let train = parse_ucr_tsv(name, &train_text)?;
    let test = parse_ucr_tsv_with_map(name, &test_text, train.label_map())?;
    if test.series_len() != train.series_len() {
        return Err(Error::Dimension {
            context: "test series length",
            expected: train.series_len(),
            got: test.series_len(),
        });
    }
    Ok((train, test))
}

/// Per-timestep mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

pub fn fit_scaler(train: &Dataset) -> ScalerParams {
    let t = train.series_len();
    let n = train.len() as f64;
    let mut means = vec![0.0; t];
    for row in train.rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; t];
    for row in train.rows() {
        for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
    ScalerParams { means, stds }
}

/// Standardizes every column; zero-variance columns become all zeros.
pub fn apply_scaler(ds: &Dataset, sc: &ScalerParams) -> Result<Dataset> {
    if sc.means.len() != ds.series_len() || sc.stds.len() != ds.series_len() {
        return Err(Error::Dimension {
            context: "scaler length",
            expected: ds.series_len(),
            got: sc.means.len(),
        });
    }
    let mut out = ds.clone();
    let t = ds.series_len();
    for row in out.series.chunks_exact_mut(t) {
        for ((v, m), s) in row.iter_mut().zip(&sc.means).zip(&sc.stds) {
            let centered = *v - m;
            *v = if *s > 0.0 { centered / s } else { 0.0 };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Split each class separately. Disable to shuffle all rows together.
    pub stratify: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            stratify: true,
        }
    }
}

fn train_count(n: usize, fraction: f64) -> usize {
    let k = (fraction * n as f64).round() as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        n
    }
}

/// Partitions rows into (train, validation). Row order inside each part follows
/// the original dataset; membership is driven only by `spec.seed`.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    if spec.stratify {
        for class in 0..ds.class_count() {
            let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
            if members.len() == 1 {
                warn!(
                    "{}: class {class} has a single member; validation part will lack it",
                    ds.name
                );
            }
            members.shuffle(&mut rng);
            let k = train_count(members.len(), spec.train_fraction);
            train_idx.extend_from_slice(&members[..k]);
            val_idx.extend_from_slice(&members[k..]);
        }
    } else {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        let k = train_count(all.len(), spec.train_fraction);
        train_idx.extend_from_slice(&all[..k]);
        val_idx.extend_from_slice(&all[k..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&val_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn column(values: &[f64]) -> Dataset {
        let rows: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
        Dataset::from_rows("col", &rows, vec![0; values.len()], 1).unwrap()
    }

    #[test]
    fn parses_two_rows() {
        let ds = parse_ucr_tsv("t", "1\t0.5\t0.7\n2\t0.1\t0.2").unwrap();
        assert_eq!((ds.len(), ds.series_len(), ds.class_count()), (2, 2, 2));
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.row(1), &[0.1, 0.2]);
    }

    #[test]
    fn remaps_negative_labels() {
        let ds = parse_ucr_tsv("t", "-1\t3\n1\t4").unwrap();
        assert_eq!(ds.label_map().raw_labels(), &[-1.0, 1.0]);
        assert_eq!(ds.label_map().index_of(-1.0), Some(0));
        assert_eq!(ds.label_map().index_of(1.0), Some(1));
    }

    #[test]
    fn remap_ignores_row_order() {
        let ds = parse_ucr_tsv("t", "3\t1\n1\t2\n2\t3").unwrap();
        assert_eq!(ds.labels(), &[2, 0, 1]);
    }

    #[test]
    fn ragged_rows_name_the_line() {
        let err = parse_ucr_tsv("t", "1\t1\t2\n\n2\t1").unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedRow {
                line: 3,
                expected: 2,
                found: 1
            }
        ));
    }

    #[test]
    fn bad_tokens_and_empty_input() {
        assert!(matches!(
            parse_ucr_tsv("t", "1\tx"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_ucr_tsv("t", "1\t0.5\n1\tNaN"),
            Err(Error::NonFiniteValue { line: 2, .. })
        ));
        assert!(matches!(parse_ucr_tsv("t", "\n \n"), Err(Error::EmptyDataset)));
    }

    #[test]
    fn test_file_uses_train_map() {
        let train = parse_ucr_tsv("t", "5\t1\n7\t2").unwrap();
        let test = parse_ucr_tsv_with_map("t", "7\t0\n5\t1", train.label_map()).unwrap();
        assert_eq!(test.labels(), &[1, 0]);
        assert!(parse_ucr_tsv_with_map("t", "6\t0", train.label_map()).is_err());
    }

    #[test]
    fn scaler_population_std() {
        let sc = fit_scaler(&column(&[1.0, 2.0, 3.0]));
        assert_abs_diff_eq!(sc.means[0], 2.0);
        assert_abs_diff_eq!(sc.stds[0], (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(sc.stds[0], 0.8165, epsilon = 1e-4);

        let scaled = apply_scaler(&column(&[1.0, 2.0, 3.0]), &sc).unwrap();
        let expect = [-1.2247, 0.0, 1.2247];
        for (v, e) in scaled.values().iter().zip(expect) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-4);
        }
    }

    #[test]
    fn degenerate_columns_map_to_zero() {
        let ds = column(&[5.0, 5.0, 5.0]);
        let sc = fit_scaler(&ds);
        assert_eq!((sc.means[0], sc.stds[0]), (5.0, 0.0));
        let once = apply_scaler(&ds, &sc).unwrap();
        assert!(once.values().iter().all(|&v| v == 0.0));
        let twice = apply_scaler(&once, &sc).unwrap();
        assert!(twice.values().iter().all(|&v| v == 0.0));

        let single = Dataset::from_rows("one", &[vec![1.0, 2.0]], vec![0], 1).unwrap();
        assert_eq!(fit_scaler(&single).stds, vec![0.0, 0.0]);
    }

    #[test]
    fn scaler_length_mismatch() {
        let sc = fit_scaler(&column(&[1.0, 2.0]));
        let wide = Dataset::from_rows("w", &[vec![1.0, 2.0]], vec![0], 1).unwrap();
        assert!(matches!(apply_scaler(&wide, &sc), Err(Error::Dimension { .. })));
    }

    fn balanced(classes: usize, per_class: usize) -> Dataset {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                rows.push(vec![(c * per_class + i) as f64]);
                labels.push(c);
            }
        }
        Dataset::from_rows("b", &rows, labels, classes).unwrap()
    }

    fn class_counts(ds: &Dataset) -> Vec<usize> {
        let mut counts = vec![0; ds.class_count()];
        ds.labels().iter().for_each(|&l| counts[l] += 1);
        counts
    }

    #[test]
    fn split_exact_division() {
        let ds = balanced(4, 25);
        let (tr, va) = stratified_split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(class_counts(&tr), vec![20; 4]);
        assert_eq!(class_counts(&va), vec![5; 4]);

        let (tr, va) = stratified_split(&balanced(1, 10), &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let ds = balanced(3, 17);
        let spec = SplitSpec {
            seed: 42,
            ..SplitSpec::default()
        };
        let a = stratified_split(&ds, &spec).unwrap();
        let b = stratified_split(&ds, &spec).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&ds, &SplitSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.0.values(), c.0.values());
    }

    #[test]
    fn singleton_class_goes_to_train() {
        let rows = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let ds = Dataset::from_rows("s", &rows, vec![0, 0, 0, 1], 2).unwrap();
        let (tr, va) = stratified_split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(class_counts(&tr), vec![2, 1]);
        assert_eq!(class_counts(&va), vec![1, 0]);
    }

    #[test]
    fn unstratified_split() {
        let ds = balanced(2, 10);
        let spec = SplitSpec {
            stratify: false,
            ..SplitSpec::default()
        };
        let (tr, va) = stratified_split(&ds, &spec).unwrap();
        assert_eq!((tr.len(), va.len()), (16, 4));
    }

    fn small_dataset() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<i32>)> {
        (1usize..6, 1usize..30).prop_flat_map(|(t, n)| {
            (
                prop::collection::vec(prop::collection::vec(-1e6f64..1e6, t), n),
                prop::collection::vec(-3i32..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn tsv_round_trip((rows, labels) in small_dataset()) {
            let mut text = String::new();
            for (r, l) in rows.iter().zip(&labels) {
                text.push_str(&l.to_string());
                for v in r {
                    text.push('\t');
                    text.push_str(&v.to_string());
                }
                text.push('\n');
            }
            let ds = parse_ucr_tsv("p", &text).unwrap();
            let again = parse_ucr_tsv("p", &ds.to_tsv()).unwrap();
            prop_assert_eq!(ds, again);
        }

        #[test]
        fn split_is_stratified_partition(
            sizes in prop::collection::vec(1usize..40, 1..5),
            fraction in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for (c, &n) in sizes.iter().enumerate() {
                for _ in 0..n {
                    rows.push(vec![rows.len() as f64]);
                    labels.push(c);
                }
            }
            let ds = Dataset::from_rows("p", &rows, labels, sizes.len()).unwrap();
            let spec = SplitSpec { train_fraction: fraction, seed, stratify: true };
            let (tr, va) = stratified_split(&ds, &spec).unwrap();
            let mut ids: Vec<f64> = tr.values().iter().chain(va.values()).copied().collect();
            ids.sort_by(f64::total_cmp);
            let expect: Vec<f64> = (0..ds.len()).map(|i| i as f64).collect();
            prop_assert_eq!(ids, expect);
            for (c, &n) in sizes.iter().enumerate() {
                let k = tr.labels().iter().filter(|&&l| l == c).count();
                if n >= 2 {
                    prop_assert!((k as f64 / n as f64 - fraction).abs() < 1.0 / n as f64);
                } else {
                    prop_assert_eq!(k, 1);
                }
            }
        }

        #[test]
        fn scaled_columns_are_standard(rows in prop::collection::vec(prop::collection::vec(-100f64..100.0, 3), 2..40)) {
            let ds = Dataset::from_rows("p", &rows, vec![0; rows.len()], 1).unwrap();
            let sc = fit_scaler(&ds);
            let scaled = apply_scaler(&ds, &sc).unwrap();
            let post = fit_scaler(&scaled);
            for t in 0..3 {
                prop_assert!(post.means[t].abs() < 1e-9);
                if sc.stds[t] > 1e-6 {
                    prop_assert!((post.stds[t] - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
