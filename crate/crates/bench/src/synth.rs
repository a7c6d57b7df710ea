//! Synthetic stand-in for the SmoothSubspace archive dataset.
//!
//! Each series has length 15 and is split into three windows of 5 steps.
//! The class picks which window is smooth: a gentle ramp around a shared
//! level with little jitter. Every other step is i.i.d. unit Gaussian noise.

use std::path::Path;

use kan_tsc::ucr_data::Dataset;
use kan_tsc::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothSubspaceSpec {
    pub per_class_train: usize,
    pub per_class_test: usize,
    pub classes: usize,
    pub window: usize,
    /// Mean value of the smooth window.
    pub level: f64,
    pub offset_std: f64,
    pub slope_std: f64,
    pub jitter_std: f64,
    pub seed: u64,
}

impl Default for SmoothSubspaceSpec {
    /// Shape of the archive dataset: 150/150 series, length 15, 3 classes.
    /// `level` puts a 1-NN Euclidean classifier near 0.9 test accuracy.
    fn default() -> Self {
        SmoothSubspaceSpec {
            per_class_train: 50,
            per_class_test: 50,
            classes: 3,
            window: 5,
            level: 0.6,
            offset_std: 0.15,
            slope_std: 0.05,
            jitter_std: 0.05,
            seed: 20_240_515,
        }
    }
}

impl SmoothSubspaceSpec {
    pub fn series_len(&self) -> usize {
        self.classes * self.window
    }

    fn draw(&self, rng: &mut ChaCha8Rng, class: usize) -> Vec<f64> {
        let unit = Normal::new(0.0, 1.0).unwrap();
        let t = self.series_len();
        let mut x: Vec<f64> = (0..t).map(|_| unit.sample(rng)).collect();
        let offset = self.offset_std * unit.sample(rng);
        let slope = self.slope_std * unit.sample(rng);
        let mid = (self.window as f64 - 1.0) / 2.0;
        for j in 0..self.window {
            let pos = class * self.window + j;
            x[pos] = self.level + offset + slope * (j as f64 - mid) + self.jitter_std * unit.sample(rng);
        }
        x
    }

    fn split(&self, rng: &mut ChaCha8Rng, per_class: usize, name: &str) -> Result<Dataset> {
        let mut items: Vec<(Vec<f64>, usize)> = Vec::with_capacity(per_class * self.classes);
        for c in 0..self.classes {
            for _ in 0..per_class {
                items.push((self.draw(rng, c), c));
            }
        }
        items.shuffle(rng);
        let (rows, labels): (Vec<_>, Vec<_>) = items.into_iter().unzip();
        Dataset::from_rows(name, &rows, labels, self.classes)
    }

    /// Training and test sets drawn from one seeded stream.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        if self.classes == 0 || self.window == 0 || self.per_class_train == 0 || self.per_class_test == 0 {
            return Err(Error::Config("synthetic dataset needs positive sizes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.split(&mut rng, self.per_class_train, "SmoothSubspace")?;
        let test = self.split(&mut rng, self.per_class_test, "SmoothSubspace")?;
        Ok((train, test))
    }

    /// Writes `<dir>/SmoothSubspace/SmoothSubspace_{TRAIN,TEST}.tsv` with
    /// labels `1..=classes`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let (train, test) = self.generate()?;
        let target = dir.join("SmoothSubspace");
        std::fs::create_dir_all(&target).map_err(|e| Error::Io {
            path: target.clone(),
            source: e,
        })?;
        for (ds, suffix) in [(train, "TRAIN"), (test, "TEST")] {
            let path = target.join(format!("SmoothSubspace_{suffix}.tsv"));
            let mut text = String::new();
            for (row, &y) in ds.rows().zip(ds.labels()) {
                text.push_str(&(y + 1).to_string());
                for v in row {
                    text.push('\t');
                    text.push_str(&v.to_string());
                }
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
        }
        Ok(())
    }
}

/// Test accuracy of 1-nearest-neighbour under Euclidean distance.
pub fn one_nn_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let mut correct = 0;
    for (x, &y) in test.rows().zip(test.labels()) {
        let mut best = (f64::INFINITY, 0);
        for (r, &ly) in train.rows().zip(train.labels()) {
            let d: f64 = x.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, ly);
            }
        }
        correct += usize::from(best.1 == y);
    }
    correct as f64 / test.len() as f64
}

/// Small SmoothSubspace copy in a temporary directory.
#[cfg(test)]
pub(crate) fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let spec = SmoothSubspaceSpec {
        per_class_train: 12,
        per_class_test: 10,
        ..SmoothSubspaceSpec::default()
    };
    spec.write(dir.path()).unwrap();
    dir
}

#[cfg(test)]
mod tests {
    use super::*;
    use kan_tsc::ucr_data::load_ucr_pair;

    #[test]
    fn shape_and_balance() {
        let spec = SmoothSubspaceSpec::default();
        let (tr, te) = spec.generate().unwrap();
        assert_eq!(
            (tr.len(), te.len(), tr.series_len(), tr.class_count()),
            (150, 150, 15, 3)
        );
        for c in 0..3 {
            assert_eq!(tr.labels().iter().filter(|&&y| y == c).count(), 50);
        }
        assert_eq!(spec.generate().unwrap().0.values(), tr.values());
    }

    #[test]
    fn reference_difficulty() {
        // calibrated against the 1-NN Euclidean reference only
        let (tr, te) = SmoothSubspaceSpec::default().generate().unwrap();
        let acc = one_nn_accuracy(&tr, &te);
        assert!((0.85..=0.95).contains(&acc), "1-NN accuracy {acc}");
    }

    #[test]
    fn written_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SmoothSubspaceSpec::default();
        spec.write(dir.path()).unwrap();
        let (tr, te) = load_ucr_pair(dir.path(), "SmoothSubspace").unwrap();
        let (a, b) = spec.generate().unwrap();
        assert_eq!(tr.labels(), a.labels());
        assert_eq!(te.len(), b.len());
        for (x, y) in tr.values().iter().zip(a.values()) {
            assert_eq!(x, y);
        }
    }
}
