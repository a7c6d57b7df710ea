//! Model and experiment configuration, built-in presets and the TOML file format.

use std::path::{Path, PathBuf};

use kan_tsc::network::{NetworkSpec, Variant};
use kan_tsc::optimizer::{Selection, TrainConfig};
use kan_tsc::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture and optimizer settings independent of any dataset; input
/// length and class count are filled in per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden widths between input and output.
    pub hidden: Vec<usize>,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_order")]
    pub spline_order: usize,
    #[serde(default = "default_range")]
    pub grid_range: (f64, f64),
    pub learning_rate: f64,
    /// Penalty weight; `None` picks the variant default.
    #[serde(default)]
    pub reg_factor: Option<f64>,
    /// Short row name for tables, e.g. `3-depth`.
    #[serde(default)]
    pub label: Option<String>,
}

fn default_grid() -> usize {
    5
}

fn default_order() -> usize {
    3
}

fn default_range() -> (f64, f64) {
    (-1.0, 1.0)
}

/// L1 weight 0.1 for both KAN variants, L2 weight 1 for the MLP.
pub fn default_reg_factor(variant: Variant) -> f64 {
    match variant {
        Variant::KanOriginal | Variant::KanEfficient => 0.1,
        Variant::Mlp => 1.0,
    }
}

impl ModelConfig {
    pub fn kan(variant: Variant, hidden: Vec<usize>, grid_size: usize, learning_rate: f64) -> Self {
        ModelConfig {
            variant,
            hidden,
            grid_size,
            spline_order: 3,
            grid_range: default_range(),
            learning_rate,
            reg_factor: None,
            label: None,
        }
    }

    pub fn mlp(hidden: Vec<usize>, learning_rate: f64) -> Self {
        ModelConfig {
            variant: Variant::Mlp,
            hidden,
            grid_size: 0,
            spline_order: 0,
            grid_range: default_range(),
            learning_rate,
            reg_factor: None,
            label: None,
        }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(label.to_string());
        self
    }

    pub fn with_reg(mut self, reg: f64) -> Self {
        self.reg_factor = Some(reg);
        self
    }

    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn reg(&self) -> f64 {
        self.reg_factor
            .unwrap_or_else(|| default_reg_factor(self.variant))
    }

    pub fn spec(&self, input_len: usize, classes: usize) -> NetworkSpec {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(input_len);
        sizes.extend(&self.hidden);
        sizes.push(classes);
        NetworkSpec {
            variant: self.variant,
            layer_sizes: sizes,
            grid_size: self.grid_size,
            spline_order: self.spline_order,
            grid_range: self.grid_range,
        }
    }

    /// Full description; unique per distinct configuration.
    pub fn key(&self) -> String {
        let hidden = self
            .hidden
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut key = format!("{} [T,{hidden},C]", self.variant.name());
        if self.variant.is_kan() {
            key.push_str(&format!(" G={} k={}", self.grid_size, self.spline_order));
        }
        key.push_str(&format!(" lr={} reg={}", self.learning_rate, self.reg()));
        key
    }

    /// Label if set, otherwise `<depth>-depth`.
    pub fn row_name(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("{}-depth", self.depth()))
    }

    pub fn train_config(&self, seed: u64, epochs: usize, batch_size: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs,
            batch_size,
            seed,
            reg_factor: self.reg(),
            ..TrainConfig::default()
        }
    }
}

/// Named configurations for the reference comparison tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Kan3,
    Kan4,
    EffKan3,
    EffKan4,
    Mlp3,
    Mlp4,
    KanBest,
    EffKanBest,
    /// Small efficient KAN for edge-function inspection on short series.
    Interpretable,
}

impl Preset {
    pub const REFERENCE: [Preset; 6] = [
        Preset::Kan3,
        Preset::Kan4,
        Preset::EffKan3,
        Preset::EffKan4,
        Preset::Mlp3,
        Preset::Mlp4,
    ];

    pub fn all() -> [Preset; 9] {
        [
            Preset::Kan3,
            Preset::Kan4,
            Preset::EffKan3,
            Preset::EffKan4,
            Preset::Mlp3,
            Preset::Mlp4,
            Preset::KanBest,
            Preset::EffKanBest,
            Preset::Interpretable,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Kan3 => "kan3",
            Preset::Kan4 => "kan4",
            Preset::EffKan3 => "effkan3",
            Preset::EffKan4 => "effkan4",
            Preset::Mlp3 => "mlp3",
            Preset::Mlp4 => "mlp4",
            Preset::KanBest => "kan_best",
            Preset::EffKanBest => "effkan_best",
            Preset::Interpretable => "interpretable",
        }
    }

    pub fn config(self) -> ModelConfig {
        use Variant::*;
        match self {
            Preset::Kan3 => ModelConfig::kan(KanOriginal, vec![40, 40], 5, 0.001).with_label("3-depth"),
            Preset::Kan4 => ModelConfig::kan(KanOriginal, vec![40, 40, 40], 5, 0.001).with_label("4-depth"),
            Preset::EffKan3 => ModelConfig::kan(KanEfficient, vec![40, 40], 5, 0.001).with_label("3-depth"),
            Preset::EffKan4 => {
                ModelConfig::kan(KanEfficient, vec![40, 40, 40], 5, 0.001).with_label("4-depth")
            }
            Preset::Mlp3 => ModelConfig::mlp(vec![300, 300, 300], 0.001).with_label("3-depth"),
            Preset::Mlp4 => ModelConfig::mlp(vec![300, 300, 300, 300], 0.001).with_label("4-depth"),
            Preset::KanBest => ModelConfig::kan(KanOriginal, vec![40], 5, 0.1).with_label("[40], G=5"),
            Preset::EffKanBest => {
                ModelConfig::kan(KanEfficient, vec![40, 40], 3, 0.001).with_label("[40, 40], G=3")
            }
            Preset::Interpretable => ModelConfig::kan(KanEfficient, vec![15, 15], 5, 1.0)
                .with_reg(0.01)
                .with_label("[15, 15], G=5"),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::all()
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}`")))
    }
}

/// One training run as declared in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset name, resolved under `data_dir`.
    pub dataset: String,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub selection: Selection,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            seeds: DEFAULT_SEEDS.to_vec(),
            train_fraction: 0.8,
            selection: Selection::BestValidation,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self, model: &ModelConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: model.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            reg_factor: model.reg(),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            selection: self.selection,
        }
    }
}

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 5, 42];

fn default_data_dir() -> PathBuf {
    PathBuf::from("data/ucr")
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shapes() {
        let s = Preset::Interpretable.config().spec(15, 3);
        assert_eq!(s.layer_sizes, vec![15, 15, 15, 3]);
        assert_eq!(s.variant, Variant::KanEfficient);
        assert_eq!(Preset::Interpretable.config().reg(), 0.01);
        assert_eq!(
            Preset::Mlp4.config().spec(10, 2).layer_sizes,
            vec![10, 300, 300, 300, 300, 2]
        );
        assert_eq!(Preset::Mlp3.config().reg(), 1.0);
        assert_eq!(Preset::KanBest.config().depth(), 2);
        assert_eq!(Preset::EffKanBest.config().grid_size, 3);
        for p in Preset::all() {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
    }

    #[test]
    fn keys_are_distinct() {
        let keys: std::collections::BTreeSet<String> =
            Preset::all().iter().map(|p| p.config().key()).collect();
        assert_eq!(keys.len(), Preset::all().len());
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            dataset = "SmoothSubspace"

            [model]
            variant = "kan_efficient"
            hidden = [15, 15]
            grid_size = 5
            learning_rate = 1.0
            reg_factor = 0.01

            [training]
            epochs = 10
            seeds = [3]
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model.spec(15, 3).layer_sizes, vec![15, 15, 15, 3]);
        assert_eq!(cfg.training.epochs, 10);
        assert_eq!(cfg.training.batch_size, 16);
        assert_eq!(cfg.training.seeds, vec![3]);
        assert_eq!(cfg.data_dir, PathBuf::from("data/ucr"));
        let bad = text.replace("grid_size", "grid_sise");
        assert!(toml::from_str::<ExperimentConfig>(&bad).is_err());
    }
}
