//! Post-hoc explanation of a trained checkpoint on one dataset.

use std::path::Path;

use kan_tsc::interpret::{
    edge_importance, export_graph, mean_abs_attribution, shapley_for_network, top_k, GraphExport,
    ShapleyReport,
};
use kan_tsc::network::Checkpoint;
use kan_tsc::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::run::LoadedDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub shap_permutations: usize,
    /// Test samples to attribute, taken from the front of the test set.
    pub samples: usize,
    /// Relative edge threshold for the pruned graph.
    pub threshold: f64,
    pub curve_points: usize,
    pub train_fraction: f64,
    pub top: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            shap_permutations: 1000,
            samples: 10,
            threshold: 0.05,
            curve_points: 101,
            train_fraction: 0.8,
            top: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Explanation {
    /// `None` for MLP checkpoints.
    pub graph: Option<GraphExport>,
    /// Importance of each time step from first-layer edge scores (KAN only).
    pub edge_feature_scores: Option<Vec<f64>>,
    pub shap: Vec<(usize, Vec<f64>, Vec<ShapleyReport>)>,
    pub shap_feature_scores: Vec<f64>,
    pub top_edge_features: Vec<usize>,
    pub top_shap_features: Vec<usize>,
}

/// Reproduces the checkpoint's training-time standardization from its seed,
/// then scores edges on the training part and attributes test samples with
/// the standardized training mean as baseline.
pub fn explain(checkpoint: &Checkpoint, dataset_dir: &Path, opts: &ExplainOptions) -> Result<Explanation> {
    let name = dataset_dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad dataset path {}", dataset_dir.display())))?;
    let parent = dataset_dir.parent().unwrap_or(Path::new("."));
    let data = LoadedDataset::load(parent, name)?;
    let prepared = data.prepare(checkpoint.seed, opts.train_fraction)?;
    let net = &checkpoint.network;
    if prepared.train.series_len() != net.spec.input_len() {
        return Err(Error::Dimension {
            context: "checkpoint input length",
            expected: net.spec.input_len(),
            got: prepared.train.series_len(),
        });
    }

    let (graph, edge_feature_scores) = if net.spec.variant.is_kan() {
        let imp = edge_importance(net, prepared.train.values(), prepared.train.len())?;
        let scores = imp.input_feature_scores();
        (
            Some(export_graph(net, &imp, opts.threshold, opts.curve_points)?),
            Some(scores),
        )
    } else {
        (None, None)
    };

    let t = prepared.train.series_len();
    let mut baseline = vec![0.0; t];
    for row in prepared.train.rows() {
        baseline.iter_mut().zip(row).for_each(|(b, v)| *b += v);
    }
    baseline
        .iter_mut()
        .for_each(|b| *b /= prepared.train.len() as f64);

    let mut shap = Vec::new();
    for i in 0..opts.samples.min(prepared.test.len()) {
        let x = prepared.test.row(i).to_vec();
        let reports = shapley_for_network(
            net,
            &x,
            &baseline,
            opts.shap_permutations,
            checkpoint.seed + i as u64,
        )?;
        shap.push((i, x, reports));
    }
    let all: Vec<ShapleyReport> = shap.iter().flat_map(|(_, _, r)| r.iter().cloned()).collect();
    let shap_feature_scores = mean_abs_attribution(&all);

    Ok(Explanation {
        top_edge_features: edge_feature_scores
            .as_deref()
            .map_or(Vec::new(), |s| top_k(s, opts.top)),
        top_shap_features: top_k(&shap_feature_scores, opts.top),
        graph,
        edge_feature_scores,
        shap,
        shap_feature_scores,
    })
}
