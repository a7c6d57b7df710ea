//! Edge importance, pruning, spline-curve sampling and a permutation-sampling
//! Shapley estimator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{KanLayer, Layer, Network};

/// Per layer, a `d_out × d_in` matrix (row-major) of mean `|φ_{q,p}|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeImportanceMap {
    pub shapes: Vec<(usize, usize)>,
    pub scores: Vec<Vec<f64>>,
}

impl EdgeImportanceMap {
    pub fn score(&self, layer: usize, q: usize, p: usize) -> f64 {
        let (_, d_in) = self.shapes[layer];
        self.scores[layer][q * d_in + p]
    }

    /// Total first-layer importance flowing out of each input feature.
    pub fn input_feature_scores(&self) -> Vec<f64> {
        let (d_out, d_in) = self.shapes[0];
        (0..d_in)
            .map(|p| (0..d_out).map(|q| self.score(0, q, p)).sum())
            .collect()
    }
}

fn kan_layers(net: &Network) -> Result<Vec<&KanLayer>> {
    net.layers
        .iter()
        .map(|l| match l {
            Layer::Kan(k) => Ok(k),
            Layer::Mlp(_) => Err(Error::Config("edge functions exist only in KAN models".into())),
        })
        .collect()
}

/// Mean `|φ_{q,p}(x_p)|` over the `n` rows of `batch`.
pub fn edge_importance(net: &Network, batch: &[f64], n: usize) -> Result<EdgeImportanceMap> {
    let layers = kan_layers(net)?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let t = net.spec.input_len();
    if batch.len() != n * t {
        return Err(Error::Dimension {
            context: "importance batch",
            expected: n * t,
            got: batch.len(),
        });
    }
    let shapes: Vec<(usize, usize)> = layers.iter().map(|l| (l.d_out, l.d_in)).collect();
    let mut scores: Vec<Vec<f64>> = shapes.iter().map(|(o, i)| vec![0.0; o * i]).collect();
    for row in batch.chunks_exact(t) {
        let trace = net.forward(row)?;
        for (acc, phi) in scores.iter_mut().zip(&trace.activations) {
            acc.iter_mut().zip(phi).for_each(|(a, v)| *a += v.abs());
        }
    }
    for s in scores.iter_mut().flatten() {
        *s /= n as f64;
    }
    Ok(EdgeImportanceMap { shapes, scores })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedGraph {
    /// Per layer, `d_out × d_in` activity flags.
    pub edge_active: Vec<Vec<bool>>,
    /// Per node layer (input, hidden..., output).
    pub node_retained: Vec<Vec<bool>>,
}

impl PrunedGraph {
    pub fn active_edge_count(&self) -> usize {
        self.edge_active.iter().flatten().filter(|&&a| a).count()
    }
}

/// Keeps edges scoring at least `threshold` times their layer's maximum, then
/// drops hidden nodes lacking an active incoming or outgoing edge until
/// nothing changes. Input and output nodes are always kept.
pub fn prune(scores: &EdgeImportanceMap, threshold: f64) -> PrunedGraph {
    let mut edge_active: Vec<Vec<bool>> = scores
        .scores
        .iter()
        .map(|layer| {
            let max = layer.iter().cloned().fold(0.0, f64::max);
            layer
                .iter()
                .map(|&s| threshold <= 0.0 || (s > 0.0 && s >= threshold * max))
                .collect()
        })
        .collect();
    let depth = scores.shapes.len();
    let mut node_retained: Vec<Vec<bool>> = Vec::with_capacity(depth + 1);
    node_retained.push(vec![true; scores.shapes.first().map_or(0, |s| s.1)]);
    for &(d_out, _) in &scores.shapes {
        node_retained.push(vec![true; d_out]);
    }

    loop {
        let mut changed = false;
        // a hidden node sits between layer l-1 (incoming) and layer l (outgoing)
        for l in 1..depth {
            let (_, d_in_prev) = scores.shapes[l - 1];
            let (d_out_next, d_in_next) = scores.shapes[l];
            for j in 0..node_retained[l].len() {
                if !node_retained[l][j] {
                    continue;
                }
                let incoming = (0..d_in_prev).any(|p| edge_active[l - 1][j * d_in_prev + p]);
                let outgoing = (0..d_out_next).any(|q| edge_active[l][q * d_in_next + j]);
                if !(incoming && outgoing) {
                    node_retained[l][j] = false;
                    changed = true;
                    for p in 0..d_in_prev {
                        edge_active[l - 1][j * d_in_prev + p] = false;
                    }
                    for q in 0..d_out_next {
                        edge_active[l][q * d_in_next + j] = false;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    PrunedGraph {
        edge_active,
        node_retained,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineCurve {
    pub layer: usize,
    /// Output node.
    pub q: usize,
    /// Input node.
    pub p: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub importance: f64,
}

/// Samples every edge function on `n_points` uniform points over the grid
/// range widened by 0.5 on each side.
pub fn sample_spline_curves(
    net: &Network,
    n_points: usize,
    importance: Option<&EdgeImportanceMap>,
) -> Result<Vec<SplineCurve>> {
    if n_points < 2 {
        return Err(Error::Config("need at least two sample points".into()));
    }
    let layers = kan_layers(net)?;
    let mut curves = Vec::new();
    for (li, l) in layers.iter().enumerate() {
        let (lo, hi) = l.grid.range();
        let (a, b) = (lo - 0.5, hi + 0.5);
        let x: Vec<f64> = (0..n_points)
            .map(|i| a + (b - a) * i as f64 / (n_points - 1) as f64)
            .collect();
        for q in 0..l.d_out {
            for p in 0..l.d_in {
                curves.push(SplineCurve {
                    layer: li,
                    q,
                    p,
                    y: x.iter().map(|&v| l.edge_value(q, p, v)).collect(),
                    x: x.clone(),
                    importance: importance.map_or(0.0, |m| m.score(li, q, p)),
                });
            }
        }
    }
    Ok(curves)
}

/// Attributions of one model output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub class: usize,
    /// Model output at the baseline.
    pub baseline_value: f64,
    pub phi: Vec<f64>,
    /// Model output at the sample.
    pub output: f64,
    pub n_permutations: usize,
}

impl ShapleyReport {
    /// `baseline_value + Σ phi - output`.
    pub fn efficiency_gap(&self) -> f64 {
        self.baseline_value + self.phi.iter().sum::<f64>() - self.output
    }
}

/// Permutations drawn from one sub-seeded stream.
const PERMUTATIONS_PER_CHUNK: usize = 32;

/// Monte-Carlo permutation Shapley values for a model with `outputs` outputs.
///
/// `model(rows, n)` evaluates `n` stacked inputs and returns `n × outputs`
/// values. Features switch from `baseline` to `sample` in permutation order;
/// each feature's marginal changes are averaged over permutations. Chunks of
/// permutations use sub-seeds derived from `(seed, chunk)` and are reduced in
/// chunk order, so the result does not depend on the thread count.
pub fn shapley_all_outputs<F>(
    model: F,
    outputs: usize,
    sample: &[f64],
    baseline: &[f64],
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<ShapleyReport>>
where
    F: Fn(&[f64], usize) -> Result<Vec<f64>> + Sync,
{
    if n_permutations == 0 {
        return Err(Error::Config("need at least one permutation".into()));
    }
    let t = sample.len();
    if baseline.len() != t {
        return Err(Error::Dimension {
            context: "shapley baseline",
            expected: t,
            got: baseline.len(),
        });
    }
    let ends = model(&[baseline, sample].concat(), 2)?;
    if ends.len() != 2 * outputs {
        return Err(Error::Dimension {
            context: "model outputs",
            expected: 2 * outputs,
            got: ends.len(),
        });
    }
    let (f_base, f_sample) = ends.split_at(outputs);

    let chunks = n_permutations.div_ceil(PERMUTATIONS_PER_CHUNK);
    let partials: Vec<Result<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = PERMUTATIONS_PER_CHUNK.min(n_permutations - c * PERMUTATIONS_PER_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut sums = vec![0.0; outputs * t];
            let mut order: Vec<usize> = (0..t).collect();
            let mut rows = Vec::with_capacity(t * t);
            for _ in 0..count {
                order.shuffle(&mut rng);
                // rows[j] = baseline with the first j+1 permuted features switched
                rows.clear();
                let mut x = baseline.to_vec();
                for &i in &order {
                    x[i] = sample[i];
                    rows.extend_from_slice(&x);
                }
                let vals = model(&rows, t)?;
                for k in 0..outputs {
                    let mut prev = f_base[k];
                    for (j, &i) in order.iter().enumerate() {
                        // the last row is the full sample; reuse its exact value
                        let cur = if j + 1 == t {
                            f_sample[k]
                        } else {
                            vals[j * outputs + k]
                        };
                        sums[k * t + i] += cur - prev;
                        prev = cur;
                    }
                }
            }
            Ok(sums)
        })
        .collect();

    let mut total = vec![0.0; outputs * t];
    for part in partials {
        total.iter_mut().zip(part?).for_each(|(a, b)| *a += b);
    }
    let n = n_permutations as f64;
    Ok((0..outputs)
        .map(|k| ShapleyReport {
            class: k,
            baseline_value: f_base[k],
            phi: total[k * t..(k + 1) * t].iter().map(|s| s / n).collect(),
            output: f_sample[k],
            n_permutations,
        })
        .collect())
}

/// Attributions of the network's probability for `target_class`.
pub fn shapley_attributions(
    net: &Network,
    sample: &[f64],
    baseline: &[f64],
    n_permutations: usize,
    seed: u64,
    target_class: usize,
) -> Result<ShapleyReport> {
    let c = net.spec.class_count();
    if target_class >= c {
        return Err(Error::LabelOutOfRange {
            label: target_class,
            classes: c,
        });
    }
    let mut all = shapley_for_network(net, sample, baseline, n_permutations, seed)?;
    Ok(all.swap_remove(target_class))
}

/// Attributions of every class probability.
pub fn shapley_for_network(
    net: &Network,
    sample: &[f64],
    baseline: &[f64],
    n_permutations: usize,
    seed: u64,
) -> Result<Vec<ShapleyReport>> {
    let t = net.spec.input_len();
    if sample.len() != t {
        return Err(Error::Dimension {
            context: "shapley sample",
            expected: t,
            got: sample.len(),
        });
    }
    shapley_all_outputs(
        |rows, n| net.predict_proba(rows, n),
        net.spec.class_count(),
        sample,
        baseline,
        n_permutations,
        seed,
    )
}

/// Indices of the `k` largest values, largest first; ties keep index order.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Mean `|phi|` per feature across reports.
pub fn mean_abs_attribution(reports: &[ShapleyReport]) -> Vec<f64> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    let mut acc = vec![0.0; first.phi.len()];
    for r in reports {
        acc.iter_mut().zip(&r.phi).for_each(|(a, p)| *a += p.abs());
    }
    acc.iter_mut().for_each(|a| *a /= reports.len() as f64);
    acc
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphNode {
    pub layer: usize,
    pub index: usize,
    pub retained: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEdge {
    pub layer: usize,
    pub from: usize,
    pub to: usize,
    pub score: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Plot-ready description of a pruned KAN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphExport {
    pub layer_sizes: Vec<usize>,
    pub threshold: f64,
    pub nodes: Vec<GraphNode>,
    /// Active edges only.
    pub edges: Vec<GraphEdge>,
}

pub fn export_graph(
    net: &Network,
    importance: &EdgeImportanceMap,
    threshold: f64,
    n_points: usize,
) -> Result<GraphExport> {
    let graph = prune(importance, threshold);
    let curves = sample_spline_curves(net, n_points, Some(importance))?;
    let nodes = graph
        .node_retained
        .iter()
        .enumerate()
        .flat_map(|(layer, r)| {
            r.iter().enumerate().map(move |(index, &retained)| GraphNode {
                layer,
                index,
                retained,
            })
        })
        .collect();
    let edges = curves
        .into_iter()
        .filter(|c| {
            let d_in = importance.shapes[c.layer].1;
            graph.edge_active[c.layer][c.q * d_in + c.p]
        })
        .map(|c| GraphEdge {
            layer: c.layer,
            from: c.p,
            to: c.q,
            score: c.importance,
            x: c.x,
            y: c.y,
        })
        .collect();
    Ok(GraphExport {
        layer_sizes: net.spec.layer_sizes.clone(),
        threshold,
        nodes,
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapRow {
    pub sample: usize,
    pub class: usize,
    pub feature: usize,
    pub feature_value: f64,
    pub phi: f64,
}

/// Long-format rows for `(sample index, sample values, reports)` triples.
pub fn write_shap_csv<W: std::io::Write>(
    writer: W,
    entries: &[(usize, Vec<f64>, Vec<ShapleyReport>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (sample, values, reports) in entries {
        for r in reports {
            for (feature, (&phi, &v)) in r.phi.iter().zip(values).enumerate() {
                w.serialize(ShapRow {
                    sample: *sample,
                    class: r.class,
                    feature,
                    feature_value: v,
                    phi,
                })?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("shap csv", e))?;
    Ok(())
}
