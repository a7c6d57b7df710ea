//! KAN and MLP layers: parameters, forward passes, loss, regularization and
//! hand-derived gradients.
//!
//! Both KAN variants share one parameterization. Every edge `(q, p)` of a layer
//! carries
//!
//! ```text
//! φ_{q,p}(x) = w_b[q,p] · silu(x) + w_s[q,p] · Σ_i c[q,p,i] B_i(x)
//! ```
//!
//! and output node `q` is `bias[q] + Σ_p φ_{q,p}(x_p)`. [`Variant::KanOriginal`]
//! evaluates one sample at a time and materializes every `φ_{q,p}` (its L1
//! penalty is taken on those activations); [`Variant::KanEfficient`] computes
//! the basis of a whole batch once per input node and contracts it with the
//! coefficient tensor, and penalizes the coefficients directly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bspline::{ActiveSpan, SplineGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    KanOriginal,
    KanEfficient,
    Mlp,
}

impl Variant {
    pub fn is_kan(self) -> bool {
        !matches!(self, Variant::Mlp)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::KanOriginal => "kan_original",
            Variant::KanEfficient => "kan_efficient",
            Variant::Mlp => "mlp",
        }
    }

    /// Human-readable model family, as used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::KanOriginal => "KAN",
            Variant::KanEfficient => "Efficient KAN",
            Variant::Mlp => "MLP",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kan_original" | "kan" => Ok(Variant::KanOriginal),
            "kan_efficient" | "efficient_kan" | "effkan" => Ok(Variant::KanEfficient),
            "mlp" => Ok(Variant::Mlp),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture description. `layer_sizes` runs from the input length `T`
/// to the class count `C`; depth is `layer_sizes.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub layer_sizes: Vec<usize>,
    /// Grid intervals `G` (KAN only).
    pub grid_size: usize,
    /// Spline degree `k` (KAN only).
    pub spline_order: usize,
    pub grid_range: (f64, f64),
}

impl NetworkSpec {
    pub fn kan(variant: Variant, layer_sizes: Vec<usize>, grid_size: usize) -> Self {
        NetworkSpec {
            variant,
            layer_sizes,
            grid_size,
            spline_order: 3,
            grid_range: (-1.0, 1.0),
        }
    }

    pub fn mlp(layer_sizes: Vec<usize>) -> Self {
        NetworkSpec {
            variant: Variant::Mlp,
            layer_sizes,
            grid_size: 0,
            spline_order: 0,
            grid_range: (-1.0, 1.0),
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn input_len(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("need at least input and output sizes".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.variant.is_kan() {
            SplineGrid::new(
                self.grid_size,
                self.spline_order,
                self.grid_range.0,
                self.grid_range.1,
            )?;
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x / (1 + e^{-x})`.
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `(silu(x), silu'(x))` with `silu' = silu + sigmoid · (1 - silu)`.
pub fn silu_with_derivative(x: f64) -> (f64, f64) {
    let s = sigmoid(x);
    let v = x * s;
    (v, v + s * (1.0 - v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub d_in: usize,
    pub d_out: usize,
    pub grid: SplineGrid,
    /// `d_out × d_in`, row-major by output node.
    pub base_weights: Vec<f64>,
    /// `d_out × d_in`.
    pub spline_scales: Vec<f64>,
    /// `d_out × d_in × (G + k)`.
    pub coeffs: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpLayer {
    pub d_in: usize,
    pub d_out: usize,
    /// `d_out × d_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Kan(KanLayer),
    Mlp(MlpLayer),
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Basis data for one input value.
#[derive(Debug, Clone, Default)]
struct InputBasis {
    span: ActiveSpan,
    silu: f64,
    silu_grad: f64,
}

impl KanLayer {
    pub fn zeros(d_in: usize, d_out: usize, grid: SplineGrid) -> Self {
        let nb = grid.basis_count();
        KanLayer {
            d_in,
            d_out,
            base_weights: vec![0.0; d_out * d_in],
            spline_scales: vec![0.0; d_out * d_in],
            coeffs: vec![0.0; d_out * d_in * nb],
            bias: vec![0.0; d_out],
            grid,
        }
    }

    fn basis_len(&self) -> usize {
        self.grid.basis_count()
    }

    /// Coefficients of edge `(q, p)`.
    pub fn edge_coeffs(&self, q: usize, p: usize) -> &[f64] {
        let nb = self.basis_len();
        let e = q * self.d_in + p;
        &self.coeffs[e * nb..(e + 1) * nb]
    }

    /// `φ_{q,p}(x)` for a single edge.
    pub fn edge_value(&self, q: usize, p: usize, x: f64) -> f64 {
        let k1 = self.grid.order() + 1;
        let mut vals = vec![0.0; k1];
        let span = self.grid.local_basis(x, &mut vals, None);
        let c = self.edge_coeffs(q, p);
        let spline: f64 = (0..span.len).map(|j| c[span.first + j] * vals[j]).sum();
        let e = q * self.d_in + p;
        self.base_weights[e] * silu(x) + self.spline_scales[e] * spline
    }

    /// Per-sample forward. Returns the outputs and the `d_out × d_in` edge
    /// activations `φ_{q,p}(x_p)`.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("kan layer input", self.d_in, x.len())?;
        let mut cache = KanCache::default();
        let out = self.forward_cached(x, &mut cache, false);
        Ok((out, cache.phi))
    }

    /// Batched forward over `batch` rows of `d_in` values: the basis of every
    /// (row, input) pair is computed once, then contracted with all coefficients.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        if batch == 0 {
            return Err(Error::EmptyDataset);
        }
        check_len("kan batch input", batch * self.d_in, xs.len())?;
        let k1 = self.grid.order() + 1;
        let nb = self.basis_len();
        let cells = batch * self.d_in;
        let mut spans = vec![ActiveSpan::default(); cells];
        let mut vals = vec![0.0; cells * k1];
        let mut silus = vec![0.0; cells];
        for (cell, &x) in xs.iter().enumerate() {
            spans[cell] = self
                .grid
                .local_basis(x, &mut vals[cell * k1..(cell + 1) * k1], None);
            silus[cell] = silu(x);
        }
        let mut out = vec![0.0; batch * self.d_out];
        for b in 0..batch {
            for q in 0..self.d_out {
                let mut acc = self.bias[q];
                for p in 0..self.d_in {
                    let cell = b * self.d_in + p;
                    let e = q * self.d_in + p;
                    let span = spans[cell];
                    let c = &self.coeffs[e * nb + span.first..e * nb + span.first + span.len];
                    let v = &vals[cell * k1..cell * k1 + span.len];
                    let spline: f64 = c.iter().zip(v).map(|(c, v)| c * v).sum();
                    acc += self.base_weights[e] * silus[cell] + self.spline_scales[e] * spline;
                }
                out[b * self.d_out + q] = acc;
            }
        }
        Ok(out)
    }

    fn forward_cached(&self, x: &[f64], cache: &mut KanCache, with_derivs: bool) -> Vec<f64> {
        let k1 = self.grid.order() + 1;
        let nb = self.basis_len();
        cache.input.clear();
        cache.input.extend_from_slice(x);
        cache.inputs.resize(self.d_in, InputBasis::default());
        cache.vals.resize(self.d_in * k1, 0.0);
        cache.ders.resize(self.d_in * k1, 0.0);
        for (p, &xp) in x.iter().enumerate() {
            let vals = &mut cache.vals[p * k1..(p + 1) * k1];
            let ders = &mut cache.ders[p * k1..(p + 1) * k1];
            let span = self
                .grid
                .local_basis(xp, vals, if with_derivs { Some(ders) } else { None });
            let (s, ds) = silu_with_derivative(xp);
            cache.inputs[p] = InputBasis {
                span,
                silu: s,
                silu_grad: ds,
            };
        }
        cache.spline.resize(self.d_out * self.d_in, 0.0);
        cache.phi.resize(self.d_out * self.d_in, 0.0);
        let mut out = self.bias.clone();
        for (q, o) in out.iter_mut().enumerate() {
            for p in 0..self.d_in {
                let e = q * self.d_in + p;
                let ib = &cache.inputs[p];
                let c = &self.coeffs[e * nb + ib.span.first..e * nb + ib.span.first + ib.span.len];
                let v = &cache.vals[p * k1..p * k1 + ib.span.len];
                let spline: f64 = c.iter().zip(v).map(|(c, v)| c * v).sum();
                let phi = self.base_weights[e] * ib.silu + self.spline_scales[e] * spline;
                cache.spline[e] = spline;
                cache.phi[e] = phi;
                *o += phi;
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns `∂/∂x`.
    /// `edge_l1` is the weight of `|φ_{q,p}|` in the loss for this sample.
    fn backward_cached(
        &self,
        cache: &KanCache,
        upstream: &[f64],
        edge_l1: f64,
        grad: &mut KanLayer,
    ) -> Vec<f64> {
        let k1 = self.grid.order() + 1;
        let nb = self.basis_len();
        let mut dx = vec![0.0; self.d_in];
        for (q, &g) in upstream.iter().enumerate() {
            grad.bias[q] += g;
            for (p, dxp) in dx.iter_mut().enumerate() {
                let e = q * self.d_in + p;
                let phi = cache.phi[e];
                let sign = if phi > 0.0 {
                    1.0
                } else if phi < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let ge = g + edge_l1 * sign;
                if ge == 0.0 {
                    continue;
                }
                let ib = &cache.inputs[p];
                let ws = self.spline_scales[e];
                grad.base_weights[e] += ge * ib.silu;
                grad.spline_scales[e] += ge * cache.spline[e];
                let base = e * nb + ib.span.first;
                let vals = &cache.vals[p * k1..p * k1 + ib.span.len];
                let ders = &cache.ders[p * k1..p * k1 + ib.span.len];
                let mut dspline = 0.0;
                for j in 0..ib.span.len {
                    grad.coeffs[base + j] += ge * ws * vals[j];
                    dspline += self.coeffs[base + j] * ders[j];
                }
                *dxp += ge * (self.base_weights[e] * ib.silu_grad + ws * dspline);
            }
        }
        dx
    }
}

impl MlpLayer {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        MlpLayer {
            d_in,
            d_out,
            weights: vec![0.0; d_out * d_in],
            bias: vec![0.0; d_out],
        }
    }

    /// `Wx + b`, followed by the rectifier when `hidden`.
    pub fn forward(&self, x: &[f64], hidden: bool) -> Result<Vec<f64>> {
        check_len("mlp layer input", self.d_in, x.len())?;
        let mut z = self.affine(x);
        if hidden {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(z)
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.d_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

impl Layer {
    pub fn d_in(&self) -> usize {
        match self {
            Layer::Kan(l) => l.d_in,
            Layer::Mlp(l) => l.d_in,
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Layer::Kan(l) => l.d_out,
            Layer::Mlp(l) => l.d_out,
        }
    }

    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Layer::Kan(l) => vec![&l.base_weights, &l.spline_scales, &l.coeffs, &l.bias],
            Layer::Mlp(l) => vec![&l.weights, &l.bias],
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Kan(l) => vec![
                &mut l.base_weights,
                &mut l.spline_scales,
                &mut l.coeffs,
                &mut l.bias,
            ],
            Layer::Mlp(l) => vec![&mut l.weights, &mut l.bias],
        }
    }
}

#[derive(Debug, Clone, Default)]
struct KanCache {
    input: Vec<f64>,
    inputs: Vec<InputBasis>,
    vals: Vec<f64>,
    ders: Vec<f64>,
    spline: Vec<f64>,
    phi: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct MlpCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

/// Reusable per-layer buffers for [`Network::accumulate_gradients`].
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    kan: Vec<KanCache>,
    mlp: Vec<MlpCache>,
}

/// Everything a single-sample forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Input of every layer; `layer_inputs[0]` is the series itself.
    pub layer_inputs: Vec<Vec<f64>>,
    /// Per layer: KAN edge activations `φ_{q,p}` (`d_out × d_in`), or the MLP
    /// post-nonlinearity vector.
    pub activations: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Loss components of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub cross_entropy: f64,
    pub penalty: f64,
    pub total: f64,
}

/// A layered parameter collection. Gradients use the same type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

fn glorot_bound(d_in: usize, d_out: usize) -> f64 {
    (6.0 / (d_in + d_out) as f64).sqrt()
}

/// Fan-based uniform weights, unit spline scales, `N(0, 0.1/G)` coefficients
/// and zero biases, all drawn from one stream seeded by `seed`.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(spec.depth());
    for w in spec.layer_sizes.windows(2) {
        let (d_in, d_out) = (w[0], w[1]);
        let bound = glorot_bound(d_in, d_out);
        if spec.variant.is_kan() {
            let grid = SplineGrid::new(
                spec.grid_size,
                spec.spline_order,
                spec.grid_range.0,
                spec.grid_range.1,
            )?;
            let mut layer = KanLayer::zeros(d_in, d_out, grid);
            layer
                .base_weights
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
            layer.spline_scales.iter_mut().for_each(|v| *v = 1.0);
            let normal =
                Normal::new(0.0, 0.1 / spec.grid_size as f64).map_err(|e| Error::Config(e.to_string()))?;
            layer.coeffs.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            layers.push(Layer::Kan(layer));
        } else {
            let mut layer = MlpLayer::zeros(d_in, d_out);
            layer
                .weights
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
            layers.push(Layer::Mlp(layer));
        }
    }
    Ok(Network {
        spec: spec.clone(),
        layers,
    })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean `-ln p[label]` over rows of a `B × C` probability matrix.
pub fn cross_entropy_loss(probabilities: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    check_len("probability rows", labels.len() * classes, probabilities.len())?;
    let mut total = 0.0;
    for (row, &y) in probabilities.chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        total -= row[y].ln();
    }
    Ok(total / labels.len().max(1) as f64)
}

/// Mean cross-entropy in log-sum-exp form from a `B × C` logit matrix.
pub fn cross_entropy_from_logits(logits: &[f64], classes: usize, labels: &[usize]) -> Result<f64> {
    check_len("logit rows", labels.len() * classes, logits.len())?;
    let mut total = 0.0;
    for (row, &y) in logits.chunks_exact(classes).zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        total += log_sum_exp(row) - row[y];
    }
    Ok(total / labels.len().max(1) as f64)
}

impl Network {
    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Network {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.param_slices_mut() {
            t.iter_mut().for_each(|v| *v = value);
        }
    }

    /// Every learnable tensor in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }

    /// Number of stored scalar parameters.
    pub fn stored_parameter_count(&self) -> usize {
        self.param_slices().iter().map(|t| t.len()).sum()
    }

    pub fn kan_layers(&self) -> impl Iterator<Item = &KanLayer> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Kan(k) => Some(k),
            Layer::Mlp(_) => None,
        })
    }

    /// Checks tensor shapes against the spec.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        check_len("layer count", self.spec.depth(), self.layers.len())?;
        for (layer, w) in self.layers.iter().zip(self.spec.layer_sizes.windows(2)) {
            check_len("layer input width", w[0], layer.d_in())?;
            check_len("layer output width", w[1], layer.d_out())?;
            match layer {
                Layer::Kan(l) => {
                    let e = l.d_in * l.d_out;
                    check_len("base weights", e, l.base_weights.len())?;
                    check_len("spline scales", e, l.spline_scales.len())?;
                    check_len("coefficients", e * l.grid.basis_count(), l.coeffs.len())?;
                    check_len("bias", l.d_out, l.bias.len())?;
                }
                Layer::Mlp(l) => {
                    check_len("weights", l.d_in * l.d_out, l.weights.len())?;
                    check_len("bias", l.d_out, l.bias.len())?;
                }
            }
        }
        if self
            .param_slices()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric("parameters".into()));
        }
        Ok(())
    }

    /// Single-sample forward through every layer.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_len("network input", self.spec.input_len(), x.len())?;
        let depth = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(depth);
        let mut activations = Vec::with_capacity(depth);
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            layer_inputs.push(h.clone());
            h = match layer {
                Layer::Kan(l) => {
                    let (out, phi) = l.forward(&h)?;
                    activations.push(phi);
                    out
                }
                Layer::Mlp(l) => {
                    let out = l.forward(&h, i + 1 < depth)?;
                    activations.push(out.clone());
                    out
                }
            };
        }
        let probabilities = softmax(&h);
        Ok(ForwardTrace {
            layer_inputs,
            activations,
            logits: h,
            probabilities,
        })
    }

    /// Logits for `batch` rows. Efficient KAN runs layer-by-layer over the
    /// whole batch; the other variants run row by row.
    pub fn logits_batch(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let t = self.spec.input_len();
        check_len("batch input", batch * t, xs.len())?;
        if self.spec.variant == Variant::KanEfficient {
            let mut h = xs.to_vec();
            for layer in &self.layers {
                h = match layer {
                    Layer::Kan(l) => l.forward_batch(&h, batch)?,
                    Layer::Mlp(_) => unreachable!("mlp layer in a KAN network"),
                };
            }
            return Ok(h);
        }
        let mut out = Vec::with_capacity(batch * self.spec.class_count());
        for row in xs.chunks_exact(t) {
            out.extend(self.forward(row)?.logits);
        }
        Ok(out)
    }

    /// Class probabilities for `batch` rows.
    pub fn predict_proba(&self, xs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let c = self.spec.class_count();
        Ok(self
            .logits_batch(xs, batch)?
            .chunks_exact(c)
            .flat_map(softmax)
            .collect())
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, xs: &[f64], batch: usize) -> Result<Vec<usize>> {
        let c = self.spec.class_count();
        Ok(self
            .logits_batch(xs, batch)?
            .chunks_exact(c)
            .map(argmax)
            .collect())
    }

    fn kan_edge_count(&self) -> usize {
        self.kan_layers().map(|l| l.d_in * l.d_out).sum()
    }

    fn coeff_count(&self) -> usize {
        self.kan_layers().map(|l| l.coeffs.len()).sum()
    }

    /// Unweighted regularization penalty. `traces` (one per batch row) are
    /// needed only for the original KAN.
    pub fn reg_penalty(&self, traces: &[ForwardTrace]) -> f64 {
        match self.spec.variant {
            Variant::KanOriginal => {
                let edges = self.kan_edge_count();
                if traces.is_empty() || edges == 0 {
                    return 0.0;
                }
                let sum: f64 = traces
                    .iter()
                    .flat_map(|t| t.activations.iter().flatten())
                    .map(|v| v.abs())
                    .sum();
                sum / (edges * traces.len()) as f64
            }
            Variant::KanEfficient => {
                let n = self.coeff_count();
                if n == 0 {
                    return 0.0;
                }
                self.kan_layers()
                    .flat_map(|l| l.coeffs.iter())
                    .map(|c| c.abs())
                    .sum::<f64>()
                    / n as f64
            }
            Variant::Mlp => self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Mlp(m) => m.weights.iter().map(|w| w * w).sum::<f64>(),
                    Layer::Kan(_) => 0.0,
                })
                .sum(),
        }
    }

    /// Loss of a batch without gradients (penalty weighted by `reg_factor`).
    pub fn loss(&self, xs: &[f64], labels: &[usize], reg_factor: f64) -> Result<LossParts> {
        let t = self.spec.input_len();
        let c = self.spec.class_count();
        check_len("batch input", labels.len() * t, xs.len())?;
        let (ce, penalty) = if self.spec.variant == Variant::KanOriginal {
            let traces = xs
                .chunks_exact(t)
                .map(|row| self.forward(row))
                .collect::<Result<Vec<_>>>()?;
            let logits: Vec<f64> = traces.iter().flat_map(|t| t.logits.clone()).collect();
            (
                cross_entropy_from_logits(&logits, c, labels)?,
                self.reg_penalty(&traces),
            )
        } else {
            let logits = self.logits_batch(xs, labels.len())?;
            (
                cross_entropy_from_logits(&logits, c, labels)?,
                self.reg_penalty(&[]),
            )
        };
        Ok(LossParts {
            cross_entropy: ce,
            penalty,
            total: ce + reg_factor * penalty,
        })
    }

    /// Gradient of `mean CE + reg_factor · penalty` over the batch.
    pub fn backward(&self, xs: &[f64], labels: &[usize], reg_factor: f64) -> Result<(LossParts, Network)> {
        let mut grads = self.zeros_like();
        let mut ws = Workspace::default();
        let loss = self.accumulate_gradients(xs, labels, reg_factor, &mut grads, &mut ws)?;
        Ok((loss, grads))
    }

    /// Like [`Network::backward`] but writes into `grads` (overwritten) and reuses `ws`.
    pub fn accumulate_gradients(
        &self,
        xs: &[f64],
        labels: &[usize],
        reg_factor: f64,
        grads: &mut Network,
        ws: &mut Workspace,
    ) -> Result<LossParts> {
        let t = self.spec.input_len();
        let classes = self.spec.class_count();
        let batch = labels.len();
        check_len("batch input", batch * t, xs.len())?;
        if batch == 0 {
            return Err(Error::EmptyDataset);
        }
        grads.fill(0.0);
        let depth = self.layers.len();
        ws.kan.resize(depth, KanCache::default());
        ws.mlp.resize(depth, MlpCache::default());
        let inv_b = 1.0 / batch as f64;
        let edge_l1 = if self.spec.variant == Variant::KanOriginal {
            reg_factor / (self.kan_edge_count() * batch) as f64
        } else {
            0.0
        };

        let mut ce_sum = 0.0;
        let mut abs_phi_sum = 0.0;
        for (row, &y) in xs.chunks_exact(t).zip(labels) {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            // forward with caches
            let mut h = row.to_vec();
            for (i, layer) in self.layers.iter().enumerate() {
                h = match layer {
                    Layer::Kan(l) => {
                        let out = l.forward_cached(&h, &mut ws.kan[i], true);
                        if self.spec.variant == Variant::KanOriginal {
                            abs_phi_sum += ws.kan[i].phi.iter().map(|v| v.abs()).sum::<f64>();
                        }
                        out
                    }
                    Layer::Mlp(l) => {
                        let cache = &mut ws.mlp[i];
                        cache.input.clear();
                        cache.input.extend_from_slice(&h);
                        cache.pre = l.affine(&h);
                        if cache.pre.iter().any(|v| !v.is_finite()) {
                            return Err(Error::Numeric(format!("output of layer {i}")));
                        }
                        let mut a = cache.pre.clone();
                        if i + 1 < depth {
                            a.iter_mut().for_each(|v| *v = v.max(0.0));
                        }
                        a
                    }
                };
                if h.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("output of layer {i}")));
                }
            }
            let lse = log_sum_exp(&h);
            ce_sum += lse - h[y];
            // dCE/dlogits = softmax - onehot
            let mut g: Vec<f64> = h.iter().map(|z| (z - lse).exp() * inv_b).collect();
            g[y] -= inv_b;

            for i in (0..depth).rev() {
                g = match (&self.layers[i], &mut grads.layers[i]) {
                    (Layer::Kan(l), Layer::Kan(gl)) => l.backward_cached(&ws.kan[i], &g, edge_l1, gl),
                    (Layer::Mlp(l), Layer::Mlp(gl)) => {
                        let cache = &ws.mlp[i];
                        if i + 1 < depth {
                            for (gv, z) in g.iter_mut().zip(&cache.pre) {
                                if *z <= 0.0 {
                                    *gv = 0.0;
                                }
                            }
                        }
                        let mut dx = vec![0.0; l.d_in];
                        for (q, &gq) in g.iter().enumerate() {
                            gl.bias[q] += gq;
                            if gq == 0.0 {
                                continue;
                            }
                            let row = q * l.d_in;
                            for (p, dxp) in dx.iter_mut().enumerate() {
                                gl.weights[row + p] += gq * cache.input[p];
                                *dxp += gq * l.weights[row + p];
                            }
                        }
                        dx
                    }
                    _ => unreachable!("gradient layout differs from parameters"),
                };
            }
        }

        let penalty = match self.spec.variant {
            Variant::KanOriginal => {
                let edges = self.kan_edge_count();
                abs_phi_sum / (edges * batch) as f64
            }
            Variant::KanEfficient => {
                let n = self.coeff_count() as f64;
                let w = reg_factor / n;
                let mut sum = 0.0;
                for (l, gl) in self.layers.iter().zip(grads.layers.iter_mut()) {
                    if let (Layer::Kan(l), Layer::Kan(gl)) = (l, gl) {
                        for (c, gc) in l.coeffs.iter().zip(gl.coeffs.iter_mut()) {
                            sum += c.abs();
                            if *c != 0.0 {
                                *gc += w * c.signum();
                            }
                        }
                    }
                }
                sum / n
            }
            Variant::Mlp => {
                let mut sum = 0.0;
                for (l, gl) in self.layers.iter().zip(grads.layers.iter_mut()) {
                    if let (Layer::Mlp(l), Layer::Mlp(gl)) = (l, gl) {
                        for (w, gw) in l.weights.iter().zip(gl.weights.iter_mut()) {
                            sum += w * w;
                            *gw += 2.0 * reg_factor * w;
                        }
                    }
                }
                sum
            }
        };
        let cross_entropy = ce_sum * inv_b;
        let loss = LossParts {
            cross_entropy,
            penalty,
            total: cross_entropy + reg_factor * penalty,
        };
        if !loss.total.is_finite() {
            return Err(Error::Numeric("loss".into()));
        }
        Ok(loss)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// On-disk model: architecture, the seed it was initialized from, and all tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub seed: u64,
    pub network: Network,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.network.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single_edge(w_b: f64, w_s: f64, coeff: f64) -> KanLayer {
        let grid = SplineGrid::new(5, 3, -1.0, 1.0).unwrap();
        let mut l = KanLayer::zeros(1, 1, grid);
        l.base_weights[0] = w_b;
        l.spline_scales[0] = w_s;
        l.coeffs.iter_mut().for_each(|c| *c = coeff);
        l
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0), 0.0);
        assert_abs_diff_eq!(silu(1.0), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        assert_abs_diff_eq!(silu(1.0), 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(silu(50.0), 50.0, epsilon = 1e-9);
        for x in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(silu_with_derivative(x).1, fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn kan_layer_examples() {
        let zero = single_edge(0.0, 0.0, 0.0);
        assert_eq!(zero.forward(&[0.4]).unwrap().0, vec![0.0]);

        let base_only = single_edge(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(base_only.forward(&[1.0]).unwrap().0[0], 0.7311, epsilon = 1e-4);

        let grid = SplineGrid::new(5, 3, -1.0, 1.0).unwrap();
        let mut wide = KanLayer::zeros(3, 2, grid);
        wide.spline_scales.iter_mut().for_each(|v| *v = 1.0);
        wide.coeffs.iter_mut().for_each(|v| *v = 1.0);
        wide.bias = vec![0.5, -1.0];
        let (out, phi) = wide.forward(&[-0.3, 0.1, 0.9]).unwrap();
        assert_abs_diff_eq!(out[0], 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 2.0, epsilon = 1e-12);
        assert_eq!(phi.len(), 6);
        assert!(wide.forward(&[0.0]).is_err());
    }

    #[test]
    fn batched_zero_case() {
        let l = single_edge(0.7, 1.0, 0.0);
        assert_eq!(l.forward_batch(&[0.0, 0.0], 2).unwrap(), vec![0.0, 0.0]);
        assert!(l.forward_batch(&[], 0).is_err());
    }

    #[test]
    fn mlp_layer_examples() {
        let mut l = MlpLayer::zeros(2, 2);
        l.weights = vec![1.0, 0.0, 0.0, 1.0];
        assert_eq!(l.forward(&[-1.0, 2.0], true).unwrap(), vec![0.0, 2.0]);
        assert_eq!(l.forward(&[-1.0, 2.0], false).unwrap(), vec![-1.0, 2.0]);

        let mut b = MlpLayer::zeros(2, 1);
        b.bias = vec![3.0];
        assert_eq!(b.forward(&[5.0, 6.0], true).unwrap(), vec![3.0]);

        // [[0.5, -1], [2, 0.25]] · [2, 3] + [0.1, -0.2] = [-1.9, 4.55]
        let mut m = MlpLayer::zeros(2, 2);
        m.weights = vec![0.5, -1.0, 2.0, 0.25];
        m.bias = vec![0.1, -0.2];
        let out = m.forward(&[2.0, 3.0], false).unwrap();
        assert_abs_diff_eq!(out[0], -1.9, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 4.55, epsilon = 1e-12);
        assert_eq!(m.forward(&[2.0, 3.0], true).unwrap()[0], 0.0);
    }

    #[test]
    fn zero_network_is_uniform() {
        for variant in [Variant::KanOriginal, Variant::KanEfficient, Variant::Mlp] {
            let spec = if variant == Variant::Mlp {
                NetworkSpec::mlp(vec![4, 5, 3])
            } else {
                NetworkSpec::kan(variant, vec![4, 5, 3], 5)
            };
            let mut net = init_params(&spec, 0).unwrap();
            net.fill(0.0);
            let tr = net.forward(&[0.3, -2.0, 1.0, 0.0]).unwrap();
            for p in &tr.probabilities {
                assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
            }
            assert_eq!(net.reg_penalty(&[tr]), 0.0);
            assert_eq!(net.predict(&[0.3, -2.0, 1.0, 0.0], 1).unwrap(), vec![0]);
        }
    }

    #[test]
    fn argmax_follows_largest_input() {
        let grid = SplineGrid::new(5, 3, -1.0, 1.0).unwrap();
        let mut l = KanLayer::zeros(3, 3, grid);
        for i in 0..3 {
            l.base_weights[i * 3 + i] = 1.0;
        }
        let net = Network {
            spec: NetworkSpec::kan(Variant::KanOriginal, vec![3, 3], 5),
            layers: vec![Layer::Kan(l)],
        };
        // silu is increasing on x > -1.28
        assert_eq!(net.predict(&[0.1, 0.9, -0.5], 1).unwrap(), vec![1]);
        assert_eq!(net.predict(&[2.0, 0.9, -0.5], 1).unwrap(), vec![0]);
    }

    #[test]
    fn composition_matches_layers() {
        let spec = NetworkSpec::kan(Variant::KanOriginal, vec![2, 2, 2, 2], 4);
        let net = init_params(&spec, 9).unwrap();
        let x = [0.4, -0.8];
        let mut h = x.to_vec();
        for layer in &net.layers {
            let Layer::Kan(l) = layer else { unreachable!() };
            h = l.forward(&h).unwrap().0;
        }
        assert_eq!(net.forward(&x).unwrap().logits, h);
    }

    #[test]
    fn cross_entropy_examples() {
        let u = [1.0 / 3.0; 3];
        assert_abs_diff_eq!(
            cross_entropy_loss(&u, 3, &[1]).unwrap(),
            3f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(cross_entropy_loss(&[0.0, 1.0], 2, &[1]).unwrap(), 0.0);
        let expect = (1.0 + (-2.0f64).exp()).ln();
        assert_abs_diff_eq!(
            cross_entropy_from_logits(&[2.0, 0.0], 2, &[0]).unwrap(),
            expect,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(expect, 0.1269, epsilon = 1e-4);
        assert!(matches!(
            cross_entropy_from_logits(&[2.0, 0.0], 2, &[2]),
            Err(Error::LabelOutOfRange { .. })
        ));
        // stable for large logits
        assert!(cross_entropy_from_logits(&[1000.0, -1000.0], 2, &[1])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn penalty_examples() {
        let mut mlp = init_params(&NetworkSpec::mlp(vec![2, 1]), 0).unwrap();
        let Layer::Mlp(l) = &mut mlp.layers[0] else {
            unreachable!()
        };
        l.weights = vec![1.0, -2.0];
        l.bias = vec![10.0];
        assert_eq!(mlp.reg_penalty(&[]), 5.0);

        let spec = NetworkSpec::kan(Variant::KanEfficient, vec![3, 2, 2], 5);
        let mut net = init_params(&spec, 0).unwrap();
        for l in net.layers.iter_mut() {
            let Layer::Kan(k) = l else { unreachable!() };
            k.coeffs.iter_mut().for_each(|c| *c = 0.5);
        }
        assert_abs_diff_eq!(net.reg_penalty(&[]), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn one_hot_correct_gives_zero_gradient() {
        // A saturated softmax makes every CE gradient underflow to zero.
        let mut net = init_params(&NetworkSpec::mlp(vec![2, 2]), 0).unwrap();
        let Layer::Mlp(l) = &mut net.layers[0] else {
            unreachable!()
        };
        l.weights = vec![0.0; 4];
        l.bias = vec![1000.0, -1000.0];
        let (loss, g) = net.backward(&[0.3, 0.2], &[0], 0.0).unwrap();
        assert_eq!(loss.cross_entropy, 0.0);
        for t in g.param_slices() {
            assert!(t.iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn mlp_single_layer_gradient_by_hand() {
        // logits z = Wx + b; dL/dW = (p - y) xᵀ, dL/db = p - y.
        let mut net = init_params(&NetworkSpec::mlp(vec![3, 2]), 0).unwrap();
        let Layer::Mlp(l) = &mut net.layers[0] else {
            unreachable!()
        };
        l.weights = vec![0.2, -0.1, 0.4, -0.3, 0.5, 0.1];
        l.bias = vec![0.05, -0.05];
        let x = [1.0, 2.0, -1.0];
        let z0: f64 = 0.2 - 0.2 - 0.4 + 0.05;
        let z1: f64 = -0.3 + 1.0 - 0.1 - 0.05;
        let p0 = z0.exp() / (z0.exp() + z1.exp());
        let p1 = 1.0 - p0;
        let (_, g) = net.backward(&x, &[1], 0.0).unwrap();
        let Layer::Mlp(gl) = &g.layers[0] else {
            unreachable!()
        };
        let expect_w = [p0 * 1.0, p0 * 2.0, -p0, (p1 - 1.0), (p1 - 1.0) * 2.0, -(p1 - 1.0)];
        for (a, e) in gl.weights.iter().zip(expect_w) {
            assert_abs_diff_eq!(*a, e, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(gl.bias[0], p0, epsilon = 1e-12);
        assert_abs_diff_eq!(gl.bias[1], p1 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn init_is_seeded() {
        let spec = NetworkSpec::kan(Variant::KanEfficient, vec![4, 3, 2], 5);
        assert_eq!(init_params(&spec, 7).unwrap(), init_params(&spec, 7).unwrap());
        assert_ne!(init_params(&spec, 0).unwrap(), init_params(&spec, 1).unwrap());
        let mlp = NetworkSpec::mlp(vec![4, 3, 2]);
        assert_ne!(init_params(&mlp, 0).unwrap(), init_params(&mlp, 1).unwrap());
    }

    #[test]
    fn init_distributions() {
        let spec = NetworkSpec::kan(Variant::KanEfficient, vec![40, 40], 5);
        let net = init_params(&spec, 3).unwrap();
        let Layer::Kan(l) = &net.layers[0] else {
            unreachable!()
        };
        assert!(l.coeffs.len() >= 10_000);
        let n = l.coeffs.len() as f64;
        let mean = l.coeffs.iter().sum::<f64>() / n;
        let std = (l.coeffs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.02).abs() < 0.2 * 0.02, "std {std}");
        let bound = (6.0f64 / 80.0).sqrt();
        assert!(l.base_weights.iter().all(|w| w.abs() <= bound));
        assert!(l.spline_scales.iter().all(|&w| w == 1.0));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn invalid_specs() {
        assert!(init_params(&NetworkSpec::mlp(vec![3]), 0).is_err());
        assert!(init_params(&NetworkSpec::mlp(vec![3, 0, 2]), 0).is_err());
        assert!(init_params(&NetworkSpec::kan(Variant::KanOriginal, vec![3, 2], 0), 0).is_err());
    }

    #[test]
    fn non_finite_input_names_layer() {
        let net = init_params(&NetworkSpec::mlp(vec![2, 3, 2]), 0).unwrap();
        let err = net.backward(&[f64::NAN, 1.0], &[0], 0.0).unwrap_err();
        assert!(
            matches!(err, Error::Numeric(ref m) if m.contains("layer 0")),
            "{err}"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        for spec in [
            NetworkSpec::kan(Variant::KanEfficient, vec![5, 4, 3], 7),
            NetworkSpec::mlp(vec![5, 4, 3]),
        ] {
            let ckpt = Checkpoint {
                seed: 11,
                network: init_params(&spec, 11).unwrap(),
            };
            ckpt.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ckpt);
            for (a, b) in back
                .network
                .param_slices()
                .iter()
                .zip(ckpt.network.param_slices())
            {
                assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    fn permuted_rows<T: Clone>(v: &[T], rows: usize, perm: &[usize]) -> Vec<T> {
        let w = v.len() / rows;
        perm.iter()
            .flat_map(|&r| v[r * w..(r + 1) * w].to_vec())
            .collect()
    }

    proptest! {
        #[test]
        fn output_permutation_equivariance(seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 3)) {
            let spec = NetworkSpec::kan(Variant::KanOriginal, vec![3, 4], 5);
            let net = init_params(&spec, seed).unwrap();
            let Layer::Kan(l) = &net.layers[0] else { unreachable!() };
            let perm = [2usize, 0, 3, 1];
            let mut p = l.clone();
            p.base_weights = permuted_rows(&l.base_weights, 4, &perm);
            p.spline_scales = permuted_rows(&l.spline_scales, 4, &perm);
            p.coeffs = permuted_rows(&l.coeffs, 4, &perm);
            p.bias = permuted_rows(&l.bias, 4, &perm);
            let a = l.forward(&x).unwrap().0;
            let b = p.forward(&x).unwrap().0;
            for (i, &r) in perm.iter().enumerate() {
                prop_assert_eq!(b[i], a[r]);
            }

            let mlp = init_params(&NetworkSpec::mlp(vec![3, 4]), seed).unwrap();
            let Layer::Mlp(m) = &mlp.layers[0] else { unreachable!() };
            let mut mp = m.clone();
            mp.weights = permuted_rows(&m.weights, 4, &perm);
            mp.bias = permuted_rows(&m.bias, 4, &perm);
            let a = m.forward(&x, true).unwrap();
            let b = mp.forward(&x, true).unwrap();
            for (i, &r) in perm.iter().enumerate() {
                prop_assert_eq!(b[i], a[r]);
            }
        }

        #[test]
        fn probabilities_are_distributions(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 4)) {
            for spec in [
                NetworkSpec::kan(Variant::KanOriginal, vec![4, 3, 5], 3),
                NetworkSpec::mlp(vec![4, 6, 5]),
            ] {
                let tr = init_params(&spec, seed).unwrap().forward(&x).unwrap();
                prop_assert!((tr.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(tr.probabilities.iter().all(|&p| (0.0..=1.0).contains(&p)));
                let labels = [0usize];
                prop_assert!(cross_entropy_from_logits(&tr.logits, 5, &labels).unwrap() >= 0.0);
            }
        }
    }
}
