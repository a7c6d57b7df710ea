//! Closed-form parameter counts, theoretical forward FLOPs and energy.
//!
//! Sizes are `f64` so that dataset-averaged input lengths and class counts can
//! be fed in directly; every count is affine in `T` and `C`, so averaging the
//! inputs averages the outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkSpec;

/// FLOPs charged per SiLU evaluation.
pub const DEFAULT_NL_SILU: f64 = 20.0;
pub const DEFAULT_GFLOPS_PER_WATT: f64 = 65.0;

fn pairs(sizes: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    sizes.windows(2).map(|w| (w[0], w[1]))
}

/// Learnable parameters of a KAN: `(d_in·d_out)(G + k + 3) + d_out` per layer.
pub fn kan_param_count(layer_sizes: &[f64], grid: usize, order: usize) -> f64 {
    let per_edge = (grid + order + 3) as f64;
    pairs(layer_sizes).map(|(i, o)| i * o * per_edge + o).sum()
}

/// Scalars actually stored per KAN: coefficients, base weight and spline
/// scale per edge, plus the output bias.
pub fn kan_stored_param_count(layer_sizes: &[f64], grid: usize, order: usize) -> f64 {
    let per_edge = (grid + order + 2) as f64;
    pairs(layer_sizes).map(|(i, o)| i * o * per_edge + o).sum()
}

/// `(d_in·d_out) + d_out` per layer.
pub fn mlp_param_count(layer_sizes: &[f64]) -> f64 {
    pairs(layer_sizes).map(|(i, o)| i * o + o).sum()
}

/// Per-edge B-spline, shortcut and merge cost.
pub fn kan_edge_flops(grid: usize, order: usize) -> f64 {
    let (g, k) = (grid as f64, order as f64);
    9.0 * k * (g + 1.5 * k) + 2.0 * g - 2.5 * k + 3.0
}

pub fn kan_layer_flops(d_in: f64, d_out: f64, grid: usize, order: usize, nl_silu: f64) -> f64 {
    nl_silu * d_in + d_in * d_out * kan_edge_flops(grid, order)
}

/// One KAN forward pass with `depth` layers, hidden width `m`, input length
/// `t` and `c` classes. For `depth < 2` the per-layer sum is used.
pub fn kan_forward_flops(
    t: f64,
    m: f64,
    depth: usize,
    c: f64,
    grid: usize,
    order: usize,
    nl_silu: f64,
) -> f64 {
    let e = kan_edge_flops(grid, order);
    match depth {
        0 => 0.0,
        1 => kan_layer_flops(t, c, grid, order, nl_silu),
        l => nl_silu * t + t * m * e + (l - 2) as f64 * (nl_silu * m + m * m * e) + nl_silu * m + m * c * e,
    }
}

/// MLP with `hidden` layers of width `m`; the rectifier is free.
pub fn mlp_forward_flops(t: f64, m: f64, hidden: usize, c: f64) -> f64 {
    (m + 2.0 * m * t) + (hidden as f64 - 1.0) * (m + 2.0 * m * m) + (m + 2.0 * m * c)
}

/// Joules for `flops` at the given efficiency.
pub fn tec(flops: f64, gflops_per_watt: f64) -> f64 {
    flops / (gflops_per_watt * 1e9)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assumptions {
    pub nl_silu: f64,
    pub gflops_per_watt: f64,
}

impl Default for Assumptions {
    fn default() -> Self {
        Assumptions {
            nl_silu: DEFAULT_NL_SILU,
            gflops_per_watt: DEFAULT_GFLOPS_PER_WATT,
        }
    }
}

/// One row of the complexity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub model: String,
    pub config: String,
    pub params_eq: f64,
    pub params_stored: f64,
    pub flops: f64,
    pub tec_joules: f64,
    pub nl_silu: f64,
    pub gflops_per_watt: f64,
}

fn check_positive(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Config("complexity inputs must be positive".into()));
    }
    Ok(())
}

impl ComplexityReport {
    /// KAN with `depth` layers of hidden width `m`.
    #[allow(clippy::too_many_arguments)]
    pub fn kan(
        config: &str,
        t: f64,
        m: f64,
        depth: usize,
        c: f64,
        grid: usize,
        order: usize,
        a: Assumptions,
    ) -> Result<Self> {
        check_positive(&[t, m, c, a.gflops_per_watt])?;
        if depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        let sizes = uniform_sizes(t, m, depth - 1, c);
        let flops = kan_forward_flops(t, m, depth, c, grid, order, a.nl_silu);
        Ok(ComplexityReport {
            model: "KAN".into(),
            config: config.into(),
            params_eq: kan_param_count(&sizes, grid, order),
            params_stored: kan_stored_param_count(&sizes, grid, order),
            flops,
            tec_joules: tec(flops, a.gflops_per_watt),
            nl_silu: a.nl_silu,
            gflops_per_watt: a.gflops_per_watt,
        })
    }

    /// MLP with `hidden` layers of width `m`.
    pub fn mlp(config: &str, t: f64, m: f64, hidden: usize, c: f64, a: Assumptions) -> Result<Self> {
        check_positive(&[t, m, c, a.gflops_per_watt])?;
        if hidden == 0 {
            return Err(Error::Config("need at least one hidden layer".into()));
        }
        let sizes = uniform_sizes(t, m, hidden, c);
        let params = mlp_param_count(&sizes);
        let flops = mlp_forward_flops(t, m, hidden, c);
        Ok(ComplexityReport {
            model: "MLP".into(),
            config: config.into(),
            params_eq: params,
            params_stored: params,
            flops,
            tec_joules: tec(flops, a.gflops_per_watt),
            nl_silu: a.nl_silu,
            gflops_per_watt: a.gflops_per_watt,
        })
    }
}

impl ComplexityReport {
    /// Row for an arbitrary architecture; FLOPs are summed layer by layer,
    /// which equals the closed forms for uniform hidden widths.
    pub fn for_spec(config: &str, spec: &NetworkSpec, a: Assumptions) -> Result<Self> {
        spec.validate()?;
        let sizes: Vec<f64> = spec.layer_sizes.iter().map(|&v| v as f64).collect();
        let (model, params_eq, params_stored, flops) = if spec.variant.is_kan() {
            let (g, k) = (spec.grid_size, spec.spline_order);
            let flops = sizes
                .windows(2)
                .map(|w| kan_layer_flops(w[0], w[1], g, k, a.nl_silu))
                .sum();
            (
                "KAN",
                kan_param_count(&sizes, g, k),
                kan_stored_param_count(&sizes, g, k),
                flops,
            )
        } else {
            let p = mlp_param_count(&sizes);
            // The closed form charges the output layer its input width, not
            // its output width, for the bias term.
            let last = sizes.len() - 2;
            let flops = sizes
                .windows(2)
                .enumerate()
                .map(|(j, w)| if j == last { w[0] } else { w[1] } + 2.0 * w[0] * w[1])
                .sum();
            ("MLP", p, p, flops)
        };
        Ok(ComplexityReport {
            model: model.into(),
            config: config.into(),
            params_eq,
            params_stored,
            flops,
            tec_joules: tec(flops, a.gflops_per_watt),
            nl_silu: a.nl_silu,
            gflops_per_watt: a.gflops_per_watt,
        })
    }
}

/// `[t, m × hidden, c]`.
pub fn uniform_sizes(t: f64, m: f64, hidden: usize, c: f64) -> Vec<f64> {
    let mut v = vec![t];
    v.extend(std::iter::repeat_n(m, hidden));
    v.push(c);
    v
}

pub fn write_complexity_csv<W: std::io::Write>(writer: W, rows: &[ComplexityReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("complexity csv", e))?;
    Ok(())
}
