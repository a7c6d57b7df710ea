//! Uniform B-spline grids and basis evaluation.
//!
//! A grid of `G` intervals over `[lo, hi]` with degree `k` carries `G + 2k + 1`
//! uniformly spaced knots (`k` extension knots on each side) and `G + k` basis
//! functions. `B_{i,0}(x) = 1` iff `t_i <= x < t_{i+1}`, except that `x == hi`
//! is assigned to the last interior interval.
//!
//! Two evaluation routes are provided: [`SplineGrid::basis`] runs the full
//! Cox–de Boor recursion over every knot interval and returns a dense vector,
//! while [`SplineGrid::local_basis`] runs the triangular form of the same
//! recursion on the `k + 1` functions that are nonzero at `x`. The network
//! uses the local route.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    intervals: usize,
    order: usize,
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
}

/// Location of the nonzero basis values at some `x`: indices `first..first + len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActiveSpan {
    pub first: usize,
    pub len: usize,
}

impl SplineGrid {
    pub fn new(intervals: usize, order: usize, lo: f64, hi: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::Grid("grid needs at least one interval".into()));
        }
        if order == 0 {
            return Err(Error::Grid("spline order must be at least 1".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Grid(format!("invalid range [{lo}, {hi}]")));
        }
        let step = (hi - lo) / intervals as f64;
        let knots = (0..intervals + 2 * order + 1)
            .map(|j| {
                if j == order {
                    lo
                } else if j == order + intervals {
                    hi
                } else {
                    lo + (j as f64 - order as f64) * step
                }
            })
            .collect();
        Ok(SplineGrid {
            intervals,
            order,
            lo,
            hi,
            knots,
        })
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// `G + k`.
    pub fn basis_count(&self) -> usize {
        self.intervals + self.order
    }

    fn step(&self) -> f64 {
        (self.hi - self.lo) / self.intervals as f64
    }

    /// Knot `j`, continuing the uniform spacing past both ends of the stored vector.
    fn knot(&self, j: isize) -> f64 {
        if j >= 0 && (j as usize) < self.knots.len() {
            self.knots[j as usize]
        } else {
            self.lo + (j as f64 - self.order as f64) * self.step()
        }
    }

    /// Index of the order-0 interval containing `x`, or `None` outside the knot span.
    fn interval_of(&self, x: f64) -> Option<usize> {
        let last = self.knots.len() - 1;
        if !(x >= self.knots[0] && x <= self.knots[last]) {
            return None;
        }
        if x == self.hi {
            return Some(self.order + self.intervals - 1);
        }
        if x == self.knots[last] {
            return None;
        }
        let mut s = (((x - self.knots[0]) / self.step()) as usize).min(last - 1);
        while s > 0 && x < self.knots[s] {
            s -= 1;
        }
        while s + 1 < last && x >= self.knots[s + 1] {
            s += 1;
        }
        Some(s)
    }

    fn order_zero(&self, x: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.knots.len() - 1];
        if let Some(s) = self.interval_of(x) {
            b[s] = 1.0;
        }
        b
    }

    /// Raises a basis vector of degree `p - 1` to degree `p`.
    fn raise(&self, prev: &[f64], x: f64, p: usize) -> Vec<f64> {
        let t = &self.knots;
        (0..prev.len() - 1)
            .map(|i| {
                let left = (x - t[i]) / (t[i + p] - t[i]) * prev[i];
                let right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * prev[i + 1];
                left + right
            })
            .collect()
    }

    /// Dense Cox–de Boor basis of degree `degree`, length `G + 2k - degree`.
    fn dense(&self, x: f64, degree: usize) -> Vec<f64> {
        (1..=degree).fold(self.order_zero(x), |b, p| self.raise(&b, x, p))
    }

    /// All `G + k` basis values at `x`.
    pub fn basis(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        Ok(self.dense(x, self.order))
    }

    /// `dB_i/dx` for all `G + k` basis functions.
    pub fn basis_derivative(&self, x: f64) -> Result<Vec<f64>> {
        if !x.is_finite() {
            return Err(Error::NonFiniteInput(x));
        }
        let k = self.order;
        let lower = self.dense(x, k - 1);
        let t = &self.knots;
        let kf = k as f64;
        Ok((0..self.basis_count())
            .map(|i| kf * (lower[i] / (t[i + k] - t[i]) - lower[i + 1] / (t[i + k + 1] - t[i + 1])))
            .collect())
    }

    /// Nonzero basis values (and optionally derivatives) at `x`, written to the
    /// front of `values` / `derivs`, which must hold at least `k + 1` entries.
    /// Returns an empty span outside the knot span or for non-finite `x`.
    pub fn local_basis(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) -> ActiveSpan {
        let k = self.order;
        let Some(s) = self.interval_of(x) else {
            return ActiveSpan::default();
        };
        // Triangular Cox–de Boor on indices s-k..=s, with virtual knots where
        // the index runs off the stored vector.
        let mut n = [0.0f64; 32];
        let mut left = [0.0f64; 32];
        let mut right = [0.0f64; 32];
        let mut lower = [0.0f64; 32];
        assert!(k < 31, "spline order {k} too large");
        let si = s as isize;
        n[0] = 1.0;
        for j in 1..=k {
            left[j] = x - self.knot(si + 1 - j as isize);
            right[j] = self.knot(si + j as isize) - x;
            if j == k {
                lower[..k].copy_from_slice(&n[..k]);
            }
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        let first_virtual = si - k as isize;
        let lo_idx = first_virtual.max(0);
        let hi_idx = (si + 1).min(self.basis_count() as isize);
        if lo_idx >= hi_idx {
            return ActiveSpan::default();
        }
        let len = (hi_idx - lo_idx) as usize;
        let offset = (lo_idx - first_virtual) as usize;
        values[..len].copy_from_slice(&n[offset..offset + len]);
        if let Some(d) = derivs {
            // lower[r] is B_{s-k+1+r, k-1}.
            let kf = k as f64;
            for (slot, j) in (offset..offset + len).enumerate() {
                let i = first_virtual + j as isize;
                let a = if j >= 1 { lower[j - 1] } else { 0.0 };
                let b = if j < k { lower[j] } else { 0.0 };
                let da = self.knot(i + k as isize) - self.knot(i);
                let db = self.knot(i + k as isize + 1) - self.knot(i + 1);
                d[slot] = kf * (a / da - b / db);
            }
        }
        ActiveSpan {
            first: lo_idx as usize,
            len,
        }
    }
}

/// `Σ c_i B_i(x)`.
pub fn spline_eval(coeffs: &[f64], grid: &SplineGrid, x: f64) -> Result<f64> {
    if coeffs.len() != grid.basis_count() {
        return Err(Error::Dimension {
            context: "spline coefficients",
            expected: grid.basis_count(),
            got: coeffs.len(),
        });
    }
    let b = grid.basis(x)?;
    Ok(coeffs.iter().zip(&b).map(|(c, v)| c * v).sum())
}
