//! Discretization of the product measure on `D x Omega`.
//!
//! `D` is an axis-aligned box in one or two dimensions carrying a uniform
//! tensor grid with trapezoid weights. `Omega` is a finite set of labelled
//! samples with probabilities. Every discrete field in the crate is a dense
//! array laid out sample-major: the value at `(node, sample)` lives at
//! `sample * n_nodes + node`, and nodes are numbered row-major with the
//! x-index running fastest.

use crate::error::{Error, Result};

/// Relative tolerance for the probability normalization and the total
/// quadrature weight.
pub const MEASURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    dim: usize,
    bounds: Vec<(f64, f64)>,
    n: Vec<usize>,
    h: Vec<f64>,
    quad_weights: Vec<f64>,
    boundary_mask: Vec<bool>,
}

impl SpatialGrid {
    pub fn new(dim: usize, bounds: &[(f64, f64)], n: &[usize]) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::Construction(format!(
                "dim must be 1 or 2, got {dim}"
            )));
        }
        if bounds.len() != dim || n.len() != dim {
            return Err(Error::Construction(format!(
                "expected {dim} bounds and node counts, got {} and {}",
                bounds.len(),
                n.len()
            )));
        }
        for (axis, (&(lo, hi), &na)) in bounds.iter().zip(n).enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
                return Err(Error::Construction(format!(
                    "axis {axis}: need lo < hi, got ({lo}, {hi})"
                )));
            }
            if na < 3 {
                return Err(Error::Construction(format!(
                    "axis {axis}: need at least 3 nodes, got {na}"
                )));
            }
        }
        let h: Vec<f64> = bounds
            .iter()
            .zip(n)
            .map(|(&(lo, hi), &na)| (hi - lo) / (na - 1) as f64)
            .collect();
        let axis_weight = |axis: usize, i: usize| {
            if i == 0 || i == n[axis] - 1 {
                0.5 * h[axis]
            } else {
                h[axis]
            }
        };
        let total: usize = n.iter().product();
        let mut quad_weights = Vec::with_capacity(total);
        let mut boundary_mask = Vec::with_capacity(total);
        for idx in 0..total {
            let (i, j) = (idx % n[0], idx / n[0]);
            let mut w = axis_weight(0, i);
            let mut on_boundary = i == 0 || i == n[0] - 1;
            if dim == 2 {
                w *= axis_weight(1, j);
                on_boundary |= j == 0 || j == n[1] - 1;
            }
            quad_weights.push(w);
            boundary_mask.push(on_boundary);
        }
        Ok(Self {
            dim,
            bounds: bounds.to_vec(),
            n: n.to_vec(),
            h,
            quad_weights,
            boundary_mask,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn n(&self) -> &[usize] {
        &self.n
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary_mask
    }

    pub fn n_nodes(&self) -> usize {
        self.quad_weights.len()
    }

    /// Lebesgue measure of the box.
    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Per-axis integer index of a node.
    pub fn index(&self, node: usize) -> [usize; 2] {
        if self.dim == 1 {
            [node, 0]
        } else {
            [node % self.n[0], node / self.n[0]]
        }
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        i + self.n[0] * j
    }

    /// Coordinates of a node; the second entry is 0 in one dimension.
    pub fn coords(&self, node: usize) -> [f64; 2] {
        let [i, j] = self.index(node);
        let x = self.bounds[0].0 + i as f64 * self.h[0];
        let y = if self.dim == 2 {
            self.bounds[1].0 + j as f64 * self.h[1]
        } else {
            0.0
        };
        [x, y]
    }

    /// Same box with the spacing halved on every axis.
    pub fn refined(&self) -> Result<Self> {
        let n: Vec<usize> = self.n.iter().map(|&na| 2 * (na - 1) + 1).collect();
        Self::new(self.dim, &self.bounds, &n)
    }

    /// Nodes lying in the closed sub-box `[lo, hi]` (per axis).
    pub fn sub_box_mask(&self, sub: &[(f64, f64)]) -> Result<Vec<bool>> {
        if sub.len() != self.dim {
            return Err(Error::Dimension(format!(
                "sub-box has {} axes, grid has {}",
                sub.len(),
                self.dim
            )));
        }
        let eps = 1e-12 * self.h.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok((0..self.n_nodes())
            .map(|node| {
                let c = self.coords(node);
                sub.iter()
                    .enumerate()
                    .all(|(a, &(lo, hi))| c[a] >= lo - eps && c[a] <= hi + eps)
            })
            .collect())
    }

    /// Trapezoid weights of the sub-box spanned by the grid nodes inside
    /// `sub`; zero outside it. Exact for the box itself when its faces sit
    /// on grid lines.
    pub fn sub_box_weights(&self, sub: &[(f64, f64)]) -> Result<Vec<f64>> {
        let mask = self.sub_box_mask(sub)?;
        let mut ranges = [(usize::MAX, 0usize); 2];
        for node in (0..self.n_nodes()).filter(|&k| mask[k]) {
            let idx = self.index(node);
            for a in 0..self.dim {
                ranges[a].0 = ranges[a].0.min(idx[a]);
                ranges[a].1 = ranges[a].1.max(idx[a]);
            }
        }
        let axis_weight = |a: usize, i: usize| {
            let (lo, hi) = ranges[a];
            if lo == hi {
                0.0
            } else if i == lo || i == hi {
                0.5 * self.h[a]
            } else {
                self.h[a]
            }
        };
        Ok((0..self.n_nodes())
            .map(|node| {
                if !mask[node] {
                    return 0.0;
                }
                let idx = self.index(node);
                (0..self.dim).map(|a| axis_weight(a, idx[a])).product()
            })
            .collect())
    }
}

/// Finite probability space standing in for `(Omega, F, P)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpace {
    samples: Vec<f64>,
    probs: Vec<f64>,
}

impl SampleSpace {
    pub fn new(samples: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Construction("sample space is empty".into()));
        }
        if samples.len() != probs.len() {
            return Err(Error::Construction(format!(
                "{} samples but {} probabilities",
                samples.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0) || !p.is_finite()) {
            return Err(Error::Construction(format!(
                "probabilities must be positive, got {p}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MEASURE_TOL {
            return Err(Error::Construction(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { samples, probs })
    }

    /// Equal-weight samples, e.g. quantiles of a continuous law.
    pub fn uniform(samples: Vec<f64>) -> Result<Self> {
        let m = samples.len().max(1);
        let probs = vec![1.0 / m as f64; samples.len()];
        Self::new(samples, probs)
    }

    pub fn single(label: f64) -> Self {
        Self {
            samples: vec![label],
            probs: vec![1.0],
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Weighted point set combined with the sample probabilities: the discrete
/// measure used by every integral in the crate. Points are grid nodes for
/// nodal quadrature and mesh cells for element quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature<'a> {
    pub weights: &'a [f64],
    pub probs: &'a [f64],
}

impl<'a> Quadrature<'a> {
    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn n_samples(&self) -> usize {
        self.probs.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len() * self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `sum_t probs[t] * sum_x weights[x] * f(t * n_points + x)`, samples
    /// outer, points inner.
    pub fn sum(&self, mut f: impl FnMut(usize) -> f64) -> f64 {
        let np = self.weights.len();
        let mut total = 0.0;
        for (t, &prob) in self.probs.iter().enumerate() {
            let base = t * np;
            let mut inner = 0.0;
            for (x, &w) in self.weights.iter().enumerate() {
                if w != 0.0 {
                    inner += w * f(base + x);
                }
            }
            total += prob * inner;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductMeasureGrid {
    pub grid: SpatialGrid,
    pub omega: SampleSpace,
}

impl ProductMeasureGrid {
    pub fn new(grid: SpatialGrid, omega: SampleSpace) -> Self {
        Self { grid, omega }
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_nodes()
    }

    pub fn n_samples(&self) -> usize {
        self.omega.len()
    }

    /// Length of a dense node x sample array on this grid.
    pub fn len(&self) -> usize {
        self.n_nodes() * self.n_samples()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn nodal(&self) -> Quadrature<'_> {
        Quadrature {
            weights: self.grid.quad_weights(),
            probs: self.omega.probs(),
        }
    }

    /// Split a flat index into `(node, sample)`.
    pub fn split(&self, flat: usize) -> (usize, usize) {
        (flat % self.n_nodes(), flat / self.n_nodes())
    }

    pub fn check_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::Dimension(format!(
                "{what} has {len} values, grid expects {} ({} nodes x {} samples)",
                self.len(),
                self.n_nodes(),
                self.n_samples()
            )));
        }
        Ok(())
    }

    /// Integral of a dense node x sample array against the product measure.
    pub fn integrate_values(&self, values: &[f64]) -> Result<f64> {
        self.check_len("field", values.len())?;
        Ok(self.nodal().sum(|i| values[i]))
    }

    /// Same box and samples with the spatial spacing halved.
    pub fn refined(&self) -> Result<Self> {
        Ok(Self {
            grid: self.grid.refined()?,
            omega: self.omega.clone(),
        })
    }

    /// Copy with a single sample of probability one (per-sample problems).
    pub fn sample_slice(&self, t_index: usize) -> Result<Self> {
        let label = *self.omega.samples().get(t_index).ok_or_else(|| {
            Error::Dimension(format!(
                "sample index {t_index} out of range ({} samples)",
                self.n_samples()
            ))
        })?;
        Ok(Self {
            grid: self.grid.clone(),
            omega: SampleSpace::single(label),
        })
    }
}

/// Build a product grid with trapezoid weights and a populated boundary mask.
pub fn build_grid(
    dim: usize,
    bounds: &[(f64, f64)],
    n: &[usize],
    samples: Vec<f64>,
    probs: Vec<f64>,
) -> Result<ProductMeasureGrid> {
    let grid = SpatialGrid::new(dim, bounds, n)?;
    let omega = SampleSpace::new(samples, probs)?;
    Ok(ProductMeasureGrid::new(grid, omega))
}

/// One-sample grid on the unit interval, a frequent fixture.
pub fn unit_interval(n: usize) -> Result<ProductMeasureGrid> {
    build_grid(1, &[(0.0, 1.0)], &[n], vec![0.0], vec![1.0])
}
