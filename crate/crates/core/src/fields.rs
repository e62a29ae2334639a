//! Exponent, weight and stochastic fields sampled on a product grid.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::measure_grid::ProductMeasureGrid;

/// Weights below this value are rejected: `theta^(1-q)` overflows there.
pub const WEIGHT_FLOOR: f64 = 1e-300;

/// Relative growth per refinement above which an integral is declared
/// divergent by [`validate_weight_refined`].
pub const DIVERGENCE_GROWTH: f64 = 0.10;

/// A function of position and sample label, evaluated once per grid node.
pub trait FieldFn: Send + Sync {
    fn eval(&self, x: &[f64], t: f64) -> f64;
}

impl<F> FieldFn for F
where
    F: Fn(&[f64], f64) -> f64 + Send + Sync,
{
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        self(x, t)
    }
}

/// Variables visible to field expressions.
pub const FIELD_VARS: [&str; 3] = ["x", "y", "t"];

/// Config-level field expression over `x`, `y`, `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExpr(pub Expr);

impl FieldExpr {
    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self(Expr::parse(src, &FIELD_VARS)?))
    }

    pub fn constant(value: f64) -> Self {
        Self(Expr::constant(value, &FIELD_VARS))
    }
}

impl FieldFn for FieldExpr {
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        let y = x.get(1).copied().unwrap_or(0.0);
        self.0.eval(&[x[0], y, t])
    }
}

fn sample_fn(m: &ProductMeasureGrid, f: &dyn FieldFn) -> Vec<f64> {
    let dim = m.dim();
    let mut out = Vec::with_capacity(m.len());
    for &t in m.omega.samples() {
        for node in 0..m.n_nodes() {
            let c = m.grid.coords(node);
            out.push(f.eval(&c[..dim], t));
        }
    }
    out
}

/// A real function `u(x, t)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticField {
    values: Vec<f64>,
    n_nodes: usize,
    zero_boundary: bool,
}

impl StochasticField {
    pub fn from_values(m: &ProductMeasureGrid, values: Vec<f64>) -> Result<Self> {
        m.check_len("field", values.len())?;
        Ok(Self {
            values,
            n_nodes: m.n_nodes(),
            zero_boundary: false,
        })
    }

    pub fn from_fn(m: &ProductMeasureGrid, f: &dyn FieldFn) -> Self {
        Self {
            values: sample_fn(m, f),
            n_nodes: m.n_nodes(),
            zero_boundary: false,
        }
    }

    pub fn constant(m: &ProductMeasureGrid, c: f64) -> Self {
        Self {
            values: vec![c; m.len()],
            n_nodes: m.n_nodes(),
            zero_boundary: c == 0.0,
        }
    }

    pub fn zeros(m: &ProductMeasureGrid) -> Self {
        Self::constant(m, 0.0)
    }

    /// Checks that the field vanishes on `dD` for every sample and marks it
    /// as a member of the zero-trace space.
    pub fn with_zero_boundary(mut self, m: &ProductMeasureGrid) -> Result<Self> {
        self.check_shape(m)?;
        let mask = m.grid.boundary_mask();
        for (flat, v) in self.values.iter().enumerate() {
            let (node, sample) = m.split(flat);
            if mask[node] && *v != 0.0 {
                return Err(Error::Domain(format!(
                    "field is {v} on boundary node {node} (sample {sample})"
                )));
            }
        }
        self.zero_boundary = true;
        Ok(self)
    }

    /// Overwrites boundary values with zero.
    pub fn clamp_boundary(mut self, m: &ProductMeasureGrid) -> Self {
        let mask = m.grid.boundary_mask();
        let n = self.n_nodes;
        for (flat, v) in self.values.iter_mut().enumerate() {
            if mask[flat % n] {
                *v = 0.0;
            }
        }
        self.zero_boundary = true;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn zero_boundary(&self) -> bool {
        self.zero_boundary
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn sample(&self, t_index: usize) -> &[f64] {
        &self.values[t_index * self.n_nodes..(t_index + 1) * self.n_nodes]
    }

    pub fn check_shape(&self, m: &ProductMeasureGrid) -> Result<()> {
        m.check_len("field", self.values.len())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            n_nodes: self.n_nodes,
            zero_boundary: self.zero_boundary,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        Self {
            values,
            n_nodes: self.n_nodes,
            zero_boundary: false,
        }
    }

    /// `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if other.values.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "fields of length {} and {}",
                self.values.len(),
                other.values.len()
            )));
        }
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            n_nodes: self.n_nodes,
            zero_boundary: self.zero_boundary && other.zero_boundary,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

pub fn integrate(f: &StochasticField, m: &ProductMeasureGrid) -> Result<f64> {
    m.integrate_values(f.values())
}

/// Variable exponent `p(x, t)` with `1 < p_minus <= p <= p_plus < inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentField {
    values: Vec<f64>,
    p_minus: f64,
    p_plus: f64,
}

impl ExponentField {
    pub fn new(m: &ProductMeasureGrid, values: Vec<f64>) -> Result<Self> {
        m.check_len("exponent", values.len())?;
        let (p_minus, p_plus) = min_max(&values);
        if !(p_minus > 1.0) || !p_plus.is_finite() {
            return Err(Error::Domain(format!(
                "exponent must satisfy 1 < p- <= p+ < inf, got [{p_minus}, {p_plus}]"
            )));
        }
        Ok(Self {
            values,
            p_minus,
            p_plus,
        })
    }

    pub fn from_fn(m: &ProductMeasureGrid, f: &dyn FieldFn) -> Result<Self> {
        Self::new(m, sample_fn(m, f))
    }

    pub fn constant(m: &ProductMeasureGrid, p: f64) -> Result<Self> {
        Self::new(m, vec![p; m.len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p_minus(&self) -> f64 {
        self.p_minus
    }

    pub fn p_plus(&self) -> f64 {
        self.p_plus
    }

    pub fn is_constant(&self) -> bool {
        self.p_minus == self.p_plus
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            if v.is_nan() {
                (f64::NAN, f64::NAN)
            } else {
                (lo.min(v), hi.max(v))
            }
        })
}

/// Strictly positive auxiliary exponent `s(x, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxExponentField {
    values: Vec<f64>,
}

impl AuxExponentField {
    pub fn new(m: &ProductMeasureGrid, values: Vec<f64>) -> Result<Self> {
        m.check_len("auxiliary exponent", values.len())?;
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("s must be positive, got {v}")));
        }
        Ok(Self { values })
    }

    pub fn from_fn(m: &ProductMeasureGrid, f: &dyn FieldFn) -> Result<Self> {
        Self::new(m, sample_fn(m, f))
    }

    pub fn constant(m: &ProductMeasureGrid, s: f64) -> Result<Self> {
        Self::new(m, vec![s; m.len()])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> (f64, f64) {
        min_max(&self.values)
    }
}

/// Positive weight `theta(x, t)`. The integrability flags start out false
/// and are set by [`WeightField::mark_validated`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    values: Vec<f64>,
    h1_ok: bool,
    h2_ok: bool,
}

impl WeightField {
    pub fn new(m: &ProductMeasureGrid, values: Vec<f64>) -> Result<Self> {
        m.check_len("weight", values.len())?;
        if let Some((flat, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= WEIGHT_FLOOR) || !v.is_finite())
        {
            let (node, sample) = m.split(flat);
            return Err(Error::Domain(format!(
                "weight must be positive and at least {WEIGHT_FLOOR:e}, got {v} at node {node} (sample {sample})"
            )));
        }
        Ok(Self {
            values,
            h1_ok: false,
            h2_ok: false,
        })
    }

    pub fn from_fn(m: &ProductMeasureGrid, f: &dyn FieldFn) -> Result<Self> {
        Self::new(m, sample_fn(m, f))
    }

    /// `theta = 1`; trivially satisfies both integrability conditions.
    pub fn unit(m: &ProductMeasureGrid) -> Self {
        Self {
            values: vec![1.0; m.len()],
            h1_ok: true,
            h2_ok: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn h1_ok(&self) -> bool {
        self.h1_ok
    }

    pub fn h2_ok(&self) -> bool {
        self.h2_ok
    }

    pub fn mark_validated(&mut self, report: &WeightReport) {
        self.h1_ok = report.h1_ok;
        self.h2_ok = report.h2_ok;
    }

    pub fn lower_bound(&self) -> f64 {
        min_max(&self.values).0
    }
}

/// `d`-vector per `(node, sample)`, stored one component array per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() || components.iter().any(|c| c.len() != components[0].len()) {
            return Err(Error::Dimension(
                "vector field components differ in length".into(),
            ));
        }
        Ok(Self { components })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn len(&self) -> usize {
        self.components[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Euclidean length per `(node, sample)`.
    pub fn magnitude(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                self.components
                    .iter()
                    .map(|c| c[i] * c[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Grid minimum and maximum of the exponent.
pub fn ess_bounds(p: &ExponentField) -> (f64, f64) {
    (p.p_minus(), p.p_plus())
}

/// `q = p / (p - 1)` pointwise.
pub fn conjugate_exponent(p: &ExponentField) -> Result<ExponentField> {
    if !(p.p_minus() > 1.0) {
        return Err(Error::Domain(format!(
            "conjugate exponent needs p > 1, got p- = {}",
            p.p_minus()
        )));
    }
    let values: Vec<f64> = p.values().iter().map(|&v| v / (v - 1.0)).collect();
    let (p_minus, p_plus) = min_max(&values);
    Ok(ExponentField {
        values,
        p_minus,
        p_plus,
    })
}

/// Dual weight `theta^(1 - q)` with `q` the conjugate of `p`.
pub fn conjugate_weight(v: &WeightField, p: &ExponentField) -> Result<WeightField> {
    if v.values().len() != p.values().len() {
        return Err(Error::Dimension(
            "weight and exponent differ in length".into(),
        ));
    }
    let values = v
        .values()
        .iter()
        .zip(p.values())
        .map(|(&w, &pv)| {
            let q = pv / (pv - 1.0);
            w.powf(1.0 - q)
        })
        .collect();
    Ok(WeightField {
        values,
        h1_ok: v.h1_ok,
        h2_ok: v.h2_ok,
    })
}

/// Integrals behind the weight hypotheses: `int theta`,
/// `int theta^(-1/(p-1))` (local integrability conditions) and
/// `int theta^(-s)` (global integrability of the inverse weight).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct WeightReport {
    pub integral_weight: f64,
    pub integral_dual: f64,
    pub integral_neg_s: f64,
    pub h1_ok: bool,
    pub h2_ok: bool,
    /// One row per refinement level: `[int theta, int dual, int theta^-s]`.
    pub levels: Vec<[f64; 3]>,
}

fn weight_integrals(m: &ProductMeasureGrid, v: &[f64], p: &[f64], s: &[f64]) -> Result<[f64; 3]> {
    if v.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Domain("weight must be positive".into()));
    }
    let q = m.nodal();
    Ok([
        q.sum(|i| v[i]),
        q.sum(|i| v[i].powf(-1.0 / (p[i] - 1.0))),
        q.sum(|i| v[i].powf(-s[i])),
    ])
}

fn finite_flags(row: &[f64; 3]) -> (bool, bool) {
    let ok = |x: f64| x.is_finite() && x < f64::MAX / 2.0;
    (ok(row[0]) && ok(row[1]), ok(row[2]))
}

/// Grid-level check of the weight hypotheses: fails when any of the three
/// integrals is non-finite or overflows.
pub fn validate_weight(
    v: &WeightField,
    p: &ExponentField,
    s: &AuxExponentField,
    m: &ProductMeasureGrid,
) -> Result<WeightReport> {
    m.check_len("weight", v.values().len())?;
    m.check_len("exponent", p.values().len())?;
    m.check_len("auxiliary exponent", s.values().len())?;
    let row = weight_integrals(m, v.values(), p.values(), s.values())?;
    let (h1_ok, h2_ok) = finite_flags(&row);
    Ok(WeightReport {
        integral_weight: row[0],
        integral_dual: row[1],
        integral_neg_s: row[2],
        h1_ok,
        h2_ok,
        levels: vec![row],
    })
}

/// Refinement study of the weight hypotheses. The integrals are recomputed
/// at spacing `h`, `h/2` and `h/4`; an integral that is non-finite at any
/// level, or grows by more than [`DIVERGENCE_GROWTH`] on every refinement,
/// is declared divergent. Nodes where the weight vanishes count as
/// non-finite.
pub fn validate_weight_refined(
    v: &dyn FieldFn,
    p: &dyn FieldFn,
    s: &dyn FieldFn,
    m: &ProductMeasureGrid,
) -> Result<WeightReport> {
    let mut levels = Vec::with_capacity(3);
    let mut grid = m.clone();
    for level in 0..3 {
        if level > 0 {
            grid = grid.refined()?;
        }
        let vv = sample_fn(&grid, v);
        if let Some(w) = vv.iter().find(|w| **w < 0.0 || w.is_nan()) {
            return Err(Error::Domain(format!(
                "weight must be nonnegative, got {w}"
            )));
        }
        let pv = sample_fn(&grid, p);
        let sv = sample_fn(&grid, s);
        let q = grid.nodal();
        levels.push([
            q.sum(|i| vv[i]),
            q.sum(|i| vv[i].powf(-1.0 / (pv[i] - 1.0))),
            q.sum(|i| vv[i].powf(-sv[i])),
        ]);
    }
    let divergent = |k: usize| {
        let finite = levels
            .iter()
            .all(|row| row[k].is_finite() && row[k] < f64::MAX / 2.0);
        let growing = levels
            .windows(2)
            .all(|w| w[1][k] > (1.0 + DIVERGENCE_GROWTH) * w[0][k]);
        !finite || growing
    };
    let last = levels[levels.len() - 1];
    Ok(WeightReport {
        integral_weight: last[0],
        integral_dual: last[1],
        integral_neg_s: last[2],
        h1_ok: !divergent(0) && !divergent(1),
        h2_ok: !divergent(2),
        levels,
    })
}

/// Nodal gradient: central differences in the interior, four-point one-sided
/// differences at the boundary (three-point when an axis has only three
/// nodes). Exact on polynomials of degree two; samples are independent.
pub fn gradient(u: &StochasticField, m: &ProductMeasureGrid) -> Result<VectorField> {
    u.check_shape(m)?;
    nodal_gradient(u.values(), m)
}

pub(crate) fn nodal_gradient(values: &[f64], m: &ProductMeasureGrid) -> Result<VectorField> {
    m.check_len("field", values.len())?;
    let grid = &m.grid;
    let nn = grid.n_nodes();
    let mut components = Vec::with_capacity(grid.dim());
    for axis in 0..grid.dim() {
        let na = grid.n()[axis];
        let h = grid.h()[axis];
        let stride = if axis == 0 { 1 } else { grid.n()[0] };
        let mut out = vec![0.0; values.len()];
        for sample in 0..m.n_samples() {
            let base = sample * nn;
            for node in 0..nn {
                let idx = grid.index(node)[axis];
                let at = |k: isize| values[base + (node as isize + k * stride as isize) as usize];
                out[base + node] = if idx == 0 {
                    if na >= 4 {
                        (-11.0 * at(0) + 18.0 * at(1) - 9.0 * at(2) + 2.0 * at(3)) / (6.0 * h)
                    } else {
                        (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
                    }
                } else if idx == na - 1 {
                    if na >= 4 {
                        (11.0 * at(0) - 18.0 * at(-1) + 9.0 * at(-2) - 2.0 * at(-3)) / (6.0 * h)
                    } else {
                        (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
                    }
                } else {
                    (at(1) - at(-1)) / (2.0 * h)
                };
            }
        }
        components.push(out);
    }
    VectorField::new(components)
}
