//! Weighted modular, Luxemburg norm and Sobolev norms.
//!
//! The modular of `u` is `rho(u) = E int |u|^p theta dx` and the Luxemburg
//! norm is the smallest `lambda > 0` with `rho(u / lambda) <= 1`. Because
//! `p+ < inf` and `u != 0`, the map `lambda -> rho(u / lambda)` is
//! continuous and strictly decreasing, so the norm is the unique root of
//! `rho(u / lambda) = 1` and is found by bisection.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{nodal_gradient, ExponentField, StochasticField, WeightField};
use crate::measure_grid::{ProductMeasureGrid, Quadrature};

/// Default target for `|rho(u / lambda) - 1|`.
pub const LUXEMBURG_TOL: f64 = 1e-10;
/// Bisection also stops once the bracket is this narrow relative to lambda.
pub const BRACKET_REL_WIDTH: f64 = 1e-14;
/// Maximum doublings (or halvings) while searching for a bracket.
pub const MAX_BRACKET_STEPS: usize = 200;
const MAX_BISECTIONS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormResult {
    pub value: f64,
    /// `rho(u / value)`; 1 up to the tolerance for nonzero `u`.
    pub modular_at_unit: f64,
    pub iterations: usize,
    pub bracket: (f64, f64),
}

impl NormResult {
    fn zero() -> Self {
        Self {
            value: 0.0,
            modular_at_unit: 0.0,
            iterations: 0,
            bracket: (0.0, 0.0),
        }
    }
}

/// A quadrature-sampled integrand `|value|^exponent * weight`.
#[derive(Debug, Clone, Copy)]
pub struct ModularTerms<'a> {
    pub quad: Quadrature<'a>,
    pub values: &'a [f64],
    pub exponents: &'a [f64],
    /// `None` means the unit weight.
    pub weight: Option<&'a [f64]>,
}

impl<'a> ModularTerms<'a> {
    pub fn new(
        quad: Quadrature<'a>,
        values: &'a [f64],
        exponents: &'a [f64],
        weight: Option<&'a [f64]>,
    ) -> Result<Self> {
        let n = quad.len();
        if values.len() != n || exponents.len() != n || weight.is_some_and(|w| w.len() != n) {
            return Err(Error::Dimension(format!(
                "modular terms: expected {n} values, got {} values, {} exponents{}",
                values.len(),
                exponents.len(),
                weight
                    .map(|w| format!(", {} weights", w.len()))
                    .unwrap_or_default()
            )));
        }
        Ok(Self {
            quad,
            values,
            exponents,
            weight,
        })
    }

    /// `rho(u / lambda)`; may be `+inf` on overflow.
    pub fn modular_scaled(&self, lambda: f64) -> f64 {
        let inv = 1.0 / lambda;
        match self.weight {
            Some(w) => self
                .quad
                .sum(|i| (self.values[i].abs() * inv).powf(self.exponents[i]) * w[i]),
            None => self
                .quad
                .sum(|i| (self.values[i].abs() * inv).powf(self.exponents[i])),
        }
    }

    pub fn modular(&self) -> f64 {
        self.modular_scaled(1.0)
    }

    fn max_abs(&self) -> f64 {
        let np = self.quad.n_points();
        let mut m = 0.0f64;
        for (i, v) in self.values.iter().enumerate() {
            let live = self.quad.weights[i % np] != 0.0 && self.weight.is_none_or(|w| w[i] != 0.0);
            if live {
                m = m.max(v.abs());
            }
        }
        m
    }

    fn min_exponent(&self) -> f64 {
        self.exponents.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Luxemburg norm by bisection on `lambda -> rho(u / lambda)`.
    ///
    /// The field is first divided by its sup over the support of the
    /// measure (the norm is positively homogeneous), then a bracket is
    /// grown by doubling or halving from `max(1, rho)^(1/p-)`. Bisection runs
    /// in `log lambda` until `|rho - 1| <= tol` or the bracket is narrower
    /// than `BRACKET_REL_WIDTH * lambda`; a final log-linear interpolation
    /// inside the bracket is kept when it lands closer to 1.
    pub fn luxemburg(&self, tol: f64) -> Result<NormResult> {
        let scale = self.max_abs();
        if scale == 0.0 {
            return Ok(NormResult::zero());
        }
        if !scale.is_finite() {
            return Err(Error::NotInSpace(format!(
                "field value {scale} is not finite"
            )));
        }
        let f = |lambda: f64| self.modular_scaled(lambda * scale);
        let rho = f(1.0);
        if !rho.is_finite() {
            return Err(Error::NotInSpace(format!("modular is {rho}")));
        }
        if rho == 0.0 {
            return Err(Error::NotInSpace(
                "modular underflows to zero for a nonzero field".into(),
            ));
        }
        let p_minus = self.min_exponent();
        let lambda0 = rho.max(1.0).powf(1.0 / p_minus);
        let mut iterations = 0usize;

        let (mut lo, mut hi, mut f_lo, mut f_hi);
        let f0 = f(lambda0);
        iterations += 1;
        if f0 > 1.0 {
            lo = lambda0;
            f_lo = f0;
            hi = lambda0;
            f_hi = f0;
            let mut steps = 0;
            while f_hi > 1.0 {
                if steps == MAX_BRACKET_STEPS {
                    return Err(Error::NotInSpace(format!(
                        "no upper bracket after {MAX_BRACKET_STEPS} doublings"
                    )));
                }
                lo = hi;
                f_lo = f_hi;
                hi *= 2.0;
                f_hi = f(hi);
                iterations += 1;
                steps += 1;
            }
        } else {
            hi = lambda0;
            f_hi = f0;
            lo = lambda0;
            f_lo = f0;
            let mut steps = 0;
            while f_lo <= 1.0 {
                if f_lo == 1.0 {
                    return Ok(NormResult {
                        value: lo * scale,
                        modular_at_unit: 1.0,
                        iterations,
                        bracket: (lo * scale, lo * scale),
                    });
                }
                if steps == MAX_BRACKET_STEPS {
                    return Err(Error::NotInSpace(format!(
                        "no lower bracket after {MAX_BRACKET_STEPS} halvings"
                    )));
                }
                hi = lo;
                f_hi = f_lo;
                lo *= 0.5;
                f_lo = f(lo);
                iterations += 1;
                steps += 1;
            }
        }
        if !f_lo.is_finite() {
            // Overflow below the root: shrink the bracket from above.
            f_lo = f64::MAX;
        }

        // Invariant: f(lo) > 1 >= f(hi).
        let mut best = (hi, f_hi);
        for _ in 0..MAX_BISECTIONS {
            let mid = (lo * hi).sqrt();
            let fm = f(mid);
            iterations += 1;
            if (fm - 1.0).abs() < (best.1 - 1.0).abs() {
                best = (mid, fm);
            }
            if fm > 1.0 {
                lo = mid;
                f_lo = fm;
            } else {
                hi = mid;
                f_hi = fm;
            }
            if (fm - 1.0).abs() <= tol || hi - lo <= BRACKET_REL_WIDTH * mid {
                break;
            }
        }
        if f_lo.is_finite() && f_lo > 1.0 && f_hi > 0.0 && f_hi <= 1.0 && hi > lo {
            let (ll, lh) = (lo.ln(), hi.ln());
            let (gl, gh) = (f_lo.ln(), f_hi.ln());
            if gl != gh {
                let cand = (ll + (0.0 - gl) * (lh - ll) / (gh - gl)).exp();
                if cand > lo && cand < hi {
                    let fc = f(cand);
                    iterations += 1;
                    if (fc - 1.0).abs() < (best.1 - 1.0).abs() {
                        best = (cand, fc);
                    }
                }
            }
        }
        Ok(NormResult {
            value: best.0 * scale,
            modular_at_unit: best.1,
            iterations,
            bracket: (lo * scale, hi * scale),
        })
    }
}

fn check_inputs(
    u: &[f64],
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<()> {
    m.check_len("field", u.len())?;
    m.check_len("exponent", p.values().len())?;
    m.check_len("weight", v.values().len())
}

/// Weighted modular of a dense node x sample array.
pub fn modular_values(
    u: &[f64],
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<f64> {
    check_inputs(u, p, v, m)?;
    Ok(ModularTerms::new(m.nodal(), u, p.values(), Some(v.values()))?.modular())
}

/// Luxemburg norm of a dense node x sample array.
pub fn luxemburg_values(
    u: &[f64],
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    tol: f64,
) -> Result<NormResult> {
    check_inputs(u, p, v, m)?;
    ModularTerms::new(m.nodal(), u, p.values(), Some(v.values()))?.luxemburg(tol)
}

/// `rho_{p,theta}(u)`. An overflowing integrand yields `+inf`.
pub fn modular(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<f64> {
    modular_values(u.values(), p, v, m)
}

pub fn luxemburg_norm(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    tol: f64,
) -> Result<NormResult> {
    luxemburg_values(u.values(), p, v, m, tol)
}

/// `|| |grad u| ||_{p,theta}` with the nodal gradient.
pub fn gradient_norm(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<NormResult> {
    u.check_shape(m)?;
    let g = nodal_gradient(u.values(), m)?.magnitude();
    luxemburg_values(&g, p, v, m, LUXEMBURG_TOL)
}

/// `||u||_{p,theta} + ||grad u||_{p,theta}`.
pub fn sobolev_norm(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<f64> {
    let lu = luxemburg_norm(u, p, v, m, LUXEMBURG_TOL)?;
    let lg = gradient_norm(u, p, v, m)?;
    Ok(lu.value + lg.value)
}

/// Norm of the zero-trace space: `||grad u||_{p,theta}` alone.
pub fn sobolev_seminorm(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<f64> {
    Ok(gradient_norm(u, p, v, m)?.value)
}

/// Slack allowed in the norm-modular chains, relative to `max(1, |rhs|)`.
pub const PROP2_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Report {
    pub norm: f64,
    pub modular: f64,
    pub p_minus: f64,
    pub p_plus: f64,
    /// `norm^p- <= rho <= norm^p+`, evaluated when `norm >= 1`.
    pub large_chain: Option<ChainCheck>,
    /// `norm^p+ <= rho <= norm^p-`, evaluated when `norm <= 1`.
    pub small_chain: Option<ChainCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainCheck {
    pub lower: f64,
    pub upper: f64,
    /// Worst relative slack of the two inequalities; negative = violated.
    pub slack: f64,
    pub pass: bool,
}

fn chain(lower: f64, mid: f64, upper: f64) -> ChainCheck {
    let s1 = (mid - lower) / mid.abs().max(1.0);
    let s2 = (upper - mid) / upper.abs().max(1.0);
    let slack = s1.min(s2);
    ChainCheck {
        lower,
        upper,
        slack,
        pass: slack >= -PROP2_SLACK,
    }
}

/// Norm-modular inequalities: both chains are evaluated when the norm is
/// exactly 1, where they collapse to equalities.
pub fn check_prop2(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<Prop2Report> {
    let rho = modular(u, p, v, m)?;
    let norm = luxemburg_norm(u, p, v, m, LUXEMBURG_TOL)?.value;
    Ok(prop2_from(norm, rho, p.p_minus(), p.p_plus()))
}

pub(crate) fn prop2_from(norm: f64, rho: f64, p_minus: f64, p_plus: f64) -> Prop2Report {
    let large_chain = (norm >= 1.0).then(|| chain(norm.powf(p_minus), rho, norm.powf(p_plus)));
    let small_chain = (norm <= 1.0).then(|| chain(norm.powf(p_plus), rho, norm.powf(p_minus)));
    let pass = large_chain.is_none_or(|c| c.pass) && small_chain.is_none_or(|c| c.pass);
    Prop2Report {
        norm,
        modular: rho,
        p_minus,
        p_plus,
        large_chain,
        small_chain,
        pass,
    }
}
