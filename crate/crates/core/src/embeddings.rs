//! Critical exponents and the inequality suite of the weighted spaces:
//! Holder, Poincare, the local `L^1` bound, the `W^{1,p}_theta -> W^{1,p_s}`
//! chain, the weighted compact-embedding bound and the weak-convergence
//! panel.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{
    conjugate_exponent, conjugate_weight, nodal_gradient, AuxExponentField, ExponentField,
    StochasticField, WeightField,
};
use crate::measure_grid::{ProductMeasureGrid, Quadrature};
use crate::modular_norm::{gradient_norm, luxemburg_norm, ModularTerms, LUXEMBURG_TOL};

/// Absolute slack of the Holder check.
pub const HOLDER_TOL: f64 = 1e-9;
/// Relative slack when comparing a chain ratio with its constant.
pub const CHAIN_REL_TOL: f64 = 1e-9;
/// Pointwise convergence threshold of the weak-convergence panel.
pub const POINTWISE_TOL: f64 = 1e-8;
/// Final pairing gap accepted by the weak-convergence panel.
pub const PAIRING_TOL: f64 = 1e-3;

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Holder constant `1 + 1/r- - 1/r+` of an exponent with bounds `(lo, hi)`.
pub fn holder_constant(lo: f64, hi: f64) -> f64 {
    1.0 + 1.0 / lo - 1.0 / hi
}

fn lux(
    quad: Quadrature<'_>,
    values: &[f64],
    exponents: &[f64],
    weight: Option<&[f64]>,
) -> Result<f64> {
    Ok(ModularTerms::new(quad, values, exponents, weight)?
        .luxemburg(LUXEMBURG_TOL)?
        .value)
}

fn modular_raw(quad: Quadrature<'_>, values: &[f64], exponents: &[f64]) -> Result<f64> {
    Ok(ModularTerms::new(quad, values, exponents, None)?.modular())
}

// ---------------------------------------------------------------------------
// exponents

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingExponents {
    pub dim: usize,
    /// `dp/(d-p)` where `p < d`, `+inf` elsewhere.
    pub p_star: Vec<f64>,
    /// `ps/(s+1)`.
    pub p_s: Vec<f64>,
    /// `d p_s / (d(s+1) - ps)` where `p_s < d`; `+inf` stands for the
    /// unrestricted case.
    pub p_s_star: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    /// `alpha / (alpha - 1)`.
    pub alpha0: Option<Vec<f64>>,
    /// `alpha0 * q`.
    pub r: Option<Vec<f64>>,
}

pub fn critical_exponents(
    p: &ExponentField,
    s: &AuxExponentField,
    d: usize,
) -> Result<EmbeddingExponents> {
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if p.values().len() != s.values().len() {
        return Err(Error::Dimension(format!(
            "exponent has {} values, auxiliary exponent {}",
            p.values().len(),
            s.values().len()
        )));
    }
    let df = d as f64;
    let mut p_star = Vec::with_capacity(p.values().len());
    let mut p_s = Vec::with_capacity(p.values().len());
    let mut p_s_star = Vec::with_capacity(p.values().len());
    for (&pv, &sv) in p.values().iter().zip(s.values()) {
        p_star.push(if pv < df {
            df * pv / (df - pv)
        } else {
            f64::INFINITY
        });
        let ps = pv * sv / (sv + 1.0);
        p_s.push(ps);
        p_s_star.push(if ps < df {
            df * ps / (df * (sv + 1.0) - pv * sv)
        } else {
            f64::INFINITY
        });
    }
    Ok(EmbeddingExponents {
        dim: d,
        p_star,
        p_s,
        p_s_star,
        alpha: None,
        alpha0: None,
        r: None,
    })
}

impl EmbeddingExponents {
    /// Attach the weight-integrability exponent `alpha` and the target
    /// exponent `q` of the weighted embedding.
    pub fn with_weight_exponent(mut self, alpha: &[f64], q: &[f64]) -> Result<Self> {
        let n = self.p_s.len();
        if alpha.len() != n || q.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} values, got alpha {} and q {}",
                alpha.len(),
                q.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 1.0)) {
            return Err(Error::Domain(format!("alpha must exceed 1, got {a}")));
        }
        let alpha0: Vec<f64> = alpha.iter().map(|a| a / (a - 1.0)).collect();
        let r = alpha0.iter().zip(q).map(|(a0, q)| a0 * q).collect();
        self.alpha = Some(alpha.to_vec());
        self.alpha0 = Some(alpha0);
        self.r = Some(r);
        Ok(self)
    }

    /// Whether `1 < q < (alpha-1)/alpha * p*` at every point, i.e.
    /// `alpha0 q < p*`.
    pub fn admissible(&self, q: &[f64]) -> bool {
        match &self.alpha0 {
            Some(a0) => a0
                .iter()
                .zip(&self.p_star)
                .zip(q)
                .all(|((a0, ps), q)| *q > 1.0 && a0 * q < *ps),
            None => false,
        }
    }
}

// ---------------------------------------------------------------------------
// Holder

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolderReport {
    pub lhs: f64,
    pub rhs: f64,
    pub constant: f64,
    pub norm_f: f64,
    pub norm_g: f64,
    pub pass: bool,
}

/// `int |fg| <= C ||f||_{p,theta} ||g||_{q,theta*}` with
/// `C = 1 + 1/p- - 1/p+`.
pub fn check_holder(
    f: &StochasticField,
    g: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<HolderReport> {
    f.check_shape(m)?;
    g.check_shape(m)?;
    let q = conjugate_exponent(p)?;
    let v_star = conjugate_weight(v, p)?;
    let norm_f = luxemburg_norm(f, p, v, m, LUXEMBURG_TOL)?.value;
    let norm_g = luxemburg_norm(g, &q, &v_star, m, LUXEMBURG_TOL)?.value;
    let (fv, gv) = (f.values(), g.values());
    let lhs = m.nodal().sum(|i| (fv[i] * gv[i]).abs());
    let constant = holder_constant(p.p_minus(), p.p_plus());
    let rhs = constant * norm_f * norm_g;
    if !lhs.is_finite() || !rhs.is_finite() {
        return Err(Error::NotInSpace(format!(
            "Holder sides are not finite (lhs {lhs}, rhs {rhs})"
        )));
    }
    Ok(HolderReport {
        lhs,
        rhs,
        constant,
        norm_f,
        norm_g,
        pass: lhs <= rhs + HOLDER_TOL,
    })
}

// ---------------------------------------------------------------------------
// Poincare

/// `||u||_{p,theta} / ||grad u||_{p,theta}` for a zero-boundary field.
pub fn poincare_ratio(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<f64> {
    u.check_shape(m)?;
    if !u.zero_boundary() {
        return Err(Error::Domain(
            "Poincare ratio needs a field with zero boundary values".into(),
        ));
    }
    let grad = gradient_norm(u, p, v, m)?.value;
    if grad == 0.0 {
        return Err(Error::UndefinedRatio(
            "gradient vanishes identically".into(),
        ));
    }
    Ok(luxemburg_norm(u, p, v, m, LUXEMBURG_TOL)?.value / grad)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareEstimate {
    pub ratios: Vec<f64>,
    /// Empirical Poincare constant: the largest ratio in the family.
    pub sup: f64,
    pub argmax: usize,
}

pub fn poincare_constant(
    family: &[StochasticField],
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<PoincareEstimate> {
    if family.is_empty() {
        return Err(Error::Insufficient("empty Poincare family".into()));
    }
    let ratios = family
        .iter()
        .map(|u| poincare_ratio(u, p, v, m))
        .collect::<Result<Vec<_>>>()?;
    let (argmax, sup) =
        ratios
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, r)| {
                if r > best.1 {
                    (i, r)
                } else {
                    best
                }
            });
    Ok(PoincareEstimate {
        ratios,
        sup,
        argmax,
    })
}

// ---------------------------------------------------------------------------
// local L^1 bound

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalL1Report {
    /// `int_K |u|`.
    pub lhs: f64,
    /// `A_K ||u theta^(1/p)||_{p,K} ||theta^(-1/p)||_{q,K}`.
    pub rhs: f64,
    /// Holder constant of `p` restricted to `K`.
    pub a_k: f64,
    /// `int_K theta^(-1/(p-1))`.
    pub b_k: f64,
    pub norm_weighted: f64,
    pub norm_inverse_weight: f64,
    /// `lhs / (norm_weighted * norm_inverse_weight)`.
    pub empirical_constant: f64,
    pub pass: bool,
}

/// Local integrability bound on the sub-box `K`.
pub fn check_local_l1(
    u: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    sub_box: &[(f64, f64)],
) -> Result<LocalL1Report> {
    u.check_shape(m)?;
    m.check_len("exponent", p.values().len())?;
    m.check_len("weight", v.values().len())?;
    let mask = m.grid.sub_box_mask(sub_box)?;
    let masked = m.grid.sub_box_weights(sub_box)?;
    let quad = Quadrature {
        weights: &masked,
        probs: m.omega.probs(),
    };
    let n = m.n_nodes();
    let inside: Vec<f64> = p
        .values()
        .iter()
        .enumerate()
        .filter(|(i, _)| mask[i % n])
        .map(|(_, p)| *p)
        .collect();
    let (p_lo, p_hi) = min_max(&inside);
    let a_k = holder_constant(p_lo, p_hi);

    let uv = u.values();
    let (pv, wv) = (p.values(), v.values());
    let lhs = quad.sum(|i| uv[i].abs());
    let q: Vec<f64> = pv.iter().map(|p| p / (p - 1.0)).collect();
    let inv: Vec<f64> = wv.iter().zip(pv).map(|(w, p)| w.powf(-1.0 / p)).collect();
    let norm_weighted = lux(quad, uv, pv, Some(wv))?;
    let norm_inverse_weight = lux(quad, &inv, &q, None)?;
    let b_k = quad.sum(|i| wv[i].powf(-1.0 / (pv[i] - 1.0)));
    let denom = norm_weighted * norm_inverse_weight;
    let rhs = a_k * denom;
    Ok(LocalL1Report {
        lhs,
        rhs,
        a_k,
        b_k,
        norm_weighted,
        norm_inverse_weight,
        empirical_constant: if denom > 0.0 { lhs / denom } else { 0.0 },
        pass: lhs <= rhs * (1.0 + CHAIN_REL_TOL) + HOLDER_TOL,
    })
}

// ---------------------------------------------------------------------------
// weighted embedding bound

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedEmbeddingReport {
    /// `int theta |u|^q`.
    pub lhs: f64,
    /// `C ||theta||_alpha || |u|^q ||_{alpha0}`.
    pub rhs: f64,
    pub constant: f64,
    pub norm_weight: f64,
    pub norm_power: f64,
    /// `||u||_{q,theta}`.
    pub norm_q_weighted: f64,
    /// `||u||_r` with `r = alpha0 q`.
    pub norm_r: f64,
    pub pass: bool,
}

/// `int theta |u|^q <= C ||theta||_alpha || |u|^q ||_{alpha0}` with the
/// Holder constant of `alpha`.
pub fn check_weighted_embedding(
    u: &StochasticField,
    q: &ExponentField,
    alpha: &[f64],
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<WeightedEmbeddingReport> {
    u.check_shape(m)?;
    m.check_len("alpha", alpha.len())?;
    if let Some(a) = alpha.iter().find(|a| !(**a > 1.0)) {
        return Err(Error::Domain(format!("alpha must exceed 1, got {a}")));
    }
    let quad = m.nodal();
    let (uv, qv, wv) = (u.values(), q.values(), v.values());
    let alpha0: Vec<f64> = alpha.iter().map(|a| a / (a - 1.0)).collect();
    let r: Vec<f64> = alpha0.iter().zip(qv).map(|(a, q)| a * q).collect();
    let power: Vec<f64> = uv.iter().zip(qv).map(|(u, q)| u.abs().powf(*q)).collect();
    let lhs = quad.sum(|i| wv[i] * power[i]);
    let (a_lo, a_hi) = min_max(alpha);
    let constant = holder_constant(a_lo, a_hi);
    let norm_weight = lux(quad, wv, alpha, None)?;
    let norm_power = lux(quad, &power, &alpha0, None)?;
    let rhs = constant * norm_weight * norm_power;
    Ok(WeightedEmbeddingReport {
        lhs,
        rhs,
        constant,
        norm_weight,
        norm_power,
        norm_q_weighted: lux(quad, uv, qv, Some(wv))?,
        norm_r: lux(quad, uv, &r, None)?,
        pass: lhs <= rhs * (1.0 + CHAIN_REL_TOL) + HOLDER_TOL,
    })
}

// ---------------------------------------------------------------------------
// embedding chain

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaSelection {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    /// `|| |grad u|^{p_s} theta^{p_s/p} ||_{p/p_s}`, governs `gamma1`.
    pub norm1: f64,
    /// `|| theta^{-s/(s+1)} ||_{s+1}`, governs `gamma2`.
    pub norm2: f64,
    /// `||grad u||_{p_s}`, governs `gamma3`.
    pub norm3: f64,
    /// `||grad u||_{p,theta}`, governs `gamma4`.
    pub norm4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainSide {
    pub lhs: f64,
    /// Right side without its constant.
    pub rhs: f64,
}

impl ChainSide {
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// One constant per inequality of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainConstants {
    pub gradient_modular: f64,
    pub gradient_power: f64,
    pub gradient_norm: f64,
    pub field_norm: f64,
}

impl ChainConstants {
    fn as_array(&self) -> [f64; 4] {
        [
            self.gradient_modular,
            self.gradient_power,
            self.gradient_norm,
            self.field_norm,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainReport {
    pub gammas: GammaSelection,
    /// `rho_{p,theta}(|grad u|)`.
    pub modular_gradient: f64,
    /// `int theta^{-s}`.
    pub integral_neg_s: f64,
    /// `int |grad u|^{p_s} <= C rho(|grad u|)^{1/g1} (int theta^-s)^{1/g2}`.
    pub gradient_modular_side: ChainSide,
    /// `||grad u||_{p_s}^{g3} <= C C1 ||grad u||_{p,theta}^{g4/g1}`.
    pub gradient_power_side: ChainSide,
    /// `||grad u||_{p_s} <= C* ||grad u||_{p,theta}^{g4/(g1 g3)}`.
    pub gradient_norm_side: ChainSide,
    /// `||u||_{p_s} <= C** ||u||_{p,theta}`.
    pub field_norm_side: ChainSide,
    /// Constants for which the chain holds for every field on this grid.
    pub theory: ChainConstants,
    pub weight_lower_bound: f64,
}

impl ChainReport {
    pub fn sides(&self) -> [ChainSide; 4] {
        [
            self.gradient_modular_side,
            self.gradient_power_side,
            self.gradient_norm_side,
            self.field_norm_side,
        ]
    }

    pub fn ratios(&self) -> [f64; 4] {
        self.sides().map(|s| s.ratio())
    }

    /// Per inequality: `lhs <= C rhs` up to [`CHAIN_REL_TOL`].
    pub fn holds(&self, c: &ChainConstants) -> [bool; 4] {
        let cs = c.as_array();
        let sides = self.sides();
        std::array::from_fn(|k| sides[k].lhs <= cs[k] * sides[k].rhs * (1.0 + CHAIN_REL_TOL))
    }
}

/// Evaluates both sides of the `W^{1,p}_theta -> W^{1,p_s}` chain, picking
/// each `gamma` by whether its governing norm is at least 1. Requires the
/// weight to have passed the `theta^{-s} in L^1` validation.
pub fn check_embedding_chain(
    u: &StochasticField,
    p: &ExponentField,
    s: &AuxExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<ChainReport> {
    if !v.h2_ok() {
        return Err(Error::Hypothesis(
            "weight has not passed the theta^-s integrability check".into(),
        ));
    }
    u.check_shape(m)?;
    m.check_len("exponent", p.values().len())?;
    m.check_len("auxiliary exponent", s.values().len())?;
    m.check_len("weight", v.values().len())?;
    let quad = m.nodal();
    let (pv, sv, wv) = (p.values(), s.values(), v.values());
    let ex = critical_exponents(p, s, m.dim())?;
    let ps = &ex.p_s;
    let grad = nodal_gradient(u.values(), m)?.magnitude();

    let ratio: Vec<f64> = pv.iter().zip(ps).map(|(p, ps)| p / ps).collect();
    let sp1: Vec<f64> = sv.iter().map(|s| s + 1.0).collect();
    let f1: Vec<f64> = grad
        .iter()
        .zip(ps)
        .zip(wv.iter().zip(pv))
        .map(|((g, ps), (w, p))| g.powf(*ps) * w.powf(ps / p))
        .collect();
    let f2: Vec<f64> = wv
        .iter()
        .zip(sv)
        .map(|(w, s)| w.powf(-s / (s + 1.0)))
        .collect();

    let norm1 = lux(quad, &f1, &ratio, None)?;
    let norm2 = lux(quad, &f2, &sp1, None)?;
    let norm3 = lux(quad, &grad, ps, None)?;
    let norm4 = lux(quad, &grad, pv, Some(wv))?;
    let (r_lo, r_hi) = min_max(&ratio);
    let (s_lo, s_hi) = min_max(sv);
    let (ps_lo, ps_hi) = min_max(ps);
    let gammas = GammaSelection {
        gamma1: if norm1 >= 1.0 { r_lo } else { r_hi },
        gamma2: if norm2 >= 1.0 { s_lo + 1.0 } else { s_hi + 1.0 },
        gamma3: if norm3 >= 1.0 { ps_lo } else { ps_hi },
        gamma4: if norm4 >= 1.0 {
            p.p_plus()
        } else {
            p.p_minus()
        },
        norm1,
        norm2,
        norm3,
        norm4,
    };
    let GammaSelection {
        gamma1: g1,
        gamma2: g2,
        gamma3: g3,
        gamma4: g4,
        ..
    } = gammas;

    let modular_gradient = ModularTerms::new(quad, &grad, pv, Some(wv))?.modular();
    let integral_neg_s = quad.sum(|i| wv[i].powf(-sv[i]));
    let integral_grad_ps = modular_raw(quad, &grad, ps)?;
    let c1 = integral_neg_s.powf(1.0 / g2);
    let gradient_modular_side = ChainSide {
        lhs: integral_grad_ps,
        rhs: modular_gradient.powf(1.0 / g1) * c1,
    };
    let gradient_power_side = ChainSide {
        lhs: norm3.powf(g3),
        rhs: norm4.powf(g4 / g1),
    };
    let gradient_norm_side = ChainSide {
        lhs: norm3,
        rhs: norm4.powf(g4 / (g1 * g3)),
    };
    let field_norm_side = ChainSide {
        lhs: lux(quad, u.values(), ps, None)?,
        rhs: luxemburg_norm(u, p, v, m, LUXEMBURG_TOL)?.value,
    };

    let c_h = holder_constant(r_lo, r_hi);
    let c0 = v.lower_bound();
    let embed = if c0 < 1.0 {
        c0.powf(-1.0 / p.p_minus())
    } else {
        c0.powf(-1.0 / p.p_plus())
    };
    let volume = m.grid.volume();
    let theory = ChainConstants {
        gradient_modular: c_h,
        gradient_power: c_h * c1,
        gradient_norm: (c_h * c1).powf(1.0 / g3),
        field_norm: (1.0 + volume).powf(1.0 / ps_lo) * embed,
    };
    Ok(ChainReport {
        gammas,
        modular_gradient,
        integral_neg_s,
        gradient_modular_side,
        gradient_power_side,
        gradient_norm_side,
        field_norm_side,
        theory,
        weight_lower_bound: c0,
    })
}

/// Largest observed ratio per inequality over a calibration family.
pub fn calibrate_chain(reports: &[ChainReport]) -> Result<ChainConstants> {
    if reports.is_empty() {
        return Err(Error::Insufficient("empty calibration family".into()));
    }
    let mut c = [0.0f64; 4];
    for r in reports {
        for (ck, rk) in c.iter_mut().zip(r.ratios()) {
            *ck = ck.max(rk);
        }
    }
    Ok(ChainConstants {
        gradient_modular: c[0],
        gradient_power: c[1],
        gradient_norm: c[2],
        field_norm: c[3],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainValidation {
    pub constants: ChainConstants,
    pub n_fields: usize,
    /// Violations per inequality.
    pub violations: [usize; 4],
    /// Largest `ratio / C` per inequality.
    pub worst: [f64; 4],
    /// Fields violating the grid-level constants (expected empty).
    pub theory_violations: usize,
    pub pass: bool,
}

pub fn validate_chain(reports: &[ChainReport], constants: &ChainConstants) -> ChainValidation {
    let cs = constants.as_array();
    let mut violations = [0usize; 4];
    let mut worst = [0.0f64; 4];
    let mut theory_violations = 0;
    for r in reports {
        for (k, ok) in r.holds(constants).iter().enumerate() {
            if !ok {
                violations[k] += 1;
            }
        }
        for (k, ratio) in r.ratios().iter().enumerate() {
            if cs[k] > 0.0 {
                worst[k] = worst[k].max(ratio / cs[k]);
            }
        }
        if r.holds(&r.theory).iter().any(|ok| !ok) {
            theory_violations += 1;
        }
    }
    ChainValidation {
        constants: *constants,
        n_fields: reports.len(),
        violations,
        worst,
        theory_violations,
        pass: violations.iter().all(|v| *v == 0),
    }
}

// ---------------------------------------------------------------------------
// weak convergence

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPanel {
    /// `||g||_{q,theta*}`.
    pub dual_norm: f64,
    /// `int u_n g` per sequence index.
    pub pairings: Vec<f64>,
    /// `int u g`.
    pub limit: f64,
    pub final_gap: f64,
    /// Gaps non-increasing over the last half of the sequence.
    pub decreasing: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakConvergenceReport {
    /// `||u_n||_{p,theta}`.
    pub norms: Vec<f64>,
    pub norm_bound: f64,
    /// Largest `|u_n - u|` at the last index over interior nodes.
    pub final_pointwise_gap: f64,
    pub duals: Vec<DualPanel>,
    pub pass: bool,
}

fn tail_decreasing(gaps: &[f64]) -> bool {
    let start = gaps.len() / 2;
    let tail = &gaps[start..];
    tail.windows(2).all(|w| w[1] <= w[0] + 1e-15)
}

/// Weak convergence of a bounded, pointwise convergent sequence: the
/// pairings `int u_n g` against each dual field must approach `int u g`.
///
/// The hypotheses are checked first. Norms above `norm_bound` are refused,
/// and so is any interior node where `|u_n - u|` neither ends below
/// [`POINTWISE_TOL`] nor decreases monotonically over the second half of
/// the sequence.
pub fn weak_convergence_panel(
    seq: &[StochasticField],
    u: &StochasticField,
    duals: &[StochasticField],
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    norm_bound: f64,
) -> Result<WeakConvergenceReport> {
    if seq.len() < 2 {
        return Err(Error::Insufficient(
            "weak-convergence panel needs at least two sequence terms".into(),
        ));
    }
    u.check_shape(m)?;
    for g in seq.iter().chain(duals) {
        g.check_shape(m)?;
    }
    let mut norms = Vec::with_capacity(seq.len());
    for (n, un) in seq.iter().enumerate() {
        let norm = luxemburg_norm(un, p, v, m, LUXEMBURG_TOL)?.value;
        if !(norm <= norm_bound) {
            return Err(Error::Hypothesis(format!(
                "sequence is not bounded: ||u_{n}|| = {norm} exceeds {norm_bound}"
            )));
        }
        norms.push(norm);
    }

    let boundary = m.grid.boundary_mask();
    let n_nodes = m.n_nodes();
    let uv = u.values();
    let mut final_pointwise_gap = 0.0f64;
    let mut gaps = vec![0.0; seq.len()];
    for flat in 0..m.len() {
        if boundary[flat % n_nodes] {
            continue;
        }
        for (k, un) in seq.iter().enumerate() {
            gaps[k] = (un.values()[flat] - uv[flat]).abs();
        }
        let last = gaps[gaps.len() - 1];
        final_pointwise_gap = final_pointwise_gap.max(last);
        let settled = last <= POINTWISE_TOL;
        let start = gaps.len() / 2;
        let shrinking = tail_decreasing(&gaps) && last < gaps[start];
        if !(settled || shrinking) {
            let (node, sample) = m.split(flat);
            return Err(Error::Hypothesis(format!(
                "sequence does not converge pointwise: |u_n - u| at node {node} (sample {sample}) ends at {last:e} without decreasing"
            )));
        }
    }

    let q = conjugate_exponent(p)?;
    let v_star = conjugate_weight(v, p)?;
    let quad = m.nodal();
    let mut panels = Vec::with_capacity(duals.len());
    for g in duals {
        let dual_norm = luxemburg_norm(g, &q, &v_star, m, LUXEMBURG_TOL)?.value;
        let gv = g.values();
        let pairings: Vec<f64> = seq
            .iter()
            .map(|un| {
                let w = un.values();
                quad.sum(|i| w[i] * gv[i])
            })
            .collect();
        let limit = quad.sum(|i| uv[i] * gv[i]);
        let gaps: Vec<f64> = pairings.iter().map(|x| (x - limit).abs()).collect();
        let final_gap = gaps[gaps.len() - 1];
        let decreasing = tail_decreasing(&gaps);
        panels.push(DualPanel {
            dual_norm,
            pairings,
            limit,
            final_gap,
            decreasing,
            pass: final_gap <= PAIRING_TOL && decreasing,
        });
    }
    let pass = panels.iter().all(|d| d.pass);
    Ok(WeakConvergenceReport {
        norms,
        norm_bound,
        final_pointwise_gap,
        duals: panels,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::validate_weight;
    use crate::measure_grid::unit_interval;
    use std::f64::consts::PI;

    #[test]
    fn critical_exponent_examples() {
        let m = unit_interval(5).unwrap();
        let s1 = AuxExponentField::constant(&m, 1.0).unwrap();
        let p2 = ExponentField::constant(&m, 2.0).unwrap();
        let p3 = ExponentField::constant(&m, 3.0).unwrap();
        assert!(critical_exponents(&p2, &s1, 3)
            .unwrap()
            .p_star
            .iter()
            .all(|x| *x == 6.0));
        assert!(critical_exponents(&p3, &s1, 2)
            .unwrap()
            .p_star
            .iter()
            .all(|x| x.is_infinite()));
        let e = critical_exponents(&p2, &s1, 2).unwrap();
        assert!(e.p_s.iter().all(|x| *x == 1.0));
        assert!(e.p_s_star.iter().all(|x| *x == 1.0));
        assert!(critical_exponents(&p2, &s1, 0).is_err());
    }

    #[test]
    fn weight_exponent_gives_r() {
        let m = unit_interval(5).unwrap();
        let p = ExponentField::constant(&m, 1.5).unwrap();
        let s = AuxExponentField::constant(&m, 1.0).unwrap();
        let e = critical_exponents(&p, &s, 2)
            .unwrap()
            .with_weight_exponent(&[3.0; 5], &[1.5; 5])
            .unwrap();
        // alpha0 = 3/2, r = 9/4 < p* = 6
        assert!(e
            .r
            .as_ref()
            .unwrap()
            .iter()
            .all(|r| (r - 2.25).abs() < 1e-15));
        assert!(e.admissible(&[1.5; 5]));
        assert!(!e.admissible(&[4.5; 5]));
    }

    #[test]
    fn holder_examples() {
        let m = unit_interval(2001).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let one = StochasticField::constant(&m, 1.0);
        let r = check_holder(&one, &one, &p, &v, &m).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12 && r.pass && r.constant >= 1.0);
        let x = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| x[0]);
        let r = check_holder(&x, &one, &p, &v, &m).unwrap();
        assert!((r.lhs - 0.5).abs() < 1e-12);
        assert!((r.rhs - 1.0 / 3f64.sqrt()).abs() < 1e-6);
        assert!(r.pass);
    }

    #[test]
    fn poincare_examples() {
        let m = unit_interval(401).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let sine = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| (PI * x[0]).sin())
            .clamp_boundary(&m);
        assert!((poincare_ratio(&sine, &p, &v, &m).unwrap() - 1.0 / PI).abs() < 1e-4);
        let bump = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| x[0] * (1.0 - x[0]))
            .clamp_boundary(&m);
        let r = poincare_ratio(&bump, &p, &v, &m).unwrap();
        assert!((r - 1.0 / 10f64.sqrt()).abs() < 1e-4);
        let r3 = poincare_ratio(&bump.scaled(3.0), &p, &v, &m).unwrap();
        assert!((r - r3).abs() < 1e-12);
        let zero = StochasticField::zeros(&m);
        assert!(matches!(
            poincare_ratio(&zero, &p, &v, &m),
            Err(Error::UndefinedRatio(_))
        ));
    }

    #[test]
    fn chain_refuses_unvalidated_weight() {
        let m = unit_interval(11).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let s = AuxExponentField::constant(&m, 1.0).unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
        let u = StochasticField::constant(&m, 1.0);
        assert!(matches!(
            check_embedding_chain(&u, &p, &s, &v, &m),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn chain_on_sine_holds_with_theory_constants() {
        let m = unit_interval(401).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let s = AuxExponentField::constant(&m, 1.0).unwrap();
        let mut v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
        let rep = validate_weight(&v, &p, &s, &m).unwrap();
        v.mark_validated(&rep);
        let u = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| (PI * x[0]).sin());
        let r = check_embedding_chain(&u, &p, &s, &v, &m).unwrap();
        assert!(r.holds(&r.theory).iter().all(|ok| *ok));
        // constant exponents: gamma1 = p/p_s = 2, gamma3 = p_s = 1
        assert_eq!(r.gammas.gamma1, 2.0);
        assert_eq!(r.gammas.gamma3, 1.0);
    }

    #[test]
    fn local_l1_examples() {
        let m = unit_interval(201).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
        let u = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| (3.0 * x[0]).cos());
        let r = check_local_l1(&u, &p, &v, &m, &[(0.25, 0.75)]).unwrap();
        assert!(r.pass);
        // B_K = int_{1/4}^{3/4} (1 + x)^-1 = ln(7/5)
        assert!((r.b_k - (1.4f64).ln()).abs() < 1e-5);
        // rho_q(theta^{-1/p}) = B_K, so the norm for q = 2 is sqrt(B_K)
        assert!((r.norm_inverse_weight - r.b_k.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn weighted_embedding_bound_holds() {
        let m = unit_interval(201).unwrap();
        let q = ExponentField::constant(&m, 1.5).unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0] * x[0]).unwrap();
        let alpha = vec![3.0; m.len()];
        let u = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| 2.0 - x[0]);
        let r = check_weighted_embedding(&u, &q, &alpha, &v, &m).unwrap();
        assert!(r.pass && r.lhs > 0.0);
    }

    #[test]
    fn stationary_sequence_passes() {
        let m = unit_interval(101).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let u = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| x[0]);
        let seq = vec![u.clone(); 6];
        let g = StochasticField::constant(&m, 1.0);
        let r = weak_convergence_panel(&seq, &u, &[g], &p, &v, &m, 1.0).unwrap();
        assert!(r.pass);
        assert!(r.duals[0].pairings.iter().all(|x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn unbounded_sequence_is_refused() {
        let m = unit_interval(101).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let seq: Vec<_> = (1..5)
            .map(|n| StochasticField::constant(&m, n as f64))
            .collect();
        let u = StochasticField::zeros(&m);
        let err = weak_convergence_panel(&seq, &u, &[], &p, &v, &m, 2.0).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(_)));
    }
}
