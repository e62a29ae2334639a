//! Discrete weak solutions by damped, regularized Kacanov iteration.
//!
//! At the iterate `u^k` the flux coefficient is frozen,
//! `a^k = theta (|grad u^k|^2 + eps^2)^((p-2)/2)` for the model kernel (a
//! secant coefficient for custom kernels), the lower-order term is lagged,
//! and the correction `d` solves `K(a^k) d = -R(u^k)` with zero boundary
//! values, where `R` is the discrete weak residual. For the model kernel
//! `u^k + d` is exactly the solution of the frozen linear problem. The
//! update is `u^{k+1} = u^k + damping * d`; with an energy available the
//! step is halved while the energy increases.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::families::{draw_rng, random_zero_boundary_field};
use crate::fields::{ExponentField, FieldFn, StochasticField, WeightField};
use crate::measure_grid::{ProductMeasureGrid, Quadrature};
use crate::modular_norm::{ModularTerms, LUXEMBURG_TOL};
use crate::operator::{
    bracket_values, fit_slope, frozen_coefficient, Assembly, FluxMode, Kernel, ProblemSpec,
};

pub const ENERGY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub eps_reg: f64,
    pub max_outer: usize,
    /// `None`: 1 when `p` stays within `[1.8, 2.5]`, else 0.5.
    pub damping: Option<f64>,
    /// Relative tolerance of each linear solve.
    pub lin_tol: f64,
    /// `None`: 1e-8 for `p = 2`, else 1e-6.
    pub outer_tol: Option<f64>,
    /// Highest sine mode per axis in the default residual panel.
    pub residual_panel_size: usize,
    pub max_halvings: usize,
    pub keep_iterates: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            eps_reg: 1e-6,
            max_outer: 200,
            damping: None,
            lin_tol: 1e-12,
            outer_tol: None,
            residual_panel_size: 4,
            max_halvings: 6,
            keep_iterates: false,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_reg > 0.0) {
            return Err(Error::config("solver.eps_reg", "must be positive"));
        }
        if let Some(d) = self.damping {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::config("solver.damping", "must lie in (0, 1]"));
            }
        }
        if !(self.lin_tol > 0.0) {
            return Err(Error::config("solver.lin_tol", "must be positive"));
        }
        if self.outer_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("solver.outer_tol", "must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::config("solver.max_outer", "must be at least 1"));
        }
        Ok(())
    }

    pub fn damping_for(&self, p: &ExponentField) -> f64 {
        self.damping
            .unwrap_or(if p.p_minus() >= 1.8 && p.p_plus() <= 2.5 {
                1.0
            } else {
                0.5
            })
    }

    pub fn outer_tol_for(&self, p: &ExponentField) -> f64 {
        self.outer_tol
            .unwrap_or(if p.p_minus() == 2.0 && p.p_plus() == 2.0 {
                1e-8
            } else {
                1e-6
            })
    }
}

// ---------------------------------------------------------------------------
// linear solves

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Solves `K(coeff) x = rhs` on the interior nodes of a single-sample
/// assembly, with `x = 0` on the boundary. `K` is the element stiffness
/// matrix with one coefficient per element. One dimension uses the
/// tridiagonal elimination, two dimensions Jacobi-preconditioned conjugate
/// gradients.
pub(crate) fn solve_dirichlet(
    asm: &Assembly<'_>,
    coeff: &[f64],
    rhs: &[f64],
    lin_tol: f64,
) -> (Vec<f64>, LinearStats) {
    if asm.m.dim() == 1 {
        solve_tridiagonal(asm, coeff, rhs)
    } else {
        solve_pcg(asm, coeff, rhs, lin_tol)
    }
}

fn solve_tridiagonal(asm: &Assembly<'_>, coeff: &[f64], rhs: &[f64]) -> (Vec<f64>, LinearStats) {
    let n = asm.n_nodes();
    let h = asm.m.grid.h()[0];
    let mut x = vec![0.0; n];
    let m = n - 2;
    // unknown k <-> node k + 1; element e spans nodes e, e + 1
    let mut diag: Vec<f64> = (0..m).map(|k| (coeff[k] + coeff[k + 1]) / h).collect();
    let off: Vec<f64> = (0..m.saturating_sub(1))
        .map(|k| -coeff[k + 1] / h)
        .collect();
    let mut b: Vec<f64> = (0..m).map(|k| rhs[k + 1]).collect();
    for k in 1..m {
        let w = off[k - 1] / diag[k - 1];
        diag[k] -= w * off[k - 1];
        b[k] -= w * b[k - 1];
    }
    let mut sol = vec![0.0; m];
    for k in (0..m).rev() {
        let upper = if k + 1 < m { off[k] * sol[k + 1] } else { 0.0 };
        sol[k] = (b[k] - upper) / diag[k];
    }
    x[1..n - 1].copy_from_slice(&sol);
    (
        x,
        LinearStats {
            iterations: 1,
            rel_residual: 0.0,
        },
    )
}

fn apply_stiffness(asm: &Assembly<'_>, coeff: &[f64], x: &[f64], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (e, el) in asm.mesh.elements.iter().enumerate() {
        let g = asm.mesh.gradient(e, x);
        let c = coeff[e] * el.area;
        for k in 0..el.n_vertices {
            y[el.nodes[k]] += c * (g[0] * el.grads[k][0] + g[1] * el.grads[k][1]);
        }
    }
    for (v, &b) in y.iter_mut().zip(asm.m.grid.boundary_mask()) {
        if b {
            *v = 0.0;
        }
    }
}

fn solve_pcg(
    asm: &Assembly<'_>,
    coeff: &[f64],
    rhs: &[f64],
    lin_tol: f64,
) -> (Vec<f64>, LinearStats) {
    let n = asm.n_nodes();
    let boundary = asm.m.grid.boundary_mask();
    let mut diag = vec![0.0; n];
    for (e, el) in asm.mesh.elements.iter().enumerate() {
        for k in 0..el.n_vertices {
            let g = el.grads[k];
            diag[el.nodes[k]] += coeff[e] * el.area * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    let b: Vec<f64> = rhs
        .iter()
        .zip(boundary)
        .map(|(r, &bd)| if bd { 0.0 } else { *r })
        .collect();
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dotp(&b, &b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return (
            x,
            LinearStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        );
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = if boundary[i] { 0.0 } else { r[i] / diag[i] };
        }
    };
    let mut r = b.clone();
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut d = z.clone();
    let mut rz = dotp(&r, &z);
    let mut ad = vec![0.0; n];
    let max_iter = 20 * n + 100;
    let mut rel = 1.0;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        apply_stiffness(asm, coeff, &d, &mut ad);
        let alpha = rz / dotp(&d, &ad);
        for i in 0..n {
            x[i] += alpha * d[i];
            r[i] -= alpha * ad[i];
        }
        rel = dotp(&r, &r).sqrt() / b_norm;
        if rel <= lin_tol {
            break;
        }
        precond(&r, &mut z);
        let rz_new = dotp(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            d[i] = z[i] + beta * d[i];
        }
    }
    (
        x,
        LinearStats {
            iterations: it,
            rel_residual: rel,
        },
    )
}

// ---------------------------------------------------------------------------
// residual panel

#[derive(Debug, Clone, PartialEq)]
pub enum TestFn {
    /// Nodal hat function of one interior node in one sample.
    Hat {
        node: usize,
        sample: usize,
    },
    Field(StochasticField),
}

/// Hat functions at every interior node of every sample, followed by the
/// sine modes `sin(k pi x) [sin(l pi y)]` with `k, l <= max_mode`.
pub fn default_panel(m: &ProductMeasureGrid, max_mode: usize) -> Vec<TestFn> {
    let mut panel = Vec::new();
    let boundary = m.grid.boundary_mask();
    for sample in 0..m.n_samples() {
        for node in 0..m.n_nodes() {
            if !boundary[node] {
                panel.push(TestFn::Hat { node, sample });
            }
        }
    }
    let b = m.grid.bounds().to_vec();
    let unit = |c: f64, a: usize| (c - b[a].0) / (b[a].1 - b[a].0);
    let l_max = if m.dim() == 2 { max_mode } else { 1 };
    for k in 1..=max_mode {
        for l in 1..=l_max {
            let dim = m.dim();
            let f = move |x: &[f64], _t: f64| {
                let fy = if dim == 2 {
                    (l as f64 * PI * unit(x[1], 1)).sin()
                } else {
                    1.0
                };
                (k as f64 * PI * unit(x[0], 0)).sin() * fy
            };
            panel.push(TestFn::Field(
                StochasticField::from_fn(m, &f).clamp_boundary(m),
            ));
        }
    }
    panel
}

/// Test functions with their normalizers `1 + ||grad phi||_{p,theta}`.
#[derive(Debug, Clone)]
pub struct ResidualPanel {
    entries: Vec<(TestFn, f64)>,
}

impl ResidualPanel {
    pub fn new(asm: &Assembly<'_>, panel: Vec<TestFn>) -> Result<Self> {
        if panel.is_empty() {
            return Err(Error::Insufficient("residual panel is empty".into()));
        }
        let support = asm.mesh.node_support();
        let mut entries = Vec::with_capacity(panel.len());
        for phi in panel {
            let norm = match &phi {
                TestFn::Hat { node, sample } => {
                    if *node >= asm.n_nodes() || *sample >= asm.m.n_samples() {
                        return Err(Error::Dimension(format!(
                            "hat at node {node}, sample {sample} is off the grid"
                        )));
                    }
                    if asm.m.grid.boundary_mask()[*node] {
                        return Err(Error::Domain(format!("hat at boundary node {node}")));
                    }
                    hat_gradient_norm(asm, &support[*node], *node, *sample)?
                }
                TestFn::Field(f) => {
                    f.check_shape(asm.m)?;
                    if !f.zero_boundary() {
                        return Err(Error::Domain(
                            "panel functions must vanish on the boundary".into(),
                        ));
                    }
                    asm.gradient_norm(f.values())?
                }
            };
            entries.push((phi, 1.0 + norm));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `max |sum R phi| / (1 + ||grad phi||)` for a residual vector `R`.
    pub fn eval(&self, r: &[f64], n_nodes: usize) -> f64 {
        self.entries
            .iter()
            .map(|(phi, norm)| {
                let pairing = match phi {
                    TestFn::Hat { node, sample } => r[sample * n_nodes + node],
                    TestFn::Field(f) => f.values().iter().zip(r).map(|(a, b)| a * b).sum(),
                };
                pairing.abs() / norm
            })
            .fold(0.0, f64::max)
    }
}

fn hat_gradient_norm(asm: &Assembly<'_>, support: &[usize], node: usize, t: usize) -> Result<f64> {
    let ne = asm.mesh.len();
    let mut areas = Vec::with_capacity(support.len());
    let mut mags = Vec::with_capacity(support.len());
    let mut exps = Vec::with_capacity(support.len());
    let mut wts = Vec::with_capacity(support.len());
    for &e in support {
        let el = &asm.mesh.elements[e];
        let k = (0..el.n_vertices)
            .find(|&k| el.nodes[k] == node)
            .expect("support");
        areas.push(el.area);
        mags.push(el.grads[k][0].hypot(el.grads[k][1]));
        exps.push(asm.p_elem[t * ne + e]);
        wts.push(asm.theta_elem[t * ne + e]);
    }
    let probs = [asm.m.omega.probs()[t]];
    let quad = Quadrature {
        weights: &areas,
        probs: &probs,
    };
    Ok(ModularTerms::new(quad, &mags, &exps, Some(&wts))?
        .luxemburg(LUXEMBURG_TOL)?
        .value)
}

/// `max_phi |<Gamma(u), phi> - int f phi| / (1 + ||grad phi||_{p,theta})`
/// with the exact kernel.
pub fn weak_residual(
    u: &StochasticField,
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    panel: &[TestFn],
) -> Result<f64> {
    u.check_shape(m)?;
    spec.validate(m)?;
    let asm = Assembly::new(p, v, m)?;
    let rp = ResidualPanel::new(&asm, panel.to_vec())?;
    let r = asm.residual_vector(&spec.kernel, spec.f.values(), u.values(), FluxMode::Exact)?;
    Ok(rp.eval(&r, m.n_nodes()))
}

// ---------------------------------------------------------------------------
// per-sample solve

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterateDiagnostic {
    /// `<A(grad u^k) - A(grad u), grad(u^k - u)>` for the last iterates.
    pub brackets: Vec<f64>,
    /// `||u^k - u||_{p,theta} + ||grad(u^k - u)||_{p,theta}`.
    pub distances: Vec<f64>,
    /// Both sequences non-increasing.
    pub decreasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSolution {
    pub t_index: usize,
    pub label: f64,
    /// Nodal values of the final iterate.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Energy of each accepted iterate, starting with the initial guess;
    /// empty when the problem has no energy.
    pub energy: Vec<f64>,
    /// Non-increasing after the first accepted step; `None` when the
    /// problem has no energy.
    pub energy_monotone: Option<bool>,
    pub updates: Vec<f64>,
    pub residuals: Vec<f64>,
    pub dampings: Vec<f64>,
    pub linear_iterations: Vec<usize>,
    /// Weak residual of the final iterate.
    pub residual: f64,
    pub outer_tol: f64,
    pub iterate_check: IterateDiagnostic,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterates: Option<Vec<Vec<f64>>>,
}

fn slice_fields(
    p: &ExponentField,
    v: &WeightField,
    mt: &ProductMeasureGrid,
    n: usize,
    t: usize,
) -> Result<(ExponentField, WeightField)> {
    let range = t * n..(t + 1) * n;
    Ok((
        ExponentField::new(mt, p.values()[range.clone()].to_vec())?,
        WeightField::new(mt, v.values()[range].to_vec())?,
    ))
}

/// Energy `int (theta/p)(|grad u|^2 + eps^2)^(p/2) - int f u` of one sample.
fn energy(asm: &Assembly<'_>, f: &[f64], u: &[f64], eps: f64) -> f64 {
    let mut dirichlet = 0.0;
    for (e, el) in asm.mesh.elements.iter().enumerate() {
        let g = asm.mesh.gradient(e, u);
        let (th, p) = (asm.theta_elem[e], asm.p_elem[e]);
        dirichlet += el.area * th / p * (g[0] * g[0] + g[1] * g[1] + eps * eps).powf(0.5 * p);
    }
    let w = asm.m.grid.quad_weights();
    let load: f64 = (0..u.len()).map(|i| w[i] * f[i] * u[i]).sum();
    dirichlet - load
}

fn coefficients(asm: &Assembly<'_>, kernel: &Kernel, u: &[f64], eps: f64) -> Result<Vec<f64>> {
    let mut a = Vec::with_capacity(asm.mesh.len());
    for e in 0..asm.mesh.len() {
        let xi = asm.mesh.gradient(e, u);
        let site = asm.element_site(e, 0);
        let c = match kernel {
            Kernel::PLaplacian { .. } => frozen_coefficient(&site, xi, eps),
            Kernel::Custom { .. } => {
                let r = xi[0].hypot(xi[1]);
                let xt = if r >= eps { xi } else { [eps, 0.0] };
                let s = asm.mesh.vertex_average(e, u);
                let fl = kernel.flux(&site, s, xt);
                (fl[0] * xt[0] + fl[1] * xt[1]) / (xt[0] * xt[0] + xt[1] * xt[1])
            }
        };
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Hypothesis(format!(
                "frozen coefficient {c} is not positive on element {e}"
            )));
        }
        a.push(c);
    }
    Ok(a)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sobolev_distance(
    asm: &Assembly<'_>,
    p: &ExponentField,
    v: &WeightField,
    d: &[f64],
) -> Result<f64> {
    let l = ModularTerms::new(asm.m.nodal(), d, p.values(), Some(v.values()))?
        .luxemburg(LUXEMBURG_TOL)?
        .value;
    Ok(l + asm.gradient_norm(d)?)
}

/// Solves one sample; a non-converged run is returned with
/// `converged = false`.
pub fn solve_sample_report(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    t_index: usize,
    cfg: &SolveConfig,
    initial: Option<&[f64]>,
) -> Result<SampleSolution> {
    cfg.validate()?;
    spec.validate(m)?;
    let n = m.n_nodes();
    let (spec_t, mt) = spec.sample(t_index, m)?;
    let (pt, vt) = slice_fields(p, v, &mt, n, t_index)?;
    let asm = Assembly::new(&pt, &vt, &mt)?;
    let panel = ResidualPanel::new(&asm, default_panel(&mt, cfg.residual_panel_size))?;
    let kernel = &spec_t.kernel;
    let f = spec_t.f.values();
    let eps = cfg.eps_reg;
    let tol = cfg.outer_tol_for(&pt);
    let damping = cfg.damping_for(&pt);
    let with_energy = spec_t.has_energy();
    let boundary = mt.grid.boundary_mask();

    let mut u = match initial {
        Some(init) => {
            mt.check_len("initial guess", init.len())?;
            init.iter()
                .zip(boundary)
                .map(|(x, &b)| if b { 0.0 } else { *x })
                .collect()
        }
        None => {
            let w = mt.grid.quad_weights();
            let rhs: Vec<f64> = (0..n).map(|i| w[i] * f[i]).collect();
            solve_dirichlet(&asm, &asm.theta_elem, &rhs, cfg.lin_tol).0
        }
    };

    let mut energies = Vec::new();
    if with_energy {
        energies.push(energy(&asm, f, &u, eps));
    }
    let mut updates = Vec::new();
    let mut residuals = Vec::new();
    let mut dampings = Vec::new();
    let mut lin_iters = Vec::new();
    let mut history: Vec<Vec<f64>> = vec![u.clone()];
    let mut converged = false;
    let mut residual = f64::INFINITY;
    let mut monotone = true;

    for _ in 0..cfg.max_outer {
        let a = coefficients(&asm, kernel, &u, eps)?;
        let r = asm.residual_vector(kernel, f, &u, FluxMode::Regularized(eps))?;
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let (d, stats) = solve_dirichlet(&asm, &a, &rhs, cfg.lin_tol);
        lin_iters.push(stats.iterations);

        let mut step = damping;
        let trial =
            |step: f64| -> Vec<f64> { u.iter().zip(&d).map(|(x, y)| x + step * y).collect() };
        let mut next = trial(step);
        if with_energy {
            let j0 = *energies.last().expect("energy");
            let mut j1 = energy(&asm, f, &next, eps);
            let mut halvings = 0;
            while j1 > j0 + ENERGY_TOL * j0.abs().max(1.0) && halvings < cfg.max_halvings {
                step *= 0.5;
                next = trial(step);
                j1 = energy(&asm, f, &next, eps);
                halvings += 1;
            }
            if j1 > j0 + ENERGY_TOL * j0.abs().max(1.0) && energies.len() > 1 {
                monotone = false;
            }
            energies.push(j1);
        }
        let update = u
            .iter()
            .zip(&next)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = max_abs(&u).max(1.0);
        u = next;
        let r_exact = asm.residual_vector(kernel, f, &u, FluxMode::Exact)?;
        residual = panel.eval(&r_exact, n);
        updates.push(update);
        residuals.push(residual);
        dampings.push(step);
        history.push(u.clone());
        if history.len() > 7 && !cfg.keep_iterates {
            history.remove(0);
        }
        if update <= tol * scale && residual <= tol {
            converged = true;
            break;
        }
    }

    let iterate_check = iterate_diagnostic(&asm, kernel, &pt, &vt, &history, &u)?;
    Ok(SampleSolution {
        t_index,
        label: mt.omega.samples()[0],
        values: u,
        iterations: updates.len(),
        converged,
        energy: energies,
        energy_monotone: with_energy.then_some(monotone),
        updates,
        residuals,
        dampings,
        linear_iterations: lin_iters,
        residual,
        outer_tol: tol,
        iterate_check,
        iterates: cfg.keep_iterates.then_some(history),
    })
}

fn iterate_diagnostic(
    asm: &Assembly<'_>,
    kernel: &Kernel,
    p: &ExponentField,
    v: &WeightField,
    history: &[Vec<f64>],
    u: &[f64],
) -> Result<IterateDiagnostic> {
    let prior = &history[..history.len().saturating_sub(1)];
    let start = prior.len().saturating_sub(5);
    let mut brackets = Vec::new();
    let mut distances = Vec::new();
    for uk in &prior[start..] {
        brackets.push(bracket_values(asm, kernel, uk, u)?);
        let d: Vec<f64> = uk.iter().zip(u).map(|(a, b)| a - b).collect();
        distances.push(sobolev_distance(asm, p, v, &d)?);
    }
    let non_increasing = |s: &[f64]| s.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300);
    Ok(IterateDiagnostic {
        decreasing: non_increasing(&brackets) && non_increasing(&distances),
        brackets,
        distances,
    })
}

/// Solves one sample; non-convergence is an error carrying the last update
/// and residual.
pub fn solve_sample(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    t_index: usize,
    cfg: &SolveConfig,
) -> Result<SampleSolution> {
    let s = solve_sample_report(spec, p, v, m, t_index, cfg, None)?;
    if !s.converged {
        return Err(Error::NonConvergence {
            sample: t_index,
            iterations: s.iterations,
            last_update: s.updates.last().copied().unwrap_or(f64::NAN),
            last_residual: s.residual,
        });
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// ensemble

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub t_index: usize,
    pub label: f64,
    pub prob: f64,
    pub solution: Option<SampleSolution>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub samples: Vec<SampleOutcome>,
    /// Probability-weighted mean per node.
    pub mean: Vec<f64>,
    /// Probability-weighted standard deviation per node.
    pub std: Vec<f64>,
    /// Largest per-sample weak residual.
    pub residual_max: f64,
    /// Weak residual of the assembled field against the product measure.
    pub ensemble_residual: Option<f64>,
    pub converged: bool,
    pub eps_reg: f64,
}

impl SolveReport {
    /// Node x sample array of the sample solutions (zeros for failures).
    pub fn field_values(&self, n_nodes: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_nodes * self.samples.len()];
        for (t, s) in self.samples.iter().enumerate() {
            if let Some(sol) = &s.solution {
                out[t * n_nodes..(t + 1) * n_nodes].copy_from_slice(&sol.values);
            }
        }
        out
    }
}

/// Solves every sample independently (in parallel) and aggregates.
pub fn solve_ensemble(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    cfg: &SolveConfig,
) -> Result<SolveReport> {
    solve_ensemble_from(spec, p, v, m, cfg, None)
}

pub fn solve_ensemble_from(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    cfg: &SolveConfig,
    initial: Option<&StochasticField>,
) -> Result<SolveReport> {
    cfg.validate()?;
    spec.validate(m)?;
    if let Some(init) = initial {
        init.check_shape(m)?;
    }
    let n = m.n_nodes();
    let outcomes: Vec<SampleOutcome> = (0..m.n_samples())
        .into_par_iter()
        .map(|t| {
            let init = initial.map(|f| f.sample(t));
            let (solution, error) = match solve_sample_report(spec, p, v, m, t, cfg, init) {
                Ok(s) if s.converged => (Some(s), None),
                Ok(s) => {
                    let msg = Error::NonConvergence {
                        sample: t,
                        iterations: s.iterations,
                        last_update: s.updates.last().copied().unwrap_or(f64::NAN),
                        last_residual: s.residual,
                    }
                    .to_string();
                    (Some(s), Some(msg))
                }
                Err(e) => (None, Some(e.to_string())),
            };
            SampleOutcome {
                t_index: t,
                label: m.omega.samples()[t],
                prob: m.omega.probs()[t],
                solution,
                error,
            }
        })
        .collect();
    let converged = outcomes.iter().all(|o| o.error.is_none());
    let mut mean = vec![0.0; n];
    for o in &outcomes {
        if let Some(s) = &o.solution {
            for (mv, x) in mean.iter_mut().zip(&s.values) {
                *mv += o.prob * x;
            }
        }
    }
    let mut var = vec![0.0; n];
    for o in &outcomes {
        if let Some(s) = &o.solution {
            for ((vv, x), mv) in var.iter_mut().zip(&s.values).zip(&mean) {
                *vv += o.prob * (x - mv) * (x - mv);
            }
        }
    }
    let std = var.into_iter().map(|x| x.max(0.0).sqrt()).collect();
    let residual_max = outcomes
        .iter()
        .filter_map(|o| o.solution.as_ref().map(|s| s.residual))
        .fold(0.0, f64::max);
    let mut report = SolveReport {
        samples: outcomes,
        mean,
        std,
        residual_max,
        ensemble_residual: None,
        converged,
        eps_reg: cfg.eps_reg,
    };
    if converged {
        let u = StochasticField::from_values(m, report.field_values(n))?;
        let panel = default_panel(m, cfg.residual_panel_size);
        report.ensemble_residual = Some(weak_residual(&u, spec, p, v, m, &panel)?);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// refinement and uniqueness

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineRow {
    pub n: Vec<usize>,
    pub h: f64,
    pub iterations: usize,
    pub residual_max: f64,
    /// Largest nodal value of the ensemble mean.
    pub max_mean: f64,
    /// L-infinity difference to the previous level on the shared nodes.
    pub diff_prev: Option<f64>,
    /// L-infinity error against the exact solution, when given.
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineTable {
    pub rows: Vec<RefineRow>,
    /// Slope of `log error` (or `log diff`) against `log h`.
    pub fitted_order: f64,
    pub differences_decreasing: bool,
    pub converged: bool,
}

/// Problem data rebuilt on each grid of a refinement study.
pub type ProblemBuilder<'a> =
    dyn Fn(&ProductMeasureGrid) -> Result<(ProblemSpec, ExponentField, WeightField)> + Sync + 'a;

/// Grid with `(n - 1) 2^level + 1` nodes per axis.
pub fn refine_level(base: &ProductMeasureGrid, level: usize) -> Result<ProductMeasureGrid> {
    let mut g = base.clone();
    for _ in 0..level {
        g = g.refined()?;
    }
    Ok(g)
}

pub fn refine_study(
    build: &ProblemBuilder<'_>,
    base: &ProductMeasureGrid,
    levels: usize,
    cfg: &SolveConfig,
    exact: Option<&dyn FieldFn>,
) -> Result<RefineTable> {
    if levels < 2 {
        return Err(Error::Insufficient(format!(
            "refinement study needs at least two levels, got {levels}"
        )));
    }
    let mut rows: Vec<RefineRow> = Vec::with_capacity(levels);
    let mut prev: Option<(ProductMeasureGrid, Vec<f64>)> = None;
    let mut converged = true;
    for level in 0..levels {
        let m = refine_level(base, level)?;
        let (spec, p, v) = build(&m)?;
        let rep = solve_ensemble(&spec, &p, &v, &m, cfg)?;
        converged &= rep.converged;
        let n = m.n_nodes();
        let u = rep.field_values(n);
        let error = exact.map(|ex| {
            let exact_vals = StochasticField::from_fn(&m, ex);
            u.iter()
                .zip(exact_vals.values())
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
        });
        let diff_prev = prev.as_ref().map(|(pm, pu)| {
            let mut worst = 0.0f64;
            let pn = pm.n_nodes();
            for t in 0..m.n_samples() {
                for node in 0..pn {
                    let [i, j] = pm.grid.index(node);
                    let fine = m.grid.node(2 * i, 2 * j);
                    worst = worst.max((pu[t * pn + node] - u[t * n + fine]).abs());
                }
            }
            worst
        });
        rows.push(RefineRow {
            n: m.grid.n().to_vec(),
            h: m.grid.h()[0],
            iterations: rep
                .samples
                .iter()
                .filter_map(|s| s.solution.as_ref().map(|x| x.iterations))
                .max()
                .unwrap_or(0),
            residual_max: rep.residual_max,
            max_mean: rep.mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            diff_prev,
            error,
        });
        prev = Some((m, u));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = if exact.is_some() {
        rows.iter()
            .map(|r| (r.h.ln(), r.error.unwrap_or(f64::NAN).ln()))
            .unzip()
    } else {
        rows.iter()
            .filter_map(|r| r.diff_prev.map(|d| (r.h.ln(), d.ln())))
            .unzip()
    };
    let fitted_order = if x.len() >= 2 {
        fit_slope(&x, &y)
    } else {
        f64::NAN
    };
    let diffs: Vec<f64> = rows.iter().filter_map(|r| r.diff_prev).collect();
    Ok(RefineTable {
        differences_decreasing: diffs.windows(2).all(|w| w[1] < w[0]),
        rows,
        fitted_order,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub max_difference: f64,
    pub tolerance: f64,
    pub converged: bool,
    pub pass: bool,
}

/// Solves from two random zero-boundary initial guesses and compares.
pub fn uniqueness_probe(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    cfg: &SolveConfig,
    seed: u64,
) -> Result<UniquenessReport> {
    let starts: Vec<StochasticField> = (0..2)
        .map(|i| random_zero_boundary_field(m, &mut draw_rng(seed, i), 0.5))
        .collect();
    let a = solve_ensemble_from(spec, p, v, m, cfg, Some(&starts[0]))?;
    let b = solve_ensemble_from(spec, p, v, m, cfg, Some(&starts[1]))?;
    let n = m.n_nodes();
    let (ua, ub) = (a.field_values(n), b.field_values(n));
    let max_difference = ua
        .iter()
        .zip(&ub)
        .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
    let tolerance = 10.0 * cfg.outer_tol_for(p);
    let converged = a.converged && b.converged;
    Ok(UniquenessReport {
        max_difference,
        tolerance,
        converged,
        pass: converged && max_difference <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_grid::{build_grid, unit_interval};
    use crate::operator::GFn;

    fn poisson(m: &ProductMeasureGrid, f: f64) -> ProblemSpec {
        ProblemSpec::model(m, GFn::zero(), StochasticField::constant(m, f))
    }

    #[test]
    fn linear_poisson_is_exact_at_nodes() {
        let m = unit_interval(101).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let s = solve_sample(&poisson(&m, 1.0), &p, &v, &m, 0, &SolveConfig::default()).unwrap();
        let err = (0..m.n_nodes())
            .map(|k| {
                let x = m.grid.coords(k)[0];
                (s.values[k] - 0.5 * x * (1.0 - x)).abs()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!(s.residual <= 1e-10);
    }

    #[test]
    fn zero_data_gives_zero_in_one_step() {
        let m = unit_interval(51).unwrap();
        let p = ExponentField::constant(&m, 3.0).unwrap();
        let v = WeightField::unit(&m);
        let s = solve_sample(&poisson(&m, 0.0), &p, &v, &m, 0, &SolveConfig::default()).unwrap();
        assert_eq!(s.iterations, 1);
        assert!(s.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn p4_matches_closed_form() {
        let m = unit_interval(401).unwrap();
        let p = ExponentField::constant(&m, 4.0).unwrap();
        let v = WeightField::unit(&m);
        let s = solve_sample(&poisson(&m, 1.0), &p, &v, &m, 0, &SolveConfig::default()).unwrap();
        let max = s.values.iter().cloned().fold(0.0, f64::max);
        let exact = 0.75 * 0.5f64.powf(4.0 / 3.0);
        assert!((max - exact).abs() < 5e-3, "{max} vs {exact}");
        assert!(s.residual <= 1e-6);
        assert_eq!(s.energy_monotone, Some(true));
        assert!(s.iterate_check.decreasing, "{:?}", s.iterate_check);
    }

    #[test]
    fn two_dimensional_poisson() {
        let m = build_grid(
            2,
            &[(0.0, 1.0), (0.0, 1.0)],
            &[17, 17],
            vec![0.0],
            vec![1.0],
        )
        .unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let s = solve_sample(&poisson(&m, 1.0), &p, &v, &m, 0, &SolveConfig::default()).unwrap();
        // centre value of the unit-square torsion problem is about 0.0737
        let centre = s.values[m.grid.node(8, 8)];
        assert!((centre - 0.0737).abs() < 2e-3, "{centre}");
        assert!(s.residual <= 1e-8);
    }

    #[test]
    fn ensemble_mean_and_std() {
        let m = build_grid(1, &[(0.0, 1.0)], &[101], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::from_fn(&m, &|_x: &[f64], t: f64| 1.0 + t).unwrap();
        let r = solve_ensemble(&poisson(&m, 1.0), &p, &v, &m, &SolveConfig::default()).unwrap();
        assert!(r.converged);
        let max = r.mean.iter().cloned().fold(0.0, f64::max);
        assert!((max - 3.0 / 32.0).abs() < 1e-12);
        let same = build_grid(1, &[(0.0, 1.0)], &[41], vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        let p = ExponentField::constant(&same, 2.0).unwrap();
        let v = WeightField::unit(&same);
        let r =
            solve_ensemble(&poisson(&same, 1.0), &p, &v, &same, &SolveConfig::default()).unwrap();
        assert!(r.std.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn perturbed_solution_has_visible_residual() {
        let m = unit_interval(201).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let spec = poisson(&m, 1.0);
        let s = solve_sample(&spec, &p, &v, &m, 0, &SolveConfig::default()).unwrap();
        let u = StochasticField::from_values(&m, s.values).unwrap();
        let bump = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| 0.1 * (PI * x[0]).sin());
        let up = u.axpby(1.0, &bump, 1.0).unwrap().clamp_boundary(&m);
        let panel = default_panel(&m, 4);
        let r0 = weak_residual(&u, &spec, &p, &v, &m, &panel).unwrap();
        let r1 = weak_residual(&up, &spec, &p, &v, &m, &panel).unwrap();
        assert!(r0 < 1e-10);
        let scale = 0.1 * PI * PI / 2.0 / (1.0 + PI / 2f64.sqrt());
        assert!(r1 > 0.5 * scale && r1 < 2.0 * scale, "{r1} vs {scale}");
        assert!(weak_residual(&u, &spec, &p, &v, &m, &[]).is_err());
    }

    #[test]
    fn refinement_needs_two_levels() {
        let m = unit_interval(11).unwrap();
        let build = |g: &ProductMeasureGrid| {
            Ok((
                poisson(g, 1.0),
                ExponentField::constant(g, 2.0)?,
                WeightField::unit(g),
            ))
        };
        assert!(matches!(
            refine_study(&build, &m, 1, &SolveConfig::default(), None),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn custom_kernel_matches_model() {
        let m = unit_interval(101).unwrap();
        let p = ExponentField::constant(&m, 3.0).unwrap();
        let v = WeightField::unit(&m);
        let cfg = SolveConfig::default();
        let model = solve_sample(&poisson(&m, 1.0), &p, &v, &m, 0, &cfg).unwrap();
        let mut spec = poisson(&m, 1.0);
        spec.kernel = Kernel::custom(&["theta*abs(xi1)^(p-2)*xi1"], "0", 1).unwrap();
        let custom = solve_sample(&spec, &p, &v, &m, 0, &cfg).unwrap();
        let diff = model
            .values
            .iter()
            .zip(&custom.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn uniqueness_probe_agrees() {
        let m = unit_interval(81).unwrap();
        let p = ExponentField::from_fn(&m, &|x: &[f64], _t: f64| 2.5 + 0.5 * x[0]).unwrap();
        let v = WeightField::unit(&m);
        let r =
            uniqueness_probe(&poisson(&m, 1.0), &p, &v, &m, &SolveConfig::default(), 3).unwrap();
        assert!(r.converged && r.pass, "{r:?}");
    }
}
