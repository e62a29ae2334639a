//! The operator `Gamma = Gamma1 + Gamma2` of the weak formulation,
//!
//! `<Gamma(u), phi> = E int_D [A(x,t,u,grad u) . grad phi + A0(x,t,u,grad u) phi] dx`,
//!
//! discretized with piecewise-linear elements on the grid: intervals in one
//! dimension, each cell split along its rising diagonal in two. The flux
//! term uses one-point quadrature per element with vertex-averaged `theta`,
//! `p` and `u`; the lower-order term and the data use the nodal trapezoid
//! rule with the nodal gradient.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::families::draw_rng;
use crate::fields::{nodal_gradient, ExponentField, StochasticField, VectorField, WeightField};
use crate::measure_grid::{ProductMeasureGrid, Quadrature, SpatialGrid};
use crate::modular_norm::{ModularTerms, LUXEMBURG_TOL};

/// Variables available to custom kernels, in evaluation order.
pub const KERNEL_VARS: [&str; 8] = ["x", "y", "t", "s", "xi1", "xi2", "theta", "p"];
pub const G_VARS: [&str; 1] = ["s"];

/// Slack tolerance of the sampled growth checks.
pub const GROWTH_TOL: f64 = -1e-12;
/// `xi` and `mu` closer than this are not a strict-monotonicity test case.
pub const MIN_SEPARATION: f64 = 1e-8;

// ---------------------------------------------------------------------------
// mesh

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    /// Vertex nodes; only the first `n_vertices` entries are used.
    pub nodes: [usize; 3],
    /// Constant gradients of the vertex hat functions.
    pub grads: [[f64; 2]; 3],
    pub n_vertices: usize,
    pub area: f64,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementMesh {
    pub elements: Vec<Element>,
    areas: Vec<f64>,
    dim: usize,
    n_nodes: usize,
}

impl ElementMesh {
    pub fn new(grid: &SpatialGrid) -> Self {
        let h = grid.h();
        let n = grid.n();
        let mut elements = Vec::new();
        if grid.dim() == 1 {
            for i in 0..n[0] - 1 {
                let (xa, xb) = (grid.coords(i)[0], grid.coords(i + 1)[0]);
                elements.push(Element {
                    nodes: [i, i + 1, 0],
                    grads: [[-1.0 / h[0], 0.0], [1.0 / h[0], 0.0], [0.0; 2]],
                    n_vertices: 2,
                    area: h[0],
                    centroid: [0.5 * (xa + xb), 0.0],
                });
            }
        } else {
            let (ix, iy) = (1.0 / h[0], 1.0 / h[1]);
            let area = 0.5 * h[0] * h[1];
            for j in 0..n[1] - 1 {
                for i in 0..n[0] - 1 {
                    let a = grid.node(i, j);
                    let b = grid.node(i + 1, j);
                    let c = grid.node(i + 1, j + 1);
                    let d = grid.node(i, j + 1);
                    let centroid = |nodes: [usize; 3]| {
                        let mut out = [0.0; 2];
                        for k in nodes {
                            let x = grid.coords(k);
                            out[0] += x[0] / 3.0;
                            out[1] += x[1] / 3.0;
                        }
                        out
                    };
                    elements.push(Element {
                        nodes: [a, b, c],
                        grads: [[-ix, 0.0], [ix, -iy], [0.0, iy]],
                        n_vertices: 3,
                        area,
                        centroid: centroid([a, b, c]),
                    });
                    elements.push(Element {
                        nodes: [a, c, d],
                        grads: [[0.0, -iy], [ix, 0.0], [-ix, iy]],
                        n_vertices: 3,
                        area,
                        centroid: centroid([a, c, d]),
                    });
                }
            }
        }
        let areas = elements.iter().map(|e| e.area).collect();
        Self {
            elements,
            areas,
            dim: grid.dim(),
            n_nodes: grid.n_nodes(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Element quadrature: one point per element, sample-major.
    pub fn quadrature<'a>(&'a self, m: &'a ProductMeasureGrid) -> Quadrature<'a> {
        Quadrature {
            weights: &self.areas,
            probs: m.omega.probs(),
        }
    }

    /// Gradient on element `e` of one sample's nodal values.
    pub fn gradient(&self, e: usize, sample_values: &[f64]) -> [f64; 2] {
        let el = &self.elements[e];
        let mut g = [0.0; 2];
        for k in 0..el.n_vertices {
            let u = sample_values[el.nodes[k]];
            g[0] += u * el.grads[k][0];
            g[1] += u * el.grads[k][1];
        }
        g
    }

    pub fn vertex_average(&self, e: usize, sample_values: &[f64]) -> f64 {
        let el = &self.elements[e];
        let s: f64 = el.nodes[..el.n_vertices]
            .iter()
            .map(|&k| sample_values[k])
            .sum();
        s / el.n_vertices as f64
    }

    /// Element gradient magnitudes of a node x sample array, sample-major.
    pub fn gradient_magnitudes(&self, values: &[f64]) -> Vec<f64> {
        let n_samples = values.len() / self.n_nodes;
        let mut out = Vec::with_capacity(self.len() * n_samples);
        for t in 0..n_samples {
            let u = &values[t * self.n_nodes..(t + 1) * self.n_nodes];
            for e in 0..self.len() {
                let g = self.gradient(e, u);
                out.push(g[0].hypot(g[1]));
            }
        }
        out
    }

    /// Vertex averages of a node x sample array, sample-major.
    pub fn averages(&self, values: &[f64]) -> Vec<f64> {
        let n_samples = values.len() / self.n_nodes;
        let mut out = Vec::with_capacity(self.len() * n_samples);
        for t in 0..n_samples {
            let u = &values[t * self.n_nodes..(t + 1) * self.n_nodes];
            for e in 0..self.len() {
                out.push(self.vertex_average(e, u));
            }
        }
        out
    }

    /// Elements touching each node.
    pub fn node_support(&self) -> Vec<Vec<usize>> {
        let mut support = vec![Vec::new(); self.n_nodes];
        for (e, el) in self.elements.iter().enumerate() {
            for &k in &el.nodes[..el.n_vertices] {
                support[k].push(e);
            }
        }
        support
    }
}

// ---------------------------------------------------------------------------
// kernels

/// The scalar function `g(s)` of the model lower-order term.
#[derive(Debug, Clone, PartialEq)]
pub struct GFn(pub Expr);

impl GFn {
    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self(Expr::parse(src, &G_VARS)?))
    }

    pub fn constant(c: f64) -> Self {
        Self(Expr::constant(c, &G_VARS))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.0.eval(&[s])
    }

    pub fn is_zero(&self) -> bool {
        self.0.as_constant() == Some(0.0)
    }
}

/// Pointwise data at which a kernel is evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Site {
    pub x: [f64; 2],
    pub t: f64,
    pub theta: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `A = theta |xi|^(p-2) xi`, `A0 = theta g(s) |xi|^(p-1)`.
    PLaplacian { g: GFn },
    /// Expressions over [`KERNEL_VARS`]: one flux component per axis and
    /// the lower-order term.
    Custom { flux: Vec<Expr>, lower: Expr },
}

fn norm2(xi: [f64; 2]) -> f64 {
    xi[0].hypot(xi[1])
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl Kernel {
    pub fn model(g: GFn) -> Self {
        Kernel::PLaplacian { g }
    }

    pub fn custom(flux: &[&str], lower: &str, dim: usize) -> Result<Self> {
        if flux.len() != dim {
            return Err(Error::Dimension(format!(
                "custom flux needs {dim} components, got {}",
                flux.len()
            )));
        }
        Ok(Kernel::Custom {
            flux: flux
                .iter()
                .map(|src| Expr::parse(src, &KERNEL_VARS))
                .collect::<Result<_>>()?,
            lower: Expr::parse(lower, &KERNEL_VARS)?,
        })
    }

    pub fn is_model(&self) -> bool {
        matches!(self, Kernel::PLaplacian { .. })
    }

    pub fn g(&self) -> Option<&GFn> {
        match self {
            Kernel::PLaplacian { g } => Some(g),
            Kernel::Custom { .. } => None,
        }
    }

    fn vars(site: &Site, s: f64, xi: [f64; 2]) -> [f64; 8] {
        [
            site.x[0], site.x[1], site.t, s, xi[0], xi[1], site.theta, site.p,
        ]
    }

    pub fn flux(&self, site: &Site, s: f64, xi: [f64; 2]) -> [f64; 2] {
        match self {
            Kernel::PLaplacian { .. } => {
                let r = norm2(xi);
                if r == 0.0 {
                    return [0.0; 2];
                }
                let c = site.theta * r.powf(site.p - 2.0);
                [c * xi[0], c * xi[1]]
            }
            Kernel::Custom { flux, .. } => {
                let v = Self::vars(site, s, xi);
                let mut out = [0.0; 2];
                for (o, e) in out.iter_mut().zip(flux) {
                    *o = e.eval(&v);
                }
                out
            }
        }
    }

    /// Flux with `|xi|^2` replaced by `|xi|^2 + eps^2` in the model
    /// coefficient; custom fluxes are returned unchanged.
    pub fn flux_regularized(&self, site: &Site, s: f64, xi: [f64; 2], eps: f64) -> [f64; 2] {
        match self {
            Kernel::PLaplacian { .. } => {
                let c = frozen_coefficient(site, xi, eps);
                [c * xi[0], c * xi[1]]
            }
            Kernel::Custom { .. } => self.flux(site, s, xi),
        }
    }

    pub fn lower(&self, site: &Site, s: f64, xi: [f64; 2]) -> f64 {
        match self {
            Kernel::PLaplacian { g } => {
                if g.is_zero() {
                    return 0.0;
                }
                site.theta * g.eval(s) * norm2(xi).powf(site.p - 1.0)
            }
            Kernel::Custom { lower, .. } => lower.eval(&Self::vars(site, s, xi)),
        }
    }

    /// Whether the lower-order term vanishes identically.
    pub fn lower_is_zero(&self) -> bool {
        match self {
            Kernel::PLaplacian { g } => g.is_zero(),
            Kernel::Custom { lower, .. } => lower.as_constant() == Some(0.0),
        }
    }
}

/// `theta (|xi|^2 + eps^2)^((p-2)/2)`.
pub fn frozen_coefficient(site: &Site, xi: [f64; 2], eps: f64) -> f64 {
    site.theta * (dot(xi, xi) + eps * eps).powf(0.5 * (site.p - 2.0))
}

// ---------------------------------------------------------------------------
// problem data

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kernel: Kernel,
    /// Right-hand side, acting through `int f phi`.
    pub f: StochasticField,
    /// `gamma(x, t)` of the lower-order growth bound.
    pub gamma: StochasticField,
    /// `k(x, t) >= 0` of the flux growth bound.
    pub k: StochasticField,
    pub alpha_c: f64,
    pub beta_c: f64,
}

impl ProblemSpec {
    /// Model kernel with `k = gamma = 0` and `alpha = beta = 1`.
    pub fn model(m: &ProductMeasureGrid, g: GFn, f: StochasticField) -> Self {
        Self {
            kernel: Kernel::model(g),
            f,
            gamma: StochasticField::zeros(m),
            k: StochasticField::zeros(m),
            alpha_c: 1.0,
            beta_c: 1.0,
        }
    }

    pub fn validate(&self, m: &ProductMeasureGrid) -> Result<()> {
        if !(self.alpha_c > 0.0) || !(self.beta_c > 0.0) {
            return Err(Error::Domain(format!(
                "alpha and beta must be positive, got {} and {}",
                self.alpha_c, self.beta_c
            )));
        }
        self.f.check_shape(m)?;
        self.gamma.check_shape(m)?;
        self.k.check_shape(m)?;
        if let Some(k) = self.k.values().iter().find(|k| !(**k >= 0.0)) {
            return Err(Error::Domain(format!("k must be nonnegative, got {k}")));
        }
        if let Kernel::Custom { flux, .. } = &self.kernel {
            if flux.len() != m.dim() {
                return Err(Error::Dimension(format!(
                    "custom flux has {} components on a {}-d grid",
                    flux.len(),
                    m.dim()
                )));
            }
        }
        Ok(())
    }

    /// Whether the iteration has a variational energy: the model kernel
    /// without lower-order term.
    pub fn has_energy(&self) -> bool {
        self.kernel.g().is_some_and(|g| g.is_zero())
    }

    /// Restriction to one sample, which becomes a sample of probability one.
    pub fn sample(
        &self,
        t_index: usize,
        m: &ProductMeasureGrid,
    ) -> Result<(Self, ProductMeasureGrid)> {
        let mt = m.sample_slice(t_index)?;
        let n = m.n_nodes();
        let slice = |f: &StochasticField| -> Result<StochasticField> {
            let s = StochasticField::from_values(&mt, f.sample(t_index).to_vec())?;
            Ok(if f.zero_boundary() {
                s.clamp_boundary(&mt)
            } else {
                s
            })
        };
        debug_assert_eq!(self.f.values().len(), n * m.n_samples());
        Ok((
            Self {
                kernel: self.kernel.clone(),
                f: slice(&self.f)?,
                gamma: slice(&self.gamma)?,
                k: slice(&self.k)?,
                alpha_c: self.alpha_c,
                beta_c: self.beta_c,
            },
            mt,
        ))
    }
}

// ---------------------------------------------------------------------------
// assembly

/// Element-level coefficients of one `(p, theta)` pair on one grid.
#[derive(Debug, Clone)]
pub struct Assembly<'a> {
    pub m: &'a ProductMeasureGrid,
    pub mesh: ElementMesh,
    p_nodal: &'a [f64],
    theta_nodal: &'a [f64],
    /// Vertex-averaged exponent per element and sample.
    pub p_elem: Vec<f64>,
    /// Vertex-averaged weight per element and sample.
    pub theta_elem: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorPairing {
    pub gamma1_part: f64,
    pub gamma2_part: f64,
    pub total: f64,
}

/// How the flux is evaluated during assembly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FluxMode {
    Exact,
    Regularized(f64),
}

impl<'a> Assembly<'a> {
    pub fn new(
        p: &'a ExponentField,
        v: &'a WeightField,
        m: &'a ProductMeasureGrid,
    ) -> Result<Self> {
        m.check_len("exponent", p.values().len())?;
        m.check_len("weight", v.values().len())?;
        let mesh = ElementMesh::new(&m.grid);
        let p_elem = mesh.averages(p.values());
        let theta_elem = mesh.averages(v.values());
        Ok(Self {
            m,
            mesh,
            p_nodal: p.values(),
            theta_nodal: v.values(),
            p_elem,
            theta_elem,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.m.n_nodes()
    }

    pub fn element_site(&self, e: usize, t: usize) -> Site {
        let k = t * self.mesh.len() + e;
        Site {
            x: self.mesh.elements[e].centroid,
            t: self.m.omega.samples()[t],
            theta: self.theta_elem[k],
            p: self.p_elem[k],
        }
    }

    pub fn node_site(&self, flat: usize) -> Site {
        let (node, t) = self.m.split(flat);
        Site {
            x: self.m.grid.coords(node),
            t: self.m.omega.samples()[t],
            theta: self.theta_nodal[flat],
            p: self.p_nodal[flat],
        }
    }

    fn sample<'b>(&self, values: &'b [f64], t: usize) -> &'b [f64] {
        let n = self.n_nodes();
        &values[t * n..(t + 1) * n]
    }

    /// Flux and gradient of `u` on element `e` of sample `t`.
    pub fn element_flux(
        &self,
        kernel: &Kernel,
        u: &[f64],
        e: usize,
        t: usize,
        mode: FluxMode,
    ) -> Result<([f64; 2], [f64; 2])> {
        let ut = self.sample(u, t);
        let xi = self.mesh.gradient(e, ut);
        let s = self.mesh.vertex_average(e, ut);
        let site = self.element_site(e, t);
        let a = match mode {
            FluxMode::Exact => kernel.flux(&site, s, xi),
            FluxMode::Regularized(eps) => kernel.flux_regularized(&site, s, xi, eps),
        };
        if !(a[0].is_finite() && a[1].is_finite()) {
            return Err(Error::NonFinite {
                node: self.mesh.elements[e].nodes[0],
                sample: t,
                what: format!("flux {a:?} at gradient {xi:?}"),
            });
        }
        Ok((a, xi))
    }

    /// `A0(x, t, u, grad u)` at every node, with the nodal gradient.
    pub fn lower_terms(&self, kernel: &Kernel, u: &[f64]) -> Result<Vec<f64>> {
        if kernel.lower_is_zero() {
            return Ok(vec![0.0; u.len()]);
        }
        let grad = nodal_gradient(u, self.m)?;
        let mut out = Vec::with_capacity(u.len());
        for (flat, &uv) in u.iter().enumerate() {
            let xi = vector_at(&grad, flat);
            let a0 = kernel.lower(&self.node_site(flat), uv, xi);
            if !a0.is_finite() {
                let (node, sample) = self.m.split(flat);
                return Err(Error::NonFinite {
                    node,
                    sample,
                    what: format!("lower-order term {a0}"),
                });
            }
            out.push(a0);
        }
        Ok(out)
    }

    /// `<Gamma(u), phi>` split into flux and lower-order parts.
    pub fn pairing(&self, kernel: &Kernel, u: &[f64], phi: &[f64]) -> Result<OperatorPairing> {
        self.m.check_len("field", u.len())?;
        self.m.check_len("test function", phi.len())?;
        let probs = self.m.omega.probs();
        let mut gamma1_part = 0.0;
        for (t, &prob) in probs.iter().enumerate() {
            let pt = self.sample(phi, t);
            let mut inner = 0.0;
            for e in 0..self.mesh.len() {
                let (a, _) = self.element_flux(kernel, u, e, t, FluxMode::Exact)?;
                inner += self.mesh.elements[e].area * dot(a, self.mesh.gradient(e, pt));
            }
            gamma1_part += prob * inner;
        }
        let a0 = self.lower_terms(kernel, u)?;
        let gamma2_part = self.m.nodal().sum(|i| a0[i] * phi[i]);
        Ok(OperatorPairing {
            gamma1_part,
            gamma2_part,
            total: gamma1_part + gamma2_part,
        })
    }

    /// Coefficients `R` with `<Gamma(u), phi> - int f phi = sum R_i phi_i`
    /// for every nodal `phi` (probabilities included).
    pub fn residual_vector(
        &self,
        kernel: &Kernel,
        f: &[f64],
        u: &[f64],
        mode: FluxMode,
    ) -> Result<Vec<f64>> {
        let n = self.n_nodes();
        let mut r = vec![0.0; u.len()];
        let a0 = self.lower_terms(kernel, u)?;
        let w = self.m.grid.quad_weights();
        for (t, &prob) in self.m.omega.probs().iter().enumerate() {
            let rt = &mut r[t * n..(t + 1) * n];
            for e in 0..self.mesh.len() {
                let (a, _) = self.element_flux(kernel, u, e, t, mode)?;
                let el = &self.mesh.elements[e];
                for k in 0..el.n_vertices {
                    rt[el.nodes[k]] += prob * el.area * dot(a, el.grads[k]);
                }
            }
            for i in 0..n {
                let flat = t * n + i;
                rt[i] += prob * w[i] * (a0[flat] - f[flat]);
            }
        }
        Ok(r)
    }

    /// `rho_{p,theta}(|grad u|)` with element quadrature.
    pub fn gradient_modular(&self, u: &[f64]) -> Result<f64> {
        let g = self.mesh.gradient_magnitudes(u);
        Ok(ModularTerms::new(
            self.mesh.quadrature(self.m),
            &g,
            &self.p_elem,
            Some(&self.theta_elem),
        )?
        .modular())
    }

    /// `||grad u||_{p,theta}` with element quadrature.
    pub fn gradient_norm(&self, u: &[f64]) -> Result<f64> {
        let g = self.mesh.gradient_magnitudes(u);
        Ok(ModularTerms::new(
            self.mesh.quadrature(self.m),
            &g,
            &self.p_elem,
            Some(&self.theta_elem),
        )?
        .luxemburg(LUXEMBURG_TOL)?
        .value)
    }
}

fn vector_at(g: &VectorField, flat: usize) -> [f64; 2] {
    let mut xi = [0.0; 2];
    for (a, x) in xi.iter_mut().enumerate().take(g.dim()) {
        *x = g.component(a)[flat];
    }
    xi
}

/// `<Gamma(u), phi>` for a zero-boundary test function.
pub fn pairing(
    u: &StochasticField,
    phi: &StochasticField,
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<OperatorPairing> {
    if !phi.zero_boundary() {
        return Err(Error::Domain(
            "test function must vanish on the boundary".into(),
        ));
    }
    u.check_shape(m)?;
    Assembly::new(p, v, m)?.pairing(&spec.kernel, u.values(), phi.values())
}

/// `E int [A(x,t,u1,grad u1) - A(x,t,u1,grad u2)] . grad(u1 - u2)`.
pub fn monotonicity_bracket(
    spec: &ProblemSpec,
    u1: &StochasticField,
    u2: &StochasticField,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
) -> Result<f64> {
    u1.check_shape(m)?;
    u2.check_shape(m)?;
    bracket_values(
        &Assembly::new(p, v, m)?,
        &spec.kernel,
        u1.values(),
        u2.values(),
    )
}

pub(crate) fn bracket_values(
    asm: &Assembly<'_>,
    kernel: &Kernel,
    u1: &[f64],
    u2: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (t, &prob) in asm.m.omega.probs().iter().enumerate() {
        let (a1, a2) = (asm.sample(u1, t), asm.sample(u2, t));
        let mut inner = 0.0;
        for e in 0..asm.mesh.len() {
            let xi1 = asm.mesh.gradient(e, a1);
            let xi2 = asm.mesh.gradient(e, a2);
            let s = asm.mesh.vertex_average(e, a1);
            let site = asm.element_site(e, t);
            let fa = kernel.flux(&site, s, xi1);
            let fb = kernel.flux(&site, s, xi2);
            let d = [fa[0] - fb[0], fa[1] - fb[1]];
            let term = dot(d, [xi1[0] - xi2[0], xi1[1] - xi2[1]]);
            if !term.is_finite() {
                return Err(Error::NonFinite {
                    node: asm.mesh.elements[e].nodes[0],
                    sample: t,
                    what: "monotonicity bracket".into(),
                });
            }
            inner += asm.mesh.elements[e].area * term;
        }
        total += prob * inner;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// growth conditions

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub node: usize,
    pub sample: usize,
    pub x: [f64; 2],
    pub t: f64,
    pub s: f64,
    pub xi: [f64; 2],
    pub mu: Option<[f64; 2]>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub checked: usize,
    pub skipped: usize,
    /// Smallest relative slack; negative means violated.
    pub worst_slack: f64,
    /// Largest `|slack|`; zero when the bound holds with equality.
    pub max_abs_slack: f64,
    pub pass: bool,
    /// Tuple attaining the worst slack.
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub n_draws: usize,
    pub seed: u64,
    /// `|A| <= beta theta^(1/p) [k + theta^(1/q) |xi|^(p-1)]`.
    pub flux_growth: ConditionCheck,
    /// `(A(xi) - A(mu)) . (xi - mu) > 0` for `xi != mu`.
    pub monotonicity: ConditionCheck,
    /// `A . xi >= alpha theta |xi|^p`.
    pub coercivity: ConditionCheck,
    /// `|A0| <= gamma + g(s) theta |xi|^(p-1)` (model kernel only).
    pub lower_bound: Option<ConditionCheck>,
    /// `g >= 0` at every drawn `s`.
    pub g_nonnegative: Option<bool>,
    /// Trapezoid estimate of `int |g|` over `[-1e3, 1e3]`.
    pub g_l1_estimate: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy)]
struct Draw {
    flat: usize,
    s: f64,
    xi: [f64; 2],
    mu: [f64; 2],
}

fn random_vector(rng: &mut impl Rng, dim: usize) -> [f64; 2] {
    let r = 10f64.powf(rng.gen_range(-3.0..3.0));
    if dim == 1 {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        [sign * r, 0.0]
    } else {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        [r * angle.cos(), r * angle.sin()]
    }
}

struct Acc {
    check: ConditionCheck,
}

impl Acc {
    fn new() -> Self {
        Self {
            check: ConditionCheck {
                checked: 0,
                skipped: 0,
                worst_slack: f64::INFINITY,
                max_abs_slack: 0.0,
                pass: true,
                witness: None,
            },
        }
    }

    fn record(&mut self, slack: f64, ok: bool, witness: impl FnOnce() -> Witness) {
        let c = &mut self.check;
        c.checked += 1;
        let slack = if slack.is_nan() {
            f64::NEG_INFINITY
        } else {
            slack
        };
        c.max_abs_slack = c.max_abs_slack.max(slack.abs());
        c.pass &= ok;
        if slack < c.worst_slack || c.witness.is_none() {
            c.worst_slack = slack;
            c.witness = Some(witness());
        }
    }

    fn finish(mut self) -> ConditionCheck {
        if self.check.checked == 0 {
            self.check.worst_slack = 0.0;
        }
        self.check
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    (a - b) / scale
}

/// Sampled verification of the growth conditions at `n_draws` random
/// `(node, sample, s, xi, mu)` tuples. Each draw has its own random stream,
/// so the report does not depend on the thread count.
pub fn check_growth(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    n_draws: usize,
    seed: u64,
) -> Result<GrowthReport> {
    spec.validate(m)?;
    m.check_len("exponent", p.values().len())?;
    m.check_len("weight", v.values().len())?;
    let dim = m.dim();
    let draws: Vec<Draw> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(seed, i as u64);
            let flat = rng.gen_range(0..m.len());
            let s = rng.gen_range(-10.0..10.0);
            let xi = random_vector(&mut rng, dim);
            let mu = if rng.gen_bool(0.05) {
                xi
            } else {
                random_vector(&mut rng, dim)
            };
            Draw { flat, s, xi, mu }
        })
        .collect();

    let (pv, wv) = (p.values(), v.values());
    let (kv, gv) = (spec.k.values(), spec.gamma.values());
    let kernel = &spec.kernel;
    let mut flux_growth = Acc::new();
    let mut monotonicity = Acc::new();
    let mut coercivity = Acc::new();
    let mut lower = Acc::new();
    let mut g_nonneg = true;
    for d in &draws {
        let (node, sample) = m.split(d.flat);
        let site = Site {
            x: m.grid.coords(node),
            t: m.omega.samples()[sample],
            theta: wv[d.flat],
            p: pv[d.flat],
        };
        let (pp, th) = (site.p, site.theta);
        let q = pp / (pp - 1.0);
        let witness = |mu: Option<[f64; 2]>, lhs: f64, rhs: f64| Witness {
            node,
            sample,
            x: site.x,
            t: site.t,
            s: d.s,
            xi: d.xi,
            mu,
            lhs,
            rhs,
        };
        let a = kernel.flux(&site, d.s, d.xi);
        let r = norm2(d.xi);

        let lhs = norm2(a);
        let rhs =
            spec.beta_c * th.powf(1.0 / pp) * (kv[d.flat] + th.powf(1.0 / q) * r.powf(pp - 1.0));
        let slack = rel(rhs, lhs);
        flux_growth.record(slack, slack >= GROWTH_TOL, || witness(None, lhs, rhs));

        let lhs = dot(a, d.xi);
        let rhs = spec.alpha_c * th * r.powf(pp);
        let slack = rel(lhs, rhs);
        coercivity.record(slack, slack >= GROWTH_TOL, || witness(None, lhs, rhs));

        let diff = [d.xi[0] - d.mu[0], d.xi[1] - d.mu[1]];
        if norm2(diff) < MIN_SEPARATION {
            monotonicity.check.skipped += 1;
        } else {
            let am = kernel.flux(&site, d.s, d.mu);
            let da = [a[0] - am[0], a[1] - am[1]];
            let bracket = dot(da, diff);
            let scale = (norm2(da) * norm2(diff)).max(f64::MIN_POSITIVE);
            monotonicity.record(bracket / scale, bracket > 0.0, || {
                witness(Some(d.mu), bracket, 0.0)
            });
        }

        if let Some(g) = kernel.g() {
            let gs = g.eval(d.s);
            g_nonneg &= gs >= 0.0;
            let lhs = kernel.lower(&site, d.s, d.xi).abs();
            let rhs = gv[d.flat] + gs * th * r.powf(pp - 1.0);
            let slack = rel(rhs, lhs);
            lower.record(slack, slack >= GROWTH_TOL, || witness(None, lhs, rhs));
        }
    }
    let g_l1_estimate = kernel.g().map(|g| {
        let (lo, hi, n) = (-1e3, 1e3, 200_001usize);
        let h = (hi - lo) / (n - 1) as f64;
        (0..n)
            .map(|i| {
                let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
                w * g.eval(lo + i as f64 * h).abs()
            })
            .sum::<f64>()
    });
    let flux_growth = flux_growth.finish();
    let monotonicity = monotonicity.finish();
    let coercivity = coercivity.finish();
    let lower_bound = kernel.g().map(|_| lower.finish());
    let pass = flux_growth.pass
        && monotonicity.pass
        && coercivity.pass
        && lower_bound.as_ref().is_none_or(|c| c.pass);
    Ok(GrowthReport {
        n_draws,
        seed,
        flux_growth,
        monotonicity,
        coercivity,
        lower_bound,
        g_nonnegative: kernel.g().map(|_| g_nonneg),
        g_l1_estimate,
        pass,
    })
}

// ---------------------------------------------------------------------------
// coercivity

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityRow {
    pub scale: f64,
    /// `<Gamma(c u0), c u0>`.
    pub pairing: f64,
    /// `||grad(c u0)||_{p,theta}`.
    pub gradient_norm: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub rows: Vec<CoercivityRow>,
    /// `1 +` least-squares slope of `log ratio` against `log ||grad u||`.
    pub fitted_r: f64,
    /// Ratio strictly increasing over the top half of the scales.
    pub increasing: bool,
    pub pass: bool,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn coercivity_probe(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    u0: &StochasticField,
    scales: &[f64],
) -> Result<CoercivityReport> {
    if scales.len() < 2 {
        return Err(Error::Insufficient(format!(
            "coercivity fit needs at least two scales, got {}",
            scales.len()
        )));
    }
    if scales.windows(2).any(|w| !(w[1] > w[0])) || scales[0] <= 0.0 {
        return Err(Error::Domain(
            "scales must be positive and increasing".into(),
        ));
    }
    if !u0.zero_boundary() {
        return Err(Error::Domain(
            "probe field must vanish on the boundary".into(),
        ));
    }
    u0.check_shape(m)?;
    let asm = Assembly::new(p, v, m)?;
    if asm.gradient_norm(u0.values())? == 0.0 {
        return Err(Error::UndefinedRatio(
            "probe field has zero gradient".into(),
        ));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &c in scales {
        let u = u0.scaled(c);
        let pr = asm.pairing(&spec.kernel, u.values(), u.values())?.total;
        let gn = asm.gradient_norm(u.values())?;
        rows.push(CoercivityRow {
            scale: c,
            pairing: pr,
            gradient_norm: gn,
            ratio: pr / gn,
        });
    }
    let top = &rows[rows.len() / 2..];
    let increasing = top.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let positive = rows.iter().all(|r| r.ratio > 0.0);
    let fitted_r = if positive {
        let x: Vec<f64> = rows.iter().map(|r| r.gradient_norm.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.ratio.ln()).collect();
        1.0 + fit_slope(&x, &y)
    } else {
        f64::NAN
    };
    Ok(CoercivityReport {
        rows,
        fitted_r,
        increasing,
        pass: increasing && fitted_r > 1.0,
    })
}

// ---------------------------------------------------------------------------
// boundedness

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundednessRow {
    /// `|<Gamma(u), phi>|`.
    pub lhs: f64,
    /// `rho_{p,theta}(|grad u|)`.
    pub z: f64,
    /// `1/q-` when `||A||_{q,theta*} >= 1`, else `1/q+`.
    pub theta_exp: f64,
    pub grad_phi_norm: f64,
    pub phi_norm: f64,
    /// `C (C1 + z)^theta ||grad phi||` plus the lower-order bound.
    pub bound: f64,
    /// `|<Gamma1(u), phi>| / ((C1 + z)^theta ||grad phi||)`.
    pub empirical_c: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessReport {
    /// `(1 + 1/p- - 1/p+) (max(beta^q-, beta^q+) 2^(q+ - 1))^theta` enters
    /// per row; this is its base `C_H`.
    pub holder_c: f64,
    /// `rho_q(k)`.
    pub c1: f64,
    pub rows: Vec<BoundednessRow>,
    /// Largest empirical constant.
    pub calibrated_c: f64,
    pub pass: bool,
}

/// Boundedness of the model operator on `(u, phi)` pairs:
/// `|<Gamma1 u, phi>| <= C (C1 + rho(grad u))^theta ||grad phi||` and
/// `|<Gamma2 u, phi>| <= C_H sup|g| rho(grad u)^eta ||phi||`.
pub fn boundedness_probe(
    spec: &ProblemSpec,
    p: &ExponentField,
    v: &WeightField,
    m: &ProductMeasureGrid,
    pairs: &[(StochasticField, StochasticField)],
) -> Result<BoundednessReport> {
    let g = spec
        .kernel
        .g()
        .ok_or_else(|| Error::Domain("boundedness probe applies to the model kernel".into()))?;
    if pairs.is_empty() {
        return Err(Error::Insufficient("no (u, phi) pairs".into()));
    }
    let asm = Assembly::new(p, v, m)?;
    let (pm, pp) = (p.p_minus(), p.p_plus());
    let (q_minus, q_plus) = (pp / (pp - 1.0), pm / (pm - 1.0));
    let holder_c = 1.0 + 1.0 / pm - 1.0 / pp;
    let b = spec.beta_c.powf(q_minus).max(spec.beta_c.powf(q_plus)) * 2f64.powf(q_plus - 1.0);
    let quad = m.nodal();
    let kv = spec.k.values();
    let c1 = quad.sum(|i| kv[i].abs().powf(pv_q(p.values()[i])));
    let mut rows = Vec::with_capacity(pairs.len());
    for (u, phi) in pairs {
        u.check_shape(m)?;
        phi.check_shape(m)?;
        let pr = asm.pairing(&spec.kernel, u.values(), phi.values())?;
        let z = asm.gradient_modular(u.values())?;
        let norm_a = flux_dual_norm(&asm, &spec.kernel, u.values())?;
        let theta_exp = if norm_a >= 1.0 {
            1.0 / q_minus
        } else {
            1.0 / q_plus
        };
        let grad_phi_norm = asm.gradient_norm(phi.values())?;
        let phi_norm = ModularTerms::new(quad, phi.values(), p.values(), Some(v.values()))?
            .luxemburg(LUXEMBURG_TOL)?
            .value;
        let gamma1_bound = holder_c * (b * (c1 + z)).powf(theta_exp) * grad_phi_norm;
        let lower_bound = if g.is_zero() {
            0.0
        } else {
            let gsup = u
                .values()
                .iter()
                .map(|s| g.eval(*s).abs())
                .fold(0.0, f64::max);
            let grad = nodal_gradient(u.values(), m)?.magnitude();
            let z_nodal = ModularTerms::new(quad, &grad, p.values(), Some(v.values()))?.modular();
            let norm_lower = lower_dual_norm(&grad, p.values(), v.values(), m)?;
            let eta = if norm_lower >= 1.0 {
                1.0 / q_minus
            } else {
                1.0 / q_plus
            };
            holder_c * gsup * z_nodal.powf(eta) * phi_norm
        };
        let lhs = pr.total.abs();
        let bound = gamma1_bound + lower_bound;
        let denom = (c1 + z).powf(theta_exp) * grad_phi_norm;
        rows.push(BoundednessRow {
            lhs,
            z,
            theta_exp,
            grad_phi_norm,
            phi_norm,
            bound,
            empirical_c: if denom > 0.0 {
                pr.gamma1_part.abs() / denom
            } else {
                0.0
            },
            pass: lhs <= bound * (1.0 + 1e-9) + 1e-12,
        });
    }
    let calibrated_c = rows.iter().map(|r| r.empirical_c).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    Ok(BoundednessReport {
        holder_c,
        c1,
        rows,
        calibrated_c,
        pass,
    })
}

fn pv_q(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `||A(grad u)||_{q,theta*}` with element quadrature.
fn flux_dual_norm(asm: &Assembly<'_>, kernel: &Kernel, u: &[f64]) -> Result<f64> {
    let ne = asm.mesh.len();
    let mut mag = Vec::with_capacity(ne * asm.m.n_samples());
    for t in 0..asm.m.n_samples() {
        for e in 0..ne {
            let (a, _) = asm.element_flux(kernel, u, e, t, FluxMode::Exact)?;
            mag.push(norm2(a));
        }
    }
    let q: Vec<f64> = asm.p_elem.iter().map(|p| pv_q(*p)).collect();
    let w: Vec<f64> = asm
        .theta_elem
        .iter()
        .zip(&q)
        .map(|(t, q)| t.powf(1.0 - q))
        .collect();
    Ok(
        ModularTerms::new(asm.mesh.quadrature(asm.m), &mag, &q, Some(&w))?
            .luxemburg(LUXEMBURG_TOL)?
            .value,
    )
}

/// `||theta |grad u|^(p-1)||_{q,theta*}` with nodal quadrature.
fn lower_dual_norm(grad: &[f64], p: &[f64], theta: &[f64], m: &ProductMeasureGrid) -> Result<f64> {
    let vals: Vec<f64> = grad
        .iter()
        .zip(p)
        .zip(theta)
        .map(|((g, p), t)| t * g.powf(p - 1.0))
        .collect();
    let q: Vec<f64> = p.iter().map(|p| pv_q(*p)).collect();
    let w: Vec<f64> = theta.iter().zip(&q).map(|(t, q)| t.powf(1.0 - q)).collect();
    Ok(ModularTerms::new(m.nodal(), &vals, &q, Some(&w))?
        .luxemburg(LUXEMBURG_TOL)?
        .value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_grid::{build_grid, unit_interval};
    use std::f64::consts::PI;

    fn sine(m: &ProductMeasureGrid) -> StochasticField {
        StochasticField::from_fn(m, &|x: &[f64], _t: f64| (PI * x[0]).sin()).clamp_boundary(m)
    }

    fn model(m: &ProductMeasureGrid) -> ProblemSpec {
        ProblemSpec::model(m, GFn::zero(), StochasticField::zeros(m))
    }

    #[test]
    fn mesh_areas_cover_the_box() {
        let m = build_grid(2, &[(0.0, 2.0), (0.0, 1.0)], &[5, 4], vec![0.0], vec![1.0]).unwrap();
        let mesh = ElementMesh::new(&m.grid);
        assert_eq!(mesh.len(), 2 * 4 * 3);
        let total: f64 = mesh.elements.iter().map(|e| e.area).sum();
        assert!((total - 2.0).abs() < 1e-14);
        // hat gradients sum to zero on every element
        for e in &mesh.elements {
            let s0: f64 = e.grads.iter().map(|g| g[0]).sum();
            let s1: f64 = e.grads.iter().map(|g| g[1]).sum();
            assert!(s0.abs() < 1e-12 && s1.abs() < 1e-12);
        }
        // linear functions have exact element gradients
        let u: Vec<f64> = (0..m.n_nodes())
            .map(|k| {
                let c = m.grid.coords(k);
                3.0 * c[0] - 2.0 * c[1]
            })
            .collect();
        for e in 0..mesh.len() {
            let g = mesh.gradient(e, &u);
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pairing_examples() {
        let m = unit_interval(401).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let spec = model(&m);
        let u = sine(&m);
        let r = pairing(&u, &u, &spec, &p, &v, &m).unwrap();
        assert!((r.gamma1_part - PI * PI / 2.0).abs() < 1e-3);
        assert_eq!(r.total, r.gamma1_part + r.gamma2_part);
        let zero = StochasticField::zeros(&m).clamp_boundary(&m);
        let r0 = pairing(&zero, &u, &spec, &p, &v, &m).unwrap();
        assert_eq!((r0.gamma1_part, r0.gamma2_part, r0.total), (0.0, 0.0, 0.0));
        assert_eq!(pairing(&u, &zero, &spec, &p, &v, &m).unwrap().total, 0.0);
    }

    #[test]
    fn bracket_examples() {
        let m = unit_interval(401).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let spec = model(&m);
        let u = sine(&m);
        let z = StochasticField::zeros(&m);
        assert_eq!(
            monotonicity_bracket(&spec, &u, &u, &p, &v, &m).unwrap(),
            0.0
        );
        let b = monotonicity_bracket(&spec, &u, &z, &p, &v, &m).unwrap();
        assert!((b - PI * PI / 2.0).abs() < 1e-3);
    }

    #[test]
    fn model_kernel_growth() {
        let m = build_grid(1, &[(0.0, 1.0)], &[21], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let p = ExponentField::from_fn(&m, &|x: &[f64], t: f64| 1.5 + 2.5 * x[0] * (0.5 + 0.5 * t))
            .unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], t: f64| 0.5 + x[0] + t).unwrap();
        let spec = model(&m);
        let r = check_growth(&spec, &p, &v, &m, 2000, 3).unwrap();
        assert!(r.pass, "{r:?}");
        assert!(r.flux_growth.max_abs_slack < 1e-12);
        assert!(r.coercivity.max_abs_slack < 1e-12);
        assert!(r.monotonicity.skipped > 0);
        let mut broken = spec.clone();
        broken.beta_c = 0.5;
        let r = check_growth(&broken, &p, &v, &m, 200, 3).unwrap();
        assert!(!r.flux_growth.pass);
        let w = r.flux_growth.witness.unwrap();
        assert!(w.lhs > w.rhs);
    }

    #[test]
    fn growth_is_deterministic() {
        let m = unit_interval(11).unwrap();
        let p = ExponentField::constant(&m, 3.0).unwrap();
        let v = WeightField::unit(&m);
        let spec = model(&m);
        let a = check_growth(&spec, &p, &v, &m, 500, 9).unwrap();
        let b = check_growth(&spec, &p, &v, &m, 500, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coercivity_of_quadratic_energy() {
        let m = unit_interval(201).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let v = WeightField::unit(&m);
        let spec = model(&m);
        let r = coercivity_probe(&spec, &p, &v, &m, &sine(&m), &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(r.pass);
        assert!((r.fitted_r - 2.0).abs() < 1e-9);
        assert!(matches!(
            coercivity_probe(&spec, &p, &v, &m, &sine(&m), &[1.0]),
            Err(Error::Insufficient(_))
        ));
    }

    #[test]
    fn custom_kernel_matches_model() {
        let m = unit_interval(51).unwrap();
        let p = ExponentField::constant(&m, 3.0).unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
        let custom = ProblemSpec {
            kernel: Kernel::custom(&["theta * abs(xi1)^(p-2) * xi1"], "0", 1).unwrap(),
            ..model(&m)
        };
        let u = StochasticField::from_fn(&m, &|x: &[f64], _t: f64| x[0] * x[0] - x[0]);
        let phi = sine(&m);
        let a = pairing(&u, &phi, &model(&m), &p, &v, &m).unwrap().total;
        let b = pairing(&u, &phi, &custom, &p, &v, &m).unwrap().total;
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn boundedness_holds_on_model() {
        let m = unit_interval(101).unwrap();
        let p = ExponentField::from_fn(&m, &|x: &[f64], _t: f64| 1.6 + x[0]).unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
        let spec = ProblemSpec::model(
            &m,
            GFn::parse("1/(1+s^2)").unwrap(),
            StochasticField::zeros(&m),
        );
        let pairs: Vec<_> = [0.01, 0.3, 1.0, 5.0, 40.0]
            .iter()
            .map(|&c| {
                (
                    sine(&m).scaled(c),
                    sine(&m).map(|x| x * x).clamp_boundary(&m),
                )
            })
            .collect();
        let r = boundedness_probe(&spec, &p, &v, &m, &pairs).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
