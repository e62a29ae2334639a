//! JSON run configuration.
//!
//! ```json
//! {
//!   "grid": {"dim": 1, "bounds": [[0, 1]], "n": [401],
//!            "omega": {"samples": [0], "probs": [1]}},
//!   "fields": {"p": {"kind": "constant", "value": 4},
//!              "f": {"kind": "expr", "formula": "1 + x"}},
//!   "problem": {"kind": "p_laplacian_with_g",
//!               "g": {"kind": "constant", "value": 0}},
//!   "solver": {"eps_reg": 1e-6},
//!   "seed": 42
//! }
//! ```

use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fields::{AuxExponentField, ExponentField, FieldExpr, StochasticField, WeightField};
use crate::measure_grid::{build_grid, ProductMeasureGrid};
use crate::operator::{GFn, Kernel, ProblemSpec};
use crate::solver::SolveConfig;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    #[serde(default)]
    pub fields: FieldSpecs,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolveConfig,
    #[serde(default)]
    pub suite: SuiteConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
    pub n: Vec<usize>,
    #[serde(default)]
    pub omega: OmegaSpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSpec {
    pub samples: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Default for OmegaSpec {
    fn default() -> Self {
        Self {
            samples: vec![0.0],
            probs: vec![1.0],
        }
    }
}

/// `{"kind": "constant", "value": ...}` or `{"kind": "expr", "formula": ...}`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldSpec {
    Constant { value: f64 },
    Expr { formula: String },
}

impl FieldSpec {
    pub fn constant(value: f64) -> Self {
        FieldSpec::Constant { value }
    }

    fn expr(&self, key: &str) -> Result<FieldExpr> {
        match self {
            FieldSpec::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::config(key, "constant must be finite"));
                }
                Ok(FieldExpr::constant(*value))
            }
            FieldSpec::Expr { formula } => {
                FieldExpr::parse(formula).map_err(|e| Error::config(key, e.to_string()))
            }
        }
    }

    fn g(&self, key: &str) -> Result<GFn> {
        match self {
            FieldSpec::Constant { value } => Ok(GFn::constant(*value)),
            FieldSpec::Expr { formula } => {
                GFn::parse(formula).map_err(|e| Error::config(key, e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpecs {
    pub p: Option<FieldSpec>,
    pub s: Option<FieldSpec>,
    pub weight: Option<FieldSpec>,
    pub u: Option<FieldSpec>,
    pub f: Option<FieldSpec>,
    pub gamma: Option<FieldSpec>,
    pub k: Option<FieldSpec>,
    /// Exponent `alpha` of the weighted embedding check.
    pub alpha: Option<FieldSpec>,
    /// Exact solution for refinement studies.
    pub exact: Option<FieldSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[default]
    PLaplacianWithG,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub kind: ProblemKind,
    /// `g(s)` of the model kernel; formulas use the variable `s`.
    pub g: Option<FieldSpec>,
    /// Flux components of a custom kernel over
    /// `x, y, t, s, xi1, xi2, theta, p`.
    pub flux: Option<Vec<String>>,
    /// Lower-order term of a custom kernel.
    pub lower: Option<String>,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            kind: ProblemKind::default(),
            g: None,
            flux: None,
            lower: None,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Random draws for holder, prop2 and growth.
    pub draws: usize,
    /// Range of the random exponents.
    pub p_range: [f64; 2],
    /// Random magnitudes span `10^[-log_span, log_span]`.
    pub log_span: f64,
    pub calibration: usize,
    pub holdout: usize,
    pub poincare_modes: usize,
    /// Largest sequence index of the weak-convergence panel (powers of two
    /// from 1).
    pub weakconv_max_index: usize,
    /// Sequences with a larger norm are refused by the panel.
    pub norm_bound: f64,
    pub scales: Vec<f64>,
    /// Random pairs for the monotonicity probe.
    pub pairs: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            draws: 1000,
            p_range: [1.5, 4.0],
            log_span: 2.0,
            calibration: 100,
            holdout: 200,
            poincare_modes: 10,
            weakconv_max_index: 1024,
            norm_bound: 10.0,
            scales: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            pairs: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// Parses a config, naming the offending key on failure.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        Error::config(key, e.inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        let s = &self.suite;
        if !(s.p_range[0] > 1.0 && s.p_range[1] >= s.p_range[0] && s.p_range[1].is_finite()) {
            return Err(Error::config("suite.p_range", "need 1 < lo <= hi < inf"));
        }
        if !(s.log_span >= 0.0) {
            return Err(Error::config("suite.log_span", "must be nonnegative"));
        }
        if !(self.problem.alpha > 0.0) {
            return Err(Error::config("problem.alpha", "must be positive"));
        }
        if !(self.problem.beta > 0.0) {
            return Err(Error::config("problem.beta", "must be positive"));
        }
        if self.problem.kind == ProblemKind::Custom && self.problem.flux.is_none() {
            return Err(Error::config(
                "problem.flux",
                "custom kernels need flux components",
            ));
        }
        Ok(())
    }

    pub fn measure(&self) -> Result<ProductMeasureGrid> {
        let g = &self.grid;
        let bounds: Vec<(f64, f64)> = g.bounds.iter().map(|b| (b[0], b[1])).collect();
        build_grid(
            g.dim,
            &bounds,
            &g.n,
            g.omega.samples.clone(),
            g.omega.probs.clone(),
        )
        .map_err(|e| Error::config("grid", e.to_string()))
    }

    fn field_fn(&self, key: &str, spec: Option<&FieldSpec>, default: f64) -> Result<FieldExpr> {
        match spec {
            Some(s) => s.expr(&format!("fields.{key}")),
            None => Ok(FieldExpr::constant(default)),
        }
    }

    pub fn exponent(&self, m: &ProductMeasureGrid) -> Result<ExponentField> {
        let f = self.field_fn("p", self.fields.p.as_ref(), 2.0)?;
        ExponentField::from_fn(m, &f).map_err(|e| Error::config("fields.p", e.to_string()))
    }

    pub fn aux_exponent(&self, m: &ProductMeasureGrid) -> Result<AuxExponentField> {
        let f = self.field_fn("s", self.fields.s.as_ref(), 1.0)?;
        AuxExponentField::from_fn(m, &f).map_err(|e| Error::config("fields.s", e.to_string()))
    }

    pub fn weight(&self, m: &ProductMeasureGrid) -> Result<WeightField> {
        let f = self.field_fn("weight", self.fields.weight.as_ref(), 1.0)?;
        WeightField::from_fn(m, &f).map_err(|e| Error::config("fields.weight", e.to_string()))
    }

    /// Field `key` evaluated on the grid; non-finite values are rejected.
    pub fn scalar(
        &self,
        key: &str,
        m: &ProductMeasureGrid,
        default: f64,
    ) -> Result<StochasticField> {
        let spec = match key {
            "u" => self.fields.u.as_ref(),
            "f" => self.fields.f.as_ref(),
            "gamma" => self.fields.gamma.as_ref(),
            "k" => self.fields.k.as_ref(),
            "alpha" => self.fields.alpha.as_ref(),
            "exact" => self.fields.exact.as_ref(),
            _ => return Err(Error::config(format!("fields.{key}"), "unknown field")),
        };
        let f = self.field_fn(key, spec, default)?;
        let field = StochasticField::from_fn(m, &f);
        if let Some(i) = field.values().iter().position(|v| !v.is_finite()) {
            let (t, node) = m.split(i);
            return Err(Error::config(
                format!("fields.{key}"),
                format!("non-finite value at node {node}, sample {t}"),
            ));
        }
        Ok(field)
    }

    pub fn has_field(&self, key: &str) -> bool {
        match key {
            "u" => self.fields.u.is_some(),
            "exact" => self.fields.exact.is_some(),
            "alpha" => self.fields.alpha.is_some(),
            _ => false,
        }
    }

    pub fn exact_fn(&self) -> Result<Option<FieldExpr>> {
        self.fields
            .exact
            .as_ref()
            .map(|s| s.expr("fields.exact"))
            .transpose()
    }

    pub fn kernel(&self, m: &ProductMeasureGrid) -> Result<Kernel> {
        match self.problem.kind {
            ProblemKind::PLaplacianWithG => {
                if self.problem.flux.is_some() || self.problem.lower.is_some() {
                    return Err(Error::config(
                        "problem.flux",
                        "flux and lower apply to custom kernels only",
                    ));
                }
                let g = match &self.problem.g {
                    Some(s) => s.g("problem.g")?,
                    None => GFn::zero(),
                };
                Ok(Kernel::model(g))
            }
            ProblemKind::Custom => {
                let flux = self.problem.flux.as_ref().expect("validated");
                let refs: Vec<&str> = flux.iter().map(String::as_str).collect();
                let lower = self.problem.lower.as_deref().unwrap_or("0");
                Kernel::custom(&refs, lower, m.dim())
                    .map_err(|e| Error::config("problem.flux", e.to_string()))
            }
        }
    }

    pub fn problem_spec(&self, m: &ProductMeasureGrid) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            kernel: self.kernel(m)?,
            f: self.scalar("f", m, 1.0)?,
            gamma: self.scalar("gamma", m, 0.0)?,
            k: self.scalar("k", m, 0.0)?,
            alpha_c: self.problem.alpha,
            beta_c: self.problem.beta,
        };
        spec.validate(m)
            .map_err(|e| Error::config("problem", e.to_string()))?;
        Ok(spec)
    }

    /// Problem data rebuilt on another grid (refinement levels).
    pub fn problem_on(
        &self,
        m: &ProductMeasureGrid,
    ) -> Result<(ProblemSpec, ExponentField, WeightField)> {
        Ok((self.problem_spec(m)?, self.exponent(m)?, self.weight(m)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"grid": {"dim": 1, "bounds": [[0, 1]], "n": [11]}}"#;

    #[test]
    fn defaults_fill_in() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.grid.omega.probs, vec![1.0]);
        let m = c.measure().unwrap();
        assert_eq!(c.exponent(&m).unwrap().p_plus(), 2.0);
        assert!(c.kernel(&m).unwrap().is_model());
        assert_eq!(c.suite.draws, 1000);
    }

    #[test]
    fn errors_name_the_key() {
        let bad = r#"{"grid": {"dim": 1, "bounds": [[0, 1]], "n": [11]},
                      "fields": {"p": {"kind": "expr", "formula": "2 + z"}}}"#;
        let c = parse_config(bad).unwrap();
        let m = c.measure().unwrap();
        match c.exponent(&m) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "fields.p"),
            other => panic!("{other:?}"),
        }
        let typo = r#"{"grid": {"dim": 1, "bounds": [[0, 1]], "n": [11]},
                       "solver": {"eps_reg": "small"}}"#;
        match parse_config(typo) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "solver.eps_reg"),
            other => panic!("{other:?}"),
        }
        let damping = r#"{"grid": {"dim": 1, "bounds": [[0, 1]], "n": [11]},
                          "solver": {"damping": 1.5}}"#;
        match parse_config(damping) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "solver.damping"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("{"), Err(Error::Config { .. })));
    }

    #[test]
    fn exponent_below_one_is_rejected() {
        let c = parse_config(
            r#"{"grid": {"dim": 1, "bounds": [[0, 1]], "n": [11]},
                "fields": {"p": {"kind": "constant", "value": 0.5}}}"#,
        )
        .unwrap();
        let m = c.measure().unwrap();
        assert!(matches!(c.exponent(&m), Err(Error::Config { .. })));
    }
}
