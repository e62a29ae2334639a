//! Command-line front end.
//!
//! Exit codes: 0 when everything passed, 1 on a failed check or a solver
//! that did not converge, 2 on configuration errors.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{load_config, RunConfig};
use crate::embeddings::{
    calibrate_chain, check_embedding_chain, check_holder, poincare_constant, validate_chain,
    weak_convergence_panel, ChainConstants, ChainValidation, PoincareEstimate,
    WeakConvergenceReport,
};
use crate::error::{Error, Result};
use crate::families::{
    chain_calibration_family, chain_holdout_family, draw_rng, random_exponent, random_field,
    random_weight, random_zero_boundary_field,
};
use crate::fields::{validate_weight, FieldFn, StochasticField};
use crate::measure_grid::ProductMeasureGrid;
use crate::modular_norm::{check_prop2, luxemburg_norm, modular, LUXEMBURG_TOL};
use crate::operator::{check_growth, coercivity_probe, monotonicity_bracket, Assembly};
use crate::solver::{refine_study, solve_ensemble, IterateDiagnostic, SolveReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const THREADS_ENV: &str = "VAREX_THREADS";
const UNIT_MODULAR_TOL: f64 = 1e-8;
const MONOTONE_MIN_GAP: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(
    name = "varex",
    version,
    about = "Weighted variable-exponent spaces: norms, inequality checks, operator probes and solves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Report directory (default: `output.dir` of the config, else `varex-out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Luxemburg norm of `fields.u`.
    Norm(Common),
    /// Randomized or structured inequality suite.
    Check {
        #[arg(long, value_enum)]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Operator probe.
    Probe {
        #[arg(long, value_enum)]
        check: Probe,
        #[command(flatten)]
        common: Common,
    },
    /// Solve every sample and aggregate the ensemble.
    Solve(Common),
    /// Solve on successively refined grids.
    Refine {
        #[arg(long)]
        levels: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Holder,
    Prop2,
    Poincare,
    Chain,
    Weakconv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Probe {
    Growth,
    Coercivity,
    Monotone,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Holder => "holder",
            Suite::Prop2 => "prop2",
            Suite::Poincare => "poincare",
            Suite::Chain => "chain",
            Suite::Weakconv => "weakconv",
        }
    }
}

impl Probe {
    fn name(self) -> &'static str {
        match self {
            Probe::Growth => "growth",
            Probe::Coercivity => "coercivity",
            Probe::Monotone => "monotone",
        }
    }
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    match dispatch(cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. }
        | Error::Json(_)
        | Error::Expr(_)
        | Error::Construction(_)
        | Error::Dimension(_)
        | Error::Domain(_)
        | Error::Hypothesis(_)
        | Error::Insufficient(_) => EXIT_CONFIG,
        _ => EXIT_FAIL,
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Error::config(
            THREADS_ENV,
            format!("expected a positive integer, got `{raw}`"),
        )
    })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

struct Context {
    cfg: RunConfig,
    m: ProductMeasureGrid,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> Result<Self> {
        let cfg = load_config(&common.config)?;
        let m = cfg.measure()?;
        let seed = common.seed.unwrap_or(cfg.seed);
        let out = common
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("varex-out"));
        Ok(Self { cfg, m, seed, out })
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Norm(c) => run_norm(&Context::new(&c)?),
        Command::Check { suite, common } => run_check(&Context::new(&common)?, suite),
        Command::Probe { check, common } => run_probe(&Context::new(&common)?, check),
        Command::Solve(c) => run_solve(&Context::new(&c)?),
        Command::Refine { levels, common } => run_refine(&Context::new(&common)?, levels),
    }
}

// ---------------------------------------------------------------------------
// output

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Serialize)]
struct CaseRow {
    case_id: String,
    lhs: f64,
    rhs: f64,
    pass: bool,
}

impl CaseRow {
    fn new(case_id: impl Into<String>, lhs: f64, rhs: f64, pass: bool) -> Self {
        Self {
            case_id: case_id.into(),
            lhs,
            rhs,
            pass,
        }
    }
}

#[derive(Debug, Serialize)]
struct SuiteSummary<T: Serialize> {
    suite: &'static str,
    seed: u64,
    cases: usize,
    passed: usize,
    pass: bool,
    details: T,
}

fn finish_suite<T: Serialize>(
    ctx: &Context,
    suite: Suite,
    rows: &[CaseRow],
    details: T,
    extra_pass: bool,
) -> Result<bool> {
    let name = suite.name();
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                name.to_string(),
                r.case_id.clone(),
                fmt_float(r.lhs),
                fmt_float(r.rhs),
                r.pass.to_string(),
            ]
        })
        .collect();
    write_csv(
        &ctx.out.join(format!("check_{name}.csv")),
        &["suite", "case_id", "lhs", "rhs", "pass"],
        &csv_rows,
    )?;
    let passed = rows.iter().filter(|r| r.pass).count();
    let pass = passed == rows.len() && extra_pass;
    write_json(
        &ctx.out.join(format!("check_{name}.json")),
        &SuiteSummary {
            suite: name,
            seed: ctx.seed,
            cases: rows.len(),
            passed,
            pass,
            details,
        },
    )?;
    println!(
        "{name}: {passed}/{} cases pass{}",
        rows.len(),
        if pass { "" } else { " -- FAIL" }
    );
    Ok(pass)
}

// ---------------------------------------------------------------------------
// norm

#[derive(Debug, Serialize)]
struct NormReport {
    value: f64,
    modular_at_unit: f64,
    iterations: usize,
    modular: f64,
}

fn run_norm(ctx: &Context) -> Result<bool> {
    if ctx.cfg.fields.u.is_none() {
        return Err(Error::config(
            "fields.u",
            "the norm subcommand needs a field u",
        ));
    }
    let u = ctx.cfg.scalar("u", &ctx.m, 0.0)?;
    let p = ctx.cfg.exponent(&ctx.m)?;
    let v = ctx.cfg.weight(&ctx.m)?;
    let n = luxemburg_norm(&u, &p, &v, &ctx.m, LUXEMBURG_TOL)?;
    let report = NormReport {
        value: n.value,
        modular_at_unit: n.modular_at_unit,
        iterations: n.iterations,
        modular: modular(&u, &p, &v, &ctx.m)?,
    };
    write_json(&ctx.out.join("norm.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(true)
}

// ---------------------------------------------------------------------------
// check

fn run_check(ctx: &Context, suite: Suite) -> Result<bool> {
    match suite {
        Suite::Holder => check_holder_suite(ctx),
        Suite::Prop2 => check_prop2_suite(ctx),
        Suite::Poincare => check_poincare_suite(ctx),
        Suite::Chain => check_chain_suite(ctx),
        Suite::Weakconv => check_weakconv_suite(ctx),
    }
}

fn check_holder_suite(ctx: &Context) -> Result<bool> {
    let s = &ctx.cfg.suite;
    let m = &ctx.m;
    let rows = (0..s.draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(ctx.seed, i as u64);
            let p = random_exponent(m, &mut rng, s.p_range[0], s.p_range[1])?;
            let v = random_weight(m, &mut rng)?;
            let f = random_field(m, &mut rng, s.log_span);
            let g = random_field(m, &mut rng, s.log_span);
            let r = check_holder(&f, &g, &p, &v, m)?;
            Ok(CaseRow::new(i.to_string(), r.lhs, r.rhs, r.pass))
        })
        .collect::<Result<Vec<_>>>()?;
    finish_suite(ctx, Suite::Holder, &rows, (), true)
}

fn check_prop2_suite(ctx: &Context) -> Result<bool> {
    let s = &ctx.cfg.suite;
    let m = &ctx.m;
    let rows: Vec<Vec<CaseRow>> = (0..s.draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = draw_rng(ctx.seed, i as u64);
            let p = random_exponent(m, &mut rng, s.p_range[0], s.p_range[1])?;
            let v = random_weight(m, &mut rng)?;
            let u = random_field(m, &mut rng, s.log_span);
            let r = check_prop2(&u, &p, &v, m)?;
            let mut out = Vec::with_capacity(3);
            for (tag, c) in [("large", r.large_chain), ("small", r.small_chain)] {
                if let Some(c) = c {
                    out.push(CaseRow::new(
                        format!("{i}/{tag}/lower"),
                        c.lower,
                        r.modular,
                        c.pass,
                    ));
                    out.push(CaseRow::new(
                        format!("{i}/{tag}/upper"),
                        r.modular,
                        c.upper,
                        c.pass,
                    ));
                }
            }
            let unit = modular(&u.scaled(1.0 / r.norm), &p, &v, m)?;
            out.push(CaseRow::new(
                format!("{i}/unit"),
                unit,
                1.0,
                (unit - 1.0).abs() <= UNIT_MODULAR_TOL,
            ));
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<CaseRow> = rows.into_iter().flatten().collect();
    finish_suite(ctx, Suite::Prop2, &rows, (), true)
}

/// `sin(k pi x)`, times `sin(pi y)` in two dimensions, on the unit-scaled box.
fn sine_mode(m: &ProductMeasureGrid, k: usize) -> StochasticField {
    let b = m.grid.bounds().to_vec();
    let dim = m.dim();
    let f = move |x: &[f64], _t: f64| {
        let ux = (x[0] - b[0].0) / (b[0].1 - b[0].0);
        let fy = if dim == 2 {
            (std::f64::consts::PI * (x[1] - b[1].0) / (b[1].1 - b[1].0)).sin()
        } else {
            1.0
        };
        (k as f64 * std::f64::consts::PI * ux).sin() * fy
    };
    StochasticField::from_fn(m, &f).clamp_boundary(m)
}

fn check_poincare_suite(ctx: &Context) -> Result<bool> {
    let m = &ctx.m;
    let p = ctx.cfg.exponent(m)?;
    let v = ctx.cfg.weight(m)?;
    let family: Vec<StochasticField> = (1..=ctx.cfg.suite.poincare_modes.max(1))
        .map(|k| sine_mode(m, k))
        .collect();
    let est: PoincareEstimate = poincare_constant(&family, &p, &v, m)?;
    let rows: Vec<CaseRow> = est
        .ratios
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let decreasing = j == 0 || r < est.ratios[j - 1];
            CaseRow::new(
                format!("k{}", j + 1),
                r,
                est.sup,
                r <= est.sup && decreasing,
            )
        })
        .collect();
    finish_suite(ctx, Suite::Poincare, &rows, est, true)
}

#[derive(Debug, Serialize)]
struct ChainDetails {
    calibration: usize,
    validation: ChainValidation,
    weight: crate::fields::WeightReport,
}

fn check_chain_suite(ctx: &Context) -> Result<bool> {
    let m = &ctx.m;
    let s = &ctx.cfg.suite;
    let p = ctx.cfg.exponent(m)?;
    let aux = ctx.cfg.aux_exponent(m)?;
    let mut v = ctx.cfg.weight(m)?;
    let weight = validate_weight(&v, &p, &aux, m)?;
    v.mark_validated(&weight);
    let eval = |family: Vec<StochasticField>| {
        family
            .par_iter()
            .map(|u| check_embedding_chain(u, &p, &aux, &v, m))
            .collect::<Result<Vec<_>>>()
    };
    let calib = eval(chain_calibration_family(
        m,
        &p,
        &aux,
        &v,
        ctx.seed,
        s.calibration,
        s.log_span,
    ))?;
    let holdout = eval(chain_holdout_family(m, ctx.seed, s.holdout, s.log_span))?;
    let constants: ChainConstants = calibrate_chain(&calib)?;
    let validation = validate_chain(&holdout, &constants);
    let cs = [
        constants.gradient_modular,
        constants.gradient_power,
        constants.gradient_norm,
        constants.field_norm,
    ];
    let mut rows = Vec::with_capacity(4 * holdout.len());
    for (i, r) in holdout.iter().enumerate() {
        let holds = r.holds(&constants);
        for (k, side) in r.sides().iter().enumerate() {
            rows.push(CaseRow::new(
                format!("{i}/eq{}", k + 6),
                side.lhs,
                cs[k] * side.rhs,
                holds[k],
            ));
        }
    }
    let extra = validation.theory_violations == 0;
    finish_suite(
        ctx,
        Suite::Chain,
        &rows,
        ChainDetails {
            calibration: calib.len(),
            validation,
            weight,
        },
        extra,
    )
}

/// Sequence indices `1, 2, 4, ...` up to `max_index`.
pub fn weakconv_indices(max_index: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |n| n.checked_mul(2))
        .take_while(|n| *n <= max_index.max(1))
        .collect()
}

fn check_weakconv_suite(ctx: &Context) -> Result<bool> {
    let m = &ctx.m;
    let p = ctx.cfg.exponent(m)?;
    let v = ctx.cfg.weight(m)?;
    let b0 = m.grid.bounds()[0];
    let indices = weakconv_indices(ctx.cfg.suite.weakconv_max_index);
    let seq: Vec<StochasticField> = indices
        .iter()
        .map(|&n| {
            let f = move |x: &[f64], _t: f64| ((x[0] - b0.0) / (b0.1 - b0.0)).powi(n as i32);
            StochasticField::from_fn(m, &f)
        })
        .collect();
    let limit = StochasticField::zeros(m);
    let duals: Vec<StochasticField> = vec![
        StochasticField::constant(m, 1.0),
        StochasticField::from_fn(m, &|x: &[f64], _t: f64| x[0]),
        sine_mode(m, 1),
    ];
    let report: WeakConvergenceReport =
        weak_convergence_panel(&seq, &limit, &duals, &p, &v, m, ctx.cfg.suite.norm_bound)?;
    let mut rows = Vec::new();
    for (j, d) in report.duals.iter().enumerate() {
        for (k, pr) in d.pairings.iter().enumerate() {
            rows.push(CaseRow::new(
                format!("g{j}/n{}", indices[k]),
                *pr,
                d.limit,
                d.pass,
            ));
        }
    }
    let pass = report.pass;
    finish_suite(ctx, Suite::Weakconv, &rows, report, pass)
}

// ---------------------------------------------------------------------------
// probe

#[derive(Debug, Serialize)]
struct ProbeSummary<T: Serialize> {
    check: &'static str,
    seed: u64,
    pass: bool,
    report: T,
}

fn finish_probe<T: Serialize>(ctx: &Context, probe: Probe, pass: bool, report: T) -> Result<bool> {
    let name = probe.name();
    write_json(
        &ctx.out.join(format!("probe_{name}.json")),
        &ProbeSummary {
            check: name,
            seed: ctx.seed,
            pass,
            report,
        },
    )?;
    println!("{name}: {}", if pass { "pass" } else { "FAIL" });
    Ok(pass)
}

#[derive(Debug, Serialize)]
struct MonotoneRow {
    pair: usize,
    bracket: f64,
    max_gradient_gap: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct MonotoneReport {
    rows: Vec<MonotoneRow>,
    min_bracket: f64,
    skipped: usize,
}

fn run_probe(ctx: &Context, probe: Probe) -> Result<bool> {
    let m = &ctx.m;
    let spec = ctx.cfg.problem_spec(m)?;
    let p = ctx.cfg.exponent(m)?;
    let v = ctx.cfg.weight(m)?;
    match probe {
        Probe::Growth => {
            let r = check_growth(&spec, &p, &v, m, ctx.cfg.suite.draws, ctx.seed)?;
            let pass = r.pass;
            finish_probe(ctx, probe, pass, r)
        }
        Probe::Coercivity => {
            let u0 = sine_mode(m, 1);
            let r = coercivity_probe(&spec, &p, &v, m, &u0, &ctx.cfg.suite.scales)?;
            let pass = r.pass;
            finish_probe(ctx, probe, pass, r)
        }
        Probe::Monotone => {
            let asm = Assembly::new(&p, &v, m)?;
            let rows = (0..ctx.cfg.suite.pairs)
                .into_par_iter()
                .map(|i| {
                    let mut rng = draw_rng(ctx.seed, i as u64);
                    let u1 = random_zero_boundary_field(m, &mut rng, 1.0);
                    let u2 = random_zero_boundary_field(m, &mut rng, 1.0);
                    let bracket = monotonicity_bracket(&spec, &u1, &u2, &p, &v, m)?;
                    let d = u1.axpby(1.0, &u2, -1.0)?;
                    let gap = asm
                        .mesh
                        .gradient_magnitudes(d.values())
                        .into_iter()
                        .fold(0.0, f64::max);
                    Ok(MonotoneRow {
                        pair: i,
                        bracket,
                        max_gradient_gap: gap,
                        pass: gap <= MONOTONE_MIN_GAP || bracket > 0.0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pass = rows.iter().all(|r| r.pass);
            let report = MonotoneReport {
                min_bracket: rows.iter().map(|r| r.bracket).fold(f64::INFINITY, f64::min),
                skipped: rows
                    .iter()
                    .filter(|r| r.max_gradient_gap <= MONOTONE_MIN_GAP)
                    .count(),
                rows,
            };
            finish_probe(ctx, probe, pass, report)
        }
    }
}

// ---------------------------------------------------------------------------
// solve

#[derive(Debug, Serialize)]
struct SampleDiagnostics {
    t_index: usize,
    label: f64,
    prob: f64,
    converged: bool,
    iterations: usize,
    residual: f64,
    outer_tol: f64,
    max_value: f64,
    energy: Vec<f64>,
    energy_monotone: Option<bool>,
    updates: Vec<f64>,
    residuals: Vec<f64>,
    dampings: Vec<f64>,
    iterate_check: Option<IterateDiagnostic>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct SolveDiagnostics {
    converged: bool,
    eps_reg: f64,
    residual_max: f64,
    ensemble_residual: Option<f64>,
    max_mean: f64,
    samples: Vec<SampleDiagnostics>,
}

fn diagnostics(r: &SolveReport) -> SolveDiagnostics {
    SolveDiagnostics {
        converged: r.converged,
        eps_reg: r.eps_reg,
        residual_max: r.residual_max,
        ensemble_residual: r.ensemble_residual,
        max_mean: r.mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        samples: r
            .samples
            .iter()
            .map(|o| {
                let s = o.solution.as_ref();
                SampleDiagnostics {
                    t_index: o.t_index,
                    label: o.label,
                    prob: o.prob,
                    converged: s.is_some_and(|s| s.converged),
                    iterations: s.map_or(0, |s| s.iterations),
                    residual: s.map_or(f64::NAN, |s| s.residual),
                    outer_tol: s.map_or(f64::NAN, |s| s.outer_tol),
                    max_value: s.map_or(f64::NAN, |s| {
                        s.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    }),
                    energy: s.map(|s| s.energy.clone()).unwrap_or_default(),
                    energy_monotone: s.and_then(|s| s.energy_monotone),
                    updates: s.map(|s| s.updates.clone()).unwrap_or_default(),
                    residuals: s.map(|s| s.residuals.clone()).unwrap_or_default(),
                    dampings: s.map(|s| s.dampings.clone()).unwrap_or_default(),
                    iterate_check: s.map(|s| s.iterate_check.clone()),
                    error: o.error.clone(),
                }
            })
            .collect(),
    }
}

fn coord_header(m: &ProductMeasureGrid) -> Vec<&'static str> {
    if m.dim() == 2 {
        vec!["x", "y"]
    } else {
        vec!["x"]
    }
}

fn coord_cells(m: &ProductMeasureGrid, node: usize) -> Vec<String> {
    let c = m.grid.coords(node);
    c[..m.dim()].iter().map(|x| fmt_float(*x)).collect()
}

fn run_solve(ctx: &Context) -> Result<bool> {
    let m = &ctx.m;
    let spec = ctx.cfg.problem_spec(m)?;
    let p = ctx.cfg.exponent(m)?;
    let v = ctx.cfg.weight(m)?;
    let report = solve_ensemble(&spec, &p, &v, m, &ctx.cfg.solver)?;
    let n = m.n_nodes();
    let mut header = coord_header(m);
    header.push("value");
    for o in &report.samples {
        if let Some(s) = &o.solution {
            let rows: Vec<Vec<String>> = (0..n)
                .map(|node| {
                    let mut r = coord_cells(m, node);
                    r.push(fmt_float(s.values[node]));
                    r
                })
                .collect();
            write_csv(
                &ctx.out.join(format!("solution_t{}.csv", o.t_index)),
                &header,
                &rows,
            )?;
        }
    }
    let rows: Vec<Vec<String>> = (0..n)
        .map(|node| {
            vec![
                node.to_string(),
                fmt_float(report.mean[node]),
                fmt_float(report.std[node]),
            ]
        })
        .collect();
    write_csv(
        &ctx.out.join("ensemble.csv"),
        &["node", "mean", "std"],
        &rows,
    )?;
    let diag = diagnostics(&report);
    write_json(&ctx.out.join("diagnostics.json"), &diag)?;
    for s in &diag.samples {
        println!(
            "sample {}: iterations {}, residual {:.3e}, max {:.6}{}",
            s.t_index,
            s.iterations,
            s.residual,
            s.max_value,
            if s.converged { "" } else { " -- NOT CONVERGED" }
        );
    }
    println!(
        "ensemble: max mean {:.6}, residual max {:.3e}",
        diag.max_mean, diag.residual_max
    );
    for e in report.samples.iter().filter_map(|o| o.error.as_ref()) {
        eprintln!("error: {e}");
    }
    Ok(report.converged)
}

// ---------------------------------------------------------------------------
// refine

fn run_refine(ctx: &Context, levels: usize) -> Result<bool> {
    let exact = ctx.cfg.exact_fn()?;
    let build = |g: &ProductMeasureGrid| ctx.cfg.problem_on(g);
    let table = refine_study(
        &build,
        &ctx.m,
        levels,
        &ctx.cfg.solver,
        exact.as_ref().map(|e| e as &dyn FieldFn),
    )?;
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    let rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n.iter()
                    .map(|k| k.to_string())
                    .collect::<Vec<_>>()
                    .join("x"),
                fmt_float(r.h),
                r.iterations.to_string(),
                fmt_float(r.residual_max),
                fmt_float(r.max_mean),
                opt(r.diff_prev),
                opt(r.error),
            ]
        })
        .collect();
    write_csv(
        &ctx.out.join("refine.csv"),
        &[
            "n",
            "h",
            "iterations",
            "residual_max",
            "max_mean",
            "diff_prev",
            "error",
        ],
        &rows,
    )?;
    write_json(&ctx.out.join("refine.json"), &table)?;
    for r in &table.rows {
        println!(
            "n {:?}: max mean {:.8}, diff {}, error {}",
            r.n,
            r.max_mean,
            r.diff_prev.map_or("-".into(), |d| format!("{d:.3e}")),
            r.error.map_or("-".into(), |d| format!("{d:.3e}")),
        );
    }
    println!("fitted order {:.3}", table.fitted_order);
    Ok(table.converged)
}
