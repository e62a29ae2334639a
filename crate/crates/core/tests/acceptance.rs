//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use varex::embeddings::{
    calibrate_chain, check_embedding_chain, critical_exponents, poincare_ratio, validate_chain,
    weak_convergence_panel, EmbeddingExponents,
};
use varex::families::{
    chain_calibration_family, chain_holdout_family, draw_rng, random_aux_exponent, random_exponent,
    random_field, random_weight,
};
use varex::fields::{
    validate_weight, AuxExponentField, ExponentField, StochasticField, WeightField,
};
use varex::measure_grid::{build_grid, unit_interval, ProductMeasureGrid};
use varex::modular_norm::{luxemburg_norm, LUXEMBURG_TOL};
use varex::operator::{check_growth, coercivity_probe, GFn, ProblemSpec};
use varex::solver::{refine_study, solve_ensemble, solve_sample, SolveConfig};
use varex::Error;

// tolerances
const LUX_REL: f64 = 1e-10;
const TWO_VALUED_ABS: f64 = 1e-10;
const PROP2_SLACK: f64 = -1e-9;
const UNIT_MODULAR: f64 = 1e-8;
const POINCARE_ABS: f64 = 1e-4;
const EXPONENT_ABS: f64 = 1e-12;
const GROWTH_EQUALITY: f64 = 1e-12;
const MIN_BRACKETS: usize = 10_000;
const ORDER_MIN: f64 = 1.9;
const P4_MAX_ABS: f64 = 5e-3;
const RESIDUAL_MAX: f64 = 1e-6;
const COERCIVITY_ABS: f64 = 0.05;
const PAIRING_ABS: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// `sum_t prob_t sum_i w_i |u|^p theta`, written out independently of the
/// library's modular.
fn hand_modular(u: &[f64], p: &[f64], v: &[f64], m: &ProductMeasureGrid) -> f64 {
    let n = m.n_nodes();
    let w = m.grid.quad_weights();
    let mut total = 0.0;
    for (t, prob) in m.omega.probs().iter().enumerate() {
        let mut inner = 0.0;
        for i in 0..n {
            let k = t * n + i;
            inner += w[i] * u[k].abs().powf(p[k]) * v[k];
        }
        total += prob * inner;
    }
    total
}

fn hand_sum(values: impl Fn(usize) -> f64, m: &ProductMeasureGrid) -> f64 {
    let n = m.n_nodes();
    let w = m.grid.quad_weights();
    let mut total = 0.0;
    for (t, prob) in m.omega.probs().iter().enumerate() {
        total += prob * (0..n).map(|i| w[i] * values(t * n + i)).sum::<f64>();
    }
    total
}

fn suite_grid() -> ProductMeasureGrid {
    build_grid(
        1,
        &[(0.0, 1.0)],
        &[65],
        vec![0.0, 0.5, 1.0],
        vec![0.25, 0.5, 0.25],
    )
    .unwrap()
}

fn norm(u: &StochasticField, p: &ExponentField, v: &WeightField, m: &ProductMeasureGrid) -> f64 {
    luxemburg_norm(u, p, v, m, LUXEMBURG_TOL).unwrap().value
}

/// Observations shared between criteria.
#[derive(Default)]
struct State {
    /// `|rho(u/||u||) - 1|` for every field of criteria 1 and 2.
    unit_gaps: Vec<f64>,
    /// Weak residuals of every accepted solve.
    residuals: Vec<f64>,
}

impl State {
    fn record_unit(
        &mut self,
        u: &StochasticField,
        p: &ExponentField,
        v: &WeightField,
        m: &ProductMeasureGrid,
    ) {
        let lam = norm(u, p, v, m);
        let scaled: Vec<f64> = u.values().iter().map(|x| x / lam).collect();
        self.unit_gaps
            .push((hand_modular(&scaled, p.values(), v.values(), m) - 1.0).abs());
    }
}

fn criterion_1(st: &mut State) -> Outcome {
    let m = suite_grid();
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let mut rng = draw_rng(1, i);
        let pc = [1.5, 2.0, 3.0, 4.0][i as usize % 4];
        let p = ExponentField::constant(&m, pc).unwrap();
        let v = random_weight(&m, &mut rng).unwrap();
        let u = random_field(&m, &mut rng, 2.0);
        let oracle = hand_modular(u.values(), p.values(), v.values(), &m).powf(1.0 / pc);
        let got = norm(&u, &p, &v, &m);
        worst = worst.max((got - oracle).abs() / oracle);
        st.record_unit(&u, &p, &v, &m);
    }
    // p = 2 on [0, 1/2), 4 on [1/2, 1], u = 2: rho(u/l) = y/2 + y^2/2 with
    // y = (2/l)^2, and y^2 + y - 2 = 0 gives y = 1, so the norm is 2.
    let m2 = unit_interval(6).unwrap();
    let p2 = ExponentField::from_fn(&m2, &|x: &[f64], _t: f64| {
        if x[0] < 0.5 {
            2.0
        } else {
            4.0
        }
    })
    .unwrap();
    let v2 = WeightField::unit(&m2);
    let two = norm(&StochasticField::constant(&m2, 2.0), &p2, &v2, &m2);
    outcome(
        worst <= LUX_REL && (two - 2.0).abs() <= TWO_VALUED_ABS,
        format!("200 fields, max rel err {worst:.2e}; two-valued case {two:.15}"),
    )
}

fn criterion_2(st: &mut State) -> Outcome {
    let m = suite_grid();
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    for i in 0..1000u64 {
        let mut rng = draw_rng(2, i);
        let p = random_exponent(&m, &mut rng, 1.5, 4.0).unwrap();
        let v = random_weight(&m, &mut rng).unwrap();
        let u = random_field(&m, &mut rng, 2.0);
        let lam = norm(&u, &p, &v, &m);
        let rho = hand_modular(u.values(), p.values(), v.values(), &m);
        let (pm, pp) = (
            p.values().iter().cloned().fold(f64::INFINITY, f64::min),
            p.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        );
        let (lo, hi) = if lam >= 1.0 {
            (lam.powf(pm), lam.powf(pp))
        } else {
            (lam.powf(pp), lam.powf(pm))
        };
        let slack = ((rho - lo) / rho.abs().max(1.0)).min((hi - rho) / hi.abs().max(1.0));
        worst = worst.min(slack);
        if slack < PROP2_SLACK {
            failures += 1;
        }
        st.record_unit(&u, &p, &v, &m);
    }
    // boundary case: u = 1 on a unit-measure domain has norm 1 for any p
    let m1 = unit_interval(101).unwrap();
    let p1 = random_exponent(&m1, &mut draw_rng(2, 5000), 1.5, 4.0).unwrap();
    let v1 = WeightField::unit(&m1);
    let one = StochasticField::constant(&m1, 1.0);
    let lam1 = norm(&one, &p1, &v1, &m1);
    let rho1 = hand_modular(one.values(), p1.values(), v1.values(), &m1);
    let boundary_ok = (lam1 - 1.0).abs() <= UNIT_MODULAR && (rho1 - 1.0).abs() <= UNIT_MODULAR;
    outcome(
        failures == 0 && boundary_ok,
        format!(
            "1000 draws, {failures} violations, worst slack {worst:.2e}; boundary norm {lam1:.12}, rho {rho1:.12}"
        ),
    )
}

fn criterion_3(st: &mut State) -> Outcome {
    let count = st.unit_gaps.len();
    let worst = st.unit_gaps.iter().cloned().fold(0.0, f64::max);
    outcome(
        count == 1200 && worst <= UNIT_MODULAR,
        format!("{count} nonzero fields, max |rho(u/||u||) - 1| = {worst:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let m = suite_grid();
    let mut violations = 0;
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let mut rng = draw_rng(4, i);
        let p = random_exponent(&m, &mut rng, 1.5, 4.0).unwrap();
        let v = random_weight(&m, &mut rng).unwrap();
        let f = random_field(&m, &mut rng, 2.0);
        let g = random_field(&m, &mut rng, 2.0);
        let qv: Vec<f64> = p.values().iter().map(|p| p / (p - 1.0)).collect();
        let vs: Vec<f64> = v
            .values()
            .iter()
            .zip(&qv)
            .map(|(w, q)| w.powf(1.0 - q))
            .collect();
        let q = ExponentField::new(&m, qv).unwrap();
        let v_star = WeightField::new(&m, vs).unwrap();
        let pm = p.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let pp = p.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let c = 1.0 + 1.0 / pm - 1.0 / pp;
        let lhs = hand_sum(|k| (f.values()[k] * g.values()[k]).abs(), &m);
        let rhs = c * norm(&f, &p, &v, &m) * norm(&g, &q, &v_star, &m);
        worst = worst.max(lhs / rhs);
        if lhs > rhs {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("1000 draws, {violations} violations, max lhs/rhs {worst:.4}"),
    )
}

fn sine(m: &ProductMeasureGrid, k: usize) -> StochasticField {
    StochasticField::from_fn(m, &|x: &[f64], _t: f64| (k as f64 * PI * x[0]).sin())
        .clamp_boundary(m)
}

fn criterion_5() -> Outcome {
    let m = unit_interval(401).unwrap();
    let p = ExponentField::constant(&m, 2.0).unwrap();
    let v = WeightField::unit(&m);
    let ratios: Vec<f64> = (1..=10)
        .map(|k| poincare_ratio(&sine(&m, k), &p, &v, &m).unwrap())
        .collect();
    let err = (ratios[0] - 1.0 / PI).abs();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    outcome(
        err <= POINCARE_ABS && decreasing,
        format!(
            "ratio(sin pi x) = {:.8} (1/pi = {:.8}, err {err:.2e}); decreasing over k=1..10: {decreasing}",
            ratios[0],
            1.0 / PI
        ),
    )
}

fn exponent_errors(e: &EmbeddingExponents, p: &[f64], s: &[f64], d: f64) -> f64 {
    let mut worst = 0.0f64;
    let cmp = |a: f64, b: f64| {
        if a.is_infinite() || b.is_infinite() {
            if a == b {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (a - b).abs()
        }
    };
    for i in 0..p.len() {
        let star = if p[i] < d {
            d * p[i] / (d - p[i])
        } else {
            f64::INFINITY
        };
        let ps = p[i] * s[i] / (s[i] + 1.0);
        let ps_star = if ps < d {
            d * ps / (d * (s[i] + 1.0) - p[i] * s[i])
        } else {
            f64::INFINITY
        };
        worst = worst
            .max(cmp(e.p_star[i], star))
            .max(cmp(e.p_s[i], ps))
            .max(cmp(e.p_s_star[i], ps_star));
    }
    worst
}

fn criterion_6() -> Outcome {
    let m = unit_interval(201).unwrap();
    let p =
        ExponentField::from_fn(&m, &|x: &[f64], _t: f64| 2.0 + 0.5 * (3.0 * x[0]).sin()).unwrap();
    let s = AuxExponentField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + 0.5 * x[0]).unwrap();
    let mut v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
    let report = validate_weight(&v, &p, &s, &m).unwrap();
    v.mark_validated(&report);
    let eval = |family: Vec<StochasticField>| -> Vec<_> {
        family
            .iter()
            .map(|u| check_embedding_chain(u, &p, &s, &v, &m).unwrap())
            .collect()
    };
    let calib = eval(chain_calibration_family(&m, &p, &s, &v, 42, 100, 2.0));
    let hold = eval(chain_holdout_family(&m, 42, 200, 2.0));
    let c = calibrate_chain(&calib).unwrap();
    let val = validate_chain(&hold, &c);

    // exponent formulas on random 1-d and 2-d fields
    let mut exp_err = 0.0f64;
    let grids = [
        unit_interval(33).unwrap(),
        build_grid(
            2,
            &[(0.0, 1.0), (0.0, 1.0)],
            &[9, 9],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap(),
    ];
    for (j, g) in grids.iter().enumerate() {
        for i in 0..50u64 {
            let mut rng = draw_rng(6, 100 * j as u64 + i);
            let p = random_exponent(g, &mut rng, 1.1, 3.5).unwrap();
            let s = random_aux_exponent(g, &mut rng, 0.2, 4.0).unwrap();
            let e = critical_exponents(&p, &s, g.dim()).unwrap();
            exp_err = exp_err.max(exponent_errors(&e, p.values(), s.values(), g.dim() as f64));
        }
    }
    outcome(
        val.violations.iter().all(|v| *v == 0) && val.n_fields == 200 && calib.len() == 100 && exp_err <= EXPONENT_ABS,
        format!(
            "100 calibration / 200 hold-out, violations {:?}, worst ratio/C {:?}; exponent formula err {exp_err:.1e}",
            val.violations,
            val.worst.map(|w| (w * 1e4).round() / 1e4)
        ),
    )
}

fn criterion_7() -> Outcome {
    let m = build_grid(
        2,
        &[(0.0, 1.0), (0.0, 1.0)],
        &[9, 9],
        vec![0.0, 1.0],
        vec![0.5, 0.5],
    )
    .unwrap();
    let p =
        ExponentField::from_fn(&m, &|x: &[f64], t: f64| 1.6 + 1.8 * x[0] * x[1] + 0.3 * t).unwrap();
    let v = WeightField::from_fn(&m, &|x: &[f64], t: f64| (x[0] - 0.5 * x[1] + t).exp()).unwrap();
    let spec = ProblemSpec::model(&m, GFn::zero(), StochasticField::constant(&m, 1.0));
    let r = check_growth(&spec, &p, &v, &m, 11_000, 7).unwrap();
    let mut broken = spec.clone();
    broken.beta_c *= 0.5;
    let b = check_growth(&broken, &p, &v, &m, 11_000, 7).unwrap();
    let ok = r.flux_growth.pass
        && r.flux_growth.max_abs_slack <= GROWTH_EQUALITY
        && r.coercivity.pass
        && r.coercivity.max_abs_slack <= GROWTH_EQUALITY
        && r.monotonicity.pass
        && r.monotonicity.checked >= MIN_BRACKETS
        && !b.flux_growth.pass
        && b.flux_growth.witness.is_some();
    let w = b.flux_growth.witness.as_ref();
    outcome(
        ok,
        format!(
            "flux growth |slack| {:.1e}, coercivity |slack| {:.1e}, {} positive monotonicity brackets ({} skipped); halved beta fails flux growth: {} (witness node {:?})",
            r.flux_growth.max_abs_slack,
            r.coercivity.max_abs_slack,
            r.monotonicity.checked,
            r.monotonicity.skipped,
            !b.flux_growth.pass,
            w.map(|w| w.node)
        ),
    )
}

fn model(m: &ProductMeasureGrid, f: StochasticField) -> ProblemSpec {
    ProblemSpec::model(m, GFn::zero(), f)
}

fn criterion_8(st: &mut State) -> Outcome {
    let residuals = &mut st.residuals;
    let cfg = SolveConfig::default();
    let mut poisson_ok = true;
    let mut errs = Vec::new();
    for n in [101, 201, 401] {
        let m = unit_interval(n).unwrap();
        let h = 1.0 / (n - 1) as f64;
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let s = solve_sample(
            &model(&m, StochasticField::constant(&m, 1.0)),
            &p,
            &WeightField::unit(&m),
            &m,
            0,
            &cfg,
        )
        .unwrap();
        residuals.push(s.residual);
        let err = (0..n)
            .map(|k| {
                let x = m.grid.coords(k)[0];
                (s.values[k] - 0.5 * x * (1.0 - x)).abs()
            })
            .fold(0.0, f64::max);
        poisson_ok &= err <= 2.0 * h * h;
        errs.push(err);
    }
    // order fit on -u'' = pi^2 sin(pi x), u = sin(pi x)
    let base = unit_interval(101).unwrap();
    let build = |g: &ProductMeasureGrid| {
        let f = StochasticField::from_fn(g, &|x: &[f64], _t: f64| PI * PI * (PI * x[0]).sin());
        Ok((
            model(g, f),
            ExponentField::constant(g, 2.0)?,
            WeightField::unit(g),
        ))
    };
    let exact = |x: &[f64], _t: f64| (PI * x[0]).sin();
    let table = refine_study(&build, &base, 3, &cfg, Some(&exact)).unwrap();
    residuals.extend(table.rows.iter().map(|r| r.residual_max));

    let m4 = unit_interval(401).unwrap();
    let p4 = ExponentField::constant(&m4, 4.0).unwrap();
    let s4 = solve_sample(
        &model(&m4, StochasticField::constant(&m4, 1.0)),
        &p4,
        &WeightField::unit(&m4),
        &m4,
        0,
        &cfg,
    )
    .unwrap();
    residuals.push(s4.residual);
    let max4 = s4.values.iter().cloned().fold(0.0, f64::max);
    let exact4 = 0.75 * 0.5f64.powf(4.0 / 3.0);

    let z = solve_sample(
        &model(&m4, StochasticField::zeros(&m4)),
        &p4,
        &WeightField::unit(&m4),
        &m4,
        0,
        &cfg,
    )
    .unwrap();
    residuals.push(z.residual);
    let zero_ok = z.values.iter().all(|x| *x == 0.0) && z.iterations == 1;

    let worst_res = residuals.iter().cloned().fold(0.0, f64::max);
    outcome(
        poisson_ok
            && table.fitted_order >= ORDER_MIN
            && (max4 - exact4).abs() <= P4_MAX_ABS
            && worst_res <= RESIDUAL_MAX
            && zero_ok,
        format!(
            "Poisson errors {:.1e}/{:.1e}/{:.1e}, fitted order {:.3}; p=4 max {max4:.6} vs {exact4:.6}; max residual {worst_res:.1e}; zero datum -> zero in {} step",
            errs[0], errs[1], errs[2], table.fitted_order, z.iterations
        ),
    )
}

fn criterion_9(st: &mut State) -> Outcome {
    let residuals = &mut st.residuals;
    let n = 101;
    let h = 1.0 / (n - 1) as f64;
    let m = build_grid(1, &[(0.0, 1.0)], &[n], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
    let p = ExponentField::constant(&m, 2.0).unwrap();
    let v = WeightField::from_fn(&m, &|_x: &[f64], t: f64| 1.0 + t).unwrap();
    let r = solve_ensemble(
        &model(&m, StochasticField::constant(&m, 1.0)),
        &p,
        &v,
        &m,
        &SolveConfig::default(),
    )
    .unwrap();
    residuals.push(r.residual_max);
    let max = r.mean.iter().cloned().fold(0.0, f64::max);
    let err = (max - 3.0 / 32.0).abs();
    outcome(
        r.converged && err <= 2.0 * h * h && r.residual_max <= RESIDUAL_MAX,
        format!(
            "max mean {max:.12} vs 3/32, err {err:.1e} (2h^2 = {:.1e})",
            2.0 * h * h
        ),
    )
}

fn criterion_10() -> Outcome {
    let m = unit_interval(401).unwrap();
    let v = WeightField::unit(&m);
    let spec = model(&m, StochasticField::constant(&m, 1.0));
    let u0 = sine(&m, 1);
    let scales = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let mut ok = true;
    let mut parts = Vec::new();
    for pc in [1.5, 2.0, 3.0] {
        let p = ExponentField::constant(&m, pc).unwrap();
        let r = coercivity_probe(&spec, &p, &v, &m, &u0, &scales).unwrap();
        ok &= r.pass && (r.fitted_r - pc).abs() <= COERCIVITY_ABS;
        parts.push(format!("p={pc}: r={:.6}", r.fitted_r));
    }
    outcome(ok, parts.join(", "))
}

fn criterion_11() -> Outcome {
    let m = unit_interval(20001).unwrap();
    let p = ExponentField::constant(&m, 2.0).unwrap();
    let v = WeightField::unit(&m);
    let idx: Vec<usize> = (0..=10).map(|k| 1 << k).collect();
    let seq: Vec<StochasticField> = idx
        .iter()
        .map(|&n| StochasticField::from_fn(&m, &|x: &[f64], _t: f64| x[0].powi(n as i32)))
        .collect();
    let one = StochasticField::constant(&m, 1.0);
    let r = weak_convergence_panel(&seq, &StochasticField::zeros(&m), &[one], &p, &v, &m, 10.0)
        .unwrap();
    let pairings = &r.duals[0].pairings;
    let worst = pairings
        .iter()
        .zip(&idx)
        .map(|(pr, &n)| (pr - 1.0 / (n as f64 + 1.0)).abs())
        .fold(0.0, f64::max);
    let to_zero = pairings.windows(2).all(|w| w[1] < w[0]) && *pairings.last().unwrap() < 1e-3;

    let sines: Vec<StochasticField> = idx.iter().map(|&n| sine(&m, n)).collect();
    let refused = weak_convergence_panel(
        &sines,
        &StochasticField::zeros(&m),
        &[StochasticField::constant(&m, 1.0)],
        &p,
        &v,
        &m,
        10.0,
    );
    let refused_ok = matches!(refused, Err(Error::Hypothesis(_)));
    outcome(
        r.pass && worst <= PAIRING_ABS && to_zero && refused_ok,
        format!(
            "x^n pairings vs 1/(n+1): max err {worst:.1e}, last {:.2e}; sin(n pi x) refused: {refused_ok}",
            pairings.last().unwrap()
        ),
    )
}

const DET_CONFIG: &str = r#"{
  "grid": {"dim": 1, "bounds": [[0, 1]], "n": [65],
           "omega": {"samples": [0, 1], "probs": [0.5, 0.5]}},
  "fields": {
    "p": {"kind": "expr", "formula": "2.5 + 0.5 * sin(pi * x) + 0.2 * t"},
    "weight": {"kind": "expr", "formula": "1 + x + t"},
    "s": {"kind": "constant", "value": 1},
    "f": {"kind": "constant", "value": 1}
  },
  "suite": {"draws": 200, "calibration": 30, "holdout": 40}
}"#;

fn run_all(dir: &Path, config: &Path) -> bool {
    let c = config.to_str().unwrap();
    let o = dir.to_str().unwrap();
    let runs: [&[&str]; 5] = [
        &[
            "varex", "check", "--suite", "prop2", "--config", c, "--seed", "7", "--out", o,
        ],
        &[
            "varex", "check", "--suite", "chain", "--config", c, "--seed", "7", "--out", o,
        ],
        &[
            "varex", "probe", "--check", "growth", "--config", c, "--seed", "7", "--out", o,
        ],
        &["varex", "solve", "--config", c, "--seed", "7", "--out", o],
        &[
            "varex", "refine", "--levels", "2", "--config", c, "--seed", "7", "--out", o,
        ],
    ];
    runs.iter().all(|a| varex::cli::run(a.iter().copied()) == 0)
}

fn criterion_12() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("det.json");
    std::fs::write(&config, DET_CONFIG).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if !(run_all(&a, &config) && run_all(&b, &config)) {
        return outcome(false, "a CLI run exited non-zero");
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mismatched: Vec<String> = names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    let count_b = std::fs::read_dir(&b).unwrap().count();
    outcome(
        mismatched.is_empty() && count_b == names.len() && !names.is_empty(),
        format!(
            "{} report files compared, mismatched {:?}",
            names.len(),
            mismatched
        ),
    )
}

fn main() {
    let mut state = State::default();
    let criteria: Vec<(&str, fn(&mut State) -> Outcome)> = vec![
        ("Luxemburg-norm oracle equivalence", criterion_1),
        ("norm-modular inequality chains", criterion_2),
        ("unit-modular identity", criterion_3),
        ("Holder inequality", |_| criterion_4()),
        ("Poincare ratio", |_| criterion_5()),
        ("embedding chain", |_| criterion_6()),
        ("growth-condition validator", |_| criterion_7()),
        ("solver oracles", criterion_8),
        ("ensemble oracle", criterion_9),
        ("coercivity probe", |_| criterion_10()),
        ("weak-convergence panel", |_| criterion_11()),
        ("determinism", |_| criterion_12()),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let o = check(&mut state);
        let status = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} [{status}] {name}: {} ({:.2}s)",
            k + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
