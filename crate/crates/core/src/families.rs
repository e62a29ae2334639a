//! Seeded random field families used by the inequality suites.
//!
//! Every draw gets its own ChaCha stream derived from `(seed, index)`, so a
//! suite produces the same fields regardless of thread count or the order
//! in which draws are evaluated.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::Result;
use crate::fields::{AuxExponentField, ExponentField, StochasticField, WeightField};
use crate::measure_grid::ProductMeasureGrid;

pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn unit_coords(m: &ProductMeasureGrid, node: usize) -> [f64; 2] {
    let c = m.grid.coords(node);
    let b = m.grid.bounds();
    let mut out = [0.0; 2];
    for a in 0..m.dim() {
        out[a] = (c[a] - b[a].0) / (b[a].1 - b[a].0);
    }
    out
}

struct Mode {
    kx: f64,
    ky: f64,
    phase_x: f64,
    phase_y: f64,
    amp: f64,
}

fn random_modes(rng: &mut ChaCha8Rng, max_modes: usize) -> Vec<Mode> {
    let count = rng.gen_range(1..=max_modes);
    (0..count)
        .map(|_| Mode {
            kx: rng.gen_range(0.0..6.0),
            ky: rng.gen_range(0.0..6.0),
            phase_x: rng.gen_range(0.0..2.0 * PI),
            phase_y: rng.gen_range(0.0..2.0 * PI),
            amp: rng.gen_range(-1.0..1.0),
        })
        .collect()
}

fn eval_modes(modes: &[Mode], c: [f64; 2], dim: usize) -> f64 {
    modes
        .iter()
        .map(|md| {
            let fx = (md.kx * PI * c[0] + md.phase_x).sin();
            let fy = if dim == 2 {
                (md.ky * PI * c[1] + md.phase_y).cos()
            } else {
                1.0
            };
            md.amp * fx * fy
        })
        .sum()
}

/// Smooth random field with an overall magnitude drawn log-uniformly from
/// `10^[-log_span, log_span]`; samples get independent shapes.
pub fn random_field(
    m: &ProductMeasureGrid,
    rng: &mut ChaCha8Rng,
    log_span: f64,
) -> StochasticField {
    let scale = 10f64.powf(rng.gen_range(-log_span..=log_span));
    let mut values = Vec::with_capacity(m.len());
    for _ in 0..m.n_samples() {
        let offset = rng.gen_range(-0.5..0.5);
        let modes = random_modes(rng, 5);
        for node in 0..m.n_nodes() {
            let c = unit_coords(m, node);
            values.push(scale * (offset + eval_modes(&modes, c, m.dim())));
        }
    }
    StochasticField::from_values(m, values).expect("shape")
}

/// Random field vanishing on the boundary: a sine series on the box.
pub fn random_zero_boundary_field(
    m: &ProductMeasureGrid,
    rng: &mut ChaCha8Rng,
    log_span: f64,
) -> StochasticField {
    let scale = 10f64.powf(rng.gen_range(-log_span..=log_span));
    let mut values = Vec::with_capacity(m.len());
    for _ in 0..m.n_samples() {
        let terms: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..=4))
            .map(|_| {
                (
                    rng.gen_range(1..=5) as f64,
                    rng.gen_range(1..=5) as f64,
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        for node in 0..m.n_nodes() {
            let c = unit_coords(m, node);
            let v: f64 = terms
                .iter()
                .map(|&(k, l, a)| {
                    let fy = if m.dim() == 2 {
                        (l * PI * c[1]).sin()
                    } else {
                        1.0
                    };
                    a * (k * PI * c[0]).sin() * fy
                })
                .sum();
            values.push(scale * v);
        }
    }
    StochasticField::from_values(m, values)
        .expect("shape")
        .clamp_boundary(m)
}

/// Exponent with values in `[lo, hi]`; constant with probability 1/4.
pub fn random_exponent(
    m: &ProductMeasureGrid,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
) -> Result<ExponentField> {
    if rng.gen_bool(0.25) {
        return ExponentField::constant(m, rng.gen_range(lo..=hi));
    }
    let a = rng.gen_range(lo..=hi);
    let b = rng.gen_range(lo..=hi);
    let (base, span) = (a.min(b), (a - b).abs());
    let freq = rng.gen_range(0.5..4.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let t_shift = rng.gen_range(0.0..PI);
    let mut values = Vec::with_capacity(m.len());
    for &t in m.omega.samples() {
        for node in 0..m.n_nodes() {
            let c = unit_coords(m, node);
            let wave = 0.5 + 0.5 * (freq * PI * (c[0] + 0.7 * c[1]) + phase + t_shift * t).sin();
            values.push((base + span * wave).clamp(lo, hi));
        }
    }
    ExponentField::new(m, values)
}

/// Weight `exp(sigma * smooth)` with `sigma` up to 1.5; unit with
/// probability 1/5.
pub fn random_weight(m: &ProductMeasureGrid, rng: &mut ChaCha8Rng) -> Result<WeightField> {
    if rng.gen_bool(0.2) {
        return Ok(WeightField::unit(m));
    }
    let sigma = rng.gen_range(0.0..1.5);
    let modes = random_modes(rng, 3);
    let t_amp = rng.gen_range(0.0..0.5);
    let mut values = Vec::with_capacity(m.len());
    for &t in m.omega.samples() {
        for node in 0..m.n_nodes() {
            let c = unit_coords(m, node);
            values.push((sigma * eval_modes(&modes, c, m.dim()) + t_amp * t).exp());
        }
    }
    WeightField::new(m, values)
}

pub fn random_aux_exponent(
    m: &ProductMeasureGrid,
    rng: &mut ChaCha8Rng,
    lo: f64,
    hi: f64,
) -> Result<AuxExponentField> {
    let a = rng.gen_range(lo..=hi);
    let b = rng.gen_range(lo..=hi);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let mut values = Vec::with_capacity(m.len());
    for _ in 0..m.n_samples() {
        for node in 0..m.n_nodes() {
            let c = unit_coords(m, node);
            values.push(a + (b - a) * (0.5 + 0.5 * (PI * c[0] + phase).sin()));
        }
    }
    AuxExponentField::new(m, values)
}

/// `u = theta^(-(s+1)/p)`: equality profile of the Holder step behind the
/// `L^{p,theta} -> L^{p_s}` bound.
pub fn weight_profile_field(
    m: &ProductMeasureGrid,
    p: &ExponentField,
    s: &AuxExponentField,
    v: &WeightField,
    scale: f64,
) -> StochasticField {
    let values = v
        .values()
        .iter()
        .zip(p.values())
        .zip(s.values())
        .map(|((w, p), s)| scale * w.powf(-(s + 1.0) / p))
        .collect();
    StochasticField::from_values(m, values).expect("shape")
}

/// One-dimensional field whose derivative is the weight profile
/// `theta^(-(s+1)/p)` (cumulative trapezoid integral, per sample).
pub fn weight_profile_primitive(
    m: &ProductMeasureGrid,
    p: &ExponentField,
    s: &AuxExponentField,
    v: &WeightField,
    scale: f64,
) -> StochasticField {
    let profile = weight_profile_field(m, p, s, v, scale);
    let n = m.n_nodes();
    let h = m.grid.h()[0];
    let mut values = vec![0.0; m.len()];
    if m.dim() != 1 {
        return profile;
    }
    for t in 0..m.n_samples() {
        let g = profile.sample(t);
        let out = &mut values[t * n..(t + 1) * n];
        for i in 1..n {
            out[i] = out[i - 1] + 0.5 * h * (g[i - 1] + g[i]);
        }
    }
    StochasticField::from_values(m, values).expect("shape")
}

/// `u = (c theta p lambda^-p / p_s)^(-(s+1)/p)` with `p_s = ps/(s+1)`:
/// stationary points of `rho_{p_s}(u)` at fixed `rho_{p,theta}(u / lambda)`.
/// For constant `p` this is a multiple of the weight profile.
pub fn chain_extremal_field(
    m: &ProductMeasureGrid,
    p: &ExponentField,
    s: &AuxExponentField,
    v: &WeightField,
    c: f64,
    lambda: f64,
) -> StochasticField {
    let values = v
        .values()
        .iter()
        .zip(p.values())
        .zip(s.values())
        .map(|((w, p), s)| {
            let ps = p * s / (s + 1.0);
            (c * w * p * lambda.powf(-p) / ps).powf(-(s + 1.0) / p)
        })
        .collect();
    StochasticField::from_values(m, values).expect("shape")
}

/// Calibration family of the embedding chain: the weight profile and its
/// primitive at scales `10^-2 .. 10^2`, the extremal fields on a grid
/// `c in 10^[-3, 3]`, `lambda in 10^[-1, 1]`, then random fields up to
/// `count` members.
pub fn chain_calibration_family(
    m: &ProductMeasureGrid,
    p: &ExponentField,
    s: &AuxExponentField,
    v: &WeightField,
    seed: u64,
    count: usize,
    log_span: f64,
) -> Vec<StochasticField> {
    let mut family = Vec::with_capacity(count);
    for k in -2..=2 {
        let scale = 10f64.powi(k);
        family.push(weight_profile_field(m, p, s, v, scale));
        if m.dim() == 1 {
            family.push(weight_profile_primitive(m, p, s, v, scale));
        }
    }
    for a in -6..=6 {
        for b in -2..=2 {
            let (c, lambda) = (10f64.powf(0.5 * a as f64), 10f64.powf(0.5 * b as f64));
            family.push(chain_extremal_field(m, p, s, v, c, lambda));
        }
    }
    family.truncate(count);
    let start = family.len();
    family.extend((start..count).map(|i| random_field(m, &mut draw_rng(seed, i as u64), log_span)));
    family
}

/// Hold-out fields drawn from streams disjoint from the calibration family.
pub fn chain_holdout_family(
    m: &ProductMeasureGrid,
    seed: u64,
    count: usize,
    log_span: f64,
) -> Vec<StochasticField> {
    (0..count)
        .map(|i| random_field(m, &mut draw_rng(seed, HOLDOUT_STREAM + i as u64), log_span))
        .collect()
}

const HOLDOUT_STREAM: u64 = 1 << 32;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_grid::{build_grid, unit_interval};

    #[test]
    fn draws_are_reproducible() {
        let m = build_grid(1, &[(0.0, 1.0)], &[33], vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let a = random_field(&m, &mut draw_rng(7, 3), 2.0);
        let b = random_field(&m, &mut draw_rng(7, 3), 2.0);
        let c = random_field(&m, &mut draw_rng(7, 4), 2.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generated_fields_respect_invariants() {
        let m = build_grid(
            2,
            &[(0.0, 1.0), (0.0, 1.0)],
            &[9, 9],
            vec![0.0, 1.0],
            vec![0.5, 0.5],
        )
        .unwrap();
        for i in 0..50 {
            let mut rng = draw_rng(1, i);
            let p = random_exponent(&m, &mut rng, 1.5, 4.0).unwrap();
            assert!(p.p_minus() >= 1.5 && p.p_plus() <= 4.0);
            let v = random_weight(&m, &mut rng).unwrap();
            assert!(v.lower_bound() > 0.0);
            let u = random_zero_boundary_field(&m, &mut rng, 1.0);
            assert!(u.zero_boundary());
        }
    }

    #[test]
    fn primitive_has_profile_derivative() {
        let m = unit_interval(201).unwrap();
        let p = ExponentField::constant(&m, 2.0).unwrap();
        let s = AuxExponentField::constant(&m, 1.0).unwrap();
        let v = WeightField::from_fn(&m, &|x: &[f64], _t: f64| 1.0 + x[0]).unwrap();
        let u = weight_profile_primitive(&m, &p, &s, &v, 1.0);
        // derivative of the primitive is (1 + x)^-1, so u = ln(1 + x)
        assert!((u.values()[200] - 2f64.ln()).abs() < 1e-5);
    }
}
