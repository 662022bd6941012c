//! The verification suite: one check per acceptance criterion, each returning its
//! measured quantities next to the pinned tolerances. Used by `henonlab verify` and by
//! the acceptance test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{RenderConfig, RunConfig};
use crate::error::Result;
use crate::graph_transform::{
    build_neighborhood, expansion_ladder, fiber_distance, iterate_to_fixed_point, parameter_continuation, technical_integral,
    technical_lower_bound, GraphConfig,
};
use crate::henon_core::{RootOfUnity, SemiParabolicParams, C64};
use crate::normal_form::{full_normal_form, semiparabolic_multiplicity, Truncation};
use crate::petals_cones::{check_cone_invariance, check_petal_absorption, measure_estimates, SectorSpec};
use crate::poly_dynamics::{lamination_equiv, CaratheodoryTable, ExternalAngle, QuadPoly, DEFAULT_R_OUTER};
use crate::render::{pixel_coordinate, render_param_plane, Palette};
use crate::solenoid_model::{find_periodic_orbits, saddle_asymptotics, OrbitClass, PeriodicSeeds};
use crate::stable_manifold::{degeneration_gap, loglog_slope, stable_param, StableParam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: RunConfig,
    pub checks: Vec<CheckResult>,
    pub all_pass: bool,
}

fn real(a: f64) -> C64 {
    C64::new(a, 0.0)
}

fn finish(id: u32, name: &str, body: Result<(bool, Value)>) -> CheckResult {
    let (pass, details) = match body {
        Ok(v) => v,
        Err(e) => (false, json!({ "error": e.to_string() })),
    };
    CheckResult {
        id,
        name: name.into(),
        pass,
        details,
    }
}

/// Curve, eigenvalue and fixed-point identities on random `|a| ≤ 0.3`.
pub fn parameter_algebra(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut worst = [0.0f64; 5];
        for lambda in [RootOfUnity::one(), RootOfUnity::minus_one(), RootOfUnity::new(1, 3)?] {
            for _ in 0..200 {
                let a = C64::from_polar(0.3 * rng.gen::<f64>().sqrt(), std::f64::consts::TAU * rng.gen::<f64>());
                let p = SemiParabolicParams::new(lambda, a);
                let l = lambda.value;
                let j = p.jacobian(p.fixed_point);
                let char_poly = (j[0][0] - l) * (j[1][1] - l) - j[0][1] * j[1][0];
                let vals = [
                    p.curve_residual(),
                    char_poly.norm(),
                    (l * p.mu + a * a).norm(),
                    (2.0 * p.q_scalar - (l + p.mu)).norm(),
                    (p.forward(p.fixed_point) - p.fixed_point).norm_max(),
                ];
                for (w, v) in worst.iter_mut().zip(vals) {
                    *w = w.max(v);
                }
            }
        }
        let pass = worst[..4].iter().all(|v| *v <= 1e-12) && worst[4] <= 1e-10;
        Ok((
            pass,
            json!({
                "curve_residual": worst[0],
                "eigenvalue_residual": worst[1],
                "lambda_mu_plus_a2": worst[2],
                "p_prime_minus_lambda_plus_mu": worst[3],
                "fixed_point_residual": worst[4],
            }),
        ))
    };
    finish(1, "parameter algebra", body())
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficients (lowest degree first) of `p^q(z) − z` for real `c₀`.
fn iterate_minus_identity(c0: f64, q: usize) -> Vec<f64> {
    let mut f = vec![0.0, 1.0];
    for _ in 0..q {
        let mut sq = poly_mul(&f, &f);
        sq[0] += c0;
        f = sq;
    }
    f[1] -= 1.0;
    f
}

/// Multiplicity of `root` by repeated synthetic division.
fn root_multiplicity(mut coeffs: Vec<f64>, root: f64) -> usize {
    let mut m = 0;
    while coeffs.len() > 1 {
        let n = coeffs.len() - 1;
        let mut quotient = vec![0.0; n];
        let mut acc = 0.0;
        for k in (0..=n).rev() {
            acc = acc * root + coeffs[k];
            if k > 0 {
                quotient[k - 1] = acc;
            }
        }
        if acc.abs() > 1e-12 {
            break;
        }
        m += 1;
        coeffs = quotient;
    }
    m
}

pub fn multiplicity(_cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let mut rows = Vec::new();
        let mut pass = true;
        for (lambda, a) in [
            (RootOfUnity::one(), 0.0),
            (RootOfUnity::one(), 0.05),
            (RootOfUnity::minus_one(), 0.0),
            (RootOfUnity::minus_one(), 0.02),
        ] {
            let count = semiparabolic_multiplicity(&SemiParabolicParams::new(lambda, real(a)), 0.05)?;
            let expected = lambda.q as usize + 1;
            pass &= count == expected;
            rows.push(json!({ "q": lambda.q, "a": a, "count": count, "expected": expected }));
        }
        // a = 0: p^q(z) − z is (z − 1/2)² and (z + 1/2)³(z − 3/2).
        let f1 = iterate_minus_identity(0.25, 1);
        let f2 = iterate_minus_identity(-0.75, 2);
        let e1 = poly_mul(&[-0.5, 1.0], &[-0.5, 1.0]);
        let e2 = poly_mul(&poly_mul(&poly_mul(&[0.5, 1.0], &[0.5, 1.0]), &[0.5, 1.0]), &[-1.5, 1.0]);
        let factor_ok = f1 == e1 && f2 == e2;
        let m1 = root_multiplicity(f1, 0.5);
        let m2 = root_multiplicity(f2, -0.5);
        pass &= factor_ok && m1 == 2 && m2 == 3;
        Ok((
            pass,
            json!({ "argument_principle": rows, "factorization_matches": factor_ok, "oracle_multiplicities": [m1, m2] }),
        ))
    };
    finish(2, "semi-parabolic multiplicity", body())
}

pub fn normal_form(_cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let l = RootOfUnity::minus_one();
        let nf0 = full_normal_form(&SemiParabolicParams::new(l, real(0.0)), Truncation::default_for(&l))?;
        let ladder = [0.01, 0.02, 0.04];
        let mut residuals = Vec::new();
        for a in ladder {
            residuals.push(full_normal_form(&SemiParabolicParams::new(l, real(a)), Truncation::default_for(&l))?.residual_norm);
        }
        // Smallest K with residual(a) ≤ 1e−9 + K a on the ladder.
        let k = ladder
            .iter()
            .zip(&residuals)
            .map(|(a, r)| ((r - 1e-9) / a).max(0.0))
            .fold(0.0, f64::max);
        let pass = nf0.m == 2 && nf0.residual_norm <= 1e-9 && residuals[1] <= 1e-9 + k * 0.02 && k < 10.0;
        Ok((
            pass,
            json!({
                "m": nf0.m,
                "C": [nf0.c.re, nf0.c.im],
                "residual_a0": nf0.residual_norm,
                "ladder": ladder,
                "residuals": residuals,
                "fitted_K": k,
            }),
        ))
    };
    finish(3, "normal form", body())
}

pub fn petal_absorption(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let mut pass = true;
        let mut rows = Vec::new();
        for l in [RootOfUnity::one(), RootOfUnity::minus_one()] {
            let p = SemiParabolicParams::new(l, real(0.02));
            let nf = full_normal_form(&p, Truncation::default_for(&l))?;
            let spec = SectorSpec::for_normal_form(&nf, &p);
            let rep = check_petal_absorption(&p, &nf, &spec, cfg.suite.petal_samples, cfg.suite.petal_iters);
            pass &= rep.violations == 0 && rep.min_re_gain >= -0.5 && rep.n_samples == cfg.suite.petal_samples;
            rows.push(json!({ "q": l.q, "report": rep }));
        }
        Ok((pass, json!(rows)))
    };
    finish(4, "petal absorption", body())
}

pub fn cone_field(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let p = cfg.params.params()?;
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda))?;
        let spec = SectorSpec::for_normal_form(&nf, &p);
        let est = measure_estimates(&p, &nf, &spec, cfg.suite.estimate_samples);
        let rep = check_cone_invariance(&p, &nf, &spec, &est, cfg.suite.cone_samples);
        let pass = rep.skipped == 0
            && rep.horizontal_violations == 0
            && rep.expansion_violations == 0
            && rep.min_expansion_rate >= 0.125
            && rep.min_vertical_growth >= 1.99;
        Ok((pass, json!(rep)))
    };
    finish(5, "cone field", body())
}

pub fn technical_inequality(cfg: &RunConfig) -> CheckResult {
    let n = cfg.suite.technical_samples;
    let seed = cfg.seed;
    let failures: Vec<(usize, f64)> = (1..=3u32)
        .map(|q| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((q as u64) << 40) ^ i as u64);
                    let tau = std::f64::consts::TAU;
                    let x1 = C64::from_polar(rng.gen::<f64>().sqrt(), tau * rng.gen::<f64>());
                    let x2 = x1 * C64::from_polar(rng.gen::<f64>().sqrt(), tau * rng.gen::<f64>());
                    let margin = technical_integral(x1, x2, q) - technical_lower_bound(x1, q);
                    ((margin < -1e-10) as usize, margin)
                })
                .reduce(|| (0, f64::INFINITY), |a, b| (a.0 + b.0, a.1.min(b.1)))
        })
        .collect();
    let one = real(1.0);
    let spot = technical_integral(one, -one, 1);
    let pass = failures.iter().all(|f| f.0 == 0) && (spot - 0.5).abs() <= 1e-12;
    finish(
        6,
        "technical inequality",
        Ok((
            pass,
            json!({
                "samples_per_q": n,
                "failures": failures.iter().map(|f| f.0).collect::<Vec<_>>(),
                "min_margin": failures.iter().map(|f| f.1).collect::<Vec<_>>(),
                "I(1,-1) at q=1": spot,
            }),
        )),
    )
}

pub fn stable_manifold(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let sp = StableParam::new(cfg.params.params()?)?;
        let mut residual: f64 = 0.0;
        for j in 0..=12 {
            for k in 0..24 {
                let z = C64::from_polar(3.0 * j as f64 / 12.0, std::f64::consts::TAU * k as f64 / 24.0);
                let lhs = stable_param(&sp, sp.params.mu * z)?;
                let rhs = sp.params.forward(stable_param(&sp, z)?);
                residual = residual.max((lhs - rhs).norm_max());
            }
        }
        let ladder = cfg.suite.asymptotics_ladder.clone();
        let gaps = ladder
            .iter()
            .map(|a| degeneration_gap(&SemiParabolicParams::new(sp.params.lambda, real(*a)), 3.0, 6, 24))
            .collect::<Result<Vec<_>>>()?;
        let slope = loglog_slope(&ladder, &gaps);
        let pass = residual <= 1e-9 && (slope - 1.0).abs() <= 0.2;
        Ok((pass, json!({ "functional_residual": residual, "ladder": ladder, "gaps": gaps, "slope": slope })))
    };
    finish(7, "stable manifold", body())
}

fn pinned(graph: &GraphConfig) -> GraphConfig {
    GraphConfig {
        pin_parabolic: true,
        ..graph.clone()
    }
}

pub fn graph_transform(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let p = cfg.params.params()?;
        let gc = pinned(&cfg.graph);
        let v = build_neighborhood(&p, &gc)?;
        let (f, rep) = iterate_to_fixed_point(&v, &gc)?;
        let pass = rep.converged && rep.generations <= 400 && rep.decreasing_after(2) && rep.residual <= 1e-5;
        let mut details = json!({
            "angles": f.angles.len(),
            "generations": rep.generations,
            "converged": rep.converged,
            "final_distance": rep.distances.last(),
            "decreasing_after_2": rep.decreasing_after(2),
            "conjugacy_residual": rep.residual,
            "pinned_angles": rep.pinned_angles,
        });
        if cfg.suite.unpinned_diagnostic {
            let plain = GraphConfig {
                pin_parabolic: false,
                ..cfg.graph.clone()
            };
            let (_, u) = iterate_to_fixed_point(&build_neighborhood(&p, &plain)?, &plain)?;
            details["unpinned"] = json!({
                "generations": u.generations,
                "converged": u.converged,
                "final_distance": u.distances.last(),
                "decreasing_after_2": u.decreasing_after(2),
                "conjugacy_residual": u.residual,
            });
        }
        Ok((pass, details))
    };
    finish(8, "graph transform", body())
}

pub fn fiber_expansion(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let rep = expansion_ladder(cfg.params.lambda()?, &cfg.suite.expansion_ladder, &pinned(&cfg.graph))?;
        let pass = rep.first_in_window && rep.zeroth_in_window && rep.reports.iter().all(|r| r.converged);
        Ok((
            pass,
            json!({
                "samples": rep.samples,
                "ratios_first": rep.ratios_first,
                "ratios_zeroth": rep.ratios_zeroth,
                "window_first": [2.5, 6.0],
                "window_zeroth": [1.6, 2.6],
            }),
        ))
    };
    finish(9, "first-order fiber expansion", body())
}

pub fn lamination_collision(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let p = SemiParabolicParams::new(RootOfUnity::minus_one(), real(0.02));
        let third = ExternalAngle::new(1, 3);
        let (two_thirds, fifth) = (ExternalAngle::new(2, 3), ExternalAngle::new(1, 5));
        let gc = GraphConfig {
            level: 0,
            extra_angles: vec![third, fifth],
            max_gens: cfg.suite.collision_max_gens,
            pin_parabolic: false,
            ..cfg.graph.clone()
        };
        let v = build_neighborhood(&p, &gc)?;
        let (f, rep) = iterate_to_fixed_point(&v, &gc)?;
        let raw = CaratheodoryTable::build(&v.poly, f.angles.iter().copied(), gc.depth, DEFAULT_R_OUTER)?;
        let (table, _) = raw.refined(&v.poly);
        let equiv_close = lamination_equiv(&table, third, two_thirds, 5e-2)?;
        let equiv_far = lamination_equiv(&table, third, fifth, 5e-2)?;
        let fiber = |t: &ExternalAngle| f.fiber(t).expect("angle is in the family");
        let d_close = fiber_distance(fiber(&third), fiber(&two_thirds), f.r);
        let d_far = fiber_distance(fiber(&third), fiber(&fifth), f.r);
        let raw_gap = |s: &ExternalAngle, t: &ExternalAngle| (raw.get(s).unwrap() - raw.get(t).unwrap()).norm();
        let pass = rep.converged && equiv_close && !equiv_far && d_close <= 5e-2 && d_far > 5e-2;
        Ok((
            pass,
            json!({
                "converged": rep.converged,
                "generations": rep.generations,
                "equiv_1/3_2/3": equiv_close,
                "equiv_1/3_1/5": equiv_far,
                "fiber_distance_1/3_2/3": d_close,
                "fiber_distance_1/3_1/5": d_far,
                "unrefined_gap_1/3_2/3": raw_gap(&third, &two_thirds),
                "unrefined_gap_1/3_1/5": raw_gap(&third, &fifth),
            }),
        ))
    };
    finish(10, "lamination collision", body())
}

pub fn saddles(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let p = cfg.params.params()?;
        let k_max = cfg.suite.periodic_k_max;
        let poly = QuadPoly::parabolic(p.lambda);
        let seeds = PeriodicSeeds::new(poly, k_max)?;
        let search = find_periodic_orbits(&p, &seeds, k_max);
        let first_semi = search.orbits[0].classification == OrbitClass::SemiParabolic;
        let non_saddles = search.orbits[1..].iter().filter(|o| o.classification != OrbitClass::Saddle).count();
        // Period-2 cycle of z² + c₀ solves z² + z + c₀ + 1 = 0, multiplier 4(c₀ + 1).
        let oracle = 4.0 * (poly.c0 + 1.0);
        let two = search.orbits.iter().find(|o| o.period == 2);
        let lambda_u2 = two.map(|o| o.multipliers.1);
        let asym = saddle_asymptotics(p.lambda, &cfg.suite.asymptotics_ladder, &seeds, k_max);
        let slopes_ok = asym.lost == 0
            && !asym.orbits.is_empty()
            && asym.orbits.iter().all(|o| (o.slope_s - 2.0 * o.period as f64).abs() <= 0.2);
        let worst_slope = asym
            .orbits
            .iter()
            .map(|o| (o.slope_s - 2.0 * o.period as f64).abs())
            .fold(0.0, f64::max);
        let pass = first_semi && non_saddles == 0 && lambda_u2.is_some_and(|u| (u - oracle).norm() <= 0.5) && slopes_ok;
        Ok((
            pass,
            json!({
                "orbits": search.orbits.len(),
                "dropped_seeds": search.dropped_seeds,
                "non_saddles": non_saddles,
                "fixed_point_semi_parabolic": first_semi,
                "period2_lambda_u": lambda_u2.map(|u| [u.re, u.im]),
                "oracle": [oracle.re, oracle.im],
                "tracked": asym.orbits.len(),
                "lost": asym.lost,
                "max_slope_error": worst_slope,
            }),
        ))
    };
    finish(11, "saddles", body())
}

pub fn parameter_plot(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let render = RenderConfig {
            width: 256,
            height: 256,
            center_re: 0.0,
            center_im: 0.0,
            extent: 1.0,
            fast: true,
            ..cfg.render.clone()
        };
        let lambda = RootOfUnity::minus_one();
        let (img, side) = render_param_plane(lambda, &render, &cfg.solenoid, Palette::Binary)?;
        let (again, _) = render_param_plane(lambda, &render, &cfg.solenoid, Palette::Binary)?;
        let identical = img.to_ppm() == again.to_ppm();
        let (w, h) = (render.width, render.height);
        let asymmetric = (0..h)
            .flat_map(|j| (0..w).map(move |i| (i, j)))
            .filter(|&(i, j)| img.pixel(i, j) != img.pixel(w - 1 - i, h - 1 - j))
            .count();
        let small_not_black = (0..h)
            .flat_map(|j| (0..w).map(move |i| (i, j)))
            .filter(|&(i, j)| pixel_coordinate(&render, i, j).norm() < 0.05 && img.pixel(i, j) != [0, 0, 0])
            .count();
        let pass = identical && asymmetric == 0 && small_not_black == 0 && side.small_a_pixels > 0;
        Ok((
            pass,
            json!({
                "byte_identical": identical,
                "asymmetric_pixels": asymmetric,
                "small_a_not_connected": small_not_black,
                "sidecar": side,
            }),
        ))
    };
    finish(12, "parameter plot", body())
}

pub fn continuation(cfg: &RunConfig) -> CheckResult {
    let body = || -> Result<(bool, Value)> {
        let rep = parameter_continuation(cfg.params.lambda()?, &cfg.suite.continuation, &pinned(&cfg.graph))?;
        let spread = rep.slope_spread();
        let pass = rep.slopes.iter().all(|s| s.is_finite() && *s > 0.0) && spread <= 1.5;
        Ok((pass, json!({ "report": rep, "slope_spread": spread })))
    };
    finish(13, "continuation", body())
}

pub type Check = fn(&RunConfig) -> CheckResult;

pub const CHECKS: [Check; 13] = [
    parameter_algebra,
    multiplicity,
    normal_form,
    petal_absorption,
    cone_field,
    technical_inequality,
    stable_manifold,
    graph_transform,
    fiber_expansion,
    lamination_collision,
    saddles,
    parameter_plot,
    continuation,
];

pub fn verify_all(cfg: &RunConfig) -> VerifyReport {
    let checks: Vec<CheckResult> = CHECKS.iter().map(|c| c(cfg)).collect();
    VerifyReport {
        config: cfg.clone(),
        all_pass: checks.iter().all(|c| c.pass),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_oracle_helpers() {
        assert_eq!(iterate_minus_identity(0.25, 1), vec![0.25, -1.0, 1.0]);
        assert_eq!(root_multiplicity(vec![0.25, -1.0, 1.0], 0.5), 2);
        assert_eq!(root_multiplicity(vec![-1.0, 0.0, 1.0], 1.0), 1);
        assert_eq!(root_multiplicity(vec![-1.0, 0.0, 1.0], 0.5), 0);
    }

    #[test]
    fn fast_checks_pass_with_defaults() {
        let cfg = RunConfig::default();
        for c in [parameter_algebra, multiplicity, normal_form, stable_manifold] {
            let r = c(&cfg);
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn large_a_surfaces_smallness_failure() {
        let mut cfg = RunConfig::default();
        cfg.params.a_re = 0.9;
        let r = graph_transform(&cfg);
        assert!(!r.pass);
        let err = r.details["error"].as_str().unwrap();
        assert!(err.contains("smallness") || err.contains("increased"), "{err}");
    }
}
