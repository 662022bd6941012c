//! The stable manifold of the semi-parabolic fixed point, parametrized as
//! `F_a(z) = lim H^{-m}(q_a + μ^m v z)` with `v = (μ/a, 1)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::henon_core::{Point2, SemiParabolicParams, C64};

pub const MAX_DEPTH: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableParam {
    pub params: SemiParabolicParams,
    /// Depth cap; the depth actually used is chosen per point.
    pub depth: usize,
    pub eigvec: (C64, C64),
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableSample {
    pub point: Point2,
    pub depth: usize,
    /// `|F^{(m+1)}(z) − F^{(m)}(z)|` in the max-norm.
    pub increment: f64,
    /// `depth · log10(1/|a|)`, the number of digits divided away by the inverse map.
    pub cancellation_digits: f64,
}

impl StableParam {
    pub fn new(params: SemiParabolicParams) -> Result<Self> {
        if params.a == C64::new(0.0, 0.0) {
            return Err(LabError::DegenerateJacobian);
        }
        Ok(Self {
            params,
            depth: MAX_DEPTH,
            eigvec: (params.mu / params.a, C64::new(1.0, 0.0)),
            tol: 1e-10,
        })
    }

    /// Smallest `m` with `|μ|^m (|z| + 1) < 1e-12`, capped at `self.depth`.
    pub fn depth_for(&self, z: C64) -> usize {
        let m = self.params.mu.norm();
        let mut k = 1;
        let mut s = m * (z.norm() + 1.0);
        while s >= 1e-12 && k < self.depth {
            s *= m;
            k += 1;
        }
        k
    }

    /// `H^{-m}(q_a + μ^m v z)` together with `d/dz` of the result.
    ///
    /// The inverse map is run on the offset from the fixed point, so the large
    /// terms `q_a − p(q_a) − a²w` cancel symbolically rather than in floating point.
    pub fn eval_at_depth(&self, z: C64, m: usize) -> (Point2, (C64, C64)) {
        let sp = &self.params;
        let (a, q) = (sp.a, sp.q_scalar);
        let s = sp.mu.powu(m as u32);
        let (mut dx, mut dy) = (s * self.eigvec.0 * z, s * self.eigvec.1 * z);
        let (mut tx, mut ty) = (s * self.eigvec.0, s * self.eigvec.1);
        let ia = 1.0 / a;
        for _ in 0..m {
            let nx = dy * ia;
            let ny = (dx - 2.0 * q * nx - nx * nx) * ia;
            let ntx = ty * ia;
            let nty = (tx - 2.0 * q * ntx - 2.0 * nx * ntx) * ia;
            dx = nx;
            dy = ny;
            tx = ntx;
            ty = nty;
        }
        (Point2::new(q + dx, sp.fixed_point.y + dy), (tx, ty))
    }

    pub fn sample(&self, z: C64) -> StableSample {
        let m = self.depth_for(z);
        let (p, _) = self.eval_at_depth(z, m);
        let (p1, _) = self.eval_at_depth(z, m + 1);
        StableSample {
            point: p,
            depth: m,
            increment: (p1 - p).norm_max(),
            cancellation_digits: m as f64 * (1.0 / self.params.a.norm()).log10(),
        }
    }
}

/// `F_a(z)` with its Cauchy certificate enforced against `sp.tol`.
pub fn stable_param(sp: &StableParam, z: C64) -> Result<Point2> {
    let s = sp.sample(z);
    if s.increment > sp.tol * (1.0 + s.point.norm_max()) {
        return Err(LabError::DepthInsufficient {
            increment: s.increment,
            tol: sp.tol,
            depth: s.depth,
        });
    }
    Ok(s.point)
}

/// `F_a(z)` and `F_a'(z)`.
pub fn stable_param_with_derivative(sp: &StableParam, z: C64) -> (Point2, (C64, C64)) {
    sp.eval_at_depth(z, sp.depth_for(z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalityReport {
    pub n_samples: usize,
    pub r: f64,
    /// `max |f(z) − q_a|` over parameters whose second coordinate lies in `|y| < r`.
    pub max_deviation: f64,
    pub deviation_bound: f64,
    pub min_abs_g_prime: f64,
    pub newton_failures: usize,
    pub passed: bool,
}

/// Solves `g(z) = y` by Newton from `start`.
pub fn solve_second_coordinate(sp: &StableParam, y: C64, start: C64) -> Option<C64> {
    let mut z = start;
    for _ in 0..60 {
        let (p, d) = stable_param_with_derivative(sp, z);
        let res = p.y - y;
        if res.norm() < 1e-14 * (1.0 + y.norm()) {
            return Some(z);
        }
        if d.1.norm() < 1e-300 {
            return None;
        }
        z -= res / d.1;
        if !z.is_finite() {
            return None;
        }
    }
    let res = (stable_param_with_derivative(sp, z).0.y - y).norm();
    (res < 1e-11 * (1.0 + y.norm())).then_some(z)
}

/// Samples the component of `W^s(q_a)` over the strip `|y| < r` on a polar grid,
/// solving `g(z) = y` by Newton continued along rays, and checks that it stays in the
/// vertical tube of radius `rho_prime / 4` without folds.
pub fn local_component(sp: &StableParam, r: f64, n_samples: usize, rho_prime: f64) -> VerticalityReport {
    let n_rings = ((n_samples as f64).sqrt().ceil() as usize).max(2);
    let n_rays = n_samples.div_ceil(n_rings).max(4);
    let mut max_dev: f64 = 0.0;
    let mut min_gp = f64::INFINITY;
    let mut failures = 0;
    let mut count = 0;
    for k in 0..n_rays {
        let dir = C64::from_polar(1.0, std::f64::consts::TAU * k as f64 / n_rays as f64);
        let mut z = C64::new(0.0, 0.0);
        for j in 1..=n_rings {
            // Stay strictly inside the open strip.
            let y = dir * (r * (1.0 - 1e-9) * j as f64 / n_rings as f64);
            match solve_second_coordinate(sp, y, z) {
                Some(zz) => {
                    z = zz;
                    let (p, d) = stable_param_with_derivative(sp, z);
                    max_dev = max_dev.max((p.x - sp.params.q_scalar).norm());
                    min_gp = min_gp.min(d.1.norm());
                    count += 1;
                }
                None => {
                    failures += 1;
                    break;
                }
            }
        }
    }
    let bound = rho_prime / 4.0;
    VerticalityReport {
        n_samples: count,
        r,
        max_deviation: max_dev,
        deviation_bound: bound,
        min_abs_g_prime: min_gp,
        newton_failures: failures,
        passed: failures == 0 && max_dev < bound && min_gp > 1e-8,
    }
}

/// The `a = 0` limit `F₀(z) = q₀ + (0, z)`.
pub fn degenerate_limit(params: &SemiParabolicParams, z: C64) -> Point2 {
    Point2::new(params.lambda.value / 2.0, z)
}

/// CSV rows `Re z, Im z, Re x, Im x, Re y, Im y`.
pub fn write_samples_csv<W: Write>(sp: &StableParam, zs: &[C64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "re_z,im_z,re_x,im_x,re_y,im_y")?;
    for z in zs {
        let p = sp.sample(*z).point;
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            z.re, z.im, p.x.re, p.x.im, p.y.re, p.y.im
        )?;
    }
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    num / den
}

/// `sup_{|z| ≤ radius} |F_a(z) − F₀(z)|` on a polar grid.
pub fn degeneration_gap(params: &SemiParabolicParams, radius: f64, n_rings: usize, n_rays: usize) -> Result<f64> {
    let sp = StableParam::new(*params)?;
    let mut gap: f64 = 0.0;
    for j in 0..=n_rings {
        for k in 0..n_rays {
            let z = C64::from_polar(radius * j as f64 / n_rings as f64, std::f64::consts::TAU * k as f64 / n_rays as f64);
            let p = stable_param(&sp, z)?;
            gap = gap.max((p - degenerate_limit(params, z)).norm_max());
        }
    }
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::henon_core::{mat_vec, RootOfUnity};
    use proptest::prelude::*;

    fn params(l: RootOfUnity, a: f64) -> SemiParabolicParams {
        SemiParabolicParams::new(l, C64::new(a, 0.0))
    }

    #[test]
    fn eigenvector_is_contracting_direction() {
        let sp = StableParam::new(params(RootOfUnity::one(), 0.05)).unwrap();
        let jac = sp.params.jacobian(sp.params.fixed_point);
        let (u, v) = mat_vec(&jac, sp.eigvec);
        assert!((u - sp.params.mu * sp.eigvec.0).norm() < 1e-10);
        assert!((v - sp.params.mu * sp.eigvec.1).norm() < 1e-10);
    }

    #[test]
    fn origin_is_the_fixed_point() {
        let sp = StableParam::new(params(RootOfUnity::one(), 0.05)).unwrap();
        assert_eq!(stable_param(&sp, C64::new(0.0, 0.0)).unwrap(), sp.params.fixed_point);
    }

    #[test]
    fn zero_jacobian_rejected() {
        assert_eq!(
            StableParam::new(params(RootOfUnity::one(), 0.0)),
            Err(LabError::DegenerateJacobian)
        );
    }

    #[test]
    fn functional_equation_on_disk() {
        for l in [RootOfUnity::one(), RootOfUnity::minus_one()] {
            let sp = StableParam::new(params(l, 0.05)).unwrap();
            for j in 0..=12 {
                for k in 0..24 {
                    let z = C64::from_polar(3.0 * j as f64 / 12.0, std::f64::consts::TAU * k as f64 / 24.0);
                    let lhs = stable_param(&sp, sp.params.mu * z).unwrap();
                    let rhs = sp.params.forward(stable_param(&sp, z).unwrap());
                    assert!((lhs - rhs).norm_max() <= 1e-9, "{z}");
                }
            }
        }
    }

    /// Power-series oracle: `F_a(z) = Σ (X_k, Y_k) z^k` solved order by order from the
    /// functional equation, independent of backward iteration.
    fn series_oracle(sp: &SemiParabolicParams, order: usize) -> (Vec<C64>, Vec<C64>) {
        let (a, mu, q) = (sp.a, sp.mu, sp.q_scalar);
        let mut xs = vec![q, mu / a];
        let mut ys = vec![a * q, C64::new(1.0, 0.0)];
        for k in 2..=order {
            let s: C64 = (1..k).map(|i| xs[i] * xs[k - i]).sum();
            let mk = mu.powu(k as u32);
            let xk = s / (mk - 2.0 * q - a * a / mk);
            xs.push(xk);
            ys.push(a * xk / mk);
        }
        (xs, ys)
    }

    #[test]
    fn matches_power_series_oracle() {
        let p = params(RootOfUnity::one(), 0.05);
        let sp = StableParam::new(p).unwrap();
        let (xs, ys) = series_oracle(&p, 30);
        for z in [C64::new(0.3, 0.1), C64::new(-1.0, 0.5), C64::new(0.0, 2.0)] {
            let ex: C64 = xs.iter().enumerate().map(|(k, c)| c * z.powu(k as u32)).sum();
            let ey: C64 = ys.iter().enumerate().map(|(k, c)| c * z.powu(k as u32)).sum();
            let got = stable_param(&sp, z).unwrap();
            assert!((got.x - ex).norm() < 1e-12 && (got.y - ey).norm() < 1e-12, "{z}");
        }
        // Leading coefficients: Y₂ ≈ −a/λ², X₂ = aY₂/μ² ~ −a⁴/λ⁴ scale.
        assert!((ys[2] + 0.05).norm() < 1e-3);
    }

    #[test]
    fn backward_orbit_leading_order() {
        // Second step of the backward orbit: x₁ = q_a + (μ^m/a) z up to O(μ^{2m}).
        let p = params(RootOfUnity::one(), 0.05);
        let sp = StableParam::new(p).unwrap();
        let z = C64::new(1.0, 0.5);
        for m in 10..=20usize {
            let s = p.mu.powu(m as u32);
            let step1 = sp.params.inverse(Point2::new(p.q_scalar + s * sp.eigvec.0 * z, p.fixed_point.y + s * z)).unwrap();
            let lead = p.q_scalar + s * z / p.a;
            assert!((step1.x - lead).norm() <= 1e-12 * (s / p.a).norm().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn depth_rule() {
        let sp = StableParam::new(params(RootOfUnity::one(), 0.05)).unwrap();
        let m = sp.depth_for(C64::new(3.0, 0.0));
        assert!(sp.params.mu.norm().powi(m as i32) * 4.0 < 1e-12);
        assert!(sp.params.mu.norm().powi(m as i32 - 1) * 4.0 >= 1e-12);
        let tiny = StableParam::new(params(RootOfUnity::one(), 0.9)).unwrap();
        assert_eq!(tiny.depth_for(C64::new(3.0, 0.0)), MAX_DEPTH);
    }

    #[test]
    fn degeneration_is_linear_in_a() {
        let ladder = [0.02, 0.04, 0.08];
        let gaps: Vec<f64> = ladder
            .iter()
            .map(|a| degeneration_gap(&params(RootOfUnity::one(), *a), 3.0, 6, 24).unwrap())
            .collect();
        let slope = loglog_slope(&ladder, &gaps);
        assert!((slope - 1.0).abs() <= 0.2, "slope {slope}");
        // The constant K = gap/a is stable across the ladder.
        let ks: Vec<f64> = ladder.iter().zip(&gaps).map(|(a, g)| g / a).collect();
        assert!(ks.iter().all(|k| (k / ks[0] - 1.0).abs() < 0.2), "{ks:?}");
    }

    #[test]
    fn verticality_sweep() {
        let sp = StableParam::new(params(RootOfUnity::one(), 0.02)).unwrap();
        let rep = local_component(&sp, 3.5, 400, crate::normal_form::DEFAULT_RHO_PRIME);
        assert_eq!(rep.newton_failures, 0);
        assert!(rep.passed, "{rep:?}");
        let devs: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|a| local_component(&StableParam::new(params(RootOfUnity::one(), *a)).unwrap(), 3.5, 100, crate::normal_form::DEFAULT_RHO_PRIME).max_deviation)
            .collect();
        let slope = loglog_slope(&[0.01, 0.02, 0.04], &devs);
        assert!((slope - 1.0).abs() < 0.2, "slope {slope}");
    }

    #[test]
    fn injective_on_samples() {
        let sp = StableParam::new(params(RootOfUnity::one(), 0.05)).unwrap();
        let mut pts: Vec<(C64, Point2)> = (0..2000)
            .map(|k| {
                let r = 3.0 * ((k * 7919) % 2000) as f64 / 2000.0;
                let z = C64::from_polar(r, 0.618_033_988_75 * std::f64::consts::TAU * k as f64);
                (z, sp.sample(z).point)
            })
            .collect();
        pts.sort_by(|a, b| a.1.y.re.partial_cmp(&b.1.y.re).unwrap());
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if pts[j].1.y.re - pts[i].1.y.re > 1e-9 {
                    break;
                }
                if (pts[i].0 - pts[j].0).norm() > 1e-3 {
                    assert!((pts[i].1 - pts[j].1).norm_max() > 1e-9);
                }
            }
        }
    }

    #[test]
    fn csv_columns() {
        let sp = StableParam::new(params(RootOfUnity::one(), 0.05)).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&sp, &[C64::new(1.0, 0.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 6);
    }

    proptest! {
        #[test]
        fn cauchy_certificate(a in 0.01f64..0.1, th in 0.0f64..std::f64::consts::TAU, r in 0.0f64..3.0) {
            let sp = StableParam::new(params(RootOfUnity::one(), a)).unwrap();
            let s = sp.sample(C64::from_polar(r, th));
            prop_assert!(s.increment <= 1e-10 * (1.0 + s.point.norm_max()));
        }
    }
}
