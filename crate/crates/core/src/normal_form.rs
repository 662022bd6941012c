//! Coordinate changes that bring `H` near its semi-parabolic fixed point to
//! `x₁ = λ(x + x^{m+1} + C x^{2m+1} + …)`, `y₁ = μy + x h(x, y)`, plus the
//! multiplicity count of the fixed point of `H^q`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::henon_core::{default_radius, mat_mul, Mat2, Point2, RootOfUnity, SemiParabolicParams, C64};
use crate::series::{invert_fiber, BiSeries, SeriesMap, TruncatedSeries1};
use crate::stable_manifold::{stable_param, StableParam};

/// Radius of the tube `D_{ρ′}(q₀) × D_r` around the local stable manifold.
pub const DEFAULT_RHO_PRIME: f64 = 0.35;

const FIT_DEGREE: usize = 10;
const FIT_NODES: usize = 64;

/// Admissible `|a|` for the normal-form pipeline.
pub fn default_delta(lambda: &RootOfUnity) -> f64 {
    if lambda.q == 1 {
        0.1
    } else {
        0.05
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub x_order: usize,
    pub y_order: usize,
}

impl Truncation {
    pub fn default_for(lambda: &RootOfUnity) -> Self {
        Self {
            x_order: 2 * lambda.q as usize + 4,
            y_order: 6,
        }
    }
}

/// One coordinate change in the chain from the original chart to the normal chart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransformStep {
    /// `ψ(x, y) = (x + f(y), g(y))` maps straightened coordinates to original ones.
    Straighten {
        f: TruncatedSeries1,
        g: TruncatedSeries1,
    },
    /// `X = t(x, y)`, keeping `y`.
    Fiber { t: BiSeries },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transform {
    pub steps: Vec<TransformStep>,
}

fn solve_scalar(target: C64, start: C64, f: impl Fn(C64) -> (C64, C64)) -> Option<C64> {
    let mut z = start;
    for _ in 0..80 {
        let (v, d) = f(z);
        let res = v - target;
        if res.norm() <= 1e-15 * (1.0 + target.norm()) {
            return Some(z);
        }
        if d.norm() < 1e-300 {
            return None;
        }
        let step = res / d;
        z -= step;
        if !z.is_finite() {
            return None;
        }
        if step.norm() < 1e-16 * (1.0 + z.norm()) {
            return Some(z);
        }
    }
    let (v, _) = f(z);
    ((v - target).norm() < 1e-11 * (1.0 + target.norm())).then_some(z)
}

impl Transform {
    /// Original coordinates to normal coordinates.
    pub fn to_normal(&self, pt: Point2) -> Option<Point2> {
        let mut cur = pt;
        for step in &self.steps {
            cur = match step {
                TransformStep::Straighten { f, g } => {
                    let dg = g.derivative();
                    let y = solve_scalar(cur.y, cur.y - g.coeffs[0], |z| (g.eval(z), dg.eval(z)))?;
                    Point2::new(cur.x - f.eval(y), y)
                }
                TransformStep::Fiber { t } => Point2::new(t.eval(cur.x, cur.y), cur.y),
            };
        }
        Some(cur)
    }

    /// Normal coordinates back to original coordinates.
    pub fn from_normal(&self, pt: Point2) -> Option<Point2> {
        let mut cur = pt;
        for step in self.steps.iter().rev() {
            cur = match step {
                TransformStep::Straighten { f, g } => Point2::new(cur.x + f.eval(cur.y), g.eval(cur.y)),
                TransformStep::Fiber { t } => {
                    let dt = t.d_dx();
                    let y = cur.y;
                    let lin = t.x_coeffs[1].eval(y);
                    let x = solve_scalar(cur.x, cur.x / lin, |x| (t.eval(x, y), dt.eval(x, y)))?;
                    Point2::new(x, y)
                }
            };
        }
        Some(cur)
    }

    /// `to_normal` together with its Jacobian at `pt`.
    pub fn to_normal_jacobian(&self, pt: Point2) -> Option<(Point2, Mat2)> {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let mut cur = pt;
        let mut jac: Mat2 = [[one, zero], [zero, one]];
        for step in &self.steps {
            let (next, local) = match step {
                TransformStep::Straighten { f, g } => {
                    let dg = g.derivative();
                    let y = solve_scalar(cur.y, cur.y - g.coeffs[0], |z| (g.eval(z), dg.eval(z)))?;
                    let dy = one / dg.eval(y);
                    let df = f.derivative().eval(y);
                    (Point2::new(cur.x - f.eval(y), y), [[one, -df * dy], [zero, dy]])
                }
                TransformStep::Fiber { t } => (
                    Point2::new(t.eval(cur.x, cur.y), cur.y),
                    [[t.d_dx().eval(cur.x, cur.y), t.d_dy().eval(cur.x, cur.y)], [zero, one]],
                ),
            };
            jac = mat_mul(&local, &jac);
            cur = next;
        }
        Some((cur, jac))
    }

    /// `from_normal` together with its Jacobian at `pt`.
    pub fn from_normal_jacobian(&self, pt: Point2) -> Option<(Point2, Mat2)> {
        let orig = self.from_normal(pt)?;
        let (_, j) = self.to_normal_jacobian(orig)?;
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        Some((orig, [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]]))
    }

    /// The fiber-preserving part of the chain as a forward/inverse series pair.
    pub fn fiber_series(&self, x_order: usize, y_order: usize) -> (BiSeries, BiSeries) {
        let x = BiSeries::x_var(x_order, y_order);
        let y = BiSeries::y_var(x_order, y_order);
        let mut fwd = x.clone();
        for step in &self.steps {
            if let TransformStep::Fiber { t } = step {
                fwd = t.truncate(x_order, y_order).compose(&fwd, &y);
            }
        }
        let inv = invert_fiber(&fwd);
        (fwd, inv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormData {
    pub lambda: RootOfUnity,
    pub a: C64,
    pub nu: usize,
    pub m: usize,
    #[serde(rename = "C")]
    pub c: C64,
    pub transform: Transform,
    /// The conjugated map as series in normal coordinates.
    pub series: SeriesMap,
    pub residual_norm: f64,
    /// Largest coefficient of `y₁ − μy = x h(x, y)`.
    pub h_norm: f64,
    /// Max deviation of the straightened map from `x = 0` invariance and `y₁ = μy` on it.
    pub straightening_residual: f64,
    pub truncation: Truncation,
}

impl NormalFormData {
    /// `H̃ = φ ∘ H ∘ φ⁻¹` evaluated through the coordinate chain.
    pub fn conjugated_map(&self, params: &SemiParabolicParams, pt: Point2) -> Option<Point2> {
        let orig = self.transform.from_normal(pt)?;
        self.transform.to_normal(params.forward(orig))
    }

    /// `H̃⁻¹ = φ ∘ H⁻¹ ∘ φ⁻¹`.
    pub fn conjugated_inverse(&self, params: &SemiParabolicParams, pt: Point2) -> Option<Point2> {
        let orig = self.transform.from_normal(pt)?;
        self.transform.to_normal(params.inverse(orig).ok()?)
    }

    /// `H̃` and `DH̃` at a point in normal coordinates.
    pub fn conjugated_jacobian(&self, params: &SemiParabolicParams, pt: Point2) -> Option<(Point2, Mat2)> {
        let (orig, d_in) = self.transform.from_normal_jacobian(pt)?;
        let (img, d_out) = self.transform.to_normal_jacobian(params.forward(orig))?;
        Some((img, mat_mul(&d_out, &mat_mul(&params.jacobian(orig), &d_in))))
    }

    /// `H̃⁻¹` and `DH̃⁻¹` at a point in normal coordinates.
    pub fn conjugated_inverse_jacobian(&self, params: &SemiParabolicParams, pt: Point2) -> Option<(Point2, Mat2)> {
        let (orig, d_in) = self.transform.from_normal_jacobian(pt)?;
        let dinv = params.inverse_jacobian(orig).ok()?;
        let (img, d_out) = self.transform.to_normal_jacobian(params.inverse(orig).ok()?)?;
        Some((img, mat_mul(&d_out, &mat_mul(&dinv, &d_in))))
    }

    /// The one-variable normal form `x ↦ first(x, 0)`.
    pub fn one_dim(&self, x: C64) -> C64 {
        self.series.first.eval(x, C64::new(0.0, 0.0))
    }

    pub fn one_dim_derivative(&self, x: C64) -> C64 {
        self.series.first.d_dx().eval(x, C64::new(0.0, 0.0))
    }
}

/// Degree-`FIT_DEGREE` Taylor fit of `F_a = (f, g)` from samples on `|y| = r` (discrete
/// Fourier transform); returns the fits and the max fit error on `|y| = r/2`.
pub fn fit_stable_manifold(params: &SemiParabolicParams, r: f64) -> Result<(TruncatedSeries1, TruncatedSeries1, f64)> {
    let sp = StableParam::new(*params)?;
    let samples = (0..FIT_NODES)
        .map(|j| stable_param(&sp, C64::from_polar(r, TAU * j as f64 / FIT_NODES as f64)))
        .collect::<Result<Vec<_>>>()?;
    let (f, g) = straighten_fit_from_samples(&samples, r);
    let mut err: f64 = 0.0;
    for j in 0..32 {
        let z = C64::from_polar(r / 2.0, TAU * (j as f64 + 0.5) / 32.0);
        let p = stable_param(&sp, z)?;
        err = err.max((f.eval(z) - p.x).norm()).max((g.eval(z) - p.y).norm());
    }
    Ok((f, g, err))
}

fn straighten_fit_from_samples(samples: &[Point2], r: f64) -> (TruncatedSeries1, TruncatedSeries1) {
    let n = samples.len();
    let mut fc = Vec::with_capacity(FIT_DEGREE + 1);
    let mut gc = Vec::with_capacity(FIT_DEGREE + 1);
    for k in 0..=FIT_DEGREE {
        let mut sf = C64::new(0.0, 0.0);
        let mut sg = C64::new(0.0, 0.0);
        for (j, p) in samples.iter().enumerate() {
            let w = C64::from_polar(1.0, -TAU * (j * k) as f64 / n as f64);
            sf += p.x * w;
            sg += p.y * w;
        }
        let scale = 1.0 / (n as f64 * r.powi(k as i32));
        fc.push(sf * scale);
        gc.push(sg * scale);
    }
    (TruncatedSeries1::new(fc, FIT_DEGREE), TruncatedSeries1::new(gc, FIT_DEGREE))
}

/// Builds `ψ(x, y) = (x + f(y), g(y))` from samples of `F_a` on `|y| = r` and returns it
/// together with `G = ψ⁻¹ ∘ H ∘ ψ` as series about the origin.
pub fn straighten_stable_manifold(
    params: &SemiParabolicParams,
    f_a_samples: &[Point2],
    r: f64,
    trunc: Truncation,
) -> Result<(TransformStep, SeriesMap)> {
    let (f, g) = if params.a == C64::new(0.0, 0.0) {
        let lam = params.lambda.value;
        (
            TruncatedSeries1::constant(lam / 2.0, FIT_DEGREE),
            TruncatedSeries1::var(FIT_DEGREE),
        )
    } else {
        // The manifold passes through the fixed point exactly; pin the fitted constants.
        let (mut f, mut g) = straighten_fit_from_samples(f_a_samples, r);
        f.coeffs[0] = params.q_scalar;
        g.coeffs[0] = params.a * params.q_scalar;
        (f, g)
    };
    // No horizontal folds: g' stays away from zero on the fit disk.
    let dg = g.derivative();
    let mut min_dg = f64::INFINITY;
    for j in 0..=8 {
        for k in 0..32 {
            let z = C64::from_polar(r * j as f64 / 8.0, TAU * k as f64 / 32.0);
            min_dg = min_dg.min(dg.eval(z).norm());
        }
    }
    if min_dg < 1e-8 {
        return Err(LabError::FoldedManifold { min_derivative: min_dg });
    }
    Ok((
        TransformStep::Straighten { f: f.clone(), g: g.clone() },
        straightened_series(params, &f, &g, trunc),
    ))
}

fn straightened_series(params: &SemiParabolicParams, f: &TruncatedSeries1, g: &TruncatedSeries1, trunc: Truncation) -> SeriesMap {
    // Internal orders carry headroom so rectangular truncation does not pollute kept terms.
    let (nx, ny) = (trunc.x_order + 2, trunc.y_order + 4);
    let n1 = nx + ny;
    let (a, q) = (params.a, params.q_scalar);
    let mut ft = f.clone();
    ft.coeffs[0] = C64::new(0.0, 0.0);
    let mut gt = g.clone();
    gt.coeffs[0] = C64::new(0.0, 0.0);
    let ft = TruncatedSeries1::new(ft.coeffs, n1);
    let gt = TruncatedSeries1::new(gt.coeffs, n1);
    let x = BiSeries::x_var(nx, ny);
    let ft_y = BiSeries::from_y(&ft, nx, ny);
    let gt_y = BiSeries::from_y(&gt, nx, ny);
    let xf = &x + &ft_y;
    // y' = g̃⁻¹(a(x + f̃(y))).
    let ginv = gt.reversion();
    let y_new = ginv.compose_bi(&xf.scale(a));
    // x' = (x + f̃)² + 2q(x + f̃) + a g̃(y) − f̃(y').
    let x_new = &(&(&(&xf * &xf) + &xf.scale(2.0 * q)) + &gt_y.scale(a)) - &ft.compose_bi(&y_new);
    SeriesMap {
        first: x_new.truncate(nx, ny),
        second: y_new.truncate(nx, ny),
    }
}

fn fiber_step(map: &SeriesMap, t: BiSeries) -> (SeriesMap, TransformStep) {
    let s = invert_fiber(&t);
    (map.conjugate_fiber(&t, &s), TransformStep::Fiber { t })
}

/// `X = u(y) x` with `u(Y) = ∏ a₁(μⁿY)/λ`, making the linear coefficient constant.
pub fn normalize_a1(map: &SeriesMap, lambda: C64, mu: C64) -> Result<(SeriesMap, TransformStep)> {
    if mu.norm() >= 1.0 {
        return Err(LabError::InvalidInput("normalize_a1 needs |mu| < 1".into()));
    }
    let a1 = map.a(1);
    let dev = (a1.coeffs[0] - lambda).norm();
    if dev > 0.1 {
        return Err(LabError::ProductDivergence { deviation: dev });
    }
    let ny = a1.order;
    let base = a1.scale(1.0 / lambda);
    let mut u = TruncatedSeries1::constant(C64::new(1.0, 0.0), ny);
    let mut factor = base.clone();
    for _ in 0..10_000 {
        let tail = factor.coeffs[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
        u = &u * &factor;
        if tail < 1e-16 {
            break;
        }
        factor = factor.dilate(mu);
    }
    let t = BiSeries::monomial_series(&u, 1, map.x_order(), map.y_order());
    Ok(fiber_step(map, t))
}

/// `X = x + v(y) x^j` removing the `y`-dependence of `a_j`, with
/// `v(Y) = λ⁻¹ Σ_n λ^{(j−1)n} (a_j(μⁿY) − a_j(0))`.
pub fn flatten_coeff(map: &SeriesMap, j: usize, lambda: &RootOfUnity, mu: C64) -> Result<(SeriesMap, TransformStep)> {
    for k in 2..j {
        if map.a(k).coeffs[1..].iter().any(|c| c.norm() > 1e-8) {
            return Err(LabError::InvalidInput(format!("a_{k} is not constant before flattening a_{j}")));
        }
    }
    let aj = map.a(j);
    let lam = lambda.value;
    let rot = lambda.pow(j as i64 - 1);
    let mut v = vec![C64::new(0.0, 0.0); aj.order + 1];
    let mut mul = mu;
    for (vl, c) in v.iter_mut().zip(&aj.coeffs).skip(1) {
        // Geometric sum Σ_n (λ^{j−1} μ^l)^n in closed form.
        *vl = c / (lam * (1.0 - rot * mul));
        mul *= mu;
    }
    let mut t = BiSeries::x_var(map.x_order(), map.y_order());
    t.x_coeffs[j] = TruncatedSeries1::new(v, map.y_order());
    Ok(fiber_step(map, t))
}

/// `X = x + b x^k` with `b = a_k/(λ − λ^k)`.
pub fn eliminate_nonresonant(map: &SeriesMap, k: usize, lambda: &RootOfUnity) -> Result<(SeriesMap, TransformStep)> {
    if lambda.pow(k as i64) == lambda.value || (k as i64 - 1) % lambda.q as i64 == 0 {
        return Err(LabError::ResonantIndex { k, q: lambda.q });
    }
    let b = map.a(k).coeffs[0] / (lambda.value - lambda.pow(k as i64));
    let mut t = BiSeries::x_var(map.x_order(), map.y_order());
    t.set(k, 0, b);
    let (out, step) = fiber_step(map, t);
    check_unchanged_below(map, &out, k)?;
    Ok((out, step))
}

/// `X = x + b x^{(j−ν)q+1}` with `b = (a_{jq+1}/λ)/((2ν − j)q)`, for `ν < j < 2ν`.
pub fn eliminate_resonant(map: &SeriesMap, j: usize, nu: usize, lambda: &RootOfUnity) -> Result<(SeriesMap, TransformStep)> {
    if j <= nu || j >= 2 * nu {
        return Err(LabError::BadResonanceRange { j, nu });
    }
    let q = lambda.q as usize;
    let alpha = map.a(j * q + 1).coeffs[0] / lambda.value;
    let b = alpha / ((2 * nu - j) * q) as f64;
    let mut t = BiSeries::x_var(map.x_order(), map.y_order());
    t.set((j - nu) * q + 1, 0, b);
    let (out, step) = fiber_step(map, t);
    check_unchanged_below(map, &out, j * q + 1)?;
    Ok((out, step))
}

/// `X = A x` with `A^m = a_{m+1}/λ`.
pub fn scale_resonant(map: &SeriesMap, m: usize, lambda: C64) -> (SeriesMap, TransformStep) {
    let ratio = map.a(m + 1).coeffs[0] / lambda;
    let big_a = ratio.powf(1.0 / m as f64);
    let t = BiSeries::x_var(map.x_order(), map.y_order()).scale(big_a);
    fiber_step(map, t)
}

fn check_unchanged_below(before: &SeriesMap, after: &SeriesMap, k: usize) -> Result<()> {
    for i in 0..k {
        let d = (before.a(i) - after.a(i)).max_abs();
        if d > 1e-12 * (1.0 + before.a(i).max_abs()) {
            return Err(LabError::InvalidInput(format!("coordinate change perturbed a_{i} by {d:e}")));
        }
    }
    Ok(())
}

/// Deviation of the first component from `λ(x + x^{m+1} + C x^{2m+1})` through `x^{2m+1}`.
pub fn normal_form_residual(map: &SeriesMap, lambda: C64, m: usize, c: C64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..=(2 * m + 1).min(map.first.x_order) {
        let target = if k == 1 || k == m + 1 {
            lambda
        } else if k == 2 * m + 1 {
            lambda * c
        } else {
            C64::new(0.0, 0.0)
        };
        for (l, v) in map.a(k).coeffs.iter().enumerate() {
            let t = if l == 0 { target } else { C64::new(0.0, 0.0) };
            worst = worst.max((v - t).norm());
        }
    }
    worst
}

/// Runs the full chain: straighten, normalize `a₁`, flatten, then eliminate
/// non-resonant and resonant terms around the first nonzero resonant coefficient.
pub fn full_normal_form(params: &SemiParabolicParams, trunc: Truncation) -> Result<NormalFormData> {
    let lambda = params.lambda;
    let lam = lambda.value;
    let q = lambda.q as usize;
    let r = default_radius(params);
    let samples = if params.a == C64::new(0.0, 0.0) {
        vec![]
    } else {
        let sp = StableParam::new(*params)?;
        (0..FIT_NODES)
            .map(|j| stable_param(&sp, C64::from_polar(r, TAU * j as f64 / FIT_NODES as f64)))
            .collect::<Result<Vec<_>>>()?
    };
    let (straighten, mut map) = straighten_stable_manifold(params, &samples, r, trunc)?;
    let straightening_residual = map.a(0).max_abs().max((map.second.x_coeffs[0].coeffs[1] - params.mu).norm()).max(
        map.second.x_coeffs[0]
            .coeffs
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != 1)
            .map(|(_, c)| c.norm())
            .fold(0.0, f64::max),
    );
    let mut steps = vec![straighten];
    let mu = params.mu;

    let (m1, s1) = normalize_a1(&map, lam, mu)?;
    map = m1;
    steps.push(s1);
    for j in 2..=map.x_order().min(trunc.x_order) {
        let (mj, sj) = flatten_coeff(&map, j, &lambda, mu)?;
        map = mj;
        steps.push(sj);
    }

    let mut nu = 0;
    let c;
    let mut k = 2;
    loop {
        if k > trunc.x_order {
            return Err(LabError::InvalidInput(format!(
                "x-order {} too small to resolve the multiplicity",
                trunc.x_order
            )));
        }
        if (k - 1) % q != 0 {
            let (mk, sk) = eliminate_nonresonant(&map, k, &lambda)?;
            map = mk;
            steps.push(sk);
        } else {
            let j = (k - 1) / q;
            if nu == 0 {
                if (map.a(k).coeffs[0] / lam).norm() > 1e-8 {
                    nu = j;
                    let (mk, sk) = scale_resonant(&map, nu * q, lam);
                    map = mk;
                    steps.push(sk);
                }
            } else if j < 2 * nu {
                let (mk, sk) = eliminate_resonant(&map, j, nu, &lambda)?;
                map = mk;
                steps.push(sk);
            } else {
                c = map.a(k).coeffs[0] / lam;
                break;
            }
        }
        k += 1;
    }
    let m = nu * q;
    let residual_norm = normal_form_residual(&map, lam, m, c);
    let mut h = map.second.clone();
    h.x_coeffs[0] = TruncatedSeries1::zero(h.y_order);
    let h_norm = h.max_abs();
    let series = SeriesMap {
        first: map.first.truncate(trunc.x_order, trunc.y_order),
        second: map.second.truncate(trunc.x_order, trunc.y_order),
    };
    Ok(NormalFormData {
        lambda,
        a: params.a,
        nu,
        m,
        c,
        transform: Transform { steps },
        series,
        residual_norm,
        h_norm,
        straightening_residual,
        truncation: trunc,
    })
}

/// Number of fixed points of `H^q` (with multiplicity) within `radius` of `q_a`,
/// by the argument principle after eliminating `y` through the second equation.
pub fn semiparabolic_multiplicity(params: &SemiParabolicParams, radius: f64) -> Result<usize> {
    let q = params.lambda.q as usize;
    let nodes = 2048;
    let center = params.q_scalar;
    // y = φ(x) solves (H^q)₂(x, y) = y; Newton continued around the contour.
    let solve_y = |x: C64, y0: C64| -> Option<C64> {
        let mut y = y0;
        for _ in 0..50 {
            let (img, jac) = params.jacobian_n(Point2::new(x, y), q);
            let res = img.y - y;
            let d = jac[1][1] - 1.0;
            let step = res / d;
            y -= step;
            if step.norm() < 1e-16 * (1.0 + y.norm()) {
                return Some(y);
            }
        }
        let img = params.forward_n(Point2::new(x, y), q);
        ((img.y - y).norm() < 1e-12).then_some(y)
    };
    let mut y = params.fixed_point.y;
    let mut values = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let x = center + C64::from_polar(radius, TAU * k as f64 / nodes as f64);
        y = solve_y(x, y).ok_or_else(|| LabError::NoConvergence {
            what: "implicit second coordinate".into(),
            iterations: 50,
            residual: f64::NAN,
        })?;
        values.push(params.forward_n(Point2::new(x, y), q).x - x);
    }
    let min_val = values.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    if min_val < 1e-9 {
        return Err(LabError::ContourThroughZero { distance: min_val });
    }
    let winding: f64 = (0..nodes).map(|k| (values[(k + 1) % nodes] / values[k]).arg()).sum::<f64>() / TAU;
    Ok(winding.round() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable_manifold::loglog_slope;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn params(l: RootOfUnity, a: f64) -> SemiParabolicParams {
        SemiParabolicParams::new(l, c(a, 0.0))
    }

    /// A synthetic map with given first-component coefficients and `y₁ = μy`.
    fn synthetic(first: &[(usize, usize, C64)], mu: C64, nx: usize, ny: usize) -> SeriesMap {
        let mut f = BiSeries::zero(nx, ny);
        for (i, j, v) in first {
            f.set(*i, *j, *v);
        }
        SeriesMap {
            first: f,
            second: BiSeries::y_var(nx, ny).scale(mu),
        }
    }

    #[test]
    fn straightening_at_zero_is_translation() {
        let p = params(RootOfUnity::one(), 0.0);
        let (step, map) = straighten_stable_manifold(&p, &[], 3.5, Truncation::default_for(&p.lambda)).unwrap();
        let tr = Transform { steps: vec![step] };
        let pt = Point2::new(c(0.7, 0.1), c(-0.3, 0.2));
        let n = tr.to_normal(pt).unwrap();
        assert!((n - Point2::new(pt.x - 0.5, pt.y)).norm_max() < 1e-15);
        // x ↦ x² + x: the translated parabolic polynomial.
        assert!((map.a(1).coeffs[0] - 1.0).norm() < 1e-15 && (map.a(2).coeffs[0] - 1.0).norm() < 1e-15);
    }

    #[test]
    fn straightened_manifold_is_invariant() {
        let p = params(RootOfUnity::one(), 0.05);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        assert!(nf.straightening_residual < 1e-9, "{}", nf.straightening_residual);
        let straight = Transform { steps: vec![nf.transform.steps[0].clone()] };
        for k in 0..16 {
            let y = C64::from_polar(2.0, TAU * k as f64 / 16.0);
            let orig = straight.from_normal(Point2::new(c(0.0, 0.0), y)).unwrap();
            let img = straight.to_normal(p.forward(orig)).unwrap();
            assert!(img.x.norm() < 1e-9 && (img.y - p.mu * y).norm() < 1e-9);
        }
    }

    #[test]
    fn straightening_converges_linearly_in_a() {
        // Unit vertical radius: on |y| = 3 at a = 0.08 the fitted g is within reach of its
        // critical point and the inverse is visibly quadratic in a.
        let ladder = [0.02, 0.04, 0.08];
        let pts: Vec<Point2> = (0..40)
            .map(|k| {
                let t = TAU * k as f64 / 40.0;
                Point2::new(C64::from_polar(DEFAULT_RHO_PRIME, t), C64::from_polar(1.0, 2.0 * t))
            })
            .collect();
        let base = params(RootOfUnity::one(), 0.0);
        let (s0, _) = straighten_stable_manifold(&base, &[], 3.5, Truncation::default_for(&base.lambda)).unwrap();
        let t0 = Transform { steps: vec![s0] };
        let gaps: Vec<f64> = ladder
            .iter()
            .map(|a| {
                let p = params(RootOfUnity::one(), *a);
                let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
                let ta = Transform { steps: vec![nf.transform.steps[0].clone()] };
                pts.iter()
                    .map(|pt| (ta.to_normal(*pt).unwrap() - t0.to_normal(*pt).unwrap()).norm_max())
                    .fold(0.0, f64::max)
            })
            .collect();
        let ks: Vec<f64> = gaps.iter().zip(&ladder).map(|(g, a)| g / a).collect();
        assert!(ks.iter().all(|k| (k / ks[0] - 1.0).abs() < 0.25), "{ks:?}");
    }

    #[test]
    fn normalize_a1_examples() {
        let one = C64::new(1.0, 0.0);
        let lam = RootOfUnity::one();
        let flat = synthetic(&[(1, 0, one), (2, 0, one)], c(0.3, 0.0), 4, 4);
        let (out, step) = normalize_a1(&flat, one, c(0.3, 0.0)).unwrap();
        assert_eq!(out.a(1), flat.a(1));
        if let TransformStep::Fiber { t } = step {
            assert!((&t - &BiSeries::x_var(4, 4)).max_abs() < 1e-15);
        }
        // μ = 0: single factor u(Y) = 1 + Y.
        let m0 = synthetic(&[(1, 0, one), (1, 1, one)], c(0.0, 0.0), 4, 4);
        let (_, step) = normalize_a1(&m0, one, c(0.0, 0.0)).unwrap();
        let TransformStep::Fiber { t } = step else { panic!() };
        assert_eq!(t.x_coeffs[1].coeffs[..3], [one, one, c(0.0, 0.0)]);
        // μ = 0.5: product oracle ∏(1 + 0.5ⁿY) has Y-coefficient Σ 0.5ⁿ = 2.
        let m5 = synthetic(&[(1, 0, one), (1, 1, one)], c(0.5, 0.0), 4, 4);
        let (out, step) = normalize_a1(&m5, one, c(0.5, 0.0)).unwrap();
        let TransformStep::Fiber { t } = step else { panic!() };
        assert!((t.x_coeffs[1].coeffs[1] - 2.0).norm() < 1e-12);
        // Y² coefficient of ∏(1 + 2⁻ⁿY): Σ_{n<k} 2^{-n-k} = 4/3.
        assert!((t.x_coeffs[1].coeffs[2] - 4.0 / 3.0).norm() < 1e-12);
        assert!(out.a(1).coeffs[1].norm() <= 1e-12);
        let _ = lam;
        let bad = synthetic(&[(1, 0, c(1.5, 0.0))], c(0.5, 0.0), 4, 4);
        assert!(matches!(normalize_a1(&bad, one, c(0.5, 0.0)), Err(LabError::ProductDivergence { .. })));
    }

    #[test]
    fn flatten_examples() {
        let one = C64::new(1.0, 0.0);
        let lam = RootOfUnity::one();
        let constant = synthetic(&[(1, 0, one), (2, 0, c(0.7, 0.0))], c(0.3, 0.0), 6, 8);
        let (out, _) = flatten_coeff(&constant, 2, &lam, c(0.3, 0.0)).unwrap();
        assert!((&out.first - &constant.first).max_abs() < 1e-15);
        // μ = 0: v(Y) = a₂(Y) − a₂(0).
        let m0 = synthetic(&[(1, 0, one), (2, 0, one), (2, 2, one)], c(0.0, 0.0), 6, 8);
        let (_, step) = flatten_coeff(&m0, 2, &lam, c(0.0, 0.0)).unwrap();
        let TransformStep::Fiber { t } = step else { panic!() };
        assert!((t.x_coeffs[2].coeffs[2] - 1.0).norm() < 1e-15);
        // j = 2, a₂ = 1 + y², μ = 0.3: conjugation oracle at order 8 leaves a₂ ≡ 1.
        let m3 = synthetic(&[(1, 0, one), (2, 0, one), (2, 2, one)], c(0.3, 0.0), 8, 8);
        let (out, _) = flatten_coeff(&m3, 2, &lam, c(0.3, 0.0)).unwrap();
        assert!((out.a(2).coeffs[0] - 1.0).norm() < 1e-12);
        assert!(out.a(2).coeffs[1..].iter().all(|v| v.norm() < 1e-12));
        assert_eq!(out.a(1), m3.a(1));
    }

    #[test]
    fn flatten_general_lambda() {
        let lam = RootOfUnity::new(1, 3).unwrap();
        let l = lam.value;
        let m = synthetic(&[(1, 0, l), (3, 0, c(0.2, 0.1)), (3, 1, c(0.5, 0.0)), (3, 3, c(-0.3, 0.2))], c(0.2, 0.1), 6, 6);
        let (out, _) = flatten_coeff(&m, 3, &lam, c(0.2, 0.1)).unwrap();
        assert!(out.a(3).coeffs[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn nonresonant_examples() {
        let lam = RootOfUnity::minus_one();
        let m = synthetic(&[(1, 0, c(-1.0, 0.0)), (2, 0, c(1.0, 0.0))], c(0.0, 0.0), 6, 2);
        let (out, step) = eliminate_nonresonant(&m, 2, &lam).unwrap();
        let TransformStep::Fiber { t } = step else { panic!() };
        assert!((t.coeff(2, 0) + 0.5).norm() < 1e-15);
        assert!(out.a(2).coeffs[0].norm() <= 1e-12);
        let zero = synthetic(&[(1, 0, c(-1.0, 0.0))], c(0.0, 0.0), 6, 2);
        let (same, _) = eliminate_nonresonant(&zero, 2, &lam).unwrap();
        assert_eq!(same.first, zero.first);
        assert!(matches!(eliminate_nonresonant(&m, 3, &lam), Err(LabError::ResonantIndex { k: 3, q: 2 })));
    }

    #[test]
    fn resonant_elimination_on_synthetic_series() {
        // q = 1, ν = 2: x + x³ + 0.4x⁴; the x⁴ term is removed by X = x + b x².
        let lam = RootOfUnity::one();
        let one = C64::new(1.0, 0.0);
        let m = synthetic(&[(1, 0, one), (3, 0, one), (4, 0, c(0.4, 0.0))], c(0.0, 0.0), 7, 1);
        let (out, _) = eliminate_resonant(&m, 3, 2, &lam).unwrap();
        assert!(out.a(4).coeffs[0].norm() <= 1e-12, "{}", out.a(4).coeffs[0]);
        assert!((out.a(3).coeffs[0] - 1.0).norm() < 1e-12 && out.a(2).coeffs[0].norm() < 1e-12);
        let clean = synthetic(&[(1, 0, one), (3, 0, one)], c(0.0, 0.0), 7, 1);
        let (same, _) = eliminate_resonant(&clean, 3, 2, &lam).unwrap();
        assert!((&same.first - &clean.first).max_abs() < 1e-15);
        assert!(matches!(eliminate_resonant(&m, 2, 1, &lam), Err(LabError::BadResonanceRange { .. })));
    }

    #[test]
    fn one_dimensional_normal_forms() {
        let p = params(RootOfUnity::one(), 0.0);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        assert_eq!((nf.nu, nf.m), (1, 1));
        assert!(nf.residual_norm < 1e-12);
        let p = params(RootOfUnity::minus_one(), 0.0);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        assert_eq!((nf.nu, nf.m), (1, 2));
        assert!(nf.residual_norm <= 1e-10);
        assert!(nf.series.a(2).coeffs[0].norm() <= 1e-10);
    }

    /// Independent 1-D oracle: conjugate u ↦ −u + u² (x² − 3/4 at −1/2) by hand.
    #[test]
    fn one_dim_oracle_for_minus_one() {
        let p = params(RootOfUnity::minus_one(), 0.0);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        // Direct: X = u − u²/2 kills u²; u³ coefficient becomes −(1 + 2·b² − ...) computed
        // from the one-variable composition below.
        let n = 8;
        let f = TruncatedSeries1::new(vec![c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)], n);
        let t = TruncatedSeries1::new(vec![c(0.0, 0.0), c(1.0, 0.0), c(-0.5, 0.0)], n);
        let g = t.compose(&f).compose(&t.reversion());
        // Then scaling by A with A² = a₃/λ gives coefficient λ; the ratio a₅/a₃² is scale-free
        // once the x⁴ term has been removed.
        let b4 = g.coeffs[4] / (-1.0 - 1.0);
        let t4 = TruncatedSeries1::new(vec![c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), b4], n);
        let g2 = t4.compose(&g).compose(&t4.reversion());
        let a3 = g2.coeffs[3] / -1.0;
        let cc = (g2.coeffs[5] / -1.0) / (a3 * a3);
        assert!((nf.c - cc).norm() < 1e-10, "{} vs {}", nf.c, cc);
    }

    #[test]
    fn residual_grows_at_most_linearly() {
        let l = RootOfUnity::minus_one();
        let r0 = full_normal_form(&params(l, 0.0), Truncation::default_for(&l)).unwrap().residual_norm;
        for a in [0.01, 0.02, 0.04] {
            let nf = full_normal_form(&params(l, a), Truncation::default_for(&l)).unwrap();
            assert!(nf.residual_norm <= r0 + 10.0 * a, "{a}: {}", nf.residual_norm);
            assert_eq!(nf.nu, 1);
        }
    }

    #[test]
    fn h_is_order_a() {
        let l = RootOfUnity::one();
        let ladder = [0.01, 0.02, 0.04];
        let hs: Vec<f64> = ladder
            .iter()
            .map(|a| full_normal_form(&params(l, *a), Truncation::default_for(&l)).unwrap().h_norm)
            .collect();
        let slope = loglog_slope(&ladder, &hs);
        assert!(slope >= 0.8, "slope {slope}, {hs:?}");
    }

    #[test]
    fn transform_round_trips() {
        let p = params(RootOfUnity::one(), 0.05);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        let (fwd, inv) = nf.transform.fiber_series(6, 6);
        let y = BiSeries::y_var(6, 6);
        let id = fwd.compose(&inv, &y);
        assert!((&id - &BiSeries::x_var(6, 6)).max_abs() <= 1e-10);
        for k in 0..20 {
            let pt = Point2::new(C64::from_polar(0.05, k as f64), C64::from_polar(2.0, 0.3 * k as f64));
            let back = nf.transform.to_normal(nf.transform.from_normal(pt).unwrap()).unwrap();
            assert!((back - pt).norm_max() < 1e-12);
        }
    }

    #[test]
    fn numerical_conjugate_matches_series() {
        let p = params(RootOfUnity::one(), 0.05);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        for k in 0..12 {
            let pt = Point2::new(C64::from_polar(0.01, k as f64), C64::from_polar(0.5, 0.5 * k as f64));
            let num = nf.conjugated_map(&p, pt).unwrap();
            let (s1, s2) = nf.series.eval(pt.x, pt.y);
            assert!((num.x - s1).norm() < 1e-10 && (num.y - s2).norm() < 1e-10);
        }
    }

    #[test]
    fn conjugated_jacobian_matches_differences() {
        let p = params(RootOfUnity::one(), 0.05);
        let nf = full_normal_form(&p, Truncation::default_for(&p.lambda)).unwrap();
        let pt = Point2::new(c(0.02, 0.01), c(0.4, -0.3));
        let (_, j) = nf.conjugated_jacobian(&p, pt).unwrap();
        let h = 1e-6;
        let dx = (nf.conjugated_map(&p, Point2::new(pt.x + h, pt.y)).unwrap()
            - nf.conjugated_map(&p, Point2::new(pt.x - h, pt.y)).unwrap())
            .scale_components(1.0 / (2.0 * h));
        let dy = (nf.conjugated_map(&p, Point2::new(pt.x, pt.y + h)).unwrap()
            - nf.conjugated_map(&p, Point2::new(pt.x, pt.y - h)).unwrap())
            .scale_components(1.0 / (2.0 * h));
        assert!((j[0][0] - dx.x).norm() < 1e-7 && (j[1][0] - dx.y).norm() < 1e-7);
        assert!((j[0][1] - dy.x).norm() < 1e-7 && (j[1][1] - dy.y).norm() < 1e-7);
        let img = nf.conjugated_map(&p, pt).unwrap();
        let (back, jinv) = nf.conjugated_inverse_jacobian(&p, img).unwrap();
        assert!((back - pt).norm_max() < 1e-12);
        let prod = mat_mul(&jinv, &j);
        assert!((prod[0][0] - 1.0).norm() < 1e-9 && prod[0][1].norm() < 1e-9 && prod[1][0].norm() < 1e-9);
    }

    #[test]
    fn multiplicity_at_zero_and_perturbed() {
        assert_eq!(semiparabolic_multiplicity(&params(RootOfUnity::one(), 0.0), 0.05).unwrap(), 2);
        assert_eq!(semiparabolic_multiplicity(&params(RootOfUnity::one(), 0.05), 0.05).unwrap(), 2);
        assert_eq!(semiparabolic_multiplicity(&params(RootOfUnity::minus_one(), 0.0), 0.05).unwrap(), 3);
        assert_eq!(semiparabolic_multiplicity(&params(RootOfUnity::minus_one(), 0.05), 0.05).unwrap(), 3);
    }
}
