//! Attracting petals, attracting/repelling sectors, Fatou-type coordinates,
//! cone fields and the metrics used to certify weak horizontal expansion.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::henon_core::{mat_vec, Mat2, Point2, SemiParabolicParams, C64};
use crate::normal_form::NormalFormData;
use crate::poly_dynamics::{ExternalAngle, EquipotentialLadder, QuadPoly, DEFAULT_R_OUTER};
use crate::series::TruncatedSeries1;

/// Default `R₁ = R/m`; the petal parameter is `R = m·R₁`.
pub const DEFAULT_PETAL_R1: f64 = 20.0;

pub fn eps0() -> f64 {
    (PI / 12.0).tan()
}

pub fn eps1() -> f64 {
    let e = eps0();
    e / (1.0 + e * e).sqrt()
}

/// `i`-th point of the radical-inverse sequence in `base`.
pub fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Low-discrepancy point in the unit square; `seed` shifts the sequence.
pub fn halton2(i: usize, seed: u64) -> (f64, f64) {
    let k = i as u64 + 1 + seed * 7919;
    (halton(k, 2), halton(k, 3))
}

fn halton4(i: usize, seed: u64) -> [f64; 4] {
    let k = i as u64 + 1 + seed * 7919;
    [halton(k, 2), halton(k, 3), halton(k, 5), halton(k, 7)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSpec {
    /// `m = νq`.
    pub m: usize,
    pub q: usize,
    #[serde(rename = "R")]
    pub big_r: f64,
    pub rho: f64,
    pub r: f64,
    pub eps0: f64,
    pub eps1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectorKind {
    Plus,
    Minus,
}

impl SectorSpec {
    pub fn new(m: usize, q: usize, big_r: f64, r: f64) -> Self {
        Self {
            m,
            q,
            big_r,
            rho: (2f64.sqrt() * big_r).powf(-1.0 / q as f64),
            r,
            eps0: eps0(),
            eps1: eps1(),
        }
    }

    pub fn for_normal_form(nf: &NormalFormData, params: &SemiParabolicParams) -> Self {
        Self::new(
            nf.m,
            params.lambda.q as usize,
            DEFAULT_PETAL_R1 * nf.m as f64,
            crate::henon_core::default_radius(params),
        )
    }

    /// `R₁ = R/m`.
    pub fn r1(&self) -> f64 {
        self.big_r / self.m as f64
    }

    fn w_max(&self) -> f64 {
        1.0 / (2f64.sqrt() * self.big_r)
    }
}

fn component_of(x: C64, m: usize) -> usize {
    let arg = x.arg().rem_euclid(TAU);
    ((arg * m as f64 / TAU).floor() as usize).min(m - 1)
}

/// Index (1-based) of the petal component containing `x`, if any.
pub fn in_attractive_petal(x: C64, spec: &SectorSpec) -> Option<usize> {
    if x == C64::new(0.0, 0.0) {
        return None;
    }
    let w = x.powu(spec.m as u32);
    let h = 1.0 / (2.0 * spec.big_r);
    let lhs = (w.re + h).powi(2) + (w.im.abs() - h).powi(2);
    (lhs < 1.0 / (2.0 * spec.big_r * spec.big_r)).then(|| component_of(x, spec.m) + 1)
}

/// Attracting (`Plus`, closed) or repelling (`Minus`, open) sector membership.
pub fn in_sector(x: C64, spec: &SectorSpec, kind: SectorKind) -> bool {
    let w = x.powu(spec.m as u32);
    if w.norm() >= spec.w_max() {
        return false;
    }
    let minus = w.re > spec.eps0 * w.im.abs();
    match kind {
        SectorKind::Minus => minus,
        SectorKind::Plus => !minus,
    }
}

/// Opening angle of the image of the repelling sector under `x ↦ x^m`, located by
/// bisection on the sector indicator along a circle.
pub fn minus_sector_opening(spec: &SectorSpec) -> f64 {
    let radius = 0.5 * spec.w_max();
    let inside = |theta: f64| {
        let w = C64::from_polar(radius, theta);
        let x = w.powf(1.0 / spec.m as f64);
        in_sector(x, spec, SectorKind::Minus)
    };
    let edge = |mut lo: f64, mut hi: f64| {
        // lo inside, hi outside.
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if inside(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let upper = edge(0.0, PI * 0.999);
    let lower = edge(0.0, -PI * 0.999);
    upper - lower
}

/// `X = −1/(m x^m)`.
pub fn fatou_coordinate(x: C64, spec: &SectorSpec) -> Result<C64> {
    if x == C64::new(0.0, 0.0) {
        return Err(LabError::ZeroInput);
    }
    Ok(-1.0 / (spec.m as f64 * x.powu(spec.m as u32)))
}

/// Inverse of the Fatou coordinate on petal component `j` (1-based).
pub fn inverse_fatou(big_x: C64, spec: &SectorSpec, j: usize) -> C64 {
    let m = spec.m as f64;
    let w = -1.0 / (m * big_x);
    let arg = w.arg().rem_euclid(TAU);
    C64::from_polar(w.norm().powf(1.0 / m), (arg + TAU * (j - 1) as f64) / m)
}

/// `U_{R₁} = {R₁ − Re X < |Im X|}`.
pub fn in_fatou_region(big_x: C64, spec: &SectorSpec) -> bool {
    spec.r1() - big_x.re < big_x.im.abs()
}

/// Quasi-random points of petal component `j` (1-based) with `|y| < r`.
pub fn petal_samples(spec: &SectorSpec, j: usize, n: usize, seed: u64) -> Vec<Point2> {
    let h = 1.0 / (2.0 * spec.big_r);
    let rad = 1.0 / (2f64.sqrt() * spec.big_r);
    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while out.len() < n {
        let [u, v, s, t] = halton4(i, seed);
        i += 1;
        // Bounding box of the two disks in the w = x^m plane.
        let w = C64::new(-h - rad + (2.0 * rad) * u, (2.0 * v - 1.0) * (h + rad));
        let lhs = (w.re + h).powi(2) + (w.im.abs() - h).powi(2);
        if lhs >= rad * rad * 0.98 || w.norm() < 1e-9 {
            continue;
        }
        let x = inverse_fatou(-1.0 / (spec.m as f64 * w), spec, j);
        let y = C64::from_polar(spec.r * s.sqrt() * 0.999, TAU * t);
        out.push(Point2::new(x, y));
    }
    out
}

/// Quasi-random points of the repelling sector `W⁻` (all components), with
/// `|x^m|` between `inner` and `0.999` of the sector bound.
pub fn minus_sector_samples(spec: &SectorSpec, n: usize, seed: u64, inner: f64) -> Vec<Point2> {
    let half = (1.0 / spec.eps0).atan();
    (0..n)
        .map(|i| {
            let [u, v, s, t] = halton4(i, seed);
            let modulus = spec.w_max() * (inner + (0.999 - inner) * u.sqrt());
            let w = C64::from_polar(modulus, (2.0 * v - 1.0) * half * 0.999);
            let k = ((s * spec.m as f64) as usize).min(spec.m - 1);
            let x = C64::from_polar(w.norm().powf(1.0 / spec.m as f64), (w.arg() + TAU * k as f64) / spec.m as f64);
            let y = C64::from_polar(spec.r * ((s * spec.m as f64).fract()).sqrt() * 0.999, TAU * t);
            Point2::new(x, y)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetalReport {
    pub n_samples: usize,
    pub n_iters: usize,
    /// Images outside `P_att ∪ {x = 0} × D_r`.
    pub violations: usize,
    /// Steps whose component index did not advance by `νp`.
    pub index_violations: usize,
    /// Steps with `Re X_{n+1} − Re X_n ≤ 1/2`.
    pub step_violations: usize,
    /// `min_n (Re X_n − Re X_0 − n/2)` over all orbits.
    pub min_re_gain: f64,
    /// `min_n (Re X_n − n/2)` over all orbits.
    pub min_re_margin: f64,
    pub max_final_x: f64,
    pub max_final_y: f64,
    /// `sup |X₁ − X − 1|` over the sampled first steps.
    pub max_step_error: f64,
}

/// Iterates sampled petal points under `H̃` and checks invariance, index rotation and
/// linear growth of the Fatou coordinate.
pub fn check_petal_absorption(
    params: &SemiParabolicParams,
    nf: &NormalFormData,
    spec: &SectorSpec,
    n_samples: usize,
    n_iters: usize,
) -> PetalReport {
    let shift = (params.lambda.p.rem_euclid(params.lambda.q as i64) as usize * nf.nu) % spec.m;
    let per_comp = n_samples.div_ceil(spec.m);
    let starts: Vec<(usize, Point2)> = (1..=spec.m)
        .flat_map(|j| petal_samples(spec, j, per_comp, 11).into_iter().map(move |p| (j, p)))
        .take(n_samples)
        .collect();
    let orbits: Vec<PetalReport> = starts
        .par_iter()
        .map(|&(j0, start)| {
            let mut rep = PetalReport {
                n_samples: 1,
                n_iters,
                violations: 0,
                index_violations: 0,
                step_violations: 0,
                min_re_gain: f64::INFINITY,
                min_re_margin: f64::INFINITY,
                max_final_x: 0.0,
                max_final_y: 0.0,
                max_step_error: 0.0,
            };
            let x0 = fatou_coordinate(start.x, spec).unwrap().re;
            let mut pt = start;
            let mut j = j0;
            let mut big_x = x0;
            for n in 1..=n_iters {
                let Some(next) = nf.conjugated_map(params, pt) else {
                    rep.violations += 1;
                    break;
                };
                let on_axis = next.x.norm() < 1e-300;
                let comp = in_attractive_petal(next.x, spec);
                if !(next.y.norm() < spec.r && (on_axis || comp.is_some())) {
                    rep.violations += 1;
                    break;
                }
                if on_axis {
                    break;
                }
                let comp = comp.unwrap();
                if comp != (j - 1 + shift) % spec.m + 1 {
                    rep.index_violations += 1;
                }
                let nx = fatou_coordinate(next.x, spec).unwrap();
                if n == 1 {
                    let fx = fatou_coordinate(pt.x, spec).unwrap();
                    rep.max_step_error = (nx - fx - 1.0).norm();
                }
                if nx.re - big_x <= 0.5 {
                    rep.step_violations += 1;
                }
                rep.min_re_gain = rep.min_re_gain.min(nx.re - x0 - n as f64 / 2.0);
                rep.min_re_margin = rep.min_re_margin.min(nx.re - n as f64 / 2.0);
                big_x = nx.re;
                j = comp;
                pt = next;
            }
            rep.max_final_x = pt.x.norm();
            rep.max_final_y = pt.y.norm();
            rep
        })
        .collect();
    orbits.into_iter().fold(
        PetalReport {
            n_samples: 0,
            n_iters,
            violations: 0,
            index_violations: 0,
            step_violations: 0,
            min_re_gain: f64::INFINITY,
            min_re_margin: f64::INFINITY,
            max_final_x: 0.0,
            max_final_y: 0.0,
            max_step_error: 0.0,
        },
        |acc, o| PetalReport {
            n_samples: acc.n_samples + o.n_samples,
            n_iters,
            violations: acc.violations + o.violations,
            index_violations: acc.index_violations + o.index_violations,
            step_violations: acc.step_violations + o.step_violations,
            min_re_gain: acc.min_re_gain.min(o.min_re_gain),
            min_re_margin: acc.min_re_margin.min(o.min_re_margin),
            max_final_x: acc.max_final_x.max(o.max_final_x),
            max_final_y: acc.max_final_y.max(o.max_final_y),
            max_step_error: acc.max_step_error.max(o.max_step_error),
        },
    )
}

/// Measured constants of the sector estimates (sups over sample grids, inflated by 10%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateBundle {
    #[serde(rename = "M_a")]
    pub m_a: f64,
    #[serde(rename = "N_a")]
    pub n_a: f64,
    /// `sup |t_a|` with `∂ₓg_a = x^{2q} t_a`.
    pub m_bound: f64,
    #[serde(rename = "M1")]
    pub m1: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "A")]
    pub a_const: f64,
    pub rho_big: f64,
    #[serde(rename = "N")]
    pub n_big: u64,
}

impl EstimateBundle {
    /// `K₁/R₁ < 1/2` and `K₂/R₁^{1/m} < (1 − |μ|) r`.
    pub fn petal_conditions(&self, spec: &SectorSpec, mu: C64) -> (bool, bool) {
        (
            self.k1 / self.r1 < 0.5,
            self.k2 / self.r1.powf(1.0 / spec.m as f64) < (1.0 - mu.norm()) * spec.r,
        )
    }

    /// `N_a < min(1/(8q), ε₁/(8(q+1)M₁^q))`.
    pub fn n_a_condition(&self, spec: &SectorSpec) -> bool {
        let q = spec.q as f64;
        self.n_a < (1.0 / (8.0 * q)).min(spec.eps1 / (8.0 * (q + 1.0) * self.m1.powf(q)))
    }
}

struct SectorDerivs {
    g: C64,
    dgx: C64,
    dgy: C64,
    dhx: C64,
    dhy: C64,
}

fn sector_derivs(params: &SemiParabolicParams, nf: &NormalFormData, pt: Point2) -> Option<SectorDerivs> {
    let (img, j) = nf.conjugated_jacobian(params, pt)?;
    let lam = params.lambda.value;
    let m = nf.m as u32;
    let x = pt.x;
    Some(SectorDerivs {
        g: img.x / lam - x - x.powu(m + 1),
        dgx: j[0][0] / lam - 1.0 - (m as f64 + 1.0) * x.powu(m),
        dgy: j[0][1] / lam,
        dhx: j[1][0],
        dhy: j[1][1] - params.mu,
    })
}

pub fn measure_estimates(params: &SemiParabolicParams, nf: &NormalFormData, spec: &SectorSpec, n_samples: usize) -> EstimateBundle {
    let q = spec.q as i32;
    let mut m_a: f64 = 0.0;
    let mut n_a: f64 = 0.0;
    let mut t_sup: f64 = 0.0;
    let mut m1: f64 = 0.0;
    for pt in minus_sector_samples(spec, n_samples, 3, 0.02) {
        let Some(d) = sector_derivs(params, nf, pt) else { continue };
        let ax = pt.x.norm();
        m_a = m_a.max(d.dgy.norm() / ax.powi(2 * q + 2));
        n_a = n_a.max(d.dhx.norm()).max(d.dhy.norm());
        t_sup = t_sup.max(d.dgx.norm() / ax.powi(2 * q));
        m1 = m1.max((1.0 + pt.x.powi(q) + d.g / pt.x).norm());
    }
    let m = spec.m as f64;
    let mut k_prime: f64 = 0.0;
    let mut k_second: f64 = 0.0;
    for j in 1..=spec.m {
        for pt in petal_samples(spec, j, n_samples.div_ceil(spec.m), 5) {
            let Some(img) = nf.conjugated_map(params, pt) else { continue };
            let big_x = fatou_coordinate(pt.x, spec).unwrap();
            let Ok(big_x1) = fatou_coordinate(img.x, spec) else { continue };
            k_prime = k_prime.max((big_x1 - big_x - 1.0).norm() * big_x.norm());
            k_second = k_second.max((img.y - params.mu * pt.y).norm() * big_x.norm().powf(1.0 / m));
        }
    }
    let mu = params.mu.norm();
    // Smallest admissible ρ for the orbit bound, then the integer N.
    let rho_min = 1.0 / (2.0 * ((2.0 / (1.0 + mu)).powf(m) - 1.0));
    let rho_big = 1.1 * rho_min;
    let r1 = spec.r1();
    let n_big = (rho_big.powf(1.0 / m) / r1.powf(1.0 / m)).floor() as u64 + 1;
    EstimateBundle {
        m_a: 1.1 * m_a,
        n_a: 1.1 * n_a,
        m_bound: 1.1 * t_sup,
        m1: 1.1 * m1,
        k1: 1.1 * k_prime * 2f64.sqrt(),
        k2: 1.1 * k_second * 2f64.sqrt().powf(1.0 / m),
        r1,
        a_const: (((m + 1.0) / 2.0 - nf.c) / m).norm(),
        rho_big,
        n_big,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    /// Horizontal cone pulled back from normal coordinates.
    HorizontalB,
    VerticalB,
    /// Horizontal cone of the product metric.
    HorizontalP,
    VerticalP,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: Point2,
    pub xi: C64,
    pub eta: C64,
}

impl TangentVector {
    pub fn new(base: Point2, xi: C64, eta: C64) -> Self {
        Self { base, xi, eta }
    }

    pub fn push(&self, base: Point2, m: &Mat2) -> Self {
        let (xi, eta) = mat_vec(m, (self.xi, self.eta));
        Self { base, xi, eta }
    }
}

/// Stand-in for the hyperbolic density of `U`: `1/dist(x, ∂U)` with `∂U` polled as a polyline.
#[derive(Debug, Clone)]
pub struct DomainProxy {
    pub poly: QuadPoly,
    pub boundary: Vec<C64>,
    /// Green's function level of the outer equipotential.
    pub green_level: f64,
    /// Thin wedges `(apex, direction, half_angle, length)` removed from the inside.
    pub wedges: Vec<(C64, C64, f64, f64)>,
    /// Small disks `(center, radius)` around the critical orbit outside the wedges.
    pub holes: Vec<(C64, f64)>,
}

/// Directions at `q₀` along which `p^q` attracts: `β u^q` negative real, where
/// `p^q(q₀ + u) = q₀ + u + β u^{q+1} + …`.
pub fn attracting_axes(poly: &QuadPoly, q: usize) -> Vec<C64> {
    let lam = poly.deriv(poly.parabolic_fp);
    let n = q + 2;
    let step = TruncatedSeries1::new(vec![C64::new(0.0, 0.0), lam, C64::new(1.0, 0.0)], n);
    let mut it = TruncatedSeries1::var(n);
    for _ in 0..q {
        it = step.compose(&it);
    }
    let beta = it.coeffs[q + 1];
    let base = (-1.0 / beta).powf(1.0 / q as f64);
    let base = base / base.norm();
    (0..q).map(|k| base * C64::from_polar(1.0, TAU * k as f64 / q as f64)).collect()
}

impl DomainProxy {
    /// `U` bounded by the level-`level` equipotential of the outer radius ladder, with thin
    /// attracting wedges of radius `rho_prime` at `q₀` and small disks around the critical
    /// orbit removed.
    pub fn new(poly: QuadPoly, q: usize, rho_prime: f64, level: i32) -> Result<Self> {
        let n_angles = 1024u64;
        let mut ladder = EquipotentialLadder::new(poly, DEFAULT_R_OUTER, (0..n_angles).map(|k| ExternalAngle::new(k, n_angles)))?;
        ladder.advance_to(level)?;
        let mut boundary = ladder.current.clone();
        let green_level = DEFAULT_R_OUTER.ln() * 0.5f64.powi(level);
        let q0 = poly.parabolic_fp;
        let half = PI / 24.0;
        let wedges: Vec<_> = attracting_axes(&poly, q).into_iter().map(|d| (q0, d, half, rho_prime)).collect();
        for &(apex, dir, h, len) in &wedges {
            for k in 0..=64 {
                let s = len * k as f64 / 64.0;
                boundary.push(apex + dir * C64::from_polar(s, h));
                boundary.push(apex + dir * C64::from_polar(s, -h));
            }
            for k in 0..=16 {
                boundary.push(apex + dir * C64::from_polar(len, -h + 2.0 * h * k as f64 / 16.0));
            }
        }
        let mut holes = Vec::new();
        let mut z = poly.c0;
        for _ in 0..200 {
            if (z - q0).norm() < rho_prime {
                break;
            }
            holes.push((z, 0.05));
            z = poly.eval(z);
        }
        for &(c, r) in &holes {
            for k in 0..64 {
                boundary.push(c + C64::from_polar(r, TAU * k as f64 / 64.0));
            }
        }
        Ok(Self {
            poly,
            boundary,
            green_level,
            wedges,
            holes,
        })
    }

    pub fn contains(&self, x: C64) -> bool {
        if self.poly.green(x) >= self.green_level {
            return false;
        }
        for &(apex, dir, h, len) in &self.wedges {
            let u = (x - apex) / dir;
            if u.norm() < len && u.arg().abs() < h {
                return false;
            }
        }
        self.holes.iter().all(|&(c, r)| (x - c).norm() >= r)
    }

    /// `x ∈ U' = p⁻¹(U)`.
    pub fn contains_preimage(&self, x: C64) -> bool {
        self.contains(self.poly.eval(x))
    }

    pub fn density(&self, x: C64) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let d = self.boundary.iter().map(|b| (x - b).norm()).fold(f64::INFINITY, f64::min);
        Some(1.0 / d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    #[serde(rename = "M")]
    pub big_m: f64,
    pub tau: f64,
    pub m1: f64,
    pub m2: f64,
    pub k0: f64,
    pub k: f64,
    pub r1: f64,
    pub rho_prime: f64,
    pub rho_second: f64,
}

/// Everything the cone and metric predicates need about the base point.
pub struct ConeContext<'a> {
    pub params: &'a SemiParabolicParams,
    pub nf: &'a NormalFormData,
    pub domain: &'a DomainProxy,
    pub metric: MetricSpec,
}

impl ConeContext<'_> {
    fn q0(&self) -> C64 {
        self.domain.poly.parabolic_fp
    }

    fn in_b(&self, x: C64) -> bool {
        (x - self.q0()).norm() < self.metric.rho_prime
    }

    /// Tangent vector in normal coordinates, when the base is in `B`.
    pub fn to_normal(&self, v: &TangentVector) -> Option<TangentVector> {
        if !self.in_b(v.base.x) {
            return None;
        }
        let (base, j) = self.nf.transform.to_normal_jacobian(v.base)?;
        Some(v.push(base, &j))
    }

    pub fn mu_b(&self, v: &TangentVector) -> Option<f64> {
        self.to_normal(v).map(|t| t.xi.norm().max(t.eta.norm()))
    }

    pub fn mu_p(&self, v: &TangentVector) -> Option<f64> {
        if (v.base.x - self.q0()).norm() < self.metric.rho_second {
            return None;
        }
        let rho = self.domain.density(v.base.x)?;
        Some((rho * v.xi.norm()).max(v.eta.norm()))
    }
}

/// Cone membership; cones are open, so boundary ties are outside.
pub fn cone_membership(v: &TangentVector, kind: ConeKind, ctx: &ConeContext) -> Result<bool> {
    match kind {
        ConeKind::HorizontalB | ConeKind::VerticalB => {
            let t = ctx.to_normal(v).ok_or(LabError::MetricUndefined)?;
            let q = ctx.params.lambda.q as i32;
            Ok(match kind {
                ConeKind::HorizontalB => t.xi.norm() > t.eta.norm(),
                _ => t.xi.norm() < t.base.x.norm().powi(2 * q) * t.eta.norm(),
            })
        }
        ConeKind::HorizontalP | ConeKind::VerticalP => {
            let rho = ctx.domain.density(v.base.x).ok_or(LabError::MetricUndefined)?;
            Ok(match kind {
                ConeKind::HorizontalP => rho * v.xi.norm() > v.eta.norm(),
                _ => rho * v.xi.norm() < ctx.metric.tau * v.eta.norm(),
            })
        }
    }
}

/// Speed of `v` in the combined metric `inf{μ_P, M μ_B}`.
pub fn combined_metric_speed(v: &TangentVector, ctx: &ConeContext) -> Result<f64> {
    match (ctx.mu_p(v), ctx.mu_b(v)) {
        (Some(p), Some(b)) => Ok(p.min(ctx.metric.big_m * b)),
        (Some(p), None) => Ok(p),
        (None, Some(b)) => Ok(ctx.metric.big_m * b),
        (None, None) => Err(LabError::MetricUndefined),
    }
}

/// Largest `ρ″` with `p²(D_ρ″(q₀)) ⊂ D_ρ′(q₀)`, by bisection on a sampled circle.
pub fn rho_second(poly: &QuadPoly, rho_prime: f64) -> f64 {
    let q0 = poly.parabolic_fp;
    let fits = |r: f64| {
        (0..256).all(|k| {
            let z = q0 + C64::from_polar(r, TAU * k as f64 / 256.0);
            (poly.iterate(z, 2) - q0).norm() < rho_prime
        })
    };
    let (mut lo, mut hi) = (0.0, rho_prime);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Measures `m₁, m₂, k₀, k, r₁, M` on sample grids and sets `τ = 0.9 (ρ/2)^{2q}`.
pub fn estimate_metric_spec(
    params: &SemiParabolicParams,
    nf: &NormalFormData,
    domain: &DomainProxy,
    spec: &SectorSpec,
    rho_prime: f64,
) -> MetricSpec {
    let poly = domain.poly;
    let q0 = poly.parabolic_fp;
    let rho_pp = rho_second(&poly, rho_prime);
    let grid: Vec<C64> = (0..4000)
        .map(|i| {
            let (u, v) = halton2(i, 17);
            C64::new(-2.2 + 4.4 * u, -2.2 + 4.4 * v)
        })
        .filter(|x| domain.contains_preimage(*x) && domain.contains(*x) && (x - q0).norm() >= rho_pp)
        .collect();
    let mut m1 = f64::INFINITY;
    let mut m2: f64 = 0.0;
    let mut k0 = f64::INFINITY;
    let mut r1 = f64::INFINITY;
    for &x in &grid {
        let rho = domain.density(x).unwrap();
        m1 = m1.min(rho);
        m2 = m2.max(rho);
        r1 = r1.min((2.0 * x).norm());
        if let Some(rho_img) = domain.density(poly.eval(x)) {
            k0 = k0.min(rho_img * poly.deriv(x).norm() / rho);
        }
    }
    let mut metric = MetricSpec {
        big_m: 1.0,
        tau: 0.9 * (spec.rho / 2.0).powi(2 * spec.q as i32),
        m1,
        m2,
        k0,
        k: f64::INFINITY,
        r1,
        rho_prime,
        rho_second: rho_pp,
    };
    // M from the ratio 2 μ_P(v) / μ_B(DH v) over B', the preimage tube around q₁ = −q₀.
    let ctx = ConeContext {
        params,
        nf,
        domain,
        metric,
    };
    let mut big_m: f64 = 0.0;
    let mut k = f64::INFINITY;
    let rad = rho_prime / poly.deriv(-q0).norm();
    for i in 0..400 {
        let [u, v, s, t] = halton4(i, 23);
        let x = -q0 + C64::from_polar(rad * u.sqrt(), TAU * v);
        let y = C64::from_polar(0.5 * spec.r * s.sqrt(), TAU * t);
        let base = Point2::new(x, y);
        let img = params.forward(base);
        let Some(rho) = domain.density(x) else { continue };
        for (xi, eta) in [(C64::new(1.0, 0.0), C64::new(0.0, 0.0)), (C64::new(1.0, 0.0), C64::new(0.0, 0.5 * rho))] {
            let v = TangentVector::new(base, xi, eta);
            let w = v.push(img, &params.jacobian(base));
            if let (Some(p), Some(b)) = (ctx.mu_p(&v), ctx.mu_b(&w)) {
                big_m = big_m.max(2.0 * p / b);
            }
        }
    }
    // Horizontal expansion of DH in the product metric outside the tube.
    for &x in grid.iter().step_by(4) {
        let base = Point2::new(x, C64::new(0.0, 0.0));
        let img = params.forward(base);
        if (img.x - q0).norm() < rho_pp {
            continue;
        }
        let v = TangentVector::new(base, C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        let w = v.push(img, &params.jacobian(base));
        if let (Some(a), Some(b)) = (ctx.mu_p(&v), ctx.mu_p(&w)) {
            k = k.min(b / a);
        }
    }
    metric.big_m = 1.1 * big_m.max(1.0);
    metric.k = k;
    metric
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub n_samples: usize,
    /// Horizontal frames whose `DH̃` image left the open horizontal cone.
    pub horizontal_violations: usize,
    /// Frames expanding by less than `1 + (ε₁/2)|x|^q`.
    pub expansion_violations: usize,
    /// `min (‖DH̃ v‖/‖v‖ − 1)/|x|^q`; at least `ε₁/2` when the sector estimate holds.
    pub min_expansion_rate: f64,
    pub min_expansion: f64,
    /// `sup |η′|/|ξ′|`, to be compared with `B₂ = 2N_a + |μ|`.
    pub max_aperture: f64,
    /// `sup |η′|/|ξ′|` for `η = 0`, compared with `N_a`.
    pub max_aperture_flat: f64,
    pub vertical_violations: usize,
    /// `min ‖DH̃⁻¹ v‖/‖v‖` over vertical frames.
    pub min_vertical_growth: f64,
    /// `sup |ξ|/(|x|^{2q}|η|)` of the pulled-back vertical frames.
    pub max_vertical_aperture: f64,
    pub vertical_growth_bound: f64,
    pub skipped: usize,
    pub constants: EstimateBundle,
}

/// Samples `W⁻` in normal coordinates and checks horizontal-cone invariance and
/// expansion under `DH̃`, and vertical-cone invariance and growth under `DH̃⁻¹`.
pub fn check_cone_invariance(
    params: &SemiParabolicParams,
    nf: &NormalFormData,
    spec: &SectorSpec,
    bundle: &EstimateBundle,
    n_samples: usize,
) -> ConeReport {
    let q = spec.q as i32;
    let e1 = spec.eps1;
    let samples = minus_sector_samples(spec, n_samples, 7, 0.0);
    let one = C64::new(1.0, 0.0);
    let frames: Vec<(f64, f64)> = [0.0, 0.5, 0.999]
        .iter()
        .flat_map(|s| (0..8).map(move |k| (*s, TAU * k as f64 / 8.0)))
        .collect();
    struct Partial {
        h_viol: usize,
        e_viol: usize,
        rate: f64,
        exp: f64,
        ap: f64,
        ap_flat: f64,
        v_viol: usize,
        growth: f64,
        v_ap: f64,
        skipped: usize,
    }
    let parts: Vec<Partial> = samples
        .par_iter()
        .map(|pt| {
            let mut out = Partial {
                h_viol: 0,
                e_viol: 0,
                rate: f64::INFINITY,
                exp: f64::INFINITY,
                ap: 0.0,
                ap_flat: 0.0,
                v_viol: 0,
                growth: f64::INFINITY,
                v_ap: 0.0,
                skipped: 0,
            };
            let Some((img, j)) = nf.conjugated_jacobian(params, *pt) else {
                out.skipped += 1;
                return out;
            };
            let ax = pt.x.norm().powi(q);
            for &(s, th) in &frames {
                let v = (one, C64::from_polar(s, th));
                let (xi, eta) = mat_vec(&j, v);
                if eta.norm() >= xi.norm() {
                    out.h_viol += 1;
                }
                let ratio = xi.norm().max(eta.norm());
                if ratio < 1.0 + 0.5 * e1 * ax {
                    out.e_viol += 1;
                }
                out.exp = out.exp.min(ratio);
                out.rate = out.rate.min((ratio - 1.0) / ax);
                out.ap = out.ap.max(eta.norm() / xi.norm());
                if s == 0.0 {
                    out.ap_flat = out.ap_flat.max(eta.norm() / xi.norm());
                }
            }
            // Vertical frames at the image point, pulled back by DH̃⁻¹.
            if let Some((back, jinv)) = nf.conjugated_inverse_jacobian(params, img) {
                let cone = img.x.norm().powi(2 * q);
                for &(s, th) in &frames {
                    let v = (C64::from_polar(s * cone, th), one);
                    let (xi, eta) = mat_vec(&jinv, v);
                    let lim = back.x.norm().powi(2 * q) * eta.norm();
                    if xi.norm() >= lim {
                        out.v_viol += 1;
                    }
                    out.v_ap = out.v_ap.max(xi.norm() / lim);
                    out.growth = out.growth.min(xi.norm().max(eta.norm()) / v.0.norm().max(v.1.norm()));
                }
            } else {
                out.skipped += 1;
            }
            out
        })
        .collect();
    let mut rep = ConeReport {
        n_samples: samples.len(),
        horizontal_violations: 0,
        expansion_violations: 0,
        min_expansion_rate: f64::INFINITY,
        min_expansion: f64::INFINITY,
        max_aperture: 0.0,
        max_aperture_flat: 0.0,
        vertical_violations: 0,
        min_vertical_growth: f64::INFINITY,
        max_vertical_aperture: 0.0,
        vertical_growth_bound: 1.0 / (params.a.norm_sqr() + 0.5),
        skipped: 0,
        constants: bundle.clone(),
    };
    for p in parts {
        rep.horizontal_violations += p.h_viol;
        rep.expansion_violations += p.e_viol;
        rep.min_expansion_rate = rep.min_expansion_rate.min(p.rate);
        rep.min_expansion = rep.min_expansion.min(p.exp);
        rep.max_aperture = rep.max_aperture.max(p.ap);
        rep.max_aperture_flat = rep.max_aperture_flat.max(p.ap_flat);
        rep.vertical_violations += p.v_viol;
        rep.min_vertical_growth = rep.min_vertical_growth.min(p.growth);
        rep.max_vertical_aperture = rep.max_vertical_aperture.max(p.v_ap);
        rep.skipped += p.skipped;
    }
    rep
}

/// Minimum horizontal expansion over `W⁻` samples at distance at least `d` from the tube
/// axis, for a ladder of `d`.
pub fn expansion_vs_distance(
    params: &SemiParabolicParams,
    nf: &NormalFormData,
    spec: &SectorSpec,
    ds: &[f64],
    n_samples: usize,
) -> Vec<f64> {
    let samples = minus_sector_samples(spec, n_samples, 9, 0.0);
    let exps: Vec<(f64, f64)> = samples
        .par_iter()
        .filter_map(|pt| {
            let (_, j) = nf.conjugated_jacobian(params, *pt)?;
            Some((pt.x.norm(), j[0][0].norm()))
        })
        .collect();
    ds.iter()
        .map(|d| {
            exps.iter()
                .filter(|(ax, _)| *ax >= *d)
                .map(|(_, e)| *e)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Product-metric cone checks outside the tube: horizontal P-cones under `DH` and
/// vertical P-cones under `DH⁻¹` with growth at least `1/|a|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductConeReport {
    pub n_samples: usize,
    pub horizontal_violations: usize,
    pub vertical_violations: usize,
    pub min_vertical_growth: f64,
    pub min_horizontal_growth: f64,
    /// Always true: densities come from the distance-to-boundary stand-in.
    pub proxy: bool,
}

pub fn check_product_cones(ctx: &ConeContext, n_samples: usize) -> ProductConeReport {
    let params = ctx.params;
    let q0 = ctx.q0();
    let r = crate::henon_core::default_radius(params);
    let mut rep = ProductConeReport {
        n_samples: 0,
        horizontal_violations: 0,
        vertical_violations: 0,
        min_vertical_growth: f64::INFINITY,
        min_horizontal_growth: f64::INFINITY,
        proxy: true,
    };
    let mut i = 0;
    while rep.n_samples < n_samples && i < 50 * n_samples {
        let [u, v, s, t] = halton4(i, 29);
        i += 1;
        let x = C64::new(-2.2 + 4.4 * u, -2.2 + 4.4 * v);
        if !ctx.domain.contains_preimage(x) || !ctx.domain.contains(x) || (x - q0).norm() < ctx.metric.rho_second {
            continue;
        }
        let y = C64::from_polar(r * s.sqrt() * 0.999, TAU * t);
        let base = Point2::new(x, y);
        let img = params.forward(base);
        if !ctx.domain.contains(img.x) || (img.x - q0).norm() < ctx.metric.rho_second || img.y.norm() >= r {
            continue;
        }
        rep.n_samples += 1;
        let rho = ctx.domain.density(x).unwrap();
        let rho_img = ctx.domain.density(img.x).unwrap();
        let jac = params.jacobian(base);
        for eta_frac in [0.0, 0.5, 0.999] {
            let hv = TangentVector::new(base, C64::new(1.0, 0.0), C64::new(eta_frac * rho, 0.0));
            let w = hv.push(img, &jac);
            if rho_img * w.xi.norm() <= w.eta.norm() {
                rep.horizontal_violations += 1;
            }
            let before = (rho * hv.xi.norm()).max(hv.eta.norm());
            let after = (rho_img * w.xi.norm()).max(w.eta.norm());
            rep.min_horizontal_growth = rep.min_horizontal_growth.min(after / before);
        }
        // Vertical frames at the image, pulled back to the base.
        if let Ok(jinv) = params.inverse_jacobian(img) {
            for xi_frac in [0.0, 0.5, 0.999] {
                let vv = TangentVector::new(img, C64::new(xi_frac * ctx.metric.tau / rho_img, 0.0), C64::new(1.0, 0.0));
                let w = vv.push(base, &jinv);
                if rho * w.xi.norm() >= ctx.metric.tau * w.eta.norm() {
                    rep.vertical_violations += 1;
                }
                let before = (rho_img * vv.xi.norm()).max(vv.eta.norm());
                let after = (rho * w.xi.norm()).max(w.eta.norm());
                rep.min_vertical_growth = rep.min_vertical_growth.min(after / before);
            }
        }
    }
    rep
}

/// `r₁/|a| − τ/m₁ > max(2m₂/τ, 1)`, the smallness needed for vertical product-cone invariance.
pub fn vertical_smallness(metric: &MetricSpec, a: f64) -> bool {
    metric.r1 / a - metric.tau / metric.m1 > (2.0 * metric.m2 / metric.tau).max(1.0)
}

/// Spot check of `μ(DH v) > μ(v)` for horizontal `B`-cone vectors based in `W⁻_B`.
pub fn combined_metric_expansion(ctx: &ConeContext, spec: &SectorSpec, n_samples: usize) -> (usize, usize, f64) {
    let samples = minus_sector_samples(spec, n_samples, 31, 0.05);
    let mut checked = 0;
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for pt in samples {
        let Some((orig, d_in)) = ctx.nf.transform.from_normal_jacobian(pt) else { continue };
        // Horizontal normal-coordinate vector (1, 0) expressed in original coordinates.
        let v = TangentVector::new(orig, d_in[0][0], d_in[1][0]);
        let img = ctx.params.forward(orig);
        let w = v.push(img, &ctx.params.jacobian(orig));
        let (Ok(a), Ok(b)) = (combined_metric_speed(&v, ctx), combined_metric_speed(&w, ctx)) else { continue };
        checked += 1;
        worst = worst.min(b / a);
        if b <= a {
            failures += 1;
        }
    }
    (checked, failures, worst)
}
