//! The solenoidal model `ψ(ζ, z) = (p(ζ), aζ − a²z/p′(ζ))` of `J`, periodic orbits of
//! `H` with their multipliers, and a periodic-orbit estimate of the stable Lyapunov
//! exponent used as a connectivity heuristic.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::graph_transform::FiberFamily;
use crate::henon_core::{eigenvalues2, Mat2, Point2, RootOfUnity, SemiParabolicParams, C64};
use crate::poly_dynamics::{CaratheodoryTable, ExternalAngle, QuadPoly, DEFAULT_R_OUTER};
use crate::stable_manifold::loglog_slope;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMapSpec {
    pub poly: QuadPoly,
    pub a: C64,
    pub r: f64,
}

impl ModelMapSpec {
    /// Checks `|a|(2 + M) < r`, where `M` bounds the second-order fiber term.
    pub fn new(poly: QuadPoly, a: C64, r: f64, m_fit: f64) -> Result<Self> {
        let lhs = a.norm() * (2.0 + a.norm() * m_fit);
        if lhs >= r {
            return Err(LabError::SmallnessViolated {
                condition: "|a|(2 + |a|M) < r".into(),
                lhs,
                rhs: r,
            });
        }
        Ok(Self { poly, a, r })
    }
}

pub fn psi(spec: &ModelMapSpec, zeta: C64, z: C64) -> Result<(C64, C64)> {
    if zeta.norm() < 1e-8 {
        return Err(LabError::CriticalFiber { modulus: zeta.norm() });
    }
    let a = spec.a;
    Ok((spec.poly.eval(zeta), a * zeta - a * a * z / spec.poly.deriv(zeta)))
}

/// `ψ′(ζ, z) = (p(ζ), ζ − a²z/p′(ζ))`, the model in the rescaled fiber coordinate.
pub fn psi_prime(spec: &ModelMapSpec, zeta: C64, z: C64) -> Result<(C64, C64)> {
    if zeta.norm() < 1e-8 {
        return Err(LabError::CriticalFiber { modulus: zeta.norm() });
    }
    let a = spec.a;
    Ok((spec.poly.eval(zeta), zeta - a * a * z / spec.poly.deriv(zeta)))
}

/// `σ_p(γ(t), z) = (p(γ(t)), a φ_t(z))`, read off a fixed-point family.
pub fn sigma_p(f: &FiberFamily, table: &CaratheodoryTable, a: C64, index: usize, z: C64) -> Result<(C64, (C64, C64))> {
    let t = f.angles[index];
    let zeta = table
        .get(&t)
        .ok_or_else(|| LabError::InvalidInput(format!("angle {t} missing from the table")))?;
    Ok((zeta, (f.labels.poly.eval(zeta), a * f.fibers[index].eval(z))))
}

/// `sup |a|⁻² |φ_t(z) − γ(t) + az/p′(γ(t))|`, a fitted bound for the second-order term.
pub fn fit_second_order_bound(f: &FiberFamily, table: &CaratheodoryTable, a: C64) -> Result<f64> {
    let mut m: f64 = 0.0;
    for fb in &f.fibers {
        let g = table
            .get(&fb.t)
            .ok_or_else(|| LabError::InvalidInput(format!("angle {} missing from the table", fb.t)))?;
        for z in crate::graph_transform::boundary_samples(f.r) {
            m = m.max((fb.eval(z) - g + a * z / (2.0 * g)).norm());
        }
    }
    Ok(m / a.norm_sqr())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDisk {
    pub center: C64,
    pub radius: f64,
    /// Index of the parent disk one level up.
    pub parent: usize,
    /// The backward-orbit point `ξ_n` whose fiber this disk comes from.
    pub base: C64,
    /// `z ↦ alpha·z + center` maps the fiber over `base` onto this disk.
    pub alpha: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingReport {
    pub zeta: C64,
    pub levels: Vec<Vec<ModelDisk>>,
    pub pairwise_disjoint: bool,
    pub nested: bool,
    /// Largest child/parent radius ratio.
    pub max_ratio: f64,
    /// `|a|²/(2 min|ξ|)` over the backward points used.
    pub ratio_bound: f64,
}

/// The `2ⁿ` disks of `ψⁿ(J_p × D_r)` in the fiber over `ζ`. Each is the image of `D_r`
/// under the composition of the affine fiber maps `z ↦ aξ − a²z/(2ξ)` along a
/// backward branch `ζ ← ξ₁ ← … ← ξ_n`.
pub fn model_nesting(spec: &ModelMapSpec, zeta: C64, depth: usize) -> Result<NestingReport> {
    let a = spec.a;
    let mut levels = vec![vec![ModelDisk {
        center: C64::new(0.0, 0.0),
        radius: spec.r,
        parent: 0,
        base: zeta,
        alpha: C64::new(1.0, 0.0),
    }]];
    let mut min_base = zeta.norm();
    for _ in 0..depth {
        let prev = levels.last().unwrap();
        let mut next = Vec::with_capacity(2 * prev.len());
        for (i, d) in prev.iter().enumerate() {
            let root = spec.poly.preimage(d.base);
            for xi in [root, -root] {
                if xi.norm() < 1e-8 {
                    return Err(LabError::CriticalFiber { modulus: xi.norm() });
                }
                min_base = min_base.min(xi.norm());
                let alpha = d.alpha * (-a * a / spec.poly.deriv(xi));
                next.push(ModelDisk {
                    center: d.alpha * a * xi + d.center,
                    radius: alpha.norm() * spec.r,
                    parent: i,
                    base: xi,
                    alpha,
                });
            }
        }
        levels.push(next);
    }
    let mut disjoint = true;
    let mut nested = true;
    let mut max_ratio: f64 = 0.0;
    for k in 1..levels.len() {
        let (upper, level) = (&levels[k - 1], &levels[k]);
        for (i, d) in level.iter().enumerate() {
            let p = &upper[d.parent];
            max_ratio = max_ratio.max(d.radius / p.radius);
            if (d.center - p.center).norm() + d.radius >= p.radius {
                nested = false;
            }
            for e in &level[i + 1..] {
                if (d.center - e.center).norm() <= d.radius + e.radius {
                    disjoint = false;
                }
            }
        }
    }
    Ok(NestingReport {
        zeta,
        levels,
        pairwise_disjoint: disjoint,
        nested,
        max_ratio,
        ratio_bound: a.norm_sqr() / (2.0 * min_base),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrbitClass {
    Saddle,
    SemiParabolic,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub period: usize,
    pub points: Vec<Point2>,
    /// `(λ_s, λ_u)`, sorted by modulus. `λ_s` is `det DH^k / λ_u`; the quadratic formula
    /// cancels catastrophically once `|λ_s| ~ |a|^{2k}` drops below machine epsilon.
    pub multipliers: (C64, C64),
    pub jacobian_det: C64,
    pub classification: OrbitClass,
    /// The one-dimensional cycle point the search started from and its multiplier `(p^k)′`.
    pub zeta: C64,
    pub zeta_multiplier: C64,
}

impl PeriodicOrbit {
    pub fn closing_error(&self, params: &SemiParabolicParams) -> f64 {
        (params.forward_n(self.points[0], self.period) - self.points[0]).norm_max()
    }

    pub fn determinant_error(&self, a: C64) -> f64 {
        let expected = (-a * a).powu(self.period as u32);
        (self.jacobian_det - expected).norm() / expected.norm()
    }
}

/// One repelling cycle of `p` used to seed the search for the nearby saddle of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleSeed {
    pub period: usize,
    pub angle: ExternalAngle,
    pub zeta: C64,
    /// `ζ′` with `p(ζ′) = ζ` on the cycle; the seed is `(ζ, aζ′)`.
    pub previous: C64,
    pub multiplier: C64,
}

/// Landing points of the periodic angles `j/(2^k − 1)` with exact period `k ≤ k_max`,
/// one per distinct cycle of `p`, excluding the parabolic cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSeeds {
    pub poly: QuadPoly,
    pub k_max: usize,
    pub cycles: Vec<CycleSeed>,
}

impl PeriodicSeeds {
    pub fn new(poly: QuadPoly, k_max: usize) -> Result<Self> {
        let mut angles = Vec::new();
        for k in 1..=k_max {
            let den = (1u64 << k) - 1;
            angles.extend((0..den).map(|j| ExternalAngle::new(j, den)).filter(|t| t.orbit_type() == (0, k)));
        }
        let table = CaratheodoryTable::build(&poly, angles.iter().copied(), 60, DEFAULT_R_OUTER)?;
        let (table, _) = table.refined(&poly);
        let mut seen: BTreeMap<(usize, i64, i64), ()> = BTreeMap::new();
        let mut cycles = Vec::new();
        for t in angles {
            let k = t.orbit_type().1;
            let Some(zeta) = table.get(&t) else { continue };
            if poly.lambda.is_some() && (zeta - poly.parabolic_fp).norm() < 1e-6 {
                continue;
            }
            if (poly.iterate(zeta, k) - zeta).norm() > 1e-8 {
                continue;
            }
            let mut cycle = vec![zeta];
            for _ in 1..k {
                cycle.push(poly.eval(*cycle.last().unwrap()));
            }
            let key = cycle
                .iter()
                .map(|z| (k, (z.re * 1e7).round() as i64, (z.im * 1e7).round() as i64))
                .min()
                .unwrap();
            if seen.insert(key, ()).is_some() {
                continue;
            }
            let previous = cycle[k - 1];
            let multiplier = cycle.iter().map(|z| 2.0 * z).product();
            cycles.push(CycleSeed {
                period: k,
                angle: t,
                zeta,
                previous,
                multiplier,
            });
        }
        Ok(Self { poly, k_max, cycles })
    }
}

fn solve2(m: &Mat2, rhs: (C64, C64)) -> Option<(C64, C64)> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.norm() < 1e-300 {
        return None;
    }
    Some((
        (rhs.0 * m[1][1] - m[0][1] * rhs.1) / det,
        (m[0][0] * rhs.1 - m[1][0] * rhs.0) / det,
    ))
}

/// Newton's method on `H^k(pt) − pt`.
pub fn newton_periodic(params: &SemiParabolicParams, seed: Point2, k: usize) -> Option<Point2> {
    let one = C64::new(1.0, 0.0);
    let mut pt = seed;
    for _ in 0..80 {
        let (img, j) = params.jacobian_n(pt, k);
        let g = img - pt;
        if !g.is_finite() {
            return None;
        }
        if g.norm_max() < 1e-13 * (1.0 + pt.norm_max()) {
            return Some(pt);
        }
        let m = [[j[0][0] - one, j[0][1]], [j[1][0], j[1][1] - one]];
        let (dx, dy) = solve2(&m, (-g.x, -g.y))?;
        pt = Point2::new(pt.x + dx, pt.y + dy);
        if !pt.is_finite() || pt.norm_max() > 1e3 {
            return None;
        }
    }
    let g = params.forward_n(pt, k) - pt;
    (g.norm_max() < 1e-10 * (1.0 + pt.norm_max())).then_some(pt)
}

/// `det DH^k` as the product of the one-step determinants along the orbit, which
/// avoids the cancellation inside the entries of `DH^k`.
fn orbit_det(params: &SemiParabolicParams, pt: Point2, k: usize) -> C64 {
    let mut det = C64::new(1.0, 0.0);
    let mut q = pt;
    for _ in 0..k {
        let j = params.jacobian(q);
        det *= j[0][0] * j[1][1] - j[0][1] * j[1][0];
        q = params.forward(q);
    }
    det
}

fn multipliers(params: &SemiParabolicParams, pt: Point2, k: usize) -> ((C64, C64), C64) {
    let (_, j) = params.jacobian_n(pt, k);
    let det = orbit_det(params, pt, k);
    let (_, u) = eigenvalues2(&j);
    ((det / u, u), det)
}

fn classify(multipliers: (C64, C64), lambda: Option<C64>) -> OrbitClass {
    let (s, u) = multipliers;
    if lambda.is_some_and(|l| (s - l).norm() < 1e-6 || (u - l).norm() < 1e-6) {
        OrbitClass::SemiParabolic
    } else if u.norm() > 1.0 && s.norm() < 1.0 {
        OrbitClass::Saddle
    } else {
        OrbitClass::Other
    }
}

fn orbit_from_point(params: &SemiParabolicParams, pt: Point2, k: usize, seed: &CycleSeed) -> PeriodicOrbit {
    let mut points = vec![pt];
    for _ in 1..k {
        points.push(params.forward(*points.last().unwrap()));
    }
    let (multipliers, jacobian_det) = multipliers(params, pt, k);
    PeriodicOrbit {
        period: k,
        points,
        multipliers,
        jacobian_det,
        classification: classify(multipliers, Some(params.lambda.value.powu(k as u32))),
        zeta: seed.zeta,
        zeta_multiplier: seed.multiplier,
    }
}

/// Smallest `d | k` with `H^d(pt) = pt` to the solver tolerance.
fn exact_period(params: &SemiParabolicParams, pt: Point2, k: usize) -> usize {
    (1..=k)
        .find(|d| k.is_multiple_of(*d) && (params.forward_n(pt, *d) - pt).norm_max() < 1e-9 * (1.0 + pt.norm_max()))
        .unwrap_or(k)
}

fn cycle_key(orbit: &PeriodicOrbit) -> (usize, [i64; 4]) {
    let round = |v: f64| (v * 1e7).round() as i64;
    let key = orbit
        .points
        .iter()
        .map(|p| [round(p.x.re), round(p.x.im), round(p.y.re), round(p.y.im)])
        .min()
        .unwrap();
    (orbit.period, key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitSearch {
    pub orbits: Vec<PeriodicOrbit>,
    pub dropped_seeds: usize,
}

/// The semi-parabolic fixed point followed by the saddles continued from the
/// repelling cycles of `p` (Newton from `(ζ, aζ′)`), deduplicated by cycle.
pub fn find_periodic_orbits(params: &SemiParabolicParams, seeds: &PeriodicSeeds, k_max: usize) -> OrbitSearch {
    let fixed = CycleSeed {
        period: 1,
        angle: ExternalAngle::new(0, 1),
        zeta: seeds.poly.parabolic_fp,
        previous: seeds.poly.parabolic_fp,
        multiplier: params.lambda.value,
    };
    let mut orbits = vec![orbit_from_point(params, params.fixed_point, 1, &fixed)];
    let found: Vec<Option<PeriodicOrbit>> = seeds
        .cycles
        .par_iter()
        .filter(|c| c.period <= k_max)
        .map(|c| {
            let start = Point2::new(c.zeta, params.a * c.previous);
            let pt = newton_periodic(params, start, c.period)?;
            let k = exact_period(params, pt, c.period);
            Some(orbit_from_point(params, pt, k, c))
        })
        .collect();
    let dropped = found.iter().filter(|o| o.is_none()).count();
    let mut seen: BTreeMap<(usize, [i64; 4]), ()> = BTreeMap::new();
    seen.insert(cycle_key(&orbits[0]), ());
    for o in found.into_iter().flatten() {
        if seen.insert(cycle_key(&o), ()).is_none() {
            orbits.push(o);
        }
    }
    OrbitSearch {
        orbits,
        dropped_seeds: dropped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedOrbit {
    pub period: usize,
    pub zeta_multiplier: C64,
    pub lambda_s: Vec<C64>,
    pub lambda_u: Vec<C64>,
    /// Slope of `log|λ_s|` against `log|a|` (expected `2k`).
    pub slope_s: f64,
    /// Slope of `log|λ_u − (p^k)′(ζ)|` against `log|a|`. The correction is `O(a)`; for
    /// real `a` it is even in `a` and the slope comes out near 2.
    pub slope_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub a_values: Vec<f64>,
    pub orbits: Vec<TrackedOrbit>,
    /// Orbits lost during continuation.
    pub lost: usize,
}

/// Continues every saddle found at `ladder[0]` across the ladder (real `a`) and fits
/// the multiplier asymptotics.
pub fn saddle_asymptotics(lambda: RootOfUnity, ladder: &[f64], seeds: &PeriodicSeeds, k_max: usize) -> AsymptoticsReport {
    let first = SemiParabolicParams::new(lambda, C64::new(ladder[0], 0.0));
    let start: Vec<PeriodicOrbit> = find_periodic_orbits(&first, seeds, k_max)
        .orbits
        .into_iter()
        .filter(|o| o.classification == OrbitClass::Saddle)
        .collect();
    let mut lost = 0;
    let tracked = start
        .into_iter()
        .filter_map(|o| {
            let mut pt = o.points[0];
            let mut s = vec![o.multipliers.0];
            let mut u = vec![o.multipliers.1];
            for w in ladder.windows(2) {
                let params = SemiParabolicParams::new(lambda, C64::new(w[1], 0.0));
                let guess = Point2::new(pt.x, pt.y * (w[1] / w[0]));
                let Some(next) = newton_periodic(&params, guess, o.period) else {
                    lost += 1;
                    return None;
                };
                pt = next;
                let ((ls, lu), _) = multipliers(&params, pt, o.period);
                s.push(ls);
                u.push(lu);
            }
            let ls: Vec<f64> = s.iter().map(|v| v.norm()).collect();
            let lu: Vec<f64> = u.iter().map(|v| (v - o.zeta_multiplier).norm()).collect();
            Some(TrackedOrbit {
                period: o.period,
                zeta_multiplier: o.zeta_multiplier,
                slope_s: loglog_slope(ladder, &ls),
                slope_u: loglog_slope(ladder, &lu),
                lambda_s: s,
                lambda_u: u,
            })
        })
        .collect();
    AsymptoticsReport {
        a_values: ladder.to_vec(),
        orbits: tracked,
        lost,
    }
}

/// Tolerance on `|estimate − target|` for a connected verdict.
pub const DEFAULT_MARGIN: f64 = 0.25;
/// Below this fraction of continued cycles the average is not trusted.
pub const MIN_COVERAGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Connected,
    Disconnected,
    Undecided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityScore {
    pub verdict: Connectivity,
    /// Periodic-orbit average of `(1/k) log|λ_s|`.
    pub estimate: f64,
    /// `2 log|a| − log 2`.
    pub target: f64,
    pub n_saddles: usize,
    /// Saddle cycles found over cycles of `p` seeded.
    pub coverage: f64,
}

/// A heuristic, not a certificate: the stable exponent of the measure of maximal
/// entropy is `2 log|a| − log 2` exactly when `J` is connected, and the unweighted
/// average over saddles of period `≤ k_max` stands in for it. Since `λ_s λ_u = (−a²)^k`,
/// `estimate − target = log 2 − ⟨(1/k) log|λ_u|⟩`. When Newton fails to continue most
/// cycles of `p` the few survivors say little, and the verdict is `Undecided`.
pub fn connectivity_heuristic(params: &SemiParabolicParams, seeds: &PeriodicSeeds, k_max: usize, margin: f64) -> ConnectivityScore {
    let search = find_periodic_orbits(params, seeds, k_max);
    let exps: Vec<f64> = search
        .orbits
        .iter()
        .filter(|o| o.classification == OrbitClass::Saddle)
        .map(|o| o.multipliers.0.norm().ln() / o.period as f64)
        .collect();
    let target = 2.0 * params.a.norm().ln() - 2f64.ln();
    let expected = seeds.cycles.iter().filter(|c| c.period <= k_max).count();
    let coverage = if expected == 0 { 0.0 } else { exps.len() as f64 / expected as f64 };
    if exps.is_empty() {
        return ConnectivityScore {
            verdict: Connectivity::Undecided,
            estimate: f64::NAN,
            target,
            n_saddles: 0,
            coverage,
        };
    }
    let estimate = exps.iter().sum::<f64>() / exps.len() as f64;
    let verdict = if coverage < MIN_COVERAGE {
        Connectivity::Undecided
    } else if (estimate - target).abs() < margin {
        Connectivity::Connected
    } else if estimate < target - margin {
        Connectivity::Disconnected
    } else {
        Connectivity::Undecided
    };
    ConnectivityScore {
        verdict,
        estimate,
        target,
        n_saddles: exps.len(),
        coverage,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_transform::{boundary_samples, build_neighborhood, iterate_to_fixed_point, GraphConfig};
    use crate::poly_dynamics::julia_sample;

    fn params(lambda: RootOfUnity, a: f64) -> SemiParabolicParams {
        SemiParabolicParams::new(lambda, C64::new(a, 0.0))
    }

    #[test]
    fn psi_formula_and_bounds() {
        let poly = QuadPoly::parabolic(RootOfUnity::one());
        let spec = ModelMapSpec::new(poly, C64::new(0.05, 0.0), 0.5, 2.0).unwrap();
        for zeta in julia_sample(&poly, 200, 3) {
            let z = C64::new(0.3, -0.2);
            let (w, v) = psi(&spec, zeta, z).unwrap();
            assert_eq!(w, zeta * zeta + poly.c0);
            let bound = 0.05 * zeta.norm() + 0.0025 * spec.r / (2.0 * zeta.norm());
            assert!(v.norm() <= bound + 1e-15);
            // The two preimage sub-disks over ζ are disjoint.
            let xi = poly.preimage(zeta);
            assert!((0.05 * (xi - -xi)).norm() > 2.0 * spec.r * 0.0025 / (2.0 * xi.norm()));
        }
        assert!(matches!(psi(&spec, C64::new(1e-9, 0.0), C64::new(0.0, 0.0)), Err(LabError::CriticalFiber { .. })));
        assert!(ModelMapSpec::new(poly, C64::new(0.3, 0.0), 0.5, 2.0).is_err());
    }

    #[test]
    fn psi_at_c0_zero_contracts_fibers_by_half_a_squared() {
        let spec = ModelMapSpec::new(QuadPoly::from_c0(C64::new(0.0, 0.0)), C64::new(0.1, 0.0), 0.5, 1.0).unwrap();
        for k in 0..16 {
            let zeta = C64::from_polar(1.0, 0.39 * k as f64);
            let (w, v1) = psi(&spec, zeta, C64::new(0.2, 0.0)).unwrap();
            let (_, v2) = psi(&spec, zeta, C64::new(-0.1, 0.1)).unwrap();
            assert!((w - zeta * zeta).norm() < 1e-15);
            let factor = (v1 - v2).norm() / (C64::new(0.3, -0.1)).norm();
            assert!((factor - 0.01 / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn psi_prime_is_psi_in_rescaled_coordinates() {
        let poly = QuadPoly::parabolic(RootOfUnity::minus_one());
        let a = C64::new(0.03, 0.01);
        let spec = ModelMapSpec::new(poly, a, 0.5, 2.0).unwrap();
        for zeta in julia_sample(&poly, 100, 8) {
            let z = C64::new(2.0, -1.0);
            let (w1, v1) = psi(&spec, zeta, a * z).unwrap();
            let (w2, v2) = psi_prime(&spec, zeta, z).unwrap();
            assert_eq!(w1, w2);
            assert!((v1 / a - v2).norm() < 1e-13);
        }
    }

    #[test]
    fn nesting_depth_three() {
        let poly = QuadPoly::parabolic(RootOfUnity::one());
        let spec = ModelMapSpec::new(poly, C64::new(0.05, 0.0), 0.5, 2.0).unwrap();
        let zeta = julia_sample(&poly, 50, 1)[49];
        let one = model_nesting(&spec, zeta, 1).unwrap();
        for d in &one.levels[1] {
            assert!((d.radius - spec.r * 0.0025 / (2.0 * d.base.norm())).abs() < 1e-15);
        }
        let rep = model_nesting(&spec, zeta, 3).unwrap();
        assert_eq!(rep.levels[3].len(), 8);
        assert!(rep.pairwise_disjoint && rep.nested);
        assert!(rep.max_ratio <= rep.ratio_bound * (1.0 + 1e-12));
        // The radii telescope along each branch.
        for d in &rep.levels[3] {
            let mut prod = 1.0;
            let mut node = *d;
            for lvl in (1..=3).rev() {
                prod *= 0.0025 / (2.0 * node.base.norm());
                node = rep.levels[lvl - 1][node.parent];
            }
            assert!((d.radius / spec.r - prod).abs() < 1e-10 * prod);
        }
    }

    #[test]
    fn sigma_p_is_psi_to_third_order() {
        let lambda = RootOfUnity::one();
        let poly = QuadPoly::parabolic(lambda);
        let cfg = GraphConfig {
            level: 5,
            pin_parabolic: true,
            ..GraphConfig::default()
        };
        let mut ks = Vec::new();
        let mut table = None;
        for a in [0.04, 0.02, 0.01] {
            let p = params(lambda, a);
            let v = build_neighborhood(&p, &cfg).unwrap();
            let (f, _) = iterate_to_fixed_point(&v, &cfg).unwrap();
            let t: &CaratheodoryTable = table.get_or_insert_with(|| {
                CaratheodoryTable::build(&poly, f.angles.iter().copied(), 60, DEFAULT_R_OUTER).unwrap().refined(&poly).0
            });
            let spec = ModelMapSpec::new(poly, p.a, f.r, fit_second_order_bound(&f, t, p.a).unwrap()).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..f.angles.len() {
                for z in boundary_samples(f.r).step_by(4) {
                    let (zeta, (w1, v1)) = sigma_p(&f, t, p.a, i, z).unwrap();
                    let (w2, v2) = psi(&spec, zeta, z).unwrap();
                    worst = worst.max((w1 - w2).norm().max((v1 - v2).norm()));
                }
            }
            ks.push(worst / a.powi(3));
        }
        assert!(ks.iter().all(|k| k.is_finite() && *k > 0.0));
        assert!(ks[0] / ks[2] < 1.5 && ks[2] / ks[0] < 1.5, "{ks:?}");
    }

    #[test]
    fn periodic_orbits_lambda_one() {
        let lambda = RootOfUnity::one();
        let p = params(lambda, 0.05);
        let seeds = PeriodicSeeds::new(QuadPoly::parabolic(lambda), 6).unwrap();
        let search = find_periodic_orbits(&p, &seeds, 6);
        assert_eq!(search.orbits[0].classification, OrbitClass::SemiParabolic);
        assert!(search.orbits.iter().filter(|o| o.period == 1).count() == 1);
        let mut periods = BTreeMap::new();
        for o in &search.orbits {
            assert!(o.closing_error(&p) < 1e-9);
            assert!(o.determinant_error(p.a) < 1e-12);
            *periods.entry(o.period).or_insert(0) += 1;
            if o.period > 1 {
                assert_eq!(o.classification, OrbitClass::Saddle);
                // The Hénon cycle sits O(a) from its one-dimensional cycle.
                assert!(o.points.iter().any(|q| (q.x - o.zeta).norm() < 10.0 * 0.05));
            }
        }
        // One cycle of p per period-k class: 1, 1, 2, 3, 6, 9 for k = 1..6; the parabolic
        // fixed point absorbs the other fixed point.
        assert_eq!(periods, BTreeMap::from([(1, 1), (2, 1), (3, 2), (4, 3), (5, 6), (6, 9)]));
        // Period 2: the one-dimensional multiplier is 4(c₀ + 1) = 5.
        let two = search.orbits.iter().find(|o| o.period == 2).unwrap();
        assert!((two.zeta_multiplier - 5.0).norm() < 1e-9);
        assert!((two.multipliers.1 - 5.0).norm() < 0.5);
    }

    #[test]
    fn period_two_asymptotics() {
        let lambda = RootOfUnity::one();
        let seeds = PeriodicSeeds::new(QuadPoly::parabolic(lambda), 2).unwrap();
        let rep = saddle_asymptotics(lambda, &[0.02, 0.04, 0.08], &seeds, 2);
        assert_eq!(rep.lost, 0);
        let two = rep.orbits.iter().find(|o| o.period == 2).unwrap();
        assert!((two.slope_s - 4.0).abs() < 0.2, "{}", two.slope_s);
        // (x, y) ↦ (x, −y) conjugates H_a to H_{−a}, so λ_u is even in a and the O(a)
        // correction is in fact O(a²).
        assert!((two.slope_u - 2.0).abs() < 0.3, "{}", two.slope_u);
        for (a, u) in rep.a_values.iter().zip(&two.lambda_u) {
            assert!((u - two.zeta_multiplier).norm() <= *a);
        }
        assert!((two.lambda_u[0] - 5.0).norm() < (two.lambda_u[2] - 5.0).norm());
    }

    #[test]
    fn connectivity_small_a_is_connected() {
        let lambda = RootOfUnity::minus_one();
        let seeds = PeriodicSeeds::new(QuadPoly::parabolic(lambda), 8).unwrap();
        let p = params(lambda, 0.02);
        let s8 = connectivity_heuristic(&p, &seeds, 8, DEFAULT_MARGIN);
        assert_eq!(s8.verdict, Connectivity::Connected, "{s8:?}");
        assert!(s8.coverage > 0.99);
        let s4 = connectivity_heuristic(&p, &seeds, 4, DEFAULT_MARGIN);
        assert!((s8.estimate - s4.estimate).abs() < 0.1, "{s4:?} {s8:?}");
        // estimate − target = log 2 − ⟨(1/k) log|λ_u|⟩, because λ_s λ_u = (−a²)^k.
        let search = find_periodic_orbits(&p, &seeds, 8);
        let u: Vec<f64> = search
            .orbits
            .iter()
            .filter(|o| o.classification == OrbitClass::Saddle)
            .map(|o| o.multipliers.1.norm().ln() / o.period as f64)
            .collect();
        let mean_u = u.iter().sum::<f64>() / u.len() as f64;
        assert!((s8.estimate - s8.target - (2f64.ln() - mean_u)).abs() < 1e-9);
        let big = connectivity_heuristic(&params(lambda, 0.9), &seeds, 8, DEFAULT_MARGIN);
        assert_ne!(big.verdict, Connectivity::Connected, "{big:?}");
    }

    #[test]
    fn periodic_fibers_contain_henon_periodic_points() {
        let lambda = RootOfUnity::one();
        let p = params(lambda, 0.05);
        let seeds = PeriodicSeeds::new(QuadPoly::parabolic(lambda), 6).unwrap();
        let periodic: Vec<ExternalAngle> = seeds.cycles.iter().map(|c| c.angle).collect();
        let mut extra = Vec::new();
        for t in &periodic {
            let mut s = *t;
            for _ in 0..t.orbit_type().1 {
                extra.push(s);
                s = s.double();
            }
        }
        let cfg = GraphConfig {
            level: 2,
            extra_angles: extra,
            pin_parabolic: true,
            ..GraphConfig::default()
        };
        let v = build_neighborhood(&p, &cfg).unwrap();
        let (f, report) = iterate_to_fixed_point(&v, &cfg).unwrap();
        assert!(report.converged);
        let orbits = find_periodic_orbits(&p, &seeds, 6).orbits;
        for t in periodic {
            let fb = f.fiber(&t).unwrap();
            let hit = orbits
                .iter()
                .flat_map(|o| o.points.iter())
                .any(|q| q.y.norm() <= f.r && (q.x - fb.eval(q.y)).norm() < 1e-6);
            assert!(hit, "no periodic point on the fiber of {t}");
        }
    }
}
