//! The neighborhood `V`, vertical-like fibers over external angles, and the graph
//! transform whose fixed point `f*` semiconjugates `H` to the model `σ(t, z) = (2t, aφ_t(z))`.
//!
//! A fiber `φ_t` is a polynomial in `z` on `D_r`, interpolated from its values at
//! `d_max + 1` equispaced nodes on `|z| = r`. One generation pulls every fiber back
//! through the recurrence `p(φ_new(z)) + a²w + az = φ_{2t}(aφ_new(z))`.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::henon_core::{escape_time, default_radius, Point2, RootOfUnity, SemiParabolicParams, C64};
use crate::normal_form::{NormalFormData, DEFAULT_RHO_PRIME};
use crate::petals_cones::{
    attracting_axes, eps1, halton2, in_sector, minus_sector_samples, EstimateBundle, SectorKind, SectorSpec,
};
use crate::poly_dynamics::{CaratheodoryTable, EquipotentialLadder, ExternalAngle, QuadPoly, DEFAULT_R_OUTER};
use crate::stable_manifold::{solve_second_coordinate, stable_param_with_derivative, StableParam};

/// Vertical radius of the fibers. Points of `J` have second coordinates `a·x` with
/// `|x| < 2`, so half a unit leaves room for `|a| ≤ 0.1` while keeping `r|a|` small.
pub const DEFAULT_FIBER_RADIUS: f64 = 0.5;
/// Boundary samples used for sup-norms (maximum modulus).
pub const BOUNDARY_SAMPLES: usize = 64;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Dyadic grid `j/2^level`.
    pub level: u32,
    /// Additional angles; the grid is closed under doubling after adding them.
    pub extra_angles: Vec<ExternalAngle>,
    pub d_max: usize,
    pub fiber_radius: f64,
    pub r_outer: f64,
    pub rho_prime: f64,
    pub fixpoint_tol: f64,
    pub max_gens: usize,
    pub newton_tol: f64,
    pub max_inner: usize,
    /// Replace fibers on the parabolic ray cycle by the graph of `W^s(q_a)`, their limit.
    pub pin_parabolic: bool,
    /// Depth of the Carathéodory table used for comparisons.
    pub depth: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            level: 10,
            extra_angles: Vec::new(),
            d_max: 12,
            fiber_radius: DEFAULT_FIBER_RADIUS,
            r_outer: DEFAULT_R_OUTER,
            rho_prime: DEFAULT_RHO_PRIME,
            fixpoint_tol: 1e-6,
            max_gens: 400,
            newton_tol: 1e-10,
            max_inner: 60,
            pin_parabolic: false,
            depth: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallnessCheck {
    pub condition: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `V = (U′ × D_r) ∖ ((Ω′ × D_r) ∖ (B ∪ B′))`, held as membership predicates.
///
/// `U` is bounded by the level `−1` equipotential and `U′ = p⁻¹(U)` by level `0`;
/// `Ω = p^{−n}(S_att)` where `S_att` is the union of sectors of half-angle `π/(4q)`
/// about the attracting axes inside `D_ρ′(q₀)` and `n` is the first iterate with
/// `p^{n+1}(0) ∈ S_att`.
#[derive(Debug, Clone)]
pub struct NeighborhoodV {
    pub params: SemiParabolicParams,
    pub poly: QuadPoly,
    pub r_outer: f64,
    pub r: f64,
    pub rho_prime: f64,
    pub rho_dblprime: f64,
    pub sector_half_angle: f64,
    pub axes: Vec<C64>,
    pub entry_iterate: usize,
    pub gamma_outer: Vec<C64>,
    pub gamma_zero: Vec<C64>,
    pub smallness: Vec<SmallnessCheck>,
}

impl NeighborhoodV {
    fn q0(&self) -> C64 {
        self.poly.parabolic_fp
    }

    fn green_level(&self, level: i32) -> f64 {
        self.r_outer.ln() * 0.5f64.powi(level)
    }

    pub fn in_sector_slab(&self, x: C64) -> bool {
        let u = x - self.q0();
        u.norm() < self.rho_prime
            && u.norm() > 0.0
            && self.axes.iter().any(|d| (u / d).arg().abs() < self.sector_half_angle)
    }

    pub fn in_omega(&self, x: C64) -> bool {
        self.in_sector_slab(self.poly.iterate(x, self.entry_iterate))
    }

    pub fn in_omega_prime(&self, x: C64) -> bool {
        self.in_omega(self.poly.eval(x))
    }

    pub fn in_u(&self, x: C64) -> bool {
        self.poly.green(x) < self.green_level(-1) && !self.in_omega(x)
    }

    pub fn in_u_prime(&self, x: C64) -> bool {
        self.in_u(self.poly.eval(x))
    }

    pub fn in_b(&self, pt: Point2) -> bool {
        (pt.x - self.q0()).norm() < self.rho_prime && pt.y.norm() < self.r
    }

    /// The component of `H⁻¹(B)` through `q₁ = −q₀`.
    pub fn in_b_prime(&self, pt: Point2) -> bool {
        pt.y.norm() < self.r
            && (pt.x + self.q0()).norm() < (pt.x - self.q0()).norm()
            && self.in_b(self.params.forward(pt))
    }

    /// The repelling side of `B`: outside the attracting sectors.
    pub fn in_w_minus(&self, pt: Point2) -> bool {
        self.in_b(pt) && !self.in_sector_slab(pt.x)
    }

    pub fn in_v(&self, pt: Point2) -> bool {
        pt.y.norm() < self.r
            && self.poly.green(pt.x) < self.green_level(0)
            && (!self.in_omega_prime(pt.x) || self.in_b(pt) || self.in_b_prime(pt))
    }
}

/// Distance from `center` to the boundary of `{x : inside(x)}` along 256 rays
/// (march then bisect); the center must be inside.
fn radial_boundary(center: C64, inside: impl Fn(C64) -> bool, max_radius: f64) -> Vec<C64> {
    let n_rays = 256;
    let step = 1e-3;
    (0..n_rays)
        .filter_map(|k| {
            let dir = C64::from_polar(1.0, TAU * k as f64 / n_rays as f64);
            let mut s = step;
            while s < max_radius && inside(center + dir * s) {
                s += step;
            }
            if s >= max_radius {
                return None;
            }
            let (mut lo, mut hi) = (s - step, s);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if inside(center + dir * mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Some(center + dir * hi)
        })
        .collect()
}

fn equipotential_polyline(poly: &QuadPoly, r_outer: f64, level: i32) -> Result<Vec<C64>> {
    let n = 1024u64;
    let mut ladder = EquipotentialLadder::new(*poly, r_outer, (0..n).map(|k| ExternalAngle::new(k, n)))?;
    ladder.advance_to(level)?;
    Ok(ladder.current)
}

fn min_distance(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| (x - y).norm()))
        .fold(f64::INFINITY, f64::min)
}

/// Builds `V` and evaluates the two smallness conditions; fails on the first that does not hold.
pub fn build_neighborhood(params: &SemiParabolicParams, config: &GraphConfig) -> Result<NeighborhoodV> {
    let v = neighborhood_unchecked(params, config)?;
    if let Some(bad) = v.smallness.iter().find(|s| !s.holds) {
        return Err(LabError::SmallnessViolated {
            condition: bad.condition.clone(),
            lhs: bad.lhs,
            rhs: bad.rhs,
        });
    }
    Ok(v)
}

/// `V` with its smallness report, whether or not the conditions hold.
pub fn neighborhood_unchecked(params: &SemiParabolicParams, config: &GraphConfig) -> Result<NeighborhoodV> {
    let poly = QuadPoly::parabolic(params.lambda);
    let q = params.lambda.q as usize;
    let q0 = poly.parabolic_fp;
    let rho_prime = config.rho_prime;
    let mut v = NeighborhoodV {
        params: *params,
        poly,
        r_outer: config.r_outer,
        r: config.fiber_radius,
        rho_prime,
        rho_dblprime: 0.0,
        sector_half_angle: PI / (4.0 * q as f64),
        axes: attracting_axes(&poly, q),
        entry_iterate: 0,
        gamma_outer: equipotential_polyline(&poly, config.r_outer, -1)?,
        gamma_zero: equipotential_polyline(&poly, config.r_outer, 0)?,
        smallness: Vec::new(),
    };
    let mut z = poly.c0;
    let mut n = 0;
    while !v.in_sector_slab(z) {
        z = poly.eval(z);
        n += 1;
        if n > 10_000 {
            return Err(LabError::NoConvergence {
                what: "critical orbit entry into the attracting sectors".into(),
                iterations: n,
                residual: (z - q0).norm(),
            });
        }
    }
    v.entry_iterate = n;

    // Largest ρ″ with p²(D_ρ″(q₀)) ⊂ D_ρ′(q₀); the sup of |p²(x) − q₀| sits on the circle.
    let fits = |rho: f64| {
        (0..256).all(|k| (poly.iterate(q0 + C64::from_polar(rho, TAU * k as f64 / 256.0), 2) - q0).norm() < rho_prime)
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
    v.rho_dblprime = lo;

    let ra = v.r * params.a.norm();
    // inf_{U′} |p(x) − c₀| = dist(c₀, complement of U), which Ω makes positive.
    let omega_boundary = radial_boundary(poly.c0, |x| v.in_omega(x), 2.0);
    let gap_c0 = omega_boundary.iter().map(|b| (b - poly.c0).norm()).fold(f64::INFINITY, f64::min);
    v.smallness.push(SmallnessCheck {
        condition: "r|a| < inf over U' of |p(x) - c0|".into(),
        lhs: ra,
        rhs: gap_c0,
        holds: ra < gap_c0,
    });
    let omega_prime_boundary: Vec<C64> = radial_boundary(C64::new(0.0, 0.0), |x| v.in_omega_prime(x), 2.0)
        .into_iter()
        .filter(|b| (b - q0).norm() >= rho_prime)
        .collect();
    let mut outer_u = v.gamma_outer.clone();
    outer_u.extend(&omega_boundary);
    let gap = min_distance(&omega_prime_boundary, &outer_u).min(min_distance(&v.gamma_zero, &outer_u));
    v.smallness.push(SmallnessCheck {
        condition: "2r|a| < dist(boundary of U' outside D_rho', boundary of U)".into(),
        lhs: 2.0 * ra,
        rhs: gap,
        holds: 2.0 * ra < gap,
    });
    Ok(v)
}

/// Samples of `(Ω′ × D_r) ∖ (B ∪ B′)` and how many of them escape within `n_iter`
/// steps; points of the removed set should lie in the interior of `K⁺`.
pub fn removed_set_certificate(v: &NeighborhoodV, n_samples: usize, n_iter: usize, seed: u64) -> (usize, usize) {
    let poly = v.poly;
    let omega_prime = radial_boundary(C64::new(0.0, 0.0), |x| v.in_omega_prime(x), 2.0);
    let extent = omega_prime.iter().map(|b| b.norm()).fold(0.0, f64::max);
    let escape_r = default_radius(&v.params);
    let mut checked = 0;
    let mut escaped = 0;
    let mut i = 0;
    while checked < n_samples && i < 100 * n_samples {
        let (u1, u2) = halton2(i, seed);
        let (u3, u4) = halton2(i, seed + 1);
        i += 1;
        let x = C64::new((2.0 * u1 - 1.0) * extent, (2.0 * u2 - 1.0) * extent);
        let y = C64::from_polar(v.r * u3.sqrt(), TAU * u4);
        let pt = Point2::new(x, y);
        if !v.in_omega_prime(x) || v.in_b(pt) || v.in_b_prime(pt) || poly.green(x) > 0.0 {
            continue;
        }
        checked += 1;
        if escape_time(&v.params, pt, escape_r, n_iter).is_some() {
            escaped += 1;
        }
    }
    (checked, escaped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub t: ExternalAngle,
    /// `φ_t(z) = Σ coeffs[k] z^k`.
    pub coeffs: Vec<C64>,
    pub sup_bound: f64,
    /// Largest `|dφ_t/dz|` on the boundary sample.
    pub max_slope: f64,
    /// Largest recurrence residual at the interpolation nodes.
    pub residual: f64,
    /// `φ_t(−aw)`, the label certificate compared against `γ_n(t)`.
    pub crossing: C64,
}

impl Fiber {
    pub fn constant(t: ExternalAngle, value: C64, d_max: usize) -> Self {
        let mut coeffs = vec![ZERO; d_max + 1];
        coeffs[0] = value;
        Self {
            t,
            coeffs,
            sup_bound: value.norm(),
            max_slope: 0.0,
            residual: 0.0,
            crossing: value,
        }
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, c| acc * z + c)
    }

    pub fn deriv(&self, z: C64) -> C64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(ZERO, |acc, (k, c)| acc * z + c * k as f64)
    }

    /// Interpolates node values on `|z| = r` and fills in the certificates.
    fn from_nodes(t: ExternalAngle, values: &[C64], r: f64, residual: f64, crossing_at: C64) -> Self {
        let n = values.len();
        let coeffs = (0..n)
            .map(|k| {
                let s: C64 = values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| v * C64::from_polar(1.0, -TAU * (j * k) as f64 / n as f64))
                    .sum();
                s / (n as f64 * r.powi(k as i32))
            })
            .collect();
        let mut fiber = Self {
            t,
            coeffs,
            sup_bound: 0.0,
            max_slope: 0.0,
            residual,
            crossing: ZERO,
        };
        for z in boundary_samples(r) {
            fiber.sup_bound = fiber.sup_bound.max(fiber.eval(z).norm());
            fiber.max_slope = fiber.max_slope.max(fiber.deriv(z).norm());
        }
        fiber.crossing = fiber.eval(crossing_at);
        fiber
    }
}

pub fn boundary_samples(r: f64) -> impl Iterator<Item = C64> {
    (0..BOUNDARY_SAMPLES).map(move |k| C64::from_polar(r, TAU * (k as f64 + 0.5) / BOUNDARY_SAMPLES as f64))
}

fn nodes(r: f64, d_max: usize) -> Vec<C64> {
    let n = d_max + 1;
    (0..n).map(|k| C64::from_polar(r, TAU * k as f64 / n as f64)).collect()
}

/// Angles whose rays land at `q₀`: the doubling cycle of rotation number `p/q`.
pub fn parabolic_cycle_angles(lambda: &RootOfUnity) -> Vec<ExternalAngle> {
    let q = lambda.q as usize;
    if q == 1 {
        return vec![ExternalAngle::new(0, 1)];
    }
    let den = (1u64 << q) - 1;
    let p = lambda.p.rem_euclid(q as i64) as usize;
    for num in 1..den {
        let start = ExternalAngle::new(num, den);
        let mut orbit = vec![start];
        let mut t = start.double();
        while t != start && orbit.len() <= q {
            orbit.push(t);
            t = t.double();
        }
        if orbit.len() != q {
            continue;
        }
        let mut sorted = orbit.clone();
        sorted.sort();
        let pos = |s: &ExternalAngle| sorted.iter().position(|u| u == s).unwrap();
        if sorted.iter().enumerate().all(|(i, s)| pos(&s.double()) == (i + p) % q) {
            return sorted;
        }
    }
    Vec::new()
}

#[derive(Debug, Clone)]
pub struct FiberFamily {
    pub level_k: u32,
    pub angles: Vec<ExternalAngle>,
    pub doubled: Vec<usize>,
    pub fibers: Vec<Fiber>,
    pub generation: usize,
    pub r: f64,
    /// 1-D equipotentials `γ_n(t)` at the current generation; these carry the branch labels.
    pub labels: EquipotentialLadder,
}

impl FiberFamily {
    pub fn index_of(&self, t: &ExternalAngle) -> Option<usize> {
        self.labels.index_of(t)
    }

    pub fn fiber(&self, t: &ExternalAngle) -> Option<&Fiber> {
        self.index_of(t).map(|i| &self.fibers[i])
    }
}

fn grid_angles(config: &GraphConfig) -> Vec<ExternalAngle> {
    let mut angles: Vec<ExternalAngle> = (0..1u64 << config.level).map(|j| ExternalAngle::dyadic(j, config.level)).collect();
    angles.extend(config.extra_angles.iter().copied());
    angles
}

/// `f₀(t, z) = (γ₀(t), z)` on the outer boundary of `V`.
pub fn initial_family(v: &NeighborhoodV, config: &GraphConfig) -> Result<FiberFamily> {
    let mut labels = EquipotentialLadder::new(v.poly, v.r_outer, grid_angles(config))?;
    labels.advance_to(0)?;
    let angles = labels.angles.clone();
    let doubled = (0..angles.len()).map(|i| labels.doubled_index(i)).collect();
    let fibers = angles
        .iter()
        .zip(&labels.current)
        .map(|(t, g)| Fiber::constant(*t, *g, config.d_max))
        .collect();
    Ok(FiberFamily {
        level_k: config.level,
        angles,
        doubled,
        fibers,
        generation: 0,
        r: v.r,
        labels,
    })
}

/// Solves `x² + c₀ + a²w + az = φ_{2t}(ax)` on the branch nearest `reference`:
/// fixed-point iteration of the square root, then Newton after 20 steps.
fn solve_node(params: &SemiParabolicParams, target: &Fiber, z: C64, reference: C64, config: &GraphConfig) -> Result<(C64, f64)> {
    let (a, c0) = (params.a, params.c0());
    let shift = c0 + a * a * params.w + a * z;
    let g = |x: C64| x * x + shift - target.eval(a * x);
    let pick = |s: C64, near: C64| if (s - near).norm() <= (s + near).norm() { s } else { -s };
    let mut x = pick((target.eval(a * reference) - shift).sqrt(), reference);
    let scale = |x: C64| config.newton_tol * (1.0 + x.norm_sqr());
    for k in 0..config.max_inner {
        let next = if k < 20 {
            pick((target.eval(a * x) - shift).sqrt(), x)
        } else {
            let d = 2.0 * x - a * target.deriv(a * x);
            x - g(x) / d
        };
        let done = (next - x).norm() < 1e-15 * (1.0 + x.norm());
        x = next;
        if !x.is_finite() {
            break;
        }
        if done || g(x).norm() < 1e-3 * scale(x) {
            break;
        }
    }
    let res = g(x).norm();
    if !x.is_finite() || res > scale(x) {
        return Err(LabError::NoConvergence {
            what: "fiber pullback".into(),
            iterations: config.max_inner,
            residual: res,
        });
    }
    Ok((x, res))
}

/// One fiber of the next generation; `reference` is `γ_{n+1}(t)`.
pub fn pullback_fiber(
    params: &SemiParabolicParams,
    family: &FiberFamily,
    index: usize,
    reference: C64,
    config: &GraphConfig,
) -> Result<Fiber> {
    let target = &family.fibers[family.doubled[index]];
    let mut values = Vec::with_capacity(config.d_max + 1);
    let mut residual: f64 = 0.0;
    for z in nodes(family.r, config.d_max) {
        let (x, res) = solve_node(params, target, z, reference, config)?;
        // Label certificate: the solution stays on the sheet of γ_{n+1}(t).
        if (x - reference).norm() >= (x + reference).norm() {
            return Err(LabError::BranchFlip { angle_index: index });
        }
        residual = residual.max(res);
        values.push(x);
    }
    Ok(Fiber::from_nodes(family.angles[index], &values, family.r, residual, -params.a * params.w))
}

/// The graph of `W^s(q_a)` over `|y| < r`, the limit of the fibers on the parabolic cycle.
pub fn stable_manifold_fiber(params: &SemiParabolicParams, t: ExternalAngle, r: f64, d_max: usize) -> Result<Fiber> {
    if params.a.norm() == 0.0 {
        return Ok(Fiber::constant(t, params.q_scalar, d_max));
    }
    let sp = StableParam::new(*params)?;
    let mut values = Vec::with_capacity(d_max + 1);
    let mut residual: f64 = 0.0;
    for z in nodes(r, d_max) {
        let start = z - params.fixed_point.y;
        let zeta = solve_second_coordinate(&sp, z, start).ok_or(LabError::NoConvergence {
            what: "stable manifold graph".into(),
            iterations: 60,
            residual: f64::NAN,
        })?;
        let (pt, _) = stable_param_with_derivative(&sp, zeta);
        residual = residual.max((pt.y - z).norm());
        values.push(pt.x);
    }
    Ok(Fiber::from_nodes(t, &values, r, residual, -params.a * params.w))
}

/// `F`: pulls back every fiber of the family (in parallel over angles).
pub fn apply_f(params: &SemiParabolicParams, family: &FiberFamily, config: &GraphConfig, pinned: &[(usize, Fiber)]) -> Result<FiberFamily> {
    let mut labels = family.labels.clone();
    labels.advance()?;
    let fibers = (0..family.angles.len())
        .into_par_iter()
        .map(|i| match pinned.iter().find(|(j, _)| *j == i) {
            Some((_, f)) => Ok(f.clone()),
            None => pullback_fiber(params, family, i, labels.current[i], config),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiberFamily {
        level_k: family.level_k,
        angles: family.angles.clone(),
        doubled: family.doubled.clone(),
        fibers,
        generation: family.generation + 1,
        r: family.r,
        labels,
    })
}

/// Max over angles of the sup over the boundary sample of `|φ_t − ψ_t|`.
pub fn family_distance(f: &FiberFamily, g: &FiberFamily) -> f64 {
    assert_eq!(f.angles, g.angles, "families live on different angle grids");
    f.fibers
        .iter()
        .zip(&g.fibers)
        .map(|(a, b)| fiber_distance(a, b, f.r))
        .fold(0.0, f64::max)
}

pub fn fiber_distance(a: &Fiber, b: &Fiber, r: f64) -> f64 {
    boundary_samples(r).map(|z| (a.eval(z) - b.eval(z)).norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// `d(f_n, f_{n+1})`, starting at `n = 0`.
    pub distances: Vec<f64>,
    /// `d(f_{n+1}, f_{n+2}) / d(f_n, f_{n+1})`.
    pub empirical_factors: Vec<f64>,
    pub residual: f64,
    pub generations: usize,
    pub converged: bool,
    pub pinned_angles: Vec<ExternalAngle>,
}

impl ContractionReport {
    /// Strictly decreasing distances from generation `burn_in` on.
    pub fn decreasing_after(&self, burn_in: usize) -> bool {
        self.distances.iter().skip(burn_in).zip(self.distances.iter().skip(burn_in + 1)).all(|(a, b)| b < a)
    }
}

/// Iterates `F` until `d(f_n, f_{n+1}) < fixpoint_tol` or `max_gens`.
pub fn iterate_to_fixed_point(v: &NeighborhoodV, config: &GraphConfig) -> Result<(FiberFamily, ContractionReport)> {
    let params = v.params;
    let mut family = initial_family(v, config)?;
    let mut pinned = Vec::new();
    if config.pin_parabolic {
        for t in parabolic_cycle_angles(&params.lambda) {
            if let Some(i) = family.index_of(&t) {
                pinned.push((i, stable_manifold_fiber(&params, t, v.r, config.d_max)?));
            }
        }
    }
    let mut distances = Vec::new();
    let mut increases = 0;
    let mut converged = false;
    while family.generation < config.max_gens {
        let next = apply_f(&params, &family, config, &pinned)?;
        let d = family_distance(&family, &next);
        if distances.last().is_some_and(|&prev| d > prev) {
            increases += 1;
            if increases >= 3 {
                return Err(LabError::NotContracting { generation: next.generation });
            }
        } else {
            increases = 0;
        }
        distances.push(d);
        family = next;
        if d < config.fixpoint_tol {
            converged = true;
            break;
        }
    }
    let empirical_factors = distances.windows(2).map(|w| w[1] / w[0]).collect();
    let residual = conjugacy_residual(&family, &params);
    Ok((
        family.clone(),
        ContractionReport {
            distances,
            empirical_factors,
            residual,
            generations: family.generation,
            converged,
            pinned_angles: pinned.iter().map(|(i, _)| family.angles[*i]).collect(),
        },
    ))
}

/// `σ(t, z) = (2t, aφ_t(z))`.
pub fn sigma(f: &FiberFamily, params: &SemiParabolicParams, index: usize, z: C64) -> (ExternalAngle, C64) {
    (f.angles[index].double(), params.a * f.fibers[index].eval(z))
}

/// `sup ‖H(f(t, z)) − f(σ(t, z))‖` over the grid and the boundary sample.
pub fn conjugacy_residual(f: &FiberFamily, params: &SemiParabolicParams) -> f64 {
    (0..f.angles.len())
        .into_par_iter()
        .map(|i| {
            let image_fiber = &f.fibers[f.doubled[i]];
            boundary_samples(f.r)
                .map(|z| {
                    let x = f.fibers[i].eval(z);
                    let h = params.forward(Point2::new(x, z));
                    let (_, w) = sigma(f, params, i, z);
                    (h - Point2::new(image_fiber.eval(w), w)).norm_max()
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest `|crossing − γ_n(t)| / |a|` over the family.
pub fn label_drift(f: &FiberFamily, a: C64) -> f64 {
    let d = f
        .fibers
        .iter()
        .zip(&f.labels.current)
        .map(|(fb, g)| (fb.crossing - g).norm())
        .fold(0.0, f64::max);
    d / a.norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionSample {
    pub a: f64,
    /// `sup |φ_t(z) − γ(t) + az/(2γ(t))|`.
    pub err_first: f64,
    /// `sup |φ_t(z) − γ(t)|`, the zeroth-order control.
    pub err_zeroth: f64,
}

/// Compares the fibers with the first-order expansion `γ(t) − az/p′(γ(t))`; `table` holds
/// landing points `γ(t)` for every angle of the family.
pub fn expansion_check(f: &FiberFamily, params: &SemiParabolicParams, table: &CaratheodoryTable) -> Result<ExpansionSample> {
    let a = params.a;
    let mut first: f64 = 0.0;
    let mut zeroth: f64 = 0.0;
    for fb in &f.fibers {
        let g = table
            .get(&fb.t)
            .ok_or_else(|| LabError::InvalidInput(format!("angle {} missing from the table", fb.t)))?;
        for z in boundary_samples(f.r) {
            let phi = fb.eval(z);
            first = first.max((phi - g + a * z / (2.0 * g)).norm());
            zeroth = zeroth.max((phi - g).norm());
        }
    }
    Ok(ExpansionSample {
        a: a.norm(),
        err_first: first,
        err_zeroth: zeroth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub samples: Vec<ExpansionSample>,
    /// `err(a)/err(a/2)` for consecutive ladder entries.
    pub ratios_first: Vec<f64>,
    pub ratios_zeroth: Vec<f64>,
    pub first_in_window: bool,
    pub zeroth_in_window: bool,
    pub reports: Vec<ContractionReport>,
}

/// Runs the fixed-point iteration at each `a` of a halving ladder (real `a`).
pub fn expansion_ladder(lambda: RootOfUnity, ladder: &[f64], config: &GraphConfig) -> Result<ExpansionReport> {
    let poly = QuadPoly::parabolic(lambda);
    let mut samples = Vec::new();
    let mut reports = Vec::new();
    let mut table: Option<CaratheodoryTable> = None;
    for &a in ladder {
        let params = SemiParabolicParams::new(lambda, C64::new(a, 0.0));
        let v = build_neighborhood(&params, config)?;
        let (f, report) = iterate_to_fixed_point(&v, config)?;
        if table.is_none() {
            let t = CaratheodoryTable::build(&poly, f.angles.iter().copied(), config.depth, config.r_outer)?;
            table = Some(t.refined(&poly).0);
        }
        samples.push(expansion_check(&f, &params, table.as_ref().unwrap())?);
        reports.push(report);
    }
    let ratios = |e: fn(&ExpansionSample) -> f64| samples.windows(2).map(|w| e(&w[0]) / e(&w[1])).collect::<Vec<_>>();
    let ratios_first = ratios(|s| s.err_first);
    let ratios_zeroth = ratios(|s| s.err_zeroth);
    Ok(ExpansionReport {
        first_in_window: ratios_first.iter().all(|r| (2.5..=6.0).contains(r)),
        zeroth_in_window: ratios_zeroth.iter().all(|r| (1.6..=2.6).contains(r)),
        samples,
        ratios_first,
        ratios_zeroth,
        reports,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationReport {
    pub a_values: Vec<f64>,
    /// `d(f*_{a_i}, f*_{a_{i+1}})`.
    pub distances: Vec<f64>,
    /// `distances[i] / |a_{i+1} − a_i|`.
    pub slopes: Vec<f64>,
}

impl ContinuationReport {
    /// Largest over smallest slope.
    pub fn slope_spread(&self) -> f64 {
        let max = self.slopes.iter().copied().fold(0.0, f64::max);
        let min = self.slopes.iter().copied().fold(f64::INFINITY, f64::min);
        max / min
    }
}

pub fn parameter_continuation(lambda: RootOfUnity, a_values: &[f64], config: &GraphConfig) -> Result<ContinuationReport> {
    let families = a_values
        .iter()
        .map(|&a| {
            let params = SemiParabolicParams::new(lambda, C64::new(a, 0.0));
            let v = build_neighborhood(&params, config)?;
            iterate_to_fixed_point(&v, config).map(|(f, _)| f)
        })
        .collect::<Result<Vec<_>>>()?;
    let distances: Vec<f64> = families.windows(2).map(|w| family_distance(&w[0], &w[1])).collect();
    let slopes = distances
        .iter()
        .zip(a_values.windows(2))
        .map(|(d, w)| d / (w[1] - w[0]).abs())
        .collect();
    Ok(ContinuationReport {
        a_values: a_values.to_vec(),
        distances,
        slopes,
    })
}

// Composite Gauss–Legendre rule, 10 nodes per panel.
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

fn gauss_legendre(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * (f(mid + half * x) + f(mid - half * x)))
        .sum::<f64>()
        * half
}

/// `∫₀^len (s² + δ²)^{q/2} ds`. With `s = δ sinh u` the integrand becomes
/// `(δ cosh u)^{q+1}`, which is smooth even when the segment passes near zero.
fn offset_power_integral(delta: f64, len: f64, q: u32) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    if delta <= 1e-14 * len {
        return len.powi(q as i32 + 1) / (q as f64 + 1.0);
    }
    let top = (len / delta).asinh();
    let ln_half_delta = (0.5 * delta).ln();
    let integrand = |u: f64| ((ln_half_delta + u).exp() + (ln_half_delta - u).exp()).powi(q as i32 + 1);
    let panels = (top / 0.5).ceil().max(1.0) as usize;
    let h = top / panels as f64;
    (0..panels).map(|k| gauss_legendre(integrand, k as f64 * h, (k + 1) as f64 * h)).sum()
}

/// `I(x₁, x₂) = ∫₀¹ |t x₁ + (1 − t) x₂|^q dt`, split at the point of the segment closest to 0.
pub fn technical_integral(x1: C64, x2: C64, q: u32) -> f64 {
    let b = x1 - x2;
    let bn = b.norm();
    if bn == 0.0 {
        return x1.norm().powi(q as i32);
    }
    // |x₂ + b t|² = |b|²(t − t*)² + d².
    let t_star = -(x2 * b.conj()).re / (bn * bn);
    let d = (x2 * b.conj()).im.abs() / bn;
    let delta = d / bn;
    let left = -t_star;
    let right = 1.0 - t_star;
    let signed = |s: f64| s.signum() * offset_power_integral(delta, s.abs(), q);
    bn.powi(q as i32) * (signed(right) - signed(left))
}

/// `|x₁|^q / (2(q+1))`, the lower bound for `I` when `|x₂| ≤ |x₁|`.
pub fn technical_lower_bound(x1: C64, q: u32) -> f64 {
    x1.norm().powi(q as i32) / (2.0 * (q as f64 + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberContractionReport {
    pub n_pairs: usize,
    pub skipped: usize,
    /// Largest `d(g₁, g₂)/d(f₁, f₂)`.
    pub max_ratio: f64,
    /// Pairs with ratio `≥ 1`.
    pub violations: usize,
    /// Pairs where the constant `C` is defined and the ratio exceeds it.
    pub c_bound_failures: usize,
    pub c_defined: usize,
    /// Smallest `I(x₁, x₂) / (|x₁|^q/(2(q+1)))` at the witness points.
    pub min_integral_margin: f64,
    pub m1: f64,
    pub n_a: f64,
    pub eps1: f64,
}

/// Solves `H̃₁(x, z) = φ(H̃₂(x, z))` for `x` by Newton (the pulled-back fiber at height `z`).
fn pull_back_affine(params: &SemiParabolicParams, nf: &NormalFormData, x0: C64, slope: C64, z: C64, start: C64) -> Option<(C64, Point2)> {
    let mut x = start;
    for _ in 0..40 {
        let (img, j) = nf.conjugated_jacobian(params, Point2::new(x, z))?;
        let g = img.x - (x0 + slope * img.y);
        let dg = j[0][0] - slope * j[1][0];
        let step = g / dg;
        x -= step;
        if !x.is_finite() {
            return None;
        }
        if step.norm() < 1e-14 * (1.0 + x.norm()) {
            let img = nf.conjugated_map(params, Point2::new(x, z))?;
            return Some((x, img));
        }
    }
    None
}

/// Pulls back pairs of affine vertical-like fibers `x = x_i + s_i y` from the repelling
/// sector through `H̃` and compares their distances, with the contraction constant
/// `C = (1 − ε₁I/(2M₁^q)) / (1 − 4(q+1)N_a I)` evaluated at the witness points.
pub fn fiber_contraction_estimates(
    params: &SemiParabolicParams,
    nf: &NormalFormData,
    spec: &SectorSpec,
    bundle: &EstimateBundle,
    n_pairs: usize,
    seed: u64,
) -> FiberContractionReport {
    let q = spec.q as u32;
    let eps = eps1();
    let lam = params.lambda.value;
    let rz = 0.5;
    let zs: Vec<C64> = (0..16).map(|k| C64::from_polar(rz, TAU * k as f64 / 16.0)).collect();
    let bases = minus_sector_samples(spec, 4 * n_pairs, seed, 0.3);
    let mut report = FiberContractionReport {
        n_pairs: 0,
        skipped: 0,
        max_ratio: 0.0,
        violations: 0,
        c_bound_failures: 0,
        c_defined: 0,
        min_integral_margin: f64::INFINITY,
        m1: bundle.m1,
        n_a: bundle.n_a,
        eps1: eps,
    };
    for (i, base) in bases.iter().enumerate() {
        if report.n_pairs >= n_pairs {
            break;
        }
        let (u, w) = halton2(i, seed + 11);
        let x1 = base.x;
        let x2 = x1 * C64::from_polar(0.6 + 0.35 * u, 0.2 * (w - 0.5));
        if !in_sector(x2, spec, SectorKind::Minus) {
            continue;
        }
        let fibers = [
            (x1, C64::new(0.25 * x1.norm().powi(2 * q as i32) / rz, 0.0)),
            (x2, -0.25 * x2.norm().powi(2 * q as i32) / rz * C64::new(0.0, 1.0)),
        ];
        let d_f = zs
            .iter()
            .map(|z| (fibers[0].0 + fibers[0].1 * z - fibers[1].0 - fibers[1].1 * z).norm())
            .fold(0.0, f64::max);
        let mut d_g: f64 = 0.0;
        let mut witness = None;
        let mut ok = true;
        for z in &zs {
            let mut sols = Vec::new();
            for (x0, s) in fibers {
                let start = x0 / lam;
                match pull_back_affine(params, nf, x0, s, *z, start) {
                    Some((x, img)) if in_sector(x, spec, SectorKind::Minus) => sols.push((x, img)),
                    _ => ok = false,
                }
            }
            if !ok {
                break;
            }
            let gap = (sols[0].0 - sols[1].0).norm();
            if gap > d_g {
                d_g = gap;
                witness = Some((sols[0].1.x, sols[1].1.x));
            }
        }
        let Some((w1, w2)) = witness.filter(|_| ok) else {
            report.skipped += 1;
            continue;
        };
        report.n_pairs += 1;
        let ratio = d_g / d_f;
        report.max_ratio = report.max_ratio.max(ratio);
        if ratio >= 1.0 {
            report.violations += 1;
        }
        let (big, small) = if w1.norm() >= w2.norm() { (w1, w2) } else { (w2, w1) };
        let integral = technical_integral(big, small, q);
        report.min_integral_margin = report.min_integral_margin.min(integral / technical_lower_bound(big, q));
        let denom = 1.0 - 4.0 * (q as f64 + 1.0) * bundle.n_a * integral;
        if denom > 0.0 {
            report.c_defined += 1;
            let c = (1.0 - eps * integral / (2.0 * bundle.m1.powi(q as i32))) / denom;
            if ratio >= c {
                report.c_bound_failures += 1;
            }
        }
    }
    report
}
