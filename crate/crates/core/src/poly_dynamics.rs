//! One-dimensional dynamics of `p(x) = x² + c₀`: Böttcher coordinate,
//! equipotentials, the Carathéodory loop and its landing-point identifications.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::henon_core::{c0_of, RootOfUnity, C64};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadPoly {
    pub c0: C64,
    /// `q₀ = λ/2` for the parabolic family; a fixed point of smallest multiplier otherwise.
    pub parabolic_fp: C64,
    pub lambda: Option<RootOfUnity>,
}

impl QuadPoly {
    pub fn parabolic(lambda: RootOfUnity) -> Self {
        Self {
            c0: c0_of(lambda.value),
            parabolic_fp: lambda.value / 2.0,
            lambda: Some(lambda),
        }
    }

    /// A polynomial outside the parabolic family (used for sanity checks such as `c₀ = 0`).
    pub fn from_c0(c0: C64) -> Self {
        let d = (1.0 - 4.0 * c0).sqrt();
        let (f1, f2) = ((1.0 + d) / 2.0, (1.0 - d) / 2.0);
        let fp = if f1.norm() <= f2.norm() { f1 } else { f2 };
        Self {
            c0,
            parabolic_fp: fp,
            lambda: None,
        }
    }

    pub fn eval(&self, z: C64) -> C64 {
        z * z + self.c0
    }

    pub fn deriv(&self, z: C64) -> C64 {
        2.0 * z
    }

    pub fn iterate(&self, z: C64, n: usize) -> C64 {
        (0..n).fold(z, |z, _| self.eval(z))
    }

    /// One root of `p(z) = v`; the other is its negative.
    pub fn preimage(&self, v: C64) -> C64 {
        (v - self.c0).sqrt()
    }

    /// Root of `p(z) = v` closest to `reference`.
    pub fn preimage_near(&self, v: C64, reference: C64) -> Result<C64> {
        let d = v - self.c0;
        if d.norm() < 1e-12 {
            return Err(LabError::BranchAmbiguity { distance: d.norm() });
        }
        let r = d.sqrt();
        Ok(if (r - reference).norm() <= (r + reference).norm() {
            r
        } else {
            -r
        })
    }

    /// Radius beyond which the telescoping Böttcher product uses principal branches safely.
    pub fn direct_radius(&self) -> f64 {
        2.0 * self.c0.norm().max(1.0)
    }

    /// Escape-rate Green's function `lim 2^{-k} log|p^k(z)|`.
    pub fn green(&self, z: C64) -> f64 {
        let mut z = z;
        let mut scale = 1.0;
        for _ in 0..200 {
            if z.norm() > 1e50 {
                return scale * z.norm().ln();
            }
            z = self.eval(z);
            scale *= 0.5;
        }
        0.0
    }
}

/// A rational external angle `num/den` in `[0, 1)`, kept in lowest terms so doubling is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExternalAngle {
    pub num: u64,
    pub den: u64,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ExternalAngle {
    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "angle denominator must be positive");
        let num = num % den;
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn dyadic(j: u64, level: u32) -> Self {
        Self::new(j, 1u64 << level)
    }

    pub fn t(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn double(&self) -> Self {
        Self::new((2 * self.num as u128 % self.den as u128) as u64, self.den)
    }

    pub fn add_half(&self) -> Self {
        if self.den.is_multiple_of(2) {
            Self::new(self.num + self.den / 2, self.den)
        } else {
            Self::new(2 * self.num + self.den, 2 * self.den)
        }
    }

    /// `(preperiod, period)` of the angle under doubling.
    pub fn orbit_type(&self) -> (usize, usize) {
        let mut seen = BTreeMap::new();
        let mut s = *self;
        let mut i = 0;
        loop {
            if let Some(&j) = seen.get(&s) {
                return (j, i - j);
            }
            seen.insert(s, i);
            s = s.double();
            i += 1;
        }
    }

    pub fn model_point(&self, radius: f64) -> C64 {
        C64::from_polar(radius, TAU * self.t())
    }
}

impl Ord for ExternalAngle {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.num as u128 * other.den as u128).cmp(&(other.num as u128 * self.den as u128))
    }
}

impl PartialOrd for ExternalAngle {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ExternalAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// All angles reachable from `angles` by doubling.
pub fn doubling_closure(angles: impl IntoIterator<Item = ExternalAngle>) -> BTreeSet<ExternalAngle> {
    let mut out = BTreeSet::new();
    for t in angles {
        let mut s = t;
        while out.insert(s) {
            s = s.double();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquipotentialPoint {
    pub level: i32,
    pub angle: ExternalAngle,
    pub z: C64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BottcherMap {
    pub poly: QuadPoly,
    pub series_depth: usize,
    pub margin: f64,
}

impl BottcherMap {
    pub fn new(poly: QuadPoly) -> Self {
        Self {
            poly,
            series_depth: 64,
            margin: 0.05,
        }
    }

    /// The conjugacy `φ` to `z ↦ z²` and its derivative, valid for `|z| ≥ direct_radius`.
    pub fn phi(&self, z: C64) -> (C64, C64) {
        let c0 = self.poly.c0;
        let mut zk = z;
        let mut dzk = C64::new(1.0, 0.0);
        let mut log_sum = C64::new(0.0, 0.0);
        let mut dlog = 1.0 / z;
        let mut weight = 0.5;
        for _ in 0..self.series_depth {
            let u = c0 / (zk * zk);
            if u.norm() * weight < 1e-18 {
                break;
            }
            log_sum += weight * (1.0 + u).ln();
            dlog += weight * (-2.0 * c0 * dzk / (zk * zk * zk)) / (1.0 + u);
            dzk = 2.0 * zk * dzk;
            zk = zk * zk + c0;
            weight *= 0.5;
            if !zk.is_finite() {
                break;
            }
        }
        let phi = z * log_sum.exp();
        (phi, phi * dlog)
    }

    fn invert_direct(&self, w: C64) -> Result<C64> {
        let mut z = w - self.poly.c0 / (2.0 * w);
        for it in 0..200 {
            let (f, df) = self.phi(z);
            let res = f - w;
            if res.norm() <= 1e-15 * w.norm() {
                return Ok(z);
            }
            let mut step = res / df;
            // Damping keeps the iterate outside the region where the product is unreliable.
            while (z - step).norm() < 0.5 * self.poly.direct_radius() && step.norm() > 1e-300 {
                step *= 0.5;
            }
            z -= step;
            if it > 5 && step.norm() < 1e-16 * z.norm() {
                return Ok(z);
            }
        }
        let res = (self.phi(z).0 - w).norm();
        if res < 1e-12 * w.norm() {
            Ok(z)
        } else {
            Err(LabError::NoConvergence {
                what: "Böttcher inversion".into(),
                iterations: 200,
                residual: res,
            })
        }
    }

    /// `Φ_p(w)` for `|w| > 1 + margin`.
    pub fn inverse(&self, w: C64) -> Result<C64> {
        if w.norm() <= 1.0 + self.margin {
            return Err(LabError::TooCloseToUnitCircle {
                modulus: w.norm(),
                margin: self.margin,
            });
        }
        let direct = self.poly.direct_radius() + 1.0;
        let mut chain = vec![w];
        while chain.last().unwrap().norm() < direct {
            let l = *chain.last().unwrap();
            chain.push(l * l);
        }
        let mut z = self.invert_direct(*chain.last().unwrap())?;
        for wk in chain.iter().rev().skip(1) {
            let guess = *wk - self.poly.c0 / (2.0 * wk);
            z = self.poly.preimage_near(z, guess)?;
        }
        Ok(z)
    }
}

pub fn bottcher_inverse(map: &BottcherMap, z: C64) -> Result<C64> {
    map.inverse(z)
}

/// Deepest level whose equipotential is evaluated directly through the Böttcher map.
fn direct_levels(r_outer: f64) -> i32 {
    let mut n = -1;
    while r_outer.powf(0.5f64.powi(n + 1)) >= 2.0 {
        n += 1;
    }
    n.max(-1)
}

/// Level-by-level equipotentials `γ_n(t)` over a doubling-closed angle set.
#[derive(Debug, Clone)]
pub struct EquipotentialLadder {
    pub poly: QuadPoly,
    pub r_outer: f64,
    pub angles: Vec<ExternalAngle>,
    index: BTreeMap<ExternalAngle, usize>,
    doubled: Vec<usize>,
    pub level: i32,
    pub current: Vec<C64>,
    pub previous: Option<Vec<C64>>,
}

impl EquipotentialLadder {
    pub fn new(poly: QuadPoly, r_outer: f64, angles: impl IntoIterator<Item = ExternalAngle>) -> Result<Self> {
        if r_outer <= 2.0 {
            return Err(LabError::InvalidInput(format!("equipotential radius {r_outer} must exceed 2")));
        }
        let angles: Vec<ExternalAngle> = doubling_closure(angles).into_iter().collect();
        let index: BTreeMap<_, _> = angles.iter().enumerate().map(|(i, t)| (*t, i)).collect();
        let doubled = angles.iter().map(|t| index[&t.double()]).collect();
        let map = BottcherMap::new(poly);
        let current = angles
            .iter()
            .map(|t| map.inverse(t.model_point(r_outer * r_outer)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            poly,
            r_outer,
            angles,
            index,
            doubled,
            level: -1,
            current,
            previous: None,
        })
    }

    pub fn index_of(&self, t: &ExternalAngle) -> Option<usize> {
        self.index.get(t).copied()
    }

    pub fn doubled_index(&self, i: usize) -> usize {
        self.doubled[i]
    }

    pub fn value(&self, t: &ExternalAngle) -> Option<C64> {
        self.index_of(t).map(|i| self.current[i])
    }

    /// Moves to level `n + 1`: direct Böttcher evaluation while the model radius is at
    /// least 2, then the preimage of `γ_n(2t)` nearest to `γ_n(t)` (continuity along the ray).
    pub fn advance(&mut self) -> Result<()> {
        let next = self.level + 1;
        let new = if next <= direct_levels(self.r_outer) {
            let map = BottcherMap::new(self.poly);
            let radius = self.r_outer.powf(0.5f64.powi(next));
            self.angles
                .iter()
                .map(|t| map.inverse(t.model_point(radius)))
                .collect::<Result<Vec<_>>>()?
        } else {
            (0..self.angles.len())
                .map(|i| self.poly.preimage_near(self.current[self.doubled[i]], self.current[i]))
                .collect::<Result<Vec<_>>>()?
        };
        self.previous = Some(std::mem::replace(&mut self.current, new));
        self.level = next;
        Ok(())
    }

    pub fn advance_to(&mut self, level: i32) -> Result<()> {
        while self.level < level {
            self.advance()?;
        }
        Ok(())
    }

    /// Largest `|p(γ_n(t)) − γ_{n−1}(2t)|` over the angle set.
    pub fn semiconjugacy_residual(&self) -> f64 {
        let Some(prev) = &self.previous else { return 0.0 };
        (0..self.angles.len())
            .map(|i| (self.poly.eval(self.current[i]) - prev[self.doubled[i]]).norm())
            .fold(0.0, f64::max)
    }
}

/// `γ_n(t)` for a single angle (the ladder runs over the doubling orbit of `t`).
pub fn equipotential(poly: &QuadPoly, r_outer: f64, n: i32, t: ExternalAngle) -> Result<C64> {
    if n < -1 {
        return Err(LabError::InvalidInput("equipotential level must be >= -1".into()));
    }
    let mut ladder = EquipotentialLadder::new(*poly, r_outer, [t])?;
    ladder.advance_to(n)?;
    Ok(ladder.value(&t).unwrap())
}

pub const DEFAULT_R_OUTER: f64 = 16.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaratheodoryTable {
    pub depth: usize,
    pub samples: BTreeMap<ExternalAngle, C64>,
    /// `|γ_depth(t) − γ_{depth−1}(t)|`, the last landing increment.
    pub increments: BTreeMap<ExternalAngle, f64>,
    /// Semiconjugacy residual `max |p(γ(t)) − γ(2t)|` over the table.
    pub tol: f64,
    /// True once rational angles have been snapped to their exact landing points.
    pub refined: bool,
}

impl CaratheodoryTable {
    pub fn build(
        poly: &QuadPoly,
        angles: impl IntoIterator<Item = ExternalAngle>,
        depth: usize,
        r_outer: f64,
    ) -> Result<Self> {
        if depth < 1 {
            return Err(LabError::InvalidInput("depth must be >= 1".into()));
        }
        let mut ladder = EquipotentialLadder::new(*poly, r_outer, angles)?;
        ladder.advance_to(depth as i32)?;
        let prev = ladder.previous.as_ref().unwrap();
        let samples = ladder.angles.iter().zip(&ladder.current).map(|(t, z)| (*t, *z)).collect();
        let increments = ladder
            .angles
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, (ladder.current[i] - prev[i]).norm()))
            .collect();
        let mut table = Self {
            depth,
            samples,
            increments,
            tol: 0.0,
            refined: false,
        };
        table.tol = table.semiconjugacy_residual(poly);
        Ok(table)
    }

    /// Table over the dyadic grid `j/2^k`.
    pub fn dyadic(poly: &QuadPoly, level: u32, depth: usize, r_outer: f64) -> Result<Self> {
        Self::build(poly, (0..1u64 << level).map(|j| ExternalAngle::dyadic(j, level)), depth, r_outer)
    }

    pub fn get(&self, t: &ExternalAngle) -> Option<C64> {
        self.samples.get(t).copied()
    }

    pub fn semiconjugacy_residual(&self, poly: &QuadPoly) -> f64 {
        self.samples
            .iter()
            .map(|(t, z)| (poly.eval(*z) - self.samples[&t.double()]).norm())
            .fold(0.0, f64::max)
    }

    /// Replaces each `γ_depth(t)` by the landing point it approximates.
    ///
    /// Periodic angles are refined by a multiplicity-robust Newton solve of
    /// `p^k(z) = z` started at the tabulated value; preperiodic angles are then
    /// pulled back along the branch nearest their tabulated value. Angles whose
    /// solve fails keep the depth value and are counted in the return.
    pub fn refined(&self, poly: &QuadPoly) -> (Self, usize) {
        let mut out = self.clone();
        let mut failures = 0;
        let mut exact: BTreeMap<ExternalAngle, C64> = BTreeMap::new();
        for (t, z) in &self.samples {
            let (pre, period) = t.orbit_type();
            if pre != 0 {
                continue;
            }
            match periodic_landing(poly, *z, period) {
                Some(root) if (root - z).norm() < 0.25 => {
                    exact.insert(*t, root);
                }
                _ => failures += 1,
            }
        }
        // Preperiodic angles, nearest to the cycle first.
        let mut pending: Vec<(usize, ExternalAngle)> = self
            .samples
            .keys()
            .map(|t| (t.orbit_type().0, *t))
            .filter(|(pre, _)| *pre > 0)
            .collect();
        pending.sort();
        for (_, t) in pending {
            let Some(image) = exact.get(&t.double()).copied() else {
                failures += 1;
                continue;
            };
            match poly.preimage_near(image, self.samples[&t]) {
                Ok(z) => {
                    exact.insert(t, z);
                }
                Err(_) => failures += 1,
            }
        }
        for (t, z) in exact {
            out.samples.insert(t, z);
        }
        out.tol = out.semiconjugacy_residual(poly);
        out.refined = true;
        (out, failures)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "angle_num,angle_den,re,im")?;
        for (t, z) in &self.samples {
            writeln!(out, "{},{},{:.17e},{:.17e}", t.num, t.den, z.re, z.im)?;
        }
        Ok(())
    }
}

/// Root of `p^k(z) = z` near `start`, by Newton on `F/F'` so that multiple roots
/// (parabolic cycles) still converge. Snaps to the parabolic point when within 1e-4, the accuracy floor of a triple root.
pub fn periodic_landing(poly: &QuadPoly, start: C64, k: usize) -> Option<C64> {
    let mut z = start;
    for _ in 0..200 {
        let (mut f, mut d1, mut d2) = (z, C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        for _ in 0..k {
            d2 = 2.0 * (d1 * d1 + f * d2);
            d1 = 2.0 * f * d1;
            f = poly.eval(f);
        }
        let fz = f - z;
        let dfz = d1 - 1.0;
        if fz.norm() < 1e-300 {
            break;
        }
        if dfz.norm() < 1e-300 {
            break;
        }
        let u = fz / dfz;
        let du = 1.0 - fz * d2 / (dfz * dfz);
        if du.norm() < 1e-300 {
            break;
        }
        let step = u / du;
        z -= step;
        if !z.is_finite() {
            return None;
        }
        if step.norm() < 1e-15 * (1.0 + z.norm()) {
            break;
        }
    }
    if poly.lambda.is_some() && (z - poly.parabolic_fp).norm() < 1e-4 {
        return Some(poly.parabolic_fp);
    }
    let resid = (poly.iterate(z, k) - z).norm();
    (resid < 1e-8).then_some(z)
}

/// `γ_depth(t)` with the reference outer radius; callers monitor the reported increment.
pub fn caratheodory(poly: &QuadPoly, t: ExternalAngle, depth: usize) -> Result<(C64, f64)> {
    let table = CaratheodoryTable::build(poly, [t], depth, DEFAULT_R_OUTER)?;
    Ok((table.samples[&t], table.increments[&t]))
}

pub fn lamination_equiv(table: &CaratheodoryTable, t1: ExternalAngle, t2: ExternalAngle, tol: f64) -> Result<bool> {
    let lookup = |t: ExternalAngle| {
        table
            .get(&t)
            .ok_or_else(|| LabError::InvalidInput(format!("angle {t} is not tabulated")))
    };
    Ok((lookup(t1)? - lookup(t2)?).norm() <= tol)
}

/// A repelling periodic point to start inverse iteration from.
fn repelling_seed(poly: &QuadPoly) -> C64 {
    let d = (1.0 - 4.0 * poly.c0).sqrt();
    let fixed = [(1.0 + d) / 2.0, (1.0 - d) / 2.0];
    if let Some(z) = fixed.iter().copied().find(|z| (2.0 * z).norm() > 1.0 + 1e-6) {
        return z;
    }
    // Period-2 cycle: z² + z + c₀ + 1 = 0, multiplier 4(c₀ + 1).
    (-1.0 + (-3.0 - 4.0 * poly.c0).sqrt()) / 2.0
}

/// Points of `J_p` by random-branch inverse iteration, deterministic in `seed`.
pub fn julia_sample(poly: &QuadPoly, n_points: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = repelling_seed(poly);
    let mut out = Vec::with_capacity(n_points);
    while out.len() < n_points {
        let r = poly.preimage(z);
        z = if rng.gen::<bool>() { r } else { -r };
        out.push(z);
    }
    out
}

fn segments_cross(p1: C64, p2: C64, q1: C64, q2: C64) -> bool {
    let cross = |o: C64, a: C64, b: C64| (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re);
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// True if the closed polyline through `pts` has no crossing between non-adjacent edges.
pub fn polyline_is_simple(pts: &[C64]) -> bool {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a, b, pts[j], pts[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cauliflower() -> QuadPoly {
        QuadPoly::parabolic(RootOfUnity::one())
    }

    fn basilica_like() -> QuadPoly {
        QuadPoly::parabolic(RootOfUnity::minus_one())
    }

    #[test]
    fn parabolic_point_data() {
        for l in [RootOfUnity::one(), RootOfUnity::minus_one(), RootOfUnity::new(1, 3).unwrap()] {
            let p = QuadPoly::parabolic(l);
            assert!((p.eval(p.parabolic_fp) - p.parabolic_fp).norm() < 1e-12);
            assert!((p.deriv(p.parabolic_fp) - l.value).norm() < 1e-12);
        }
    }

    #[test]
    fn angles_double_exactly() {
        let t = ExternalAngle::dyadic(3, 3);
        assert_eq!(t.double(), ExternalAngle::new(3, 4));
        assert_eq!(ExternalAngle::new(1, 3).double(), ExternalAngle::new(2, 3));
        assert_eq!(ExternalAngle::new(1, 3).orbit_type(), (0, 2));
        assert_eq!(ExternalAngle::new(1, 5).orbit_type(), (0, 4));
        assert_eq!(ExternalAngle::new(1, 6).orbit_type(), (1, 2));
        assert_eq!(ExternalAngle::dyadic(5, 4).orbit_type(), (4, 1));
        assert_eq!(ExternalAngle::new(1, 4).add_half(), ExternalAngle::new(3, 4));
        assert_eq!(ExternalAngle::new(1, 3).add_half(), ExternalAngle::new(5, 6));
        assert!(ExternalAngle::new(1, 3) < ExternalAngle::new(2, 5));
    }

    #[test]
    fn bottcher_identity_for_z_squared() {
        let map = BottcherMap::new(QuadPoly::from_c0(C64::new(0.0, 0.0)));
        for w in [C64::new(1.3, 0.2), C64::new(-3.0, 2.0), C64::new(0.0, 1.1)] {
            assert_eq!(map.inverse(w).unwrap(), w);
        }
    }

    #[test]
    fn bottcher_rejects_unit_circle() {
        let map = BottcherMap::new(cauliflower());
        assert!(matches!(
            map.inverse(C64::new(1.04, 0.0)),
            Err(LabError::TooCloseToUnitCircle { .. })
        ));
    }

    #[test]
    fn bottcher_asymptotics() {
        // Φ(z) = z − c₀/(2z) + O(z⁻³), so |Φ(z) − z| ≤ |c₀|/|z| with room to spare at |z| = 10.
        let poly = cauliflower();
        let map = BottcherMap::new(poly);
        for k in 0..32 {
            let w = C64::from_polar(10.0, TAU * k as f64 / 32.0);
            let z = map.inverse(w).unwrap();
            assert!((z - w).norm() <= poly.c0.norm() / 10.0 * 1.01);
            assert!((z - w + poly.c0 / (2.0 * w)).norm() < 1e-4);
        }
    }

    #[test]
    fn bottcher_is_continuous_near_the_julia_set() {
        for poly in [cauliflower(), basilica_like()] {
            let map = BottcherMap::new(poly);
            let pts: Vec<C64> = (0..4096)
                .map(|k| map.inverse(C64::from_polar(1.2, TAU * k as f64 / 4096.0)).unwrap())
                .collect();
            let jump = (0..pts.len()).map(|k| (pts[(k + 1) % pts.len()] - pts[k]).norm()).fold(0.0, f64::max);
            assert!(jump < 0.05, "jump {jump}");
        }
    }

    #[test]
    fn green_function_levels() {
        let poly = basilica_like();
        let r = DEFAULT_R_OUTER;
        let mut ladder = EquipotentialLadder::new(poly, r, (0..256).map(|j| ExternalAngle::dyadic(j, 8))).unwrap();
        for n in 0..=8 {
            ladder.advance_to(n).unwrap();
            let expect = r.ln() / 2f64.powi(n);
            for z in &ladder.current {
                assert!((poly.green(*z) - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ladder_semiconjugacy_and_nesting() {
        for poly in [cauliflower(), basilica_like()] {
            let mut ladder = EquipotentialLadder::new(poly, 16.0, (0..256).map(|j| ExternalAngle::dyadic(j, 8))).unwrap();
            let mut max_prev = f64::INFINITY;
            for _ in 0..=10 {
                ladder.advance().unwrap();
                assert!(ladder.semiconjugacy_residual() <= 1e-10);
                let m = ladder.current.iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(m < max_prev);
                max_prev = m;
            }
        }
    }

    #[test]
    fn level_zero_curve_is_simple() {
        let poly = cauliflower();
        let mut ladder = EquipotentialLadder::new(poly, 16.0, (0..1024).map(|j| ExternalAngle::dyadic(j, 10))).unwrap();
        ladder.advance_to(0).unwrap();
        assert!(polyline_is_simple(&ladder.current));
    }

    #[test]
    fn single_angle_matches_ladder() {
        let poly = basilica_like();
        let t = ExternalAngle::new(1, 5);
        let mut ladder = EquipotentialLadder::new(poly, 16.0, [t]).unwrap();
        ladder.advance_to(7).unwrap();
        assert_eq!(equipotential(&poly, 16.0, 7, t).unwrap(), ladder.value(&t).unwrap());
        let z1 = equipotential(&poly, 16.0, 1, ExternalAngle::new(1, 10)).unwrap();
        let z0 = equipotential(&poly, 16.0, 0, t).unwrap();
        assert!((poly.eval(z1) - z0).norm() < 1e-10);
    }

    #[test]
    fn caratheodory_parabolic_landings() {
        // Frozen from the pullback recursion at the reference radius 16: the t = 0 ray of
        // x² + 1/4 creeps into 1/2 at a polynomial rate.
        let (z, inc) = caratheodory(&cauliflower(), ExternalAngle::new(0, 1), 60).unwrap();
        assert!((z - 0.5).norm() < 5e-2, "{z}");
        assert!(inc > 0.0 && inc < 1e-3);
        let table = CaratheodoryTable::build(&cauliflower(), [ExternalAngle::new(1, 7)], 60, 16.0).unwrap();
        assert!(table.tol <= 1e-8);
    }

    #[test]
    fn refinement_finds_exact_landings() {
        let poly = basilica_like();
        let angles = [1, 2].map(|j| ExternalAngle::new(j, 3)).into_iter().chain([ExternalAngle::new(1, 5)]);
        let table = CaratheodoryTable::build(&poly, angles, 60, 16.0).unwrap();
        let (refined, failures) = table.refined(&poly);
        assert_eq!(failures, 0);
        assert_eq!(refined.get(&ExternalAngle::new(1, 3)).unwrap(), C64::new(-0.5, 0.0));
        assert_eq!(refined.get(&ExternalAngle::new(2, 3)).unwrap(), C64::new(-0.5, 0.0));
        assert!(lamination_equiv(&refined, ExternalAngle::new(1, 3), ExternalAngle::new(2, 3), 5e-2).unwrap());
        assert!(!lamination_equiv(&refined, ExternalAngle::new(1, 3), ExternalAngle::new(1, 5), 5e-2).unwrap());
        assert!(lamination_equiv(&table, ExternalAngle::new(1, 3), ExternalAngle::new(1, 3), 0.0).unwrap());
        // γ(1/5) is a repelling period-4 point: p⁴ fixes it with |(p⁴)'| > 1.
        let z = refined.get(&ExternalAngle::new(1, 5)).unwrap();
        assert!((poly.iterate(z, 4) - z).norm() < 1e-10);
        assert!(refined.semiconjugacy_residual(&poly) < 1e-10);
    }

    #[test]
    fn julia_samples_on_unit_circle_for_z_squared() {
        let pts = julia_sample(&QuadPoly::from_c0(C64::new(0.0, 0.0)), 500, 7);
        assert!(pts.iter().all(|z| (z.norm() - 1.0).abs() < 1e-8));
        assert_eq!(pts, julia_sample(&QuadPoly::from_c0(C64::new(0.0, 0.0)), 500, 7));
    }

    #[test]
    fn julia_samples_are_bounded_and_near_the_loop() {
        let poly = cauliflower();
        let pts = julia_sample(&poly, 400, 11);
        // Forward orbits of J points shadow the inverse chain only until rounding has been
        // doubled ~50 times, so boundedness is checked over 40 iterates plus the chain itself.
        for z in &pts {
            let mut w = *z;
            for _ in 0..40 {
                w = poly.eval(w);
                assert!(w.norm() <= 4.0);
            }
        }
        for k in 1..pts.len() {
            assert!((poly.eval(pts[k]) - pts[k - 1]).norm() < 1e-14);
        }
        let (table, _) = CaratheodoryTable::dyadic(&poly, 12, 60, 16.0).unwrap().refined(&poly);
        let loop_pts: Vec<C64> = table.samples.values().copied().collect();
        let far = pts
            .iter()
            .filter(|z| loop_pts.iter().map(|g| (*g - **z).norm()).fold(f64::INFINITY, f64::min) > 1e-2)
            .count();
        assert_eq!(far, 0, "{far} of {} samples far from the loop", pts.len());
    }

    #[test]
    fn csv_header_and_rows() {
        let table = CaratheodoryTable::build(&cauliflower(), [ExternalAngle::new(1, 2)], 4, 16.0).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("angle_num,angle_den,re,im"));
        assert_eq!(lines.count(), 2);
    }

    proptest! {
        #[test]
        fn bottcher_functional_equation(r in 1.2f64..4.0, th in 0.0f64..TAU) {
            for poly in [cauliflower(), basilica_like()] {
                let map = BottcherMap::new(poly);
                let w = C64::from_polar(r, th);
                let lhs = map.inverse(w * w).unwrap();
                let rhs = poly.eval(map.inverse(w).unwrap());
                prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
            }
        }

        #[test]
        fn doubling_closure_is_closed(num in 0u64..1000, den in 1u64..200) {
            let set = doubling_closure([ExternalAngle::new(num, den)]);
            for t in &set {
                prop_assert!(set.contains(&t.double()));
            }
        }
    }
}
