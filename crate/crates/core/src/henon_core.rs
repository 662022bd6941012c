//! Parameter curve, the Hénon map in its semi-parabolic normalization, and
//! the coarse split of ℂ² into a bidisk and two escape regions.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub type C64 = Complex64;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The parabolic eigenvalue `e^{2πi p/q}` with `p` reduced into `0..q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOfUnity {
    pub p: i64,
    pub q: u32,
    pub value: C64,
}

impl RootOfUnity {
    pub fn new(p: i64, q: u32) -> Result<Self> {
        if q == 0 {
            return Err(LabError::InvalidInput("root of unity needs q >= 1".into()));
        }
        let p = p.rem_euclid(q as i64);
        if gcd(p as u64, q as u64) != 1 {
            return Err(LabError::InvalidInput(format!("{p}/{q} is not in lowest terms")));
        }
        // Exact values where the cos/sin evaluation would leave 1e-16 dust.
        let value = match (p, q) {
            (0, 1) => C64::new(1.0, 0.0),
            (1, 2) => C64::new(-1.0, 0.0),
            (1, 4) => C64::new(0.0, 1.0),
            (3, 4) => C64::new(0.0, -1.0),
            _ => C64::from_polar(1.0, 2.0 * PI * p as f64 / q as f64),
        };
        Ok(Self { p, q, value })
    }

    pub fn one() -> Self {
        Self::new(0, 1).unwrap()
    }

    pub fn minus_one() -> Self {
        Self::new(1, 2).unwrap()
    }

    /// `λ^k` by exponent reduction mod q.
    pub fn pow(&self, k: i64) -> C64 {
        let e = (self.p * k).rem_euclid(self.q as i64);
        let g = gcd(e as u64, self.q as u64);
        Self::new(e / g as i64, self.q / g as u32)
            .expect("reduced fraction")
            .value
    }
}

impl fmt::Display for RootOfUnity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.p, self.q)
    }
}

impl FromStr for RootOfUnity {
    type Err = LabError;

    /// Accepts `p/q`, or the shorthands `1` and `-1`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "1" => return Ok(Self::one()),
            "-1" => return Ok(Self::minus_one()),
            _ => {}
        }
        let (p, q) = s
            .split_once('/')
            .ok_or_else(|| LabError::InvalidInput(format!("expected p/q, got {s:?}")))?;
        let p: i64 = p
            .trim()
            .parse()
            .map_err(|_| LabError::InvalidInput(format!("bad numerator in {s:?}")))?;
        let q: u32 = q
            .trim()
            .parse()
            .map_err(|_| LabError::InvalidInput(format!("bad denominator in {s:?}")))?;
        Self::new(p, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: C64,
    pub y: C64,
}

impl Point2 {
    pub fn new(x: C64, y: C64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Max-norm, the natural norm for bidisks.
    pub fn norm_max(&self) -> f64 {
        self.x.norm().max(self.y.norm())
    }

    pub fn scale_components(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

/// Row-major 2×2 complex matrix.
pub type Mat2 = [[C64; 2]; 2];

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mat_vec(m: &Mat2, v: (C64, C64)) -> (C64, C64) {
    (m[0][0] * v.0 + m[0][1] * v.1, m[1][0] * v.0 + m[1][1] * v.1)
}

/// Eigenvalues of a 2×2 matrix from trace and determinant, sorted by modulus.
pub fn eigenvalues2(m: &Mat2) -> (C64, C64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = (tr * tr - 4.0 * det).sqrt();
    // Pick the sign that avoids cancellation, then recover the small root from det.
    let big = if (tr + disc).norm() >= (tr - disc).norm() {
        (tr + disc) / 2.0
    } else {
        (tr - disc) / 2.0
    };
    if big.norm() == 0.0 {
        return (big, big);
    }
    let small = det / big;
    (small, big)
}

/// `c₀ = λ/2 − λ²/4`, the constant of the one-dimensional polynomial.
pub fn c0_of(lambda: C64) -> C64 {
    lambda / 2.0 - lambda * lambda / 4.0
}

/// `c(a) = (1−a²)s − s²` with `s = λ/2 − a²/(2λ)`.
pub fn curve_c(lambda: &RootOfUnity, a: C64) -> C64 {
    let l = lambda.value;
    let s = l / 2.0 - a * a / (2.0 * l);
    (1.0 - a * a) * s - s * s
}

/// `w(a)` with `c = c₀ + a²w`, obtained by expanding `curve_c` in powers of a².
pub fn curve_w(lambda: &RootOfUnity, a: C64) -> C64 {
    let l = lambda.value;
    (l - l * l - 1.0) / (2.0 * l) + a * a * (2.0 * l - 1.0) / (4.0 * l * l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemiParabolicParams {
    pub lambda: RootOfUnity,
    pub a: C64,
    pub c: C64,
    pub w: C64,
    pub mu: C64,
    /// `q_a = λ/2 − a²/(2λ)`, first coordinate of the semi-parabolic fixed point.
    pub q_scalar: C64,
    pub fixed_point: Point2,
}

impl SemiParabolicParams {
    pub fn new(lambda: RootOfUnity, a: C64) -> Self {
        let l = lambda.value;
        let q_scalar = l / 2.0 - a * a / (2.0 * l);
        Self {
            lambda,
            a,
            c: curve_c(&lambda, a),
            w: curve_w(&lambda, a),
            mu: -a * a / l,
            q_scalar,
            fixed_point: Point2::new(q_scalar, a * q_scalar),
        }
    }

    pub fn c0(&self) -> C64 {
        c0_of(self.lambda.value)
    }

    /// `p(x) = x² + c₀`.
    pub fn p(&self, x: C64) -> C64 {
        x * x + self.c0()
    }

    /// Residual of `(c, a)` against the defining equation of the curve.
    pub fn curve_residual(&self) -> f64 {
        (self.c - curve_c(&self.lambda, self.a)).norm()
    }

    pub fn forward(&self, pt: Point2) -> Point2 {
        henon_forward(self, pt)
    }

    pub fn inverse(&self, pt: Point2) -> Result<Point2> {
        henon_inverse(self, pt)
    }

    pub fn forward_n(&self, pt: Point2, n: usize) -> Point2 {
        (0..n).fold(pt, |p, _| self.forward(p))
    }

    /// `DH` at `pt`.
    pub fn jacobian(&self, pt: Point2) -> Mat2 {
        [[2.0 * pt.x, self.a], [self.a, C64::new(0.0, 0.0)]]
    }

    /// `DH⁻¹` at `pt` (the derivative of the inverse map evaluated at `pt`).
    pub fn inverse_jacobian(&self, pt: Point2) -> Result<Mat2> {
        if self.a == C64::new(0.0, 0.0) {
            return Err(LabError::DegenerateJacobian);
        }
        let ia = 1.0 / self.a;
        Ok([
            [C64::new(0.0, 0.0), ia],
            [ia, -2.0 * pt.y * ia * ia * ia],
        ])
    }

    /// `DH^k` along the forward orbit of `pt`, together with `H^k(pt)`.
    pub fn jacobian_n(&self, pt: Point2, k: usize) -> (Point2, Mat2) {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let mut m = [[one, zero], [zero, one]];
        let mut z = pt;
        for _ in 0..k {
            m = mat_mul(&self.jacobian(z), &m);
            z = self.forward(z);
        }
        (z, m)
    }
}

/// `H(x, y) = (p(x) + a²w + ay, ax)`.
pub fn henon_forward(params: &SemiParabolicParams, pt: Point2) -> Point2 {
    let a = params.a;
    Point2::new(params.p(pt.x) + a * a * params.w + a * pt.y, a * pt.x)
}

/// `H⁻¹(x, y) = (y/a, (x − p(y/a) − a²w)/a)`.
pub fn henon_inverse(params: &SemiParabolicParams, pt: Point2) -> Result<Point2> {
    let a = params.a;
    if a == C64::new(0.0, 0.0) {
        return Err(LabError::DegenerateJacobian);
    }
    let x = pt.y / a;
    Ok(Point2::new(x, (pt.x - params.p(x) - a * a * params.w) / a))
}

/// The eigenvalues `(λ, μ)` of `DH` at the semi-parabolic fixed point.
pub fn eigen_at_fixed_point(params: &SemiParabolicParams) -> (C64, C64) {
    (params.lambda.value, params.mu)
}

/// Largest root of `t² − (|a|+2)t − |c₀| − |a|²|w|`.
pub fn radius_bound(params: &SemiParabolicParams) -> f64 {
    let a = params.a.norm();
    let b = a + 2.0;
    let k = params.c0().norm() + a * a * params.w.norm();
    (b + (b * b + 4.0 * k).sqrt()) / 2.0
}

/// `max(radius_bound, 3) + 0.5`.
pub fn default_radius(params: &SemiParabolicParams) -> f64 {
    radius_bound(params).max(3.0) + 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    Bidisk,
    VPlus,
    VMinus,
}

pub fn classify_region(pt: Point2, r: f64) -> RegionTag {
    let (ax, ay) = (pt.x.norm(), pt.y.norm());
    if ax <= r && ay <= r {
        RegionTag::Bidisk
    } else if ax >= ay.max(r) {
        RegionTag::VPlus
    } else {
        RegionTag::VMinus
    }
}

/// Smallest `n ≤ max_iter` with `H^n(pt)` in the closed escape region `|x| ≥ max(|y|, r)`.
pub fn escape_time(params: &SemiParabolicParams, pt: Point2, r: f64, max_iter: usize) -> Option<usize> {
    let mut z = pt;
    for n in 0..=max_iter {
        if !z.is_finite() || z.x.norm() >= z.y.norm().max(r) {
            return Some(n);
        }
        if n < max_iter {
            z = params.forward(z);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn root_of_unity_reduces_and_validates() {
        let r = RootOfUnity::new(-1, 3).unwrap();
        assert_eq!(r.p, 2);
        assert!((r.value.powu(3) - 1.0).norm() < 1e-14);
        assert!(RootOfUnity::new(2, 4).is_err());
        assert!(RootOfUnity::new(1, 0).is_err());
        assert_eq!("-1".parse::<RootOfUnity>().unwrap(), RootOfUnity::minus_one());
        assert_eq!("1/3".parse::<RootOfUnity>().unwrap().q, 3);
        assert!((RootOfUnity::minus_one().pow(3) + 1.0).norm() < 1e-15);
    }

    #[test]
    fn curve_at_zero_jacobian() {
        assert!((curve_c(&RootOfUnity::one(), c(0.0, 0.0)) - 0.25).norm() < 1e-15);
        assert!((curve_c(&RootOfUnity::minus_one(), c(0.0, 0.0)) + 0.75).norm() < 1e-15);
    }

    #[test]
    fn w_expansion_matches_curve() {
        for l in [RootOfUnity::one(), RootOfUnity::minus_one(), RootOfUnity::new(1, 3).unwrap()] {
            for a in [c(0.1, 0.0), c(0.03, -0.2), c(0.3, 0.1)] {
                let sp = SemiParabolicParams::new(l, a);
                assert!((sp.c0() + a * a * sp.w - sp.c).norm() < 1e-15);
            }
        }
        // At λ = 1 the curve is c = (1 − a²)²/4, so w = −1/2 + a²/4.
        let sp = SemiParabolicParams::new(RootOfUnity::one(), c(0.2, 0.0));
        assert!((sp.w - c(-0.5 + 0.01, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn origin_maps_to_c() {
        let sp = SemiParabolicParams::new(RootOfUnity::one(), c(0.0, 0.0));
        let im = sp.forward(Point2::default());
        assert!((im.x - 0.25).norm() < 1e-15 && im.y.norm() == 0.0);
    }

    #[test]
    fn inverse_needs_nonzero_a() {
        let sp = SemiParabolicParams::new(RootOfUnity::one(), c(0.0, 0.0));
        assert_eq!(sp.inverse(Point2::default()), Err(LabError::DegenerateJacobian));
    }

    #[test]
    fn preimage_of_c_axis_point() {
        let sp = SemiParabolicParams::new(RootOfUnity::one(), c(0.1, 0.0));
        let target = Point2::new(sp.c, c(0.0, 0.0));
        let back = sp.inverse(target).unwrap();
        assert!((sp.forward(back) - target).norm_max() < 1e-12);
    }

    #[test]
    fn fixed_point_and_eigenvalues() {
        let sp = SemiParabolicParams::new(RootOfUnity::minus_one(), c(0.1, 0.0));
        let (l, m) = eigen_at_fixed_point(&sp);
        assert!((l + 1.0).norm() < 1e-15 && (m - 0.01).norm() < 1e-15);
        // Independent oracle: eigenvalues of DH at the fixed point from trace and determinant.
        let (small, big) = eigenvalues2(&sp.jacobian(sp.fixed_point));
        assert!((small - m).norm() < 1e-10 && (big - l).norm() < 1e-10);
        assert!((sp.forward(sp.fixed_point) - sp.fixed_point).norm_max() < 1e-14);
    }

    #[test]
    fn radius_bound_quadratic_roots() {
        let one = SemiParabolicParams::new(RootOfUnity::one(), c(0.0, 0.0));
        assert!((radius_bound(&one) - (1.0 + 5f64.sqrt() / 2.0)).abs() < 1e-14);
        assert!((radius_bound(&one) - 2.1180).abs() < 1e-4);
        // t² − 2t − 3/4 has largest root 1 + √7/2.
        let m1 = SemiParabolicParams::new(RootOfUnity::minus_one(), c(0.0, 0.0));
        assert!((radius_bound(&m1) - (1.0 + 7f64.sqrt() / 2.0)).abs() < 1e-14);
        assert!((default_radius(&m1) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn region_examples() {
        assert_eq!(classify_region(Point2::default(), 3.0), RegionTag::Bidisk);
        assert_eq!(classify_region(Point2::new(c(5.0, 0.0), c(1.0, 0.0)), 3.0), RegionTag::VPlus);
        assert_eq!(classify_region(Point2::new(c(1.0, 0.0), c(5.0, 0.0)), 3.0), RegionTag::VMinus);
        // Ties go to the bidisk first, then to V+.
        assert_eq!(classify_region(Point2::new(c(3.0, 0.0), c(3.0, 0.0)), 3.0), RegionTag::Bidisk);
        assert_eq!(classify_region(Point2::new(c(4.0, 0.0), c(0.0, 4.0)), 3.0), RegionTag::VPlus);
    }

    #[test]
    fn vplus_orbit_grows() {
        let sp = SemiParabolicParams::new(RootOfUnity::one(), c(0.05, 0.0));
        let r = default_radius(&sp);
        let mut z = Point2::new(c(r + 0.1, 0.3), c(1.0, -2.0));
        assert_eq!(classify_region(z, r), RegionTag::VPlus);
        for _ in 0..10 {
            let nz = sp.forward(z);
            if !nz.is_finite() {
                break;
            }
            assert!(nz.x.norm() > z.x.norm());
            z = nz;
        }
    }

    #[test]
    fn escape_time_examples() {
        let sp = SemiParabolicParams::new(RootOfUnity::one(), c(0.05, 0.0));
        let r = default_radius(&sp);
        assert_eq!(escape_time(&sp, sp.fixed_point, r, 500), None);
        assert_eq!(escape_time(&sp, Point2::new(c(r + 1.0, 0.0), c(0.0, 0.0)), r, 5), Some(0));
        // a = 0: the second coordinate dies and the count is the 1-D escape time.
        let sp0 = SemiParabolicParams::new(RootOfUnity::one(), c(0.0, 0.0));
        for x in [c(0.6, 0.1), c(-0.9, 0.7), c(0.2, 1.1), c(1.5, 0.0)] {
            let mut z = x;
            let mut n1 = None;
            for n in 0..=60 {
                if z.norm() >= r {
                    n1 = Some(n);
                    break;
                }
                z = z * z + 0.25;
            }
            assert_eq!(escape_time(&sp0, Point2::new(x, c(0.0, 0.0)), r, 60), n1);
        }
    }

    fn lambdas() -> impl Strategy<Value = RootOfUnity> {
        prop_oneof![
            Just(RootOfUnity::one()),
            Just(RootOfUnity::minus_one()),
            Just(RootOfUnity::new(1, 3).unwrap()),
            Just(RootOfUnity::new(2, 5).unwrap()),
        ]
    }

    fn small_a() -> impl Strategy<Value = C64> {
        (1e-3f64..0.5, 0.0f64..std::f64::consts::TAU).prop_map(|(r, t)| C64::from_polar(r, t))
    }

    proptest! {
        #[test]
        fn constant_jacobian(l in lambdas(), a in small_a(), x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let sp = SemiParabolicParams::new(l, a);
            let j = sp.jacobian(Point2::new(c(x, y), c(y, -x)));
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            prop_assert!((det + a * a).norm() < 1e-13);
        }

        #[test]
        fn curve_identities(l in lambdas(), a in small_a()) {
            let sp = SemiParabolicParams::new(l, a);
            prop_assert!(sp.curve_residual() <= 1e-12);
            prop_assert!((l.value * sp.mu + a * a).norm() <= 1e-12);
            prop_assert!((2.0 * sp.q_scalar - (l.value + sp.mu)).norm() <= 1e-12);
            prop_assert!((sp.forward(sp.fixed_point) - sp.fixed_point).norm_max() <= 1e-10);
            let (e1, e2) = eigen_at_fixed_point(&sp);
            prop_assert!((e1 * e2 + a * a).norm() < 1e-13);
        }

        #[test]
        fn round_trip(l in lambdas(), a in small_a(), x in -2.0f64..2.0, y in -2.0f64..2.0) {
            let sp = SemiParabolicParams::new(l, a);
            let pt = Point2::new(c(x, 0.3 * y), c(y, 0.2 * x));
            let back = sp.inverse(sp.forward(pt)).unwrap();
            let scale = pt.norm_max().max(1.0);
            prop_assert!((back - pt).norm_max() / scale <= 1e-10);
            let fwd = sp.forward(sp.inverse(pt).unwrap());
            prop_assert!((fwd - pt).norm_max() / scale <= 1e-10);
        }

        #[test]
        fn radius_monotone(l in lambdas(), r1 in 0.0f64..0.5, dr in 0.0f64..0.5, t in 0.0f64..std::f64::consts::TAU) {
            let a1 = SemiParabolicParams::new(l, C64::from_polar(r1, t));
            let a2 = SemiParabolicParams::new(l, C64::from_polar(r1 + dr, t));
            prop_assert!(radius_bound(&a2) >= radius_bound(&a1) - 1e-12);
        }
    }
}
