//! Truncated power series in one variable and in `(x, y)`, stored as series in `x`
//! whose coefficients are series in `y`.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::henon_core::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSeries1 {
    pub coeffs: Vec<C64>,
    pub order: usize,
}

impl TruncatedSeries1 {
    pub fn new(mut coeffs: Vec<C64>, order: usize) -> Self {
        coeffs.resize(order + 1, ZERO);
        Self { coeffs, order }
    }

    pub fn zero(order: usize) -> Self {
        Self::new(vec![], order)
    }

    pub fn constant(c: C64, order: usize) -> Self {
        Self::new(vec![c], order)
    }

    pub fn var(order: usize) -> Self {
        let mut s = Self::zero(order);
        if order >= 1 {
            s.coeffs[1] = ONE;
        }
        s
    }

    pub fn eval(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(ZERO, |acc, c| acc * z + c)
    }

    pub fn derivative(&self) -> Self {
        let c = (1..=self.order).map(|k| self.coeffs[k] * k as f64).collect();
        Self::new(c, self.order)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * s).collect(), self.order)
    }

    /// `s(μ Y)`: coefficient `k` multiplied by `μ^k`.
    pub fn dilate(&self, mu: C64) -> Self {
        let mut p = ONE;
        let mut c = Vec::with_capacity(self.order + 1);
        for k in 0..=self.order {
            c.push(self.coeffs[k] * p);
            p *= mu;
        }
        Self::new(c, self.order)
    }

    pub fn truncate(&self, order: usize) -> Self {
        Self::new(self.coeffs.iter().take(order + 1).copied().collect(), order)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == ZERO)
    }

    /// `1/s`; needs a nonzero constant term.
    pub fn recip(&self) -> Self {
        let c0 = self.coeffs[0];
        assert!(c0 != ZERO, "reciprocal of a series without constant term");
        let mut out = vec![ZERO; self.order + 1];
        out[0] = 1.0 / c0;
        for k in 1..=self.order {
            let s: C64 = (1..=k).map(|i| self.coeffs[i] * out[k - i]).sum();
            out[k] = -s / c0;
        }
        Self::new(out, self.order)
    }

    /// `self ∘ inner`, with `inner` vanishing at 0.
    pub fn compose(&self, inner: &Self) -> Self {
        debug_assert!(inner.coeffs[0].norm() < 1e-300, "inner series must vanish at 0");
        let order = self.order.min(inner.order);
        let inner = inner.truncate(order);
        let mut acc = Self::zero(order);
        for c in self.coeffs.iter().take(order + 1).rev() {
            acc = &acc * &inner;
            acc.coeffs[0] += c;
        }
        acc
    }

    /// Compositional inverse of a series `c₁z + c₂z² + …` with `c₁ ≠ 0`.
    pub fn reversion(&self) -> Self {
        assert!(self.coeffs[0].norm() < 1e-300 && self.order >= 1 && self.coeffs[1] != ZERO);
        let c1 = self.coeffs[1];
        let z = Self::var(self.order);
        let mut h = z.scale(1.0 / c1);
        for _ in 0..self.order {
            let err = &self.compose(&h) - &z;
            h = &h - &err.scale(1.0 / c1);
        }
        h
    }

    /// `self(inner)` for a bivariate `inner` vanishing at the origin.
    pub fn compose_bi(&self, inner: &BiSeries) -> BiSeries {
        let mut acc = BiSeries::zero(inner.x_order, inner.y_order);
        for c in self.coeffs.iter().rev() {
            acc = &acc * inner;
            acc.x_coeffs[0].coeffs[0] += c;
        }
        acc
    }
}

impl<'a> Add<&'a TruncatedSeries1> for &'a TruncatedSeries1 {
    type Output = TruncatedSeries1;
    fn add(self, o: &TruncatedSeries1) -> TruncatedSeries1 {
        let order = self.order.min(o.order);
        TruncatedSeries1::new((0..=order).map(|k| self.coeffs[k] + o.coeffs[k]).collect(), order)
    }
}

impl<'a> Sub<&'a TruncatedSeries1> for &'a TruncatedSeries1 {
    type Output = TruncatedSeries1;
    fn sub(self, o: &TruncatedSeries1) -> TruncatedSeries1 {
        let order = self.order.min(o.order);
        TruncatedSeries1::new((0..=order).map(|k| self.coeffs[k] - o.coeffs[k]).collect(), order)
    }
}

impl<'a> Mul<&'a TruncatedSeries1> for &'a TruncatedSeries1 {
    type Output = TruncatedSeries1;
    fn mul(self, o: &TruncatedSeries1) -> TruncatedSeries1 {
        let order = self.order.min(o.order);
        let mut out = vec![ZERO; order + 1];
        for (i, a) in self.coeffs.iter().take(order + 1).enumerate() {
            if *a == ZERO {
                continue;
            }
            for (j, b) in o.coeffs.iter().take(order + 1 - i).enumerate() {
                out[i + j] += a * b;
            }
        }
        TruncatedSeries1::new(out, order)
    }
}

/// `Σ a_k(y) x^k` truncated at `x^{x_order}` and `y^{y_order}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiSeries {
    pub x_coeffs: Vec<TruncatedSeries1>,
    pub x_order: usize,
    pub y_order: usize,
}

impl BiSeries {
    pub fn zero(x_order: usize, y_order: usize) -> Self {
        Self {
            x_coeffs: vec![TruncatedSeries1::zero(y_order); x_order + 1],
            x_order,
            y_order,
        }
    }

    pub fn constant(c: C64, x_order: usize, y_order: usize) -> Self {
        let mut s = Self::zero(x_order, y_order);
        s.x_coeffs[0].coeffs[0] = c;
        s
    }

    pub fn x_var(x_order: usize, y_order: usize) -> Self {
        let mut s = Self::zero(x_order, y_order);
        if x_order >= 1 {
            s.x_coeffs[1].coeffs[0] = ONE;
        }
        s
    }

    pub fn y_var(x_order: usize, y_order: usize) -> Self {
        let mut s = Self::zero(x_order, y_order);
        if y_order >= 1 {
            s.x_coeffs[0].coeffs[1] = ONE;
        }
        s
    }

    /// A series in `y` alone, placed at `x⁰`.
    pub fn from_y(s: &TruncatedSeries1, x_order: usize, y_order: usize) -> Self {
        let mut out = Self::zero(x_order, y_order);
        out.x_coeffs[0] = TruncatedSeries1::new(s.coeffs.iter().take(y_order + 1).copied().collect(), y_order);
        out
    }

    /// `s(y) · x^k`.
    pub fn monomial_series(s: &TruncatedSeries1, k: usize, x_order: usize, y_order: usize) -> Self {
        let mut out = Self::zero(x_order, y_order);
        if k <= x_order {
            out.x_coeffs[k] = TruncatedSeries1::new(s.coeffs.iter().take(y_order + 1).copied().collect(), y_order);
        }
        out
    }

    pub fn coeff(&self, i: usize, j: usize) -> C64 {
        if i <= self.x_order && j <= self.y_order {
            self.x_coeffs[i].coeffs[j]
        } else {
            ZERO
        }
    }

    pub fn set(&mut self, i: usize, j: usize, c: C64) {
        self.x_coeffs[i].coeffs[j] = c;
    }

    pub fn eval(&self, x: C64, y: C64) -> C64 {
        self.x_coeffs.iter().rev().fold(ZERO, |acc, s| acc * x + s.eval(y))
    }

    /// `∂/∂x`.
    pub fn d_dx(&self) -> Self {
        let mut out = Self::zero(self.x_order, self.y_order);
        for k in 1..=self.x_order {
            out.x_coeffs[k - 1] = self.x_coeffs[k].scale(C64::new(k as f64, 0.0));
        }
        out
    }

    /// `∂/∂y`.
    pub fn d_dy(&self) -> Self {
        Self {
            x_coeffs: self.x_coeffs.iter().map(|s| s.derivative()).collect(),
            x_order: self.x_order,
            y_order: self.y_order,
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self {
            x_coeffs: self.x_coeffs.iter().map(|c| c.scale(s)).collect(),
            x_order: self.x_order,
            y_order: self.y_order,
        }
    }

    /// Multiplies the coefficient of `x^k` by the y-series `s`.
    pub fn mul_y(&self, s: &TruncatedSeries1) -> Self {
        Self {
            x_coeffs: self.x_coeffs.iter().map(|c| c * s).collect(),
            x_order: self.x_order,
            y_order: self.y_order,
        }
    }

    pub fn truncate(&self, x_order: usize, y_order: usize) -> Self {
        let mut out = Self::zero(x_order, y_order);
        for i in 0..=x_order.min(self.x_order) {
            for j in 0..=y_order.min(self.y_order) {
                out.x_coeffs[i].coeffs[j] = self.x_coeffs[i].coeffs[j];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.x_coeffs.iter().map(|s| s.max_abs()).fold(0.0, f64::max)
    }

    pub fn constant_term(&self) -> C64 {
        self.x_coeffs[0].coeffs[0]
    }

    /// `self(p(x, y), q(x, y))`; `p` and `q` must vanish at the origin.
    pub fn compose(&self, p: &BiSeries, q: &BiSeries) -> BiSeries {
        debug_assert!(p.constant_term().norm() < 1e-300 && q.constant_term().norm() < 1e-300);
        let (nx, ny) = (p.x_order.min(q.x_order), p.y_order.min(q.y_order));
        let p = p.truncate(nx, ny);
        let q = q.truncate(nx, ny);
        // Powers of q are reused by every x-coefficient.
        let mut q_pows = vec![BiSeries::constant(ONE, nx, ny)];
        for _ in 1..=self.y_order {
            let next = q_pows.last().unwrap() * &q;
            q_pows.push(next);
        }
        let mut acc = BiSeries::zero(nx, ny);
        for a_k in self.x_coeffs.iter().rev() {
            acc = &acc * &p;
            for (l, c) in a_k.coeffs.iter().enumerate() {
                if *c != ZERO {
                    acc = &acc + &q_pows[l].scale(*c);
                }
            }
        }
        acc
    }
}

impl<'a> Add<&'a BiSeries> for &'a BiSeries {
    type Output = BiSeries;
    fn add(self, o: &BiSeries) -> BiSeries {
        let (nx, ny) = (self.x_order.min(o.x_order), self.y_order.min(o.y_order));
        BiSeries {
            x_coeffs: (0..=nx)
                .map(|i| &self.x_coeffs[i].truncate(ny) + &o.x_coeffs[i].truncate(ny))
                .collect(),
            x_order: nx,
            y_order: ny,
        }
    }
}

impl<'a> Sub<&'a BiSeries> for &'a BiSeries {
    type Output = BiSeries;
    fn sub(self, o: &BiSeries) -> BiSeries {
        self + &o.scale(-ONE)
    }
}

impl Neg for &BiSeries {
    type Output = BiSeries;
    fn neg(self) -> BiSeries {
        self.scale(-ONE)
    }
}

impl<'a> Mul<&'a BiSeries> for &'a BiSeries {
    type Output = BiSeries;
    fn mul(self, o: &BiSeries) -> BiSeries {
        let (nx, ny) = (self.x_order.min(o.x_order), self.y_order.min(o.y_order));
        let mut out = BiSeries::zero(nx, ny);
        for i in 0..=nx {
            if self.x_coeffs[i].is_zero() {
                continue;
            }
            let a = self.x_coeffs[i].truncate(ny);
            for k in 0..=nx - i {
                if o.x_coeffs[k].is_zero() {
                    continue;
                }
                let prod = &a * &o.x_coeffs[k].truncate(ny);
                out.x_coeffs[i + k] = &out.x_coeffs[i + k] + &prod;
            }
        }
        out
    }
}

/// A planar map `(x, y) ↦ (first(x, y), second(x, y))` given by two series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMap {
    pub first: BiSeries,
    pub second: BiSeries,
}

impl SeriesMap {
    pub fn eval(&self, x: C64, y: C64) -> (C64, C64) {
        (self.first.eval(x, y), self.second.eval(x, y))
    }

    pub fn x_order(&self) -> usize {
        self.first.x_order.min(self.second.x_order)
    }

    pub fn y_order(&self) -> usize {
        self.first.y_order.min(self.second.y_order)
    }

    /// The x-coefficient `a_k(y)` of the first component.
    pub fn a(&self, k: usize) -> &TruncatedSeries1 {
        &self.first.x_coeffs[k]
    }

    /// `T ∘ self ∘ T⁻¹` for a fiber-preserving change `X = t(x, y)` with inverse `x = s(X, Y)`.
    pub fn conjugate_fiber(&self, t: &BiSeries, s: &BiSeries) -> SeriesMap {
        let (nx, ny) = (self.x_order(), self.y_order());
        let y = BiSeries::y_var(nx, ny);
        let first_s = self.first.compose(s, &y);
        let second_s = self.second.compose(s, &y);
        SeriesMap {
            first: t.compose(&first_s, &second_s),
            second: second_s,
        }
    }
}

/// Inverse in `x` of a fiber map `X = t(x, y)` whose linear coefficient `t₁(y)` is invertible.
pub fn invert_fiber(t: &BiSeries) -> BiSeries {
    let (nx, ny) = (t.x_order, t.y_order);
    let inv_lin = t.x_coeffs[1].recip();
    let x = BiSeries::x_var(nx, ny);
    let y = BiSeries::y_var(nx, ny);
    let mut s = x.mul_y(&inv_lin);
    for _ in 0..nx {
        let err = &x - &t.compose(&s, &y);
        s = &s + &err.mul_y(&inv_lin);
    }
    s
}
