//! Truncated bivariate Taylor arithmetic and a finite-difference fallback.
//!
//! A [`Jet2`] of order `k` stores the normalized Taylor coefficients
//! `∂^{i+j} f / ∂u^i ∂v^j / (i! j!)` for `i + j ≤ k` at some base point.
//! Arithmetic on jets propagates every partial derivative up to that order
//! exactly (up to rounding), which is how the geometry pipeline obtains the
//! third and fourth derivatives it needs without finite-difference noise.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Vec2;

/// Highest supported jet order.
pub const MAX_ORDER: usize = 4;
const CAP: usize = (MAX_ORDER + 1) * (MAX_ORDER + 2) / 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum JetError {
    #[error("jet division by zero")]
    DivisionByZero,
    #[error("jet domain error: {0}")]
    Domain(&'static str),
    #[error("jet order {0} exceeds the maximum of {MAX_ORDER}")]
    OrderTooHigh(usize),
}

/// Number of coefficients of a jet of the given order.
pub const fn jet_len(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

#[inline]
const fn idx(i: usize, j: usize) -> usize {
    let d = i + j;
    d * (d + 1) / 2 + j
}

const FACT: [f64; 9] = [1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0];

/// Truncated Taylor expansion of a scalar function of `(u, v)`.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet2 {
    order: u8,
    c: [f64; CAP],
}

impl std::fmt::Debug for Jet2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet2")
            .field("order", &self.order)
            .field("coeffs", &self.coeffs())
            .finish()
    }
}

impl Jet2 {
    pub fn zero(order: usize) -> Self {
        assert!(order <= MAX_ORDER, "jet order {order} exceeds {MAX_ORDER}");
        Jet2 {
            order: order as u8,
            c: [0.0; CAP],
        }
    }

    pub fn constant(value: f64, order: usize) -> Self {
        let mut j = Self::zero(order);
        j.c[0] = value;
        j
    }

    /// Jet of the coordinate function `u` at `u = u0`.
    pub fn var_u(u0: f64, order: usize) -> Self {
        let mut j = Self::constant(u0, order);
        if order > 0 {
            j.c[idx(1, 0)] = 1.0;
        }
        j
    }

    /// Jet of the coordinate function `v` at `v = v0`.
    pub fn var_v(v0: f64, order: usize) -> Self {
        let mut j = Self::constant(v0, order);
        if order > 0 {
            j.c[idx(0, 1)] = 1.0;
        }
        j
    }

    /// Both coordinate jets at `at`.
    pub fn coords(at: Vec2, order: usize) -> (Self, Self) {
        (Self::var_u(at[0], order), Self::var_v(at[1], order))
    }

    pub fn from_coeffs(order: usize, coeffs: &[f64]) -> Result<Self, JetError> {
        if order > MAX_ORDER {
            return Err(JetError::OrderTooHigh(order));
        }
        assert_eq!(coeffs.len(), jet_len(order), "coefficient count mismatch");
        let mut j = Self::zero(order);
        j.c[..coeffs.len()].copy_from_slice(coeffs);
        Ok(j)
    }

    #[inline]
    pub fn order(&self) -> usize {
        self.order as usize
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..jet_len(self.order())]
    }

    /// Normalized coefficient of `u^i v^j`; zero beyond the order.
    #[inline]
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.order() {
            0.0
        } else {
            self.c[idx(i, j)]
        }
    }

    #[inline]
    pub fn set_coeff(&mut self, i: usize, j: usize, value: f64) {
        assert!(i + j <= self.order());
        self.c[idx(i, j)] = value;
    }

    /// The partial derivative `∂^{i+j} f / ∂u^i ∂v^j` at the base point.
    pub fn partial(&self, i: usize, j: usize) -> f64 {
        self.coeff(i, j) * FACT[i] * FACT[j]
    }

    pub fn truncate(&self, order: usize) -> Self {
        let order = order.min(self.order());
        let mut j = *self;
        j.order = order as u8;
        for k in jet_len(order)..CAP {
            j.c[k] = 0.0;
        }
        j
    }

    /// Jet of `∂f/∂u`, one order lower. Order-zero input yields an order-zero zero jet.
    pub fn du(&self) -> Self {
        let o = self.order();
        if o == 0 {
            return Self::zero(0);
        }
        let mut r = Self::zero(o - 1);
        for d in 0..o {
            for j in 0..=d {
                let i = d - j;
                r.c[idx(i, j)] = (i + 1) as f64 * self.c[idx(i + 1, j)];
            }
        }
        r
    }

    /// Jet of `∂f/∂v`, one order lower.
    pub fn dv(&self) -> Self {
        let o = self.order();
        if o == 0 {
            return Self::zero(0);
        }
        let mut r = Self::zero(o - 1);
        for d in 0..o {
            for j in 0..=d {
                let i = d - j;
                r.c[idx(i, j)] = (j + 1) as f64 * self.c[idx(i, j + 1)];
            }
        }
        r
    }

    /// Partial along coordinate axis 0 (`u`) or 1 (`v`).
    pub fn d(&self, axis: usize) -> Self {
        if axis == 0 {
            self.du()
        } else {
            self.dv()
        }
    }

    /// Evaluate the truncated polynomial at the offset `(du, dv)` from the base point.
    pub fn eval_offset(&self, du: f64, dv: f64) -> f64 {
        let mut acc = 0.0;
        for d in 0..=self.order() {
            for j in 0..=d {
                let i = d - j;
                acc += self.c[idx(i, j)] * du.powi(i as i32) * dv.powi(j as i32);
            }
        }
        acc
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut r = *self;
        for x in r.c.iter_mut() {
            *x *= s;
        }
        r
    }

    /// Compose with a univariate function given its derivatives
    /// `derivs[k] = f^{(k)}(a0)` at the constant term `a0`.
    pub fn compose(&self, derivs: &[f64]) -> Self {
        let o = self.order();
        debug_assert!(derivs.len() > o);
        let mut w = *self;
        w.c[0] = 0.0;
        let mut out = Self::constant(derivs[0], o);
        let mut pow = Self::constant(1.0, o);
        for (k, dk) in derivs.iter().enumerate().take(o + 1).skip(1) {
            pow = pow * w;
            out += pow.scale(dk / FACT[k]);
        }
        out
    }

    pub fn recip(&self) -> Result<Self, JetError> {
        let b0 = self.c[0];
        if b0.abs() < 1e-300 {
            return Err(JetError::DivisionByZero);
        }
        let mut d = [0.0; MAX_ORDER + 1];
        let inv = 1.0 / b0;
        let mut p = inv;
        for (k, dk) in d.iter_mut().enumerate() {
            // d^k/dx^k (1/x) = (-1)^k k! / x^{k+1}
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *dk = sign * FACT[k] * p;
            p *= inv;
        }
        Ok(self.compose(&d))
    }

    pub fn try_div(&self, rhs: &Self) -> Result<Self, JetError> {
        Ok(*self * rhs.recip()?)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose(&[s, c, -s, -c, s])
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        self.compose(&[c, -s, -c, s, c])
    }

    pub fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose(&[e; MAX_ORDER + 1])
    }

    pub fn sinh(&self) -> Self {
        let (s, c) = (self.c[0].sinh(), self.c[0].cosh());
        self.compose(&[s, c, s, c, s])
    }

    pub fn cosh(&self) -> Self {
        let (s, c) = (self.c[0].sinh(), self.c[0].cosh());
        self.compose(&[c, s, c, s, c])
    }

    pub fn ln(&self) -> Result<Self, JetError> {
        let a = self.c[0];
        if !(a > 0.0) {
            return Err(JetError::Domain("log of a non-positive value"));
        }
        let mut d = [a.ln(), 0.0, 0.0, 0.0, 0.0];
        let inv = 1.0 / a;
        let mut p = inv;
        for (k, dk) in d.iter_mut().enumerate().skip(1) {
            // d^k/dx^k ln x = (-1)^{k-1} (k-1)! / x^k
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            *dk = sign * FACT[k - 1] * p;
            p *= inv;
        }
        Ok(self.compose(&d))
    }

    pub fn sqrt(&self) -> Result<Self, JetError> {
        if !(self.c[0] > 0.0) {
            return Err(JetError::Domain("sqrt of a non-positive value"));
        }
        self.powf(0.5)
    }

    /// `self^r` for a constant exponent. Non-integer exponents need a positive base.
    pub fn powf(&self, r: f64) -> Result<Self, JetError> {
        let a = self.c[0];
        let is_int = r.fract() == 0.0 && r.abs() < 1e9;
        if is_int {
            if r < 0.0 && a == 0.0 {
                return Err(JetError::Domain("negative power of zero"));
            }
        } else if !(a > 0.0) {
            return Err(JetError::Domain("fractional power of a non-positive value"));
        }
        let mut d = [0.0; MAX_ORDER + 1];
        let mut falling = 1.0;
        for (k, dk) in d.iter_mut().enumerate() {
            let e = r - k as f64;
            *dk = if falling == 0.0 {
                0.0
            } else if is_int {
                falling * a.powi(e as i32)
            } else {
                falling * a.powf(e)
            };
            falling *= e;
        }
        Ok(self.compose(&d))
    }

    /// Two-argument arctangent. Requires `(x, y)` away from the origin at the base point.
    pub fn atan2(y: &Self, x: &Self) -> Result<Self, JetError> {
        let (x0, y0) = (x.c[0], y.c[0]);
        if x0 == 0.0 && y0 == 0.0 {
            return Err(JetError::Domain("atan2 at the origin"));
        }
        // atan2(y, x) = atan2(y0, x0) + atan(w), w = (x0 y - y0 x) / (x0 x + y0 y), w(0) = 0
        let num = *y * x0 - *x * y0;
        let den = *x * x0 + *y * y0;
        let mut w = num.try_div(&den)?;
        w.c[0] = 0.0;
        // atan(w) = w - w^3/3 at w0 = 0, exact to order 4
        let mut out = w.compose(&[0.0, 1.0, 0.0, -2.0, 0.0]);
        out.c[0] = y0.atan2(x0);
        Ok(out)
    }

    fn zip(&self, rhs: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        let o = self.order().min(rhs.order());
        let mut r = Self::zero(o);
        for k in 0..jet_len(o) {
            r.c[k] = f(self.c[k], rhs.c[k]);
        }
        r
    }
}

impl Add for Jet2 {
    type Output = Jet2;
    fn add(self, rhs: Jet2) -> Jet2 {
        self.zip(&rhs, |a, b| a + b)
    }
}

impl Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, rhs: Jet2) -> Jet2 {
        self.zip(&rhs, |a, b| a - b)
    }
}

impl AddAssign for Jet2 {
    fn add_assign(&mut self, rhs: Jet2) {
        *self = *self + rhs;
    }
}

impl SubAssign for Jet2 {
    fn sub_assign(&mut self, rhs: Jet2) {
        *self = *self - rhs;
    }
}

impl Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self.scale(-1.0)
    }
}

impl Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: Jet2) -> Jet2 {
        let o = self.order().min(rhs.order());
        let mut r = Jet2::zero(o);
        for d1 in 0..=o {
            for j1 in 0..=d1 {
                let a = self.c[idx(d1 - j1, j1)];
                if a == 0.0 {
                    continue;
                }
                for d2 in 0..=(o - d1) {
                    for j2 in 0..=d2 {
                        let i = d1 - j1 + d2 - j2;
                        r.c[idx(i, j1 + j2)] += a * rhs.c[idx(d2 - j2, j2)];
                    }
                }
            }
        }
        r
    }
}

impl Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, rhs: f64) -> Jet2 {
        self.scale(rhs)
    }
}

impl Add<f64> for Jet2 {
    type Output = Jet2;
    fn add(mut self, rhs: f64) -> Jet2 {
        self.c[0] += rhs;
        self
    }
}

/// Binary jet operation selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

pub fn jet_binary(a: &Jet2, b: &Jet2, kind: BinaryKind) -> Result<Jet2, JetError> {
    Ok(match kind {
        BinaryKind::Add => *a + *b,
        BinaryKind::Sub => *a - *b,
        BinaryKind::Mul => *a * *b,
        BinaryKind::Div => a.try_div(b)?,
    })
}

/// Elementary-function selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementaryKind {
    Sin,
    Cos,
    Exp,
    Log,
    Sinh,
    Cosh,
    Sqrt,
    Pow(f64),
}

pub fn jet_elementary(a: &Jet2, kind: ElementaryKind) -> Result<Jet2, JetError> {
    Ok(match kind {
        ElementaryKind::Sin => a.sin(),
        ElementaryKind::Cos => a.cos(),
        ElementaryKind::Exp => a.exp(),
        ElementaryKind::Log => a.ln()?,
        ElementaryKind::Sinh => a.sinh(),
        ElementaryKind::Cosh => a.cosh(),
        ElementaryKind::Sqrt => a.sqrt()?,
        ElementaryKind::Pow(r) => a.powf(r)?,
    })
}

/// Finite-difference settings.
///
/// `step` is used for first derivatives; second derivatives use `10 * step`,
/// which keeps their round-off near `1e-10` at the default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    pub step: f64,
    pub richardson_levels: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-4,
            richardson_levels: 2,
        }
    }
}

/// Rectangle `[u0,u1] × [v0,v1]` a finite-difference stencil must stay inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FdError {
    #[error("stencil out of bounds at ({0}, {1})")]
    OutOfBounds(f64, f64),
    #[error("invalid finite-difference config: {0}")]
    Config(&'static str),
    #[error("jets of order {0} are not available by finite differences (max 2)")]
    OrderTooHigh(usize),
}

fn richardson(estimates: &[Vec<f64>]) -> Vec<f64> {
    // estimates[l] used step h / 2^l; error expansion in even powers of h.
    let mut table: Vec<Vec<f64>> = estimates.to_vec();
    let mut factor = 4.0;
    for _ in 1..estimates.len() {
        let next: Vec<Vec<f64>> = table
            .windows(2)
            .map(|w| {
                w[0].iter()
                    .zip(&w[1])
                    .map(|(coarse, fine)| (factor * fine - coarse) / (factor - 1.0))
                    .collect()
            })
            .collect();
        table = next;
        factor *= 4.0;
    }
    table.pop().unwrap()
}

/// Central-difference jets (order ≤ 2) of a point-evaluable map `R² → R^m`,
/// refined by Richardson extrapolation over halved steps.
///
/// When `bounds` is given, steps shrink to keep the stencil inside it; a
/// stencil that would have to shrink below `step / 1000` is rejected.
pub fn fd_jet<E>(
    map: impl Fn(Vec2) -> Result<Vec<f64>, E>,
    at: Vec2,
    order: usize,
    cfg: &FdConfig,
    bounds: Option<&Bounds>,
) -> Result<Vec<Jet2>, E>
where
    E: From<FdError>,
{
    if !(cfg.step > 0.0) {
        return Err(FdError::Config("step must be positive").into());
    }
    if cfg.richardson_levels < 1 {
        return Err(FdError::Config("richardson_levels must be at least 1").into());
    }
    if order > 2 {
        return Err(FdError::OrderTooHigh(order).into());
    }
    let center = map(at)?;
    let m = center.len();
    let mut jets: Vec<Jet2> = center.iter().map(|&c| Jet2::constant(c, order)).collect();
    if order == 0 {
        return Ok(jets);
    }

    let room = match bounds {
        Some(b) => (at[0] - b.u[0])
            .min(b.u[1] - at[0])
            .min(at[1] - b.v[0])
            .min(b.v[1] - at[1]),
        None => f64::INFINITY,
    };
    let fit = |h: f64| -> Result<f64, E> {
        let h = h.min(room);
        if !(h >= cfg.step * 1e-3) {
            return Err(FdError::OutOfBounds(at[0], at[1]).into());
        }
        Ok(h)
    };

    let h1 = fit(cfg.step)?;
    let mut first = Vec::new();
    for l in 0..cfg.richardson_levels {
        let h = h1 / f64::powi(2.0, l as i32);
        let up = map([at[0] + h, at[1]])?;
        let um = map([at[0] - h, at[1]])?;
        let vp = map([at[0], at[1] + h])?;
        let vm = map([at[0], at[1] - h])?;
        let mut est = vec![0.0; 2 * m];
        for k in 0..m {
            est[k] = (up[k] - um[k]) / (2.0 * h);
            est[m + k] = (vp[k] - vm[k]) / (2.0 * h);
        }
        first.push(est);
    }
    let first = richardson(&first);
    for k in 0..m {
        jets[k].set_coeff(1, 0, first[k]);
        jets[k].set_coeff(0, 1, first[m + k]);
    }
    if order == 1 {
        return Ok(jets);
    }

    let h2 = fit(cfg.step * 10.0)?;
    let mut second = Vec::new();
    for l in 0..cfg.richardson_levels {
        let h = h2 / f64::powi(2.0, l as i32);
        let up = map([at[0] + h, at[1]])?;
        let um = map([at[0] - h, at[1]])?;
        let vp = map([at[0], at[1] + h])?;
        let vm = map([at[0], at[1] - h])?;
        let pp = map([at[0] + h, at[1] + h])?;
        let pm = map([at[0] + h, at[1] - h])?;
        let mp = map([at[0] - h, at[1] + h])?;
        let mm = map([at[0] - h, at[1] - h])?;
        let mut est = vec![0.0; 3 * m];
        for k in 0..m {
            est[k] = (up[k] - 2.0 * center[k] + um[k]) / (h * h);
            est[m + k] = (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h);
            est[2 * m + k] = (vp[k] - 2.0 * center[k] + vm[k]) / (h * h);
        }
        second.push(est);
    }
    let second = richardson(&second);
    for k in 0..m {
        jets[k].set_coeff(2, 0, second[k] / 2.0);
        jets[k].set_coeff(1, 1, second[m + k]);
        jets[k].set_coeff(0, 2, second[2 * m + k] / 2.0);
    }
    Ok(jets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_first_order() {
        let (u, v) = Jet2::coords([1.0, 2.0], 1);
        let p = jet_binary(&u, &v, BinaryKind::Mul).unwrap();
        assert_eq!(p.coeffs(), &[2.0, 2.0, 1.0]);
    }

    #[test]
    fn multiplying_by_one_is_identity() {
        let (u, v) = Jet2::coords([0.3, -0.8], 4);
        let a = (u * v).sin() + u.exp();
        let one = Jet2::constant(1.0, 4);
        assert_eq!(a * one, a);
    }

    #[test]
    fn u_squared_over_u_is_u() {
        let (u, _) = Jet2::coords([3.0, 0.0], 4);
        let q = (u * u).try_div(&u).unwrap();
        // symbolic expansion of u^2/u = u around u = 3
        let expect = [
            3.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
        ];
        for (a, b) in q.coeffs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn division_by_zero_jet() {
        let a = Jet2::constant(1.0, 2);
        let b = Jet2::var_u(0.0, 2);
        assert_eq!(a.try_div(&b), Err(JetError::DivisionByZero));
        assert_eq!(JetError::DivisionByZero.to_string(), "jet division by zero");
    }

    #[test]
    fn sin_of_zero_jet() {
        let (u, _) = Jet2::coords([0.0, 0.0], 3);
        let s = u.sin();
        assert_eq!(s.value(), 0.0);
        assert_eq!(s.coeff(1, 0), 1.0);
        assert_eq!(s.coeff(0, 1), 0.0);
        assert!((s.coeff(3, 0) + 1.0 / 6.0).abs() < 1e-16);
    }

    #[test]
    fn exp_of_constant() {
        let c = Jet2::constant(0.7, 4);
        let e = c.exp();
        assert_eq!(e.value(), 0.7f64.exp());
        assert!(e.coeffs()[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pythagorean_identity() {
        let (u, _) = Jet2::coords([0.7, 0.0], 4);
        let one = u.sin() * u.sin() + u.cos() * u.cos();
        assert!((one.value() - 1.0).abs() < 1e-15);
        assert!(one.coeffs()[1..].iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn domain_errors() {
        let z = Jet2::constant(-1.0, 2);
        assert!(matches!(z.ln(), Err(JetError::Domain(_))));
        assert!(matches!(z.sqrt(), Err(JetError::Domain(_))));
        assert!(matches!(z.powf(0.5), Err(JetError::Domain(_))));
        assert!(z.powf(2.0).is_ok());
    }

    #[test]
    fn derivative_shift_and_partials() {
        // f = u^3 v at (1, 2): f_u = 3u^2 v = 6, f_uv = 3u^2 = 3, f_uuv = 6u = 6
        let (u, v) = Jet2::coords([1.0, 2.0], 4);
        let f = u * u * u * v;
        assert!((f.partial(1, 0) - 6.0).abs() < 1e-14);
        assert!((f.partial(1, 1) - 3.0).abs() < 1e-14);
        assert!((f.partial(2, 1) - 6.0).abs() < 1e-14);
        let fu = f.du();
        assert_eq!(fu.order(), 3);
        assert!((fu.partial(0, 1) - 3.0).abs() < 1e-14);
        assert!((fu.partial(1, 1) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn atan2_matches_direct_derivatives() {
        // θ(u, v) = atan2(v, u); θ_u = -v/r², θ_v = u/r², θ_uu = 2uv/r⁴
        let (u, v) = Jet2::coords([-0.6, 0.8], 3);
        let t = Jet2::atan2(&v, &u).unwrap();
        let r2 = 1.0;
        assert!((t.value() - 0.8f64.atan2(-0.6)).abs() < 1e-15);
        assert!((t.partial(1, 0) - (-0.8 / r2)).abs() < 1e-14);
        assert!((t.partial(0, 1) - (-0.6 / r2)).abs() < 1e-14);
        assert!((t.partial(2, 0) - 2.0 * -0.6 * 0.8).abs() < 1e-13);
    }

    fn fd_map(p: Vec2) -> Result<Vec<f64>, FdError> {
        Ok(vec![p[0] * p[0], p[1]])
    }

    #[test]
    fn fd_simple_partial() {
        let j = fd_jet(fd_map, [1.0, 0.0], 2, &FdConfig::default(), None).unwrap();
        assert!((j[0].partial(1, 0) - 2.0).abs() < 1e-8);
        assert!((j[0].partial(2, 0) - 2.0).abs() < 1e-6);
        assert!((j[1].partial(0, 1) - 1.0).abs() < 1e-8);
    }

    #[test]
    fn fd_constant_map_is_exactly_flat() {
        let j = fd_jet(
            |_| Ok::<_, FdError>(vec![3.25]),
            [0.2, 0.1],
            2,
            &FdConfig::default(),
            None,
        )
        .unwrap();
        assert!(j[0].coeffs()[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fd_matches_analytic_jets() {
        let at = [0.3, 0.5];
        let (u, v) = Jet2::coords(at, 2);
        let exact = u.sin() * v.cos();
        let fd = fd_jet(
            |p| Ok::<_, FdError>(vec![p[0].sin() * p[1].cos()]),
            at,
            2,
            &FdConfig::default(),
            None,
        )
        .unwrap();
        for (a, b) in fd[0].coeffs().iter().zip(exact.coeffs()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn fd_stencil_shrinks_then_fails_at_border() {
        let b = Bounds {
            u: [0.0, 1.0],
            v: [0.0, 1.0],
        };
        let cfg = FdConfig::default();
        // 5e-4 from the border: the second-order stencil (1e-3) shrinks
        let near = fd_jet(fd_map, [5e-4, 0.5], 2, &cfg, Some(&b)).unwrap();
        assert!((near[0].partial(2, 0) - 2.0).abs() < 1e-5);
        let err = fd_jet(fd_map, [0.0, 0.5], 1, &cfg, Some(&b)).unwrap_err();
        assert!(err.to_string().contains("stencil out of bounds"));
    }

    #[test]
    fn fd_config_validation() {
        let bad = FdConfig {
            step: 0.0,
            richardson_levels: 2,
        };
        assert!(fd_jet(fd_map, [0.0, 0.0], 1, &bad, None).is_err());
        let bad = FdConfig {
            step: 1e-4,
            richardson_levels: 0,
        };
        assert!(fd_jet(fd_map, [0.0, 0.0], 1, &bad, None).is_err());
    }
}
