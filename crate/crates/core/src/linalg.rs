//! Small fixed-size vector helpers for R⁴ values and their jets.

use crate::{Jet2, Jet4, Vec4};

pub fn dot(a: &Vec4, b: &Vec4) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn norm(a: &Vec4) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &Vec4, b: &Vec4) -> Vec4 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn sub(a: &Vec4, b: &Vec4) -> Vec4 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

pub fn scale(a: &Vec4, s: f64) -> Vec4 {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

/// `a + s b`
pub fn axpy(a: &Vec4, s: f64, b: &Vec4) -> Vec4 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]]
}

pub fn jdot(a: &Jet4, b: &Jet4) -> Jet2 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn jadd(a: &Jet4, b: &Jet4) -> Jet4 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn jsub(a: &Jet4, b: &Jet4) -> Jet4 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

/// Scale a vector jet by a scalar jet.
pub fn jscale(a: &Jet4, s: &Jet2) -> Jet4 {
    [a[0] * *s, a[1] * *s, a[2] * *s, a[3] * *s]
}

pub fn jscale_f(a: &Jet4, s: f64) -> Jet4 {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

pub fn jconst(v: &Vec4, order: usize) -> Jet4 {
    v.map(|x| Jet2::constant(x, order))
}

pub fn jvalue(a: &Jet4) -> Vec4 {
    a.map(|x| x.value())
}

pub fn jtruncate(a: &Jet4, order: usize) -> Jet4 {
    a.map(|x| x.truncate(order))
}

pub fn jd(a: &Jet4, axis: usize) -> Jet4 {
    a.map(|x| x.d(axis))
}

/// Singular values (descending) of the 4×2 matrix with columns `a`, `b`.
pub fn singular_values(a: &Vec4, b: &Vec4) -> [f64; 2] {
    let (p, q, r) = (dot(a, a), dot(a, b), dot(b, b));
    let mean = 0.5 * (p + r);
    let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    let l1 = mean + disc;
    let l2 = (p * r - q * q) / l1.max(f64::MIN_POSITIVE);
    [l1.max(0.0).sqrt(), l2.max(0.0).sqrt()]
}

/// Inverse of the symmetric 2×2 matrix `[[a, b], [b, c]]` as `(a', b', c')`.
pub fn inv_sym2(a: f64, b: f64, c: f64) -> Option<(f64, f64, f64)> {
    let det = a * c - b * b;
    if det.abs() <= f64::MIN_POSITIVE {
        return None;
    }
    Some((c / det, -b / det, a / det))
}
