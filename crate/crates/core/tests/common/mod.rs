//! Closed-form and quadrature oracles for product surfaces of plane curves.
#![allow(dead_code)]

use std::sync::Arc;

use fourfold::{Domain, Immersion, PlaneCurve, SurfaceSpec, Vec4};

/// Ellipse `(a cos t, b sin t)`.
#[derive(Debug, Clone, Copy)]
pub struct Ellipse {
    pub a: f64,
    pub b: f64,
}

impl Ellipse {
    pub fn point(&self, t: f64) -> [f64; 2] {
        [self.a * t.cos(), self.b * t.sin()]
    }

    pub fn velocity(&self, t: f64) -> [f64; 2] {
        [-self.a * t.sin(), self.b * t.cos()]
    }

    pub fn speed(&self, t: f64) -> f64 {
        (self.a * self.a * t.sin().powi(2) + self.b * self.b * t.cos().powi(2)).sqrt()
    }

    pub fn curvature(&self, t: f64) -> f64 {
        self.a * self.b / self.speed(t).powi(3)
    }

    /// Inward unit normal (direction of the curvature vector).
    pub fn normal(&self, t: f64) -> [f64; 2] {
        let s = self.speed(t);
        [-self.b * t.cos() / s, -self.a * t.sin() / s]
    }

    pub fn evolute(&self, t: f64) -> [f64; 2] {
        let d = self.a * self.a - self.b * self.b;
        [d / self.a * t.cos().powi(3), -d / self.b * t.sin().powi(3)]
    }

    pub fn arclength(&self, t0: f64, t1: f64) -> f64 {
        simpson(|t| self.speed(t), t0, t1, 400)
    }

    /// Normal component of `k` along [`Ellipse::normal`]: solves
    /// `dk/ds = (s − s(t_base)) κ(s)` with `k(t_zero) = 0`.
    pub fn k_component(&self, t: f64, t_zero: f64, t_base: f64) -> f64 {
        simpson(
            |w| self.arclength(t_base, w) * self.curvature(w) * self.speed(w),
            t_zero,
            t,
            200,
        )
    }
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

pub const E1: Ellipse = Ellipse { a: 2.0, b: 1.0 };
pub const E2: Ellipse = Ellipse { a: 3.0, b: 1.0 };

pub fn ellipse_domain() -> Domain {
    Domain::new(0.15, 1.4, 0.15, 1.4).unwrap()
}

pub fn torus_domain() -> Domain {
    Domain::new(0.0, 1.2, 0.0, 1.2).unwrap()
}

pub fn ellipse_spec(domain: Domain) -> SurfaceSpec {
    SurfaceSpec::Product {
        domain,
        curve1: PlaneCurve::Ellipse { a: E1.a, b: E1.b },
        curve2: PlaneCurve::Ellipse { a: E2.a, b: E2.b },
    }
}

pub fn torus_spec(domain: Domain) -> SurfaceSpec {
    SurfaceSpec::Product {
        domain,
        curve1: PlaneCurve::Circle {
            r: 1.0,
            arc_length: true,
        },
        curve2: PlaneCurve::Circle {
            r: 1.0,
            arc_length: true,
        },
    }
}

pub fn ellipse_product() -> Arc<dyn Immersion> {
    ellipse_spec(ellipse_domain()).build().unwrap()
}

pub fn clifford_torus() -> Arc<dyn Immersion> {
    torus_spec(torus_domain()).build().unwrap()
}

/// Lift per-factor plane vectors into R⁴.
pub fn lift(p: [f64; 2], q: [f64; 2]) -> Vec4 {
    [p[0], p[1], q[0], q[1]]
}

pub fn dist(a: &Vec4, b: &Vec4) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn norm(a: &Vec4) -> f64 {
    dist(a, &[0.0; 4])
}

pub fn dot(a: &Vec4, b: &Vec4) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
