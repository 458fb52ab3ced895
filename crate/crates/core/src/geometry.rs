//! Per-point differential geometry of a surface in R⁴: frames, fundamental
//! forms, the curvature ellipse `η(θ) = H + B cos 2θ + C sin 2θ`, point
//! classification and curvature scalars.
//!
//! Everything is computed on jets, so the same code yields plain values
//! (order 0) or the local expansion of frames and curvature data (order ≥ 1)
//! when the immersion supplies enough derivatives.
//!
//! Conventions: `J n1 = n2`, `J n2 = −n1`; normal coordinates are taken in
//! the `(n1, n2)` frame.

use serde::{Deserialize, Serialize};

use crate::jets::Jet2;
use crate::linalg::{self, jadd, jd, jdot, jscale, jscale_f, jsub, jtruncate, jvalue};
use crate::surfaces::{check_order, Immersion};
use crate::{Error, Jet4, Result, Vec2, Vec4};

/// Numerical thresholds shared by classification, construction and checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub frame_tol: f64,
    pub degeneracy_tol: f64,
    pub flatness_tol: f64,
    pub fd_flatness_tol: f64,
    pub rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            frame_tol: 1e-10,
            degeneracy_tol: 1e-7,
            flatness_tol: 1e-6,
            fd_flatness_tol: 1e-4,
            rank_tol: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.frame_tol,
            self.degeneracy_tol,
            self.flatness_tol,
            self.fd_flatness_tol,
            self.rank_tol,
        ];
        if all.iter().all(|t| *t > 0.0 && t.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidSpec("tolerances must be positive".into()))
        }
    }
}

type Normal2 = [Jet2; 2];

fn n2dot(a: &Normal2, b: &Normal2) -> Jet2 {
    a[0] * b[0] + a[1] * b[1]
}

fn n2add(a: &Normal2, b: &Normal2) -> Normal2 {
    [a[0] + b[0], a[1] + b[1]]
}

fn n2sub(a: &Normal2, b: &Normal2) -> Normal2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn n2scale(a: &Normal2, s: &Jet2) -> Normal2 {
    [a[0] * *s, a[1] * *s]
}

/// Local expansion of the per-point geometry. All fields have the same order.
#[derive(Debug, Clone)]
pub struct GeometryJets {
    pub order: usize,
    pub point: Jet4,
    pub xu: Jet4,
    pub xv: Jet4,
    /// `g_uu, g_uv, g_vv`
    pub g: [Jet2; 3],
    pub t1: Jet4,
    pub t2: Jet4,
    pub n1: Jet4,
    pub n2: Jet4,
    /// Chart components of the aligned frame: `t_a = P[a][0] ∂u + P[a][1] ∂v`.
    pub frame_chart: [[Jet2; 2]; 2],
    /// `b1, b2, b3` in normal coordinates.
    pub b: [Normal2; 3],
    pub h: Normal2,
    pub bb: Normal2,
    pub cc: Normal2,
    /// Second derivatives `x_uu, x_uv, x_vv` (ambient).
    pub second: [Jet4; 3],
    /// Angle of `t1` measured from `x_u`.
    pub frame_angle: Jet2,
    pub near_circular: bool,
}

fn normalize(v: &Jet4) -> Result<(Jet4, Jet2)> {
    let n2 = jdot(v, v);
    let n = n2.sqrt()?;
    let inv = n.recip()?;
    Ok((jscale(v, &inv), n))
}

/// Rotate the tangent frame by angle `theta` (jet).
fn rotate(gj: &mut GeometryJets, theta: &Jet2) {
    let (c, s) = (theta.cos(), theta.sin());
    let [b1, b2, b3] = gj.b;
    let (cc, ss, cs) = (c * c, s * s, c * s);
    let comb = |x: &Normal2, a: Jet2, y: &Normal2, b: Jet2, z: &Normal2, d: Jet2| -> Normal2 {
        [x[0] * a + y[0] * b + z[0] * d, x[1] * a + y[1] * b + z[1] * d]
    };
    gj.b = [
        comb(&b1, cc, &b2, ss, &b3, cs * 2.0),
        comb(&b1, ss, &b2, cc, &b3, cs * -2.0),
        comb(&b1, -cs, &b2, cs, &b3, cc - ss),
    ];
    let (t1, t2) = (gj.t1, gj.t2);
    gj.t1 = jadd(&jscale(&t1, &c), &jscale(&t2, &s));
    gj.t2 = jsub(&jscale(&t2, &c), &jscale(&t1, &s));
    let p = gj.frame_chart;
    gj.frame_chart = [
        [c * p[0][0] + s * p[1][0], c * p[0][1] + s * p[1][1]],
        [c * p[1][0] - s * p[0][0], c * p[1][1] - s * p[0][1]],
    ];
    gj.frame_angle += *theta;
    gj.h = n2scale(&n2add(&gj.b[0], &gj.b[1]), &Jet2::constant(0.5, gj.order));
    gj.bb = n2scale(&n2sub(&gj.b[0], &gj.b[1]), &Jet2::constant(0.5, gj.order));
    gj.cc = gj.b[2];
}

/// Geometry jets of order `x.order() − 2` from coordinate jets `x`.
///
/// `pre_rotation` turns the Gram–Schmidt tangent frame before the
/// curvature-ellipse alignment; gauge-invariant outputs do not depend on it.
pub fn geometry_jets(x: &Jet4, pre_rotation: f64, tol: &Tolerances) -> Result<GeometryJets> {
    let full = x[0].order();
    if full < 2 {
        return Err(Error::OrderUnavailable {
            requested: 2,
            available: full,
        });
    }
    let r = full - 2;
    let xu = jd(x, 0);
    let xv = jd(x, 1);
    let second = [jd(&xu, 0), jd(&xu, 1), jd(&xv, 1)];

    let (xu0, xv0) = (jvalue(&xu), jvalue(&xv));
    let sv = linalg::singular_values(&xu0, &xv0);
    if !(sv[1] > 1e-12 * (1.0 + sv[0])) {
        let p = jvalue(x);
        let _ = p;
        return Err(Error::NotImmersion(f64::NAN, f64::NAN));
    }

    let (t1, nu) = normalize(&xu)?;
    let w = jsub(&xv, &jscale(&t1, &jdot(&xv, &t1)));
    let (t2, nw) = normalize(&w)?;
    let inv_nu = nu.recip()?;
    let inv_nw = nw.recip()?;
    let p10 = -(jdot(&xv, &t1) * inv_nu * inv_nw);
    let frame_chart = [[inv_nu, Jet2::zero(r + 1)], [p10, inv_nw]];

    // normal frame seeded from the two coordinate axes with the largest residual
    let (t10, t20) = (jvalue(&t1), jvalue(&t2));
    let mut res: Vec<(usize, f64)> = (0..4).map(|m| (m, 1.0 - t10[m] * t10[m] - t20[m] * t20[m])).collect();
    res.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut pick = [res[0].0, res[1].0];
    pick.sort_unstable();
    let residual = |m: usize| -> Jet4 {
        let mut e = [Jet2::zero(r + 1); 4];
        e[m] = Jet2::constant(1.0, r + 1);
        let e = jsub(&e, &jscale(&t1, &t1[m]));
        jsub(&e, &jscale(&t2, &t2[m]))
    };
    let (n1, _) = normalize(&residual(pick[0]))?;
    let r2 = residual(pick[1]);
    let (n2, _) = normalize(&jsub(&r2, &jscale(&n1, &jdot(&r2, &n1))))?;

    let alpha = |s: &Jet4| -> Normal2 { [jdot(s, &n1), jdot(s, &n2)] };
    let (auu, auv, avv) = (alpha(&second[0]), alpha(&second[1]), alpha(&second[2]));
    let p00 = frame_chart[0][0];
    let (p10, p11) = (frame_chart[1][0], frame_chart[1][1]);
    let b1 = n2scale(&auu, &(p00 * p00));
    let b2 = [
        p10 * p10 * auu[0] + p10 * p11 * auv[0] * 2.0 + p11 * p11 * avv[0],
        p10 * p10 * auu[1] + p10 * p11 * auv[1] * 2.0 + p11 * p11 * avv[1],
    ];
    let b3 = [p00 * (p10 * auu[0] + p11 * auv[0]), p00 * (p10 * auu[1] + p11 * auv[1])];

    let tr = |j: &Jet4| jtruncate(j, r);
    let mut gj = GeometryJets {
        order: r,
        point: tr(x),
        xu: tr(&xu),
        xv: tr(&xv),
        g: [
            jdot(&xu, &xu).truncate(r),
            jdot(&xu, &xv).truncate(r),
            jdot(&xv, &xv).truncate(r),
        ],
        t1: tr(&t1),
        t2: tr(&t2),
        n1: tr(&n1),
        n2: tr(&n2),
        frame_chart: [
            [frame_chart[0][0].truncate(r), frame_chart[0][1].truncate(r)],
            [frame_chart[1][0].truncate(r), frame_chart[1][1].truncate(r)],
        ],
        b: [b1, b2, b3],
        h: [Jet2::zero(r); 2],
        bb: [Jet2::zero(r); 2],
        cc: [Jet2::zero(r); 2],
        second: [tr(&second[0]), tr(&second[1]), tr(&second[2])],
        frame_angle: Jet2::zero(r),
        near_circular: false,
    };
    rotate(&mut gj, &Jet2::constant(pre_rotation, r));

    // align so that B·C = 0 and |B| ≥ |C|
    let bb_cc = n2dot(&gj.bb, &gj.bb) - n2dot(&gj.cc, &gj.cc);
    let two_bc = n2dot(&gj.bb, &gj.cc) * 2.0;
    let spread = bb_cc.value().hypot(two_bc.value());
    let scale = 1.0 + n2dot(&gj.bb, &gj.bb).value() + n2dot(&gj.cc, &gj.cc).value();
    if spread <= tol.degeneracy_tol * scale {
        gj.near_circular = true;
    } else {
        let phi = Jet2::atan2(&two_bc, &bb_cc)? * 0.25;
        rotate(&mut gj, &phi);
    }
    Ok(gj)
}

impl GeometryJets {
    /// Ambient vector of a normal-coordinate pair.
    pub fn ambient(&self, v: &Normal2) -> Jet4 {
        jadd(&jscale(&self.n1, &v[0]), &jscale(&self.n2, &v[1]))
    }

    /// `J B / (H · J B)` in normal coordinates.
    pub fn c_normal(&self) -> Result<Normal2> {
        let jb = [-self.bb[1], self.bb[0]];
        let h_jb = n2dot(&self.h, &jb);
        if h_jb.value().abs() < 1e-12 {
            return Err(Error::DegenerateEllipse);
        }
        let inv = h_jb.recip()?;
        Ok(n2scale(&jb, &inv))
    }

    /// Ambient `c` after checking that the point is a regular semiumbilic point.
    pub fn c_ambient(&self, tol: &Tolerances) -> Result<Jet4> {
        let pg = PointGeometry::from_jets(self);
        match classify(&pg, tol).kind {
            PointClass::SemiumbilicRegular => {}
            PointClass::Inflection => return Err(Error::CUndefined("inflection point")),
            PointClass::Umbilic => {
                return Err(Error::CUndefined("inflection point (umbilic)"));
            }
            PointClass::Nondegenerate => return Err(Error::CUndefined("point is not semiumbilic")),
        }
        Ok(self.ambient(&self.c_normal()?))
    }

    /// Directional derivative of an ambient field along frame vector `a`.
    pub fn d_frame(&self, field: &Jet4, a: usize) -> Jet4 {
        let p = &self.frame_chart[a];
        jadd(&jscale(&jd(field, 0), &p[0]), &jscale(&jd(field, 1), &p[1]))
    }

    /// `Σ (b_a · D_{t_a} c) / (b_a · b_a) t_a` from `c` of order `self.order`;
    /// the result has order `self.order − 1`.
    pub fn j_component(&self, c: &Jet4) -> Result<Jet4> {
        let mut out = [Jet2::zero(self.order.saturating_sub(1)); 4];
        let t = [self.t1, self.t2];
        for a in 0..2 {
            let ba = self.ambient(&self.b[a]);
            let num = jdot(&ba, &self.d_frame(c, a));
            let den = jdot(&ba, &ba);
            let coef = num.try_div(&den)?;
            out = jadd(&out, &jscale(&t[a], &coef));
        }
        Ok(out)
    }

    /// `½ grad(c·c)` from `c` of order `self.order`; result order `self.order − 1`.
    pub fn j_gradient(&self, c: &Jet4) -> Result<Jet4> {
        let half = jdot(c, c) * 0.5;
        let (du, dv) = (half.du(), half.dv());
        let det = self.g[0] * self.g[2] - self.g[1] * self.g[1];
        let inv = det.recip()?;
        let ju = (self.g[2] * du - self.g[1] * dv) * inv;
        let jv = (self.g[0] * dv - self.g[1] * du) * inv;
        Ok(jadd(&jscale(&self.xu, &ju), &jscale(&self.xv, &jv)))
    }

    /// Normal projection of an ambient vector jet.
    pub fn normal_part(&self, v: &Jet4) -> Jet4 {
        jadd(
            &jscale(&self.n1, &jdot(v, &self.n1)),
            &jscale(&self.n2, &jdot(v, &self.n2)),
        )
    }

    pub fn tangent_part(&self, v: &Jet4) -> Jet4 {
        jsub(v, &self.normal_part(v))
    }

    /// The pointwise data.
    pub fn values(&self) -> PointGeometry {
        PointGeometry::from_jets(self)
    }

    /// Scalar multiple helper.
    pub fn scaled(v: &Jet4, s: f64) -> Jet4 {
        jscale_f(v, s)
    }
}

/// Differential geometry at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGeometry {
    pub point: Vec4,
    pub t1: Vec4,
    pub t2: Vec4,
    pub n1: Vec4,
    pub n2: Vec4,
    /// `[[g_uu, g_uv], [g_uv, g_vv]]`
    pub g: [[f64; 2]; 2],
    /// `b1, b2, b3` in `(n1, n2)` coordinates.
    pub alpha: [Vec2; 3],
    pub h: Vec2,
    pub b: Vec2,
    pub c: Vec2,
    pub gauss_k: f64,
    pub normal_k_indicator: f64,
    /// Columns `x_u`, `x_v`.
    pub jacobian: [Vec4; 2],
    /// Second derivatives `x_uu, x_uv, x_vv`.
    pub second: [Vec4; 3],
    /// Angle of `t1` from `x_u`.
    pub frame_angle: f64,
    /// Alignment was skipped because the ellipse is (nearly) a circle.
    pub near_circular: bool,
}

fn v2(a: &Normal2) -> Vec2 {
    [a[0].value(), a[1].value()]
}

fn dot2(a: &Vec2, b: &Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl PointGeometry {
    pub fn from_jets(gj: &GeometryJets) -> Self {
        let alpha = [v2(&gj.b[0]), v2(&gj.b[1]), v2(&gj.b[2])];
        let (h, b, c) = (v2(&gj.h), v2(&gj.bb), v2(&gj.cc));
        PointGeometry {
            point: jvalue(&gj.point),
            t1: jvalue(&gj.t1),
            t2: jvalue(&gj.t2),
            n1: jvalue(&gj.n1),
            n2: jvalue(&gj.n2),
            g: [[gj.g[0].value(), gj.g[1].value()], [gj.g[1].value(), gj.g[2].value()]],
            alpha,
            h,
            b,
            c,
            gauss_k: dot2(&alpha[0], &alpha[1]) - dot2(&alpha[2], &alpha[2]),
            normal_k_indicator: b[0] * c[1] - b[1] * c[0],
            jacobian: [jvalue(&gj.xu), jvalue(&gj.xv)],
            second: [jvalue(&gj.second[0]), jvalue(&gj.second[1]), jvalue(&gj.second[2])],
            frame_angle: gj.frame_angle.value(),
            near_circular: gj.near_circular,
        }
    }

    /// Ambient vector of normal coordinates.
    pub fn ambient(&self, v: Vec2) -> Vec4 {
        linalg::axpy(&linalg::scale(&self.n1, v[0]), v[1], &self.n2)
    }

    /// Largest deviation of `(t1, t2, n1, n2)` from an orthonormal frame.
    pub fn frame_defect(&self) -> f64 {
        let f = [self.t1, self.t2, self.n1, self.n2];
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in a..4 {
                let want = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((linalg::dot(&f[a], &f[b]) - want).abs());
            }
        }
        worst
    }
}

/// Geometry at `at` of an immersion whose path-integrated state there is `state`.
pub fn point_geometry_with_state(
    imm: &dyn Immersion,
    at: Vec2,
    state: &[f64],
    tol: &Tolerances,
) -> Result<PointGeometry> {
    geometry_jets_at(imm, at, state, 0, tol).map(|g| g.values())
}

/// Geometry jets of order `order` at `at`.
pub fn geometry_jets_at(
    imm: &dyn Immersion,
    at: Vec2,
    state: &[f64],
    order: usize,
    tol: &Tolerances,
) -> Result<GeometryJets> {
    check_order(order + 2, imm.max_order())?;
    let x = imm.jets(at, state, order + 2)?;
    geometry_jets(&x, 0.0, tol).map_err(|e| match e {
        Error::NotImmersion(..) => Error::NotImmersion(at[0], at[1]),
        e => e,
    })
}

/// Geometry of a stateless surface at `at`.
pub fn point_geometry(imm: &dyn Immersion, at: Vec2, tol: &Tolerances) -> Result<PointGeometry> {
    point_geometry_with_state(imm, at, &[], tol)
}

/// `H + B cos 2θ + C sin 2θ` in normal coordinates.
pub fn eta_of_theta(pg: &PointGeometry, theta: f64) -> Vec2 {
    let (c2, s2) = ((2.0 * theta).cos(), (2.0 * theta).sin());
    [
        pg.h[0] + pg.b[0] * c2 + pg.c[0] * s2,
        pg.h[1] + pg.b[1] * c2 + pg.c[1] * s2,
    ]
}

/// `b1·b2 − b3·b3`
pub fn gauss_curvature(pg: &PointGeometry) -> f64 {
    pg.gauss_k
}

/// `|B · J C|`
pub fn normal_degeneracy(pg: &PointGeometry) -> f64 {
    pg.normal_k_indicator.abs()
}

/// `η(t1) · η(t2)`; vanishes at semiumbilic points exactly when the tangent
/// curvature does.
pub fn flat_tangent_indicator(pg: &PointGeometry) -> f64 {
    dot2(&pg.alpha[0], &pg.alpha[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Umbilic,
    SemiumbilicRegular,
    Inflection,
    Nondegenerate,
}

impl PointClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PointClass::Umbilic => "umbilic",
            PointClass::SemiumbilicRegular => "semiumbilic_regular",
            PointClass::Inflection => "inflection",
            PointClass::Nondegenerate => "nondegenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub kind: PointClass,
    /// Asymptotic directions as angles from `x_u`, in `[0, π)`.
    pub asymptotic_angles: Vec<f64>,
    /// Distance from the origin of the normal plane to the line carrying
    /// the degenerate ellipse (`|H|` at umbilics).
    pub ellipse_line_distance: f64,
    /// Umbilic points whose ellipse sits at the origin also count as inflections.
    pub inflection: bool,
}

pub fn classify(pg: &PointGeometry, tol: &Tolerances) -> Classification {
    let eps = tol.degeneracy_tol;
    let nb = dot2(&pg.b, &pg.b).sqrt();
    let nc = dot2(&pg.c, &pg.c).sqrt();
    let nh = dot2(&pg.h, &pg.h).sqrt();
    let distance = if nb > eps {
        (pg.h[0] * pg.b[1] - pg.h[1] * pg.b[0]).abs() / nb
    } else {
        nh
    };
    let line_through_origin = distance < eps * (1.0 + nh);
    let angles = || {
        let pi = std::f64::consts::PI;
        let a = pg.frame_angle.rem_euclid(pi);
        let mut v = vec![a, (a + 0.5 * pi).rem_euclid(pi)];
        v.sort_by(f64::total_cmp);
        v
    };
    let (kind, asymptotic_angles, inflection) = if nb < eps && nc < eps {
        (PointClass::Umbilic, vec![], line_through_origin)
    } else if nc < eps {
        if line_through_origin {
            (PointClass::Inflection, angles(), true)
        } else {
            (PointClass::SemiumbilicRegular, angles(), false)
        }
    } else {
        (PointClass::Nondegenerate, vec![], false)
    };
    Classification {
        kind,
        asymptotic_angles,
        ellipse_line_distance: distance,
        inflection,
    }
}

/// `c` from `JB / (H·JB)` and from the nearest point `n` of the ellipse line,
/// `c = n / (n·n)`, both ambient.
pub fn c_two_ways(pg: &PointGeometry, tol: &Tolerances) -> Result<(Vec4, Vec4)> {
    match classify(pg, tol).kind {
        PointClass::SemiumbilicRegular => {}
        PointClass::Nondegenerate => return Err(Error::CUndefined("point is not semiumbilic")),
        PointClass::Umbilic => return Err(Error::CUndefined("inflection point (umbilic)")),
        PointClass::Inflection => return Err(Error::CUndefined("inflection point")),
    }
    let jb = [-pg.b[1], pg.b[0]];
    let h_jb = dot2(&pg.h, &jb);
    if h_jb.abs() < 1e-12 {
        return Err(Error::DegenerateEllipse);
    }
    let c1 = [jb[0] / h_jb, jb[1] / h_jb];
    let bhat = {
        let n = dot2(&pg.b, &pg.b).sqrt();
        [pg.b[0] / n, pg.b[1] / n]
    };
    let s = dot2(&pg.h, &bhat);
    let near = [pg.h[0] - s * bhat[0], pg.h[1] - s * bhat[1]];
    let nn = dot2(&near, &near);
    let c2 = [near[0] / nn, near[1] / nn];
    Ok((pg.ambient(c1), pg.ambient(c2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::{Domain, PlaneCurve, SurfaceSpec};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn dom() -> Domain {
        Domain::new(-3.0, 3.0, -3.0, 3.0).unwrap()
    }

    fn torus() -> Arc<dyn Immersion> {
        SurfaceSpec::Product {
            domain: dom(),
            curve1: PlaneCurve::Circle {
                r: 1.0,
                arc_length: true,
            },
            curve2: PlaneCurve::Circle {
                r: 1.0,
                arc_length: true,
            },
        }
        .build()
        .unwrap()
    }

    fn expr(c: [&str; 4]) -> Arc<dyn Immersion> {
        SurfaceSpec::Expression {
            domain: dom(),
            components: c.map(String::from),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn clifford_torus_geometry() {
        let tol = Tolerances::default();
        let s = torus();
        for at in [[0.0, 0.0], [0.7, -1.3], [2.1, 0.4]] {
            let pg = point_geometry(s.as_ref(), at, &tol).unwrap();
            let (u, v) = (at[0], at[1]);
            assert!((pg.g[0][0] - 1.0).abs() < 1e-14 && pg.g[0][1].abs() < 1e-14);
            assert!((pg.g[1][1] - 1.0).abs() < 1e-14);
            // per-factor curvature vector −x/r²
            let b1 = pg.ambient(pg.alpha[0]);
            let b2 = pg.ambient(pg.alpha[1]);
            let want1 = [-u.cos(), -u.sin(), 0.0, 0.0];
            let want2 = [0.0, 0.0, -v.cos(), -v.sin()];
            for k in 0..4 {
                assert!((b1[k] - want1[k]).abs() < 1e-13);
                assert!((b2[k] - want2[k]).abs() < 1e-13);
            }
            assert!((dot2(&pg.h, &pg.h) - 0.5).abs() < 1e-13);
            assert!((dot2(&pg.b, &pg.b) - 0.5).abs() < 1e-13);
            assert!(dot2(&pg.c, &pg.c) < 1e-26);
            assert!(gauss_curvature(&pg).abs() < 1e-14);
            assert!(normal_degeneracy(&pg) < 1e-14);
            assert!(pg.frame_defect() < 1e-12);
        }
        let pg = point_geometry(s.as_ref(), [0.0, 0.0], &tol).unwrap();
        // frame n1 = e1 (outward) so b1 = (−1, 0), b2 = (0, −1)
        assert!((pg.alpha[0][0] + 1.0).abs() < 1e-14 && pg.alpha[0][1].abs() < 1e-14);
        assert!((pg.alpha[1][1] + 1.0).abs() < 1e-14 && pg.alpha[1][0].abs() < 1e-14);
    }

    #[test]
    fn plane_is_umbilic_inflection() {
        let tol = Tolerances::default();
        let pg = point_geometry(expr(["u", "v", "0", "0"]).as_ref(), [0.3, 0.2], &tol).unwrap();
        assert_eq!(pg.alpha, [[0.0; 2]; 3]);
        assert_eq!(gauss_curvature(&pg), 0.0);
        assert_eq!(normal_degeneracy(&pg), 0.0);
        let cl = classify(&pg, &tol);
        assert_eq!(cl.kind, PointClass::Umbilic);
        assert!(cl.inflection);
        assert!(cl.asymptotic_angles.is_empty());
        assert!(matches!(c_two_ways(&pg, &tol), Err(Error::CUndefined(_))));
    }

    #[test]
    fn graph_surface_has_circular_ellipse() {
        let tol = Tolerances::default();
        let s = expr(["u", "v", "u^2 - v^2", "2*u*v"]);
        let pg = point_geometry(s.as_ref(), [0.0, 0.0], &tol).unwrap();
        // brute-force η(θ) = (x_uu cos² + 2 x_uv cos sin + x_vv sin²)⊥ over a θ grid
        let mut rmin = f64::INFINITY;
        let mut rmax: f64 = 0.0;
        let mut centroid = [0.0; 4];
        for k in 0..360 {
            let th = k as f64 * PI / 180.0;
            let (c, s) = (th.cos(), th.sin());
            let eta: Vec4 = std::array::from_fn(|m| {
                pg.second[0][m] * c * c + 2.0 * pg.second[1][m] * c * s + pg.second[2][m] * s * s
            });
            let r = linalg::norm(&eta);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            for m in 0..4 {
                centroid[m] += eta[m] / 360.0;
            }
        }
        assert!((rmin - 2.0).abs() < 1e-12 && (rmax - 2.0).abs() < 1e-12);
        assert!(linalg::norm(&centroid) < 1e-12);
        assert!((dot2(&pg.b, &pg.b) - 4.0).abs() < 1e-12);
        assert!((dot2(&pg.c, &pg.c) - 4.0).abs() < 1e-12);
        assert!(dot2(&pg.b, &pg.c).abs() < 1e-12);
        assert!(dot2(&pg.h, &pg.h) < 1e-24);
        assert!(pg.near_circular);
        assert_eq!(classify(&pg, &tol).kind, PointClass::Nondegenerate);
    }

    #[test]
    fn eta_endpoints() {
        let tol = Tolerances::default();
        let s = SurfaceSpec::Product {
            domain: dom(),
            curve1: PlaneCurve::Ellipse { a: 2.0, b: 1.0 },
            curve2: PlaneCurve::Ellipse { a: 3.0, b: 1.0 },
        }
        .build()
        .unwrap();
        let pg = point_geometry(s.as_ref(), [0.4, 1.1], &tol).unwrap();
        let e0 = eta_of_theta(&pg, 0.0);
        let e90 = eta_of_theta(&pg, PI / 2.0);
        let e45 = eta_of_theta(&pg, PI / 4.0);
        for k in 0..2 {
            assert!((e0[k] - pg.alpha[0][k]).abs() < 1e-14);
            assert!((e90[k] - pg.alpha[1][k]).abs() < 1e-14);
            assert!((e45[k] - (pg.h[k] + pg.c[k])).abs() < 1e-14);
        }
    }

    #[test]
    fn clifford_classification() {
        let tol = Tolerances::default();
        let pg = point_geometry(torus().as_ref(), [0.5, 0.9], &tol).unwrap();
        let cl = classify(&pg, &tol);
        assert_eq!(cl.kind, PointClass::SemiumbilicRegular);
        assert_eq!(cl.asymptotic_angles.len(), 2);
        let d = cl.asymptotic_angles[1] - cl.asymptotic_angles[0];
        assert!((d - PI / 2.0).abs() < 1e-12);
        assert!((cl.ellipse_line_distance - 0.5f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn round_sphere_in_three_plane() {
        let tol = Tolerances::default();
        let r = 2.0;
        let s = expr(["2*sin(u)*cos(v)", "2*sin(u)*sin(v)", "2*cos(u)", "0"]);
        let pg = point_geometry(s.as_ref(), [1.1, 0.3], &tol).unwrap();
        assert!((gauss_curvature(&pg) - 1.0 / (r * r)).abs() < 1e-13);
        assert!(normal_degeneracy(&pg) < 1e-14);
    }

    #[test]
    fn rank_deficient_point_is_rejected() {
        let tol = Tolerances::default();
        let s = expr(["u^2", "v", "0", "0"]);
        assert!(matches!(
            point_geometry(s.as_ref(), [0.0, 0.5], &tol),
            Err(Error::NotImmersion(..))
        ));
    }
}
