//! Surface definitions: built-in product families, user expressions and
//! sampled grids, all evaluated to jets of the four ambient coordinates.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::{parse_curve_expression, parse_expression, BinaryOp, ExprAst, UnaryOp, Var};
use crate::jets::{fd_jet, Bounds, FdConfig, Jet2, MAX_ORDER};
use crate::{Error, Jet4, Result, Vec2, Vec4};

/// Chart rectangle `[u0, u1] × [v0, v1]`, serialized as `[u0, u1, v0, v1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct Domain {
    pub u: [f64; 2],
    pub v: [f64; 2],
}

impl Domain {
    pub fn new(u0: f64, u1: f64, v0: f64, v1: f64) -> Result<Self> {
        if !(u0 < u1 && v0 < v1) || ![u0, u1, v0, v1].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "empty or non-finite domain [{u0}, {u1}] x [{v0}, {v1}]"
            )));
        }
        Ok(Domain {
            u: [u0, u1],
            v: [v0, v1],
        })
    }

    pub fn contains(&self, at: Vec2) -> bool {
        let su = 1e-12 * (self.u[1] - self.u[0]);
        let sv = 1e-12 * (self.v[1] - self.v[0]);
        at[0] >= self.u[0] - su && at[0] <= self.u[1] + su && at[1] >= self.v[0] - sv && at[1] <= self.v[1] + sv
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { u: self.u, v: self.v }
    }
}

impl TryFrom<[f64; 4]> for Domain {
    type Error = Error;
    fn try_from(a: [f64; 4]) -> Result<Self> {
        Domain::new(a[0], a[1], a[2], a[3])
    }
}

impl From<Domain> for [f64; 4] {
    fn from(d: Domain) -> Self {
        [d.u[0], d.u[1], d.v[0], d.v[1]]
    }
}

/// Plane curve `t ↦ (x(t), y(t))`, in its natural parametrization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlaneCurve {
    Circle {
        r: f64,
        /// Parametrize by arc length, `(r cos(t/r), r sin(t/r))`.
        #[serde(default)]
        arc_length: bool,
    },
    Ellipse {
        a: f64,
        b: f64,
    },
    /// Component expressions in the parameter `t`.
    Expression {
        x: String,
        y: String,
    },
}

impl PlaneCurve {
    fn validate(&self) -> Result<()> {
        match self {
            PlaneCurve::Circle { r, .. } if !(*r > 0.0) => {
                Err(Error::InvalidSpec(format!("circle radius must be positive, got {r}")))
            }
            PlaneCurve::Ellipse { a, b } if !(*a >= *b && *b > 0.0) => Err(Error::InvalidSpec(format!(
                "ellipse needs a >= b > 0, got a = {a}, b = {b}"
            ))),
            _ => Ok(()),
        }
    }

    /// Component ASTs in the variable `u`.
    fn components(&self) -> Result<[ExprAst; 2]> {
        self.validate()?;
        let c = |x: f64| Box::new(ExprAst::Const(x));
        let t = || Box::new(ExprAst::Var(Var::U));
        let trig = |op, arg: Box<ExprAst>| Box::new(ExprAst::Unary(op, arg));
        let mul = |a, b| ExprAst::Binary(BinaryOp::Mul, a, b);
        Ok(match self {
            PlaneCurve::Circle { r, arc_length } => {
                let arg = if *arc_length {
                    Box::new(ExprAst::Binary(BinaryOp::Div, t(), c(*r)))
                } else {
                    t()
                };
                [
                    mul(c(*r), trig(UnaryOp::Cos, arg.clone())),
                    mul(c(*r), trig(UnaryOp::Sin, arg)),
                ]
            }
            PlaneCurve::Ellipse { a, b } => [mul(c(*a), trig(UnaryOp::Cos, t())), mul(c(*b), trig(UnaryOp::Sin, t()))],
            PlaneCurve::Expression { x, y } => [parse_curve_expression(x)?, parse_curve_expression(y)?],
        })
    }
}

fn u_to_v(e: &ExprAst) -> ExprAst {
    match e {
        ExprAst::Var(Var::U) => ExprAst::Var(Var::V),
        ExprAst::Const(_) | ExprAst::Var(Var::V) => e.clone(),
        ExprAst::Unary(op, a) => ExprAst::Unary(*op, Box::new(u_to_v(a))),
        ExprAst::Binary(op, a, b) => ExprAst::Binary(*op, Box::new(u_to_v(a)), Box::new(u_to_v(b))),
    }
}

/// Serializable description of an immersion `(u, v) → R⁴`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SurfaceSpec {
    /// `curve1(u) × curve2(v)`, laid out as `(x1, x2)` from curve 1 and `(x3, x4)` from curve 2.
    Product {
        domain: Domain,
        curve1: PlaneCurve,
        curve2: PlaneCurve,
    },
    Expression {
        domain: Domain,
        components: [String; 4],
    },
    /// Grid of points, row-major with `u` varying fastest: `points[j * nu + i]`.
    Sampled {
        domain: Domain,
        nu: usize,
        nv: usize,
        points: Vec<Vec4>,
    },
}

impl SurfaceSpec {
    pub fn domain(&self) -> Domain {
        match self {
            SurfaceSpec::Product { domain, .. }
            | SurfaceSpec::Expression { domain, .. }
            | SurfaceSpec::Sampled { domain, .. } => *domain,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn build(&self) -> Result<Arc<dyn Immersion>> {
        Ok(match self {
            SurfaceSpec::Product { domain, curve1, curve2 } => {
                let [a, b] = curve1.components()?;
                let [c, d] = curve2.components()?;
                Arc::new(ExprSurface {
                    domain: *domain,
                    components: [a, b, u_to_v(&c), u_to_v(&d)],
                })
            }
            SurfaceSpec::Expression { domain, components } => {
                let mut parsed = Vec::with_capacity(4);
                for c in components {
                    parsed.push(parse_expression(c)?);
                }
                Arc::new(ExprSurface {
                    domain: *domain,
                    components: parsed.try_into().unwrap(),
                })
            }
            SurfaceSpec::Sampled { domain, nu, nv, points } => {
                Arc::new(SampledSurface::new(*domain, *nu, *nv, points.clone())?)
            }
        })
    }

    /// Rebuild a sampled surface from a `u,v,x1,x2,x3,x4[,...]` mesh CSV.
    pub fn from_mesh_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidSpec(m);
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || n == 0 && line.starts_with('u') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 6 {
                return Err(bad(format!("line {}: expected at least 6 columns", n + 1)));
            }
            let mut vals = [0.0; 6];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = f[k]
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("line {}: bad number '{}'", n + 1, f[k])))?;
            }
            rows.push(vals);
        }
        let distinct = |k: usize| {
            let mut xs: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            xs
        };
        let (us, vs) = (distinct(0), distinct(1));
        let (nu, nv) = (us.len(), vs.len());
        if nu * nv != rows.len() {
            return Err(bad(format!(
                "mesh is not a complete grid ({} rows for {nu} x {nv})",
                rows.len()
            )));
        }
        let mut points = vec![[f64::NAN; 4]; nu * nv];
        for r in &rows {
            let i = us.binary_search_by(|x| x.total_cmp(&r[0])).unwrap();
            let j = vs.binary_search_by(|x| x.total_cmp(&r[1])).unwrap();
            points[j * nu + i] = [r[2], r[3], r[4], r[5]];
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(bad("mesh contains non-finite or missing points".into()));
        }
        Ok(SurfaceSpec::Sampled {
            domain: Domain::new(us[0], us[nu - 1], vs[0], vs[nv - 1])?,
            nu,
            nv,
            points,
        })
    }
}

/// A map from the chart into R⁴ that can be expanded into jets.
///
/// Some maps depend on fields obtained by parallel transport (for example
/// `id − e`); those carry a `state` vector of path-integrated values which
/// the caller supplies at the evaluation point. `state_jets` gives the local
/// expansion of that state, which is what transport integrates.
pub trait Immersion: Send + Sync {
    fn domain(&self) -> Domain;

    /// Highest jet order [`Immersion::jets`] can produce.
    fn max_order(&self) -> usize;

    fn jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Jet4>;

    /// Highest order whose jets are exact rather than finite differences.
    fn exact_order(&self) -> usize {
        self.max_order()
    }

    fn state_dim(&self) -> usize {
        0
    }

    /// Highest order available from [`Immersion::state_jets`]; at least 1 when
    /// the state is non-empty and transport is possible.
    fn state_max_order(&self) -> usize {
        MAX_ORDER
    }

    fn state_jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Vec<Jet2>> {
        let _ = (at, state);
        let _ = order;
        Ok(Vec::new())
    }

    /// Whether integration may continue through this point.
    fn state_valid(&self, _at: Vec2, _state: &[f64]) -> bool {
        true
    }

    /// Region finite-difference stencils must stay inside, if any.
    fn fd_bounds(&self) -> Option<Bounds> {
        None
    }
}

pub(crate) fn check_order(order: usize, available: usize) -> Result<()> {
    if order > available {
        Err(Error::OrderUnavailable {
            requested: order,
            available,
        })
    } else {
        Ok(())
    }
}

/// Surface given by four analytic component expressions.
#[derive(Debug, Clone)]
pub struct ExprSurface {
    pub domain: Domain,
    pub components: [ExprAst; 4],
}

impl Immersion for ExprSurface {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn max_order(&self) -> usize {
        MAX_ORDER
    }

    fn jets(&self, at: Vec2, _state: &[f64], order: usize) -> Result<Jet4> {
        check_order(order, MAX_ORDER)?;
        let (u, v) = Jet2::coords(at, order);
        let mut out = [Jet2::zero(order); 4];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval_jet(&u, &v)?;
        }
        Ok(out)
    }
}

/// Grid of R⁴ points, interpolated by local bicubic (4×4 Lagrange) patches
/// and differentiated by finite differences.
///
/// The patch is chosen from the evaluation point, so every stencil point of
/// one finite-difference evaluation sees the same cubic polynomial.
#[derive(Debug, Clone)]
pub struct SampledSurface {
    domain: Domain,
    nu: usize,
    nv: usize,
    points: Vec<Vec4>,
    fd: FdConfig,
}

fn lagrange4(s: f64) -> [f64; 4] {
    // nodes at 0, 1, 2, 3
    [
        -(s - 1.0) * (s - 2.0) * (s - 3.0) / 6.0,
        s * (s - 2.0) * (s - 3.0) / 2.0,
        -s * (s - 1.0) * (s - 3.0) / 2.0,
        s * (s - 1.0) * (s - 2.0) / 6.0,
    ]
}

impl SampledSurface {
    pub fn new(domain: Domain, nu: usize, nv: usize, points: Vec<Vec4>) -> Result<Self> {
        if nu < 4 || nv < 4 {
            return Err(Error::InvalidSpec(format!(
                "sampled surface needs at least 4 x 4 points, got {nu} x {nv}"
            )));
        }
        if points.len() != nu * nv {
            return Err(Error::InvalidSpec(format!(
                "sampled surface has {} points, expected {}",
                points.len(),
                nu * nv
            )));
        }
        Ok(SampledSurface {
            domain,
            nu,
            nv,
            points,
            fd: FdConfig::default(),
        })
    }

    fn patch_origin(&self, at: Vec2) -> (usize, usize) {
        let su = (at[0] - self.domain.u[0]) / (self.domain.u[1] - self.domain.u[0]) * (self.nu - 1) as f64;
        let sv = (at[1] - self.domain.v[0]) / (self.domain.v[1] - self.domain.v[0]) * (self.nv - 1) as f64;
        let i0 = (su.floor() as i64 - 1).clamp(0, self.nu as i64 - 4) as usize;
        let j0 = (sv.floor() as i64 - 1).clamp(0, self.nv as i64 - 4) as usize;
        (i0, j0)
    }

    fn eval_patch(&self, origin: (usize, usize), q: Vec2) -> Vec4 {
        let hu = (self.domain.u[1] - self.domain.u[0]) / (self.nu - 1) as f64;
        let hv = (self.domain.v[1] - self.domain.v[0]) / (self.nv - 1) as f64;
        let su = (q[0] - self.domain.u[0]) / hu - origin.0 as f64;
        let sv = (q[1] - self.domain.v[0]) / hv - origin.1 as f64;
        let (wu, wv) = (lagrange4(su), lagrange4(sv));
        let mut out = [0.0; 4];
        for (b, wb) in wv.iter().enumerate() {
            for (a, wa) in wu.iter().enumerate() {
                let p = &self.points[(origin.1 + b) * self.nu + origin.0 + a];
                for k in 0..4 {
                    out[k] += wa * wb * p[k];
                }
            }
        }
        out
    }

    pub fn interpolate(&self, at: Vec2) -> Vec4 {
        self.eval_patch(self.patch_origin(at), at)
    }
}

impl Immersion for SampledSurface {
    fn domain(&self) -> Domain {
        self.domain
    }

    fn max_order(&self) -> usize {
        2
    }

    fn exact_order(&self) -> usize {
        0
    }

    fn jets(&self, at: Vec2, _state: &[f64], order: usize) -> Result<Jet4> {
        check_order(order, 2)?;
        let origin = self.patch_origin(at);
        let bounds = self.domain.bounds();
        let j = fd_jet(
            |q| Ok::<_, Error>(self.eval_patch(origin, q).to_vec()),
            at,
            order,
            &self.fd,
            Some(&bounds),
        )?;
        Ok([j[0], j[1], j[2], j[3]])
    }

    fn fd_bounds(&self) -> Option<Bounds> {
        Some(self.domain.bounds())
    }
}

/// Jets of the four coordinate functions of `surface` at `at`.
pub fn eval_surface(surface: &dyn Immersion, at: Vec2, order: usize) -> Result<Jet4> {
    if !surface.domain().contains(at) {
        return Err(Error::OutOfDomain(at[0], at[1]));
    }
    check_order(order, surface.max_order())?;
    surface.jets(at, &[], order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn product(c1: PlaneCurve, c2: PlaneCurve) -> Arc<dyn Immersion> {
        SurfaceSpec::Product {
            domain: Domain::new(-4.0, 4.0, -4.0, 4.0).unwrap(),
            curve1: c1,
            curve2: c2,
        }
        .build()
        .unwrap()
    }

    #[test]
    fn clifford_torus_point() {
        let s = product(
            PlaneCurve::Circle {
                r: 1.0,
                arc_length: false,
            },
            PlaneCurve::Circle {
                r: 1.0,
                arc_length: false,
            },
        );
        let x = eval_surface(s.as_ref(), [0.0, 0.0], 0).unwrap();
        assert_eq!(x.map(|j| j.value()), [1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn ellipse_product_derivatives() {
        let s = product(
            PlaneCurve::Ellipse { a: 2.0, b: 1.0 },
            PlaneCurve::Ellipse { a: 3.0, b: 1.0 },
        );
        let x = eval_surface(s.as_ref(), [0.0, 0.0], 2).unwrap();
        assert_eq!(x.map(|j| j.value()), [2.0, 0.0, 3.0, 0.0]);
        // d/dt (2 cos t, sin t) at 0 = (0, 1)
        assert_eq!(x.map(|j| j.partial(1, 0)), [0.0, 1.0, 0.0, 0.0]);
        assert_eq!(x.map(|j| j.partial(0, 1)), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(x[0].partial(2, 0), -2.0);
    }

    #[test]
    fn expression_surface_plane() {
        let spec = SurfaceSpec::Expression {
            domain: Domain::new(0.0, 5.0, 0.0, 5.0).unwrap(),
            components: ["u".into(), "v".into(), "0".into(), "0".into()],
        };
        let s = spec.build().unwrap();
        let x = eval_surface(s.as_ref(), [3.0, 4.0], 1).unwrap();
        assert_eq!(x.map(|j| j.value()), [3.0, 4.0, 0.0, 0.0]);
        assert_eq!(x.map(|j| j.partial(1, 0)), [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            eval_surface(s.as_ref(), [6.0, 0.0], 0),
            Err(Error::OutOfDomain(..))
        ));
    }

    #[test]
    fn product_jets_factor() {
        let s = product(
            PlaneCurve::Ellipse { a: 2.0, b: 1.0 },
            PlaneCurve::Expression {
                x: "t".into(),
                y: "cosh(t)".into(),
            },
        );
        let x = eval_surface(s.as_ref(), [0.4, -0.3], 4).unwrap();
        for d in 1..=4 {
            for j in 1..=d {
                assert_eq!(x[0].coeff(d - j, j), 0.0);
                assert_eq!(x[1].coeff(d - j, j), 0.0);
            }
            for i in 1..=d {
                assert_eq!(x[2].coeff(i, d - i), 0.0);
                assert_eq!(x[3].coeff(i, d - i), 0.0);
            }
        }
    }

    #[test]
    fn spec_validation() {
        let bad = SurfaceSpec::Product {
            domain: Domain::new(0.0, 1.0, 0.0, 1.0).unwrap(),
            curve1: PlaneCurve::Ellipse { a: 1.0, b: 2.0 },
            curve2: PlaneCurve::Circle {
                r: 1.0,
                arc_length: false,
            },
        };
        assert!(bad.build().is_err());
        assert!(Domain::new(1.0, 0.0, 0.0, 1.0).is_err());
        let json = r#"{"kind":"expression","domain":[0,1,0,1],"components":["u","v","0","0"],"extra":1}"#;
        assert!(SurfaceSpec::from_json(json).is_err());
        let json = r#"{"kind":"product","domain":[0,1,0,1],"curve1":{"kind":"circle","r":1,"arc_length":true},"curve2":{"kind":"ellipse","a":2,"b":1}}"#;
        let spec = SurfaceSpec::from_json(json).unwrap();
        assert!(spec.build().is_ok());
        let back: SurfaceSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn sampled_surface_reproduces_cubics() {
        // bicubic patches reproduce cubic polynomials exactly
        let dom = Domain::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let (nu, nv) = (9, 7);
        let f = |u: f64, v: f64| [u, v, u * u * v - v * v * v, u * u * u + u * v];
        let mut pts = Vec::new();
        for j in 0..nv {
            for i in 0..nu {
                pts.push(f(i as f64 / (nu - 1) as f64, j as f64 / (nv - 1) as f64));
            }
        }
        let s = SampledSurface::new(dom, nu, nv, pts).unwrap();
        let x = s.jets([0.37, 0.61], &[], 2).unwrap();
        let want = f(0.37, 0.61);
        for k in 0..4 {
            assert!((x[k].value() - want[k]).abs() < 1e-13);
        }
        // ∂²/∂u² (u²v − v³) = 2v
        assert!((x[2].partial(2, 0) - 2.0 * 0.61).abs() < 1e-6);
        assert!((x[3].partial(1, 1) - 1.0).abs() < 1e-6);
        assert!(s.jets([0.37, 0.61], &[], 3).is_err());
        assert!(s.jets([0.0, 0.5], &[], 1).is_err());
    }
}
