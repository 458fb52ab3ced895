//! Canonical sections of a flat semiumbilical surface and the maps built
//! from them.
//!
//! * `c`: the normal section with `c·α = g`, read off the curvature ellipse.
//! * `j = ½ grad(c·c)`, equivalently `Σ (b_i·D_{t_i}c)/(b_i·b_i) t_i`.
//! * `e`: the tangent field with `∇⊤_X e = X`, i.e. `a E1 + b E2` for a
//!   parallel frame `(E1, E2)` and flat coordinates `(a, b)`.
//! * `k = −ẽ`, where `ẽ` is the `e`-field of the envelope `V = id − e`.
//!
//! `e`, `k` and parallel sections depend on path-integrated state. A
//! [`Derived`] map carries that state next to its source's state, so a map
//! like `id + t c − (1 − t) e` is itself an [`Immersion`] whose jets can be
//! fed back into the geometry pipeline.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{geometry_jets, GeometryJets, Tolerances};
use crate::grid::{Bundle, Grid, SectionField};
use crate::jets::{Bounds, Jet2};
use crate::linalg::{self, jadd, jd, jdot, jscale, jscale_f, jsub, jtruncate, jvalue};
use crate::surfaces::{check_order, Immersion};
use crate::transport::{integrate_jets, FdImmersion, Solution};
use crate::{Domain, Error, Jet4, Result, Vec2, Vec4};

/// RK4 substeps per grid edge.
pub const SUBSTEPS: usize = 2;

/// Coefficients of `c`, `j`, `e`, `k` in a derived map `id + …`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub c: f64,
    pub j: f64,
    pub e: f64,
    pub k: f64,
}

/// Which fields to evaluate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Want {
    pub c: bool,
    pub j: bool,
    pub e: bool,
    pub k: bool,
}

impl Want {
    pub const ALL: Want = Want {
        c: true,
        j: true,
        e: true,
        k: true,
    };
}

/// Extra jet orders of the source needed to produce each field.
fn need(want: Want, tangent_z: bool) -> usize {
    let mut n = 0;
    if want.c {
        n = n.max(2);
    }
    if want.j {
        n = n.max(3);
    }
    if want.e || tangent_z {
        n = n.max(1);
    }
    if want.k {
        n = n.max(2);
    }
    n
}

/// Metric data of coordinate jets `x` of order `X`: `g`, `g⁻¹` of order
/// `X − 1` and Christoffel symbols `Γ^k_ij` of order `X − 2`.
struct Metric {
    g: [[Jet2; 2]; 2],
    ginv: [[Jet2; 2]; 2],
    gamma: [[[Jet2; 2]; 2]; 2],
    d: [Jet4; 2],
    dd: [[Jet4; 2]; 2],
}

fn metric(x: &Jet4) -> Result<Metric> {
    debug_assert!(x[0].order() >= 2);
    let d = [jd(x, 0), jd(x, 1)];
    let duv = jd(&d[0], 1);
    let dd = [[jd(&d[0], 0), duv], [duv, jd(&d[1], 1)]];
    let g00 = jdot(&d[0], &d[0]);
    let g01 = jdot(&d[0], &d[1]);
    let g11 = jdot(&d[1], &d[1]);
    let inv = (g00 * g11 - g01 * g01).recip()?;
    let ginv = [[g11 * inv, -(g01 * inv)], [-(g01 * inv), g00 * inv]];
    let o = x[0].order() - 2;
    let mut gamma = [[[Jet2::zero(o); 2]; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let first = [jdot(&d[0], &dd[i][j]), jdot(&d[1], &dd[i][j])];
            for (k, gk) in gamma.iter_mut().enumerate() {
                gk[i][j] = ginv[k][0] * first[0] + ginv[k][1] * first[1];
            }
        }
    }
    Ok(Metric {
        g: [[g00, g01], [g01, g11]],
        ginv,
        gamma,
        d,
        dd,
    })
}

/// Derivatives of the chart state `(E1^1, E1^2, E2^1, E2^2, a, b)`:
/// parallel transport of the frame and integration of its coframe.
fn chart_rhs(m: &Metric, s: &[Jet2], du: &mut Vec<Jet2>, dv: &mut Vec<Jet2>) {
    for (i, out) in [du, dv].into_iter().enumerate() {
        for f in 0..2 {
            let e = [s[2 * f], s[2 * f + 1]];
            for k in 0..2 {
                out.push(-(m.gamma[k][i][0] * e[0] + m.gamma[k][i][1] * e[1]));
            }
        }
        for f in 0..2 {
            let e = [s[2 * f], s[2 * f + 1]];
            out.push(m.g[i][0] * e[0] + m.g[i][1] * e[1]);
        }
    }
}

/// Derivatives of a normal parallel section `Z`: `∂_i Z = −g^{kl}(Z·x_il) x_k`.
fn normal_rhs(m: &Metric, z: &[Jet2], du: &mut Vec<Jet2>, dv: &mut Vec<Jet2>) {
    let z: Jet4 = [z[0], z[1], z[2], z[3]];
    for (i, out) in [du, dv].into_iter().enumerate() {
        let zs = [jdot(&z, &m.dd[i][0]), jdot(&z, &m.dd[i][1])];
        let mut acc = [Jet2::zero(z[0].order()); 4];
        for k in 0..2 {
            let coef = m.ginv[k][0] * zs[0] + m.ginv[k][1] * zs[1];
            acc = jsub(&acc, &jscale(&m.d[k], &coef));
        }
        out.extend_from_slice(&acc);
    }
}

/// Ambient frame `(E1, E2)` from chart state jets and coordinate jets.
fn chart_frame(x: &Jet4, s: &[Jet2]) -> [Jet4; 2] {
    let (xu, xv) = (jd(x, 0), jd(x, 1));
    let amb = |c1: Jet2, c2: Jet2| jadd(&jscale(&xu, &c1), &jscale(&xv, &c2));
    [amb(s[0], s[1]), amb(s[2], s[3])]
}

/// `e = a E1 + b E2` (order `min(x.order − 1, s.order)`).
fn chart_e(x: &Jet4, s: &[Jet2]) -> Jet4 {
    let [e1, e2] = chart_frame(x, s);
    jadd(&jscale(&e1, &s[4]), &jscale(&e2, &s[5]))
}

/// Chart state at a point: Gram–Schmidt frame of `(x_u, x_v)` and flat
/// coordinates chosen so that `e` equals `offset` there.
fn chart_init(x: &Jet4, offset: &Vec4) -> Result<[f64; 6]> {
    let (xu, xv) = (jvalue(&jd(x, 0)), jvalue(&jd(x, 1)));
    let nu = linalg::norm(&xu);
    let t1 = linalg::scale(&xu, 1.0 / nu);
    let p = linalg::dot(&xv, &t1);
    let w = linalg::axpy(&xv, -p, &t1);
    let nw = linalg::norm(&w);
    if !(nu > 0.0 && nw > 1e-14 * (1.0 + nu)) {
        return Err(Error::NotImmersion(f64::NAN, f64::NAN));
    }
    let t2 = linalg::scale(&w, 1.0 / nw);
    Ok([
        1.0 / nu,
        0.0,
        -p / (nu * nw),
        1.0 / nw,
        linalg::dot(offset, &t1),
        linalg::dot(offset, &t2),
    ])
}

/// Offsets of the state blocks carried by a [`Derived`] map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    src: usize,
    chart: Option<usize>,
    zn: Option<usize>,
    chart_v: Option<usize>,
    len: usize,
}

/// Options of a [`Derived`] map beyond its mix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedOptions {
    /// Carry a flat chart even when the mix does not use `e`.
    pub chart: bool,
    /// Carry the envelope chart needed for `k`.
    pub k: bool,
    /// Add a parallel normal section (seeded through [`Gauge::z_seed`]).
    pub normal_z: bool,
    /// Add a parallel tangent section with these constant components in the
    /// parallel frame.
    pub tangent_z: Option<Vec2>,
    pub tol: Tolerances,
    /// Bound on `|C|` below which `c` is constructed.
    pub c_gate: f64,
}

impl Default for DerivedOptions {
    fn default() -> Self {
        let tol = Tolerances::default();
        DerivedOptions {
            chart: false,
            k: false,
            normal_z: false,
            tangent_z: None,
            tol,
            c_gate: tol.degeneracy_tol,
        }
    }
}

/// Initial values for the state a [`Derived`] map adds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Gauge {
    /// Value of `e` at the start node (tangent).
    pub e_offset: Vec4,
    /// Seed of the parallel normal section; projected onto the normal plane.
    pub z_seed: Option<Vec4>,
}

/// Jets of every field available at a point, all of one order.
#[derive(Debug, Clone)]
pub struct FieldJets {
    pub x: Jet4,
    pub geometry: Option<GeometryJets>,
    pub c: Option<Jet4>,
    pub j: Option<Jet4>,
    pub e: Option<Jet4>,
    pub k: Option<Jet4>,
    pub zn: Option<Jet4>,
    pub zt: Option<Jet4>,
}

/// The map `x + m_c c + m_j j + m_e e + m_k k (+ Z)` over a source immersion.
pub struct Derived {
    source: Arc<dyn Immersion>,
    mix: Mix,
    opts: DerivedOptions,
    layout: Layout,
}

impl Derived {
    pub fn new(source: Arc<dyn Immersion>, mix: Mix, opts: DerivedOptions) -> Result<Self> {
        let k = opts.k || mix.k != 0.0;
        let chart = opts.chart || k || mix.e != 0.0 || opts.tangent_z.is_some();
        let src = source.state_dim();
        let mut len = src;
        let mut take = |on: bool, n: usize| {
            on.then(|| {
                len += n;
                len - n
            })
        };
        let chart_at = take(chart, 6);
        let zn = take(opts.normal_z, 4);
        let chart_v = take(k, 6);
        let layout = Layout {
            src,
            chart: chart_at,
            zn,
            chart_v,
            len,
        };
        let d = Derived {
            source,
            mix,
            opts,
            layout,
        };
        let required = need(d.mix_want(), opts.tangent_z.is_some()).max(d.state_need());
        check_order(required, d.source.max_order())?;
        Ok(d)
    }

    pub fn source(&self) -> &Arc<dyn Immersion> {
        &self.source
    }

    pub fn mix(&self) -> Mix {
        self.mix
    }

    pub fn options(&self) -> &DerivedOptions {
        &self.opts
    }

    fn mix_want(&self) -> Want {
        Want {
            c: self.mix.c != 0.0,
            j: self.mix.j != 0.0,
            e: self.mix.e != 0.0,
            k: self.mix.k != 0.0,
        }
    }

    /// Source orders consumed by first-order state jets.
    fn state_need(&self) -> usize {
        if self.layout.chart_v.is_some() {
            3
        } else if self.layout.chart.is_some() || self.layout.zn.is_some() {
            2
        } else {
            0
        }
    }

    /// Fields this map can evaluate.
    pub fn available(&self) -> Want {
        Want {
            c: true,
            j: true,
            e: self.layout.chart.is_some(),
            k: self.layout.chart_v.is_some(),
        }
    }

    /// Same map without the envelope chart (and without `k` in the mix).
    fn without_k(&self) -> Result<Derived> {
        let mut opts = self.opts;
        opts.k = false;
        opts.chart = self.layout.chart.is_some();
        Derived::new(self.source.clone(), Mix { k: 0.0, ..self.mix }, opts)
    }

    fn gate_tol(&self) -> Tolerances {
        Tolerances {
            degeneracy_tol: self.opts.c_gate,
            ..self.opts.tol
        }
    }

    /// Jets of the added state: the chart and normal section at order `q_s`
    /// and, if `q_v` is given, the envelope chart at that order; `x` must
    /// have order `≥ q_s + 1` and `≥ q_v + 2`.
    fn own_state_jets(&self, x: &Jet4, own: &[f64], q_s: usize, q_v: Option<usize>) -> Result<Vec<Jet2>> {
        let l = &self.layout;
        let g1 = l.chart_v.unwrap_or(l.len) - l.src;
        let mut out = Vec::with_capacity(l.len - l.src);
        if g1 > 0 && q_s == 0 {
            out.extend(own[..g1].iter().map(|v| Jet2::constant(*v, 0)));
        } else if g1 > 0 {
            let m = metric(&jtruncate(x, q_s + 1))?;
            let has_chart = l.chart.is_some();
            let s1 = integrate_jets(&own[..g1], q_s, |s| {
                let (mut du, mut dv) = (Vec::with_capacity(g1), Vec::with_capacity(g1));
                let mut at = 0;
                if has_chart {
                    chart_rhs(&m, &s[..6], &mut du, &mut dv);
                    at = 6;
                }
                if g1 > at {
                    normal_rhs(&m, &s[at..at + 4], &mut du, &mut dv);
                }
                Ok((du, dv))
            })?;
            out.extend(s1);
        }
        if let (Some(_), Some(0)) = (l.chart_v, q_v) {
            out.extend(own[g1..].iter().map(|v| Jet2::constant(*v, 0)));
        } else if let (Some(_), Some(q_v)) = (l.chart_v, q_v) {
            let chart = &out[..6];
            let e = chart_e(&jtruncate(x, q_v + 2), chart);
            let v = jsub(&jtruncate(x, q_v + 1), &e);
            let m = metric(&v)?;
            let s2 = integrate_jets(&own[g1..], q_v, |s| {
                let (mut du, mut dv) = (Vec::with_capacity(6), Vec::with_capacity(6));
                chart_rhs(&m, s, &mut du, &mut dv);
                Ok((du, dv))
            })?;
            out.extend(s2);
        }
        Ok(out)
    }

    /// Evaluate the requested fields at order `r`.
    pub fn field_jets(&self, at: Vec2, state: &[f64], r: usize, want: Want) -> Result<FieldJets> {
        let l = self.layout;
        if (want.e && l.chart.is_none()) || (want.k && l.chart_v.is_none()) {
            return Err(Error::InvalidSpec("field not carried by this map".into()));
        }
        let tz = self.opts.tangent_z.is_some();
        let mut n = need(want, tz);
        if l.zn.is_some() {
            n = n.max(1);
        }
        let x = self.source.jets(at, &state[..l.src], r + n)?;
        let mut f = FieldJets {
            x: jtruncate(&x, r),
            geometry: None,
            c: None,
            j: None,
            e: None,
            k: None,
            zn: None,
            zt: None,
        };
        if want.c || want.j {
            let geo = r + want.j as usize;
            let gj = geometry_jets(&jtruncate(&x, geo + 2), 0.0, &self.opts.tol).map_err(|e| match e {
                Error::NotImmersion(..) => Error::NotImmersion(at[0], at[1]),
                e => e,
            })?;
            let c = gj.c_ambient(&self.gate_tol())?;
            if want.j {
                f.j = Some(gj.j_component(&c)?);
            }
            f.c = Some(jtruncate(&c, r));
            f.geometry = Some(gj);
        }
        if l.len > l.src && (want.e || want.k || tz || l.zn.is_some()) {
            let q_s = if want.k { r + 1 } else { r };
            let own = self.own_state_jets(&x, &state[l.src..], q_s, want.k.then_some(r))?;
            let mut at_off = 0;
            if l.chart.is_some() {
                let chart = &own[..6];
                if want.e {
                    f.e = Some(jtruncate(&chart_e(&x, chart), r));
                }
                if let Some(z) = self.opts.tangent_z {
                    let [e1, e2] = chart_frame(&x, chart);
                    f.zt = Some(jtruncate(&jadd(&jscale_f(&e1, z[0]), &jscale_f(&e2, z[1])), r));
                }
                if want.k {
                    let e = chart_e(&x, chart);
                    let v = jsub(&x, &e);
                    let sv = &own[own.len() - 6..];
                    f.k = Some(jtruncate(&jscale_f(&chart_e(&v, sv), -1.0), r));
                }
                at_off = 6;
            }
            if l.zn.is_some() {
                let z = &own[at_off..at_off + 4];
                f.zn = Some(jtruncate(&[z[0], z[1], z[2], z[3]], r));
            }
        }
        Ok(f)
    }

    /// Initial state at `at` given the source state there. The envelope
    /// chart, if any, is left at zero; [`solve_derived`] fills it.
    pub fn initial_state(&self, at: Vec2, src_state: &[f64], gauge: &Gauge) -> Result<Vec<f64>> {
        let l = self.layout;
        let mut s = src_state.to_vec();
        s.resize(l.len, 0.0);
        if l.chart.is_some() || l.zn.is_some() {
            let x = self.source.jets(at, src_state, 1)?;
            if let Some(o) = l.chart {
                s[o..o + 6].copy_from_slice(&chart_init(&x, &gauge.e_offset)?);
            }
            if let Some(o) = l.zn {
                let seed = gauge.z_seed.unwrap_or([0.0; 4]);
                let x2 = self.source.jets(at, src_state, 2)?;
                let gj = geometry_jets(&x2, 0.0, &self.opts.tol)?;
                let (n1, n2) = (jvalue(&gj.n1), jvalue(&gj.n2));
                let z = linalg::add(
                    &linalg::scale(&n1, linalg::dot(&seed, &n1)),
                    &linalg::scale(&n2, linalg::dot(&seed, &n2)),
                );
                s[o..o + 4].copy_from_slice(&z);
            }
        }
        Ok(s)
    }

    /// Envelope `id − e` at order 1 for a full or partial state.
    fn envelope_jets(&self, at: Vec2, state: &[f64]) -> Result<Jet4> {
        let l = self.layout;
        let o = l.chart.ok_or_else(|| Error::InvalidSpec("no chart".into()))?;
        let x = self.source.jets(at, &state[..l.src], 2)?;
        let m = metric(&x)?;
        let chart = integrate_jets(&state[o..o + 6], 1, |s| {
            let (mut du, mut dv) = (Vec::new(), Vec::new());
            chart_rhs(&m, s, &mut du, &mut dv);
            Ok((du, dv))
        })?;
        Ok(jsub(&jtruncate(&x, 1), &chart_e(&x, &chart)))
    }

    /// Relative smallest singular value of the envelope's jacobian.
    fn envelope_rank_ratio(&self, at: Vec2, state: &[f64]) -> f64 {
        match self.envelope_jets(at, state) {
            Ok(v) => {
                let sv = linalg::singular_values(&jvalue(&jd(&v, 0)), &jvalue(&jd(&v, 1)));
                if sv[0] > 0.0 {
                    sv[1] / sv[0]
                } else {
                    0.0
                }
            }
            Err(_) => 0.0,
        }
    }
}

/// Smallest relative singular value of the envelope jacobian tolerated along
/// an integration path for the envelope chart.
const ENVELOPE_RANK_FLOOR: f64 = 1e-6;
/// Required relative singular value where the envelope chart is seeded.
const ENVELOPE_SEED_RANK: f64 = 1e-2;

impl Immersion for Derived {
    fn domain(&self) -> Domain {
        self.source.domain()
    }

    fn max_order(&self) -> usize {
        self.source.max_order()
            - need(self.mix_want(), self.opts.tangent_z.is_some()).max(self.layout.zn.map_or(0, |_| 1))
    }

    fn exact_order(&self) -> usize {
        let need = self.source.max_order() - self.max_order();
        self.source.exact_order().saturating_sub(need)
    }

    fn jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Jet4> {
        check_order(order, self.max_order())?;
        let f = self.field_jets(at, state, order, self.mix_want())?;
        let mut out = f.x;
        let terms = [
            (self.mix.c, f.c),
            (self.mix.j, f.j),
            (self.mix.e, f.e),
            (self.mix.k, f.k),
        ];
        for (coef, field) in terms {
            if coef != 0.0 {
                out = jadd(&out, &jscale_f(&field.expect("field requested"), coef));
            }
        }
        for z in [f.zn, f.zt].into_iter().flatten() {
            out = jadd(&out, &z);
        }
        Ok(out)
    }

    fn state_dim(&self) -> usize {
        self.layout.len
    }

    fn state_max_order(&self) -> usize {
        let own = self
            .source
            .max_order()
            .saturating_sub(self.state_need().saturating_sub(1));
        self.source.state_max_order().min(own)
    }

    fn state_jets(&self, at: Vec2, state: &[f64], order: usize) -> Result<Vec<Jet2>> {
        let l = self.layout;
        let mut out = self.source.state_jets(at, &state[..l.src], order)?;
        if l.len > l.src {
            let (q_s, xo) = if l.chart_v.is_some() {
                (order + 1, order + 2)
            } else {
                (order, order + 1)
            };
            let x = self.source.jets(at, &state[..l.src], xo)?;
            let own = self.own_state_jets(&x, &state[l.src..], q_s, Some(order))?;
            out.extend(own.into_iter().map(|j| j.truncate(order)));
        }
        Ok(out)
    }

    fn state_valid(&self, at: Vec2, state: &[f64]) -> bool {
        if !self.source.state_valid(at, &state[..self.layout.src]) {
            return false;
        }
        self.layout.chart_v.is_none() || self.envelope_rank_ratio(at, state) > ENVELOPE_RANK_FLOOR
    }

    fn fd_bounds(&self) -> Option<Bounds> {
        self.source.fd_bounds()
    }
}

/// Integrate the state of `d` over `grid`, starting at the reachable node
/// of `src` nearest to `base`.
///
/// With an envelope chart, the frame part is solved first; the envelope
/// chart is then seeded at the nearest node where the envelope is a robust
/// immersion (the envelope is singular wherever `e` vanishes, in particular
/// at the gauge base itself) and the full state is integrated from there.
pub fn solve_derived(d: &Derived, src: &Solution, base: (usize, usize), gauge: &Gauge) -> Result<Solution> {
    let grid = src.grid;
    let start = src.nearest_valid(base).ok_or(Error::NoReachableBase)?;
    let p = grid.point(start.0, start.1);
    let init = d.initial_state(p, src.get(start.0, start.1).unwrap(), gauge)?;
    let Some(ov) = d.layout.chart_v else {
        return Ok(Solution::solve(d, grid, start, init, SUBSTEPS));
    };
    let first = d.without_k()?;
    let pass1 = Solution::solve(&first, grid, start, init[..ov].to_vec(), SUBSTEPS);
    let ratios: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| match &pass1.states[k] {
            Some(s) => first.envelope_rank_ratio(grid.point_at(k), s),
            None => 0.0,
        })
        .collect();
    let vbase = (0..grid.len())
        .filter(|k| ratios[*k] >= ENVELOPE_SEED_RANK)
        .map(|k| grid.ij(k))
        .min_by_key(|&(i, j)| {
            let (di, dj) = (i.abs_diff(start.0), j.abs_diff(start.1));
            (di * di + dj * dj, j, i)
        })
        .ok_or(Error::EnvelopeNotImmersion(100.0))?;
    let q = grid.point(vbase.0, vbase.1);
    let mut s = pass1.get(vbase.0, vbase.1).unwrap().to_vec();
    let v = first.envelope_jets(q, &s)?;
    s.extend_from_slice(&chart_init(&v, &[0.0; 4])?);
    Ok(Solution::solve(d, grid, vbase, s, SUBSTEPS))
}

/// Snap a chart point to the nearest grid node.
pub fn snap(grid: &Grid, at: Vec2) -> (usize, usize) {
    grid.nearest(at)
}

/// Evaluate `f` at every node in parallel.
pub fn per_node<T: Send>(grid: &Grid, f: impl Fn(usize) -> Option<T> + Sync) -> Vec<Option<T>> {
    (0..grid.len()).into_par_iter().map(&f).collect()
}

/// `c` at a point from the curvature ellipse, cross-checked against the
/// nearest-point construction.
pub fn compute_c(pg: &crate::PointGeometry, tol: &Tolerances) -> Result<Vec4> {
    let (c1, c2) = crate::geometry::c_two_ways(pg, tol)?;
    let gap = linalg::norm(&linalg::sub(&c1, &c2));
    if gap > 1e-9 * linalg::norm(&c1).max(1.0) {
        return Err(Error::DegenerateEllipse);
    }
    Ok(c1)
}

/// `c` over the grid and the largest relative gap between its two formulas.
pub fn compute_c_field(source: &dyn Immersion, src: &Solution, tol: &Tolerances) -> (SectionField, f64) {
    let grid = src.grid;
    let vals = per_node(&grid, |k| {
        let s = src.states[k].as_ref()?;
        let pg = crate::geometry::point_geometry_with_state(source, grid.point_at(k), s, tol).ok()?;
        let (c1, c2) = crate::geometry::c_two_ways(&pg, tol).ok()?;
        let gap = linalg::norm(&linalg::sub(&c1, &c2)) / linalg::norm(&c1).max(f64::MIN_POSITIVE);
        Some((c1, gap))
    });
    let gap = vals.iter().flatten().map(|v| v.1).fold(0.0, f64::max);
    let field = SectionField::new(Bundle::Normal, grid, vals.into_iter().map(|v| v.map(|v| v.0)).collect());
    (field, gap)
}

/// `j` by the component formula (stored) and its largest deviation from
/// `½ grad(c·c)`.
pub fn compute_j_field(source: &dyn Immersion, src: &Solution, tol: &Tolerances) -> Result<(SectionField, f64)> {
    check_order(3, source.max_order())?;
    let grid = src.grid;
    let vals = per_node(&grid, |k| {
        let s = src.states[k].as_ref()?;
        let x = source.jets(grid.point_at(k), s, 3).ok()?;
        let gj = geometry_jets(&x, 0.0, tol).ok()?;
        let c = gj.c_ambient(tol).ok()?;
        let a = jvalue(&gj.j_component(&c).ok()?);
        let b = jvalue(&gj.j_gradient(&c).ok()?);
        Some((a, linalg::norm(&linalg::sub(&a, &b))))
    });
    let gap = vals.iter().flatten().map(|v| v.1).fold(0.0, f64::max);
    let field = SectionField::new(
        Bundle::Tangent,
        grid,
        vals.into_iter().map(|v| v.map(|v| v.0)).collect(),
    );
    Ok((field, gap))
}

/// Largest `|K|` over the reachable nodes, and whether it was measured on
/// analytic jets.
pub fn max_gauss_curvature(source: &Arc<dyn Immersion>, src: &Solution, tol: &Tolerances) -> (f64, bool) {
    let analytic = source.exact_order() >= 2;
    let imm = FdImmersion::ensure_order2(source.clone());
    let grid = src.grid;
    let k = per_node(&grid, |k| {
        let s = src.states[k].as_ref()?;
        crate::geometry::point_geometry_with_state(imm.as_ref(), grid.point_at(k), s, tol)
            .ok()
            .map(|pg| pg.gauss_k.abs())
    });
    (k.into_iter().flatten().fold(0.0, f64::max), analytic)
}

fn max_normal_degeneracy(source: &Arc<dyn Immersion>, src: &Solution, tol: &Tolerances) -> (f64, bool) {
    let analytic = source.exact_order() >= 2;
    let imm = FdImmersion::ensure_order2(source.clone());
    let grid = src.grid;
    let k = per_node(&grid, |k| {
        let s = src.states[k].as_ref()?;
        crate::geometry::point_geometry_with_state(imm.as_ref(), grid.point_at(k), s, tol)
            .ok()
            .map(|pg| crate::geometry::normal_degeneracy(&pg))
    });
    (k.into_iter().flatten().fold(0.0, f64::max), analytic)
}

/// Largest loop-transport defect over all grid cells. `extract` maps a
/// state at a point to the vectors being compared.
pub fn cell_holonomy(
    imm: &dyn Immersion,
    sol: &Solution,
    extract: impl Fn(Vec2, &[f64]) -> Result<Vec<Vec4>> + Sync,
) -> f64 {
    cell_holonomy_map(imm, sol, extract)
        .into_iter()
        .flatten()
        .fold(0.0, f64::max)
}

/// Loop-transport defect of every cell, stored at its lower-left node;
/// `None` on the last row and column and where a loop could not be closed.
pub fn cell_holonomy_map(
    imm: &dyn Immersion,
    sol: &Solution,
    extract: impl Fn(Vec2, &[f64]) -> Result<Vec<Vec4>> + Sync,
) -> Vec<Option<f64>> {
    let grid = sol.grid;
    per_node(&grid, |k| {
        let (i, j) = grid.ij(k);
        if i + 1 >= grid.nu || j + 1 >= grid.nv {
            return None;
        }
        let s0 = sol.get(i, j)?;
        let p = grid.point(i, j);
        let q = grid.point(i + 1, j + 1);
        let n = sol.substeps;
        let leg =
            |from: Vec2, s: &[f64], axis: usize, to: f64| crate::transport::rk4_leg(imm, from, s, axis, to, n).ok();
        let s1 = leg(p, s0, 0, q[0])?;
        let s2 = leg([q[0], p[1]], &s1, 1, q[1])?;
        let s3 = leg(q, &s2, 0, p[0])?;
        let s4 = leg([p[0], q[1]], &s3, 1, p[1])?;
        let a = extract(p, s0).ok()?;
        let b = extract(p, &s4).ok()?;
        Some(
            a.iter()
                .zip(&b)
                .map(|(x, y)| linalg::norm(&linalg::sub(x, y)))
                .fold(0.0, f64::max),
        )
    })
}

/// Parallel tangent frame and flat coordinates over the grid.
pub struct FlatChart {
    pub base_point: Vec2,
    pub start: (usize, usize),
    pub map: Arc<Derived>,
    pub solution: Solution,
    pub parallel_frame: Vec<Option<[Vec4; 2]>>,
    pub flat_coords: Vec<Option<Vec2>>,
    pub holonomy_defect: f64,
    pub holonomy_cells: Vec<Option<f64>>,
}

/// Flatness threshold for a source with or without analytic second jets.
fn flat_tol(analytic: bool, tol: &Tolerances) -> f64 {
    if analytic {
        tol.flatness_tol
    } else {
        tol.fd_flatness_tol
    }
}

/// Build a flat chart gauged so that `e` vanishes at the node nearest `base`.
pub fn build_flat_chart(source: Arc<dyn Immersion>, src: &Solution, base: Vec2, tol: &Tolerances) -> Result<FlatChart> {
    let (kmax, analytic) = max_gauss_curvature(&source, src, tol);
    if kmax > flat_tol(analytic, tol) {
        return Err(Error::TangentNotFlat(kmax));
    }
    let chart = flat_chart_unchecked(source, src, base, tol)?;
    if chart.holonomy_defect > tol.flatness_tol {
        return Err(Error::PathDependence(chart.holonomy_defect));
    }
    Ok(chart)
}

/// [`build_flat_chart`] without the flatness and path-independence checks,
/// for measuring how far a surface is from flat.
pub fn flat_chart_unchecked(
    source: Arc<dyn Immersion>,
    src: &Solution,
    base: Vec2,
    tol: &Tolerances,
) -> Result<FlatChart> {
    let grid = src.grid;
    let opts = DerivedOptions {
        chart: true,
        tol: *tol,
        ..Default::default()
    };
    let map = Arc::new(Derived::new(source, Mix::default(), opts)?);
    let solution = solve_derived(&map, src, snap(&grid, base), &Gauge::default())?;
    let o = map.layout.chart.unwrap();
    let frame_at = |at: Vec2, s: &[f64]| -> Result<Vec<Vec4>> {
        let x = map.source.jets(at, &s[..map.layout.src], 1)?;
        let c: Vec<Jet2> = s[o..o + 6].iter().map(|v| Jet2::constant(*v, 0)).collect();
        let f = chart_frame(&x, &c);
        Ok(vec![jvalue(&f[0]), jvalue(&f[1])])
    };
    let holonomy_cells = cell_holonomy_map(map.as_ref(), &solution, frame_at);
    let holonomy_defect = holonomy_cells.iter().flatten().fold(0.0, |a: f64, b| a.max(*b));
    let parallel_frame = per_node(&grid, |k| {
        let s = solution.states[k].as_ref()?;
        frame_at(grid.point_at(k), s).ok().map(|f| [f[0], f[1]])
    });
    let flat_coords = solution
        .states
        .iter()
        .map(|s| s.as_ref().map(|s| [s[o + 4], s[o + 5]]))
        .collect();
    Ok(FlatChart {
        base_point: base,
        start: solution.start,
        map,
        solution,
        parallel_frame,
        flat_coords,
        holonomy_defect,
        holonomy_cells,
    })
}

/// `e = a E1 + b E2` at the nodes of a flat chart.
pub fn compute_e(chart: &FlatChart) -> SectionField {
    let vals = chart
        .parallel_frame
        .iter()
        .zip(&chart.flat_coords)
        .map(|(f, c)| match (f, c) {
            (Some(f), Some(c)) => Some(linalg::add(&linalg::scale(&f[0], c[0]), &linalg::scale(&f[1], c[1]))),
            _ => None,
        })
        .collect();
    SectionField::new(Bundle::Tangent, chart.solution.grid, vals)
}

/// `k` over the grid with the solved map that carries it.
pub struct KField {
    pub field: SectionField,
    pub map: Arc<Derived>,
    pub solution: Solution,
    /// Node where the envelope chart is gauged.
    pub envelope_base: (usize, usize),
    pub coverage: f64,
}

/// `k = −ẽ` through the envelope `id − e`, with `e` gauged at `base`.
pub fn compute_k(source: Arc<dyn Immersion>, src: &Solution, base: Vec2, tol: &Tolerances) -> Result<KField> {
    let grid = src.grid;
    let opts = DerivedOptions {
        k: true,
        tol: *tol,
        ..Default::default()
    };
    let map = Arc::new(Derived::new(source, Mix::default(), opts)?);
    let solution = solve_derived(&map, src, snap(&grid, base), &Gauge::default())?;
    let want = Want {
        k: true,
        ..Default::default()
    };
    let vals = per_node(&grid, |k| {
        let s = solution.states[k].as_ref()?;
        let f = map.field_jets(grid.point_at(k), s, 0, want).ok()?;
        Some(jvalue(&f.k?))
    });
    let field = SectionField::new(Bundle::Normal, grid, vals);
    let coverage = field.coverage();
    if coverage < 0.5 {
        return Err(Error::EnvelopeNotImmersion(100.0 * (1.0 - coverage)));
    }
    Ok(KField {
        field,
        envelope_base: solution.start,
        map,
        solution,
        coverage,
    })
}

/// A parallel section over the grid.
pub struct ParallelField {
    pub field: SectionField,
    pub map: Arc<Derived>,
    pub solution: Solution,
    pub holonomy_defect: f64,
    pub holonomy_cells: Vec<Option<f64>>,
}

/// Parallel transport of `seed` (given at the node nearest `base`) in the
/// tangent or normal bundle.
pub fn parallel_field(
    source: Arc<dyn Immersion>,
    src: &Solution,
    bundle: Bundle,
    seed: Vec4,
    base: Vec2,
    tol: &Tolerances,
) -> Result<ParallelField> {
    parallel_field_with(source, src, bundle, seed, base, tol, true)
}

/// [`parallel_field`] without the flatness gate.
pub fn parallel_field_unchecked(
    source: Arc<dyn Immersion>,
    src: &Solution,
    bundle: Bundle,
    seed: Vec4,
    base: Vec2,
    tol: &Tolerances,
) -> Result<ParallelField> {
    parallel_field_with(source, src, bundle, seed, base, tol, false)
}

fn parallel_field_with(
    source: Arc<dyn Immersion>,
    src: &Solution,
    bundle: Bundle,
    seed: Vec4,
    base: Vec2,
    tol: &Tolerances,
    gate: bool,
) -> Result<ParallelField> {
    let grid = src.grid;
    let start = src.nearest_valid(snap(&grid, base)).ok_or(Error::NoReachableBase)?;
    let mut opts = DerivedOptions {
        tol: *tol,
        ..Default::default()
    };
    let mut gauge = Gauge::default();
    match bundle {
        Bundle::Tangent => {
            let (kmax, analytic) = max_gauss_curvature(&source, src, tol);
            if gate && kmax > flat_tol(analytic, tol) {
                return Err(Error::TangentNotFlat(kmax));
            }
            let x = source.jets(grid.point(start.0, start.1), src.get(start.0, start.1).unwrap(), 1)?;
            let c = chart_init(&x, &[0.0; 4])?;
            let cj: Vec<Jet2> = c.iter().map(|v| Jet2::constant(*v, 0)).collect();
            let f = chart_frame(&x, &cj);
            opts.tangent_z = Some([linalg::dot(&seed, &jvalue(&f[0])), linalg::dot(&seed, &jvalue(&f[1]))]);
        }
        Bundle::Normal => {
            let (nmax, analytic) = max_normal_degeneracy(&source, src, tol);
            if gate && nmax > flat_tol(analytic, tol) {
                return Err(Error::NormalNotFlat(nmax));
            }
            opts.normal_z = true;
            gauge.z_seed = Some(seed);
        }
    }
    let map = Arc::new(Derived::new(source, Mix::default(), opts)?);
    let solution = solve_derived(&map, src, start, &gauge)?;
    let value_at = |at: Vec2, s: &[f64]| -> Result<Vec<Vec4>> {
        let f = map.field_jets(at, s, 0, Want::default())?;
        Ok(vec![jvalue(&f.zt.or(f.zn).unwrap())])
    };
    let holonomy_cells = cell_holonomy_map(map.as_ref(), &solution, value_at);
    let holonomy_defect = holonomy_cells.iter().flatten().fold(0.0, |a: f64, b| a.max(*b));
    let vals = per_node(&grid, |k| {
        let s = solution.states[k].as_ref()?;
        value_at(grid.point_at(k), s).ok().map(|v| v[0])
    });
    Ok(ParallelField {
        field: SectionField::new(bundle, grid, vals),
        map,
        solution,
        holonomy_defect,
        holonomy_cells,
    })
}

/// Evaluate a solved map's fields at an arbitrary chart point.
pub fn fields_at(map: &Derived, sol: &Solution, at: Vec2, order: usize, want: Want) -> Result<FieldJets> {
    let s = sol.state_at(map, at)?;
    map.field_jets(at, &s, order, want)
}

/// The value of a solved map at an arbitrary chart point.
pub fn value_at(imm: &dyn Immersion, sol: &Solution, at: Vec2) -> Result<Vec4> {
    let s = sol.state_at(imm, at)?;
    Ok(jvalue(&imm.jets(at, &s, 0)?))
}
