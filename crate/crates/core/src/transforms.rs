//! Evolute, envelope, orthogonal, parallel and shift transforms, with rank
//! diagnostics, pullback formulas and the permutability defect.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{geometry_jets, Tolerances};
use crate::grid::{Bundle, Grid, SectionField};
use crate::jets::FdConfig;
use crate::linalg::{self, jd, jvalue};
use crate::sections::{max_gauss_curvature, per_node, snap, solve_derived, Derived, DerivedOptions, Gauge, Mix, Want};
use crate::surfaces::Immersion;
use crate::transport::{FdImmersion, Solution};
use crate::{Error, Result, Vec2, Vec4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformKind {
    /// `id + c`
    Evolute,
    /// `id − e`
    Envelope,
    /// `id + t c − (1 − t) e`
    Orthogonal { t: f64 },
    /// `id + t1 (e − k) + t2 (c − j) + Z` with `Z` a parallel normal
    /// section seeded by `z` at the gauge point.
    Parallel { t1: f64, t2: f64, z: Option<Vec4> },
    /// `id + c + Z` with `Z` a parallel tangent field seeded by `z`.
    Shift { z: Vec4 },
}

/// One pipeline stage. `gauge` overrides the run's base point for `e`/`k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub gauge: Option<Vec2>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    z: Option<Vec4>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gauge: Option<Vec2>,
}

impl TryFrom<RawTransform> for TransformSpec {
    type Error = String;

    fn try_from(r: RawTransform) -> std::result::Result<Self, String> {
        let missing = |f: &str| format!("pipeline stage '{}' needs field '{f}'", r.kind);
        let extra = |ok: &[&str]| -> std::result::Result<(), String> {
            let given = [
                ("t", r.t.is_some()),
                ("t1", r.t1.is_some()),
                ("t2", r.t2.is_some()),
                ("z", r.z.is_some()),
            ];
            match given.iter().find(|(n, on)| *on && !ok.contains(n)) {
                Some((n, _)) => Err(format!("pipeline stage '{}' does not take field '{n}'", r.kind)),
                None => Ok(()),
            }
        };
        let kind = match r.kind.as_str() {
            "evolute" => {
                extra(&[])?;
                TransformKind::Evolute
            }
            "envelope" => {
                extra(&[])?;
                TransformKind::Envelope
            }
            "orthogonal" => {
                extra(&["t"])?;
                TransformKind::Orthogonal {
                    t: r.t.ok_or_else(|| missing("t"))?,
                }
            }
            "parallel" => {
                extra(&["t1", "t2", "z"])?;
                TransformKind::Parallel {
                    t1: r.t1.ok_or_else(|| missing("t1"))?,
                    t2: r.t2.ok_or_else(|| missing("t2"))?,
                    z: r.z,
                }
            }
            "shift" => {
                extra(&["z"])?;
                TransformKind::Shift {
                    z: r.z.ok_or_else(|| missing("z"))?,
                }
            }
            other => return Err(format!("unknown pipeline stage '{other}'")),
        };
        let finite = [r.t, r.t1, r.t2].iter().flatten().all(|x| x.is_finite())
            && r.z
                .iter()
                .flatten()
                .chain(r.gauge.iter().flatten())
                .all(|x| x.is_finite());
        if !finite {
            return Err(format!("pipeline stage '{}' has non-finite parameters", r.kind));
        }
        Ok(TransformSpec { kind, gauge: r.gauge })
    }
}

impl From<TransformSpec> for RawTransform {
    fn from(s: TransformSpec) -> Self {
        let mut r = RawTransform {
            gauge: s.gauge,
            ..Default::default()
        };
        match s.kind {
            TransformKind::Evolute => r.kind = "evolute".into(),
            TransformKind::Envelope => r.kind = "envelope".into(),
            TransformKind::Orthogonal { t } => {
                r.kind = "orthogonal".into();
                r.t = Some(t);
            }
            TransformKind::Parallel { t1, t2, z } => {
                r.kind = "parallel".into();
                r.t1 = Some(t1);
                r.t2 = Some(t2);
                r.z = z;
            }
            TransformKind::Shift { z } => {
                r.kind = "shift".into();
                r.z = Some(z);
            }
        }
        r
    }
}

impl TransformSpec {
    pub fn new(kind: TransformKind) -> Self {
        TransformSpec { kind, gauge: None }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            TransformKind::Evolute => "evolute",
            TransformKind::Envelope => "envelope",
            TransformKind::Orthogonal { .. } => "orthogonal",
            TransformKind::Parallel { .. } => "parallel",
            TransformKind::Shift { .. } => "shift",
        }
    }

    pub fn mix(&self) -> Mix {
        match self.kind {
            TransformKind::Evolute | TransformKind::Shift { .. } => Mix {
                c: 1.0,
                ..Default::default()
            },
            TransformKind::Envelope => Mix {
                e: -1.0,
                ..Default::default()
            },
            TransformKind::Orthogonal { t } => Mix {
                c: t,
                e: -(1.0 - t),
                ..Default::default()
            },
            TransformKind::Parallel { t1, t2, .. } => Mix {
                c: t2,
                j: -t2,
                e: t1,
                k: -t1,
            },
        }
    }

    /// Whether the image is expected to be tangent-parallel (`df(T) ⊂ T`)
    /// rather than normal (`df(T) ⊂ N`).
    pub fn is_parallel_type(&self) -> bool {
        matches!(self.kind, TransformKind::Parallel { .. })
    }

    /// Whether the stage needs a flat tangent bundle (it uses `e`, `k` or a
    /// parallel tangent field).
    pub fn needs_flat(&self) -> bool {
        !matches!(self.kind, TransformKind::Evolute)
    }
}

/// Central differences for image jacobians; the truncation error of one
/// level is already far below every tolerance the jacobian feeds.
const JACOBIAN_FD: FdConfig = FdConfig {
    step: 1e-4,
    richardson_levels: 1,
};

/// Rank of a node from the singular values of its jacobian.
pub fn rank_of(sv: [f64; 2], rank_tol: f64) -> u8 {
    if sv[1] > rank_tol {
        2
    } else if sv[0] > rank_tol {
        1
    } else {
        0
    }
}

/// Image of one pipeline stage sampled on the grid.
pub struct TransformedSurface {
    pub spec: TransformSpec,
    pub source: Arc<dyn Immersion>,
    pub map: Arc<Derived>,
    pub solution: Solution,
    /// `None` marks masked nodes.
    pub images: Vec<Option<Vec4>>,
    /// Image partials `[∂u f, ∂v f]`.
    pub jacobians: Vec<Option<[Vec4; 2]>>,
    pub singular_values: Vec<Option<[f64; 2]>>,
    pub rank_map: Vec<Option<u8>>,
    /// Smallest singular value within `[rank_tol, 100 rank_tol]`.
    pub marginal: Vec<bool>,
    /// Whether image jets of order 2 are analytic (otherwise finite differences).
    pub analytic: bool,
}

impl TransformedSurface {
    pub fn grid(&self) -> Grid {
        self.solution.grid
    }

    /// The image as an immersion with second-order jets.
    pub fn immersion(&self) -> Arc<dyn Immersion> {
        FdImmersion::ensure_order2(self.map.clone())
    }

    /// Nodes usable for tolerance assertions: unmasked, rank 2, not marginal.
    pub fn working(&self, k: usize) -> bool {
        self.rank_map[k] == Some(2) && !self.marginal[k]
    }

    pub fn masked_fraction(&self) -> f64 {
        self.images.iter().filter(|x| x.is_none()).count() as f64 / self.images.len() as f64
    }
}

/// Degeneracy threshold for deciding where `c` exists on `source`.
pub fn c_gate(source: &dyn Immersion, tol: &Tolerances) -> f64 {
    if source.exact_order() >= 2 {
        tol.degeneracy_tol
    } else {
        tol.fd_flatness_tol
    }
}

/// Derived-map options for a stage over `source`.
fn stage_options(
    spec: &TransformSpec,
    source: &dyn Immersion,
    src: &Solution,
    start: (usize, usize),
    tol: &Tolerances,
) -> Result<(DerivedOptions, Gauge)> {
    let mut opts = DerivedOptions {
        tol: *tol,
        c_gate: c_gate(source, tol),
        ..Default::default()
    };
    let mut gauge = Gauge::default();
    match spec.kind {
        TransformKind::Parallel { z: Some(z), .. } => {
            opts.normal_z = true;
            gauge.z_seed = Some(z);
        }
        TransformKind::Shift { z } => {
            let p = src.grid.point(start.0, start.1);
            let x = source.jets(p, src.get(start.0, start.1).ok_or(Error::NoReachableBase)?, 1)?;
            let (xu, xv) = (jvalue(&x.map(|c| c.du())), jvalue(&x.map(|c| c.dv())));
            let t1 = linalg::scale(&xu, 1.0 / linalg::norm(&xu));
            let w = linalg::axpy(&xv, -linalg::dot(&xv, &t1), &t1);
            let t2 = linalg::scale(&w, 1.0 / linalg::norm(&w));
            opts.tangent_z = Some([linalg::dot(&z, &t1), linalg::dot(&z, &t2)]);
        }
        _ => {}
    }
    Ok((opts, gauge))
}

/// Apply one stage to `source`, whose state over the grid is `src`.
pub fn apply_stage(
    source: Arc<dyn Immersion>,
    src: &Solution,
    spec: &TransformSpec,
    base: Vec2,
    tol: &Tolerances,
) -> Result<TransformedSurface> {
    let grid = src.grid;
    if spec.needs_flat() {
        let (kmax, analytic) = max_gauss_curvature(&source, src, tol);
        let limit = if analytic {
            tol.flatness_tol
        } else {
            tol.fd_flatness_tol
        };
        if kmax > limit {
            return Err(Error::TangentNotFlat(kmax));
        }
    }
    let mix = spec.mix();
    let probe = Derived::new(source.clone(), mix, DerivedOptions::default());
    let source = match probe {
        Err(Error::OrderUnavailable { .. }) if source.max_order() < 2 => FdImmersion::ensure_order2(source),
        Err(e) => return Err(e),
        Ok(_) => source,
    };
    let start = src
        .nearest_valid(snap(&grid, spec.gauge.unwrap_or(base)))
        .ok_or(Error::NoReachableBase)?;
    let (opts, gauge) = stage_options(spec, source.as_ref(), src, start, tol)?;
    let map = Arc::new(Derived::new(source.clone(), mix, opts)?);
    let solution = solve_derived(&map, src, start, &gauge)?;
    let jac: Arc<dyn Immersion> = if map.max_order() >= 1 {
        map.clone()
    } else {
        Arc::new(FdImmersion::new(map.clone(), JACOBIAN_FD, true))
    };
    let nodes = per_node(&grid, |k| {
        let s = solution.states[k].as_ref()?;
        let p = grid.point_at(k);
        let x = map.jets(p, s, 0).ok()?;
        let j = jac.jets(p, s, 1).ok()?;
        let cols = [jvalue(&j.map(|c| c.du())), jvalue(&j.map(|c| c.dv()))];
        Some((jvalue(&x), linalg::singular_values(&cols[0], &cols[1]), cols))
    });
    let images = nodes.iter().map(|n| n.map(|n| n.0)).collect();
    let singular_values: Vec<Option<[f64; 2]>> = nodes.iter().map(|n| n.map(|n| n.1)).collect();
    let jacobians = nodes.iter().map(|n| n.map(|n| n.2)).collect();
    let rank_map = singular_values
        .iter()
        .map(|s| s.map(|s| rank_of(s, tol.rank_tol)))
        .collect();
    let marginal = singular_values
        .iter()
        .map(|s| s.is_some_and(|s| s[1] >= tol.rank_tol && s[1] <= 100.0 * tol.rank_tol))
        .collect();
    Ok(TransformedSurface {
        spec: *spec,
        analytic: map.exact_order() >= 2,
        source,
        map,
        solution,
        images,
        jacobians,
        singular_values,
        rank_map,
        marginal,
    })
}

/// Apply the stages in order, each to the previous image.
pub fn apply_pipeline(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    pipeline: &[TransformSpec],
    base: Vec2,
    tol: &Tolerances,
) -> Result<Vec<TransformedSurface>> {
    let mut out: Vec<TransformedSurface> = Vec::with_capacity(pipeline.len());
    for spec in pipeline {
        let stage = match out.last() {
            None => apply_stage(surface.clone(), &Solution::stateless(grid), spec, base, tol)?,
            Some(prev) => apply_stage(prev.map.clone(), &prev.solution, spec, base, tol)?,
        };
        out.push(stage);
    }
    Ok(out)
}

fn stateless_stage(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    kind: TransformKind,
    base: Vec2,
    tol: &Tolerances,
) -> Result<TransformedSurface> {
    apply_stage(
        surface,
        &Solution::stateless(grid),
        &TransformSpec::new(kind),
        base,
        tol,
    )
}

/// `id + c`
pub fn evolute(surface: Arc<dyn Immersion>, grid: Grid, tol: &Tolerances) -> Result<TransformedSurface> {
    let base = grid.point(0, 0);
    stateless_stage(surface, grid, TransformKind::Evolute, base, tol)
}

/// `id − e` with `e` gauged at `base`.
pub fn envelope(surface: Arc<dyn Immersion>, grid: Grid, base: Vec2, tol: &Tolerances) -> Result<TransformedSurface> {
    stateless_stage(surface, grid, TransformKind::Envelope, base, tol)
}

/// `id + t c − (1 − t) e`
pub fn orthogonal_transform(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    t: f64,
    base: Vec2,
    tol: &Tolerances,
) -> Result<TransformedSurface> {
    stateless_stage(surface, grid, TransformKind::Orthogonal { t }, base, tol)
}

/// `id + t1 (e − k) + t2 (c − j) + Z`
pub fn parallel_transform(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    t1: f64,
    t2: f64,
    z: Option<Vec4>,
    base: Vec2,
    tol: &Tolerances,
) -> Result<TransformedSurface> {
    stateless_stage(surface, grid, TransformKind::Parallel { t1, t2, z }, base, tol)
}

/// Canonical fields of a stateless surface over a grid, from one solved map.
pub struct SurfaceFields {
    pub map: Arc<Derived>,
    pub solution: Solution,
}

impl SurfaceFields {
    /// Carry the flat chart and, when `with_k`, the envelope chart.
    pub fn new(surface: Arc<dyn Immersion>, grid: Grid, base: Vec2, with_k: bool, tol: &Tolerances) -> Result<Self> {
        Self::over(surface, &Solution::stateless(grid), base, with_k, tol)
    }

    /// Same, for a surface whose own state over the grid is `src` (a
    /// pipeline image). Falls back to finite differences below order 2.
    pub fn over(
        surface: Arc<dyn Immersion>,
        src: &Solution,
        base: Vec2,
        with_k: bool,
        tol: &Tolerances,
    ) -> Result<Self> {
        let grid = src.grid;
        let surface = FdImmersion::ensure_order2(surface);
        let opts = DerivedOptions {
            chart: true,
            k: with_k,
            tol: *tol,
            c_gate: c_gate(surface.as_ref(), tol),
            ..Default::default()
        };
        let map = Arc::new(Derived::new(surface, Mix::default(), opts)?);
        let start = src.nearest_valid(snap(&grid, base)).ok_or(Error::NoReachableBase)?;
        let solution = solve_derived(&map, src, start, &Gauge::default())?;
        Ok(SurfaceFields { map, solution })
    }

    /// `(|c|, |e|, |j|)` at a node, each `None` where it cannot be evaluated.
    pub fn norms(&self, k: usize) -> [Option<f64>; 3] {
        let Some(s) = self.solution.states[k].as_ref() else {
            return [None; 3];
        };
        let at = self.solution.grid.point_at(k);
        let get = |want: Want| self.map.field_jets(at, s, 0, want).ok();
        let c = get(Want {
            c: true,
            ..Default::default()
        })
        .and_then(|f| f.c);
        let e = get(Want {
            e: true,
            ..Default::default()
        })
        .and_then(|f| f.e);
        let j = get(Want {
            c: true,
            j: true,
            ..Default::default()
        })
        .and_then(|f| f.j);
        [c, e, j].map(|v| v.map(|v| linalg::norm(&jvalue(&v))))
    }

    /// Field values `(x, c, j, e, k)` at a node; `k` is zero when not carried.
    pub fn at(&self, k: usize) -> Option<[Vec4; 5]> {
        let s = self.solution.states[k].as_ref()?;
        let want = Want {
            k: self.map.available().k,
            ..Want::ALL
        };
        let f = self.map.field_jets(self.solution.grid.point_at(k), s, 0, want).ok()?;
        Some([
            jvalue(&f.x),
            jvalue(&f.c?),
            jvalue(&f.j?),
            jvalue(&f.e?),
            f.k.map_or([0.0; 4], |k| jvalue(&k)),
        ])
    }
}

/// Image sections predicted by the pullback formulas, next to the ones
/// recomputed on the image of `orthogonal(t)`.
pub struct PullbackSections {
    /// `((1 − t) e − t j)`
    pub c_formula: SectionField,
    /// `c` recomputed from the image geometry.
    pub c_image: SectionField,
    /// `(t c − (1 − t) k)`
    pub e_formula: Option<SectionField>,
    /// `e` of the image from an independent flat chart, gauged to the
    /// formula value at `anchor`.
    pub e_image: Option<SectionField>,
    pub anchor: Option<(usize, usize)>,
    pub image: TransformedSurface,
}

/// Evaluate the pullback formulas for `orthogonal(t)` and recompute the
/// image sections independently. `with_e` requires `t ≠ 1`.
pub fn pullback_sections(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    t: f64,
    base: Vec2,
    with_e: bool,
    tol: &Tolerances,
) -> Result<PullbackSections> {
    if with_e && t == 1.0 {
        return Err(Error::KAtTOne);
    }
    let image = orthogonal_transform(surface.clone(), grid, t, base, tol)?;
    let fields = SurfaceFields::new(surface, grid, base, with_e, tol)?;
    let vals = per_node(&grid, |k| fields.at(k));
    let c_formula = SectionField::new(
        Bundle::Tangent,
        grid,
        vals.iter()
            .map(|v| v.map(|[_, _, j, e, _]| linalg::sub(&linalg::scale(&e, 1.0 - t), &linalg::scale(&j, t))))
            .collect(),
    );
    let img = image.immersion();
    let itol = Tolerances {
        degeneracy_tol: if image.analytic {
            tol.degeneracy_tol
        } else {
            tol.fd_flatness_tol
        },
        ..*tol
    };
    let c_image = SectionField::new(
        Bundle::Normal,
        grid,
        per_node(&grid, |k| {
            let s = image.solution.states[k].as_ref()?;
            let x = img.jets(grid.point_at(k), s, 2).ok()?;
            let gj = geometry_jets(&x, 0.0, tol).ok()?;
            gj.c_ambient(&itol).ok().map(|c| jvalue(&c))
        }),
    );
    let (mut e_formula, mut e_image, mut anchor) = (None, None, None);
    if with_e {
        let formula: Vec<Option<Vec4>> = vals
            .iter()
            .map(|v| v.map(|[_, c, _, _, kk]| linalg::sub(&linalg::scale(&c, t), &linalg::scale(&kk, 1.0 - t))))
            .collect();
        let b = snap(&grid, base);
        let a = (0..grid.len())
            .filter(|k| formula[*k].is_some() && image.images[*k].is_some())
            .map(|k| grid.ij(k))
            .min_by_key(|&(i, j)| {
                let (di, dj) = (i.abs_diff(b.0), j.abs_diff(b.1));
                (di * di + dj * dj, j, i)
            })
            .ok_or(Error::NoReachableBase)?;
        let gauge = Gauge {
            e_offset: formula[grid.index(a.0, a.1)].unwrap(),
            z_seed: None,
        };
        let opts = DerivedOptions {
            chart: true,
            tol: *tol,
            ..Default::default()
        };
        let chart = Derived::new(image.map.clone(), Mix::default(), opts)?;
        let sol = solve_derived(&chart, &image.solution, a, &gauge)?;
        let want = Want {
            e: true,
            ..Default::default()
        };
        let ev = per_node(&grid, |k| {
            let s = sol.states[k].as_ref()?;
            chart
                .field_jets(grid.point_at(k), s, 0, want)
                .ok()
                .and_then(|f| f.e)
                .map(|e| jvalue(&e))
        });
        e_formula = Some(SectionField::new(Bundle::Tangent, grid, formula));
        e_image = Some(SectionField::new(Bundle::Tangent, grid, ev));
        anchor = Some(a);
    }
    Ok(PullbackSections {
        c_formula,
        c_image,
        e_formula,
        e_image,
        anchor,
        image,
    })
}

/// Result of composing two orthogonal transforms in both orders.
pub struct Permutability {
    /// `route A − route B`, where route A applies `t1` then `t2`.
    pub delta: SectionField,
    /// Largest `|delta · t_i|`.
    pub delta_tangential: f64,
    /// Largest `|(∂_X delta)⊥|` over unit coordinate directions.
    pub delta_parallel_defect: f64,
    /// Same two measures for `route A − route C` (closed formula).
    pub closed_tangential: f64,
    pub closed_parallel_defect: f64,
    pub nodes_checked: usize,
    pub nodes_masked: usize,
    pub worst_node: Vec2,
}

/// Compose `orthogonal(t1)` and `orthogonal(t2)` in both orders and compare
/// against `p + t1 t2 (c − j) − (1 − t1)(1 − t2)(e − k)`.
pub fn permutability_defect(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    t1: f64,
    t2: f64,
    base: Vec2,
    tol: &Tolerances,
) -> Result<Permutability> {
    let orth = |t| TransformSpec::new(TransformKind::Orthogonal { t });
    let route_a = apply_pipeline(surface.clone(), grid, &[orth(t1), orth(t2)], base, tol)?;
    permutability_with_route(surface, &route_a, base, tol)
}

/// [`permutability_defect`] reusing an already computed route A (the
/// first two stages of `route_a`, both orthogonal).
pub fn permutability_with_route(
    surface: Arc<dyn Immersion>,
    route_a: &[TransformedSurface],
    base: Vec2,
    tol: &Tolerances,
) -> Result<Permutability> {
    let param = |s: &TransformedSurface| match s.spec.kind {
        TransformKind::Orthogonal { t } => Ok(t),
        _ => Err(Error::InvalidSpec("permutability needs two orthogonal stages".into())),
    };
    if route_a.len() < 2 {
        return Err(Error::InvalidSpec("permutability needs two orthogonal stages".into()));
    }
    let (t1, t2) = (param(&route_a[0])?, param(&route_a[1])?);
    let grid = route_a[0].grid();
    let orth = |t| TransformSpec::new(TransformKind::Orthogonal { t });
    let route_b = apply_pipeline(surface.clone(), grid, &[orth(t2), orth(t1)], base, tol)?;
    let s = (t1 * t2, (1.0 - t1) * (1.0 - t2));
    let closed = Derived::new(
        surface.clone(),
        Mix {
            c: s.0,
            j: -s.0,
            e: -s.1,
            k: s.1,
        },
        DerivedOptions {
            tol: *tol,
            ..Default::default()
        },
    )?;
    let closed_sol = solve_derived(
        &closed,
        &Solution::stateless(grid),
        snap(&grid, base),
        &Gauge::default(),
    )?;
    let (a, b) = (&route_a[1], &route_b[1]);
    let per = per_node(&grid, |k| {
        let p = grid.point_at(k);
        let sc = closed_sol.states[k].as_ref()?;
        let pack = |v: Vec4, d: [Vec4; 2]| (v, d);
        let xa = pack(a.images[k]?, a.jacobians[k]?);
        let xb = pack(b.images[k]?, b.jacobians[k]?);
        let c = closed.jets(p, sc, 1).ok()?;
        let xc = pack(jvalue(&c), [jvalue(&jd(&c, 0)), jvalue(&jd(&c, 1))]);
        let x = surface.jets(p, &[], 2).ok()?;
        let gj = geometry_jets(&x, 0.0, tol).ok()?;
        let (t1v, t2v) = (jvalue(&gj.t1), jvalue(&gj.t2));
        let (n1, n2) = (jvalue(&gj.n1), jvalue(&gj.n2));
        let lens = [linalg::norm(&jvalue(&gj.xu)), linalg::norm(&jvalue(&gj.xv))];
        let measure = |u: &(Vec4, [Vec4; 2]), w: &(Vec4, [Vec4; 2])| -> (Vec4, f64, f64) {
            let d = linalg::sub(&u.0, &w.0);
            let tang = linalg::dot(&d, &t1v).abs().max(linalg::dot(&d, &t2v).abs());
            let mut par: f64 = 0.0;
            for axis in 0..2 {
                let dd = linalg::scale(&linalg::sub(&u.1[axis], &w.1[axis]), 1.0 / lens[axis]);
                par = par.max(linalg::dot(&dd, &n1).abs()).max(linalg::dot(&dd, &n2).abs());
            }
            (d, tang, par)
        };
        let (d, tang, par) = measure(&xa, &xb);
        let (_, ctang, cpar) = measure(&xa, &xc);
        Some((d, tang, par, ctang, cpar))
    });
    let mut out = Permutability {
        delta: SectionField::new(Bundle::Normal, grid, per.iter().map(|v| v.map(|v| v.0)).collect()),
        delta_tangential: 0.0,
        delta_parallel_defect: 0.0,
        closed_tangential: 0.0,
        closed_parallel_defect: 0.0,
        nodes_checked: 0,
        nodes_masked: 0,
        worst_node: grid.point(0, 0),
    };
    let mut worst = -1.0;
    for (k, v) in per.iter().enumerate() {
        let Some((_, tang, par, ctang, cpar)) = *v else {
            out.nodes_masked += 1;
            continue;
        };
        out.nodes_checked += 1;
        out.delta_tangential = out.delta_tangential.max(tang);
        out.delta_parallel_defect = out.delta_parallel_defect.max(par);
        out.closed_tangential = out.closed_tangential.max(ctang);
        out.closed_parallel_defect = out.closed_parallel_defect.max(cpar);
        let score = par.max(cpar);
        if score > worst {
            worst = score;
            out.worst_node = grid.point_at(k);
        }
    }
    Ok(out)
}

/// Largest displacement `|envelope(evolute(x)) − x|`, where the envelope of
/// the evolute is gauged so that its `e` equals `c` at `base`.
pub fn roundtrip(surface: Arc<dyn Immersion>, grid: Grid, base: Vec2, tol: &Tolerances) -> Result<(f64, usize, usize)> {
    let ev = evolute(surface.clone(), grid, tol)?;
    let b = snap(&grid, base);
    let c0 = ev.images[grid.index(b.0, b.1)]
        .zip(surface.jets(grid.point(b.0, b.1), &[], 0).ok())
        .map(|(f, x)| linalg::sub(&f, &jvalue(&x)))
        .ok_or(Error::NoReachableBase)?;
    let spec = TransformSpec::new(TransformKind::Envelope);
    let (opts, _) = stage_options(&spec, ev.map.as_ref(), &ev.solution, b, tol)?;
    let source: Arc<dyn Immersion> = ev.map.clone();
    let source = if source.max_order() < 1 {
        FdImmersion::ensure_order2(source)
    } else {
        source
    };
    let back = Derived::new(source, spec.mix(), opts)?;
    let gauge = Gauge {
        e_offset: c0,
        z_seed: None,
    };
    let sol = solve_derived(&back, &ev.solution, b, &gauge)?;
    let d = per_node(&grid, |k| {
        let p = grid.point_at(k);
        let y = back.jets(p, sol.states[k].as_ref()?, 0).ok()?;
        let x = surface.jets(p, &[], 0).ok()?;
        Some(linalg::norm(&linalg::sub(&jvalue(&y), &jvalue(&x))))
    });
    let checked = d.iter().flatten().count();
    Ok((
        d.iter().flatten().fold(0.0, |a: f64, b| a.max(*b)),
        checked,
        d.len() - checked,
    ))
}
