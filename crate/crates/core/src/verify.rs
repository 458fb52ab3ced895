//! Named, tolerance-driven checks of the identities a surface and the
//! images of a transform pipeline satisfy, with a JSON report.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    c_two_ways, classify, geometry_jets, point_geometry_with_state, GeometryJets, PointClass, PointGeometry, Tolerances,
};
use crate::grid::{Bundle, Grid};
use crate::linalg::{self, jd, jsub, jvalue};
use crate::sections::{flat_chart_unchecked, max_gauss_curvature, parallel_field_unchecked, per_node, snap, Want};
use crate::surfaces::{Immersion, SurfaceSpec};
use crate::transforms::{
    apply_pipeline, c_gate, permutability_with_route, SurfaceFields, TransformKind, TransformSpec, TransformedSurface,
};
use crate::transport::{FdImmersion, Solution};
use crate::{Result, Vec2, Vec4};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Passed on the checked nodes, but more than half the grid was masked.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub nodes_checked: usize,
    pub nodes_masked: usize,
    pub pass: bool,
    pub status: CheckStatus,
    /// Chart point of the largest error; `None` when nothing was checked.
    pub worst_node: Option<Vec2>,
}

impl CheckReport {
    pub fn new(
        name: impl Into<String>,
        max_error: f64,
        tolerance: f64,
        checked: usize,
        masked: usize,
        worst_node: Option<Vec2>,
    ) -> Self {
        let max_error = if max_error.is_finite() { max_error } else { f64::MAX };
        let pass = max_error < tolerance;
        let status = if !pass {
            CheckStatus::Fail
        } else if 2 * masked > checked + masked {
            CheckStatus::Inconclusive
        } else {
            CheckStatus::Pass
        };
        CheckReport {
            name: name.into(),
            max_error,
            tolerance,
            nodes_checked: checked,
            nodes_masked: masked,
            pass,
            status,
            worst_node,
        }
    }

    /// Report over per-node errors; `None` entries are masked.
    pub fn from_nodes(name: impl Into<String>, tolerance: f64, grid: &Grid, errs: &[Option<f64>]) -> Self {
        let (mut max_error, mut worst, mut checked) = (0.0, None, 0);
        for (k, e) in errs.iter().enumerate() {
            let Some(e) = *e else { continue };
            checked += 1;
            let e = if e.is_finite() { e } else { f64::MAX };
            if worst.is_none() || e > max_error {
                max_error = e;
                worst = Some(grid.point_at(k));
            }
        }
        Self::new(name, max_error, tolerance, checked, errs.len() - checked, worst)
    }

    fn masked(name: impl Into<String>, tolerance: f64, grid: &Grid) -> Self {
        Self::new(name, 0.0, tolerance, 0, grid.len(), None)
    }
}

/// Check tolerances beyond [`Tolerances`]. The tight values apply where the
/// quantities come from exact jets; finite-difference quantities use
/// `Tolerances::fd_flatness_tol` instead. `overrides` replaces the
/// tolerance of a check by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteOptions {
    /// Gauge point for `e`, `k` and parallel fields; the domain centre if unset.
    pub base: Option<Vec2>,
    /// `c·α = g`
    pub identity_tol: f64,
    /// Relative agreement of the two formulas for `c`.
    pub relative_tol: f64,
    /// Derivative identities of the canonical sections.
    pub derivative_tol: f64,
    /// Loop transport defect per cell.
    pub holonomy_tol: f64,
    /// `df(T) ⊂ N` or `df(T) ⊂ T` with exact jacobians.
    pub orthogonality_tol: f64,
    /// `∇⊥ delta` of the permutability defect.
    pub permutability_tol: f64,
    pub overrides: BTreeMap<String, f64>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            base: None,
            identity_tol: 1e-8,
            relative_tol: 1e-9,
            derivative_tol: 1e-4,
            holonomy_tol: 1e-8,
            orthogonality_tol: 1e-6,
            permutability_tol: 1e-3,
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub surface: SurfaceSpec,
    pub grid: [usize; 2],
    pub base_point: Vec2,
    pub pipeline: Vec<TransformSpec>,
    pub tolerances: Tolerances,
    pub version: String,
}

/// The machine-readable report: a header and the ordered checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub header: ReportHeader,
    pub checks: Vec<CheckReport>,
}

impl SuiteReport {
    pub fn new(
        surface: &SurfaceSpec,
        grid: &Grid,
        base: Vec2,
        pipeline: &[TransformSpec],
        tol: &Tolerances,
        checks: Vec<CheckReport>,
    ) -> Self {
        SuiteReport {
            header: ReportHeader {
                surface: surface.clone(),
                grid: [grid.nu, grid.nv],
                base_point: base,
                pipeline: pipeline.to_vec(),
                tolerances: *tol,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
            checks,
        }
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckReport> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

/// Default gauge point: the grid node nearest the domain centre.
pub fn default_base(grid: &Grid) -> Vec2 {
    let b = grid.domain.bounds();
    let (i, j) = snap(grid, [0.5 * (b.u[0] + b.u[1]), 0.5 * (b.v[0] + b.v[1])]);
    grid.point(i, j)
}

/// Build the surface, apply the pipeline and run every check.
pub fn run_suite(
    spec: &SurfaceSpec,
    grid: Grid,
    pipeline: &[TransformSpec],
    tol: &Tolerances,
) -> Result<Vec<CheckReport>> {
    run_suite_with(spec, grid, pipeline, tol, &SuiteOptions::default())
}

pub fn run_suite_with(
    spec: &SurfaceSpec,
    grid: Grid,
    pipeline: &[TransformSpec],
    tol: &Tolerances,
    opts: &SuiteOptions,
) -> Result<Vec<CheckReport>> {
    tol.validate()?;
    let surface = spec.build()?;
    let base = opts.base.unwrap_or_else(|| default_base(&grid));
    let stages = apply_pipeline(surface.clone(), grid, pipeline, base, tol)?;
    Ok(run_checks(surface, grid, &stages, tol, opts))
}

/// Run every check on a surface and its already computed pipeline images.
pub fn run_checks(
    surface: Arc<dyn Immersion>,
    grid: Grid,
    stages: &[TransformedSurface],
    tol: &Tolerances,
    opts: &SuiteOptions,
) -> Vec<CheckReport> {
    let ctx = Ctx {
        base: opts.base.unwrap_or_else(|| default_base(&grid)),
        exact: surface.exact_order() >= 2,
        surface,
        grid,
        tol: *tol,
        opts,
    };
    let mut out = Vec::new();
    ctx.source_checks(&mut out);
    ctx.holonomy_checks(&mut out);
    ctx.section_checks(&mut out);
    let images: Vec<Vec<Option<PointGeometry>>> = stages.iter().map(|s| image_geometry(s, tol)).collect();
    for (i, stage) in stages.iter().enumerate() {
        ctx.stage_checks(i + 1, stage, &images[i], &mut out);
    }
    out.push(ctx.no_inflection(stages, &images));
    out.push(ctx.rank_consistency(stages));
    ctx.permutability(stages, &mut out);
    out
}

struct Ctx<'a> {
    surface: Arc<dyn Immersion>,
    grid: Grid,
    tol: Tolerances,
    opts: &'a SuiteOptions,
    base: Vec2,
    /// Whether the surface has exact second-order jets.
    exact: bool,
}

/// Orthonormal `(t1, t2, n1, n2)` from the jacobian columns.
fn frame4(xu: &Vec4, xv: &Vec4) -> Option<[Vec4; 4]> {
    let mut basis: Vec<Vec4> = Vec::with_capacity(4);
    let push = |basis: &mut Vec<Vec4>, v: &Vec4| -> f64 {
        let mut w = *v;
        for b in basis.iter() {
            w = linalg::axpy(&w, -linalg::dot(&w, b), b);
        }
        let n = linalg::norm(&w);
        if n > 1e-12 {
            basis.push(linalg::scale(&w, 1.0 / n));
        }
        n
    };
    if push(&mut basis, xu) <= 1e-12 || push(&mut basis, xv) <= 1e-12 {
        return None;
    }
    let mut axes: Vec<(f64, usize)> = (0..4)
        .map(|a| {
            let mut e = [0.0; 4];
            e[a] = 1.0;
            let r = basis.iter().fold(e, |w, b| linalg::axpy(&w, -linalg::dot(&w, b), b));
            (linalg::norm(&r), a)
        })
        .collect();
    axes.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
    let mut seeds = [axes[0].1, axes[1].1];
    seeds.sort_unstable();
    for a in seeds {
        let mut e = [0.0; 4];
        e[a] = 1.0;
        push(&mut basis, &e);
    }
    (basis.len() == 4).then(|| [basis[0], basis[1], basis[2], basis[3]])
}

fn max_entry(cols: &[Vec4; 2], against: &[Vec4]) -> f64 {
    cols.iter()
        .flat_map(|c| against.iter().map(move |t| linalg::dot(c, t).abs()))
        .fold(0.0, f64::max)
}

impl Ctx<'_> {
    fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.opts.overrides.get(name).copied().unwrap_or(default)
    }

    fn tier(&self, exact: bool, tight: f64) -> f64 {
        if exact {
            tight
        } else {
            self.tol.fd_flatness_tol
        }
    }

    fn flat_tol(&self, exact: bool) -> f64 {
        self.tier(exact, self.tol.flatness_tol)
    }

    fn report(&self, name: &str, default_tol: f64, errs: &[Option<f64>]) -> CheckReport {
        CheckReport::from_nodes(name, self.tolerance(name, default_tol), &self.grid, errs)
    }

    fn gate_tol(&self) -> Tolerances {
        Tolerances {
            degeneracy_tol: c_gate(self.surface.as_ref(), &self.tol),
            ..self.tol
        }
    }

    /// Identities of the source surface at single points.
    fn source_checks(&self, out: &mut Vec<CheckReport>) {
        let grid = self.grid;
        let order = self.surface.max_order().min(4);
        let geo: Vec<Option<GeometryJets>> = per_node(&grid, |k| {
            let x = self.surface.jets(grid.point_at(k), &[], order).ok()?;
            geometry_jets(&x, 0.0, &self.tol).ok()
        });
        let gate = self.gate_tol();
        let pgs: Vec<Option<PointGeometry>> = geo.iter().map(|g| g.as_ref().map(|g| g.values())).collect();
        let map = |f: &(dyn Fn(&GeometryJets, &PointGeometry) -> Option<f64> + Sync)| -> Vec<Option<f64>> {
            per_node(&grid, |k| f(geo[k].as_ref()?, pgs[k].as_ref()?))
        };

        let errs = map(&|_, pg| Some(pg.frame_defect()));
        out.push(self.report("frame_orthonormality", self.tol.frame_tol, &errs));

        let errs = map(&|_, pg| {
            let (c, _) = c_two_ways(pg, &gate).ok()?;
            let g = [pg.g[0][0], pg.g[0][1], pg.g[1][1]];
            (0..3)
                .map(|i| (linalg::dot(&c, &pg.second[i]) - g[i]).abs())
                .reduce(f64::max)
        });
        out.push(self.report("c_alpha_equals_g", self.tier(self.exact, self.opts.identity_tol), &errs));

        let errs = map(&|_, pg| {
            let (c1, c2) = c_two_ways(pg, &gate).ok()?;
            Some(linalg::norm(&linalg::sub(&c1, &c2)) / linalg::norm(&c1))
        });
        out.push(self.report(
            "c_two_formulas_agree",
            self.tier(self.exact, self.opts.relative_tol),
            &errs,
        ));

        let errs = map(&|gj, _| {
            if gj.order < 1 {
                return None;
            }
            let c = gj.c_ambient(&gate).ok()?;
            let b1 = jvalue(&gj.ambient(&gj.b[0]));
            let b2 = jvalue(&gj.ambient(&gj.b[1]));
            let d2 = jvalue(&gj.d_frame(&c, 1));
            let d1 = jvalue(&gj.d_frame(&c, 0));
            Some(linalg::dot(&b1, &d2).abs().max(linalg::dot(&b2, &d1).abs()))
        });
        out.push(self.report("asymptotic_c_derivative", self.opts.derivative_tol, &errs));

        let flat = self.flat_tol(self.exact);
        let errs = map(&|gj, pg| {
            if gj.order < 1 || pg.gauss_k.abs() > flat {
                return None;
            }
            let c = gj.c_ambient(&gate).ok()?;
            let a = jvalue(&gj.j_component(&c).ok()?);
            let b = jvalue(&gj.j_gradient(&c).ok()?);
            Some(linalg::norm(&linalg::sub(&a, &b)))
        });
        out.push(self.report("j_two_formulas_agree", self.opts.derivative_tol, &errs));

        let errs = map(&|gj, pg| {
            if gj.order < 2 || pg.gauss_k.abs() > flat {
                return None;
            }
            let c = gj.c_ambient(&gate).ok()?;
            let d = jsub(&c, &gj.j_component(&c).ok()?);
            (0..2)
                .map(|a| {
                    let v = jvalue(&gj.d_frame(&d, a));
                    linalg::dot(&v, &pg.n1).hypot(linalg::dot(&v, &pg.n2))
                })
                .reduce(f64::max)
        });
        out.push(self.report("c_minus_j_normal_parallel", self.opts.derivative_tol, &errs));
    }

    fn holonomy_checks(&self, out: &mut Vec<CheckReport>) {
        let src = Solution::stateless(self.grid);
        let tol = self.tier(self.exact, self.opts.holonomy_tol);
        let tangent = flat_chart_unchecked(self.surface.clone(), &src, self.base, &self.tol)
            .map(|c| c.holonomy_cells)
            .unwrap_or_else(|_| vec![None; self.grid.len()]);
        out.push(self.report("holonomy_tangent", tol, &tangent));
        let (i, j) = snap(&self.grid, self.base);
        let normal = crate::geometry::point_geometry(self.surface.as_ref(), self.grid.point(i, j), &self.tol)
            .and_then(|pg| {
                parallel_field_unchecked(self.surface.clone(), &src, Bundle::Normal, pg.n1, self.base, &self.tol)
            })
            .map(|f| f.holonomy_cells)
            .unwrap_or_else(|_| vec![None; self.grid.len()]);
        out.push(self.report("holonomy_normal", tol, &normal));
    }

    /// `∇⊤e = id` and `(D(k − e))⊥ = 0`. `e` is checked on its own chart so
    /// that it is not limited to where the envelope chart carrying `k` reaches.
    fn section_checks(&self, out: &mut Vec<CheckReport>) {
        let e_only = SurfaceFields::new(self.surface.clone(), self.grid, self.base, false, &self.tol);
        let with_k = SurfaceFields::new(self.surface.clone(), self.grid, self.base, true, &self.tol);
        let e = e_only.map(|f| self.section_defects(&f).0);
        let k = with_k.map(|f| self.section_defects(&f).1);
        let masked = vec![None; self.grid.len()];
        out.push(self.report("e_defining_eq", self.opts.derivative_tol, e.as_ref().unwrap_or(&masked)));
        out.push(self.report("k_defining_eq", self.opts.derivative_tol, k.as_ref().unwrap_or(&masked)));
    }

    /// Per-node `(e defect, k defect)` relative to the coordinate speed.
    fn section_defects(&self, fields: &SurfaceFields) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
        let grid = self.grid;
        let has_k = fields.map.available().k;
        let per = per_node(&grid, |k| {
            let s = fields.solution.states[k].as_ref()?;
            let want = Want {
                e: true,
                k: has_k,
                ..Default::default()
            };
            let f = fields.map.field_jets(grid.point_at(k), s, 1, want).ok()?;
            let cols = [jvalue(&jd(&f.x, 0)), jvalue(&jd(&f.x, 1))];
            let fr = frame4(&cols[0], &cols[1])?;
            let e = f.e?;
            let mut e_err: f64 = 0.0;
            let mut k_err: Option<f64> = None;
            for a in 0..2 {
                let len = linalg::norm(&cols[a]);
                let de = jvalue(&jd(&e, a));
                let tang = linalg::sub(&de, &cols[a]);
                let t = linalg::dot(&tang, &fr[0]).hypot(linalg::dot(&tang, &fr[1]));
                e_err = e_err.max(t / len);
                if let Some(kk) = &f.k {
                    let d = linalg::sub(&jvalue(&jd(kk, a)), &de);
                    let n = linalg::dot(&d, &fr[2]).hypot(linalg::dot(&d, &fr[3]));
                    k_err = Some(k_err.unwrap_or(0.0).max(n / len));
                }
            }
            Some((e_err, k_err))
        });
        (
            per.iter().map(|p| p.map(|p| p.0)).collect(),
            per.iter().map(|p| p.and_then(|p| p.1)).collect(),
        )
    }

    fn stage_checks(
        &self,
        n: usize,
        stage: &TransformedSurface,
        pgs: &[Option<PointGeometry>],
        out: &mut Vec<CheckReport>,
    ) {
        let grid = self.grid;
        let src_dim = stage.source.state_dim();
        let source = FdImmersion::ensure_order2(stage.source.clone());
        let parallel = stage.spec.is_parallel_type();
        let errs = per_node(&grid, |k| {
            if !stage.working(k) {
                return None;
            }
            let s = stage.solution.states[k].as_ref()?;
            let x = source.jets(grid.point_at(k), &s[..src_dim], 1).ok()?;
            let fr = frame4(&jvalue(&jd(&x, 0)), &jvalue(&jd(&x, 1)))?;
            let against = if parallel { &fr[2..] } else { &fr[..2] };
            Some(max_entry(&stage.jacobians[k]?, against))
        });
        let exact = stage.map.exact_order() >= 1 && stage.source.exact_order() >= 1;
        let name = if parallel { "parallelism" } else { "orthogonality" };
        out.push(self.report(
            &format!("{name}_{n}"),
            self.tier(exact, self.opts.orthogonality_tol),
            &errs,
        ));

        let kind = stage.spec.kind;
        let flat = !matches!(kind, TransformKind::Envelope);
        let normal_flat = matches!(
            kind,
            TransformKind::Envelope | TransformKind::Orthogonal { .. } | TransformKind::Parallel { .. }
        );
        let ftol = self.flat_tol(stage.analytic);
        if flat {
            let errs: Vec<Option<f64>> = pgs.iter().map(|p| p.as_ref().map(|p| p.gauss_k.abs())).collect();
            out.push(self.report(&format!("image_flatness_{n}"), ftol, &errs));
        }
        if normal_flat {
            let errs: Vec<Option<f64>> = pgs
                .iter()
                .map(|p| p.as_ref().map(crate::geometry::normal_degeneracy))
                .collect();
            out.push(self.report(&format!("image_normal_flatness_{n}"), ftol, &errs));
        }
    }

    /// Count of inflection points among the working nodes of orthogonal and
    /// parallel images; any inflection fails.
    fn no_inflection(&self, stages: &[TransformedSurface], images: &[Vec<Option<PointGeometry>>]) -> CheckReport {
        let mut errs: Vec<Option<f64>> = vec![None; self.grid.len()];
        for (stage, pgs) in stages.iter().zip(images) {
            if !matches!(
                stage.spec.kind,
                TransformKind::Orthogonal { .. } | TransformKind::Parallel { .. }
            ) {
                continue;
            }
            let ctol = Tolerances {
                degeneracy_tol: self.tier(stage.analytic, self.tol.degeneracy_tol),
                ..self.tol
            };
            for (k, pg) in pgs.iter().enumerate() {
                if let Some(pg) = pg {
                    let c = classify(pg, &ctol);
                    let bad = c.kind == PointClass::Inflection || c.inflection;
                    errs[k] = Some(errs[k].unwrap_or(0.0).max(if bad { 1.0 } else { 0.0 }));
                }
            }
        }
        self.report("image_no_inflection", 0.5, &errs)
    }

    /// In the asymptotic frame of a flat semiumbilical source,
    /// `df(t_a) = ± w^a b_a` with `w = j + Z` for evolutes and shifts and
    /// `w = e` for envelopes; rank-deficient nodes must lie within one cell
    /// of a zero of `w^1` or `w^2`.
    fn rank_consistency(&self, stages: &[TransformedSurface]) -> CheckReport {
        let grid = self.grid;
        let mut errs: Vec<Option<f64>> = vec![None; grid.len()];
        let mut exact = true;
        for stage in stages {
            let (sign, want) = match stage.spec.kind {
                TransformKind::Evolute | TransformKind::Shift { .. } => (
                    1.0,
                    Want {
                        c: true,
                        j: true,
                        ..Default::default()
                    },
                ),
                TransformKind::Envelope => (
                    -1.0,
                    Want {
                        c: true,
                        e: true,
                        ..Default::default()
                    },
                ),
                _ => continue,
            };
            let src = source_solution(stage);
            let (kmax, analytic) = max_gauss_curvature(&stage.source, &src, &self.tol);
            if kmax > self.flat_tol(analytic) {
                continue;
            }
            exact &= stage.map.exact_order() >= 1 && analytic;
            let per = per_node(&grid, |k| {
                let s = stage.solution.states[k].as_ref()?;
                let f = stage.map.field_jets(grid.point_at(k), s, 0, want).ok()?;
                let gj = f.geometry.as_ref()?;
                let w = match stage.spec.kind {
                    TransformKind::Envelope => jvalue(&f.e?),
                    _ => {
                        let j = jvalue(&f.j?);
                        f.zt.map_or(j, |z| linalg::add(&j, &jvalue(&z)))
                    }
                };
                let t = [jvalue(&gj.t1), jvalue(&gj.t2)];
                let b = [jvalue(&gj.ambient(&gj.b[0])), jvalue(&gj.ambient(&gj.b[1]))];
                let wc = [linalg::dot(&w, &t[0]), linalg::dot(&w, &t[1])];
                let jac = stage.jacobians[k]?;
                let mut resid: f64 = 0.0;
                for a in 0..2 {
                    let p = [gj.frame_chart[a][0].value(), gj.frame_chart[a][1].value()];
                    let df = linalg::axpy(&linalg::scale(&jac[0], p[0]), p[1], &jac[1]);
                    let want = linalg::scale(&b[a], sign * wc[a]);
                    resid = resid.max(linalg::norm(&linalg::sub(&df, &want)));
                }
                Some((wc, resid, linalg::norm(&w)))
            });
            for k in 0..grid.len() {
                let Some((wc, resid, wn)) = per[k] else { continue };
                let mut e = resid;
                if stage.rank_map[k].is_some_and(|r| r < 2) && !near_zero(&grid, &per, k, wc, wn) {
                    e = e.max(1.0);
                }
                errs[k] = Some(errs[k].unwrap_or(0.0).max(e));
            }
        }
        let tol = self.tier(exact, self.opts.orthogonality_tol);
        self.report("rank_map_consistency", tol, &errs)
    }

    fn permutability(&self, stages: &[TransformedSurface], out: &mut Vec<CheckReport>) {
        let two_orthogonal = stages.len() >= 2
            && stages[..2]
                .iter()
                .all(|s| matches!(s.spec.kind, TransformKind::Orthogonal { .. }));
        if !two_orthogonal {
            return;
        }
        let names = [
            ("permutability", self.opts.permutability_tol),
            ("permutability_tangential", self.opts.derivative_tol),
            ("permutability_closed", self.opts.permutability_tol),
            ("permutability_closed_tangential", self.opts.derivative_tol),
        ];
        match permutability_with_route(self.surface.clone(), &stages[..2], self.base, &self.tol) {
            Ok(p) => {
                let vals = [
                    p.delta_parallel_defect,
                    p.delta_tangential,
                    p.closed_parallel_defect,
                    p.closed_tangential,
                ];
                for ((name, tol), v) in names.into_iter().zip(vals) {
                    let worst = (p.nodes_checked > 0).then_some(p.worst_node);
                    out.push(CheckReport::new(
                        name,
                        v,
                        self.tolerance(name, tol),
                        p.nodes_checked,
                        p.nodes_masked,
                        worst,
                    ));
                }
            }
            Err(_) => {
                for (name, tol) in names {
                    out.push(CheckReport::masked(name, self.tolerance(name, tol), &self.grid));
                }
            }
        }
    }
}

/// Whether `w^1` or `w^2` vanishes or changes sign within one cell of node `k`.
fn near_zero(grid: &Grid, per: &[Option<([f64; 2], f64, f64)>], k: usize, wc: [f64; 2], wn: f64) -> bool {
    let tiny = 1e-8 * (1.0 + wn);
    if wc.iter().any(|w| w.abs() <= tiny) {
        return true;
    }
    let (i, j) = grid.ij(k);
    for di in -1i64..=1 {
        for dj in -1i64..=1 {
            let (a, b) = (i as i64 + di, j as i64 + dj);
            if a < 0 || b < 0 || a >= grid.nu as i64 || b >= grid.nv as i64 {
                continue;
            }
            if let Some((w, _, _)) = per[grid.index(a as usize, b as usize)] {
                if (0..2).any(|c| w[c] * wc[c] <= 0.0) {
                    return true;
                }
            }
        }
    }
    false
}

/// The source's own solution, cut out of a stage solution.
fn source_solution(stage: &TransformedSurface) -> Solution {
    let d = stage.source.state_dim();
    Solution {
        grid: stage.solution.grid,
        start: stage.solution.start,
        states: stage
            .solution
            .states
            .iter()
            .map(|s| s.as_ref().map(|s| s[..d].to_vec()))
            .collect(),
        substeps: stage.solution.substeps,
    }
}

/// Point geometry of the image at its working nodes.
pub fn image_geometry(stage: &TransformedSurface, tol: &Tolerances) -> Vec<Option<PointGeometry>> {
    let img = stage.immersion();
    let grid = stage.grid();
    per_node(&grid, |k| {
        if !stage.working(k) {
            return None;
        }
        let s = stage.solution.states[k].as_ref()?;
        point_geometry_with_state(img.as_ref(), grid.point_at(k), s, tol).ok()
    })
}
