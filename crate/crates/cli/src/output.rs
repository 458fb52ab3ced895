//! Per-stage data and the CSV / JSON files written from it.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use fourfold::geometry::point_geometry;
use fourfold::transforms::{rank_of, SurfaceFields};
use fourfold::transport::FdImmersion;
use fourfold::verify::image_geometry;
use fourfold::{
    classify, linalg, Grid, Immersion, PointGeometry, SuiteReport, Tolerances, TransformedSurface, Vec2, Vec4,
};
use serde::Serialize;

use crate::CliError;

/// What the output files need from the source surface (stage 0) or one image.
pub struct StageData {
    pub name: String,
    pub grid: Grid,
    pub analytic: bool,
    pub points: Vec<Option<Vec4>>,
    pub rank: Vec<Option<u8>>,
    pub geometry: Vec<Option<PointGeometry>>,
    /// `(|c|, |e|, |j|)` per node.
    pub norms: Vec<[Option<f64>; 3]>,
}

impl StageData {
    pub fn source(surface: &Arc<dyn Immersion>, grid: Grid, base: Vec2, tol: &Tolerances, fields: bool) -> Self {
        let analytic = surface.exact_order() >= 2;
        let geo_src = FdImmersion::ensure_order2(surface.clone());
        let geometry: Vec<Option<PointGeometry>> = grid
            .points()
            .map(|p| point_geometry(geo_src.as_ref(), p, tol).ok())
            .collect();
        let points = grid
            .points()
            .map(|p| surface.jets(p, &[], 0).ok().map(|x| linalg::jvalue(&x)))
            .collect();
        let rank = geometry
            .iter()
            .map(|g| {
                g.as_ref()
                    .map(|g| rank_of(linalg::singular_values(&g.jacobian[0], &g.jacobian[1]), tol.rank_tol))
            })
            .collect();
        let norms = if fields {
            match SurfaceFields::new(surface.clone(), grid, base, false, tol) {
                Ok(f) => (0..grid.len()).map(|k| f.norms(k)).collect(),
                Err(_) => vec![[None; 3]; grid.len()],
            }
        } else {
            vec![[None; 3]; grid.len()]
        };
        StageData {
            name: "source".into(),
            grid,
            analytic,
            points,
            rank,
            geometry,
            norms,
        }
    }

    pub fn image(stage: &TransformedSurface, base: Vec2, tol: &Tolerances, fields: bool) -> Self {
        let grid = stage.grid();
        let norms = if fields {
            match SurfaceFields::over(stage.map.clone(), &stage.solution, base, false, tol) {
                Ok(f) => (0..grid.len())
                    .map(|k| if stage.working(k) { f.norms(k) } else { [None; 3] })
                    .collect(),
                Err(_) => vec![[None; 3]; grid.len()],
            }
        } else {
            vec![[None; 3]; grid.len()]
        };
        StageData {
            name: stage.spec.name().into(),
            grid,
            analytic: stage.analytic,
            points: stage.images.clone(),
            rank: stage.rank_map.clone(),
            geometry: image_geometry(stage, tol),
            norms,
        }
    }

    /// Counts of nodes with rank 0, 1, 2 and of masked nodes.
    pub fn rank_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.rank {
            c[r.map_or(3, |r| r as usize)] += 1;
        }
        c
    }
}

/// Classification thresholds; finite-difference data gets the looser tier.
pub fn class_tol(analytic: bool, tol: &Tolerances) -> Tolerances {
    if analytic {
        *tol
    } else {
        Tolerances {
            degeneracy_tol: tol.fd_flatness_tol,
            ..*tol
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>, CliError> {
    let f = File::create(path).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn io(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("cannot write {}: {e}", path.display()))
}

/// `u,v,x1,x2,x3,x4,rank`; masked nodes have empty coordinates.
pub fn write_mesh(path: &Path, s: &StageData) -> Result<(), CliError> {
    let mut w = create(path)?;
    let err = io(path);
    w.write_record(["u", "v", "x1", "x2", "x3", "x4", "rank"])
        .map_err(&err)?;
    for (k, p) in s.grid.points().enumerate() {
        let x = s.points[k];
        let mut row = vec![num(p[0]), num(p[1])];
        row.extend((0..4).map(|i| opt(x.map(|x| x[i]))));
        row.push(s.rank[k].map(|r| r.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(&err)?;
    }
    w.flush()
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Geometry and section magnitudes per node, with a masked flag for each.
pub fn write_diag(path: &Path, s: &StageData, tol: &Tolerances) -> Result<(), CliError> {
    let ctol = class_tol(s.analytic, tol);
    let mut w = create(path)?;
    let err = io(path);
    w.write_record([
        "u",
        "v",
        "class",
        "gauss_k",
        "normal_degeneracy",
        "c_norm",
        "e_norm",
        "j_norm",
        "masked",
        "c_masked",
        "e_masked",
        "j_masked",
    ])
    .map_err(&err)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for (k, p) in s.grid.points().enumerate() {
        let g = s.geometry[k].as_ref();
        let [c, e, j] = s.norms[k];
        let row = vec![
            num(p[0]),
            num(p[1]),
            g.map(|g| classify(g, &ctol).kind.as_str().to_string())
                .unwrap_or_default(),
            opt(g.map(fourfold::gauss_curvature)),
            opt(g.map(fourfold::normal_degeneracy)),
            opt(c),
            opt(e),
            opt(j),
            flag(g.is_none()),
            flag(c.is_none()),
            flag(e.is_none()),
            flag(j.is_none()),
        ];
        w.write_record(&row).map_err(&err)?;
    }
    w.flush()
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct StageSummary {
    pub index: usize,
    pub kind: String,
    pub rank0: usize,
    pub rank1: usize,
    pub rank2: usize,
    pub masked: usize,
    pub degenerate: bool,
}

impl StageSummary {
    pub fn new(index: usize, s: &StageData) -> Self {
        let [r0, r1, r2, m] = s.rank_counts();
        StageSummary {
            index,
            kind: s.name.clone(),
            rank0: r0,
            rank1: r1,
            rank2: r2,
            masked: m,
            degenerate: r2 == 0,
        }
    }

    pub fn note(&self) -> Option<String> {
        let total = self.rank0 + self.rank1 + self.rank2;
        if self.degenerate {
            Some(format!(
                "stage {} ({}): degenerate image, rank 0 at {} and rank 1 at {} of {} nodes",
                self.index, self.kind, self.rank0, self.rank1, total
            ))
        } else if self.rank2 < total {
            Some(format!(
                "stage {} ({}): rank drops below 2 at {} of {} nodes",
                self.index,
                self.kind,
                total - self.rank2,
                total
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunReport<'a> {
    #[serde(flatten)]
    pub suite: &'a SuiteReport,
    pub stages: Vec<StageSummary>,
    pub notes: Vec<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut f = BufWriter::new(File::create(path).map_err(err)?);
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(f).and_then(|_| f.flush()).map_err(err)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}
