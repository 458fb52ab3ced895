//! Run configuration: parsing, path resolution and validation.

use std::fs;
use std::path::{Path, PathBuf};

use fourfold::{Grid, SuiteOptions, SurfaceSpec, Tolerances, TransformSpec, Vec2};
use serde::Deserialize;
use serde_json::Value;

use crate::CliError;

pub const MIN_GRID: usize = 8;
pub const MAX_STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Mesh,
    Diagnostics,
    Report,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSize {
    pub nu: usize,
    pub nv: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub geometry: Tolerances,
    pub checks: SuiteOptions,
}

/// The config file as written. `surface` is either an inline spec or a path
/// (JSON spec, or a `.csv` mesh) relative to the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    surface: Value,
    grid: GridSize,
    #[serde(default)]
    base_point: Option<Vec2>,
    #[serde(default)]
    pipeline: Vec<Value>,
    #[serde(default)]
    tolerances: ToleranceConfig,
    #[serde(default)]
    outputs: Option<PathBuf>,
    #[serde(default)]
    emit: Option<Vec<Emit>>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub surface: SurfaceSpec,
    pub grid: Grid,
    pub pipeline: Vec<TransformSpec>,
    pub tolerances: Tolerances,
    pub checks: SuiteOptions,
    pub outputs: PathBuf,
    pub emit: Vec<Emit>,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub grid: Option<(usize, usize)>,
    pub base_point: Option<Vec2>,
}

impl RunConfig {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, dir, ov)
    }

    pub fn parse(text: &str, dir: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        let surface = load_surface(raw.surface, dir)?;
        let (nu, nv) = ov.grid.unwrap_or((raw.grid.nu, raw.grid.nv));
        if nu < MIN_GRID || nv < MIN_GRID {
            return Err(CliError::Config(format!(
                "grid too small: {nu}x{nv}, need at least {MIN_GRID}x{MIN_GRID}"
            )));
        }
        let grid = Grid::new(surface.domain(), nu, nv).map_err(|e| CliError::Config(e.to_string()))?;
        if raw.pipeline.len() > MAX_STAGES {
            return Err(CliError::Config(format!(
                "pipeline has {} stages, at most {MAX_STAGES} are allowed",
                raw.pipeline.len()
            )));
        }
        let pipeline = raw
            .pipeline
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_json::from_value::<TransformSpec>(v)
                    .map_err(|e| CliError::Config(format!("pipeline stage {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let tolerances = raw.tolerances.geometry;
        tolerances.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let base_point = ov.base_point.or(raw.base_point);
        if let Some(b) = base_point {
            if !surface.domain().contains(b) {
                return Err(CliError::Config(format!(
                    "base point ({}, {}) is outside the surface domain",
                    b[0], b[1]
                )));
            }
        }
        let mut checks = raw.tolerances.checks;
        checks.base = base_point.or(checks.base);
        let outputs = match &ov.out {
            Some(p) => p.clone(),
            None => dir.join(raw.outputs.unwrap_or_else(|| PathBuf::from("out"))),
        };
        Ok(RunConfig {
            surface,
            grid,
            pipeline,
            tolerances,
            checks,
            outputs,
            emit: raw
                .emit
                .unwrap_or_else(|| vec![Emit::Mesh, Emit::Diagnostics, Emit::Report]),
        })
    }

    pub fn emits(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }
}

fn load_surface(v: Value, dir: &Path) -> Result<SurfaceSpec, CliError> {
    match v {
        Value::String(p) => {
            let path = dir.join(&p);
            let text = fs::read_to_string(&path)
                .map_err(|e| CliError::Io(format!("cannot read surface {}: {e}", path.display())))?;
            let spec = if path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
                SurfaceSpec::from_mesh_csv(&text)
            } else {
                SurfaceSpec::from_json(&text)
            };
            spec.map_err(|e| CliError::Config(format!("surface {}: {e}", path.display())))
        }
        other => serde_json::from_value(other).map_err(|e| CliError::Config(format!("invalid surface spec: {e}"))),
    }
}

/// `NUxNV`
pub fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NUxNV, got '{s}'"))?;
    let n = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad grid size '{t}'"));
    Ok((n(a)?, n(b)?))
}

/// `U,V`
pub fn parse_point(s: &str) -> Result<Vec2, String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected U,V, got '{s}'"))?;
    let n = |t: &str| match t.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("bad coordinate '{t}'")),
    };
    Ok([n(a)?, n(b)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    const TORUS: &str = r#"{"kind":"product","domain":[0,1,0,1],
        "curve1":{"kind":"circle","r":1,"arc_length":true},
        "curve2":{"kind":"circle","r":1,"arc_length":true}}"#;

    fn cfg(extra: &str) -> String {
        format!(r#"{{"surface":{TORUS},"grid":{{"nu":16,"nv":16}}{extra}}}"#)
    }

    #[test]
    fn parses_minimal() {
        let c = RunConfig::parse(&cfg(""), Path::new("/tmp"), &Overrides::default()).unwrap();
        assert_eq!((c.grid.nu, c.grid.nv), (16, 16));
        assert!(c.pipeline.is_empty());
        assert_eq!(c.outputs, PathBuf::from("/tmp/out"));
        assert!(c.emits(Emit::Report));
    }

    #[test]
    fn overrides_win() {
        let ov = Overrides {
            grid: Some((9, 10)),
            base_point: Some([0.5, 0.5]),
            out: Some("x".into()),
        };
        let c = RunConfig::parse(&cfg(r#","base_point":[0.1,0.1]"#), Path::new("."), &ov).unwrap();
        assert_eq!((c.grid.nu, c.grid.nv), (9, 10));
        assert_eq!(c.checks.base, Some([0.5, 0.5]));
        assert_eq!(c.outputs, PathBuf::from("x"));
    }

    #[test]
    fn rejects_bad_configs() {
        let err = |s: String| {
            RunConfig::parse(&s, Path::new("."), &Overrides::default())
                .unwrap_err()
                .to_string()
        };
        assert!(err(cfg("").replace("16", "4")).contains("grid too small"));
        assert!(err(cfg(r#","pipeline":[{"kind":"spiral"}]"#)).contains("unknown pipeline stage 'spiral'"));
        assert!(err(cfg(r#","pipeline":[{"kind":"evolute"},{"kind":"evolute"},{"kind":"evolute"},{"kind":"evolute"},{"kind":"evolute"}]"#)).contains("at most 4"));
        assert!(err(cfg(r#","base_point":[5,5]"#)).contains("outside"));
        assert!(err(cfg(r#","colour":"red""#)).contains("unknown field"));
    }

    #[test]
    fn cli_value_parsers() {
        assert_eq!(parse_grid("32x16"), Ok((32, 16)));
        assert!(parse_grid("32").is_err());
        assert_eq!(parse_point("0.5, 1"), Ok([0.5, 1.0]));
        assert!(parse_point("nan,1").is_err());
    }
}
