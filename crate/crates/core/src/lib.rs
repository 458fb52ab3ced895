//! Numerical differential geometry of surfaces in R⁴ with flat tangent and/or
//! flat normal bundles.
//!
//! The crate builds the canonical sections of such surfaces (the normal field
//! `c` with `c·α = g`, the tangent field `e` with `∇⊤e = id`, the gradient
//! field `j = ½ grad(c·c)` and the normal field `k` with `(D(k − e))⊥ = 0`),
//! applies the evolute, envelope, orthogonal and parallel transformations they
//! induce, and verifies the resulting identities numerically.
//!
//! Derivatives come from truncated Taylor jets ([`jets`]) so that analytic
//! surfaces get machine-precision curvature of their transforms; fields that
//! are only defined through parallel transport are integrated along grid
//! paths ([`sections`]) and differentiated through the same jet machinery.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod expr;
pub mod geometry;
pub mod grid;
pub mod jets;
pub mod linalg;
pub mod sections;

pub mod surfaces;
pub mod transforms;
pub mod transport;
pub mod verify;

use thiserror::Error;

pub use geometry::{
    classify, eta_of_theta, gauss_curvature, normal_degeneracy, point_geometry, Classification, PointClass,
    PointGeometry, Tolerances,
};
pub use grid::{Grid, SectionField};
pub use jets::{fd_jet, FdConfig, Jet2};
pub use surfaces::{Domain, Immersion, PlaneCurve, SurfaceSpec};
pub use transforms::{TransformKind, TransformSpec, TransformedSurface};
pub use verify::{run_suite, CheckReport, CheckStatus, SuiteOptions, SuiteReport};

pub type Vec2 = [f64; 2];
pub type Vec4 = [f64; 4];
/// Jets of the four ambient coordinates of a map into R⁴.
pub type Jet4 = [Jet2; 4];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Jet(#[from] jets::JetError),
    #[error(transparent)]
    Fd(#[from] jets::FdError),
    #[error(transparent)]
    Parse(#[from] expr::ParseError),
    #[error("point ({0}, {1}) is outside the surface domain")]
    OutOfDomain(f64, f64),
    #[error("jets of order {requested} requested; this surface provides at most {available}")]
    OrderUnavailable { requested: usize, available: usize },
    #[error("not an immersion at point ({0}, {1})")]
    NotImmersion(f64, f64),
    #[error("c undefined: {0}")]
    CUndefined(&'static str),
    #[error("degenerate ellipse data")]
    DegenerateEllipse,
    #[error("tangent bundle not flat (max K = {0:e})")]
    TangentNotFlat(f64),
    #[error("normal bundle not flat (max normal degeneracy = {0:e})")]
    NormalNotFlat(f64),
    #[error("path-dependence detected (holonomy defect {0:e})")]
    PathDependence(f64),
    #[error("envelope not an immersion on {0:.1}% of the grid")]
    EnvelopeNotImmersion(f64),
    #[error("Z not parallel (defect {0:e})")]
    NotParallel(f64),
    #[error("k is not defined for t = 1")]
    KAtTOne,
    #[error("invalid surface spec: {0}")]
    InvalidSpec(String),
    #[error("no grid node reachable from the gauge base point")]
    NoReachableBase,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
