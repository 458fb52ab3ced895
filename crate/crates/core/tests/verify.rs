mod common;

use common::*;
use fourfold::verify::{run_suite_with, CheckReport, CheckStatus, SuiteOptions};
use fourfold::{Domain, Grid, SurfaceSpec, Tolerances, TransformKind, TransformSpec};

fn show(reports: &[CheckReport]) {
    for r in reports {
        eprintln!(
            "{:34} {:?} err {:.3e} tol {:.0e} checked {} masked {}",
            r.name, r.status, r.max_error, r.tolerance, r.nodes_checked, r.nodes_masked
        );
    }
}

fn find<'a>(reports: &'a [CheckReport], name: &str) -> &'a CheckReport {
    reports
        .iter()
        .find(|r| r.name == name)
        .unwrap_or_else(|| panic!("missing {name}"))
}

fn run(spec: &SurfaceSpec, n: usize, pipeline: &[TransformSpec], base: [f64; 2]) -> Vec<CheckReport> {
    let grid = Grid::new(spec.domain(), n, n).unwrap();
    let opts = SuiteOptions {
        base: Some(base),
        ..Default::default()
    };
    let r = run_suite_with(spec, grid, pipeline, &Tolerances::default(), &opts).unwrap();
    show(&r);
    for c in &r {
        assert_eq!(c.nodes_checked + c.nodes_masked, grid.len());
        assert_eq!(c.pass, c.max_error < c.tolerance);
    }
    r
}

#[test]
fn torus_evolute_is_rank_zero_and_consistent() {
    let r = run(
        &torus_spec(torus_domain()),
        12,
        &[TransformSpec::new(TransformKind::Evolute)],
        [0.0, 0.0],
    );
    assert_eq!(find(&r, "rank_map_consistency").status, CheckStatus::Pass);
    assert_eq!(find(&r, "c_alpha_equals_g").status, CheckStatus::Pass);
    assert!(r.iter().all(|c| c.status != CheckStatus::Fail));
}

#[test]
fn plane_masks_c_identity() {
    let plane = SurfaceSpec::Expression {
        domain: Domain::new(-1.0, 1.0, -1.0, 1.0).unwrap(),
        components: ["u", "v", "0", "0"].map(String::from),
    };
    let r = run(&plane, 9, &[], [0.0, 0.0]);
    let c = find(&r, "c_alpha_equals_g");
    assert_eq!(c.nodes_checked, 0);
    assert_eq!(c.status, CheckStatus::Inconclusive);
}

#[test]
fn ellipse_product_orthogonal_half_passes() {
    let spec = ellipse_spec(ellipse_domain());
    let r = run(
        &spec,
        16,
        &[TransformSpec::new(TransformKind::Orthogonal { t: 0.5 })],
        [1.4, 1.4],
    );
    let failed: Vec<&str> = r
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| c.name.as_str())
        .collect();
    assert!(failed.is_empty(), "{failed:?}");
    assert_eq!(find(&r, "orthogonality_1").status, CheckStatus::Pass);
}

#[test]
fn reports_are_deterministic() {
    let spec = torus_spec(torus_domain());
    let p = [TransformSpec::new(TransformKind::Envelope)];
    let a = serde_json::to_string(&run(&spec, 9, &p, [0.3, 0.3])).unwrap();
    let b = serde_json::to_string(&run(&spec, 9, &p, [0.3, 0.3])).unwrap();
    assert_eq!(a, b);
}
