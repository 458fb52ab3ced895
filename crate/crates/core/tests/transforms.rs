mod common;

use std::time::Instant;

use common::*;
use fourfold::transforms::{
    apply_pipeline, envelope, evolute, orthogonal_transform, permutability_defect, pullback_sections, roundtrip,
    TransformKind, TransformSpec,
};
use fourfold::{Domain, Error, Grid, SurfaceSpec, Tolerances};

fn grid(d: Domain, n: usize) -> Grid {
    Grid::new(d, n, n).unwrap()
}

#[test]
fn evolute_of_ellipse_product_is_product_of_evolutes() {
    let tol = Tolerances::default();
    let g = grid(ellipse_domain(), 17);
    let ev = evolute(ellipse_product(), g, &tol).unwrap();
    for k in 0..g.len() {
        let [u, v] = g.point_at(k);
        assert!(dist(&ev.images[k].unwrap(), &lift(E1.evolute(u), E2.evolute(v))) < 1e-12);
        assert_eq!(ev.rank_map[k], Some(2));
    }
}

#[test]
fn evolute_of_torus_collapses_to_origin() {
    let tol = Tolerances::default();
    let g = grid(torus_domain(), 9);
    let ev = evolute(clifford_torus(), g, &tol).unwrap();
    for k in 0..g.len() {
        assert!(norm(&ev.images[k].unwrap()) < 1e-12);
        assert_eq!(ev.rank_map[k], Some(0));
    }
}

#[test]
fn torus_envelope_subtracts_flat_position() {
    let tol = Tolerances::default();
    let g = grid(torus_domain(), 13);
    let en = envelope(clifford_torus(), g, [0.0, 0.0], &tol).unwrap();
    for k in 0..g.len() {
        let [u, v] = g.point_at(k);
        let want = [
            u.cos() + u * u.sin(),
            u.sin() - u * u.cos(),
            v.cos() + v * v.sin(),
            v.sin() - v * v.cos(),
        ];
        assert!(dist(&en.images[k].unwrap(), &want) < 1e-9);
    }
    assert_eq!(en.rank_map[0], Some(0));
}

#[test]
fn orthogonal_image_is_normal_to_source() {
    let tol = Tolerances::default();
    let g = grid(ellipse_domain(), 13);
    let s = ellipse_product();
    let o = orthogonal_transform(s.clone(), g, 0.3, [1.4, 1.4], &tol).unwrap();
    let img = o.immersion();
    let mut worst: f64 = 0.0;
    for k in (0..g.len()).filter(|&k| o.working(k)) {
        let p = g.point_at(k);
        let y = img.jets(p, o.solution.states[k].as_ref().unwrap(), 1).unwrap();
        let x = s.jets(p, &[], 1).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let ya: Vec<f64> = y.iter().map(|c| c.d(a).value()).collect();
                let xb: Vec<f64> = x.iter().map(|c| c.d(b).value()).collect();
                worst = worst.max(ya.iter().zip(&xb).map(|(p, q)| p * q).sum::<f64>().abs());
            }
        }
    }
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn evolute_then_envelope_returns_source() {
    let tol = Tolerances::default();
    let (d, checked, _) = roundtrip(ellipse_product(), grid(ellipse_domain(), 17), [1.4, 1.4], &tol).unwrap();
    assert!(checked > 200);
    assert!(d < 1e-8, "{d}");
}

#[test]
fn pullback_formulas_hold_on_ellipse_product() {
    let tol = Tolerances::default();
    let t0 = Instant::now();
    let pb = pullback_sections(
        ellipse_product(),
        grid(ellipse_domain(), 17),
        0.3,
        [1.4, 1.4],
        true,
        &tol,
    )
    .unwrap();
    let mut ce: f64 = 0.0;
    let mut ee: f64 = 0.0;
    let e_f = pb.e_formula.as_ref().unwrap();
    let e_i = pb.e_image.as_ref().unwrap();
    for k in (0..pb.c_formula.values.len()).filter(|&k| pb.image.working(k)) {
        if let (Some(a), Some(b)) = (pb.c_formula.values[k], pb.c_image.values[k]) {
            ce = ce.max(dist(&a, &b));
        }
        if let (Some(a), Some(b)) = (e_f.values[k], e_i.values[k]) {
            ee = ee.max(dist(&a, &b));
        }
    }
    eprintln!("pullback {:?} c {ce:e} e {ee:e}", t0.elapsed());
    assert!(ce < 1e-6, "{ce}");
    assert!(ee < 1e-6, "{ee}");
    assert!(matches!(
        pullback_sections(
            ellipse_product(),
            grid(ellipse_domain(), 5),
            1.0,
            [1.4, 1.4],
            true,
            &tol
        ),
        Err(Error::KAtTOne)
    ));
}

#[test]
fn orthogonal_transforms_commute_up_to_parallel_section() {
    let tol = Tolerances::default();
    let t0 = Instant::now();
    let p = permutability_defect(
        ellipse_product(),
        grid(ellipse_domain(), 17),
        0.3,
        0.6,
        [1.4, 1.4],
        &tol,
    )
    .unwrap();
    eprintln!(
        "permutability {:?} tang {:e} par {:e} closed {:e} {:e} checked {} masked {}",
        t0.elapsed(),
        p.delta_tangential,
        p.delta_parallel_defect,
        p.closed_tangential,
        p.closed_parallel_defect,
        p.nodes_checked,
        p.nodes_masked
    );
    assert!(p.delta_tangential < 1e-6);
    assert!(p.delta_parallel_defect < 1e-4);
    assert!(p.closed_tangential < 1e-4);
    assert!(p.closed_parallel_defect < 1e-3);
}

#[test]
fn spec_json_round_trip_and_rejection() {
    let s: TransformSpec = serde_json::from_str(r#"{"kind":"orthogonal","t":0.3,"gauge":[1.0,1.0]}"#).unwrap();
    assert_eq!(s.kind, TransformKind::Orthogonal { t: 0.3 });
    let back: TransformSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    for bad in [
        r#"{"kind":"orthogonal"}"#,
        r#"{"kind":"evolute","t":1}"#,
        r#"{"kind":"twist"}"#,
        r#"{"kind":"shift","z":[0,0,0,0],"extra":1}"#,
    ] {
        assert!(serde_json::from_str::<TransformSpec>(bad).is_err(), "{bad}");
    }
}

#[test]
fn flat_only_stage_rejects_sphere() {
    let tol = Tolerances::default();
    let d = Domain::new(0.5, 1.5, 0.0, 1.0).unwrap();
    let s = SurfaceSpec::Expression {
        domain: d,
        components: ["sin(u)*cos(v)", "sin(u)*sin(v)", "cos(u)", "0"].map(String::from),
    }
    .build()
    .unwrap();
    let r = apply_pipeline(
        s,
        grid(d, 6),
        &[TransformSpec::new(TransformKind::Envelope)],
        [1.0, 0.5],
        &tol,
    );
    assert!(matches!(r, Err(Error::TangentNotFlat(_))));
}
