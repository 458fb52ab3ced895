use fourfold::geometry::{c_two_ways, geometry_jets};
use fourfold::{normal_degeneracy, Domain, Jet2, Jet4, PlaneCurve, PointGeometry, SurfaceSpec, Tolerances, Vec4};
use proptest::prelude::*;

const ORDER: usize = 3;

/// Graph `(u, v, p(u, v), q(u, v))` with quadratic and cubic terms.
fn graph(coef: &[f64; 14]) -> Jet4 {
    let (u, v) = Jet2::coords([0.0, 0.0], ORDER);
    let poly = |c: &[f64]| {
        u * u * c[0]
            + u * v * c[1]
            + v * v * c[2]
            + u * u * u * c[3]
            + u * u * v * c[4]
            + u * v * v * c[5]
            + v * v * v * c[6]
    };
    [u, v, poly(&coef[..7]), poly(&coef[7..])]
}

/// Orthonormalized rows of `m`, or `None` when nearly singular.
fn orthogonal(m: [[f64; 4]; 4]) -> Option<[Vec4; 4]> {
    let mut q: Vec<Vec4> = Vec::new();
    for row in m {
        let mut w = row;
        for b in &q {
            let d: f64 = (0..4).map(|k| w[k] * b[k]).sum();
            for k in 0..4 {
                w[k] -= d * b[k];
            }
        }
        let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-3 {
            return None;
        }
        q.push(w.map(|x| x / n));
    }
    q.try_into().ok()
}

fn moved(x: &Jet4, q: &[Vec4; 4], shift: &Vec4) -> Jet4 {
    std::array::from_fn(|i| {
        let mut acc = Jet2::constant(shift[i], ORDER);
        for (j, xj) in x.iter().enumerate() {
            acc += *xj * q[i][j];
        }
        acc
    })
}

fn rotate(q: &[Vec4; 4], v: &Vec4) -> Vec4 {
    std::array::from_fn(|i| (0..4).map(|j| q[i][j] * v[j]).sum())
}

fn geometry(x: &Jet4, pre_rotation: f64) -> PointGeometry {
    PointGeometry::from_jets(&geometry_jets(x, pre_rotation, &Tolerances::default()).unwrap())
}

fn scalars(pg: &PointGeometry) -> [f64; 3] {
    [pg.gauss_k, pg.h[0].hypot(pg.h[1]), normal_degeneracy(pg)]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

fn ellipse_jets(a1: f64, b1: f64, a2: f64, b2: f64, at: [f64; 2]) -> Jet4 {
    let spec = SurfaceSpec::Product {
        domain: Domain::new(0.1, 1.4, 0.1, 1.4).unwrap(),
        curve1: PlaneCurve::Ellipse { a: a1, b: b1 },
        curve2: PlaneCurve::Ellipse { a: a2, b: b2 },
    };
    spec.build().unwrap().jets(at, &[], ORDER).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalars_ignore_frame_choice(coef in prop::array::uniform14(-2.0..2.0f64), theta in -3.0..3.0f64) {
        let x = graph(&coef);
        let (a, b) = (scalars(&geometry(&x, 0.0)), scalars(&geometry(&x, theta)));
        for k in 0..3 {
            prop_assert!(close(a[k], b[k]), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn scalars_ignore_rigid_motions(
        coef in prop::array::uniform14(-2.0..2.0f64),
        m in prop::array::uniform4(prop::array::uniform4(-1.0..1.0f64)),
        shift in prop::array::uniform4(-5.0..5.0f64),
    ) {
        let q = orthogonal(m);
        prop_assume!(q.is_some());
        let x = graph(&coef);
        let (a, b) = (scalars(&geometry(&x, 0.0)), scalars(&geometry(&moved(&x, &q.unwrap(), &shift), 0.0)));
        for k in 0..3 {
            prop_assert!(close(a[k], b[k]), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn c_is_equivariant(
        a1 in 1.2..3.0f64, b1 in 0.5..1.0f64, a2 in 1.2..3.0f64, b2 in 0.5..1.0f64,
        u in 0.2..1.3f64, v in 0.2..1.3f64, theta in -3.0..3.0f64,
        m in prop::array::uniform4(prop::array::uniform4(-1.0..1.0f64)),
    ) {
        let q = orthogonal(m);
        prop_assume!(q.is_some());
        let q = q.unwrap();
        let tol = Tolerances::default();
        let x = ellipse_jets(a1, b1, a2, b2, [u, v]);
        let c = c_two_ways(&geometry(&x, 0.0), &tol).unwrap().0;
        let c_turned = c_two_ways(&geometry(&x, theta), &tol).unwrap().0;
        let c_moved = c_two_ways(&geometry(&moved(&x, &q, &[1.0, -2.0, 0.5, 3.0]), 0.0), &tol).unwrap().0;
        let want = rotate(&q, &c);
        for k in 0..4 {
            prop_assert!(close(c[k], c_turned[k]));
            prop_assert!(close(want[k], c_moved[k]), "{want:?} vs {c_moved:?}");
        }
    }
}
