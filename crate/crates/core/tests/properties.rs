use std::sync::{Arc, OnceLock};

use floquet_core::bundled;
use floquet_core::center_manifold::{ManifoldConfig, ManifoldMap};
use floquet_core::config::Tolerances;
use floquet_core::format::{parse_problem, parse_source, serialize};
use floquet_core::problem::InnerProductPair;
use floquet_core::propagator::IntegratorConfig;
use floquet_core::splitting::SplitContext;
use floquet_core::{CMatrix, CVector, C64};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn rational() -> impl Strategy<Value = String> {
    (-9i32..=9, 1u32..=7).prop_map(|(p, q)| format!("{p}/{q}"))
}

fn entry() -> impl Strategy<Value = String> {
    (rational(), rational(), rational()).prop_map(|(a, b, c)| format!("{a} + ({b})*cos(2*pi*t) - ({c})*sin(4*pi*t)"))
}

fn problem_text() -> impl Strategy<Value = String> {
    (1usize..=2)
        .prop_flat_map(|n| (Just(n), prop::collection::vec(entry(), n * n), 1u32..=4))
        .prop_map(|(n, entries, w)| {
            let rows: Vec<String> = entries.chunks(n).map(|r| format!("[{}]", r.join(", "))).collect();
            let gram: Vec<String> = (0..n)
                .map(|i| {
                    format!(
                        "[{}]",
                        (0..n)
                            .map(|j| if i == j { format!("{}", w + i as u32) } else { "0".into() })
                            .collect::<Vec<_>>()
                            .join(", ")
                    )
                })
                .collect();
            format!(
                "[space]\ndim = {n}\ngram_y = [{}]\n[operator]\nA = [{}]\n[strip]\nbeta1 = -1/3\nbeta2 = 1/3\n",
                gram.join(", "),
                rows.join(", ")
            )
        })
}

fn cvec(parts: &[(f64, f64)]) -> CVector {
    CVector::from_iterator(parts.len(), parts.iter().map(|&(a, b)| C64::new(a, b)))
}

fn e3_context() -> &'static SplitContext {
    static CTX: OnceLock<SplitContext> = OnceLock::new();
    CTX.get_or_init(|| {
        SplitContext::new(
            &bundled::load("e3").unwrap().unwrap(),
            &IntegratorConfig::default(),
            &Tolerances::default(),
        )
        .unwrap()
    })
}

fn e5_map() -> &'static ManifoldMap {
    static MAP: OnceLock<ManifoldMap> = OnceLock::new();
    MAP.get_or_init(|| {
        let spec = bundled::load("e5").unwrap().unwrap();
        let ctx = SplitContext::new(&spec, &IntegratorConfig::default(), &Tolerances::default()).unwrap();
        ManifoldMap::new(Arc::new(ctx), ManifoldConfig::default()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn problem_files_round_trip(text in problem_text()) {
        let src = parse_source(&text).unwrap();
        let again = parse_source(&serialize(&src)).unwrap();
        prop_assert_eq!(&src, &again);
        let a = parse_problem(&text).unwrap();
        let b = parse_problem(&serialize(&src)).unwrap();
        for t in [0.0, 0.3, 0.77] {
            prop_assert!((a.eval_operator(t) - b.eval_operator(t)).norm() == 0.0);
        }
    }

    #[test]
    fn adjoint_satisfies_inner_product_identity(
        g in prop::collection::vec(-1.0f64..1.0, 9),
        a in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 9),
        x in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
        y in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3),
    ) {
        let m = DMatrix::from_vec(3, 3, g);
        let gram = &m * m.transpose() + DMatrix::identity(3, 3);
        let ip = InnerProductPair::new(DMatrix::identity(3, 3), gram).unwrap();
        let a = CMatrix::from_iterator(3, 3, a.iter().map(|&(r, i)| C64::new(r, i)));
        let (x, y) = (cvec(&x), cvec(&y));
        let lhs = ip.inner_y(&(&a * &x), &y);
        let rhs = ip.inner_y(&x, &(ip.adjoint(&a) * &y));
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + lhs.norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projector_is_idempotent_between_grid_points(t in -3.0f64..3.0, v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2)) {
        let b = &e3_context().bundle;
        let v = cvec(&v);
        let p = b.apply_p(t, &v);
        prop_assert!((b.apply_p(t, &p) - &p).norm() <= 1e-10);
        prop_assert!((p + b.apply_q(t, &v) - &v).norm() <= 1e-12);
    }

    #[test]
    fn floquet_solutions_satisfy_shift_identity(t in -2.0f64..2.0, tau in -2.0f64..2.0, m in 0usize..2) {
        let basis = e3_context().phi_basis();
        prop_assert!(basis.shift_defect(0, 0, m, t, tau) <= 1e-10 * (1.0 + basis.eval(0, 0, m, t).norm()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn manifold_is_quadratically_tangent(s in 0.01f64..0.08, sign in prop::bool::ANY) {
        let x = if sign { s } else { -s };
        let h = e5_map().value(0.0, &[], &CVector::from_element(1, C64::new(x, 0.0))).unwrap();
        // h = x^2 - 2 x^4 + O(x^6) in the stable coordinate.
        let expected = x * x - 2.0 * x.powi(4);
        prop_assert!(h[0].norm() <= 1e-12);
        prop_assert!((h[1].re - expected).abs() <= 20.0 * x.powi(6), "x = {x}: {} vs {expected}", h[1].re);
    }
}
