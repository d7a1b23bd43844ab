use std::sync::OnceLock;

use proptest::prelude::*;

use clark_core::deformation::{eta_epsilon, two_cluster_setup, DeformationSetup};
use clark_core::model::{sublinear_energy, wrapper_functional, ClarkModel, ModelParams};
use clark_core::solvers::{gradient_flow_solve, SolveConfig};
use clark_core::topology::{components, hausdorff, lemma21_check, Cloud};
use clark_core::{Functional, Point, Space};

fn model(n: usize) -> ClarkModel {
    ClarkModel::new(ModelParams::new(n).unwrap()).unwrap()
}

fn setup() -> &'static DeformationSetup {
    static SETUP: OnceLock<DeformationSetup> = OnceLock::new();
    SETUP.get_or_init(|| two_cluster_setup(81, 0.5).unwrap().0)
}

fn plane_cloud(max: usize) -> impl Strategy<Value = Cloud> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 0..max).prop_map(|xy| {
        let mut pts = vec![Point::l2(vec![0.0, 0.0]).unwrap()];
        pts.extend(xy.into_iter().map(|(x, y)| Point::l2(vec![x, y]).unwrap()));
        Cloud::new(pts, false)
    })
}

fn nonempty_cloud() -> impl Strategy<Value = Cloud> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..12).prop_map(|xy| {
        Cloud::new(
            xy.into_iter().map(|(x, y)| Point::l2(vec![x, y]).unwrap()).collect(),
            false,
        )
    })
}

fn schedule() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(1u32..600, 1..7).prop_map(|s| s.into_iter().rev().map(|k| k as f64 / 1000.0).collect())
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn model_is_even(t in -1.5..1.5f64, x in prop::collection::vec(-0.5..0.5f64, 4)) {
        let m = model(4);
        let mut u = vec![t];
        u.extend(x);
        let neg: Vec<f64> = u.iter().map(|c| -c).collect();
        prop_assert!(rel_close(m.energy(&u), m.energy(&neg)));
        let g = m.gradient_coords(&u);
        let gn = m.gradient_coords(&neg);
        for (a, b) in g.iter().zip(&gn) {
            prop_assert!(rel_close(*a, -*b));
        }
    }

    #[test]
    fn sublinear_and_wrapper_are_even(u in prop::collection::vec(-1.0..1.0f64, 9)) {
        let space = Space::h01(10).unwrap();
        let neg: Vec<f64> = u.iter().map(|c| -c).collect();
        let j = sublinear_energy(0.5, space).unwrap();
        let w = wrapper_functional(space, 0.5).unwrap();
        for f in [&j as &dyn Functional, &w] {
            prop_assert!(rel_close(f.energy(&u), f.energy(&neg)));
        }
    }

    #[test]
    fn components_partition_and_refine(cloud in plane_cloud(40), deltas in schedule()) {
        let mut prev: Option<Vec<Vec<usize>>> = None;
        for &d in &deltas {
            let parts = components(&cloud, d).unwrap();
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..cloud.len()).collect::<Vec<_>>());
            if let Some(coarse) = &prev {
                // Every finer part sits inside one coarser part.
                for p in &parts {
                    prop_assert!(coarse.iter().any(|c| p.iter().all(|i| c.contains(i))));
                }
            }
            prev = Some(parts);
        }
    }

    #[test]
    fn origin_components_are_nested(cloud in plane_cloud(40), deltas in schedule()) {
        let rep = lemma21_check(&cloud, &deltas).unwrap();
        prop_assert!(rep.nested);
        prop_assert!(rep.matches_bfs);
        for w in rep.origin_components.windows(2) {
            prop_assert!(w[1].iter().all(|i| w[0].contains(i)));
        }
    }

    #[test]
    fn hausdorff_is_a_metric(a in nonempty_cloud(), b in nonempty_cloud(), c in nonempty_cloud()) {
        let ab = hausdorff(&a, &b).unwrap();
        prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab, hausdorff(&b, &a).unwrap());
        let via = hausdorff(&a, &c).unwrap() + hausdorff(&c, &b).unwrap();
        prop_assert!(ab <= via + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn deformation_is_odd_with_unit_speed(x in -1.6..1.6f64, y in -1.1..1.1f64) {
        let s = setup();
        let u = Point::l2(vec![x, y]).unwrap();
        prop_assume!(s.functional().energy(u.coords()) <= -s.eps());
        let (Ok(a), Ok(b)) = (eta_epsilon(s, &u), eta_epsilon(s, &u.neg())) else {
            return Err(TestCaseError::reject("contract retry path"));
        };
        prop_assert!(a.point.add(&b.point).norm() <= 1e-8);
        prop_assert!(a.trace.max_speed() <= 1.0 + 1e-8);
        prop_assert!(a.trace.max_energy_increase() <= 1e-10);
    }

    #[test]
    fn descent_is_odd(t in -1.2..1.2f64, x in prop::collection::vec(-0.2..0.2f64, 2)) {
        let m = model(2);
        let cfg = SolveConfig { residual_tol: 1e-8, max_flow_time: 2e3, ..SolveConfig::default() };
        let u = m.point(t, &x).unwrap();
        let (Ok(a), Ok(b)) = (gradient_flow_solve(&m, &u, &cfg), gradient_flow_solve(&m, &u.neg(), &cfg)) else {
            return Err(TestCaseError::reject("flow budget exhausted"));
        };
        prop_assert!(a.point.add(&b.point).norm() <= 1e-9);
        prop_assert!(rel_close(a.value, b.value));
    }
}
