use std::f64::consts::PI;
use std::sync::Arc;

use approx::assert_relative_eq;
use pmv_core::approx::validate;
use pmv_core::{
    build_basis, build_global, ApproxOptions, Ball, Component, ConstraintSet, ControlSet, DomainPair, DomainSpec,
    DriftCoeff, DriftTerm, EigenBasis, HalfSpace, KStab, NoiseCoeff, NoiseSpec, NoiseTerm, Nonlinearity, SpectralField,
    StabilizationConfig, StatePair, System,
};
use proptest::prelude::*;

fn basis(len: f64, n: usize) -> Arc<EigenBasis> {
    build_basis(DomainSpec::with_modes(len, n).unwrap()).unwrap()
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n)
}

proptest! {
    #[test]
    fn grid_round_trip_and_parseval(c in coeffs(12), len in 0.5f64..6.0) {
        let b = basis(len, 12);
        let mut g = vec![0.0; b.n_grid()];
        b.synthesize(&c, &mut g);
        let mut back = vec![0.0; 12];
        b.analyze(&g, &mut back);
        for (p, q) in back.iter().zip(&c) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()));
        }
        let sq: f64 = c.iter().map(|v| v * v).sum();
        prop_assert!((b.grid_inner(&g, &g) - sq).abs() <= 1e-10 * (1.0 + sq));
    }

    #[test]
    fn projection_splits_the_norm(c in coeffs(10), j in 1usize..=10) {
        let b = basis(PI, 10);
        let x = SpectralField::new(b.clone(), c).unwrap();
        let p = x.project(j).unwrap();
        let q = x.sub(&p).unwrap();
        let lhs = x.hminus1_norm().powi(2);
        let rhs = p.hminus1_norm().powi(2) + q.hminus1_norm().powi(2);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs));
        prop_assert!(p.hminus1_inner(&q).unwrap().abs() <= 1e-12 * (1.0 + lhs));
    }

    #[test]
    fn delta_beta_is_dissipative(u in coeffs(16), v in coeffs(16), eps in 0.05f64..1.0, width in 0.1f64..2.0) {
        let b = basis(PI, 16);
        for beta in [
            Nonlinearity::stefan_eps(eps, width).unwrap(),
            Nonlinearity::linear(eps).unwrap(),
            Nonlinearity::ramp(eps, 2.0, 1.5).unwrap(),
        ] {
            let x = SpectralField::new(b.clone(), u.clone()).unwrap();
            let y = SpectralField::new(b.clone(), v.clone()).unwrap();
            let d = beta.delta_beta(&x).sub(&beta.delta_beta(&y)).unwrap();
            let z = x.sub(&y).unwrap();
            let pairing = d.hminus1_inner(&z).unwrap();
            // −⟨β(u) − β(v), u − v⟩ ≤ −mono ‖u − v‖²
            let bound = -beta.mono() * z.l2_norm().powi(2);
            prop_assert!(pairing <= bound + 1e-9 * (1.0 + z.l2_norm().powi(2)), "{pairing} > {bound}");
        }
    }

    #[test]
    fn constraint_projection_contract(x in coeffs(4), y in -3.0f64..3.0, r in 0.1f64..2.0, off in -1.0f64..1.0, j in 1usize..=4) {
        let bx = basis(PI, 4);
        let by = basis(PI, 1);
        let sets: Vec<Box<dyn ConstraintSet>> = vec![
            Box::new(Ball::new(r).unwrap()),
            Box::new(HalfSpace::new(2, off).unwrap()),
            Box::new(KStab::new(j, 4).unwrap()),
        ];
        let z = StatePair::new(
            SpectralField::new(bx.clone(), x.clone()).unwrap(),
            SpectralField::new(by.clone(), vec![y]).unwrap(),
        );
        for k in &sets {
            let p = k.project(&z);
            prop_assert!(k.contains(&p), "{}: projection left the set", k.describe());
            let pp = k.project(&p);
            prop_assert!(pp.hminus1_dist_sq(&p).unwrap().sqrt() <= 1e-9, "{}: not idempotent", k.describe());
            let d = z.hminus1_dist_sq(&p).unwrap().sqrt();
            prop_assert!((k.distance(&z) - d).abs() <= 1e-9 * (1.0 + d), "{}: distance mismatch", k.describe());
            if k.contains(&z) {
                prop_assert!(d <= 1e-9);
            }
        }
    }

    #[test]
    fn ball_projection_is_nearest_among_samples(x in coeffs(4), w in coeffs(4), r in 0.1f64..1.0) {
        let bx = basis(PI, 4);
        let by = basis(PI, 1);
        let k = Ball::new(r).unwrap();
        let z = StatePair::new(SpectralField::new(bx.clone(), x.clone()).unwrap(), SpectralField::zeros(by.clone()));
        let cand = StatePair::new(SpectralField::new(bx.clone(), w).unwrap(), SpectralField::zeros(by));
        let cand = k.project(&cand);
        let best = z.hminus1_dist_sq(&k.project(&z)).unwrap();
        prop_assert!(best <= z.hminus1_dist_sq(&cand).unwrap() + 1e-12);
    }

    #[test]
    fn stabilization_conditions_scale_quadratically(x in coeffs(6), s in 0.1f64..10.0, gain in -1.0f64..1.0) {
        let b = basis(PI, 6);
        let cfg = StabilizationConfig::new(
            b.clone(),
            2,
            0.5,
            Nonlinearity::linear(1.0).unwrap(),
            vec![DriftTerm::Linear { source: Component::X, gain, modes: None }],
            vec![NoiseTerm::StateLinear { first_mode: 1, first_column: 0, gains: vec![0.4, 0.2], source: Component::X }],
            2,
            ControlSet::trivial(),
            1.0,
        )
        .unwrap();
        let xs: Vec<f64> = x.iter().map(|v| s * v).collect();
        let c1 = cfg.check_cond1(&x, 0);
        let c2 = cfg.check_cond2(&x, 0);
        assert_relative_eq!(cfg.check_cond1(&xs, 0), s * s * c1, epsilon = 1e-9, max_relative = 1e-9);
        assert_relative_eq!(cfg.check_cond2(&xs, 0), s * s * c2, epsilon = 1e-9, max_relative = 1e-9);
        prop_assert!(c2 >= 0.0 && c2.is_finite());
    }
}

fn rotation_system() -> Arc<System> {
    let d = DomainPair::new(basis(PI, 4), basis(PI, 1));
    let ns = NoiseSpec { m: 1 };
    Arc::new(
        System::new(
            d.clone(),
            Nonlinearity::zero(),
            Nonlinearity::zero(),
            DriftCoeff::new(d.clone(), Component::X, vec![DriftTerm::Linear { source: Component::X, gain: -1.0, modes: None }]).unwrap(),
            DriftCoeff::new(d.clone(), Component::Y, vec![DriftTerm::Linear { source: Component::Y, gain: -1.0, modes: None }]).unwrap(),
            NoiseCoeff::new(
                d.clone(),
                Component::X,
                ns,
                vec![NoiseTerm::Rotation { modes: (1, 2), column: 0, gain: 0.5, source: Component::X }],
            )
            .unwrap(),
            NoiseCoeff::zero(d, Component::Y, ns),
            ControlSet::trivial(),
        )
        .unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn approximate_solutions_validate_and_extend(seed in 0u64..1000, a in 0.1f64..0.4) {
        let sys = rotation_system();
        let init = sys.state(&[a, 0.3, 0.0, 0.0], &[0.0]);
        let k = Ball::new(1.0).unwrap();
        let opts = ApproxOptions::default();
        let eps = 1e-2;
        let first = build_global(sys.clone(), 0.0, &init, eps, &k, 0.25, 1e-3, 32, seed, &opts).unwrap();
        prop_assert!(first.is_complete());
        prop_assert!(validate(&first, eps, &k).passed());
        for n in 1..first.n_steps() {
            prop_assert!(first.tau_step(n) <= n && first.tau_step(n) >= first.tau_step(n - 1));
        }
        let longer = first.extend(&k, 0.5, &opts).unwrap();
        prop_assert!(validate(&longer, eps, &k).passed());
        prop_assert!(longer.n_steps() > first.n_steps());
        for p in 0..first.n_paths() {
            for i in 0..=first.n_steps() {
                prop_assert_eq!(first.traj.x_at(p, i), longer.traj.x_at(p, i));
            }
        }
    }
}
