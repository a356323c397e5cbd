//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;
use std::sync::Arc;

use pmv_core::{
    build_basis, Component, ControlSet, DomainPair, DomainSpec, DriftCoeff, DriftTerm, EigenBasis, NoiseCoeff,
    NoiseSpec, NoiseTerm, Nonlinearity, StabilizationConfig, StatePair, System,
};

pub fn basis(n: usize) -> Arc<EigenBasis> {
    build_basis(DomainSpec::with_modes(PI, n).unwrap()).unwrap()
}

/// Deterministic coefficients with decaying amplitude.
pub fn field(n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 * 0.7).sin() / k as f64).collect()
}

/// Stefan-type system on `n` modes with coupled linear drift and four noise
/// columns.
pub fn stefan_system(n: usize) -> System {
    let d = DomainPair::new(basis(n), basis(4));
    let ns = NoiseSpec { m: 4 };
    System::new(
        d.clone(),
        Nonlinearity::stefan_eps(0.5, 1.0).unwrap(),
        Nonlinearity::linear(1.0).unwrap(),
        DriftCoeff::new(
            d.clone(),
            Component::X,
            vec![
                DriftTerm::Linear { source: Component::X, gain: -1.0, modes: None },
                DriftTerm::Linear { source: Component::Y, gain: 0.5, modes: None },
            ],
        )
        .unwrap(),
        DriftCoeff::new(d.clone(), Component::Y, vec![DriftTerm::Linear { source: Component::X, gain: 0.5, modes: None }])
            .unwrap(),
        NoiseCoeff::new(
            d.clone(),
            Component::X,
            ns,
            vec![
                NoiseTerm::Additive { first_mode: 1, first_column: 0, gains: vec![0.5, 0.5] },
                NoiseTerm::StateLinear { first_mode: 3, first_column: 2, gains: vec![1.0, 1.0], source: Component::X },
            ],
        )
        .unwrap(),
        NoiseCoeff::new(d, Component::Y, ns, vec![NoiseTerm::Additive { first_mode: 1, first_column: 0, gains: vec![0.2] }])
            .unwrap(),
        ControlSet::trivial(),
    )
    .unwrap()
}

pub fn initial_state(sys: &System) -> StatePair {
    sys.state(&field(sys.domains().x.n_modes()), &[0.3])
}

pub fn stabilization(n: usize) -> StabilizationConfig {
    StabilizationConfig::new(
        basis(n),
        2,
        0.5,
        Nonlinearity::linear(1.0).unwrap(),
        vec![],
        vec![NoiseTerm::Additive { first_mode: 3, first_column: 0, gains: vec![0.5, 0.5] }],
        2,
        ControlSet::trivial(),
        1.25,
    )
    .unwrap()
}
