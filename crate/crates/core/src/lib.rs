//! Spectral-Galerkin simulation and verification of state-constrained
//! stochastic porous-media control systems.

pub mod approx;
pub mod coefficients;
pub mod error;
pub mod nonlinearity;
pub mod report;
pub mod rng;
pub mod sde;
pub mod spectral;
pub mod stabilization;
pub mod viability;

pub use coefficients::{
    check_lipschitz, Component, ControlSet, DomainPair, DriftCoeff, DriftTerm, NoiseCoeff,
    NoiseMatrix, NoiseSpec, NoiseTerm, PointMap,
};
pub use error::{Error, Result};
pub use nonlinearity::{Nonlinearity, YosidaPl};
pub use report::{CheckItem, ValidationReport};
pub use spectral::{build_basis, DomainSpec, EigenBasis, GridField, SpectralField, StatePair};
pub use sde::{
    coupled_window_stats, ensemble_stats, fit_rate, simulate, simulate_fundamental, ControlPolicy,
    Dynamics, InitialState, PathEnsemble, RateFit, Reference, SimSpec, StatKind, StatSeries,
    System, WindowStats,
};
pub use viability::{
    fit_tangency, near_viability_score, quasi_tangency_value, Ball, ConstraintSet, HalfSpace,
    KStab, Singleton, TangencyReport, ViabilityScore, WholeSpace,
};
pub use approx::{build_global, sufficiency_gap, ApproxOptions, EpsApproxSolution};
pub use stabilization::{certify, decay_check, run_projected, Certificate, DecayReport, StabilizationConfig, ZetaSource};
