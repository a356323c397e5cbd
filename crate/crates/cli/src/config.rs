//! JSON experiment configuration and its translation to core types.

use std::path::Path;
use std::sync::Arc;

use pmv_core::viability::{Ball, HalfSpace, KStab, Singleton, WholeSpace};
use pmv_core::{
    build_basis, Component, ConstraintSet, ControlSet, DomainPair, DomainSpec, DriftCoeff, DriftTerm,
    NoiseCoeff, NoiseSpec, NoiseTerm, Nonlinearity, PointMap, StabilizationConfig, StatePair, System,
};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub name: String,
    pub seed: u64,
    pub domains: Domains,
    #[serde(default)]
    pub beta1: BetaCfg,
    #[serde(default)]
    pub beta2: BetaCfg,
    #[serde(default)]
    pub f1: Vec<DriftCfg>,
    #[serde(default)]
    pub f2: Vec<DriftCfg>,
    #[serde(default)]
    pub noise_modes: usize,
    #[serde(default)]
    pub sigma1: Vec<NoiseCfg>,
    #[serde(default)]
    pub sigma2: Vec<NoiseCfg>,
    /// Control points; defaults to the single control `u = 0`.
    #[serde(default)]
    pub controls: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub initial: InitialCfg,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub constraint: Option<ConstraintCfg>,
    #[serde(default)]
    pub validation: ValidationCfg,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domains {
    pub x: DomainCfg,
    pub y: DomainCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    pub length: f64,
    pub modes: usize,
    /// Grid points; defaults to `2 * modes`.
    #[serde(default)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ComponentCfg {
    X,
    Y,
}

impl From<ComponentCfg> for Component {
    fn from(c: ComponentCfg) -> Self {
        match c {
            ComponentCfg::X => Component::X,
            ComponentCfg::Y => Component::Y,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaCfg {
    #[default]
    Zero,
    Linear {
        alpha: f64,
    },
    StefanEps {
        eps: f64,
        width: f64,
    },
    Ramp {
        eps: f64,
        slope: f64,
        cap: f64,
    },
    YosidaPl {
        knots: Vec<[f64; 2]>,
        mu: f64,
        eps: f64,
    },
    Polynomial {
        coeffs: Vec<f64>,
        lip: f64,
        mono: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftCfg {
    Linear {
        source: ComponentCfg,
        gain: f64,
        #[serde(default)]
        modes: Option<usize>,
    },
    Matrix {
        source: ComponentCfg,
        rows: Vec<Vec<f64>>,
    },
    Constant {
        coeffs: Vec<f64>,
    },
    Control {
        mode: usize,
        index: usize,
        gain: f64,
    },
    Nemytskii {
        source: ComponentCfg,
        map: MapCfg,
        gain: f64,
    },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapCfg {
    Sin,
    Tanh,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseCfg {
    Additive {
        first_mode: usize,
        first_column: usize,
        gains: Vec<f64>,
    },
    StateLinear {
        first_mode: usize,
        first_column: usize,
        gains: Vec<f64>,
        source: ComponentCfg,
    },
    Rotation {
        modes: [usize; 2],
        column: usize,
        gain: f64,
        source: ComponentCfg,
    },
    ControlAdditive {
        mode: usize,
        column: usize,
        index: usize,
        gain: f64,
    },
}

/// Leading L² coefficients of the initial state; missing entries are zero.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCfg {
    #[serde(default)]
    pub x: Vec<f64>,
    #[serde(default)]
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintCfg {
    WholeSpace,
    Ball { radius: f64 },
    HalfSpace { mode: usize, offset: f64 },
    Singleton,
    KStab { j: usize },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationCfg {
    #[serde(default = "default_range")]
    pub range: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_pairs")]
    pub lipschitz_pairs: usize,
    #[serde(default = "default_one")]
    pub scale: f64,
}

fn default_range() -> [f64; 2] {
    [-5.0, 5.0]
}
fn default_samples() -> usize {
    401
}
fn default_pairs() -> usize {
    200
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_half() -> f64 {
    0.5
}
fn default_pilot() -> usize {
    64
}

impl Default for ValidationCfg {
    fn default() -> Self {
        ValidationCfg {
            range: default_range(),
            samples: default_samples(),
            lipschitz_pairs: default_pairs(),
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Rates(RatesCfg),
    Tangency(TangencyCfg),
    Viability(ViabilityCfg),
    Approx(ApproxCfg),
    Stabilize(StabilizeCfg),
}

impl Experiment {
    pub fn command(&self) -> &'static str {
        match self {
            Experiment::Rates(_) => "rates",
            Experiment::Tangency(_) => "tangency",
            Experiment::Viability(_) => "viability",
            Experiment::Approx(_) => "approx",
            Experiment::Stabilize(_) => "stabilize",
        }
    }

    /// Time step of the experiment.
    pub fn step(&self) -> f64 {
        match self {
            Experiment::Rates(r) => r.h,
            Experiment::Tangency(r) => r.h,
            Experiment::Viability(r) => r.h,
            Experiment::Approx(r) => r.h,
            Experiment::Stabilize(r) => r.h,
        }
    }
}

/// A closed interval `[lo, hi]` the measured value must fall in.
pub type Interval = [f64; 2];

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateGates {
    pub e3: Option<Interval>,
    pub first: Option<Interval>,
    pub second_min: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesCfg {
    /// Fine integration step.
    pub h: f64,
    /// Window lengths in fine steps.
    pub windows: Vec<usize>,
    pub paths: usize,
    pub j: usize,
    pub j_prime: usize,
    #[serde(default)]
    pub control: usize,
    #[serde(default)]
    pub gates: RateGates,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TangencyCfg {
    pub eps_grid: Vec<f64>,
    #[serde(default)]
    pub lambda: f64,
    pub h: f64,
    pub paths: usize,
    pub tol: f64,
    #[serde(default)]
    pub expect_tangent: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViabilityCfg {
    pub horizon: f64,
    pub h: f64,
    pub paths: usize,
    #[serde(default = "default_intervals")]
    pub max_intervals: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub threshold: f64,
    #[serde(default)]
    pub expect_viable: Option<bool>,
}

fn default_intervals() -> usize {
    1
}
fn default_budget() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxCfg {
    pub eps: Vec<f64>,
    pub horizon: f64,
    pub h: f64,
    pub paths: usize,
    #[serde(default = "default_half")]
    pub segment_fraction: f64,
    #[serde(default = "default_pilot")]
    pub pilot_paths: usize,
    #[serde(default = "default_true")]
    pub correct: bool,
    /// Gate on `gap(eps[0]) / gap(eps[1])`.
    #[serde(default)]
    pub gap_ratio: Option<Interval>,
    #[serde(default)]
    pub expect_valid: Option<bool>,
    #[serde(default)]
    pub dump_trajectories: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizeCfg {
    pub j: usize,
    pub c: f64,
    pub y0: f64,
    pub samples: usize,
    pub horizon: f64,
    pub h: f64,
    pub paths: usize,
    #[serde(default = "default_one_usize")]
    pub store_every: usize,
    pub tol: f64,
    pub max_violation_fraction: f64,
    #[serde(default)]
    pub expect_certified: Option<bool>,
}

fn default_one_usize() -> usize {
    1
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config, CliError> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| cfg_err(format!("invalid config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(cfg_err("name must be a non-empty plain file name"));
        }
        let e = &self.experiment;
        let nonempty = |ok: bool, what: &str| if ok { Ok(()) } else { Err(cfg_err(format!("{what} must not be empty"))) };
        match e {
            Experiment::Rates(r) => nonempty(!r.windows.is_empty(), "windows")?,
            Experiment::Tangency(r) => nonempty(!r.eps_grid.is_empty(), "eps_grid")?,
            Experiment::Approx(r) => nonempty(!r.eps.is_empty(), "eps")?,
            _ => {}
        }
        if let Experiment::Approx(a) = e {
            if a.gap_ratio.is_some() && a.eps.len() != 2 {
                return Err(cfg_err("gap_ratio needs exactly two eps values"));
            }
        }
        Ok(())
    }

    pub fn domains(&self) -> Result<DomainPair, CliError> {
        let one = |d: &DomainCfg| -> Result<_, CliError> {
            let spec = match d.grid {
                Some(g) => DomainSpec::new(d.length, d.modes, g)?,
                None => DomainSpec::with_modes(d.length, d.modes)?,
            };
            Ok(build_basis(spec)?)
        };
        Ok(DomainPair::new(one(&self.domains.x)?, one(&self.domains.y)?))
    }

    pub fn controls(&self) -> Result<ControlSet, CliError> {
        match &self.controls {
            None => Ok(ControlSet::trivial()),
            Some(p) => Ok(ControlSet::new(p.clone())?),
        }
    }

    pub fn system(&self) -> Result<Arc<System>, CliError> {
        let d = self.domains()?;
        let ns = NoiseSpec { m: self.noise_modes };
        Ok(Arc::new(System::new(
            d.clone(),
            self.beta1.build()?,
            self.beta2.build()?,
            DriftCoeff::new(d.clone(), Component::X, drift_terms(&self.f1))?,
            DriftCoeff::new(d.clone(), Component::Y, drift_terms(&self.f2))?,
            NoiseCoeff::new(d.clone(), Component::X, ns, noise_terms(&self.sigma1))?,
            NoiseCoeff::new(d, Component::Y, ns, noise_terms(&self.sigma2))?,
            self.controls()?,
        )?))
    }

    pub fn initial_state(&self, sys: &System) -> Result<StatePair, CliError> {
        let dm = sys.domains();
        if self.initial.x.len() > dm.x.n_modes() || self.initial.y.len() > dm.y.n_modes() {
            return Err(cfg_err("initial state has more coefficients than modes"));
        }
        Ok(sys.state(&self.initial.x, &self.initial.y))
    }

    pub fn constraint(&self) -> Result<Box<dyn ConstraintSet>, CliError> {
        let n = self.domains.x.modes;
        Ok(match self.constraint.as_ref().ok_or_else(|| cfg_err("experiment needs a constraint"))? {
            ConstraintCfg::WholeSpace => Box::new(WholeSpace),
            ConstraintCfg::Ball { radius } => Box::new(Ball::new(*radius)?),
            ConstraintCfg::HalfSpace { mode, offset } => Box::new(HalfSpace::new(*mode, *offset)?),
            ConstraintCfg::Singleton => Box::new(Singleton),
            ConstraintCfg::KStab { j } => Box::new(KStab::new(*j, n)?),
        })
    }

    /// Supervised system built from the first-domain data.
    pub fn stabilization(&self, s: &StabilizeCfg) -> Result<StabilizationConfig, CliError> {
        let d = self.domains()?;
        Ok(StabilizationConfig::new(
            d.x,
            s.j,
            s.c,
            self.beta1.build()?,
            drift_terms(&self.f1),
            noise_terms(&self.sigma1),
            self.noise_modes,
            self.controls()?,
            s.y0,
        )?)
    }
}

impl BetaCfg {
    pub fn build(&self) -> Result<Nonlinearity, CliError> {
        Ok(match self {
            BetaCfg::Zero => Nonlinearity::zero(),
            BetaCfg::Linear { alpha } => Nonlinearity::linear(*alpha)?,
            BetaCfg::StefanEps { eps, width } => Nonlinearity::stefan_eps(*eps, *width)?,
            BetaCfg::Ramp { eps, slope, cap } => Nonlinearity::ramp(*eps, *slope, *cap)?,
            BetaCfg::YosidaPl { knots, mu, eps } => {
                Nonlinearity::yosida_pl(knots.iter().map(|k| (k[0], k[1])).collect(), *mu, *eps)?
            }
            BetaCfg::Polynomial { coeffs, lip, mono } => Nonlinearity::polynomial(coeffs.clone(), *lip, *mono)?,
        })
    }
}

fn drift_terms(v: &[DriftCfg]) -> Vec<DriftTerm> {
    v.iter()
        .map(|t| match t {
            DriftCfg::Linear { source, gain, modes } => DriftTerm::Linear { source: (*source).into(), gain: *gain, modes: *modes },
            DriftCfg::Matrix { source, rows } => DriftTerm::Matrix { source: (*source).into(), rows: rows.clone() },
            DriftCfg::Constant { coeffs } => DriftTerm::Constant { coeffs: coeffs.clone() },
            DriftCfg::Control { mode, index, gain } => DriftTerm::Control { mode: *mode, index: *index, gain: *gain },
            DriftCfg::Nemytskii { source, map, gain } => DriftTerm::Nemytskii {
                source: (*source).into(),
                map: match map {
                    MapCfg::Sin => PointMap::Sin,
                    MapCfg::Tanh => PointMap::Tanh,
                },
                gain: *gain,
            },
        })
        .collect()
}

fn noise_terms(v: &[NoiseCfg]) -> Vec<NoiseTerm> {
    v.iter()
        .map(|t| match t {
            NoiseCfg::Additive { first_mode, first_column, gains } => NoiseTerm::Additive {
                first_mode: *first_mode,
                first_column: *first_column,
                gains: gains.clone(),
            },
            NoiseCfg::StateLinear { first_mode, first_column, gains, source } => NoiseTerm::StateLinear {
                first_mode: *first_mode,
                first_column: *first_column,
                gains: gains.clone(),
                source: (*source).into(),
            },
            NoiseCfg::Rotation { modes, column, gain, source } => NoiseTerm::Rotation {
                modes: (modes[0], modes[1]),
                column: *column,
                gain: *gain,
                source: (*source).into(),
            },
            NoiseCfg::ControlAdditive { mode, column, index, gain } => NoiseTerm::ControlAdditive {
                mode: *mode,
                column: *column,
                index: *index,
                gain: *gain,
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "name": "t", "seed": 1,
        "domains": {"x": {"length": 3.141592653589793, "modes": 4}, "y": {"length": 3.141592653589793, "modes": 1}},
        "beta1": {"kind": "linear", "alpha": 1.0},
        "experiment": {"kind": "viability", "horizon": 1.0, "h": 0.01, "paths": 4, "threshold": 0.05}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.experiment.command(), "viability");
        let sys = c.system().unwrap();
        assert_eq!(sys.domains().x.n_modes(), 4);
        assert_eq!(sys.controls().len(), 1);
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = MINIMAL.replace("\"seed\": 1", "\"seed\": 1, \"sead\": 2");
        assert!(matches!(Config::parse(&bad), Err(CliError::Config(_))));
        let bad = MINIMAL.replace("\"alpha\": 1.0", "\"alpha\": 1.0, \"beta\": 2");
        assert!(Config::parse(&bad).is_err());
    }

    #[test]
    fn seed_is_required() {
        let bad = MINIMAL.replace("\"seed\": 1,", "");
        assert!(Config::parse(&bad).is_err());
    }
}
