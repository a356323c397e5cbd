//! Drift and noise coefficients, the finite control set and Lipschitz
//! metadata.
//!
//! Drifts return L² coefficients on their target domain. Noise coefficients
//! return an `N × m` matrix `S` whose column `q` holds the H⁻¹ coordinates
//! (against `e_k = sqrt(λ_k) ẽ_k`) of `σ` applied to the `q`-th scalar noise
//! mode, so the H⁻¹ Hilbert–Schmidt norm is the Frobenius norm of `S`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::report::ValidationReport;
use crate::rng::{sampler_rng, standard_normal, uniform};
use crate::spectral::{EigenBasis, SpectralField, StatePair};

/// Relative slack allowed over a declared Lipschitz constant.
pub const LIPSCHITZ_SLACK: f64 = 1e-6;

/// Which component of the state pair a term reads or writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    X,
    Y,
}

/// The two domains of the coupled system.
#[derive(Debug, Clone)]
pub struct DomainPair {
    pub x: Arc<EigenBasis>,
    pub y: Arc<EigenBasis>,
}

impl DomainPair {
    pub fn new(x: Arc<EigenBasis>, y: Arc<EigenBasis>) -> Self {
        DomainPair { x, y }
    }

    pub fn get(&self, c: Component) -> &Arc<EigenBasis> {
        match c {
            Component::X => &self.x,
            Component::Y => &self.y,
        }
    }

    fn check_pair(&self, s: &StatePair) -> Result<()> {
        if !self.x.same_domain(s.x.basis()) || !self.y.same_domain(s.y.basis()) {
            return Err(Error::Dimension(
                "state pair does not live on the coefficient domains".into(),
            ));
        }
        Ok(())
    }
}

/// Finite discretization of the compact control space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("control set is empty".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::Config("control points have different dimensions".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("control points must be finite".into()));
        }
        Ok(ControlSet { points })
    }

    /// The single control `u = 0 ∈ ℝ^1`.
    pub fn trivial() -> Self {
        ControlSet {
            points: vec![vec![0.0]],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// Number of retained scalar Brownian motions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSpec {
    pub m: usize,
}

/// Pointwise maps for Nemytskii drifts, all 1-Lipschitz and null at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointMap {
    Sin,
    Tanh,
}

impl PointMap {
    fn eval(self, r: f64) -> f64 {
        match self {
            PointMap::Sin => r.sin(),
            PointMap::Tanh => r.tanh(),
        }
    }
}

/// `out += f(x, y, u)` on raw coefficient slices.
pub type CustomDrift = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// `out += S(x, y, u)` on a row-major `N × m` slice.
pub type CustomNoise = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum DriftTerm {
    /// `gain · Π_modes(source)`, coefficients identified by mode index.
    Linear {
        source: Component,
        gain: f64,
        modes: Option<usize>,
    },
    /// Dense matrix on L² coefficients, `N_target × N_source`.
    Matrix {
        source: Component,
        rows: Vec<Vec<f64>>,
    },
    Constant {
        coeffs: Vec<f64>,
    },
    /// `gain · u[index] · ẽ_mode`.
    Control {
        mode: usize,
        index: usize,
        gain: f64,
    },
    /// `gain · g(source(·))` evaluated on the grid; source must be the target domain.
    Nemytskii {
        source: Component,
        map: PointMap,
        gain: f64,
    },
    Custom {
        name: String,
        f: CustomDrift,
        lip: f64,
        bound0: f64,
        state_free: bool,
    },
}

impl fmt::Debug for DriftTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftTerm::Linear {
                source,
                gain,
                modes,
            } => write!(f, "Linear({source:?}, {gain}, {modes:?})"),
            DriftTerm::Matrix { source, rows } => {
                write!(f, "Matrix({source:?}, {}x{})", rows.len(), rows.first().map_or(0, |r| r.len()))
            }
            DriftTerm::Constant { coeffs } => write!(f, "Constant({coeffs:?})"),
            DriftTerm::Control { mode, index, gain } => {
                write!(f, "Control(mode {mode}, u[{index}], {gain})")
            }
            DriftTerm::Nemytskii { source, map, gain } => {
                write!(f, "Nemytskii({source:?}, {map:?}, {gain})")
            }
            DriftTerm::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

#[derive(Clone)]
pub enum NoiseTerm {
    /// `S[first_mode + i, first_column + i] = gains[i]`.
    Additive {
        first_mode: usize,
        first_column: usize,
        gains: Vec<f64>,
    },
    /// `S[first_mode + i, first_column + i] = gains[i] · a_{first_mode + i}(source)`
    /// with `a_k` the H⁻¹ coordinate.
    StateLinear {
        first_mode: usize,
        first_column: usize,
        gains: Vec<f64>,
        source: Component,
    },
    /// Column `column` is `gain · J (a_{k1}, a_{k2})` with `J` the quarter
    /// turn: orthogonal in H⁻¹ to the state on the two modes.
    Rotation {
        modes: (usize, usize),
        column: usize,
        gain: f64,
        source: Component,
    },
    /// `S[mode, column] = gain · u[index]`.
    ControlAdditive {
        mode: usize,
        column: usize,
        index: usize,
        gain: f64,
    },
    Custom {
        name: String,
        f: CustomNoise,
        lip: f64,
        bound0: f64,
        state_free: bool,
    },
}

impl fmt::Debug for NoiseTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseTerm::Additive {
                first_mode,
                first_column,
                gains,
            } => write!(f, "Additive(mode {first_mode}, col {first_column}, {gains:?})"),
            NoiseTerm::StateLinear {
                first_mode,
                first_column,
                gains,
                source,
            } => write!(
                f,
                "StateLinear({source:?}, mode {first_mode}, col {first_column}, {gains:?})"
            ),
            NoiseTerm::Rotation {
                modes,
                column,
                gain,
                source,
            } => write!(f, "Rotation({source:?}, {modes:?}, col {column}, {gain})"),
            NoiseTerm::ControlAdditive {
                mode,
                column,
                index,
                gain,
            } => write!(f, "ControlAdditive(mode {mode}, col {column}, u[{index}], {gain})"),
            NoiseTerm::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

fn source_slice<'a>(c: Component, x: &'a [f64], y: &'a [f64]) -> &'a [f64] {
    match c {
        Component::X => x,
        Component::Y => y,
    }
}

fn check_mode(k: usize, n: usize, what: &str) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("{what}: mode {k} outside 1..={n}")));
    }
    Ok(())
}

/// Drift `f_i(x, y, u)` as a sum of terms.
#[derive(Clone, Debug)]
pub struct DriftCoeff {
    domains: DomainPair,
    target: Component,
    terms: Vec<DriftTerm>,
    declared_lip: Option<f64>,
}

impl DriftCoeff {
    pub fn new(domains: DomainPair, target: Component, terms: Vec<DriftTerm>) -> Result<Self> {
        let nt = domains.get(target).n_modes();
        for t in &terms {
            match t {
                DriftTerm::Linear { modes, .. } => {
                    if *modes == Some(0) {
                        return Err(Error::Config("linear drift with zero modes".into()));
                    }
                }
                DriftTerm::Matrix { source, rows } => {
                    let ns = domains.get(*source).n_modes();
                    if rows.len() != nt || rows.iter().any(|r| r.len() != ns) {
                        return Err(Error::Config(format!(
                            "drift matrix must be {nt}x{ns}"
                        )));
                    }
                }
                DriftTerm::Constant { coeffs } => {
                    if coeffs.len() > nt {
                        return Err(Error::Config(format!(
                            "constant drift has {} coefficients for {nt} modes",
                            coeffs.len()
                        )));
                    }
                }
                DriftTerm::Control { mode, .. } => check_mode(*mode, nt, "control drift")?,
                DriftTerm::Nemytskii { source, .. } => {
                    if *source != target
                        && !domains.get(*source).same_domain(domains.get(target))
                    {
                        return Err(Error::Config(
                            "Nemytskii drift must read its own domain".into(),
                        ));
                    }
                }
                DriftTerm::Custom { lip, bound0, .. } => {
                    if !(*lip >= 0.0 && *bound0 >= 0.0) {
                        return Err(Error::Config("custom drift needs lip, bound0 >= 0".into()));
                    }
                }
            }
        }
        Ok(DriftCoeff {
            domains,
            target,
            terms,
            declared_lip: None,
        })
    }

    pub fn zero(domains: DomainPair, target: Component) -> Self {
        DriftCoeff {
            domains,
            target,
            terms: Vec::new(),
            declared_lip: None,
        }
    }

    /// Overrides the computed Lipschitz constant with a declared one.
    pub fn with_declared_lip(mut self, lip: f64) -> Self {
        self.declared_lip = Some(lip);
        self
    }

    pub fn terms(&self) -> &[DriftTerm] {
        &self.terms
    }

    pub fn target(&self) -> Component {
        self.target
    }

    pub fn domains(&self) -> &DomainPair {
        &self.domains
    }

    pub fn n_out(&self) -> usize {
        self.domains.get(self.target).n_modes()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when no term reads the state.
    pub fn is_state_free(&self) -> bool {
        self.terms.iter().all(|t| match t {
            DriftTerm::Constant { .. } | DriftTerm::Control { .. } => true,
            DriftTerm::Custom { state_free, .. } => *state_free,
            _ => false,
        })
    }

    /// Largest control index read by a term plus one.
    pub fn control_dim(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                DriftTerm::Control { index, .. } => index + 1,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }

    /// Writes `f(x, y, u)` into `out` (overwrites).
    pub fn eval_into(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let target = self.domains.get(self.target);
        for t in &self.terms {
            match t {
                DriftTerm::Linear {
                    source,
                    gain,
                    modes,
                } => {
                    let s = source_slice(*source, x, y);
                    let n = modes.unwrap_or(usize::MAX).min(s.len()).min(out.len());
                    for k in 0..n {
                        out[k] += gain * s[k];
                    }
                }
                DriftTerm::Matrix { source, rows } => {
                    let s = source_slice(*source, x, y);
                    for (o, row) in out.iter_mut().zip(rows) {
                        *o += row.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                DriftTerm::Constant { coeffs } => {
                    for (o, c) in out.iter_mut().zip(coeffs) {
                        *o += c;
                    }
                }
                DriftTerm::Control { mode, index, gain } => {
                    out[mode - 1] += gain * u[*index];
                }
                DriftTerm::Nemytskii { source, map, gain } => {
                    let s = source_slice(*source, x, y);
                    let mut grid = vec![0.0; target.n_grid()];
                    let mut tmp = vec![0.0; target.n_modes()];
                    target.synthesize(s, &mut grid);
                    grid.iter_mut().for_each(|v| *v = map.eval(*v));
                    target.analyze(&grid, &mut tmp);
                    for (o, c) in out.iter_mut().zip(&tmp) {
                        *o += gain * c;
                    }
                }
                DriftTerm::Custom { f, .. } => f(x, y, u, out),
            }
        }
    }

    pub fn eval(&self, x: &SpectralField, y: &SpectralField, u: &[f64]) -> Result<SpectralField> {
        self.domains.check_pair(&StatePair::new(x.clone(), y.clone()))?;
        if u.len() < self.control_dim() {
            return Err(Error::Dimension(format!(
                "control of length {} for a drift reading index {}",
                u.len(),
                self.control_dim() - 1
            )));
        }
        let mut out = vec![0.0; self.n_out()];
        self.eval_into(x.coeffs(), y.coeffs(), u, &mut out);
        SpectralField::new(self.domains.get(self.target).clone(), out)
    }

    /// Documented Lipschitz constant, valid simultaneously in the H⁻¹ and L²
    /// metrics (maximum of the two per-term constants, summed over terms).
    pub fn computed_lip(&self) -> f64 {
        let t = self.domains.get(self.target);
        self.terms
            .iter()
            .map(|term| match term {
                DriftTerm::Linear {
                    source,
                    gain,
                    modes,
                } => {
                    let s = self.domains.get(*source);
                    let n = modes.unwrap_or(usize::MAX).min(s.n_modes()).min(t.n_modes());
                    let ratio = (0..n)
                        .map(|k| s.eigenvalues()[k] / t.eigenvalues()[k])
                        .fold(1.0, f64::max);
                    gain.abs() * ratio.sqrt()
                }
                DriftTerm::Matrix { source, rows } => {
                    let s = self.domains.get(*source);
                    let mut fro_l2 = 0.0;
                    let mut fro_h = 0.0;
                    for (k, row) in rows.iter().enumerate() {
                        for (l, a) in row.iter().enumerate() {
                            fro_l2 += a * a;
                            fro_h += a * a * s.eigenvalues()[l] / t.eigenvalues()[k];
                        }
                    }
                    f64::max(fro_l2.sqrt(), fro_h.sqrt())
                }
                DriftTerm::Constant { .. } | DriftTerm::Control { .. } => 0.0,
                DriftTerm::Nemytskii { gain, .. } => {
                    gain.abs() * (t.largest_eigenvalue() / t.eigenvalue(1)).sqrt()
                }
                DriftTerm::Custom { lip, .. } => *lip,
            })
            .sum()
    }

    pub fn lip(&self) -> f64 {
        self.declared_lip.unwrap_or_else(|| self.computed_lip())
    }

    /// `max_{u ∈ U} ‖f(0, 0, u)‖_{H⁻¹}`.
    pub fn bound0(&self, controls: &ControlSet) -> f64 {
        let t = self.domains.get(self.target);
        let x0 = vec![0.0; self.domains.x.n_modes()];
        let y0 = vec![0.0; self.domains.y.n_modes()];
        let mut out = vec![0.0; t.n_modes()];
        controls
            .points()
            .iter()
            .map(|u| {
                self.eval_into(&x0, &y0, u, &mut out);
                t.hminus1_norm_sq(&out).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Sum of the declared `bound0` of custom terms, for comparison with
    /// [`DriftCoeff::bound0`].
    pub fn declared_bound0(&self, controls: &ControlSet) -> f64 {
        let custom: f64 = self
            .terms
            .iter()
            .map(|t| match t {
                DriftTerm::Custom { bound0, .. } => *bound0,
                _ => 0.0,
            })
            .sum();
        if custom > 0.0 {
            custom
        } else {
            self.bound0(controls)
        }
    }
}

/// Noise `σ_i(x, y, u)` as a sum of terms producing an `N × m` matrix.
#[derive(Clone, Debug)]
pub struct NoiseCoeff {
    domains: DomainPair,
    target: Component,
    m: usize,
    terms: Vec<NoiseTerm>,
    declared_lip: Option<f64>,
}

impl NoiseCoeff {
    pub fn new(
        domains: DomainPair,
        target: Component,
        noise: NoiseSpec,
        terms: Vec<NoiseTerm>,
    ) -> Result<Self> {
        let nt = domains.get(target).n_modes();
        let m = noise.m;
        let check_col = |c: usize| -> Result<()> {
            if c >= m {
                return Err(Error::Config(format!(
                    "noise column {c} outside 0..{m}"
                )));
            }
            Ok(())
        };
        for t in &terms {
            match t {
                NoiseTerm::Additive {
                    first_mode,
                    first_column,
                    gains,
                }
                | NoiseTerm::StateLinear {
                    first_mode,
                    first_column,
                    gains,
                    ..
                } => {
                    if gains.is_empty() {
                        return Err(Error::Config("noise term without gains".into()));
                    }
                    check_mode(*first_mode, nt, "noise")?;
                    check_mode(first_mode + gains.len() - 1, nt, "noise")?;
                    check_col(first_column + gains.len() - 1)?;
                    if let NoiseTerm::StateLinear { source, .. } = t {
                        let ns = domains.get(*source).n_modes();
                        check_mode(first_mode + gains.len() - 1, ns, "state-linear noise source")?;
                    }
                }
                NoiseTerm::Rotation {
                    modes,
                    column,
                    source,
                    ..
                } => {
                    check_mode(modes.0, nt, "rotation noise")?;
                    check_mode(modes.1, nt, "rotation noise")?;
                    let ns = domains.get(*source).n_modes();
                    check_mode(modes.0, ns, "rotation noise source")?;
                    check_mode(modes.1, ns, "rotation noise source")?;
                    if modes.0 == modes.1 {
                        return Err(Error::Config("rotation noise needs two distinct modes".into()));
                    }
                    check_col(*column)?;
                }
                NoiseTerm::ControlAdditive { mode, column, .. } => {
                    check_mode(*mode, nt, "control noise")?;
                    check_col(*column)?;
                }
                NoiseTerm::Custom { lip, bound0, .. } => {
                    if !(*lip >= 0.0 && *bound0 >= 0.0) {
                        return Err(Error::Config("custom noise needs lip, bound0 >= 0".into()));
                    }
                }
            }
        }
        Ok(NoiseCoeff {
            domains,
            target,
            m,
            terms,
            declared_lip: None,
        })
    }

    pub fn zero(domains: DomainPair, target: Component, noise: NoiseSpec) -> Self {
        NoiseCoeff {
            domains,
            target,
            m: noise.m,
            terms: Vec::new(),
            declared_lip: None,
        }
    }

    pub fn with_declared_lip(mut self, lip: f64) -> Self {
        self.declared_lip = Some(lip);
        self
    }

    pub fn terms(&self) -> &[NoiseTerm] {
        &self.terms
    }

    pub fn target(&self) -> Component {
        self.target
    }

    pub fn domains(&self) -> &DomainPair {
        &self.domains
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_rows(&self) -> usize {
        self.domains.get(self.target).n_modes()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_state_free(&self) -> bool {
        self.terms.iter().all(|t| match t {
            NoiseTerm::Additive { .. } | NoiseTerm::ControlAdditive { .. } => true,
            NoiseTerm::Custom { state_free, .. } => *state_free,
            _ => false,
        })
    }

    pub fn control_dim(&self) -> usize {
        self.terms
            .iter()
            .map(|t| match t {
                NoiseTerm::ControlAdditive { index, .. } => index + 1,
                _ => 0,
            })
            .max()
            .unwrap_or(0)
    }

    /// Writes `S(x, y, u)` row-major into `out` (overwrites).
    pub fn eval_into(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let m = self.m;
        for t in &self.terms {
            match t {
                NoiseTerm::Additive {
                    first_mode,
                    first_column,
                    gains,
                } => {
                    for (i, g) in gains.iter().enumerate() {
                        out[(first_mode - 1 + i) * m + first_column + i] += g;
                    }
                }
                NoiseTerm::StateLinear {
                    first_mode,
                    first_column,
                    gains,
                    source,
                } => {
                    let s = source_slice(*source, x, y);
                    let sq = self.domains.get(*source).sqrt_eigenvalues();
                    for (i, g) in gains.iter().enumerate() {
                        let k = first_mode - 1 + i;
                        out[k * m + first_column + i] += g * s[k] / sq[k];
                    }
                }
                NoiseTerm::Rotation {
                    modes,
                    column,
                    gain,
                    source,
                } => {
                    let s = source_slice(*source, x, y);
                    let sq = self.domains.get(*source).sqrt_eigenvalues();
                    let (k1, k2) = (modes.0 - 1, modes.1 - 1);
                    let a1 = s[k1] / sq[k1];
                    let a2 = s[k2] / sq[k2];
                    out[k1 * m + column] += -gain * a2;
                    out[k2 * m + column] += gain * a1;
                }
                NoiseTerm::ControlAdditive {
                    mode,
                    column,
                    index,
                    gain,
                } => {
                    out[(mode - 1) * m + column] += gain * u[*index];
                }
                NoiseTerm::Custom { f, .. } => f(x, y, u, out),
            }
        }
    }

    pub fn eval(&self, x: &SpectralField, y: &SpectralField, u: &[f64]) -> Result<NoiseMatrix> {
        self.domains.check_pair(&StatePair::new(x.clone(), y.clone()))?;
        if u.len() < self.control_dim() {
            return Err(Error::Dimension("control vector too short for noise".into()));
        }
        let mut data = vec![0.0; self.n_rows() * self.m];
        self.eval_into(x.coeffs(), y.coeffs(), u, &mut data);
        Ok(NoiseMatrix {
            rows: self.n_rows(),
            cols: self.m,
            data,
        })
    }

    /// Documented Lipschitz constant in both the H⁻¹ and L² Hilbert–Schmidt
    /// metrics.
    pub fn computed_lip(&self) -> f64 {
        let t = self.domains.get(self.target);
        self.terms
            .iter()
            .map(|term| match term {
                NoiseTerm::Additive { .. } | NoiseTerm::ControlAdditive { .. } => 0.0,
                NoiseTerm::StateLinear {
                    first_mode,
                    gains,
                    source,
                    ..
                } => {
                    let s = self.domains.get(*source);
                    gains
                        .iter()
                        .enumerate()
                        .map(|(i, g)| {
                            let k = first_mode - 1 + i;
                            g.abs() * f64::max(1.0, (t.eigenvalues()[k] / s.eigenvalues()[k]).sqrt())
                        })
                        .fold(0.0, f64::max)
                }
                NoiseTerm::Rotation {
                    modes,
                    gain,
                    source,
                    ..
                } => {
                    let s = self.domains.get(*source);
                    let (k1, k2) = (modes.0 - 1, modes.1 - 1);
                    let r1 = t.eigenvalues()[k1] / s.eigenvalues()[k2];
                    let r2 = t.eigenvalues()[k2] / s.eigenvalues()[k1];
                    gain.abs() * f64::max(1.0, r1.max(r2).sqrt())
                }
                NoiseTerm::Custom { lip, .. } => *lip,
            })
            .sum()
    }

    pub fn lip(&self) -> f64 {
        self.declared_lip.unwrap_or_else(|| self.computed_lip())
    }

    /// `max_{u ∈ U} ‖σ(0, 0, u)‖_{HS}` (H⁻¹ Hilbert–Schmidt).
    pub fn bound0(&self, controls: &ControlSet) -> f64 {
        let x0 = vec![0.0; self.domains.x.n_modes()];
        let y0 = vec![0.0; self.domains.y.n_modes()];
        let mut out = vec![0.0; self.n_rows() * self.m];
        controls
            .points()
            .iter()
            .map(|u| {
                self.eval_into(&x0, &y0, u, &mut out);
                out.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// A dense `rows × cols` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl NoiseMatrix {
    pub fn get(&self, k: usize, q: usize) -> f64 {
        self.data[k * self.cols + q]
    }

    /// H⁻¹ Hilbert–Schmidt norm (Frobenius in orthonormal coordinates).
    pub fn hs_norm(&self) -> f64 {
        frobenius(&self.data)
    }

    /// L² Hilbert–Schmidt norm, `sqrt(Σ λ_k S_kq²)`.
    pub fn l2_hs_norm(&self, basis: &EigenBasis) -> f64 {
        l2_hs_norm_raw(basis, &self.data, self.cols)
    }
}

pub(crate) fn frobenius(data: &[f64]) -> f64 {
    data.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn l2_hs_norm_raw(basis: &EigenBasis, data: &[f64], cols: usize) -> f64 {
    if cols == 0 {
        return 0.0;
    }
    data.chunks(cols)
        .zip(basis.eigenvalues())
        .map(|(row, l)| l * row.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Something with a declared Lipschitz constant whose increments can be
/// measured in the H⁻¹ and L² metrics.
pub trait LipschitzCoefficient {
    fn lip(&self) -> f64;
    fn domains(&self) -> &DomainPair;
    /// `(H⁻¹, L²)` norms of `coeff(a, u) - coeff(b, u)`.
    fn increment_norms(&self, a: &StatePair, b: &StatePair, u: &[f64]) -> (f64, f64);
}

impl LipschitzCoefficient for DriftCoeff {
    fn lip(&self) -> f64 {
        DriftCoeff::lip(self)
    }

    fn domains(&self) -> &DomainPair {
        &self.domains
    }

    fn increment_norms(&self, a: &StatePair, b: &StatePair, u: &[f64]) -> (f64, f64) {
        let n = self.n_out();
        let mut fa = vec![0.0; n];
        let mut fb = vec![0.0; n];
        self.eval_into(a.x.coeffs(), a.y.coeffs(), u, &mut fa);
        self.eval_into(b.x.coeffs(), b.y.coeffs(), u, &mut fb);
        let d: Vec<f64> = fa.iter().zip(&fb).map(|(p, q)| p - q).collect();
        let t = self.domains.get(self.target);
        (t.hminus1_norm_sq(&d).sqrt(), frobenius(&d))
    }
}

impl LipschitzCoefficient for NoiseCoeff {
    fn lip(&self) -> f64 {
        NoiseCoeff::lip(self)
    }

    fn domains(&self) -> &DomainPair {
        &self.domains
    }

    fn increment_norms(&self, a: &StatePair, b: &StatePair, u: &[f64]) -> (f64, f64) {
        let n = self.n_rows() * self.m;
        let mut sa = vec![0.0; n];
        let mut sb = vec![0.0; n];
        self.eval_into(a.x.coeffs(), a.y.coeffs(), u, &mut sa);
        self.eval_into(b.x.coeffs(), b.y.coeffs(), u, &mut sb);
        let d: Vec<f64> = sa.iter().zip(&sb).map(|(p, q)| p - q).collect();
        let t = self.domains.get(self.target);
        (frobenius(&d), l2_hs_norm_raw(t, &d, self.m))
    }
}

/// A sample `(a, b, u)` for Lipschitz checks.
pub type LipschitzSample = (StatePair, StatePair, Vec<f64>);

/// Ratio `‖coeff(a,u) - coeff(b,u)‖ / (‖a.x - b.x‖ + ‖a.y - b.y‖)` maximised
/// over `n_pairs` samples, in both metrics. Passes iff both maxima are at most
/// `lip · (1 + 1e-6)`.
pub fn check_lipschitz<C, S>(coeff: &C, mut sampler: S, n_pairs: usize) -> Result<ValidationReport>
where
    C: LipschitzCoefficient + ?Sized,
    S: FnMut(usize) -> LipschitzSample,
{
    if n_pairs == 0 {
        return Err(Error::Precondition("check_lipschitz needs n_pairs >= 1".into()));
    }
    let dom = coeff.domains();
    let mut worst_h: f64 = 0.0;
    let mut worst_l2: f64 = 0.0;
    for i in 0..n_pairs {
        let (a, b, u) = sampler(i);
        for s in [&a, &b] {
            dom.check_pair(s)?;
        }
        let (dh, dl) = coeff.increment_norms(&a, &b, &u);
        let dx = a.x.sub(&b.x)?;
        let dy = a.y.sub(&b.y)?;
        let den_h = dx.hminus1_norm() + dy.hminus1_norm();
        let den_l = dx.l2_norm() + dy.l2_norm();
        if den_h > 0.0 {
            worst_h = worst_h.max(dh / den_h);
        }
        if den_l > 0.0 {
            worst_l2 = worst_l2.max(dl / den_l);
        }
    }
    let lip = coeff.lip();
    let thr = lip * (1.0 + LIPSCHITZ_SLACK);
    let mut rep = ValidationReport::new();
    rep.check_le("lipschitz_hminus1", worst_h, thr, format!("declared {lip}"));
    rep.check_le("lipschitz_l2", worst_l2, thr, format!("declared {lip}"));
    Ok(rep)
}

/// Compares a declared `sup_u ‖coeff(0,0,u)‖` with the value computed on `U`.
pub fn check_bound0(computed: f64, declared: f64) -> ValidationReport {
    let mut rep = ValidationReport::new();
    rep.check_le(
        "bound0",
        (computed - declared).abs(),
        1e-9,
        format!("computed {computed}, declared {declared}"),
    );
    rep
}

/// Random state pairs with Gaussian coefficients of standard deviation
/// `scale`; every other sample uses `b = 0` to exercise the origin.
pub fn random_pair_sampler(
    domains: DomainPair,
    controls: ControlSet,
    seed: u64,
    scale: f64,
) -> impl FnMut(usize) -> LipschitzSample {
    let mut rng = sampler_rng(seed, 0x11b5);
    move |i| {
        let mut field = |b: &Arc<EigenBasis>, zero: bool| {
            let c: Vec<f64> = (0..b.n_modes())
                .map(|_| {
                    if zero {
                        0.0
                    } else {
                        scale * standard_normal(&mut rng)
                    }
                })
                .collect();
            SpectralField::new(b.clone(), c).expect("length matches basis")
        };
        let a = StatePair::new(field(&domains.x, false), field(&domains.y, false));
        let zero_b = i % 2 == 1;
        let b = StatePair::new(field(&domains.x, zero_b), field(&domains.y, zero_b));
        let idx = (uniform(&mut rng) * controls.len() as f64) as usize;
        let u = controls.get(idx.min(controls.len() - 1)).to_vec();
        (a, b, u)
    }
}
