//! Monotone Lipschitz diffusion nonlinearities `β` and the pseudo-spectral
//! evaluation of `Δβ(x)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::report::ValidationReport;
use crate::spectral::{EigenBasis, SpectralField};

/// Violations at or below this level count as satisfied.
pub const VALIDATION_TOL: f64 = 1e-9;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BetaKind {
    Zero,
    Linear {
        alpha: f64,
    },
    /// `εr` plus a unit-slope ramp outside a plateau of the given width.
    StefanEps {
        eps: f64,
        width: f64,
    },
    /// `εr + clamp(slope·r, -cap, cap)`.
    Ramp {
        eps: f64,
        slope: f64,
        cap: f64,
    },
    /// `εr` plus the Yosida approximation of a piecewise-linear monotone graph.
    YosidaPl(YosidaPl),
    /// `Σ_i coeffs[i] r^i`. Only meant for diagnostics; not monotone in general.
    Polynomial {
        coeffs: Vec<f64>,
    },
    Custom {
        name: String,
        f: ScalarFn,
    },
}

impl fmt::Debug for BetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaKind::Zero => write!(f, "Zero"),
            BetaKind::Linear { alpha } => write!(f, "Linear {{ alpha: {alpha} }}"),
            BetaKind::StefanEps { eps, width } => {
                write!(f, "StefanEps {{ eps: {eps}, width: {width} }}")
            }
            BetaKind::Ramp { eps, slope, cap } => {
                write!(f, "Ramp {{ eps: {eps}, slope: {slope}, cap: {cap} }}")
            }
            BetaKind::YosidaPl(y) => write!(f, "YosidaPl({y:?})"),
            BetaKind::Polynomial { coeffs } => write!(f, "Polynomial({coeffs:?})"),
            BetaKind::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Yosida approximation `A_μ = (I - J_μ)/μ` of a monotone graph `A` given by
/// knots `(r_i, a_i)`, both coordinates non-decreasing. Repeated `r` values
/// encode vertical segments. The graph is extended beyond the outer knots
/// with the slopes of the outer segments.
#[derive(Debug, Clone)]
pub struct YosidaPl {
    knots: Vec<(f64, f64)>,
    mu: f64,
    eps: f64,
    // g_i = r_i + μ a_i, strictly increasing
    g: Vec<f64>,
    left_slope: f64,
    right_slope: f64,
}

impl YosidaPl {
    pub fn new(knots: Vec<(f64, f64)>, mu: f64, eps: f64) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("yosida_pl needs at least two knots".into()));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Config(format!("yosida_pl needs mu > 0, got {mu}")));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("yosida_pl needs eps >= 0, got {eps}")));
        }
        for w in knots.windows(2) {
            let ((r0, a0), (r1, a1)) = (w[0], w[1]);
            if r1 < r0 || a1 < a0 {
                return Err(Error::Config("yosida_pl knots must be non-decreasing".into()));
            }
            if r1 == r0 && a1 == a0 {
                return Err(Error::Config("yosida_pl has duplicate knots".into()));
            }
        }
        let slope = |i: usize| {
            let ((r0, a0), (r1, a1)) = (knots[i], knots[i + 1]);
            if r1 > r0 {
                Some((a1 - a0) / (r1 - r0))
            } else {
                None
            }
        };
        let n = knots.len();
        let left_slope = slope(0)
            .ok_or_else(|| Error::Config("yosida_pl outer segments must not be vertical".into()))?;
        let right_slope = slope(n - 2)
            .ok_or_else(|| Error::Config("yosida_pl outer segments must not be vertical".into()))?;
        let g = knots.iter().map(|(r, a)| r + mu * a).collect();
        Ok(YosidaPl {
            knots,
            mu,
            eps,
            g,
            left_slope,
            right_slope,
        })
    }

    /// Resolvent `J_μ(r)`, the unique `z` with `r ∈ z + μA(z)`.
    pub fn resolvent(&self, r: f64) -> f64 {
        let n = self.knots.len();
        if r <= self.g[0] {
            let (r0, _) = self.knots[0];
            return r0 + (r - self.g[0]) / (1.0 + self.mu * self.left_slope);
        }
        if r >= self.g[n - 1] {
            let (rn, _) = self.knots[n - 1];
            return rn + (r - self.g[n - 1]) / (1.0 + self.mu * self.right_slope);
        }
        let i = self.g.partition_point(|&gi| gi <= r).saturating_sub(1).min(n - 2);
        let (r0, _) = self.knots[i];
        let (r1, _) = self.knots[i + 1];
        r0 + (r1 - r0) * (r - self.g[i]) / (self.g[i + 1] - self.g[i])
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.eps * r + (r - self.resolvent(r)) / self.mu
    }

    /// Slopes of the approximation on each linear piece, extensions included.
    fn slopes(&self) -> Vec<f64> {
        let mut s = vec![
            self.left_slope / (1.0 + self.mu * self.left_slope),
            self.right_slope / (1.0 + self.mu * self.right_slope),
        ];
        for w in self.knots.windows(2) {
            let ((r0, a0), (r1, a1)) = (w[0], w[1]);
            s.push((a1 - a0) / ((r1 - r0) + self.mu * (a1 - a0)));
        }
        s
    }

    pub fn lipschitz(&self) -> f64 {
        self.eps + self.slopes().into_iter().fold(0.0, f64::max)
    }

    pub fn monotonicity(&self) -> f64 {
        self.eps + self.slopes().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// A scalar nonlinearity with declared Lipschitz and monotonicity constants.
#[derive(Debug, Clone)]
pub struct Nonlinearity {
    kind: BetaKind,
    lip: f64,
    mono: f64,
}

impl Nonlinearity {
    pub fn zero() -> Self {
        Nonlinearity {
            kind: BetaKind::Zero,
            lip: 0.0,
            mono: 0.0,
        }
    }

    pub fn linear(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("linear beta needs alpha > 0, got {alpha}")));
        }
        Ok(Nonlinearity {
            kind: BetaKind::Linear { alpha },
            lip: alpha,
            mono: alpha,
        })
    }

    pub fn stefan_eps(eps: f64, width: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("stefan_eps needs eps > 0, got {eps}")));
        }
        if !(width >= 0.0 && width.is_finite()) {
            return Err(Error::Config(format!("stefan_eps needs width >= 0, got {width}")));
        }
        Ok(Nonlinearity {
            kind: BetaKind::StefanEps { eps, width },
            lip: 1.0 + eps,
            mono: eps,
        })
    }

    pub fn ramp(eps: f64, slope: f64, cap: f64) -> Result<Self> {
        if !(eps > 0.0 && slope >= 0.0 && cap > 0.0) || !(eps + slope + cap).is_finite() {
            return Err(Error::Config(format!(
                "ramp needs eps > 0, slope >= 0, cap > 0; got {eps}, {slope}, {cap}"
            )));
        }
        Ok(Nonlinearity {
            kind: BetaKind::Ramp { eps, slope, cap },
            lip: eps + slope,
            mono: eps,
        })
    }

    pub fn yosida_pl(knots: Vec<(f64, f64)>, mu: f64, eps: f64) -> Result<Self> {
        let y = YosidaPl::new(knots, mu, eps)?;
        let lip = y.lipschitz();
        let mono = y.monotonicity();
        if lip <= 0.0 {
            return Err(Error::Config("yosida_pl graph is constant".into()));
        }
        Ok(Nonlinearity {
            kind: BetaKind::YosidaPl(y),
            lip,
            mono,
        })
    }

    /// Polynomial with caller-declared constants; no properties are assumed.
    pub fn polynomial(coeffs: Vec<f64>, lip: f64, mono: f64) -> Result<Self> {
        Self::declared(BetaKind::Polynomial { coeffs }, lip, mono)
    }

    pub fn custom(name: &str, f: ScalarFn, lip: f64, mono: f64) -> Result<Self> {
        Self::declared(
            BetaKind::Custom {
                name: name.to_string(),
                f,
            },
            lip,
            mono,
        )
    }

    fn declared(kind: BetaKind, lip: f64, mono: f64) -> Result<Self> {
        if !(lip > 0.0 && lip.is_finite()) {
            return Err(Error::Config(format!(
                "declared Lipschitz constant must be positive, got {lip}"
            )));
        }
        if !(mono >= 0.0 && mono.is_finite()) {
            return Err(Error::Config(format!(
                "declared monotonicity constant must be non-negative, got {mono}"
            )));
        }
        Ok(Nonlinearity { kind, lip, mono })
    }

    /// Replaces the declared constants, e.g. to test a wrong declaration.
    pub fn with_constants(mut self, lip: f64, mono: f64) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::Config("constants of the zero map are fixed".into()));
        }
        if !(lip > 0.0) {
            return Err(Error::Config(format!(
                "declared Lipschitz constant must be positive, got {lip}"
            )));
        }
        self.lip = lip;
        self.mono = mono;
        Ok(self)
    }

    pub fn kind(&self) -> &BetaKind {
        &self.kind
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn mono(&self) -> f64 {
        self.mono
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, BetaKind::Zero)
    }

    /// `ᾱ = 1/([β]₁ + 1)`.
    pub fn alpha_bar(&self) -> f64 {
        1.0 / (self.lip + 1.0)
    }

    pub fn eval(&self, r: f64) -> f64 {
        match &self.kind {
            BetaKind::Zero => 0.0,
            BetaKind::Linear { alpha } => alpha * r,
            BetaKind::StefanEps { eps, width } => {
                eps * r + r.signum() * (r.abs() - 0.5 * width).max(0.0)
            }
            BetaKind::Ramp { eps, slope, cap } => eps * r + (slope * r).clamp(-cap, *cap),
            BetaKind::YosidaPl(y) => y.eval(r),
            BetaKind::Polynomial { coeffs } => {
                coeffs.iter().rev().fold(0.0, |acc, c| acc * r + c)
            }
            BetaKind::Custom { f, .. } => f(r),
        }
    }

    /// `Δβ(x)` written into `out` (L² coefficients). `grid` is scratch of
    /// length `M`.
    pub fn delta_beta_into(
        &self,
        basis: &EigenBasis,
        coeffs: &[f64],
        grid: &mut [f64],
        out: &mut [f64],
    ) {
        match &self.kind {
            BetaKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            BetaKind::Linear { alpha } => {
                for ((o, c), l) in out.iter_mut().zip(coeffs).zip(basis.eigenvalues()) {
                    *o = -alpha * l * c;
                }
            }
            _ => {
                basis.synthesize(coeffs, grid);
                grid.iter_mut().for_each(|v| *v = self.eval(*v));
                basis.analyze(grid, out);
                for (o, l) in out.iter_mut().zip(basis.eigenvalues()) {
                    *o *= -l;
                }
            }
        }
    }

    pub fn delta_beta(&self, x: &SpectralField) -> SpectralField {
        let basis = x.basis().clone();
        let mut grid = vec![0.0; basis.n_grid()];
        let mut out = vec![0.0; basis.n_modes()];
        self.delta_beta_into(&basis, x.coeffs(), &mut grid, &mut out);
        SpectralField::new(basis, out).expect("length matches basis")
    }

    /// Retained coefficients of `β(x)` (before the Laplacian).
    pub fn beta_coeffs(&self, x: &SpectralField) -> Vec<f64> {
        let basis = x.basis();
        let mut grid = vec![0.0; basis.n_grid()];
        basis.synthesize(x.coeffs(), &mut grid);
        grid.iter_mut().for_each(|v| *v = self.eval(*v));
        let mut out = vec![0.0; basis.n_modes()];
        basis.analyze(&grid, &mut out);
        out
    }

    /// Sampling-based check of the declared constants on `range`.
    pub fn validate(&self, range: (f64, f64), n_samples: usize) -> Result<ValidationReport> {
        validate(self, range, n_samples)
    }
}

pub fn delta_beta(b: &Nonlinearity, x: &SpectralField) -> SpectralField {
    b.delta_beta(x)
}

/// Checks `β(0)=0`, the Lipschitz bound, `α`-monotonicity, `β(r)² ≤ [β]₁β(r)r`
/// and `ᾱ(β(r)-β(s))² ≤ (β(r)-β(s))(r-s)` over all pairs of an equispaced
/// sample of `range`.
pub fn validate(b: &Nonlinearity, range: (f64, f64), n_samples: usize) -> Result<ValidationReport> {
    if n_samples < 2 {
        return Err(Error::Precondition(format!(
            "validation needs at least 2 samples, got {n_samples}"
        )));
    }
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Precondition(format!("invalid sample range [{lo}, {hi}]")));
    }
    if !b.is_zero() && !(b.lip > 0.0) {
        return Err(Error::Config(format!(
            "declared Lipschitz constant {} for a non-zero nonlinearity",
            b.lip
        )));
    }
    let step = (hi - lo) / (n_samples - 1) as f64;
    let r: Vec<f64> = (0..n_samples).map(|i| lo + step * i as f64).collect();
    let v: Vec<f64> = r.iter().map(|&x| b.eval(x)).collect();
    let lip = b.lip;
    let alpha = b.mono;
    let abar = b.alpha_bar();

    let mut worst_lip: f64 = 0.0;
    let mut worst_mono: f64 = 0.0;
    let mut worst_abar: f64 = 0.0;
    let mut at_mono = (0.0, 0.0);
    for i in 0..n_samples {
        for j in (i + 1)..n_samples {
            let dr = r[j] - r[i];
            let db = v[j] - v[i];
            worst_lip = worst_lip.max(db.abs() - lip * dr.abs());
            let m = alpha * dr * dr - db * dr;
            if m > worst_mono {
                worst_mono = m;
                at_mono = (r[i], r[j]);
            }
            worst_abar = worst_abar.max(abar * db * db - db * dr);
        }
    }
    let worst_growth = r
        .iter()
        .zip(&v)
        .map(|(x, y)| y * y - lip * y * x)
        .fold(0.0, f64::max);
    let zero = b.eval(0.0).abs();

    let mut rep = ValidationReport::new();
    rep.check_le("beta_zero_at_origin", zero, VALIDATION_TOL, "|beta(0)|");
    rep.check_le(
        "lipschitz",
        worst_lip,
        VALIDATION_TOL,
        format!("max |db| - {lip}|dr|"),
    );
    rep.check_le(
        "monotonicity",
        worst_mono,
        VALIDATION_TOL,
        format!("max {alpha} dr^2 - db dr, worst pair ({}, {})", at_mono.0, at_mono.1),
    );
    rep.check_le(
        "growth",
        worst_growth,
        VALIDATION_TOL,
        "max beta^2 - lip beta r",
    );
    rep.check_le(
        "alpha_bar_coercivity",
        worst_abar,
        VALIDATION_TOL,
        format!("max {abar} db^2 - db dr"),
    );
    let strict = if b.is_zero() || alpha > 0.0 { 0.0 } else { 1.0 };
    rep.check_le(
        "strict_monotonicity",
        strict,
        0.0,
        "non-zero beta requires alpha > 0",
    );
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, DomainSpec};
    use std::f64::consts::PI;

    #[test]
    fn identity_passes() {
        let b = Nonlinearity::linear(1.0).unwrap();
        assert!(b.validate((-3.0, 3.0), 101).unwrap().passed());
    }

    #[test]
    fn kinked_linear_passes_with_slopes_one_and_two() {
        let f: ScalarFn = Arc::new(|r: f64| r + (r - 1.0).max(0.0));
        let b = Nonlinearity::custom("kink", f.clone(), 2.0, 1.0).unwrap();
        let rep = b.validate((-4.0, 4.0), 161).unwrap();
        assert!(rep.passed(), "{rep}");
        // dense oracle for the slopes
        let xs: Vec<f64> = (0..4001).map(|i| -4.0 + 8.0 * i as f64 / 4000.0).collect();
        let slopes: Vec<f64> = xs.windows(2).map(|w| (f(w[1]) - f(w[0])) / (w[1] - w[0])).collect();
        let max = slopes.iter().cloned().fold(f64::MIN, f64::max);
        let min = slopes.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 2.0).abs() < 1e-9 && (min - 1.0).abs() < 1e-9);
    }

    #[test]
    fn square_fails_monotonicity() {
        let b = Nonlinearity::polynomial(vec![0.0, 0.0, 1.0], 4.0, 1.0).unwrap();
        let rep = b.validate((-2.0, 2.0), 41).unwrap();
        assert!(!rep.passed());
        assert!(!rep.get("monotonicity").unwrap().passed);
    }

    #[test]
    fn declared_nonpositive_lipschitz_is_config_error() {
        let f: ScalarFn = Arc::new(|r: f64| r);
        assert!(matches!(
            Nonlinearity::custom("id", f, 0.0, 0.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn builtins_pass_at_documented_constants() {
        let all = [
            Nonlinearity::linear(0.7).unwrap(),
            Nonlinearity::stefan_eps(0.1, 1.0).unwrap(),
            Nonlinearity::ramp(0.2, 3.0, 0.5).unwrap(),
            Nonlinearity::yosida_pl(vec![(-1.0, -1.0), (0.0, 0.0), (0.0, 1.0), (2.0, 2.0)], 0.5, 0.1)
                .unwrap(),
        ];
        for b in all {
            let rep = b.validate((-5.0, 5.0), 201).unwrap();
            assert!(rep.passed(), "{:?}\n{rep}", b.kind());
        }
        assert!(Nonlinearity::zero().validate((-1.0, 1.0), 11).unwrap().passed());
    }

    #[test]
    fn stefan_profile() {
        let b = Nonlinearity::stefan_eps(0.5, 1.0).unwrap();
        assert_eq!(b.eval(0.25), 0.125);
        assert_eq!(b.eval(-1.5), -0.75 - 1.0);
        assert_eq!(b.lip(), 1.5);
        assert_eq!(b.mono(), 0.5);
    }

    #[test]
    fn yosida_of_identity_is_scaled_identity() {
        // A(r)=r gives A_mu(r) = r/(1+mu)
        let b = Nonlinearity::yosida_pl(vec![(-1.0, -1.0), (1.0, 1.0)], 1.0, 0.0).unwrap();
        for r in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            assert!((b.eval(r) - r / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn yosida_vertical_jump() {
        // sign graph on [-1, 1]: A_mu(r) = clamp(r/mu, -1, 1) between the knots
        let b = Nonlinearity::yosida_pl(
            vec![(-2.0, -1.0), (0.0, -1.0), (0.0, 1.0), (2.0, 1.0)],
            0.5,
            0.0,
        )
        .unwrap();
        for r in [-0.4f64, -0.1, 0.0, 0.3, 1.0, 1.5] {
            let expect = (r / 0.5).clamp(-1.0, 1.0);
            assert!((b.eval(r) - expect).abs() < 1e-14, "{r}");
        }
        assert_eq!(b.lip(), 2.0);
    }

    #[test]
    fn delta_beta_examples() {
        let basis = build_basis(DomainSpec::with_modes(PI, 4).unwrap()).unwrap();
        let x = SpectralField::mode(basis.clone(), 1, 1.0).unwrap();
        let d = Nonlinearity::linear(1.0).unwrap().delta_beta(&x);
        assert_eq!(d.coeffs(), &[-1.0, 0.0, 0.0, 0.0]);
        let z = Nonlinearity::zero().delta_beta(&x);
        assert!(z.coeffs().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn pseudo_spectral_path_agrees_with_linear_shortcut() {
        let basis = build_basis(DomainSpec::new(2.0, 6, 20).unwrap()).unwrap();
        let x = SpectralField::new(basis, vec![0.3, -1.0, 0.4, 0.0, 2.0, -0.1]).unwrap();
        let f: ScalarFn = Arc::new(|r: f64| 2.0 * r);
        let pseudo = Nonlinearity::custom("two", f, 2.0, 2.0).unwrap().delta_beta(&x);
        let lap = x.laplacian_apply().scale(2.0);
        for (a, b) in pseudo.coeffs().iter().zip(lap.coeffs()) {
            assert!((a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }
}
