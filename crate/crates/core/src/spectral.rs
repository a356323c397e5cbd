//! Dirichlet-Laplacian eigenbasis on an interval `(0, L)`.
//!
//! Fields are stored by their L² coefficients `c_k = <x, ẽ_k>` against the
//! orthonormal sine basis `ẽ_k(x) = sqrt(2/L) sin(kπx/L)`. The H⁻¹ structure
//! is derived from the eigenvalues `λ_k = (kπ/L)²`: the H⁻¹-orthonormal basis
//! is `e_k = sqrt(λ_k) ẽ_k`, so the H⁻¹ coordinate of `x` along `e_k` is
//! `c_k / sqrt(λ_k)` and `‖x‖²_{H⁻¹} = Σ c_k² / λ_k`.
//!
//! Pointwise maps (the porous-media nonlinearity, Nemytskii drifts) are
//! evaluated pseudo-spectrally on `M` uniform interior points
//! `x_m = mL/(M+1)` with the discrete sine transform pair built from the
//! same table.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Interval length, retained mode count `N` and grid size `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub length: f64,
    pub n_modes: usize,
    pub n_grid: usize,
}

impl DomainSpec {
    pub fn new(length: f64, n_modes: usize, n_grid: usize) -> Result<Self> {
        let spec = DomainSpec {
            length,
            n_modes,
            n_grid,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Uses the default grid `M = 2N`.
    pub fn with_modes(length: f64, n_modes: usize) -> Result<Self> {
        Self::new(length, n_modes, 2 * n_modes)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::Config(format!(
                "interval length must be positive, got {}",
                self.length
            )));
        }
        if self.n_modes == 0 {
            return Err(Error::Config("mode count must be positive".into()));
        }
        if self.n_grid < 2 * self.n_modes {
            return Err(Error::Config(format!(
                "grid size {} is below twice the mode count {}",
                self.n_grid, self.n_modes
            )));
        }
        Ok(())
    }
}

/// Eigenvalues and transform tables for one domain. Immutable once built.
pub struct EigenBasis {
    spec: DomainSpec,
    eigenvalues: Vec<f64>,
    sqrt_eigenvalues: Vec<f64>,
    grid: Vec<f64>,
    // row-major M x N, table[m * N + k] = ẽ_{k+1}(x_m)
    table: Vec<f64>,
    weight: f64,
}

impl fmt::Debug for EigenBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EigenBasis").field("spec", &self.spec).finish()
    }
}

/// Builds the eigenbasis for `spec`.
pub fn build_basis(spec: DomainSpec) -> Result<Arc<EigenBasis>> {
    spec.validate()?;
    let DomainSpec {
        length,
        n_modes,
        n_grid,
    } = spec;
    let eigenvalues: Vec<f64> = (1..=n_modes)
        .map(|k| {
            let w = k as f64 * PI / length;
            w * w
        })
        .collect();
    let sqrt_eigenvalues = eigenvalues.iter().map(|l| l.sqrt()).collect();
    let h = length / (n_grid as f64 + 1.0);
    let grid: Vec<f64> = (1..=n_grid).map(|m| m as f64 * h).collect();
    let norm = (2.0 / length).sqrt();
    let mut table = vec![0.0; n_grid * n_modes];
    for m in 0..n_grid {
        for k in 0..n_modes {
            // sin(k π m / (M+1)) evaluated from integer arguments keeps the
            // discrete orthogonality accurate.
            let arg = PI * ((k + 1) * (m + 1)) as f64 / (n_grid as f64 + 1.0);
            table[m * n_modes + k] = norm * arg.sin();
        }
    }
    Ok(Arc::new(EigenBasis {
        spec,
        eigenvalues,
        sqrt_eigenvalues,
        grid,
        table,
        weight: h,
    }))
}

impl EigenBasis {
    pub fn spec(&self) -> DomainSpec {
        self.spec
    }

    pub fn n_modes(&self) -> usize {
        self.spec.n_modes
    }

    pub fn n_grid(&self) -> usize {
        self.spec.n_grid
    }

    pub fn length(&self) -> f64 {
        self.spec.length
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn sqrt_eigenvalues(&self) -> &[f64] {
        &self.sqrt_eigenvalues
    }

    /// `λ_k` for a 1-based mode index.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k - 1]
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.spec.n_modes - 1]
    }

    pub fn grid_points(&self) -> &[f64] {
        &self.grid
    }

    /// Quadrature weight `L/(M+1)` of the discrete sine transform.
    pub fn quadrature_weight(&self) -> f64 {
        self.weight
    }

    /// `ẽ_k(x)` evaluated analytically, `k` 1-based.
    pub fn eval_mode(&self, k: usize, x: f64) -> f64 {
        (2.0 / self.spec.length).sqrt() * (k as f64 * PI * x / self.spec.length).sin()
    }

    /// Grid values of the sine series with coefficients `coeffs`.
    pub fn synthesize(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.spec.n_modes;
        debug_assert_eq!(coeffs.len(), n);
        debug_assert_eq!(out.len(), self.spec.n_grid);
        for (m, o) in out.iter_mut().enumerate() {
            let row = &self.table[m * n..(m + 1) * n];
            *o = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        }
    }

    /// Retained L² coefficients of grid values (discrete sine transform).
    pub fn analyze(&self, values: &[f64], out: &mut [f64]) {
        let n = self.spec.n_modes;
        debug_assert_eq!(values.len(), self.spec.n_grid);
        debug_assert_eq!(out.len(), n);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (m, v) in values.iter().enumerate() {
            let row = &self.table[m * n..(m + 1) * n];
            for (o, e) in out.iter_mut().zip(row) {
                *o += e * v;
            }
        }
        out.iter_mut().for_each(|o| *o *= self.weight);
    }

    pub fn hminus1_norm_sq(&self, coeffs: &[f64]) -> f64 {
        coeffs
            .iter()
            .zip(&self.eigenvalues)
            .map(|(c, l)| c * c / l)
            .sum()
    }

    pub fn hminus1_inner_raw(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.eigenvalues)
            .map(|((x, y), l)| x * y / l)
            .sum()
    }

    /// H⁻¹ norm of the first `j` modes only.
    pub fn projected_hminus1_norm_sq(&self, coeffs: &[f64], j: usize) -> f64 {
        self.hminus1_norm_sq(&coeffs[..j.min(coeffs.len())])
    }

    /// Discrete L² inner product of two grid vectors.
    pub fn grid_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn same_domain(&self, other: &EigenBasis) -> bool {
        std::ptr::eq(self, other) || self.spec == other.spec
    }
}

pub(crate) fn l2_norm_sq_raw(coeffs: &[f64]) -> f64 {
    coeffs.iter().map(|c| c * c).sum()
}

/// A function on the interval held by its retained L² sine coefficients.
#[derive(Clone)]
pub struct SpectralField {
    basis: Arc<EigenBasis>,
    coeffs: Vec<f64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("spec", &self.basis.spec)
            .field("coeffs", &self.coeffs)
            .finish()
    }
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.basis.same_domain(&other.basis) && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn new(basis: Arc<EigenBasis>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.n_modes() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {}-mode domain",
                coeffs.len(),
                basis.n_modes()
            )));
        }
        Ok(SpectralField { basis, coeffs })
    }

    /// Pads or truncates `coeffs` to the mode count of `basis`.
    pub fn from_leading(basis: Arc<EigenBasis>, coeffs: &[f64]) -> Self {
        let mut c = vec![0.0; basis.n_modes()];
        for (dst, src) in c.iter_mut().zip(coeffs) {
            *dst = *src;
        }
        SpectralField { basis, coeffs: c }
    }

    pub fn zeros(basis: Arc<EigenBasis>) -> Self {
        let n = basis.n_modes();
        SpectralField {
            basis,
            coeffs: vec![0.0; n],
        }
    }

    /// `amplitude · ẽ_k`, `k` 1-based.
    pub fn mode(basis: Arc<EigenBasis>, k: usize, amplitude: f64) -> Result<Self> {
        let n = basis.n_modes();
        if k == 0 || k > n {
            return Err(Error::Index { index: k, max: n });
        }
        let mut f = Self::zeros(basis);
        f.coeffs[k - 1] = amplitude;
        Ok(f)
    }

    /// Builds a field from its H⁻¹ coordinates `<x, e_k>_{H⁻¹}`.
    pub fn from_hminus1_coeffs(basis: Arc<EigenBasis>, coords: &[f64]) -> Result<Self> {
        let coeffs = coords
            .iter()
            .zip(basis.sqrt_eigenvalues())
            .map(|(a, s)| a * s)
            .collect();
        Self::new(basis, coeffs)
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn spec(&self) -> DomainSpec {
        self.basis.spec
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// H⁻¹ coordinates `c_k / sqrt(λ_k)`.
    pub fn hminus1_coeffs(&self) -> Vec<f64> {
        self.coeffs
            .iter()
            .zip(self.basis.sqrt_eigenvalues())
            .map(|(c, s)| c / s)
            .collect()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm_sq_raw(&self.coeffs).sqrt()
    }

    pub fn hminus1_norm(&self) -> f64 {
        self.basis.hminus1_norm_sq(&self.coeffs).sqrt()
    }

    pub fn hminus1_inner(&self, other: &SpectralField) -> Result<f64> {
        self.check_same(other)?;
        Ok(self.basis.hminus1_inner_raw(&self.coeffs, &other.coeffs))
    }

    /// Orthogonal projection onto the first `j` eigenfunctions.
    pub fn project(&self, j: usize) -> Result<SpectralField> {
        let n = self.basis.n_modes();
        if j == 0 || j > n {
            return Err(Error::Index { index: j, max: n });
        }
        let mut out = self.clone();
        out.coeffs[j..].iter_mut().for_each(|c| *c = 0.0);
        Ok(out)
    }

    /// `Δx`, i.e. `c_k ↦ -λ_k c_k`.
    pub fn laplacian_apply(&self) -> SpectralField {
        let coeffs = self
            .coeffs
            .iter()
            .zip(self.basis.eigenvalues())
            .map(|(c, l)| -l * c)
            .collect();
        SpectralField {
            basis: self.basis.clone(),
            coeffs,
        }
    }

    pub fn to_grid(&self) -> GridField {
        let mut values = vec![0.0; self.basis.n_grid()];
        self.basis.synthesize(&self.coeffs, &mut values);
        GridField {
            basis: self.basis.clone(),
            values,
        }
    }

    pub fn add(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(SpectralField {
            basis: self.basis.clone(),
            coeffs,
        })
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField> {
        self.check_same(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a - b).collect();
        Ok(SpectralField {
            basis: self.basis.clone(),
            coeffs,
        })
    }

    pub fn scale(&self, s: f64) -> SpectralField {
        SpectralField {
            basis: self.basis.clone(),
            coeffs: self.coeffs.iter().map(|c| s * c).collect(),
        }
    }

    pub fn check_same(&self, other: &SpectralField) -> Result<()> {
        if self.basis.same_domain(&other.basis) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "fields live on different domains {:?} and {:?}",
                self.basis.spec, other.basis.spec
            )))
        }
    }
}

/// A point `(x, y)` of the product space, `x` on the first domain and `y` on
/// the second.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePair {
    pub x: SpectralField,
    pub y: SpectralField,
}

impl StatePair {
    pub fn new(x: SpectralField, y: SpectralField) -> Self {
        StatePair { x, y }
    }

    pub fn zeros(bx: Arc<EigenBasis>, by: Arc<EigenBasis>) -> Self {
        StatePair {
            x: SpectralField::zeros(bx),
            y: SpectralField::zeros(by),
        }
    }

    /// Squared product norm `‖x‖²_{H⁻¹} + ‖y‖²_{H⁻¹}`.
    pub fn hminus1_norm_sq(&self) -> f64 {
        self.x.basis().hminus1_norm_sq(self.x.coeffs()) + self.y.basis().hminus1_norm_sq(self.y.coeffs())
    }

    pub fn hminus1_dist_sq(&self, other: &StatePair) -> Result<f64> {
        self.x.check_same(&other.x)?;
        self.y.check_same(&other.y)?;
        Ok(hminus1_dist_sq_raw(self.x.basis(), self.x.coeffs(), other.x.coeffs())
            + hminus1_dist_sq_raw(self.y.basis(), self.y.coeffs(), other.y.coeffs()))
    }
}

pub(crate) fn hminus1_dist_sq_raw(basis: &EigenBasis, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(basis.eigenvalues())
        .map(|((p, q), l)| (p - q) * (p - q) / l)
        .sum()
}

/// Grid samples at the `M` interior points.
#[derive(Clone, Debug)]
pub struct GridField {
    basis: Arc<EigenBasis>,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(basis: Arc<EigenBasis>, values: Vec<f64>) -> Result<Self> {
        if values.len() != basis.n_grid() {
            return Err(Error::Dimension(format!(
                "{} grid values for a {}-point grid",
                values.len(),
                basis.n_grid()
            )));
        }
        Ok(GridField { basis, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn basis(&self) -> &Arc<EigenBasis> {
        &self.basis
    }

    pub fn to_spectral(&self) -> SpectralField {
        let mut coeffs = vec![0.0; self.basis.n_modes()];
        self.basis.analyze(&self.values, &mut coeffs);
        SpectralField {
            basis: self.basis.clone(),
            coeffs,
        }
    }
}

pub fn to_grid(field: &SpectralField) -> GridField {
    field.to_grid()
}

/// Inverse of [`to_grid`] on band-limited fields. Fails if `grid` lives on
/// a different domain than `basis`.
pub fn to_spectral(basis: &Arc<EigenBasis>, grid: &GridField) -> Result<SpectralField> {
    if !basis.same_domain(&grid.basis) {
        return Err(Error::Dimension("grid field belongs to another domain".into()));
    }
    Ok(grid.to_spectral())
}

pub fn hminus1_norm(field: &SpectralField) -> f64 {
    field.hminus1_norm()
}

pub fn l2_norm(field: &SpectralField) -> f64 {
    field.l2_norm()
}

pub fn hminus1_inner(a: &SpectralField, b: &SpectralField) -> Result<f64> {
    a.hminus1_inner(b)
}

pub fn project(j: usize, field: &SpectralField) -> Result<SpectralField> {
    field.project(j)
}

pub fn laplacian_apply(field: &SpectralField) -> SpectralField {
    field.laplacian_apply()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pi_basis(n: usize) -> Arc<EigenBasis> {
        build_basis(DomainSpec::with_modes(PI, n).unwrap()).unwrap()
    }

    #[test]
    fn eigenvalues_on_pi_interval() {
        let b = pi_basis(3);
        for (l, e) in b.eigenvalues().iter().zip([1.0, 4.0, 9.0]) {
            assert_relative_eq!(*l, e, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigenvalues_on_two_pi_interval() {
        let b = build_basis(DomainSpec::with_modes(2.0 * PI, 2).unwrap()).unwrap();
        assert_relative_eq!(b.eigenvalue(1), 0.25, epsilon = 1e-12);
        assert_relative_eq!(b.eigenvalue(2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sine_normalisation() {
        let b = pi_basis(1);
        assert_relative_eq!(b.eval_mode(1, PI / 2.0), (2.0 / PI).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(DomainSpec::new(0.0, 3, 6), Err(Error::Config(_))));
        assert!(matches!(DomainSpec::new(-1.0, 3, 6), Err(Error::Config(_))));
        assert!(matches!(DomainSpec::new(1.0, 0, 6), Err(Error::Config(_))));
        assert!(matches!(DomainSpec::new(1.0, 4, 7), Err(Error::Config(_))));
    }

    #[test]
    fn first_mode_samples_sine() {
        let b = pi_basis(4);
        let f = SpectralField::mode(b.clone(), 1, 1.0).unwrap();
        let g = f.to_grid();
        for (x, v) in b.grid_points().iter().zip(g.values()) {
            assert_relative_eq!(*v, (2.0 / PI).sqrt() * x.sin(), epsilon = 1e-13);
        }
        let back = g.to_spectral();
        for (a, e) in back.coeffs().iter().zip(f.coeffs()) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_field_zero_grid() {
        let b = pi_basis(5);
        let g = SpectralField::zeros(b).to_grid();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn roundtrip_matches_direct_summation() {
        // Oracle: direct summation of the analytic sine series at grid points.
        let spec = DomainSpec::new(2.5, 5, 64).unwrap();
        let b = build_basis(spec).unwrap();
        let coeffs = vec![0.7, -1.3, 0.25, 2.0, -0.6];
        let f = SpectralField::new(b.clone(), coeffs.clone()).unwrap();
        let g = f.to_grid();
        for (x, v) in b.grid_points().iter().zip(g.values()) {
            let direct: f64 = (1..=5).map(|k| coeffs[k - 1] * b.eval_mode(k, *x)).sum();
            assert!((direct - v).abs() < 1e-12);
        }
        let back = g.to_spectral();
        let err: f64 = back
            .coeffs()
            .iter()
            .zip(&coeffs)
            .map(|(a, e)| (a - e).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-10 * f.l2_norm());
    }

    #[test]
    fn hminus1_norm_examples() {
        let b = pi_basis(3);
        let f = SpectralField::new(b.clone(), vec![1.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(f.hminus1_norm(), 1.0, epsilon = 1e-14);
        let g = SpectralField::new(b, vec![0.0, 2.0, 0.0]).unwrap();
        assert_relative_eq!(g.hminus1_norm(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn projection_examples() {
        let b = pi_basis(3);
        let f = SpectralField::new(b, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.project(1).unwrap().coeffs(), &[1.0, 0.0, 0.0]);
        assert_eq!(f.project(3).unwrap(), f);
        assert!(matches!(f.project(4), Err(Error::Index { index: 4, max: 3 })));
        assert!(matches!(f.project(0), Err(Error::Index { .. })));
    }

    #[test]
    fn laplacian_of_first_mode() {
        let b = pi_basis(3);
        let f = SpectralField::new(b, vec![1.0, 0.0, 0.0]).unwrap();
        let lap = f.laplacian_apply();
        assert_relative_eq!(lap.coeffs()[0], -1.0, epsilon = 1e-14);
        assert_eq!(&lap.coeffs()[1..], &[0.0, 0.0]);
    }

    #[test]
    fn mismatched_domains_are_rejected() {
        let a = SpectralField::zeros(pi_basis(3));
        let b = SpectralField::zeros(pi_basis(4));
        assert!(matches!(a.hminus1_inner(&b), Err(Error::Dimension(_))));
        assert!(matches!(SpectralField::new(pi_basis(3), vec![0.0; 2]), Err(Error::Dimension(_))));
        let g = b.to_grid();
        assert!(matches!(to_spectral(&pi_basis(3), &g), Err(Error::Dimension(_))));
    }
}
