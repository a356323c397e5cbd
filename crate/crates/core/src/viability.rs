//! Constraint sets, near-viability scores and the quasi-tangency estimator.
//!
//! Distances and projections are taken in `H⁻¹ × H⁻¹`, where the H⁻¹
//! coordinates `a_k = c_k / sqrt(λ_k)` are orthonormal.

use std::fmt::Debug;

use crate::coefficients::DomainPair;
use crate::error::{Error, Result};
use crate::sde::{abs_step, map_paths, steps_between, ControlPolicy, Dynamics, PathStepper, System};
use crate::spectral::{EigenBasis, SpectralField, StatePair};

/// Distance at or below which a state counts as a member.
pub const CONTAINS_TOL: f64 = 1e-9;

/// A closed subset of `H⁻¹(O₁) × H⁻¹(O₂)`.
pub trait ConstraintSet: Send + Sync + Debug {
    fn describe(&self) -> String;

    /// Writes the metric projection of `(x, y)` into `(px, py)`.
    fn project_into(
        &self,
        bx: &EigenBasis,
        by: &EigenBasis,
        x: &[f64],
        y: &[f64],
        px: &mut [f64],
        py: &mut [f64],
    );

    fn distance_raw(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        let mut py = vec![0.0; y.len()];
        self.project_into(bx, by, x, y, &mut px, &mut py);
        (dist_sq(bx, x, &px) + dist_sq(by, y, &py)).sqrt()
    }

    fn contains_raw(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64]) -> bool {
        self.distance_raw(bx, by, x, y) <= CONTAINS_TOL
    }

    fn project(&self, z: &StatePair) -> StatePair {
        let mut px = vec![0.0; z.x.coeffs().len()];
        let mut py = vec![0.0; z.y.coeffs().len()];
        self.project_into(z.x.basis(), z.y.basis(), z.x.coeffs(), z.y.coeffs(), &mut px, &mut py);
        StatePair::new(
            SpectralField::new(z.x.basis().clone(), px).expect("sized"),
            SpectralField::new(z.y.basis().clone(), py).expect("sized"),
        )
    }

    fn distance(&self, z: &StatePair) -> f64 {
        self.distance_raw(z.x.basis(), z.y.basis(), z.x.coeffs(), z.y.coeffs())
    }

    fn contains(&self, z: &StatePair) -> bool {
        self.contains_raw(z.x.basis(), z.y.basis(), z.x.coeffs(), z.y.coeffs())
    }
}

fn dist_sq(b: &EigenBasis, a: &[f64], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .zip(b.eigenvalues())
        .map(|((p, q), l)| (p - q) * (p - q) / l)
        .sum()
}

/// The whole space.
#[derive(Debug, Clone, Copy, Default)]
pub struct WholeSpace;

impl ConstraintSet for WholeSpace {
    fn describe(&self) -> String {
        "whole space".into()
    }

    fn project_into(&self, _: &EigenBasis, _: &EigenBasis, x: &[f64], y: &[f64], px: &mut [f64], py: &mut [f64]) {
        px.copy_from_slice(x);
        py.copy_from_slice(y);
    }
}

/// `{‖x‖²_{H⁻¹} + ‖y‖²_{H⁻¹} ≤ R²}`.
#[derive(Debug, Clone, Copy)]
pub struct Ball {
    pub radius: f64,
}

impl Ball {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("ball radius must be non-negative, got {radius}")));
        }
        Ok(Ball { radius })
    }
}

impl ConstraintSet for Ball {
    fn describe(&self) -> String {
        format!("ball of radius {}", self.radius)
    }

    fn project_into(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64], px: &mut [f64], py: &mut [f64]) {
        let r = (bx.hminus1_norm_sq(x) + by.hminus1_norm_sq(y)).sqrt();
        let s = if r > self.radius { self.radius / r } else { 1.0 };
        for (p, v) in px.iter_mut().zip(x) {
            *p = s * v;
        }
        for (p, v) in py.iter_mut().zip(y) {
            *p = s * v;
        }
    }

    fn distance_raw(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64]) -> f64 {
        let r = (bx.hminus1_norm_sq(x) + by.hminus1_norm_sq(y)).sqrt();
        (r - self.radius).max(0.0)
    }
}

/// `{⟨x, e_k⟩_{H⁻¹} ≤ offset}` on the first component.
#[derive(Debug, Clone, Copy)]
pub struct HalfSpace {
    pub mode: usize,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(mode: usize, offset: f64) -> Result<Self> {
        if mode == 0 {
            return Err(Error::Config("half-space mode index is 1-based".into()));
        }
        Ok(HalfSpace { mode, offset })
    }
}

impl ConstraintSet for HalfSpace {
    fn describe(&self) -> String {
        format!("half-space <x, e_{}> <= {}", self.mode, self.offset)
    }

    fn project_into(&self, bx: &EigenBasis, _: &EigenBasis, x: &[f64], y: &[f64], px: &mut [f64], py: &mut [f64]) {
        px.copy_from_slice(x);
        py.copy_from_slice(y);
        let k = self.mode - 1;
        if k < x.len() {
            let s = bx.sqrt_eigenvalues()[k];
            if x[k] / s > self.offset {
                px[k] = self.offset * s;
            }
        }
    }

    fn distance_raw(&self, bx: &EigenBasis, _: &EigenBasis, x: &[f64], _: &[f64]) -> f64 {
        let k = self.mode - 1;
        if k >= x.len() {
            return 0.0;
        }
        (x[k] / bx.sqrt_eigenvalues()[k] - self.offset).max(0.0)
    }
}

/// `{(0, 0)}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Singleton;

impl ConstraintSet for Singleton {
    fn describe(&self) -> String {
        "origin".into()
    }

    fn project_into(&self, _: &EigenBasis, _: &EigenBasis, _: &[f64], _: &[f64], px: &mut [f64], py: &mut [f64]) {
        px.iter_mut().for_each(|v| *v = 0.0);
        py.iter_mut().for_each(|v| *v = 0.0);
    }

    fn distance_raw(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64]) -> f64 {
        (bx.hminus1_norm_sq(x) + by.hminus1_norm_sq(y)).sqrt()
    }
}

/// Epigraph `{Σ_{k≤j} ⟨x, e_k⟩²_{H⁻¹} ≤ y}`, where the scalar `y` is the
/// H⁻¹ coordinate of the second component along its first mode.
#[derive(Debug, Clone, Copy)]
pub struct KStab {
    pub j: usize,
}

/// Tolerance of the membership test `‖Π_j x‖² ≤ y + tol`.
pub const KSTAB_TOL: f64 = 1e-12;

impl KStab {
    pub fn new(j: usize, n_modes: usize) -> Result<Self> {
        if j == 0 || j > n_modes {
            return Err(Error::Index {
                index: j,
                max: n_modes,
            });
        }
        Ok(KStab { j })
    }

    /// Squared projected norm `‖Π_j x‖²_{H⁻¹}` and the scalar `y`.
    pub fn coordinates(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64]) -> (f64, f64) {
        (bx.projected_hminus1_norm_sq(x, self.j), y[0] / by.sqrt_eigenvalues()[0])
    }
}

/// Radius `ρ ∈ (0, r)` of the nearest point of `{|z|² ≤ w}` to `(a, y)` with
/// `|a| = r`, `r² > y`: the root of `2ρ³ + (1 - 2y)ρ - r = 0`.
pub fn paraboloid_radius(r: f64, y: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let g = |p: f64| 2.0 * p * p * p + (1.0 - 2.0 * y) * p - r;
    // g(0) < 0 < g(r) and g is convex on ρ > 0: Newton from r decreases
    // monotonically to the root; bisection guards the last digits.
    let (mut lo, mut hi) = (0.0, r);
    let mut p = r;
    for _ in 0..100 {
        let v = g(p);
        if v > 0.0 {
            hi = p;
        } else {
            lo = p;
        }
        let d = 6.0 * p * p + 1.0 - 2.0 * y;
        let next = if d > 0.0 { p - v / d } else { 0.5 * (lo + hi) };
        let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if (next - p).abs() <= 1e-16 * r.max(1.0) {
            p = next;
            break;
        }
        p = next;
    }
    p
}

impl ConstraintSet for KStab {
    fn describe(&self) -> String {
        format!("supervisor epigraph with j = {}", self.j)
    }

    fn project_into(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64], px: &mut [f64], py: &mut [f64]) {
        px.copy_from_slice(x);
        py.copy_from_slice(y);
        let (r2, w) = self.coordinates(bx, by, x, y);
        if r2 <= w {
            return;
        }
        let r = r2.sqrt();
        let rho = paraboloid_radius(r, w);
        let s = if r > 0.0 { rho / r } else { 0.0 };
        for v in px.iter_mut().take(self.j) {
            *v *= s;
        }
        py[0] = rho * rho * by.sqrt_eigenvalues()[0];
    }

    fn contains_raw(&self, bx: &EigenBasis, by: &EigenBasis, x: &[f64], y: &[f64]) -> bool {
        let (r2, w) = self.coordinates(bx, by, x, y);
        r2 <= w + KSTAB_TOL
    }
}

/// Policies searched by [`near_viability_score`]: every constant control and
/// every piecewise-constant control on `k` equal sub-intervals of `[t, T]`,
/// for `k = 2..=max_intervals`, while the total stays within `budget`.
pub fn policy_family(n_controls: usize, t: f64, horizon: f64, max_intervals: usize, budget: usize) -> Vec<ControlPolicy> {
    let mut out: Vec<ControlPolicy> = (0..n_controls).map(ControlPolicy::constant).collect();
    if n_controls < 2 {
        return out;
    }
    for k in 2..=max_intervals {
        let count = (n_controls as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
        if out.len() as u128 + count > budget as u128 {
            break;
        }
        for code in 0..count as usize {
            let mut c = code;
            let mut sw = Vec::with_capacity(k);
            let mut constant = true;
            let mut first = None;
            for i in 0..k {
                let u = c % n_controls;
                c /= n_controls;
                if let Some(f) = first {
                    constant &= f == u;
                } else {
                    first = Some(u);
                }
                sw.push((t + (horizon - t) * i as f64 / k as f64, u));
            }
            if !constant {
                out.push(ControlPolicy::switching(sw).expect("increasing times"));
            }
        }
    }
    out
}

/// Result of [`near_viability_score`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViabilityScore {
    pub score: f64,
    pub best_policy: usize,
    /// `sqrt(max_s mean_p d²)` per policy of the family.
    pub per_policy: Vec<f64>,
}

/// `min` over the family of `sqrt(max_{grid s} mean_p d²((X, Y)(s), K))`.
#[allow(clippy::too_many_arguments)]
pub fn near_viability_score(
    sys: &System,
    t: f64,
    init: &StatePair,
    k: &dyn ConstraintSet,
    family: &[ControlPolicy],
    horizon: f64,
    h: f64,
    paths: usize,
    seed: u64,
) -> Result<ViabilityScore> {
    sys.check_step(h)?;
    sys.check_state(init)?;
    if !k.contains(init) {
        return Err(Error::Precondition(format!(
            "initial state lies outside {} (distance {})",
            k.describe(),
            k.distance(init)
        )));
    }
    if family.is_empty() || paths == 0 {
        return Err(Error::Config("empty policy family or path count".into()));
    }
    let n = steps_between(t, horizon, h)?;
    let start = abs_step(t, h)?;
    let d = sys.domains().clone();
    let mut per_policy = Vec::with_capacity(family.len());
    for pol in family {
        pol.check(sys.controls())?;
        let dists = map_paths(paths, |p| {
            let mut st = PathStepper::new(sys, Dynamics::True, h, seed, p, start, init, None);
            let mut v = Vec::with_capacity(n);
            for i in 0..n {
                st.step(pol.index_at(t + i as f64 * h, h))?;
                let dd = k.distance_raw(&d.x, &d.y, st.x(), st.y());
                v.push(dd * dd);
            }
            Ok(v)
        })?;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let m = dists.iter().map(|v| v[i]).sum::<f64>() / paths as f64;
            worst = worst.max(m);
        }
        per_policy.push(worst.sqrt());
    }
    let (best_policy, score) = per_policy
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    Ok(ViabilityScore {
        score,
        best_policy,
        per_policy,
    })
}

/// Bracket terms for one `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangencyValue {
    pub eps: f64,
    pub value: f64,
    /// `(1/ε) mean ‖(𝕏, 𝕐) - θ‖²`.
    pub term_mean_sq: f64,
    /// `(1/ε^{2-2λ}) ‖mean(𝕏 - θ₁)‖²`.
    pub term_cond_1: f64,
    /// `(1/ε^{2-2λ}) ‖mean(𝕐 - θ₂)‖²`.
    pub term_cond_2: f64,
    /// Unscaled `‖mean(𝕏 - θ₁)‖² + ‖mean(𝕐 - θ₂)‖²`.
    pub raw_cond: f64,
    pub best_control: usize,
    pub theta: String,
}

/// Minimises the bracket over constant controls with `θ` the per-path
/// projection of the fundamental endpoint at `t + ε`.
#[allow(clippy::too_many_arguments)]
pub fn quasi_tangency_value(
    sys: &System,
    t: f64,
    init: &StatePair,
    eps: f64,
    k: &dyn ConstraintSet,
    lambda: f64,
    h: f64,
    paths: usize,
    seed: u64,
) -> Result<TangencyValue> {
    sys.check_step(h)?;
    sys.check_state(init)?;
    if !(eps >= 8.0 * h) {
        return Err(Error::Resolution {
            eps,
            h,
            min_steps: 8,
        });
    }
    if paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let n = (eps / h).round() as usize;
    let start = abs_step(t, h)?;
    let d: &DomainPair = sys.domains();
    let mut best: Option<TangencyValue> = None;
    for ui in 0..sys.controls().len() {
        let gaps = map_paths(paths, |p| {
            let mut st = PathStepper::new(sys, Dynamics::Fundamental, h, seed, p, start, init, None);
            for _ in 0..n {
                st.step(ui)?;
            }
            let mut px = vec![0.0; st.x().len()];
            let mut py = vec![0.0; st.y().len()];
            k.project_into(&d.x, &d.y, st.x(), st.y(), &mut px, &mut py);
            let gx: Vec<f64> = st.x().iter().zip(&px).map(|(a, b)| a - b).collect();
            let gy: Vec<f64> = st.y().iter().zip(&py).map(|(a, b)| a - b).collect();
            Ok((gx, gy))
        })?;
        let np = paths as f64;
        let mut mx = vec![0.0; d.x.n_modes()];
        let mut my = vec![0.0; d.y.n_modes()];
        let mut msq = 0.0;
        for (gx, gy) in &gaps {
            msq += d.x.hminus1_norm_sq(gx) + d.y.hminus1_norm_sq(gy);
            mx.iter_mut().zip(gx).for_each(|(m, v)| *m += v);
            my.iter_mut().zip(gy).for_each(|(m, v)| *m += v);
        }
        msq /= np;
        mx.iter_mut().chain(my.iter_mut()).for_each(|v| *v /= np);
        let c1 = d.x.hminus1_norm_sq(&mx);
        let c2 = d.y.hminus1_norm_sq(&my);
        let scale = eps.powf(2.0 - 2.0 * lambda);
        let cand = TangencyValue {
            eps,
            value: msq / eps + (c1 + c2) / scale,
            term_mean_sq: msq / eps,
            term_cond_1: c1 / scale,
            term_cond_2: c2 / scale,
            raw_cond: c1 + c2,
            best_control: ui,
            theta: format!("projection onto {}", k.describe()),
        };
        if best.as_ref().is_none_or(|b| cand.value < b.value) {
            best = Some(cand);
        }
    }
    Ok(best.expect("control set is non-empty"))
}

/// Bracket series over a decreasing `ε` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TangencyReport {
    pub eps_grid: Vec<f64>,
    pub lambda: f64,
    pub values: Vec<TangencyValue>,
    /// `clamp(1 - γ/2, 0, 1)` with `γ` the log-log slope of the unscaled
    /// conditional term; 0 when that term vanishes identically.
    pub lambda_hat: f64,
    pub tol: f64,
    /// Bracket at the smallest `ε` within `tol` and not increasing along the grid.
    pub tangent: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn fit_tangency(
    sys: &System,
    t: f64,
    init: &StatePair,
    k: &dyn ConstraintSet,
    eps_grid: &[f64],
    lambda: f64,
    h: f64,
    paths: usize,
    seed: u64,
    tol: f64,
) -> Result<TangencyReport> {
    if eps_grid.len() < 4 {
        return Err(Error::Precondition("eps grid needs at least 4 entries".into()));
    }
    if eps_grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Precondition("eps grid must be strictly decreasing".into()));
    }
    let values = eps_grid
        .iter()
        .map(|&e| quasi_tangency_value(sys, t, init, e, k, lambda, h, paths, seed))
        .collect::<Result<Vec<_>>>()?;
    let floor = 1e-300;
    let lambda_hat = if values.iter().all(|v| v.raw_cond <= floor) {
        0.0
    } else {
        let pts: Vec<(f64, f64)> = values
            .iter()
            .map(|v| (v.eps.ln(), v.raw_cond.max(floor).ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (1.0 - 0.5 * sxy / sxx).clamp(0.0, 1.0)
    };
    let first = values.first().expect("non-empty").value;
    let last = values.last().expect("non-empty").value;
    let tangent = last <= tol && last <= first + tol;
    Ok(TangencyReport {
        eps_grid: eps_grid.to_vec(),
        lambda,
        values,
        lambda_hat,
        tol,
        tangent,
    })
}

/// Splits per-path corrections `p` into `a = mean(p)/ε^{1-λ}` and
/// `b = (p - mean(p))/sqrt(ε)`, so that `p = ε^{1-λ} a + sqrt(ε) b`.
pub fn sequential_decompose(p: &[Vec<f64>], eps: f64, lambda: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if p.is_empty() {
        return Err(Error::Domain("no paths to decompose".into()));
    }
    let dim = p[0].len();
    if p.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("paths have different lengths".into()));
    }
    let mut mean = vec![0.0; dim];
    for v in p {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= p.len() as f64);
    let s = eps.powf(1.0 - lambda);
    let r = eps.sqrt();
    let a = mean.iter().map(|m| m / s).collect();
    let b = p
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| (x - m) / r).collect())
        .collect();
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, DomainSpec};
    use std::f64::consts::PI;

    fn bases() -> (std::sync::Arc<EigenBasis>, std::sync::Arc<EigenBasis>) {
        (
            build_basis(DomainSpec::with_modes(PI, 3).unwrap()).unwrap(),
            build_basis(DomainSpec::with_modes(PI, 1).unwrap()).unwrap(),
        )
    }

    #[test]
    fn kstab_membership_examples() {
        let (bx, by) = bases();
        let k = KStab::new(2, 3).unwrap();
        let z = StatePair::zeros(bx.clone(), by.clone());
        assert!(k.contains(&z));
        // ‖Π_2 x‖² = 1, y = 2
        let z = StatePair::new(
            SpectralField::new(bx.clone(), vec![1.0, 0.0, 5.0]).unwrap(),
            SpectralField::new(by.clone(), vec![2.0]).unwrap(),
        );
        assert!(k.contains(&z));
        assert_eq!(k.distance(&z), 0.0);
        assert!(KStab::new(4, 3).is_err());
    }

    #[test]
    fn kstab_projection_matches_brute_force() {
        let (bx, by) = bases();
        let k = KStab::new(2, 3).unwrap();
        // ‖Π_j x‖² = 4 along e_1, y = 0
        let z = StatePair::new(
            SpectralField::new(bx.clone(), vec![2.0, 0.0, 0.3]).unwrap(),
            SpectralField::new(by.clone(), vec![0.0]).unwrap(),
        );
        let d = k.distance(&z);
        // oracle: nearest point on the boundary curve w = ρ² in the (a_1, w) plane
        let mut best = f64::MAX;
        for i in 0..=2_000_000 {
            let rho = -3.0 + 6.0 * i as f64 / 2_000_000.0;
            best = best.min((rho - 2.0).powi(2) + (rho * rho).powi(2));
        }
        assert!((d - best.sqrt()).abs() < 1e-6, "{d} vs {}", best.sqrt());
        let p = k.project(&z);
        assert!(k.contains(&p));
        assert_eq!(p.x.coeffs()[2], 0.3);
    }

    #[test]
    fn paraboloid_root_solves_cubic() {
        for (r, y) in [(2.0, 0.0), (0.5, -1.0), (3.0, 2.0), (1e-3, -5.0), (10.0, 0.9)] {
            let p = paraboloid_radius(r, y);
            let g = 2.0 * p * p * p + (1.0 - 2.0 * y) * p - r;
            assert!(g.abs() < 1e-10 * r.max(1.0), "{r} {y} {g}");
            assert!(p > 0.0 && p < r);
        }
    }

    #[test]
    fn basic_sets() {
        let (bx, by) = bases();
        let z = StatePair::new(
            SpectralField::new(bx.clone(), vec![3.0, 0.0, 0.0]).unwrap(),
            SpectralField::new(by.clone(), vec![4.0]).unwrap(),
        );
        let ball = Ball::new(1.0).unwrap();
        assert!((ball.distance(&z) - 4.0).abs() < 1e-14);
        assert!((ball.project(&z).hminus1_norm_sq() - 1.0).abs() < 1e-14);
        let hs = HalfSpace::new(1, 1.0).unwrap();
        assert!((hs.distance(&z) - 2.0).abs() < 1e-14);
        assert!(hs.contains(&hs.project(&z)));
        assert!((Singleton.distance(&z) - 5.0).abs() < 1e-14);
        assert_eq!(WholeSpace.distance(&z), 0.0);
    }

    #[test]
    fn decomposition_examples() {
        let (a, b) = sequential_decompose(&[vec![0.0, 0.0], vec![0.0, 0.0]], 0.1, 0.0).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
        assert!(b.iter().flatten().all(|v| *v == 0.0));
        let (a, b) = sequential_decompose(&[vec![2.0], vec![2.0]], 0.25, 0.5).unwrap();
        assert_eq!(a, vec![4.0]);
        assert!(b.iter().flatten().all(|v| *v == 0.0));
        assert!(matches!(sequential_decompose(&[vec![1.0]], 0.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn family_enumeration() {
        let f = policy_family(2, 0.0, 1.0, 3, 100);
        // 2 constants + 2 two-piece + 6 three-piece non-constant sequences
        assert_eq!(f.len(), 2 + 2 + 6);
        assert_eq!(policy_family(1, 0.0, 1.0, 4, 100).len(), 1);
    }
}
