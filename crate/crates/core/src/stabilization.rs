//! Exponential pseudo-stabilization of the leading `j` modes through the
//! supervisor set `{‖Π_j x‖²_{H⁻¹} ≤ y}` with `dy = -c y dt`.

use std::sync::Arc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::coefficients::{Component, ControlSet, DomainPair, DriftCoeff, DriftTerm, NoiseCoeff, NoiseSpec, NoiseTerm};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::rng::{sampler_rng, standard_normal, uniform, NoiseStream};
use crate::sde::{abs_step, map_paths, steps_between, Dynamics, PathEnsemble, PathStepper, PathTrajectory, System};
use crate::spectral::{build_basis, DomainSpec, EigenBasis, StatePair};
use crate::viability::KStab;

/// Admissibility tolerance of the tangential-noise condition, relative to
/// `‖Π_j x‖_{H⁻¹}`.
pub const COND_CTRL_TOL: f64 = 1e-8;

/// Tolerance of [`certify`] on the normalized condition values.
pub const CERTIFY_TOL: f64 = 1e-9;

/// Supervised system: `β₂ ≡ 0`, `f₂ = -c y`, `σ₂ ≡ 0` on a one-mode second
/// domain.
#[derive(Debug, Clone)]
pub struct StabilizationConfig {
    pub j: usize,
    pub c: f64,
    pub y0: f64,
    sys: Arc<System>,
}

impl StabilizationConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_basis: Arc<EigenBasis>,
        j: usize,
        c: f64,
        beta1: Nonlinearity,
        f1: Vec<DriftTerm>,
        sigma1: Vec<NoiseTerm>,
        m: usize,
        controls: ControlSet,
        y0: f64,
    ) -> Result<Self> {
        KStab::new(j, x_basis.n_modes())?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("decay rate must be positive, got {c}")));
        }
        if !(y0 >= 0.0 && y0.is_finite()) {
            return Err(Error::Config(format!("supervisor value must be non-negative, got {y0}")));
        }
        let y_basis = build_basis(DomainSpec::with_modes(x_basis.length(), 1)?)?;
        let d = DomainPair::new(x_basis, y_basis);
        let ns = NoiseSpec { m };
        let sys = System::new(
            d.clone(),
            beta1,
            Nonlinearity::zero(),
            DriftCoeff::new(d.clone(), Component::X, f1)?,
            DriftCoeff::new(d.clone(), Component::Y, vec![DriftTerm::Linear { source: Component::Y, gain: -c, modes: None }])?,
            NoiseCoeff::new(d.clone(), Component::X, ns, sigma1)?,
            NoiseCoeff::zero(d, Component::Y, ns),
            controls,
        )?;
        Ok(StabilizationConfig { j, c, y0, sys: Arc::new(sys) })
    }

    /// The full supervised system.
    pub fn system(&self) -> &Arc<System> {
        &self.sys
    }

    pub fn k_stab(&self) -> KStab {
        KStab { j: self.j }
    }

    fn x_basis(&self) -> &Arc<EigenBasis> {
        &self.sys.domains().x
    }

    /// Second-component coefficients holding the supervisor value `y`.
    pub fn y_coeffs(&self, y: f64) -> [f64; 1] {
        [y * self.sys.domains().y.sqrt_eigenvalues()[0]]
    }

    /// State `(x, y)` with `x` given by L² coefficients.
    pub fn state(&self, x: &[f64], y: f64) -> StatePair {
        self.sys.state(x, &self.y_coeffs(y))
    }

    fn noise_at(&self, x: &[f64], ui: usize) -> Vec<f64> {
        let m = self.sys.m();
        let mut s = vec![0.0; x.len() * m];
        if m > 0 {
            let y = self.y_coeffs(self.x_basis().projected_hminus1_norm_sq(x, self.j));
            self.sys.noise_coeff(Component::X).eval_into(x, &y, self.sys.controls().get(ui), &mut s);
        }
        s
    }

    /// `‖S(x, ‖Π_j x‖², u)ᵀ a‖` with `a` the H⁻¹ coordinates of `Π_j x`.
    pub fn check_cond2(&self, x: &[f64], ui: usize) -> f64 {
        let m = self.sys.m();
        let s = self.noise_at(x, ui);
        let sq = self.x_basis().sqrt_eigenvalues();
        let mut r2 = 0.0;
        for q in 0..m {
            let v: f64 = (0..self.j).map(|k| s[k * m + q] * x[k] / sq[k]).sum();
            r2 += v * v;
        }
        r2.sqrt()
    }

    /// `2 Σ_{k≤j} a_k ⟨Δβ(x) + f₁, e_k⟩_{-1} + 2c ‖Π_j x‖² + ‖Π_j S‖²_HS`,
    /// evaluated on the boundary `y = ‖Π_j x‖²_{H⁻¹}`.
    pub fn check_cond1(&self, x: &[f64], ui: usize) -> f64 {
        let b = self.x_basis();
        let n = b.n_modes();
        let m = self.sys.m();
        let r2 = b.projected_hminus1_norm_sq(x, self.j);
        let y = self.y_coeffs(r2);
        let mut grid = vec![0.0; b.n_grid()];
        let mut db = vec![0.0; n];
        self.sys.beta(Component::X).delta_beta_into(b, x, &mut grid, &mut db);
        let mut f = vec![0.0; n];
        self.sys.drift(Component::X).eval_into(x, &y, self.sys.controls().get(ui), &mut f);
        let s = self.noise_at(x, ui);
        let sq = b.sqrt_eigenvalues();
        let mut v = 2.0 * self.c * r2;
        for k in 0..self.j {
            v += 2.0 * (x[k] / sq[k]) * (db[k] + f[k]) / sq[k];
            for q in 0..m {
                v += s[k * m + q] * s[k * m + q];
            }
        }
        v
    }

    /// Minimum of the drift condition over controls whose tangential-noise
    /// residual is at most `COND_CTRL_TOL ‖Π_j x‖`; `+∞` if none qualifies.
    pub fn cond_ctrl(&self, x: &[f64]) -> (f64, Option<usize>) {
        let tol = COND_CTRL_TOL * self.x_basis().projected_hminus1_norm_sq(x, self.j).sqrt();
        let mut best = (f64::INFINITY, None);
        for ui in 0..self.sys.controls().len() {
            if self.check_cond2(x, ui) <= tol {
                let v = self.check_cond1(x, ui);
                if v < best.0 {
                    best = (v, Some(ui));
                }
            }
        }
        best
    }

    /// Stable identifier of the parameters entering a certificate.
    pub fn hash(&self, seed: u64, n_samples: usize) -> String {
        let b = self.x_basis();
        let beta = self.sys.beta(Component::X);
        let text = format!(
            "j={};c={:e};y0={:e};L={:e};N={};M={};m={};controls={:?};beta={:?};lip={:e};mono={:e};f={:?};sigma={:?};seed={};n={}",
            self.j,
            self.c,
            self.y0,
            b.length(),
            b.n_modes(),
            b.n_grid(),
            self.sys.m(),
            self.sys.controls().points(),
            beta.kind(),
            beta.lip(),
            beta.mono(),
            self.sys.drift(Component::X).terms(),
            self.sys.noise_coeff(Component::X).terms(),
            seed,
            n_samples
        );
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Shell radii sampled by [`certify`].
pub const SHELL_RADII: [f64; 4] = [1e-2, 1e-1, 1.0, 10.0];

/// Worst values on one shell `‖Π_j x‖_{H⁻¹} = r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShellResult {
    pub radius: f64,
    /// `max Cond1 / r²`.
    pub worst_cond1: f64,
    /// `max Cond2 / r`.
    pub worst_cond2: f64,
    /// L² coefficients of the maximizer of the drift condition.
    pub worst_x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub seed: u64,
    pub config_hash: String,
    pub n_samples: usize,
    pub shells: Vec<ShellResult>,
    pub max_cond1: f64,
    pub max_cond2: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Samples the boundary of the supervisor set on shells of `Π_j H⁻¹`:
/// coordinate directions plus `n_samples` random directions per shell, each
/// with a random tail `ζ` on the modes above `j`. With more than one control
/// the controlled form is checked.
pub fn certify(cfg: &StabilizationConfig, n_samples: usize, seed: u64) -> Result<Certificate> {
    if n_samples == 0 {
        return Err(Error::Precondition("certify needs at least one sample".into()));
    }
    let b = cfg.x_basis();
    let n = b.n_modes();
    let j = cfg.j;
    let sq = b.sqrt_eigenvalues().to_vec();
    let controlled = cfg.sys.controls().len() > 1;
    let shells = SHELL_RADII
        .par_iter()
        .enumerate()
        .map(|(si, &r)| {
            let mut rng = sampler_rng(seed, si as u64);
            let mut dirs: Vec<Vec<f64>> = Vec::new();
            for k in 0..j {
                for s in [1.0, -1.0] {
                    let mut a = vec![0.0; j];
                    a[k] = s;
                    dirs.push(a);
                }
            }
            for _ in 0..n_samples {
                let a: Vec<f64> = (0..j).map(|_| standard_normal(&mut rng)).collect();
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    dirs.push(a.iter().map(|v| v / norm).collect());
                }
            }
            let mut out = ShellResult { radius: r, worst_cond1: f64::NEG_INFINITY, worst_cond2: 0.0, worst_x: vec![] };
            for (i, a) in dirs.iter().enumerate() {
                let mut x = vec![0.0; n];
                for k in 0..j {
                    x[k] = r * a[k] * sq[k];
                }
                // random tail; coordinate directions are checked without it
                if i >= 2 * j {
                    let amp = r * uniform(&mut rng);
                    for (k, v) in x.iter_mut().enumerate().skip(j) {
                        *v = amp * standard_normal(&mut rng) * sq[k] / ((n - j) as f64).sqrt();
                    }
                }
                let (c1, c2) = if controlled {
                    (cfg.cond_ctrl(&x).0, 0.0)
                } else {
                    (cfg.check_cond1(&x, 0), cfg.check_cond2(&x, 0))
                };
                let c1 = c1 / (r * r);
                if c1 > out.worst_cond1 {
                    out.worst_cond1 = c1;
                    out.worst_x = x.clone();
                }
                out.worst_cond2 = out.worst_cond2.max(c2 / r);
            }
            out
        })
        .collect::<Vec<_>>();
    let max_cond1 = shells.iter().map(|s| s.worst_cond1).fold(f64::NEG_INFINITY, f64::max);
    let max_cond2 = shells.iter().map(|s| s.worst_cond2).fold(0.0, f64::max);
    Ok(Certificate {
        seed,
        config_hash: cfg.hash(seed, n_samples),
        n_samples,
        passed: max_cond1 <= CERTIFY_TOL && max_cond2 <= CERTIFY_TOL,
        shells,
        max_cond1,
        max_cond2,
        tol: CERTIFY_TOL,
    })
}

/// Source of the tail `ζ = Π_j^⊥ X` in the projected system.
#[derive(Debug, Clone, Copy)]
pub enum ZetaSource<'a> {
    Zero,
    /// Tails read from a recorded full simulation with the same grid;
    /// stored samples must cover every step.
    Recorded(&'a PathEnsemble),
    /// Tails of a full simulation run alongside on the same noise.
    SelfConsistent,
}

/// Simulates the `j`-mode projected system with the supervisor integrated
/// exactly, `Y(s) = η e^{-c(s-t)}`. `xi` holds the first `j` L² coefficients.
#[allow(clippy::too_many_arguments)]
pub fn run_projected(
    cfg: &StabilizationConfig,
    zeta: ZetaSource<'_>,
    t: f64,
    xi: &[f64],
    eta: f64,
    horizon: f64,
    h: f64,
    paths: usize,
    seed: u64,
    control: usize,
    store_every: usize,
) -> Result<PathEnsemble> {
    let sys = &cfg.sys;
    let j = cfg.j;
    sys.check_step(h)?;
    if xi.len() != j {
        return Err(Error::Dimension(format!("projected data has {} coefficients, expected {j}", xi.len())));
    }
    if control >= sys.controls().len() {
        return Err(Error::Index { index: control, max: sys.controls().len() });
    }
    if paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    let n_steps = steps_between(t, horizon, h)?;
    let abs0 = abs_step(t, h)?;
    let every = store_every.max(1);
    let mut stored: Vec<usize> = (0..=n_steps).step_by(every).collect();
    if *stored.last().expect("non-empty") != n_steps {
        stored.push(n_steps);
    }
    if let ZetaSource::Recorded(ens) = zeta {
        if ens.h != h || (ens.t0 - t).abs() > 1e-9 * h || ens.n_steps < n_steps || ens.n_paths() < paths {
            return Err(Error::Comparison("recorded tail does not cover the run".into()));
        }
        if ens.stored_steps.len() != ens.n_steps + 1 || !ens.domains.x.same_domain(&sys.domains().x) {
            return Err(Error::Comparison("recorded tail must store every step on the same domain".into()));
        }
    }
    let b = sys.domains().x.clone();
    let n = b.n_modes();
    let m = sys.m();
    let u = sys.controls().get(control);
    let proj_basis = build_basis(DomainSpec::with_modes(b.length(), j)?)?;
    let y_sq = sys.domains().y.sqrt_eigenvalues()[0];
    let sqrt_l = b.sqrt_eigenvalues().to_vec();
    let beta = sys.beta(Component::X);
    let trajs = map_paths(paths, |p| {
        let mut x = vec![0.0; n];
        x[..j].copy_from_slice(xi);
        let mut full = match zeta {
            ZetaSource::SelfConsistent => {
                let s0 = sys.state(&x, &[eta * y_sq]);
                Some(PathStepper::new(sys, Dynamics::True, h, seed, p, abs0, &s0, None))
            }
            _ => None,
        };
        let mut noise = NoiseStream::new(seed, p as u64, m, h);
        noise.seek(abs0);
        let mut dw = vec![0.0; m];
        let mut grid = vec![0.0; b.n_grid()];
        let mut db = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut s = vec![0.0; n * m];
        let mut tx = Vec::with_capacity(stored.len() * j);
        let mut ty = Vec::with_capacity(stored.len());
        let mut next_store = 0;
        for step in 0..=n_steps {
            let y = eta * (-cfg.c * step as f64 * h).exp();
            if stored[next_store] == step {
                tx.extend_from_slice(&x[..j]);
                ty.push(y * y_sq);
                next_store += 1;
            }
            if step == n_steps {
                break;
            }
            match zeta {
                ZetaSource::Zero => {}
                ZetaSource::Recorded(ens) => x[j..].copy_from_slice(&ens.x_at(p, step)[j..]),
                ZetaSource::SelfConsistent => {
                    x[j..].copy_from_slice(&full.as_ref().expect("full run").x()[j..]);
                }
            }
            let yc = [y * y_sq];
            beta.delta_beta_into(&b, &x, &mut grid, &mut db);
            sys.drift(Component::X).eval_into(&x, &yc, u, &mut f);
            if m > 0 {
                sys.noise_coeff(Component::X).eval_into(&x, &yc, u, &mut s);
                noise.next_increment(&mut dw);
            }
            for k in 0..j {
                let mut nz = 0.0;
                for q in 0..m {
                    nz += s[k * m + q] * dw[q];
                }
                x[k] += h * (db[k] + f[k]) + sqrt_l[k] * nz;
            }
            if x[..j].iter().any(|v| !(v.abs() < 1e150)) {
                return Err(Error::Divergence { path: p, step: step + 1 });
            }
            if let Some(fs) = full.as_mut() {
                fs.step(control)?;
            }
        }
        Ok(PathTrajectory { x: tx, y: ty, noise: None })
    })?;
    Ok(PathEnsemble {
        dynamics: Dynamics::True,
        t0: t,
        h,
        seed,
        n_steps,
        stored_steps: stored,
        domains: DomainPair::new(proj_basis, sys.domains().y.clone()),
        m,
        paths: trajs,
    })
}

/// Fraction of samples above the supervisor envelope and quantile curves of
/// `‖Π_j X‖²_{H⁻¹}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub times: Vec<f64>,
    /// Quantiles 0.5, 0.9, 0.99 and the maximum per stored time.
    pub quantiles: Vec<[f64; 4]>,
    pub envelope: Vec<f64>,
    pub violations: usize,
    pub samples: usize,
    pub fraction: f64,
}

impl DecayReport {
    /// `t,q50,q90,q99,max,envelope`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,q50,q90,q99,max,envelope")?;
        for ((t, q), e) in self.times.iter().zip(&self.quantiles).zip(&self.envelope) {
            writeln!(w, "{t},{},{},{},{},{e}", q[0], q[1], q[2], q[3])?;
        }
        Ok(())
    }
}

/// Counts `(path, time)` samples with `‖Π_j X‖² > y₀ e^{-c(t - t₀)} (1 + tol)`.
pub fn decay_check(ens: &PathEnsemble, j: usize, c: f64, y0: f64, tol: f64) -> Result<DecayReport> {
    let b = &ens.domains.x;
    KStab::new(j, b.n_modes())?;
    let times = ens.times();
    let mut quantiles = Vec::with_capacity(times.len());
    let mut envelope = Vec::with_capacity(times.len());
    let mut violations = 0;
    for (i, &t) in times.iter().enumerate() {
        let env = y0 * (-c * (t - ens.t0)).exp();
        let mut v: Vec<f64> = (0..ens.n_paths()).map(|p| b.projected_hminus1_norm_sq(ens.x_at(p, i), j)).collect();
        violations += v.iter().filter(|&&r| r > env * (1.0 + tol)).count();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
        quantiles.push([q(0.5), q(0.9), q(0.99), v[v.len() - 1]]);
        envelope.push(env);
    }
    let samples = times.len() * ens.n_paths();
    Ok(DecayReport {
        times,
        quantiles,
        envelope,
        violations,
        samples,
        fraction: violations as f64 / samples as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn linear(n: usize, c: f64, sigma: Vec<NoiseTerm>, m: usize) -> StabilizationConfig {
        let b = build_basis(DomainSpec::with_modes(PI, n).unwrap()).unwrap();
        StabilizationConfig::new(b, 2, c, Nonlinearity::linear(1.0).unwrap(), vec![], sigma, m, ControlSet::trivial(), 1.0).unwrap()
    }

    #[test]
    fn cond1_closed_form() {
        let cfg = linear(4, 0.5, vec![], 0);
        let x = [1.0, 0.0, 0.0, 0.0];
        assert!((cfg.check_cond1(&x, 0) + 1.0).abs() < 1e-12);
        let cfg2 = linear(4, 2.0, vec![], 0);
        assert!(cfg2.check_cond1(&x, 0) > 0.0);
        assert_eq!(cfg.check_cond1(&[0.0; 4], 0), 0.0);
        // quadratic homogeneity
        let x = [0.3, -0.7, 0.2, 0.1];
        let s = 3.0;
        let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
        assert!((cfg.check_cond1(&xs, 0) - s * s * cfg.check_cond1(&x, 0)).abs() < 1e-12);
    }

    #[test]
    fn cond2_injection_on_first_mode() {
        let sig = vec![NoiseTerm::Additive { first_mode: 1, first_column: 0, gains: vec![0.7] }];
        let cfg = linear(4, 0.5, sig, 1);
        assert!((cfg.check_cond2(&[1.0, 0.0, 0.0, 0.0], 0) - 0.7).abs() < 1e-12);
        assert_eq!(cfg.check_cond2(&[0.0; 4], 0), 0.0);
        let high = vec![NoiseTerm::Additive { first_mode: 3, first_column: 0, gains: vec![1.0] }];
        let cfg = linear(4, 0.5, high, 1);
        assert_eq!(cfg.check_cond2(&[0.4, 0.1, 0.2, 0.3], 0), 0.0);
    }

    #[test]
    fn certify_separates_decay_rates() {
        let high = vec![NoiseTerm::Additive { first_mode: 3, first_column: 0, gains: vec![0.5] }];
        let ok = certify(&linear(8, 0.5, high.clone(), 1), 32, 1).unwrap();
        assert!(ok.passed, "{ok:?}");
        let bad = certify(&linear(8, 1.1, high, 1), 32, 1).unwrap();
        assert!(!bad.passed);
        // worst direction is along the first mode
        let w = &bad.shells[0].worst_x;
        assert!(w[0].abs() > 10.0 * w[1].abs());
        assert_eq!(ok.config_hash.len(), 64);
    }

    #[test]
    fn projected_heat_decay_and_zero_state() {
        let cfg = linear(4, 0.5, vec![], 0);
        let ens = run_projected(&cfg, ZetaSource::Zero, 0.0, &[1.0, 0.5], 1.25, 1.0, 1e-3, 1, 0, 0, 100).unwrap();
        let last = ens.x_at(0, ens.n_stored() - 1);
        assert!((last[0] - (-1.0f64).exp()).abs() < 1e-3);
        assert!((last[1] - 0.5 * (-4.0f64).exp()).abs() < 1e-3);
        let rep = decay_check(&ens, 2, 0.5, 1.25, 1e-9).unwrap();
        assert_eq!(rep.violations, 0);
        let z = run_projected(&cfg, ZetaSource::Zero, 0.0, &[0.0, 0.0], 0.0, 0.5, 1e-3, 2, 0, 0, 1).unwrap();
        assert!(z.paths.iter().all(|p| p.x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn certify_needs_samples() {
        assert!(matches!(certify(&linear(4, 0.5, vec![], 0), 0, 0), Err(Error::Precondition(_))));
    }
}
