//! Explicit Euler–Maruyama integration of the coupled system and of its
//! frozen-coefficient fundamental solution.
//!
//! One step of either component reads
//! `c_k ← c_k + h (Δβ(c)_k + f_k) + sqrt(λ_k) Σ_q S_kq ΔW_q`,
//! where the factor `sqrt(λ_k)` converts the H⁻¹ coordinates of `S` back to
//! L² coefficients. Both components consume the same increments `ΔW`.

use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;

use crate::coefficients::{Component, ControlSet, DomainPair, DriftCoeff, NoiseCoeff, NoiseSpec};
use crate::error::{Error, Result};
use crate::nonlinearity::Nonlinearity;
use crate::rng::NoiseStream;
use crate::spectral::{hminus1_dist_sq_raw, EigenBasis, SpectralField, StatePair};

/// Values beyond this magnitude are reported as divergence.
const BLOWUP: f64 = 1e150;

/// The coupled system: two domains, nonlinearities, drifts, noises and the
/// control set.
#[derive(Clone, Debug)]
pub struct System {
    domains: DomainPair,
    betas: [Nonlinearity; 2],
    drifts: [DriftCoeff; 2],
    noises: [NoiseCoeff; 2],
    noise: NoiseSpec,
    controls: ControlSet,
}

impl System {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domains: DomainPair,
        beta1: Nonlinearity,
        beta2: Nonlinearity,
        f1: DriftCoeff,
        f2: DriftCoeff,
        sigma1: NoiseCoeff,
        sigma2: NoiseCoeff,
        controls: ControlSet,
    ) -> Result<Self> {
        if f1.target() != Component::X || sigma1.target() != Component::X {
            return Err(Error::Config("first drift/noise must target the first domain".into()));
        }
        if f2.target() != Component::Y || sigma2.target() != Component::Y {
            return Err(Error::Config("second drift/noise must target the second domain".into()));
        }
        if sigma1.m() != sigma2.m() {
            return Err(Error::Config(format!(
                "noise coefficients disagree on the number of modes ({} vs {})",
                sigma1.m(),
                sigma2.m()
            )));
        }
        for c in [f1.domains(), f2.domains(), sigma1.domains(), sigma2.domains()] {
            if !c.x.same_domain(&domains.x) || !c.y.same_domain(&domains.y) {
                return Err(Error::Config("coefficients built on other domains".into()));
            }
        }
        let need = f1
            .control_dim()
            .max(f2.control_dim())
            .max(sigma1.control_dim())
            .max(sigma2.control_dim());
        if need > controls.dim() {
            return Err(Error::Config(format!(
                "coefficients read control index {} but controls have dimension {}",
                need - 1,
                controls.dim()
            )));
        }
        let noise = NoiseSpec { m: sigma1.m() };
        Ok(System {
            domains,
            betas: [beta1, beta2],
            drifts: [f1, f2],
            noises: [sigma1, sigma2],
            noise,
            controls,
        })
    }

    pub fn domains(&self) -> &DomainPair {
        &self.domains
    }

    pub fn beta(&self, c: Component) -> &Nonlinearity {
        &self.betas[idx(c)]
    }

    pub fn drift(&self, c: Component) -> &DriftCoeff {
        &self.drifts[idx(c)]
    }

    pub fn noise_coeff(&self, c: Component) -> &NoiseCoeff {
        &self.noises[idx(c)]
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        self.noise
    }

    pub fn m(&self) -> usize {
        self.noise.m
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    /// `0.5 / max(λ_N [β₁]₁, λ_N [β₂]₁, 1)`.
    pub fn h_max(&self) -> f64 {
        let a = self.domains.x.largest_eigenvalue() * self.betas[0].lip();
        let b = self.domains.y.largest_eigenvalue() * self.betas[1].lip();
        0.5 / a.max(b).max(1.0)
    }

    pub fn check_step(&self, h: f64) -> Result<()> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {h}")));
        }
        let h_max = self.h_max();
        if h > h_max * (1.0 + 1e-12) {
            return Err(Error::Stability { h, h_max });
        }
        Ok(())
    }

    /// A state pair on this system's domains from leading coefficients.
    pub fn state(&self, x: &[f64], y: &[f64]) -> StatePair {
        StatePair::new(
            SpectralField::from_leading(self.domains.x.clone(), x),
            SpectralField::from_leading(self.domains.y.clone(), y),
        )
    }

    pub fn zero_state(&self) -> StatePair {
        StatePair::zeros(self.domains.x.clone(), self.domains.y.clone())
    }

    pub fn check_state(&self, s: &StatePair) -> Result<()> {
        if !self.domains.x.same_domain(s.x.basis()) || !self.domains.y.same_domain(s.y.basis()) {
            return Err(Error::Dimension("state pair is not on the system domains".into()));
        }
        Ok(())
    }
}

fn idx(c: Component) -> usize {
    match c {
        Component::X => 0,
        Component::Y => 1,
    }
}

/// Piecewise-constant control: `(switch time, control index)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPolicy {
    switches: Vec<(f64, usize)>,
}

impl ControlPolicy {
    pub fn constant(index: usize) -> Self {
        ControlPolicy {
            switches: vec![(f64::NEG_INFINITY, index)],
        }
    }

    /// `switches[i] = (t_i, u_i)`: control `u_i` from `t_i` on. Times must be
    /// strictly increasing; before the first switch the first control applies.
    pub fn switching(switches: Vec<(f64, usize)>) -> Result<Self> {
        if switches.is_empty() {
            return Err(Error::Config("switching policy needs at least one entry".into()));
        }
        if switches.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Config("switch times must be strictly increasing".into()));
        }
        Ok(ControlPolicy { switches })
    }

    pub fn switches(&self) -> &[(f64, usize)] {
        &self.switches
    }

    /// Control index in force on the step starting at `t`.
    pub fn index_at(&self, t: f64, h: f64) -> usize {
        let slack = 1e-9 * h;
        let mut cur = self.switches[0].1;
        for &(s, u) in &self.switches {
            if t + slack >= s {
                cur = u;
            } else {
                break;
            }
        }
        cur
    }

    pub fn max_index(&self) -> usize {
        self.switches.iter().map(|s| s.1).max().unwrap_or(0)
    }

    pub fn check(&self, controls: &ControlSet) -> Result<()> {
        if self.max_index() >= controls.len() {
            return Err(Error::Config(format!(
                "policy uses control {} of a set with {} points",
                self.max_index(),
                controls.len()
            )));
        }
        Ok(())
    }
}

pub type InitialSampler = Arc<dyn Fn(usize) -> StatePair + Send + Sync>;

/// Deterministic or per-path initial data.
#[derive(Clone)]
pub enum InitialState {
    Deterministic(StatePair),
    PerPath(InitialSampler),
}

impl InitialState {
    pub fn for_path(&self, p: usize) -> StatePair {
        match self {
            InitialState::Deterministic(s) => s.clone(),
            InitialState::PerPath(f) => f(p),
        }
    }
}

impl From<StatePair> for InitialState {
    fn from(s: StatePair) -> Self {
        InitialState::Deterministic(s)
    }
}

/// Which equation a stepper integrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    True,
    /// Drift and noise frozen at the anchor state; `Δβ` at the running state.
    Fundamental,
}

/// Time grid, ensemble size, seed and storage options.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    pub t0: f64,
    pub horizon: f64,
    pub h: f64,
    pub paths: usize,
    pub seed: u64,
    /// Store every `store_every`-th step (and always the last one).
    pub store_every: usize,
    pub record_noise: bool,
}

impl SimSpec {
    pub fn new(t0: f64, horizon: f64, h: f64, paths: usize, seed: u64) -> Self {
        SimSpec {
            t0,
            horizon,
            h,
            paths,
            seed,
            store_every: 1,
            record_noise: false,
        }
    }

    pub fn store_every(mut self, k: usize) -> Self {
        self.store_every = k.max(1);
        self
    }

    pub fn record_noise(mut self, on: bool) -> Self {
        self.record_noise = on;
        self
    }

    pub fn n_steps(&self) -> Result<usize> {
        steps_between(self.t0, self.horizon, self.h)
    }

    /// Absolute index of the first step, `round(t0 / h)`.
    pub fn first_abs_step(&self) -> Result<u64> {
        abs_step(self.t0, self.h)
    }
}

pub fn steps_between(t0: f64, t1: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("time step must be positive, got {h}")));
    }
    if !(t1 >= t0) {
        return Err(Error::Config(format!("horizon {t1} precedes start {t0}")));
    }
    let n = ((t1 - t0) / h).round();
    if ((n * h) - (t1 - t0)).abs() > 1e-9 * t1.abs().max(1.0) {
        return Err(Error::Config(format!(
            "interval [{t0}, {t1}] is not a whole number of steps of size {h}"
        )));
    }
    Ok(n as usize)
}

pub fn abs_step(t: f64, h: f64) -> Result<u64> {
    if t < 0.0 {
        return Err(Error::Config(format!("start time must be non-negative, got {t}")));
    }
    let n = (t / h).round();
    if (n * h - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::Config(format!("start time {t} is not on the grid of step {h}")));
    }
    Ok(n as u64)
}

struct Frozen {
    fx: Vec<f64>,
    fy: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
}

/// Integrates one path step by step. Reads increments for absolute steps
/// starting at the one given at construction.
pub struct PathStepper<'a> {
    sys: &'a System,
    dynamics: Dynamics,
    h: f64,
    path: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    anchor: (Vec<f64>, Vec<f64>),
    frozen: Vec<Option<Frozen>>,
    noise: NoiseStream,
    dw: Vec<f64>,
    grid_x: Vec<f64>,
    grid_y: Vec<f64>,
    dbx: Vec<f64>,
    dby: Vec<f64>,
    fx: Vec<f64>,
    fy: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    steps_taken: usize,
}

impl<'a> PathStepper<'a> {
    /// `anchor` is the freezing point for [`Dynamics::Fundamental`]; it
    /// defaults to the initial state.
    pub fn new(
        sys: &'a System,
        dynamics: Dynamics,
        h: f64,
        seed: u64,
        path: usize,
        start_abs_step: u64,
        init: &StatePair,
        anchor: Option<&StatePair>,
    ) -> Self {
        let bx = &sys.domains.x;
        let by = &sys.domains.y;
        let m = sys.m();
        let mut noise = NoiseStream::new(seed, path as u64, m, h);
        noise.seek(start_abs_step);
        let anchor = anchor.unwrap_or(init);
        PathStepper {
            sys,
            dynamics,
            h,
            path,
            x: init.x.coeffs().to_vec(),
            y: init.y.coeffs().to_vec(),
            anchor: (anchor.x.coeffs().to_vec(), anchor.y.coeffs().to_vec()),
            frozen: (0..sys.controls.len()).map(|_| None).collect(),
            noise,
            dw: vec![0.0; m],
            grid_x: vec![0.0; bx.n_grid()],
            grid_y: vec![0.0; by.n_grid()],
            dbx: vec![0.0; bx.n_modes()],
            dby: vec![0.0; by.n_modes()],
            fx: vec![0.0; bx.n_modes()],
            fy: vec![0.0; by.n_modes()],
            sx: vec![0.0; bx.n_modes() * m],
            sy: vec![0.0; by.n_modes() * m],
            steps_taken: 0,
        }
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Increments consumed by the last step.
    pub fn last_increment(&self) -> &[f64] {
        &self.dw
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn state(&self) -> StatePair {
        self.sys.state(&self.x, &self.y)
    }

    /// Advances one step under control index `ui`.
    pub fn step(&mut self, ui: usize) -> Result<()> {
        let sys = self.sys;
        let u = sys.controls.get(ui);
        let m = sys.m();
        let (fx, fy, sx, sy): (&[f64], &[f64], &[f64], &[f64]) = match self.dynamics {
            Dynamics::True => {
                sys.drifts[0].eval_into(&self.x, &self.y, u, &mut self.fx);
                sys.drifts[1].eval_into(&self.x, &self.y, u, &mut self.fy);
                if m > 0 {
                    sys.noises[0].eval_into(&self.x, &self.y, u, &mut self.sx);
                    sys.noises[1].eval_into(&self.x, &self.y, u, &mut self.sy);
                }
                (&self.fx, &self.fy, &self.sx, &self.sy)
            }
            Dynamics::Fundamental => {
                if self.frozen[ui].is_none() {
                    let (ax, ay) = (&self.anchor.0, &self.anchor.1);
                    let mut fr = Frozen {
                        fx: vec![0.0; self.fx.len()],
                        fy: vec![0.0; self.fy.len()],
                        sx: vec![0.0; self.sx.len()],
                        sy: vec![0.0; self.sy.len()],
                    };
                    sys.drifts[0].eval_into(ax, ay, u, &mut fr.fx);
                    sys.drifts[1].eval_into(ax, ay, u, &mut fr.fy);
                    if m > 0 {
                        sys.noises[0].eval_into(ax, ay, u, &mut fr.sx);
                        sys.noises[1].eval_into(ax, ay, u, &mut fr.sy);
                    }
                    self.frozen[ui] = Some(fr);
                }
                let fr = self.frozen[ui].as_ref().expect("filled above");
                (&fr.fx, &fr.fy, &fr.sx, &fr.sy)
            }
        };
        let bx = &sys.domains.x;
        let by = &sys.domains.y;
        sys.betas[0].delta_beta_into(bx, &self.x, &mut self.grid_x, &mut self.dbx);
        sys.betas[1].delta_beta_into(by, &self.y, &mut self.grid_y, &mut self.dby);
        if m > 0 {
            self.noise.next_increment(&mut self.dw);
        }
        let h = self.h;
        advance(&mut self.x, &self.dbx, fx, sx, &self.dw, bx, h);
        advance(&mut self.y, &self.dby, fy, sy, &self.dw, by, h);
        self.steps_taken += 1;
        if self.x.iter().chain(&self.y).any(|v| !(v.abs() < BLOWUP)) {
            return Err(Error::Divergence {
                path: self.path,
                step: self.steps_taken,
            });
        }
        Ok(())
    }
}

#[inline]
fn advance(c: &mut [f64], db: &[f64], f: &[f64], s: &[f64], dw: &[f64], basis: &EigenBasis, h: f64) {
    let m = dw.len();
    let sq = basis.sqrt_eigenvalues();
    for k in 0..c.len() {
        let mut noise = 0.0;
        if m > 0 {
            let row = &s[k * m..(k + 1) * m];
            for q in 0..m {
                noise += row[q] * dw[q];
            }
        }
        c[k] += h * (db[k] + f[k]) + sq[k] * noise;
    }
}

/// Stored trajectory of one path: row-major `(n_stored × N)` coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major `(n_steps × m)` increments when recorded.
    pub noise: Option<Vec<f64>>,
}

/// `P` simulated trajectories on a uniform grid.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub dynamics: Dynamics,
    pub t0: f64,
    pub h: f64,
    pub seed: u64,
    pub n_steps: usize,
    /// Step offsets (from `t0`) of stored samples, starting at 0.
    pub stored_steps: Vec<usize>,
    pub domains: DomainPair,
    pub m: usize,
    pub paths: Vec<PathTrajectory>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_stored(&self) -> usize {
        self.stored_steps.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.stored_steps
            .iter()
            .map(|&n| self.t0 + n as f64 * self.h)
            .collect()
    }

    pub fn x_at(&self, p: usize, i: usize) -> &[f64] {
        let n = self.domains.x.n_modes();
        &self.paths[p].x[i * n..(i + 1) * n]
    }

    pub fn y_at(&self, p: usize, i: usize) -> &[f64] {
        let n = self.domains.y.n_modes();
        &self.paths[p].y[i * n..(i + 1) * n]
    }

    pub fn state_at(&self, p: usize, i: usize) -> StatePair {
        StatePair::new(
            SpectralField::new(self.domains.x.clone(), self.x_at(p, i).to_vec()).expect("sized"),
            SpectralField::new(self.domains.y.clone(), self.y_at(p, i).to_vec()).expect("sized"),
        )
    }

    pub fn final_state(&self, p: usize) -> StatePair {
        self.state_at(p, self.n_stored() - 1)
    }

    /// Increments of step `n` (offset from `t0`) on path `p`, if recorded.
    pub fn increment(&self, p: usize, n: usize) -> Option<&[f64]> {
        self.paths[p]
            .noise
            .as_ref()
            .map(|v| &v[n * self.m..(n + 1) * self.m])
    }

    /// CSV dump, one row per stored `(path, step)`:
    /// `path,step,time,x_1..x_N1,y_1..y_N2`. `step` is the offset from `t0`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n1 = self.domains.x.n_modes();
        let n2 = self.domains.y.n_modes();
        write!(w, "path,step,time")?;
        for k in 1..=n1 {
            write!(w, ",x_{k}")?;
        }
        for k in 1..=n2 {
            write!(w, ",y_{k}")?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths() {
            for (i, &n) in self.stored_steps.iter().enumerate() {
                write!(w, "{p},{n},{}", self.t0 + n as f64 * self.h)?;
                for v in self.x_at(p, i).iter().chain(self.y_at(p, i)) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Runs `f` on every path index in parallel and returns results in path order.
pub fn map_paths<R, F>(paths: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    (0..paths).into_par_iter().map(f).collect()
}

fn stored_steps(n_steps: usize, every: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=n_steps).step_by(every.max(1)).collect();
    if *v.last().expect("non-empty") != n_steps {
        v.push(n_steps);
    }
    v
}

fn run(
    sys: &System,
    dynamics: Dynamics,
    spec: &SimSpec,
    policy: &ControlPolicy,
    init: &InitialState,
) -> Result<PathEnsemble> {
    sys.check_step(spec.h)?;
    policy.check(&sys.controls)?;
    if spec.paths == 0 {
        return Err(Error::Config("ensemble needs at least one path".into()));
    }
    let n_steps = spec.n_steps()?;
    let start = spec.first_abs_step()?;
    if let InitialState::Deterministic(s) = init {
        sys.check_state(s)?;
    }
    let stored = stored_steps(n_steps, spec.store_every);
    let m = sys.m();
    let paths = map_paths(spec.paths, |p| {
        let s0 = init.for_path(p);
        sys.check_state(&s0)?;
        let mut st = PathStepper::new(sys, dynamics, spec.h, spec.seed, p, start, &s0, None);
        let n1 = sys.domains.x.n_modes();
        let n2 = sys.domains.y.n_modes();
        let mut xs = Vec::with_capacity(stored.len() * n1);
        let mut ys = Vec::with_capacity(stored.len() * n2);
        let mut noise = if spec.record_noise && m > 0 {
            Some(Vec::with_capacity(n_steps * m))
        } else if spec.record_noise {
            Some(Vec::new())
        } else {
            None
        };
        xs.extend_from_slice(st.x());
        ys.extend_from_slice(st.y());
        let mut next = 1;
        for n in 0..n_steps {
            let t = spec.t0 + n as f64 * spec.h;
            st.step(policy.index_at(t, spec.h))?;
            if let Some(v) = noise.as_mut() {
                v.extend_from_slice(st.last_increment());
            }
            if next < stored.len() && stored[next] == n + 1 {
                xs.extend_from_slice(st.x());
                ys.extend_from_slice(st.y());
                next += 1;
            }
        }
        Ok(PathTrajectory { x: xs, y: ys, noise })
    })?;
    Ok(PathEnsemble {
        dynamics,
        t0: spec.t0,
        h: spec.h,
        seed: spec.seed,
        n_steps,
        stored_steps: stored,
        domains: sys.domains.clone(),
        m,
        paths,
    })
}

/// Euler–Maruyama ensemble of the coupled system.
pub fn simulate(
    sys: &System,
    spec: &SimSpec,
    policy: &ControlPolicy,
    init: &InitialState,
) -> Result<PathEnsemble> {
    run(sys, Dynamics::True, spec, policy, init)
}

/// Ensemble of the fundamental solution, coefficients frozen at each path's
/// initial state. Shares noise with [`simulate`] for equal seeds.
pub fn simulate_fundamental(
    sys: &System,
    spec: &SimSpec,
    policy: &ControlPolicy,
    init: &InitialState,
) -> Result<PathEnsemble> {
    run(sys, Dynamics::Fundamental, spec, policy, init)
}

/// Statistic computed by [`ensemble_stats`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatKind {
    /// Mean over paths of `sup_{r ≤ s} ‖Δ(r)‖²_{H⁻¹×H⁻¹}`.
    SupHminus1,
    /// Mean over paths of `∫_t^s ‖Δ(r)‖²_{L²×L²} dr` (left-point rule on the stored grid).
    IntegralL2,
    /// `sup_{r ≤ s} ‖mean_p Π_j Δx(r)‖²_{H⁻¹} + ‖mean_p Π_{j'} Δy(r)‖²_{H⁻¹}`.
    ProjectedConditional { j: usize, j_prime: usize },
}

/// Reference for a comparison: another ensemble or a fixed state.
pub enum Reference<'a> {
    Ensemble(&'a PathEnsemble),
    Initial(&'a StatePair),
}

/// A statistic per stored time.
#[derive(Debug, Clone, PartialEq)]
pub struct StatSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Monte-Carlo statistics of the difference between `a` and a reference.
pub fn ensemble_stats(a: &PathEnsemble, b: Reference<'_>, kind: StatKind) -> Result<StatSeries> {
    if let Reference::Ensemble(b) = &b {
        if a.seed != b.seed {
            return Err(Error::Comparison(format!("seeds differ: {} vs {}", a.seed, b.seed)));
        }
        if a.t0 != b.t0 || a.h != b.h || a.stored_steps != b.stored_steps {
            return Err(Error::Comparison("time grids differ".into()));
        }
        if a.n_paths() != b.n_paths() {
            return Err(Error::Comparison("path counts differ".into()));
        }
        if !a.domains.x.same_domain(&b.domains.x) || !a.domains.y.same_domain(&b.domains.y) {
            return Err(Error::Comparison("domains differ".into()));
        }
    }
    if let Reference::Initial(s) = &b {
        if !a.domains.x.same_domain(s.x.basis()) || !a.domains.y.same_domain(s.y.basis()) {
            return Err(Error::Comparison("reference state on other domains".into()));
        }
    }
    let bx = &a.domains.x;
    let by = &a.domains.y;
    let ns = a.n_stored();
    let np = a.n_paths();
    let refx = |p: usize, i: usize| -> &[f64] {
        match &b {
            Reference::Ensemble(e) => e.x_at(p, i),
            Reference::Initial(s) => s.x.coeffs(),
        }
    };
    let refy = |p: usize, i: usize| -> &[f64] {
        match &b {
            Reference::Ensemble(e) => e.y_at(p, i),
            Reference::Initial(s) => s.y.coeffs(),
        }
    };
    let mut values = vec![0.0; ns];
    match kind {
        StatKind::SupHminus1 | StatKind::IntegralL2 => {
            for p in 0..np {
                let mut acc: f64 = 0.0;
                for i in 0..ns {
                    match kind {
                        StatKind::SupHminus1 => {
                            let d = hminus1_dist_sq_raw(bx, a.x_at(p, i), refx(p, i))
                                + hminus1_dist_sq_raw(by, a.y_at(p, i), refy(p, i));
                            acc = acc.max(d);
                        }
                        _ => {
                            if i > 0 {
                                let dt = (a.stored_steps[i] - a.stored_steps[i - 1]) as f64 * a.h;
                                let d = l2_dist_sq(a.x_at(p, i - 1), refx(p, i - 1))
                                    + l2_dist_sq(a.y_at(p, i - 1), refy(p, i - 1));
                                acc += dt * d;
                            }
                        }
                    }
                    values[i] += acc;
                }
            }
            values.iter_mut().for_each(|v| *v /= np as f64);
        }
        StatKind::ProjectedConditional { j, j_prime } => {
            if j == 0 || j > bx.n_modes() {
                return Err(Error::Index {
                    index: j,
                    max: bx.n_modes(),
                });
            }
            if j_prime == 0 || j_prime > by.n_modes() {
                return Err(Error::Index {
                    index: j_prime,
                    max: by.n_modes(),
                });
            }
            let mut sup: f64 = 0.0;
            for i in 0..ns {
                let mut mx = vec![0.0; j];
                let mut my = vec![0.0; j_prime];
                for p in 0..np {
                    for (k, m) in mx.iter_mut().enumerate() {
                        *m += a.x_at(p, i)[k] - refx(p, i)[k];
                    }
                    for (k, m) in my.iter_mut().enumerate() {
                        *m += a.y_at(p, i)[k] - refy(p, i)[k];
                    }
                }
                let inv = 1.0 / np as f64;
                mx.iter_mut().chain(my.iter_mut()).for_each(|v| *v *= inv);
                let v = bx.projected_hminus1_norm_sq(&mx, j) + by.projected_hminus1_norm_sq(&my, j_prime);
                sup = sup.max(v);
                values[i] = sup;
            }
        }
    }
    Ok(StatSeries {
        times: a.times(),
        values,
    })
}

fn l2_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Window statistics of one coupled run, evaluated at several window
/// lengths (in steps) without storing trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    pub windows: Vec<usize>,
    pub h: f64,
    /// `E sup_{r ≤ w} ‖𝕏(r) - ξ‖² + ‖𝕐(r) - η‖²`.
    pub fundamental_vs_initial: Vec<f64>,
    /// `E sup_{r ≤ w} ‖𝕏(r) - X(r)‖² + ‖𝕐(r) - Y(r)‖²`.
    pub fundamental_vs_true: Vec<f64>,
    /// `sup_{r ≤ w} ‖mean Π_j(𝕏 - X)‖² + ‖mean Π_{j'}(𝕐 - Y)‖²`.
    pub projected_conditional: Vec<f64>,
    /// Standard errors of the first two means.
    pub stderr_initial: Vec<f64>,
    pub stderr_true: Vec<f64>,
}

impl WindowStats {
    pub fn window_lengths(&self) -> Vec<f64> {
        self.windows.iter().map(|&w| w as f64 * self.h).collect()
    }
}

/// Runs the true and fundamental solutions from a deterministic state on
/// common noise up to the longest window and reports the three rate
/// statistics for every window length.
#[allow(clippy::too_many_arguments)]
pub fn coupled_window_stats(
    sys: &System,
    t0: f64,
    init: &StatePair,
    control: usize,
    h: f64,
    windows: &[usize],
    paths: usize,
    seed: u64,
    j: usize,
    j_prime: usize,
) -> Result<WindowStats> {
    sys.check_step(h)?;
    sys.check_state(init)?;
    if windows.is_empty() || windows.contains(&0) {
        return Err(Error::Config("window lengths must be positive".into()));
    }
    if paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    ControlPolicy::constant(control).check(&sys.controls)?;
    let n1 = sys.domains.x.n_modes();
    let n2 = sys.domains.y.n_modes();
    if j == 0 || j > n1 {
        return Err(Error::Index { index: j, max: n1 });
    }
    if j_prime == 0 || j_prime > n2 {
        return Err(Error::Index {
            index: j_prime,
            max: n2,
        });
    }
    let n_max = *windows.iter().max().expect("non-empty");
    let start = abs_step(t0, h)?;
    let bx = &sys.domains.x;
    let by = &sys.domains.y;
    let width = j + j_prime;
    // per path: running sups at every step, projected differences at every step
    let per_path = map_paths(paths, |p| {
        let mut fund = PathStepper::new(sys, Dynamics::Fundamental, h, seed, p, start, init, None);
        let mut tru = PathStepper::new(sys, Dynamics::True, h, seed, p, start, init, None);
        let mut sup_init: f64 = 0.0;
        let mut sup_true: f64 = 0.0;
        let mut sups = Vec::with_capacity(2 * n_max);
        let mut proj = Vec::with_capacity(width * n_max);
        for _ in 0..n_max {
            fund.step(control)?;
            tru.step(control)?;
            let di = hminus1_dist_sq_raw(bx, fund.x(), init.x.coeffs())
                + hminus1_dist_sq_raw(by, fund.y(), init.y.coeffs());
            let dt = hminus1_dist_sq_raw(bx, fund.x(), tru.x())
                + hminus1_dist_sq_raw(by, fund.y(), tru.y());
            sup_init = sup_init.max(di);
            sup_true = sup_true.max(dt);
            sups.push(sup_init);
            sups.push(sup_true);
            for k in 0..j {
                proj.push(fund.x()[k] - tru.x()[k]);
            }
            for k in 0..j_prime {
                proj.push(fund.y()[k] - tru.y()[k]);
            }
        }
        Ok((sups, proj))
    })?;
    let np = paths as f64;
    let mut sum = vec![0.0; 2 * n_max];
    let mut sum_sq = vec![0.0; 2 * n_max];
    let mut mean_proj = vec![0.0; width * n_max];
    for (sups, proj) in &per_path {
        for (i, v) in sups.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
        for (i, v) in proj.iter().enumerate() {
            mean_proj[i] += v;
        }
    }
    mean_proj.iter_mut().for_each(|v| *v /= np);
    let mut cond_sup = vec![0.0; n_max];
    let mut running: f64 = 0.0;
    for n in 0..n_max {
        let row = &mean_proj[n * width..(n + 1) * width];
        let v = bx.projected_hminus1_norm_sq(&row[..j], j) + by.projected_hminus1_norm_sq(&row[j..], j_prime);
        running = running.max(v);
        cond_sup[n] = running;
    }
    let stat = |i: usize| {
        let mean = sum[i] / np;
        let var = (sum_sq[i] / np - mean * mean).max(0.0);
        (mean, (var / np).sqrt())
    };
    let mut out = WindowStats {
        windows: windows.to_vec(),
        h,
        fundamental_vs_initial: Vec::new(),
        fundamental_vs_true: Vec::new(),
        projected_conditional: Vec::new(),
        stderr_initial: Vec::new(),
        stderr_true: Vec::new(),
    };
    for &w in windows {
        let (m0, s0) = stat(2 * (w - 1));
        let (m1, s1) = stat(2 * (w - 1) + 1);
        out.fundamental_vs_initial.push(m0);
        out.stderr_initial.push(s0);
        out.fundamental_vs_true.push(m1);
        out.stderr_true.push(s1);
        out.projected_conditional.push(cond_sup[w - 1]);
    }
    Ok(out)
}

/// Ordinary least squares on `(log h, log stat)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// At least four points spanning two decades.
    pub well_conditioned: bool,
}

pub fn fit_rate(hs: &[f64], stats: &[f64]) -> Result<RateFit> {
    if hs.len() != stats.len() {
        return Err(Error::RateFit("h and statistic lengths differ".into()));
    }
    if hs.len() < 2 {
        return Err(Error::RateFit("need at least two points".into()));
    }
    if let Some(v) = hs.iter().chain(stats).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::RateFit(format!("non-positive or non-finite value {v}")));
    }
    let lx: Vec<f64> = hs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = stats.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::RateFit("all h values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    let (lo, hi) = hs
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    Ok(RateFit {
        slope,
        intercept,
        r2,
        well_conditioned: hs.len() >= 4 && hi / lo >= 100.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{DriftTerm, NoiseTerm};
    use crate::spectral::{build_basis, DomainSpec};
    use std::f64::consts::PI;

    fn domains(n1: usize, n2: usize) -> DomainPair {
        DomainPair::new(
            build_basis(DomainSpec::with_modes(PI, n1).unwrap()).unwrap(),
            build_basis(DomainSpec::with_modes(PI, n2).unwrap()).unwrap(),
        )
    }

    fn plain(d: &DomainPair, beta: Nonlinearity, f1: Vec<DriftTerm>, s1: Vec<NoiseTerm>, m: usize) -> System {
        let ns = NoiseSpec { m };
        System::new(
            d.clone(),
            beta,
            Nonlinearity::zero(),
            DriftCoeff::new(d.clone(), Component::X, f1).unwrap(),
            DriftCoeff::zero(d.clone(), Component::Y),
            NoiseCoeff::new(d.clone(), Component::X, ns, s1).unwrap(),
            NoiseCoeff::zero(d.clone(), Component::Y, ns),
            ControlSet::trivial(),
        )
        .unwrap()
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let d = domains(3, 2);
        let sys = plain(&d, Nonlinearity::zero(), vec![], vec![], 2);
        let s0 = sys.state(&[1.0, -0.5, 0.25], &[0.3, 0.1]);
        let e = simulate(&sys, &SimSpec::new(0.0, 1.0, 0.01, 3, 1), &ControlPolicy::constant(0), &s0.clone().into()).unwrap();
        for p in 0..3 {
            assert_eq!(e.final_state(p), s0);
        }
    }

    #[test]
    fn heat_mode_decays_geometrically() {
        let d = domains(4, 1);
        let sys = plain(&d, Nonlinearity::linear(1.0).unwrap(), vec![], vec![], 0);
        let s0 = sys.state(&[1.0], &[]);
        let h = 1.0 / 64.0;
        let e = simulate(&sys, &SimSpec::new(0.0, 1.0, h, 1, 0), &ControlPolicy::constant(0), &s0.into()).unwrap();
        for (i, n) in e.stored_steps.iter().enumerate() {
            let c = e.x_at(0, i)[0];
            assert!((c - (1.0 - h).powi(*n as i32)).abs() < 1e-14);
            assert!((c - (-(*n as f64) * h).exp()).abs() < h);
        }
    }

    #[test]
    fn constant_drift_is_exact() {
        let d = domains(3, 1);
        let sys = plain(&d, Nonlinearity::zero(), vec![DriftTerm::Constant { coeffs: vec![0.5] }], vec![], 0);
        let s0 = sys.state(&[2.0], &[]);
        let e = simulate(&sys, &SimSpec::new(0.0, 2.0, 0.125, 1, 0), &ControlPolicy::constant(0), &s0.into()).unwrap();
        for (i, n) in e.stored_steps.iter().enumerate() {
            assert!((e.x_at(0, i)[0] - (2.0 + 0.5 * 0.125 * *n as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn stability_guard() {
        let d = domains(8, 1);
        let sys = plain(&d, Nonlinearity::linear(1.0).unwrap(), vec![], vec![], 0);
        assert!((sys.h_max() - 0.5 / 64.0).abs() < 1e-15);
        let s0 = sys.zero_state();
        let r = simulate(&sys, &SimSpec::new(0.0, 1.0, 0.01, 1, 0), &ControlPolicy::constant(0), &s0.into());
        assert!(matches!(r, Err(Error::Stability { .. })));
    }

    #[test]
    fn divergence_names_the_step() {
        let d = domains(2, 1);
        let sys = plain(
            &d,
            Nonlinearity::zero(),
            vec![DriftTerm::Linear { source: Component::X, gain: 2000.0, modes: None }],
            vec![],
            0,
        );
        let s0 = sys.state(&[1.0], &[]);
        let r = simulate(&sys, &SimSpec::new(0.0, 100.0, 0.5, 1, 0), &ControlPolicy::constant(0), &s0.into());
        assert!(matches!(r, Err(Error::Divergence { path: 0, step: _ })));
    }

    #[test]
    fn fundamental_equals_true_for_state_free_coefficients() {
        let d = domains(4, 2);
        let sys = plain(
            &d,
            Nonlinearity::stefan_eps(0.5, 1.0).unwrap(),
            vec![DriftTerm::Constant { coeffs: vec![0.2, -0.1] }],
            vec![NoiseTerm::Additive { first_mode: 1, first_column: 0, gains: vec![0.3, 0.4] }],
            2,
        );
        let s0 = sys.state(&[0.5, 0.2], &[0.1]);
        let spec = SimSpec::new(0.0, 0.5, 1.0 / 256.0, 4, 9).record_noise(true);
        let a = simulate(&sys, &spec, &ControlPolicy::constant(0), &s0.clone().into()).unwrap();
        let b = simulate_fundamental(&sys, &spec, &ControlPolicy::constant(0), &s0.into()).unwrap();
        for p in 0..4 {
            assert_eq!(a.paths[p], b.paths[p]);
        }
    }

    #[test]
    fn fundamental_gap_is_quadratic_for_linear_ode() {
        let d = domains(1, 1);
        let sys = plain(
            &d,
            Nonlinearity::zero(),
            vec![DriftTerm::Linear { source: Component::X, gain: -1.0, modes: None }],
            vec![],
            0,
        );
        let s0 = sys.state(&[1.0], &[]);
        for (w, h) in [(0.1, 1e-4), (0.05, 1e-4)] {
            let spec = SimSpec::new(0.0, w, h, 1, 0);
            let a = simulate(&sys, &spec, &ControlPolicy::constant(0), &s0.clone().into()).unwrap();
            let b = simulate_fundamental(&sys, &spec, &ControlPolicy::constant(0), &s0.clone().into()).unwrap();
            let gap = (a.final_state(0).x.coeffs()[0] - b.final_state(0).x.coeffs()[0]).abs();
            // oracle: 1 - w - e^{-w} ≈ w²/2
            let oracle = ((-w).exp() - (1.0 - w)).abs();
            assert!((gap - oracle).abs() < 5.0 * h * w, "{gap} {oracle}");
        }
    }

    #[test]
    fn identical_ensembles_have_zero_stats() {
        let d = domains(3, 2);
        let sys = plain(&d, Nonlinearity::linear(1.0).unwrap(), vec![], vec![NoiseTerm::Additive { first_mode: 1, first_column: 0, gains: vec![1.0] }], 1);
        let s0 = sys.state(&[1.0], &[]);
        let spec = SimSpec::new(0.0, 0.25, 1.0 / 64.0, 5, 3);
        let a = simulate(&sys, &spec, &ControlPolicy::constant(0), &s0.clone().into()).unwrap();
        let b = simulate(&sys, &spec, &ControlPolicy::constant(0), &s0.into()).unwrap();
        for kind in [StatKind::SupHminus1, StatKind::IntegralL2, StatKind::ProjectedConditional { j: 2, j_prime: 1 }] {
            let s = ensemble_stats(&a, Reference::Ensemble(&b), kind).unwrap();
            assert!(s.values.iter().all(|v| *v == 0.0));
        }
        let mut c = b.clone();
        c.seed = 4;
        assert!(matches!(ensemble_stats(&a, Reference::Ensemble(&c), StatKind::SupHminus1), Err(Error::Comparison(_))));
    }

    #[test]
    fn fit_rate_examples() {
        let hs = [1.0, 0.5, 0.25, 0.125];
        let f = fit_rate(&hs, &hs).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let cubes: Vec<f64> = hs.iter().map(|h| h * h * h).collect();
        assert!((fit_rate(&hs, &cubes).unwrap().slope - 3.0).abs() < 1e-12);
        assert!(matches!(fit_rate(&hs, &[1.0, 0.0, 1.0, 1.0]), Err(Error::RateFit(_))));
    }

    #[test]
    fn policy_switches() {
        let p = ControlPolicy::switching(vec![(0.0, 1), (0.5, 0), (0.75, 2)]).unwrap();
        assert_eq!(p.index_at(0.0, 0.25), 1);
        assert_eq!(p.index_at(0.25, 0.25), 1);
        assert_eq!(p.index_at(0.5, 0.25), 0);
        assert_eq!(p.index_at(0.8, 0.25), 2);
        assert!(ControlPolicy::switching(vec![(0.5, 0), (0.5, 1)]).is_err());
    }
}
