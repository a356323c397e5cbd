//! Global ε-approximate constrained solutions built by time-marching local
//! corrected fundamental steps, their validation, and the comparison with
//! the true solution.
//!
//! On a segment `[s₀, s₀ + δ)` every path follows the fundamental solution
//! `𝕏` anchored at its corrected state `𝒳(s₀)`. The endpoint is pulled back
//! into `K` by a correction `p = δ a + b̄ (W(s₀+δ) - W(s₀))` and the corrected
//! path is defined on the grid by
//! `𝒳_n = 𝕏_n + (n - n₀) h a + b̄ (W_n - W_{n₀})`.
//! It satisfies the perturbed equation with `ψ = b̄` and
//! `φ_n = a + Δβ(𝕏_n) - Δβ(𝒳_n)`.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::report::ValidationReport;
use crate::rng::{derive_seed, NoiseStream};
use crate::sde::{
    abs_step, map_paths, steps_between, ControlPolicy, Dynamics, PathEnsemble, PathStepper,
    PathTrajectory, System,
};
use crate::spectral::StatePair;
use crate::viability::ConstraintSet;

/// Tuning of [`build_global`].
#[derive(Debug, Clone, PartialEq)]
pub struct ApproxOptions {
    /// Longest segment as a fraction of `ε`.
    pub segment_fraction: f64,
    /// Apply corrections; `false` builds the plain concatenation of
    /// fundamental pieces.
    pub correct: bool,
    /// Paths of the independent pilot ensemble used to fit `b̄`.
    pub pilot_paths: usize,
}

impl Default for ApproxOptions {
    fn default() -> Self {
        ApproxOptions {
            segment_fraction: 0.5,
            correct: true,
            pilot_paths: 64,
        }
    }
}

/// Per-path correction coefficients of one segment, row-major by path.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    /// `P × D` drift corrections (L² coefficients, `D = N₁ + N₂`).
    pub a: Vec<f64>,
    /// `P × D × m` noise corrections (H⁻¹ coordinates, like `S`).
    pub b: Vec<f64>,
}

/// One time segment `[start, start + len)` in step offsets from `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub control: usize,
    pub correction: Option<Correction>,
    /// `mean_p ∫ ‖φ‖²_{H⁻¹}` over the segment.
    pub phi_energy: f64,
    /// `mean_p ∫ ‖ψ‖²_{HS}` over the segment.
    pub psi_energy: f64,
}

/// A (possibly partial) ε-approximate solution.
#[derive(Clone)]
pub struct EpsApproxSolution {
    pub sys: Arc<System>,
    pub t: f64,
    pub t_bar: f64,
    pub eps: f64,
    pub h: f64,
    pub seed: u64,
    pub segments: Vec<Segment>,
    /// `(𝒳, 𝒴)` at every grid step.
    pub traj: PathEnsemble,
    /// Why construction stopped before the requested horizon.
    pub diagnostic: Option<Error>,
}

impl std::fmt::Debug for EpsApproxSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EpsApproxSolution")
            .field("t", &self.t)
            .field("t_bar", &self.t_bar)
            .field("eps", &self.eps)
            .field("segments", &self.segments.len())
            .field("diagnostic", &self.diagnostic)
            .finish()
    }
}

struct Layout {
    n1: usize,
    d: usize,
    m: usize,
    sq: Vec<f64>,
}

impl Layout {
    fn new(sys: &System) -> Self {
        let dm = sys.domains();
        let n1 = dm.x.n_modes();
        let mut sq = dm.x.sqrt_eigenvalues().to_vec();
        sq.extend_from_slice(dm.y.sqrt_eigenvalues());
        Layout {
            n1,
            d: sq.len(),
            m: sys.m(),
            sq,
        }
    }

    fn hnorm_sq(&self, v: &[f64]) -> f64 {
        v.iter().zip(&self.sq).map(|(c, s)| (c / s) * (c / s)).sum()
    }
}

/// `out = X + kh·a + sqrt(λ) ⊙ (b̄ w)`, the corrected state.
fn corrected_into(lay: &Layout, x: &[f64], kh: f64, a: Option<&[f64]>, b: Option<&[f64]>, w: &[f64], out: &mut [f64]) {
    let m = lay.m;
    for i in 0..lay.d {
        let mut v = x[i];
        if let Some(a) = a {
            v += kh * a[i];
        }
        if let Some(b) = b {
            let mut s = 0.0;
            for q in 0..m {
                s += b[i * m + q] * w[q];
            }
            v += lay.sq[i] * s;
        }
        out[i] = v;
    }
}

/// Data of one path over a candidate segment.
struct PieceRun {
    // (n + 1) × D fundamental states, (n + 1) × m cumulative increments
    states: Vec<f64>,
    wcum: Vec<f64>,
}

fn run_piece(sys: &System, lay: &Layout, h: f64, seed: u64, stream: usize, abs0: u64, start: &[f64], n: usize, ui: usize) -> Result<PieceRun> {
    let s0 = sys.state(&start[..lay.n1], &start[lay.n1..]);
    let mut st = PathStepper::new(sys, Dynamics::Fundamental, h, seed, stream, abs0, &s0, None);
    let mut states = Vec::with_capacity((n + 1) * lay.d);
    let mut wcum = vec![0.0; (n + 1) * lay.m];
    states.extend_from_slice(start);
    for k in 0..n {
        st.step(ui)?;
        states.extend_from_slice(st.x());
        states.extend_from_slice(st.y());
        for q in 0..lay.m {
            wcum[(k + 1) * lay.m + q] = wcum[k * lay.m + q] + st.last_increment()[q];
        }
    }
    Ok(PieceRun { states, wcum })
}

fn project_combined(sys: &System, k: &dyn ConstraintSet, lay: &Layout, v: &[f64], out: &mut [f64]) {
    let dm = sys.domains();
    let (px, py) = out.split_at_mut(lay.n1);
    k.project_into(&dm.x, &dm.y, &v[..lay.n1], &v[lay.n1..], px, py);
}

fn contains_combined(sys: &System, k: &dyn ConstraintSet, lay: &Layout, v: &[f64]) -> bool {
    let dm = sys.domains();
    k.contains_raw(&dm.x, &dm.y, &v[..lay.n1], &v[lay.n1..])
}

/// Least-squares fit `P ≈ c₀ + B ΔW` over rows; returns `(c₀, b̄)` with `b̄`
/// in H⁻¹ coordinates (`D × m`).
fn fit_affine(lay: &Layout, dw: &[Vec<f64>], p: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let rows = dw.len();
    let m = lay.m;
    let design = DMatrix::from_fn(rows, m + 1, |r, c| if c == 0 { 1.0 } else { dw[r][c - 1] });
    let target = DMatrix::from_fn(rows, lay.d, |r, c| p[r][c]);
    let svd = design.svd(true, true);
    let coef = svd
        .solve(&target, 1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(m + 1, lay.d));
    let c0 = (0..lay.d).map(|i| coef[(0, i)]).collect();
    let mut b = vec![0.0; lay.d * m];
    for i in 0..lay.d {
        for q in 0..m {
            b[i * m + q] = coef[(q + 1, i)] / lay.sq[i];
        }
    }
    (c0, b)
}

struct Candidate {
    cost: f64,
    correction: Option<Correction>,
    phi_energy: f64,
    psi_energy: f64,
    /// per path, n × D corrected states for steps 1..=n
    corrected: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn evaluate_candidate(
    sys: &System,
    k: &dyn ConstraintSet,
    lay: &Layout,
    starts: &[Vec<f64>],
    h: f64,
    seed: u64,
    abs0: u64,
    n: usize,
    ui: usize,
    eps: f64,
    opts: &ApproxOptions,
) -> Result<std::result::Result<Candidate, f64>> {
    let paths = starts.len();
    let runs = map_paths(paths, |p| run_piece(sys, lay, h, seed, p, abs0, &starts[p], n, ui))?;
    let delta = n as f64 * h;
    let d = lay.d;
    let m = lay.m;
    // required corrections θ - E
    let pcorr: Vec<Vec<f64>> = runs
        .par_iter()
        .map(|r| {
            let end = &r.states[n * d..(n + 1) * d];
            let mut th = vec![0.0; d];
            project_combined(sys, k, lay, end, &mut th);
            th.iter().zip(end).map(|(a, b)| a - b).collect()
        })
        .collect();
    let needs = opts.correct && pcorr.iter().flatten().any(|v| *v != 0.0);
    let correction = if needs {
        let mut a = vec![0.0; paths * d];
        let mut b = vec![0.0; paths * d * m];
        let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        for (p, s) in starts.iter().enumerate() {
            groups.entry(s.iter().map(|v| v.to_bits()).collect()).or_default().push(p);
        }
        let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
        groups.sort_by_key(|g| g[0]);
        for g in &groups {
            let p0 = g[0];
            // the fundamental freezes σ at the start, so a zero σ there
            // makes the endpoint independent of the noise
            let deterministic = m == 0 || {
                let s = &starts[p0];
                let u = sys.controls().get(ui);
                let mut sx = vec![0.0; lay.n1 * m];
                let mut sy = vec![0.0; (d - lay.n1) * m];
                sys.noise_coeff(crate::Component::X).eval_into(&s[..lay.n1], &s[lay.n1..], u, &mut sx);
                sys.noise_coeff(crate::Component::Y).eval_into(&s[..lay.n1], &s[lay.n1..], u, &mut sy);
                sx.iter().chain(&sy).all(|v| *v == 0.0)
            };
            if deterministic {
                for &p in g {
                    for i in 0..d {
                        a[p * d + i] = pcorr[p][i] / delta;
                    }
                }
                continue;
            }
            let (c0, bb) = if g.len() >= 4 * (m + 1) {
                let dw: Vec<Vec<f64>> = g.iter().map(|&p| runs[p].wcum[n * m..].to_vec()).collect();
                let pp: Vec<Vec<f64>> = g.iter().map(|&p| pcorr[p].clone()).collect();
                fit_affine(lay, &dw, &pp)
            } else {
                let q = opts.pilot_paths.max(4 * (m + 1));
                let pseed = derive_seed(seed, abs0.wrapping_mul(1_000_003) ^ p0 as u64);
                let pilot = map_paths(q, |i| run_piece(sys, lay, h, pseed, i, abs0, &starts[p0], n, ui))?;
                let dw: Vec<Vec<f64>> = pilot.iter().map(|r| r.wcum[n * m..].to_vec()).collect();
                let pp: Vec<Vec<f64>> = pilot
                    .iter()
                    .map(|r| {
                        let end = &r.states[n * d..];
                        let mut th = vec![0.0; d];
                        project_combined(sys, k, lay, end, &mut th);
                        th.iter().zip(end).map(|(a, b)| a - b).collect()
                    })
                    .collect();
                fit_affine(lay, &dw, &pp)
            };
            for &p in g {
                for i in 0..d {
                    a[p * d + i] = c0[i] / delta;
                }
                b[p * d * m..(p + 1) * d * m].copy_from_slice(&bb);
            }
        }
        Some(Correction { a, b })
    } else {
        None
    };

    let dm = sys.domains();
    let beta_x = sys.beta(crate::Component::X);
    let beta_y = sys.beta(crate::Component::Y);
    let nonlinear = !beta_x.is_zero() || !beta_y.is_zero();
    // corrected states, φ energy, ψ energy, excursion per step, endpoint membership
    let per_path: Vec<(Vec<f64>, f64, f64, Vec<f64>, bool)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let r = &runs[p];
            let a = correction.as_ref().map(|c| &c.a[p * d..(p + 1) * d]);
            let b = correction.as_ref().map(|c| &c.b[p * d * m..(p + 1) * d * m]);
            let mut out = vec![0.0; n * d];
            let mut cur = vec![0.0; d];
            let mut phi_e = 0.0;
            let mut gx = vec![0.0; dm.x.n_grid()];
            let mut gy = vec![0.0; dm.y.n_grid()];
            let mut db1 = vec![0.0; d];
            let mut db2 = vec![0.0; d];
            let mut exc = Vec::with_capacity(n);
            let start = &starts[p];
            for kk in 0..n {
                let xk = &r.states[kk * d..(kk + 1) * d];
                corrected_into(lay, xk, kk as f64 * h, a, b, &r.wcum[kk * m..(kk + 1) * m], &mut cur);
                // φ_k = a + Δβ(𝕏_k) - Δβ(𝒳_k)
                let mut phi = a.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; d]);
                if nonlinear && (a.is_some() || b.is_some()) {
                    let n1 = lay.n1;
                    beta_x.delta_beta_into(&dm.x, &xk[..n1], &mut gx, &mut db1[..n1]);
                    beta_y.delta_beta_into(&dm.y, &xk[n1..], &mut gy, &mut db1[n1..]);
                    beta_x.delta_beta_into(&dm.x, &cur[..n1], &mut gx, &mut db2[..n1]);
                    beta_y.delta_beta_into(&dm.y, &cur[n1..], &mut gy, &mut db2[n1..]);
                    for i in 0..d {
                        phi[i] += db1[i] - db2[i];
                    }
                }
                phi_e += h * lay.hnorm_sq(&phi);
                let xk1 = &r.states[(kk + 1) * d..(kk + 2) * d];
                let slot = &mut out[kk * d..(kk + 1) * d];
                corrected_into(lay, xk1, (kk + 1) as f64 * h, a, b, &r.wcum[(kk + 1) * m..(kk + 2) * m], slot);
                let e: Vec<f64> = slot.iter().zip(start).map(|(x, y)| x - y).collect();
                exc.push(lay.hnorm_sq(&e));
            }
            let psi_e = b.map_or(0.0, |b| n as f64 * h * b.iter().map(|v| v * v).sum::<f64>());
            let inside = contains_combined(sys, k, lay, &out[(n - 1) * d..]);
            (out, phi_e, psi_e, exc, inside)
        })
        .collect();

    let np = paths as f64;
    let phi_energy = per_path.iter().map(|v| v.1).sum::<f64>() / np;
    let psi_energy = per_path.iter().map(|v| v.2).sum::<f64>() / np;
    let mut excursion: f64 = 0.0;
    for kk in 0..n {
        let e = per_path.iter().map(|v| v.3[kk]).sum::<f64>() / np;
        excursion = excursion.max(e);
    }
    let all_inside = per_path.iter().all(|v| v.4);
    let budget = eps * delta;
    let cost = (phi_energy + psi_energy) / delta;
    if !all_inside || phi_energy > budget || psi_energy > budget || excursion > eps {
        let worst = if all_inside { cost.max(excursion) } else { f64::INFINITY };
        return Ok(Err(worst));
    }
    Ok(Ok(Candidate {
        cost,
        correction,
        phi_energy,
        psi_energy,
        corrected: per_path.into_iter().map(|v| v.0).collect(),
    }))
}

/// Marches corrected fundamental segments from `t` to `horizon`. Starts are
/// per path; on a tangency failure the partial solution is returned with the
/// error in `diagnostic`.
#[allow(clippy::too_many_arguments)]
fn build_from(
    sys: Arc<System>,
    t: f64,
    starts: Vec<StatePair>,
    eps: f64,
    k: &dyn ConstraintSet,
    horizon: f64,
    h: f64,
    seed: u64,
    opts: &ApproxOptions,
) -> Result<EpsApproxSolution> {
    sys.check_step(h)?;
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("eps must be positive, got {eps}")));
    }
    if !(opts.segment_fraction > 0.0 && opts.segment_fraction <= 1.0) {
        return Err(Error::Config("segment fraction must lie in (0, 1]".into()));
    }
    if starts.is_empty() {
        return Err(Error::Config("need at least one path".into()));
    }
    for s in &starts {
        sys.check_state(s)?;
        if !k.contains(s) {
            return Err(Error::Precondition(format!(
                "initial state lies outside {}",
                k.describe()
            )));
        }
    }
    let n_total = steps_between(t, horizon, h)?;
    let abs_t = abs_step(t, h)?;
    let lay = Layout::new(&sys);
    let d = lay.d;
    let paths = starts.len();
    let mut cur: Vec<Vec<f64>> = starts
        .iter()
        .map(|s| {
            let mut v = s.x.coeffs().to_vec();
            v.extend_from_slice(s.y.coeffs());
            v
        })
        .collect();
    let mut traj: Vec<Vec<f64>> = cur.iter().map(|v| {
        let mut t = Vec::with_capacity((n_total + 1) * d);
        t.extend_from_slice(v);
        t
    }).collect();
    let n_max = ((opts.segment_fraction * eps / h).floor() as usize).max(1);
    let mut segments = Vec::new();
    let mut n0 = 0usize;
    let mut diagnostic = None;
    while n0 < n_total {
        let mut n = n_max.min(n_total - n0);
        let chosen = loop {
            let mut best: Option<(usize, Candidate)> = None;
            let mut best_fail = f64::INFINITY;
            for ui in 0..sys.controls().len() {
                match evaluate_candidate(&sys, k, &lay, &cur, h, seed, abs_t + n0 as u64, n, ui, eps, opts)? {
                    Ok(c) => {
                        if best.as_ref().is_none_or(|b| c.cost < b.1.cost) {
                            best = Some((ui, c));
                        }
                    }
                    Err(w) => best_fail = best_fail.min(w),
                }
            }
            if let Some(b) = best {
                break Some(b);
            }
            if n == 1 {
                diagnostic = Some(Error::TangencyFailure {
                    t: t + n0 as f64 * h,
                    bracket: best_fail,
                    budget: eps,
                });
                break None;
            }
            n = (n / 2).max(1);
        };
        let Some((ui, cand)) = chosen else { break };
        for (p, states) in cand.corrected.iter().enumerate() {
            traj[p].extend_from_slice(states);
            cur[p].copy_from_slice(&states[(n - 1) * d..]);
        }
        segments.push(Segment {
            start: n0,
            len: n,
            control: ui,
            correction: cand.correction,
            phi_energy: cand.phi_energy,
            psi_energy: cand.psi_energy,
        });
        n0 += n;
    }
    let n1 = lay.n1;
    let ens_paths = traj
        .into_iter()
        .map(|v| {
            let mut x = Vec::with_capacity((n0 + 1) * n1);
            let mut y = Vec::with_capacity((n0 + 1) * (d - n1));
            for row in v.chunks(d) {
                x.extend_from_slice(&row[..n1]);
                y.extend_from_slice(&row[n1..]);
            }
            PathTrajectory { x, y, noise: None }
        })
        .collect();
    let traj = PathEnsemble {
        dynamics: Dynamics::Fundamental,
        t0: t,
        h,
        seed,
        n_steps: n0,
        stored_steps: (0..=n0).collect(),
        domains: sys.domains().clone(),
        m: lay.m,
        paths: ens_paths,
    };
    debug_assert_eq!(traj.n_paths(), paths);
    Ok(EpsApproxSolution {
        t,
        t_bar: t + n0 as f64 * h,
        eps,
        h,
        seed,
        segments,
        traj,
        diagnostic,
        sys,
    })
}

/// Builds a global ε-approximate solution from deterministic data on `[t, T]`.
#[allow(clippy::too_many_arguments)]
pub fn build_global(
    sys: Arc<System>,
    t: f64,
    init: &StatePair,
    eps: f64,
    k: &dyn ConstraintSet,
    horizon: f64,
    h: f64,
    paths: usize,
    seed: u64,
    opts: &ApproxOptions,
) -> Result<EpsApproxSolution> {
    if paths == 0 {
        return Err(Error::Config("need at least one path".into()));
    }
    build_from(sys, t, vec![init.clone(); paths], eps, k, horizon, h, seed, opts)
}

impl EpsApproxSolution {
    pub fn is_complete(&self) -> bool {
        self.diagnostic.is_none()
    }

    pub fn n_paths(&self) -> usize {
        self.traj.n_paths()
    }

    pub fn n_steps(&self) -> usize {
        self.traj.n_steps
    }

    /// Step offset of `τ(s_n)`: the start of the segment containing step `n`,
    /// and `n` itself at the final time.
    pub fn tau_step(&self, n: usize) -> usize {
        if n >= self.n_steps() {
            return n;
        }
        let i = self.segments.partition_point(|s| s.start <= n) - 1;
        self.segments[i].start
    }

    /// The common control as a piecewise-constant policy.
    pub fn policy(&self) -> ControlPolicy {
        if self.segments.is_empty() {
            return ControlPolicy::constant(0);
        }
        let mut sw: Vec<(f64, usize)> = Vec::new();
        for s in &self.segments {
            if sw.last().is_none_or(|l| l.1 != s.control) {
                sw.push((self.t + s.start as f64 * self.h, s.control));
            }
        }
        ControlPolicy::switching(sw).expect("segment starts increase")
    }

    fn combined(&self, p: usize, n: usize) -> Vec<f64> {
        let mut v = self.traj.x_at(p, n).to_vec();
        v.extend_from_slice(self.traj.y_at(p, n));
        v
    }

    /// Continues the solution to `horizon` from its final per-path states.
    pub fn extend(&self, k: &dyn ConstraintSet, horizon: f64, opts: &ApproxOptions) -> Result<EpsApproxSolution> {
        if !self.is_complete() {
            return Err(Error::Precondition("cannot extend a partial solution".into()));
        }
        let starts: Vec<StatePair> = (0..self.n_paths()).map(|p| self.traj.final_state(p)).collect();
        let tail = build_from(self.sys.clone(), self.t_bar, starts, self.eps, k, horizon, self.h, self.seed, opts)?;
        concatenate(self, &tail)
    }

    /// Writes the segment table:
    /// `segment,start_time,end_time,tau,control,phi_energy,psi_energy`.
    pub fn write_segments_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "segment,start_time,end_time,tau,control,phi_energy,psi_energy")?;
        for (i, s) in self.segments.iter().enumerate() {
            let a = self.t + s.start as f64 * self.h;
            let b = self.t + (s.start + s.len) as f64 * self.h;
            writeln!(w, "{i},{a},{b},{a},{},{},{}", s.control, s.phi_energy, s.psi_energy)?;
        }
        Ok(())
    }
}

/// Joins two solutions with matching seed, step, system and junction states.
pub fn concatenate(a: &EpsApproxSolution, b: &EpsApproxSolution) -> Result<EpsApproxSolution> {
    if !Arc::ptr_eq(&a.sys, &b.sys) || a.seed != b.seed || a.h != b.h || a.eps != b.eps {
        return Err(Error::Comparison("solutions differ in system, seed, step or eps".into()));
    }
    if (a.t_bar - b.t).abs() > 1e-9 * a.h || a.n_paths() != b.n_paths() {
        return Err(Error::Comparison("solutions do not meet".into()));
    }
    let na = a.n_steps();
    for p in 0..a.n_paths() {
        if a.combined(p, na) != b.combined(p, 0) {
            return Err(Error::Comparison(format!("junction state differs on path {p}")));
        }
    }
    let mut out = a.clone();
    for s in &b.segments {
        let mut s = s.clone();
        s.start += na;
        out.segments.push(s);
    }
    for (pa, pb) in out.traj.paths.iter_mut().zip(&b.traj.paths) {
        let n1 = a.traj.domains.x.n_modes();
        let n2 = a.traj.domains.y.n_modes();
        pa.x.extend_from_slice(&pb.x[n1..]);
        pa.y.extend_from_slice(&pb.y[n2..]);
    }
    out.traj.n_steps = na + b.n_steps();
    out.traj.stored_steps = (0..=out.traj.n_steps).collect();
    out.t_bar = b.t_bar;
    out.diagnostic = b.diagnostic.clone();
    Ok(out)
}

/// Relative tolerance of the discrete perturbed-equation residual.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Checks items 1–6 of the definition on the sampled paths.
pub fn validate(sol: &EpsApproxSolution, eps: f64, k: &dyn ConstraintSet) -> ValidationReport {
    let sys = &sol.sys;
    let lay = Layout::new(sys);
    let (d, m, n1) = (lay.d, lay.m, lay.n1);
    let h = sol.h;
    let n = sol.n_steps();
    let paths = sol.n_paths();
    let np = paths as f64;
    let span = sol.t_bar - sol.t;
    let mut rep = ValidationReport::new();

    // 1-2: τ non-decreasing, non-anticipating, at most ε-delayed
    let mut worst_delay: f64 = 0.0;
    let mut monotone = true;
    let mut anticipating = false;
    let mut prev = 0usize;
    for s in 0..=n {
        let ts = sol.tau_step(s);
        anticipating |= ts > s;
        monotone &= ts >= prev;
        prev = ts;
        worst_delay = worst_delay.max((s - ts.min(s)) as f64 * h);
    }
    rep.check_le("tau_delay", worst_delay, eps, "max s - tau(s)");
    rep.check_le(
        "tau_monotone_nonanticipating",
        if monotone && !anticipating { 0.0 } else { 1.0 },
        0.0,
        "tau non-decreasing and tau(s) <= s",
    );

    // 3: constraint at τ(s) and at T̄, per path
    let dm = sys.domains();
    let mut starts: Vec<usize> = sol.segments.iter().map(|s| s.start).collect();
    starts.push(n);
    let violations: usize = (0..paths)
        .into_par_iter()
        .map(|p| {
            starts
                .iter()
                .filter(|&&s| !k.contains_raw(&dm.x, &dm.y, sol.traj.x_at(p, s), sol.traj.y_at(p, s)))
                .count()
        })
        .sum();
    rep.check_le(
        "constraint_at_tau",
        violations as f64,
        0.0,
        format!("violations over {paths} paths x {} times (empirical a.s.)", starts.len()),
    );

    // 4-5: recompute φ, ψ from the stored corrections and check the
    // discrete perturbed equation along every path
    let beta_x = sys.beta(crate::Component::X);
    let beta_y = sys.beta(crate::Component::Y);
    let abs_t = abs_step(sol.t, h).unwrap_or(0);
    let per_path: Vec<(f64, f64, f64)> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let mut noise = NoiseStream::new(sol.seed, p as u64, m, h);
            noise.seek(abs_t);
            let mut dw = vec![0.0; m];
            let mut wcum = vec![0.0; m];
            let mut gx = vec![0.0; dm.x.n_grid()];
            let mut gy = vec![0.0; dm.y.n_grid()];
            let mut db_c = vec![0.0; d];
            let mut db_f = vec![0.0; d];
            let mut fx = vec![0.0; n1];
            let mut fy = vec![0.0; d - n1];
            let mut sx = vec![0.0; n1 * m];
            let mut sy = vec![0.0; (d - n1) * m];
            let mut phi_e = 0.0;
            let mut psi_e = 0.0;
            let mut resid: f64 = 0.0;
            for seg in &sol.segments {
                let u = sys.controls().get(seg.control);
                let anchor = sol.combined(p, seg.start);
                let (ax, ay) = anchor.split_at(n1);
                sys.drift(crate::Component::X).eval_into(ax, ay, u, &mut fx);
                sys.drift(crate::Component::Y).eval_into(ax, ay, u, &mut fy);
                if m > 0 {
                    sys.noise_coeff(crate::Component::X).eval_into(ax, ay, u, &mut sx);
                    sys.noise_coeff(crate::Component::Y).eval_into(ax, ay, u, &mut sy);
                }
                let a = seg.correction.as_ref().map(|c| &c.a[p * d..(p + 1) * d]);
                let b = seg.correction.as_ref().map(|c| &c.b[p * d * m..(p + 1) * d * m]);
                wcum.iter_mut().for_each(|v| *v = 0.0);
                if let Some(b) = b {
                    psi_e += seg.len as f64 * h * b.iter().map(|v| v * v).sum::<f64>();
                }
                for kk in 0..seg.len {
                    let step = seg.start + kk;
                    let cur = sol.combined(p, step);
                    let next = sol.combined(p, step + 1);
                    // fundamental state behind the corrected one
                    let mut fund = cur.clone();
                    for i in 0..d {
                        if let Some(a) = a {
                            fund[i] -= kk as f64 * h * a[i];
                        }
                        if let Some(b) = b {
                            let s: f64 = (0..m).map(|q| b[i * m + q] * wcum[q]).sum();
                            fund[i] -= lay.sq[i] * s;
                        }
                    }
                    beta_x.delta_beta_into(&dm.x, &cur[..n1], &mut gx, &mut db_c[..n1]);
                    beta_y.delta_beta_into(&dm.y, &cur[n1..], &mut gy, &mut db_c[n1..]);
                    beta_x.delta_beta_into(&dm.x, &fund[..n1], &mut gx, &mut db_f[..n1]);
                    beta_y.delta_beta_into(&dm.y, &fund[n1..], &mut gy, &mut db_f[n1..]);
                    let mut phi = vec![0.0; d];
                    for i in 0..d {
                        phi[i] = a.map_or(0.0, |a| a[i]) + db_f[i] - db_c[i];
                    }
                    phi_e += h * lay.hnorm_sq(&phi);
                    if m > 0 {
                        noise.next_increment(&mut dw);
                    }
                    for i in 0..d {
                        let f = if i < n1 { fx[i] } else { fy[i - n1] };
                        let mut s = 0.0;
                        for q in 0..m {
                            let sv = if i < n1 { sx[i * m + q] } else { sy[(i - n1) * m + q] };
                            s += (sv + b.map_or(0.0, |b| b[i * m + q])) * dw[q];
                        }
                        let pred = cur[i] + h * (db_c[i] + f + phi[i]) + lay.sq[i] * s;
                        let scale = 1.0 + cur[i].abs() + next[i].abs();
                        resid = resid.max((next[i] - pred).abs() / scale);
                    }
                    for q in 0..m {
                        wcum[q] += dw[q];
                    }
                }
            }
            (phi_e, psi_e, resid)
        })
        .collect();
    let phi_e = per_path.iter().map(|v| v.0).sum::<f64>() / np;
    let psi_e = per_path.iter().map(|v| v.1).sum::<f64>() / np;
    let resid = per_path.iter().map(|v| v.2).fold(0.0, f64::max);
    rep.check_le("phi_budget", phi_e, eps * span, "E int |phi|^2_{H^-1} <= eps (T - t)");
    rep.check_le("psi_budget", psi_e, eps * span, "E int |psi|^2_HS <= eps (T - t)");
    rep.check_le("perturbed_equation_residual", resid, RESIDUAL_TOL, "max relative residual");

    // 6: E‖𝒳(τ(s)) - 𝒳(s)‖² ≤ ε
    let mut worst: f64 = 0.0;
    let mut worst_se = 0.0;
    for s in 0..=n {
        let ts = sol.tau_step(s);
        if ts == s {
            continue;
        }
        let vals: Vec<f64> = (0..paths)
            .map(|p| {
                let a = sol.combined(p, s);
                let b = sol.combined(p, ts);
                let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
                lay.hnorm_sq(&diff)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / np;
        if mean > worst {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / np;
            worst = mean;
            worst_se = (var / np).sqrt();
        }
    }
    rep.check_le(
        "delay_excursion",
        worst,
        eps,
        format!("max_s E|X(tau(s)) - X(s)|^2, stderr {worst_se:.3e}"),
    );
    rep.check_le(
        "horizon_reached",
        if sol.is_complete() { 0.0 } else { 1.0 },
        0.0,
        sol.diagnostic.as_ref().map_or(String::new(), |e| e.to_string()),
    );
    rep
}

/// Result of [`sufficiency_gap`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SufficiencyGap {
    /// `sup_n mean_p ‖(X, Y)_n - (𝒳, 𝒴)_n‖²`.
    pub gap: f64,
    /// Bound `2 (gap + ε)` on `sup_s E d²((X, Y)(s), K)`.
    pub certificate: f64,
}

/// Simulates the true system under the solution's control on the same
/// noise and measures the mean-square gap to the approximate trajectory.
pub fn sufficiency_gap(sol: &EpsApproxSolution, sys: &System, seed: u64) -> Result<SufficiencyGap> {
    if seed != sol.seed {
        return Err(Error::Comparison(format!("seed {seed} differs from the solution's {}", sol.seed)));
    }
    let dm = sys.domains();
    if !dm.x.same_domain(&sol.traj.domains.x) || !dm.y.same_domain(&sol.traj.domains.y) || sys.m() != sol.traj.m {
        return Err(Error::Comparison("system does not match the solution".into()));
    }
    sys.check_step(sol.h)?;
    let policy = sol.policy();
    policy.check(sys.controls())?;
    let n = sol.n_steps();
    let abs_t = abs_step(sol.t, sol.h)?;
    let lay = Layout::new(sys);
    let gaps = map_paths(sol.n_paths(), |p| {
        let s0 = sol.traj.state_at(p, 0);
        let mut st = PathStepper::new(sys, Dynamics::True, sol.h, seed, p, abs_t, &s0, None);
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            st.step(policy.index_at(sol.t + i as f64 * sol.h, sol.h))?;
            let mut diff: Vec<f64> = st.x().iter().zip(sol.traj.x_at(p, i + 1)).map(|(a, b)| a - b).collect();
            diff.extend(st.y().iter().zip(sol.traj.y_at(p, i + 1)).map(|(a, b)| a - b));
            v.push(lay.hnorm_sq(&diff));
        }
        Ok(v)
    })?;
    let np = sol.n_paths() as f64;
    let mut gap: f64 = 0.0;
    for i in 0..n {
        gap = gap.max(gaps.iter().map(|v| v[i]).sum::<f64>() / np);
    }
    Ok(SufficiencyGap {
        gap,
        certificate: 2.0 * (gap + sol.eps),
    })
}
