//! The experiment commands. Each writes its tables and returns its gates
//! plus summary lines.

use pmv_core::approx::{self, ApproxOptions};
use pmv_core::coefficients::random_pair_sampler;
use pmv_core::nonlinearity;
use pmv_core::viability::policy_family;
use pmv_core::{
    build_global, certify, check_lipschitz, coupled_window_stats, decay_check, fit_rate, fit_tangency,
    near_viability_score, simulate, sufficiency_gap, Component, ControlPolicy, InitialState, SimSpec,
    ValidationReport,
};

use crate::config::{ApproxCfg, Config, Experiment, RatesCfg, StabilizeCfg, TangencyCfg, ViabilityCfg};
use crate::output::{Gate, Output};
use crate::CliError;

/// Gates and human-readable notes of one run.
#[derive(Debug, Default)]
pub struct RunReport {
    pub gates: Vec<Gate>,
    pub notes: Vec<String>,
}

fn b(v: bool) -> String {
    v.to_string()
}

fn f(v: f64) -> String {
    v.to_string()
}

/// Model checks: nonlinearities, coefficient Lipschitz constants, step
/// stability and initial-state membership.
pub fn validate(cfg: &Config, out: &Output) -> Result<ValidationReport, CliError> {
    let v = &cfg.validation;
    let range = (v.range[0], v.range[1]);
    let mut rep = ValidationReport::new();
    let mut merge = |prefix: &str, r: ValidationReport| {
        for mut item in r.items {
            item.name = format!("{prefix}.{}", item.name);
            rep.push(item);
        }
    };
    merge("beta1", nonlinearity::validate(&cfg.beta1.build()?, range, v.samples)?);
    merge("beta2", nonlinearity::validate(&cfg.beta2.build()?, range, v.samples)?);
    let sys = cfg.system()?;
    let d = sys.domains().clone();
    let c = sys.controls().clone();
    let tag = |i: u64| pmv_core::rng::derive_seed(cfg.seed, i);
    merge("f1", check_lipschitz(sys.drift(Component::X), random_pair_sampler(d.clone(), c.clone(), tag(1), v.scale), v.lipschitz_pairs)?);
    merge("f2", check_lipschitz(sys.drift(Component::Y), random_pair_sampler(d.clone(), c.clone(), tag(2), v.scale), v.lipschitz_pairs)?);
    merge("sigma1", check_lipschitz(sys.noise_coeff(Component::X), random_pair_sampler(d.clone(), c.clone(), tag(3), v.scale), v.lipschitz_pairs)?);
    merge("sigma2", check_lipschitz(sys.noise_coeff(Component::Y), random_pair_sampler(d, c, tag(4), v.scale), v.lipschitz_pairs)?);
    let h = cfg.experiment.step();
    let mut rep2 = ValidationReport::new();
    rep2.check_le("step", h, sys.h_max(), "h <= 0.5 / max(lambda_N lip, 1)");
    if cfg.constraint.is_some() && !matches!(cfg.experiment, Experiment::Rates(_) | Experiment::Stabilize(_)) {
        let k = cfg.constraint()?;
        let init = cfg.initial_state(&sys)?;
        rep2.check_le("initial_in_constraint", k.distance(&init), pmv_core::viability::CONTAINS_TOL, k.describe());
    }
    merge("experiment", rep2);
    let rows: Vec<Vec<String>> = rep
        .items
        .iter()
        .map(|i| vec![i.name.clone(), f(i.value), f(i.threshold), b(i.passed), i.detail.clone()])
        .collect();
    out.table("validation.csv", &["check", "value", "threshold", "passed", "detail"], &rows)?;
    Ok(rep)
}

pub fn run(cfg: &Config, out: &Output) -> Result<RunReport, CliError> {
    match &cfg.experiment {
        Experiment::Rates(r) => rates(cfg, r, out),
        Experiment::Tangency(r) => tangency(cfg, r, out),
        Experiment::Viability(r) => viability(cfg, r, out),
        Experiment::Approx(r) => approx_build(cfg, r, out),
        Experiment::Stabilize(r) => stabilize(cfg, r, out),
    }
}

fn rates(cfg: &Config, r: &RatesCfg, out: &Output) -> Result<RunReport, CliError> {
    let sys = cfg.system()?;
    let init = cfg.initial_state(&sys)?;
    let ws = coupled_window_stats(&sys, cfg.t0, &init, r.control, r.h, &r.windows, r.paths, cfg.seed, r.j, r.j_prime)?;
    let hs = ws.window_lengths();
    let rows: Vec<Vec<String>> = (0..hs.len())
        .map(|i| {
            vec![
                ws.windows[i].to_string(),
                f(hs[i]),
                f(ws.fundamental_vs_initial[i]),
                f(ws.stderr_initial[i]),
                f(ws.fundamental_vs_true[i]),
                f(ws.stderr_true[i]),
                f(ws.projected_conditional[i]),
            ]
        })
        .collect();
    out.table(
        "rates.csv",
        &["window_steps", "window", "fundamental_vs_initial", "stderr_initial", "fundamental_vs_true", "stderr_true", "projected_conditional"],
        &rows,
    )?;
    let fits = [
        ("fundamental_vs_initial", fit_rate(&hs, &ws.fundamental_vs_initial)?),
        ("fundamental_vs_true", fit_rate(&hs, &ws.fundamental_vs_true)?),
        ("projected_conditional", fit_rate(&hs, &ws.projected_conditional)?),
    ];
    let rows: Vec<Vec<String>> = fits
        .iter()
        .map(|(n, ft)| vec![n.to_string(), f(ft.slope), f(ft.intercept), f(ft.r2), b(ft.well_conditioned)])
        .collect();
    out.table("fits.csv", &["statistic", "slope", "intercept", "r2", "well_conditioned"], &rows)?;
    let mut rep = RunReport::default();
    let name = &cfg.name;
    if let Some(g) = r.gates.e3 {
        rep.gates.push(Gate::within(name, "slope_fundamental_vs_initial", g, fits[0].1.slope));
    }
    if let Some(g) = r.gates.first {
        rep.gates.push(Gate::within(name, "slope_fundamental_vs_true", g, fits[1].1.slope));
    }
    if let Some(g) = r.gates.second_min {
        rep.gates.push(Gate::at_least(name, "slope_projected_conditional", g, fits[2].1.slope));
    }
    for (n, ft) in &fits {
        rep.notes.push(format!("{n}: slope {:.4}, r2 {:.4}, well conditioned {}", ft.slope, ft.r2, ft.well_conditioned));
    }
    Ok(rep)
}

fn tangency(cfg: &Config, r: &TangencyCfg, out: &Output) -> Result<RunReport, CliError> {
    let sys = cfg.system()?;
    let init = cfg.initial_state(&sys)?;
    let k = cfg.constraint()?;
    let tr = fit_tangency(&sys, cfg.t0, &init, k.as_ref(), &r.eps_grid, r.lambda, r.h, r.paths, cfg.seed, r.tol)?;
    let rows: Vec<Vec<String>> = tr
        .values
        .iter()
        .map(|v| {
            vec![f(v.eps), f(v.value), f(v.term_mean_sq), f(v.term_cond_1), f(v.term_cond_2), f(v.raw_cond), v.best_control.to_string()]
        })
        .collect();
    out.table(
        "tangency.csv",
        &["eps", "value", "term_mean_sq", "term_cond_1", "term_cond_2", "raw_cond", "best_control"],
        &rows,
    )?;
    let mut rep = RunReport::default();
    if let Some(e) = r.expect_tangent {
        rep.gates.push(Gate::equals(&cfg.name, "tangent", e, tr.tangent));
    }
    rep.notes.push(format!("constraint: {}", k.describe()));
    rep.notes.push(format!("tangent: {}, fitted lambda {:.4}", tr.tangent, tr.lambda_hat));
    Ok(rep)
}

fn viability(cfg: &Config, r: &ViabilityCfg, out: &Output) -> Result<RunReport, CliError> {
    let sys = cfg.system()?;
    let init = cfg.initial_state(&sys)?;
    let k = cfg.constraint()?;
    let fam = policy_family(sys.controls().len(), cfg.t0, r.horizon, r.max_intervals, r.budget);
    let sc = near_viability_score(&sys, cfg.t0, &init, k.as_ref(), &fam, r.horizon, r.h, r.paths, cfg.seed)?;
    let rows: Vec<Vec<String>> = sc.per_policy.iter().enumerate().map(|(i, v)| vec![i.to_string(), f(*v)]).collect();
    out.table("viability.csv", &["policy", "score"], &rows)?;
    let mut rep = RunReport::default();
    rep.gates.push(match r.expect_viable {
        Some(false) => Gate {
            target: format!("> {}", r.threshold),
            passed: sc.score > r.threshold,
            ..Gate::at_most(&cfg.name, "score", r.threshold, sc.score)
        },
        _ => Gate::at_most(&cfg.name, "score", r.threshold, sc.score),
    });
    rep.notes.push(format!("constraint: {}", k.describe()));
    rep.notes.push(format!("best policy {} of {}, score {:.6}", sc.best_policy, fam.len(), sc.score));
    Ok(rep)
}

fn approx_build(cfg: &Config, r: &ApproxCfg, out: &Output) -> Result<RunReport, CliError> {
    let sys = cfg.system()?;
    let init = cfg.initial_state(&sys)?;
    let k = cfg.constraint()?;
    let opts = ApproxOptions {
        segment_fraction: r.segment_fraction,
        correct: r.correct,
        pilot_paths: r.pilot_paths,
    };
    let mut summary_rows = Vec::new();
    let mut check_rows = Vec::new();
    let mut seg_rows = Vec::new();
    let mut rep = RunReport::default();
    let mut gaps = Vec::new();
    for (i, &eps) in r.eps.iter().enumerate() {
        let sol = build_global(sys.clone(), cfg.t0, &init, eps, k.as_ref(), r.horizon, r.h, r.paths, cfg.seed, &opts)?;
        let vr = approx::validate(&sol, eps, k.as_ref());
        let gap = sufficiency_gap(&sol, &sys, cfg.seed)?;
        gaps.push(gap.gap);
        summary_rows.push(vec![
            f(eps),
            b(sol.is_complete()),
            f(sol.t_bar),
            sol.segments.len().to_string(),
            b(vr.passed()),
            f(gap.gap),
            f(gap.certificate),
        ]);
        for it in &vr.items {
            check_rows.push(vec![f(eps), it.name.clone(), f(it.value), f(it.threshold), b(it.passed)]);
        }
        for (si, s) in sol.segments.iter().enumerate() {
            seg_rows.push(vec![
                f(eps),
                si.to_string(),
                f(sol.t + s.start as f64 * sol.h),
                f(sol.t + (s.start + s.len) as f64 * sol.h),
                s.control.to_string(),
                f(s.phi_energy),
                f(s.psi_energy),
            ]);
        }
        if r.dump_trajectories {
            out.raw(&format!("approx_traj_{i}.csv"), |w| sol.traj.write_csv(w))?;
        }
        if let Some(e) = r.expect_valid {
            rep.gates.push(Gate::equals(&cfg.name, &format!("valid_eps_{eps}"), e, vr.passed()));
        }
        if let Some(d) = &sol.diagnostic {
            rep.notes.push(format!("eps {eps}: stopped early: {d}"));
        }
        for fail in vr.failures() {
            rep.notes.push(format!("eps {eps}: {} = {} exceeds {}", fail.name, fail.value, fail.threshold));
        }
        rep.notes.push(format!("eps {eps}: gap {:.6e}, certificate {:.6e}", gap.gap, gap.certificate));
    }
    out.table("approx.csv", &["eps", "complete", "t_bar", "segments", "validate_passed", "gap", "certificate"], &summary_rows)?;
    out.table("approx_checks.csv", &["eps", "check", "value", "threshold", "passed"], &check_rows)?;
    out.table(
        "approx_segments.csv",
        &["eps", "segment", "start_time", "end_time", "control", "phi_energy", "psi_energy"],
        &seg_rows,
    )?;
    if let Some(g) = r.gap_ratio {
        let ratio = if gaps[1] > 0.0 { gaps[0] / gaps[1] } else { f64::INFINITY };
        rep.gates.push(Gate::within(&cfg.name, "gap_ratio", g, ratio));
    }
    Ok(rep)
}

fn stabilize(cfg: &Config, r: &StabilizeCfg, out: &Output) -> Result<RunReport, CliError> {
    let sc = cfg.stabilization(r)?;
    let cert = certify(&sc, r.samples, cfg.seed)?;
    let rows: Vec<Vec<String>> = cert
        .shells
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), f(s.radius), f(s.worst_cond1), f(s.worst_cond2)])
        .collect();
    out.table("certificate.csv", &["shell", "radius", "worst_cond1", "worst_cond2"], &rows)?;
    let sys = sc.system();
    if cfg.initial.x.len() > sys.domains().x.n_modes() {
        return Err(CliError::Config("initial state has more coefficients than modes".into()));
    }
    let init = sc.state(&cfg.initial.x, r.y0);
    if !pmv_core::ConstraintSet::contains(&sc.k_stab(), &init) {
        return Err(CliError::Config("initial state must satisfy |P_j x|^2 <= y0".into()));
    }
    let spec = SimSpec::new(cfg.t0, r.horizon, r.h, r.paths, cfg.seed).store_every(r.store_every);
    let ens = simulate(sys, &spec, &ControlPolicy::constant(0), &InitialState::Deterministic(init))?;
    let dr = decay_check(&ens, r.j, r.c, r.y0, r.tol)?;
    out.raw("decay.csv", |w| dr.write_csv(w))?;
    let mut rep = RunReport::default();
    if let Some(e) = r.expect_certified {
        rep.gates.push(Gate::equals(&cfg.name, "certified", e, cert.passed));
    }
    rep.gates.push(Gate::at_most(&cfg.name, "violation_fraction", r.max_violation_fraction, dr.fraction));
    rep.notes.push(format!("certificate hash {} seed {}", cert.config_hash, cert.seed));
    rep.notes.push(format!(
        "max normalised drift condition {:.6e}, max tangential residual {:.6e}, certified {}",
        cert.max_cond1, cert.max_cond2, cert.passed
    ));
    rep.notes.push(format!("decay violations {} of {} samples", dr.violations, dr.samples));
    Ok(rep)
}
