//! Acceptance suite. Each test prints one `[ACCEPT] n ... PASS|FAIL` line.
//! Run with `cargo test -p pmv-cli --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pmv_cli::config::{Config, Experiment};
use pmv_cli::{run_config, Command};
use pmv_core::approx::validate as validate_solution;
use pmv_core::rng::{sampler_rng, standard_normal};
use pmv_core::sde::{Dynamics, PathStepper};
use pmv_core::viability::policy_family;
use pmv_core::{
    build_basis, build_global, certify, decay_check, fit_rate, fit_tangency, near_viability_score, simulate,
    sufficiency_gap, ApproxOptions, ControlPolicy, ControlSet, DomainPair, DomainSpec, DriftCoeff, InitialState,
    NoiseCoeff, NoiseSpec, Nonlinearity, SimSpec, SpectralField, System,
};

fn accept(n: u32, name: &str, detail: String, pass: bool) {
    println!("[ACCEPT] {n} {name}: {detail} {}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str) -> Config {
    Config::load(&config_path(name)).expect("shipped config loads")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn criterion_01_spectral_exactness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut rng = sampler_rng(101, 0);
    for (i, (len, n)) in [(PI, 8usize), (2.0, 13), (5.0, 32)].into_iter().cycle().take(1000).enumerate() {
        let basis = build_basis(DomainSpec::with_modes(len, n).unwrap()).unwrap();
        let c: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let x = SpectralField::new(basis.clone(), c.clone()).unwrap();
        let lam: Vec<f64> = (1..=n).map(|k| (k as f64 * PI / len).powi(2)).collect();
        let j = 1 + i % n;
        // Parseval against the grid quadrature of the synthesized field
        let g = x.to_grid();
        let w = len / (basis.n_grid() + 1) as f64;
        let grid_sq: f64 = g.values().iter().map(|v| v * v).sum::<f64>() * w;
        let coeff_sq: f64 = c.iter().map(|v| v * v).sum();
        worst = worst.max(rel_err(x.l2_norm().powi(2), coeff_sq)).max(rel_err(grid_sq, coeff_sq));
        // projector: idempotent, contraction, orthogonal in H⁻¹
        let p = x.project(j).unwrap();
        ok &= p.project(j).unwrap().coeffs() == p.coeffs();
        ok &= p.hminus1_norm() <= x.hminus1_norm() * (1.0 + 1e-12);
        let y = SpectralField::new(basis.clone(), (0..n).map(|_| standard_normal(&mut rng)).collect()).unwrap();
        let yperp = y.sub(&y.project(j).unwrap()).unwrap();
        worst = worst.max(p.hminus1_inner(&yperp).unwrap().abs() / (1.0 + p.hminus1_norm() * yperp.hminus1_norm()));
        // Δ commutes with Π_j, exactly on coefficients
        ok &= x.laplacian_apply().project(j).unwrap().coeffs() == p.laplacian_apply().coeffs();
        let pd = p.laplacian_apply();
        let pc = &c[..j];
        let pl = &lam[..j];
        let lmax = pl.iter().cloned().fold(0.0, f64::max);
        let lmin = pl.iter().cloned().fold(f64::INFINITY, f64::min);
        let pa: Vec<f64> = pc.iter().zip(pl).map(|(v, l)| v / l.sqrt()).collect();
        let p_l2: f64 = pc.iter().map(|v| v * v).sum();
        let p_h: f64 = pa.iter().map(|v| v * v).sum();
        // identity 3: ‖Π_jΔx‖²_{L²} = Σ λ_k² c_k² ≤ λ_j² ‖Π_j x‖²_{L²}
        let id3: f64 = pc.iter().zip(pl).map(|(v, l)| l * l * v * v).sum();
        worst = worst.max(rel_err(pd.l2_norm().powi(2), id3));
        ok &= id3 <= lmax * lmax * p_l2 * (1.0 + 1e-10);
        // identity 4: ‖Π_jΔx‖²_{H⁻¹} = Σ λ_k² a_k² ≤ max λ² ‖Π_j x‖²_{H⁻¹}
        let id4: f64 = pa.iter().zip(pl).map(|(v, l)| l * l * v * v).sum();
        worst = worst.max(rel_err(pd.hminus1_norm().powi(2), id4));
        ok &= id4 <= lmax * lmax * p_h * (1.0 + 1e-10);
        // identity 5: ‖Π_j x‖²_{L²} = Σ λ_k a_k² ≤ max λ ‖Π_j x‖²_{H⁻¹}
        let id5: f64 = pa.iter().zip(pl).map(|(v, l)| l * v * v).sum();
        worst = worst.max(rel_err(p.l2_norm().powi(2), id5)).max(rel_err(id5, p_l2));
        ok &= p_l2 <= lmax * p_h * (1.0 + 1e-10);
        // identity 6: ‖Π_j x‖²_{H⁻¹} = Σ c_k²/λ_k ≤ ‖Π_j x‖²_{L²} / min λ
        let id6: f64 = pc.iter().zip(pl).map(|(v, l)| v * v / l).sum();
        worst = worst.max(rel_err(p.hminus1_norm().powi(2), id6)).max(rel_err(basis.projected_hminus1_norm_sq(&c, j), id6));
        ok &= p_h <= p_l2 / lmin * (1.0 + 1e-10);
    }
    let secs = start.elapsed().as_secs_f64();
    accept(
        1,
        "spectral exactness",
        format!("1000 fields, worst relative error {worst:.2e} (tol 1e-10), {secs:.3}s"),
        ok && worst <= 1e-10 && secs < 1.0,
    );
}

/// Criteria 2–4 share one coupled run of the shipped rate config.
#[test]
fn criteria_02_to_04_rates() {
    let cfg = load("rates.json");
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let out = run_config(Command::Rates, &cfg, Some(dir.path())).expect("rates run");
    let secs = start.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(out.out_dir.join("fits.csv")).unwrap();
    let slope = |name: &str| -> (f64, f64) {
        let row = text.lines().find(|l| l.starts_with(name)).unwrap();
        let v: Vec<&str> = row.split(',').collect();
        (v[1].parse().unwrap(), v[3].parse().unwrap())
    };
    let Experiment::Rates(r) = &cfg.experiment else { unreachable!() };
    let detail = |s: (f64, f64)| format!("slope {:.3} (r2 {:.4}), P = {}, {} windows, {secs:.1}s", s.0, s.1, r.paths, r.windows.len());
    let e3 = slope("fundamental_vs_initial");
    let first = slope("fundamental_vs_true");
    let second = slope("projected_conditional");
    let p2 = (0.8..=1.2).contains(&e3.0) && secs < 120.0;
    let p3 = (1.7..=2.3).contains(&first.0) && secs < 120.0;
    let p4 = second.0 >= 2.6;
    println!("[ACCEPT] 2 fundamental vs initial rate in [0.8, 1.2]: {} {}", detail(e3), if p2 { "PASS" } else { "FAIL" });
    println!("[ACCEPT] 3 fundamental vs true rate in [1.7, 2.3]: {} {}", detail(first), if p3 { "PASS" } else { "FAIL" });
    println!("[ACCEPT] 4 projected conditional rate >= 2.6: {} {}", detail(second), if p4 { "PASS" } else { "FAIL" });
    assert!(p2 && p3 && p4 && out.passed);
}

#[test]
fn criterion_05_heat_oracle() {
    let mut consts = Vec::new();
    let mut slopes = Vec::new();
    let init = [1.0, 0.5, 0.25];
    let horizon = 1.0;
    for n in [8usize, 16, 32] {
        let b = build_basis(DomainSpec::with_modes(PI, n).unwrap()).unwrap();
        let by = build_basis(DomainSpec::with_modes(PI, 1).unwrap()).unwrap();
        let d = DomainPair::new(b, by);
        let ns = NoiseSpec { m: 0 };
        let sys = System::new(
            d.clone(),
            Nonlinearity::linear(1.0).unwrap(),
            Nonlinearity::zero(),
            DriftCoeff::zero(d.clone(), pmv_core::Component::X),
            DriftCoeff::zero(d.clone(), pmv_core::Component::Y),
            NoiseCoeff::zero(d.clone(), pmv_core::Component::X, ns),
            NoiseCoeff::zero(d, pmv_core::Component::Y, ns),
            ControlSet::trivial(),
        )
        .unwrap();
        let mut errs = Vec::new();
        let hs: Vec<f64> = [12, 13, 14].iter().map(|&e| 2f64.powi(-e)).collect();
        for &h in &hs {
            let spec = SimSpec::new(0.0, horizon, h, 1, 0);
            let ens = simulate(&sys, &spec, &ControlPolicy::constant(0), &InitialState::Deterministic(sys.state(&init, &[]))).unwrap();
            let mut err: f64 = 0.0;
            for (i, t) in ens.times().iter().enumerate() {
                for (k, c) in ens.x_at(0, i).iter().enumerate() {
                    let lam = ((k + 1) as f64).powi(2);
                    let exact = init.get(k).copied().unwrap_or(0.0) * (-lam * t).exp();
                    err = err.max((c - exact).abs());
                }
            }
            errs.push(err);
            consts.push(err / h);
        }
        slopes.push(fit_rate(&hs, &errs).unwrap().slope);
    }
    let cmax = consts.iter().cloned().fold(0.0, f64::max);
    let cmin = consts.iter().cloned().fold(f64::INFINITY, f64::min);
    let smin = slopes.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = slopes.iter().cloned().fold(0.0, f64::max);
    accept(
        5,
        "heat oracle error <= C h",
        format!("C in [{cmin:.4}, {cmax:.4}] over N in {{8,16,32}} and 3 steps, slopes [{smin:.3}, {smax:.3}]"),
        cmax / cmin <= 1.1 && (0.9..=1.1).contains(&smin) && (0.9..=1.1).contains(&smax),
    );
}

#[test]
fn criterion_06_contraction() {
    let n = 16;
    let b = build_basis(DomainSpec::with_modes(PI, n).unwrap()).unwrap();
    let by = build_basis(DomainSpec::with_modes(PI, 1).unwrap()).unwrap();
    let d = DomainPair::new(b.clone(), by);
    let ns = NoiseSpec { m: 0 };
    let sys = System::new(
        d.clone(),
        Nonlinearity::stefan_eps(0.5, 1.0).unwrap(),
        Nonlinearity::zero(),
        DriftCoeff::zero(d.clone(), pmv_core::Component::X),
        DriftCoeff::zero(d.clone(), pmv_core::Component::Y),
        NoiseCoeff::zero(d.clone(), pmv_core::Component::X, ns),
        NoiseCoeff::zero(d, pmv_core::Component::Y, ns),
        ControlSet::trivial(),
    )
    .unwrap();
    let h = sys.h_max() / 4.0;
    let steps = 400;
    let mut rng = sampler_rng(606, 0);
    let mut worst_rise: f64 = f64::NEG_INFINITY;
    for _ in 0..100 {
        let mut draw = || -> Vec<f64> { (1..=n).map(|k| 3.0 * standard_normal(&mut rng) / k as f64).collect() };
        let a = sys.state(&draw(), &[]);
        let c = sys.state(&draw(), &[]);
        let mut sa = PathStepper::new(&sys, Dynamics::True, h, 0, 0, 0, &a, None);
        let mut sc = PathStepper::new(&sys, Dynamics::True, h, 0, 0, 0, &c, None);
        let dist = |x: &[f64], y: &[f64]| -> f64 {
            let diff: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
            b.hminus1_norm_sq(&diff).sqrt()
        };
        let mut prev = dist(sa.x(), sc.x());
        for _ in 0..steps {
            sa.step(0).unwrap();
            sc.step(0).unwrap();
            let now = dist(sa.x(), sc.x());
            worst_rise = worst_rise.max(now - prev);
            prev = now;
        }
    }
    accept(
        6,
        "H^-1 contraction in initial data",
        format!("100 pairs x {steps} steps at h = h_max/4, largest per-step increase {worst_rise:.2e} (tol 1e-8)"),
        worst_rise <= 1e-8,
    );
}

#[test]
fn criterion_07_tangency_classifier() {
    let suite = [("whole_space", true), ("ball", true), ("half_space", false), ("singleton", false)];
    let mut flags = Vec::new();
    let mut viable = Vec::new();
    let mut detail = Vec::new();
    for (name, _) in suite {
        let cfg = load(&format!("tangency_{name}.json"));
        let Experiment::Tangency(t) = &cfg.experiment else { unreachable!() };
        let sys = cfg.system().unwrap();
        let init = cfg.initial_state(&sys).unwrap();
        let k = cfg.constraint().unwrap();
        let tr = fit_tangency(&sys, cfg.t0, &init, k.as_ref(), &t.eps_grid, 0.0, t.h, t.paths, cfg.seed, t.tol).unwrap();
        let vcfg = load(&format!("viability_{name}.json"));
        let Experiment::Viability(v) = &vcfg.experiment else { unreachable!() };
        let fam = policy_family(sys.controls().len(), vcfg.t0, v.horizon, v.max_intervals, v.budget);
        let sc = near_viability_score(&sys, vcfg.t0, &init, k.as_ref(), &fam, v.horizon, v.h, v.paths, vcfg.seed).unwrap();
        flags.push(tr.tangent);
        viable.push(sc.score <= 0.05);
        detail.push(format!("{name}: bracket {:.2e} score {:.3}", tr.values.last().unwrap().value, sc.score));
    }
    let expected: Vec<bool> = suite.iter().map(|s| s.1).collect();
    accept(
        7,
        "quasi-tangency classifier",
        format!("flags {flags:?}, viability {viable:?} ({})", detail.join("; ")),
        flags == expected && viable == expected,
    );
}

#[test]
fn criterion_08_approx_solutions() {
    let cfg = load("approx_ball.json");
    let Experiment::Approx(a) = &cfg.experiment else { unreachable!() };
    let sys = cfg.system().unwrap();
    let init = cfg.initial_state(&sys).unwrap();
    let k = cfg.constraint().unwrap();
    let opts = ApproxOptions::default();
    let mut gaps = Vec::new();
    let mut valid = true;
    for &eps in &[1e-2, 1e-3] {
        let sol = build_global(sys.clone(), cfg.t0, &init, eps, k.as_ref(), a.horizon, a.h, a.paths, cfg.seed, &opts).unwrap();
        valid &= validate_solution(&sol, eps, k.as_ref()).passed();
        gaps.push(sufficiency_gap(&sol, &sys, cfg.seed).unwrap().gap);
    }
    let ratio = gaps[0] / gaps[1];
    let c = [gaps[0] / 1e-2, gaps[1] / 1e-3];
    accept(
        8,
        "eps-approximate solutions",
        format!("validate {valid}, gaps {:.3e} / {:.3e}, ratio {ratio:.2} (target [5, 20]), C in [{:.2e}, {:.2e}]", gaps[0], gaps[1], c[0].min(c[1]), c[0].max(c[1])),
        valid && (5.0..=20.0).contains(&ratio),
    );
}

#[test]
fn criterion_09_stabilization() {
    let stab = |name: &str, f: &dyn Fn(&mut Config)| {
        let mut cfg = load(name);
        f(&mut cfg);
        let Experiment::Stabilize(s) = cfg.experiment.clone() else { unreachable!() };
        let sc = cfg.stabilization(&s).unwrap();
        let cert = certify(&sc, s.samples, cfg.seed).unwrap();
        let init = sc.state(&cfg.initial.x, s.y0);
        let spec = SimSpec::new(0.0, s.horizon, s.h, s.paths, cfg.seed).store_every(s.store_every);
        let ens = simulate(sc.system(), &spec, &ControlPolicy::constant(0), &InitialState::Deterministic(init)).unwrap();
        let dr = decay_check(&ens, s.j, s.c, s.y0, s.tol).unwrap();
        (cert.passed, dr.fraction, dr.violations, s.paths, s.horizon, s.h)
    };
    let (pass_slow, ..) = stab("stabilize_high_noise.json", &|_| {});
    let (pass_fast, ..) = stab("stabilize_too_fast.json", &|_| {});
    let (_, _, det_viol, p, t, h) = stab("stabilize_high_noise.json", &|c| {
        c.sigma1.clear();
        c.noise_modes = 0;
    });
    let (cert_tan, frac_tan, ..) = stab("stabilize_tangential.json", &|_| {});
    accept(
        9,
        "stabilization",
        format!(
            "certify c=0.5 {pass_slow}, c=2.5 {pass_fast}; deterministic violations {det_viol}; tangential noise certified {cert_tan}, violation fraction {frac_tan:.4} (P={p}, T={t}, h={h})"
        ),
        pass_slow && !pass_fast && det_viol == 0 && cert_tan && frac_tan <= 0.01,
    );
}

#[test]
fn criterion_10_reproducibility() {
    let names = ["tangency_singleton.json", "viability_half_space.json", "approx_ball.json", "stabilize_tangential.json"];
    let mut identical = true;
    let mut files = 0;
    for name in names {
        let cfg = load(name);
        let cmd = match cfg.experiment {
            Experiment::Rates(_) => Command::Rates,
            Experiment::Tangency(_) => Command::Tangency,
            Experiment::Viability(_) => Command::Viability,
            Experiment::Approx(_) => Command::Approx,
            Experiment::Stabilize(_) => Command::Stabilize,
        };
        let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
        for (d, threads) in dirs.iter().zip([1usize, 4, 1]) {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| run_config(cmd, &cfg, Some(d.path()))).unwrap();
        }
        let mut csvs: Vec<String> = std::fs::read_dir(dirs[0].path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        csvs.sort();
        for f in &csvs {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            for d in &dirs[1..] {
                identical &= std::fs::read(d.path().join(f)).unwrap() == a;
            }
            files += 1;
        }
    }
    accept(
        10,
        "reproducibility",
        format!("{files} CSV files from 4 experiments, byte-identical across 3 runs with 1 and 4 threads: {identical}"),
        identical && files > 0,
    );
}
