//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use boltzmann_cli::{cmd_example56, cmd_simulate, RunConfig};
use boltzmann_core::criteria::*;
use boltzmann_core::potential::parse_expr;
use boltzmann_core::quadrature::{integrate_log_1d, normalization, normalize, QuadratureConfig, Verdict};
use boltzmann_core::spectral::{holley_stroock_crosscheck, spectral_gap, SpectralSchedule};
use boltzmann_core::stochastic::*;
use boltzmann_core::Potential;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, elapsed: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("runtime {elapsed:.1?} exceeds {limit:?}"))
}

fn x2() -> Potential {
    Potential::parse("x^2", 1).unwrap()
}

fn gaussian_battery() -> Outcome {
    let t0 = Instant::now();
    let p = x2();
    let r = check_thm48(&p, 1.0, 1.0, &WellConfig::default()).map_err(|e| e.to_string())?;
    let exact = 1f64.exp() * PI.sqrt();
    let v = r.real("integral").ok_or("no thm48 integral")?;
    ensure(r.holds() && (v / exact - 1.0).abs() < 1e-6, format!("thm48 integral {v} vs e sqrt(pi) = {exact}"))?;
    let be = check_bakry_emery(&p, &ScanBox::with_spacing(1, 100.0, 0.01));
    ensure(be.holds() && be.real("K") == Some(2.0), format!("bakry_emery K = {:?}", be.real("K")))?;
    let gap = spectral_gap(&p, &SpectralSchedule::default()).map_err(|e| e.to_string())?.gap;
    ensure((gap - 2.0).abs() <= 1e-3, format!("gap {gap}"))?;
    within(Duration::from_secs(10), t0.elapsed())?;
    Ok(format!("integral {v:.10}, K = 2, gap {gap:.6}"))
}

/// `E_x[M_t]` for `F = x^2`: `e^t cosh(2t)^{-1/2} exp(-x^2 tanh(2t))`.
fn fk_closed_form(x: f64, t: f64) -> f64 {
    t.exp() * (2.0 * t).cosh().powf(-0.5) * (-x * x * (2.0 * t).tanh()).exp()
}

/// Crank-Nicolson for `u_t = u_xx / 2 + (1 - 2x^2) u`, `u(0, .) = 1`, on `[-10, 10]`.
fn crank_nicolson(t: f64, x: f64) -> f64 {
    let l = 10.0;
    let m = 4001;
    let dx = 2.0 * l / (m - 1) as f64;
    let steps = (t / 5e-4).round() as usize;
    let dt = t / steps as f64;
    let pot: Vec<f64> = (0..m).map(|i| -l + dx * i as f64).map(|y| 1.0 - 2.0 * y * y).collect();
    let mut u = vec![1.0; m];
    u[0] = 0.0;
    u[m - 1] = 0.0;
    let r = 0.5 * dt / (dx * dx);
    let n = m - 2;
    let a = -0.5 * r;
    let (mut rhs, mut cp, mut dp) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for _ in 0..steps {
        for i in 0..n {
            let j = i + 1;
            rhs[i] = u[j] + 0.5 * r * (u[j + 1] - 2.0 * u[j] + u[j - 1]) + 0.5 * dt * pot[j] * u[j];
        }
        for i in 0..n {
            let b = 1.0 + r - 0.5 * dt * pot[i + 1];
            let den = if i == 0 { b } else { b - a * cp[i - 1] };
            cp[i] = a / den;
            dp[i] = if i == 0 { rhs[0] / b } else { (rhs[i] - a * dp[i - 1]) / den };
        }
        for i in (0..n).rev() {
            u[i + 1] = if i == n - 1 { dp[i] } else { dp[i] - cp[i] * u[i + 2] };
        }
    }
    u[((x + l) / dx).round() as usize]
}

fn feynman_kac() -> Outcome {
    let t0 = Instant::now();
    let p = x2();
    let cfg = McConfig::default().with_paths(100_000).with_dt(1e-3);
    let mut worst: f64 = 0.0;
    for &t in &[0.25, 0.5] {
        for &x in &[0.0, 1.0] {
            let exact = fk_closed_form(x, t);
            let pde = crank_nicolson(t, x);
            ensure((pde - exact).abs() < 1e-5 * exact, format!("PDE {pde} vs closed form {exact} at x={x} t={t}"))?;
            let e = estimate_em(&p, &[x], t, &cfg).map_err(|e| e.to_string())?;
            let z = e.z_score(exact);
            worst = worst.max(z);
            ensure(z < 3.0, format!("x={x} t={t}: {} +- {} vs {exact}", e.mean, e.std_error))?;
        }
    }
    within(Duration::from_secs(60), t0.elapsed())?;
    Ok(format!("largest deviation {worst:.2} standard errors"))
}

fn girsanov() -> Outcome {
    let cfg = McConfig::default().with_paths(20_000).with_dt(2e-3);
    let mut worst: f64 = 0.0;
    for e in ["x^2", "x^4 - x^2", "x^2 + sin(x)"] {
        let p = Potential::parse(e, 1).unwrap();
        for &x in &[0.0, 1.0] {
            for &t in &[0.25, 1.0] {
                let z = estimate_ez(&p, &[x], t, &cfg).map_err(|e| e.to_string())?;
                worst = worst.max(z.z_score(1.0));
                ensure(z.z_score(1.0) < 4.0, format!("{e} x={x} t={t}: E[Z] = {} +- {}", z.mean, z.std_error))?;
            }
        }
    }
    let dts = [4e-3, 1e-3, 2.5e-4];
    let rms = dts
        .iter()
        .map(|&dt| girsanov_identity_rms(&x2(), &[0.0], 0.5, &McConfig::default().with_paths(4000).with_dt(dt)))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| e.to_string())?;
    let slope = (rms[0].ln() - rms[2].ln()) / (dts[0].ln() - dts[2].ln());
    ensure((slope - 0.5).abs() <= 0.1, format!("slope {slope}"))?;
    Ok(format!("E[Z] within {worst:.2} sigma, RMS slope {slope:.3}"))
}

fn semigroup() -> Outcome {
    let p = x2();
    let cfg = McConfig::default().with_paths(20_000);
    let id = parse_expr("x", 1).unwrap();
    let sq = parse_expr("x^2", 1).unwrap();
    let mut joint: f64 = 0.0;
    for (h, x, t) in [(&id, 1.0, 1.0), (&sq, 1.0, 0.5), (&id, 0.5, 0.25), (&sq, 0.0, 1.0)] {
        let r = perturbed_expectation(&p, h, &[x], t, &cfg).map_err(|e| e.to_string())?;
        joint = joint.max(r.joint_z);
        ensure(r.joint_z < 4.0, format!("x={x} t={t}: joint z {}", r.joint_z))?;
    }
    let mean = perturbed_expectation(&p, &id, &[1.0], 1.0, &cfg).map_err(|e| e.to_string())?;
    let m = (-2.0f64).exp();
    ensure(mean.sde.z_score(m) < 3.0 && mean.girsanov.z_score(m) < 3.0, format!("mean {mean:?} vs {m}"))?;
    let t = 3.0;
    let var = perturbed_expectation(&p, &sq, &[0.0], t, &cfg).map_err(|e| e.to_string())?;
    let v = 0.25 * (1.0 - (-4.0 * t).exp());
    ensure(var.sde.z_score(v) < 3.0, format!("variance {} +- {} vs {v}", var.sde.mean, var.sde.std_error))?;
    Ok(format!("joint z <= {joint:.2}, E[Y_1] = {:.4}, Var(Y_3) = {:.4}", mean.sde.mean, var.sde.mean))
}

fn box_exit() -> Outcome {
    let exact = exit_prob_box(1.0, 1.0, 1).map_err(|e| e.to_string())?.probability;
    let mc = box_survival_bridge(1.0, 1.0, &McConfig::default().with_paths(50_000).with_dt(1e-2)).map_err(|e| e.to_string())?;
    ensure(mc.z_score(exact) < 3.0, format!("series {exact} vs MC {} +- {}", mc.mean, mc.std_error))?;
    for i in 0..=36 {
        let tau = 1.0 + 0.25 * i as f64;
        let s = exit_prob_box(1.0, tau, 1).map_err(|e| e.to_string())?.probability;
        let bound = (-THETA_1 * tau).exp();
        ensure(s >= bound * (1.0 - 1e-3), format!("tau={tau}: series {s} below bound {bound}"))?;
    }
    Ok(format!("P = {exact:.6}, MC {:.6} +- {:.6}", mc.mean, mc.std_error))
}

fn example56() -> Outcome {
    let t0 = Instant::now();
    let (_, rows) = cmd_example56(&RunConfig::default()).map_err(|e| e.to_string())?;
    for r in &rows {
        if r.beta.abs() < 2.0 {
            ensure(
                r.synthesis == "TLSI" && r.malrieu_roberto == CriterionVerdict::Holds && r.thm48 == CriterionVerdict::Holds,
                format!("beta={}: {r:?}", r.beta),
            )?;
        } else {
            ensure(
                r.synthesis == "DLSI fails"
                    && r.necessary_thm410 == Some(CriterionVerdict::Fails)
                    && r.sum_terms_to_bound.is_some_and(|k| k <= 50),
                format!("beta={}: {r:?}", r.beta),
            )?;
        }
    }
    let mut betas: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    betas.sort_by(f64::total_cmp);
    ensure(betas == [-2.0, -1.9, -1.0, 0.0, 1.0, 1.9, 2.0, 3.0], format!("rows {betas:?}"))?;
    within(Duration::from_secs(600), t0.elapsed())?;
    Ok(format!("TLSI for |beta| < 2, DLSI fails for beta in {{-2, 2, 3}} in {:.1?}", t0.elapsed()))
}

fn well_bound() -> Outcome {
    let (p, _) = normalize(&x2(), &QuadratureConfig::default()).map_err(|e| e.to_string())?;
    let cfg = McConfig::default().with_paths(4000).with_dt(1e-2);
    let mut violations = 0;
    for i in 0..20 {
        let x = -3.0 + 6.0 * i as f64 / 19.0;
        let e = estimate_em(&p, &[x], 1.0, &cfg).map_err(|e| e.to_string())?;
        // W = 2x^2 - 1 >= -1
        let b = well_bound_47(&p, &[x], 1.0, 0.5, 1.0).map_err(|e| e.to_string())?;
        if e.mean > b + 3.0 * e.std_error {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("{violations} violations"))?;
    Ok("20 points, 0 violations".into())
}

fn holley_stroock() -> Outcome {
    let c = holley_stroock_crosscheck(&x2(), &Potential::parse("sin(x)", 1).unwrap(), &SpectralSchedule::default())
        .map_err(|e| e.to_string())?;
    ensure(c.lower_holds && c.upper_holds && c.slack > 1.0, format!("{c:?}"))?;
    Ok(format!("gaps {:.5} / {:.5}, Osc = {:.4}, slack {:.3}", c.gap_base, c.gap_perturbed, c.oscillation, c.slack))
}

fn properties() -> Outcome {
    // derivatives against central differences
    let mut rng = StdRng::seed_from_u64(9);
    let exprs = ["x^2 + 1.5*x*sin(x)", "x^4 - 3*x^2", "sqrt(sqrt(x^2 + 1))^3", "log(1 + x^2)"];
    for e in exprs {
        let p = Potential::parse(e, 1).unwrap();
        for _ in 0..100 {
            let x: f64 = rng.random_range(-10.0..10.0);
            let h = 1e-5;
            let fd = (p.value(&[x + h]).unwrap() - p.value(&[x - h]).unwrap()) / (2.0 * h);
            let g = p.gradient(&[x]).unwrap()[0];
            ensure((fd - g).abs() <= 1e-6 * g.abs().max(1.0), format!("{e} at {x}: {fd} vs {g}"))?;
            let fd2 = (p.gradient(&[x + h]).unwrap()[0] - p.gradient(&[x - h]).unwrap()[0]) / (2.0 * h);
            let l = p.laplacian(&[x]).unwrap();
            ensure((fd2 - l).abs() <= 1e-6 * l.abs().max(1.0), format!("{e} at {x}: {fd2} vs {l}"))?;
        }
    }
    // Gaussian normalization
    for a in [0.5, 1.0, 2.0, 5.0] {
        let z = normalization(&Potential::parse(&format!("{a}*x^2"), 1).unwrap(), &QuadratureConfig::default().with_tolerance(1e-10))
            .map_err(|e| e.to_string())?;
        let exact = (PI / (2.0 * a)).sqrt();
        ensure(z.value.is_some_and(|v| (v / exact - 1.0).abs() < 1e-8), format!("a={a}: {:?}", z.value))?;
    }
    // verdict monotonicity along exp(t sqrt(1 + x^2))
    let rank = |v: Verdict| match v {
        Verdict::Finite => 0,
        Verdict::Inconclusive => 1,
        Verdict::Divergent => 2,
    };
    let mut prev = 0;
    for i in -12..=12 {
        let t = i as f64 / 4.0;
        let v = integrate_log_1d(&|x: f64| t * (1.0 + x * x).sqrt(), &QuadratureConfig::default()).map_err(|e| e.to_string())?;
        ensure(rank(v.verdict) >= prev, format!("verdict dropped at t={t}"))?;
        prev = rank(v.verdict);
    }
    ensure(prev == 2, "largest t not divergent")?;
    // shift invariance of the derivative-based criteria
    let bx = ScanBox::with_spacing(1, 50.0, 0.01);
    for p in [x2(), Potential::parse("x^4 - x^2", 1).unwrap(), Potential::example56(-2.0)] {
        let q = p.shifted(4.5);
        ensure(check_bakry_emery(&p, &bx).verdict == check_bakry_emery(&q, &bx).verdict, "bakry_emery shift")?;
        let s = ShellConfig::default();
        let same = |a: Result<CriterionReport, CriteriaError>, b: Result<CriterionReport, CriteriaError>| {
            a.map(|r| r.verdict).ok() == b.map(|r| r.verdict).ok()
        };
        ensure(same(check_sgp_1d(&p, &s), check_sgp_1d(&q, &s)), "sgp_1d shift")?;
        ensure(same(check_sgp_nd(&p, &s), check_sgp_nd(&q, &s)), "sgp_nd shift")?;
        let r = Remark54Config::default();
        let eta = |p: &Potential| check_remark54(p, &r).ok().and_then(|r| r.real("eta"));
        ensure(eta(&p) == eta(&q), "remark54 shift")?;
    }
    // determinism under a fixed seed
    let mut cfg = RunConfig::default();
    cfg.potential.expression = Some("x^2 + sin(x)".into());
    cfg.simulate.ops = vec!["estimate_em".into(), "estimate_ez".into()];
    cfg.simulate.mc.n_paths = 2000;
    cfg.seed = Some(11);
    cfg.apply_seed();
    let a = cmd_simulate(&cfg).map_err(|e| e.to_string())?;
    let b = cmd_simulate(&cfg).map_err(|e| e.to_string())?;
    let body = |r: &boltzmann_cli::Report| serde_json::to_string(&r.results).unwrap();
    ensure(body(&a) == body(&b) && a.config_hash == b.config_hash, "reports differ under a fixed seed")?;
    Ok("derivatives, Gaussian battery, monotonicity, shift invariance, determinism".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("Gaussian criterion battery", gaussian_battery),
        ("Feynman-Kac cross-validation", feynman_kac),
        ("Girsanov identities", girsanov),
        ("semigroup representation", semigroup),
        ("box exit series and bound", box_exit),
        ("oscillating family dichotomy", example56),
        ("Well-Method bound", well_bound),
        ("Holley-Stroock cross-check", holley_stroock),
        ("property suites", properties),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {tag}: {name} [{:.1?}] {detail}", i + 1, t0.elapsed());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
