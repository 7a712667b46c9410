use boltzmann_core::potential::{parse_expr, Potential};
use boltzmann_core::stochastic::*;

/// E_x[exp(-int_0^t (2 X^2 - 1) ds)] for Brownian X, i.e. E_x[M_t] for F = x^2.
fn fk_closed_form(x: f64, t: f64) -> f64 {
    t.exp() * (2.0 * t).cosh().powf(-0.5) * (-x * x * (2.0 * t).tanh()).exp()
}

/// Crank-Nicolson for u_t = u_xx / 2 + (1 - 2x^2) u, u(0, .) = 1, u = 0 at x = +-L.
fn crank_nicolson(t: f64, points: &[f64]) -> Vec<f64> {
    let l = 10.0;
    let m = 4001;
    let dx = 2.0 * l / (m - 1) as f64;
    let steps = (t / 5e-4).round() as usize;
    let dt = t / steps as f64;
    let xs: Vec<f64> = (0..m).map(|i| -l + dx * i as f64).collect();
    let pot: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x * x).collect();
    let mut u = vec![1.0; m];
    u[0] = 0.0;
    u[m - 1] = 0.0;
    let r = 0.5 * dt / (dx * dx);
    // interior unknowns 1..m-1
    let n = m - 2;
    let a = -0.5 * r;
    let mut rhs = vec![0.0; n];
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    for _ in 0..steps {
        for i in 0..n {
            let j = i + 1;
            rhs[i] = u[j] + 0.5 * r * (u[j + 1] - 2.0 * u[j] + u[j - 1]) + 0.5 * dt * pot[j] * u[j];
        }
        // Thomas algorithm on (1 + r - dt/2 V) on the diagonal, -r/2 off it
        for i in 0..n {
            let b = 1.0 + r - 0.5 * dt * pot[i + 1];
            if i == 0 {
                cp[0] = a / b;
                dp[0] = rhs[0] / b;
            } else {
                let den = b - a * cp[i - 1];
                cp[i] = a / den;
                dp[i] = (rhs[i] - a * dp[i - 1]) / den;
            }
        }
        for i in (0..n).rev() {
            u[i + 1] = if i == n - 1 { dp[i] } else { dp[i] - cp[i] * u[i + 2] };
        }
    }
    points
        .iter()
        .map(|&x| {
            let i = ((x + l) / dx).round() as usize;
            u[i]
        })
        .collect()
}

#[test]
fn crank_nicolson_confirms_feynman_kac_oracle() {
    for &t in &[0.25, 0.5] {
        let xs = [0.0, 1.0, 2.0];
        let pde = crank_nicolson(t, &xs);
        for (x, u) in xs.iter().zip(pde) {
            let exact = fk_closed_form(*x, t);
            assert!((u - exact).abs() < 1e-5 * exact, "x={x} t={t}: {u} vs {exact}");
        }
    }
    // the regression constant quoted for x = 0, t = 1/2
    assert!((fk_closed_form(0.0, 0.5) - 1.3272).abs() < 1e-4);
}

#[test]
fn estimate_em_matches_oracle() {
    let p = Potential::parse("x^2", 1).unwrap();
    let cfg = McConfig::default().with_paths(20_000);
    for &(x, t) in &[(0.0, 0.5), (1.0, 0.25), (2.0, 0.25)] {
        let e = estimate_em(&p, &[x], t, &cfg).unwrap();
        let exact = fk_closed_form(x, t);
        assert!(e.z_score(exact) < 3.0, "x={x} t={t}: {} +- {} vs {exact}", e.mean, e.std_error);
    }
}

#[test]
fn short_time_limit() {
    let p = Potential::parse("x^2", 1).unwrap();
    let t = 1e-3;
    let e = estimate_em(&p, &[0.5], t, &McConfig::default().with_paths(1000).with_dt(1e-4)).unwrap();
    // |1/2 F'' - 1/2 F'^2| <= 1 + 2 x^2 near x = 0.5
    assert!((e.mean - 1.0).abs() <= t * 1.6 + 3.0 * e.std_error);
}

#[test]
fn em_bounded_by_scan_constant() {
    // W = 2x^2 - 1 >= -1
    let p = Potential::parse("x^2", 1).unwrap();
    for &x in &[0.0, 0.3, 1.5] {
        let e = estimate_em(&p, &[x], 1.0, &McConfig::default().with_paths(2000).with_dt(1e-2)).unwrap();
        assert!(e.mean <= 1f64.exp() + 3.0 * e.std_error);
    }
    let q = Potential::parse("x^4", 1).unwrap();
    let b = simulate_brownian(&[0.0], 1.0, &McConfig::default().with_paths(500).with_dt(1e-2)).unwrap();
    // W = 8x^6 - 6x^2 has its minimum -2 at x^2 = 1/2
    let c = 2.0;
    weight_m(&q, &b, Some(c)).unwrap();
}

#[test]
fn girsanov_martingale() {
    let cfg = McConfig::default().with_paths(20_000).with_dt(2e-3);
    for expr in ["x^2", "x^4 - x^2", "x^2 + sin(x)"] {
        let p = Potential::parse(expr, 1).unwrap();
        for &x in &[0.0, 1.0] {
            for &t in &[0.25, 1.0] {
                let e = estimate_ez(&p, &[x], t, &cfg).unwrap();
                assert!(e.z_score(1.0) < 4.0, "{expr} x={x} t={t}: {} +- {}", e.mean, e.std_error);
            }
        }
    }
}

#[test]
fn girsanov_identity_converges_at_half_order() {
    let p = Potential::parse("x^2", 1).unwrap();
    let dts = [4e-3, 1e-3, 2.5e-4];
    let rms: Vec<f64> = dts
        .iter()
        .map(|&dt| girsanov_identity_rms(&p, &[0.0], 0.5, &McConfig::default().with_paths(4000).with_dt(dt)).unwrap())
        .collect();
    let slope = (rms[0].ln() - rms[2].ln()) / (dts[0].ln() - dts[2].ln());
    assert!((slope - 0.5).abs() < 0.1, "slope {slope}, rms {rms:?}");
}

#[test]
fn perturbed_semigroup_ou_forms() {
    let p = Potential::parse("x^2", 1).unwrap();
    let cfg = McConfig::default().with_paths(20_000);
    let id = parse_expr("x", 1).unwrap();
    let r = perturbed_expectation(&p, &id, &[1.0], 1.0, &cfg).unwrap();
    assert!(r.joint_z < 4.0, "{r:?}");
    let m = (-2.0f64).exp();
    assert!(r.sde.z_score(m) < 3.0 && r.girsanov.z_score(m) < 3.0, "{r:?}");

    let one = parse_expr("1", 1).unwrap();
    let r = perturbed_expectation(&p, &one, &[0.5], 0.5, &cfg).unwrap();
    assert!(r.girsanov.z_score(1.0) < 4.0);
    assert_eq!(r.sde.mean, 1.0);
}

#[test]
fn box_series_against_bridge_monte_carlo() {
    let exact = exit_prob_box(1.0, 1.0, 1).unwrap().probability;
    let mc = box_survival_bridge(1.0, 1.0, &McConfig::default().with_paths(50_000).with_dt(1e-2)).unwrap();
    assert!(mc.z_score(exact) < 3.0, "{} +- {} vs {exact}", mc.mean, mc.std_error);
    for i in 0..=18 {
        let tau = 1.0 + 0.5 * i as f64;
        let r = exit_prob_box(1.0, tau, 1).unwrap();
        assert!(r.probability * (THETA_1 * tau).exp() >= 1.0 - 1e-3);
    }
}

#[test]
fn box_rule_discrete_monitoring_bias_is_small() {
    // discrete monitoring overestimates survival by O(sqrt(dt))
    let zero = Potential::parse("0*x", 1).unwrap();
    let exact = exit_prob_box(1.0, 1.0, 1).unwrap().probability;
    let e = exit_time_prob(
        &zero,
        &[0.0],
        1.0,
        ExitRule::Box { radius: 1.0 },
        &McConfig::default().with_paths(20_000).with_dt(1e-4),
    )
    .unwrap();
    assert!(e.mean >= exact - 3.0 * e.std_error);
    assert!(e.mean - exact < 0.02);
}

#[test]
fn well_bound_dominates_em() {
    let (p, _) = boltzmann_core::quadrature::normalize(
        &Potential::parse("x^2", 1).unwrap(),
        &Default::default(),
    )
    .unwrap();
    let cfg = McConfig::default().with_paths(4000).with_dt(1e-2);
    for i in 0..20 {
        let x = -3.0 + 6.0 * i as f64 / 19.0;
        let e = estimate_em(&p, &[x], 1.0, &cfg).unwrap();
        let b = well_bound_47(&p, &[x], 1.0, 0.5, 1.0).unwrap();
        assert!(e.mean <= b + 3.0 * e.std_error, "x={x}: {} vs {b}", e.mean);
    }
}

#[test]
fn relaxation_rate_matches_ou_gap() {
    let p = Potential::parse("x^2", 1).unwrap();
    let h = parse_expr("x", 1).unwrap();
    let lags = [0.1, 0.2, 0.3, 0.4, 0.5];
    let fit = relaxation_rate(&p, &h, &[0.0], 2.0, &lags, &McConfig::default().with_paths(20_000).with_dt(2e-3)).unwrap();
    assert!((fit.rate - 2.0).abs() < 0.2, "{fit:?}");
}

#[test]
fn window_lower_bound_holds() {
    let p = Potential::example56(-2.0);
    let k = 25u32;
    let y = 2.0 * std::f64::consts::PI * k as f64 + 1.0 / (k as f64).sqrt();
    let r = lower_bound_56(&p, y, 0.05, k, 0.5, 14.2, &McConfig::default().with_paths(4000)).unwrap();
    assert!(r.holds, "{r:?}");
    let loose = lower_bound_56(&p, y, 0.05, k, 0.99, 14.2, &McConfig::default().with_paths(4000)).unwrap();
    assert!(loose.bound < r.bound);
}
