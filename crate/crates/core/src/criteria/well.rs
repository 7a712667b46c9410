use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::scan::{doubling_radii, grid_scan, shell_trace, GridScan, ScanBox};
use super::{Conclusion, CriteriaError, CriterionReport, CriterionVerdict, Evidence};
use crate::potential::default_lyapunov;
use crate::quadrature::{
    integrate_log_for, lr_norm_expf, normalization, normalize, IntegralResult, QuadratureConfig, Verdict,
};
use crate::stochastic::{exit_time_prob, ExitRule, McConfig, LOG_OVERFLOW};
use crate::Potential;

/// Quadrature and scan settings shared by the integral criteria.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WellConfig {
    pub quadrature: QuadratureConfig,
    /// Half-width of the scan box.
    pub scan_radius: f64,
    /// Grid step of the scan in 1D (coarser in higher dimensions).
    pub spacing: f64,
    pub shells: usize,
}

impl Default for WellConfig {
    fn default() -> Self {
        WellConfig { quadrature: QuadratureConfig::default(), scan_radius: 100.0, spacing: 0.01, shells: 4 }
    }
}

/// Same settings, named after the operation that uses them alone.
pub type HypothesesConfig = WellConfig;

impl WellConfig {
    fn scan_box(&self, dim: usize) -> ScanBox {
        ScanBox::with_spacing(dim, self.scan_radius, self.spacing)
    }

    fn radii(&self) -> Vec<f64> {
        doubling_radii(self.scan_radius, self.shells.max(2))
    }
}

fn slack(v: f64) -> f64 {
    1e-9 * (1.0 + v.abs())
}

fn verdict_of(res: &IntegralResult) -> CriterionVerdict {
    match res.verdict {
        Verdict::Finite => CriterionVerdict::Holds,
        Verdict::Divergent => CriterionVerdict::Fails,
        Verdict::Inconclusive => CriterionVerdict::Inconclusive,
    }
}

/// H(F): normalizability, `|grad F|^2` integrable, and Lyapunov control
/// `lap psi - grad F . grad psi <= K` (default `psi = log(1 + |x|^2)`).
pub fn check_hypotheses(
    p: &Potential,
    psi: Option<&Potential>,
    cfg: &WellConfig,
) -> Result<CriterionReport, CriteriaError> {
    let mut r = CriterionReport::new("hypotheses");
    let dim = p.dim();
    let default_psi;
    let psi = match psi {
        Some(q) => {
            super::require_dim(q, dim)?;
            q
        }
        None => {
            default_psi = default_lyapunov(dim);
            &default_psi
        }
    };

    let z = normalization(p, &cfg.quadrature)?;
    let norm_verdict = verdict_of(&z);
    r.witness("normalizable", z.is_finite());
    if !z.is_finite() {
        r.integral_evidence("normalization", z);
        if norm_verdict == CriterionVerdict::Fails {
            r.note("exp(-2F) is not integrable");
        }
        r.conclude(norm_verdict, Conclusion::None);
        return Ok(r);
    }
    let log_z = z.log_value;
    r.witness("Z", z.value.unwrap_or(f64::NAN));
    r.integral_evidence("normalization", z);

    let energy = integrate_log_for(p, &|x: &[f64]| p.grad_norm_sq_fast(x).ln() - 2.0 * p.value_fast(x) - log_z, &cfg.quadrature)?;
    let energy_verdict = verdict_of(&energy);
    r.witness("grad_energy", energy.value.unwrap_or(f64::NAN));
    r.integral_evidence("|grad F|^2 dnu_F", energy);

    let lyap = |x: &[f64]| {
        let mut g = vec![0.0; x.len()];
        let mut gp = vec![0.0; x.len()];
        p.grad_fast(x, &mut g);
        psi.grad_fast(x, &mut gp);
        psi.laplacian_fast(x) - g.iter().zip(&gp).map(|(a, b)| a * b).sum::<f64>()
    };
    let scan = grid_scan(dim, &cfg.scan_box(dim), "lap psi - grad F . grad psi", lyap);
    let trace = shell_trace(dim, &cfg.radii(), cfg.spacing, lyap);
    let n = trace.len();
    let (prev, last) = (trace[n - 2].max, trace[n - 1].max);
    let lyap_bounded = last <= prev + slack(prev) || last < scan.max - slack(scan.max);
    r.witness("K", scan.max).witness("lyapunov_bounded", lyap_bounded);
    r.scan_evidence(scan);
    r.shell_evidence("lap psi - grad F . grad psi", trace);

    if energy_verdict == CriterionVerdict::Fails || !lyap_bounded {
        r.conclude(CriterionVerdict::Fails, Conclusion::None);
    } else if energy_verdict == CriterionVerdict::Holds {
        r.conclude(CriterionVerdict::Holds, Conclusion::HypothesesHf);
    }
    Ok(r)
}

/// Hypotheses and the lower bound `W >= -c`, shared by every thm48 call on
/// one potential.
struct Prechecks {
    hypotheses: CriterionReport,
    w_scan: GridScan,
    w_bounded_below: bool,
    c: f64,
}

fn prechecks(p: &Potential, cfg: &WellConfig) -> Result<Prechecks, CriteriaError> {
    let hypotheses = check_hypotheses(p, None, cfg)?;
    let dim = p.dim();
    let w_scan = grid_scan(dim, &cfg.scan_box(dim), "W", |x| p.well_fast(x));
    let trace = shell_trace(dim, &cfg.radii(), cfg.spacing, |x| p.well_fast(x));
    let n = trace.len();
    let (prev, last) = (trace[n - 2].min, trace[n - 1].min);
    let w_bounded_below = last >= prev - slack(prev) || last > w_scan.min + slack(w_scan.min);
    let c = (-w_scan.min).max(0.0);
    Ok(Prechecks { hypotheses, w_scan, w_bounded_below, c })
}

const THM48_LABEL: &str = "exp(beta F - lambda W)";

fn thm48_core(p: &Potential, beta: f64, lambda: f64, pre: &Prechecks, cfg: &WellConfig) -> Result<CriterionReport, CriteriaError> {
    if !(beta > 0.0 && lambda > 0.0) {
        return Err(CriteriaError::Invalid(format!("beta and lambda must be positive, got ({beta}, {lambda})")));
    }
    let mut r = CriterionReport::new("thm48");
    r.witness("beta", beta).witness("lambda", lambda).witness("c", pre.c);
    r.witness("w_bounded_below", pre.w_bounded_below);
    if !pre.hypotheses.holds() {
        r.note("standing hypotheses not verified");
        r.evidence.push(Evidence::Report { report: Box::new(pre.hypotheses.clone()) });
        return Ok(r);
    }
    if !pre.w_bounded_below {
        r.note("hypothesis W >= -c unverified: the scanned minimum of W keeps dropping outward");
    }
    let res = integrate_log_for(p, &|x: &[f64]| beta * p.value_fast(x) - lambda * p.well_fast(x), &cfg.quadrature)?;
    let v = verdict_of(&res);
    r.witness("log_integral", res.log_value);
    if let Some(val) = res.value {
        r.witness("integral", val);
    }
    r.integral_evidence(THM48_LABEL, res);
    if v == CriterionVerdict::Holds {
        r.note("DLSI; tightened to TLSI since the weak spectral gap holds for smooth F");
    }
    r.conclude(v, Conclusion::Tlsi);
    Ok(r)
}

/// `∫ exp(beta F - lambda W) dx < inf` (raw F; the verdict is shift invariant).
pub fn check_thm48(p: &Potential, beta: f64, lambda: f64, cfg: &WellConfig) -> Result<CriterionReport, CriteriaError> {
    let pre = prechecks(p, cfg)?;
    let mut r = thm48_core(p, beta, lambda, &pre, cfg)?;
    r.scan_evidence(pre.w_scan);
    Ok(r)
}

/// The thm48 integral over a finite grid of `(beta, lambda)` pairs.
pub fn check_immediate_hyper(
    p: &Potential,
    betas: &[f64],
    lambdas: &[f64],
    cfg: &WellConfig,
) -> Result<CriterionReport, CriteriaError> {
    if betas.is_empty() || lambdas.is_empty() {
        return Err(CriteriaError::Invalid("empty (beta, lambda) grid".into()));
    }
    let pre = prechecks(p, cfg)?;
    if pre.hypotheses.witnesses.get("normalizable") == Some(&super::Witness::Flag(false)) {
        return Err(CriteriaError::Invalid("nu_F is not normalizable".into()));
    }
    let mut r = CriterionReport::new("immediate_hyper");
    let mut finite = 0usize;
    let mut first_failure: Option<CriterionReport> = None;
    let mut any_divergent = false;
    for &b in betas {
        for &l in lambdas {
            let t = thm48_core(p, b, l, &pre, cfg)?;
            if t.holds() {
                finite += 1;
            } else {
                any_divergent |= t.fails();
                if first_failure.is_none() {
                    r.witness("beta", b).witness("lambda", l);
                    first_failure = Some(t);
                }
            }
        }
    }
    let total = betas.len() * lambdas.len();
    r.witness("finite_pairs", finite as f64).witness("pairs", total as f64);
    if let Some(t) = first_failure {
        r.evidence.push(Evidence::Report { report: Box::new(t) });
        if any_divergent {
            r.conclude(CriterionVerdict::Fails, Conclusion::None);
        }
    } else {
        r.note("finite at every pair of the grid; the full statement needs every positive pair");
        r.conclude(CriterionVerdict::Holds, Conclusion::ImmediatelyHyperbounded);
    }
    Ok(r)
}

/// SGP by comparison with `mu_rho ∝ exp(-2 rho |x|^2)` (TLSI constant
/// `C1 = 1/(2 rho)`): `∫ exp((2 C1 + eps) G_rho^-) dmu_rho < inf` with
/// `G_rho = W - 2 rho^2 |x|^2 + rho N`.
pub fn check_gong_wu(p: &Potential, rho: f64, eps: f64, cfg: &WellConfig) -> Result<CriterionReport, CriteriaError> {
    if !(rho > 0.0 && eps > 0.0) {
        return Err(CriteriaError::Invalid(format!("rho and eps must be positive, got ({rho}, {eps})")));
    }
    let dim = p.dim();
    let mut r = CriterionReport::new("gong_wu");
    let c1 = 0.5 / rho;
    let g = |x: &[f64]| p.well_fast(x) - 2.0 * rho * rho * x.iter().map(|v| v * v).sum::<f64>() + rho * dim as f64;
    let log_z_rho = 0.5 * dim as f64 * (std::f64::consts::PI / (2.0 * rho)).ln();
    let log_g = |x: &[f64]| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (2.0 * c1 + eps) * (-g(x)).max(0.0) - 2.0 * rho * r2 - log_z_rho
    };
    let res = if dim >= 4 {
        crate::quadrature::integrate_log_mc(&log_g, &vec![0.5 / rho.sqrt(); dim], &cfg.quadrature)?
    } else {
        crate::quadrature::integrate_log(&log_g, dim, &cfg.quadrature)?
    };
    let scan = grid_scan(dim, &cfg.scan_box(dim), "G_rho", g);
    r.witness("C1", c1).witness("rho", rho).witness("eps", eps);
    r.witness("G_min", scan.min).witness("G_argmin", scan.argmin.clone());
    r.witness("log_integral", res.log_value);
    let v = verdict_of(&res);
    r.integral_evidence("exp((2 C1 + eps) G^-) dmu_rho", res);
    r.scan_evidence(scan);
    r.conclude(v, Conclusion::Sgp);
    Ok(r)
}

const LR_ORDERS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// TLSI from a finite thm48 integral plus either (1) `W` bounded below and
/// `exp(F)` in some `L^r(nu_F)`, or (2) `F` bounded below and `lambda > 1/rho`.
pub fn check_cor_ls5(
    p: &Potential,
    beta: f64,
    lambda: f64,
    rho: f64,
    cfg: &WellConfig,
) -> Result<CriterionReport, CriteriaError> {
    if !(rho > 0.0) {
        return Err(CriteriaError::Invalid("rho must be positive".into()));
    }
    let pre = prechecks(p, cfg)?;
    let t48 = thm48_core(p, beta, lambda, &pre, cfg)?;
    let mut r = CriterionReport::new("cor_ls5");
    r.witness("beta", beta).witness("lambda", lambda).witness("rho", rho);
    if !t48.holds() {
        r.note("the thm48 integral is not finite, so cor_ls5 does not apply");
        r.evidence.push(Evidence::Report { report: Box::new(t48) });
        return Ok(r);
    }

    let mut orders = Vec::new();
    if pre.w_bounded_below {
        for rr in LR_ORDERS {
            if lr_norm_expf(p, rr, &cfg.quadrature)?.is_finite() {
                orders.push(rr);
            }
        }
    }
    let branch1 = pre.w_bounded_below && !orders.is_empty();
    r.witness("w_bounded_below", pre.w_bounded_below).witness("lr_orders", orders);

    let dim = p.dim();
    let f_scan = grid_scan(dim, &cfg.scan_box(dim), "F", |x| p.value_fast(x));
    let f_bounded_below = f_scan.min.is_finite() && f_scan.liminf_estimate > f_scan.min - slack(f_scan.min);
    let f_bounded_below = f_bounded_below && f_scan.liminf_estimate >= f_scan.interior_min - slack(f_scan.interior_min);
    let branch2 = f_bounded_below && lambda > 1.0 / rho;
    r.witness("F_min", f_scan.min).witness("f_bounded_below", f_bounded_below);
    r.witness("branch1", branch1).witness("branch2", branch2);
    r.evidence.push(Evidence::Report { report: Box::new(t48) });
    r.scan_evidence(f_scan);
    if branch1 || branch2 {
        r.conclude(CriterionVerdict::Holds, Conclusion::Tlsi);
    } else {
        r.note("neither side condition could be verified");
    }
    Ok(r)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Thm410Config {
    pub well: WellConfig,
    /// Outer quadrature; every node costs a Monte Carlo run, so it is coarse.
    pub quadrature: QuadratureConfig,
    pub mc: McConfig,
    /// Orders `r > 1` tried for `exp(F)` in `L^r(nu_F)`.
    pub lr_orders: Vec<f64>,
    pub max_failure_rate: f64,
    /// Nodes whose deterministic part lies this far (in log) below a finite
    /// thm48 integral skip the simulation; the probability factor is then
    /// bounded by 1.
    pub negligible_log: f64,
}

impl Default for Thm410Config {
    fn default() -> Self {
        Thm410Config {
            well: WellConfig::default(),
            quadrature: QuadratureConfig {
                tolerance: 0.2,
                radii: (1..=8).map(|k| f64::powi(2.0, k)).collect(),
                max_subdivisions: 200,
                early_divergence: true,
                ..QuadratureConfig::default()
            },
            mc: McConfig { dt: 2e-3, n_paths: 1000, ..McConfig::default() },
            lr_orders: vec![1.5, 1.25, 1.1],
            max_failure_rate: 0.05,
            negligible_log: 40.0,
        }
    }
}

/// `∫ exp(beta F - lambda W) P_x(tau_x > s)^{2+beta} dx` with
/// `s = lambda / (2 (2 + beta))`, the survival probability simulated at each
/// node. Divergence rules out DLSI through the contrapositive; a finite value
/// decides nothing.
pub fn necessary_condition_thm410(
    p: &Potential,
    beta: f64,
    lambda: f64,
    cfg: &Thm410Config,
) -> Result<CriterionReport, CriteriaError> {
    if !(beta > 0.0 && lambda > 0.0) {
        return Err(CriteriaError::Invalid(format!("beta and lambda must be positive, got ({beta}, {lambda})")));
    }
    let mut r = CriterionReport::new("necessary_thm410");
    let s = lambda / (2.0 * (2.0 + beta));
    r.witness("beta", beta).witness("lambda", lambda).witness("s", s).witness("exponent", 2.0 + beta);
    r.note("probability factor read as P_x(tau_x > lambda / (2 (2 + beta)))^(2 + beta)");

    let pre = prechecks(p, &cfg.well)?;
    if !pre.hypotheses.holds() {
        r.note("standing hypotheses not verified");
        r.evidence.push(Evidence::Report { report: Box::new(pre.hypotheses) });
        return Ok(r);
    }
    let mut lr_ok = None;
    for &rr in &cfg.lr_orders {
        if rr > 1.0 && lr_norm_expf(p, rr, &cfg.well.quadrature)?.is_finite() {
            lr_ok = Some(rr);
            break;
        }
    }
    match lr_ok {
        Some(rr) => r.witness("lr_order", rr),
        None => {
            r.note("exp(F) is not in L^r(nu_F) for any tried r > 1");
            return Ok(r);
        }
    };

    let (pn, _) = normalize(p, &cfg.well.quadrature)?;
    let t48 = thm48_core(p, beta, lambda, &pre, &cfg.well)?;
    let log48 = t48.integral(THM48_LABEL).filter(|i| i.is_finite()).map(|i| i.log_value);

    let mc_nodes = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let log_g = |x: &[f64]| {
        let det = beta * p.value_fast(x) - lambda * p.well_fast(x);
        if !det.is_finite() {
            return f64::NAN;
        }
        if det < -LOG_OVERFLOW || log48.is_some_and(|l| det < l - cfg.negligible_log) {
            return det;
        }
        mc_nodes.fetch_add(1, Ordering::Relaxed);
        match exit_time_prob(&pn, x, s, ExitRule::WellDoubling, &cfg.mc) {
            Ok(e) if e.mean > 0.0 => det + (2.0 + beta) * e.mean.ln(),
            Ok(_) => f64::NEG_INFINITY,
            Err(_) => {
                failed.fetch_add(1, Ordering::Relaxed);
                f64::NAN
            }
        }
    };
    let res = integrate_log_for(p, &log_g, &cfg.quadrature)?;
    let nodes = mc_nodes.load(Ordering::Relaxed);
    let bad = failed.load(Ordering::Relaxed);
    r.witness("mc_nodes", nodes as f64).witness("failed_nodes", bad as f64);
    r.witness("log_integral", res.log_value);
    if let Some(l) = log48 {
        r.witness("thm48_log_integral", l);
    }
    let v = res.verdict;
    r.integral_evidence("necessary integral", res);
    r.evidence.push(Evidence::Report { report: Box::new(t48) });
    if nodes > 0 && bad as f64 > cfg.max_failure_rate * nodes as f64 {
        r.note("too many nodes where the survival probability could not be simulated");
        return Ok(r);
    }
    match v {
        Verdict::Divergent => {
            r.witness("dlsi_fails", true);
            r.note("divergent at this (beta, lambda): DLSI fails by the contrapositive");
            r.conclude(CriterionVerdict::Fails, Conclusion::None);
        }
        Verdict::Finite => {
            r.witness("necessary_condition_met", true);
            r.note("finite: the necessary condition is met, DLSI is not decided");
        }
        Verdict::Inconclusive => {}
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pot(s: &str) -> Potential {
        Potential::parse(s, 1).unwrap()
    }

    #[test]
    fn hypotheses_cases() {
        let cfg = WellConfig::default();
        let r = check_hypotheses(&pot("x^2"), None, &cfg).unwrap();
        assert!(r.holds(), "{r:?}");
        assert_eq!(r.conclusion, Conclusion::HypothesesHf);
        assert!(r.real("K").unwrap().is_finite());
        assert!(check_hypotheses(&pot("3*x"), None, &cfg).unwrap().fails());
        let e = check_hypotheses(&Potential::example56(-2.0), None, &cfg).unwrap();
        assert_eq!(e.flag("normalizable"), Some(true));
        assert!(e.real("grad_energy").unwrap().is_finite());
    }

    #[test]
    fn thm48_gaussian_closed_form() {
        let r = check_thm48(&pot("x^2"), 1.0, 1.0, &WellConfig::default()).unwrap();
        assert!(r.holds());
        let exact = std::f64::consts::E * std::f64::consts::PI.sqrt();
        assert!((r.real("integral").unwrap() / exact - 1.0).abs() < 1e-6);
        assert!((r.real("c").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thm48_quartic_and_example56() {
        let cfg = WellConfig::default();
        assert!(check_thm48(&pot("x^4"), 1.0, 0.1, &cfg).unwrap().holds());
        let e = check_thm48(&Potential::example56(-2.0), 1.0, 1.0, &cfg).unwrap();
        assert!(e.fails(), "{e:?}");
    }

    #[test]
    fn immediate_hyper_cases() {
        let cfg = WellConfig::default();
        let betas = [1.0, 2.0, 4.0, 8.0, 16.0];
        let lambdas = [1.0 / 16.0, 0.125, 0.25, 0.5, 1.0];
        let q = check_immediate_hyper(&pot("x^4"), &betas, &lambdas, &cfg).unwrap();
        assert!(q.holds(), "{q:?}");
        let g = check_immediate_hyper(&pot("x^2"), &betas, &lambdas, &cfg).unwrap();
        assert!(g.fails());
        assert!(g.real("beta").unwrap() > 2.0 * g.real("lambda").unwrap());
        assert!(check_immediate_hyper(&pot("0*x"), &betas, &lambdas, &cfg).is_err());
    }

    #[test]
    fn gong_wu_cases() {
        let cfg = WellConfig::default();
        let r = check_gong_wu(&pot("x^2"), 1.0, 0.1, &cfg).unwrap();
        assert!(r.holds());
        assert!(r.real("log_integral").unwrap().abs() < 1e-8);
        assert!(check_gong_wu(&pot("x^2"), 0.5, 0.1, &cfg).unwrap().holds());
    }

    #[test]
    fn cor_ls5_branches() {
        let cfg = WellConfig::default();
        let r = check_cor_ls5(&pot("x^2"), 1.0, 1.0, 1.0, &cfg).unwrap();
        assert!(r.holds());
        assert_eq!(r.flag("branch1"), Some(true));
        let q = check_cor_ls5(&pot("x^4"), 1.0, 4.0, 1.0, &cfg).unwrap();
        assert!(q.holds());
        assert_eq!(q.flag("branch2"), Some(true));
    }

    #[test]
    fn thm410_gaussian_is_finite() {
        let r = necessary_condition_thm410(&pot("x^2"), 1.0, 1.0, &Thm410Config::default()).unwrap();
        assert_eq!(r.flag("necessary_condition_met"), Some(true), "{r:?}");
        assert!(!r.fails());
    }
}
