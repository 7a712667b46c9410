use serde::{Deserialize, Serialize};

use super::scan::{doubling_radii, grid_scan, shell_trace, ScanBox, ShellStat};
use super::{require_dim, Conclusion, CriteriaError, CriterionReport, CriterionVerdict};
use crate::Potential;

/// A doubling schedule of shells `0.8 R <= |x| <= R` ending at `r_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ShellConfig {
    pub r_max: f64,
    pub shells: usize,
    /// Sampling step along the radial direction.
    pub spacing: f64,
}

impl Default for ShellConfig {
    fn default() -> Self {
        ShellConfig { r_max: 100.0, shells: 4, spacing: 0.005 }
    }
}

impl ShellConfig {
    pub fn radii(&self) -> Vec<f64> {
        doubling_radii(self.r_max, self.shells)
    }

    fn validate(&self) -> Result<(), CriteriaError> {
        if !(self.r_max > 0.0 && self.spacing > 0.0 && self.shells >= 2) {
            return Err(CriteriaError::Invalid("shells need r_max > 0, spacing > 0 and at least 2 shells".into()));
        }
        Ok(())
    }
}

// a shell minimum may drop to this fraction of the previous one and still
// count as stabilized
const STABLE_RATIO: f64 = 0.75;

enum Liminf {
    Positive,
    NonPositive,
    Decaying,
    Unclear,
}

fn classify(trace: &[ShellStat]) -> Liminf {
    let n = trace.len();
    let last = trace[n - 1].min;
    if !last.is_finite() {
        return Liminf::Unclear;
    }
    if last <= 0.0 {
        return Liminf::NonPositive;
    }
    let prev = trace[n - 2].min;
    if !(prev > 0.0) {
        return Liminf::Unclear;
    }
    if last >= STABLE_RATIO * prev {
        Liminf::Positive
    } else {
        Liminf::Decaying
    }
}

fn derivative(p: &Potential, x: &[f64]) -> f64 {
    let mut g = [0.0];
    p.grad_fast(x, &mut g);
    g[0]
}

struct SideConditions {
    ok: bool,
    min_abs_derivative: f64,
    sign_change: bool,
    ratio_last: f64,
    ratio_prev: f64,
}

/// `|F'| > 0` without sign change on the last two shells and
/// `max |F''| / F'^2` decreasing below 1 across them.
fn side_conditions(p: &Potential, radii: &[f64], h: f64) -> SideConditions {
    let n = radii.len();
    let mut min_abs = f64::INFINITY;
    let mut sign_change = false;
    let mut ratios = Vec::new();
    for &r in &radii[n - 2..] {
        let mut ratio = 0.0f64;
        for side in [1.0, -1.0] {
            let m = ((0.2 * r / h).ceil() as usize).max(2);
            let mut sign = 0.0;
            for j in 0..=m {
                let x = [side * (0.8 * r + 0.2 * r * j as f64 / m as f64)];
                let d = derivative(p, &x);
                let d2 = p.hessian_entry_fast(0, 0, &x);
                min_abs = min_abs.min(d.abs());
                if d == 0.0 || (sign != 0.0 && d.signum() != sign) {
                    sign_change = true;
                }
                sign = d.signum();
                ratio = ratio.max(d2.abs() / (d * d));
            }
        }
        ratios.push(ratio);
    }
    let (ratio_prev, ratio_last) = (ratios[0], ratios[1]);
    SideConditions {
        ok: min_abs > 0.0 && !sign_change && ratio_last < 1.0 && ratio_last <= ratio_prev,
        min_abs_derivative: min_abs,
        sign_change,
        ratio_last,
        ratio_prev,
    }
}

fn record_side(r: &mut CriterionReport, s: &SideConditions) {
    r.witness("min_abs_F'", s.min_abs_derivative)
        .witness("F'_sign_change", s.sign_change)
        .witness("F''/F'^2_last_shell", s.ratio_last)
        .witness("F''/F'^2_previous_shell", s.ratio_prev);
}

/// `liminf |F'|^2 > 0` in 1D, estimated by outer-shell minima.
pub fn check_sgp_1d(p: &Potential, shells: &ShellConfig) -> Result<CriterionReport, CriteriaError> {
    require_dim(p, 1)?;
    shells.validate()?;
    let mut r = CriterionReport::new("sgp_1d");
    let radii = shells.radii();
    let trace = shell_trace(1, &radii, shells.spacing, |x| p.grad_norm_sq_fast(x));
    let side = side_conditions(p, &radii, shells.spacing);
    record_side(&mut r, &side);
    let last = trace.last().expect("at least two shells");
    r.witness("C", last.min).witness("argmin", last.argmin.clone());
    match classify(&trace) {
        Liminf::NonPositive => {
            r.conclude(CriterionVerdict::Fails, Conclusion::None);
        }
        Liminf::Decaying => {
            r.note("outer-shell minima of F'^2 decay toward 0");
            r.conclude(CriterionVerdict::Fails, Conclusion::None);
        }
        Liminf::Positive if side.ok => {
            r.conclude(CriterionVerdict::Holds, Conclusion::Sgp);
        }
        Liminf::Positive => {
            r.note("liminf looks positive but the side conditions on F' fail");
        }
        Liminf::Unclear => {
            r.note("outer-shell minima have not stabilized");
        }
    }
    r.shell_evidence("F'^2", trace);
    Ok(r)
}

/// `liminf (|grad F|^2 - lap F) > 0`, estimated by outer-shell minima.
pub fn check_sgp_nd(p: &Potential, shells: &ShellConfig) -> Result<CriterionReport, CriteriaError> {
    shells.validate()?;
    let mut r = CriterionReport::new("sgp_nd");
    let trace = shell_trace(p.dim(), &shells.radii(), shells.spacing, |x| p.schrodinger_fast(x));
    let last = trace.last().expect("at least two shells");
    r.witness("C", last.min).witness("argmin", last.argmin.clone());
    match classify(&trace) {
        Liminf::NonPositive => {
            r.witness("dip_at", last.argmin.clone()).witness("dip_value", last.min);
            r.conclude(CriterionVerdict::Fails, Conclusion::None);
        }
        Liminf::Decaying => {
            r.note("outer-shell minima of V_F decay toward 0");
            r.conclude(CriterionVerdict::Fails, Conclusion::None);
        }
        Liminf::Positive => {
            r.conclude(CriterionVerdict::Holds, Conclusion::Sgp);
        }
        Liminf::Unclear => {
            r.note("outer-shell minima have not stabilized");
        }
    }
    r.shell_evidence("V_F", trace);
    Ok(r)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MalrieuConfig {
    pub a_schedule: Vec<f64>,
    pub shells: ShellConfig,
    /// Allowed relative increase of the running sup over the last doubling.
    pub growth_tolerance: f64,
}

impl Default for MalrieuConfig {
    fn default() -> Self {
        MalrieuConfig {
            a_schedule: vec![2.0, 5.0, 10.0, 20.0],
            shells: ShellConfig { r_max: 1000.0, shells: 5, spacing: 0.005 },
            growth_tolerance: 0.05,
        }
    }
}

/// Boundedness of `F / F'^2 + log|F'| / F'^2` on `{|x| >= A}` in 1D.
pub fn check_malrieu_roberto(p: &Potential, cfg: &MalrieuConfig) -> Result<CriterionReport, CriteriaError> {
    require_dim(p, 1)?;
    cfg.shells.validate()?;
    let mut r = CriterionReport::new("malrieu_roberto");
    let radii = cfg.shells.radii();
    let r_max = cfg.shells.r_max;
    let h = cfg.shells.spacing;
    let side = side_conditions(p, &radii, h);
    record_side(&mut r, &side);
    if !side.ok {
        r.note("side conditions on F' fail on the outer shells");
        return Ok(r);
    }

    // |x|, quantity and F' on both half-lines
    let m = (r_max / h).ceil() as usize;
    let samples: Vec<[f64; 3]> = (0..=m)
        .flat_map(|j| {
            let t = r_max * j as f64 / m as f64;
            [t, -t]
        })
        .map(|t| {
            let x = [t];
            let d = derivative(p, &x);
            let q = (p.value_fast(&x) + d.abs().ln()) / (d * d);
            [t, q, d]
        })
        .collect();
    let mut last_zero = 0.0f64;
    for side in [0usize, 1] {
        let mut prev: Option<f64> = None;
        for s in samples.iter().skip(side).step_by(2) {
            if s[2] == 0.0 || prev.is_some_and(|d| d.signum() != s[2].signum()) {
                last_zero = last_zero.max(s[0].abs());
            }
            prev = Some(s[2]);
        }
    }
    r.witness("outermost_critical_point", last_zero);

    let mut schedule: Vec<f64> = cfg.a_schedule.iter().copied().filter(|&a| a > last_zero).collect();
    if schedule.is_empty() && 1.25 * last_zero + h < radii[0] {
        schedule.push(1.25 * last_zero + h);
    }
    let mut any_evaluated = false;
    let mut growth = None;
    for &a in &schedule {
        let ends: Vec<f64> = radii.iter().copied().filter(|&rr| rr >= 2.0 * a).collect();
        if ends.len() < 2 {
            continue;
        }
        let sups: Vec<f64> = ends
            .iter()
            .map(|&rr| {
                samples
                    .iter()
                    .filter(|s| s[0].abs() >= a && s[0].abs() <= rr)
                    .map(|s| s[1])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        any_evaluated = true;
        let (prev, last) = (sups[sups.len() - 2], sups[sups.len() - 1]);
        r.note(format!("A = {a}: running sup {sups:?} over R = {ends:?}"));
        if last <= prev + cfg.growth_tolerance * prev.abs() {
            r.witness("A", a).witness("sup", last);
            r.conclude(CriterionVerdict::Holds, Conclusion::Tlsi);
            return Ok(r);
        }
        growth = Some(last / prev);
    }
    if any_evaluated {
        if let Some(g) = growth {
            r.witness("sup_growth", g);
        }
        r.conclude(CriterionVerdict::Fails, Conclusion::None);
    } else {
        r.note("no A in the schedule lies beyond the critical points of F with room to double");
    }
    Ok(r)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Remark54Config {
    pub etas: Vec<f64>,
    pub shells: ShellConfig,
    pub theta_max: f64,
    /// The theta fit starts at the first shell where `F` exceeds this.
    pub f_threshold: f64,
}

impl Default for Remark54Config {
    fn default() -> Self {
        Remark54Config {
            etas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            shells: ShellConfig::default(),
            theta_max: 4.0,
            f_threshold: 1e3,
        }
    }
}

const THETA_TOL: f64 = 1e-3;

/// Hypercontractivity from `V_F >= eta F - c`, and ultracontractivity from
/// `V_F >= F^theta - c` with `theta > 1`.
pub fn check_remark54(p: &Potential, cfg: &Remark54Config) -> Result<CriterionReport, CriteriaError> {
    cfg.shells.validate()?;
    let mut r = CriterionReport::new("remark54");
    let dim = p.dim();
    let h = cfg.shells.spacing;
    let radii = cfg.shells.radii();
    let f_trace = shell_trace(dim, &radii, h, |x| p.value_fast(x));
    let n = f_trace.len();
    let coercive = f_trace[n - 1].min > f_trace[n - 2].min && f_trace[n - 1].min > 0.0;
    r.witness("F_shell_min", f_trace[n - 1].min);
    if !coercive {
        r.note("F does not appear to tend to +infinity");
        r.shell_evidence("F", f_trace);
        return Ok(r);
    }

    // (a)
    let mut eta_best = None;
    for &eta in &cfg.etas {
        let t = shell_trace(dim, &radii, h, |x| p.schrodinger_fast(x) - eta * p.value_fast(x));
        let (prev, last) = (t[n - 2].min, t[n - 1].min);
        if last >= prev - 1e-9 * (1.0 + prev.abs()) {
            eta_best = Some(eta_best.map_or(eta, |e: f64| e.max(eta)));
        }
    }
    if let Some(eta) = eta_best {
        let bx = ScanBox::with_spacing(dim, cfg.shells.r_max, h.max(0.01));
        let s = grid_scan(dim, &bx, "V_F - eta F", |x| p.schrodinger_fast(x) - eta * p.value_fast(x));
        r.witness("eta", eta).witness("c", -s.min);
        r.scan_evidence(s);
    }

    // (b)
    let mut r1 = None;
    let mut rr = 1.0;
    while rr <= 1e4 {
        if shell_trace(dim, &[rr], h, |x| p.value_fast(x))[0].min >= cfg.f_threshold {
            r1 = Some(rr);
            break;
        }
        rr *= 2.0;
    }
    let theta = r1.and_then(|r1| {
        let pair = [r1, 8.0 * r1];
        let keeps_up = |theta: f64| {
            let t = shell_trace(dim, &pair, h, |x| p.schrodinger_fast(x) / p.value_fast(x).powf(theta));
            t[0].min > 0.0 && t[1].min > 0.0 && t[1].min >= t[0].min
        };
        if !keeps_up(0.0) {
            return None;
        }
        if keeps_up(cfg.theta_max) {
            return Some(cfg.theta_max);
        }
        let (mut lo, mut hi) = (0.0, cfg.theta_max);
        while hi - lo > 0.1 * THETA_TOL {
            let mid = 0.5 * (lo + hi);
            if keeps_up(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    });
    match (r1, theta) {
        (None, _) => {
            r.note(format!("F stays below {} on the scanned shells; theta not fitted", cfg.f_threshold));
        }
        (Some(r1), Some(th)) => {
            r.witness("theta", th).witness("theta_fit_radius", r1);
        }
        (Some(_), None) => {
            r.note("V_F is not bounded below by a positive power of F");
        }
    }
    r.shell_evidence("F", f_trace);

    let immediate = theta.is_some_and(|th| th > 1.0 + THETA_TOL);
    r.witness("hypercontractive", eta_best.is_some() || immediate);
    r.witness("immediately_hypercontractive", immediate);
    if immediate {
        r.note("V_F >= F^theta - c with theta > 1; ultracontractive with G(y) = y^theta, g(y) = e^y");
        r.conclude(CriterionVerdict::Holds, Conclusion::Ultracontractive);
    } else if eta_best.is_some() {
        r.note("V_F - eta F bounded below: hypercontractive");
        r.conclude(CriterionVerdict::Holds, Conclusion::Hyperbounded);
    } else if theta.is_some_and(|th| th > 0.0 && th < 1.0) {
        r.note("0 < theta < 1: weak hypercontractivity regime");
    } else {
        r.conclude(CriterionVerdict::Fails, Conclusion::None);
    }
    Ok(r)
}
