//! Improper integrals over R^N with a three-valued finite/divergent verdict.
//!
//! Integrands are non-negative and handled in log space throughout: every
//! panel is evaluated relative to its own largest node value and panels are
//! combined with log-sum-exp, so integrands such as `exp(beta F - lambda W)`
//! never overflow. On R the domain is exhausted by the symmetric truncations
//! `[-R, R]` for `R` in the configured schedule; each annulus between two
//! radii is integrated with adaptive Gauss-Kronrod (7/15) subdivision and the
//! sequence of truncated values drives the verdict.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{log_add, log_sum_exp};
use crate::potential::Potential;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuadratureError {
    #[error("invalid quadrature configuration: {0}")]
    InvalidConfig(String),
    #[error("integrand is undefined at every quadrature node")]
    AllNodesInvalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Finite,
    Divergent,
    Inconclusive,
}

/// One truncation level of an improper integral.
#[derive(Debug, Clone, Serialize)]
pub struct Truncation {
    pub radius: f64,
    /// `exp(log_value)`; may be `inf` when only the log is representable.
    pub value: f64,
    pub log_value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegralResult {
    /// Present only when `verdict == Finite`.
    pub value: Option<f64>,
    /// Log of the largest truncated value, available for every verdict.
    pub log_value: f64,
    pub error_estimate: f64,
    pub verdict: Verdict,
    pub diagnostics: Vec<Truncation>,
    /// Nodes where the integrand was undefined and got excluded.
    pub excluded_nodes: usize,
    /// Some node value overflowed; counted as divergence evidence.
    pub overflow: bool,
    /// Some annulus hit the subdivision limit before reaching tolerance.
    pub unresolved: bool,
}

impl IntegralResult {
    pub fn is_finite(&self) -> bool {
        self.verdict == Verdict::Finite
    }

    /// Scale by `exp(log_c)`, e.g. to divide by a normalization constant.
    pub fn scaled_log(mut self, log_c: f64) -> Self {
        let c = log_c.exp();
        self.value = self.value.map(|v| v * c);
        self.log_value += log_c;
        self.error_estimate *= c;
        for t in &mut self.diagnostics {
            t.log_value += log_c;
            t.value = t.log_value.exp();
        }
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    /// Relative tolerance.
    pub tolerance: f64,
    /// Truncation radii, strictly increasing.
    pub radii: Vec<f64>,
    pub divergence_threshold: f64,
    /// Maximum panel splits per annulus.
    pub max_subdivisions: usize,
    /// Width of the initial panels that tile each annulus.
    pub initial_panel_width: f64,
    /// Sample count for the Monte Carlo rule used when N >= 4.
    pub mc_samples: usize,
    pub seed: u64,
    /// Stop at the first radius where the divergence test already fires.
    /// Meant for integrands that are expensive per node.
    pub early_divergence: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            tolerance: 1e-8,
            radii: (1..=10).map(|k| f64::powi(2.0, k)).collect(),
            divergence_threshold: 1e12,
            max_subdivisions: 2000,
            initial_panel_width: 1.0,
            mc_samples: 200_000,
            seed: 0x5eed,
            early_divergence: false,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<(), QuadratureError> {
        if !(self.tolerance > 0.0) {
            return Err(QuadratureError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.radii.is_empty() || self.radii[0] <= 0.0 {
            return Err(QuadratureError::InvalidConfig("radii must be positive and non-empty".into()));
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QuadratureError::InvalidConfig("radii must be strictly increasing".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(QuadratureError::InvalidConfig("divergence threshold must be positive".into()));
        }
        if !(self.initial_panel_width > 0.0) || self.max_subdivisions == 0 {
            return Err(QuadratureError::InvalidConfig("panel parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn with_radii(mut self, radii: Vec<f64>) -> Self {
        self.radii = radii;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

// Decay ratios used by the verdict heuristics.
const TAIL_DECAY: f64 = 0.5;
const GROWTH_RATIO: f64 = 0.6;
const INF_PERSIST: f64 = 0.49;

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    log_val: f64,
    log_err: f64,
    log_min: f64,
    excluded: usize,
    overflow: bool,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.log_err == other.log_err
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.log_err.total_cmp(&other.log_err)
    }
}

fn sanitize(l: f64, excluded: &mut usize, overflow: &mut bool) -> f64 {
    if l.is_nan() {
        *excluded += 1;
        f64::NEG_INFINITY
    } else if l == f64::INFINITY {
        *overflow = true;
        f64::NEG_INFINITY
    } else {
        l
    }
}

fn gk15<F: Fn(f64) -> f64 + ?Sized>(log_g: &F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut excluded = 0;
    let mut overflow = false;
    let mut vals = [0.0f64; 15];
    vals[7] = sanitize(log_g(c), &mut excluded, &mut overflow);
    for j in 0..7 {
        let dx = h * XGK[j];
        vals[j] = sanitize(log_g(c - dx), &mut excluded, &mut overflow);
        vals[14 - j] = sanitize(log_g(c + dx), &mut excluded, &mut overflow);
    }
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_min = vals.iter().copied().fold(f64::INFINITY, f64::min);
    if m == f64::NEG_INFINITY {
        return Panel {
            a,
            b,
            log_val: f64::NEG_INFINITY,
            log_err: f64::NEG_INFINITY,
            log_min,
            excluded,
            overflow,
        };
    }
    let e = |l: f64| (l - m).exp();
    let mut kron = WGK[7] * e(vals[7]);
    let mut gauss = WG[3] * e(vals[7]);
    for j in 0..7 {
        let pair = e(vals[j]) + e(vals[14 - j]);
        kron += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let log_h = h.ln();
    let diff = (kron - gauss).abs();
    Panel {
        a,
        b,
        log_val: m + log_h + kron.ln(),
        log_err: if diff > 0.0 { m + log_h + diff.ln() } else { f64::NEG_INFINITY },
        log_min,
        excluded,
        overflow,
    }
}

struct Annulus {
    log_val: f64,
    log_err: f64,
    log_min: f64,
    excluded: usize,
    evaluated: usize,
    overflow: bool,
    unresolved: bool,
}

/// Adaptive integration of `exp(log_g)` over a union of intervals, refined
/// until the absolute error is below `tol * exp(log_scale ⊕ value)`.
fn adaptive_annulus<F: Fn(f64) -> f64 + Sync + ?Sized>(
    log_g: &F,
    intervals: &[(f64, f64)],
    log_scale: f64,
    cfg: &QuadratureConfig,
    rel_target: f64,
) -> Annulus {
    let mut seeds = Vec::new();
    for &(a, b) in intervals {
        let n = ((b - a) / cfg.initial_panel_width).ceil().max(1.0) as usize;
        let w = (b - a) / n as f64;
        for i in 0..n {
            let lo = a + w * i as f64;
            let hi = if i + 1 == n { b } else { lo + w };
            seeds.push((lo, hi));
        }
    }
    let panels: Vec<Panel> = seeds.par_iter().map(|&(a, b)| gk15(log_g, a, b)).collect();
    let mut excluded: usize = panels.iter().map(|p| p.excluded).sum();
    let mut overflow = panels.iter().any(|p| p.overflow);
    let mut evaluated = panels.len() * 15;
    let log_min = panels.iter().map(|p| p.log_min).fold(f64::INFINITY, f64::min);
    let mut log_val = log_sum_exp(panels.iter().map(|p| p.log_val));
    let mut log_err = log_sum_exp(panels.iter().map(|p| p.log_err));
    let mut heap: BinaryHeap<Panel> = panels.into_iter().collect();
    let log_target = rel_target.ln();
    let mut splits = 0;
    let mut unresolved = false;
    loop {
        let reference = log_add(log_scale, log_val);
        if reference == f64::NEG_INFINITY || log_err <= log_target + reference {
            break;
        }
        if splits >= cfg.max_subdivisions {
            unresolved = true;
            break;
        }
        let Some(worst) = heap.pop() else { break };
        if worst.log_err == f64::NEG_INFINITY {
            heap.push(worst);
            break;
        }
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // panel can no longer be split in floating point
            unresolved = true;
            heap.push(Panel { log_err: f64::NEG_INFINITY, ..worst });
            continue;
        }
        let left = gk15(log_g, worst.a, mid);
        let right = gk15(log_g, mid, worst.b);
        excluded += left.excluded + right.excluded;
        overflow |= left.overflow || right.overflow;
        evaluated += 30;
        heap.push(left);
        heap.push(right);
        splits += 1;
        // Recompute from scratch: subtracting in log space is unstable.
        log_val = log_sum_exp(heap.iter().map(|p| p.log_val));
        log_err = log_sum_exp(heap.iter().map(|p| p.log_err));
    }
    Annulus {
        log_val,
        log_err,
        log_min,
        excluded,
        evaluated,
        overflow,
        unresolved,
    }
}

fn growing_past(contributions: &[f64], total: f64, cfg: &QuadratureConfig) -> bool {
    let n = contributions.len();
    if n < 2 {
        return false;
    }
    let (c_last, c_prev) = (contributions[n - 1], contributions[n - 2]);
    total > cfg.divergence_threshold.ln()
        && c_last > cfg.tolerance.ln() + total
        && c_last >= c_prev + GROWTH_RATIO.ln()
}

/// Integrate `exp(log_g)` over R.
pub fn integrate_log_1d<F>(log_g: &F, cfg: &QuadratureConfig) -> Result<IntegralResult, QuadratureError>
where
    F: Fn(f64) -> f64 + Sync + ?Sized,
{
    cfg.validate()?;
    let quad_target = 0.25 * cfg.tolerance;
    let log_tol = cfg.tolerance.ln();
    let mut total = f64::NEG_INFINITY;
    let mut total_err = f64::NEG_INFINITY;
    let mut diagnostics = Vec::with_capacity(cfg.radii.len());
    let mut excluded = 0;
    let mut evaluated = 0;
    let mut overflow = false;
    let mut unresolved = false;
    let mut contributions: Vec<f64> = Vec::new();
    let mut infima: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut prev_r = 0.0;
    for (k, &r) in cfg.radii.iter().enumerate() {
        let intervals: Vec<(f64, f64)> = if k == 0 {
            vec![(-r, r)]
        } else {
            vec![(-r, -prev_r), (prev_r, r)]
        };
        // each annulus gets an equal share of the error budget
        let ann = adaptive_annulus(log_g, &intervals, total, cfg, quad_target / cfg.radii.len() as f64);
        excluded += ann.excluded;
        evaluated += ann.evaluated;
        overflow |= ann.overflow;
        unresolved |= ann.unresolved;
        total = log_add(total, ann.log_val);
        total_err = log_add(total_err, ann.log_err);
        contributions.push(ann.log_val);
        infima.push(ann.log_min);
        diagnostics.push(Truncation {
            radius: r,
            value: total.exp(),
            log_value: total,
        });
        prev_r = r;
        if cfg.early_divergence && k >= 2 && (overflow || growing_past(&contributions, total, cfg)) {
            break;
        }
        if k >= 2 && total > f64::NEG_INFINITY && !overflow {
            let c_last = ann.log_val;
            let c_prev = contributions[k - 1];
            // two small annuli in a row: one quiet annulus can fall between
            // the bumps of an oscillating integrand
            let tail_small = c_last.max(c_prev) <= (0.5 * cfg.tolerance).ln() + total;
            let decaying = c_last == f64::NEG_INFINITY || c_last <= c_prev + TAIL_DECAY.ln();
            let accurate = total_err <= quad_target.ln() + total;
            if tail_small && decaying && accurate {
                converged = true;
                break;
            }
        }
    }
    if excluded > 0 && excluded == evaluated {
        return Err(QuadratureError::AllNodesInvalid);
    }

    let n = contributions.len();
    let verdict = if overflow {
        Verdict::Divergent
    } else if converged {
        Verdict::Finite
    } else if total == f64::NEG_INFINITY {
        // identically zero on the whole schedule
        if total_err == f64::NEG_INFINITY {
            Verdict::Finite
        } else {
            Verdict::Inconclusive
        }
    } else if n >= 2 {
        let c_last = contributions[n - 1];
        let c_prev = contributions[n - 2];
        let growing = c_last > log_tol + total && c_last >= c_prev + GROWTH_RATIO.ln();
        let past_threshold = growing_past(&contributions, total, cfg);
        let inf_last = infima[n - 1];
        let inf_prev = infima[n - 2];
        let inf_persists = inf_last.is_finite() && inf_last >= inf_prev + INF_PERSIST.ln();
        if growing && (past_threshold || inf_persists) {
            Verdict::Divergent
        } else {
            Verdict::Inconclusive
        }
    } else {
        Verdict::Inconclusive
    };

    let tail = contributions.last().copied().unwrap_or(f64::NEG_INFINITY);
    let error_estimate = log_add(total_err, tail).exp();
    Ok(IntegralResult {
        value: (verdict == Verdict::Finite).then(|| total.exp()),
        log_value: total,
        error_estimate: if verdict == Verdict::Finite { error_estimate } else { f64::INFINITY },
        verdict,
        diagnostics,
        excluded_nodes: excluded,
        overflow,
        unresolved,
    })
}

/// Iterated (tensor) rule for N = 2, 3: the innermost coordinate is integrated
/// by the 1D engine for each outer node.
fn integrate_log_nested(
    log_g: &(dyn Fn(&[f64]) -> f64 + Sync),
    dim: usize,
    cfg: &QuadratureConfig,
) -> Result<IntegralResult, QuadratureError> {
    if dim == 1 {
        return integrate_log_1d(&|x: f64| log_g(&[x]), cfg);
    }
    let inner_cfg = QuadratureConfig {
        tolerance: cfg.tolerance * 0.1,
        ..cfg.clone()
    };
    let inner_inconclusive = std::sync::atomic::AtomicBool::new(false);
    let outer = |x0: f64| -> f64 {
        let sub = |rest: &[f64]| {
            let mut full = Vec::with_capacity(dim);
            full.push(x0);
            full.extend_from_slice(rest);
            log_g(&full)
        };
        match integrate_log_nested(&sub, dim - 1, &inner_cfg) {
            Ok(r) => match r.verdict {
                Verdict::Finite => r.log_value,
                Verdict::Divergent => f64::INFINITY,
                Verdict::Inconclusive => {
                    inner_inconclusive.store(true, std::sync::atomic::Ordering::Relaxed);
                    r.log_value
                }
            },
            Err(_) => f64::NAN,
        }
    };
    let mut res = integrate_log_1d(&outer, cfg)?;
    if res.verdict == Verdict::Finite && inner_inconclusive.load(std::sync::atomic::Ordering::Relaxed) {
        res.verdict = Verdict::Inconclusive;
        res.value = None;
        res.error_estimate = f64::INFINITY;
    }
    Ok(res)
}

/// Importance-sampled Monte Carlo for N >= 4 with a product Gaussian proposal
/// of per-axis scales `sigma`, repeated at doubled and quadrupled scale to
/// expose mass escaping to infinity.
pub fn integrate_log_mc<F>(
    log_g: &F,
    sigma: &[f64],
    cfg: &QuadratureConfig,
) -> Result<IntegralResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    cfg.validate()?;
    let dim = sigma.len();
    let n = cfg.mc_samples.max(100);
    let mut estimates = Vec::new();
    let mut excluded = 0usize;
    let mut overflow = false;
    for (level, widen) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        let scales: Vec<f64> = sigma.iter().map(|s| s * widen).collect();
        let log_norm: f64 = scales
            .iter()
            .map(|s| -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln())
            .sum();
        let logs: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(((level as u64) << 48) | i as u64);
                let mut x = vec![0.0; dim];
                let mut log_q = log_norm;
                for (xi, s) in x.iter_mut().zip(&scales) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *xi = s * z;
                    log_q -= 0.5 * z * z;
                }
                log_g(&x) - log_q
            })
            .collect();
        let mut clean = Vec::with_capacity(n);
        for l in logs {
            clean.push(sanitize(l, &mut excluded, &mut overflow));
        }
        let m = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            estimates.push((f64::NEG_INFINITY, 0.0));
            continue;
        }
        let scaled: Vec<f64> = clean.iter().map(|l| (l - m).exp()).collect();
        let mean = crate::numeric::pairwise_sum(&scaled) / n as f64;
        let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        estimates.push((m + mean.ln(), se / mean));
    }
    if excluded == 3 * n {
        return Err(QuadratureError::AllNodesInvalid);
    }
    let (l0, r0) = estimates[0];
    let (l1, r1) = estimates[1];
    let (l2, r2) = estimates[2];
    let agree = |la: f64, ra: f64, lb: f64, rb: f64| {
        let ratio = (la - lb).exp();
        (ratio - 1.0).abs() <= 3.0 * (ra * ra + rb * rb).sqrt().max(1e-15)
    };
    let best_rel = r2;
    let verdict = if overflow {
        Verdict::Divergent
    } else if agree(l0, r0, l1, r1) && agree(l1, r1, l2, r2) && best_rel < 0.05 {
        Verdict::Finite
    } else if l1 > l0 + 3.0 * r0.max(r1) && l2 > l1 + 3.0 * r1.max(r2) {
        Verdict::Divergent
    } else {
        Verdict::Inconclusive
    };
    let value = l2.exp();
    Ok(IntegralResult {
        value: (verdict == Verdict::Finite).then_some(value),
        log_value: l2,
        error_estimate: if verdict == Verdict::Finite { 3.0 * r2 * value } else { f64::INFINITY },
        verdict,
        diagnostics: estimates
            .iter()
            .zip([1.0, 2.0, 4.0])
            .map(|(&(l, _), w)| Truncation {
                radius: w,
                value: l.exp(),
                log_value: l,
            })
            .collect(),
        excluded_nodes: excluded,
        overflow,
        unresolved: false,
    })
}

/// Integrate `exp(log_g)` over R^N.
pub fn integrate_log<F>(log_g: &F, dim: usize, cfg: &QuadratureConfig) -> Result<IntegralResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    cfg.validate()?;
    match dim {
        0 => Err(QuadratureError::InvalidConfig("dimension must be positive".into())),
        1..=3 => integrate_log_nested(&|x: &[f64]| log_g(x), dim, cfg),
        _ => integrate_log_mc(log_g, &vec![1.0; dim], cfg),
    }
}

/// Integrate a non-negative scalar field over R^N. Negative or undefined
/// values exclude the node.
pub fn integrate<F>(g: &F, dim: usize, cfg: &QuadratureConfig) -> Result<IntegralResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    let log_g = |x: &[f64]| {
        let v = g(x);
        if v >= 0.0 {
            v.ln()
        } else {
            f64::NAN
        }
    };
    integrate_log(&log_g, dim, cfg)
}

/// Proposal scales matched to the quadratic part of `F` at the origin.
pub fn gaussian_scales(p: &Potential) -> Vec<f64> {
    let origin = vec![0.0; p.dim()];
    (0..p.dim())
        .map(|i| {
            let h = p.hessian_entry_fast(i, i, &origin);
            if h.is_finite() && h > 0.0 {
                (0.5 / h).sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// `∫ exp(log_g) dx` over `R^N` with `N = p.dim()`: nested quadrature up to
/// N = 3, importance sampling around the Gaussian matched to `F` beyond.
pub fn integrate_log_for<F>(p: &Potential, log_g: &F, cfg: &QuadratureConfig) -> Result<IntegralResult, QuadratureError>
where
    F: Fn(&[f64]) -> f64 + Sync + ?Sized,
{
    if p.dim() >= 4 {
        integrate_log_mc(log_g, &gaussian_scales(p), cfg)
    } else {
        integrate_log(log_g, p.dim(), cfg)
    }
}

/// `Z = ∫ exp(-2F) dx`.
pub fn normalization(p: &Potential, cfg: &QuadratureConfig) -> Result<IntegralResult, QuadratureError> {
    let log_g = |x: &[f64]| -2.0 * p.value_fast(x);
    if p.dim() >= 4 {
        return integrate_log_mc(&log_g, &gaussian_scales(p), cfg);
    }
    integrate_log(&log_g, p.dim(), cfg)
}

/// Attach `s = log(Z)/2` when `Z` is finite.
pub fn normalize(p: &Potential, cfg: &QuadratureConfig) -> Result<(Potential, IntegralResult), QuadratureError> {
    let z = normalization(p, cfg)?;
    let q = if z.is_finite() {
        p.clone().with_normalization_shift(0.5 * z.log_value)
    } else {
        p.clone()
    };
    Ok((q, z))
}

/// `(Z^{-1} ∫ exp((r-2)F) dx)^{1/r}`, the `L^r(nu_F)` norm of `exp(F)`.
///
/// The returned result carries the r-th root in `value` and in every
/// diagnostic, and the raw (un-rooted) log integral in `log_value / ...`
/// divided accordingly.
pub fn lr_norm_expf(p: &Potential, r: f64, cfg: &QuadratureConfig) -> Result<IntegralResult, QuadratureError> {
    if !(r > 0.0) {
        return Err(QuadratureError::InvalidConfig("r must be positive".into()));
    }
    let z = normalization(p, cfg)?;
    if !z.is_finite() {
        return Err(QuadratureError::InvalidConfig(
            "normalization is not finite; nu_F is not a probability".into(),
        ));
    }
    let log_z = z.log_value;
    let log_g = |x: &[f64]| (r - 2.0) * p.value_fast(x);
    let raw = if p.dim() >= 4 {
        integrate_log_mc(&log_g, &gaussian_scales(p), cfg)?
    } else {
        integrate_log(&log_g, p.dim(), cfg)?
    };
    let mut res = raw.scaled_log(-log_z);
    let rel_err = res.value.map(|v| res.error_estimate / v).unwrap_or(f64::INFINITY);
    res.log_value /= r;
    res.value = res.value.map(|v| v.powf(1.0 / r));
    // d(v^{1/r}) / v^{1/r} = (1/r) dv / v
    res.error_estimate = res.value.map(|v| v * rel_err / r).unwrap_or(f64::INFINITY);
    for t in &mut res.diagnostics {
        t.log_value /= r;
        t.value = t.log_value.exp();
    }
    Ok(res)
}
