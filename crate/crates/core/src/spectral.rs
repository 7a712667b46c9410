//! Spectral gap of `-A_F` on `L^2(nu_F)` for N = 1.
//!
//! The ground-state transform `f -> e^{-F} f` maps `-A_F` to the Schrodinger
//! operator `H_F = -1/2 d^2/dx^2 + V_F / 2` on `L^2(dx)`, whose lowest
//! eigenvalue is 0 with eigenfunction `e^{-F}`. `H_F` is discretized by
//! central differences on `[-R, R]` with Dirichlet walls and the smallest
//! eigenvalues of the resulting symmetric tridiagonal matrix are found by
//! Sturm-count bisection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::Potential;
use crate::quadrature::{self, QuadratureConfig};

pub const EIG_TOLERANCE: f64 = 1e-10;
pub const MAX_EIGS: usize = 8;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpectralError {
    #[error("spectral solver supports dimension 1 only, got {0}")]
    Dimension(usize),
    #[error("V_F undefined at grid node x = {0}")]
    Domain(f64),
    #[error("at most {MAX_EIGS} eigenvalues can be requested, got {0}")]
    TooManyEigenvalues(usize),
    #[error("invalid discretization: {0}")]
    Invalid(String),
    #[error("exp(-2F) is not integrable; nu_F cannot be normalized")]
    NotNormalizable,
}

/// Symmetric tridiagonal discretization of `H_F` on `[-R, R]`.
#[derive(Debug, Clone, Serialize)]
pub struct Discretization {
    pub radius: f64,
    pub n: usize,
    pub h: f64,
    pub diag: Vec<f64>,
    pub offdiag: Vec<f64>,
}

impl Discretization {
    pub fn node(&self, i: usize) -> f64 {
        -self.radius + self.h * (i + 1) as f64
    }
}

pub fn discretize(p: &Potential, radius: f64, n: usize) -> Result<Discretization, SpectralError> {
    if p.dim() != 1 {
        return Err(SpectralError::Dimension(p.dim()));
    }
    if !(radius > 0.0) || n < 2 {
        return Err(SpectralError::Invalid(format!("R = {radius}, n = {n}")));
    }
    let h = 2.0 * radius / (n + 1) as f64;
    let inv_h2 = 1.0 / (h * h);
    let mut diag = Vec::with_capacity(n);
    for i in 0..n {
        let x = -radius + h * (i + 1) as f64;
        let v = p.schrodinger_fast(&[x]);
        if !v.is_finite() {
            return Err(SpectralError::Domain(x));
        }
        diag.push(inv_h2 + 0.5 * v);
    }
    Ok(Discretization {
        radius,
        n,
        h,
        diag,
        offdiag: vec![-0.5 * inv_h2; n - 1],
    })
}

/// Number of eigenvalues strictly below `x`.
fn sturm_count(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        let denom = if q == 0.0 { f64::EPSILON * (1.0 + x.abs()) } else { q };
        q = diag[i] - x - off[i - 1] * off[i - 1] / denom;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn gershgorin(diag: &[f64], off: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..diag.len() {
        let left = if i > 0 { off[i - 1].abs() } else { 0.0 };
        let right = if i < off.len() { off[i].abs() } else { 0.0 };
        lo = lo.min(diag[i] - left - right);
        hi = hi.max(diag[i] + left + right);
    }
    (lo, hi)
}

/// The `k` smallest eigenvalues of a symmetric tridiagonal matrix, to
/// absolute tolerance `tol`.
pub fn tridiagonal_smallest(diag: &[f64], off: &[f64], k: usize, tol: f64) -> Vec<f64> {
    assert_eq!(off.len() + 1, diag.len(), "off-diagonal must have n-1 entries");
    let k = k.min(diag.len());
    let (lo0, hi0) = gershgorin(diag, off);
    let (lo0, hi0) = (lo0 - tol, hi0 + tol);
    (0..k)
        .into_par_iter()
        .map(|j| {
            let (mut lo, mut hi) = (lo0, hi0);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if sturm_count(diag, off, mid) > j {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RefinementStep {
    pub radius: f64,
    pub n: usize,
    pub h: f64,
    pub eigenvalues: Vec<f64>,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub gap: f64,
    pub trace: Vec<RefinementStep>,
    /// Richardson-extrapolated gap per radius.
    pub extrapolated: Vec<(f64, f64)>,
    pub converged: bool,
}

pub fn smallest_eigs(d: &Discretization, k: usize) -> Result<SpectrumResult, SpectralError> {
    if k == 0 || k > MAX_EIGS {
        return Err(SpectralError::TooManyEigenvalues(k));
    }
    let eigenvalues = tridiagonal_smallest(&d.diag, &d.offdiag, k, EIG_TOLERANCE);
    let gap = if eigenvalues.len() >= 2 { eigenvalues[1] - eigenvalues[0] } else { f64::NAN };
    Ok(SpectrumResult {
        trace: vec![RefinementStep {
            radius: d.radius,
            n: d.n,
            h: d.h,
            eigenvalues: eigenvalues.clone(),
            gap,
        }],
        eigenvalues,
        gap,
        extrapolated: Vec::new(),
        converged: false,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralSchedule {
    pub radii: Vec<f64>,
    pub sizes: Vec<usize>,
    /// Number of eigenvalues computed at each level.
    pub k: usize,
    /// Relative agreement of successive extrapolated gaps.
    pub tolerance: f64,
}

impl Default for SpectralSchedule {
    fn default() -> Self {
        SpectralSchedule {
            radii: vec![8.0, 12.0, 16.0],
            sizes: vec![2000, 4000, 8000],
            k: 2,
            tolerance: 1e-3,
        }
    }
}

/// Richardson extrapolation to `h = 0` assuming an `h^2` leading error.
fn richardson(h_coarse: f64, v_coarse: f64, h_fine: f64, v_fine: f64) -> f64 {
    let (a, b) = (h_coarse * h_coarse, h_fine * h_fine);
    (a * v_fine - b * v_coarse) / (a - b)
}

pub fn spectral_gap(p: &Potential, schedule: &SpectralSchedule) -> Result<SpectrumResult, SpectralError> {
    if p.dim() != 1 {
        return Err(SpectralError::Dimension(p.dim()));
    }
    if schedule.radii.is_empty() || schedule.sizes.is_empty() {
        return Err(SpectralError::Invalid("empty schedule".into()));
    }
    let k = schedule.k.max(2);
    if k > MAX_EIGS {
        return Err(SpectralError::TooManyEigenvalues(k));
    }
    let z = quadrature::normalization(p, &QuadratureConfig::default())
        .map_err(|e| SpectralError::Invalid(e.to_string()))?;
    if !z.is_finite() {
        return Err(SpectralError::NotNormalizable);
    }

    let mut trace = Vec::new();
    let mut extrapolated = Vec::new();
    let mut finest: Vec<f64> = Vec::new();
    for &r in &schedule.radii {
        let mut level: Vec<RefinementStep> = Vec::new();
        for &n in &schedule.sizes {
            let d = discretize(p, r, n)?;
            let mut s = smallest_eigs(&d, k)?;
            level.push(s.trace.pop().expect("one step"));
        }
        let m = level.len();
        let (eigs, gap) = if m >= 2 {
            let (c, f) = (&level[m - 2], &level[m - 1]);
            let eigs: Vec<f64> = c
                .eigenvalues
                .iter()
                .zip(&f.eigenvalues)
                .map(|(&vc, &vf)| richardson(c.h, vc, f.h, vf))
                .collect();
            let gap = richardson(c.h, c.gap, f.h, f.gap);
            (eigs, gap)
        } else {
            (level[0].eigenvalues.clone(), level[0].gap)
        };
        extrapolated.push((r, gap));
        finest = eigs;
        trace.extend(level);
    }
    let m = extrapolated.len();
    let converged = m >= 2 && {
        let (a, b) = (extrapolated[m - 2].1, extrapolated[m - 1].1);
        (a - b).abs() <= schedule.tolerance * b.abs().max(f64::MIN_POSITIVE)
    };
    let gap = extrapolated[m - 1].1;
    Ok(SpectrumResult {
        eigenvalues: finest,
        gap,
        trace,
        extrapolated,
        converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HolleyStroockCheck {
    pub gap_base: f64,
    pub gap_perturbed: f64,
    /// `Osc(2G)` over the scan box.
    pub oscillation: f64,
    /// `gap(F+G) >= e^{-Osc} gap(F)`
    pub lower_holds: bool,
    /// `gap(F) >= e^{-Osc} gap(F+G)`
    pub upper_holds: bool,
    /// Smallest of the two ratios `gap_a / (e^{-Osc} gap_b)`; above one means slack.
    pub slack: f64,
    pub converged: bool,
}

/// Compare `gap(nu_F)` and `gap(nu_{F+G})` against the two-sided density bound.
pub fn holley_stroock_crosscheck(
    base: &Potential,
    g: &Potential,
    schedule: &SpectralSchedule,
) -> Result<HolleyStroockCheck, SpectralError> {
    if base.dim() != 1 || g.dim() != 1 {
        return Err(SpectralError::Dimension(base.dim().max(g.dim())));
    }
    let perturbed = Potential::from_expr(
        crate::potential::Expr::add(base.expr().clone(), g.expr().clone()),
        1,
        format!("{} + {}", base.label(), g.label()),
    )
    .map_err(|e| SpectralError::Invalid(e.to_string()))?;
    let r = schedule.radii.iter().copied().fold(0.0, f64::max);
    let steps = (2.0 * r / 1e-3).ceil() as usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=steps {
        let x = -r + 2.0 * r * i as f64 / steps as f64;
        let v = g.value_fast(&[x]);
        if !v.is_finite() {
            return Err(SpectralError::Domain(x));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let oscillation = 2.0 * (hi - lo);
    let a = spectral_gap(base, schedule)?;
    let b = spectral_gap(&perturbed, schedule)?;
    let f = (-oscillation).exp();
    let tol = schedule.tolerance;
    let lower = b.gap / (f * a.gap);
    let upper = a.gap / (f * b.gap);
    Ok(HolleyStroockCheck {
        gap_base: a.gap,
        gap_perturbed: b.gap,
        oscillation,
        lower_holds: lower >= 1.0 - tol,
        upper_holds: upper >= 1.0 - tol,
        slack: lower.min(upper),
        converged: a.converged && b.converged,
    })
}
