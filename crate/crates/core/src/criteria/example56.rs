use std::f64::consts::PI;

use serde::Serialize;

use super::CriteriaError;
use crate::numeric::log_add;
use crate::Potential;

/// Partial sums of `1/2 sum_k k^{-1/2} exp(4 pi^2 (q-2-eps) k^2 - 4 q theta t k)`.
#[derive(Debug, Clone, Serialize)]
pub struct DivergentSum {
    pub q: f64,
    pub eps: f64,
    pub t: f64,
    pub theta: f64,
    pub log_terms: Vec<f64>,
    /// `log S_1, ..., log S_K`.
    pub log_partial_sums: Vec<f64>,
}

impl DivergentSum {
    /// Smallest `k` (1-based) with `S_k > bound`.
    pub fn first_exceeding(&self, bound: f64) -> Option<usize> {
        let lb = bound.ln();
        self.log_partial_sums.iter().position(|&s| s > lb).map(|i| i + 1)
    }

    pub fn strictly_increasing(&self) -> bool {
        self.log_partial_sums.windows(2).all(|w| w[1] > w[0])
    }
}

pub fn example56_divergent_sum(q: f64, eps: f64, t: f64, theta: f64, k_max: usize) -> Result<DivergentSum, CriteriaError> {
    if !(q > 2.0 && eps > 0.0 && t > 0.0 && theta > 0.0) {
        return Err(CriteriaError::Invalid("need q > 2 and positive eps, t, theta".into()));
    }
    let a = q - 2.0 - eps;
    if !(a > 0.0) {
        return Err(CriteriaError::Invalid(format!("need eps < q - 2, got eps = {eps}, q = {q}")));
    }
    if k_max == 0 {
        return Err(CriteriaError::Invalid("need at least one term".into()));
    }
    let log_terms: Vec<f64> = (1..=k_max)
        .map(|k| {
            let k = k as f64;
            -(2f64.ln()) - 0.5 * k.ln() + 4.0 * PI * PI * a * k * k - 4.0 * q * theta * t * k
        })
        .collect();
    let mut acc = f64::NEG_INFINITY;
    let log_partial_sums = log_terms
        .iter()
        .map(|&l| {
            acc = log_add(acc, l);
            acc
        })
        .collect();
    Ok(DivergentSum { q, eps, t, theta, log_terms, log_partial_sums })
}

/// Minimum of `F'' k^{-1/2}` and maximum of `|F'|` on
/// `x_k + [1/2, 3/2] k^{-1/2}`, `x_k = 2 k pi`, for the `beta = -2` member.
#[derive(Debug, Clone, Serialize)]
pub struct WindowRow {
    pub k: u32,
    pub window: [f64; 2],
    pub curvature_constant: f64,
    pub max_abs_derivative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    pub eps: f64,
    pub rows: Vec<WindowRow>,
    /// Smallest `F'' k^{-1/2}` over all windows.
    pub scaling_constant: f64,
    /// Largest `|F'|` over all windows.
    pub derivative_bound: f64,
    /// `max |F'|` varies by at most 5% over the upper half of the k range.
    pub derivative_stable: bool,
    /// `F'' >= (1 - eps) k^{1/2}` everywhere and the derivative bound is stable.
    pub holds: bool,
}

const WINDOW_POINTS: usize = 100;
pub const WINDOW_K_MIN: u32 = 10;

pub fn verify_window_estimates_56(ks: &[u32], eps: f64) -> Result<WindowReport, CriteriaError> {
    if ks.is_empty() {
        return Err(CriteriaError::Invalid("empty k range".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k < WINDOW_K_MIN) {
        return Err(CriteriaError::Invalid(format!("k = {k} is below k_min = {WINDOW_K_MIN}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(CriteriaError::Invalid("eps must lie in (0, 1)".into()));
    }
    let p = Potential::example56(-2.0);
    let rows: Vec<WindowRow> = ks
        .iter()
        .map(|&k| {
            let kf = k as f64;
            let xk = 2.0 * PI * kf;
            let (lo, hi) = (xk + 0.5 / kf.sqrt(), xk + 1.5 / kf.sqrt());
            let mut c_min = f64::INFINITY;
            let mut d_max = 0.0f64;
            let mut g = [0.0];
            for j in 0..WINDOW_POINTS {
                let y = [lo + (hi - lo) * j as f64 / (WINDOW_POINTS - 1) as f64];
                p.grad_fast(&y, &mut g);
                c_min = c_min.min(p.hessian_entry_fast(0, 0, &y) / kf.sqrt());
                d_max = d_max.max(g[0].abs());
            }
            WindowRow { k, window: [lo, hi], curvature_constant: c_min, max_abs_derivative: d_max }
        })
        .collect();
    let scaling_constant = rows.iter().map(|r| r.curvature_constant).fold(f64::INFINITY, f64::min);
    let derivative_bound = rows.iter().map(|r| r.max_abs_derivative).fold(0.0, f64::max);
    let mut sorted: Vec<&WindowRow> = rows.iter().collect();
    sorted.sort_by_key(|r| r.k);
    let upper = &sorted[sorted.len() / 2..];
    let (dmin, dmax) = upper
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r.max_abs_derivative), b.max(r.max_abs_derivative)));
    let derivative_stable = dmax <= 1.05 * dmin;
    Ok(WindowReport {
        eps,
        holds: scaling_constant >= 1.0 - eps && derivative_stable,
        rows,
        scaling_constant,
        derivative_bound,
        derivative_stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::THETA_1;

    #[test]
    fn divergent_sum_ratio_and_growth() {
        let s = example56_divergent_sum(3.0, 0.5, 1.0, THETA_1, 10).unwrap();
        assert!(s.strictly_increasing());
        // T_10 / T_9 = sqrt(9/10) exp(4 pi^2 0.5 * 19 - 12 theta)
        let log_ratio = 0.5 * (0.9f64).ln() + 4.0 * PI * PI * 0.5 * 19.0 - 12.0 * THETA_1;
        let got = s.log_partial_sums[9] - s.log_partial_sums[8];
        assert!((got - log_ratio).abs() < 1e-6, "{got} vs {log_ratio}");
        assert!(s.first_exceeding(1e12).unwrap() <= 3);
    }

    #[test]
    fn divergent_sum_preconditions() {
        assert!(example56_divergent_sum(3.0, 1.0, 1.0, 1.0, 5).is_err());
        assert!(example56_divergent_sum(2.0, 0.1, 1.0, 1.0, 5).is_err());
        let s = example56_divergent_sum(2.5, 0.1, 1.0, THETA_1, 40).unwrap();
        // log term ratio 8 pi^2 0.4 k + 4 pi^2 0.4 - 10 theta - ... > 0 from k = 1 on
        assert!(s.strictly_increasing());
    }

    #[test]
    fn window_constants() {
        let ks: Vec<u32> = (10..=100).step_by(10).collect();
        let w = verify_window_estimates_56(&ks, 0.5).unwrap();
        assert!(w.holds, "{w:?}");
        assert!((w.scaling_constant - 2.0 * PI).abs() < 1.0);
        let k100 = w.rows.iter().find(|r| r.k == 100).unwrap();
        assert!((k100.window[0] - (200.0 * PI + 0.05)).abs() < 1e-9);
        let big = verify_window_estimates_56(&[10_000], 0.5).unwrap();
        // delta^2 y at delta = 3/2 k^{-1/2}, y = 2 pi k
        assert!((big.derivative_bound / (4.5 * PI) - 1.0).abs() < 0.01, "{}", big.derivative_bound);
        assert!(verify_window_estimates_56(&[1, 20], 0.5).is_err());
    }
}
