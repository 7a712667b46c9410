//! Brownian paths, Girsanov and Feynman-Kac weights, exit times.
//!
//! Brownian motion has generator `1/2 Laplacian`, so increments over a step
//! `h` are `N(0, h Id)`. Every path `i` draws its normals from a ChaCha8
//! stream selected by `(seed, i)`; with antithetic sampling the paths `2j`
//! and `2j+1` share stream `j` and the second one negates every increment.
//! Results therefore do not depend on thread scheduling.
//!
//! All weights are accumulated as logarithms. A path whose log weight is
//! undefined or above [`LOG_OVERFLOW`] is excluded and counted; more than
//! [`MAX_EXCLUSION_RATE`] excluded paths aborts the estimate.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use thiserror::Error;

use crate::numeric::pairwise_sum;
use crate::potential::{Expr, Potential, PotentialError, LAMBDA_ZERO_TOL};
use crate::quadrature::{self, IntegralResult, QuadratureConfig, QuadratureError, Verdict};

pub const LOG_OVERFLOW: f64 = 700.0;
pub const MAX_EXCLUSION_RATE: f64 = 1e-3;
pub const EXPLOSION_RADIUS: f64 = 1e6;
/// `pi^2 / 8`, the exit rate of `1/2 Laplacian` from `(-1, 1)`.
pub const THETA_1: f64 = std::f64::consts::PI * std::f64::consts::PI / 8.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StochasticError {
    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("{excluded} of {total} paths excluded (overflow or explosion), above the 0.1% limit")]
    ExclusionRate { excluded: usize, total: usize },
    #[error("path {path}: log M_t = {log_m} exceeds the bound c t = {bound}")]
    BoundViolation { path: usize, log_m: f64, bound: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("path dump: {0}")]
    Dump(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub scheme: Scheme,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            dt: 1e-3,
            n_paths: 100_000,
            seed: 20_240_501,
            antithetic: true,
            scheme: Scheme::Euler,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), StochasticError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(StochasticError::InvalidConfig("dt must be positive".into()));
        }
        if self.n_paths < 100 {
            return Err(StochasticError::InvalidConfig("n_paths must be at least 100".into()));
        }
        Ok(())
    }

    pub fn with_paths(mut self, n: usize) -> Self {
        self.n_paths = n;
        self
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Independent samples; antithetic pairs count once.
    pub n_effective: usize,
    pub n_paths: usize,
    pub excluded: usize,
    pub ci95: [f64; 2],
}

impl McEstimate {
    fn exact(v: f64, n_paths: usize) -> Self {
        McEstimate {
            mean: v,
            std_error: 0.0,
            n_effective: n_paths,
            n_paths,
            excluded: 0,
            ci95: [v, v],
        }
    }

    /// `|a - b|` in units of the combined standard error.
    pub fn z_score(&self, other: f64) -> f64 {
        (self.mean - other).abs() / self.std_error.max(f64::MIN_POSITIVE)
    }
}

/// Time grid `0, dt, 2dt, ..., t`; the last step may be shorter.
pub fn time_grid(t: f64, dt: f64) -> Vec<f64> {
    let steps = ((t / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut g: Vec<f64> = (0..=steps).map(|i| (i as f64 * dt).min(t)).collect();
    g[steps] = t;
    g
}

/// Normal increments for one path.
pub struct Increments {
    rng: ChaCha8Rng,
    sign: f64,
}

impl Increments {
    pub fn new(cfg: &McConfig, path: usize) -> Self {
        Self::with_seed(cfg.seed, cfg.antithetic, path)
    }

    fn with_seed(seed: u64, antithetic: bool, path: usize) -> Self {
        let (stream, sign) = if antithetic {
            ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (path as u64, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Increments { rng, sign }
    }

    /// Fill `out` with `N(0, h)` draws.
    #[inline]
    pub fn fill(&mut self, h: f64, out: &mut [f64]) {
        let s = self.sign * h.sqrt();
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *o = s * z;
        }
    }
}

/// Walk one Brownian path from `x` over `grid`, calling `step(prev, next, h)`
/// after each step. Returning `false` stops the walk early.
fn walk(x: &[f64], grid: &[f64], inc: &mut Increments, mut step: impl FnMut(&[f64], &[f64], f64) -> bool) {
    let dim = x.len();
    let mut prev = x.to_vec();
    let mut next = vec![0.0; dim];
    let mut dx = vec![0.0; dim];
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        inc.fill(h, &mut dx);
        for i in 0..dim {
            next[i] = prev[i] + dx[i];
        }
        if !step(&prev, &next, h) {
            return;
        }
        std::mem::swap(&mut prev, &mut next);
    }
}

/// Run `n_paths` independent evaluations and reduce them to an estimate.
/// Non-finite values exclude the path (and its antithetic partner).
fn run_paths<G>(cfg: &McConfig, g: G) -> Result<McEstimate, StochasticError>
where
    G: Fn(usize) -> f64 + Sync,
{
    cfg.validate()?;
    let n = cfg.n_paths;
    let values: Vec<f64> = (0..n).into_par_iter().map(&g).collect();
    let group = if cfg.antithetic { 2 } else { 1 };
    let mut samples = Vec::with_capacity(n / group + 1);
    let mut excluded = 0;
    for chunk in values.chunks(group) {
        let bad = chunk.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            excluded += bad;
            continue;
        }
        samples.push(chunk.iter().sum::<f64>() / chunk.len() as f64);
    }
    if excluded as f64 > MAX_EXCLUSION_RATE * n as f64 {
        return Err(StochasticError::ExclusionRate { excluded, total: n });
    }
    Ok(summarize(&samples, n, excluded))
}

fn summarize(samples: &[f64], n_paths: usize, excluded: usize) -> McEstimate {
    let m = samples.len();
    let mean = pairwise_sum(samples) / m as f64;
    let dev: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if m > 1 { pairwise_sum(&dev) / (m - 1) as f64 } else { 0.0 };
    let se = (var / m as f64).sqrt();
    McEstimate {
        mean,
        std_error: se,
        n_effective: m,
        n_paths,
        excluded,
        ci95: [mean - 1.96 * se, mean + 1.96 * se],
    }
}

/// Stored Brownian paths, for small batches and path dumps.
#[derive(Debug, Clone)]
pub struct PathBatch {
    pub start: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub times: Vec<f64>,
    pub dim: usize,
    pub n_paths: usize,
    /// Path-major `[path][point][coordinate]`.
    pub positions: Vec<f64>,
    pub log_m: Option<Vec<f64>>,
    pub log_z: Option<Vec<f64>>,
}

impl PathBatch {
    pub fn n_points(&self) -> usize {
        self.times.len()
    }

    pub fn point(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * self.n_points() + step) * self.dim;
        &self.positions[off..off + self.dim]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let len = self.n_points() * self.dim;
        &self.positions[path * len..(path + 1) * len]
    }
}

const MAX_STORED: usize = 50_000_000;

pub fn simulate_brownian(x: &[f64], t: f64, cfg: &McConfig) -> Result<PathBatch, StochasticError> {
    cfg.validate()?;
    if !(t > 0.0) {
        return Err(StochasticError::Precondition("horizon must be positive".into()));
    }
    if x.is_empty() {
        return Err(StochasticError::Precondition("start point must be non-empty".into()));
    }
    let times = time_grid(t, cfg.dt);
    let dim = x.len();
    let len = times.len() * dim;
    if len.saturating_mul(cfg.n_paths) > MAX_STORED {
        return Err(StochasticError::InvalidConfig(format!(
            "batch of {} x {} x {} values is too large to store; use the streaming estimators",
            cfg.n_paths,
            times.len(),
            dim
        )));
    }
    let paths: Vec<Vec<f64>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(len);
            out.extend_from_slice(x);
            let mut inc = Increments::new(cfg, i);
            walk(x, &times, &mut inc, |_, next, _| {
                out.extend_from_slice(next);
                true
            });
            out
        })
        .collect();
    Ok(PathBatch {
        start: x.to_vec(),
        horizon: t,
        dt: cfg.dt,
        seed: cfg.seed,
        times,
        dim,
        n_paths: cfg.n_paths,
        positions: paths.concat(),
        log_m: None,
        log_z: None,
    })
}

/// Per-path log weights; excluded paths hold NaN.
#[derive(Debug, Clone, Serialize)]
pub struct PathWeights {
    pub log_values: Vec<f64>,
    pub excluded: usize,
}

impl PathWeights {
    fn from_logs(log_values: Vec<f64>) -> Result<Self, StochasticError> {
        let mut log_values = log_values;
        let mut excluded = 0;
        for l in log_values.iter_mut() {
            if !l.is_finite() || *l > LOG_OVERFLOW {
                *l = f64::NAN;
                excluded += 1;
            }
        }
        if excluded as f64 > MAX_EXCLUSION_RATE * log_values.len() as f64 {
            return Err(StochasticError::ExclusionRate {
                excluded,
                total: log_values.len(),
            });
        }
        Ok(PathWeights { log_values, excluded })
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|l| l.exp()).collect()
    }
}

/// `log M_t = -int_0^t W(X_s) ds` by the trapezoidal rule on the stored grid.
fn log_m_of_path(p: &Potential, path: &[f64], times: &[f64], dim: usize) -> f64 {
    let mut acc = 0.0;
    let mut w_prev = p.well_fast(&path[..dim]);
    for (i, w) in times.windows(2).enumerate() {
        let w_next = p.well_fast(&path[(i + 1) * dim..(i + 2) * dim]);
        acc -= 0.5 * (w_prev + w_next) * (w[1] - w[0]);
        w_prev = w_next;
    }
    acc
}

/// Feynman-Kac weight `M_t = exp(int_0^t (1/2 lap F - 1/2 |grad F|^2)(X_s) ds)`.
///
/// With `c_bound = Some(c)` from a lower bound `W >= -c`, every path is also
/// checked against `M_t <= e^{ct}`.
pub fn weight_m(p: &Potential, batch: &PathBatch, c_bound: Option<f64>) -> Result<PathWeights, StochasticError> {
    if p.dim() != batch.dim {
        return Err(PotentialError::DimensionMismatch {
            expected: p.dim(),
            got: batch.dim,
        }
        .into());
    }
    let logs: Vec<f64> = (0..batch.n_paths)
        .map(|i| log_m_of_path(p, batch.path(i), &batch.times, batch.dim))
        .collect();
    if let Some(c) = c_bound {
        let bound = c * batch.horizon;
        for (i, &l) in logs.iter().enumerate() {
            if l.is_finite() && l > bound + 1e-9 * (1.0 + bound.abs()) {
                return Err(StochasticError::BoundViolation { path: i, log_m: l, bound });
            }
        }
    }
    PathWeights::from_logs(logs)
}

/// Girsanov weight `Z_t` computed both as the Ito sum and through the
/// identity `Z_t = e^{F(X_0) - F(X_t)} M_t`.
#[derive(Debug, Clone, Serialize)]
pub struct ZWeights {
    pub ito: PathWeights,
    pub identity: PathWeights,
}

fn log_z_ito(p: &Potential, path: &[f64], times: &[f64], dim: usize, g: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for (i, w) in times.windows(2).enumerate() {
        let h = w[1] - w[0];
        let cur = &path[i * dim..(i + 1) * dim];
        let next = &path[(i + 1) * dim..(i + 2) * dim];
        p.grad_fast(cur, g);
        let mut dot = 0.0;
        let mut sq = 0.0;
        for k in 0..dim {
            dot += g[k] * (next[k] - cur[k]);
            sq += g[k] * g[k];
        }
        acc -= dot + 0.5 * sq * h;
    }
    acc
}

pub fn weight_z(p: &Potential, batch: &PathBatch) -> Result<ZWeights, StochasticError> {
    let m = weight_m(p, batch, None)?;
    let dim = batch.dim;
    let last = batch.n_points() - 1;
    let mut g = vec![0.0; dim];
    let mut ito = Vec::with_capacity(batch.n_paths);
    let mut ident = Vec::with_capacity(batch.n_paths);
    for i in 0..batch.n_paths {
        let path = batch.path(i);
        ito.push(log_z_ito(p, path, &batch.times, dim, &mut g));
        ident.push(p.value_fast(batch.point(i, 0)) - p.value_fast(batch.point(i, last)) + m.log_values[i]);
    }
    Ok(ZWeights {
        ito: PathWeights::from_logs(ito)?,
        identity: PathWeights::from_logs(ident)?,
    })
}

/// Store `log M_t` and the Ito form of `log Z_t` on the batch.
pub fn attach_weights(p: &Potential, batch: &mut PathBatch) -> Result<(), StochasticError> {
    let z = weight_z(p, batch)?;
    batch.log_m = Some(weight_m(p, batch, None)?.log_values);
    batch.log_z = Some(z.ito.log_values);
    Ok(())
}

fn check_point(p: &Potential, x: &[f64], t: f64) -> Result<(), StochasticError> {
    if x.len() != p.dim() {
        return Err(PotentialError::DimensionMismatch {
            expected: p.dim(),
            got: x.len(),
        }
        .into());
    }
    if !(t > 0.0) {
        return Err(StochasticError::Precondition("horizon must be positive".into()));
    }
    Ok(())
}

/// Streaming `log M_t` along one path.
fn stream_log_m(p: &Potential, x: &[f64], grid: &[f64], inc: &mut Increments) -> (f64, Vec<f64>) {
    let mut acc = 0.0;
    let mut w_prev = p.well_fast(x);
    let mut end = x.to_vec();
    walk(x, grid, inc, |_, next, h| {
        let w_next = p.well_fast(next);
        acc -= 0.5 * (w_prev + w_next) * h;
        w_prev = w_next;
        end.copy_from_slice(next);
        true
    });
    (acc, end)
}

/// `E_x[M_t]`, so that `P_t^F(e^F)(x) = e^{F(x)} E_x[M_t]`.
pub fn estimate_em(p: &Potential, x: &[f64], t: f64, cfg: &McConfig) -> Result<McEstimate, StochasticError> {
    check_point(p, x, t)?;
    let grid = time_grid(t, cfg.dt);
    run_paths(cfg, |i| {
        let mut inc = Increments::new(cfg, i);
        let (l, _) = stream_log_m(p, x, &grid, &mut inc);
        if l > LOG_OVERFLOW {
            f64::NAN
        } else {
            l.exp()
        }
    })
}

/// `E_x[Z_t]` with the Ito form of the weight; equals one for a martingale.
pub fn estimate_ez(p: &Potential, x: &[f64], t: f64, cfg: &McConfig) -> Result<McEstimate, StochasticError> {
    check_point(p, x, t)?;
    let grid = time_grid(t, cfg.dt);
    let dim = p.dim();
    run_paths(cfg, |i| {
        let mut inc = Increments::new(cfg, i);
        let mut g = vec![0.0; dim];
        let mut acc = 0.0;
        walk(x, &grid, &mut inc, |cur, next, h| {
            p.grad_fast(cur, &mut g);
            for k in 0..dim {
                acc -= g[k] * (next[k] - cur[k]) + 0.5 * g[k] * g[k] * h;
            }
            true
        });
        if acc > LOG_OVERFLOW {
            f64::NAN
        } else {
            acc.exp()
        }
    })
}

/// Root-mean-square of `log Z (Ito) - log Z (identity)` over paths.
pub fn girsanov_identity_rms(p: &Potential, x: &[f64], t: f64, cfg: &McConfig) -> Result<f64, StochasticError> {
    check_point(p, x, t)?;
    let grid = time_grid(t, cfg.dt);
    let dim = p.dim();
    let sq = run_paths(
        &McConfig {
            antithetic: false,
            ..cfg.clone()
        },
        |i| {
            let mut inc = Increments::new(cfg, i);
            let mut g = vec![0.0; dim];
            let mut ito = 0.0;
            let mut log_m = 0.0;
            let mut w_prev = p.well_fast(x);
            let mut end = x.to_vec();
            walk(x, &grid, &mut inc, |cur, next, h| {
                p.grad_fast(cur, &mut g);
                for k in 0..dim {
                    ito -= g[k] * (next[k] - cur[k]) + 0.5 * g[k] * g[k] * h;
                }
                let w_next = p.well_fast(next);
                log_m -= 0.5 * (w_prev + w_next) * h;
                w_prev = w_next;
                end.copy_from_slice(next);
                true
            });
            let ident = p.value_fast(x) - p.value_fast(&end) + log_m;
            (ito - ident).powi(2)
        },
    )?;
    Ok(sq.mean.sqrt())
}

/// `(P_t^F h)(x)` two ways: the Girsanov-weighted Brownian estimate
/// `e^{F(x)} E[h(X_t) e^{-F(X_t)} M_t]`, and a direct Euler simulation of
/// `dY = -grad F(Y) dt + dB`.
#[derive(Debug, Clone, Serialize)]
pub struct PerturbedExpectation {
    pub girsanov: McEstimate,
    pub sde: McEstimate,
    /// `|difference| / sqrt(se_1^2 + se_2^2)`
    pub joint_z: f64,
}

pub fn perturbed_expectation(
    p: &Potential,
    h: &Expr,
    x: &[f64],
    t: f64,
    cfg: &McConfig,
) -> Result<PerturbedExpectation, StochasticError> {
    check_point(p, x, t)?;
    if h.arity() > p.dim() {
        return Err(PotentialError::VariableOutOfRange {
            index: h.arity(),
            dim: p.dim(),
            position: 0,
        }
        .into());
    }
    let tape = h.compile();
    let grid = time_grid(t, cfg.dt);
    let f0 = p.value_fast(x);
    let girsanov = run_paths(cfg, |i| {
        let mut inc = Increments::new(cfg, i);
        let (log_m, end) = stream_log_m(p, x, &grid, &mut inc);
        let lw = f0 - p.value_fast(&end) + log_m;
        if lw > LOG_OVERFLOW {
            f64::NAN
        } else {
            tape.eval(&end) * lw.exp()
        }
    })?;
    // Independent noise so the two estimators can be compared with a joint
    // sigma. No antithetic pairs: for linear drift they cancel the noise
    // exactly and the interval would no longer cover the Euler bias.
    let sde_cfg = McConfig {
        seed: cfg.seed ^ 0x9e37_79b9_7f4a_7c15,
        antithetic: false,
        ..cfg.clone()
    };
    let sde = run_paths(&sde_cfg, |i| {
        euler_endpoint(p, x, &grid, &mut Increments::new(&sde_cfg, i))
            .map(|y| tape.eval(&y))
            .unwrap_or(f64::NAN)
    })?;
    let joint_z = (girsanov.mean - sde.mean).abs()
        / (girsanov.std_error.powi(2) + sde.std_error.powi(2)).sqrt().max(f64::MIN_POSITIVE);
    Ok(PerturbedExpectation { girsanov, sde, joint_z })
}

/// Euler-Maruyama for `dY = -grad F(Y) dt + dB`; `None` on explosion.
fn euler_endpoint(p: &Potential, x: &[f64], grid: &[f64], inc: &mut Increments) -> Option<Vec<f64>> {
    let dim = x.len();
    let mut y = x.to_vec();
    let mut g = vec![0.0; dim];
    let mut db = vec![0.0; dim];
    for w in grid.windows(2) {
        let h = w[1] - w[0];
        p.grad_fast(&y, &mut g);
        inc.fill(h, &mut db);
        let mut r2 = 0.0;
        for k in 0..dim {
            y[k] += -g[k] * h + db[k];
            r2 += y[k] * y[k];
        }
        if !(r2.sqrt() <= EXPLOSION_RADIUS) {
            return None;
        }
    }
    Some(y)
}

/// Exponential decay rate of the stationary autocovariance of `h(Y)`.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxationFit {
    pub lags: Vec<f64>,
    pub autocovariance: Vec<f64>,
    pub rate: f64,
}

/// Fit `Cov(h(Y_0), h(Y_s)) ~ C e^{-rate s}` from Euler paths started at `x`
/// and run for `burn_in` before the first observation.
pub fn relaxation_rate(
    p: &Potential,
    h: &Expr,
    x: &[f64],
    burn_in: f64,
    lags: &[f64],
    cfg: &McConfig,
) -> Result<RelaxationFit, StochasticError> {
    check_point(p, x, burn_in)?;
    if lags.len() < 2 || lags.windows(2).any(|w| w[1] <= w[0]) || lags[0] <= 0.0 {
        return Err(StochasticError::Precondition("lags must be positive and increasing".into()));
    }
    let tape = h.compile();
    let cfg = McConfig {
        antithetic: false,
        ..cfg.clone()
    };
    cfg.validate()?;
    let dim = p.dim();
    let burn = time_grid(burn_in, cfg.dt);
    let rows: Vec<Option<Vec<f64>>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| {
            let mut inc = Increments::new(&cfg, i);
            let mut y = euler_endpoint(p, x, &burn, &mut inc)?;
            let mut vals = vec![tape.eval(&y)];
            let mut prev = 0.0;
            for &lag in lags {
                let grid = time_grid(lag - prev, cfg.dt);
                y = euler_endpoint(p, &y, &grid, &mut inc)?;
                vals.push(tape.eval(&y));
                prev = lag;
            }
            debug_assert_eq!(y.len(), dim);
            Some(vals)
        })
        .collect();
    let rows: Vec<Vec<f64>> = rows.into_iter().flatten().collect();
    let excluded = cfg.n_paths - rows.len();
    if excluded as f64 > MAX_EXCLUSION_RATE * cfg.n_paths as f64 {
        return Err(StochasticError::ExclusionRate {
            excluded,
            total: cfg.n_paths,
        });
    }
    let m = rows.len() as f64;
    let mean = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>() / m;
    let m0 = mean(0);
    let autocov: Vec<f64> = (1..=lags.len())
        .map(|j| {
            let mj = mean(j);
            rows.iter().map(|r| (r[0] - m0) * (r[j] - mj)).sum::<f64>() / (m - 1.0)
        })
        .collect();
    // least squares slope of log autocovariance against lag
    let pts: Vec<(f64, f64)> = lags
        .iter()
        .zip(&autocov)
        .filter(|(_, c)| **c > 0.0)
        .map(|(l, c)| (*l, c.ln()))
        .collect();
    let rate = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        -(n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        f64::NAN
    };
    Ok(RelaxationFit {
        lags: lags.to_vec(),
        autocovariance: autocov,
        rate,
    })
}

/// Normalized value `F(x) + s`; requires the normalization shift.
fn normalized(p: &Potential, x: &[f64]) -> Result<f64, StochasticError> {
    let s = p
        .normalization_shift()
        .ok_or_else(|| StochasticError::Precondition("potential has no normalization shift".into()))?;
    Ok(p.value(x)? + s)
}

/// Right-hand side of the Well-Method bound on `E_x[M_t]`.
///
/// * `W(x) > 0`, `F(x) > 0`: `e^{-eps t W(x)} + e^{ct} e^{-(1-eps) F(x)}`
/// * `W(x) <= 0`: `e^{ct} e^{-eps t W(x)}`
/// * `F(x) < 0 < W(x)`: `e^{ct}`, the trivial bound from `M_t <= e^{ct}`
///
/// `F` is normalized, `c` is the constant in `W >= -c`.
pub fn well_bound_47(p: &Potential, x: &[f64], t: f64, eps: f64, c: f64) -> Result<f64, StochasticError> {
    check_point(p, x, t)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(StochasticError::Precondition("eps must lie in (0, 1)".into()));
    }
    let f = normalized(p, x)?;
    if f.abs() < LAMBDA_ZERO_TOL {
        return Err(PotentialError::UndefinedLambda { value: f }.into());
    }
    let w = crate::potential::well_term(p, x)?;
    let ect = (c * t).exp();
    Ok(if w <= 0.0 {
        ect * (-eps * t * w).exp()
    } else if f > 0.0 {
        (-eps * t * w).exp() + ect * (-(1.0 - eps) * f).exp()
    } else {
        ect
    })
}

/// Stopping rules for [`exit_time_prob`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ExitRule {
    /// First `s > 0` with `W(X_s) >= 2 lambda(x) F(x)`; `tau = 0` when `lambda(x) <= 0`.
    WellDoubling,
    /// First `s > 0` with `W(X_s) <= eps W(x)` or `F(X_s) <= eps F(x)`.
    WellEscape { eps: f64 },
    /// First `s > 0` with `|X_s| >= radius`.
    Box { radius: f64 },
}

/// `P_x(tau > t)` with discrete monitoring on the Brownian time grid.
pub fn exit_time_prob(
    p: &Potential,
    x: &[f64],
    t: f64,
    rule: ExitRule,
    cfg: &McConfig,
) -> Result<McEstimate, StochasticError> {
    check_point(p, x, t)?;
    let grid = time_grid(t, cfg.dt);
    match rule {
        ExitRule::WellDoubling => {
            let f = normalized(p, x)?;
            if f.abs() < LAMBDA_ZERO_TOL {
                return Err(PotentialError::UndefinedLambda { value: f }.into());
            }
            let w = crate::potential::well_term(p, x)?;
            if w / f <= 0.0 {
                return Ok(McEstimate::exact(0.0, cfg.n_paths));
            }
            // lambda(x) F(x) = W(x)
            let threshold = 2.0 * w;
            survival(cfg, &grid, x, |y| p.well_fast(y) < threshold)
        }
        ExitRule::WellEscape { eps } => {
            let f = normalized(p, x)?;
            let w = crate::potential::well_term(p, x)?;
            let s = p.normalization_shift().unwrap_or(0.0);
            survival(cfg, &grid, x, |y| p.well_fast(y) > eps * w && p.value_fast(y) + s > eps * f)
        }
        ExitRule::Box { radius } => {
            survival(cfg, &grid, x, |y| y.iter().map(|v| v * v).sum::<f64>() < radius * radius)
        }
    }
}

fn survival<S>(cfg: &McConfig, grid: &[f64], x: &[f64], inside: S) -> Result<McEstimate, StochasticError>
where
    S: Fn(&[f64]) -> bool + Sync,
{
    run_paths(cfg, |i| {
        let mut inc = Increments::new(cfg, i);
        let mut alive = true;
        walk(x, grid, &mut inc, |_, next, _| {
            alive = inside(next);
            alive
        });
        if alive {
            1.0
        } else {
            0.0
        }
    })
}

/// Brownian survival in `(-A, A)` for N = 1 with a Brownian-bridge
/// correction: each step contributes the conditional probability that the
/// bridge between the grid points stays inside, so the estimate targets the
/// continuously monitored probability.
pub fn box_survival_bridge(a: f64, t: f64, cfg: &McConfig) -> Result<McEstimate, StochasticError> {
    if !(a > 0.0 && t > 0.0) {
        return Err(StochasticError::Precondition("A and t must be positive".into()));
    }
    let grid = time_grid(t, cfg.dt);
    run_paths(cfg, |i| {
        let mut inc = Increments::new(cfg, i);
        let mut weight = 1.0;
        walk(&[0.0], &grid, &mut inc, |cur, next, h| {
            let (u, v) = (cur[0], next[0]);
            if v.abs() >= a {
                weight = 0.0;
                return false;
            }
            let up = (-2.0 * (a - u) * (a - v) / h).exp();
            let down = (-2.0 * (a + u) * (a + v) / h).exp();
            weight *= (1.0 - up - down).max(0.0);
            weight > 0.0
        });
        weight
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BoxExit {
    /// Exact for N = 1; for N > 1 the product lower bound through the cube of
    /// half-side `A / sqrt(N)`.
    pub probability: f64,
    pub exact: bool,
    /// Rate constant: `pi^2/8` for N = 1 (sharp), `N^2 pi^2 / 8` from the
    /// product bound otherwise (not sharp for the ball).
    pub theta_hat: f64,
    /// `exp(-theta_hat t / A^2)`
    pub lower_bound: f64,
    /// `probability >= lower_bound (1 - 1e-3)`, checked when `t / A^2 >= 1`.
    pub bound_holds: Option<bool>,
}

/// `P(sup_{s <= t} |B_s| < A)` for one-dimensional Brownian motion.
pub fn box_probability_1d(a: f64, t: f64) -> f64 {
    let tau = t / (a * a);
    if tau <= 0.0 {
        return 1.0;
    }
    if tau >= 0.1 {
        let mut sum = 0.0;
        for k in 0..10_000 {
            let m = (2 * k + 1) as f64;
            let term = (-m * m * THETA_1 * tau).exp() / m;
            sum += if k % 2 == 0 { term } else { -term };
            if term < 1e-16 {
                break;
            }
        }
        (4.0 / std::f64::consts::PI * sum).clamp(0.0, 1.0)
    } else {
        // method of images: sum_k (-1)^k [Phi((2k+1)/sqrt(tau)) - Phi((2k-1)/sqrt(tau))]
        let root = tau.sqrt();
        let phi = |z: f64| 0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2));
        let mut sum = 0.0;
        for k in -20i32..=20 {
            let term = phi((2 * k + 1) as f64 / root) - phi((2 * k - 1) as f64 / root);
            sum += if k % 2 == 0 { term } else { -term };
        }
        sum.clamp(0.0, 1.0)
    }
}

pub fn exit_prob_box(a: f64, t: f64, dim: usize) -> Result<BoxExit, StochasticError> {
    if !(a > 0.0 && t > 0.0) || dim == 0 {
        return Err(StochasticError::Precondition("A, t and N must be positive".into()));
    }
    let n = dim as f64;
    let (probability, exact, theta_hat) = if dim == 1 {
        (box_probability_1d(a, t), true, THETA_1)
    } else {
        (box_probability_1d(a / n.sqrt(), t).powi(dim as i32), false, n * n * THETA_1)
    };
    let tau = t / (a * a);
    let lower_bound = (-theta_hat * tau).exp();
    Ok(BoxExit {
        probability,
        exact,
        theta_hat,
        lower_bound,
        bound_holds: (tau >= 1.0).then_some(probability >= lower_bound * (1.0 - 1e-3)),
    })
}

/// `Z^{-1} int e^{(p-2)F(x)} (E_x[M_t])^p dx`, the condition that
/// `P_t^F(e^F)` lies in `L^p(nu_F)`. The inner expectation is estimated by
/// Monte Carlo at every quadrature node with shared Brownian increments.
pub fn lp_condition_37(
    p: &Potential,
    t: f64,
    pexp: f64,
    outer: &QuadratureConfig,
    cfg: &McConfig,
) -> Result<IntegralResult, StochasticError> {
    if !(pexp > 2.0) {
        return Err(StochasticError::Precondition("p must exceed 2".into()));
    }
    cfg.validate()?;
    let z = quadrature::normalization(p, outer)?;
    if !z.is_finite() {
        return Err(StochasticError::Precondition("exp(-2F) is not integrable".into()));
    }
    let log_z = z.log_value;
    let failed = std::sync::atomic::AtomicUsize::new(0);
    let nodes = std::sync::atomic::AtomicUsize::new(0);
    let worst_rel = std::sync::Mutex::new(0.0f64);
    let log_g = |x: &[f64]| {
        nodes.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        match estimate_em(p, x, t, cfg) {
            Ok(e) if e.mean > 0.0 => {
                let rel = e.std_error / e.mean;
                let mut w = worst_rel.lock().expect("not poisoned");
                *w = w.max(rel);
                (pexp - 2.0) * p.value_fast(x) + pexp * e.mean.ln() - log_z
            }
            Ok(_) => f64::NEG_INFINITY,
            Err(_) => {
                failed.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                f64::NAN
            }
        }
    };
    let mut res = quadrature::integrate_log(&log_g, p.dim(), outer)?;
    let nodes = nodes.into_inner().max(1);
    let failed = failed.into_inner();
    if failed as f64 > 0.05 * nodes as f64 && res.verdict == Verdict::Finite {
        res.verdict = Verdict::Inconclusive;
        res.value = None;
        res.error_estimate = f64::INFINITY;
    }
    if let Some(v) = res.value {
        let rel = worst_rel.into_inner().expect("not poisoned");
        res.error_estimate += v * pexp * rel;
    }
    Ok(res)
}

/// MC estimate of `E_y[M_t]` next to the displayed lower bound for the
/// `beta = -2` oscillating family.
#[derive(Debug, Clone, Serialize)]
pub struct WindowLowerBound {
    pub estimate: McEstimate,
    pub bound: f64,
    pub holds: bool,
}

/// `E_y[M_t] >= e^{(t/2)((1-eps) k^{1/2} - c^2)} e^{-4 theta t k}` for `y` in
/// the window `[x_k + k^{-1/2}/2, x_k + 3 k^{-1/2}/2]`, `x_k = 2 k pi`.
pub fn lower_bound_56(
    p: &Potential,
    y: f64,
    t: f64,
    k: u32,
    eps: f64,
    c: f64,
    cfg: &McConfig,
) -> Result<WindowLowerBound, StochasticError> {
    if k < 10 {
        return Err(StochasticError::Precondition(format!("window index k = {k} below 10")));
    }
    let kf = k as f64;
    let xk = 2.0 * std::f64::consts::PI * kf;
    let (lo, hi) = (xk + 0.5 / kf.sqrt(), xk + 1.5 / kf.sqrt());
    if y < lo - 1e-12 || y > hi + 1e-12 {
        return Err(StochasticError::Precondition(format!("y = {y} outside window [{lo}, {hi}]")));
    }
    let estimate = estimate_em(p, &[y], t, cfg)?;
    let bound = (0.5 * t * ((1.0 - eps) * kf.sqrt() - c * c)).exp() * (-4.0 * THETA_1 * t * kf).exp();
    let holds = estimate.mean + 3.0 * estimate.std_error >= bound;
    Ok(WindowLowerBound { estimate, bound, holds })
}

const DUMP_MAGIC: &[u8; 8] = b"BZPATHS1";

/// Write a batch as: magic `BZPATHS1`, `u64 n_paths`, `u64 n_points`,
/// `u64 dim`, `f64 dt`, `u64 seed`, `f64 horizon`, then the positions as
/// little-endian `f64` in path-major order.
pub fn write_path_dump<W: Write>(batch: &PathBatch, mut w: W) -> Result<(), StochasticError> {
    let io = |e: std::io::Error| StochasticError::Dump(e.to_string());
    w.write_all(DUMP_MAGIC).map_err(io)?;
    for v in [batch.n_paths as u64, batch.n_points() as u64, batch.dim as u64] {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.write_all(&batch.dt.to_le_bytes()).map_err(io)?;
    w.write_all(&batch.seed.to_le_bytes()).map_err(io)?;
    w.write_all(&batch.horizon.to_le_bytes()).map_err(io)?;
    let mut buf = Vec::with_capacity(batch.positions.len() * 8);
    for v in &batch.positions {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)?;
    Ok(())
}

pub fn read_path_dump<R: Read>(mut r: R) -> Result<PathBatch, StochasticError> {
    let io = |e: std::io::Error| StochasticError::Dump(e.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != DUMP_MAGIC {
        return Err(StochasticError::Dump("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8], StochasticError> {
        r.read_exact(&mut word).map_err(io)?;
        Ok(word)
    };
    let n_paths = u64::from_le_bytes(next(&mut r)?) as usize;
    let n_points = u64::from_le_bytes(next(&mut r)?) as usize;
    let dim = u64::from_le_bytes(next(&mut r)?) as usize;
    let dt = f64::from_le_bytes(next(&mut r)?);
    let seed = u64::from_le_bytes(next(&mut r)?);
    let horizon = f64::from_le_bytes(next(&mut r)?);
    if dim == 0 || n_points < 2 {
        return Err(StochasticError::Dump("degenerate header".into()));
    }
    let count = n_paths
        .checked_mul(n_points)
        .and_then(|v| v.checked_mul(dim))
        .filter(|&v| v <= MAX_STORED)
        .ok_or_else(|| StochasticError::Dump("header sizes too large".into()))?;
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes).map_err(io)?;
    let positions: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let times = time_grid(horizon, dt);
    if times.len() != n_points {
        return Err(StochasticError::Dump("time grid does not match header".into()));
    }
    Ok(PathBatch {
        start: positions[..dim].to_vec(),
        horizon,
        dt,
        seed,
        times,
        dim,
        n_paths,
        positions,
        log_m: None,
        log_z: None,
    })
}
