use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::Potential;

const CHUNK: usize = 4096;
const SHELL_FRACTION: f64 = 0.8;
const MAX_RAY_SAMPLES: usize = 4000;
const RANDOM_RAYS: usize = 32;

/// The box `[-radius, radius]^N` sampled with `points_per_axis` equispaced
/// nodes per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanBox {
    pub radius: f64,
    pub points_per_axis: usize,
}

impl ScanBox {
    pub fn new(radius: f64, points_per_axis: usize) -> Self {
        ScanBox { radius, points_per_axis: points_per_axis.max(2) }
    }

    /// Spacing `h` in 1D; in higher dimensions the node count is capped at
    /// roughly 2e5 (odd per axis so the origin is a node).
    pub fn with_spacing(dim: usize, radius: f64, h: f64) -> Self {
        let fine = (2.0 * radius / h).round() as usize + 1;
        let n = if dim == 1 {
            fine
        } else {
            let cap = (2.0e5f64).powf(1.0 / dim as f64).floor() as usize;
            fine.min(cap.max(5))
        };
        ScanBox::new(radius, n | 1)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.points_per_axis - 1) as f64
    }

    fn total(&self, dim: usize) -> usize {
        self.points_per_axis.pow(dim as u32)
    }

    fn node(&self, mut idx: usize, out: &mut [f64]) {
        let h = self.spacing();
        for c in out.iter_mut() {
            *c = -self.radius + h * (idx % self.points_per_axis) as f64;
            idx /= self.points_per_axis;
        }
    }
}

/// Min / max of a scalar quantity over a [`ScanBox`].
#[derive(Debug, Clone, Serialize)]
pub struct GridScan {
    pub quantity: String,
    pub radius: f64,
    pub points_per_axis: usize,
    pub spacing: f64,
    pub min: f64,
    pub max: f64,
    pub argmin: Vec<f64>,
    pub argmax: Vec<f64>,
    /// Minimum over nodes with `|x| >= 0.8 R`.
    pub liminf_estimate: f64,
    pub liminf_argmin: Vec<f64>,
    /// Maximum over nodes with `|x| >= 0.8 R`.
    pub limsup_estimate: f64,
    /// Minimum over nodes with `|x| < 0.8 R`.
    pub interior_min: f64,
    pub undefined: usize,
}

#[derive(Clone, Copy)]
struct Acc {
    min: (f64, usize),
    max: (f64, usize),
    shell_min: (f64, usize),
    shell_max: (f64, usize),
    inner_min: f64,
    undefined: usize,
}

impl Acc {
    fn empty() -> Self {
        Acc {
            min: (f64::INFINITY, usize::MAX),
            max: (f64::NEG_INFINITY, usize::MAX),
            shell_min: (f64::INFINITY, usize::MAX),
            shell_max: (f64::NEG_INFINITY, usize::MAX),
            inner_min: f64::INFINITY,
            undefined: 0,
        }
    }

    fn push(&mut self, v: f64, i: usize, in_shell: bool) {
        if v.is_nan() {
            self.undefined += 1;
            return;
        }
        if v < self.min.0 {
            self.min = (v, i);
        }
        if v > self.max.0 {
            self.max = (v, i);
        }
        if in_shell {
            if v < self.shell_min.0 {
                self.shell_min = (v, i);
            }
            if v > self.shell_max.0 {
                self.shell_max = (v, i);
            }
        } else if v < self.inner_min {
            self.inner_min = v;
        }
    }

    // chunks are merged in index order, so ties keep the first node
    fn merge(mut self, o: Acc) -> Acc {
        if o.min.0 < self.min.0 {
            self.min = o.min;
        }
        if o.max.0 > self.max.0 {
            self.max = o.max;
        }
        if o.shell_min.0 < self.shell_min.0 {
            self.shell_min = o.shell_min;
        }
        if o.shell_max.0 > self.shell_max.0 {
            self.shell_max = o.shell_max;
        }
        self.inner_min = self.inner_min.min(o.inner_min);
        self.undefined += o.undefined;
        self
    }
}

pub fn grid_scan<Q>(dim: usize, bx: &ScanBox, quantity: &str, q: Q) -> GridScan
where
    Q: Fn(&[f64]) -> f64 + Sync,
{
    let total = bx.total(dim);
    let shell_r2 = (SHELL_FRACTION * bx.radius).powi(2);
    let n_chunks = total.div_ceil(CHUNK);
    let partial: Vec<Acc> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Acc::empty();
            let mut x = vec![0.0; dim];
            for i in c * CHUNK..((c + 1) * CHUNK).min(total) {
                bx.node(i, &mut x);
                let r2: f64 = x.iter().map(|v| v * v).sum();
                acc.push(q(&x), i, r2 >= shell_r2);
            }
            acc
        })
        .collect();
    let acc = partial.into_iter().fold(Acc::empty(), Acc::merge);
    let at = |i: usize| {
        let mut x = vec![f64::NAN; dim];
        if i != usize::MAX {
            bx.node(i, &mut x);
        }
        x
    };
    GridScan {
        quantity: quantity.to_string(),
        radius: bx.radius,
        points_per_axis: bx.points_per_axis,
        spacing: bx.spacing(),
        min: acc.min.0,
        max: acc.max.0,
        argmin: at(acc.min.1),
        argmax: at(acc.max.1),
        liminf_estimate: acc.shell_min.0,
        liminf_argmin: at(acc.shell_min.1),
        limsup_estimate: acc.shell_max.0,
        interior_min: acc.inner_min,
        undefined: acc.undefined,
    }
}

/// Statistics of a quantity over the shell `0.8 R <= |x| <= R`.
#[derive(Debug, Clone, Serialize)]
pub struct ShellStat {
    pub inner: f64,
    pub outer: f64,
    pub min: f64,
    pub argmin: Vec<f64>,
    pub max: f64,
    pub argmax: Vec<f64>,
    pub samples: usize,
    pub undefined: usize,
}

/// `count` radii ending at `r_max`, each half the next.
pub fn doubling_radii(r_max: f64, count: usize) -> Vec<f64> {
    (0..count).rev().map(|k| r_max / f64::powi(2.0, k as i32)).collect()
}

fn ray_directions(dim: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; dim];
            d[i] = s;
            dirs.push(d);
        }
    }
    if dim <= 4 {
        let norm = (dim as f64).sqrt();
        for mask in 0..(1usize << dim) {
            dirs.push((0..dim).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 } / norm).collect());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1ab1e);
    for _ in 0..RANDOM_RAYS {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        dirs.push(v.into_iter().map(|a| a / n).collect());
    }
    dirs
}

/// One [`ShellStat`] per radius. In 1D the shell is sampled at spacing `h`;
/// in higher dimensions along a fixed set of rays (axes, diagonals and
/// pseudo-random directions), since a full shell grid is unaffordable.
pub fn shell_trace<Q>(dim: usize, radii: &[f64], h: f64, q: Q) -> Vec<ShellStat>
where
    Q: Fn(&[f64]) -> f64 + Sync,
{
    let dirs = if dim == 1 { vec![vec![1.0], vec![-1.0]] } else { ray_directions(dim) };
    radii
        .iter()
        .map(|&r| {
            let inner = SHELL_FRACTION * r;
            let m = (((r - inner) / h).ceil() as usize + 1).clamp(2, if dim == 1 { usize::MAX } else { MAX_RAY_SAMPLES });
            let per_ray: Vec<(Acc, usize)> = dirs
                .par_iter()
                .map(|d| {
                    let mut acc = Acc::empty();
                    let mut x = vec![0.0; dim];
                    for j in 0..m {
                        let rho = inner + (r - inner) * j as f64 / (m - 1) as f64;
                        for (xi, di) in x.iter_mut().zip(d) {
                            *xi = rho * di;
                        }
                        acc.push(q(&x), j, true);
                    }
                    (acc, m)
                })
                .collect();
            let mut best = ShellStat {
                inner,
                outer: r,
                min: f64::INFINITY,
                argmin: vec![f64::NAN; dim],
                max: f64::NEG_INFINITY,
                argmax: vec![f64::NAN; dim],
                samples: 0,
                undefined: 0,
            };
            let point = |d: &[f64], j: usize| {
                let rho = inner + (r - inner) * j as f64 / (m - 1) as f64;
                d.iter().map(|v| rho * v).collect::<Vec<f64>>()
            };
            for (d, (acc, n)) in dirs.iter().zip(per_ray) {
                best.samples += n;
                best.undefined += acc.undefined;
                if acc.min.0 < best.min {
                    best.min = acc.min.0;
                    best.argmin = point(d, acc.min.1);
                }
                if acc.max.0 > best.max {
                    best.max = acc.max.0;
                    best.argmax = point(d, acc.max.1);
                }
            }
            best
        })
        .collect()
}

/// Smallest eigenvalue of `Hess F(x)`.
pub fn min_hessian_eigenvalue(p: &Potential, x: &[f64]) -> f64 {
    let n = p.dim();
    match n {
        1 => p.hessian_entry_fast(0, 0, x),
        2 => {
            let a = p.hessian_entry_fast(0, 0, x);
            let b = p.hessian_entry_fast(0, 1, x);
            let d = p.hessian_entry_fast(1, 1, x);
            0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
        }
        _ => {
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| p.hessian_entry_fast(i, j, x));
            if m.iter().any(|v| !v.is_finite()) {
                return f64::NAN;
            }
            m.symmetric_eigenvalues().min()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_finds_extrema_in_box() {
        let bx = ScanBox::with_spacing(1, 10.0, 0.01);
        let s = grid_scan(1, &bx, "x^2", |x| x[0] * x[0] - 1.0);
        assert_eq!(s.min, -1.0);
        assert!(s.argmin[0].abs() < 1e-12);
        assert!((s.max - 99.0).abs() < 1e-9);
        assert!((s.liminf_estimate - 63.0).abs() < 0.05);
        assert!(s.argmax[0].abs() <= 10.0);
        assert_eq!(s.interior_min, -1.0);
    }

    #[test]
    fn scan_2d_and_nan_counting() {
        let bx = ScanBox::new(2.0, 41);
        let s = grid_scan(2, &bx, "r2", |x| if x[0] > 1.9 { f64::NAN } else { x[0] * x[0] + x[1] * x[1] });
        assert_eq!(s.min, 0.0);
        assert!(s.undefined > 0);
        assert!(s.argmin.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn shells_track_growth() {
        let t = shell_trace(1, &doubling_radii(64.0, 4), 0.01, |x| x[0] * x[0]);
        assert_eq!(t.len(), 4);
        assert!((t[3].min - (0.8f64 * 64.0).powi(2)).abs() < 1e-6);
        assert!(t.windows(2).all(|w| w[1].min > w[0].min));
        let t2 = shell_trace(3, &[10.0], 0.01, |x| x.iter().map(|v| v * v).sum());
        assert!((t2[0].min - 64.0).abs() < 1e-6 && (t2[0].max - 100.0).abs() < 1e-6);
    }

    #[test]
    fn hessian_min_eigenvalue() {
        let p = Potential::parse("x1^2 + 3*x2^2 + x1*x2", 2).unwrap();
        // [[2, 1], [1, 6]]
        let e = min_hessian_eigenvalue(&p, &[0.3, 0.1]);
        assert!((e - (4.0 - 5f64.sqrt())).abs() < 1e-12);
        let q = Potential::parse("x1^2 + x2^2 + 2*x3^2", 3).unwrap();
        assert!((min_hessian_eigenvalue(&q, &[1.0, 2.0, 3.0]) - 2.0).abs() < 1e-12);
    }
}
