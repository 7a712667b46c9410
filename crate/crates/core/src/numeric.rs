//! Small numeric helpers shared across modules.

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum exp(l_i))`; `-inf` for an empty iterator.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let v: Vec<f64> = it.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    let s: Vec<f64> = v.iter().map(|l| (l - m).exp()).collect();
    m + pairwise_sum(&s).ln()
}

/// Pairwise summation, error O(log n) ulps.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Geometric grid `start, start*ratio, ...` up to and including `end`.
pub fn geometric(start: f64, ratio: f64, end: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut r = start;
    while r <= end * (1.0 + 1e-12) {
        out.push(r);
        r *= ratio;
    }
    out
}
