use serde::Serialize;

use super::scan::{grid_scan, min_hessian_eigenvalue, GridScan, ScanBox};
use super::{Conclusion, CriteriaError, CriterionReport, CriterionVerdict, LsiConstants};
use crate::quadrature::{integrate_log, integrate_log_mc, normalization, QuadratureConfig, Verdict};
use crate::Potential;

// relative slack when comparing two scanned extrema
const SCAN_SLACK: f64 = 1e-9;

fn hessian_scan(p: &Potential, bx: &ScanBox) -> GridScan {
    grid_scan(p.dim(), bx, "min eig Hess F", |x| min_hessian_eigenvalue(p, x))
}

/// Uniform convexity `Hess F >= K Id`, `K > 0`, estimated on a grid.
pub fn check_bakry_emery(p: &Potential, bx: &ScanBox) -> CriterionReport {
    let mut r = CriterionReport::new("bakry_emery");
    let s = hessian_scan(p, bx);
    let k = s.min;
    r.witness("K", k).witness("argmin", s.argmin.clone());
    r.witness("shell_min", s.liminf_estimate).witness("interior_min", s.interior_min);
    let shell_ok = s.liminf_estimate >= s.interior_min - SCAN_SLACK * (1.0 + s.interior_min.abs());
    if !k.is_finite() {
        r.note("Hessian undefined on the whole grid");
    } else if k <= 0.0 {
        r.conclude(CriterionVerdict::Fails, Conclusion::None);
    } else if shell_ok {
        r.note("global convexity inferred from the grid; the outer shell is not less convex than the interior");
        r.conclude(CriterionVerdict::Holds, Conclusion::Tlsi);
    } else {
        r.note("curvature decreases toward the box boundary; K may not be a global bound");
    }
    r.scan_evidence(s);
    r
}

/// `Hess F >= -K Id` together with `∫ exp(eps |x|^2) dnu_F < inf` for some
/// `eps > K`. The box is scanned at radius R and R/2; a lower Hessian bound
/// that keeps dropping with the box is reported as growth.
pub fn check_wang(p: &Potential, bx: &ScanBox, cfg: &QuadratureConfig) -> Result<CriterionReport, CriteriaError> {
    let mut r = CriterionReport::new("wang");
    let full = hessian_scan(p, bx);
    let half = hessian_scan(p, &ScanBox::new(0.5 * bx.radius, bx.points_per_axis / 2 + 1));
    let k_full = (-full.min).max(0.0);
    let k_half = (-half.min).max(0.0);
    r.witness("K", k_full).witness("K_half_box", k_half);
    r.scan_evidence(full);
    if !k_full.is_finite() {
        r.note("Hessian undefined on the grid");
        return Ok(r);
    }
    if k_full > k_half + 1e-6 * (1.0 + k_half) {
        r.witness("K_growth", k_full / k_half.max(f64::MIN_POSITIVE));
        r.note("the curvature lower bound degrades as the box grows; no finite K can be certified");
        return Ok(r);
    }
    let z = normalization(p, cfg)?;
    if !z.is_finite() {
        r.note("nu_F is not normalizable");
        r.integral_evidence("normalization", z);
        return Ok(r);
    }
    let log_z = z.log_value;
    let mut best: Option<f64> = None;
    let mut last = None;
    for j in (0..=6).rev() {
        let eps = k_full + 8.0 / f64::powi(2.0, j);
        let log_g = |x: &[f64]| eps * x.iter().map(|v| v * v).sum::<f64>() - 2.0 * p.value_fast(x) - log_z;
        let res = if p.dim() >= 4 {
            let sigma = vec![1.0; p.dim()];
            integrate_log_mc(&log_g, &sigma, cfg)?
        } else {
            integrate_log(&log_g, p.dim(), cfg)?
        };
        let finite = res.is_finite();
        last = Some((eps, res));
        if !finite {
            // the integrand only grows with eps
            break;
        }
        best = Some(eps);
    }
    let divergent = last.as_ref().is_some_and(|(_, res)| res.verdict == Verdict::Divergent);
    if let Some((eps, res)) = last {
        r.integral_evidence(&format!("exp(eps|x|^2) at eps={eps}"), res);
    }
    if let Some(eps) = best {
        r.witness("eps", eps);
        r.conclude(CriterionVerdict::Holds, Conclusion::Tlsi);
    } else if divergent {
        r.conclude(CriterionVerdict::Fails, Conclusion::None);
    }
    Ok(r)
}

#[derive(Debug, Clone, Serialize)]
pub struct HolleyStroockPropagation {
    pub verdict: CriterionVerdict,
    /// `Osc(2G)` over the box.
    pub oscillation: f64,
    pub oscillation_half_box: f64,
    pub constants: Option<LsiConstants>,
    pub scan: GridScan,
}

/// Constants for `exp(-2(F + G))` from those of `exp(-2F)` when `G` is
/// bounded: the log-density ratio of the two probabilities is `-2G` up to a
/// constant, so the factor is `exp(Osc(2G))`.
pub fn propagate_holley_stroock(base: LsiConstants, g: &Potential, bx: &ScanBox) -> HolleyStroockPropagation {
    let scan = grid_scan(g.dim(), bx, "2G", |x| 2.0 * g.value_fast(x));
    let half = grid_scan(g.dim(), &ScanBox::new(0.5 * bx.radius, bx.points_per_axis / 2 + 1), "2G", |x| {
        2.0 * g.value_fast(x)
    });
    let osc = scan.max - scan.min;
    let osc_half = half.max - half.min;
    let bounded = osc.is_finite() && osc <= osc_half + 1e-3 * (1.0 + osc_half) && scan.undefined == 0;
    let constants = bounded.then(|| {
        let f = osc.exp();
        LsiConstants { a: base.a * f, b: base.b * f }
    });
    HolleyStroockPropagation {
        verdict: if bounded { CriterionVerdict::Holds } else { CriterionVerdict::Inconclusive },
        oscillation: osc,
        oscillation_half_box: osc_half,
        constants,
        scan,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx() -> ScanBox {
        ScanBox::with_spacing(1, 100.0, 0.01)
    }

    #[test]
    fn bakry_gaussian_and_quartic() {
        let r = check_bakry_emery(&Potential::parse("x^2", 1).unwrap(), &bx());
        assert!(r.holds());
        assert_eq!(r.real("K"), Some(2.0));
        let q = check_bakry_emery(&Potential::parse("x^4", 1).unwrap(), &bx());
        assert!(q.fails());
        assert_eq!(q.real("K"), Some(0.0));
    }

    #[test]
    fn bakry_example56_finds_negative_curvature() {
        let r = check_bakry_emery(&Potential::example56(-2.0), &bx());
        assert!(r.fails());
        let x = r.point("argmin").unwrap()[0];
        let f2 = 2.0 * x * x.sin() + 2.0 - 4.0 * x.cos();
        assert!(f2 < 0.0);
    }

    #[test]
    fn wang_cases() {
        let cfg = QuadratureConfig::default();
        let r = check_wang(&Potential::parse("x^2", 1).unwrap(), &bx(), &cfg).unwrap();
        assert!(r.holds(), "{r:?}");
        assert!(r.real("eps").unwrap() >= 1.0);
        let q = check_wang(&Potential::parse("x^4 - x^2", 1).unwrap(), &bx(), &cfg).unwrap();
        assert!(q.holds());
        assert!((q.real("K").unwrap() - 2.0).abs() < 1e-9);
        let e = check_wang(&Potential::example56(1.0), &bx(), &cfg).unwrap();
        assert_eq!(e.verdict, CriterionVerdict::Inconclusive);
        assert!(e.real("K_growth").unwrap() > 1.0);
    }

    #[test]
    fn holley_stroock_factors() {
        let base = LsiConstants::new(2.0, 0.0).unwrap();
        let zero = propagate_holley_stroock(base, &Potential::parse("0*x", 1).unwrap(), &bx());
        assert_eq!(zero.constants, Some(base));
        let s = propagate_holley_stroock(base, &Potential::parse("sin(x)", 1).unwrap(), &bx());
        assert!((s.oscillation - 4.0).abs() < 1e-3);
        let c = s.constants.unwrap();
        assert!((c.a / (2.0 * 4f64.exp()) - 1.0).abs() < 1e-3 && c.b == 0.0);
        let k = propagate_holley_stroock(LsiConstants::new(1.0, 3.0).unwrap(), &Potential::parse("7 + 0*x", 1).unwrap(), &bx());
        assert_eq!(k.constants, Some(LsiConstants { a: 1.0, b: 3.0 }));
        let u = propagate_holley_stroock(base, &Potential::parse("x", 1).unwrap(), &bx());
        assert_eq!(u.verdict, CriterionVerdict::Inconclusive);
        assert!(u.constants.is_none());
    }
}
