//! Sufficient and necessary criteria for LSI / SGP, each a pure function
//! `Potential -> CriterionReport`.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::quadrature::{IntegralResult, QuadratureError};
use crate::stochastic::StochasticError;

mod convexity;
mod example56;
mod scan;
mod tails;
mod well;

pub use convexity::{check_bakry_emery, check_wang, propagate_holley_stroock, HolleyStroockPropagation};
pub use example56::{example56_divergent_sum, verify_window_estimates_56, DivergentSum, WindowRow, WindowReport};
pub use scan::{doubling_radii, grid_scan, min_hessian_eigenvalue, shell_trace, GridScan, ScanBox, ShellStat};
pub use tails::{
    check_malrieu_roberto, check_remark54, check_sgp_1d, check_sgp_nd, MalrieuConfig, Remark54Config, ShellConfig,
};
pub use well::{
    check_cor_ls5, check_gong_wu, check_hypotheses, check_immediate_hyper, check_thm48, necessary_condition_thm410,
    HypothesesConfig, Thm410Config, WellConfig,
};

#[derive(Debug, Error)]
pub enum CriteriaError {
    #[error("criterion requires dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Potential(#[from] crate::potential::PotentialError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionVerdict {
    Holds,
    Fails,
    Inconclusive,
}

/// What a `holds` verdict establishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Conclusion {
    #[serde(rename = "none")]
    None,
    /// The standing assumptions H(F) plus Lyapunov control.
    #[serde(rename = "hypotheses-hf")]
    HypothesesHf,
    #[serde(rename = "SGP")]
    Sgp,
    #[serde(rename = "hyperbounded")]
    Hyperbounded,
    #[serde(rename = "DLSI")]
    Dlsi,
    #[serde(rename = "immediately-hyperbounded")]
    ImmediatelyHyperbounded,
    #[serde(rename = "ultracontractive")]
    Ultracontractive,
    #[serde(rename = "TLSI")]
    Tlsi,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Witness {
    Real(f64),
    Point(Vec<f64>),
    Flag(bool),
    Text(String),
}

impl From<f64> for Witness {
    fn from(v: f64) -> Self {
        Witness::Real(v)
    }
}
impl From<Vec<f64>> for Witness {
    fn from(v: Vec<f64>) -> Self {
        Witness::Point(v)
    }
}
impl From<bool> for Witness {
    fn from(v: bool) -> Self {
        Witness::Flag(v)
    }
}
impl From<&str> for Witness {
    fn from(v: &str) -> Self {
        Witness::Text(v.to_string())
    }
}
impl From<String> for Witness {
    fn from(v: String) -> Self {
        Witness::Text(v)
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Integral { label: String, result: IntegralResult },
    Scan { scan: GridScan },
    Shells { quantity: String, trace: Vec<ShellStat> },
    Report { report: Box<CriterionReport> },
    Note { text: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionReport {
    pub criterion: String,
    pub verdict: CriterionVerdict,
    pub conclusion: Conclusion,
    pub witnesses: BTreeMap<String, Witness>,
    pub evidence: Vec<Evidence>,
}

impl CriterionReport {
    pub fn new(criterion: &str) -> Self {
        CriterionReport {
            criterion: criterion.to_string(),
            verdict: CriterionVerdict::Inconclusive,
            conclusion: Conclusion::None,
            witnesses: BTreeMap::new(),
            evidence: Vec::new(),
        }
    }

    pub fn holds(&self) -> bool {
        self.verdict == CriterionVerdict::Holds
    }

    pub fn fails(&self) -> bool {
        self.verdict == CriterionVerdict::Fails
    }

    pub fn real(&self, key: &str) -> Option<f64> {
        match self.witnesses.get(key) {
            Some(Witness::Real(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn point(&self, key: &str) -> Option<&[f64]> {
        match self.witnesses.get(key) {
            Some(Witness::Point(v)) => Some(v),
            _ => None,
        }
    }

    pub fn flag(&self, key: &str) -> Option<bool> {
        match self.witnesses.get(key) {
            Some(Witness::Flag(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn integral(&self, label: &str) -> Option<&IntegralResult> {
        self.evidence.iter().find_map(|e| match e {
            Evidence::Integral { label: l, result } if l == label => Some(result),
            _ => None,
        })
    }

    pub fn notes(&self) -> impl Iterator<Item = &str> {
        self.evidence.iter().filter_map(|e| match e {
            Evidence::Note { text } => Some(text.as_str()),
            _ => None,
        })
    }

    pub(crate) fn witness(&mut self, key: &str, value: impl Into<Witness>) -> &mut Self {
        self.witnesses.insert(key.to_string(), value.into());
        self
    }

    pub(crate) fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.evidence.push(Evidence::Note { text: text.into() });
        self
    }

    pub(crate) fn integral_evidence(&mut self, label: &str, result: IntegralResult) -> &mut Self {
        self.evidence.push(Evidence::Integral { label: label.to_string(), result });
        self
    }

    pub(crate) fn scan_evidence(&mut self, scan: GridScan) -> &mut Self {
        self.evidence.push(Evidence::Scan { scan });
        self
    }

    pub(crate) fn shell_evidence(&mut self, quantity: &str, trace: Vec<ShellStat>) -> &mut Self {
        self.evidence.push(Evidence::Shells { quantity: quantity.to_string(), trace });
        self
    }

    pub(crate) fn conclude(&mut self, verdict: CriterionVerdict, conclusion: Conclusion) -> &mut Self {
        debug_assert!(verdict != CriterionVerdict::Holds || conclusion != Conclusion::None);
        self.verdict = verdict;
        self.conclusion = if verdict == CriterionVerdict::Holds { conclusion } else { Conclusion::None };
        self
    }
}

/// Constants `(a, b)` of `Ent(f^2) <= a E(f, f) + b`; `b = 0` is the tight case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsiConstants {
    pub a: f64,
    pub b: f64,
}

impl LsiConstants {
    pub fn new(a: f64, b: f64) -> Result<Self, CriteriaError> {
        if !(a > 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(CriteriaError::Invalid(format!("need a > 0 and b >= 0, got ({a}, {b})")));
        }
        Ok(LsiConstants { a, b })
    }

    pub fn is_tight(&self) -> bool {
        self.b == 0.0
    }
}

pub(crate) fn require_dim(p: &crate::Potential, n: usize) -> Result<(), CriteriaError> {
    if p.dim() != n {
        return Err(CriteriaError::Dimension { expected: n, got: p.dim() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holds_requires_conclusion_and_non_holds_clears_it() {
        let mut r = CriterionReport::new("x");
        r.conclude(CriterionVerdict::Fails, Conclusion::Tlsi);
        assert_eq!(r.conclusion, Conclusion::None);
        r.conclude(CriterionVerdict::Holds, Conclusion::Sgp);
        assert!(r.holds());
        assert_eq!(r.conclusion, Conclusion::Sgp);
    }

    #[test]
    fn report_json_shape() {
        let mut r = CriterionReport::new("bakry_emery");
        r.witness("K", 2.0).witness("argmin", vec![0.0]).note("n");
        r.conclude(CriterionVerdict::Holds, Conclusion::Tlsi);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["criterion"], "bakry_emery");
        assert_eq!(v["verdict"], "holds");
        assert_eq!(v["conclusion"], "TLSI");
        assert_eq!(v["witnesses"]["K"], 2.0);
        assert_eq!(v["evidence"][0]["kind"], "note");
    }

    #[test]
    fn lsi_constants_validate() {
        assert!(LsiConstants::new(2.0, 0.0).unwrap().is_tight());
        assert!(LsiConstants::new(0.0, 0.0).is_err());
        assert!(LsiConstants::new(1.0, -1.0).is_err());
    }
}
