//! Run configuration: a TOML file with one table per subcommand. Every key is
//! optional; command-line flags are applied on top of the file.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use boltzmann_core::criteria::{MalrieuConfig, Remark54Config, ShellConfig, Thm410Config, WellConfig};
use boltzmann_core::quadrature::QuadratureConfig;
use boltzmann_core::spectral::SpectralSchedule;
use boltzmann_core::stochastic::McConfig;
use boltzmann_core::Potential;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Criterion ids accepted in `[check] criteria`.
pub const CRITERIA: &[&str] = &[
    "hypotheses",
    "bakry_emery",
    "wang",
    "sgp_1d",
    "sgp_nd",
    "malrieu_roberto",
    "remark54",
    "thm48",
    "immediate_hyper",
    "gong_wu",
    "cor_ls5",
    "necessary_thm410",
];

/// Operations accepted in `[simulate] ops`.
pub const SIMULATE_OPS: &[&str] = &["estimate_em", "estimate_ez", "girsanov_rms", "perturbed", "well_bound", "box_exit"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialSpec,
    /// Overrides every Monte Carlo seed in the file when set.
    #[serde(alias = "rng_seed")]
    pub seed: Option<u64>,
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub check: CheckConfig,
    pub simulate: SimulateConfig,
    pub spectrum: SpectrumConfig,
    pub example56: Example56Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: PotentialSpec::default(),
            seed: None,
            format: OutputFormat::Json,
            out: None,
            check: CheckConfig::default(),
            simulate: SimulateConfig::default(),
            spectrum: SpectrumConfig::default(),
            example56: Example56Config::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialSpec {
    /// Expression in `x` (1D) or `x1..xN`.
    pub expression: Option<String>,
    /// Only `example56` is built in.
    pub builtin: Option<String>,
    pub beta: Option<f64>,
    pub dimension: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Empty runs every criterion that applies in the potential's dimension.
    pub criteria: Vec<String>,
    pub beta: f64,
    pub lambda: f64,
    pub rho: f64,
    pub eps: f64,
    pub betas: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Lyapunov function for the hypotheses check, default `|x|^2`.
    pub lyapunov: Option<String>,
    pub scan_radius: f64,
    pub scan_spacing: f64,
    pub well: WellConfig,
    pub shells: ShellConfig,
    pub malrieu: MalrieuConfig,
    pub remark54: Remark54Config,
    pub thm410: Thm410Config,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            criteria: Vec::new(),
            beta: 1.0,
            lambda: 1.0,
            rho: 1.0,
            eps: 0.5,
            betas: vec![0.25, 0.5, 1.0],
            lambdas: vec![0.5, 1.0, 2.0],
            lyapunov: None,
            scan_radius: 100.0,
            scan_spacing: 0.01,
            well: WellConfig::default(),
            shells: ShellConfig::default(),
            malrieu: MalrieuConfig::default(),
            remark54: Remark54Config::default(),
            thm410: Thm410Config::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub ops: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// Observable for `perturbed`.
    pub observable: String,
    pub mc: McConfig,
    /// `eps` of the Well-Method bound.
    pub well_eps: f64,
    /// Constant `c` in `W >= -c`; scanned when absent.
    pub well_c: Option<f64>,
    pub box_radius: f64,
    /// Step sizes of the Girsanov identity refinement study.
    pub rms_dts: Vec<f64>,
    /// Binary dump of the Brownian paths from the first point and time.
    pub dump_paths: Option<PathBuf>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            ops: vec!["estimate_em".into()],
            points: vec![vec![0.0]],
            times: vec![0.5],
            observable: "x".into(),
            mc: McConfig { n_paths: 20_000, ..McConfig::default() },
            well_eps: 0.5,
            well_c: None,
            box_radius: 1.0,
            rms_dts: vec![4e-3, 1e-3, 2.5e-4],
            dump_paths: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub schedule: SpectralSchedule,
    /// Bounded perturbation `G` for the Holley-Stroock comparison.
    pub perturbation: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Example56Config {
    pub betas: Vec<f64>,
    /// Exponents tried for the thm48 integral, largest first, at `lambda`.
    pub thm48_betas: Vec<f64>,
    pub lambda: f64,
    /// Exponent of the necessary-condition integral.
    pub thm410_beta: f64,
    pub thm48: WellConfig,
    pub malrieu: MalrieuConfig,
    pub shells: ShellConfig,
    pub thm410: Thm410Config,
    pub sum_q: f64,
    pub sum_eps: f64,
    pub sum_t: f64,
    pub sum_terms: usize,
    pub sum_bound: f64,
    /// Window indices for the `beta = -2` estimates, used when -2 is swept.
    pub window_k: Vec<u32>,
    pub window_eps: f64,
    /// Per-beta table; defaults to `<out stem>_table.csv` next to `out`.
    pub table: Option<PathBuf>,
}

impl Default for Example56Config {
    fn default() -> Self {
        Example56Config {
            betas: vec![0.0, 1.0, -1.0, 1.9, -1.9, -2.0, 2.0, 3.0],
            thm48_betas: vec![1.0, 0.25, 0.0625, 0.00390625],
            lambda: 1.0,
            thm410_beta: 1.0,
            thm48: WellConfig {
                quadrature: QuadratureConfig {
                    tolerance: 1e-6,
                    radii: (1..=12).map(|k| f64::powi(2.0, k)).collect(),
                    max_subdivisions: 20_000,
                    initial_panel_width: 0.5,
                    early_divergence: true,
                    ..QuadratureConfig::default()
                },
                ..WellConfig::default()
            },
            malrieu: MalrieuConfig::default(),
            shells: ShellConfig { r_max: 60.0 * PI, ..ShellConfig::default() },
            thm410: Thm410Config::default(),
            sum_q: 3.0,
            sum_eps: 0.5,
            sum_t: 1.0,
            sum_terms: 50,
            sum_bound: 1e12,
            window_k: (1..=10).map(|k| 10 * k).collect(),
            window_eps: 0.5,
            table: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Push the global seed into every Monte Carlo block.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.simulate.mc.seed = s;
            self.check.thm410.mc.seed = s;
            self.example56.thm410.mc.seed = s;
        }
    }

    pub fn build_potential(&self) -> Result<Potential, CliError> {
        let spec = &self.potential;
        let dim = spec.dimension.unwrap_or(1);
        if dim == 0 {
            return Err(CliError::Config("potential.dimension: must be at least 1".into()));
        }
        match (&spec.expression, &spec.builtin) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "potential: give either `expression` or `builtin`, not both".into(),
            )),
            (None, None) => Err(CliError::Config("potential: missing `expression` or `builtin`".into())),
            (Some(e), None) => {
                if spec.beta.is_some() {
                    return Err(CliError::Config("potential.beta: only used with a builtin".into()));
                }
                Potential::parse(e, dim).map_err(|err| CliError::Config(format!("potential.expression: {err}")))
            }
            (None, Some(b)) => match b.as_str() {
                "example56" => {
                    if dim != 1 {
                        return Err(CliError::Config("potential.dimension: example56 is one-dimensional".into()));
                    }
                    let beta = spec
                        .beta
                        .ok_or_else(|| CliError::Config("potential.beta: required by builtin example56".into()))?;
                    if !beta.is_finite() {
                        return Err(CliError::Config("potential.beta: must be finite".into()));
                    }
                    Ok(Potential::example56(beta))
                }
                other => Err(CliError::Config(format!("potential.builtin: unknown builtin `{other}`"))),
            },
        }
    }

    /// Criteria to run for a potential of dimension `dim`, in declaration order.
    pub fn criteria_for(&self, dim: usize) -> Result<Vec<String>, CliError> {
        if self.check.criteria.is_empty() {
            let mut all = vec!["hypotheses", "bakry_emery", "wang"];
            if dim == 1 {
                all.extend(["sgp_1d", "malrieu_roberto", "remark54"]);
            } else {
                all.push("sgp_nd");
            }
            all.extend(["thm48", "immediate_hyper", "gong_wu", "cor_ls5"]);
            if dim == 1 {
                all.push("necessary_thm410");
            }
            return Ok(all.into_iter().map(String::from).collect());
        }
        for c in &self.check.criteria {
            if !CRITERIA.contains(&c.as_str()) {
                return Err(CliError::Config(format!("check.criteria: unknown criterion `{c}`")));
            }
            if dim != 1 && matches!(c.as_str(), "sgp_1d" | "malrieu_roberto") {
                return Err(CliError::Config(format!("check.criteria: `{c}` needs a one-dimensional potential")));
            }
        }
        Ok(self.check.criteria.clone())
    }

    pub fn validate_simulate(&self) -> Result<(), CliError> {
        let s = &self.simulate;
        for op in &s.ops {
            if !SIMULATE_OPS.contains(&op.as_str()) {
                return Err(CliError::Config(format!("simulate.ops: unknown operation `{op}`")));
            }
        }
        if s.ops.is_empty() {
            return Err(CliError::Config("simulate.ops: empty".into()));
        }
        if s.points.is_empty() || s.times.is_empty() {
            return Err(CliError::Config("simulate.points / simulate.times: empty".into()));
        }
        if s.times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(CliError::Config("simulate.times: must be positive".into()));
        }
        s.mc.validate().map_err(|e| CliError::Config(format!("simulate.mc: {e}")))
    }

    pub fn validate_example56(&self) -> Result<(), CliError> {
        let e = &self.example56;
        if e.betas.is_empty() {
            return Err(CliError::Config("example56.betas: empty beta list".into()));
        }
        if e.betas.iter().any(|b| !b.is_finite()) {
            return Err(CliError::Config("example56.betas: must be finite".into()));
        }
        if e.thm48_betas.is_empty() || e.thm48_betas.iter().any(|b| !(*b > 0.0)) {
            return Err(CliError::Config("example56.thm48_betas: need positive exponents".into()));
        }
        if !(e.lambda > 0.0 && e.thm410_beta > 0.0) {
            return Err(CliError::Config("example56.lambda / thm410_beta: must be positive".into()));
        }
        if e.sum_terms == 0 || !(e.sum_bound > 0.0) {
            return Err(CliError::Config("example56.sum_terms / sum_bound: must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.format, OutputFormat::Json);
        assert_eq!(c.example56.betas.len(), 8);
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let e = RunConfig::from_toml("[check]\ncriterion = [\"x\"]\n").unwrap_err();
        assert!(e.to_string().contains("criterion"), "{e}");
    }

    #[test]
    fn potential_spec() {
        let mut c = RunConfig::from_toml("[potential]\nbuiltin = \"example56\"\nbeta = -2.0\n").unwrap();
        let p = c.build_potential().unwrap();
        assert!((p.value_fast(&[1.0]) - (1.0 - 2.0 * 1f64.sin())).abs() < 1e-15);
        c.potential.builtin = Some("nope".into());
        assert!(c.build_potential().unwrap_err().to_string().contains("potential.builtin"));
        c.potential.builtin = None;
        c.potential.beta = None;
        c.potential.expression = Some("x^".into());
        assert!(c.build_potential().unwrap_err().to_string().contains("potential.expression"));
    }

    #[test]
    fn criteria_lists() {
        let mut c = RunConfig::default();
        assert!(c.criteria_for(1).unwrap().contains(&"malrieu_roberto".to_string()));
        assert!(c.criteria_for(2).unwrap().contains(&"sgp_nd".to_string()));
        c.check.criteria = vec!["thm49".into()];
        assert!(c.criteria_for(1).unwrap_err().to_string().contains("check.criteria"));
    }

    #[test]
    fn seed_reaches_every_block() {
        let mut c = RunConfig { seed: Some(7), ..RunConfig::default() };
        c.apply_seed();
        assert_eq!(c.simulate.mc.seed, 7);
        assert_eq!(c.example56.thm410.mc.seed, 7);
    }
}
