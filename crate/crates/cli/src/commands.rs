use std::path::PathBuf;
use std::time::Instant;

use boltzmann_core::criteria::{self, CriteriaError, CriterionReport, CriterionVerdict, ScanBox, Witness};
use boltzmann_core::potential::parse_expr;
use boltzmann_core::quadrature::normalize;
use boltzmann_core::spectral::{holley_stroock_crosscheck, spectral_gap, SpectralError};
use boltzmann_core::stochastic::{self, McConfig, THETA_1};
use boltzmann_core::Potential;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{Example56Config, RunConfig};
use crate::report::{synthesize, Entry, Report, Synthesis, Timing};
use crate::CliError;

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name}: must be positive, got {v}")))
    }
}

fn scan_box(cfg: &RunConfig, dim: usize) -> ScanBox {
    ScanBox::with_spacing(dim, cfg.check.scan_radius, cfg.check.scan_spacing)
}

fn run_criterion(
    name: &str,
    p: &Potential,
    psi: Option<&Potential>,
    cfg: &RunConfig,
) -> Result<CriterionReport, CriteriaError> {
    let c = &cfg.check;
    match name {
        "hypotheses" => criteria::check_hypotheses(p, psi, &c.well),
        "bakry_emery" => Ok(criteria::check_bakry_emery(p, &scan_box(cfg, p.dim()))),
        "wang" => criteria::check_wang(p, &scan_box(cfg, p.dim()), &c.well.quadrature),
        "sgp_1d" => criteria::check_sgp_1d(p, &c.shells),
        "sgp_nd" => criteria::check_sgp_nd(p, &c.shells),
        "malrieu_roberto" => criteria::check_malrieu_roberto(p, &c.malrieu),
        "remark54" => criteria::check_remark54(p, &c.remark54),
        "thm48" => criteria::check_thm48(p, c.beta, c.lambda, &c.well),
        "immediate_hyper" => criteria::check_immediate_hyper(p, &c.betas, &c.lambdas, &c.well),
        "gong_wu" => criteria::check_gong_wu(p, c.rho, c.eps, &c.well),
        "cor_ls5" => criteria::check_cor_ls5(p, c.beta, c.lambda, c.rho, &c.well),
        "necessary_thm410" => criteria::necessary_condition_thm410(p, c.beta, c.lambda, &c.thm410),
        other => unreachable!("criterion {other} passed validation"),
    }
}

/// Run the configured criteria on the configured potential.
pub fn cmd_check(cfg: &RunConfig) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    let names = cfg.criteria_for(p.dim())?;
    let c = &cfg.check;
    for (name, v) in [("check.beta", c.beta), ("check.lambda", c.lambda), ("check.rho", c.rho), ("check.eps", c.eps)] {
        positive(name, v)?;
    }
    positive("check.scan_radius", c.scan_radius)?;
    positive("check.scan_spacing", c.scan_spacing)?;
    if c.betas.is_empty() || c.lambdas.is_empty() {
        return Err(CliError::Config("check.betas / check.lambdas: empty grid".into()));
    }
    for &v in c.betas.iter().chain(&c.lambdas) {
        positive("check.betas / check.lambdas", v)?;
    }
    let psi = match &c.lyapunov {
        Some(text) => Some(
            Potential::parse(text, p.dim()).map_err(|e| CliError::Config(format!("check.lyapunov: {e}")))?,
        ),
        None => None,
    };

    let mut rep = Report::new("check", cfg);
    let outcomes: Vec<(String, Result<CriterionReport, CriteriaError>, f64)> = names
        .par_iter()
        .map(|n| {
            let t0 = Instant::now();
            let r = run_criterion(n, &p, psi.as_ref(), cfg);
            (n.clone(), r, t0.elapsed().as_secs_f64())
        })
        .collect();
    let mut held = Vec::new();
    for (name, r, secs) in outcomes {
        rep.timings.push(Timing { stage: name.clone(), seconds: secs });
        match r {
            Ok(r) => {
                rep.results.push(Entry::criterion(None, &r));
                held.push((name, r));
            }
            Err(CriteriaError::Dimension { expected, got }) => {
                return Err(CliError::Config(format!(
                    "check.criteria: `{name}` needs dimension {expected}, the potential has {got}"
                )))
            }
            Err(e) => rep.results.push(Entry::error(name, e.to_string())),
        }
    }
    let refs: Vec<(String, &CriterionReport)> = held.iter().map(|(n, r)| (n.clone(), r)).collect();
    rep.synthesis.push(synthesize(p.label(), &refs));
    Ok(rep)
}

fn point_id(op: &str, x: &[f64], t: f64) -> String {
    let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
    format!("{op}/x=[{}]/t={t}", xs.join(","))
}

fn stochastic_entry<T: Serialize>(id: String, r: Result<T, stochastic::StochasticError>) -> Entry {
    match r {
        Ok(v) => Entry::new(id, "estimate", &v),
        Err(e) => Entry::error(id, e.to_string()),
    }
}

/// Run the configured stochastic estimators over every (point, time) pair.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<Report, CliError> {
    cfg.validate_simulate()?;
    let p = cfg.build_potential()?;
    let s = &cfg.simulate;
    if let Some(x) = s.points.iter().find(|x| x.len() != p.dim()) {
        return Err(CliError::Config(format!(
            "simulate.points: point {x:?} does not have dimension {}",
            p.dim()
        )));
    }
    let mc = &s.mc;
    let mut rep = Report::new("simulate", cfg);
    for op in &s.ops {
        let t0 = Instant::now();
        match op.as_str() {
            "estimate_em" | "estimate_ez" => {
                for x in &s.points {
                    for &t in &s.times {
                        let r = if op == "estimate_em" {
                            stochastic::estimate_em(&p, x, t, mc)
                        } else {
                            stochastic::estimate_ez(&p, x, t, mc)
                        };
                        rep.results.push(stochastic_entry(point_id(op, x, t), r));
                    }
                }
            }
            "girsanov_rms" => {
                if s.rms_dts.len() < 2 || s.rms_dts.iter().any(|d| !(*d > 0.0)) {
                    return Err(CliError::Config("simulate.rms_dts: need two or more positive steps".into()));
                }
                for x in &s.points {
                    for &t in &s.times {
                        let r: Result<Vec<f64>, _> = s
                            .rms_dts
                            .iter()
                            .map(|&dt| stochastic::girsanov_identity_rms(&p, x, t, &McConfig { dt, ..mc.clone() }))
                            .collect();
                        let r = r.map(|rms| {
                            let n = rms.len();
                            let slope = (rms[0].ln() - rms[n - 1].ln()) / (s.rms_dts[0].ln() - s.rms_dts[n - 1].ln());
                            json!({ "dts": s.rms_dts, "rms": rms, "slope": slope })
                        });
                        rep.results.push(stochastic_entry(point_id(op, x, t), r));
                    }
                }
            }
            "perturbed" => {
                let h = parse_expr(&s.observable, p.dim())
                    .map_err(|e| CliError::Config(format!("simulate.observable: {e}")))?;
                for x in &s.points {
                    for &t in &s.times {
                        let r = stochastic::perturbed_expectation(&p, &h, x, t, mc);
                        rep.results.push(stochastic_entry(point_id(op, x, t), r));
                    }
                }
            }
            "well_bound" => well_bound_entries(&p, cfg, &mut rep)?,
            "box_exit" => {
                positive("simulate.box_radius", s.box_radius)?;
                for &t in &s.times {
                    let series = stochastic::exit_prob_box(s.box_radius, t, p.dim());
                    let id = format!("box_exit/a={}/t={t}", s.box_radius);
                    let r = series.and_then(|series| {
                        let mc_est = if p.dim() == 1 {
                            Some(stochastic::box_survival_bridge(s.box_radius, t, mc)?)
                        } else {
                            None
                        };
                        Ok(json!({ "series": series, "bridge_mc": mc_est }))
                    });
                    rep.results.push(stochastic_entry(id, r));
                }
            }
            other => unreachable!("operation {other} passed validation"),
        }
        rep.timings.push(Timing { stage: op.clone(), seconds: t0.elapsed().as_secs_f64() });
    }
    if let Some(path) = &s.dump_paths {
        let batch = stochastic::simulate_brownian(&s.points[0], s.times[0], mc)
            .map_err(|e| CliError::Internal(format!("path dump: {e}")))?;
        let f = std::fs::File::create(path)
            .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", path.display())))?;
        stochastic::write_path_dump(&batch, std::io::BufWriter::new(f))
            .map_err(|e| CliError::Internal(format!("path dump: {e}")))?;
    }
    Ok(rep)
}

fn well_bound_entries(p: &Potential, cfg: &RunConfig, rep: &mut Report) -> Result<(), CliError> {
    let s = &cfg.simulate;
    if !(s.well_eps > 0.0 && s.well_eps < 1.0) {
        return Err(CliError::Config("simulate.well_eps: must lie in (0, 1)".into()));
    }
    let (pn, z) = match normalize(p, &cfg.check.well.quadrature) {
        Ok(v) => v,
        Err(e) => {
            rep.results.push(Entry::error("well_bound", e.to_string()));
            return Ok(());
        }
    };
    let c = match s.well_c {
        Some(c) => c,
        None => {
            let scan = criteria::grid_scan(p.dim(), &scan_box(cfg, p.dim()), "W", |x| p.well_fast(x));
            (-scan.min).max(0.0)
        }
    };
    let mut violations = 0usize;
    for x in &s.points {
        for &t in &s.times {
            let id = point_id("well_bound", x, t);
            let r = stochastic::well_bound_47(&pn, x, t, s.well_eps, c).and_then(|bound| {
                let est = stochastic::estimate_em(&pn, x, t, &s.mc)?;
                let dominated = est.mean <= bound + 3.0 * est.std_error;
                if !dominated {
                    violations += 1;
                }
                Ok(json!({ "bound": bound, "estimate": est, "dominated": dominated }))
            });
            rep.results.push(stochastic_entry(id, r));
        }
    }
    rep.results.push(Entry::new(
        "well_bound/summary",
        "estimate",
        &json!({ "c": c, "eps": s.well_eps, "log_z": z.log_value, "violations": violations }),
    ));
    Ok(())
}

/// Spectral gap of the ground-state Schrodinger operator, with the optional
/// bounded-perturbation comparison.
pub fn cmd_spectrum(cfg: &RunConfig) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    let map = |e: SpectralError| match e {
        SpectralError::NotNormalizable => {
            CliError::Config("potential: exp(-2F) is not normalizable, the spectrum is not defined".into())
        }
        SpectralError::Dimension(d) => {
            CliError::Config(format!("potential.dimension: the spectral solver is one-dimensional, got {d}"))
        }
        SpectralError::Invalid(m) => CliError::Config(format!("spectrum.schedule: {m}")),
        other => CliError::Internal(other.to_string()),
    };
    let sched = &cfg.spectrum.schedule;
    let mut rep = Report::new("spectrum", cfg);
    let gap = rep.time("spectral_gap", || spectral_gap(&p, sched)).map_err(map)?;
    rep.results.push(Entry::new("spectral_gap", "spectrum", &gap));
    if let Some(text) = &cfg.spectrum.perturbation {
        let g = Potential::parse(text, p.dim()).map_err(|e| CliError::Config(format!("spectrum.perturbation: {e}")))?;
        let hs = rep.time("holley_stroock", || holley_stroock_crosscheck(&p, &g, sched)).map_err(map)?;
        rep.results.push(Entry::new("holley_stroock", "spectrum", &hs));
    }
    Ok(rep)
}

/// One row of the beta sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Example56Row {
    pub beta: f64,
    pub malrieu_roberto: CriterionVerdict,
    pub sgp_nd: CriterionVerdict,
    /// Outermost point where the scanned `V_F` reached zero or below.
    pub sgp_dip_at: Option<f64>,
    pub sgp_dip_value: Option<f64>,
    pub thm48: CriterionVerdict,
    /// Exponent of the first finite thm48 integral, if any.
    pub thm48_beta: Option<f64>,
    pub thm48_log_integral: Option<f64>,
    pub necessary_thm410: Option<CriterionVerdict>,
    pub thm410_log_integral: Option<f64>,
    /// Number of terms until the divergent sum passes the bound.
    pub sum_terms_to_bound: Option<usize>,
    pub sum_log_last: Option<f64>,
    pub synthesis: String,
    pub cited: String,
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

fn example56_row(
    beta: f64,
    e: &Example56Config,
    sum: Option<&criteria::DivergentSum>,
) -> Result<(Example56Row, Vec<Entry>, Synthesis), CriteriaError> {
    let p = Potential::example56(beta);
    let scope = format!("beta={beta}");
    let mut entries = Vec::new();

    let mr = criteria::check_malrieu_roberto(&p, &e.malrieu)?;
    let sgp = criteria::check_sgp_nd(&p, &e.shells)?;
    let mut t48 = None;
    for &b in &e.thm48_betas {
        let r = criteria::check_thm48(&p, b, e.lambda, &e.thm48)?;
        let done = r.holds();
        t48 = Some(r);
        if done {
            break;
        }
    }
    let t48 = t48.expect("thm48_betas is non-empty");
    // A finite thm48 integral bounds the necessary-condition integral, so the
    // simulation is only needed when no exponent gave a finite value.
    let t410 = if t48.holds() {
        None
    } else {
        Some(criteria::necessary_condition_thm410(&p, e.thm410_beta, e.lambda, &e.thm410)?)
    };
    let use_sum = beta.abs() >= 2.0;
    let sum = sum.filter(|_| use_sum);
    let sum_hit = sum.and_then(|s| s.first_exceeding(e.sum_bound));

    let id = |name: &str| format!("{scope}/{name}");
    let synthesis = if mr.holds() && t48.holds() {
        Synthesis::new(&scope, "TLSI", vec![id("malrieu_roberto"), id("thm48")])
    } else if t410
        .as_ref()
        .is_some_and(|r| r.fails() && matches!(r.witnesses.get("dlsi_fails"), Some(Witness::Flag(true))))
        && sum_hit.is_some()
    {
        Synthesis::new(&scope, "DLSI fails", vec![id("necessary_thm410"), "example56_divergent_sum".into()])
    } else {
        let mut reps: Vec<(String, &CriterionReport)> =
            vec![(id("malrieu_roberto"), &mr), (id("sgp_nd"), &sgp), (id("thm48"), &t48)];
        if let Some(r) = &t410 {
            reps.push((id("necessary_thm410"), r));
        }
        synthesize(&scope, &reps)
    };

    let row = Example56Row {
        beta,
        malrieu_roberto: mr.verdict,
        sgp_nd: sgp.verdict,
        sgp_dip_at: sgp.point("dip_at").and_then(|v| v.first().copied()),
        sgp_dip_value: sgp.real("dip_value"),
        thm48: t48.verdict,
        thm48_beta: t48.holds().then(|| t48.real("beta")).flatten(),
        thm48_log_integral: finite(t48.real("log_integral")),
        necessary_thm410: t410.as_ref().map(|r| r.verdict),
        thm410_log_integral: finite(t410.as_ref().and_then(|r| r.real("log_integral"))),
        sum_terms_to_bound: sum_hit,
        sum_log_last: sum.and_then(|s| s.log_partial_sums.last().copied()),
        synthesis: synthesis.conclusion.clone(),
        cited: synthesis.cited.join(";"),
    };
    entries.push(Entry::criterion(Some(&scope), &mr));
    entries.push(Entry::criterion(Some(&scope), &sgp));
    entries.push(Entry::criterion(Some(&scope), &t48));
    if let Some(r) = &t410 {
        entries.push(Entry::criterion(Some(&scope), r));
    }
    Ok((row, entries, synthesis))
}

/// The beta sweep over x^2 + beta x sin(x). Returns the report and the per-beta table.
pub fn cmd_example56(cfg: &RunConfig) -> Result<(Report, Vec<Example56Row>), CliError> {
    cfg.validate_example56()?;
    let e = &cfg.example56;
    let mut rep = Report::new("example56", cfg);

    let sum = if e.betas.iter().any(|b| b.abs() >= 2.0) {
        let s = criteria::example56_divergent_sum(e.sum_q, e.sum_eps, e.sum_t, THETA_1, e.sum_terms)
            .map_err(|err| CliError::Config(format!("example56.sum_*: {err}")))?;
        rep.results.push(Entry::new("example56_divergent_sum", "estimate", &s));
        Some(s)
    } else {
        None
    };
    if e.betas.contains(&-2.0) {
        let w = rep
            .time("window_estimates", || criteria::verify_window_estimates_56(&e.window_k, e.window_eps))
            .map_err(|err| CliError::Config(format!("example56.window_k / window_eps: {err}")))?;
        rep.results.push(Entry::new("window_estimates", "estimate", &w));
    }

    let rows: Vec<(f64, f64, Result<_, CriteriaError>)> = e
        .betas
        .par_iter()
        .map(|&b| {
            let t0 = Instant::now();
            let r = example56_row(b, e, sum.as_ref());
            (b, t0.elapsed().as_secs_f64(), r)
        })
        .collect();
    let mut table = Vec::new();
    for (b, secs, r) in rows {
        rep.timings.push(Timing { stage: format!("beta={b}"), seconds: secs });
        match r {
            Ok((row, entries, syn)) => {
                rep.results.extend(entries);
                rep.synthesis.push(syn);
                table.push(row);
            }
            Err(err) => {
                rep.results.push(Entry::error(format!("beta={b}"), err.to_string()));
                rep.synthesis.push(Synthesis::new(&format!("beta={b}"), "none", Vec::new()));
            }
        }
    }
    rep.results.push(Entry::new("table", "table", &table));
    Ok((rep, table))
}

pub fn table_csv(rows: &[Example56Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Where the per-beta table goes: the configured path, else next to `out`.
pub fn table_path(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.example56.table.clone().or_else(|| {
        cfg.out.as_ref().map(|o| {
            let stem = o.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "report".into());
            o.with_file_name(format!("{stem}_table.csv"))
        })
    })
}
