//! Report assembly and the two output encodings.
//!
//! The CSV form is the JSON document flattened to `path,value` rows, so both
//! carry the same numbers. Non-finite floats appear as `null` in JSON and as
//! an empty field in CSV.

use std::io::Write;
use std::time::Instant;

use boltzmann_core::criteria::{Conclusion, CriterionReport, CriterionVerdict, Witness};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::{OutputFormat, RunConfig};
use crate::CliError;

pub const TOOL: &str = "boltzmann";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One entry of the report body.
#[derive(Debug, Clone, Serialize)]
pub struct Entry {
    /// Unique within the report, e.g. `thm48` or `beta=1.9/thm48`.
    pub id: String,
    /// `criterion`, `estimate`, `spectrum`, `table` or `error`.
    pub kind: String,
    pub data: Value,
}

impl Entry {
    pub fn new<T: Serialize>(id: impl Into<String>, kind: &str, data: &T) -> Self {
        Entry {
            id: id.into(),
            kind: kind.into(),
            data: serde_json::to_value(data).expect("report payloads serialize"),
        }
    }

    pub fn criterion(scope: Option<&str>, r: &CriterionReport) -> Self {
        let id = match scope {
            Some(s) => format!("{s}/{}", r.criterion),
            None => r.criterion.clone(),
        };
        Entry::new(id, "criterion", r)
    }

    pub fn error(id: impl Into<String>, message: impl Into<String>) -> Self {
        Entry::new(id, "error", &serde_json::json!({ "message": message.into() }))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Strongest conclusion reached for one potential, with the entries that
/// support it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Synthesis {
    pub scope: String,
    /// `TLSI`, `DLSI`, `SGP`, `DLSI fails` or `none`.
    pub conclusion: String,
    pub cited: Vec<String>,
    pub line: String,
}

impl Synthesis {
    pub fn new(scope: &str, conclusion: &str, cited: Vec<String>) -> Self {
        let line = if cited.is_empty() {
            format!("{scope}: {conclusion}")
        } else {
            format!("{scope}: {conclusion} ({})", cited.join(", "))
        };
        Synthesis {
            scope: scope.into(),
            conclusion: conclusion.into(),
            cited,
            line,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub results: Vec<Entry>,
    pub synthesis: Vec<Synthesis>,
    /// Wall-clock seconds; the only part of a report that is not reproducible.
    pub timings: Vec<Timing>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Report {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_hash: config_hash(config),
            config: config.clone(),
            results: Vec::new(),
            synthesis: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn entry(&self, id: &str) -> Option<&Entry> {
        self.results.iter().find(|e| e.id == id)
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        self.timings.push(Timing { stage: stage.into(), seconds: t0.elapsed().as_secs_f64() });
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Every scalar of the JSON document as a `path,value` row.
    pub fn to_csv(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        let mut rows = Vec::new();
        flatten("", &v, &mut rows);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "value"]).expect("in-memory write");
        for (p, val) in rows {
            w.write_record([p, val]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Csv => self.to_csv(),
        }
    }

    pub fn write(&self, format: OutputFormat, out: Option<&std::path::Path>) -> Result<(), CliError> {
        let text = self.render(format);
        match out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display()))),
            None => {
                let mut stdout = std::io::stdout().lock();
                writeln!(stdout, "{text}").map_err(|e| CliError::Internal(format!("stdout: {e}")))
            }
        }
    }
}

/// Scalars of `v` in document order, keyed by dotted path.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&join(k), x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&join(&i.to_string()), x, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::Bool(b) => out.push((prefix.to_string(), b.to_string())),
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
    }
}

pub fn config_hash(config: &RunConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&canonical);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Rank of a conclusion in the TLSI > DLSI > SGP > none order.
fn level(c: Conclusion) -> (u8, &'static str) {
    match c {
        Conclusion::Tlsi => (3, "TLSI"),
        Conclusion::Dlsi | Conclusion::Hyperbounded | Conclusion::ImmediatelyHyperbounded | Conclusion::Ultracontractive => {
            (2, "DLSI")
        }
        Conclusion::Sgp => (1, "SGP"),
        Conclusion::None | Conclusion::HypothesesHf => (0, "none"),
    }
}

/// Strongest conclusion among the holding reports; failing that, a
/// necessary-condition failure; otherwise `none`.
pub fn synthesize(scope: &str, reports: &[(String, &CriterionReport)]) -> Synthesis {
    let best = reports
        .iter()
        .filter(|(_, r)| r.verdict == CriterionVerdict::Holds)
        .map(|(id, r)| (level(r.conclusion), id))
        .filter(|((rank, _), _)| *rank > 0)
        .max_by_key(|((rank, _), _)| *rank);
    if let Some(((rank, name), _)) = best {
        let cited = reports
            .iter()
            .filter(|(_, r)| r.verdict == CriterionVerdict::Holds && level(r.conclusion).0 == rank)
            .map(|(id, _)| id.clone())
            .collect();
        return Synthesis::new(scope, name, cited);
    }
    let refuted: Vec<String> = reports
        .iter()
        .filter(|(_, r)| r.fails() && matches!(r.witnesses.get("dlsi_fails"), Some(Witness::Flag(true))))
        .map(|(id, _)| id.clone())
        .collect();
    if !refuted.is_empty() {
        return Synthesis::new(scope, "DLSI fails", refuted);
    }
    Synthesis::new(scope, "none", Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn holding(name: &str, c: Conclusion) -> CriterionReport {
        let mut r = CriterionReport::new(name);
        r.verdict = CriterionVerdict::Holds;
        r.conclusion = c;
        r
    }

    #[test]
    fn synthesis_ranks_and_cites() {
        let a = holding("sgp_1d", Conclusion::Sgp);
        let b = holding("bakry_emery", Conclusion::Tlsi);
        let c = holding("hypotheses", Conclusion::HypothesesHf);
        let s = synthesize("x^2", &[("sgp_1d".into(), &a), ("bakry_emery".into(), &b), ("hypotheses".into(), &c)]);
        assert_eq!(s.conclusion, "TLSI");
        assert_eq!(s.cited, vec!["bakry_emery".to_string()]);
        assert_eq!(s.line, "x^2: TLSI (bakry_emery)");
        let s = synthesize("x", &[("hypotheses".into(), &c)]);
        assert_eq!(s.conclusion, "none");
        assert!(s.cited.is_empty());
    }

    #[test]
    fn refutation_needs_the_flag() {
        let mut r = CriterionReport::new("necessary_thm410");
        r.verdict = CriterionVerdict::Fails;
        assert_eq!(synthesize("p", &[("necessary_thm410".into(), &r)]).conclusion, "none");
        r.witnesses.insert("dlsi_fails".into(), Witness::Flag(true));
        let s = synthesize("p", &[("necessary_thm410".into(), &r)]);
        assert_eq!(s.conclusion, "DLSI fails");
        assert_eq!(s.cited, vec!["necessary_thm410".to_string()]);
    }

    #[test]
    fn csv_mirrors_json() {
        let mut rep = Report::new("check", &RunConfig::default());
        rep.results.push(Entry::new("e", "estimate", &serde_json::json!({ "mean": 1.25, "xs": [1, 2.5], "nan": f64::NAN })));
        let json: Value = serde_json::from_str(&rep.to_json()).unwrap();
        let mut rows = Vec::new();
        flatten("", &json, &mut rows);
        let text = rep.to_csv();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let back: Vec<(String, String)> = rd.records().map(|r| { let r = r.unwrap(); (r[0].to_string(), r[1].to_string()) }).collect();
        assert_eq!(rows, back);
        assert!(back.contains(&("results.0.data.mean".into(), "1.25".into())));
        assert!(back.contains(&("results.0.data.nan".into(), String::new())));
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed = Some(1);
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
