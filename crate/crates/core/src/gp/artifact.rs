//! The canonical result artifact.
//!
//! Quorum validation compares artifact bytes, so rendering is fully
//! canonical: sorted `key=value` lines, fixed number formats, and no
//! host-dependent fields (cpu time travels in the result message instead).

use std::collections::BTreeMap;

use super::params::RunSpec;
use super::run::GpRunResult;
use super::GpError;

/// Render the byte-canonical artifact for a completed run.
pub fn render(spec: &RunSpec, result: &GpRunResult) -> String {
    let mut kv: BTreeMap<String, String> = BTreeMap::new();
    kv.insert("adjusted".into(), format!("{}", result.best.adjusted));
    kv.insert("best_tree".into(), result.best_sexpr.clone());
    kv.insert("evaluations".into(), result.evaluations.to_string());
    kv.insert("hits".into(), result.best.hits.to_string());
    kv.insert("params_digest".into(), spec.digest());
    kv.insert("problem".into(), spec.problem.to_string());
    kv.insert("raw".into(), format!("{:.1}", result.best.raw));
    kv.insert("seed".into(), spec.params.seed.to_string());
    for s in &result.gen_stats {
        kv.insert(format!("gen.{:04}.best_hits", s.generation), s.best_hits.to_string());
        kv.insert(format!("gen.{:04}.mean_raw", s.generation), format!("{:.6}", s.mean_raw));
    }
    let mut out = String::new();
    for (k, v) in kv {
        out.push_str(&k);
        out.push('=');
        out.push_str(&v);
        out.push('\n');
    }
    out
}

/// Parsed view of an artifact, used by the assimilator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedArtifact {
    pub params_digest: String,
    pub problem: String,
    pub seed: u64,
    pub best_tree: String,
    pub hits: u64,
    pub raw: f64,
    pub adjusted: f64,
    pub evaluations: u64,
}

pub fn parse(text: &str) -> Result<ParsedArtifact, GpError> {
    let mut kv = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| GpError::Config(format!("artifact line {}: not key=value", lineno + 1)))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| -> Result<&String, GpError> {
        kv.get(k).ok_or_else(|| GpError::Config(format!("artifact missing key {k}")))
    };
    let parse_num = |k: &str| -> Result<f64, GpError> {
        get(k)?.parse().map_err(|_| GpError::Config(format!("artifact: bad number in {k}")))
    };
    Ok(ParsedArtifact {
        params_digest: get("params_digest")?.clone(),
        problem: get("problem")?.clone(),
        seed: get("seed")?.parse().map_err(|_| GpError::Config("artifact: bad seed".into()))?,
        best_tree: get("best_tree")?.clone(),
        hits: get("hits")?.parse().map_err(|_| GpError::Config("artifact: bad hits".into()))?,
        raw: parse_num("raw")?,
        adjusted: parse_num("adjusted")?,
        evaluations: get("evaluations")?
            .parse()
            .map_err(|_| GpError::Config("artifact: bad evaluations".into()))?,
    })
}
