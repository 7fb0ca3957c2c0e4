//! Parameter sweeps: a declaration expanded into work units.
//!
//! Expansion is a pure function: the same spec always yields the same work
//! units, ids, and seeds, which makes sweep submission idempotent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gp::params::RunSpec;
use super::{AppId, ProtoError, WorkUnit, WuState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub name: String,
    pub app: AppId,
    /// base run parameters as canonical `key=value` pairs (see `RunSpec`)
    pub base: BTreeMap<String, String>,
    /// swept dimensions: parameter key -> list of values
    pub dims: BTreeMap<String, Vec<String>>,
    pub replicates: u32,
    pub seed_base: u64,
    pub target_replicas: u32,
    pub min_quorum: u32,
    pub max_error_results: u32,
    pub deadline_secs: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ProtoError> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(ProtoError::Config(
                "sweep name must be non-empty alphanumeric/dash".into(),
            ));
        }
        if self.replicates == 0 {
            return Err(ProtoError::Config("replicates must be >= 1".into()));
        }
        if self.dims.values().any(|v| v.is_empty()) {
            return Err(ProtoError::Config("empty dimension value list".into()));
        }
        if self.min_quorum == 0 || self.min_quorum > self.target_replicas {
            return Err(ProtoError::Config("need 1 <= min_quorum <= target_replicas".into()));
        }
        Ok(())
    }

    /// Number of work units this spec expands into.
    pub fn wu_count(&self) -> u64 {
        self.replicates as u64 * self.dims.values().map(|v| v.len() as u64).product::<u64>()
    }

    /// Parse the sweep file format: `name=`, `replicates=`, `seed_base=`,
    /// replication keys, `param.<key>=` base parameters and
    /// `sweep.<key>=v1,v2,...` dimensions.
    pub fn from_sweep_file(text: &str) -> Result<SweepSpec, ProtoError> {
        let mut spec = SweepSpec {
            name: String::new(),
            app: AppId::EmbeddedGp,
            base: BTreeMap::new(),
            dims: BTreeMap::new(),
            replicates: 1,
            seed_base: 0,
            target_replicas: 1,
            min_quorum: 1,
            max_error_results: 3,
            deadline_secs: 3600.0,
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ProtoError::Config(format!("sweep file line {}: expected key=value", lineno + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = |what: &str| ProtoError::Config(format!("sweep file line {}: bad {what}", lineno + 1));
            match k {
                "name" => spec.name = v.to_string(),
                "app" => {
                    spec.app = match v {
                        "embedded" => AppId::EmbeddedGp,
                        "wrapped" => AppId::Wrapped,
                        _ => return Err(bad("app (embedded|wrapped)")),
                    }
                }
                "replicates" => spec.replicates = v.parse().map_err(|_| bad("replicates"))?,
                "seed_base" => spec.seed_base = v.parse().map_err(|_| bad("seed_base"))?,
                "target_replicas" => spec.target_replicas = v.parse().map_err(|_| bad("target_replicas"))?,
                "min_quorum" => spec.min_quorum = v.parse().map_err(|_| bad("min_quorum"))?,
                "max_error_results" => spec.max_error_results = v.parse().map_err(|_| bad("max_error_results"))?,
                "deadline_secs" => spec.deadline_secs = v.parse().map_err(|_| bad("deadline_secs"))?,
                _ => {
                    if let Some(param) = k.strip_prefix("param.") {
                        spec.base.insert(param.to_string(), v.to_string());
                    } else if let Some(dim) = k.strip_prefix("sweep.") {
                        spec.dims.insert(
                            dim.to_string(),
                            v.split(',').map(|s| s.trim().to_string()).collect(),
                        );
                    } else {
                        return Err(ProtoError::Config(format!(
                            "sweep file line {}: unknown key {k}",
                            lineno + 1
                        )));
                    }
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// A work unit plus the payload bytes it references (to be signed and stored
/// at submission time).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedWu {
    pub wu: WorkUnit,
    pub payloads: BTreeMap<String, Vec<u8>>,
    pub run_spec: RunSpec,
}

/// Expand a sweep into work units: the cross product of dimension values
/// (dimensions ordered by key) times `replicates`, with seeds
/// `seed_base + index` unique per work unit.
pub fn expand_sweep(spec: &SweepSpec) -> Result<Vec<ExpandedWu>, ProtoError> {
    spec.validate()?;
    let dims: Vec<(&String, &Vec<String>)> = spec.dims.iter().collect();

    // enumerate the cross product in lexicographic dimension order
    let mut combos: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
    for (key, values) in &dims {
        let mut next = Vec::with_capacity(combos.len() * values.len());
        for combo in &combos {
            for v in values.iter() {
                let mut c = combo.clone();
                c.push((key.as_str(), v.as_str()));
                next.push(c);
            }
        }
        combos = next;
    }

    let mut out = Vec::new();
    let mut index = 0u64;
    for combo in &combos {
        for rep in 0..spec.replicates {
            let mut kv = spec.base.clone();
            for (k, v) in combo {
                kv.insert((*k).to_string(), (*v).to_string());
            }
            let seed = spec.seed_base + index;
            kv.insert("seed".to_string(), seed.to_string());
            let param_text: String =
                kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
            let run_spec = RunSpec::from_param_file(&param_text)
                .map_err(|e| ProtoError::Config(format!("sweep base params: {e}")))?;
            let canonical = run_spec.to_param_file();

            let mut wu_id = spec.name.clone();
            for (k, v) in combo {
                wu_id.push_str(&format!("_{k}-{v}"));
            }
            wu_id.push_str(&format!("_rep{rep}"));

            let mut input_refs = BTreeMap::new();
            input_refs.insert(
                "params".to_string(),
                hex::encode(sha2::Sha256::digest(canonical.as_bytes())),
            );
            let mut payloads = BTreeMap::new();
            payloads.insert("params".to_string(), canonical.into_bytes());

            out.push(ExpandedWu {
                wu: WorkUnit {
                    wu_id,
                    app_id: spec.app,
                    input_refs,
                    command_args: vec![],
                    target_replicas: spec.target_replicas,
                    min_quorum: spec.min_quorum,
                    max_error_results: spec.max_error_results,
                    deadline_secs: spec.deadline_secs,
                    state: WuState::Unsent,
                    canonical_result_id: None,
                },
                payloads,
                run_spec,
            });
            index += 1;
        }
    }
    Ok(out)
}

use sha2::Digest;

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec(name: &str) -> SweepSpec {
        let mut base = BTreeMap::new();
        base.insert("problem".to_string(), "santafe".to_string());
        SweepSpec {
            name: name.into(),
            app: AppId::EmbeddedGp,
            base,
            dims: BTreeMap::new(),
            replicates: 1,
            seed_base: 100,
            target_replicas: 1,
            min_quorum: 1,
            max_error_results: 3,
            deadline_secs: 3600.0,
        }
    }

    #[test]
    fn paper_ant_sweep_expands_to_100() {
        // 2 population sizes x 2 generation counts x 25 replicates
        let mut spec = base_spec("ant");
        spec.dims.insert("population_size".into(), vec!["1000".into(), "2000".into()]);
        spec.dims.insert("generations".into(), vec!["1000".into(), "2000".into()]);
        spec.replicates = 25;
        let wus = expand_sweep(&spec).unwrap();
        assert_eq!(wus.len(), 100);
        let mut seeds: Vec<u64> = wus.iter().map(|w| w.run_spec.params.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 100);
        assert!(wus.iter().all(|w| w.wu.state == WuState::Unsent));
        assert!(wus[0].wu.wu_id.starts_with("ant_generations-1000_population_size-1000_rep"));
    }

    #[test]
    fn mux11_828_replicates() {
        let mut spec = base_spec("mux11");
        spec.base.insert("problem".into(), "multiplexer3".into());
        spec.replicates = 828;
        let wus = expand_sweep(&spec).unwrap();
        assert_eq!(wus.len(), 828);
    }

    #[test]
    fn unit_case_single_wu_with_seed_base() {
        let spec = base_spec("one");
        let wus = expand_sweep(&spec).unwrap();
        assert_eq!(wus.len(), 1);
        assert_eq!(wus[0].run_spec.params.seed, 100);
        assert_eq!(wus[0].wu.wu_id, "one_rep0");
    }

    #[test]
    fn expansion_is_pure() {
        let mut spec = base_spec("p");
        spec.dims.insert("generations".into(), vec!["2".into(), "3".into()]);
        spec.replicates = 4;
        assert_eq!(expand_sweep(&spec).unwrap(), expand_sweep(&spec).unwrap());
    }

    #[test]
    fn empty_dimension_rejected() {
        let mut spec = base_spec("bad");
        spec.dims.insert("generations".into(), vec![]);
        assert!(expand_sweep(&spec).is_err());
    }

    #[test]
    fn sweep_file_round_trip() {
        let text = "\
name=mux20
app=embedded
replicates=42
seed_base=7000
param.problem=multiplexer4
param.population_size=1000
param.generations=50
sweep.tournament_size=3,7
";
        let spec = SweepSpec::from_sweep_file(text).unwrap();
        assert_eq!(spec.name, "mux20");
        assert_eq!(spec.wu_count(), 84);
        let wus = expand_sweep(&spec).unwrap();
        assert_eq!(wus.len(), 84);
        assert_eq!(wus[0].run_spec.params.population_size, 1000);
    }
}
